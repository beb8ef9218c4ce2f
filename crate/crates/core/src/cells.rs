//! Convolutional recurrent cells: STAR, GRU and LSTM.
//!
//! The STAR recurrence at one layer and time step is
//!
//! ```text
//! K = sigmoid(W_x * x + W_h * h_prev + B_K)
//! Z = tanh(W_z * x + B_z)
//! H = tanh(h_prev + K o (Z - h_prev))
//! ```
//!
//! where `*` is same-padded convolution and `o` the Hadamard product. GRU and
//! LSTM follow their usual gate definitions with every matrix product
//! replaced by a convolution.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Star,
    Gru,
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Star, CellKind::Gru, CellKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Star => "star",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    fn gates(self) -> usize {
        match self {
            CellKind::Star => 2,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "star" | "convstar" => Ok(CellKind::Star),
            "gru" | "convgru" => Ok(CellKind::Gru),
            "lstm" | "convlstm" => Ok(CellKind::Lstm),
            other => Err(format!("unknown cell kind `{other}` (expected star, gru or lstm)")),
        }
    }
}

/// Closed-form number of trainable scalars in one cell.
pub fn param_count(kind: CellKind, input_dim: usize, hidden_dim: usize, kernel: usize) -> usize {
    let k2 = kernel * kernel;
    match kind {
        // W_x, W_z: D x Cin x k x k; W_h: D x D x k x k; B_K, B_z: D
        CellKind::Star => k2 * hidden_dim * (2 * input_dim + hidden_dim) + 2 * hidden_dim,
        CellKind::Gru | CellKind::Lstm => {
            let g = kind.gates();
            g * k2 * hidden_dim * (input_dim + hidden_dim) + g * hidden_dim
        }
    }
}

/// Trainable tensors of a convolutional STAR cell.
#[derive(Clone, Debug, PartialEq)]
pub struct StarCellParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b_k: Tensor,
    pub w_z: Tensor,
    pub b_z: Tensor,
}

/// Convolutional GRU: update gate `z`, reset gate `r`, candidate `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_xz: Tensor,
    pub w_hz: Tensor,
    pub b_z: Tensor,
    pub w_xr: Tensor,
    pub w_hr: Tensor,
    pub b_r: Tensor,
    pub w_xn: Tensor,
    pub w_hn: Tensor,
    pub b_n: Tensor,
}

/// Convolutional LSTM: input, forget, output gates and cell candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub b_i: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub b_f: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub b_o: Tensor,
    pub w_xg: Tensor,
    pub w_hg: Tensor,
    pub b_g: Tensor,
}

/// Parameters of one recurrent layer.
#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Star(StarCellParams),
    Gru(GruCellParams),
    Lstm(LstmCellParams),
}

/// Hidden state (plus LSTM cell state) carried between time steps.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

/// Cell parameters bound to leaves on a tape, in [`CellParams::named_tensors`] order.
#[derive(Clone, Debug)]
pub struct BoundCell {
    kind: CellKind,
    hidden_dim: usize,
    vars: Vec<Var>,
}

struct Init<'a> {
    rng: &'a mut Rng,
    kernel: usize,
}

impl Init<'_> {
    fn kernel(&mut self, out: usize, fan_in_channels: usize) -> Tensor {
        let k = self.kernel;
        let a = (1.0 / (fan_in_channels * k * k) as f64).sqrt();
        let rng = &mut *self.rng;
        Tensor::from_fn(&[out, fan_in_channels, k, k], |_| rng.random_range(-a..=a))
    }
}

impl CellParams {
    /// Fan-in uniform kernels, zero biases.
    pub fn init(kind: CellKind, input_dim: usize, hidden_dim: usize, kernel: usize, rng: &mut Rng) -> Self {
        let d = hidden_dim;
        let mut init = Init { rng, kernel };
        let zeros = || Tensor::zeros(&[d]);
        match kind {
            CellKind::Star => CellParams::Star(StarCellParams {
                w_x: init.kernel(d, input_dim),
                w_h: init.kernel(d, d),
                b_k: zeros(),
                w_z: init.kernel(d, input_dim),
                b_z: zeros(),
            }),
            CellKind::Gru => CellParams::Gru(GruCellParams {
                w_xz: init.kernel(d, input_dim),
                w_hz: init.kernel(d, d),
                b_z: zeros(),
                w_xr: init.kernel(d, input_dim),
                w_hr: init.kernel(d, d),
                b_r: zeros(),
                w_xn: init.kernel(d, input_dim),
                w_hn: init.kernel(d, d),
                b_n: zeros(),
            }),
            CellKind::Lstm => CellParams::Lstm(LstmCellParams {
                w_xi: init.kernel(d, input_dim),
                w_hi: init.kernel(d, d),
                b_i: zeros(),
                w_xf: init.kernel(d, input_dim),
                w_hf: init.kernel(d, d),
                b_f: zeros(),
                w_xo: init.kernel(d, input_dim),
                w_ho: init.kernel(d, d),
                b_o: zeros(),
                w_xg: init.kernel(d, input_dim),
                w_hg: init.kernel(d, d),
                b_g: zeros(),
            }),
        }
    }

    /// Initialisation fully determined by `seed`.
    pub fn init_seeded(kind: CellKind, input_dim: usize, hidden_dim: usize, kernel: usize, seed: u64) -> Self {
        Self::init(kind, input_dim, hidden_dim, kernel, &mut rng::from_seed(seed))
    }

    /// All-zero parameters.
    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize, kernel: usize) -> Self {
        let mut p = Self::init_seeded(kind, input_dim, hidden_dim, kernel, 0);
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        p
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Star(_) => CellKind::Star,
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    fn first_kernel(&self) -> &Tensor {
        match self {
            CellParams::Star(p) => &p.w_x,
            CellParams::Gru(p) => &p.w_xz,
            CellParams::Lstm(p) => &p.w_xi,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.first_kernel().shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.first_kernel().shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.first_kernel().shape()[2]
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            CellParams::Star(p) => vec![
                ("w_x", &p.w_x),
                ("w_h", &p.w_h),
                ("b_k", &p.b_k),
                ("w_z", &p.w_z),
                ("b_z", &p.b_z),
            ],
            CellParams::Gru(p) => vec![
                ("w_xz", &p.w_xz),
                ("w_hz", &p.w_hz),
                ("b_z", &p.b_z),
                ("w_xr", &p.w_xr),
                ("w_hr", &p.w_hr),
                ("b_r", &p.b_r),
                ("w_xn", &p.w_xn),
                ("w_hn", &p.w_hn),
                ("b_n", &p.b_n),
            ],
            CellParams::Lstm(p) => vec![
                ("w_xi", &p.w_xi),
                ("w_hi", &p.w_hi),
                ("b_i", &p.b_i),
                ("w_xf", &p.w_xf),
                ("w_hf", &p.w_hf),
                ("b_f", &p.b_f),
                ("w_xo", &p.w_xo),
                ("w_ho", &p.w_ho),
                ("b_o", &p.b_o),
                ("w_xg", &p.w_xg),
                ("w_hg", &p.w_hg),
                ("b_g", &p.b_g),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            CellParams::Star(p) => vec![&mut p.w_x, &mut p.w_h, &mut p.b_k, &mut p.w_z, &mut p.b_z],
            CellParams::Gru(p) => vec![
                &mut p.w_xz,
                &mut p.w_hz,
                &mut p.b_z,
                &mut p.w_xr,
                &mut p.w_hr,
                &mut p.b_r,
                &mut p.w_xn,
                &mut p.w_hn,
                &mut p.b_n,
            ],
            CellParams::Lstm(p) => vec![
                &mut p.w_xi,
                &mut p.w_hi,
                &mut p.b_i,
                &mut p.w_xf,
                &mut p.w_hf,
                &mut p.b_f,
                &mut p.w_xo,
                &mut p.w_ho,
                &mut p.b_o,
                &mut p.w_xg,
                &mut p.w_hg,
                &mut p.b_g,
            ],
        }
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundCell {
        let vars = self.named_tensors().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
        self.bind_vars(vars)
    }

    /// Wraps leaves already on a tape, in [`Self::named_tensors`] order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundCell {
        assert_eq!(vars.len(), self.named_tensors().len(), "leaf count for {} cell", self.kind());
        BoundCell {
            kind: self.kind(),
            hidden_dim: self.hidden_dim(),
            vars,
        }
    }
}

impl BoundCell {
    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Zero hidden (and cell) state for a `height x width` grid.
    pub fn zero_state(&self, tape: &mut Tape, height: usize, width: usize) -> CellState {
        let h = tape.constant(Tensor::zeros(&[self.hidden_dim, height, width]));
        let c = (self.kind == CellKind::Lstm).then(|| tape.constant(Tensor::zeros(&[self.hidden_dim, height, width])));
        CellState { h, c }
    }

    /// Advances the recurrence by one time step.
    pub fn step(&self, tape: &mut Tape, x: Var, state: CellState) -> Result<CellState, TensorError> {
        let v = &self.vars;
        let h_prev = state.h;
        match self.kind {
            CellKind::Star => {
                let (w_x, w_h, b_k, w_z, b_z) = (v[0], v[1], v[2], v[3], v[4]);
                let gx = tape.conv2d(x, w_x, Some(b_k))?;
                let gh = tape.conv2d(h_prev, w_h, None)?;
                let pre_k = tape.add(gx, gh)?;
                let k = tape.sigmoid(pre_k);
                let pre_z = tape.conv2d(x, w_z, Some(b_z))?;
                let z = tape.tanh(pre_z);
                let diff = tape.sub(z, h_prev)?;
                let gated = tape.mul(k, diff)?;
                let blend = tape.add(h_prev, gated)?;
                Ok(CellState {
                    h: tape.tanh(blend),
                    c: None,
                })
            }
            CellKind::Gru => {
                let z = gate(tape, x, h_prev, v[0], v[1], v[2], Act::Sigmoid)?;
                let r = gate(tape, x, h_prev, v[3], v[4], v[5], Act::Sigmoid)?;
                let rh = tape.mul(r, h_prev)?;
                let n = gate(tape, x, rh, v[6], v[7], v[8], Act::Tanh)?;
                // (1 - z) o h + z o n == h + z o (n - h)
                let diff = tape.sub(n, h_prev)?;
                let upd = tape.mul(z, diff)?;
                Ok(CellState {
                    h: tape.add(h_prev, upd)?,
                    c: None,
                })
            }
            CellKind::Lstm => {
                let c_prev = state.c.ok_or(TensorError::Invalid {
                    op: "lstm_step",
                    msg: "missing cell state".into(),
                })?;
                let i = gate(tape, x, h_prev, v[0], v[1], v[2], Act::Sigmoid)?;
                let f = gate(tape, x, h_prev, v[3], v[4], v[5], Act::Sigmoid)?;
                let o = gate(tape, x, h_prev, v[6], v[7], v[8], Act::Sigmoid)?;
                let g = gate(tape, x, h_prev, v[9], v[10], v[11], Act::Tanh)?;
                let fc = tape.mul(f, c_prev)?;
                let ig = tape.mul(i, g)?;
                let c = tape.add(fc, ig)?;
                let tc = tape.tanh(c);
                Ok(CellState {
                    h: tape.mul(o, tc)?,
                    c: Some(c),
                })
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Act {
    Sigmoid,
    Tanh,
}

fn gate(tape: &mut Tape, x: Var, h: Var, w_x: Var, w_h: Var, b: Var, act: Act) -> Result<Var, TensorError> {
    let gx = tape.conv2d(x, w_x, Some(b))?;
    let gh = tape.conv2d(h, w_h, None)?;
    let pre = tape.add(gx, gh)?;
    Ok(match act {
        Act::Sigmoid => tape.sigmoid(pre),
        Act::Tanh => tape.tanh(pre),
    })
}

fn check_state(params: &CellParams, x: &Tensor, h: &Tensor, op: &'static str) -> Result<(), TensorError> {
    let (cin, hs, ws) = x.chw(op)?;
    let (d, hh, hw) = h.chw(op)?;
    if cin != params.input_dim() {
        return Err(TensorError::mismatch(op, "input channels", params.input_dim(), cin));
    }
    if d != params.hidden_dim() {
        return Err(TensorError::mismatch(op, "hidden channels", params.hidden_dim(), d));
    }
    if hh != hs {
        return Err(TensorError::mismatch(op, "state height", hs, hh));
    }
    if hw != ws {
        return Err(TensorError::mismatch(op, "state width", ws, hw));
    }
    Ok(())
}

/// One STAR step on plain tensors.
pub fn star_step(params: &StarCellParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor, TensorError> {
    let cp = CellParams::Star(params.clone());
    check_state(&cp, x, h_prev, "star_step")?;
    let mut tape = Tape::new();
    let bound = cp.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let out = bound.step(&mut tape, xv, CellState { h: hv, c: None })?;
    Ok(tape.value(out.h).clone())
}

/// One GRU step on plain tensors.
pub fn gru_step(params: &GruCellParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor, TensorError> {
    let cp = CellParams::Gru(params.clone());
    check_state(&cp, x, h_prev, "gru_step")?;
    let mut tape = Tape::new();
    let bound = cp.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let out = bound.step(&mut tape, xv, CellState { h: hv, c: None })?;
    Ok(tape.value(out.h).clone())
}

/// One LSTM step on plain tensors; returns `(h, c)`.
pub fn lstm_step(
    params: &LstmCellParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    let cp = CellParams::Lstm(params.clone());
    check_state(&cp, x, h_prev, "lstm_step")?;
    check_state(&cp, x, c_prev, "lstm_step")?;
    let mut tape = Tape::new();
    let bound = cp.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let cv = tape.constant(c_prev.clone());
    let out = bound.step(&mut tape, xv, CellState { h: hv, c: Some(cv) })?;
    let c = out.c.expect("lstm returns cell state");
    Ok((tape.value(out.h).clone(), tape.value(c).clone()))
}
