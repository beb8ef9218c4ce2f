//! Central finite-difference gradient checking.

use thiserror::Error;

use rand::Rng as _;

use crate::cells::CellKind;
use crate::hierarchy::MultiLevelLabels;
use crate::network::{MsConvRnn, NetworkConfig};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("non-finite value while perturbing parameter {param} coordinate {index}")]
    NonFinite { param: usize, index: usize },
    #[error("gradient check: {0}")]
    Tensor(#[from] TensorError),
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients with central differences.
///
/// `f` records a scalar function of the parameter leaves onto a fresh tape.
/// The per-coordinate relative error is
/// `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`; the report carries the maximum.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor], with_grad: bool| -> Result<(Tape, Vec<Var>, Var), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), with_grad)).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(params, true)?;
    if !tape.value(out).all_finite() {
        return Err(GradCheckError::NonFinite { param: 0, index: 0 });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.len()))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    for (pi, param) in params.iter().enumerate() {
        for idx in 0..param.len() {
            let orig = param.data()[idx];
            work[pi].data_mut()[idx] = orig + step;
            let (t_plus, _, o_plus) = eval(&work, false)?;
            let f_plus = t_plus.value(o_plus).item();
            work[pi].data_mut()[idx] = orig - step;
            let (t_minus, _, o_minus) = eval(&work, false)?;
            let f_minus = t_minus.value(o_minus).item();
            work[pi].data_mut()[idx] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(GradCheckError::NonFinite { param: pi, index: idx });
            }
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let ga = analytic[pi][idx];
            let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, idx);
                report.worst_values = (ga, numeric);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// End-to-end check of a two-stage network (hidden 3, 6x6 patch, 3 steps,
/// 2 then 3 classes) with every parameter drawn from U(-1, 1).
///
/// The residual branch of the refinement starts small so the refined
/// volume stays away from the probability floor.
pub fn check_tiny_network(cell: CellKind, refinement: bool, weighted: bool, seed: u64) -> Result<GradCheckReport, GradCheckError> {
    let mut cfg = NetworkConfig::hierarchical(2, vec![2, 3]);
    cfg.lambdas = vec![0.4, 0.6];
    cfg.hidden_dim = 3;
    cfg.refine_hidden = 3;
    cfg.cell = cell;
    cfg.refinement = refinement;
    let invalid = |e: crate::network::NetworkError| TensorError::Invalid {
        op: "check_tiny_network",
        msg: e.to_string(),
    };
    let mut model = MsConvRnn::seeded(cfg, seed).map_err(invalid)?;
    let mut r = rng::from_seed(seed.wrapping_add(1));
    let mut uniform = |shape: &[usize], scale: f64| Tensor::from_fn(shape, |_| r.random_range(-scale..scale));
    for p in model.params_mut() {
        *p = uniform(p.shape(), 1.0);
    }
    if let Some(refine) = model.refinement.as_mut() {
        refine.conv2.weight = uniform(refine.conv2.weight.shape(), 0.05);
        refine.conv2.bias.data_mut().fill(0.0);
    }
    let side = 6;
    let seq = Tensor::from_fn(&[3, 2, side, side], |_| r.random_range(0.0..1.0));
    let mut mask: Vec<bool> = (0..side * side).map(|_| r.random_bool(0.7)).collect();
    mask[0] = true;
    let levels = [2u16, 3]
        .iter()
        .map(|&c| mask.iter().map(|_| r.random_range(0..c)).collect())
        .collect();
    let labels = MultiLevelLabels {
        height: side,
        width: side,
        levels,
        mask,
    };
    let weights = vec![vec![0.7, 1.3], vec![1.5, 0.5, 1.0]];
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    grad_check(
        |tape, vars| {
            let bound = model.bind_vars(vars.to_vec());
            let out = model.forward(tape, &bound, &seq).map_err(invalid)?;
            model.loss(tape, &out, &labels, weighted.then_some(weights.as_slice())).map_err(invalid)
        },
        &params,
        DEFAULT_STEP,
    )
}
