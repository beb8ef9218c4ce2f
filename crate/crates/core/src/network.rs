//! The multi-stage convolutional recurrent network.
//!
//! Stage `n` is a stack of recurrent layers whose last hidden sequence feeds
//! stage `n + 1`. The final hidden state of each stage goes through a 3x3
//! convolutional head and a channel softmax to give the probability volume
//! for hierarchy level `n`. An optional refinement CNN reads the
//! concatenation of all volumes and adds a residual correction to the finest
//! one, which is then renormalised.

use thiserror::Error;

use crate::cells::{BoundCell, CellKind, CellParams};
use crate::hierarchy::MultiLevelLabels;
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

use rand::Rng as _;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("stage {stage}, layer {layer}, time step {step}: {source}")]
    Recurrence {
        stage: usize,
        layer: usize,
        step: usize,
        source: TensorError,
    },
    #[error("{context}: {source}")]
    Tensor {
        context: String,
        source: TensorError,
    },
    #[error("input sequence: expected {expected} channels, found {found}")]
    InputChannels { expected: usize, found: usize },
    #[error("expected {expected} label levels, found {found}")]
    LevelMismatch { expected: usize, found: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

fn ctx(context: impl Into<String>) -> impl FnOnce(TensorError) -> NetworkError {
    let context = context.into();
    move |source| NetworkError::Tensor { context, source }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Spectral channels of the input sequence.
    pub input_dim: usize,
    pub stages: usize,
    pub layers_per_stage: usize,
    pub hidden_dim: usize,
    pub kernel: usize,
    pub cell: CellKind,
    /// Class count per stage, coarsest first. Stage `n` predicts the level
    /// that sits `stages - n` levels above the finest.
    pub classes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    pub refinement: bool,
    pub refine_hidden: usize,
}

impl NetworkConfig {
    /// Three-stage STAR network with the reference loss weights.
    pub fn hierarchical(input_dim: usize, classes: Vec<usize>) -> Self {
        let stages = classes.len();
        let lambdas = if stages == 3 {
            vec![0.1, 0.3, 0.6]
        } else {
            vec![1.0 / stages as f64; stages]
        };
        NetworkConfig {
            input_dim,
            stages,
            layers_per_stage: 2,
            hidden_dim: 64,
            kernel: 3,
            cell: CellKind::Star,
            classes,
            lambdas,
            gamma: 0.6,
            refinement: true,
            refine_hidden: 128,
        }
    }

    /// Single-stage network of `layers` recurrent layers predicting only `classes`.
    pub fn flat(input_dim: usize, classes: usize, layers: usize) -> Self {
        NetworkConfig {
            input_dim,
            stages: 1,
            layers_per_stage: layers,
            hidden_dim: 64,
            kernel: 3,
            cell: CellKind::Star,
            classes: vec![classes],
            lambdas: vec![1.0],
            gamma: 0.0,
            refinement: false,
            refine_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |m: String| Err(NetworkError::Config(m));
        if self.stages == 0 {
            return fail("at least one stage is required".into());
        }
        if self.layers_per_stage == 0 {
            return fail("at least one layer per stage is required".into());
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return fail("input and hidden dims must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel size {} must be odd", self.kernel));
        }
        if self.classes.len() != self.stages {
            return fail(format!("{} class counts for {} stages", self.classes.len(), self.stages));
        }
        if self.classes.contains(&0) {
            return fail("every level needs at least one class".into());
        }
        if self.lambdas.len() != self.stages {
            return fail(format!("{} loss weights for {} stages", self.lambdas.len(), self.stages));
        }
        let sum: f64 = self.lambdas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return fail(format!("loss weights sum to {sum}, expected 1"));
        }
        if self.lambdas.iter().chain([&self.gamma]).any(|w| *w < 0.0 || !w.is_finite()) {
            return fail("loss weights must be finite and non-negative".into());
        }
        if self.refinement && self.refine_hidden == 0 {
            return fail("refinement hidden width must be positive".into());
        }
        Ok(())
    }

    pub fn total_layers(&self) -> usize {
        self.stages * self.layers_per_stage
    }
}

/// A single 2-D convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn uniform(out: usize, input: usize, k: usize, rng: &mut Rng) -> Self {
        let a = (1.0 / (input * k * k) as f64).sqrt();
        ConvLayer {
            weight: Tensor::from_fn(&[out, input, k, k], |_| rng.random_range(-a..=a)),
            bias: Tensor::zeros(&[out]),
        }
    }

    fn zeros(out: usize, input: usize, k: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros(&[out, input, k, k]),
            bias: Tensor::zeros(&[out]),
        }
    }
}

/// Two same-padded 3x3 convolutions with a ReLU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementNet {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl RefinementNet {
    /// The output layer starts at zero so the refined volume initially equals the finest one.
    pub fn init(in_channels: usize, hidden: usize, out_channels: usize, rng: &mut Rng) -> Self {
        RefinementNet {
            conv1: ConvLayer::uniform(hidden, in_channels, 3, rng),
            conv2: ConvLayer::zeros(out_channels, hidden, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsConvRnn {
    config: NetworkConfig,
    /// `stages[n][l]` is layer `l` of stage `n`.
    pub stages: Vec<Vec<CellParams>>,
    pub heads: Vec<ConvLayer>,
    pub refinement: Option<RefinementNet>,
}

/// Leaves of a model bound to one tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    cells: Vec<Vec<BoundCell>>,
    heads: Vec<(Var, Var)>,
    refinement: Option<[(Var, Var); 2]>,
    /// Every parameter leaf in [`MsConvRnn::named_params`] order.
    pub param_vars: Vec<Var>,
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// Final hidden state of the last layer of each stage.
    pub final_hidden: Vec<Var>,
    /// Probability volume per stage, coarsest first.
    pub probs: Vec<Var>,
    /// Refined finest-level volume, when refinement is enabled.
    pub refined: Option<Var>,
}

impl ForwardOutputs {
    /// Volume used to predict the finest level.
    pub fn finest(&self) -> Var {
        self.refined.unwrap_or(*self.probs.last().expect("at least one stage"))
    }

    /// Per-level volumes used for prediction, refined at the finest level.
    pub fn prediction_volumes(&self) -> Vec<Var> {
        let mut v = self.probs.clone();
        if let Some(r) = self.refined {
            *v.last_mut().expect("at least one stage") = r;
        }
        v
    }
}

impl MsConvRnn {
    pub fn new(config: NetworkConfig, rng: &mut Rng) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut stages = Vec::with_capacity(config.stages);
        for s in 0..config.stages {
            let layers = (0..config.layers_per_stage)
                .map(|l| {
                    let input = if s == 0 && l == 0 { config.input_dim } else { config.hidden_dim };
                    CellParams::init(config.cell, input, config.hidden_dim, config.kernel, rng)
                })
                .collect();
            stages.push(layers);
        }
        let heads = config
            .classes
            .iter()
            .map(|&c| ConvLayer::uniform(c, config.hidden_dim, 3, rng))
            .collect();
        let refinement = config.refinement.then(|| {
            let total: usize = config.classes.iter().sum();
            RefinementNet::init(total, config.refine_hidden, *config.classes.last().expect("stages"), rng)
        });
        Ok(MsConvRnn {
            config,
            stages,
            heads,
            refinement,
        })
    }

    pub fn seeded(config: NetworkConfig, seed: u64) -> Result<Self, NetworkError> {
        Self::new(config, &mut rng::stream(seed, rng::Stream::Init))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            for (l, cell) in stage.iter().enumerate() {
                for (name, t) in cell.named_tensors() {
                    out.push((format!("stage{s}.layer{l}.{name}"), t));
                }
            }
        }
        for (s, head) in self.heads.iter().enumerate() {
            out.push((format!("head{s}.weight"), &head.weight));
            out.push((format!("head{s}.bias"), &head.bias));
        }
        if let Some(r) = &self.refinement {
            out.push(("refine.conv1.weight".into(), &r.conv1.weight));
            out.push(("refine.conv1.bias".into(), &r.conv1.bias));
            out.push(("refine.conv2.weight".into(), &r.conv2.weight));
            out.push(("refine.conv2.bias".into(), &r.conv2.bias));
        }
        out
    }

    /// Mutable parameters in [`Self::named_params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for cell in stage {
                out.extend(cell.tensors_mut());
            }
        }
        for head in &mut self.heads {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        if let Some(r) = &mut self.refinement {
            out.extend([&mut r.conv1.weight, &mut r.conv1.bias, &mut r.conv2.weight, &mut r.conv2.bias]);
        }
        out
    }

    /// Replaces parameters by name; every parameter must be supplied exactly once.
    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), NetworkError> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let mut slots: Vec<Option<Tensor>> = vec![None; names.len()];
        for (name, t) in tensors {
            let Some(i) = names.iter().position(|n| *n == name) else {
                return Err(NetworkError::UnknownParam(name));
            };
            slots[i] = Some(t);
        }
        let mut params = self.params_mut();
        for (i, slot) in slots.into_iter().enumerate() {
            let t = slot.ok_or_else(|| NetworkError::Config(format!("missing parameter `{}`", names[i])))?;
            if t.shape() != params[i].shape() {
                return Err(NetworkError::ParamShape {
                    name: names[i].clone(),
                    expected: params[i].shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *params[i] = t;
        }
        Ok(())
    }

    /// Records every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let vars: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect();
        self.bind_vars(vars)
    }

    /// Wraps leaves already on a tape, in [`Self::named_params`] order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundModel {
        assert_eq!(vars.len(), self.named_params().len(), "one leaf per parameter");
        let mut next = 0;
        let mut take = |n: usize| {
            next += n;
            &vars[next - n..next]
        };
        let cells = self
            .stages
            .iter()
            .map(|stage| stage.iter().map(|cell| cell.bind_vars(take(cell.named_tensors().len()).to_vec())).collect())
            .collect();
        let heads = self.heads.iter().map(|_| (take(1)[0], take(1)[0])).collect();
        let refinement = self.refinement.as_ref().map(|_| [(take(1)[0], take(1)[0]), (take(1)[0], take(1)[0])]);
        BoundModel {
            cells,
            heads,
            refinement,
            param_vars: vars,
        }
    }

    /// Runs the network on a `[T, B, H, W]` sequence.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundModel, sequence: &Tensor) -> Result<ForwardOutputs, NetworkError> {
        let &[t_len, bands, h, w] = sequence.shape() else {
            return Err(NetworkError::Tensor {
                context: "input sequence".into(),
                source: TensorError::Rank {
                    op: "forward",
                    expected: 4,
                    found: sequence.shape().to_vec(),
                },
            });
        };
        if bands != self.config.input_dim {
            return Err(NetworkError::InputChannels {
                expected: self.config.input_dim,
                found: bands,
            });
        }
        let frames: Vec<Var> = (0..t_len).map(|t| tape.constant(sequence.index_outer(t))).collect();
        self.forward_frames(tape, bound, &frames, h, w)
    }

    /// Runs the network on per-time-step `[B, H, W]` frames already on the tape.
    pub fn forward_frames(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        frames: &[Var],
        height: usize,
        width: usize,
    ) -> Result<ForwardOutputs, NetworkError> {
        if frames.is_empty() {
            return Err(NetworkError::Config("sequence must have at least one time step".into()));
        }
        let mut sequence = frames.to_vec();
        let mut final_hidden = Vec::with_capacity(self.config.stages);
        let mut probs = Vec::with_capacity(self.config.stages);
        for (s, stage) in bound.cells.iter().enumerate() {
            for (l, cell) in stage.iter().enumerate() {
                let mut state = cell.zero_state(tape, height, width);
                let mut out = Vec::with_capacity(sequence.len());
                for (t, &x) in sequence.iter().enumerate() {
                    state = cell.step(tape, x, state).map_err(|source| NetworkError::Recurrence {
                        stage: s,
                        layer: l,
                        step: t,
                        source,
                    })?;
                    out.push(state.h);
                }
                sequence = out;
            }
            let last = *sequence.last().expect("non-empty sequence");
            final_hidden.push(last);
            let (wv, bv) = bound.heads[s];
            let logits = tape.conv2d(last, wv, Some(bv)).map_err(ctx(format!("head {s}")))?;
            probs.push(tape.softmax_channels(logits).map_err(ctx(format!("head {s}")))?);
        }
        let refined = match &bound.refinement {
            Some([(w1, b1), (w2, b2)]) => {
                let stacked = tape.concat_channels(&probs).map_err(ctx("refinement input"))?;
                let hidden = tape.conv2d(stacked, *w1, Some(*b1)).map_err(ctx("refinement conv1"))?;
                let act = tape.relu(hidden);
                let delta = tape.conv2d(act, *w2, Some(*b2)).map_err(ctx("refinement conv2"))?;
                let finest = *probs.last().expect("stages");
                let sum = tape.add(finest, delta).map_err(ctx("refinement residual"))?;
                Some(tape.renormalize_channels(sum).map_err(ctx("refinement renormalisation"))?)
            }
            None => None,
        };
        Ok(ForwardOutputs {
            final_hidden,
            probs,
            refined,
        })
    }

    /// Loss matching the configuration: with the refinement term when refinement is enabled.
    pub fn loss(
        &self,
        tape: &mut Tape,
        outputs: &ForwardOutputs,
        labels: &MultiLevelLabels,
        class_weights: Option<&[Vec<f64>]>,
    ) -> Result<Var, NetworkError> {
        if outputs.refined.is_some() {
            hierarchical_loss(tape, outputs, labels, class_weights, &self.config.lambdas, self.config.gamma)
        } else {
            loss_without_refinement(tape, outputs, labels, class_weights, &self.config.lambdas)
        }
    }

    /// Forward pass without gradient bookkeeping. Returns per-level volumes,
    /// coarsest first, with the refined volume at the finest level.
    pub fn predict(&self, sequence: &Tensor) -> Result<Vec<Tensor>, NetworkError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, sequence)?;
        Ok(out.prediction_volumes().into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

fn level_ce(
    tape: &mut Tape,
    probs: Var,
    labels: &MultiLevelLabels,
    level_idx: usize,
    class_weights: Option<&[Vec<f64>]>,
) -> Result<Var, NetworkError> {
    let weights = class_weights.map(|w| w[level_idx].as_slice());
    let (ce, _) = tape
        .cross_entropy(probs, &labels.levels[level_idx], &labels.mask, weights)
        .map_err(ctx(format!("loss at level {}", level_idx + 1)))?;
    Ok(ce)
}

fn check_levels(outputs: &ForwardOutputs, labels: &MultiLevelLabels, lambdas: &[f64], weights: Option<&[Vec<f64>]>) -> Result<(), NetworkError> {
    let n = outputs.probs.len();
    for found in [labels.levels.len(), lambdas.len()].into_iter().chain(weights.map(<[_]>::len)) {
        if found != n {
            return Err(NetworkError::LevelMismatch { expected: n, found });
        }
    }
    Ok(())
}

/// `sum_n lambda_n CE(Y^n, P^n)` over masked pixels.
pub fn loss_without_refinement(
    tape: &mut Tape,
    outputs: &ForwardOutputs,
    labels: &MultiLevelLabels,
    class_weights: Option<&[Vec<f64>]>,
    lambdas: &[f64],
) -> Result<Var, NetworkError> {
    check_levels(outputs, labels, lambdas, class_weights)?;
    let mut total: Option<Var> = None;
    for (i, (&p, &lambda)) in outputs.probs.iter().zip(lambdas).enumerate() {
        let ce = level_ce(tape, p, labels, i, class_weights)?;
        let term = tape.scale(ce, lambda);
        total = Some(match total {
            Some(acc) => tape.add(acc, term).map_err(ctx("loss sum"))?,
            None => term,
        });
    }
    Ok(total.expect("at least one level"))
}

/// `sum_n lambda_n CE(Y^n, P^n) + gamma CE(Y^N, P^N_refined)` over masked pixels.
pub fn hierarchical_loss(
    tape: &mut Tape,
    outputs: &ForwardOutputs,
    labels: &MultiLevelLabels,
    class_weights: Option<&[Vec<f64>]>,
    lambdas: &[f64],
    gamma: f64,
) -> Result<Var, NetworkError> {
    let base = loss_without_refinement(tape, outputs, labels, class_weights, lambdas)?;
    let refined = outputs
        .refined
        .ok_or_else(|| NetworkError::Config("hierarchical loss requires a refined output".into()))?;
    let last = outputs.probs.len() - 1;
    let ce = level_ce(tape, refined, labels, last, class_weights)?;
    let term = tape.scale(ce, gamma);
    tape.add(base, term).map_err(ctx("loss sum"))
}
