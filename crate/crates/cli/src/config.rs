//! Run configuration: plain `key = value` files plus flag overrides.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hiercrop::cells::CellKind;
use hiercrop::data::GeneratorConfig;
use hiercrop::eval::EvalConfig;
use hiercrop::training::BalanceMode;
use hiercrop::{LabelHierarchy, NetworkConfig, TrainConfig};

use crate::error::CliError;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "run seed; data, init, sampling and augmentation streams derive from it"),
    ("paths.dataset", "dataset container"),
    ("paths.hierarchy", "hierarchy CSV overriding the one named by the dataset (empty: use the dataset's)"),
    ("paths.checkpoint", "model checkpoint"),
    ("paths.report_dir", "directory for logs and reports"),
    ("data.grid_size", "side of the square scene in pixels"),
    ("data.patch_size", "side of a patch in pixels"),
    ("data.time_steps", "frames per sequence"),
    ("data.bands", "spectral channels"),
    ("data.branching", "children per node, root first, comma separated"),
    ("data.zipf_exponent", "class frequency exponent"),
    ("data.noise", "noise standard deviation"),
    ("data.unlabeled_fraction", "share of unlabeled pixels"),
    ("data.occlusion_fraction", "mean share of cloud frames per patch"),
    ("data.field_min", "minimum field side"),
    ("data.field_max", "maximum field side"),
    ("data.folds", "number of horizontal strip folds"),
    ("net.model", "hierarchical | flat"),
    ("net.stages", "stages (hierarchical) or 0 for one per hierarchy level"),
    ("net.layers_per_stage", "recurrent layers per stage; flat models get stages x layers_per_stage layers"),
    ("net.hidden_dim", "hidden channels of every recurrent layer"),
    ("net.kernel", "recurrent kernel size"),
    ("net.cell", "star | gru | lstm"),
    ("net.lambdas", "per-level loss weights, coarsest first (empty: defaults)"),
    ("net.gamma", "weight of the refined-output loss"),
    ("net.refinement", "enable the refinement CNN"),
    ("net.refine_hidden", "hidden channels of the refinement CNN"),
    ("train.epochs", "number of epochs"),
    ("train.batch_size", "samples per optimizer step"),
    ("train.base_lr", "initial learning rate"),
    ("train.lr_decay_every", "epochs between learning-rate drops"),
    ("train.lr_decay_factor", "divisor applied at each drop"),
    ("train.weight_decay", "L2 coefficient added to the gradients"),
    ("train.grad_clip", "global gradient-norm threshold"),
    ("train.flip_prob", "probability of a random spatial flip"),
    ("train.balance", "none | inv_freq | inv_freq_median_lr | effective_number"),
    ("train.beta", "effective-number beta"),
    ("train.oversample", "draw patches in proportion to rare-class content"),
    ("train.steps_per_epoch", "optimizer steps per epoch (0: one pass over the split)"),
    ("train.adam_beta1", "Adam first-moment decay"),
    ("train.adam_beta2", "Adam second-moment decay"),
    ("train.adam_eps", "Adam epsilon"),
    ("eval.test_fold", "held-out strip"),
    ("eval.majority_vote", "vote predictions within field polygons"),
    ("eval.confidence", "confidence threshold of the fallback labelling"),
    ("eval.curve_points", "intervals of the coverage-curve p grid"),
    ("eval.occlusion_thresholds", "occluded-fraction thresholds, comma separated"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Hierarchical,
    Flat,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hierarchical" => Ok(ModelKind::Hierarchical),
            "flat" => Ok(ModelKind::Flat),
            _ => Err(format!("unknown model `{s}` (expected hierarchical or flat)")),
        }
    }
}

impl Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Hierarchical => "hierarchical",
            ModelKind::Flat => "flat",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetSettings {
    pub model: ModelKind,
    pub stages: usize,
    pub layers_per_stage: usize,
    pub hidden_dim: usize,
    pub kernel: usize,
    pub cell: CellKind,
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    pub refinement: bool,
    pub refine_hidden: usize,
}

impl Default for NetSettings {
    fn default() -> Self {
        let base = NetworkConfig::hierarchical(1, vec![1]);
        NetSettings {
            model: ModelKind::Hierarchical,
            stages: 0,
            layers_per_stage: base.layers_per_stage,
            hidden_dim: base.hidden_dim,
            kernel: base.kernel,
            cell: base.cell,
            lambdas: Vec::new(),
            gamma: base.gamma,
            refinement: base.refinement,
            refine_hidden: base.refine_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: PathBuf,
    pub hierarchy: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
    pub data: GeneratorConfig,
    pub net: NetSettings,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub test_fold: usize,
    pub curve_points: usize,
    pub occlusion_thresholds: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: PathBuf::from("data/synthetic.hcds"),
            hierarchy: None,
            checkpoint: PathBuf::from("runs/model.hckpt"),
            report_dir: PathBuf::from("runs/report"),
            data: GeneratorConfig::default(),
            net: NetSettings::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            test_fold: 0,
            curve_points: 20,
            occlusion_thresholds: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults overlaid with `path` (if any), then with `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            c.apply_text(&text)
                .map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "paths.dataset" => self.dataset = PathBuf::from(v),
            "paths.hierarchy" => self.hierarchy = (!v.is_empty()).then(|| PathBuf::from(v)),
            "paths.checkpoint" => self.checkpoint = PathBuf::from(v),
            "paths.report_dir" => self.report_dir = PathBuf::from(v),
            "data.grid_size" => self.data.grid_size = parse(key, v)?,
            "data.patch_size" => self.data.patch_size = parse(key, v)?,
            "data.time_steps" => self.data.time_steps = parse(key, v)?,
            "data.bands" => self.data.bands = parse(key, v)?,
            "data.branching" => self.data.branching = parse_list(key, v)?,
            "data.zipf_exponent" => self.data.zipf_exponent = parse(key, v)?,
            "data.noise" => self.data.noise = parse(key, v)?,
            "data.unlabeled_fraction" => self.data.unlabeled_fraction = parse(key, v)?,
            "data.occlusion_fraction" => self.data.occlusion_fraction = parse(key, v)?,
            "data.field_min" => self.data.field_min = parse(key, v)?,
            "data.field_max" => self.data.field_max = parse(key, v)?,
            "data.folds" => self.data.folds = parse(key, v)?,
            "net.model" => self.net.model = parse(key, v)?,
            "net.stages" => self.net.stages = parse(key, v)?,
            "net.layers_per_stage" => self.net.layers_per_stage = parse(key, v)?,
            "net.hidden_dim" => self.net.hidden_dim = parse(key, v)?,
            "net.kernel" => self.net.kernel = parse(key, v)?,
            "net.cell" => self.net.cell = parse(key, v)?,
            "net.lambdas" => self.net.lambdas = parse_list(key, v)?,
            "net.gamma" => self.net.gamma = parse(key, v)?,
            "net.refinement" => self.net.refinement = parse(key, v)?,
            "net.refine_hidden" => self.net.refine_hidden = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.base_lr" => self.train.base_lr = parse(key, v)?,
            "train.lr_decay_every" => self.train.lr_decay_every = parse(key, v)?,
            "train.lr_decay_factor" => self.train.lr_decay_factor = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.grad_clip" => self.train.grad_clip = parse(key, v)?,
            "train.flip_prob" => self.train.flip_prob = parse(key, v)?,
            "train.balance" => self.train.balance = parse::<BalanceMode>(key, v)?,
            "train.beta" => self.train.beta = parse(key, v)?,
            "train.oversample" => self.train.oversample = parse(key, v)?,
            "train.steps_per_epoch" => {
                let n: usize = parse(key, v)?;
                self.train.steps_per_epoch = (n > 0).then_some(n);
            }
            "train.adam_beta1" => self.train.adam.beta1 = parse(key, v)?,
            "train.adam_beta2" => self.train.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => self.train.adam.eps = parse(key, v)?,
            "eval.test_fold" => self.test_fold = parse(key, v)?,
            "eval.majority_vote" => self.eval.majority_vote = parse(key, v)?,
            "eval.confidence" => self.eval.confidence = parse(key, v)?,
            "eval.curve_points" => self.curve_points = parse(key, v)?,
            "eval.occlusion_thresholds" => self.occlusion_thresholds = parse_list(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|(k, _)| (k.to_string(), self.get(k))).collect()
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Path| p.display().to_string();
        match key {
            "seed" => self.seed.to_string(),
            "paths.dataset" => path(&self.dataset),
            "paths.hierarchy" => self.hierarchy.as_deref().map(path).unwrap_or_default(),
            "paths.checkpoint" => path(&self.checkpoint),
            "paths.report_dir" => path(&self.report_dir),
            "data.grid_size" => self.data.grid_size.to_string(),
            "data.patch_size" => self.data.patch_size.to_string(),
            "data.time_steps" => self.data.time_steps.to_string(),
            "data.bands" => self.data.bands.to_string(),
            "data.branching" => join(&self.data.branching),
            "data.zipf_exponent" => self.data.zipf_exponent.to_string(),
            "data.noise" => self.data.noise.to_string(),
            "data.unlabeled_fraction" => self.data.unlabeled_fraction.to_string(),
            "data.occlusion_fraction" => self.data.occlusion_fraction.to_string(),
            "data.field_min" => self.data.field_min.to_string(),
            "data.field_max" => self.data.field_max.to_string(),
            "data.folds" => self.data.folds.to_string(),
            "net.model" => self.net.model.to_string(),
            "net.stages" => self.net.stages.to_string(),
            "net.layers_per_stage" => self.net.layers_per_stage.to_string(),
            "net.hidden_dim" => self.net.hidden_dim.to_string(),
            "net.kernel" => self.net.kernel.to_string(),
            "net.cell" => self.net.cell.to_string(),
            "net.lambdas" => join(&self.net.lambdas),
            "net.gamma" => self.net.gamma.to_string(),
            "net.refinement" => self.net.refinement.to_string(),
            "net.refine_hidden" => self.net.refine_hidden.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.base_lr" => self.train.base_lr.to_string(),
            "train.lr_decay_every" => self.train.lr_decay_every.to_string(),
            "train.lr_decay_factor" => self.train.lr_decay_factor.to_string(),
            "train.weight_decay" => self.train.weight_decay.to_string(),
            "train.grad_clip" => self.train.grad_clip.to_string(),
            "train.flip_prob" => self.train.flip_prob.to_string(),
            "train.balance" => self.train.balance.to_string(),
            "train.beta" => self.train.beta.to_string(),
            "train.oversample" => self.train.oversample.to_string(),
            "train.steps_per_epoch" => self.train.steps_per_epoch.unwrap_or(0).to_string(),
            "train.adam_beta1" => self.train.adam.beta1.to_string(),
            "train.adam_beta2" => self.train.adam.beta2.to_string(),
            "train.adam_eps" => self.train.adam.eps.to_string(),
            "eval.test_fold" => self.test_fold.to_string(),
            "eval.majority_vote" => self.eval.majority_vote.to_string(),
            "eval.confidence" => self.eval.confidence.to_string(),
            "eval.curve_points" => self.curve_points.to_string(),
            "eval.occlusion_thresholds" => join(&self.occlusion_thresholds),
            _ => unreachable!("key table and getter out of sync: {key}"),
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.seed,
            ..self.data.clone()
        }
    }

    pub fn trainer(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Network for `hierarchy` with `input_dim` spectral channels.
    pub fn network(&self, hierarchy: &LabelHierarchy, input_dim: usize) -> Result<NetworkConfig, CliError> {
        let n = &self.net;
        let levels = hierarchy.levels();
        let stages = if n.stages == 0 { levels } else { n.stages };
        let mut cfg = match n.model {
            ModelKind::Flat => NetworkConfig::flat(input_dim, hierarchy.finest_classes(), stages * n.layers_per_stage),
            ModelKind::Hierarchical => {
                if stages > levels {
                    return Err(CliError::Config(format!("{stages} stages for a {levels}-level hierarchy")));
                }
                let mut c = NetworkConfig::hierarchical(input_dim, hierarchy.class_counts()[levels - stages..].to_vec());
                c.layers_per_stage = n.layers_per_stage;
                c.gamma = n.gamma;
                c.refinement = n.refinement;
                c
            }
        };
        cfg.hidden_dim = n.hidden_dim;
        cfg.kernel = n.kernel;
        cfg.cell = n.cell;
        cfg.refine_hidden = n.refine_hidden;
        if !n.lambdas.is_empty() {
            cfg.lambdas = n.lambdas.clone();
        }
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Text for `--help`: every key and its default.
pub fn keys_help() -> String {
    let defaults = RunConfig::default();
    let mut s = String::from("Config keys (`key = value`, one per line, `#` comments):\n");
    for (k, doc) in KEYS {
        let d = defaults.get(k);
        s.push_str(&format!("  {k:<28} {doc} [default: {d}]\n"));
    }
    s
}
