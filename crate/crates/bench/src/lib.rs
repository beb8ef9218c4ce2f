//! Fixtures shared by the benchmarks.

use hiercrop::hierarchy::expand_labels;
use hiercrop::{LabelHierarchy, MsConvRnn, MultiLevelLabels, NetworkConfig, Tensor};

/// Deterministic `[T, B, H, W]` sequence in `[0, 1]`.
pub fn sequence(time_steps: usize, bands: usize, side: usize) -> Tensor {
    Tensor::from_fn(&[time_steps, bands, side, side], |i| ((i as f64) * 0.37).sin() * 0.5 + 0.5)
}

/// Three-stage model over a 3/6/12 hierarchy with `hidden` channels.
pub fn model(hidden: usize, refinement: bool) -> MsConvRnn {
    let mut c = NetworkConfig::hierarchical(4, vec![3, 6, 12]);
    c.hidden_dim = hidden;
    c.refine_hidden = 2 * hidden;
    c.refinement = refinement;
    MsConvRnn::seeded(c, 1).expect("valid config")
}

/// Fully labeled patch cycling through the finest classes.
pub fn labels(side: usize) -> MultiLevelLabels {
    let h = LabelHierarchy::balanced(&[3, 2, 2]);
    let fine: Vec<u16> = (0..side * side).map(|i| (i % 12) as u16).collect();
    expand_labels(&h, &fine, &vec![true; side * side], side).expect("valid labels")
}
