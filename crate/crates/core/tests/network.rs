use hiercrop::cells::{CellKind, CellParams, StarCellParams};
use hiercrop::hierarchy::{expand_labels, LabelHierarchy, MultiLevelLabels};
use hiercrop::network::{hierarchical_loss, loss_without_refinement};
use hiercrop::rng;
use hiercrop::{MsConvRnn, NetworkConfig, Tape, Tensor};
use rand::Rng as _;

type Map = Vec<Vec<Vec<f64>>>;

fn to_map(t: &Tensor) -> Map {
    let (c, h, w) = t.chw("test").unwrap();
    (0..c)
        .map(|ci| (0..h).map(|y| (0..w).map(|x| t.data()[(ci * h + y) * w + x]).collect()).collect())
        .collect()
}

fn conv_ref(x: &Map, w: &Tensor, b: Option<&Tensor>) -> Map {
    let (o, i, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (h, wd) = (x[0].len(), x[0][0].len());
    let r = (k / 2) as isize;
    let mut out = vec![vec![vec![0.0; wd]; h]; o];
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                for ic in 0..i {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (sy, sx) = (y as isize + dy, xx as isize + dx);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            let wi = ((oc * i + ic) * k + (dy + r) as usize) * k + (dx + r) as usize;
                            acc += w.data()[wi] * x[ic][sy as usize][sx as usize];
                        }
                    }
                }
                out[oc][y][xx] = acc;
            }
        }
    }
    out
}

fn zip(a: &Map, b: &Map, f: impl Fn(f64, f64) -> f64) -> Map {
    a.iter()
        .zip(b)
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).collect()).collect())
        .collect()
}

fn apply(a: &Map, f: impl Fn(f64) -> f64) -> Map {
    zip(a, a, |x, _| f(x))
}

fn star_ref(p: &StarCellParams, x: &Map, h: &Map) -> Map {
    let k = zip(&conv_ref(x, &p.w_x, Some(&p.b_k)), &conv_ref(h, &p.w_h, None), |a, b| 1.0 / (1.0 + (-(a + b)).exp()));
    let z = apply(&conv_ref(x, &p.w_z, Some(&p.b_z)), f64::tanh);
    let kz = zip(&k, &zip(&z, h, |a, b| a - b), |a, b| a * b);
    zip(h, &kz, |a, b| (a + b).tanh())
}

fn softmax_ref(logits: &Map) -> Map {
    let (c, h, w) = (logits.len(), logits[0].len(), logits[0][0].len());
    let mut out = logits.clone();
    for y in 0..h {
        for x in 0..w {
            let m = (0..c).map(|ci| logits[ci][y][x]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..c).map(|ci| (logits[ci][y][x] - m).exp()).sum();
            for ci in 0..c {
                out[ci][y][x] = (logits[ci][y][x] - m).exp() / s;
            }
        }
    }
    out
}

fn randomise(model: &mut MsConvRnn, seed: u64, scale: f64) {
    let mut r = rng::from_seed(seed);
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut cfg = NetworkConfig::hierarchical(2, vec![2, 3]);
    cfg.lambdas = vec![0.5, 0.5];
    cfg.hidden_dim = 3;
    cfg.refine_hidden = 4;
    let mut model = MsConvRnn::seeded(cfg, 3).unwrap();
    randomise(&mut model, 8, 0.4);
    let mut r = rng::from_seed(9);
    let (t_len, h, w) = (3, 5, 4);
    let seq = Tensor::from_fn(&[t_len, 2, h, w], |_| r.random_range(0.0..1.0));
    let got = model.predict(&seq).unwrap();

    let mut inputs: Vec<Map> = (0..t_len).map(|t| to_map(&seq.index_outer(t))).collect();
    let mut probs = Vec::new();
    for (s, stage) in model.stages.iter().enumerate() {
        for cell in stage {
            let CellParams::Star(p) = cell else { panic!("star cells") };
            let mut state = vec![vec![vec![0.0; w]; h]; 3];
            let mut outs = Vec::new();
            for x in &inputs {
                state = star_ref(p, x, &state);
                outs.push(state.clone());
            }
            inputs = outs;
        }
        let head = &model.heads[s];
        probs.push(softmax_ref(&conv_ref(inputs.last().unwrap(), &head.weight, Some(&head.bias))));
    }
    let refine = model.refinement.as_ref().unwrap();
    let stacked: Map = probs.iter().flatten().cloned().collect();
    let hidden = apply(&conv_ref(&stacked, &refine.conv1.weight, Some(&refine.conv1.bias)), |v| v.max(0.0));
    let delta = conv_ref(&hidden, &refine.conv2.weight, Some(&refine.conv2.bias));
    let mut refined = zip(&probs[1], &delta, |a, b| a + b);
    for y in 0..h {
        for x in 0..w {
            let s: f64 = refined.iter().map(|c| c[y][x].max(1e-8)).sum();
            for c in refined.iter_mut() {
                c[y][x] = c[y][x].max(1e-8) / s;
            }
        }
    }
    let expected = [probs[0].clone(), refined];
    for (g, e) in got.iter().zip(&expected) {
        let gm = to_map(g);
        for (a, b) in gm.iter().flatten().flatten().zip(e.iter().flatten().flatten()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

fn crop_like_hierarchy() -> LabelHierarchy {
    let mid: Vec<u16> = (0..14).map(|c| (c * 5 / 14) as u16).collect();
    let fine: Vec<u16> = (0..48).map(|c| (c * 14 / 48) as u16).collect();
    LabelHierarchy::new(vec![5, 14, 48], vec![mid, fine], (0..48).map(|c| format!("crop{c}")).collect()).unwrap()
}

fn random_labels(h: &LabelHierarchy, side: usize, seed: u64) -> MultiLevelLabels {
    let mut r = rng::from_seed(seed);
    let fine: Vec<u16> = (0..side * side).map(|_| r.random_range(0..48)).collect();
    let mask: Vec<bool> = (0..side * side).map(|_| r.random_bool(0.6)).collect();
    expand_labels(h, &fine, &mask, side).unwrap()
}

fn zeroed(cfg: NetworkConfig) -> MsConvRnn {
    let mut m = MsConvRnn::seeded(cfg, 0).unwrap();
    for p in m.params_mut() {
        p.data_mut().fill(0.0);
    }
    m
}

#[test]
fn uniform_prediction_losses() {
    let h = crop_like_hierarchy();
    let labels = random_labels(&h, 6, 1);
    let mut cfg = NetworkConfig::hierarchical(4, vec![5, 14, 48]);
    cfg.hidden_dim = 4;
    cfg.refine_hidden = 4;
    let seq = Tensor::full(&[2, 4, 6, 6], 0.3);
    for (refine, expected) in [(true, 0.1 * 5f64.ln() + 0.3 * 14f64.ln() + 1.2 * 48f64.ln()), (false, 0.1 * 5f64.ln() + 0.3 * 14f64.ln() + 0.6 * 48f64.ln())] {
        let model = zeroed(NetworkConfig {
            refinement: refine,
            ..cfg.clone()
        });
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let out = model.forward(&mut tape, &bound, &seq).unwrap();
        let loss = model.loss(&mut tape, &out, &labels, None).unwrap();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }
    assert!((0.1 * 5f64.ln() + 0.3 * 14f64.ln() + 1.2 * 48f64.ln() - 5.598).abs() < 1e-3);
    assert!((0.1 * 5f64.ln() + 0.3 * 14f64.ln() + 0.6 * 48f64.ln() - 3.275).abs() < 1e-3);
}

#[test]
fn random_init_loss_near_uniform() {
    let h = crop_like_hierarchy();
    let labels = random_labels(&h, 8, 2);
    let mut cfg = NetworkConfig::hierarchical(4, vec![5, 14, 48]);
    cfg.hidden_dim = 16;
    cfg.refine_hidden = 32;
    let model = MsConvRnn::seeded(cfg, 5).unwrap();
    let mut r = rng::from_seed(3);
    let seq = Tensor::from_fn(&[4, 4, 8, 8], |_| r.random_range(0.0..1.0));
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &bound, &seq).unwrap();
    let loss = model.loss(&mut tape, &out, &labels, None).unwrap();
    let uniform = 0.1 * 5f64.ln() + 0.3 * 14f64.ln() + 1.2 * 48f64.ln();
    let v = tape.value(loss).item();
    assert!((v - uniform).abs() / uniform < 0.02, "{v} vs {uniform}");
}

#[test]
fn loss_matches_scalar_loop() {
    let h = crop_like_hierarchy();
    let labels = random_labels(&h, 5, 4);
    let weights: Vec<Vec<f64>> = h.class_counts().iter().map(|&c| (0..c).map(|i| 0.5 + (i % 3) as f64).collect()).collect();
    let mut cfg = NetworkConfig::hierarchical(1, vec![5, 14, 48]);
    cfg.hidden_dim = 3;
    cfg.refine_hidden = 3;
    let mut model = MsConvRnn::seeded(cfg, 1).unwrap();
    randomise(&mut model, 2, 0.3);
    let seq = Tensor::from_fn(&[2, 1, 5, 5], |i| (i as f64 * 0.37).sin());
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &bound, &seq).unwrap();
    let lambdas = [0.1, 0.3, 0.6];
    let with = hierarchical_loss(&mut tape, &out, &labels, Some(&weights), &lambdas, 0.6).unwrap();
    let without = loss_without_refinement(&mut tape, &out, &labels, Some(&weights), &lambdas).unwrap();

    let ce = |vol: &Tensor, level: usize| {
        let plane = 25;
        let (mut s, mut n) = (0.0, 0);
        for px in 0..plane {
            if labels.mask[px] {
                let y = labels.levels[level][px] as usize;
                s -= weights[level][y] * vol.data()[y * plane + px].max(1e-8).ln();
                n += 1;
            }
        }
        s / n as f64
    };
    let base: f64 = (0..3).map(|l| lambdas[l] * ce(tape.value(out.probs[l]), l)).sum();
    let refined = 0.6 * ce(tape.value(out.refined.unwrap()), 2);
    assert!((tape.value(without).item() - base).abs() < 1e-12);
    assert!((tape.value(with).item() - base - refined).abs() < 1e-12);
}

#[test]
fn flat_model_has_equal_depth() {
    let flat = NetworkConfig::flat(4, 12, 6);
    let hier = NetworkConfig::hierarchical(4, vec![3, 6, 12]);
    assert_eq!(flat.total_layers(), hier.total_layers());
    assert!(!flat.refinement);
    let m = MsConvRnn::seeded(NetworkConfig { hidden_dim: 4, ..flat }, 0).unwrap();
    let out = m.predict(&Tensor::zeros(&[2, 4, 3, 3])).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].shape(), &[12, 3, 3]);
    assert_eq!(m.stages[0].len(), 6);
    assert!(m.stages.iter().flatten().all(|c| c.kind() == CellKind::Star));
}
