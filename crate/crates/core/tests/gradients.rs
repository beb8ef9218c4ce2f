use hiercrop::cells::CellKind;
use hiercrop::gradcheck::{check_tiny_network, grad_check, DEFAULT_STEP};
use hiercrop::hierarchy::{expand_labels, LabelHierarchy, MultiLevelLabels};
use hiercrop::network::RefinementNet;
use hiercrop::rng::{self, Rng};
use hiercrop::{Tape, Tensor};
use proptest::prelude::*;
use rand::Rng as _;

const TOL: f64 = 1e-4;

fn random(shape: &[usize], r: &mut Rng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

fn tiny_labels(side: usize, seed: u64) -> (LabelHierarchy, MultiLevelLabels) {
    let h = LabelHierarchy::new(vec![2, 3], vec![vec![0, 0, 1]], vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let mut r = rng::from_seed(seed);
    let fine: Vec<u16> = (0..side * side).map(|_| r.random_range(0..3)).collect();
    let mask: Vec<bool> = (0..side * side).map(|_| r.random_bool(0.7)).collect();
    let labels = expand_labels(&h, &fine, &mask, side).unwrap();
    (h, labels)
}

#[test]
fn end_to_end_gradients_every_cell_and_loss() {
    for kind in CellKind::ALL {
        for refinement in [true, false] {
            let rep = check_tiny_network(kind, refinement, false, 11).unwrap();
            assert!(rep.coordinates > 500);
            assert!(rep.max_rel_error < TOL, "{kind} refinement={refinement}: {rep:?}");
        }
    }
    let rep = check_tiny_network(CellKind::Star, true, true, 11).unwrap();
    assert!(rep.max_rel_error < TOL, "{rep:?}");
}

#[test]
fn head_gradients() {
    let mut r = rng::from_seed(1);
    let hidden = random(&[4, 5, 5], &mut r, 1.0);
    let (_, labels) = tiny_labels(5, 2);
    let params = vec![random(&[3, 4, 3, 3], &mut r, 0.5), random(&[3], &mut r, 0.5), hidden];
    let report = grad_check(
        |tape, v| {
            let logits = tape.conv2d(v[2], v[0], Some(v[1]))?;
            let p = tape.softmax_channels(logits)?;
            Ok(tape.cross_entropy(p, &labels.levels[1], &labels.mask, None)?.0)
        },
        &params,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn refinement_gradients() {
    let mut r = rng::from_seed(4);
    let net = RefinementNet::init(5, 4, 3, &mut r);
    let (_, labels) = tiny_labels(5, 3);
    let coarse = random(&[2, 5, 5], &mut r, 2.0);
    let fine = random(&[3, 5, 5], &mut r, 2.0);
    let params = vec![
        net.conv1.weight.clone(),
        net.conv1.bias.clone(),
        random(net.conv2.weight.shape(), &mut r, 0.05),
        net.conv2.bias.clone(),
        coarse,
        fine,
    ];
    let report = grad_check(
        |tape, v| {
            let pc = tape.softmax_channels(v[4])?;
            let pf = tape.softmax_channels(v[5])?;
            let stacked = tape.concat_channels(&[pc, pf])?;
            let h = tape.conv2d(stacked, v[0], Some(v[1]))?;
            let a = tape.relu(h);
            let d = tape.conv2d(a, v[2], Some(v[3]))?;
            let s = tape.add(pf, d)?;
            let refined = tape.renormalize_channels(s)?;
            Ok(tape.cross_entropy(refined, &labels.levels[1], &labels.mask, None)?.0)
        },
        &params,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_error < TOL, "{report:?}");
}

fn check_unary(seed: u64, shape: &[usize], f: impl Fn(&mut Tape, hiercrop::Var) -> hiercrop::Var) -> f64 {
    let mut r = rng::from_seed(seed);
    let x = random(shape, &mut r, 1.5);
    let wts = random(shape, &mut r, 1.0);
    grad_check(
        |tape, v| {
            let y = f(tape, v[0]);
            let w = tape.constant(wts.clone());
            let p = tape.mul(y, w)?;
            Ok(tape.sum(p))
        },
        &[x],
        DEFAULT_STEP,
    )
    .unwrap()
    .max_rel_error
}

fn weighted_sum(tape: &mut Tape, y: hiercrop::Var, seed: u64) -> Result<hiercrop::Var, hiercrop::TensorError> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(random(&shape, &mut rng::from_seed(seed ^ 0xabc), 1.0));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_gradients(seed in any::<u64>(), cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]), h in 1usize..6, w in 1usize..6) {
        let mut r = rng::from_seed(seed);
        let params = vec![random(&[cin, h, w], &mut r, 1.0), random(&[cout, cin, k, k], &mut r, 1.0), random(&[cout], &mut r, 1.0)];
        let rep = grad_check(|tape, v| {
            let y = tape.conv2d(v[0], v[1], Some(v[2]))?;
            weighted_sum(tape, y, seed)
        }, &params, DEFAULT_STEP).unwrap();
        prop_assert!(rep.max_rel_error < TOL, "{:?}", rep);
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>(), c in 1usize..4, h in 1usize..5) {
        let shape = [c, h, 3];
        prop_assert!(check_unary(seed, &shape, |t, x| t.sigmoid(x)) < TOL);
        prop_assert!(check_unary(seed, &shape, |t, x| t.tanh(x)) < TOL);
        prop_assert!(check_unary(seed, &shape, |t, x| t.scale(x, -2.5)) < TOL);
        prop_assert!(check_unary(seed, &shape, |t, x| t.relu(x)) < TOL);
        prop_assert!(check_unary(seed, &shape, |t, x| t.softmax_channels(x).unwrap()) < TOL);
    }

    #[test]
    fn binary_gradients(seed in any::<u64>(), c in 1usize..4, h in 1usize..5) {
        let mut r = rng::from_seed(seed);
        let params = vec![random(&[c, h, 2], &mut r, 1.0), random(&[c, h, 2], &mut r, 1.0), random(&[c], &mut r, 1.0)];
        let rep = grad_check(|tape, v| {
            let a = tape.mul(v[0], v[1])?;
            let b = tape.sub(a, v[1])?;
            let d = tape.add(b, v[0])?;
            let e = tape.add_channel_bias(d, v[2])?;
            let f = tape.concat_channels(&[e, v[0]])?;
            weighted_sum(tape, f, seed)
        }, &params, DEFAULT_STEP).unwrap();
        prop_assert!(rep.max_rel_error < TOL, "{:?}", rep);
    }

    #[test]
    fn normalisation_and_loss_gradients(seed in any::<u64>(), c in 2usize..5, side in 1usize..4) {
        let mut r = rng::from_seed(seed);
        let plane = side * side;
        let target: Vec<u16> = (0..plane).map(|_| r.random_range(0..c as u16)).collect();
        let mut mask: Vec<bool> = (0..plane).map(|_| r.random_bool(0.7)).collect();
        mask[0] = true;
        let cw: Vec<f64> = (0..c).map(|_| r.random_range(0.2..2.0)).collect();
        let x = Tensor::from_fn(&[c, side, side], |_| r.random_range(0.1..1.0));
        let rep = grad_check(|tape, v| {
            let p = tape.renormalize_channels(v[0])?;
            Ok(tape.cross_entropy(p, &target, &mask, Some(&cw))?.0)
        }, &[x], DEFAULT_STEP).unwrap();
        prop_assert!(rep.max_rel_error < TOL, "{:?}", rep);
    }

    #[test]
    fn conv_matches_nested_loops_and_is_linear(seed in any::<u64>(), cin in 1usize..3, cout in 1usize..3, h in 1usize..5, w in 1usize..5) {
        let mut r = rng::from_seed(seed);
        let k = 3;
        let x = random(&[cin, h, w], &mut r, 1.0);
        let x2 = random(&[cin, h, w], &mut r, 1.0);
        let kern = random(&[cout, cin, k, k], &mut r, 1.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let x2v = tape.constant(x2.clone());
        let kv = tape.constant(kern.clone());
        let y = tape.conv2d(xv, kv, None).unwrap();
        let y2 = tape.conv2d(x2v, kv, None).unwrap();
        let s = tape.add(xv, x2v).unwrap();
        let ys = tape.conv2d(s, kv, None).unwrap();
        for o in 0..cout {
            for yy in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for i in 0..cin {
                        for dy in 0..k {
                            for dx in 0..k {
                                let (sy, sx) = (yy as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += kern.data()[((o * cin + i) * k + dy) * k + dx] * x.data()[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    let idx = (o * h + yy) * w + xx;
                    prop_assert!((tape.value(y).data()[idx] - acc).abs() < 1e-12);
                    let lin = tape.value(y).data()[idx] + tape.value(y2).data()[idx];
                    prop_assert!((tape.value(ys).data()[idx] - lin).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn concat_conserves_gradient_mass(seed in any::<u64>(), c1 in 1usize..4, c2 in 1usize..4) {
        let mut r = rng::from_seed(seed);
        let mut tape = Tape::new();
        let a = tape.param(random(&[c1, 2, 3], &mut r, 1.0));
        let b = tape.param(random(&[c2, 2, 3], &mut r, 1.0));
        let cat = tape.concat_channels(&[a, b]).unwrap();
        let w = random(&[c1 + c2, 2, 3], &mut r, 1.0);
        let wv = tape.constant(w.clone());
        let p = tape.mul(cat, wv).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        let total: f64 = g.get(a).unwrap().iter().chain(g.get(b).unwrap()).sum();
        prop_assert!((total - w.sum()).abs() < 1e-12);
    }
}
