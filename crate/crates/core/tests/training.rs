use hiercrop::data::{generate, Dataset, GeneratorConfig, SequenceSample};
use hiercrop::rng::{self, Stream};
use hiercrop::training::{
    adam_step, augment_flip, class_weights, clip_gradients, flip, global_norm, lr_at, patch_weights, AdamConfig,
    BalanceMode, ClassStats, Flip, OptimizerState, Sampler,
};
use hiercrop::{train, MsConvRnn, NetworkConfig, Tensor, TrainConfig, UNLABELED};
use proptest::prelude::*;

fn tiny_dataset(grid: usize, patch: usize, t: usize, branching: Vec<usize>, seed: u64) -> Dataset {
    generate(&GeneratorConfig {
        grid_size: grid,
        patch_size: patch,
        time_steps: t,
        bands: 2,
        branching,
        field_min: 2,
        field_max: 5,
        unlabeled_fraction: 0.2,
        folds: 2,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn tiny_model(d: &Dataset, hidden: usize, seed: u64) -> MsConvRnn {
    let mut c = NetworkConfig::hierarchical(2, d.hierarchy.class_counts().to_vec());
    c.hidden_dim = hidden;
    c.refine_hidden = hidden;
    if c.stages != 3 {
        c.lambdas = vec![1.0 / c.stages as f64; c.stages];
    }
    MsConvRnn::seeded(c, seed).unwrap()
}

fn solid_sample(label: u16, h: usize, w: usize) -> SequenceSample {
    SequenceSample {
        time_steps: 1,
        bands: 1,
        height: h,
        width: w,
        inputs: vec![0.5; h * w],
        fine_labels: vec![label; h * w],
        field_ids: vec![1; h * w],
        fold_id: 0,
        occluded_frames: vec![false],
        origin: [0, 0],
    }
}

#[test]
fn adam_matches_scalar_oracle_on_square() {
    // x_{t+1} from an independent double-precision script, f(x) = x^2, lr 0.1
    let expected = [0.9000000005, 0.8004122286917927, 0.70158627294603, 0.6039390605737458, 0.5079636592643417];
    let mut x = Tensor::scalar(1.0);
    let mut state = OptimizerState::new([("x".to_string(), &x)], AdamConfig::default());
    for e in expected {
        let g = vec![vec![2.0 * x.item()]];
        adam_step(&mut state, &mut [&mut x], &g, 0.1, 0.0).unwrap();
        assert!((x.item() - e).abs() < 1e-12, "{} vs {e}", x.item());
    }
    assert_eq!(state.step, 5);
}

#[test]
fn adam_weight_decay_is_coupled() {
    let mut x = Tensor::scalar(1.0);
    let mut state = OptimizerState::new([("x".to_string(), &x)], AdamConfig::default());
    for _ in 0..5 {
        let g = vec![vec![2.0 * x.item()]];
        adam_step(&mut state, &mut [&mut x], &g, 0.1, 0.01).unwrap();
    }
    assert!((x.item() - 0.5079636592510935).abs() < 1e-12);
}

#[test]
fn optimizer_moments_follow_parameter_shapes() {
    let d = tiny_dataset(12, 6, 2, vec![2, 2], 0);
    let m = tiny_model(&d, 3, 0);
    let s = OptimizerState::new(m.named_params(), AdamConfig::default());
    for ((_, p), (a, b)) in m.named_params().iter().zip(s.first.iter().zip(&s.second)) {
        assert_eq!(p.len(), a.len());
        assert_eq!(p.len(), b.len());
    }
}

#[test]
fn schedule_over_default_epochs() {
    let c = TrainConfig::default();
    let lrs: Vec<f64> = (0..30).map(|e| lr_at(e, &c)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    let mut distinct = lrs.clone();
    distinct.dedup();
    assert_eq!(distinct.len(), 3);
    for (got, want) in distinct.iter().zip([1e-3, 1e-4, 1e-5]) {
        assert!((got - want).abs() < 1e-18);
    }
}

#[test]
fn default_config_values() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size, c.lr_decay_every), (30, 4, 10));
    assert_eq!((c.base_lr, c.weight_decay, c.grad_clip, c.flip_prob), (1e-3, 1e-4, 5.0, 0.66));
    assert_eq!((c.adam.beta1, c.adam.beta2, c.adam.eps), (0.9, 0.999, 1e-8));
}

#[test]
fn effective_number_frozen_values() {
    let w = class_weights(BalanceMode::EffectiveNumber, &[10, 1000], 0.99).unwrap();
    let raw = [0.10458290117591236, 0.010000431731112487];
    let s: f64 = raw.iter().sum();
    for (got, r) in w.iter().zip(raw) {
        assert!((got - 2.0 * r / s).abs() < 1e-12);
    }
    assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    assert!((hiercrop::training::effective_number_weight(10, 0.99) - raw[0]).abs() < 1e-15);
    assert!((hiercrop::training::effective_number_weight(1000, 0.99) - raw[1]).abs() < 1e-15);
}

#[test]
fn inv_freq_normalised_to_present_classes() {
    let w = class_weights(BalanceMode::InvFreq, &[10, 0, 1000, 100], 0.0).unwrap();
    assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    assert!((w[0] / w[2] - 100.0).abs() < 1e-9);
}

#[test]
fn class_stats_levels_share_total() {
    let d = tiny_dataset(24, 6, 2, vec![2, 3, 2], 3);
    let stats = ClassStats::from_samples(&d.hierarchy, &d.samples);
    for lvl in &stats.levels {
        assert_eq!(lvl.iter().sum::<u64>(), stats.total());
    }
    assert_eq!(stats.levels.len(), 3);
}

#[test]
fn oversampling_probability_and_frequency() {
    let samples = vec![solid_sample(0, 2, 5), solid_sample(1, 10, 100)];
    let counts = [10u64, 1000];
    let w = patch_weights(&samples, &counts);
    let p_rare = w[0] / (w[0] + w[1]);
    assert!((p_rare - 100.0 / 101.0).abs() < 1e-12);
    let mut s = Sampler::oversampling(vec![0, 1], &w).unwrap();
    let mut rng = rng::stream(7, Stream::Sampling);
    let draws = 100_000;
    let rare = s.sample_batch(draws, &mut rng).iter().filter(|&&i| i == 0).count();
    let freq = rare as f64 / draws as f64;
    assert!((freq - p_rare).abs() < 0.01, "{freq}");
}

#[test]
fn uniform_sampling_frequency_and_order() {
    let idx: Vec<usize> = (0..7).collect();
    let mut s = Sampler::uniform(idx.clone()).unwrap();
    let mut rng = rng::stream(1, Stream::Sampling);
    let draws = 100_000;
    let mut hist = [0usize; 7];
    for i in s.sample_batch(draws, &mut rng) {
        hist[i] += 1;
    }
    for h in hist {
        assert!((h as f64 / draws as f64 - 1.0 / 7.0).abs() < 0.01);
    }
    let run = |seed| {
        let mut s = Sampler::uniform(idx.clone()).unwrap();
        s.sample_batch(40, &mut rng::stream(seed, Stream::Sampling))
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn flips_are_involutions_and_keep_pairs_aligned() {
    let d = tiny_dataset(12, 6, 3, vec![2, 2], 1);
    let original = d.samples[0].clone();
    for axis in [Flip::Horizontal, Flip::Vertical] {
        let mut s = original.clone();
        flip(&mut s, axis);
        assert_ne!(s.fine_labels.len(), 0);
        flip(&mut s, axis);
        assert_eq!(s, original);
    }
    let mut s = original.clone();
    flip(&mut s, Flip::Horizontal);
    let (h, w, plane) = (s.height, s.width, s.pixels());
    for y in 0..h {
        for x in 0..w {
            let (dst, src) = (y * w + x, y * w + w - 1 - x);
            assert_eq!(s.fine_labels[dst], original.fine_labels[src]);
            assert_eq!(s.field_ids[dst], original.field_ids[src]);
            for f in 0..s.time_steps * s.bands {
                assert_eq!(s.inputs[f * plane + dst], original.inputs[f * plane + src]);
            }
        }
    }
}

#[test]
fn flip_rate_near_target() {
    let mut s = solid_sample(0, 2, 2);
    let mut rng = rng::stream(2, Stream::Augmentation);
    let trials = 100_000;
    let (mut flips, mut horizontal) = (0, 0);
    for _ in 0..trials {
        if let Some(axis) = augment_flip(&mut s, &mut rng, 0.66) {
            flips += 1;
            horizontal += (axis == Flip::Horizontal) as usize;
        }
    }
    let rate = flips as f64 / trials as f64;
    assert!((rate - 0.66).abs() < 0.01, "{rate}");
    assert!((horizontal as f64 / flips as f64 - 0.5).abs() < 0.01);
}

#[test]
fn single_sample_overfit() {
    let mut d = tiny_dataset(12, 6, 4, vec![2, 2], 5);
    d.samples.truncate(1);
    let mut model = tiny_model(&d, 16, 1);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 1,
        base_lr: 3e-3,
        weight_decay: 0.0,
        flip_prob: 0.0,
        steps_per_epoch: Some(200),
        ..TrainConfig::default()
    };
    let report = train(&mut model, &d, &[0], &cfg, |_, _| Ok(())).unwrap();
    let losses = &report.step_losses;
    assert_eq!(losses.len(), 200);
    assert!(*losses.last().unwrap() < 0.05, "final loss {}", losses.last().unwrap());
    for w in losses.chunks(50).collect::<Vec<_>>().windows(2) {
        let mean = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
        assert!(mean(w[1]) < mean(w[0]));
    }
}

#[test]
fn initial_loss_near_uniform_value() {
    let d = tiny_dataset(16, 8, 6, vec![3, 2, 2], 2);
    let mut model = tiny_model(&d, 16, 4);
    let cfg = TrainConfig {
        epochs: 1,
        steps_per_epoch: Some(1),
        flip_prob: 0.0,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &d, &[0, 1, 2, 3], &cfg, |_, _| Ok(())).unwrap();
    let uniform = 0.1 * 3f64.ln() + 0.3 * 6f64.ln() + 1.2 * 12f64.ln();
    let first = report.step_losses[0];
    assert!((first - uniform).abs() / uniform < 0.02, "{first} vs {uniform}");
}

#[test]
fn same_seed_same_log() {
    let d = tiny_dataset(12, 6, 3, vec![2, 2], 6);
    let run = |seed| {
        let mut model = tiny_model(&d, 4, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed,
            balance: BalanceMode::EffectiveNumber,
            oversample: true,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let r = train(&mut model, &d, &[0, 1, 2, 3], &cfg, |row, _| {
            seen.push(row.epoch);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1]);
        (r, model)
    };
    let (a, ma) = run(9);
    let (b, mb) = run(9);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let bits = |r: &hiercrop::training::TrainReport| r.step_losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let (c, _) = run(10);
    assert_ne!(bits(&a), bits(&c));
    assert_eq!(a.log[0].tsv_row().split('\t').count(), 3 + 2);
}

#[test]
fn non_finite_loss_keeps_last_good_state() {
    let mut d = tiny_dataset(12, 6, 3, vec![2, 2], 7);
    d.samples[0].inputs[0] = f32::NAN;
    let mut model = tiny_model(&d, 4, 3);
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let mut epochs_done = 0;
    let r = train(&mut model, &d, &[0], &cfg, |_, _| {
        epochs_done += 1;
        Ok(())
    })
    .unwrap();
    let abort = r.aborted.expect("abort recorded");
    assert_eq!((abort.epoch, abort.step), (0, 0));
    assert_eq!(epochs_done, 0);
    assert_eq!(model, before);
}

#[test]
fn unlabeled_patches_carry_no_weight() {
    let mut s = solid_sample(0, 2, 2);
    s.fine_labels = vec![UNLABELED; 4];
    assert_eq!(patch_weights([&s], &[5]), vec![0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        grads in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 1..6), 1..5),
        tau in 0.1f64..10.0,
    ) {
        let mut g = grads.clone();
        let before = global_norm(&grads);
        clip_gradients(&mut g, tau);
        let after = global_norm(&g);
        prop_assert!((after - before.min(tau)).abs() < 1e-9);
        prop_assert!(after <= before + 1e-12);
        if before > 0.0 {
            let dot: f64 = g.iter().flatten().zip(grads.iter().flatten()).map(|(a, b)| a * b).sum();
            prop_assert!((dot - after * before).abs() < 1e-9 * before.max(1.0) * after.max(1.0));
        }
    }

    #[test]
    fn weights_non_negative_and_inv_freq_antimonotone(
        counts in prop::collection::vec(0u64..5000, 2..10),
        beta in prop::sample::select(vec![0.99, 0.999, 0.9999]),
    ) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        for mode in [BalanceMode::InvFreq, BalanceMode::InvFreqMedianLr, BalanceMode::EffectiveNumber] {
            let w = class_weights(mode, &counts, beta).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
        let w = class_weights(BalanceMode::InvFreq, &counts, beta).unwrap();
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] > 0 && counts[j] > 0 && counts[i] < counts[j] {
                    prop_assert!(w[i] > w[j]);
                }
            }
        }
    }
}
