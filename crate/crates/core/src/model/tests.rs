use super::*;
use crate::autodiff::{Binding, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-0.5f32..0.5))
}

#[test]
fn presets_validate() {
    for cfg in [ModelConfig::full(4), ModelConfig::desk(2), ModelConfig::micro(2)] {
        cfg.validate().unwrap();
    }
    let mut bad = ModelConfig::desk(2);
    bad.downsample_factors = vec![2, 2, 8, 4];
    assert!(bad.validate().is_err());
}

#[test]
fn content_shape_and_unit_columns() {
    let model = Model::<f32>::new(&ModelConfig::desk(2), 1).unwrap();
    for t in [256, 4096] {
        let x = noise(&[2, t], t as u64);
        let c = model.content_encode(&x).unwrap();
        assert_eq!(c.shape(), &[2, 4, t / 256]);
        let l = t / 256;
        for b in 0..2 {
            for j in 0..l {
                let n: f32 = (0..4).map(|i| c.data()[(b * 4 + i) * l + j].powi(2)).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5, "column norm {n}");
            }
        }
        let z = Tensor::zeros(vec![2, 128]);
        assert_eq!(model.generate(&c, &z).unwrap().shape(), &[2, t]);
    }
}

#[test]
fn scaled_input_keeps_unit_columns() {
    let model = Model::<f32>::new(&ModelConfig::micro(2), 2).unwrap();
    let x = noise(&[1, 512], 3);
    for a in [0.25f32, 0.6, 1.0] {
        let c = model.content_encode(&x.map(|v| v * a)).unwrap();
        assert!(c.all_finite());
        for j in 0..2 {
            let n: f32 = (0..4).map(|i| c.data()[i * 2 + j].powi(2)).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn bad_length_is_size_error() {
    let model = Model::<f32>::new(&ModelConfig::micro(2), 0).unwrap();
    assert!(matches!(model.content_encode(&noise(&[1, 300], 0)), Err(Error::Size(_))));
}

#[test]
fn zero_projection_block_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = ResidualBlock::new(&mut store, "blk", 4, 3, Some(6), true, &mut rng).unwrap();
    let tape = Tape::new();
    let bind = Binding::new(&tape, &store, false);
    let x = tape.constant(Tensor::from_fn(vec![2, 4, 20], |i| (i as f64 * 0.1).sin()));
    let z = tape.constant(Tensor::full(vec![2, 6], 0.3));
    let y = block.forward(&bind, &x, Some(&z)).unwrap();
    assert_eq!(y.value(), x.value());
}

#[test]
fn receptive_field_is_81() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stack = ResidualStack::new(&mut store, "rf", 2, &[1, 3, 9, 27], None, &mut rng).unwrap();
    let len = 301;
    let centre = 150;
    let tape = Tape::new();
    let bind = Binding::new(&tape, &store, false);
    let base = stack.forward(&bind, &tape.constant(Tensor::zeros(vec![1, 2, len])), None).unwrap();
    let mut imp = Tensor::zeros(vec![1, 2, len]);
    imp.data_mut()[centre] = 1.0;
    let y = stack.forward(&bind, &tape.constant(imp), None).unwrap();
    let touched: Vec<usize> = (0..len)
        .filter(|&t| (0..2).any(|c| y.value().data()[c * len + t] != base.value().data()[c * len + t]))
        .collect();
    let width = touched.last().unwrap() - touched.first().unwrap() + 1;
    assert_eq!(width, 81);
    assert_eq!(touched.len(), 81);
}

#[test]
fn conditioning_changes_output() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let block = ResidualBlock::new(&mut store, "blk", 2, 1, Some(3), false, &mut rng).unwrap();
    let tape = Tape::new();
    let bind = Binding::new(&tape, &store, false);
    let x = tape.constant(Tensor::from_fn(vec![1, 2, 10], |i| (i as f64 * 0.3).cos()));
    let a = block.forward(&bind, &x, Some(&tape.constant(Tensor::zeros(vec![1, 3])))).unwrap();
    let b = block.forward(&bind, &x, Some(&tape.constant(Tensor::full(vec![1, 3], 1.0)))).unwrap();
    assert_ne!(a.value(), b.value());
    let bad = tape.constant(Tensor::zeros(vec![1, 4]));
    assert!(matches!(block.forward(&bind, &x, Some(&bad)), Err(Error::Dimension(_))));
}

#[test]
fn speaker_encoder_sign_invariant_and_positive_sigma() {
    let model = Model::<f32>::new(&ModelConfig::desk(2), 7).unwrap();
    let x = noise(&[2, 8192], 8);
    let (mu, sigma) = model.speaker_encode(&x).unwrap();
    let (mu2, sigma2) = model.speaker_encode(&x.map(|v| -v)).unwrap();
    assert_eq!(mu.shape(), &[2, 128]);
    assert_eq!(mu, mu2);
    assert_eq!(sigma, sigma2);
    assert!(sigma.data().iter().all(|&s| s > 0.0));
    assert!(matches!(model.speaker_encode(&noise(&[1, 4096], 0)), Err(Error::Size(_))));
}

#[test]
fn generator_range_and_embedding_sensitivity() {
    let model = Model::<f32>::new(&ModelConfig::desk(2), 9).unwrap();
    let c = model.content_encode(&noise(&[1, 1024], 10)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z1 = sample_prior(1, 128, &mut rng);
    let z2 = sample_prior(1, 128, &mut rng);
    let a = model.generate(&c, &z1).unwrap();
    let b = model.generate(&c, &z2).unwrap();
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
    assert_ne!(a, b);
    assert_eq!(model.convert(&noise(&[1, 1024], 10), &z1).unwrap(), a);
}

#[test]
fn discriminator_layout() {
    let cfg = ModelConfig::desk(3);
    let mut store = ParamStore::<f32>::new();
    let d = Discriminator::new(&cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tape = Tape::new();
    let bind = Binding::new(&tape, &store, false);
    let t = 4096;
    let out = d.forward(&bind, &tape.constant(noise(&[2, t], 1))).unwrap();
    assert_eq!(out.len(), 3);
    for s in &out {
        assert_eq!(s.logits.shape()[1], 3);
        assert!(s.features.len() >= 4);
    }
    // second scale sees the pooled waveform
    assert_eq!(out[1].features[0].shape()[2], (t - 4) / 2 + 1);
}

#[test]
fn reparameterized_sampling() {
    let tape = Tape::<f64>::new();
    let mu = tape.leaf(Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap());
    let logvar = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 1.0, -2.0]).unwrap());
    let p = SpeakerPosterior { mu: mu.clone(), logvar };
    let z = p.sample_with(&Tensor::zeros(vec![1, 3])).unwrap();
    assert_eq!(z.value(), mu.value());
    let grads = tape.backward(&z.square().sum()).unwrap();
    assert_eq!(grads.wrt(&mu).unwrap().data(), &[1.0, -2.0, 4.0]);
}

#[test]
fn sample_mean_and_prior_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 10_000;
    let tape = Tape::<f64>::new();
    let mu = [0.3, -1.2];
    let sd = [0.5, 2.0];
    let p = SpeakerPosterior {
        mu: tape.constant(Tensor::new(vec![1, 2], mu.to_vec()).unwrap()),
        logvar: tape.constant(Tensor::new(vec![1, 2], sd.iter().map(|s: &f64| (s * s).ln()).collect()).unwrap()),
    };
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let z = p.sample(&mut rng).unwrap();
        for j in 0..2 {
            sum[j] += z.value().data()[j];
        }
    }
    for j in 0..2 {
        let mean = sum[j] / n as f64;
        assert!((mean - mu[j]).abs() < 4.0 * sd[j] / (n as f64).sqrt());
    }

    let z: Tensor<f64> = sample_prior(n, 128, &mut rng);
    for j in 0..128 {
        let col: Vec<f64> = (0..n).map(|i| z.data()[i * 128 + j]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((0.9..=1.1).contains(&v), "var {v}");
    }
    let a: Tensor<f32> = sample_prior(1, 128, &mut ChaCha8Rng::seed_from_u64(1));
    let b: Tensor<f32> = sample_prior(1, 128, &mut ChaCha8Rng::seed_from_u64(2));
    let c: Tensor<f32> = sample_prior(1, 128, &mut ChaCha8Rng::seed_from_u64(1));
    assert_ne!(a, b);
    assert_eq!(a, c);
}

#[test]
fn parameter_budget() {
    let full = count_parameters(&ModelConfig::full(2)).unwrap();
    let total = full.conversion_total();
    assert!((13_500_000..=16_600_000).contains(&total), "{total}");
    // counts do not depend on input length, only on architecture
    assert_eq!(full, count_parameters(&ModelConfig::full(2)).unwrap());
}

#[test]
fn halving_width_quarters_conv_weights() {
    let weights = |base: usize| -> usize {
        let cfg = ModelConfig {
            base_channels: base,
            ..ModelConfig::full(2)
        };
        let mut store = ParamStore::<f32>::new();
        Networks::new(&cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store.iter().filter(|(_, n, _)| n.ends_with(".v")).map(|(_, _, t)| t.len()).sum()
    };
    let ratio = weights(32) as f64 / weights(16) as f64;
    assert!((ratio - 4.0).abs() / 4.0 < 0.1, "ratio {ratio}");
}
