use super::*;
use crate::autodiff::{grad_check, Binding, Tape};
use crate::checks::{check_batch, gradient_flow, run_loss_checks, CheckOptions};
use crate::model::{Model, ModelConfig};

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn scale_output<'t>(tape: &'t Tape<f64>, logits: Vec<f64>, shape: [usize; 3]) -> ScaleOutput<'t, f64> {
    ScaleOutput {
        logits: tape.leaf(Tensor::new(shape.to_vec(), logits).unwrap()),
        features: vec![],
    }
}

#[test]
fn discriminator_loss_matches_hand_computation() {
    let tape = Tape::new();
    // two items, two speakers, two patches
    let real = scale_output(&tape, vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.2, 1.5, -2.5], [2, 2, 2]);
    let fake = scale_output(&tape, vec![-0.4, 0.9, 1.1, 0.0, 0.7, -1.3, 0.2, 0.6], [2, 2, 2]);
    let loss = discriminator_scale_loss(&real, &[1, 0], &fake, &[0, 1]).unwrap();
    // real picks speaker 1 of item 0 -> [2.0, 0.1], speaker 0 of item 1 -> [0.3, -0.2]
    let r = [2.0, 0.1, 0.3, -0.2].iter().map(|&l| softplus(-l)).sum::<f64>() / 4.0;
    // fake picks speaker 0 of item 0 -> [-0.4, 0.9], speaker 1 of item 1 -> [0.2, 0.6]
    let f = [-0.4, 0.9, 0.2, 0.6].iter().map(|&l| softplus(l)).sum::<f64>() / 4.0;
    assert!((loss.item() - (r + f)).abs() < 1e-12);
}

#[test]
fn generator_adversarial_forms() {
    let tape = Tape::new();
    let out = vec![scale_output(&tape, vec![0.5, -1.0, 2.0, 0.1], [1, 2, 2])];
    let sat = generator_adversarial_loss(&out, &[0], false).unwrap().item();
    let ns = generator_adversarial_loss(&out, &[0], true).unwrap().item();
    assert!((sat + (softplus(0.5) + softplus(-1.0)) / 2.0).abs() < 1e-12);
    assert!((ns - (softplus(-0.5) + softplus(1.0)) / 2.0).abs() < 1e-12);
    // log(1 - D) = -softplus(l)
    let d = 1.0 / (1.0 + (-0.5f64).exp());
    assert!(((1.0 - d).ln() + softplus(0.5)).abs() < 1e-12);
}

#[test]
fn out_of_range_branch_is_index_error() {
    let tape = Tape::new();
    let a = scale_output(&tape, vec![0.0; 4], [1, 2, 2]);
    let b = scale_output(&tape, vec![0.0; 4], [1, 2, 2]);
    assert!(matches!(discriminator_scale_loss(&a, &[2], &b, &[0]), Err(Error::Index(_))));
    assert!(matches!(generator_adversarial_loss(&[a], &[5], false), Err(Error::Index(_))));
}

#[test]
fn feature_mismatch_is_size_error() {
    let tape = Tape::<f64>::new();
    let mk = |n: usize| ScaleOutput {
        logits: tape.constant(Tensor::zeros(vec![1, 1, 1])),
        features: (0..n).map(|_| tape.constant(Tensor::zeros(vec![1, 1, 4]))).collect(),
    };
    assert!(matches!(feature_matching_loss(&[mk(2)], &[mk(3)]), Err(Error::Size(_))));
    assert!(matches!(feature_matching_loss(&[mk(2)], &[mk(2), mk(2)]), Err(Error::Size(_))));
    assert_eq!(feature_matching_loss(&[mk(2)], &[mk(2)]).unwrap().item(), 0.0);
}

#[test]
fn feature_matching_value() {
    let tape = Tape::<f64>::new();
    let mk = |vals: Vec<f64>| ScaleOutput {
        logits: tape.constant(Tensor::zeros(vec![1, 1, 1])),
        features: vec![tape.constant(Tensor::new(vec![1, 1, 4], vals).unwrap())],
    };
    let l = feature_matching_loss(&[mk(vec![1.0, 2.0, 3.0, 4.0])], &[mk(vec![0.0, 2.5, 3.0, 2.0])]).unwrap();
    assert!((l.item() - 3.5 / 4.0).abs() < 1e-12);
}

#[test]
fn kl_closed_form() {
    assert_eq!(kl_divergence(&[0.0; 5], &[1.0; 5]).unwrap(), 0.0);
    let v = kl_divergence(&[1.0], &[2.0]).unwrap();
    assert!((v - 0.5 * (1.0 + 4.0 - 1.0 - 4f64.ln())).abs() < 1e-12);
    assert!(matches!(kl_divergence(&[0.0], &[0.0]), Err(Error::Contract(_))));
    assert!(matches!(kl_divergence(&[0.0], &[-1.0]), Err(Error::Contract(_))));

    let tape = Tape::<f64>::new();
    let mu = vec![0.3, -0.7, 1.2, 0.0];
    let sd: Vec<f64> = vec![0.5, 1.5, 1.0, 2.0];
    let post = SpeakerPosterior {
        mu: tape.constant(Tensor::new(vec![2, 2], mu.clone()).unwrap()),
        logvar: tape.constant(Tensor::new(vec![2, 2], sd.iter().map(|s| (s * s).ln()).collect()).unwrap()),
    };
    let batch_mean = (kl_divergence(&mu[..2], &sd[..2]).unwrap() + kl_divergence(&mu[2..], &sd[2..]).unwrap()) / 2.0;
    assert!((kl_loss(&post).unwrap().item() - batch_mean).abs() < 1e-12);
}

#[test]
fn kl_gradient() {
    let p = Tensor::from_fn(vec![2, 6], |i| (i as f64 * 0.37).sin());
    let err = grad_check(
        |x| {
            let mu = x.scale(0.5);
            let logvar = x.scale(-0.8);
            kl_loss(&SpeakerPosterior { mu, logvar })
        },
        &p,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn spectral_loss_properties() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_fn(vec![2, 1, 4096], |i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5));
    assert_eq!(spectral_loss(&a, &a, 1024).unwrap().item(), 0.0);
    let b = a.scale(0.5);
    let l = spectral_loss(&a, &b, 1024).unwrap().item();
    assert!(l > 0.0);
    // halving the amplitude shifts every unfloored log-mel value by ln 2
    let frames = 4096 / 256 + 1;
    let expected = 80.0 * frames as f64 * 2f64.ln().powi(2);
    assert!((l - expected).abs() / expected < 0.05, "{l} vs {expected}");
    let short = tape.constant(Tensor::zeros(vec![2, 1, 2048]));
    assert!(matches!(spectral_loss(&a, &short, 1024), Err(Error::Size(_))));
}

#[test]
fn generator_pass_reports_all_terms() {
    let cfg = ModelConfig::micro(2);
    let model = Model::<f64>::new(&cfg, 3).unwrap();
    let batch = check_batch(&cfg, 2, 8192, 1);
    let tape = Tape::new();
    let g = Binding::new(&tape, &model.params, true);
    let pass = generator_pass(&model.nets, &g, &g.frozen(), &batch, &LossWeights::default()).unwrap();
    let l = &pass.losses;
    assert_eq!(l.spectral.len(), 3);
    assert_eq!(pass.conversion.shape(), &[2, 1, 8192]);
    let w = LossWeights::default();
    let rec = l.feature_matching.item() + l.spectral.iter().map(|s| s.item()).sum::<f64>();
    assert!((l.reconstruction.item() - rec).abs() < 1e-9 * rec);
    let total = l.adversarial.item() + w.reconstruction * rec + w.content * l.content.item() + w.kl * l.kl.item();
    assert!((l.total.item() - total).abs() < 1e-9 * total.abs());
    assert!(l.values().iter().all(|(_, v)| v.is_finite()));
    assert!(l.adversarial.item() < 0.0);
}

#[test]
fn micro_gradients_match_finite_differences() {
    // every fifth tensor; the acceptance suite covers all of them
    let opts = CheckOptions {
        tensor_stride: 5,
        ..CheckOptions::default()
    };
    let checks = run_loss_checks(&opts).unwrap();
    assert_eq!(checks.len(), 2 * (4 + 9));
    for c in &checks {
        let tol = if c.precision == "f64" { 1e-6 } else { 1e-4 };
        assert!(c.max_rel_error < tol, "{:?} {} {:?}", c.term, c.precision, c.worst_tensor());
        assert!(c.coords() > 0);
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let opts = CheckOptions {
        tensor_stride: 50,
        corrupt: Some(1e-3),
        config: ModelConfig {
            n_discriminator_scales: 1,
            ..ModelConfig::micro(2)
        },
        ..CheckOptions::default()
    };
    let checks = run_loss_checks(&opts).unwrap();
    // the corrupted tensor is the first discriminator tensor, which every
    // discriminator term reaches
    for c in checks.iter().filter(|c| c.term.name().starts_with("d_")) {
        assert!(c.max_rel_error > 1e-4, "{:?}", c.term);
    }
}

#[test]
fn every_generator_side_tensor_gets_gradient() {
    let frac = gradient_flow(&CheckOptions::default()).unwrap();
    assert!(frac >= 0.99, "{frac}");
}

#[test]
fn frozen_discriminator_gets_no_gradient() {
    let cfg = ModelConfig::micro(2);
    let model = Model::<f64>::new(&cfg, 0).unwrap();
    let batch = check_batch(&cfg, 2, 8192, 0);
    let tape = Tape::new();
    let g = Binding::new(&tape, &model.params, true);
    let pass = generator_pass(&model.nets, &g, &g.frozen(), &batch, &LossWeights::default()).unwrap();
    let grads = tape.backward(&pass.losses.total).unwrap();
    for id in model.nets.discriminator_params() {
        assert!(grads.param(id).is_none());
    }
}
