//! Finite-difference verification of every training loss on a micro model.
//!
//! Analytic gradients are computed in the precision under test and compared
//! against central differences of the same objective evaluated in `f64` on
//! identical weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    multi_param_grad_check, term_gradients, Binding, GradientSource, MultiObjective, ParamId, ParamStore, Real, Tape,
    TensorCheck, Tensor, Var,
};
use crate::error::Result;
use crate::losses::{discriminator_pass, generator_pass, GeneratorBatch, LossWeights};
use crate::model::{standard_normal, Model, ModelConfig, Networks};

/// One differentiable objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    DiscriminatorTotal,
    DiscriminatorScale(usize),
    GeneratorAdversarial,
    FeatureMatching,
    Spectral(usize),
    Reconstruction,
    Content,
    Kl,
    GeneratorTotal,
}

impl LossTerm {
    pub fn name(&self) -> String {
        match self {
            LossTerm::DiscriminatorTotal => "d_total".into(),
            LossTerm::DiscriminatorScale(k) => format!("d_adv_scale{k}"),
            LossTerm::GeneratorAdversarial => "g_adv".into(),
            LossTerm::FeatureMatching => "fm".into(),
            LossTerm::Spectral(i) => format!("spec{i}"),
            LossTerm::Reconstruction => "rec".into(),
            LossTerm::Content => "con".into(),
            LossTerm::Kl => "kl".into(),
            LossTerm::GeneratorTotal => "g_total".into(),
        }
    }
}

/// Which parameters a group of terms differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Discriminator,
    Generator,
}

/// All loss terms of one side on a fixed batch, as functions of the
/// parameters. The other side is frozen.
pub struct LossGroup<'a> {
    pub nets: &'a Networks,
    pub batch: &'a GeneratorBatch<f64>,
    /// detached conversions fed to the discriminator as fakes
    pub fakes: &'a Tensor<f64>,
    pub weights: &'a LossWeights,
    pub side: Side,
}

impl LossGroup<'_> {
    /// Terms in the order [`MultiObjective::eval_terms`] returns them.
    pub fn terms(&self) -> Vec<LossTerm> {
        match self.side {
            Side::Discriminator => {
                let mut v = vec![LossTerm::DiscriminatorTotal];
                v.extend((0..self.nets.config.n_discriminator_scales).map(LossTerm::DiscriminatorScale));
                v
            }
            Side::Generator => {
                let mut v = vec![LossTerm::GeneratorAdversarial, LossTerm::FeatureMatching];
                v.extend((0..self.weights.spectral_windows.len()).map(LossTerm::Spectral));
                v.extend([LossTerm::Reconstruction, LossTerm::Content, LossTerm::Kl, LossTerm::GeneratorTotal]);
                v
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self.side {
            Side::Discriminator => self.nets.discriminator_params(),
            Side::Generator => self.nets.g_side_params(),
        }
    }
}

impl MultiObjective for LossGroup<'_> {
    fn eval_terms<'t, R: Real>(&self, tape: &'t Tape<R>, params: &ParamStore<R>) -> Result<Vec<Var<'t, R>>> {
        let d_side = self.side == Side::Discriminator;
        let g = Binding::new(tape, params, !d_side);
        let d = Binding::new(tape, params, d_side);
        if d_side {
            let real = tape.constant(self.batch.source.cast());
            let fake = tape.constant(self.fakes.cast());
            let out = discriminator_pass(
                self.nets,
                &d,
                &real,
                &self.batch.speakers,
                &fake,
                &self.batch.converted_speakers(),
            )?;
            let mut v = vec![out.total];
            v.extend(out.per_scale);
            return Ok(v);
        }
        let l = generator_pass(self.nets, &g, &d, &self.batch.cast(), self.weights)?.losses;
        let mut v = vec![l.adversarial, l.feature_matching];
        v.extend(l.spectral);
        v.extend([l.reconstruction, l.content, l.kl, l.total]);
        Ok(v)
    }
}

/// Settings of a loss gradient audit.
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub config: ModelConfig,
    pub batch: usize,
    pub length: usize,
    pub seed: u64,
    /// factor applied to every weight-norm magnitude of the check point
    pub gain: f64,
    /// coordinates probed per parameter tensor and term
    pub per_tensor: usize,
    /// check every `tensor_stride`-th live tensor (1 checks all)
    pub tensor_stride: usize,
    pub step: f64,
    /// multiply the analytic gradient of the first checked tensor of every
    /// term by `1 + corrupt`, to confirm the audit notices
    pub corrupt: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            config: ModelConfig::micro(2),
            batch: 2,
            length: 8192,
            seed: 0,
            // The default initialization shrinks activations about 2.5x per
            // layer; at that point many micro-model gradients sit below what
            // f64 differences can resolve and the f32 spectrogram of the
            // near-constant generator output loses its small bins.
            gain: 2.0,
            per_tensor: 1,
            tensor_stride: 1,
            step: 1e-4,
            corrupt: None,
        }
    }
}

/// Largest accepted relative error in `f32`.
pub const F32_TOLERANCE: f64 = 1e-4;
/// Largest accepted relative error in `f64`.
pub const F64_TOLERANCE: f64 = 1e-6;

/// Outcome for one loss term in one precision.
#[derive(Clone, Debug)]
pub struct LossCheck {
    pub term: LossTerm,
    pub precision: &'static str,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl LossCheck {
    pub fn tolerance(&self) -> f64 {
        if self.precision == "f32" {
            F32_TOLERANCE
        } else {
            F64_TOLERANCE
        }
    }

    /// Something was compared and every comparison is within tolerance.
    pub fn passed(&self) -> bool {
        self.coords() > 0 && self.max_rel_error < self.tolerance()
    }

    /// `name precision max_rel_error coords skipped PASS|FAIL`
    pub fn report_line(&self) -> String {
        format!(
            "{:<12} {} max_rel_error={:.3e} tol={:.0e} coords={} skipped={} {}",
            self.term.name(),
            self.precision,
            self.max_rel_error,
            self.tolerance(),
            self.coords(),
            self.skipped(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }

    pub fn coords(&self) -> usize {
        self.tensors.iter().map(|t| t.coords).sum()
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }

    pub fn worst_tensor(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Noise-like test batch: broadband inputs keep every spectral bin away from
/// the non-differentiable point at zero magnitude.
pub fn check_batch(cfg: &ModelConfig, batch: usize, length: usize, seed: u64) -> GeneratorBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let source = Tensor::from_fn(vec![batch, length], |_| rng.random_range(-0.5..0.5));
    let shift = 5;
    let target = Tensor::from_fn(vec![batch, length], |i| {
        if i % length >= shift {
            source.data()[i - shift]
        } else {
            0.0
        }
    });
    let speaker_view = Tensor::from_fn(vec![batch, length], |i| {
        let (b, t) = (i / length, i % length);
        source.data()[b * length + (t + length / 2) % length]
    });
    GeneratorBatch {
        source,
        target,
        speaker_view,
        eps: standard_normal(&[batch, cfg.d_spk], &mut rng),
        perm: (0..batch).map(|i| (i + 1) % batch).collect(),
        speakers: (0..batch).map(|i| i % cfg.n_speakers).collect(),
    }
}

/// Micro model at the check point: weights drawn in `f32` so both
/// precisions see identical values, magnitudes scaled by `gain`.
pub fn check_model(opts: &CheckOptions) -> Result<Model<f32>> {
    let mut model = Model::<f32>::new(&opts.config, opts.seed)?;
    let ids: Vec<ParamId> = model.params.ids().collect();
    for id in ids {
        if model.params.name(id).ends_with(".g") {
            for v in model.params.data_mut(id) {
                *v *= opts.gain as f32;
            }
        }
    }
    Ok(model)
}

/// Run the audit for every loss term, in `f64` (analytic and numeric both
/// `f64`) and in `f32` (analytic `f32` against the `f64` oracle).
pub fn run_loss_checks(opts: &CheckOptions) -> Result<Vec<LossCheck>> {
    let model32 = check_model(opts)?;
    let params64: ParamStore<f64> = model32.params.cast();
    let nets = &model32.nets;
    let batch = check_batch(&opts.config, opts.batch, opts.length, opts.seed);
    let weights = LossWeights::default();
    let fakes = {
        let tape = Tape::new();
        let g = Binding::new(&tape, &params64, false);
        let c = generator_pass(nets, &g, &g, &batch, &weights)?.conversion.value().clone();
        let s = c.shape().to_vec();
        c.reshape(vec![s[0], s[2]])?
    };
    let mut out = Vec::new();
    for side in [Side::Discriminator, Side::Generator] {
        let group = LossGroup {
            nets,
            batch: &batch,
            fakes: &fakes,
            weights: &weights,
            side,
        };
        let terms = group.terms();
        let g64 = term_gradients(&group, &params64)?;
        let g32 = term_gradients(&group, &model32.params)?;
        // only tensors some term depends on
        let live: Vec<ParamId> = group
            .params()
            .into_iter()
            .filter(|&id| g64.iter().any(|g| g.param(id).is_some_and(|t| t.max_abs() > 0.0)))
            .step_by(opts.tensor_stride.max(1))
            .collect();
        let first = live.first().copied();
        let corrupt = |id: ParamId, t: Tensor<f64>| match (opts.corrupt, first) {
            (Some(c), Some(f)) if f == id => t.map(|v| v * (1.0 + c)),
            _ => t,
        };
        let s64 = |k: usize, id: ParamId| g64[k].param(id).cloned().map(|t| corrupt(id, t));
        let s32 = |k: usize, id: ParamId| g32[k].param(id).map(|t| corrupt(id, t.cast()));
        let sources: [GradientSource<'_>; 2] = [&s64, &s32];
        let report = multi_param_grad_check(&group, &params64, &sources, &live, opts.per_tensor, opts.step)?;
        for (s, precision) in ["f64", "f32"].into_iter().enumerate() {
            for (k, &term) in terms.iter().enumerate() {
                // a tensor this term does not reach has nothing to compare
                let tensors: Vec<TensorCheck> = report[s][k]
                    .iter()
                    .zip(&live)
                    .filter(|(_, &id)| g64[k].param(id).is_some_and(|t| t.max_abs() > 0.0))
                    .map(|(t, _)| t.clone())
                    .collect();
                let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
                out.push(LossCheck {
                    term,
                    precision,
                    tensors,
                    max_rel_error,
                });
            }
        }
    }
    Ok(out)
}

/// Fraction of encoder/generator tensors with a nonzero gradient of the
/// total objective, at the default initialization.
pub fn gradient_flow(opts: &CheckOptions) -> Result<f64> {
    let model = Model::<f64>::new(&opts.config, opts.seed)?;
    let batch = check_batch(&opts.config, opts.batch, opts.length, opts.seed);
    let fakes = Tensor::zeros(vec![opts.batch, opts.length]);
    let weights = LossWeights::default();
    let group = LossGroup {
        nets: &model.nets,
        batch: &batch,
        fakes: &fakes,
        weights: &weights,
        side: Side::Generator,
    };
    let tape = Tape::new();
    let terms = group.eval_terms(&tape, &model.params)?;
    let grads = tape.backward(terms.last().expect("total is last"))?;
    let ids = model.nets.g_side_params();
    let live = ids
        .iter()
        .filter(|&&id| grads.param(id).is_some_and(|g| g.max_abs() > 0.0))
        .count();
    Ok(live as f64 / ids.len().max(1) as f64)
}
