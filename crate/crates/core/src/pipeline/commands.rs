//! Command implementations shared by the CLI and the Python bindings.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::checks::{run_loss_checks, CheckOptions, LossCheck};
use crate::error::{Error, Result};
use crate::dsp::SpectrogramConfig;
use crate::model::{sample_prior, standard_normal, Model, ModelConfig, ParamCounts, HOP, MIN_SPEAKER_FRAMES};
use crate::training::{
    crop_cyclic, load_checkpoint, save_checkpoint, train_spoof_classifier, Dataset, SpoofReport, StepReport, Trainer,
};

use super::{load_wav, save_wav, RunConfig, SpeakerEmbedding};

/// Single-core CPU synthesis rate reported for the original full-size model.
pub const REFERENCE_CPU_KHZ: f64 = 7.49;

/// Overrides applied on top of a run config.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// continue from this checkpoint
    pub resume: Option<PathBuf>,
    pub desk_scale: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub final_step: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub last: Option<StepReport>,
}

/// Train per `cfg`, appending `key=value` records to `<out>/train.log` and
/// writing `<out>/checkpoint.ckpt` periodically and at the end.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = opts.seed {
        cfg.train.seed = s;
    }
    if let Some(d) = opts.desk_scale {
        cfg.train.desk_scale = d;
    }
    if let Some(o) = &opts.out_dir {
        cfg.out_dir = o.clone();
    }
    if cfg.out_dir.as_os_str().is_empty() {
        cfg.out_dir = PathBuf::from("run");
    }
    cfg.validate()?;
    let (train, _) = cfg.load_data()?;
    if train.speakers_present() < 2 {
        return Err(Error::Data("training needs at least two speakers".into()));
    }
    let model_cfg = cfg.model_config(train.n_speakers)?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let mut t = load_checkpoint(path, Some(&model_cfg))?.into_trainer();
            t.config.steps = cfg.train.steps;
            t.config.epochs = cfg.train.epochs;
            t
        }
        None => Trainer::new(&model_cfg, cfg.train.clone())?,
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("train.log");
    let ckpt_path = cfg.out_dir.join("checkpoint.ckpt");
    let mut log = OpenOptions::new()
        .create(true)
        .append(opts.resume.is_some())
        .write(true)
        .truncate(opts.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let total = trainer.config.total_steps(train.len());
    let start = trainer.step;
    let mut last = None;
    while trainer.step < total {
        let r = trainer.train_step(&train)?;
        let every = trainer.config.log_every.max(1);
        if r.step % every == 0 || r.step == total || r.step == start + 1 {
            let line = r.log_line();
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            log::info!("{line}");
        }
        if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 {
            save_checkpoint(&trainer, &ckpt_path)?;
        }
        last = Some(r);
    }
    save_checkpoint(&trainer, &ckpt_path)?;
    Ok(TrainOutcome {
        steps_run: trainer.step - start,
        final_step: trainer.step,
        checkpoint: ckpt_path,
        log: log_path,
        last,
    })
}

/// Model stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(path, None)?.model)
}

/// Drop the tail so the length is a multiple of 256.
pub fn crop_to_hop(x: &[f32]) -> Result<Vec<f32>> {
    let n = x.len() / HOP * HOP;
    if n == 0 {
        return Err(Error::Size(format!("clip of {} samples is shorter than {HOP}", x.len())));
    }
    Ok(x[..n].to_vec())
}

/// Where the target speaker embedding comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvertTarget {
    /// posterior of a reference recording
    Wav(PathBuf),
    /// a file written by [`cmd_embed`]
    Embedding(PathBuf),
    /// a draw from the unit prior
    Prior,
}

/// Shortest reference the speaker encoder takes without padding.
pub const MIN_REFERENCE_SAMPLES: usize = (MIN_SPEAKER_FRAMES - 1) * HOP;

/// Posterior mean of one clip, or a posterior draw when `rng` is given.
/// Clips of at least one mel window but under [`MIN_REFERENCE_SAMPLES`] are
/// repeated cyclically up to that length.
pub fn reference_embedding(model: &Model<f32>, clip: &[f32], rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f32>> {
    let window = SpectrogramConfig::speaker().window_size;
    if clip.len() < window {
        return Err(Error::Size(format!(
            "reference of {} samples is shorter than one mel window ({window})",
            clip.len()
        )));
    }
    let clip = if clip.len() < MIN_REFERENCE_SAMPLES {
        crop_cyclic(clip, 0, MIN_REFERENCE_SAMPLES)
    } else {
        clip.to_vec()
    };
    let x = Tensor::new(vec![1, clip.len()], clip)?;
    let (mu, sigma) = model.speaker_encode(&x)?;
    Ok(match rng {
        None => mu.into_data(),
        Some(rng) => {
            let eps: Tensor<f32> = standard_normal(mu.shape(), rng);
            mu.data()
                .iter()
                .zip(sigma.data())
                .zip(eps.data())
                .map(|((m, s), e)| m + s * e)
                .collect()
        }
    })
}

/// Embedding for `target` under `model`.
pub fn resolve_target(model: &Model<f32>, target: &ConvertTarget, seed: u64, sample: bool) -> Result<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match target {
        ConvertTarget::Wav(p) => {
            let clip = load_wav(p)?;
            reference_embedding(model, &clip.samples, sample.then_some(&mut rng))
        }
        ConvertTarget::Embedding(p) => {
            let e = SpeakerEmbedding::load(p)?;
            e.check_config(model.config())?;
            Ok(e.values)
        }
        ConvertTarget::Prior => Ok(sample_prior::<f32>(1, model.config().d_spk, &mut rng).into_data()),
    }
}

/// `G(E_c(source), z)` for one clip whose length is a multiple of 256.
pub fn convert_clip(model: &Model<f32>, source: &[f32], z: &[f32]) -> Result<Vec<f32>> {
    let x = Tensor::new(vec![1, source.len()], source.to_vec())?;
    let z = Tensor::new(vec![1, z.len()], z.to_vec())?;
    Ok(model.convert(&x, &z)?.into_data())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvertOutcome {
    /// samples written
    pub length: usize,
    /// samples clamped into [-1, 1] on write
    pub clamped: usize,
}

pub fn cmd_convert(
    checkpoint: &Path,
    source: &Path,
    target: &ConvertTarget,
    seed: u64,
    sample: bool,
    out: &Path,
) -> Result<ConvertOutcome> {
    let model = load_model(checkpoint)?;
    let src = crop_to_hop(&load_wav(source)?.samples)?;
    let z = resolve_target(&model, target, seed, sample)?;
    let y = convert_clip(&model, &src, &z)?;
    let clamped = save_wav(&y, out)?;
    Ok(ConvertOutcome {
        length: y.len(),
        clamped,
    })
}

/// Mean of the posterior means of `references`, written to `out`. Any
/// reference of at least one mel window is accepted; short ones give noisier
/// embeddings.
pub fn cmd_embed(checkpoint: &Path, references: &[PathBuf], out: &Path) -> Result<SpeakerEmbedding> {
    if references.is_empty() {
        return Err(Error::Data("at least one reference recording is needed".into()));
    }
    let model = load_model(checkpoint)?;
    let mut sum = vec![0f64; model.config().d_spk];
    for p in references {
        let mu = reference_embedding(&model, &load_wav(p)?.samples, None)?;
        for (s, m) in sum.iter_mut().zip(&mu) {
            *s += *m as f64;
        }
    }
    let n = references.len() as f64;
    let e = SpeakerEmbedding::new(sum.iter().map(|s| (s / n) as f32).collect(), model.config());
    e.save(out)?;
    Ok(e)
}

/// `count` conversions of `source` with embeddings drawn from the prior,
/// written as `<out_dir>/sample_<k>.wav`.
pub fn cmd_sample(checkpoint: &Path, source: &Path, count: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = load_model(checkpoint)?;
    let src = crop_to_hop(&load_wav(source)?.samples)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(count);
    for k in 0..count {
        let z = sample_prior::<f32>(1, model.config().d_spk, &mut rng).into_data();
        let y = convert_clip(&model, &src, &z)?;
        let p = out_dir.join(format!("sample_{k}.wav"));
        save_wav(&y, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Resynthesize `source` with its own posterior mean.
pub fn cmd_reconstruct(checkpoint: &Path, source: &Path, out: &Path) -> Result<ConvertOutcome> {
    let model = load_model(checkpoint)?;
    let src = crop_to_hop(&load_wav(source)?.samples)?;
    let z = reference_embedding(&model, &src, None)?;
    let y = convert_clip(&model, &src, &z)?;
    let clamped = save_wav(&y, out)?;
    Ok(ConvertOutcome {
        length: y.len(),
        clamped,
    })
}

/// Every source utterance converted towards every reference utterance of a
/// different speaker, with the reference's speaker as the intended label.
pub fn spoof_conversions(model: &Model<f32>, sources: &Dataset, references: &Dataset) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    let refs = references
        .utterances
        .iter()
        .map(|u| Ok((u.speaker, reference_embedding(model, &u.samples, None)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut clips = Vec::new();
    let mut targets = Vec::new();
    for u in &sources.utterances {
        let src = crop_to_hop(&u.samples)?;
        for (spk, z) in &refs {
            if *spk != u.speaker {
                clips.push(convert_clip(model, &src, z)?);
                targets.push(*spk);
            }
        }
    }
    Ok((clips, targets))
}

#[derive(Clone, Debug)]
pub struct SpoofEvaluation {
    pub classifier: SpoofReport,
    /// accuracy on the held-out real utterances
    pub classifier_test_accuracy: f64,
    pub conversions: usize,
    /// percentage of conversions assigned to their target speaker
    pub spoof_percent: f64,
}

/// Train the spoofing classifier on the training split, then score
/// conversions of held-out utterances towards held-out references.
pub fn cmd_eval_spoof(cfg: &RunConfig, checkpoint: &Path) -> Result<SpoofEvaluation> {
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    let model = load_checkpoint(checkpoint, Some(&cfg.model_config(train.n_speakers)?))?.model;
    let (clf, classifier) = train_spoof_classifier(&train, &cfg.spoof)?;
    let classifier_test_accuracy = clf.accuracy(&test)?;
    let (clips, targets) = spoof_conversions(&model, &test, &test)?;
    let spoof_percent = crate::training::evaluate_spoofing(&clips, &targets, &clf)?;
    Ok(SpoofEvaluation {
        classifier,
        classifier_test_accuracy,
        conversions: clips.len(),
        spoof_percent,
    })
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    /// samples synthesized per repeat
    pub samples: usize,
    /// wall seconds of each repeat
    pub seconds: Vec<f64>,
    pub median_khz: f64,
    pub min_khz: f64,
    pub max_khz: f64,
    pub counts: ParamCounts,
    pub reference_khz: f64,
}

impl BenchReport {
    pub fn lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("samples={} repeats={}", self.samples, self.seconds.len()),
            format!(
                "median_khz={:.3} min_khz={:.3} max_khz={:.3} reference_cpu_khz={}",
                self.median_khz, self.min_khz, self.max_khz, self.reference_khz
            ),
        ];
        v.extend(self.counts.report().lines().map(str::to_string));
        v
    }
}

/// Time `content_encode` + `generate` on `seconds` of synthetic audio.
/// The rate counts requested samples; the input is padded up to a multiple
/// of 256 internally.
pub fn cmd_bench(model: &Model<f32>, seconds: f64, repeats: usize, seed: u64) -> Result<BenchReport> {
    if !(seconds > 0.0) || repeats == 0 {
        return Err(Error::Config("bench needs a positive duration and at least one repeat".into()));
    }
    let samples = (seconds * super::SAMPLE_RATE as f64).round() as usize;
    let padded = samples.div_ceil(HOP).max(1) * HOP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(vec![1, padded], |_| rng.random_range(-0.5f32..0.5));
    let z: Tensor<f32> = sample_prior(1, model.config().d_spk, &mut rng);
    let mut secs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let y = model.convert(&x, &z)?;
        secs.push(t.elapsed().as_secs_f64());
        debug_assert_eq!(y.len(), padded);
    }
    let mut sorted = secs.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let khz = |s: f64| samples as f64 / s / 1000.0;
    Ok(BenchReport {
        samples,
        median_khz: khz(median),
        min_khz: khz(sorted[sorted.len() - 1]),
        max_khz: khz(sorted[0]),
        seconds: secs,
        counts: model.nets.counts(&model.params),
        reference_khz: REFERENCE_CPU_KHZ,
    })
}

/// Freshly initialized model for benchmarking without a checkpoint.
pub fn bench_model(desk_scale: bool, seed: u64) -> Result<Model<f32>> {
    let cfg = if desk_scale {
        ModelConfig::desk(2)
    } else {
        ModelConfig::full(2)
    };
    Model::new(&cfg, seed)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checks: Vec<LossCheck>,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(LossCheck::passed)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut v: Vec<String> = self.checks.iter().map(LossCheck::report_line).collect();
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        v.push(format!(
            "{} checks, {failed} failed, {:.1} s: {}",
            self.checks.len(),
            self.seconds,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        v
    }
}

/// Finite-difference audit of every loss on the micro configuration.
pub fn cmd_grad_check(opts: &CheckOptions) -> Result<GradCheckReport> {
    let t = Instant::now();
    let checks = run_loss_checks(opts)?;
    Ok(GradCheckReport {
        checks,
        seconds: t.elapsed().as_secs_f64(),
    })
}
