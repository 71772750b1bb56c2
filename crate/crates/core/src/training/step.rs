use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binding, Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{discriminator_pass, generator_pass, GeneratorBatch};
use crate::model::{standard_normal, Model, ModelConfig};
use crate::training::{make_batch, Adam, Batch, Dataset, TrainConfig};

/// Losses of one training step, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub losses: Vec<(String, f64)>,
    pub lr: f64,
    /// seconds since the trainer was created
    pub wall: f64,
}

impl StepReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.losses.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// `step=12 d_total=1.38 ... lr=0.0001 wall=3.215`
    pub fn log_line(&self) -> String {
        let mut s = format!("step={}", self.step);
        for (k, v) in &self.losses {
            let _ = write!(s, " {k}={v:.6e}");
        }
        let _ = write!(s, " lr={:e} wall={:.3}", self.lr, self.wall);
        s
    }

    /// Inverse of [`StepReport::log_line`].
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut step = None;
        let mut lr = None;
        let mut wall = None;
        let mut losses = Vec::new();
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("log field {field:?} is not key=value")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Format(format!("bad value in {field:?}")));
            match k {
                "step" => step = Some(v.parse::<u64>().map_err(|_| Error::Format(format!("bad step {v:?}")))?),
                "lr" => lr = Some(num(v)?),
                "wall" => wall = Some(num(v)?),
                _ => losses.push((k.to_string(), num(v)?)),
            }
        }
        match (step, lr, wall) {
            (Some(step), Some(lr), Some(wall)) => Ok(StepReport { step, losses, lr, wall }),
            _ => Err(Error::Format(format!("log line lacks step, lr or wall: {line:?}"))),
        }
    }
}

/// Accumulated per-step reports.
#[derive(Clone, Debug, Default)]
pub struct LossLog {
    pub reports: Vec<StepReport>,
}

impl LossLog {
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.reports.iter().filter_map(|r| r.get(name)).collect()
    }

    /// Mean of `name` over reports `range`.
    pub fn mean(&self, name: &str, range: std::ops::Range<usize>) -> f64 {
        let s = self.series(name);
        let part = &s[range.start.min(s.len())..range.end.min(s.len())];
        part.iter().sum::<f64>() / part.len().max(1) as f64
    }
}

fn check_finite(step: u64, losses: &[(String, f64)]) -> Result<()> {
    let bad: Vec<String> = losses
        .iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            detail: bad.join(" "),
        })
    }
}

/// The model, one Adam per side, and the step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub opt_d: Adam<f32>,
    pub opt_g: Adam<f32>,
    pub step: u64,
    started: Instant,
}

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::<f32>::new(model_config, config.seed)?;
        Ok(Self::from_parts(model, config, None))
    }

    /// Resume from given parts; fresh optimizers unless provided.
    pub fn from_parts(model: Model<f32>, config: TrainConfig, opts: Option<(Adam<f32>, Adam<f32>, u64)>) -> Self {
        let (opt_d, opt_g, step) = opts.unwrap_or_else(|| {
            (
                Adam::new(&model.params, model.nets.discriminator_params(), config.adam()),
                Adam::new(&model.params, model.nets.g_side_params(), config.adam()),
                0,
            )
        });
        Trainer {
            model,
            config,
            opt_d,
            opt_g,
            step,
            started: Instant::now(),
        }
    }

    /// Random stream of step `step`: independent of history, so a resumed
    /// run draws exactly what an uninterrupted one would.
    pub fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        rng
    }

    /// Batch and noise for step `self.step`.
    pub fn draw(&self, dataset: &Dataset) -> Result<(Batch, Tensor<f32>)> {
        let mut rng = self.step_rng(self.step);
        let batch = make_batch(dataset, &self.config, &mut rng)?;
        let eps = standard_normal(&[batch.len(), self.model.config().d_spk], &mut rng);
        Ok((batch, eps))
    }

    /// Draw a batch and run one D then one G update.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<StepReport> {
        let (batch, eps) = self.draw(dataset)?;
        self.step_on(&batch.generator_batch(eps))
    }

    /// One D update on detached conversions, then one E_c/E_s/G update
    /// against the updated, frozen discriminator.
    pub fn step_on(&mut self, batch: &GeneratorBatch<f32>) -> Result<StepReport> {
        let mut losses = self.d_step(batch)?;
        losses.extend(self.g_step(batch)?);
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            losses,
            lr: self.opt_g.config.lr,
            wall: self.started.elapsed().as_secs_f64(),
        })
    }

    /// `G(E_c(x), z[perm])` without gradients, `[B, T]`.
    pub fn conversions(&self, batch: &GeneratorBatch<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let g = Binding::new(&tape, &self.model.params, false);
        let nets = &self.model.nets;
        let code = nets.content.forward(&g, &tape.constant(batch.source.clone()))?;
        let post = nets.speaker.forward(&g, &tape.constant(batch.speaker_view.clone()))?;
        let z = post.sample_with(&batch.eps)?.gather_batch(&batch.perm)?;
        let y = nets.generator.forward(&g, &code, &z)?;
        let (b, t) = (y.shape()[0], y.shape()[2]);
        y.value().clone().reshape(vec![b, t])
    }

    /// Discriminator update only.
    pub fn d_step(&mut self, batch: &GeneratorBatch<f32>) -> Result<Vec<(String, f64)>> {
        let fakes = self.conversions(batch)?;
        let (grads, losses) = {
            let tape = Tape::new();
            let d = Binding::new(&tape, &self.model.params, true);
            let out = discriminator_pass(
                &self.model.nets,
                &d,
                &tape.constant(batch.source.clone()),
                &batch.speakers,
                &tape.constant(fakes),
                &batch.converted_speakers(),
            )?;
            let mut losses = vec![("d_total".to_string(), out.total.item() as f64)];
            for (k, s) in out.per_scale.iter().enumerate() {
                losses.push((format!("d_scale{k}"), s.item() as f64));
            }
            check_finite(self.step + 1, &losses)?;
            (tape.backward(&out.total)?, losses)
        };
        self.opt_d.step(&mut self.model.params, &grads)?;
        Ok(losses)
    }

    /// Encoder/generator update only; the discriminator is frozen.
    pub fn g_step(&mut self, batch: &GeneratorBatch<f32>) -> Result<Vec<(String, f64)>> {
        let (grads, losses) = {
            let tape = Tape::new();
            let g = Binding::new(&tape, &self.model.params, true);
            let pass = generator_pass(&self.model.nets, &g, &g.frozen(), batch, &self.config.loss)?;
            let losses = pass.losses.values();
            check_finite(self.step + 1, &losses)?;
            (tape.backward(&pass.losses.total)?, losses)
        };
        self.opt_g.step(&mut self.model.params, &grads)?;
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;
    use crate::training::toy_dataset;

    fn micro_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            clip_length: 8192,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn snapshot(t: &Trainer, ids: &[ParamId]) -> Vec<Vec<f32>> {
        ids.iter().map(|&id| t.model.params.value(id).data().to_vec()).collect()
    }

    #[test]
    fn updates_stay_on_their_side() {
        let data = toy_dataset(4, 8192, 0);
        let mut t = Trainer::new(&ModelConfig::micro(2), micro_config()).unwrap();
        let d_ids = t.model.nets.discriminator_params();
        let g_ids = t.model.nets.g_side_params();
        let (batch, eps) = t.draw(&data).unwrap();
        let gb = batch.generator_batch(eps);

        let (d0, g0) = (snapshot(&t, &d_ids), snapshot(&t, &g_ids));
        t.d_step(&gb).unwrap();
        let (d1, g1) = (snapshot(&t, &d_ids), snapshot(&t, &g_ids));
        assert_eq!(g0, g1);
        assert_ne!(d0, d1);

        t.g_step(&gb).unwrap();
        let (d2, g2) = (snapshot(&t, &d_ids), snapshot(&t, &g_ids));
        assert_eq!(d1, d2);
        assert_ne!(g1, g2);
    }

    #[test]
    fn report_lists_every_loss() {
        let data = toy_dataset(4, 8192, 1);
        let mut t = Trainer::new(&ModelConfig::micro(2), micro_config()).unwrap();
        let r = t.train_step(&data).unwrap();
        let names: Vec<&str> = r.losses.iter().map(|(k, _)| k.as_str()).collect();
        for want in ["d_total", "d_scale0", "d_scale2", "g_total", "g_adv", "fm", "rec", "con", "kl", "spec0", "spec2"] {
            assert!(names.contains(&want), "{want} missing from {names:?}");
        }
        assert_eq!(r.step, 1);
        let parsed = StepReport::parse_line(&r.log_line()).unwrap();
        assert_eq!(parsed.step, 1);
        assert_eq!(parsed.losses.len(), r.losses.len());
        for ((a, x), (b, y)) in parsed.losses.iter().zip(&r.losses) {
            assert_eq!(a, b);
            assert!((x - y).abs() <= 1e-6 * y.abs());
        }
        assert!(StepReport::parse_line("step=1 rec").is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let data = toy_dataset(4, 8192, 2);
        let mut t = Trainer::new(&ModelConfig::micro(2), micro_config()).unwrap();
        let (batch, eps) = t.draw(&data).unwrap();
        let mut gb = batch.generator_batch(eps);
        gb.source.data_mut()[5] = f32::NAN;
        match t.step_on(&gb) {
            Err(Error::NonFinite { step, detail }) => {
                assert_eq!(step, 1);
                assert!(detail.contains("d_total"), "{detail}");
            }
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let data = toy_dataset(4, 8192, 3);
        let run = || {
            let mut t = Trainer::new(&ModelConfig::micro(2), micro_config()).unwrap();
            let losses: Vec<Vec<(String, f64)>> = (0..3).map(|_| t.train_step(&data).unwrap().losses).collect();
            (losses, t.model.params.cast::<f64>())
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        for ((_, _, a), (_, _, b)) in pa.iter().zip(pb.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn frozen_batch_overfits() {
        let data = toy_dataset(2, 8192, 4);
        let mut t = Trainer::new(&ModelConfig::micro(2), micro_config()).unwrap();
        let (batch, eps) = t.draw(&data).unwrap();
        let gb = batch.generator_batch(eps);
        let mut rec = Vec::new();
        for _ in 0..200 {
            rec.push(t.step_on(&gb).unwrap().get("rec").unwrap());
        }
        let first = rec[..10].iter().sum::<f64>() / 10.0;
        let last = rec[190..].iter().sum::<f64>() / 10.0;
        assert!(last <= 0.5 * first, "rec {first} -> {last}");
    }
}
