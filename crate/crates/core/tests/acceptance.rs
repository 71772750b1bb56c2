//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each
//! plus a summary.
//!
//! `NVCNET_ACCEPTANCE=2,3,6` restricts the run to the listed criteria.
//! `NVCNET_ACCEPTANCE_STRICT=1` makes any failure exit nonzero.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nvcnet::augment::{shuffle_segments, AugmentConfig};
use nvcnet::autodiff::{Binding, ParamStore, Tape, Tensor};
use nvcnet::checks::CheckOptions;
use nvcnet::dsp::{log_mel, SpectrogramConfig};
use nvcnet::losses::{kl_loss, spectral_loss};
use nvcnet::model::{count_parameters, Model, ModelConfig, ResidualStack, SpeakerPosterior};
use nvcnet::pipeline::{cmd_bench, cmd_grad_check, cmd_train, spoof_conversions, DataSource, RunConfig, TrainOptions};
use nvcnet::training::{
    evaluate_spoofing, load_checkpoint, toy_dataset, train_spoof_classifier, LossLog, SpoofConfig, StepReport,
    TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-0.5f32..0.5))
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let report = cmd_grad_check(&CheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    for line in report.lines() {
        println!("    {line}");
    }
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}/{}", c.term.name(), c.precision))
        .collect();
    ensure(
        report.passed() && secs < 300.0,
        format!("{} checks, failed {:?}, {secs:.0} s (limit 300 s)", report.checks.len(), failed),
    )
}

fn c2_shapes() -> Outcome {
    let model = Model::<f32>::new(&ModelConfig::full(4), 2).map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for t in [256, 4096, 32_768] {
        let x = noise(&[1, t], t as u64);
        let c = model.content_encode(&x).map_err(|e| e.to_string())?;
        if c.shape() != [1, 4, t / 256] {
            return Err(format!("T={t}: code {:?}", c.shape()));
        }
        let z = Tensor::zeros(vec![1, model.config().d_spk]);
        let y = model.generate(&c, &z).map_err(|e| e.to_string())?;
        if y.shape() != [1, t] {
            return Err(format!("T={t}: output {:?}", y.shape()));
        }
        seen.push(format!("{t}->{:?}->{}", &c.shape()[1..], y.len()));
    }
    Ok(seen.join(" "))
}

fn c3_receptive_field() -> Outcome {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stack = ResidualStack::new(&mut store, "rf", 4, &[1, 3, 9, 27], None, &mut rng).map_err(|e| e.to_string())?;
    let (len, centre) = (401, 200);
    let tape = Tape::new();
    let bind = Binding::new(&tape, &store, false);
    let run = |x: Tensor<f64>| {
        stack
            .forward(&bind, &tape.constant(x), None)
            .map(|y| y.value().clone())
            .map_err(|e| e.to_string())
    };
    let base = run(Tensor::zeros(vec![1, 4, len]))?;
    let mut support = BTreeSet::new();
    for c in 0..4 {
        let mut imp = Tensor::zeros(vec![1, 4, len]);
        imp.data_mut()[c * len + centre] = 1.0;
        let y = run(imp)?;
        for t in 0..len {
            if (0..4).any(|o| y.data()[o * len + t] != base.data()[o * len + t]) {
                support.insert(t);
            }
        }
    }
    let (lo, hi) = (*support.first().unwrap(), *support.last().unwrap());
    ensure(
        hi - lo + 1 == 81 && support.len() == 81,
        format!("support [{lo}, {hi}], {} samples (expected 81)", support.len()),
    )
}

fn c4_parameters() -> Outcome {
    let counts = count_parameters(&ModelConfig::full(109)).map_err(|e| e.to_string())?;
    for line in counts.report().lines() {
        println!("    {line}");
    }
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/param_counts.txt");
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    let total = counts.conversion_total();
    ensure(
        (13_500_000..=16_600_000).contains(&total) && golden == counts.report(),
        format!(
            "E_c+E_s+G = {total} (reference 15.13M, band [13.5M, 16.6M]); golden file {}",
            if golden == counts.report() { "matches" } else { "DIFFERS" }
        ),
    )
}

fn c5_kl() -> Outcome {
    let d = 128;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f64;
    for _ in 0..20 {
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let sd: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
        let tape = Tape::<f64>::new();
        let post = SpeakerPosterior {
            mu: tape.constant(Tensor::new(vec![1, d], mu.clone()).unwrap()),
            logvar: tape.constant(Tensor::from_fn(vec![1, d], |i| (sd[i] * sd[i]).ln())),
        };
        let closed = kl_loss(&post).map_err(|e| e.to_string())?.item();
        // E_q[log q(z) - log p(z)] with z ~ q
        let mut acc = 0.0;
        for _ in 0..n {
            let mut lr = 0.0;
            for k in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = mu[k] + sd[k] * e;
                lr += -0.5 * e * e - sd[k].ln() + 0.5 * z * z;
            }
            acc += lr;
        }
        let mc = acc / n as f64;
        worst = worst.max((closed - mc).abs() / mc.abs());
    }
    let tape = Tape::<f64>::new();
    let unit = SpeakerPosterior {
        mu: tape.constant(Tensor::zeros(vec![1, d])),
        logvar: tape.constant(Tensor::zeros(vec![1, d])),
    };
    let at_prior = kl_loss(&unit).map_err(|e| e.to_string())?.item();
    ensure(
        worst < 0.02 && at_prior == 0.0,
        format!("max relative gap {worst:.2e} over 20 posteriors (limit 2e-2); kl(0, 1) = {at_prior}"),
    )
}

fn c6_invariances() -> Outcome {
    let x = noise(&[2, 8192], 6);
    let neg = x.map(|v| -v);
    let tape = Tape::<f32>::new();
    for cfg in [
        SpectrogramConfig::speaker(),
        SpectrogramConfig::spectral(2048),
        SpectrogramConfig::spectral(1024),
        SpectrogramConfig::spectral(512),
    ] {
        let a = log_mel(&tape.constant(x.clone()), &cfg).map_err(|e| e.to_string())?;
        let b = log_mel(&tape.constant(neg.clone()), &cfg).map_err(|e| e.to_string())?;
        if a.value() != b.value() {
            return Err(format!("log_mel(-x) != log_mel(x) at fft {}", cfg.fft_size));
        }
    }
    let model = Model::<f32>::new(&ModelConfig::desk(2), 6).map_err(|e| e.to_string())?;
    let sp = model.speaker_encode(&x).map_err(|e| e.to_string())?;
    let sn = model.speaker_encode(&neg).map_err(|e| e.to_string())?;
    if sp != sn {
        return Err("speaker_encode(-x) != speaker_encode(x)".into());
    }
    let x3 = x.clone().reshape(vec![2, 1, 8192]).unwrap();
    for w in [2048, 1024, 512] {
        let l = spectral_loss(&tape.constant(x3.clone()), &tape.constant(x3.map(|v| -v)), w)
            .map_err(|e| e.to_string())?
            .item();
        if l != 0.0 {
            return Err(format!("spectral_loss(x, -x) = {l} at window {w}"));
        }
    }
    let c = model.content_encode(&x).map_err(|e| e.to_string())?;
    let l = c.shape()[2];
    let mut worst = 0f32;
    for b in 0..2 {
        for j in 0..l {
            let n = (0..4).map(|i| c.data()[(b * 4 + i) * l + j].powi(2)).sum::<f32>().sqrt();
            worst = worst.max((n - 1.0).abs());
        }
    }
    if worst >= 1e-5 {
        return Err(format!("content column norm off by {worst:e}"));
    }
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for len in [9921, 9922, 20_000, 32_768, 70_001] {
        let v: Vec<f32> = (0..len).map(|i| i as f32).collect();
        let s = shuffle_segments(&v, &cfg, &mut rng);
        let mut a: Vec<u32> = v.iter().map(|f| f.to_bits()).collect();
        let mut b: Vec<u32> = s.iter().map(|f| f.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if s.len() != len || a != b {
            return Err(format!("shuffle_segments changed length or multiset at {len}"));
        }
    }
    Ok(format!(
        "log_mel, speaker_encode and spectral_loss sign-invariant; column norm error {worst:.1e}; shuffle preserves multiset"
    ))
}

/// Shared by criteria 7 and 8.
fn overfit_run() -> Result<(Trainer, LossLog, f64), String> {
    let data = toy_dataset(8, 32_768, 0);
    let cfg = TrainConfig {
        batch_size: 4,
        clip_length: 8192,
        steps: 2000,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&ModelConfig::desk(2), cfg).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let mut log = LossLog::default();
    for _ in 0..2000 {
        let r = trainer.train_step(&data).map_err(|e| e.to_string())?;
        if r.step % 250 == 0 {
            println!("    {}", r.log_line());
        }
        log.reports.push(r);
    }
    Ok((trainer, log, t.elapsed().as_secs_f64()))
}

fn c7_overfit(log: &LossLog, secs: f64) -> Outcome {
    let n = log.reports.len();
    let finite = log.reports.iter().all(|r| r.losses.iter().all(|(_, v)| v.is_finite()));
    let drop = |name: &str| {
        let first = log.mean(name, 0..50);
        let last = log.mean(name, n.saturating_sub(50)..n);
        (first, last, 1.0 - last / first)
    };
    let (r0, r1, rd) = drop("rec");
    let (c0, c1, cd) = drop("con");
    ensure(
        n == 2000 && finite && rd >= 0.5 && cd >= 0.3,
        format!(
            "{n} steps in {secs:.0} s; rec {r0:.4e} -> {r1:.4e} ({:.1}% drop, need 50%); con {c0:.4e} -> {c1:.4e} ({:.1}% drop, need 30%); all finite: {finite}",
            100.0 * rd,
            100.0 * cd
        ),
    )
}

fn c8_spoofing(trainer: &Trainer) -> Outcome {
    let data = toy_dataset(8, 32_768, 0);
    let (clf, report) = train_spoof_classifier(&data, &SpoofConfig::default()).map_err(|e| e.to_string())?;
    let (clips, targets) = spoof_conversions(&trainer.model, &data, &data).map_err(|e| e.to_string())?;
    let pct = evaluate_spoofing(&clips, &targets, &clf).map_err(|e| e.to_string())?;
    ensure(
        report.train_accuracy == 100.0 && pct >= 80.0,
        format!(
            "classifier train accuracy {:.1}% (need 100%); {} conversions, {pct:.1}% classified as target (need 80%)",
            report.train_accuracy,
            clips.len()
        ),
    )
}

fn c9_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig {
        data: DataSource::Synthetic {
            clips: 4,
            length: 16_384,
            seed: 9,
        },
        ..RunConfig::default()
    };
    cfg.train.batch_size = 2;
    cfg.train.clip_length = 8192;
    cfg.train.log_every = 1;
    cfg.checkpoint_every = 0;
    let run = |dir: &str, steps: u64, resume: bool| {
        let out = root.path().join(dir);
        cmd_train(
            &cfg,
            &TrainOptions {
                steps: Some(steps),
                out_dir: Some(out.clone()),
                resume: resume.then(|| out.join("checkpoint.ckpt")),
                ..TrainOptions::default()
            },
        )
        .map_err(|e| e.to_string())
    };
    let losses = |path: &Path| -> Result<Vec<Vec<(String, f64)>>, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        text.lines()
            .map(|l| StepReport::parse_line(l).map(|r| r.losses).map_err(|e| e.to_string()))
            .collect()
    };
    let a = run("a", 4, false)?;
    let b = run("b", 4, false)?;
    run("c", 2, false)?;
    let c = run("c", 4, true)?;
    let (la, lb, lc) = (losses(&a.log)?, losses(&b.log)?, losses(&c.log)?);
    let bits = |v: &Vec<Vec<(String, f64)>>| -> Vec<u64> { v.iter().flatten().map(|(_, x)| x.to_bits()).collect() };
    if la.len() != 4 || bits(&la) != bits(&lb) {
        return Err("repeated fixed-seed runs differ".into());
    }
    if bits(&la) != bits(&lc) {
        return Err("resumed run differs from the unbroken run".into());
    }
    let ca = load_checkpoint(&a.checkpoint, None).map_err(|e| e.to_string())?;
    let cc = load_checkpoint(&c.checkpoint, None).map_err(|e| e.to_string())?;
    let param_bits = |s: &nvcnet::autodiff::ParamStore<f32>| -> Vec<u32> {
        s.iter().flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    if param_bits(&ca.model.params) != param_bits(&cc.model.params) || ca.opt_d != cc.opt_d || ca.opt_g != cc.opt_g {
        return Err("final parameters or optimizer state differ after resume".into());
    }
    // save -> load -> save reproduces the file byte for byte
    let again = root.path().join("again.ckpt");
    nvcnet::training::save_checkpoint(&ca.clone().into_trainer(), &again).map_err(|e| e.to_string())?;
    let same = std::fs::read(&a.checkpoint).ok() == std::fs::read(&again).ok();
    let size = std::fs::metadata(&a.checkpoint).map_err(|e| e.to_string())?.len();
    ensure(
        same && size < 50 << 20,
        format!(
            "4-step trajectories bitwise equal across reruns and a 2+2 resume; checkpoint round trip {}; desk checkpoint {:.1} MB",
            if same { "byte-identical" } else { "DIFFERS" },
            size as f64 / (1 << 20) as f64
        ),
    )
}

fn c10_bench() -> Outcome {
    let model = Model::<f32>::new(&ModelConfig::full(109), 10).map_err(|e| e.to_string())?;
    let r = cmd_bench(&model, 1.0, 3, 10).map_err(|e| e.to_string())?;
    for line in r.lines() {
        println!("    {line}");
    }
    ensure(
        r.seconds.len() >= 3 && r.median_khz.is_finite() && r.median_khz > 0.0,
        format!(
            "full model, single core: median {:.2} kHz over {} repeats (reference 7.49 kHz CPU; no threshold)",
            r.median_khz,
            r.seconds.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn main() {
    let selected: Option<BTreeSet<u32>> = std::env::var("NVCNET_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |k: u32| selected.as_ref().is_none_or(|s| s.contains(&k));
    let names = [
        "gradient correctness",
        "shape laws",
        "receptive field",
        "parameter audit",
        "KL oracle",
        "invariance suite",
        "overfit oracle",
        "toy spoofing",
        "determinism and persistence",
        "benchmark harness",
    ];
    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();
    let mut record = |k: u32, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        println!("criterion {k} ({}) running", names[k as usize - 1]);
        let t = Instant::now();
        let o = guarded(f);
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {k} {tag} ({secs:.1} s): {detail}");
        results.push((k, o, secs));
    };
    record(1, &mut c1_gradients);
    record(2, &mut c2_shapes);
    record(3, &mut c3_receptive_field);
    record(4, &mut c4_parameters);
    record(5, &mut c5_kl);
    record(6, &mut c6_invariances);
    if wanted(7) || wanted(8) {
        println!("overfit run: desk model, 2000 steps");
        let run = catch_unwind(AssertUnwindSafe(overfit_run)).unwrap_or_else(|_| Err("panicked".into()));
        match run {
            Ok((trainer, log, secs)) => {
                record(7, &mut || c7_overfit(&log, secs));
                record(8, &mut || c8_spoofing(&trainer));
            }
            Err(e) => {
                record(7, &mut || Err(format!("training failed: {e}")));
                record(8, &mut || Err(format!("training failed: {e}")));
            }
        }
    }
    record(9, &mut c9_determinism);
    record(10, &mut c10_bench);

    println!();
    println!("acceptance summary");
    for (k, o, secs) in &results {
        let tag = if o.is_ok() { "PASS" } else { "FAIL" };
        println!("  {k:>2}. {:<28} {tag} ({secs:.0} s)", names[*k as usize - 1]);
    }
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("{} run, {failed} failed", results.len());
    if failed > 0 && std::env::var("NVCNET_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
