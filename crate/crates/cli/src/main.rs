use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nvcnet::checks::CheckOptions;
use nvcnet::pipeline::{
    bench_model, cmd_bench, cmd_convert, cmd_embed, cmd_eval_spoof, cmd_grad_check, cmd_reconstruct, cmd_sample,
    cmd_train, load_model, ConvertTarget, RunConfig, TrainOptions,
};

#[derive(Parser)]
#[command(name = "nvcnet", version, about = "Raw-waveform voice conversion: train, convert, embed, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TargetKind {
    /// embed a reference recording (--reference <wav>)
    Wav,
    /// load an embedding file (--reference <file>)
    Emb,
    /// draw from the unit prior
    Prior,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config; writes train.log and checkpoint.ckpt to the output directory
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// continue from a checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "BOOL")]
        desk_scale: Option<bool>,
    },
    /// Convert a source recording to a target voice
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_enum)]
        target: TargetKind,
        /// reference wav or embedding file for --target wav|emb
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// draw the reference embedding from the posterior instead of using its mean
        #[arg(long)]
        sample_posterior: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average the posterior means of reference recordings into an embedding file
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        references: Vec<PathBuf>,
    },
    /// Convert a source recording to voices drawn from the prior
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Resynthesize a recording with its own speaker embedding
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the speaker classifier and score conversions of the test split
    EvalSpoof {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Single-thread synthesis rate in kHz
    Bench {
        /// benchmark a trained model instead of a fresh one
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// fresh model size when no checkpoint is given
        #[arg(long, value_name = "BOOL", default_value_t = false)]
        desk_scale: bool,
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(3..))]
        repeats: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference audit of every loss gradient; nonzero exit on failure
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// scale one analytic gradient per loss by 1 + FACTOR to exercise the failure path
        #[arg(long, value_name = "FACTOR")]
        corrupt: Option<f64>,
    },
}

fn run(cli: Cli) -> nvcnet::Result<bool> {
    match cli.command {
        Command::Train {
            config,
            steps,
            seed,
            out,
            checkpoint,
            desk_scale,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let r = cmd_train(
                &cfg,
                &TrainOptions {
                    steps,
                    seed,
                    out_dir: out,
                    resume: checkpoint,
                    desk_scale,
                },
            )?;
            println!("steps_run={} final_step={}", r.steps_run, r.final_step);
            if let Some(last) = &r.last {
                println!("{}", last.log_line());
            }
            println!("checkpoint={}", r.checkpoint.display());
            println!("log={}", r.log.display());
        }
        Command::Convert {
            checkpoint,
            source,
            target,
            reference,
            seed,
            sample_posterior,
            out,
        } => {
            let need = |r: Option<PathBuf>| {
                r.ok_or_else(|| nvcnet::Error::Config("--reference is required for --target wav|emb".into()))
            };
            let target = match target {
                TargetKind::Wav => ConvertTarget::Wav(need(reference)?),
                TargetKind::Emb => ConvertTarget::Embedding(need(reference)?),
                TargetKind::Prior => ConvertTarget::Prior,
            };
            let r = cmd_convert(&checkpoint, &source, &target, seed, sample_posterior, &out)?;
            println!("samples={} clamped={} out={}", r.length, r.clamped, out.display());
        }
        Command::Embed {
            checkpoint,
            out,
            references,
        } => {
            let e = cmd_embed(&checkpoint, &references, &out)?;
            println!("d_spk={} references={} out={}", e.values.len(), references.len(), out.display());
        }
        Command::Sample {
            checkpoint,
            source,
            count,
            seed,
            out,
        } => {
            for p in cmd_sample(&checkpoint, &source, count, seed, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Reconstruct { checkpoint, source, out } => {
            let r = cmd_reconstruct(&checkpoint, &source, &out)?;
            println!("samples={} clamped={} out={}", r.length, r.clamped, out.display());
        }
        Command::EvalSpoof { config, checkpoint } => {
            let cfg = RunConfig::load(&config)?;
            let r = cmd_eval_spoof(&cfg, &checkpoint)?;
            println!(
                "classifier_train_accuracy={:.2} classifier_test_accuracy={:.2}",
                r.classifier.train_accuracy, r.classifier_test_accuracy
            );
            println!("conversions={} spoof_percent={:.2}", r.conversions, r.spoof_percent);
        }
        Command::Bench {
            checkpoint,
            desk_scale,
            seconds,
            repeats,
            seed,
        } => {
            let model = match checkpoint {
                Some(p) => load_model(&p)?,
                None => bench_model(desk_scale, seed)?,
            };
            for line in cmd_bench(&model, seconds, repeats as usize, seed)?.lines() {
                println!("{line}");
            }
        }
        Command::GradCheck { seed, corrupt } => {
            let r = cmd_grad_check(&CheckOptions {
                seed,
                corrupt,
                ..CheckOptions::default()
            })?;
            for line in r.lines() {
                println!("{line}");
            }
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
