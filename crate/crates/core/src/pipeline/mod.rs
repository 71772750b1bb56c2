//! Audio files, manifests, run configs, embedding files and the commands
//! built on them.

mod commands;
mod config;
mod embedding;
mod manifest;
mod wav;

pub use commands::{
    bench_model, cmd_bench, cmd_convert, cmd_embed, cmd_eval_spoof, cmd_grad_check, cmd_reconstruct, cmd_sample,
    cmd_train, convert_clip, crop_to_hop, load_model, reference_embedding, resolve_target, spoof_conversions,
    MIN_REFERENCE_SAMPLES,
    BenchReport, ConvertOutcome, ConvertTarget, GradCheckReport, SpoofEvaluation, TrainOptions, TrainOutcome,
    REFERENCE_CPU_KHZ,
};
pub use config::{DataSource, RunConfig};
pub use embedding::{config_digest, SpeakerEmbedding, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use wav::{load_wav, save_wav, AudioClip, SAMPLE_RATE};
