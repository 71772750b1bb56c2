use std::path::Path;

use nvcnet::pipeline::{
    cmd_eval_spoof, cmd_train, save_wav, DatasetManifest, RunConfig, Split, TrainOptions,
};
use nvcnet::training::toy_dataset;
use nvcnet::Error;

/// Two toy speakers written as wav files with a manifest and a run config
/// next to them, paths relative to the config.
fn corpus(dir: &Path) -> std::path::PathBuf {
    let data = toy_dataset(6, 16_384, 21);
    std::fs::create_dir(dir.join("wavs")).unwrap();
    let mut manifest = String::from("# path\tspeaker\tsplit\n");
    for (i, u) in data.utterances.iter().enumerate() {
        let name = format!("wavs/u{i}.wav");
        save_wav(&u.samples, &dir.join(&name)).unwrap();
        let split = if i < 4 { "train" } else { "test" };
        manifest.push_str(&format!("{name}\tspk{}\t{split}\n", u.speaker));
    }
    std::fs::write(dir.join("data.tsv"), manifest).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "out_dir = \"out\"\ncheckpoint_every = 1\n\
         [data]\nkind = \"manifest\"\npath = \"data.tsv\"\n\
         [train]\nbatch_size = 2\nclip_length = 8192\nsteps = 2\nlog_every = 1\n\
         [spoof]\nepochs = 2\nbase_channels = 2\nclip_length = 8192\n",
    )
    .unwrap();
    cfg
}

#[test]
fn manifest_run_trains_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = corpus(dir.path());
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let m = DatasetManifest::load(&dir.path().join("data.tsv")).unwrap();
    assert_eq!(m.speakers, vec!["spk0".to_string(), "spk1".to_string()]);
    assert_eq!(m.split(Split::Test).count(), 2);

    let r = cmd_train(&cfg, &TrainOptions::default()).unwrap();
    assert_eq!(r.final_step, 2);
    assert_eq!(r.checkpoint, dir.path().join("out/checkpoint.ckpt"));
    let log = std::fs::read_to_string(&r.log).unwrap();
    assert_eq!(log.lines().count(), 2);

    let eval = cmd_eval_spoof(&cfg, &r.checkpoint).unwrap();
    // two held-out utterances, one per speaker, each converted to the other
    assert_eq!(eval.conversions, 2);
    assert!((0.0..=100.0).contains(&eval.spoof_percent));
    assert_eq!(eval.classifier.epoch_loss.len(), 2);
}

#[test]
fn invalid_inputs_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = corpus(dir.path());
    let mut cfg = RunConfig::load(&cfg_path).unwrap();

    // a manifest without a test split
    let text = std::fs::read_to_string(dir.path().join("data.tsv")).unwrap().replace("\ttest", "\ttrain");
    std::fs::write(dir.path().join("data.tsv"), text).unwrap();
    assert!(matches!(cmd_train(&cfg, &TrainOptions::default()), Err(Error::Data(_))));
    assert!(!dir.path().join("out").exists());

    cfg.train.clip_length = 8000;
    assert!(matches!(cmd_train(&cfg, &TrainOptions::default()), Err(Error::Config(_))));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(cfg.out_dir.starts_with(&root), "{}", cfg.out_dir.display());
            n += 1;
        }
    }
    assert!(n >= 2);
}

#[test]
fn short_references_wrap_to_the_encoder_minimum() {
    use nvcnet::model::{Model, ModelConfig};
    use nvcnet::pipeline::{reference_embedding, MIN_REFERENCE_SAMPLES};
    let model = Model::<f32>::new(&ModelConfig::desk(2), 0).unwrap();
    let clip: Vec<f32> = (0..1500).map(|i| (i as f32 * 0.07).sin() * 0.3).collect();
    let wrapped: Vec<f32> = (0..MIN_REFERENCE_SAMPLES).map(|i| clip[i % clip.len()]).collect();
    let a = reference_embedding(&model, &clip, None).unwrap();
    let b = reference_embedding(&model, &wrapped, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 128);
    assert!(matches!(reference_embedding(&model, &clip[..1000], None), Err(Error::Size(_))));
}
