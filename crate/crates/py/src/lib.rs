//! Python module `nvcnet_py`. Waveforms cross the boundary as lists of floats.

use std::collections::HashMap;
use std::path::PathBuf;

use nvcnet::autodiff::Tensor;
use nvcnet::losses::kl_divergence;
use nvcnet::model::{count_parameters, Model, ModelConfig, HOP};
use nvcnet::pipeline::{
    cmd_bench, cmd_convert, cmd_embed, convert_clip, crop_to_hop, load_model, reference_embedding, ConvertTarget,
    RunConfig,
};
use nvcnet::training::{load_checkpoint, save_checkpoint, Dataset, Trainer};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: nvcnet::Error) -> PyErr {
    match e {
        nvcnet::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn preset(name: &str, n_speakers: usize) -> PyResult<ModelConfig> {
    match name {
        "full" => Ok(ModelConfig::full(n_speakers)),
        "desk" => Ok(ModelConfig::desk(n_speakers)),
        "micro" => Ok(ModelConfig::micro(n_speakers)),
        _ => Err(PyValueError::new_err(format!("unknown preset {name:?}; use full, desk or micro"))),
    }
}

fn row(x: Vec<f32>) -> PyResult<Tensor<f32>> {
    Tensor::new(vec![1, x.len()], x).map_err(err)
}

/// Content encoder, speaker encoder and generator with their weights.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model<f32>,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized model from a preset ("full", "desk" or "micro").
    #[new]
    #[pyo3(signature = (preset_name = "desk", n_speakers = 2, seed = 0))]
    fn new(preset_name: &str, n_speakers: usize, seed: u64) -> PyResult<Self> {
        let cfg = preset(preset_name, n_speakers)?;
        Ok(PyModel {
            inner: Model::new(&cfg, seed).map_err(err)?,
        })
    }

    /// Model stored in a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(&path).map_err(err)?,
        })
    }

    #[getter]
    fn d_spk(&self) -> usize {
        self.inner.config().d_spk
    }

    #[getter]
    fn n_speakers(&self) -> usize {
        self.inner.config().n_speakers
    }

    /// Content code as `d_content` rows of `len / 256` values.
    fn content_encode(&self, samples: Vec<f32>) -> PyResult<Vec<Vec<f32>>> {
        let c = self.inner.content_encode(&row(samples)?).map_err(err)?;
        let l = c.shape()[2];
        Ok(c.data().chunks(l).map(<[f32]>::to_vec).collect())
    }

    /// Posterior `(mu, sigma)` of the speaker embedding.
    fn speaker_encode(&self, samples: Vec<f32>) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let (mu, sigma) = self.inner.speaker_encode(&row(samples)?).map_err(err)?;
        Ok((mu.into_data(), sigma.into_data()))
    }

    /// Posterior mean of a recording of any length, cropped to a multiple of 256.
    fn embed(&self, samples: Vec<f32>) -> PyResult<Vec<f32>> {
        let clip = crop_to_hop(&samples).map_err(err)?;
        reference_embedding(&self.inner, &clip, None).map_err(err)
    }

    /// Waveform from a content code (rows as returned by `content_encode`) and an embedding.
    fn generate(&self, code: Vec<Vec<f32>>, z: Vec<f32>) -> PyResult<Vec<f32>> {
        let d = code.len();
        let l = code.first().map_or(0, Vec::len);
        if code.iter().any(|r| r.len() != l) {
            return Err(PyValueError::new_err("content code rows differ in length"));
        }
        let c = Tensor::new(vec![1, d, l], code.concat()).map_err(err)?;
        let y = self.inner.generate(&c, &row(z)?).map_err(err)?;
        Ok(y.into_data())
    }

    /// Source waveform rendered with embedding `z`; the source is cropped to a multiple of 256.
    fn convert(&self, source: Vec<f32>, z: Vec<f32>) -> PyResult<Vec<f32>> {
        let src = crop_to_hop(&source).map_err(err)?;
        convert_clip(&self.inner, &src, &z).map_err(err)
    }

    /// Trainable scalars per network.
    fn param_counts(&self) -> HashMap<String, usize> {
        counts_dict(&self.inner.nets.counts(&self.inner.params))
    }

    /// Median synthesis rate in kHz over `repeats` runs.
    #[pyo3(signature = (seconds = 1.0, repeats = 3, seed = 0))]
    fn bench(&self, seconds: f64, repeats: usize, seed: u64) -> PyResult<f64> {
        Ok(cmd_bench(&self.inner, seconds, repeats, seed).map_err(err)?.median_khz)
    }
}

fn counts_dict(c: &nvcnet::model::ParamCounts) -> HashMap<String, usize> {
    c.report()
        .lines()
        .filter_map(|l| {
            let (k, v) = l.split_once(' ')?;
            Some((k.to_string(), v.parse().ok()?))
        })
        .collect()
}

/// Training state bound to the data of a run config.
#[pyclass(name = "Trainer")]
struct PyTrainer {
    inner: Trainer,
    data: Dataset,
}

#[pymethods]
impl PyTrainer {
    /// From TOML run-config text; `checkpoint` resumes a saved run.
    #[new]
    #[pyo3(signature = (config_toml = "", checkpoint = None))]
    fn new(config_toml: &str, checkpoint: Option<PathBuf>) -> PyResult<Self> {
        let cfg = RunConfig::from_toml(config_toml).map_err(err)?;
        let (data, _) = cfg.load_data().map_err(err)?;
        let model_cfg = cfg.model_config(data.n_speakers).map_err(err)?;
        let inner = match checkpoint {
            Some(p) => load_checkpoint(&p, Some(&model_cfg)).map_err(err)?.into_trainer(),
            None => Trainer::new(&model_cfg, cfg.train).map_err(err)?,
        };
        Ok(PyTrainer { inner, data })
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.step
    }

    /// One discriminator and one encoder/generator update; returns the losses.
    fn step(&mut self) -> PyResult<HashMap<String, f64>> {
        let r = self.inner.train_step(&self.data).map_err(err)?;
        Ok(r.losses.into_iter().collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(err)
    }

    /// Copy of the current model.
    fn model(&self) -> PyModel {
        PyModel {
            inner: self.inner.model.clone(),
        }
    }
}

#[pyfunction]
fn load_wav(path: PathBuf) -> PyResult<Vec<f32>> {
    Ok(nvcnet::pipeline::load_wav(&path).map_err(err)?.samples)
}

/// Write 16-bit 22,050 Hz mono; returns how many samples were clamped.
#[pyfunction]
fn save_wav(samples: Vec<f32>, path: PathBuf) -> PyResult<usize> {
    nvcnet::pipeline::save_wav(&samples, &path).map_err(err)
}

/// `KL(N(mu, sigma^2) || N(0, I))` summed over dimensions.
#[pyfunction]
fn kl(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
    kl_divergence(&mu, &sigma).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (preset_name = "full", n_speakers = 109))]
fn parameter_counts(preset_name: &str, n_speakers: usize) -> PyResult<HashMap<String, usize>> {
    Ok(counts_dict(&count_parameters(&preset(preset_name, n_speakers)?).map_err(err)?))
}

/// Convert a file. `target` is "wav" or "emb" with `reference`, or "prior".
#[pyfunction]
#[pyo3(signature = (checkpoint, source, out, target = "prior", reference = None, seed = 0, sample_posterior = false))]
fn convert_file(
    checkpoint: PathBuf,
    source: PathBuf,
    out: PathBuf,
    target: &str,
    reference: Option<PathBuf>,
    seed: u64,
    sample_posterior: bool,
) -> PyResult<usize> {
    let need = || reference.clone().ok_or_else(|| PyValueError::new_err("reference is required for this target"));
    let target = match target {
        "wav" => ConvertTarget::Wav(need()?),
        "emb" => ConvertTarget::Embedding(need()?),
        "prior" => ConvertTarget::Prior,
        t => return Err(PyValueError::new_err(format!("unknown target {t:?}"))),
    };
    Ok(cmd_convert(&checkpoint, &source, &target, seed, sample_posterior, &out)
        .map_err(err)?
        .length)
}

/// Average the references' posterior means into an embedding file.
#[pyfunction]
fn embed_files(checkpoint: PathBuf, references: Vec<PathBuf>, out: PathBuf) -> PyResult<Vec<f32>> {
    Ok(cmd_embed(&checkpoint, &references, &out).map_err(err)?.values)
}

#[pymodule]
fn nvcnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HOP", HOP)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(save_wav, m)?)?;
    m.add_function(wrap_pyfunction!(kl, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_counts, m)?)?;
    m.add_function(wrap_pyfunction!(convert_file, m)?)?;
    m.add_function(wrap_pyfunction!(embed_files, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_counts() {
        assert!(preset("desk", 2).is_ok());
        assert!(preset("huge", 2).is_err());
        let counts = parameter_counts("full", 109).unwrap();
        assert_eq!(counts["conversion_total"], 14_041_474);
        assert_eq!(counts.len(), 9);
    }

    #[test]
    fn model_round_trip_shapes() {
        let m = PyModel::new("micro", 2, 0).unwrap();
        let x: Vec<f32> = (0..512).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
        let code = m.content_encode(x.clone()).unwrap();
        assert_eq!((code.len(), code[0].len()), (4, 2));
        let y = m.generate(code, vec![0.0; m.d_spk()]).unwrap();
        assert_eq!(y.len(), 512);
        assert_eq!(m.convert(x[..600.min(x.len())].to_vec(), vec![0.0; m.d_spk()]).unwrap().len(), 512);
    }
}
