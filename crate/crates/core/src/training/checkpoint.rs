//! Binary checkpoint: magic, version, a JSON header (configs, step, tensor
//! table, SHA-256 of the body), then little-endian `f32` data for the
//! parameters and both optimizers' moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::training::{Adam, AdamConfig, TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NVCNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    tensors: Vec<(String, Vec<usize>)>,
    adam_d: (AdamConfig, u64),
    adam_g: (AdamConfig, u64),
    body_sha256: String,
}

/// Restored training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub train: TrainConfig,
    pub opt_d: Adam<f32>,
    pub opt_g: Adam<f32>,
    pub step: u64,
}

impl Checkpoint {
    pub fn into_trainer(self) -> Trainer {
        Trainer::from_parts(self.model, self.train, Some((self.opt_d, self.opt_g, self.step)))
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            model: t.model.clone(),
            train: t.config.clone(),
            opt_d: t.opt_d.clone(),
            opt_g: t.opt_g.clone(),
            step: t.step,
        }
    }
}

fn push_tensor(body: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        body.extend_from_slice(&v.to_le_bytes());
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    let params = &t.model.params;
    let mut body = Vec::new();
    for (_, _, v) in params.iter() {
        push_tensor(&mut body, v);
    }
    for opt in [&t.opt_d, &t.opt_g] {
        for k in 0..opt.ids.len() {
            push_tensor(&mut body, &opt.m[k]);
            push_tensor(&mut body, &opt.v[k]);
        }
    }
    let header = Header {
        model: t.model.config().clone(),
        train: t.config.clone(),
        step: t.step,
        tensors: params.iter().map(|(_, n, v)| (n.to_string(), v.shape().to_vec())).collect(),
        adam_d: (t.opt_d.config, t.opt_d.t),
        adam_g: (t.opt_g.config, t.opt_g.t),
        body_sha256: hex(&Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(body.len() + json.len() + 20);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Tensor::new(shape.to_vec(), data)
    }
}

/// Load a checkpoint; when `expected` is given, its architecture must match
/// the stored one exactly.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Incompatible(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let body = &bytes[r.pos..];
    if hex(&Sha256::digest(body)) != header.body_sha256 {
        return Err(Error::Format(format!("{}: checksum mismatch", path.display())));
    }
    if let Some(want) = expected {
        if want != &header.model {
            return Err(Error::Incompatible(format!(
                "checkpoint holds {:?}, expected {:?}",
                header.model, want
            )));
        }
    }
    header.model.validate()?;
    let mut model = Model::<f32>::new(&header.model, 0)?;
    let layout: Vec<(String, Vec<usize>)> =
        model.params.iter().map(|(_, n, v)| (n.to_string(), v.shape().to_vec())).collect();
    if layout != header.tensors {
        return Err(Error::Incompatible(
            "stored tensors do not match the architecture of the stored config".into(),
        ));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for (id, (_, shape)) in ids.into_iter().zip(&header.tensors) {
        let t = r.tensor(shape)?;
        model.params.set(id, t)?;
    }
    let mut restore = |ids: Vec<_>, (config, t): (AdamConfig, u64), store: &ParamStore<f32>| -> Result<Adam<f32>> {
        let mut opt = Adam::new(store, ids, config);
        opt.t = t;
        for k in 0..opt.ids.len() {
            let shape = store.value(opt.ids[k]).shape().to_vec();
            opt.m[k] = r.tensor(&shape)?;
            opt.v[k] = r.tensor(&shape)?;
        }
        Ok(opt)
    };
    let opt_d = restore(model.nets.discriminator_params(), header.adam_d, &model.params)?;
    let opt_g = restore(model.nets.g_side_params(), header.adam_g, &model.params)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint body".into()));
    }
    Ok(Checkpoint {
        model,
        train: header.train,
        opt_d,
        opt_g,
        step: header.step,
    })
}
