//! Checkpoint files: an 8-byte little-endian header length, a JSON header,
//! then little-endian `f32` blobs in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::{Model, ModelConfig, ParamStore};

const FORMAT: &str = "cortexflow-checkpoint";
const VERSION: u32 = 1;

/// AdamW moments, one buffer per parameter tensor in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn zeros(params: &ParamStore) -> Self {
        let z: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            step: 0,
            m: z.clone(),
            v: z,
        }
    }

    /// Rounds both moment buffers to the nearest `f32`, the precision they
    /// are stored at.
    pub fn round_to_f32(&mut self) {
        for b in self.m.iter_mut().chain(self.v.iter_mut()) {
            super::params::round_f32(b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    /// Free-form training state (schedule position, best validation, ...).
    pub state: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            config: model.config.clone(),
            iteration: 0,
            params: model.params.clone(),
            optimizer: None,
            state: serde_json::Value::Null,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        Model::with_params(self.config, self.params)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: ModelConfig,
    iteration: u64,
    tensors: Vec<TensorEntry>,
    optimizer_step: Option<u64>,
    #[serde(default)]
    state: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        model: ck.config.clone(),
        iteration: ck.iteration,
        tensors: ck
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
        optimizer_step: ck.optimizer.as_ref().map(|o| o.step),
        state: ck.state.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * ck.params.n_scalars() * 3);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut put = |data: &[f64]| {
        for &x in data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    for t in ck.params.tensors() {
        put(&t.data);
    }
    if let Some(o) = &ck.optimizer {
        if o.m.len() != ck.params.len() || o.v.len() != ck.params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        for m in &o.m {
            put(m);
        }
        for v in &o.v {
            put(v);
        }
    }
    // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        return Err(bad("file too short for a header".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    header.model.validate()?;
    let mut blobs = &bytes[8 + hlen..];
    let mut take = |n: usize, what: &str| -> Result<Vec<f64>> {
        if blobs.len() < 4 * n {
            return Err(bad(format!("truncated data for {what}")));
        }
        let (head, rest) = blobs.split_at(4 * n);
        blobs = rest;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    };
    let mut params = ParamStore::new();
    for e in &header.tensors {
        let n = e.shape.iter().product();
        let data = take(n, &e.name)?;
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    let optimizer = match header.optimizer_step {
        Some(step) => {
            let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
            let m = sizes.iter().map(|&n| take(n, "first moments")).collect::<Result<_>>()?;
            let v = sizes.iter().map(|&n| take(n, "second moments")).collect::<Result<_>>()?;
            Some(OptimizerState { step, m, v })
        }
        None => None,
    };
    if !blobs.is_empty() {
        return Err(bad(format!("{} trailing bytes", blobs.len())));
    }
    // Shapes are validated against the architecture here, not at use.
    super::check_param_shapes(&header.model, &params)?;
    Ok(Checkpoint {
        config: header.model,
        iteration: header.iteration,
        params,
        optimizer,
        state: header.state,
    })
}
