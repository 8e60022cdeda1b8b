//! `NCI1` checkpoint files.
//!
//! Layout, little-endian: magic `NCI1`, u32 version, u32-prefixed JSON
//! config blob, u32 tensor count and parameter records, u64 optimizer step,
//! moment records `m/<name>` and `v/<name>`, u64 epoch, u32-prefixed JSON
//! RNG blob. A tensor record is u16 name length, name, u8 rank, u32 dims and
//! f32 data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::bptt::{EpochLoss, RngState, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::snn::{ParamTensor, Sae, SaeConfig, SaeParams};

const MAGIC: &[u8; 4] = b"NCI1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ConfigBlob {
    sae: SaeConfig,
    train: TrainConfig,
    preprocess_digest: Option<String>,
    history: Vec<EpochLoss>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub sae_config: SaeConfig,
    pub train_config: TrainConfig,
    /// Digest of the preprocessing that produced the training tensors.
    pub preprocess_digest: Option<String>,
    pub history: Vec<EpochLoss>,
    pub params: SaeParams<f32>,
    pub adam: Adam,
    pub epoch: u64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn from_trainer(tr: &Trainer, preprocess_digest: Option<String>) -> Self {
        Self {
            sae_config: tr.network().config().clone(),
            train_config: tr.config().clone(),
            preprocess_digest,
            history: tr.history().to_vec(),
            params: tr.network().params().clone(),
            adam: tr.adam().clone(),
            epoch: tr.epoch(),
            rng: tr.rng_state(),
        }
    }

    pub fn network(&self) -> Result<Sae<f32>> {
        Sae::new(self.sae_config.clone(), self.params.clone())
    }

    /// Continues training, possibly with a changed epoch budget.
    pub fn into_trainer(self, cfg: TrainConfig) -> Result<Trainer> {
        let sae = Sae::new(self.sae_config, self.params)?;
        Trainer::resume(sae, cfg, self.adam, self.rng, self.epoch, self.history)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let blob = ConfigBlob {
            sae: self.sae_config.clone(),
            train: self.train_config.clone(),
            preprocess_digest: self.preprocess_digest.clone(),
            history: self.history.clone(),
        };
        put_blob(&mut out, &serde_json::to_vec(&blob).map_err(|e| Error::format(e.to_string()))?)?;
        out.extend_from_slice(&(self.params.tensors.len() as u32).to_le_bytes());
        for t in &self.params.tensors {
            put_tensor(&mut out, &t.name, &t.shape, &t.data)?;
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for (prefix, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for (t, m) in self.params.tensors.iter().zip(moments) {
                put_tensor(&mut out, &format!("{prefix}/{}", t.name), &t.shape, m)?;
            }
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_blob(&mut out, &serde_json::to_vec(&self.rng).map_err(|e| Error::format(e.to_string()))?)?;
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let blob: ConfigBlob = serde_json::from_slice(r.blob()?).map_err(|e| Error::format(format!("config blob: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let (name, shape, data) = r.tensor()?;
            tensors.push(ParamTensor { name, shape, data });
        }
        let params = SaeParams { tensors };
        let layers = blob.sae.layers()?;
        params.check_against(&layers)?;
        let step = r.u64()?;
        let mut moments = [Vec::new(), Vec::new()];
        for (prefix, dst) in ["m", "v"].iter().zip(moments.iter_mut()) {
            for t in &params.tensors {
                let (name, shape, data) = r.tensor()?;
                if name != format!("{prefix}/{}", t.name) || shape != t.shape {
                    return Err(Error::shape(format!("optimizer record {name} does not match {}", t.name)));
                }
                dst.push(data);
            }
        }
        let epoch = r.u64()?;
        let rng: RngState = serde_json::from_slice(r.blob()?).map_err(|e| Error::format(format!("rng blob: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after checkpoint"));
        }
        let [m, v] = moments;
        let adam = Adam { config: AdamConfig { lr: blob.train.learning_rate, ..AdamConfig::default() }, step, m, v };
        Ok(Self {
            sae_config: blob.sae,
            train_config: blob.train,
            preprocess_digest: blob.preprocess_digest,
            history: blob.history,
            params,
            adam,
            epoch,
            rng,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.encode()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::decode(&bytes)
}

/// Loads a checkpoint and checks that it was built for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &SaeConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let want = SaeParams::<f32>::zeros_for(&expected.layers()?);
    ckpt.params.check_against(&expected.layers()?).map_err(|_| {
        Error::shape(format!(
            "checkpoint network ({} parameters) does not match the configured network ({} parameters)",
            ckpt.params.len(),
            want.len()
        ))
    })?;
    Ok(ckpt)
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) -> Result<()> {
    let n = u32::try_from(blob.len()).map_err(|_| Error::format("blob too large"))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(blob);
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    let n = u16::try_from(name.len()).map_err(|_| Error::format("tensor name too long"))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(u8::try_from(shape.len()).map_err(|_| Error::format("tensor rank too large"))?);
    for &d in shape {
        out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::format("tensor dim too large"))?.to_le_bytes());
    }
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::shape(format!("tensor {name} data does not fill its shape")));
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::format("truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let n = self.u16()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("tensor name is not UTF-8"))?;
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format("tensor too large"))?;
        let bytes = self.take(len.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, shape, data))
    }
}
