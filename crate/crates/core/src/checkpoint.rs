//! Binary checkpoints.
//!
//! Little-endian layout: magic `ARSG`, `u32` version, `u32` tensor count,
//! then per tensor a `u16` name length, the UTF-8 name, a `u8` rank, `u32`
//! dims and `f32` data; finally a `u32`-length-prefixed JSON blob with the
//! configuration, vocabulary, update counter and RNG state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::Tensor;
use crate::train::{Adam, TrainConfig, Trainer};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"ARSG";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: ModelConfig,
    vocab: Vocabulary,
    train: Option<TrainConfig>,
    update: u64,
    rng: Option<ChaCha8Rng>,
}

/// Optimizer and sampling state saved alongside the model.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self { model: model.clone(), train: None }
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            model: t.model.clone(),
            train: Some(TrainState { cfg: t.cfg.clone(), adam: t.adam.clone(), rng: t.rng.clone() }),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let st = self.train.ok_or_else(|| Error::config("checkpoint has no training state"))?;
        Trainer::resume(self.model, st.cfg, st.adam, st.rng)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let names = self.model.params.names();
        let mut tensors: Vec<(String, Tensor)> = names.iter().cloned().zip(self.model.params.leaves()).collect();
        if let Some(st) = &self.train {
            for (n, m) in names.iter().zip(&st.adam.m) {
                tensors.push((format!("adam.m.{n}"), m.clone()));
            }
            for (n, v) in names.iter().zip(&st.adam.v) {
                tensors.push((format!("adam.v.{n}"), v.clone()));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(tensors.len(), "tensor count")?.to_le_bytes());
        for (name, t) in &tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name {name} too long")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.dims().len()).map_err(|_| Error::Format(format!("tensor {name} rank")))?;
            out.push(rank);
            for &d in t.dims() {
                out.extend_from_slice(&u32_of(d, name)?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let meta = Meta {
            model: self.model.config.clone(),
            vocab: self.model.vocab.clone(),
            train: self.train.as_ref().map(|s| s.cfg.clone()),
            update: self.train.as_ref().map_or(0, |s| s.adam.t),
            rng: self.train.as_ref().map(|s| s.rng.clone()),
        };
        let json = serde_json::to_vec(&meta)?;
        out.extend_from_slice(&u32_of(json.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Integrity("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Integrity(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Integrity(format!("duplicate tensor {name}")));
            }
        }
        let len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Integrity(format!("checkpoint metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut model = Model::new(meta.model, meta.vocab, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut fill = |prefix: &str, target: &mut Tensor| -> Result<()> {
            let t = tensors
                .remove(prefix)
                .ok_or_else(|| Error::Integrity(format!("checkpoint is missing tensor {prefix}")))?;
            if t.dims() != target.dims() {
                return Err(Error::Integrity(format!(
                    "tensor {prefix} has dims {:?}, model expects {:?}",
                    t.dims(),
                    target.dims()
                )));
            }
            *target = t;
            Ok(())
        };
        let mut status = Ok(());
        model.params.for_each_mut("", &mut |n, t| {
            if status.is_ok() {
                status = fill(n, t);
            }
        });
        status?;
        let train = match (meta.train, meta.rng) {
            (Some(cfg), Some(rng)) => {
                let mut adam = Adam::new(&model.params.leaves());
                let names = model.params.names();
                for (k, n) in names.iter().enumerate() {
                    fill(&format!("adam.m.{n}"), &mut adam.m[k])?;
                    fill(&format!("adam.v.{n}"), &mut adam.v[k])?;
                }
                adam.t = meta.update;
                Some(TrainState { cfg, adam, rng })
            }
            (None, None) => None,
            _ => return Err(Error::Integrity("training config and RNG state must be stored together".into())),
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Integrity(format!("unexpected tensor {extra}")));
        }
        let model = Model::from_params(model.config, model.vocab, model.params)?;
        Ok(Self { model, train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} does not fit in 32 bits")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}
