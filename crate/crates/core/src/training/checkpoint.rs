use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numerics::{ParamStore, Tensor};

use super::config::TrainConfig;
use super::optim::AdamW;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GLHG1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
    /// Adam first and second moments.
    pub m: Tensor,
    pub v: Tensor,
}

/// Everything needed to rebuild a trained model bit for bit.
///
/// Layout: `GLHG1`, then length-prefixed sections (config TOML, label
/// list, vocabulary TSV, vocabulary hash), `u64` step, epoch and optimizer
/// step, a `u64` tensor count with one record per tensor (name, rows, cols,
/// value, m, v as little-endian `f64`), and a trailing SHA-256 of all
/// preceding bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub labels: Vec<String>,
    pub vocab: Vocab,
    pub step: u64,
    pub epoch: u64,
    pub optimizer_step: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        config: &TrainConfig,
        labels: &LabelSet,
        vocab: &Vocab,
        store: &ParamStore,
        opt: &AdamW,
        step: u64,
        epoch: u64,
    ) -> Self {
        let tensors = store
            .iter()
            .map(|(id, p)| NamedTensor {
                name: p.name.clone(),
                value: p.value.clone(),
                m: opt.m[id.index()].clone(),
                v: opt.v[id.index()].clone(),
            })
            .collect();
        Self {
            config: config.clone(),
            labels: (0..labels.len())
                .map(|i| labels.name(i).expect("in range").to_string())
                .collect(),
            vocab: vocab.clone(),
            step,
            epoch,
            optimizer_step: opt.step,
            tensors,
        }
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(self.labels.clone())
    }

    /// Rebuilds the network, checking that every parameter name and shape
    /// matches the stored tensors exactly.
    pub fn restore(&self) -> Result<(Network, ParamStore, AdamW)> {
        let model_config = self
            .config
            .model_config(self.vocab.len(), self.labels.len());
        let (net, mut store) = Network::new(model_config, self.config.seed)?;
        if store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        let mut opt = AdamW::new(
            &store,
            self.config.learning_rate,
            self.config.beta1,
            self.config.beta2,
            self.config.weight_decay,
            self.config.warmup_steps,
        );
        for (i, t) in self.tensors.iter().enumerate() {
            let id = store
                .id_of(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{}`", t.name)))?;
            if id.index() != i {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` out of order",
                    t.name
                )));
            }
            let p = store.get_mut(id);
            if p.value.shape() != t.value.shape()
                || t.m.shape() != t.value.shape()
                || t.v.shape() != t.value.shape()
            {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    t.name,
                    t.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.value.clone();
            opt.m[i] = t.m.clone();
            opt.v[i] = t.v.clone();
        }
        opt.step = self.optimizer_step;
        Ok((net, store, opt))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_bytes(&mut out, self.config.to_toml().as_bytes());
        put_bytes(&mut out, self.labels.join("\n").as_bytes());
        put_bytes(&mut out, self.vocab.to_tsv().as_bytes());
        put_bytes(&mut out, &self.vocab.hash());
        for x in [
            self.step,
            self.epoch,
            self.optimizer_step,
            self.tensors.len() as u64,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for t in &self.tensors {
            put_bytes(&mut out, t.name.as_bytes());
            out.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
            for tensor in [&t.value, &t.m, &t.v] {
                for x in tensor.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len()
            || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
        {
            let n = bytes.len().min(CHECKPOINT_MAGIC.len());
            return Err(Error::Version {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
            });
        }
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint(
                "content hash mismatch (file corrupted or truncated)".into(),
            ));
        }
        let mut r = Reader {
            buf: body,
            pos: CHECKPOINT_MAGIC.len(),
        };
        let config_text = r.string()?;
        let config = TrainConfig::from_toml_str(&config_text)?;
        let labels: Vec<String> = r.string()?.split('\n').map(String::from).collect();
        let vocab = Vocab::from_tsv(&r.string()?)?;
        let hash = r.bytes()?;
        if hash != vocab.hash() {
            return Err(Error::Checkpoint(
                "vocabulary hash does not match the stored vocabulary".into(),
            ));
        }
        let step = r.u64()?;
        let epoch = r.u64()?;
        let optimizer_step = r.u64()?;
        let count = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let value = r.tensor(rows, cols)?;
            let m = r.tensor(rows, cols)?;
            let v = r.tensor(rows, cols)?;
            tensors.push(NamedTensor { name, value, m, v });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            labels,
            vocab,
            step,
            epoch,
            optimizer_step,
            tensors,
        })
    }

    /// Writes through a temporary file so a failed write leaves nothing
    /// behind at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("eight bytes"),
        ))
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u64()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?)
            .map_err(|_| Error::Checkpoint("section is not UTF-8".into()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Tensor::new(rows, cols, data)
    }
}
