//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `PVAECKPT`, `u32` version, `u64` metadata length, metadata JSON,
//! `u32` section count, then per section `u32` name length, name,
//! `u8` kind and a body. Dense bodies are `u32` rank, `u64` dims and `f64`
//! values. Masked bodies are `u64` rows, `u64` cols, `u64` nnz, `nnz`
//! `(u64 row, u64 col)` pairs and `nnz` `f64` values.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamSet, TensorLayout};
use crate::scalar::Scalar;
use crate::tensor::SupportPattern;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"PVAECKPT";
pub const FORMAT_VERSION: u32 = 1;
const SUPPORT_SECTION: &str = "decoder/item.support";
const KIND_DENSE: u8 = 0;
const KIND_MASKED: u8 = 1;

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex.
    pub seed: String,
    pub stream: u64,
    /// Decimal; JSON numbers cannot hold a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint {
            section: "metadata".into(),
            message: "malformed rng state".into(),
        };
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_validation_ndcg: Option<f64>,
    pub epochs_since_improvement: usize,
    pub rng: RngState,
    pub model: Model<T>,
    pub optimizer: Adam<T>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: TrainConfig,
    n_items: usize,
    order: usize,
    epoch: usize,
    best_epoch: Option<usize>,
    best_validation_ndcg: Option<f64>,
    epochs_since_improvement: usize,
    rng: RngState,
    adam: AdamConfig,
    adam_step: u64,
}

enum Body {
    Dense(Vec<usize>),
    Masked(SupportPattern),
}

struct Section {
    body: Body,
    values: Vec<f64>,
}

fn write_section<W: Write, T: Scalar>(w: &mut W, name: &str, layout: &TensorLayout, data: &[T]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    match layout {
        TensorLayout::Dense(dims) => {
            w.write_all(&[KIND_DENSE])?;
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        TensorLayout::Masked(p) => {
            w.write_all(&[KIND_MASKED])?;
            for x in [p.n_rows(), p.n_cols(), p.nnz()] {
                w.write_all(&(x as u64).to_le_bytes())?;
            }
            for (r, c) in p.coords() {
                w.write_all(&(r as u64).to_le_bytes())?;
                w.write_all(&(c as u64).to_le_bytes())?;
            }
        }
    }
    for &x in data {
        w.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            section: self.section.clone(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("truncated file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| self.err(format!("value {x} does not fit in memory")))
    }

    /// Guards allocations against corrupted counts.
    fn check_remaining(&self, count: usize, width: usize) -> Result<()> {
        match count.checked_mul(width) {
            Some(n) if n <= self.buf.len() - self.pos => Ok(()),
            _ => Err(self.err("truncated file")),
        }
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.check_remaining(n, 8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn read_section(cur: &mut Cursor<'_>) -> Result<(String, Section)> {
    cur.section = "section header".into();
    let name_len = cur.u32()? as usize;
    let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| cur.err("section name is not UTF-8"))?;
    cur.section = name.clone();
    let kind = cur.u8()?;
    let (body, count) = match kind {
        KIND_DENSE => {
            let rank = cur.u32()? as usize;
            cur.check_remaining(rank, 8)?;
            let dims = (0..rank).map(|_| cur.usize()).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| cur.err("dimension overflow"))?;
            (Body::Dense(dims), count)
        }
        KIND_MASKED => {
            let rows = cur.usize()?;
            let cols = cur.usize()?;
            let nnz = cur.usize()?;
            cur.check_remaining(nnz, 16)?;
            let mut coords = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                coords.push((cur.usize()?, cur.usize()?));
            }
            let pattern = SupportPattern::from_coords(rows, cols, &coords).map_err(|e| cur.err(e.to_string()))?;
            if pattern.nnz() != nnz || pattern.coords() != coords {
                return Err(cur.err("support coordinates are not sorted and unique"));
            }
            (Body::Masked(pattern), nnz)
        }
        other => return Err(cur.err(format!("unknown section kind {other}"))),
    };
    let values = cur.f64s(count)?;
    Ok((name, Section { body, values }))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let meta = Metadata {
            config: self.config.clone(),
            n_items: self.model.n_items(),
            order: self.model.order(),
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_validation_ndcg: self.best_validation_ndcg,
            epochs_since_improvement: self.epochs_since_improvement,
            rng: self.rng.clone(),
            adam: self.optimizer.config,
            adam_step: self.optimizer.step,
        };
        let json = serde_json::to_vec(&meta).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;

        let tensors = self.model.tensors();
        let support = self.model.decoder.item.support.clone();
        w.write_all(&((1 + 3 * tensors.len()) as u32).to_le_bytes())?;
        let ones = vec![T::one(); support.nnz()];
        write_section(&mut w, SUPPORT_SECTION, &TensorLayout::Masked(support), &ones)?;
        for t in &tensors {
            write_section(&mut w, &t.name, &t.layout, t.data)?;
        }
        for (prefix, moments) in [("adam.m", &self.optimizer.first_moment), ("adam.v", &self.optimizer.second_moment)] {
            for (t, m) in tensors.iter().zip(moments) {
                write_section(&mut w, &format!("{prefix}/{}", t.name), &t.layout, m)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Writes beside `path` and renames, so a crash never leaves a partial
    /// checkpoint under the final name.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.partial");
        let f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor {
            buf: bytes,
            pos: 0,
            section: "header".into(),
        };
        if cur.take(8)? != MAGIC {
            return Err(cur.err("not a checkpoint file"));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(cur.err(format!("format version {version}, this build reads {FORMAT_VERSION}")));
        }
        cur.section = "metadata".into();
        let len = cur.usize()?;
        let meta: Metadata = serde_json::from_slice(cur.take(len)?).map_err(|e| cur.err(e.to_string()))?;
        let n_sections = cur.u32()? as usize;
        let mut sections = HashMap::new();
        for _ in 0..n_sections {
            let (name, section) = read_section(&mut cur)?;
            if sections.insert(name.clone(), section).is_some() {
                return Err(Error::Checkpoint {
                    section: name,
                    message: "duplicate section".into(),
                });
            }
        }
        if cur.pos != bytes.len() {
            cur.section = "trailer".into();
            return Err(cur.err(format!("{} unexpected trailing bytes", bytes.len() - cur.pos)));
        }

        let missing = |name: &str| Error::Checkpoint {
            section: name.into(),
            message: "missing section".into(),
        };
        let support = match sections.remove(SUPPORT_SECTION) {
            Some(Section {
                body: Body::Masked(p), ..
            }) => Arc::new(p),
            Some(_) => {
                return Err(Error::Checkpoint {
                    section: SUPPORT_SECTION.into(),
                    message: "expected a masked section".into(),
                })
            }
            None => return Err(missing(SUPPORT_SECTION)),
        };
        let mut model: Model<T> =
            Model::zeros(&meta.config.model, meta.n_items, meta.order, support).map_err(|e| Error::Checkpoint {
                section: "metadata".into(),
                message: e.to_string(),
            })?;
        let mut optimizer = Adam::new(meta.adam, &model);
        optimizer.step = meta.adam_step;

        let layouts: Vec<(String, TensorLayout)> = model.tensors().into_iter().map(|t| (t.name, t.layout)).collect();
        let mut fill = |name: &str, layout: &TensorLayout, out: &mut [T]| -> Result<()> {
            let s = sections.remove(name).ok_or_else(|| missing(name))?;
            let ok = match (&s.body, layout) {
                (Body::Dense(dims), TensorLayout::Dense(expected)) => dims == expected,
                (Body::Masked(p), TensorLayout::Masked(expected)) => p == expected.as_ref(),
                _ => false,
            };
            if !ok || s.values.len() != out.len() {
                let found = match &s.body {
                    Body::Dense(d) => format!("{d:?}"),
                    Body::Masked(p) => format!("masked {}x{} nnz {}", p.n_rows(), p.n_cols(), p.nnz()),
                };
                return Err(Error::Checkpoint {
                    section: name.into(),
                    message: format!("shape mismatch: expected {:?}, found {found}", layout.shape()),
                });
            }
            for (o, &v) in out.iter_mut().zip(&s.values) {
                *o = T::of(v);
            }
            Ok(())
        };
        for ((name, layout), out) in layouts.iter().zip(model.tensors_mut()) {
            fill(name, layout, out)?;
        }
        for (i, (name, layout)) in layouts.iter().enumerate() {
            fill(&format!("adam.m/{name}"), layout, &mut optimizer.first_moment[i])?;
            fill(&format!("adam.v/{name}"), layout, &mut optimizer.second_moment[i])?;
        }
        if let Some(name) = sections.keys().min() {
            return Err(Error::Checkpoint {
                section: name.clone(),
                message: "unexpected section".into(),
            });
        }
        Ok(Self {
            config: meta.config,
            epoch: meta.epoch,
            best_epoch: meta.best_epoch,
            best_validation_ndcg: meta.best_validation_ndcg,
            epochs_since_improvement: meta.epochs_since_improvement,
            rng: meta.rng,
            model,
            optimizer,
        })
    }
}
