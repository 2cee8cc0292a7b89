//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ZICMODEL" | version u32
//! architecture hash [32] | config digest [32]
//! config length u32 | canonical config text (UTF-8)
//! block count u32 | per block: rows u32, cols u32, rows*cols f64
//! ```
//!
//! Blocks follow the model's parameter visiting order and include the
//! normalization running statistics. Nothing time-dependent is stored, so the
//! same training run always yields the same bytes.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{parse_train, train_to_text};
use crate::daezic::{DaeZicModel, TrainConfig};
use crate::error::{Result, ZicError};
use crate::nn::Parameterized;

pub const MAGIC: &[u8; 8] = b"ZICMODEL";
pub const VERSION: u32 = 1;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the parameter layout: block names, shapes and trainability.
pub fn architecture_hash(model: &mut DaeZicModel) -> [u8; 32] {
    let mut h = Sha256::new();
    model.visit_params(&mut |s| {
        h.update(s.name.as_bytes());
        h.update((s.shape.0 as u64).to_le_bytes());
        h.update((s.shape.1 as u64).to_le_bytes());
        h.update([u8::from(s.grads.is_some())]);
    });
    h.finalize().into()
}

/// A trained model with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub config: TrainConfig,
    pub model: DaeZicModel,
}

impl ModelFile {
    /// Interval of interference gains the model was trained on.
    pub fn alpha_interval(&self) -> (f64, f64) {
        (self.config.alpha_min, self.config.alpha_max)
    }
}

pub fn to_bytes(config: &TrainConfig, model: &DaeZicModel) -> Vec<u8> {
    let mut model = model.clone();
    let text = train_to_text(config);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&architecture_hash(&mut model));
    out.extend_from_slice(&Sha256::digest(text.as_bytes()));
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let mut blocks: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |s| blocks.push((s.shape.0, s.shape.1, s.values.to_vec())));
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (rows, cols, values) in blocks {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ZicError::Format("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    let fmt = |m: &str| ZicError::Format(m.to_string());
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(fmt("not a model file (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(ZicError::Format(format!("unsupported model file version {version}")));
    }
    let arch: [u8; 32] = c.take(32)?.try_into().unwrap();
    let digest: [u8; 32] = c.take(32)?.try_into().unwrap();
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?).map_err(|_| fmt("config text is not UTF-8"))?;
    if Sha256::digest(text.as_bytes()).as_slice() != digest {
        return Err(fmt("config digest mismatch"));
    }
    let config = parse_train(text)?;
    let mut model = DaeZicModel::for_config(&config);
    if architecture_hash(&mut model) != arch {
        return Err(fmt("architecture hash does not match the stored configuration"));
    }
    let n_blocks = c.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let values = (0..rows * cols).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        blocks.push(((rows, cols), values));
    }
    if c.pos != bytes.len() {
        return Err(fmt("trailing bytes after the last block"));
    }
    let mut k = 0;
    let mut mismatch = None;
    model.visit_params(&mut |s| {
        match blocks.get(k) {
            Some((shape, values)) if *shape == s.shape && values.len() == s.values.len() => {
                s.values.copy_from_slice(values);
            }
            _ => {
                mismatch.get_or_insert(k);
            }
        }
        k += 1;
    });
    if let Some(b) = mismatch.or((k != blocks.len()).then_some(k)) {
        return Err(ZicError::Format(format!(
            "parameter block {b} does not match the architecture"
        )));
    }
    Ok(ModelFile { config, model })
}

pub fn save(path: &Path, config: &TrainConfig, model: &DaeZicModel) -> Result<Vec<u8>> {
    let bytes = to_bytes(config, model);
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(bytes)
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
