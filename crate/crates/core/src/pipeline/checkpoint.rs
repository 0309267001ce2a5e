//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8  bytes  "DDMIKIT1"
//! version  u32
//! config   u32 length + UTF-8 TOML text
//! rng      u8 word count (4) + that many u64 state words
//! steps    u64 stage-1 step, u64 stage-2 step
//! tensors  u32 count, then per tensor:
//!            u16 name length + UTF-8 name
//!            u8 dtype code (0 = f32, 1 = f64)
//!            u8 rank + u32 extents
//!            raw little-endian values
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DdmiError, Result};
use crate::tensor::{DType, Element, Tensor};

use super::imageio::temp_sibling;

pub const MAGIC: &[u8; 8] = b"DDMIKIT1";
pub const VERSION: u32 = 1;

/// One named tensor in the container.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorPayload {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl TensorPayload {
    pub fn from_tensor<E: Element>(t: &Tensor<E>) -> TensorPayload {
        match E::DTYPE {
            DType::F32 => TensorPayload::F32 {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64() as f32).collect(),
            },
            DType::F64 => TensorPayload::F64 {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64()).collect(),
            },
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorPayload::F32 { shape, .. } => shape,
            TensorPayload::F64 { shape, .. } => shape,
        }
    }

    pub fn to_tensor<E: Element>(&self) -> Result<Tensor<E>> {
        match (self, E::DTYPE) {
            (TensorPayload::F32 { shape, data }, DType::F32) => {
                Tensor::from_vec(data.iter().map(|&v| E::from_f64(v as f64)).collect(), shape)
            }
            (TensorPayload::F64 { shape, data }, DType::F64) => {
                Tensor::from_vec(data.iter().map(|&v| E::from_f64(v)).collect(), shape)
            }
            _ => Err(DdmiError::Checkpoint("tensor dtype mismatch".into())),
        }
    }
}

/// In-memory checkpoint: config text, RNG state, step counters, and the
/// named tensor table.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub config_text: String,
    pub rng_state: [u64; 4],
    pub stage1_step: u64,
    pub stage2_step: u64,
    tensors: Vec<(String, TensorPayload)>,
}

impl Checkpoint {
    pub fn new(config_text: String) -> Checkpoint {
        Checkpoint { config_text, ..Default::default() }
    }

    pub fn insert(&mut self, name: &str, payload: TensorPayload) -> Result<()> {
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(DdmiError::Checkpoint(format!("duplicate tensor name '{name}'")));
        }
        self.tensors.push((name.to_string(), payload));
        Ok(())
    }

    pub fn insert_tensor<E: Element>(&mut self, name: &str, t: &Tensor<E>) -> Result<()> {
        self.insert(name, TensorPayload::from_tensor(t))
    }

    pub fn get(&self, name: &str) -> Option<&TensorPayload> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    /// All entries whose name starts with `prefix`, with the prefix
    /// stripped.
    pub fn entries_under(&self, prefix: &str) -> Vec<(String, &TensorPayload)> {
        self.tensors
            .iter()
            .filter_map(|(n, p)| n.strip_prefix(prefix).map(|rest| (rest.to_string(), p)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = temp_sibling(path);
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            let cfg = self.config_text.as_bytes();
            w.write_all(&(cfg.len() as u32).to_le_bytes())?;
            w.write_all(cfg)?;
            w.write_all(&[4u8])?;
            for word in self.rng_state {
                w.write_all(&word.to_le_bytes())?;
            }
            w.write_all(&self.stage1_step.to_le_bytes())?;
            w.write_all(&self.stage2_step.to_le_bytes())?;
            w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
            for (name, payload) in &self.tensors {
                let nb = name.as_bytes();
                w.write_all(&(nb.len() as u16).to_le_bytes())?;
                w.write_all(nb)?;
                let (code, shape) = match payload {
                    TensorPayload::F32 { shape, .. } => (0u8, shape),
                    TensorPayload::F64 { shape, .. } => (1u8, shape),
                };
                w.write_all(&[code, shape.len() as u8])?;
                for &d in shape {
                    w.write_all(&(d as u32).to_le_bytes())?;
                }
                match payload {
                    TensorPayload::F32 { data, .. } => {
                        for v in data {
                            w.write_all(&v.to_le_bytes())?;
                        }
                    }
                    TensorPayload::F64 { data, .. } => {
                        for v in data {
                            w.write_all(&v.to_le_bytes())?;
                        }
                    }
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path)
            .map_err(|e| DdmiError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        let bad = |m: &str| DdmiError::Checkpoint(format!("{}: {m}", path.display()));

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg).map_err(|_| bad("truncated config"))?;
        let config_text =
            String::from_utf8(cfg).map_err(|_| bad("config is not valid UTF-8"))?;

        let mut words = [0u8; 1];
        r.read_exact(&mut words).map_err(|_| bad("truncated rng"))?;
        if words[0] != 4 {
            return Err(bad("unexpected rng state size"));
        }
        let mut rng_state = [0u64; 4];
        for word in rng_state.iter_mut() {
            *word = read_u64(&mut r)?;
        }
        let stage1_step = read_u64(&mut r)?;
        let stage2_step = read_u64(&mut r)?;

        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        let mut seen: HashSet<String> = HashSet::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut nb = vec![0u8; name_len];
            r.read_exact(&mut nb).map_err(|_| bad("truncated tensor name"))?;
            let name = String::from_utf8(nb).map_err(|_| bad("tensor name not UTF-8"))?;
            if !seen.insert(name.clone()) {
                return Err(bad(&format!("duplicate tensor name '{name}'")));
            }
            let mut meta = [0u8; 2];
            r.read_exact(&mut meta).map_err(|_| bad("truncated tensor meta"))?;
            let (code, rank) = (meta[0], meta[1] as usize);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = match DType::from_code(code) {
                Some(DType::F32) => {
                    let mut data = vec![0f32; numel];
                    let mut buf = [0u8; 4];
                    for v in data.iter_mut() {
                        r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
                        *v = f32::from_le_bytes(buf);
                    }
                    TensorPayload::F32 { shape, data }
                }
                Some(DType::F64) => {
                    let mut data = vec![0f64; numel];
                    let mut buf = [0u8; 8];
                    for v in data.iter_mut() {
                        r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
                        *v = f64::from_le_bytes(buf);
                    }
                    TensorPayload::F64 { shape, data }
                }
                None => return Err(bad(&format!("unknown dtype code {code}"))),
            };
            tensors.push((name, payload));
        }
        Ok(Checkpoint { config_text, rng_state, stage1_step, stage2_step, tensors })
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
