//! Checkpoints: a binary tensor container plus a JSON sidecar.
//!
//! Container layout (all integers little-endian):
//! `b"SLCLCKPT"`, `u32` version, `u32` tensor count, then per tensor:
//! `u32` name length, UTF-8 name, `u8` dtype (0 = f32, 1 = f64),
//! `u32` rank, `rank x u64` dims, raw little-endian data.
//! Optimizer moments are stored as `adam.m.<name>` / `adam.v.<name>`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, ModelConfig, ModelState, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLCLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub step_count: u64,
    pub adam: AdamConfig,
    pub adam_t: u64,
    pub dtype: String,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn dtype_code(dtype: &str) -> u8 {
    if dtype == "f64" {
        1
    } else {
        0
    }
}

pub fn save_checkpoint<F: Real>(path: &Path, state: &ModelState<F>) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, &[F])> = state.params.tensors();
    let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.1.clone()).collect();
    for (prefix, p) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for ((name, _, d), shape) in p.tensors().into_iter().zip(&shapes) {
            tensors.push((format!("{prefix}{name}"), shape.clone(), d));
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dtype_code(F::DTYPE));
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in data {
            x.write_le(&mut buf);
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let meta = CheckpointMeta {
        config: state.config.clone(),
        step_count: state.step_count,
        adam: state.adam.config,
        adam_t: state.adam.t,
        dtype: F::DTYPE.to_string(),
    };
    let side = sidecar(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: 0,
                message: format!("truncated checkpoint at byte {}", self.at),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<ModelState<F>> {
    let side = sidecar(path);
    let meta: CheckpointMeta =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    let bad = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m,
    };
    if meta.dtype != F::DTYPE {
        return Err(bad(format!("checkpoint holds {} tensors, requested {}", meta.dtype, F::DTYPE)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, at: 0, path };
    if cur.take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    if cur.u32()? != VERSION {
        return Err(bad("unsupported checkpoint version".into()));
    }
    let count = cur.u32()? as usize;
    let mut stored = std::collections::HashMap::new();
    let width = std::mem::size_of::<F>();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| bad("tensor name not UTF-8".into()))?;
        let dtype = cur.take(1)?[0];
        if dtype != dtype_code(F::DTYPE) {
            return Err(bad(format!("tensor {name} has dtype code {dtype}")));
        }
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * width)?;
        let data: Vec<F> = raw.chunks_exact(width).map(F::read_le).collect();
        stored.insert(name, (shape, data));
    }

    let mut state = ModelState::<F>::init(meta.config.clone())?;
    state.step_count = meta.step_count;
    state.adam = Adam::new(meta.adam, &state.params);
    state.adam.t = meta.adam_t;
    let shapes: Vec<Vec<usize>> = state.params.tensors().into_iter().map(|t| t.1).collect();
    for (prefix, target) in [("", &mut state.params), ("adam.m.", &mut state.adam.m), ("adam.v.", &mut state.adam.v)] {
        for ((name, slot), shape) in target.tensors_mut().into_iter().zip(&shapes) {
            let key = format!("{prefix}{name}");
            let (s, d) = stored.remove(&key).ok_or_else(|| bad(format!("missing tensor {key}")))?;
            if &s != shape {
                return Err(bad(format!("tensor {key} has shape {s:?}, expected {shape:?}")));
            }
            slot.copy_from_slice(&d);
        }
    }
    Ok(state)
}
