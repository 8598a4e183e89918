//! Binary checkpoints: `"EQGS"`, `u32` version, `u32` tensor count, then
//! per tensor a `u32` name length, the UTF-8 name, a `u32` rank, `u32` dims
//! and little-endian `f64` values. The configuration that built the model sits next to it in
//! `<path>.cfg`.

use std::path::{Path, PathBuf};

use eqgs_core::nn::{AdamState, Tensor};
use eqgs_core::pipeline::{Model, Trainer};

use crate::config::Config;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"EQGS";
pub const VERSION: u32 = 1;

const STEP: &str = "adam.step";
const EPOCH: &str = "train.epoch";

/// Named tensor as stored on disk; `shape` has rank 0, 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Entry {
    fn matrix(name: String, t: &Tensor) -> Self {
        Entry {
            name,
            shape: vec![t.rows(), t.cols()],
            values: t.data().to_vec(),
        }
    }

    fn scalar(name: &str, v: f64) -> Self {
        Entry {
            name: name.into(),
            shape: Vec::new(),
            values: vec![v],
        }
    }
}

pub fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::format(self.origin, format!("truncated at byte {}", self.pos)));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_entries(bytes: &[u8], origin: &Path) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(CliError::format(origin, "missing EQGS header"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(CliError::format(origin, format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CliError::format(origin, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()?;
        if rank > 2 {
            return Err(CliError::format(origin, format!("tensor '{name}' has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| CliError::format(origin, "tensor size overflows"))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push(Entry { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(CliError::format(origin, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Optimizer state carried by a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub model: Model,
    pub train: Option<TrainState>,
}

pub fn config_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn checkpoint_entries(model: &Model, trainer: Option<&Trainer>) -> Vec<Entry> {
    let mut entries: Vec<Entry> = model.store.iter().map(|(_, n, t)| Entry::matrix(n.to_string(), t)).collect();
    if let Some(tr) = trainer {
        for ((_, n, _), (m, v)) in model.store.iter().zip(tr.state.m.iter().zip(&tr.state.v)) {
            entries.push(Entry::matrix(format!("adam.m.{n}"), m));
            entries.push(Entry::matrix(format!("adam.v.{n}"), v));
        }
        entries.push(Entry::scalar(STEP, tr.state.step as f64));
        entries.push(Entry::scalar(EPOCH, tr.epoch as f64));
    }
    entries
}

pub fn save_checkpoint(path: &Path, config: &Config, model: &Model, trainer: Option<&Trainer>) -> Result<()> {
    let bytes = encode_entries(&checkpoint_entries(model, trainer));
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let cfg = config_path(path);
    std::fs::write(&cfg, config.to_text()).map_err(|e| CliError::io(cfg, e))
}

fn tensor_for(entry: &Entry, like: &Tensor, origin: &Path) -> Result<Tensor> {
    if entry.shape != [like.rows(), like.cols()] {
        return Err(CliError::format(
            origin,
            format!("tensor '{}' has shape {:?}, model expects {}x{}", entry.name, entry.shape, like.rows(), like.cols()),
        ));
    }
    Ok(Tensor::from_vec(like.rows(), like.cols(), entry.values.clone()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let config = Config::from_file(&config_path(path))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let entries = decode_entries(&bytes, path)?;
    let mut model = Model::new(config.model_config()?, config.seed)?;
    let find = |name: &str| entries.iter().find(|e| e.name == name);

    let names: Vec<String> = model.store.iter().map(|(_, n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let e = find(name).ok_or_else(|| CliError::format(path, format!("missing tensor '{name}'")))?;
        let t = tensor_for(e, &model.store.values()[i], path)?;
        model.store.values_mut()[i] = t;
    }
    let train = match (find(STEP), find(EPOCH)) {
        (Some(step), Some(epoch)) => {
            let mut adam = AdamState::new(model.store.values());
            for (i, name) in names.iter().enumerate() {
                for (prefix, slot) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                    let key = format!("{prefix}{name}");
                    let e = find(&key).ok_or_else(|| CliError::format(path, format!("missing tensor '{key}'")))?;
                    *slot = tensor_for(e, slot, path)?;
                }
            }
            adam.step = step.values[0] as u64;
            Some(TrainState {
                adam,
                epoch: epoch.values[0] as usize,
            })
        }
        (None, None) => None,
        _ => return Err(CliError::format(path, "incomplete optimizer state")),
    };
    Ok(Checkpoint { config, model, train })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_layout() {
        let e = vec![
            Entry {
                name: "w".into(),
                shape: vec![1, 2],
                values: vec![1.5, -2.0],
            },
            Entry::scalar("s", 3.0),
        ];
        let b = encode_entries(&e);
        assert_eq!(&b[..4], b"EQGS");
        assert_eq!(b[4..8], 1u32.to_le_bytes());
        assert_eq!(b[8..12], 2u32.to_le_bytes());
        assert_eq!(b[12..16], 1u32.to_le_bytes());
        assert_eq!(b[16], b'w');
        assert_eq!(b[17..21], 2u32.to_le_bytes());
        assert_eq!(b[29..37], 1.5f64.to_le_bytes());
        assert_eq!(decode_entries(&b, Path::new("c")).unwrap(), e);
        assert!(decode_entries(&b[..b.len() - 3], Path::new("c")).is_err());
    }
}
