//! Checkpoint files.
//!
//! Layout: the 8-byte magic `ARLCKPT\0`, a little-endian `u32` format
//! version, a `u64` length followed by that many bytes of JSON metadata,
//! then a `u64` array count and, for each array, a `u64` length followed by
//! that many little-endian `f64` values. Every all-float JSON array of the
//! trainer snapshot (weights, optimizer moments, buffer contents) is moved
//! to the binary section and replaced by `{"$f64": index}`, so floats are
//! stored bit-exactly and the metadata stays small.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use arl_core::arl::TrainerSnapshot;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 8] = b"ARLCKPT\0";
pub const VERSION: u32 = 1;
const ARRAY_KEY: &str = "$f64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub snapshot: TrainerSnapshot,
    /// Per-cell visit counts of the maze footprint so far (empty otherwise).
    pub visits: Vec<u64>,
    pub handoff_visits: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    version: u32,
    config: RunConfig,
    snapshot: Value,
    visits: Vec<u64>,
    handoff_visits: Vec<u64>,
}

fn is_float_array(items: &[Value]) -> bool {
    !items.is_empty() && items.iter().all(|v| matches!(v, Value::Number(n) if n.is_f64()))
}

fn extract(v: &mut Value, arrays: &mut Vec<Vec<f64>>) {
    match v {
        Value::Array(items) if is_float_array(items) => {
            let floats = items.iter().map(|x| x.as_f64().expect("checked float")).collect();
            arrays.push(floats);
            let mut m = Map::new();
            m.insert(ARRAY_KEY.into(), Value::from(arrays.len() - 1));
            *v = Value::Object(m);
        }
        Value::Array(items) => items.iter_mut().for_each(|x| extract(x, arrays)),
        Value::Object(m) => m.values_mut().for_each(|x| extract(x, arrays)),
        _ => {}
    }
}

fn reinsert(v: &mut Value, arrays: &mut [Option<Vec<f64>>]) -> Result<()> {
    match v {
        Value::Object(m) if m.len() == 1 && m.contains_key(ARRAY_KEY) => {
            let idx = m[ARRAY_KEY].as_u64().context("array reference is not an index")? as usize;
            let floats = arrays
                .get_mut(idx)
                .and_then(Option::take)
                .with_context(|| format!("array {idx} missing or referenced twice"))?;
            let items = floats
                .into_iter()
                .map(|x| Number::from_f64(x).map(Value::Number).context("non-finite value in checkpoint"))
                .collect::<Result<_>>()?;
            *v = Value::Array(items);
        }
        Value::Array(items) => {
            for x in items {
                reinsert(x, arrays)?;
            }
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                reinsert(x, arrays)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut snapshot = serde_json::to_value(&self.snapshot)?;
        let mut arrays = Vec::new();
        extract(&mut snapshot, &mut arrays);
        let meta = serde_json::to_vec(&Metadata {
            version: VERSION,
            config: self.config.clone(),
            snapshot,
            visits: self.visits.clone(),
            handoff_visits: self.handoff_visits.clone(),
        })?;
        let floats: usize = arrays.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(28 + meta.len() + 8 * (arrays.len() + floats));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
        for a in &arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for x in a {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).context("truncated checkpoint header")?;
        if &magic != MAGIC {
            bail!("not a checkpoint file (bad magic)");
        }
        let version = u32::from_le_bytes(take(&mut bytes)?);
        if version != VERSION {
            bail!("unsupported checkpoint version {version} (expected {VERSION})");
        }
        let meta_len = read_len(&mut bytes)?;
        if meta_len > bytes.len() {
            bail!("truncated checkpoint metadata");
        }
        let (meta, mut rest) = bytes.split_at(meta_len);
        let meta: Metadata = serde_json::from_slice(meta).context("checkpoint metadata")?;
        let count = read_len(&mut rest)?;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_len(&mut rest)?;
            if len.checked_mul(8).is_none_or(|n| n > rest.len()) {
                bail!("truncated checkpoint array");
            }
            let (data, tail) = rest.split_at(len * 8);
            arrays.push(Some(
                data.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ));
            rest = tail;
        }
        if !rest.is_empty() {
            bail!("{} trailing bytes after checkpoint arrays", rest.len());
        }
        let mut snapshot = meta.snapshot;
        reinsert(&mut snapshot, &mut arrays)?;
        if arrays.iter().any(Option::is_some) {
            bail!("checkpoint contains unreferenced arrays");
        }
        Ok(Checkpoint {
            config: meta.config,
            snapshot: serde_json::from_value(snapshot).context("checkpoint snapshot")?,
            visits: meta.visits,
            handoff_visits: meta.handoff_visits,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("checkpoint {}", path.display()))
    }
}

fn take<const N: usize>(bytes: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    bytes
        .read_exact(&mut buf)
        .map_err(|e| io::Error::new(e.kind(), "truncated checkpoint"))?;
    Ok(buf)
}

fn read_len(bytes: &mut &[u8]) -> Result<usize> {
    let n = u64::from_le_bytes(take(bytes)?);
    usize::try_from(n).context("length does not fit in memory")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_arrays_round_trip_bit_exactly() {
        let mut v = serde_json::json!({
            "w": [0.1, -0.0, 1e-300, 3.0],
            "sizes": [2, 3],
            "nested": [[0.5, 0.25], [7.0]],
            "empty": [],
        });
        let orig = v.clone();
        let mut arrays = Vec::new();
        extract(&mut v, &mut arrays);
        assert_eq!(arrays.len(), 3);
        assert_eq!(v["sizes"], serde_json::json!([2, 3]));
        let mut slots: Vec<_> = arrays.into_iter().map(Some).collect();
        reinsert(&mut v, &mut slots).unwrap();
        assert_eq!(v, orig);
        assert_eq!(v["w"][1].as_f64().unwrap().to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn scalar_floats_round_trip_bit_exactly() {
        let mut config = RunConfig::default();
        config.protagonist.hidden = vec![4];
        config.adversary.hidden = vec![4];
        let trainer = arl_core::arl::Trainer::new(
            config.build_env().unwrap(),
            config.arl.clone(),
            config.protagonist.clone(),
            config.adversary.clone(),
            5,
        )
        .unwrap();
        let mut snapshot = trainer.snapshot();
        let awkward = [0.1f64.ln(), 0.3f64.ln(), 1.0 / 3.0, 2.2250738585072014e-308];
        for x in awkward {
            snapshot.protagonist.log_alpha = x;
            let ck = Checkpoint {
                config: config.clone(),
                snapshot: snapshot.clone(),
                visits: vec![1, 2],
                handoff_visits: vec![0, 3],
            };
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back.snapshot.protagonist.log_alpha.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::from_bytes(b"hello").is_err());
        assert!(Checkpoint::from_bytes(b"ARLCKPT\0\x02\0\0\0").is_err());
    }
}
