//! Binary dataset container.
//!
//! ```text
//! header:  magic "CDLYDSET" | version u32 | D_s u32 | D_a u32 | dt f64 | count u64
//!          | state_mean[D_s] | state_scale[D_s] | action_mean[D_a] | action_scale[D_a]
//! record:  byte_len u64 | delta f64 | n u64 | seed u64 | episode u64
//!          | task_len u32 | task utf-8 | states[(n+1) * D_s] | actions[n * D_a]
//! ```
//!
//! All integers and floats are little-endian; floats are IEEE-754 binary64 so
//! round trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{Dataset, LabeledTrajectory, Normalization, TrajMeta, Trajectory};
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CDLYDSET";

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(ds)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let norm = &ds.normalization;
    let (d_s, d_a) = (norm.state_dim(), norm.action_dim());
    let dt = ds.dt().unwrap_or(1.0);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ds.format_version.to_le_bytes());
    out.extend_from_slice(&(d_s as u32).to_le_bytes());
    out.extend_from_slice(&(d_a as u32).to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    out.extend_from_slice(&(ds.entries.len() as u64).to_le_bytes());
    for v in [
        &norm.state_mean,
        &norm.state_scale,
        &norm.action_mean,
        &norm.action_scale,
    ] {
        put_f64s(&mut out, v);
    }

    for (i, e) in ds.entries.iter().enumerate() {
        let t = &e.traj;
        if t.state_dim() != d_s || (!t.is_empty() && t.action_dim() != d_a) || t.dt != dt {
            return Err(Error::DimensionMismatch {
                record: i,
                detail: "record does not match dataset header".into(),
            });
        }
        let mut rec = Vec::new();
        rec.extend_from_slice(&e.delta.to_le_bytes());
        rec.extend_from_slice(&(t.len() as u64).to_le_bytes());
        rec.extend_from_slice(&t.meta.seed.to_le_bytes());
        rec.extend_from_slice(&t.meta.episode.to_le_bytes());
        rec.extend_from_slice(&(t.meta.task.len() as u32).to_le_bytes());
        rec.extend_from_slice(t.meta.task.as_bytes());
        for s in &t.states {
            put_f64s(&mut rec, s);
        }
        for a in &t.actions {
            put_f64s(&mut rec, a);
        }
        out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    Ok(out)
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated {
                record: self.record,
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        record: 0,
    };
    if r.take(MAGIC.len())
        .map_err(|_| Error::BadMagic("dataset"))?
        != MAGIC
    {
        return Err(Error::BadMagic("dataset"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let d_s = r.u32()? as usize;
    let d_a = r.u32()? as usize;
    let dt = r.f64()?;
    let count = r.u64()? as usize;
    let normalization = Normalization {
        state_mean: r.f64s(d_s)?,
        state_scale: r.f64s(d_s)?,
        action_mean: r.f64s(d_a)?,
        action_scale: r.f64s(d_a)?,
    };

    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for record in 0..count {
        r.record = record;
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        let mut p = Reader {
            buf: payload,
            pos: 0,
            record,
        };
        let mismatch = |detail: String| Error::DimensionMismatch { record, detail };
        let delta = p.f64().map_err(|_| mismatch("record too short".into()))?;
        let n = p.u64().map_err(|_| mismatch("record too short".into()))? as usize;
        let seed = p.u64().map_err(|_| mismatch("record too short".into()))?;
        let episode = p.u64().map_err(|_| mismatch("record too short".into()))?;
        let task_len = p.u32().map_err(|_| mismatch("record too short".into()))? as usize;
        let task = p
            .take(task_len)
            .map_err(|_| mismatch("task name overruns record".into()))?;
        let task = String::from_utf8(task.to_vec())
            .map_err(|_| mismatch("task name is not utf-8".into()))?;
        let expected = n
            .checked_add(1)
            .and_then(|s| s.checked_mul(d_s))
            .and_then(|s| n.checked_mul(d_a).and_then(|a| s.checked_add(a)))
            .and_then(|f| f.checked_mul(8))
            .ok_or_else(|| mismatch("length overflow".into()))?;
        if payload.len() - p.pos != expected {
            return Err(mismatch(format!(
                "payload has {} bytes, D_s={d_s}, D_a={d_a}, n={n} need {expected}",
                payload.len() - p.pos
            )));
        }
        let states = (0..=n).map(|_| p.f64s(d_s)).collect::<Result<Vec<_>>>()?;
        let actions = (0..n).map(|_| p.f64s(d_a)).collect::<Result<Vec<_>>>()?;
        let traj = Trajectory::new(
            states,
            actions,
            dt,
            TrajMeta {
                task,
                seed,
                episode,
            },
        )
        .map_err(|e| mismatch(e.to_string()))?;
        entries.push(LabeledTrajectory { traj, delta });
    }
    if r.pos != bytes.len() {
        return Err(Error::DimensionMismatch {
            record: count,
            detail: "trailing bytes after last record".into(),
        });
    }
    Ok(Dataset {
        entries,
        normalization,
        format_version: version,
    })
}
