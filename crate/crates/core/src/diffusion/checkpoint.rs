//! Model checkpoint container.
//!
//! ```text
//! magic "CDLYCKPT" | version u32
//! | state_dim u32 | action_dim u32 | h_act u32 | h_obs u32
//! | width u32 | enc_width u32 | emb_dim u32 | delay_conditioned u8
//! | K u32 | beta_start f64 | beta_end f64 | delta_max f64
//! | state_mean[D_s] | state_scale[D_s] | action_mean[D_a] | action_scale[D_a]
//! | n_params u64 | params[n_params]
//! ```
//!
//! Little-endian throughout; floats are binary64.

use std::fs;
use std::path::Path;

use super::make_schedule_with;
use super::model::{Denoiser, ModelDims};
use super::train::DiffusionModel;
use crate::error::{Error, Result};
use crate::trajectory::Normalization;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CDLYCKPT";

pub fn save_model(model: &DiffusionModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DiffusionModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn encode(m: &DiffusionModel) -> Vec<u8> {
    let d = m.denoiser.dims;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        d.state_dim,
        d.action_dim,
        d.h_act,
        d.h_obs,
        d.width,
        d.enc_width,
        d.emb_dim,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(u8::from(d.delay_conditioned));
    out.extend_from_slice(&(m.schedule.k as u32).to_le_bytes());
    for v in [m.schedule.beta_start, m.schedule.beta_end, m.delta_max] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let n = &m.normalization;
    for xs in [
        &n.state_mean,
        &n.state_scale,
        &n.action_mean,
        &n.action_scale,
    ] {
        xs.iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    out.extend_from_slice(&(m.denoiser.theta.len() as u64).to_le_bytes());
    m.denoiser
        .theta
        .iter()
        .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Truncated { record: 0 });
        }
        let (h, t) = self.0.split_at(n);
        self.0 = t;
        Ok(h)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn decode(bytes: &[u8]) -> Result<DiffusionModel> {
    let mut r = Reader(bytes);
    if r.take(8).map_err(|_| Error::BadMagic("checkpoint"))? != MAGIC {
        return Err(Error::BadMagic("checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut u = [0usize; 7];
    for v in &mut u {
        *v = r.u32()? as usize;
    }
    let dims = ModelDims {
        state_dim: u[0],
        action_dim: u[1],
        h_act: u[2],
        h_obs: u[3],
        width: u[4],
        enc_width: u[5],
        emb_dim: u[6],
        delay_conditioned: r.take(1)?[0] != 0,
    };
    let k = r.u32()? as usize;
    let (beta_start, beta_end, delta_max) = (r.f64()?, r.f64()?, r.f64()?);
    let normalization = Normalization {
        state_mean: r.f64s(dims.state_dim)?,
        state_scale: r.f64s(dims.state_dim)?,
        action_mean: r.f64s(dims.action_dim)?,
        action_scale: r.f64s(dims.action_dim)?,
    };
    let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    if n != dims.param_count() {
        return Err(Error::Shape {
            expected: dims.param_count(),
            found: n,
        });
    }
    let theta = r.f64s(n)?;
    if !r.0.is_empty() {
        return Err(Error::DimensionMismatch {
            record: 0,
            detail: "trailing bytes after parameters".into(),
        });
    }
    Ok(DiffusionModel {
        denoiser: Denoiser::from_params(dims, theta)?,
        schedule: make_schedule_with(k, beta_start, beta_end)?,
        normalization,
        delta_max,
    })
}
