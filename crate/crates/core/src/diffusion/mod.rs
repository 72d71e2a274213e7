//! Delay-conditioned denoising diffusion policy.
//!
//! Action chunks are generated by a DDPM with an ε-predicting MLP denoiser.
//! The denoiser is conditioned on the normalized observation window and,
//! for delay-aware models, on the delay normalized by the largest delay seen
//! in training.

mod checkpoint;
mod model;
mod policy;
mod train;

use crate::error::{Error, Result};
use crate::trajectory::Normalization;

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
pub use model::{Denoiser, ModelDims};
pub use policy::DiffusionPolicy;
pub use train::{
    loss_and_grad, loss_given, sample_draws, train, training_windows, Batch, DiffusionModel, Draw,
    Optimizer, TrainConfig, TrainReport, Window,
};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Linear-β DDPM schedule. Vectors are indexed by step `k` in `0..=K`;
/// index 0 is the clean signal (`ᾱ_0 = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub k: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(k: usize) -> Result<NoiseSchedule> {
    make_schedule_with(k, BETA_START, BETA_END)
}

pub fn make_schedule_with(k: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if k == 0 {
        return Err(Error::Config("diffusion steps K must be >= 1".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let mut beta = vec![0.0];
    for i in 1..=k {
        let f = if k == 1 {
            0.0
        } else {
            (i - 1) as f64 / (k - 1) as f64
        };
        beta.push(beta_start + (beta_end - beta_start) * f);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(k + 1);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        k,
        beta_start,
        beta_end,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    /// Variance of the reverse step `k -> k-1`: the posterior variance
    /// `β_k (1 - ᾱ_{k-1}) / (1 - ᾱ_k)`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        self.beta[k] * (1.0 - self.alpha_bar[k - 1]) / (1.0 - self.alpha_bar[k])
    }
}

/// `√ᾱ_k · a + √(1 - ᾱ_k) · eps`.
pub fn forward_diffuse(
    a: &[f64],
    eps: &[f64],
    k: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if a.len() != eps.len() {
        return Err(Error::Shape {
            expected: a.len(),
            found: eps.len(),
        });
    }
    if k > sched.k {
        return Err(Error::Config(format!("step {k} outside 0..={}", sched.k)));
    }
    Ok(mix(a, eps, sched.alpha_bar[k]))
}

fn mix(a: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    a.iter().zip(eps).map(|(x, e)| s * x + n * e).collect()
}

/// Policy conditioning input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `h_obs` normalized states, oldest first, flattened.
    pub obs_window: Vec<f64>,
    pub delta_feature: f64,
}

/// Normalizes an observation window and the delay (`delta / delta_max`, with
/// `delta_max = 0` mapping every delay to 0).
pub fn condition_augment(
    obs_window: &[Vec<f64>],
    delta: f64,
    delta_max: f64,
    norm: &Normalization,
) -> Conditioning {
    Conditioning {
        obs_window: obs_window
            .iter()
            .flat_map(|s| norm.normalize_state(s))
            .collect(),
        delta_feature: if delta_max > 0.0 {
            delta.max(0.0) / delta_max
        } else {
            0.0
        },
    }
}
