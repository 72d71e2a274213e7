//! Windowing, loss, optimization and ancestral sampling.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{Denoiser, ModelDims};
use super::{condition_augment, make_schedule, Conditioning, NoiseSchedule};
use crate::error::{Error, Result};
use crate::trajectory::{Dataset, Normalization};

/// Loss above which training is considered diverged.
const DIVERGENCE_LOSS: f64 = 1e6;

/// One training sample: a normalized observation window, the normalized
/// delay and the normalized action chunk that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub obs: Vec<f64>,
    pub delta_feature: f64,
    pub chunk: Vec<f64>,
    /// 1 for real actions, 0 for padding past the trajectory end.
    pub mask: Vec<f64>,
}

/// Windows over every trajectory. Observation windows before the start
/// repeat the first state; chunks past the end repeat the last action and are
/// masked out.
///
/// Zero-delay entries are sliced with stride 1. With `align_delayed`, entries
/// with a positive delay label only start windows on the chunk grid their
/// skips were placed on, so the skip always sits at the end of the chunk.
pub fn training_windows(
    ds: &Dataset,
    h_obs: usize,
    h_act: usize,
    delta_max: f64,
    align_delayed: bool,
) -> Vec<Window> {
    let norm = &ds.normalization;
    let mut out = Vec::new();
    for e in &ds.entries {
        let t = &e.traj;
        let n = t.len();
        let d_a = t.action_dim();
        let stride = if align_delayed && e.delta > 0.0 {
            h_act
        } else {
            1
        };
        for i in (0..n).step_by(stride) {
            let obs: Vec<Vec<f64>> = (0..h_obs)
                .map(|w| t.states[(i + w + 1).saturating_sub(h_obs)].clone())
                .collect();
            let c = condition_augment(&obs, e.delta, delta_max, norm);
            let mut chunk = Vec::with_capacity(h_act * d_a);
            let mut mask = Vec::with_capacity(h_act * d_a);
            for j in i..i + h_act {
                let real = j < n;
                chunk.extend(norm.normalize_action(&t.actions[j.min(n - 1)]));
                mask.extend(std::iter::repeat_n(if real { 1.0 } else { 0.0 }, d_a));
            }
            out.push(Window {
                obs: c.obs_window,
                delta_feature: c.delta_feature,
                chunk,
                mask,
            });
        }
    }
    out
}

/// Dense batch assembled from windows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub chunks: Array2<f64>,
    pub masks: Array2<f64>,
    pub cond: Array2<f64>,
}

impl Batch {
    pub fn from_windows(windows: &[&Window], dims: &ModelDims) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (b, a, c) = (windows.len(), dims.chunk_dim(), dims.cond_dim());
        let mut chunks = Array2::zeros((b, a));
        let mut masks = Array2::zeros((b, a));
        let mut cond = Array2::zeros((b, c));
        for (r, w) in windows.iter().enumerate() {
            if w.chunk.len() != a || w.mask.len() != a {
                return Err(Error::Shape {
                    expected: a,
                    found: w.chunk.len(),
                });
            }
            let row = cond_row(&w.obs, w.delta_feature, dims)?;
            chunks
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(&w.chunk));
            masks.row_mut(r).assign(&ndarray::ArrayView1::from(&w.mask));
            cond.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
        }
        Ok(Batch {
            chunks,
            masks,
            cond,
        })
    }
}

fn cond_row(obs: &[f64], delta_feature: f64, dims: &ModelDims) -> Result<Vec<f64>> {
    let want = dims.h_obs * dims.state_dim;
    if obs.len() != want {
        return Err(Error::Shape {
            expected: want,
            found: obs.len(),
        });
    }
    let mut row = obs.to_vec();
    if dims.delay_conditioned {
        row.push(delta_feature);
    }
    Ok(row)
}

/// Diffusion step and noise for every batch item.
#[derive(Debug, Clone)]
pub struct Draw {
    pub steps: Vec<usize>,
    pub eps: Array2<f64>,
}

pub fn sample_draws(items: usize, dim: usize, sched: &NoiseSchedule, rng: &mut impl Rng) -> Draw {
    let mut steps = Vec::with_capacity(items);
    let mut eps = Array2::zeros((items, dim));
    for r in 0..items {
        steps.push(rng.random_range(1..=sched.k));
        for v in eps.row_mut(r).iter_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    Draw { steps, eps }
}

/// Mean over items of the masked squared noise-prediction error, and its
/// gradient with respect to every parameter.
pub fn loss_given(
    model: &Denoiser,
    batch: &Batch,
    draw: &Draw,
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<f64>)> {
    let b = batch.chunks.nrows();
    let mut noisy = batch.chunks.clone();
    for (r, mut row) in noisy.axis_iter_mut(Axis(0)).enumerate() {
        let ab = sched.alpha_bar[draw.steps[r]];
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (x, e) in row.iter_mut().zip(draw.eps.row(r)) {
            *x = s * *x + n * e;
        }
    }
    let cache = model.forward(noisy.view(), &draw.steps, batch.cond.view());
    let diff = (&cache.out - &draw.eps) * &batch.masks;
    let mut total = 0.0;
    for (r, row) in diff.axis_iter(Axis(0)).enumerate() {
        let l: f64 = row.iter().map(|d| d * d).sum();
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: r });
        }
        total += l;
    }
    let dout = diff * (2.0 / b as f64);
    Ok((total / b as f64, model.backward(&cache, &dout)))
}

pub fn loss_and_grad(
    model: &Denoiser,
    batch: &Batch,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    let draw = sample_draws(batch.chunks.nrows(), batch.chunks.ncols(), sched, rng);
    loss_given(model, batch, &draw, sched)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Heavy-ball momentum.
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::AdamW => "adamw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adamw" => Ok(Optimizer::AdamW),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub diffusion_steps: usize,
    pub width: usize,
    pub enc_width: usize,
    pub emb_dim: usize,
    pub h_obs: usize,
    pub h_act: usize,
    pub delay_conditioned: bool,
    /// Chunk-aligned windows for delayed entries; see [`training_windows`].
    pub align_delayed: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 64,
            lr: 1e-3,
            warmup: 100,
            optimizer: Optimizer::AdamW,
            momentum: 0.9,
            weight_decay: 1e-6,
            grad_clip: 1.0,
            diffusion_steps: 100,
            width: 256,
            enc_width: 64,
            emb_dim: 16,
            h_obs: 2,
            h_act: 8,
            delay_conditioned: true,
            align_delayed: true,
            log_every: 500,
        }
    }
}

impl TrainConfig {
    /// Linear warmup to `lr`, then cosine decay to zero at `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let p = ((step - self.warmup) as f64 / span).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// A trained policy network with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub normalization: Normalization,
    /// Delay mapped to a conditioning feature of 1.
    pub delta_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub windows: usize,
}

pub fn train(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(DiffusionModel, TrainReport)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let dims = ModelDims {
        state_dim: ds.state_dim(),
        action_dim: ds.action_dim(),
        h_act: cfg.h_act,
        h_obs: cfg.h_obs,
        width: cfg.width,
        enc_width: cfg.enc_width,
        emb_dim: cfg.emb_dim,
        delay_conditioned: cfg.delay_conditioned,
    };
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let delta_max = if cfg.delay_conditioned {
        ds.max_delta()
    } else {
        0.0
    };
    let windows = training_windows(ds, cfg.h_obs, cfg.h_act, delta_max, cfg.align_delayed);
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Denoiser::init(dims, &mut rng)?;
    let p = model.theta.len();
    let (mut m1, mut m2) = (vec![0.0; p], vec![0.0; p]);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let picks: Vec<&Window> = (0..cfg.batch_size)
            .map(|_| &windows[rng.random_range(0..windows.len())])
            .collect();
        let batch = Batch::from_windows(&picks, &dims)?;
        let (loss, mut grad) = loss_and_grad(&model, &batch, &schedule, &mut rng)?;
        if loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::debug!("step {step}: loss {loss:.5}");
        }

        if cfg.grad_clip > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let f = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= f);
            }
        }
        let lr = cfg.lr_at(step);
        match cfg.optimizer {
            Optimizer::Sgd => {
                for ((w, v), g) in model.theta.iter_mut().zip(&mut m1).zip(&grad) {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *w;
                    *w -= lr * *v;
                }
            }
            Optimizer::AdamW => {
                let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                let t = (step + 1) as i32;
                let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
                for (((w, m), v), g) in model.theta.iter_mut().zip(&mut m1).zip(&mut m2).zip(&grad)
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * ((*m / c1) / ((*v / c2).sqrt() + eps) + cfg.weight_decay * *w);
                }
            }
        }
    }

    Ok((
        DiffusionModel {
            denoiser: model,
            schedule,
            normalization: ds.normalization.clone(),
            delta_max,
        },
        TrainReport {
            losses,
            windows: windows.len(),
        },
    ))
}

impl DiffusionModel {
    pub fn dims(&self) -> &ModelDims {
        &self.denoiser.dims
    }

    pub fn conditioning(&self, obs_window: &[Vec<f64>], delta: f64) -> Conditioning {
        condition_augment(obs_window, delta, self.delta_max, &self.normalization)
    }

    /// Ancestral sampling from pure noise, returning the normalized chunk.
    pub fn sample_normalized(&self, cond: &Conditioning, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let dims = &self.denoiser.dims;
        let row = cond_row(&cond.obs_window, cond.delta_feature, dims)?;
        let c = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
        let s = &self.schedule;
        let mut x: Array2<f64> =
            Array2::from_shape_fn((1, dims.chunk_dim()), |_| StandardNormal.sample(rng));
        for k in (1..=s.k).rev() {
            let eps = self.denoiser.predict(x.view(), &[k], c.view());
            let coef = s.beta[k] / (1.0 - s.alpha_bar[k]).sqrt();
            let inv = 1.0 / s.alpha[k].sqrt();
            x = (&x - &(eps * coef)) * inv;
            if k > 1 {
                let sigma = s.posterior_variance(k).sqrt();
                for v in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sigma * z;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample { step: k });
            }
        }
        Ok(x.into_raw_vec_and_offset().0)
    }

    /// Sampled chunk in task units, one action per row.
    pub fn sample(&self, cond: &Conditioning, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        let flat = self.sample_normalized(cond, rng)?;
        Ok(flat
            .chunks(self.denoiser.dims.action_dim)
            .map(|a| self.normalization.denormalize_action(a))
            .collect())
    }
}
