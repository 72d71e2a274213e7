//! Delay compensation of zero-delay demonstrations.
//!
//! A chunked controller that pauses for an inference delay `delta` before
//! every chunk after the first finishes an `n`-step demonstration late by
//! `(ceil(n / h_act) - 1) * delta`. Compression shortens the demonstration to
//! `N'` states by skipping source states at chunk boundaries, so the delayed
//! execution still reaches the final state `s_n` on the original schedule.
//!
//! Skips are placed only at the `ceil(N' / h_act) - 1` chunk boundaries. An
//! alternative discrete skip amount, `(n - n') / ceil(n' / h_act)`, divides by
//! the number of chunks rather than the number of boundaries; it leaves the
//! executed timeline unbalanced and is not used here.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trajectory::{dp_execution_time, Dataset, LabeledTrajectory, TimingConfig, Trajectory};

/// Continuous solution `n' = (n dt + delta) / (dt + delta / h_act)` of the
/// balance `n' dt + (n' / h_act - 1) delta = n dt`.
pub fn adjusted_length(n: usize, cfg: &TimingConfig) -> f64 {
    (n as f64 * cfg.dt + cfg.delta) / (cfg.dt + cfg.delta / cfg.h_act as f64)
}

/// An integer compressed length and where its skips go.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthChoice {
    pub n_prime: usize,
    /// Skips per chunk boundary, in execution order.
    pub skip_schedule: Vec<usize>,
    /// Set when `N' <= h_act < n`: there is no real boundary, so every skip
    /// lands in a single implicit boundary before the terminal state.
    pub collapsed: bool,
    /// Delayed execution time of the chosen length.
    pub achieved_duration: f64,
}

/// Picks `N'` minimizing `|T_dp(N') - n dt|`, preferring the early candidate
/// on ties, and spreads the `n - N'` skips over the chunk boundaries.
pub fn choose_integer_length(n: usize, cfg: &TimingConfig) -> Result<LengthChoice> {
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    cfg.check()?;
    let n_prime = if cfg.delta == 0.0 || n <= cfg.h_act {
        n
    } else {
        best_length(n, cfg)?
    };
    if n_prime < 1 {
        return Err(Error::Unreachable {
            n,
            delta: cfg.delta,
        });
    }
    let (skip_schedule, collapsed) = skip_schedule(n, n_prime, cfg);
    Ok(LengthChoice {
        n_prime,
        skip_schedule,
        collapsed,
        achieved_duration: dp_execution_time(n_prime, cfg)?,
    })
}

/// `T_dp` is strictly increasing in `N'`, so the optimum is the last length
/// finishing no later than the target or the one right after it.
fn best_length(n: usize, cfg: &TimingConfig) -> Result<usize> {
    let target = n as f64 * cfg.dt;
    let g = |k: usize| dp_execution_time(k, cfg);
    // Invariant: g(lo) <= target, and g(hi) > target unless hi == n.
    let (mut lo, mut hi) = (1usize, n);
    if g(n)? <= target {
        return Ok(n);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if g(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let early = target - g(lo)?;
    let late = g(hi)? - target;
    let tie = 1e-9 * target.abs().max(cfg.dt);
    Ok(if late < early - tie { hi } else { lo })
}

/// Spreads `n - n_prime` skips over the chunk boundaries of an `n_prime`-step
/// trajectory: boundaries get the rounded per-boundary delay in steps while
/// skips remain, and the last boundary absorbs the residual.
pub fn skip_schedule(n: usize, n_prime: usize, cfg: &TimingConfig) -> (Vec<usize>, bool) {
    let total = n.saturating_sub(n_prime);
    let boundaries = n_prime.div_ceil(cfg.h_act).saturating_sub(1);
    if boundaries == 0 {
        return if total > 0 {
            (vec![total], true)
        } else {
            (Vec::new(), false)
        };
    }
    let per_boundary = cfg.delay_steps().round() as usize;
    let mut left = total;
    let mut schedule = Vec::with_capacity(boundaries);
    for _ in 1..boundaries {
        let k = per_boundary.min(left);
        schedule.push(k);
        left -= k;
    }
    schedule.push(left);
    (schedule, false)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipAmount {
    /// States skipped per boundary in continuous time, `delta / dt`.
    Continuous(f64),
    /// Integer skips per boundary.
    Discrete(Vec<usize>),
}

pub fn skip_amount(n: usize, n_prime: usize, cfg: &TimingConfig, continuous: bool) -> SkipAmount {
    if continuous {
        SkipAmount::Continuous(cfg.delay_steps())
    } else {
        SkipAmount::Discrete(skip_schedule(n, n_prime, cfg).0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTrajectory {
    pub traj: Trajectory,
    pub source_len: usize,
    pub delta: f64,
    pub skip_schedule: Vec<usize>,
    /// Source index of every compressed state except the terminal one, which
    /// is always `source_len`.
    pub index_map: Vec<usize>,
    pub h_act: usize,
    pub collapsed: bool,
    pub achieved_duration: f64,
}

impl CompressedTrajectory {
    pub fn n_prime(&self) -> usize {
        self.traj.len()
    }

    /// The compressed trajectory as it is observed during synchronous
    /// execution with delay `delta`.
    ///
    /// A chunk's last action already carries the agent to where the skipped
    /// source states end, but the observation for the next chunk is taken
    /// before the hold, so the rest of the world is still at real time
    /// `c·H·dt + (c-1)·delta`. At every interior chunk boundary this view
    /// keeps the actuated coordinates of the compressed state and takes the
    /// remaining coordinates from the source state nearest that real time.
    /// Everywhere else it equals [`Self::traj`]; actions are unchanged.
    pub fn observed_view(&self, source: &Trajectory) -> Result<Trajectory> {
        if source.len() != self.source_len {
            return Err(Error::InvalidTrajectory(format!(
                "source has {} steps, compressed from {}",
                source.len(),
                self.source_len
            )));
        }
        let da = self.traj.action_dim();
        let steps = self.delta / self.traj.dt;
        let mut states = self.traj.states.clone();
        let np = self.n_prime();
        for c in 1..=np.saturating_sub(1) / self.h_act {
            let q = c * self.h_act;
            let real = (q as f64 + (c - 1) as f64 * steps).round() as usize;
            let j = real.min(self.index_map[q]);
            states[q][da..].copy_from_slice(&source.states[j][da..]);
        }
        Trajectory::new(
            states,
            self.traj.actions.clone(),
            self.traj.dt,
            self.traj.meta.clone(),
        )
    }
}

/// Compresses a zero-delay trajectory for execution under `cfg.delta`.
///
/// State `i` of the result is source state `i + (skips at all boundaries
/// before i)`, the terminal state is the source terminal state, and actions
/// are re-derived as state deltas. With `smooth`, interior actuated
/// coordinates get one pass of a centered 3-point moving average before the
/// actions are derived.
pub fn compress(
    traj: &Trajectory,
    cfg: &TimingConfig,
    smooth: bool,
) -> Result<CompressedTrajectory> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let n = traj.len();
    let choice = choose_integer_length(n, cfg)?;
    let h = cfg.h_act;
    let boundaries = if choice.collapsed {
        0
    } else {
        choice.skip_schedule.len()
    };

    let mut index_map = Vec::with_capacity(choice.n_prime);
    let mut offset = 0;
    for i in 0..choice.n_prime {
        if i > 0 && i % h == 0 && i / h <= boundaries {
            offset += choice.skip_schedule[i / h - 1];
        }
        index_map.push(i + offset);
    }

    let mut states: Vec<Vec<f64>> = index_map.iter().map(|&j| traj.states[j].clone()).collect();
    states.push(traj.final_state().to_vec());
    let da = traj.action_dim();

    let actions = if smooth {
        smooth_interior(&mut states, da);
        crate::trajectory::delta_actions(&states, da)
    } else {
        let mut sources = index_map.clone();
        sources.push(n);
        sources
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if w[1] == w[0] + 1 {
                    traj.actions[w[0]].clone()
                } else {
                    (0..da).map(|d| states[i + 1][d] - states[i][d]).collect()
                }
            })
            .collect()
    };

    Ok(CompressedTrajectory {
        traj: Trajectory::new(states, actions, traj.dt, traj.meta.clone())?,
        source_len: n,
        delta: cfg.delta,
        skip_schedule: choice.skip_schedule,
        index_map,
        h_act: h,
        collapsed: choice.collapsed,
        achieved_duration: choice.achieved_duration,
    })
}

fn smooth_interior(states: &mut [Vec<f64>], action_dim: usize) {
    if states.len() < 3 {
        return;
    }
    let original: Vec<Vec<f64>> = states.iter().map(|s| s[..action_dim].to_vec()).collect();
    for i in 1..states.len() - 1 {
        for d in 0..action_dim {
            states[i][d] = (original[i - 1][d] + original[i][d] + original[i + 1][d]) / 3.0;
        }
    }
}

/// Provenance of one dataset entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionRecord {
    pub source_index: usize,
    pub delta: f64,
    pub source_len: usize,
    pub n_prime: usize,
    pub skip_schedule: Vec<usize>,
    pub collapsed: bool,
    pub achieved_duration: f64,
}

#[derive(Debug)]
pub struct CompressionFailure {
    pub source_index: usize,
    pub delta: f64,
    pub error: Error,
}

#[derive(Debug)]
pub struct DelayDataset {
    pub dataset: Dataset,
    /// One record per dataset entry, same order.
    pub records: Vec<CompressionRecord>,
    pub failures: Vec<CompressionFailure>,
}

/// Compresses every trajectory once per delay, labels each result with its
/// delay and pools everything into one dataset. Zero-delay entries are the
/// uncompressed originals. Failures are collected per (trajectory, delay)
/// pair; the rest of the dataset is still built.
pub fn build_delay_dataset(
    trajs: &[Trajectory],
    deltas: &[f64],
    cfg: &TimingConfig,
    smooth: bool,
) -> Result<DelayDataset> {
    if deltas.is_empty() {
        return Err(Error::InvalidTiming("no deltas given".into()));
    }
    for &d in deltas {
        cfg.with_delta(d).check()?;
    }
    let pairs: Vec<(usize, f64)> = deltas
        .iter()
        .flat_map(|&d| (0..trajs.len()).map(move |i| (i, d)))
        .collect();
    let results: Vec<_> = pairs
        .par_iter()
        .map(|&(i, delta)| {
            let traj = &trajs[i];
            let out = crate::trajectory::validate(traj)
                .map_err(|v| Error::InvalidTrajectory(v.to_string()))
                .and_then(|_| {
                    if delta == 0.0 {
                        let n = traj.len();
                        Ok(CompressedTrajectory {
                            traj: traj.clone(),
                            source_len: n,
                            delta,
                            skip_schedule: skip_schedule(n, n, cfg).0,
                            index_map: (0..n).collect(),
                            h_act: cfg.h_act,
                            collapsed: false,
                            achieved_duration: n as f64 * traj.dt,
                        })
                    } else {
                        compress(traj, &cfg.with_delta(delta), smooth)
                    }
                });
            (i, delta, out)
        })
        .collect();

    let mut entries = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, delta, out) in results {
        match out {
            Ok(c) => {
                records.push(CompressionRecord {
                    source_index: i,
                    delta,
                    source_len: c.source_len,
                    n_prime: c.n_prime(),
                    skip_schedule: c.skip_schedule.clone(),
                    collapsed: c.collapsed,
                    achieved_duration: c.achieved_duration,
                });
                entries.push(LabeledTrajectory {
                    traj: c.traj,
                    delta,
                });
            }
            Err(e) => failures.push(CompressionFailure {
                source_index: i,
                delta,
                error: Error::CompressFailed {
                    index: i,
                    delta,
                    source: Box::new(e),
                },
            }),
        }
    }
    Ok(DelayDataset {
        dataset: Dataset::from_entries(entries)?,
        records,
        failures,
    })
}
