//! Demonstration data model and timing arithmetic.
//!
//! A [`Trajectory`] holds `n + 1` states and `n` actions sampled at a fixed
//! control timestep. Actions are position deltas on the *actuated prefix* of
//! the state vector: for an action dimension `D_a`, the first `D_a`
//! coordinates of every state are the ones the actions move, and
//! `actions[i] == states[i + 1][..D_a] - states[i][..D_a]`.

mod format;

use std::fmt;

use crate::error::{Error, Result};

pub use format::{load_dataset, save_dataset, DATASET_VERSION};

/// Scale entries never drop below this.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Relative tolerance used when checking the delta-action convention.
const DELTA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrajMeta {
    pub task: String,
    pub seed: u64,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub dt: f64,
    pub meta: TrajMeta,
}

impl Trajectory {
    /// Builds a trajectory, rejecting anything that breaks the structural
    /// invariants (lengths, dimensions, timestep). The delta-action
    /// convention is only checked by [`validate`].
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        dt: f64,
        meta: TrajMeta,
    ) -> Result<Self> {
        let traj = Trajectory {
            states,
            actions,
            dt,
            meta,
        };
        match traj.structural_violation() {
            Some(v) => Err(Error::InvalidTrajectory(v.to_string())),
            None => Ok(traj),
        }
    }

    /// Builds a trajectory whose actions are the deltas of the first
    /// `action_dim` state coordinates.
    pub fn from_states(
        states: Vec<Vec<f64>>,
        action_dim: usize,
        dt: f64,
        meta: TrajMeta,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if states.iter().any(|s| s.len() < action_dim) {
            return Err(Error::InvalidTrajectory(
                "action dimension exceeds state dimension".into(),
            ));
        }
        let actions = delta_actions(&states, action_dim);
        Trajectory::new(states, actions, dt, meta)
    }

    /// Number of actions `n`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Action dimension. An empty trajectory has no actions to infer it from
    /// and reports 0.
    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    fn structural_violation(&self) -> Option<Violation> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Some(Violation::NonPositiveDt);
        }
        if self.states.len() != self.actions.len() + 1 {
            return Some(Violation::LengthMismatch {
                states: self.states.len(),
                actions: self.actions.len(),
            });
        }
        let ds = self.state_dim();
        if let Some(i) = self.states.iter().position(|s| s.len() != ds) {
            return Some(Violation::StateDim { index: i });
        }
        let da = self.action_dim();
        if let Some(i) = self.actions.iter().position(|a| a.len() != da) {
            return Some(Violation::ActionDim { index: i });
        }
        if da > ds {
            return Some(Violation::ActionDim { index: 0 });
        }
        if let Some(i) = self
            .states
            .iter()
            .position(|s| s.iter().any(|x| !x.is_finite()))
        {
            return Some(Violation::NonFiniteState { index: i });
        }
        if let Some(i) = self
            .actions
            .iter()
            .position(|a| a.iter().any(|x| !x.is_finite()))
        {
            return Some(Violation::NonFiniteAction { index: i });
        }
        None
    }
}

/// `a_i = s_{i+1} - s_i` on the first `action_dim` coordinates.
pub fn delta_actions(states: &[Vec<f64>], action_dim: usize) -> Vec<Vec<f64>> {
    states
        .windows(2)
        .map(|w| (0..action_dim).map(|d| w[1][d] - w[0][d]).collect())
        .collect()
}

/// First broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch { states: usize, actions: usize },
    StateDim { index: usize },
    ActionDim { index: usize },
    NonPositiveDt,
    NonFiniteState { index: usize },
    NonFiniteAction { index: usize },
    DeltaConvention { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { states, actions } => {
                write!(f, "length mismatch: {states} states for {actions} actions")
            }
            Violation::StateDim { index } => write!(f, "state dimension differs at i={index}"),
            Violation::ActionDim { index } => write!(f, "action dimension differs at i={index}"),
            Violation::NonPositiveDt => write!(f, "dt must be positive"),
            Violation::NonFiniteState { index } => write!(f, "non-finite state at i={index}"),
            Violation::NonFiniteAction { index } => write!(f, "non-finite action at i={index}"),
            Violation::DeltaConvention { index } => {
                write!(f, "action is not the state delta at i={index}")
            }
        }
    }
}

/// Checks every trajectory invariant and reports the first violation.
pub fn validate(traj: &Trajectory) -> std::result::Result<(), Violation> {
    if let Some(v) = traj.structural_violation() {
        return Err(v);
    }
    let da = traj.action_dim();
    for (i, a) in traj.actions.iter().enumerate() {
        let (s0, s1) = (&traj.states[i], &traj.states[i + 1]);
        for d in 0..da {
            let expect = s1[d] - s0[d];
            let tol = DELTA_TOL * (1.0 + s0[d].abs().max(s1[d].abs()));
            if (a[d] - expect).abs() > tol {
                return Err(Violation::DeltaConvention { index: i });
            }
        }
    }
    Ok(())
}

/// Control timing: timestep, inference delay, action-chunk and observation
/// horizons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    pub dt: f64,
    pub delta: f64,
    pub h_act: usize,
    pub h_obs: usize,
}

impl TimingConfig {
    pub fn new(dt: f64, delta: f64, h_act: usize, h_obs: usize) -> Result<Self> {
        let cfg = TimingConfig {
            dt,
            delta,
            h_act,
            h_obs,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidTiming(format!(
                "dt = {} must be > 0",
                self.dt
            )));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidTiming(format!(
                "delta = {} must be >= 0",
                self.delta
            )));
        }
        if self.h_act == 0 || self.h_obs == 0 {
            return Err(Error::InvalidTiming("horizons must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_delta(self, delta: f64) -> Self {
        TimingConfig { delta, ..self }
    }

    /// Delay expressed in control steps.
    pub fn delay_steps(&self) -> f64 {
        self.delta / self.dt
    }
}

/// Duration of a zero-delay execution: `n * dt`.
pub fn target_duration(traj: &Trajectory) -> f64 {
    traj.len() as f64 * traj.dt
}

/// Number of chunks needed to execute `n` actions, the last one possibly
/// short.
pub fn chunk_count(n: usize, h_act: usize) -> usize {
    n.div_ceil(h_act)
}

/// Wall time of chunked execution when every chunk after the first waits
/// `delta` for inference: `n * dt + (ceil(n / h_act) - 1) * delta`.
pub fn dp_execution_time(n: usize, cfg: &TimingConfig) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    cfg.check()?;
    let gaps = chunk_count(n, cfg.h_act) - 1;
    Ok(n as f64 * cfg.dt + gaps as f64 * cfg.delta)
}

/// Per-dimension affine normalization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub state_mean: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Normalization {
            state_mean: vec![0.0; state_dim],
            state_scale: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_scale: vec![1.0; action_dim],
        }
    }

    /// Mean and standard deviation over every state and action of the
    /// given trajectories, with scales floored at [`SCALE_FLOOR`].
    pub fn fit<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let trajs: Vec<&Trajectory> = trajs.into_iter().collect();
        let first = trajs.first().ok_or(Error::EmptyDataset)?;
        let (ds, da) = (first.state_dim(), first.action_dim());
        let states: Vec<&[f64]> = trajs
            .iter()
            .flat_map(|t| t.states.iter().map(Vec::as_slice))
            .collect();
        let actions: Vec<&[f64]> = trajs
            .iter()
            .flat_map(|t| t.actions.iter().map(Vec::as_slice))
            .collect();
        let (state_mean, state_scale) = moments(&states, ds);
        let (action_mean, action_scale) = moments(&actions, da);
        Ok(Normalization {
            state_mean,
            state_scale,
            action_mean,
            action_scale,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_mean.len()
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        affine_fwd(s, &self.state_mean, &self.state_scale)
    }

    pub fn normalize_action(&self, a: &[f64]) -> Vec<f64> {
        affine_fwd(a, &self.action_mean, &self.action_scale)
    }

    pub fn denormalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(&self.action_mean)
            .zip(&self.action_scale)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }
}

fn affine_fwd(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean)
        .zip(scale)
        .map(|((x, m), s)| (x - m) / s)
        .collect()
}

fn moments(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    if rows.is_empty() {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let count = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|v| (v / count).sqrt().max(SCALE_FLOOR))
        .collect();
    (mean, scale)
}

/// A trajectory together with the inference delay it was prepared for.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub traj: Trajectory,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<LabeledTrajectory>,
    pub normalization: Normalization,
    pub format_version: u32,
}

impl Dataset {
    /// Pools labeled trajectories and fits the normalization on all of them.
    pub fn from_entries(entries: Vec<LabeledTrajectory>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(i) = entries.iter().position(|e| !(e.delta >= 0.0)) {
            return Err(Error::InvalidTrajectory(format!(
                "entry {i} has a negative delta label"
            )));
        }
        let first = &entries[0].traj;
        let (ds, da, dt) = (first.state_dim(), first.action_dim(), first.dt);
        for (i, e) in entries.iter().enumerate() {
            let t = &e.traj;
            if t.state_dim() != ds || (t.action_dim() != da && !t.is_empty()) || t.dt != dt {
                return Err(Error::DimensionMismatch {
                    record: i,
                    detail: format!(
                        "expected D_s={ds}, D_a={da}, dt={dt}; found D_s={}, D_a={}, dt={}",
                        t.state_dim(),
                        t.action_dim(),
                        t.dt
                    ),
                });
            }
        }
        let normalization = Normalization::fit(entries.iter().map(|e| &e.traj))?;
        Ok(Dataset {
            entries,
            normalization,
            format_version: DATASET_VERSION,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.normalization.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.normalization.action_dim()
    }

    pub fn dt(&self) -> Option<f64> {
        self.entries.first().map(|e| e.traj.dt)
    }

    pub fn max_delta(&self) -> f64 {
        self.entries.iter().map(|e| e.delta).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, dt: f64) -> Trajectory {
        let states = (0..=n).map(|i| vec![i as f64 * 0.5, 1.0]).collect();
        Trajectory::from_states(states, 1, dt, TrajMeta::default()).unwrap()
    }

    #[test]
    fn target_duration_examples() {
        assert_eq!(target_duration(&ramp(16, 1.0)), 16.0);
        assert_eq!(target_duration(&ramp(0, 0.05)), 0.0);
        assert!((target_duration(&ramp(20, 0.05)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn execution_time_examples() {
        let cfg = TimingConfig::new(1.0, 2.0, 4, 2).unwrap();
        assert_eq!(dp_execution_time(16, &cfg).unwrap(), 22.0);
        assert_eq!(dp_execution_time(12, &cfg).unwrap(), 16.0);
        assert_eq!(dp_execution_time(16, &cfg.with_delta(0.0)).unwrap(), 16.0);
        assert!(matches!(
            dp_execution_time(0, &cfg),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn non_divisible_chunks_use_ceiling() {
        let cfg = TimingConfig::new(1.0, 3.0, 4, 1).unwrap();
        // 5 chunks (last one short), 4 gaps.
        assert_eq!(dp_execution_time(17, &cfg).unwrap(), 17.0 + 12.0);
    }

    #[test]
    fn timing_config_rejects_bad_values() {
        assert!(TimingConfig::new(0.0, 0.0, 1, 1).is_err());
        assert!(TimingConfig::new(0.1, -0.1, 1, 1).is_err());
        assert!(TimingConfig::new(0.1, 0.0, 0, 1).is_err());
        assert!(TimingConfig::new(0.1, 0.0, 1, 0).is_err());
        assert!(TimingConfig::new(f64::NAN, 0.0, 1, 1).is_err());
    }

    #[test]
    fn validate_reports_first_violation() {
        let good = ramp(6, 0.1);
        assert_eq!(validate(&good), Ok(()));

        let mut short = good.clone();
        short.states.pop();
        assert!(matches!(
            validate(&short),
            Err(Violation::LengthMismatch { .. })
        ));
        assert!(validate(&short)
            .unwrap_err()
            .to_string()
            .contains("length mismatch"));

        let mut bent = good.clone();
        bent.actions[3][0] += 0.25;
        assert_eq!(
            validate(&bent),
            Err(Violation::DeltaConvention { index: 3 })
        );

        let mut ragged = good.clone();
        ragged.states[2].push(0.0);
        assert_eq!(validate(&ragged), Err(Violation::StateDim { index: 2 }));

        let mut nodt = good;
        nodt.dt = 0.0;
        assert_eq!(validate(&nodt), Err(Violation::NonPositiveDt));
    }

    #[test]
    fn constructor_rejects_structural_errors() {
        let err = Trajectory::new(vec![vec![0.0]], vec![vec![1.0]], 0.1, TrajMeta::default());
        assert!(err.is_err());
    }

    #[test]
    fn normalization_floors_constant_dimensions() {
        let norm = Normalization::fit([&ramp(4, 0.1)]).unwrap();
        assert_eq!(norm.state_scale[1], SCALE_FLOOR);
        assert_eq!(norm.action_scale[0], SCALE_FLOOR);
        assert!(norm.state_scale[0] > 0.5);
        assert_eq!(norm.state_mean[0], 1.0);
    }

    #[test]
    fn dataset_rejects_mixed_dimensions() {
        let a = ramp(3, 0.1);
        let b = Trajectory::from_states(vec![vec![0.0]; 4], 1, 0.1, TrajMeta::default()).unwrap();
        let err = Dataset::from_entries(vec![
            LabeledTrajectory {
                traj: a,
                delta: 0.0,
            },
            LabeledTrajectory {
                traj: b,
                delta: 0.0,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { record: 1, .. }));
    }
}
