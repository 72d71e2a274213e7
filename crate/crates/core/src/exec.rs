//! Synchronous chunked execution under a simulated inference delay.
//!
//! Each cycle the policy sees the current observation window, the world then
//! runs for `delta` seconds with the agent held in place, and the returned
//! chunk is executed one action per control step. The first inference is
//! assumed to finish before `t = 0`, so it is not charged.

use std::time::Instant;

use rayon::prelude::*;

use crate::envs::{EnvState, TaskSpec};
use crate::error::{Error, Result};
use crate::trajectory::TimingConfig;

const TIME_EPS: f64 = 1e-9;

/// A chunked policy: maps an observation window and the delay it will be
/// subject to onto `h_act` actions. `None` means it has nothing left to do.
pub trait Policy {
    fn act(&mut self, obs: &[Vec<f64>], delta: f64) -> Result<Option<Vec<Vec<f64>>>>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&mut self, obs: &[Vec<f64>], delta: f64) -> Result<Option<Vec<Vec<f64>>>> {
        (**self).act(obs, delta)
    }
}

/// Open-loop replay of a fixed action sequence; the last chunk is padded with
/// zero actions.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    actions: Vec<Vec<f64>>,
    h_act: usize,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<Vec<f64>>, h_act: usize) -> Self {
        ReplayPolicy {
            actions,
            h_act,
            cursor: 0,
        }
    }
}

impl Policy for ReplayPolicy {
    fn act(&mut self, _obs: &[Vec<f64>], _delta: f64) -> Result<Option<Vec<Vec<f64>>>> {
        if self.cursor >= self.actions.len() {
            return Ok(None);
        }
        let dim = self.actions[0].len();
        let chunk = (self.cursor..self.cursor + self.h_act)
            .map(|i| {
                self.actions
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; dim])
            })
            .collect();
        self.cursor += self.h_act;
        Ok(Some(chunk))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DeltaSource {
    /// Use `cfg.delta`.
    #[default]
    Fixed,
    /// Time the policy on the initial observation and use the median.
    Measured { repetitions: usize },
}

/// Only synchronous execution is modelled, so the mode reduces to where the
/// delay value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExecMode {
    pub delta_source: DeltaSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    /// Time of the agent's closest approach to the target point (first one on
    /// ties).
    pub arrival_time: f64,
    pub final_error: f64,
    pub delta_used: f64,
    pub chunks_executed: usize,
    /// Wall-clock seconds spent inside `Policy::act`.
    pub wall_inference: f64,
    pub final_time: f64,
    /// Observation after reset and after every executed action.
    pub trace: Vec<Vec<f64>>,
}

fn window(history: &[Vec<f64>], h_obs: usize) -> Vec<Vec<f64>> {
    let h = h_obs.max(1);
    let start = history.len().saturating_sub(h);
    let mut w: Vec<Vec<f64>> = history[start..].to_vec();
    while w.len() < h {
        w.insert(0, w[0].clone());
    }
    w
}

pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    spec: &TaskSpec,
    cfg: &TimingConfig,
    mode: ExecMode,
    seed: u64,
) -> Result<EpisodeResult> {
    cfg.check()?;
    let dt = cfg.dt;
    let mut state = spec.reset(seed);
    let mut history = vec![state.observe()];
    let delta = match mode.delta_source {
        DeltaSource::Fixed => cfg.delta,
        DeltaSource::Measured { repetitions } => {
            measure_delay(policy, &window(&history, cfg.h_obs), repetitions)?
        }
    };

    let mut closest = (spec.goal_distance(&state), 0.0);
    let mut chunks = 0usize;
    let mut wall = 0.0;
    let mut done = spec.success(&state);
    let past_horizon = |s: &EnvState, extra: f64| s.time + extra > spec.horizon + TIME_EPS;

    while !done && !past_horizon(&state, 0.0) {
        let obs = window(&history, cfg.h_obs);
        let t0 = Instant::now();
        let out = policy.act(&obs, delta)?;
        wall += t0.elapsed().as_secs_f64();
        let Some(chunk) = out else { break };
        if chunk.len() != cfg.h_act {
            return Err(Error::ChunkLength {
                expected: cfg.h_act,
                found: chunk.len(),
            });
        }

        if chunks > 0 && delta > 0.0 {
            if past_horizon(&state, delta) {
                state = spec.hold(&state, spec.horizon - state.time, dt);
                break;
            }
            state = spec.hold(&state, delta, dt);
        }
        let mut executed = 0;
        let mut out_of_time = false;
        for action in &chunk {
            if past_horizon(&state, dt) {
                out_of_time = true;
                break;
            }
            state = spec.step(&state, action, dt)?;
            executed += 1;
            history.push(state.observe());
            let gap = spec.goal_distance(&state);
            if gap < closest.0 {
                closest = (gap, state.time);
            }
            if spec.success(&state) {
                done = true;
                break;
            }
        }
        if executed > 0 {
            chunks += 1;
        }
        if out_of_time {
            break;
        }
        if executed == chunk.len() {
            let expect = (chunks * cfg.h_act) as f64 * dt + (chunks - 1) as f64 * delta;
            assert!(
                (state.time - expect).abs() <= 1e-9 * expect.max(1.0),
                "timeline drift: t = {} after {chunks} chunks, expected {expect}",
                state.time
            );
        }
    }

    Ok(EpisodeResult {
        success: spec.success(&state),
        arrival_time: closest.1,
        final_error: spec.final_error(&state),
        delta_used: delta,
        chunks_executed: chunks,
        wall_inference: wall,
        final_time: state.time,
        trace: history,
    })
}

/// Median wall-clock seconds per policy call on `probe`.
pub fn measure_delay<P: Policy + ?Sized>(
    policy: &mut P,
    probe: &[Vec<f64>],
    repetitions: usize,
) -> Result<f64> {
    let mut times = Vec::with_capacity(repetitions.max(1));
    for _ in 0..repetitions.max(1) {
        let t0 = Instant::now();
        policy.act(probe, 0.0)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let m = times.len();
    Ok(if m % 2 == 1 {
        times[m / 2]
    } else {
        0.5 * (times[m / 2 - 1] + times[m / 2])
    })
}

/// Builds a fresh policy for one evaluation episode; the argument is the
/// episode seed so stochastic policies stay reproducible.
pub type PolicyFactory<'a> = dyn Fn(u64) -> Result<Box<dyn Policy>> + Sync + 'a;

pub struct Method<'a> {
    pub name: String,
    pub factory: Box<PolicyFactory<'a>>,
}

impl<'a> Method<'a> {
    pub fn new(
        name: impl Into<String>,
        factory: impl Fn(u64) -> Result<Box<dyn Policy>> + Sync + 'a,
    ) -> Self {
        Method {
            name: name.into(),
            factory: Box::new(factory),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub delta: f64,
    /// Successes over attempted episodes; failed episodes count as misses.
    pub success_rate: f64,
    pub episodes: usize,
    /// Success rate for each evaluation seed, in input order.
    pub per_seed: Vec<f64>,
    pub mean_arrival: Option<f64>,
    pub mean_final_error: Option<f64>,
    /// Episodes that ended in an error.
    pub failures: usize,
    pub first_failure: Option<String>,
}

/// Environment seed for episode `ep` of evaluation seed `seed`. Kept far away
/// from the small seeds used for training demonstrations.
pub fn episode_seed(seed: u64, ep: usize) -> u64 {
    (1u64 << 40) ^ seed.wrapping_mul(1_000_003).wrapping_add(ep as u64)
}

/// Success rate per (method, delta) over `episodes` rollouts for each seed.
/// Rows are ordered method-major, then by delta.
pub fn sweep(
    methods: &[Method<'_>],
    spec: &TaskSpec,
    cfg: &TimingConfig,
    deltas: &[f64],
    episodes: usize,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(Error::Config("sweep needs at least one delta".into()));
    }
    let mut jobs = Vec::new();
    for mi in 0..methods.len() {
        for di in 0..deltas.len() {
            for (si, &seed) in seeds.iter().enumerate() {
                for ep in 0..episodes {
                    jobs.push((mi, di, si, episode_seed(seed, ep)));
                }
            }
        }
    }
    let outcomes: Vec<Result<EpisodeResult>> = jobs
        .par_iter()
        .map(|&(mi, di, _, es)| {
            let c = cfg.with_delta(deltas[di]);
            let mut policy = (methods[mi].factory)(es)?;
            run_episode(&mut policy, spec, &c, ExecMode::default(), es)
        })
        .collect();

    #[derive(Default)]
    struct Acc {
        succ: usize,
        per_seed: Vec<usize>,
        failures: usize,
        first_failure: Option<String>,
        arrival: (f64, usize),
        error: (f64, usize),
    }
    let mut acc: Vec<Acc> = (0..methods.len() * deltas.len())
        .map(|_| Acc {
            per_seed: vec![0; seeds.len()],
            ..Acc::default()
        })
        .collect();
    for (&(mi, di, si, _), out) in jobs.iter().zip(&outcomes) {
        let a = &mut acc[mi * deltas.len() + di];
        match out {
            Ok(r) => {
                if r.success {
                    a.succ += 1;
                    a.per_seed[si] += 1;
                }
                a.arrival.0 += r.arrival_time;
                a.arrival.1 += 1;
                a.error.0 += r.final_error;
                a.error.1 += 1;
            }
            Err(e) => {
                a.failures += 1;
                a.first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }

    let total = episodes * seeds.len();
    let ratio = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    let rows = acc
        .into_iter()
        .enumerate()
        .map(|(i, a)| SweepRow {
            method: methods[i / deltas.len()].name.clone(),
            delta: deltas[i % deltas.len()],
            success_rate: ratio(a.succ, total),
            episodes: total,
            per_seed: a.per_seed.iter().map(|&k| ratio(k, episodes)).collect(),
            mean_arrival: mean(a.arrival),
            mean_final_error: mean(a.error),
            failures: a.failures,
            first_failure: a.first_failure,
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{expert_demo, TaskParams};

    struct Sleeper(std::time::Duration);
    impl Policy for Sleeper {
        fn act(&mut self, _: &[Vec<f64>], _: f64) -> Result<Option<Vec<Vec<f64>>>> {
            std::thread::sleep(self.0);
            Ok(Some(vec![vec![0.0]]))
        }
    }

    struct Fixed(usize);
    impl Policy for Fixed {
        fn act(&mut self, _: &[Vec<f64>], _: f64) -> Result<Option<Vec<Vec<f64>>>> {
            Ok(Some(vec![vec![0.0]; self.0]))
        }
    }

    #[test]
    fn window_pads_with_oldest() {
        let h = vec![vec![1.0], vec![2.0]];
        assert_eq!(window(&h, 3), vec![vec![1.0], vec![1.0], vec![2.0]]);
        assert_eq!(window(&h, 1), vec![vec![2.0]]);
    }

    #[test]
    fn replay_pads_last_chunk() {
        let mut p = ReplayPolicy::new(vec![vec![1.0]; 5], 4);
        assert_eq!(p.act(&[], 0.0).unwrap().unwrap().len(), 4);
        let last = p.act(&[], 0.0).unwrap().unwrap();
        assert_eq!(last, vec![vec![1.0], vec![0.0], vec![0.0], vec![0.0]]);
        assert!(p.act(&[], 0.0).unwrap().is_none());
    }

    #[test]
    fn wrong_chunk_length_is_an_error() {
        let spec = TaskSpec::intercept1d();
        let cfg = TimingConfig::new(0.05, 0.0, 8, 1).unwrap();
        let err = run_episode(&mut Fixed(3), &spec, &cfg, ExecMode::default(), 0).unwrap_err();
        assert!(matches!(
            err,
            Error::ChunkLength {
                expected: 8,
                found: 3
            }
        ));
    }

    #[test]
    fn expert_replay_without_delay_arrives_on_time() {
        let spec = TaskSpec::intercept1d();
        let cfg = TimingConfig::new(0.05, 0.0, 8, 1).unwrap();
        let demo = expert_demo(&spec, 3, &cfg).unwrap();
        let mut p = ReplayPolicy::new(demo.actions.clone(), 8);
        let r = run_episode(&mut p, &spec, &cfg, ExecMode::default(), 3).unwrap();
        assert!(r.success);
        assert_eq!(r.arrival_time, demo.final_state()[3]);
        assert_eq!(r.chunks_executed, 5);
    }

    struct Idle;

    impl Policy for Idle {
        fn act(&mut self, _: &[Vec<f64>], _: f64) -> Result<Option<Vec<Vec<f64>>>> {
            Ok(Some(vec![vec![0.0]; 8]))
        }
    }

    #[test]
    fn idle_policy_stops_at_the_horizon() {
        let spec = TaskSpec::intercept1d();
        for delta in [0.0, 0.05, 0.12] {
            let cfg = TimingConfig::new(0.05, delta, 8, 2).unwrap();
            let r = run_episode(&mut Idle, &spec, &cfg, ExecMode::default(), 0).unwrap();
            assert!(!r.success);
            assert!(r.final_time <= spec.horizon + 1e-9);
            assert!(
                r.final_time > spec.horizon - cfg.dt - 1e-9,
                "delta {delta}: {}",
                r.final_time
            );
        }
    }

    #[test]
    fn hold_keeps_agent_still() {
        let spec = TaskSpec::intercept1d();
        let cfg = TimingConfig::new(0.05, 0.1, 4, 1).unwrap();
        let demo = expert_demo(&spec, 1, &cfg.with_delta(0.0)).unwrap();
        let mut p = ReplayPolicy::new(demo.actions.clone(), 4);
        let r = run_episode(&mut p, &spec, &cfg, ExecMode::default(), 1).unwrap();
        // trace holds only executed steps: the agent position after step 4 is
        // the position the hold started from, and step 5 starts there too.
        let a4 = r.trace[4][0];
        let a5 = r.trace[5][0];
        assert!((a5 - a4 - demo.actions[4][0]).abs() < 1e-12);
        // The object moved through the hold: two extra steps of travel.
        let v = r.trace[0][2];
        assert!((r.trace[5][1] - r.trace[4][1] - 3.0 * 0.05 * v).abs() < 1e-12);
        assert!((r.trace[5][3] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn measured_delay_tracks_sleep() {
        let d = measure_delay(&mut Sleeper(std::time::Duration::from_millis(10)), &[], 10).unwrap();
        assert!((0.008..0.012).contains(&d), "{d}");
        let d = measure_delay(&mut Fixed(1), &[], 10).unwrap();
        assert!(d < 1e-3);
    }

    #[test]
    fn single_method_sweep_has_one_row() {
        let spec = TaskSpec::intercept1d();
        let cfg = TimingConfig::new(0.05, 0.0, 8, 1).unwrap();
        let methods = [Method::new("expert", |es| {
            let spec = TaskSpec::intercept1d();
            let cfg = TimingConfig::new(0.05, 0.0, 8, 1).unwrap();
            let demo = expert_demo(&spec, es, &cfg)?;
            Ok(Box::new(ReplayPolicy::new(demo.actions, 8)) as Box<dyn Policy>)
        })];
        let rows = sweep(&methods, &spec, &cfg, &[0.0], 10, &[0]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].success_rate, 1.0);
        assert_eq!(rows[0].episodes, 10);
        assert_eq!(rows[0].failures, 0);
        assert!(sweep(&methods, &spec, &cfg, &[], 10, &[0]).is_err());
    }

    #[test]
    fn factory_errors_land_in_failure_column() {
        let spec = TaskSpec::intercept1d();
        let cfg = TimingConfig::new(0.05, 0.0, 8, 1).unwrap();
        let methods = [Method::new("broken", |_| Err(Error::EmptyDataset))];
        let rows = sweep(&methods, &spec, &cfg, &[0.0, 0.1], 3, &[0, 1]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.failures == 6 && r.success_rate == 0.0));
    }

    #[test]
    fn rolling_expert_replay_succeeds() {
        let spec = TaskSpec::rollingball2d();
        let cfg = TimingConfig::new(0.05, 0.0, 8, 1).unwrap();
        assert!(matches!(spec.params, TaskParams::RollingBall(_)));
        let demo = expert_demo(&spec, 2, &cfg).unwrap();
        let mut p = ReplayPolicy::new(demo.actions.clone(), 8);
        let r = run_episode(&mut p, &spec, &cfg, ExecMode::default(), 2).unwrap();
        assert!(r.success);
    }
}
