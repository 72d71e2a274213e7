//! Desk-scale dynamic tasks.
//!
//! * `intercept1d`: an object slides along a line at constant speed; the
//!   agent, starting at `agent_start`, must be where the object is at a fixed
//!   arrival time.
//! * `rollingball2d`: a ball rolls on a plane with linear friction; the agent
//!   must meet it with matching velocity (capture) and then reach a goal.
//!
//! Agents move by delta-position actions clamped to `max_speed * dt` per step.
//! Objects never react to the agent.

mod expert;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};

pub use expert::expert_demo;

/// Slack used when comparing accumulated times against deadlines.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Intercept1d,
    RollingBall2d,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Intercept1d => "intercept1d",
            TaskKind::RollingBall2d => "rollingball2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intercept1d" => Ok(TaskKind::Intercept1d),
            "rollingball2d" => Ok(TaskKind::RollingBall2d),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        rng.random_range(self.lo..=self.hi)
    }

    fn parse(s: &str) -> Option<Self> {
        let (a, b) = s.split_once(',')?;
        Some(Range::new(a.trim().parse().ok()?, b.trim().parse().ok()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterceptParams {
    pub agent_start: Range,
    pub x0: Range,
    pub v: Range,
    /// Time at which the object reaches the interception point.
    pub arrival_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingParams {
    pub agent_start: [f64; 2],
    pub ball_x: Range,
    pub ball_y: Range,
    pub vel_x: Range,
    pub vel_y: Range,
    /// Linear friction rate in 1/s: `w' = -friction * w`.
    pub friction: f64,
    pub speed_tolerance: f64,
    pub goal: [f64; 2],
    /// Expert timing: approach, ride along with the ball, carry to goal.
    pub capture_time: f64,
    pub track_time: f64,
    pub carry_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskParams {
    Intercept(InterceptParams),
    RollingBall(RollingParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub params: TaskParams,
    /// Success tolerance in task units.
    pub tolerance: f64,
    /// Episode horizon in seconds.
    pub horizon: f64,
    /// Agent speed limit in task units per second.
    pub max_speed: f64,
}

impl TaskSpec {
    pub fn intercept1d() -> Self {
        TaskSpec {
            params: TaskParams::Intercept(InterceptParams {
                agent_start: Range::new(-0.5, 0.5),
                x0: Range::new(1.0, 2.0),
                v: Range::new(0.5, 1.0),
                arrival_time: 2.0,
            }),
            tolerance: 0.15,
            horizon: 2.5,
            max_speed: 12.0,
        }
    }

    pub fn rollingball2d() -> Self {
        TaskSpec {
            params: TaskParams::RollingBall(RollingParams {
                agent_start: [0.0, 0.0],
                ball_x: Range::new(0.6, 1.0),
                ball_y: Range::new(-0.6, -0.2),
                vel_x: Range::new(-0.3, 0.0),
                vel_y: Range::new(0.4, 0.8),
                friction: 0.5,
                speed_tolerance: 0.25,
                goal: [0.0, 0.8],
                capture_time: 1.0,
                track_time: 0.2,
                carry_time: 1.0,
            }),
            tolerance: 0.05,
            horizon: 3.0,
            max_speed: 8.0,
        }
    }

    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Intercept1d => TaskSpec::intercept1d(),
            TaskKind::RollingBall2d => TaskSpec::rollingball2d(),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self.params {
            TaskParams::Intercept(_) => TaskKind::Intercept1d,
            TaskParams::RollingBall(_) => TaskKind::RollingBall2d,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.params {
            TaskParams::Intercept(_) => 1,
            TaskParams::RollingBall(_) => 2,
        }
    }

    /// Length of the observation vector produced by [`EnvState::observe`].
    pub fn state_dim(&self) -> usize {
        match self.params {
            TaskParams::Intercept(_) => 4,
            TaskParams::RollingBall(_) => 8,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        if !(self.horizon > 0.0) || !(self.max_speed > 0.0) {
            return bad("horizon and max_speed must be > 0");
        }
        let ranges: Vec<Range> = match &self.params {
            TaskParams::Intercept(p) => {
                if !(p.arrival_time > 0.0) {
                    return bad("arrival_time must be > 0");
                }
                vec![p.agent_start, p.x0, p.v]
            }
            TaskParams::RollingBall(p) => {
                if !(p.friction >= 0.0) || !(p.speed_tolerance > 0.0) {
                    return bad("friction must be >= 0 and speed_tolerance > 0");
                }
                if !(p.capture_time > 0.0 && p.track_time >= 0.0 && p.carry_time > 0.0) {
                    return bad("expert phase times must be positive");
                }
                vec![p.ball_x, p.ball_y, p.vel_x, p.vel_y]
            }
        };
        if ranges.iter().any(|r| !(r.lo < r.hi)) {
            return bad("initial-condition ranges must satisfy lo < hi");
        }
        Ok(())
    }

    /// Reads `[task]` from a key = value config; absent keys keep the task's
    /// defaults.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        const S: &str = "task";
        let kind = TaskKind::parse(cfg.raw(S, "id").unwrap_or("intercept1d"))?;
        let mut spec = TaskSpec::default_for(kind);
        spec.tolerance = cfg.get_or(S, "tolerance", spec.tolerance)?;
        spec.horizon = cfg.get_or(S, "horizon", spec.horizon)?;
        spec.max_speed = cfg.get_or(S, "max_speed", spec.max_speed)?;
        let range = |key: &str, default: Range| -> Result<Range> {
            match cfg.raw(S, key) {
                None => Ok(default),
                Some(v) => Range::parse(v)
                    .ok_or_else(|| Error::Config(format!("[task] {key}: expected `lo, hi`"))),
            }
        };
        let pair = |key: &str, default: [f64; 2]| -> Result<[f64; 2]> {
            range(key, Range::new(default[0], default[1])).map(|r| [r.lo, r.hi])
        };
        match &mut spec.params {
            TaskParams::Intercept(p) => {
                p.agent_start = range("agent_start", p.agent_start)?;
                p.x0 = range("x0", p.x0)?;
                p.v = range("v", p.v)?;
                p.arrival_time = cfg.get_or(S, "arrival_time", p.arrival_time)?;
            }
            TaskParams::RollingBall(p) => {
                p.agent_start = pair("agent_start", p.agent_start)?;
                p.ball_x = range("ball_x", p.ball_x)?;
                p.ball_y = range("ball_y", p.ball_y)?;
                p.vel_x = range("vel_x", p.vel_x)?;
                p.vel_y = range("vel_y", p.vel_y)?;
                p.friction = cfg.get_or(S, "friction", p.friction)?;
                p.speed_tolerance = cfg.get_or(S, "speed_tolerance", p.speed_tolerance)?;
                p.goal = pair("goal", p.goal)?;
                p.capture_time = cfg.get_or(S, "capture_time", p.capture_time)?;
                p.track_time = cfg.get_or(S, "track_time", p.track_time)?;
                p.carry_time = cfg.get_or(S, "carry_time", p.carry_time)?;
            }
        }
        spec.check()?;
        Ok(spec)
    }

    /// Writes every field into `[task]`.
    pub fn write_config(&self, cfg: &mut KvConfig) {
        const S: &str = "task";
        let r = |r: Range| format!("{}, {}", r.lo, r.hi);
        cfg.set(S, "id", self.kind().name());
        cfg.set(S, "tolerance", self.tolerance);
        cfg.set(S, "horizon", self.horizon);
        cfg.set(S, "max_speed", self.max_speed);
        match &self.params {
            TaskParams::Intercept(p) => {
                cfg.set(S, "agent_start", r(p.agent_start));
                cfg.set(S, "x0", r(p.x0));
                cfg.set(S, "v", r(p.v));
                cfg.set(S, "arrival_time", p.arrival_time);
            }
            TaskParams::RollingBall(p) => {
                cfg.set(
                    S,
                    "agent_start",
                    format!("{}, {}", p.agent_start[0], p.agent_start[1]),
                );
                cfg.set(S, "ball_x", r(p.ball_x));
                cfg.set(S, "ball_y", r(p.ball_y));
                cfg.set(S, "vel_x", r(p.vel_x));
                cfg.set(S, "vel_y", r(p.vel_y));
                cfg.set(S, "friction", p.friction);
                cfg.set(S, "speed_tolerance", p.speed_tolerance);
                cfg.set(S, "goal", format!("{}, {}", p.goal[0], p.goal[1]));
                cfg.set(S, "capture_time", p.capture_time);
                cfg.set(S, "track_time", p.track_time);
                cfg.set(S, "carry_time", p.carry_time);
            }
        }
    }

    /// Deterministic initial state for `seed`.
    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.params {
            TaskParams::Intercept(p) => {
                let x0 = p.x0.sample(&mut rng);
                let v = p.v.sample(&mut rng);
                let a = p.agent_start.sample(&mut rng);
                EnvState {
                    agent: vec![a],
                    agent_vel: vec![0.0],
                    object: vec![x0],
                    object_vel: vec![v],
                    time: 0.0,
                    captured: false,
                    goal: vec![x0 + v * p.arrival_time],
                    arrival_error: None,
                }
            }
            TaskParams::RollingBall(p) => {
                let bx = p.ball_x.sample(&mut rng);
                let by = p.ball_y.sample(&mut rng);
                let wx = p.vel_x.sample(&mut rng);
                let wy = p.vel_y.sample(&mut rng);
                EnvState {
                    agent: p.agent_start.to_vec(),
                    agent_vel: vec![0.0; 2],
                    object: vec![bx, by],
                    object_vel: vec![wx, wy],
                    time: 0.0,
                    captured: false,
                    goal: p.goal.to_vec(),
                    arrival_error: None,
                }
            }
        }
    }

    /// Moves the agent by `action` (clamped to `max_speed * dt`) and
    /// advances the object by `dt`.
    pub fn step(&self, state: &EnvState, action: &[f64], dt: f64) -> Result<EnvState> {
        if action.len() != self.action_dim() {
            return Err(Error::Shape {
                expected: self.action_dim(),
                found: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteAction);
        }
        let limit = self.max_speed * dt;
        let norm = action.iter().map(|a| a * a).sum::<f64>().sqrt();
        let disp: Vec<f64> = if norm > limit {
            action.iter().map(|a| a * limit / norm).collect()
        } else {
            action.to_vec()
        };
        let mut next = state.clone();
        self.advance(&mut next, &disp, dt);
        Ok(next)
    }

    /// Zero-order hold: the agent stays put while the world runs for
    /// `duration` seconds, as whole `dt` steps followed by one fractional step.
    pub fn hold(&self, state: &EnvState, duration: f64, dt: f64) -> EnvState {
        let mut next = state.clone();
        let zero = vec![0.0; self.action_dim()];
        let (whole, frac) = split_steps(duration, dt);
        for _ in 0..whole {
            self.advance(&mut next, &zero, dt);
        }
        if frac > 0.0 {
            self.advance(&mut next, &zero, frac * dt);
        }
        next
    }

    fn advance(&self, s: &mut EnvState, disp: &[f64], dt: f64) {
        let old_agent = s.agent.clone();
        let old_object = s.object.clone();
        let old_time = s.time;
        for ((a, v), d) in s.agent.iter_mut().zip(s.agent_vel.iter_mut()).zip(disp) {
            *a += d;
            *v = d / dt;
        }
        match &self.params {
            TaskParams::Intercept(p) => {
                s.object[0] += s.object_vel[0] * dt;
                s.time += dt;
                if s.arrival_error.is_none() && s.time >= p.arrival_time - TIME_EPS {
                    // Both bodies move linearly within a step, so the gap at
                    // the exact arrival instant is an interpolation.
                    let f = ((p.arrival_time - old_time) / dt).clamp(0.0, 1.0);
                    let agent = old_agent[0] + f * disp[0];
                    let object = old_object[0] + f * (s.object[0] - old_object[0]);
                    s.arrival_error = Some((agent - object).abs());
                }
            }
            TaskParams::RollingBall(p) => {
                let mut ball_vel = [0.0; 2];
                ball_vel.copy_from_slice(&s.object_vel[..2]);
                for k in 0..2 {
                    s.object[k] += s.object_vel[k] * dt;
                    s.object_vel[k] -= p.friction * s.object_vel[k] * dt;
                }
                s.time += dt;
                if !s.captured {
                    let gap = dist(&s.agent, &s.object);
                    let slip = dist(&s.agent_vel, &ball_vel);
                    if gap <= self.tolerance && slip <= p.speed_tolerance {
                        s.captured = true;
                    }
                }
            }
        }
    }

    /// Task success for the state reached so far.
    ///
    /// `intercept1d` succeeds iff the agent was within tolerance of the
    /// object at the arrival time; `rollingball2d` iff the ball was captured
    /// and the agent is within tolerance of the goal before the horizon.
    pub fn success(&self, state: &EnvState) -> bool {
        match self.params {
            TaskParams::Intercept(_) => state.arrival_error.is_some_and(|e| e <= self.tolerance),
            TaskParams::RollingBall(_) => {
                state.captured
                    && state.time <= self.horizon + TIME_EPS
                    && dist(&state.agent, &state.goal) <= self.tolerance
            }
        }
    }

    /// Error reported for an episode ending in `state`.
    pub fn final_error(&self, state: &EnvState) -> f64 {
        match self.params {
            TaskParams::Intercept(_) => state
                .arrival_error
                .unwrap_or_else(|| dist(&state.agent, &state.object)),
            TaskParams::RollingBall(_) => dist(&state.agent, &state.goal),
        }
    }

    /// Distance from the agent to the task's target point.
    pub fn goal_distance(&self, state: &EnvState) -> f64 {
        dist(&state.agent, &state.goal)
    }
}

/// Splits a duration into whole control steps and a fractional remainder,
/// snapping ratios within 1e-9 of an integer.
pub fn split_steps(duration: f64, dt: f64) -> (usize, f64) {
    let ratio = duration / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 {
        (nearest.max(0.0) as usize, 0.0)
    } else {
        let whole = ratio.floor();
        (whole as usize, ratio - whole)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub agent: Vec<f64>,
    pub agent_vel: Vec<f64>,
    pub object: Vec<f64>,
    pub object_vel: Vec<f64>,
    pub time: f64,
    /// `rollingball2d` only: the ball has been met with matching velocity.
    pub captured: bool,
    /// Point the agent has to reach: the interception point or the carry goal.
    pub goal: Vec<f64>,
    /// `intercept1d` only: agent-object gap at the arrival time, once passed.
    pub arrival_error: Option<f64>,
}

impl EnvState {
    /// Observation vector; the first `action_dim` entries are the actuated
    /// agent coordinates.
    ///
    /// `intercept1d`: `[agent, object, object_vel, time]`;
    /// `rollingball2d`: `[agent_x, agent_y, ball_x, ball_y, ball_vx, ball_vy, captured, time]`.
    pub fn observe(&self) -> Vec<f64> {
        let mut obs = self.agent.clone();
        obs.extend_from_slice(&self.object);
        obs.extend_from_slice(&self.object_vel);
        if self.agent.len() == 2 {
            obs.push(if self.captured { 1.0 } else { 0.0 });
        }
        obs.push(self.time);
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_in_range() {
        let spec = TaskSpec::intercept1d();
        for seed in 0..50 {
            let a = spec.reset(seed);
            assert_eq!(a, spec.reset(seed));
            assert!((1.0..=2.0).contains(&a.object[0]));
            assert!((0.5..=1.0).contains(&a.object_vel[0]));
        }
        assert_ne!(spec.reset(1), spec.reset(2));
    }

    #[test]
    fn zero_action_moves_only_the_object() {
        let spec = TaskSpec::intercept1d();
        let mut s = spec.reset(3);
        s.object_vel[0] = 1.0;
        let next = spec.step(&s, &[0.0], 0.05).unwrap();
        assert_eq!(next.agent, s.agent);
        assert!((next.object[0] - (s.object[0] + 0.05)).abs() < 1e-15);
        assert!((next.time - 0.05).abs() < 1e-15);
    }

    #[test]
    fn displacement_saturates_at_clamp() {
        let spec = TaskSpec::intercept1d();
        let s = spec.reset(0);
        let next = spec.step(&s, &[5.0], 0.05).unwrap();
        assert!((next.agent[0] - s.agent[0] - spec.max_speed * 0.05).abs() < 1e-12);

        let ball = TaskSpec::rollingball2d();
        let s = ball.reset(0);
        let next = ball.step(&s, &[3.0, 4.0], 0.05).unwrap();
        let moved = dist(&next.agent, &s.agent);
        assert!((moved - ball.max_speed * 0.05).abs() < 1e-12);
        // Direction is preserved.
        assert!(
            ((next.agent[1] - s.agent[1]) / (next.agent[0] - s.agent[0]) - 4.0 / 3.0).abs() < 1e-12
        );
    }

    #[test]
    fn bad_actions_are_rejected() {
        let spec = TaskSpec::intercept1d();
        let s = spec.reset(0);
        assert!(matches!(
            spec.step(&s, &[f64::NAN], 0.05),
            Err(Error::NonFiniteAction)
        ));
        assert!(matches!(
            spec.step(&s, &[0.0, 0.0], 0.05),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn friction_matches_euler_oracle() {
        let spec = TaskSpec::rollingball2d();
        let TaskParams::RollingBall(p) = &spec.params else {
            unreachable!()
        };
        let dt = 0.05;
        let s0 = spec.reset(11);
        let mut s = s0.clone();
        for _ in 0..30 {
            s = spec.step(&s, &[0.0, 0.0], dt).unwrap();
        }
        let decay: f64 = 1.0 - p.friction * dt;
        for k in 0..2 {
            let w0 = s0.object_vel[k];
            let expect_v = w0 * decay.powi(30);
            let expect_x = s0.object[k] + w0 * dt * (0..30).map(|i| decay.powi(i)).sum::<f64>();
            assert!((s.object_vel[k] - expect_v).abs() < 1e-12);
            assert!((s.object[k] - expect_x).abs() < 1e-12);
        }
    }

    #[test]
    fn hold_advances_world_only() {
        let spec = TaskSpec::intercept1d();
        let s = spec.reset(5);
        let held = spec.hold(&s, 0.15, 0.05);
        assert_eq!(held.agent, s.agent);
        assert!((held.time - 0.15).abs() < 1e-12);
        assert!((held.object[0] - s.object[0] - 3.0 * 0.05 * s.object_vel[0]).abs() < 1e-12);
        // Fractional hold keeps the linear motion exact.
        let held = spec.hold(&s, 0.07, 0.05);
        assert!((held.time - 0.07).abs() < 1e-12);
        assert!((held.object[0] - s.object[0] - 0.07 * s.object_vel[0]).abs() < 1e-12);
    }

    #[test]
    fn split_steps_snaps_near_integers() {
        assert_eq!(split_steps(0.15, 0.05), (3, 0.0));
        assert_eq!(split_steps(0.0, 0.05), (0, 0.0));
        let (w, f) = split_steps(0.07, 0.05);
        assert_eq!(w, 1);
        assert!((f - 0.4).abs() < 1e-12);
    }

    #[test]
    fn intercept_success_boundary() {
        let spec = TaskSpec::intercept1d();
        let mut s = spec.reset(0);
        s.arrival_error = Some(0.0);
        assert!(spec.success(&s));
        s.arrival_error = Some(spec.tolerance + 0.01);
        assert!(!spec.success(&s));
        s.arrival_error = None;
        assert!(!spec.success(&s));
    }

    #[test]
    fn rolling_success_requires_capture() {
        let spec = TaskSpec::rollingball2d();
        let mut s = spec.reset(0);
        s.agent = s.goal.clone();
        assert!(!spec.success(&s));
        s.captured = true;
        assert!(spec.success(&s));
    }

    #[test]
    fn arrival_gap_is_measured_at_the_deadline() {
        let mut spec = TaskSpec::intercept1d();
        let TaskParams::Intercept(p) = &mut spec.params else {
            unreachable!()
        };
        p.arrival_time = 0.125;
        let s = spec.reset(2);
        let dt = 0.05;
        let mut st = s.clone();
        for _ in 0..3 {
            st = spec.step(&st, &[0.1], dt).unwrap();
        }
        // At t = 0.125 the agent has moved 2.5 steps of 0.1.
        let expect = (s.agent[0] + 0.25 - (s.object[0] + 0.125 * s.object_vel[0])).abs();
        assert!((st.arrival_error.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip() {
        for spec in [TaskSpec::intercept1d(), TaskSpec::rollingball2d()] {
            let mut cfg = KvConfig::default();
            spec.write_config(&mut cfg);
            assert_eq!(TaskSpec::from_config(&cfg).unwrap(), spec);
        }
        let cfg = KvConfig::parse("[task]\nid = intercept1d\nx0 = 2, 1\n").unwrap();
        assert!(TaskSpec::from_config(&cfg).is_err());
    }
}
