//! Scripted experts.
//!
//! Object motion never depends on the agent, so each expert plans the whole
//! agent path up front from a dry run of the object, then executes it in the
//! environment and records what happened.

use super::{EnvState, RollingParams, TaskParams, TaskSpec};
use crate::error::{Error, Result};
use crate::trajectory::{TimingConfig, TrajMeta, Trajectory};

/// Zero-delay demonstration for `seed`.
///
/// Fails with [`Error::InfeasibleDemo`] when the plan needs more than the
/// per-step displacement limit or does not end in success.
pub fn expert_demo(spec: &TaskSpec, seed: u64, cfg: &TimingConfig) -> Result<Trajectory> {
    spec.check()?;
    cfg.check()?;
    let dt = cfg.dt;
    let start = spec.reset(seed);
    let plan = match &spec.params {
        TaskParams::Intercept(p) => {
            let n = whole_steps(p.arrival_time, dt)?;
            let (a, x) = (start.agent[0], start.goal[0]);
            (0..=n)
                .map(|i| vec![a + (x - a) * i as f64 / n as f64])
                .collect::<Vec<_>>()
        }
        TaskParams::RollingBall(p) => rolling_plan(spec, p, &start, dt)?,
    };

    let limit = spec.max_speed * dt;
    let mut state = start;
    let mut states = vec![state.observe()];
    for (i, w) in plan.windows(2).enumerate() {
        let disp: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        let norm = disp.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm > limit * (1.0 + 1e-12) {
            return Err(Error::InfeasibleDemo(format!(
                "seed {seed}: step {i} needs displacement {norm:.4} > limit {limit:.4}"
            )));
        }
        state = spec.step(&state, &disp, dt)?;
        states.push(state.observe());
    }
    if !spec.success(&state) {
        return Err(Error::InfeasibleDemo(format!(
            "seed {seed}: scripted plan does not end in success (error {:.4})",
            spec.final_error(&state)
        )));
    }
    Trajectory::from_states(
        states,
        spec.action_dim(),
        dt,
        TrajMeta {
            task: spec.kind().name().to_string(),
            seed,
            episode: 0,
        },
    )
}

fn whole_steps(duration: f64, dt: f64) -> Result<usize> {
    let r = duration / dt;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "duration {duration} is not a positive multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

/// Approach the ball along a cubic Hermite curve arriving with the ball's
/// velocity, ride along with it, then carry to the goal and stop.
fn rolling_plan(
    spec: &TaskSpec,
    p: &RollingParams,
    start: &EnvState,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let n_cap = whole_steps(p.capture_time, dt)?;
    let n_track = if p.track_time > 0.0 {
        whole_steps(p.track_time, dt)?
    } else {
        0
    };
    let n_carry = whole_steps(p.carry_time, dt)?;
    let n = n_cap + n_track + n_carry;
    if n as f64 * dt > spec.horizon + 1e-9 {
        return Err(Error::Config(
            "expert phases exceed the episode horizon".into(),
        ));
    }

    // Dry run of the ball alone.
    let mut ball = vec![(start.object.clone(), start.object_vel.clone())];
    let mut s = start.clone();
    for _ in 0..n_cap + n_track {
        s = spec.step(&s, &[0.0, 0.0], dt)?;
        ball.push((s.object.clone(), s.object_vel.clone()));
    }

    let mut plan = Vec::with_capacity(n + 1);
    let (meet, meet_vel) = &ball[n_cap];
    for i in 0..n_cap {
        plan.push(hermite(
            &start.agent,
            &[0.0, 0.0],
            meet,
            meet_vel,
            p.capture_time,
            i as f64 / n_cap as f64,
        ));
    }
    for (pos, _) in &ball[n_cap..] {
        plan.push(pos.clone());
    }
    let (leave, leave_vel) = &ball[n_cap + n_track];
    for i in 1..=n_carry {
        plan.push(hermite(
            leave,
            leave_vel,
            &p.goal,
            &[0.0, 0.0],
            p.carry_time,
            i as f64 / n_carry as f64,
        ));
    }
    Ok(plan)
}

fn hermite(p0: &[f64], v0: &[f64], p1: &[f64], v1: &[f64], duration: f64, s: f64) -> Vec<f64> {
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    (0..p0.len())
        .map(|k| h00 * p0[k] + h10 * duration * v0[k] + h01 * p1[k] + h11 * duration * v1[k])
        .collect()
}
