//! Experiment configuration.
//!
//! Every value has a default, so an empty file is a valid configuration.
//! Delays are given in seconds.

use std::path::{Path, PathBuf};

use chunkdelay::diffusion::Optimizer;
use chunkdelay::{KvConfig, Result, TaskSpec, TimingConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    /// Zero-delay timing; evaluation swaps in each delay.
    pub timing: TimingConfig,
    /// Expert demonstrations per experiment.
    pub demos: usize,
    /// Smooth actuated coordinates of compressed demonstrations.
    pub smooth: bool,
    /// Delay grid for single-delay training runs.
    pub q1_deltas: Vec<f64>,
    /// Delay set for joint training.
    pub train_deltas: Vec<f64>,
    /// Added to every training delay for the shifted evaluation.
    pub shift: f64,
    pub train: TrainConfig,
    /// Evaluation episodes per seed.
    pub episodes: usize,
    pub eval_seeds: Vec<u64>,
    /// Master seed for demonstrations and training.
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dt = 0.05;
        ExperimentConfig {
            task: TaskSpec::intercept1d(),
            timing: TimingConfig::new(dt, 0.0, 8, 2).expect("valid default timing"),
            demos: 100,
            smooth: false,
            q1_deltas: vec![0.0, dt, 2.0 * dt, 4.0 * dt],
            train_deltas: vec![0.0, dt, 2.0 * dt],
            shift: 3.0 * dt,
            train: TrainConfig {
                steps: 6000,
                diffusion_steps: 50,
                log_every: 1000,
                ..TrainConfig::default()
            },
            episodes: 100,
            eval_seeds: vec![0, 1, 2],
            seed: 0,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    /// Reads `[task]`, `[timing]`, `[experiment]` and `[train]`.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = ExperimentConfig::default();
        let task = TaskSpec::from_config(kv)?;
        let timing = TimingConfig::new(
            kv.get_or("timing", "dt", d.timing.dt)?,
            0.0,
            kv.get_or("timing", "h_act", d.timing.h_act)?,
            kv.get_or("timing", "h_obs", d.timing.h_obs)?,
        )?;

        const E: &str = "experiment";
        let q1_deltas = kv.get_list(E, "q1_deltas")?.unwrap_or(d.q1_deltas);
        let train_deltas = kv.get_list(E, "train_deltas")?.unwrap_or(d.train_deltas);
        let eval_seeds = kv.get_list(E, "eval_seeds")?.unwrap_or(d.eval_seeds);
        let cfg = ExperimentConfig {
            task,
            timing,
            demos: kv.get_or(E, "demos", d.demos)?,
            smooth: kv.get_or(E, "smooth", d.smooth)?,
            q1_deltas,
            train_deltas,
            shift: kv.get_or(E, "shift", d.shift)?,
            train: train_from_kv(kv, &d.train, &timing)?,
            episodes: kv.get_or(E, "episodes", d.episodes)?,
            eval_seeds,
            seed: kv.get_or(E, "seed", d.seed)?,
            out: kv
                .get::<String>(E, "out")?
                .map(PathBuf::from)
                .unwrap_or(d.out),
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        use chunkdelay::Error;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.demos == 0 || self.episodes == 0 || self.eval_seeds.is_empty() {
            return bad("demos, episodes and eval_seeds must be non-empty");
        }
        if self.q1_deltas.is_empty() || self.train_deltas.is_empty() {
            return bad("delay lists must be non-empty");
        }
        let all = self.q1_deltas.iter().chain(&self.train_deltas);
        if all.clone().any(|d| !(d.is_finite() && *d >= 0.0)) || !(self.shift.is_finite()) {
            return bad("delays must be finite and non-negative");
        }
        for &d in all {
            self.timing.with_delta(d).check()?;
        }
        Ok(())
    }

    /// Delays for the shifted evaluation, rounded to 1e-12 s so sums like
    /// 0.05 + 0.15 print as written.
    pub fn shifted_deltas(&self) -> Vec<f64> {
        self.train_deltas
            .iter()
            .map(|d| ((d + self.shift) * 1e12).round() / 1e12)
            .collect()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        self.task.write_config(&mut kv);
        kv.set("timing", "dt", self.timing.dt);
        kv.set("timing", "h_act", self.timing.h_act);
        kv.set("timing", "h_obs", self.timing.h_obs);
        const E: &str = "experiment";
        kv.set(E, "demos", self.demos);
        kv.set(E, "smooth", self.smooth);
        kv.set(E, "q1_deltas", join(&self.q1_deltas));
        kv.set(E, "train_deltas", join(&self.train_deltas));
        kv.set(E, "shift", self.shift);
        kv.set(E, "episodes", self.episodes);
        kv.set(E, "eval_seeds", join(&self.eval_seeds));
        kv.set(E, "seed", self.seed);
        kv.set(E, "out", self.out.display());
        let t = &self.train;
        const T: &str = "train";
        kv.set(T, "steps", t.steps);
        kv.set(T, "batch_size", t.batch_size);
        kv.set(T, "lr", t.lr);
        kv.set(T, "warmup", t.warmup);
        kv.set(T, "optimizer", t.optimizer.name());
        kv.set(T, "momentum", t.momentum);
        kv.set(T, "weight_decay", t.weight_decay);
        kv.set(T, "grad_clip", t.grad_clip);
        kv.set(T, "diffusion_steps", t.diffusion_steps);
        kv.set(T, "width", t.width);
        kv.set(T, "enc_width", t.enc_width);
        kv.set(T, "emb_dim", t.emb_dim);
        kv.set(T, "align_delayed", t.align_delayed);
        kv.set(T, "log_every", t.log_every);
        kv
    }

    /// Training configuration for the baseline: no delay input, stride-1
    /// windows.
    pub fn dp_train(&self) -> TrainConfig {
        TrainConfig {
            delay_conditioned: false,
            align_delayed: false,
            ..self.train.clone()
        }
    }

    /// Training configuration for the delay-aware policy.
    pub fn da_train(&self) -> TrainConfig {
        TrainConfig {
            delay_conditioned: true,
            ..self.train.clone()
        }
    }
}

fn train_from_kv(kv: &KvConfig, d: &TrainConfig, timing: &TimingConfig) -> Result<TrainConfig> {
    const T: &str = "train";
    let optimizer = match kv.raw(T, "optimizer") {
        Some(s) => Optimizer::parse(s)?,
        None => d.optimizer,
    };
    Ok(TrainConfig {
        steps: kv.get_or(T, "steps", d.steps)?,
        batch_size: kv.get_or(T, "batch_size", d.batch_size)?,
        lr: kv.get_or(T, "lr", d.lr)?,
        warmup: kv.get_or(T, "warmup", d.warmup)?,
        optimizer,
        momentum: kv.get_or(T, "momentum", d.momentum)?,
        weight_decay: kv.get_or(T, "weight_decay", d.weight_decay)?,
        grad_clip: kv.get_or(T, "grad_clip", d.grad_clip)?,
        diffusion_steps: kv.get_or(T, "diffusion_steps", d.diffusion_steps)?,
        width: kv.get_or(T, "width", d.width)?,
        enc_width: kv.get_or(T, "enc_width", d.enc_width)?,
        emb_dim: kv.get_or(T, "emb_dim", d.emb_dim)?,
        h_obs: timing.h_obs,
        h_act: timing.h_act,
        delay_conditioned: true,
        align_delayed: kv.get_or(T, "align_delayed", d.align_delayed)?,
        log_every: kv.get_or(T, "log_every", d.log_every)?,
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}
