//! Experiment stages: demonstrations, delay datasets, training and sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use chunkdelay::compress::CompressionRecord;
use chunkdelay::diffusion::TrainReport;
use chunkdelay::{
    build_delay_dataset, expert_demo, load_model, save_dataset, save_model, sweep, Dataset,
    DiffusionModel, DiffusionPolicy, Error, LabeledTrajectory, Method, Policy, SweepRow, TaskSpec,
    TimingConfig, TrainConfig, Trajectory,
};

use crate::config::ExperimentConfig;
use crate::report::{pooled_csv, read_plot_rows, render_svg, sweep_csv, write_file, ChartKind};

pub const DP: &str = "dp";
pub const DA_DP: &str = "da-dp";

/// Directory name for a delay, e.g. `delta_0.0500`.
pub fn delta_tag(delta: f64) -> String {
    format!("delta_{delta:.4}")
}

/// `<out>/data/<task>/<delta-tag>/<seed>.traj`.
pub fn dataset_path(out: &Path, task: &TaskSpec, delta_tag: &str, seed: u64) -> PathBuf {
    out.join("data")
        .join(task.kind().name())
        .join(delta_tag)
        .join(format!("{seed}.traj"))
}

/// Environment seed of demonstration `i` under master seed `seed`.
pub fn demo_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(1_000_000).wrapping_add(i)
}

/// `count` expert demonstrations. Infeasible initial conditions are skipped
/// and logged; giving up after `10 * count` attempts.
pub fn generate_demos(
    task: &TaskSpec,
    timing: &TimingConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        if i >= 10 * count as u64 {
            anyhow::bail!(Error::InfeasibleDemo(format!(
                "only {} of {count} demonstrations feasible after {i} attempts",
                out.len()
            )));
        }
        match expert_demo(task, demo_seed(seed, i), &timing.with_delta(0.0)) {
            Ok(t) => out.push(t),
            Err(Error::InfeasibleDemo(m)) => log::warn!("skipping demo: {m}"),
            Err(e) => return Err(e.into()),
        }
        i += 1;
    }
    Ok(out)
}

pub fn demo_dataset(demos: &[Trajectory]) -> Result<Dataset> {
    let entries = demos
        .iter()
        .map(|t| LabeledTrajectory {
            traj: t.clone(),
            delta: 0.0,
        })
        .collect();
    Ok(Dataset::from_entries(entries)?)
}

/// A trained model with the data transformation that produced it.
pub struct Trained {
    pub name: String,
    pub model: Arc<DiffusionModel>,
    pub deltas: Vec<f64>,
    pub records: Vec<CompressionRecord>,
    pub dropped: Vec<String>,
    pub report: TrainReport,
}

/// Baseline: zero-delay data, no delay input.
pub fn train_dp(demos: &[Trajectory], cfg: &ExperimentConfig) -> Result<Trained> {
    train_on(DP, demos, &[0.0], &cfg.dp_train(), cfg)
}

/// Delay-aware policy: each demonstration compressed for every delay in
/// `deltas`, labeled and pooled.
pub fn train_da(demos: &[Trajectory], deltas: &[f64], cfg: &ExperimentConfig) -> Result<Trained> {
    train_on(DA_DP, demos, deltas, &cfg.da_train(), cfg)
}

fn train_on(
    name: &str,
    demos: &[Trajectory],
    deltas: &[f64],
    tc: &TrainConfig,
    cfg: &ExperimentConfig,
) -> Result<Trained> {
    let built = build_delay_dataset(demos, deltas, &cfg.timing, cfg.smooth)?;
    let dropped: Vec<String> = built.failures.iter().map(|f| f.error.to_string()).collect();
    for d in &dropped {
        log::warn!("{d}");
    }
    log::info!(
        "training {name} on {} trajectories, deltas {deltas:?}",
        built.dataset.len()
    );
    let (model, report) = chunkdelay::train(&built.dataset, tc, cfg.seed)?;
    log::info!(
        "trained {name}: final loss {:.5}",
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(Trained {
        name: name.to_string(),
        model: Arc::new(model),
        deltas: deltas.to_vec(),
        records: built.records,
        dropped,
        report,
    })
}

pub fn policy_method(name: &str, model: Arc<DiffusionModel>) -> Method<'static> {
    Method::new(name, move |s| {
        Ok(Box::new(DiffusionPolicy::new(model.clone(), s)) as Box<dyn Policy>)
    })
}

pub fn evaluate(
    methods: &[Method<'_>],
    deltas: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepRow>> {
    Ok(sweep(
        methods,
        &cfg.task,
        &cfg.timing,
        deltas,
        cfg.episodes,
        &cfg.eval_seeds,
    )?)
}

/// What an experiment wrote and measured.
#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<SweepRow>,
    /// Stage failures as `(delay, message)`; the other cells still ran.
    pub errors: Vec<(f64, String)>,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn rate(&self, method: &str, delta: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.delta - delta).abs() < 1e-12)
            .map(|r| r.success_rate)
    }

    /// Episode-weighted success over all rows of `method`.
    pub fn pooled_rate(&self, method: &str) -> Option<f64> {
        let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.method == method).collect();
        let n: usize = rows.iter().map(|r| r.episodes).sum();
        (n > 0).then(|| {
            rows.iter()
                .map(|r| r.success_rate * r.episodes as f64)
                .sum::<f64>()
                / n as f64
        })
    }
}

struct Outputs<'a> {
    dir: PathBuf,
    cfg: &'a ExperimentConfig,
    files: Vec<PathBuf>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a ExperimentConfig, name: &str) -> Self {
        Outputs {
            dir: cfg.out.join(name),
            cfg,
            files: Vec::new(),
        }
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(file);
        write_file(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }

    fn checkpoint(&mut self, file: &str, model: &DiffusionModel) -> Result<()> {
        let p = self.cfg.out.join("models").join(file);
        save_model(model, &p)?;
        self.files.push(p);
        Ok(())
    }

    fn dataset(&mut self, tag: &str, ds: &Dataset) -> Result<()> {
        let p = dataset_path(&self.cfg.out, &self.cfg.task, tag, self.cfg.seed);
        save_dataset(ds, &p)?;
        self.files.push(p);
        Ok(())
    }

    fn sweep_outputs(&mut self, stem: &str, title: &str, rows: &[SweepRow]) -> Result<()> {
        let csv = sweep_csv(rows)?;
        self.write(&format!("{stem}.csv"), &csv)?;
        if !rows.is_empty() {
            let plot = read_plot_rows(std::str::from_utf8(&csv)?)?;
            self.write(
                &format!("{stem}.svg"),
                render_svg(&plot, title, ChartKind::Lines)?.as_bytes(),
            )?;
        }
        Ok(())
    }
}

/// Traceability record: the configuration, every model's delay labels, N'
/// values and skip schedules.
fn manifest(
    cfg: &ExperimentConfig,
    models: &[(&str, &Trained)],
    errors: &[(f64, String)],
) -> String {
    let mut s = String::from("# configuration\n");
    s.push_str(&cfg.to_kv().render());
    for (file, t) in models {
        let _ = writeln!(
            s,
            "# model {} ({file}): deltas {:?}, {} trajectories, {} windows, final loss {}",
            t.name,
            t.deltas,
            t.records.len(),
            t.report.windows,
            t.report.losses.last().copied().unwrap_or(f64::NAN)
        );
        for d in &t.dropped {
            let _ = writeln!(s, "# dropped: {d}");
        }
        s.push_str("source_index,delta,source_len,n_prime,collapsed,skip_schedule\n");
        for r in &t.records {
            let sched: Vec<String> = r.skip_schedule.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.source_index,
                r.delta,
                r.source_len,
                r.n_prime,
                r.collapsed,
                sched.join(";")
            );
        }
    }
    for (d, e) in errors {
        let _ = writeln!(s, "# error at delta {d}: {e}");
    }
    s
}

/// Single-delay runs: for each delay a delay-aware policy trained on data
/// compressed for that delay alone, against the baseline trained on the
/// zero-delay demonstrations. The baseline data does not depend on the delay,
/// so it is trained once.
pub fn cmd_q1(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.check()?;
    let mut out = Outputs::new(cfg, "q1");
    let demos = generate_demos(&cfg.task, &cfg.timing, cfg.demos, cfg.seed)?;
    out.dataset(&delta_tag(0.0), &demo_dataset(&demos)?)?;
    let dp = train_dp(&demos, cfg)?;
    out.checkpoint("q1_dp.ckpt", &dp.model)?;

    let mut errors = Vec::new();
    let mut da_models = Vec::new();
    for &delta in &cfg.q1_deltas {
        match train_da(&demos, &[delta], cfg) {
            Ok(t) => {
                let file = format!("q1_da_{}.ckpt", delta_tag(delta));
                out.checkpoint(&file, &t.model)?;
                da_models.push((delta, file, t));
            }
            Err(e) => {
                log::error!("delta {delta}: {e:#}");
                errors.push((delta, format!("{e:#}")));
            }
        }
    }

    let mut dp_rows = Vec::new();
    let mut da_rows = Vec::new();
    let dp_method = [policy_method(DP, dp.model.clone())];
    for &delta in &cfg.q1_deltas {
        match evaluate(&dp_method, &[delta], cfg) {
            Ok(r) => dp_rows.extend(r),
            Err(e) => errors.push((delta, format!("{e:#}"))),
        }
    }
    for (delta, _, t) in &da_models {
        match evaluate(&[policy_method(DA_DP, t.model.clone())], &[*delta], cfg) {
            Ok(r) => da_rows.extend(r),
            Err(e) => errors.push((*delta, format!("{e:#}"))),
        }
    }
    let mut rows = dp_rows;
    rows.extend(da_rows);
    out.sweep_outputs("q1", "Single-delay training", &rows)?;

    let mut named: Vec<(&str, &Trained)> = vec![("q1_dp.ckpt", &dp)];
    named.extend(da_models.iter().map(|(_, f, t)| (f.as_str(), t)));
    out.write("manifest.txt", manifest(cfg, &named, &errors).as_bytes())?;
    Ok(Report {
        rows,
        errors,
        files: out.files,
    })
}

/// One delay-aware policy trained jointly on the delay set and the baseline,
/// both evaluated on every delay of the set.
pub fn cmd_q2(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.check()?;
    if cfg.train_deltas.len() < 2 {
        anyhow::bail!(Error::Config(
            "joint training needs at least two training delays".into()
        ));
    }
    let mut out = Outputs::new(cfg, "q2");
    let demos = generate_demos(&cfg.task, &cfg.timing, cfg.demos, cfg.seed)?;
    out.dataset(&delta_tag(0.0), &demo_dataset(&demos)?)?;
    let dp = train_dp(&demos, cfg)?;
    let da = train_da(&demos, &cfg.train_deltas, cfg)?;
    out.checkpoint("q2_dp.ckpt", &dp.model)?;
    out.checkpoint("q2_da.ckpt", &da.model)?;
    let methods = [
        policy_method(DP, dp.model.clone()),
        policy_method(DA_DP, da.model.clone()),
    ];
    let rows = evaluate(&methods, &cfg.train_deltas, cfg)?;
    out.sweep_outputs("q2", "Joint training on a delay set", &rows)?;
    out.write("q2_pooled.csv", &pooled_csv(&rows)?)?;
    let named = [("q2_dp.ckpt", &dp), ("q2_da.ckpt", &da)];
    out.write("manifest.txt", manifest(cfg, &named, &[]).as_bytes())?;
    Ok(Report {
        rows,
        errors: Vec::new(),
        files: out.files,
    })
}

/// Loads the jointly trained models and evaluates them on the shifted delay
/// set without retraining. The delay-aware policy is conditioned on the
/// shifted delay.
pub fn cmd_q3(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.check()?;
    let mut out = Outputs::new(cfg, "q3");
    let load = |f: &str| -> Result<Arc<DiffusionModel>> {
        let p = cfg.out.join("models").join(f);
        Ok(Arc::new(load_model(&p).with_context(|| {
            format!("loading {} (run q2 with the same --out first)", p.display())
        })?))
    };
    let methods = [
        policy_method(DP, load("q2_dp.ckpt")?),
        policy_method(DA_DP, load("q2_da.ckpt")?),
    ];
    let rows = evaluate(&methods, &cfg.shifted_deltas(), cfg)?;
    out.sweep_outputs("q3", "Shifted evaluation delays", &rows)?;
    out.write("q3_pooled.csv", &pooled_csv(&rows)?)?;
    Ok(Report {
        rows,
        errors: Vec::new(),
        files: out.files,
    })
}
