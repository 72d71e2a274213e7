use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chunkdelay::{
    build_delay_dataset, load_dataset, load_model, measure_delay, save_dataset, save_model,
    Dataset, DiffusionPolicy, TaskKind, TaskSpec,
};
use chunkdelay_cli::exit::{self, UsageError};
use chunkdelay_cli::pipeline::{
    dataset_path, delta_tag, demo_dataset, evaluate, generate_demos, policy_method, DA_DP, DP,
};
use chunkdelay_cli::report::{read_plot_rows, render_svg, sweep_csv, write_file, ChartKind};
use chunkdelay_cli::{cmd_q1, cmd_q2, cmd_q3, ExperimentConfig, Report};

/// Delay-compensated diffusion policy experiments.
#[derive(Parser)]
#[command(name = "chunkdelay", version)]
struct Cli {
    /// Master seed for demonstrations and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment configuration file (`key = value` with `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration, including defaults, and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate zero-delay expert demonstrations.
    GenData {
        #[arg(long)]
        demos: Option<usize>,
    },
    /// Compress a zero-delay dataset for one or more delays.
    Compress {
        /// Zero-delay dataset; defaults to the one `gen-data` writes.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Delays in seconds; one output dataset per delay.
        #[arg(long, num_args = 1.., required = true)]
        delta: Vec<f64>,
        #[arg(long)]
        smooth: bool,
    },
    /// Train a policy on one or more datasets.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::DaDp)]
        method: MethodArg,
        /// Checkpoint name; defaults to the method.
        #[arg(long)]
        name: Option<String>,
    },
    /// Evaluate one checkpoint across delays.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate several checkpoints across delays.
    Sweep {
        /// `label=path`, repeatable.
        #[arg(long = "model", num_args = 1.., required = true)]
        models: Vec<String>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Single-delay training at each delay of the grid.
    Q1,
    /// Joint training on a delay set.
    Q2,
    /// Evaluate the joint models on the shifted delay set.
    Q3,
    /// Render sweep CSVs as SVG charts next to each input.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = KindArg::Bars)]
        kind: KindArg,
        #[arg(long, default_value = "success rate")]
        title: String,
    },
    /// Median wall-clock inference time of a checkpoint.
    MeasureDelay {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        #[arg(long)]
        task: Option<String>,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Task id; defaults to the configured task.
    #[arg(long)]
    task: Option<String>,
    /// Delays in seconds.
    #[arg(long, num_args = 1.., required = true)]
    delta: Vec<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// CSV destination; defaults to a file under the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dp,
    DaDp,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Bars,
    Lines,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(entry(std::env::args_os()));
}

/// Parses `args`, runs the command and returns the process exit code.
fn entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::code_for(&e)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cli.print_config {
        print!("{}", cfg.to_kv().render());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!(UsageError("no subcommand given (see --help)".into()));
    };

    match command {
        Command::GenData { demos } => {
            let demos =
                generate_demos(&cfg.task, &cfg.timing, demos.unwrap_or(cfg.demos), cfg.seed)?;
            let path = dataset_path(&cfg.out, &cfg.task, &delta_tag(0.0), cfg.seed);
            save_dataset(&demo_dataset(&demos)?, &path)?;
            println!("{}", path.display());
        }
        Command::Compress {
            input,
            delta,
            smooth,
        } => {
            let input = input
                .unwrap_or_else(|| dataset_path(&cfg.out, &cfg.task, &delta_tag(0.0), cfg.seed));
            let ds =
                load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
            if ds.entries.iter().any(|e| e.delta != 0.0) {
                bail!(UsageError(format!(
                    "{} contains delayed entries; compress expects zero-delay demonstrations",
                    input.display()
                )));
            }
            let trajs: Vec<_> = ds.entries.into_iter().map(|e| e.traj).collect();
            let timing = cfg.timing;
            if let Some(dt) = trajs.first().map(|t| t.dt) {
                if (dt - timing.dt).abs() > 1e-12 {
                    bail!(UsageError(format!(
                        "dataset dt {dt} differs from configured dt {}",
                        timing.dt
                    )));
                }
            }
            for d in delta {
                let built = build_delay_dataset(&trajs, &[d], &timing, smooth)?;
                for f in &built.failures {
                    log::warn!("{}", f.error);
                }
                let path = dataset_path(&cfg.out, &cfg.task, &delta_tag(d), cfg.seed);
                save_dataset(&built.dataset, &path)?;
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record([
                    "source_index",
                    "delta",
                    "source_len",
                    "n_prime",
                    "collapsed",
                    "skip_schedule",
                ])?;
                for r in &built.records {
                    let s: Vec<String> = r.skip_schedule.iter().map(usize::to_string).collect();
                    w.write_record([
                        r.source_index.to_string(),
                        r.delta.to_string(),
                        r.source_len.to_string(),
                        r.n_prime.to_string(),
                        r.collapsed.to_string(),
                        s.join(";"),
                    ])?;
                }
                write_file(&path.with_extension("records.csv"), &w.into_inner()?)?;
                println!("{}", path.display());
            }
        }
        Command::Train { data, method, name } => {
            let mut entries = Vec::new();
            for p in &data {
                let ds = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
                entries.extend(ds.entries);
            }
            let ds = Dataset::from_entries(entries)?;
            let (label, tc) = match method {
                MethodArg::Dp => {
                    if ds.max_delta() > 0.0 {
                        bail!(UsageError(
                            "the baseline trains on zero-delay data only".into()
                        ));
                    }
                    (DP, cfg.dp_train())
                }
                MethodArg::DaDp => (DA_DP, cfg.da_train()),
            };
            let (model, report) = chunkdelay::train(&ds, &tc, cfg.seed)?;
            let name = name.unwrap_or_else(|| label.to_string());
            let path = cfg.out.join("models").join(format!("{name}.ckpt"));
            save_model(&model, &path)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["step", "loss"])?;
            for (i, l) in report.losses.iter().enumerate() {
                w.write_record([i.to_string(), l.to_string()])?;
            }
            write_file(&path.with_extension("loss.csv"), &w.into_inner()?)?;
            println!("{}", path.display());
        }
        Command::Eval { model, eval } => {
            let label = model
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            let default_out = cfg.out.join("eval").join(format!("{label}.csv"));
            run_sweep(&mut cfg, vec![(label, model)], eval, default_out)?;
        }
        Command::Sweep { models, eval } => {
            let models = models
                .iter()
                .map(|m| match m.split_once('=') {
                    Some((l, p)) if !l.is_empty() && !p.is_empty() => {
                        Ok((l.to_string(), PathBuf::from(p)))
                    }
                    _ => Err(UsageError(format!("expected label=path, got `{m}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let default_out = cfg.out.join("sweep").join("sweep.csv");
            run_sweep(&mut cfg, models, eval, default_out)?;
        }
        Command::Q1 => finish(cmd_q1(&cfg)?)?,
        Command::Q2 => finish(cmd_q2(&cfg)?)?,
        Command::Q3 => finish(cmd_q3(&cfg)?)?,
        Command::Plot { csv, kind, title } => {
            let kind = match kind {
                KindArg::Bars => ChartKind::Bars,
                KindArg::Lines => ChartKind::Lines,
            };
            for p in csv {
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("reading {}", p.display()))?;
                let rows = read_plot_rows(&text).with_context(|| p.display().to_string())?;
                let svg = p.with_extension("svg");
                write_file(&svg, render_svg(&rows, &title, kind)?.as_bytes())?;
                println!("{}", svg.display());
            }
        }
        Command::MeasureDelay {
            model,
            repetitions,
            task,
        } => {
            if repetitions == 0 {
                bail!(UsageError("repetitions must be >= 1".into()));
            }
            let spec = task_override(&cfg.task, task.as_deref())?;
            let m = Arc::new(load_model(&model)?);
            let probe = vec![spec.reset(cfg.seed).observe(); m.dims().h_obs];
            let mut policy = DiffusionPolicy::new(m, cfg.seed);
            let secs = measure_delay(&mut policy, &probe, repetitions)?;
            let steps = secs / cfg.timing.dt;
            println!(
                "{secs:.6} s ({steps:.2} control steps at dt = {})",
                cfg.timing.dt
            );
        }
    }
    Ok(())
}

fn task_override(current: &TaskSpec, id: Option<&str>) -> Result<TaskSpec> {
    Ok(match id {
        None => current.clone(),
        Some(id) => {
            let kind = TaskKind::parse(id).map_err(|e| UsageError(e.to_string()))?;
            if kind == current.kind() {
                current.clone()
            } else {
                TaskSpec::default_for(kind)
            }
        }
    })
}

fn run_sweep(
    cfg: &mut ExperimentConfig,
    models: Vec<(String, PathBuf)>,
    eval: EvalArgs,
    default_out: PathBuf,
) -> Result<()> {
    cfg.task = task_override(&cfg.task, eval.task.as_deref())?;
    if let Some(n) = eval.episodes {
        cfg.episodes = n;
    }
    if let Some(s) = eval.seeds {
        cfg.eval_seeds = s;
    }
    let mut methods = Vec::new();
    for (label, path) in models {
        let m = load_model(&path).with_context(|| format!("loading {}", path.display()))?;
        if m.dims().state_dim != cfg.task.state_dim() {
            bail!(UsageError(format!(
                "{} was trained on a different task",
                path.display()
            )));
        }
        methods.push(policy_method(&label, Arc::new(m)));
    }
    let rows = evaluate(&methods, &eval.delta, cfg)?;
    let out = eval.output.unwrap_or(default_out);
    write_file(&out, &sweep_csv(&rows)?)?;
    print_rows(&Report {
        rows,
        ..Report::default()
    });
    println!("{}", out.display());
    Ok(())
}

fn print_rows(r: &Report) {
    for row in &r.rows {
        println!(
            "{:<8} delta {:<8} success {:.3} ({} episodes, {} failures)",
            row.method, row.delta, row.success_rate, row.episodes, row.failures
        );
    }
}

fn finish(r: Report) -> Result<()> {
    print_rows(&r);
    for f in &r.files {
        println!("{}", display(f));
    }
    if let Some((d, e)) = r.errors.first() {
        bail!(
            "{} stage(s) failed; first at delta {d}: {e}",
            r.errors.len()
        );
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
