use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ctxlearn::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use ctxlearn::harness::{
    emit_figure, emit_plots, eval_trials, run_compgen, run_continual, run_continual_single, run_taskmodel,
    run_transfer_backward, run_transfer_forward, BaselineLearner, ContextLearner, ContinualLearner, ExperimentConfig,
    Figure, LearnerKind, MetricRow, MetricsLog, RunOutput,
};
use ctxlearn::taskgen::{sample_trial_indexed, write_suite, write_trial_dump};
use ctxlearn::{rng, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ctxlearn", version, about = "Continual learning of compositional tasks with a context-inferring task model")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file overriding the preset
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, env = "CTXLEARN_OUT", default_value = "ctxlearn-out")]
    out: PathBuf,

    /// Run only this seed instead of the configured ones
    #[arg(long)]
    seed: Option<u64>,

    /// Scale preset: desk, paper or smoke
    #[arg(long, default_value = "desk")]
    preset: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Learner {
    ContextRnn,
    Adam,
    Ewc,
    Owp,
}

impl Learner {
    fn kind(self) -> LearnerKind {
        match self {
            Learner::ContextRnn => LearnerKind::ContextRnn,
            Learner::Adam => LearnerKind::Baseline(ctxlearn::baselines::Rule::Adam),
            Learner::Ewc => LearnerKind::Baseline(ctxlearn::baselines::Rule::Ewc),
            Learner::Owp => LearnerKind::Baseline(ctxlearn::baselines::Rule::Owp),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the task suite and trial dumps
    Gen {
        #[command(flatten)]
        common: Common,
        /// Task name, e.g. DelayPro
        #[arg(long)]
        task: String,
        /// Number of trials
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Train the task model alone on one task order
    TrainWhat {
        #[command(flatten)]
        common: Common,
        /// Index into the configured task orders
        #[arg(long, default_value_t = 0)]
        order: usize,
    },
    /// Train a learner on one task order and save it
    TrainFull {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        order: usize,
        #[arg(long, value_enum, default_value = "context-rnn")]
        learner: Learner,
    },
    /// Evaluate a saved learner on every task it can run
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train-full or train-what
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an experiment
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Which experiment
        #[arg(value_enum)]
        which: Which,
        /// Learner for continual and transfer experiments
        #[arg(long, value_enum, default_value = "context-rnn")]
        learner: Learner,
    },
    /// Render figures from a metrics file
    Plot {
        #[command(flatten)]
        common: Common,
        /// Metrics CSV
        #[arg(long)]
        metrics: PathBuf,
        /// Only this figure: continual, taskmodel, transfer_fwd, transfer_bwd or compgen
        #[arg(long)]
        figure: Option<String>,
    },
    /// Describe a checkpoint file
    InspectCheckpoint {
        /// Checkpoint path
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Continual,
    TransferFwd,
    TransferBwd,
    Compgen,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: category=config message=thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error: category={cat} message={}", e.to_string().replace('\n', " "));
            ExitCode::from(if cat == "config" { 2 } else { 1 })
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.preset, common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn prepare_out(common: &Common, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let out = common.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    if let Some(cfg) = cfg {
        let p = out.join("resolved_config.toml");
        std::fs::write(&p, cfg.to_toml()?).map_err(|e| io(&p, e))?;
    }
    Ok(out)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

/// Writes the log, plots and checkpoints, then surfaces the run's error.
fn finish(out_dir: &Path, run: RunOutput, save_checkpoints: bool) -> Result<()> {
    let metrics = out_dir.join("metrics.csv");
    run.log.write_csv(&metrics)?;
    println!("metrics: {} ({} rows)", metrics.display(), run.log.len());
    if save_checkpoints {
        let dir = out_dir.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for (id, ck) in &run.checkpoints {
            let p = dir.join(format!("{}.json", id.replace('/', "_")));
            write_checkpoint(&p, ck)?;
            println!("checkpoint: {}", p.display());
        }
    }
    for v in &run.isolation_violations {
        println!("isolation violation: {v}");
    }
    if let Some(e) = run.error {
        return Err(e);
    }
    if !run.log.is_empty() {
        for f in emit_plots(&run.log, &out_dir.join("plots"))? {
            println!("plot: {}", f.display());
        }
    }
    for id in run.log.runs() {
        let finals = run.log.final_rows(&id, "continual");
        if !finals.is_empty() {
            let parts: Vec<String> =
                finals.iter().map(|r| format!("{}={:.3}", r.eval_task, r.performance.unwrap_or(f64::NAN))).collect();
            println!("final {id}: {}", parts.join(" "));
        }
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { common, task, n } => {
            let cfg = load(&common)?;
            let suite = cfg.suite();
            let c = suite.task_by_name(&task)?.id;
            let out = prepare_out(&common, Some(&cfg))?;
            write_suite(&out.join("suite.json"), &suite)?;
            let seed = cfg.seeds[0];
            for i in 0..n {
                let tr = sample_trial_indexed(&suite, c, &cfg.gen, seed, rng::stream::TRAIN_TRIALS, i as u64)?;
                write_trial_dump(&out.join(format!("trial_{}_{i:04}.csv", suite.tasks[c].name)), &tr)?;
            }
            println!("wrote {n} trials of {} to {}", suite.tasks[c].name, out.display());
            Ok(())
        }
        Command::TrainWhat { common, order } => {
            let cfg = load(&common)?;
            let out = prepare_out(&common, Some(&cfg))?;
            let order = resolve(&cfg, order)?;
            let mut all = RunOutput::default();
            for &seed in &cfg.seeds {
                let (run, _) = run_taskmodel(&cfg, &order, seed);
                merge(&mut all, run);
            }
            finish(&out, all, true)
        }
        Command::TrainFull { common, order, learner } => {
            let cfg = load(&common)?;
            let out = prepare_out(&common, Some(&cfg))?;
            let order = resolve(&cfg, order)?;
            let mut all = RunOutput::default();
            for &seed in &cfg.seeds {
                merge(&mut all, run_continual_single(&cfg, learner.kind(), &order, seed));
            }
            finish(&out, all, true)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            let out = prepare_out(&common, Some(&cfg))?;
            evaluate_checkpoint(&cfg, &checkpoint, &out)
        }
        Command::Experiment { common, which, learner } => {
            let cfg = load(&common)?;
            let out = prepare_out(&common, Some(&cfg))?;
            let kind = learner.kind();
            let run = match which {
                Which::Continual => run_continual(&cfg, kind),
                Which::TransferFwd => per_seed(&cfg, |s| run_transfer_forward(&cfg, kind, s)),
                Which::TransferBwd => per_seed(&cfg, |s| run_transfer_backward(&cfg, kind, s)),
                Which::Compgen => per_seed(&cfg, |s| run_compgen(&cfg, s)),
            };
            finish(&out, run, false)
        }
        Command::Plot { common, metrics, figure } => {
            let out = prepare_out(&common, None)?;
            let log = MetricsLog::read_csv(&metrics)?;
            let files = match figure {
                Some(f) => emit_figure(&log, Figure::parse(&f)?, &out)?,
                None => emit_plots(&log, &out)?,
            };
            for f in files {
                println!("plot: {}", f.display());
            }
            Ok(())
        }
        Command::InspectCheckpoint { path } => {
            let ck = read_checkpoint(&path)?;
            println!("kind: {}", ck.kind());
            println!("{}", ck.summary());
            Ok(())
        }
    }
}

fn resolve(cfg: &ExperimentConfig, order: usize) -> Result<Vec<usize>> {
    let names = cfg
        .orders
        .get(order)
        .ok_or_else(|| Error::Config(format!("order {order} out of range ({} configured)", cfg.orders.len())))?;
    cfg.resolve_order(&cfg.suite(), names)
}

fn merge(all: &mut RunOutput, run: RunOutput) {
    if all.error.is_some() {
        return;
    }
    if let Err(e) = all.log.extend(run.log) {
        all.error = Some(e);
        return;
    }
    all.isolation_violations.extend(run.isolation_violations);
    all.checkpoints.extend(run.checkpoints);
    all.error = run.error;
}

fn per_seed(cfg: &ExperimentConfig, f: impl Fn(u64) -> RunOutput) -> RunOutput {
    let mut all = RunOutput::default();
    for &s in &cfg.seeds {
        merge(&mut all, f(s));
        if all.error.is_some() {
            break;
        }
    }
    all
}

fn evaluate_checkpoint(cfg: &ExperimentConfig, path: &Path, out: &Path) -> Result<()> {
    let ck = read_checkpoint(path)?;
    let seed = cfg.seeds[0];
    let suite = cfg.suite();
    let learner: Box<dyn ContinualLearner> = match ck {
        Checkpoint::Full { task_model, bank, train } => Box::new(ContextLearner::from_parts(cfg, seed, task_model, bank, train)),
        Checkpoint::GeneralRnn(l) => {
            let mut b = BaselineLearner::from_learner(cfg, seed, l);
            // a saved baseline can be asked about any task it has an input for
            b.mark_all_seen();
            Box::new(b)
        }
        other => {
            return Err(Error::Config(format!("eval needs a full or general_rnn checkpoint, got {}", other.kind())));
        }
    };
    let mut log = MetricsLog::new();
    for task in &suite.tasks {
        if !learner.can_evaluate(task.id) {
            continue;
        }
        let trials = eval_trials(&suite, cfg, seed, task.id, cfg.n_eval)?;
        let s = learner.evaluate(task.id, &trials)?;
        println!(
            "{:<12} loss {:.5} performance {:.3}{}",
            task.name,
            s.loss,
            s.performance,
            s.task_model_ll.map(|l| format!(" ll {l:.2}")).unwrap_or_default()
        );
        log.push(MetricRow {
            run_id: format!("eval/{}", learner.label()),
            seed,
            phase: "eval".into(),
            global_step: 0,
            trained_task: String::new(),
            eval_task: task.name.clone(),
            test_loss: Some(s.loss),
            performance: Some(s.performance),
            task_model_ll: s.task_model_ll,
        })?;
    }
    log.write_csv(&out.join("eval.csv"))
}
