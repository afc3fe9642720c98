use std::io::{stdout, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use msa_core::data::io::{load_dataset, read_graph, save_dataset};
use msa_core::data::MultiStateDataset;
use msa_core::markov_tests::{Adjustment, TestMethod, TestOptions};
use msa_core::pseudo::{derive_pseudo_values, JackknifeMode, SelectionOptions, Task};
use msa_core::simulate::{
    apply_incremental_censoring, apply_induced_censoring, Cohort, Family, IntensitySpec,
};
use msa_cli::config::{Censoring, DataSource, ExperimentConfig, GridSpec};
use msa_cli::estimate::{markov_test, write_aj_sop, write_aj_tp, write_lmaj_tp, write_test_report};
use msa_cli::pipeline::{materialize, run_experiment};
use msa_cli::{parse_times, parse_transition};

#[derive(Parser)]
#[command(name = "msa", version, about = "Pseudo-value multi-state survival analysis")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run(RunArgs),
    /// Simulate a cohort and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimators, pseudo values and Markov tests on a CSV dataset (CSV to stdout).
    Estimate {
        #[command(subcommand)]
        what: EstimateCommand,
    },
    /// Raise the censoring of a dataset.
    Censor(CensorArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long = "landmark-s")]
    landmark_s: Option<f64>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    epsilon: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Use the data and censoring sections of an experiment config.
    #[arg(long, conflicts_with_all = ["family", "n"])]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "censoring-rate")]
    censoring_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Long-format records CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Graph JSON.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    horizon: Option<f64>,
}

impl DataArgs {
    fn load(&self) -> Result<MultiStateDataset> {
        let graph = read_graph(&self.graph)?;
        Ok(load_dataset(&self.data, self.covariates.as_deref(), graph, self.horizon)?)
    }
}

#[derive(Args)]
struct GridArgs {
    /// `start:stop:M`; default 30 quantiles of the transition times.
    #[arg(long)]
    grid: Option<String>,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        match &self.grid {
            Some(g) => GridSpec::parse(g),
            None => Ok(GridSpec::default()),
        }
    }
}

#[derive(Subcommand)]
enum EstimateCommand {
    /// AJ state occupation, or every row of P(s, t) with --landmark-s.
    Aj {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long = "landmark-s")]
        landmark_s: Option<f64>,
    },
    /// Landmark AJ rows of P(s, t).
    Lmaj {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long = "landmark-s")]
        landmark_s: f64,
    },
    /// Pseudo values with test-driven estimator selection.
    Pseudo {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_parser = parse_task, default_value = "sop")]
        task: Task,
        #[arg(long = "landmark-s")]
        landmark_s: Option<f64>,
        #[arg(long, default_value_t = 1)]
        epsilon: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        test: TestArgs,
        /// Leave-one-out by refitting instead of the fast update.
        #[arg(long)]
        naive: bool,
    },
    /// Markov test report.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "ca")]
        method: MethodArg,
        /// `j->k`, required for the log-rank test.
        #[arg(long)]
        transition: Option<String>,
        /// Comma-separated landmark times (default: entry-time quartiles).
        #[arg(long)]
        landmarks: Option<String>,
        #[command(flatten)]
        test: TestArgs,
    },
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    permutations: usize,
    #[arg(long, value_enum, default_value = "quadratic")]
    adjustment: AdjustmentArg,
}

impl TestArgs {
    fn options(&self) -> TestOptions {
        TestOptions {
            adjustment: self.adjustment.into(),
            permutations: self.permutations,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct CensorArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation design for the subjects appended by incremental censoring.
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    LinearMarkov,
    NonlinearMarkov,
    LinearNonMarkov,
    NonlinearNonMarkov,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::LinearMarkov => Family::LinearMarkov,
            FamilyArg::NonlinearMarkov => Family::NonlinearMarkov,
            FamilyArg::LinearNonMarkov => Family::LinearNonMarkov,
            FamilyArg::NonlinearNonMarkov => Family::NonlinearNonMarkov,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ca,
    Logrank,
}

impl From<MethodArg> for TestMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ca => TestMethod::Ca,
            MethodArg::Logrank => TestMethod::Logrank,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AdjustmentArg {
    None,
    Linear,
    Quadratic,
    Cubic,
}

impl From<AdjustmentArg> for Adjustment {
    fn from(a: AdjustmentArg) -> Self {
        match a {
            AdjustmentArg::None => Adjustment::None,
            AdjustmentArg::Linear => Adjustment::Linear,
            AdjustmentArg::Quadratic => Adjustment::Quadratic,
            AdjustmentArg::Cubic => Adjustment::Cubic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Incremental,
    Induced,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MSA_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run(args) => run(args),
        Command::Simulate(args) => simulate(args),
        Command::Estimate { what } => estimate(what),
        Command::Censor(args) => censor(args),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(s) = args.landmark_s {
        cfg.s = Some(s);
    }
    if let Some(g) = &args.grid {
        cfg.grid = GridSpec::parse(g)?;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = e;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out = Some(o);
    }
    let out = run_experiment(&cfg)?;
    eprintln!("wrote {} (config hash {})", out.out_dir.display(), out.manifest.config_hash);
    Ok(())
}

fn write_graph(dataset: &MultiStateDataset, dir: &Path) -> Result<()> {
    let path = dir.join("graph.json");
    let text = serde_json::to_string_pretty(dataset.graph())?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn save_cohort(observed: &MultiStateDataset, truth: Option<&MultiStateDataset>, dir: &Path) -> Result<()> {
    save_dataset(observed, dir)?;
    write_graph(observed, dir)?;
    if let Some(t) = truth {
        save_dataset(t, &dir.join("truth"))?;
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if !matches!(cfg.data, DataSource::Simulate { .. }) {
                bail!("config {} does not describe a simulation", path.display());
            }
            cfg
        }
        None => {
            let (Some(family), Some(n)) = (args.family, args.n) else {
                bail!("--family and --n are required without --config");
            };
            ExperimentConfig {
                name: "simulate".into(),
                data: DataSource::Simulate {
                    family: family.into(),
                    n,
                    tau: args.tau,
                    censoring_rate: args.censoring_rate,
                },
                censoring: Censoring::None,
                task: Task::Sop,
                s: None,
                grid: GridSpec::default(),
                epsilon: 1,
                alpha: 0.05,
                tests: Default::default(),
                candidates: vec![],
                search: None,
                cv: Default::default(),
                evaluation: Default::default(),
                seed: args.seed,
                out: None,
            }
        }
    };
    let data = materialize(&cfg)?;
    save_cohort(&data.observed, data.truth.as_ref(), &args.out)
}

fn estimate(what: EstimateCommand) -> Result<()> {
    let mut out = BufWriter::new(stdout().lock());
    match what {
        EstimateCommand::Aj { data, grid, landmark_s } => {
            let ds = data.load()?;
            let g = grid.spec()?.resolve(&ds, landmark_s.unwrap_or(0.0))?;
            match landmark_s {
                Some(s) => write_aj_tp(&ds, s, &g, &mut out)?,
                None => write_aj_sop(&ds, &g, &mut out)?,
            }
        }
        EstimateCommand::Lmaj { data, grid, landmark_s } => {
            let ds = data.load()?;
            let g = grid.spec()?.resolve(&ds, landmark_s)?;
            write_lmaj_tp(&ds, landmark_s, &g, &mut out)?;
        }
        EstimateCommand::Pseudo {
            data,
            grid,
            task,
            landmark_s,
            epsilon,
            alpha,
            test,
            naive,
        } => {
            let ds = data.load()?;
            let s = match (task, landmark_s) {
                (Task::Sop, _) => 0.0,
                (_, Some(s)) => s,
                (_, None) => bail!("--landmark-s is required for task {task}"),
            };
            let g = grid.spec()?.resolve(&ds, s)?;
            let opts = SelectionOptions {
                epsilon,
                alpha,
                test_choice: None,
                tests: test.options(),
                mode: if naive { JackknifeMode::Naive } else { JackknifeMode::Fast },
            };
            let (table, trace) = derive_pseudo_values(&ds, task, &g, s, &opts)?;
            for d in &trace.decisions {
                log::info!("{}: {} {}", d.scope, d.estimator, d.note);
            }
            table.write_csv(&mut out)?;
        }
        EstimateCommand::Test {
            data,
            method,
            transition,
            landmarks,
            test,
        } => {
            let ds = data.load()?;
            let transition = transition.as_deref().map(parse_transition).transpose()?;
            let landmarks = landmarks.as_deref().map(parse_times).transpose()?;
            let r = markov_test(&ds, method.into(), transition, landmarks.as_deref(), &test.options())?;
            write_test_report(&r, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn censor(args: CensorArgs) -> Result<()> {
    let ds = args.data.load()?;
    match args.mode {
        ModeArg::Induced => {
            let out = apply_induced_censoring(&ds, args.rate, args.seed)?;
            save_cohort(&out, None, &args.out)
        }
        ModeArg::Incremental => {
            let Some(family) = args.family else {
                bail!("incremental censoring needs --family to simulate the appended subjects");
            };
            if ds.censoring_rate() > 0.0 {
                bail!("incremental censoring needs an uncensored dataset");
            }
            let spec = IntensitySpec::family(family.into());
            if spec.graph != *ds.graph() || spec.num_covariates != ds.num_covariates() {
                bail!("dataset graph or covariate count does not match the {family:?} design", family = Family::from(family));
            }
            let base = Cohort {
                observed: ds.clone(),
                truth: ds,
            };
            let out = apply_incremental_censoring(&base, &spec, args.rate, args.seed)?;
            save_cohort(&out.observed, Some(&out.truth), &args.out)
        }
    }
}
