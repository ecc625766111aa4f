use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use infosamp::bayes::CovarianceMode;
use infosamp::design::{self, SampleData};
use infosamp::harness::{self, ExperimentConfig, Run, TestKind, TestSettings};
use infosamp::infer::{EvidenceMode, HypothesisSpec};
use infosamp::rng::{self, Purpose};
use infosamp::scorefit::{self, JointInclusion, ScoreSystem, SelectionModelSpec};
use infosamp::{synthpop, Error};

/// Importance-sample size used by `--mode paper_rho` unless the config sets one.
const DEFAULT_IMPORTANCE_DRAWS: usize = 20_000;

#[derive(Parser, Debug)]
#[command(name = "infosamp", version, about = "Design-based Bayesian tests for informative sampling")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration; defaults reproduce the simulation study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the replicate pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Evidence computation for the FBST.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Score covariance treatment in the posterior.
    #[arg(long, global = true, value_enum)]
    covariance: Option<CovarianceArg>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Standard,
    PaperRho,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CovarianceArg {
    Plugin,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one synthetic population and its PPS sample as CSV.
    Simulate {
        /// Replicate index whose seeds are used.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// Use the design-variable model of the calibration run.
        #[arg(long)]
        null: bool,
    },
    /// Fit the selection and outcome models on a sample CSV.
    Fit {
        #[arg(long)]
        sample: PathBuf,
        /// Selection-model terms, e.g. `1,v1,y`.
        #[arg(long, default_value = "1,v1,y")]
        model: String,
        /// Population size; estimated by the weight total when omitted.
        #[arg(long)]
        population_size: Option<f64>,
    },
    /// Run FBST, LR and PS tests on a sample CSV.
    Test {
        #[arg(long)]
        sample: PathBuf,
        /// Terms of the full selection model.
        #[arg(long)]
        full: String,
        /// Terms of the hypothesis model; must be a subset of `--full`.
        #[arg(long)]
        null: String,
        /// Comma-separated tests.
        #[arg(long, default_value = "FBST,LR,PS1,PS2", value_delimiter = ',')]
        tests: Vec<String>,
        /// Significance level of the reported decisions.
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[arg(long)]
        population_size: Option<f64>,
    },
    /// Run the experiment suite and write table1.csv.
    Experiment,
    /// Run the null-calibration suite and write table2.csv.
    Calibrate,
}

/// Failure class of the process: bad input exits with 2, anything else with 1.
struct Failure {
    usage: bool,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let usage = matches!(
            e,
            Error::InvalidSpec(_) | Error::Data(_) | Error::Dimension(_) | Error::Csv(_) | Error::Json(_) | Error::Io(_)
        );
        Failure { usage, kind: e.kind().to_string(), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&Failure { usage: true, kind: "usage".into(), message: e.to_string().trim_end().to_string() });
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(if f.usage { 2 } else { 1 })
        }
    }
}

fn emit(line: &str) -> Result<(), Failure> {
    writeln!(std::io::stdout().lock(), "{line}").map_err(|e| Failure::from(Error::from(e)))
}

fn report(f: &Failure) {
    eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate { replicate, null } => simulate(&cfg, replicate, null, &out_dir(&cli.common, &cfg)),
        Command::Fit { sample, model, population_size } => fit(&sample, &model, population_size),
        Command::Test { sample, full, null, tests, level, population_size } => {
            test(&cfg, &sample, &full, &null, &tests, level, population_size)
        }
        Command::Experiment => suite(&cfg, Run::Experiments, &out_dir(&cli.common, &cfg)),
        Command::Calibrate => suite(&cfg, Run::Calibration, &out_dir(&cli.common, &cfg)),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(c) = common.covariance {
        cfg.covariance_mode = match c {
            CovarianceArg::Plugin => CovarianceMode::Plugin,
            CovarianceArg::Full => CovarianceMode::Full,
        };
    }
    match common.mode {
        Some(ModeArg::Standard) => cfg.evidence_mode = EvidenceMode::Standard,
        Some(ModeArg::PaperRho) if !matches!(cfg.evidence_mode, EvidenceMode::PaperRho { .. }) => {
            cfg.evidence_mode = EvidenceMode::PaperRho { importance_draws: DEFAULT_IMPORTANCE_DRAWS };
        }
        _ => {}
    }
    if let Some(dir) = &common.out {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn read_sample(path: &Path, population_size: Option<f64>) -> Result<SampleData, Failure> {
    let file = fs::File::open(path).map_err(Error::from)?;
    Ok(SampleData::read_csv(file, population_size)?)
}

fn simulate(cfg: &ExperimentConfig, replicate: u64, null: bool, dir: &Path) -> Result<(), Failure> {
    let (dspec, pop_p, samp_p) = if null {
        (&cfg.null_design, Purpose::NullPopulation, Purpose::NullSample)
    } else {
        (&cfg.design, Purpose::Population, Purpose::Sample)
    };
    let frame = synthpop::generate_population(
        &cfg.population,
        dspec,
        cfg.population_size,
        rng::derive_seed(cfg.seed, replicate, pop_p, 0),
    )?;
    let sample = design::draw_pps_sample(&frame, cfg.sample_size, rng::derive_seed(cfg.seed, replicate, samp_p, 0))?;
    fs::create_dir_all(dir).map_err(Error::from)?;
    let (pop_path, sample_path) = (dir.join("population.csv"), dir.join("sample.csv"));
    frame.write_csv(fs::File::create(&pop_path).map_err(Error::from)?)?;
    sample.write_csv(fs::File::create(&sample_path).map_err(Error::from)?)?;
    emit(&json!({ "population": pop_path, "sample": sample_path, "N": frame.n_units(), "n": sample.n() }).to_string())
}

fn fit(path: &Path, model: &str, population_size: Option<f64>) -> Result<(), Failure> {
    let sample = read_sample(path, population_size)?;
    let spec = SelectionModelSpec::parse(model)?;
    let selection = scorefit::fit_report(&ScoreSystem::selection(&sample, &spec)?, &JointInclusion::ProportionalToSize, "selection", false)?;
    let outcome = scorefit::fit_report(&ScoreSystem::population(&sample)?, &JointInclusion::ProportionalToSize, "outcome", true)?;
    let text = serde_json::to_string_pretty(&json!({ "selection": selection, "outcome": outcome })).map_err(Error::from)?;
    emit(&text)
}

fn test(
    cfg: &ExperimentConfig,
    path: &Path,
    full: &str,
    null: &str,
    tests: &[String],
    level: f64,
    population_size: Option<f64>,
) -> Result<(), Failure> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidSpec(format!("level must lie in (0, 1), got {level}")).into());
    }
    let sample = read_sample(path, population_size)?;
    let hyp = HypothesisSpec::new("cli", SelectionModelSpec::parse(full)?, SelectionModelSpec::parse(null)?)?;
    let kinds = tests.iter().map(|t| t.trim().parse::<TestKind>()).collect::<Result<Vec<_>, _>>()?;
    let settings = TestSettings {
        prior: cfg.prior,
        covariance_mode: cfg.covariance_mode,
        evidence_mode: cfg.evidence_mode,
        mcmc: cfg.mcmc.clone(),
    };
    let outcomes = harness::run_tests(
        &sample,
        &hyp,
        &kinds,
        &settings,
        &[level],
        rng::derive_seed(cfg.seed, 0, Purpose::Mcmc, 0),
        rng::derive_seed(cfg.seed, 0, Purpose::Importance, 0),
    );
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let mut failed = None;
    for o in outcomes {
        let line = match (&o.record, &o.error) {
            (Some(r), _) => serde_json::to_string(r),
            (None, err) => {
                failed.get_or_insert_with(|| err.clone().unwrap_or_default());
                serde_json::to_string(&json!({ "test": o.test.name(), "error": err }))
            }
        }
        .map_err(Error::from)?;
        writeln!(lock, "{line}").map_err(Error::from)?;
    }
    match failed {
        None => Ok(()),
        Some(message) => Err(Failure { usage: false, kind: "test_failed".into(), message }),
    }
}

fn suite(cfg: &ExperimentConfig, run: Run, dir: &Path) -> Result<(), Failure> {
    let result = harness::run_experiment_suite(cfg, run)?;
    let paths = harness::write_outputs(cfg, &result, dir)?;
    emit(
        &json!({
            "run": run,
            "replicates": result.replicates.len(),
            "wall_time_seconds": result.wall_time_seconds,
            "outputs": paths,
        })
        .to_string(),
    )
}
