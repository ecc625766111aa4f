//! Monte Carlo study driver: replicate loop, aggregation into rejection
//! tables, and persistence of configs, tables and manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, CovarianceMode, McmcConfig, Posterior, PriorSpec};
use crate::design::{self, SampleData};
use crate::error::{Error, Result};
use crate::infer::{self, EvidenceMode, HypothesisSpec, TestRecord};
use crate::rng::{self, Purpose};
use crate::scorefit::{JointInclusion, ScoreSystem, SelectionModelSpec};
use crate::synthpop::{self, DesignVariableSpec, PopulationModelSpec};

/// Share of failed replicates above which a suite run is an error.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    #[serde(rename = "FBST")]
    Fbst,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "PS1")]
    Ps1,
    #[serde(rename = "PS2")]
    Ps2,
    #[serde(rename = "PS3")]
    Ps3,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Fbst => "FBST",
            TestKind::Lr => "LR",
            TestKind::Ps1 => "PS1",
            TestKind::Ps2 => "PS2",
            TestKind::Ps3 => "PS3",
        }
    }

    fn ps_power(self) -> Option<u32> {
        match self {
            TestKind::Ps1 => Some(1),
            TestKind::Ps2 => Some(2),
            TestKind::Ps3 => Some(3),
            _ => None,
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FBST" => Ok(Self::Fbst),
            "LR" => Ok(Self::Lr),
            "PS1" => Ok(Self::Ps1),
            "PS2" => Ok(Self::Ps2),
            "PS3" => Ok(Self::Ps3),
            _ => Err(Error::InvalidSpec(format!("unknown test `{s}`"))),
        }
    }
}

/// One nested comparison and the tests to run on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub full: SelectionModelSpec,
    pub null: SelectionModelSpec,
    pub tests: Vec<TestKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ExperimentSpec {
    fn new(name: &str, full: &str, null: &str, tests: &[TestKind], note: Option<&str>) -> Self {
        Self {
            name: name.into(),
            full: SelectionModelSpec::parse(full).expect("built-in model"),
            null: SelectionModelSpec::parse(null).expect("built-in model"),
            tests: tests.to_vec(),
            note: note.map(str::to_string),
        }
    }

    pub fn hypothesis(&self) -> Result<HypothesisSpec> {
        HypothesisSpec::new(self.name.clone(), self.full.clone(), self.null.clone())
    }
}

use TestKind::{Fbst, Lr, Ps1, Ps2};

/// Experiments compared against the first table of the study.
pub fn default_experiments() -> Vec<ExperimentSpec> {
    vec![
        ExperimentSpec::new("exp1", "1,v1,y", "1,v1", &[Fbst, Lr, Ps1, Ps2], None),
        ExperimentSpec::new(
            "exp2",
            "1,x1,y,y^2",
            "1,x1,y",
            &[Fbst, Lr],
            Some("alternative as printed; null is the alternative without y^2"),
        ),
        ExperimentSpec::new(
            "exp2_v",
            "1,v1,y,y^2",
            "1,v1,y",
            &[Fbst, Lr],
            Some("alternative with v in place of x"),
        ),
        ExperimentSpec::new(
            "exp3",
            "1,v1,y^2",
            "1,v1",
            &[Fbst, Lr],
            Some("alternative as full model; null drops its outcome term"),
        ),
        ExperimentSpec::new(
            "exp3_superset",
            "1,v1,y,y^2",
            "1,v1,y",
            &[Fbst, Lr],
            Some("printed null inside the union of both models"),
        ),
        ExperimentSpec::new(
            "exp3_superset_y",
            "1,v1,y,y^2",
            "1,v1,y^2",
            &[Fbst, Lr],
            Some("printed alternative inside the union of both models"),
        ),
    ]
}

pub fn default_calibration() -> Vec<ExperimentSpec> {
    vec![ExperimentSpec::new("calibration", "1,v1,y", "1,v1", &[Fbst, Lr, Ps1, Ps2], None)]
}

pub const DEFAULT_LEVELS: [f64; 4] = [0.01, 0.025, 0.05, 0.1];
pub const DEFAULT_CALIBRATION_LEVELS: [f64; 8] = [0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "M")]
    pub replicates: usize,
    #[serde(rename = "N")]
    pub population_size: usize,
    #[serde(rename = "n")]
    pub sample_size: usize,
    pub population: PopulationModelSpec,
    pub design: DesignVariableSpec,
    /// Design-variable model used by the calibration run.
    pub null_design: DesignVariableSpec,
    pub experiments: Vec<ExperimentSpec>,
    pub calibration: Vec<ExperimentSpec>,
    pub levels: Vec<f64>,
    pub calibration_levels: Vec<f64>,
    /// Sampler settings; the seed field is replaced per replicate.
    pub mcmc: McmcConfig,
    pub prior: PriorSpec,
    pub covariance_mode: CovarianceMode,
    pub evidence_mode: EvidenceMode,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            population_size: 500,
            sample_size: 50,
            population: PopulationModelSpec::study(),
            design: DesignVariableSpec::study(),
            null_design: DesignVariableSpec::study_null(),
            experiments: default_experiments(),
            calibration: default_calibration(),
            levels: DEFAULT_LEVELS.to_vec(),
            calibration_levels: DEFAULT_CALIBRATION_LEVELS.to_vec(),
            mcmc: McmcConfig::default(),
            prior: PriorSpec::default(),
            covariance_mode: CovarianceMode::Full,
            evidence_mode: EvidenceMode::Standard,
            seed: 20_240_611,
            threads: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidSpec("M must be at least 1".into()));
        }
        if self.sample_size < 2 || self.sample_size >= self.population_size {
            return Err(Error::InvalidSpec(format!(
                "need 2 <= n < N, got n = {} and N = {}",
                self.sample_size, self.population_size
            )));
        }
        self.population.validate()?;
        let (nx, nv) = (self.population.x_covariates.len(), self.population.v_covariates.len());
        self.design.validate(nx, nv)?;
        self.null_design.validate(nx, nv)?;
        for levels in [&self.levels, &self.calibration_levels] {
            if levels.is_empty() || levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                return Err(Error::InvalidSpec("levels must be non-empty and lie in (0, 1)".into()));
            }
        }
        for list in [&self.experiments, &self.calibration] {
            if list.len() > u8::MAX as usize {
                return Err(Error::InvalidSpec("too many experiments".into()));
            }
            for e in list {
                e.hypothesis()?;
                if e.tests.is_empty() {
                    return Err(Error::InvalidSpec(format!("{}: no tests configured", e.name)));
                }
            }
        }
        if self.experiments.is_empty() {
            return Err(Error::InvalidSpec("no experiments configured".into()));
        }
        self.mcmc.validate()?;
        self.prior.validate()?;
        if self.threads == Some(0) {
            return Err(Error::InvalidSpec("threads must be positive".into()));
        }
        Ok(())
    }

    fn settings(&self) -> TestSettings {
        TestSettings {
            prior: self.prior,
            covariance_mode: self.covariance_mode,
            evidence_mode: self.evidence_mode,
            mcmc: self.mcmc.clone(),
        }
    }
}

/// Which population model and experiment list a suite run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Run {
    Experiments,
    Calibration,
}

impl Run {
    fn purposes(self) -> [Purpose; 4] {
        match self {
            Run::Experiments => [Purpose::Population, Purpose::Sample, Purpose::Mcmc, Purpose::Importance],
            Run::Calibration => {
                [Purpose::NullPopulation, Purpose::NullSample, Purpose::NullMcmc, Purpose::NullImportance]
            }
        }
    }

    fn pick(self, cfg: &ExperimentConfig) -> (&DesignVariableSpec, &[ExperimentSpec], &[f64]) {
        match self {
            Run::Experiments => (&cfg.design, &cfg.experiments, &cfg.levels),
            Run::Calibration => (&cfg.null_design, &cfg.calibration, &cfg.calibration_levels),
        }
    }
}

/// Inference settings shared by every test in a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSettings {
    pub prior: PriorSpec,
    pub covariance_mode: CovarianceMode,
    pub evidence_mode: EvidenceMode,
    pub mcmc: McmcConfig,
}

/// Result of one test on one sample. A numerical failure leaves `value`
/// empty and fills `error`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestOutcome {
    pub test: TestKind,
    pub value: Option<f64>,
    pub decisions: Vec<Option<bool>>,
    pub record: Option<TestRecord>,
    pub error: Option<String>,
}

impl TestOutcome {
    fn failed(test: TestKind, levels: usize, err: &Error) -> Self {
        Self { test, value: None, decisions: vec![None; levels], record: None, error: Some(err.to_string()) }
    }
}

/// Run `tests` for `hyp` on one sample. The record shown for each test is
/// decided at `levels[0]`.
pub fn run_tests(
    sample: &SampleData,
    hyp: &HypothesisSpec,
    tests: &[TestKind],
    settings: &TestSettings,
    levels: &[f64],
    mcmc_seed: u64,
    importance_seed: u64,
) -> Vec<TestOutcome> {
    let nl = levels.len();
    let post = ScoreSystem::selection(sample, &hyp.full)
        .and_then(|sys| Posterior::new(sys, Some(settings.prior), settings.covariance_mode, &JointInclusion::ProportionalToSize));
    let beta = std::cell::OnceCell::new();
    let d = hyp.full.dim();
    let h = hyp.n_constraints();

    tests
        .iter()
        .map(|&test| {
            let outcome = || -> Result<TestOutcome> {
                if let Some(k) = test.ps_power() {
                    let beta = beta.get_or_init(|| infer::ols_outcome_fit(sample).map_err(|e| e.to_string()));
                    let beta = beta.as_ref().map_err(|e| Error::Data(e.clone()))?;
                    let r = infer::ps_test(sample, beta, k)?;
                    let decisions = levels.iter().map(|&a| Some(r.p_value < a)).collect();
                    return Ok(TestOutcome {
                        test,
                        value: Some(r.p_value),
                        decisions,
                        record: Some(TestRecord::ps(&r, levels[0])),
                        error: None,
                    });
                }
                let post = post.as_ref().map_err(clone_error)?;
                match test {
                    TestKind::Fbst => {
                        let cfg = McmcConfig { seed: mcmc_seed, ..settings.mcmc.clone() };
                        let draws = bayes::run_mcmc(post, &cfg)?;
                        let ev = infer::fbst_evidence(&draws, post, hyp, settings.evidence_mode, levels[0], importance_seed)?;
                        let decisions = levels
                            .iter()
                            .map(|&a| ev.reject_at(d, h, a).map(Some))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(TestOutcome {
                            test,
                            value: Some(ev.ev_bar),
                            decisions,
                            record: Some(TestRecord::fbst(&ev, draws.acceptance_rate)),
                            error: None,
                        })
                    }
                    TestKind::Lr => {
                        let r = infer::lr_test(post, hyp)?;
                        let decisions = levels.iter().map(|&a| Some(r.p_value < a)).collect();
                        Ok(TestOutcome {
                            test,
                            value: Some(r.p_value),
                            decisions,
                            record: Some(TestRecord::lr(&r, levels[0])),
                            error: None,
                        })
                    }
                    _ => unreachable!("PS tests handled above"),
                }
            };
            outcome().unwrap_or_else(|e| TestOutcome::failed(test, nl, &e))
        })
        .collect()
}

/// `Error` is not `Clone`; failures shared by several tests are re-wrapped
/// with their message and machine tag.
fn clone_error(e: &Error) -> Error {
    Error::Data(format!("{}: {e}", e.kind()))
}

/// One (replicate, experiment, test) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub experiment: String,
    pub test: TestKind,
    /// Evidence value for the FBST, p-value otherwise.
    pub value: Option<f64>,
    pub decisions: Vec<Option<bool>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub records: Vec<ReplicateRecord>,
    /// Set when the population or sample could not be generated.
    pub failure: Option<String>,
}

/// Generate the replicate's population and sample and run every
/// configured test on it.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize, run: Run) -> ReplicateOutcome {
    let [pop_p, samp_p, mcmc_p, is_p] = run.purposes();
    let (dspec, specs, levels) = run.pick(cfg);
    let r = replicate as u64;
    let failed = |why: String| ReplicateOutcome { replicate, records: Vec::new(), failure: Some(why) };

    let frame = match synthpop::generate_population(
        &cfg.population,
        dspec,
        cfg.population_size,
        rng::derive_seed(cfg.seed, r, pop_p, 0),
    ) {
        Ok(f) => f,
        Err(e) => return failed(format!("population: {e}")),
    };
    let sample = match design::draw_pps_sample(&frame, cfg.sample_size, rng::derive_seed(cfg.seed, r, samp_p, 0)) {
        Ok(s) => s,
        Err(e) => return failed(format!("sample: {e}")),
    };

    let settings = cfg.settings();
    let mut records = Vec::new();
    for (ei, spec) in specs.iter().enumerate() {
        let hyp = match spec.hypothesis() {
            Ok(h) => h,
            Err(e) => return failed(format!("{}: {e}", spec.name)),
        };
        let outcomes = run_tests(
            &sample,
            &hyp,
            &spec.tests,
            &settings,
            levels,
            rng::derive_seed(cfg.seed, r, mcmc_p, ei as u8),
            rng::derive_seed(cfg.seed, r, is_p, ei as u8),
        );
        records.extend(outcomes.into_iter().map(|o| ReplicateRecord {
            replicate,
            experiment: spec.name.clone(),
            test: o.test,
            value: o.value,
            decisions: o.decisions,
            error: o.error,
        }));
    }
    ReplicateOutcome { replicate, records, failure: None }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub experiment: String,
    pub test: String,
    pub level: f64,
    pub proportion: Option<f64>,
    pub n_effective: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub run: Run,
    pub levels: Vec<f64>,
    pub replicates: Vec<ReplicateOutcome>,
    pub table: Vec<TableRow>,
    pub wall_time_seconds: f64,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &ReplicateRecord> {
        self.replicates.iter().flat_map(|r| r.records.iter())
    }

    pub fn failures(&self) -> Vec<(usize, String)> {
        self.replicates.iter().filter_map(|r| r.failure.clone().map(|f| (r.replicate, f))).collect()
    }

    /// Proportion for one cell, if present.
    pub fn proportion(&self, experiment: &str, test: &str, level: f64) -> Option<f64> {
        self.table
            .iter()
            .find(|row| row.experiment == experiment && row.test == test && row.level == level)
            .and_then(|row| row.proportion)
    }
}

/// Rejection proportions per (experiment, test, level) in configuration
/// order. Missing cells drop out of their own denominator only.
pub fn aggregate(specs: &[ExperimentSpec], levels: &[f64], replicates: &[ReplicateOutcome]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for spec in specs {
        for &test in &spec.tests {
            for (li, &level) in levels.iter().enumerate() {
                let cells = replicates
                    .iter()
                    .flat_map(|r| &r.records)
                    .filter(|rec| rec.experiment == spec.name && rec.test == test)
                    .filter_map(|rec| rec.decisions[li]);
                let (mut hits, mut total) = (0usize, 0usize);
                for reject in cells {
                    total += 1;
                    hits += reject as usize;
                }
                rows.push(TableRow {
                    experiment: spec.name.clone(),
                    test: test.name().into(),
                    level,
                    proportion: (total > 0).then(|| hits as f64 / total as f64),
                    n_effective: total,
                });
            }
        }
    }
    rows
}

/// Run all replicates of `run` on a worker pool and aggregate in
/// replicate order.
pub fn run_experiment_suite(cfg: &ExperimentConfig, run: Run) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    let replicates: Vec<ReplicateOutcome> =
        pool.install(|| (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r, run)).collect());

    let reasons: Vec<String> = replicates
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| format!("replicate {}: {f}", r.replicate)))
        .collect();
    if reasons.len() as f64 > MAX_FAILED_SHARE * cfg.replicates as f64 {
        return Err(Error::Suite { failed: reasons.len(), total: cfg.replicates, reasons });
    }

    let (_, specs, levels) = run.pick(cfg);
    let table = aggregate(specs, levels, &replicates);
    Ok(ExperimentResult {
        run,
        levels: levels.to_vec(),
        replicates,
        table,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `experiment,test,level,proportion,n_effective`
pub fn write_table1<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment", "test", "level", "proportion", "n_effective"])?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.test.clone(),
            r.level.to_string(),
            fmt_opt(r.proportion),
            r.n_effective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `nominal,test,empirical`; the test name is prefixed with the experiment
/// name when more than one calibration experiment is configured.
pub fn write_table2<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let multi = rows.iter().any(|r| r.experiment != rows[0].experiment);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["nominal", "test", "empirical"])?;
    for r in rows {
        let test = if multi { format!("{}:{}", r.experiment, r.test) } else { r.test.clone() };
        w.write_record([r.level.to_string(), test, fmt_opt(r.proportion)])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format, one line per (replicate, experiment, test, level):
/// `replicate,experiment,test,level,value,reject,error`.
pub fn write_replicates<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "experiment", "test", "level", "value", "reject", "error"])?;
    for rep in &result.replicates {
        if let Some(f) = &rep.failure {
            w.write_record([rep.replicate.to_string(), String::new(), String::new(), String::new(), "NA".into(), "NA".into(), f.clone()])?;
            continue;
        }
        for rec in &rep.records {
            for (level, d) in result.levels.iter().zip(&rec.decisions) {
                w.write_record([
                    rec.replicate.to_string(),
                    rec.experiment.clone(),
                    rec.test.name().to_string(),
                    level.to_string(),
                    fmt_opt(rec.value),
                    d.map_or_else(|| "NA".to_string(), |b| (b as u8).to_string()),
                    rec.error.clone().unwrap_or_default(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Recompute the table from a replicates CSV written by
/// [`write_replicates`]. Rows come out in first-appearance order.
pub fn aggregate_replicates_csv<R: std::io::Read>(input: R) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows: Vec<(TableRow, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec[1].is_empty() {
            continue;
        }
        let level: f64 = rec[3].parse().map_err(|_| Error::Data(format!("bad level `{}`", &rec[3])))?;
        let idx = match rows.iter().position(|(r, _)| r.experiment == rec[1] && r.test == rec[2] && r.level == level) {
            Some(i) => i,
            None => {
                rows.push((
                    TableRow { experiment: rec[1].into(), test: rec[2].into(), level, proportion: None, n_effective: 0 },
                    0,
                ));
                rows.len() - 1
            }
        };
        match &rec[5] {
            "NA" => {}
            flag => {
                rows[idx].0.n_effective += 1;
                rows[idx].1 += (flag == "1") as usize;
            }
        }
    }
    Ok(rows
        .into_iter()
        .map(|(mut r, hits)| {
            r.proportion = (r.n_effective > 0).then(|| hits as f64 / r.n_effective as f64);
            r
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub run: Run,
    pub version: &'static str,
    pub seed: u64,
    pub threads: Option<usize>,
    pub wall_time_seconds: f64,
    pub failed_replicates: Vec<(usize, String)>,
    pub missing_cells: usize,
    pub notes: Vec<&'static str>,
    pub config: &'a ExperimentConfig,
}

/// Write the table, the per-replicate CSV and the manifest into `dir`.
/// Returns the paths written.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (table, reps, manifest) = match result.run {
        Run::Experiments => ("table1.csv", "replicates.csv", "manifest.json"),
        Run::Calibration => ("table2.csv", "replicates_calibration.csv", "manifest_calibration.json"),
    };
    let paths: Vec<PathBuf> = [table, reps, manifest].iter().map(|f| dir.join(f)).collect();
    match result.run {
        Run::Experiments => write_table1(&result.table, fs::File::create(&paths[0])?)?,
        Run::Calibration => write_table2(&result.table, fs::File::create(&paths[0])?)?,
    }
    write_replicates(result, fs::File::create(&paths[1])?)?;
    let m = Manifest {
        run: result.run,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads: cfg.threads,
        wall_time_seconds: result.wall_time_seconds,
        failed_replicates: result.failures(),
        missing_cells: result.records().filter(|r| r.error.is_some()).count(),
        notes: vec![
            "PS tests: partial correlation given the outcome covariates, asymptotic Student-t reference",
            "FBST threshold: F_d(F_h^{-1}(1 - alpha)) with h the number of zero constraints",
            "hypotheses tested on the inclusion-probability scale",
        ],
        config: cfg,
    };
    fs::write(&paths[2], serde_json::to_string_pretty(&m)?)?;
    Ok(paths)
}
