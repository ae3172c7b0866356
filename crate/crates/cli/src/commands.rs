//! The subcommands: BCD and SGD training runs, their comparison, synthetic
//! IDX generation, and the scalar proximal-map checks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use splitbcd::baseline::{sgd_train, SgdConfig, SgdRun};
use splitbcd::data::{load_mnist_idx, render_trace_csv, synthetic_blobs, write_idx_pair, Dataset};
use splitbcd::diagnostics::{TraceRecord, NOT_APPLICABLE};
use splitbcd::operators::oracle::{run_prox_suites, SuiteReport};
use splitbcd::solver::{run_training, TrainingOptions, TrainingReport};
use splitbcd::state::init_weights;
use splitbcd::{LossKind, Problem};
use thiserror::Error;

use crate::config::{ConfigError, DataSource, RunConfig};

#[derive(Debug, Error)]
pub enum Failure {
    /// Bad configuration, unreadable input or unwritable output.
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
    /// A run finished (or stopped) with a failed convergence or oracle check.
    #[error("{0}")]
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) | Failure::Setup(_) => 2,
        }
    }
}

fn setup<E: std::fmt::Display>(what: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Setup(format!("{what}: {e}"))
}

pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>), Failure> {
    match &cfg.data {
        DataSource::Synthetic {
            n_train,
            n_test,
            classes,
            spread,
            seed,
        } => {
            let all = synthetic_blobs(n_train + n_test, cfg.dims[0], *classes, *spread, *seed)
                .map_err(setup("synthetic data"))?;
            let (train, test) = all.split_at(*n_train);
            Ok((train, (*n_test > 0).then_some(test)))
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            n_train,
            n_test,
        } => {
            let mut train = load_mnist_idx(train_images, train_labels).map_err(setup("training data"))?;
            if let Some(n) = n_train {
                train = train.subsample(*n, cfg.seed());
            }
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => {
                    let mut t = load_mnist_idx(i, l).map_err(setup("test data"))?;
                    if let Some(n) = n_test {
                        t = t.subsample(*n, cfg.seed().wrapping_add(1));
                    }
                    Some(t)
                }
                _ => None,
            };
            Ok((train, test))
        }
    }
}

pub fn build_problem(cfg: &RunConfig, train: &Dataset) -> Result<Problem, Failure> {
    let y = if cfg.hp.loss == LossKind::Hinge {
        train.signed_targets()
    } else {
        train.y.clone()
    };
    Problem::new(cfg.form, cfg.spec(), cfg.hp.clone(), train.x.clone(), y)
        .map_err(|e| Failure::Config(ConfigError::Invalid(e.to_string())))
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub method: &'static str,
    pub epochs: usize,
    pub final_total: f64,
    pub final_train_acc: f64,
    pub final_test_acc: Option<f64>,
    pub descent_pass: Option<bool>,
    pub descent_pass_count: Option<usize>,
    pub descent_check: Option<&'static str>,
    pub descent_constant: Option<f64>,
    pub rate_pass: Option<bool>,
    pub residual_pass: Option<bool>,
    pub iterate_bound: Option<f64>,
    pub bbar: Option<f64>,
    pub loss_lipschitz: Option<f64>,
    pub wall_seconds: f64,
}

impl Summary {
    fn invariants_hold(&self) -> bool {
        self.descent_pass != Some(false) && self.rate_pass != Some(false) && self.residual_pass != Some(false)
    }
}

fn measured(v: f64) -> Option<f64> {
    (v != NOT_APPLICABLE).then_some(v)
}

fn csv_text(trace: &[TraceRecord], timing: bool) -> Result<String, Failure> {
    let mut rows = trace.to_vec();
    if !timing {
        for r in &mut rows {
            r.wall_seconds = 0.0;
        }
    }
    render_trace_csv(&rows).map_err(setup("trace"))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(setup(path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(setup(path.display()))?;
    write(path, &(text + "\n"))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&cfg.output_dir).map_err(setup(cfg.output_dir.display()))?;
    Ok(cfg.output_dir.clone())
}

fn bcd_summary(problem: &Problem, report: &TrainingReport) -> Summary {
    let last = report.final_record();
    Summary {
        method: "bcd",
        epochs: last.epoch,
        final_total: last.objective.total,
        final_train_acc: last.train_acc,
        final_test_acc: measured(last.test_acc),
        descent_pass: Some(report.descent_pass()),
        descent_pass_count: Some(report.checks_passed),
        descent_check: Some(if report.sufficient { "sufficient" } else { "monotone" }),
        descent_constant: Some(report.a),
        rate_pass: Some(report.rate.pass),
        residual_pass: report.residual_pass,
        iterate_bound: Some(report.bound),
        bbar: Some(report.bbar),
        loss_lipschitz: problem.risk_lipschitz(),
        wall_seconds: last.wall_seconds,
    }
}

fn sgd_summary(run: &SgdRun) -> Summary {
    let last = run.trace.last().expect("trace holds the initial record");
    Summary {
        method: "sgd",
        epochs: last.epoch,
        final_total: last.objective.total,
        final_train_acc: last.train_acc,
        final_test_acc: measured(last.test_acc),
        descent_pass: None,
        descent_pass_count: None,
        descent_check: None,
        descent_constant: None,
        rate_pass: None,
        residual_pass: None,
        iterate_bound: None,
        bbar: None,
        loss_lipschitz: None,
        wall_seconds: last.wall_seconds,
    }
}

fn training_options(cfg: &RunConfig) -> TrainingOptions {
    TrainingOptions {
        epochs: cfg.epochs,
        init_std: cfg.init_std,
        init_bias: cfg.init_bias,
        check: cfg.check,
        abort_on_violation: true,
        track_residual: cfg.track_residual,
    }
}

/// Runs BCD and writes `bcd_trace.csv` and `bcd_summary.json`.
pub fn train_bcd(cfg: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<Summary, Failure> {
    let problem = build_problem(cfg, train)?;
    let dir = out_dir(cfg)?;
    let report = run_training(&problem, &train.labels, test, &training_options(cfg)).map_err(|e| match e {
        splitbcd::Error::DescentViolation { .. } | splitbcd::Error::NonFinite { .. } => Failure::Check(e.to_string()),
        other => Failure::Setup(other.to_string()),
    })?;
    write(&dir.join("bcd_trace.csv"), &csv_text(&report.trace, cfg.timing)?)?;
    let summary = bcd_summary(&problem, &report);
    write_json(&dir.join("bcd_summary.json"), &summary)?;
    Ok(summary)
}

/// Runs SGD from the same initial weights and writes `sgd_trace.csv` and
/// `sgd_summary.json`.
pub fn train_sgd(cfg: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<Summary, Failure> {
    let spec = cfg.spec();
    let sgd = SgdConfig {
        lr: cfg.sgd_lr,
        batch: cfg.sgd_batch,
        epochs: cfg.sgd_epochs,
        seed: cfg.seed(),
    };
    sgd.validate(train.len())
        .map_err(|e| Failure::Config(ConfigError::Invalid(format!("`sgd.batch`: {e}"))))?;
    let dir = out_dir(cfg)?;
    let init = init_weights(&spec, cfg.init_std, cfg.init_bias, cfg.seed());
    let run = sgd_train(&spec, train, test, &sgd, init).map_err(|e| match e {
        splitbcd::Error::NonFinite { .. } => Failure::Check(e.to_string()),
        other => Failure::Setup(other.to_string()),
    })?;
    write(&dir.join("sgd_trace.csv"), &csv_text(&run.trace, cfg.timing)?)?;
    let summary = sgd_summary(&run);
    write_json(&dir.join("sgd_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    /// Final training accuracies.
    pub bcd_accuracy: f64,
    pub sgd_accuracy: f64,
    pub bcd_min: f64,
    pub sgd_max: f64,
    pub bcd_reached: bool,
    pub sgd_stalled: bool,
    pub bcd_invariants: bool,
    pub verdict: bool,
}

/// Trains both methods on the same data and initial weights, writes their
/// outputs plus `compare.json`.
pub fn compare(cfg: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<Verdict, Failure> {
    let bcd = train_bcd(cfg, train, test)?;
    let sgd = train_sgd(cfg, train, test)?;
    let bcd_reached = bcd.final_train_acc >= cfg.compare_bcd_min;
    let sgd_stalled = sgd.final_train_acc <= cfg.compare_sgd_max;
    let bcd_invariants = bcd.invariants_hold();
    let v = Verdict {
        bcd_accuracy: bcd.final_train_acc,
        sgd_accuracy: sgd.final_train_acc,
        bcd_min: cfg.compare_bcd_min,
        sgd_max: cfg.compare_sgd_max,
        bcd_reached,
        sgd_stalled,
        bcd_invariants,
        verdict: bcd_reached && sgd_stalled && bcd_invariants,
    };
    write_json(&cfg.output_dir.join("compare.json"), &v)?;
    Ok(v)
}

/// Turns a BCD summary into the exit status of `train-bcd`.
pub fn bcd_outcome(s: &Summary) -> Result<(), Failure> {
    if s.invariants_hold() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "convergence checks failed: descent {:?}, rate {:?}, residual {:?}",
            s.descent_pass, s.rate_pass, s.residual_pass
        )))
    }
}

pub struct GenData {
    pub n: usize,
    pub n_test: usize,
    pub side: usize,
    pub classes: usize,
    pub spread: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes blob data as IDX files (`train-images.idx`, `train-labels.idx`
/// and, with a test split, the `test-` pair). Pixels are min-max scaled to
/// bytes.
pub fn gen_data(g: &GenData) -> Result<Vec<PathBuf>, Failure> {
    let d0 = g.side * g.side;
    let all = synthetic_blobs(g.n + g.n_test, d0, g.classes, g.spread, g.seed).map_err(setup("synthetic data"))?;
    fs::create_dir_all(&g.out).map_err(setup(g.out.display()))?;
    let (train, test) = all.split_at(g.n);
    let mut written = Vec::new();
    let mut pair = |data: &Dataset, stem: &str| -> Result<(), Failure> {
        let images = g.out.join(format!("{stem}-images.idx"));
        let labels = g.out.join(format!("{stem}-labels.idx"));
        write_idx_pair(data, g.side, g.side, &images, &labels).map_err(setup(stem))?;
        written.push(images);
        written.push(labels);
        Ok(())
    };
    pair(&train, "train")?;
    if g.n_test > 0 {
        pair(&test, "test")?;
    }
    Ok(written)
}

pub fn prox_check(cases: usize, seed: u64) -> Vec<SuiteReport> {
    run_prox_suites(cases, seed)
}
