//! Experiment configuration, execution and result files.
//!
//! A run is described by a TOML file (every key optional) and produces a
//! tidy CSV with one observation per row. MDP `i` of a run uses seed
//! `seed + i`; everything else is derived from that through
//! [`crate::seeding`], so output bytes do not depend on the worker count.

pub mod audit;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    self, BehaviorMode, InnerConfig, IterationTrace, OnlineAcConfig, Reference,
};
use crate::error::{LabError, Result};
use crate::mdp::{exact_value, gen_random_mdp, Mdp, SoftmaxPolicy, TabularPolicy};
use crate::operators::TraceSpec;
use crate::sampling::{self, SweepConfig};
use crate::seeding;

pub use audit::{AuditCheck, AuditParams};

/// Version of the result file layout, written as the first data row.
pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 8] = [
    "experiment",
    "seed",
    "algorithm",
    "trace_kind",
    "trace_param",
    "iteration",
    "metric",
    "value",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Error curves of VI, multi-step PE, multi-step PI and DoMo-VI.
    #[default]
    FigRate,
    /// DoMo-VI with a fixed number of inner gradient steps.
    FigGradientStep,
    /// Bias and variance of the per-trajectory gradient across clip levels.
    FigBiasVariance,
    /// Battery of numerical checks; fails the run when any check fails.
    TheoremAudit,
    /// Sampled actor-critic.
    Online,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::FigRate,
        ExperimentKind::FigGradientStep,
        ExperimentKind::FigBiasVariance,
        ExperimentKind::TheoremAudit,
        ExperimentKind::Online,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FigRate => "fig_rate",
            ExperimentKind::FigGradientStep => "fig_gradient_step",
            ExperimentKind::FigBiasVariance => "fig_bias_variance",
            ExperimentKind::TheoremAudit => "theorem_audit",
            ExperimentKind::Online => "online",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                LabError::Config(format!("unknown experiment '{s}', expected one of {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpParams {
    pub n_states: usize,
    pub n_actions: usize,
    /// Dirichlet concentration of each transition row.
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for MdpParams {
    fn default() -> Self {
        Self {
            n_states: 20,
            n_actions: 5,
            alpha: 0.01,
            gamma: 0.9,
        }
    }
}

impl MdpParams {
    pub fn generate(&self, seed: u64) -> Result<Mdp> {
        gen_random_mdp(self.n_states, self.n_actions, self.alpha, self.gamma, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientStepParams {
    /// Inner step budgets, one curve each.
    pub n_values: Vec<usize>,
    pub learning_rate: f64,
}

impl Default for GradientStepParams {
    fn default() -> Self {
        Self {
            n_values: vec![1, 10, 100],
            // The state-averaged gradient at the greedy-log start is of
            // order 1e-5 / n_states, so unit steps barely move the logits.
            learning_rate: 1e5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasVarianceParams {
    pub c_bar_grid: Vec<f64>,
    /// Trajectories per start state in one estimate.
    pub n_traj: usize,
    /// Independent estimates used for the bias and variance.
    pub n_rep: usize,
    pub horizon: usize,
    /// Target logits are standard normal times this factor.
    pub logit_scale: f64,
}

impl Default for BiasVarianceParams {
    fn default() -> Self {
        Self {
            c_bar_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0],
            n_traj: 10,
            n_rep: 50,
            horizon: 100,
            logit_scale: 0.5,
        }
    }
}

/// Full description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub n_mdps: usize,
    pub iterations: usize,
    /// V-trace clip level of the evaluation and improvement operators.
    pub c_bar: f64,
    /// CSV destination; the CLI flag takes precedence.
    pub output: Option<PathBuf>,
    /// Online runs record every `record_every`-th iteration and the last.
    pub record_every: usize,
    pub mdp: MdpParams,
    pub behavior: BehaviorMode,
    pub inner: InnerConfig,
    pub gradient_step: GradientStepParams,
    pub bias_variance: BiasVarianceParams,
    pub online: OnlineAcConfig,
    pub audit: AuditParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::default(),
            seed: 0,
            n_mdps: 100,
            iterations: 30,
            c_bar: 10.0,
            output: None,
            record_every: 50,
            mdp: MdpParams::default(),
            behavior: BehaviorMode::default(),
            inner: InnerConfig::default(),
            gradient_step: GradientStepParams::default(),
            bias_variance: BiasVarianceParams::default(),
            online: OnlineAcConfig::default(),
            audit: AuditParams::default(),
        }
    }
}

/// A range check that names the offending key.
fn check(ok: bool, key: &str, msg: String) -> std::result::Result<(), (String, String)> {
    if ok {
        Ok(())
    } else {
        Err((key.to_string(), msg))
    }
}

impl ExperimentConfig {
    /// Range checks. The error names the key that failed.
    pub fn validate(&self) -> Result<()> {
        self.check_ranges().map_err(|(key, msg)| LabError::Config(format!("{key}: {msg}")))
    }

    fn check_ranges(&self) -> std::result::Result<(), (String, String)> {
        let m = &self.mdp;
        check(m.n_states >= 2, "n_states", format!("must be >= 2, got {}", m.n_states))?;
        check(m.n_actions >= 1, "n_actions", format!("must be >= 1, got {}", m.n_actions))?;
        check(
            m.alpha > 0.0 && m.alpha.is_finite(),
            "alpha",
            format!("must be positive and finite, got {}", m.alpha),
        )?;
        check((0.0..1.0).contains(&m.gamma), "gamma", format!("must lie in [0, 1), got {}", m.gamma))?;
        check(self.n_mdps >= 1, "n_mdps", "must be >= 1".into())?;
        check(self.iterations >= 1, "iterations", "must be >= 1".into())?;
        check(self.c_bar >= 0.0, "c_bar", format!("must be >= 0, got {}", self.c_bar))?;
        check(self.record_every >= 1, "record_every", "must be >= 1".into())?;
        self.behavior.validate().map_err(|e| ("eps".to_string(), e.to_string()))?;
        self.inner.validate().map_err(|e| (inner_key(&e), e.to_string()))?;
        let g = &self.gradient_step;
        check(!g.n_values.is_empty(), "n_values", "must be non-empty".into())?;
        check(
            g.learning_rate >= 0.0 && g.learning_rate.is_finite(),
            "learning_rate",
            format!("must be finite and >= 0, got {}", g.learning_rate),
        )?;
        let b = &self.bias_variance;
        check(!b.c_bar_grid.is_empty(), "c_bar_grid", "must be non-empty".into())?;
        check(
            b.c_bar_grid.iter().all(|c| *c >= 0.0),
            "c_bar_grid",
            "entries must be >= 0".into(),
        )?;
        check(b.n_traj >= 1, "n_traj", "must be >= 1".into())?;
        check(b.n_rep >= 2, "n_rep", "must be >= 2".into())?;
        check(b.horizon >= 1, "horizon", "must be >= 1".into())?;
        check(
            b.logit_scale >= 0.0 && b.logit_scale.is_finite(),
            "logit_scale",
            "must be finite and >= 0".into(),
        )?;
        self.online.validate().map_err(|e| ("online".to_string(), e.to_string()))?;
        self.audit.validate().map_err(|e| ("audit".to_string(), e.to_string()))?;
        Ok(())
    }

    pub fn trace_spec(&self) -> TraceSpec {
        TraceSpec::vtrace(self.c_bar)
    }
}

fn inner_key(e: &LabError) -> String {
    let msg = e.to_string();
    ["learning_rate", "tol", "max_steps"]
        .into_iter()
        .find(|k| msg.contains(k))
        .unwrap_or("inner")
        .to_string()
}

/// 1-based line of the first `key = ...` assignment in `text`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Parses and range-checks a configuration. Errors carry the line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
    cfg.check_ranges().map_err(|(key, msg)| {
        let at = line_of(text, &key).map(|l| format!("line {l}: ")).unwrap_or_default();
        LabError::Config(format!("{at}{key} {msg}"))
    })?;
    Ok(cfg)
}

/// Reads and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// One observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub algorithm: String,
    pub trace_kind: String,
    pub trace_param: f64,
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
}

/// Shortest round-trip text, with `nan`/`inf` spelled out.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.as_str(),
            &r.seed.to_string(),
            &r.algorithm,
            &r.trace_kind,
            &format_float(r.trace_param),
            &r.iteration.to_string(),
            &r.metric,
            &format_float(r.value),
        ])?;
    }
    w.into_inner().map_err(|e| LabError::Io(e.into_error()))
}

/// Writes the rows atomically.
pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    crate::io::write_atomic(path, &rows_to_csv(rows)?)
}

/// Mean and standard error of one curve point across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub trace_kind: String,
    pub trace_param: f64,
    pub iteration: usize,
    pub metric: String,
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

/// Groups rows by everything except the seed, in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (String, String, u64, usize, String);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<f64>> = HashMap::new();
    for r in rows.iter().filter(|r| r.algorithm != META) {
        let key = (
            r.algorithm.clone(),
            r.trace_kind.clone(),
            r.trace_param.to_bits(),
            r.iteration,
            r.metric.clone(),
        );
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let vals = &groups[&key];
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std_err = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                algorithm: key.0,
                trace_kind: key.1,
                trace_param: f64::from_bits(key.2),
                iteration: key.3,
                metric: key.4,
                mean,
                std_err,
                count: vals.len(),
            }
        })
        .collect()
}

/// A seed whose run stopped with an error.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RunFailure>,
    /// Audit results; empty for other experiments.
    pub checks: Vec<AuditCheck>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }
}

const META: &str = "meta";

struct RowSink<'a> {
    experiment: &'a str,
    seed: u64,
    rows: Vec<ResultRow>,
}

impl<'a> RowSink<'a> {
    fn new(experiment: &'a str, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, algorithm: &str, spec: Option<&TraceSpec>, iteration: usize, metric: &str, value: f64) {
        let (kind, param) = spec.map_or(("none", f64::NAN), |s| s.descriptor());
        self.rows.push(ResultRow {
            experiment: self.experiment.to_string(),
            seed: self.seed,
            algorithm: algorithm.to_string(),
            trace_kind: kind.to_string(),
            trace_param: param,
            iteration,
            metric: metric.to_string(),
            value,
        });
    }

    fn trace(&mut self, mdp: &Mdp, t: &IterationTrace, spec: Option<&TraceSpec>) {
        let name = t.algorithm.as_str();
        for (i, (l2, inf)) in t.errors_l2.iter().zip(&t.errors_inf).enumerate() {
            self.push(name, spec, i, "error_l2", *l2);
            self.push(name, spec, i, "error_inf", *inf);
            if let Some(eta) = t.eta_seq.get(i) {
                self.push(name, spec, i, "eta", *eta);
            }
            if let Some(steps) = t.inner_steps.get(i) {
                self.push(name, spec, i, "inner_steps", *steps as f64);
            }
        }
        if let Some(eta_star) = t.eta_star {
            self.push(name, spec, 0, "eta_star", eta_star);
        }
        if let Some(bound) = t.rate_bound(mdp) {
            for (i, b) in bound.iter().enumerate() {
                self.push(name, spec, i, "rate_bound", *b);
            }
        }
        self.push(name, spec, 0, "diverged", if t.diverged { 1.0 } else { 0.0 });
    }
}

fn meta_rows(cfg: &ExperimentConfig) -> Vec<ResultRow> {
    let exp = cfg.experiment.name();
    let mut sink = RowSink::new(exp, cfg.seed);
    sink.push(META, None, 0, "schema_version", SCHEMA_VERSION as f64);
    let (mode, eps) = match cfg.behavior {
        BehaviorMode::Uniform => ("behavior_uniform", 1.0),
        BehaviorMode::PreviousMixed { eps } => ("behavior_previous_mixed", eps),
    };
    sink.push(META, None, 0, mode, eps);
    sink.push(META, None, 0, "n_mdps", cfg.n_mdps as f64);
    sink.rows
}

fn fig_rate(cfg: &ExperimentConfig, mdp: &Mdp, sink: &mut RowSink<'_>) -> Result<()> {
    let reference = Reference::new(mdp)?;
    let spec = cfg.trace_spec();
    let iters = cfg.iterations;
    let vi = algorithms::run_vi(mdp, &reference, iters)?;
    let pe = algorithms::run_multistep_pe(mdp, &reference, cfg.behavior, &spec, iters)?;
    let pi = algorithms::run_multistep_pi(mdp, &reference, cfg.behavior, &spec, iters, &cfg.inner)?;
    let domo = algorithms::run_domo_vi(mdp, &reference, cfg.behavior, &spec, iters, &cfg.inner)?;
    sink.trace(mdp, &vi, None);
    for t in [&pe, &pi, &domo] {
        sink.trace(mdp, t, Some(&spec));
    }
    Ok(())
}

fn fig_gradient_step(cfg: &ExperimentConfig, mdp: &Mdp, sink: &mut RowSink<'_>) -> Result<()> {
    let reference = Reference::new(mdp)?;
    let spec = cfg.trace_spec();
    let iters = cfg.iterations;
    sink.trace(mdp, &algorithms::run_vi(mdp, &reference, iters)?, None);
    let pe = algorithms::run_multistep_pe(mdp, &reference, cfg.behavior, &spec, iters)?;
    sink.trace(mdp, &pe, Some(&spec));
    for &n in &cfg.gradient_step.n_values {
        let t = algorithms::run_domo_ac_tabular(
            mdp,
            &reference,
            cfg.behavior,
            &spec,
            iters,
            n,
            cfg.gradient_step.learning_rate,
        )?;
        sink.trace(mdp, &t, Some(&spec));
    }
    Ok(())
}

/// Target policy of the bias/variance study: standard normal logits scaled
/// by `logit_scale`.
pub fn bias_variance_policy(mdp: &Mdp, seed: u64, logit_scale: f64) -> SoftmaxPolicy {
    let mut rng = seeding::rng(seeding::derive(seed, &[seeding::POLICY, 0]));
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let logits = (0..n * na)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * logit_scale
        })
        .collect();
    SoftmaxPolicy::new(n, na, logits).expect("logit count matches the shape")
}

fn fig_bias_variance(cfg: &ExperimentConfig, mdp: &Mdp, seed: u64, sink: &mut RowSink<'_>) -> Result<()> {
    let p = &cfg.bias_variance;
    let theta = bias_variance_policy(mdp, seed, p.logit_scale);
    let mu = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let v = exact_value(mdp, &theta.probs())?;
    let sweep = SweepConfig {
        c_bar_grid: p.c_bar_grid.clone(),
        n_traj: p.n_traj,
        n_rep: p.n_rep,
        horizon: p.horizon,
        seed,
    };
    let stats = sampling::bias_variance_sweep(mdp, &theta, &mu, &v, &sweep)?;
    for (i, s) in stats.iter().enumerate() {
        let spec = TraceSpec::vtrace(s.c_bar);
        sink.push("sampled_gradient", Some(&spec), i, "bias_sq", s.bias_sq);
        sink.push("sampled_gradient", Some(&spec), i, "variance", s.variance);
        sink.push("sampled_gradient", Some(&spec), i, "mse", s.mse);
    }
    Ok(())
}

fn online(cfg: &ExperimentConfig, mdp: &Mdp, seed: u64, sink: &mut RowSink<'_>) -> Result<()> {
    let reference = Reference::new(mdp)?;
    let spec = cfg.trace_spec();
    let t = algorithms::run_domo_ac_online(mdp, &reference, &spec, &cfg.online, seed)?;
    let last = t.errors_l2.len() - 1;
    for i in (0..=last).filter(|i| i % cfg.record_every == 0 || *i == last) {
        sink.push(&t.algorithm, Some(&spec), i, "error_l2", t.errors_l2[i]);
        sink.push(&t.algorithm, Some(&spec), i, "error_inf", t.errors_inf[i]);
    }
    sink.push(&t.algorithm, Some(&spec), 0, "diverged", if t.diverged { 1.0 } else { 0.0 });
    Ok(())
}

fn failure_metric(e: &LabError) -> &'static str {
    match e {
        LabError::Parameter(_) => "failed_parameter",
        LabError::Domain(_) => "failed_domain",
        LabError::Numeric(_) => "failed_numeric",
        LabError::Config(_) => "failed_config",
        _ => "failed_io",
    }
}

fn run_one(cfg: &ExperimentConfig, index: usize) -> (Vec<ResultRow>, Option<RunFailure>) {
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut sink = RowSink::new(cfg.experiment.name(), seed);
    let outcome = cfg.mdp.generate(seed).and_then(|mdp| match cfg.experiment {
        ExperimentKind::FigRate => fig_rate(cfg, &mdp, &mut sink),
        ExperimentKind::FigGradientStep => fig_gradient_step(cfg, &mdp, &mut sink),
        ExperimentKind::FigBiasVariance => fig_bias_variance(cfg, &mdp, seed, &mut sink),
        ExperimentKind::Online => online(cfg, &mdp, seed, &mut sink),
        ExperimentKind::TheoremAudit => unreachable!("audits are not run per MDP"),
    });
    match outcome {
        Ok(()) => (sink.rows, None),
        Err(e) => {
            // Keep the seed visible in the file; partial rows are dropped.
            let mut failed = RowSink::new(cfg.experiment.name(), seed);
            failed.push("run", None, 0, failure_metric(&e), f64::NAN);
            (
                failed.rows,
                Some(RunFailure {
                    seed,
                    reason: e.to_string(),
                }),
            )
        }
    }
}

/// Runs an experiment on a pool of `jobs` worker threads.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::Parameter(format!("cannot build worker pool: {e}")))?;
    let mut rows = meta_rows(cfg);
    let mut failures = Vec::new();
    let mut checks = Vec::new();
    if cfg.experiment == ExperimentKind::TheoremAudit {
        checks = pool.install(|| audit::run_audit(cfg))?;
        rows.extend(audit::check_rows(cfg, &checks));
    } else {
        let per_mdp: Vec<_> = pool.install(|| (0..cfg.n_mdps).into_par_iter().map(|i| run_one(cfg, i)).collect());
        for (r, f) in per_mdp {
            rows.extend(r);
            failures.extend(f);
        }
    }
    Ok(RunReport {
        experiment: cfg.experiment,
        rows,
        failures,
        checks,
    })
}
