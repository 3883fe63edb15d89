//! Numerical audit: each check reduces many cases to one worst-case
//! statistic compared against a fixed threshold.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ResultRow, RowSink};
use crate::algorithms::{self, maximize_objective, InnerConfig, InnerSolver, Reference};
use crate::error::{LabError, Result};
use crate::gradients::{self, exact_operator_gradient, exact_truncated_gradient, ImprovementObjective};
use crate::mdp::{exact_value, gen_random_mdp, greedy_policy, Mdp, SoftmaxPolicy, TabularPolicy, ValueFunction};
use crate::operators::{self, apply_operator, contraction_rate, TraceKind, TraceSpec};
use crate::sampling::{self, sample_trajectory};
use crate::seeding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    /// Random MDPs (with the run's MDP parameters) per check.
    pub n_seeds: usize,
    pub c_bar_grid: Vec<f64>,
    /// Trajectories behind each Monte Carlo mean.
    pub mc_trajectories: usize,
    pub mc_horizon: usize,
    /// Random 3-state, 2-action instances for the per-state maximization
    /// checks.
    pub small_instances: usize,
    /// Negative control: give the clipped trace branch slope 1 in every
    /// gradient so the derivative checks must fail.
    pub inject_clip_bug: bool,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            c_bar_grid: vec![0.0, 0.5, 1.0, 10.0],
            mc_trajectories: 20_000,
            mc_horizon: 10,
            small_instances: 20,
            inject_clip_bug: false,
        }
    }
}

impl AuditParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 || self.small_instances == 0 {
            return Err(LabError::Parameter("n_seeds and small_instances must be >= 1".into()));
        }
        if self.c_bar_grid.is_empty() || self.c_bar_grid.iter().any(|c| !(*c >= 0.0)) {
            return Err(LabError::Parameter("c_bar_grid must be non-empty with entries >= 0".into()));
        }
        if self.mc_trajectories < 2 || self.mc_horizon == 0 {
            return Err(LabError::Parameter("need mc_trajectories >= 2 and mc_horizon >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one check. `passed` is `statistic <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub cases: usize,
}

impl AuditCheck {
    fn new(name: &str, stats: &[f64], threshold: f64) -> Self {
        // NaN compares false everywhere, so surface it explicitly.
        let statistic = stats
            .iter()
            .fold(f64::NEG_INFINITY, |m, s| if s.is_nan() || m.is_nan() { f64::NAN } else { m.max(*s) });
        Self {
            name: name.to_string(),
            passed: statistic <= threshold,
            statistic,
            threshold,
            cases: stats.len(),
        }
    }
}

struct Instance {
    mdp: Mdp,
    theta: SoftmaxPolicy,
    pi: TabularPolicy,
    mu: TabularPolicy,
    seed: u64,
}

fn instance(mdp: Mdp, seed: u64) -> Instance {
    let mut rng = seeding::rng(seeding::derive(seed, &[seeding::AUDIT, 0]));
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let logits = (0..n * na).map(|_| StandardNormal.sample(&mut rng)).collect();
    let theta = SoftmaxPolicy::new(n, na, logits).expect("shape");
    let mu = TabularPolicy::random(&mut rng, n, na).mix_uniform(0.2);
    Instance {
        pi: theta.probs(),
        theta,
        mu,
        mdp,
        seed,
    }
}

fn random_values(n: usize, scale: f64, seed: u64) -> ValueFunction {
    let mut rng = seeding::rng(seed);
    ValueFunction(
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect(),
    )
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
}

impl Ctx<'_> {
    fn params(&self) -> &AuditParams {
        &self.cfg.audit
    }

    fn instances(&self) -> Result<Vec<Instance>> {
        (0..self.params().n_seeds)
            .into_par_iter()
            .map(|k| {
                let seed = self.cfg.seed.wrapping_add(k as u64);
                Ok(instance(self.cfg.mdp.generate(seed)?, seed))
            })
            .collect()
    }

    fn small_instances(&self) -> Result<Vec<Instance>> {
        (0..self.params().small_instances)
            .into_par_iter()
            .map(|k| {
                let seed = seeding::derive(self.cfg.seed, &[seeding::AUDIT, 1, k as u64]);
                Ok(instance(gen_random_mdp(3, 2, 1.0, self.cfg.mdp.gamma, seed)?, seed))
            })
            .collect()
    }

    /// V-trace specs of the grid, with the negative control applied.
    fn clip_specs(&self) -> Vec<TraceSpec> {
        let slope = if self.params().inject_clip_bug { 1.0 } else { 0.0 };
        self.params()
            .c_bar_grid
            .iter()
            .map(|&c| TraceSpec {
                clipped_slope: slope,
                ..TraceSpec::vtrace(c)
            })
            .collect()
    }

    fn kernel_specs(&self) -> Vec<TraceSpec> {
        let mut specs = self.clip_specs();
        specs.push(TraceSpec::tree_backup());
        specs.push(TraceSpec::q_lambda(0.7));
        specs
    }
}

fn flatten<T>(nested: Vec<Vec<T>>) -> Vec<T> {
    nested.into_iter().flatten().collect()
}

fn fixed_point(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    let specs = ctx.kernel_specs();
    let peng = TraceSpec::peng_lambda(0.7);
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let v = exact_value(&i.mdp, &i.pi)?;
            let mut out = specs
                .iter()
                .map(|s| Ok(apply_operator(&i.mdp, &i.pi, &i.mu, s, &v)?.norm_inf_diff(&v)))
                .collect::<Result<Vec<_>>>()?;
            // Peng's operator only fixes V^pi on-policy.
            out.push(apply_operator(&i.mdp, &i.pi, &i.pi, &peng, &v)?.norm_inf_diff(&v));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("fixed_point", &flatten(stats), 1e-8))
}

fn contraction(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    let specs = ctx.kernel_specs();
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let scale = 1.0 / (1.0 - i.mdp.gamma());
            let n = i.mdp.n_states();
            let mut out = Vec::new();
            for (j, s) in specs.iter().enumerate() {
                let rate = contraction_rate(&i.mdp, &i.pi, &i.mu, s)?;
                let v1 = random_values(n, scale, seeding::derive(i.seed, &[seeding::AUDIT, 2, j as u64, 0]));
                let v2 = random_values(n, scale, seeding::derive(i.seed, &[seeding::AUDIT, 2, j as u64, 1]));
                let r1 = apply_operator(&i.mdp, &i.pi, &i.mu, s, &v1)?;
                let r2 = apply_operator(&i.mdp, &i.pi, &i.mu, s, &v2)?;
                if let TraceKind::QLambda { .. } = s.kind {
                    // A constant trace can weight transitions negatively; the
                    // operator is then Lipschitz with the absolute row sum,
                    // which may exceed one, and `eta` bounds nothing.
                    out.push(r1.norm_inf_diff(&r2) - rate.operator_norm * v1.norm_inf_diff(&v2));
                    continue;
                }
                out.push(r1.norm_inf_diff(&r2) - rate.eta * v1.norm_inf_diff(&v2));
                out.push(rate.eta - i.mdp.gamma());
                out.extend(rate.per_state.iter().map(|r| -r));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("contraction", &flatten(stats), 1e-10))
}

/// The bound assumes an exact improvement step, so DoMo-VI runs the exact
/// solver here.
fn rate_bound(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    let specs: Vec<TraceSpec> = ctx.params().c_bar_grid.iter().map(|&c| TraceSpec::vtrace(c)).collect();
    let exact = InnerConfig {
        solver: InnerSolver::Exact,
        ..ctx.cfg.inner
    };
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let reference = Reference::new(&i.mdp)?;
            let mut out = Vec::new();
            for s in &specs {
                let t = algorithms::run_domo_vi(
                    &i.mdp,
                    &reference,
                    ctx.cfg.behavior,
                    s,
                    ctx.cfg.iterations,
                    &exact,
                )?;
                let bound = t.rate_bound(&i.mdp).expect("V-trace has a rate");
                out.extend(t.errors_inf.iter().zip(&bound).map(|(e, b)| e - b));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("rate_bound", &flatten(stats), 1e-6))
}

fn gradient_gap(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    // The bound needs c <= rho, which Q(lambda) does not satisfy.
    let mut specs = ctx.clip_specs();
    specs.push(TraceSpec::tree_backup());
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            specs
                .iter()
                .map(|s| Ok(gradients::theorem2_check(&i.mdp, &i.theta, &i.mu, s)?.worst_slack()))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("gradient_gap", &flatten(stats), 1e-10))
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Central differences over every logit of a vector-valued map, `[out][j]`.
fn central_difference<F>(theta: &SoftmaxPolicy, h: f64, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&SoftmaxPolicy) -> Result<Vec<f64>>,
{
    let dim = theta.logits().len();
    let mut cols = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut plus = theta.clone();
        plus.logits_mut()[j] += h;
        let mut minus = theta.clone();
        minus.logits_mut()[j] -= h;
        let (fp, fm) = (f(&plus)?, f(&minus)?);
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let n_out = cols.first().map_or(0, Vec::len);
    Ok((0..n_out).map(|x| cols.iter().map(|c| c[x]).collect()).collect())
}

fn exact_gradient_fd(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    let specs = ctx.kernel_specs();
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let v = random_values(i.mdp.n_states(), 1.0, seeding::derive(i.seed, &[seeding::AUDIT, 3]));
            let mut out = Vec::new();
            for s in &specs {
                let g = exact_operator_gradient(&i.mdp, &i.theta, &i.mu, s, &v)?;
                let fd = central_difference(&i.theta, 1e-6, |t| {
                    Ok(apply_operator(&i.mdp, &t.probs(), &i.mu, s, &v)?.0)
                })?;
                out.push(relative_gap(&g.grad, &fd.concat()));
            }
            let pg = gradients::exact_policy_gradient(&i.mdp, &i.theta)?;
            let fd = central_difference(&i.theta, 1e-6, |t| Ok(exact_value(&i.mdp, &t.probs())?.0))?;
            out.push(relative_gap(&pg.grad, &fd.concat()));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("exact_gradient_fd", &flatten(stats), 1e-5))
}

const TRAJECTORIES_PER_FD_CASE: usize = 10;

fn sampled_gradient_fd(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    let specs = ctx.kernel_specs();
    let horizon = ctx.params().mc_horizon;
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let v = random_values(i.mdp.n_states(), 1.0, seeding::derive(i.seed, &[seeding::AUDIT, 4]));
            let gamma = i.mdp.gamma();
            let mut out = Vec::new();
            for k in 0..TRAJECTORIES_PER_FD_CASE {
                let start = k % i.mdp.n_states();
                let seed = seeding::derive(i.seed, &[seeding::AUDIT, 5, k as u64]);
                let traj = sample_trajectory(&i.mdp, &i.mu, start, horizon, seed)?;
                for s in &specs {
                    let g = sampling::stochastic_gradient(&traj, &i.theta, &i.mu, s, &v, gamma)?;
                    let fd = central_difference(&i.theta, 1e-6, |t| {
                        Ok(vec![sampling::stochastic_target(&traj, &t.probs(), &i.mu, s, &v, gamma)?])
                    })?;
                    out.push(relative_gap(&g, &fd[0]));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("sampled_gradient_fd", &flatten(stats), 1e-5))
}

/// `|mean - target| / (sd / sqrt(n))`; exact agreement of a constant sample
/// scores 0, disagreement scores infinity.
fn z_score(samples: impl Iterator<Item = f64> + Clone, target: f64) -> f64 {
    let n = samples.clone().count() as f64;
    let mean = samples.clone().sum::<f64>() / n;
    let var = samples.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let diff = (mean - target).abs();
    if se > 0.0 {
        diff / se
    } else if diff <= 1e-12 * target.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Monte Carlo means of the sampled target and gradient from state 0 against
/// the truncated operator, as `(target |z|, gradient |z|)`.
///
/// The gradient is scored through its projection on a fixed standard normal
/// direction drawn from `seed`, so each call yields one z-score per
/// quantity whatever the number of logits.
#[allow(clippy::too_many_arguments)]
pub fn unbiasedness_z(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let pi = theta.probs();
    let gamma = mdp.gamma();
    let mut rng = seeding::rng(seeding::derive(seed, &[seeding::AUDIT]));
    let direction: Vec<f64> = (0..pi.probs().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let project = |g: &[f64]| g.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>();
    let samples: Vec<(f64, f64)> = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let traj = sample_trajectory(mdp, mu, 0, horizon, seeding::derive(seed, &[seeding::TRAJECTORY, k as u64]))?;
            Ok((
                sampling::stochastic_target(&traj, &pi, mu, spec, v, gamma)?,
                project(&sampling::stochastic_gradient(&traj, theta, mu, spec, v, gamma)?),
            ))
        })
        .collect::<Result<_>>()?;
    let exact = operators::apply_truncated(mdp, &pi, mu, spec, v, horizon)?;
    let g = exact_truncated_gradient(mdp, theta, mu, spec, v, horizon)?;
    Ok((
        z_score(samples.iter().map(|s| s.0), exact[0]),
        z_score(samples.iter().map(|s| s.1), project(g.row(0))),
    ))
}

fn unbiasedness(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<(AuditCheck, AuditCheck)> {
    let p = ctx.params();
    let mut targets = Vec::new();
    let mut grads = Vec::new();
    for i in inst {
        let v = random_values(i.mdp.n_states(), 1.0, seeding::derive(i.seed, &[seeding::AUDIT, 6]));
        for (j, s) in ctx.clip_specs().iter().enumerate() {
            let seed = seeding::derive(i.seed, &[seeding::AUDIT, 7, j as u64]);
            let (zt, zg) = unbiasedness_z(&i.mdp, &i.theta, &i.mu, s, &v, p.mc_trajectories, p.mc_horizon, seed)?;
            targets.push(zt);
            grads.push(zg);
        }
    }
    Ok((
        AuditCheck::new("sampled_target_unbiased", &targets, 4.0),
        AuditCheck::new("sampled_gradient_unbiased", &grads, 4.0),
    ))
}

fn score_form(ctx: &Ctx<'_>, inst: &[Instance]) -> Result<AuditCheck> {
    let horizon = ctx.params().mc_horizon;
    let spec = TraceSpec::vtrace(f64::INFINITY);
    let stats = inst
        .par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let v = random_values(i.mdp.n_states(), 1.0, seeding::derive(i.seed, &[seeding::AUDIT, 8]));
            (0..TRAJECTORIES_PER_FD_CASE)
                .map(|k| {
                    let seed = seeding::derive(i.seed, &[seeding::AUDIT, 9, k as u64]);
                    let traj = sample_trajectory(&i.mdp, &i.mu, k % i.mdp.n_states(), horizon, seed)?;
                    let a = sampling::stochastic_gradient(&traj, &i.theta, &i.mu, &spec, &v, i.mdp.gamma())?;
                    let b = sampling::doubly_robust_score_gradient(&traj, &i.theta, &i.mu, &v, i.mdp.gamma())?;
                    Ok(relative_gap(&a, &b))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("score_form_identity", &flatten(stats), 1e-10))
}

/// Fraction of states where the maximizer of Peng's objective disagrees with
/// the one-step greedy action.
pub fn peng_greedy_mismatch(
    mdp: &Mdp,
    mu: &TabularPolicy,
    lambda: f64,
    v: &ValueFunction,
    cfg: &InnerConfig,
) -> Result<f64> {
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let obj = ImprovementObjective::OffPolicy {
        mu,
        spec: TraceSpec::peng_lambda(lambda),
    };
    let out = maximize_objective(mdp, &obj, v, SoftmaxPolicy::zeros(n, na), cfg)?;
    let got = out.theta.probs().argmax_actions();
    let want = greedy_policy(mdp, v).argmax_actions();
    let bad = got.iter().zip(&want).filter(|(a, b)| a != b).count();
    Ok(bad as f64 / n as f64)
}

fn peng_greedy(ctx: &Ctx<'_>, small: &[Instance]) -> Result<AuditCheck> {
    let stats = small
        .par_iter()
        .map(|i| {
            let v = random_values(3, 1.0 / (1.0 - i.mdp.gamma()), seeding::derive(i.seed, &[seeding::AUDIT, 10]));
            peng_greedy_mismatch(&i.mdp, &i.mu, 0.5, &v, &ctx.cfg.inner)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    let mut check = AuditCheck::new("peng_greedy_mismatch", &[mean], 0.05);
    check.cases = stats.len();
    Ok(check)
}

/// Per-state maxima of `(R^pi v)(x)` over all policies of a two-action MDP,
/// by grid search over `pi(0|x)` followed by a shrinking pattern search.
pub fn per_state_maxima(mdp: &Mdp, mu: &TabularPolicy, spec: &TraceSpec, v: &ValueFunction) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    if mdp.n_actions() != 2 || n > 4 {
        return Err(LabError::Parameter("per-state search needs 2 actions and at most 4 states".into()));
    }
    let eval = |p: &[f64]| -> Result<ValueFunction> {
        let probs = p.iter().flat_map(|q| [*q, 1.0 - q]).collect();
        apply_operator(mdp, &TabularPolicy::new(n, 2, probs)?, mu, spec, v)
    };
    const GRID: usize = 21;
    let mut best: Vec<(f64, Vec<f64>)> = vec![(f64::NEG_INFINITY, vec![0.0; n]); n];
    let total = GRID.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let p: Vec<f64> = (0..n)
            .map(|_| {
                let d = c % GRID;
                c /= GRID;
                d as f64 / (GRID - 1) as f64
            })
            .collect();
        let out = eval(&p)?;
        for (x, b) in best.iter_mut().enumerate() {
            if out[x] > b.0 {
                *b = (out[x], p.clone());
            }
        }
    }
    let mut maxima = Vec::with_capacity(n);
    for (x, (mut value, mut p)) in best.into_iter().enumerate() {
        let mut h = 1.0 / (GRID - 1) as f64;
        while h > 1e-9 {
            let mut improved = false;
            for j in 0..n {
                for dir in [-1.0, 1.0] {
                    let mut q = p.clone();
                    q[j] = (q[j] + dir * h).clamp(0.0, 1.0);
                    let val = eval(&q)?[x];
                    if val > value {
                        value = val;
                        p = q;
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        maxima.push(value);
    }
    Ok(maxima)
}

/// Largest per-state gap between the improvement step's maximizer and the
/// per-state maxima.
pub fn joint_vs_per_state_gap(
    mdp: &Mdp,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    cfg: &InnerConfig,
) -> Result<f64> {
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let pi = match cfg.solver {
        InnerSolver::Exact => algorithms::exact_improvement(mdp, mu, spec, v)?,
        InnerSolver::Ascent => {
            algorithms::inner_maximize(mdp, mu, spec, v, SoftmaxPolicy::zeros(n, na), cfg)?.probs()
        }
    };
    let joint = apply_operator(mdp, &pi, mu, spec, v)?;
    let oracle = per_state_maxima(mdp, mu, spec, v)?;
    Ok(joint.0.iter().zip(&oracle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Gradient ascent can stall at local maxima once clipping is active, so the
/// check runs the exact solver.
fn joint_maximizer(ctx: &Ctx<'_>, small: &[Instance]) -> Result<AuditCheck> {
    let specs = ctx.clip_specs();
    let exact = InnerConfig {
        solver: InnerSolver::Exact,
        ..ctx.cfg.inner
    };
    let stats = small
        .par_iter()
        .enumerate()
        .map(|(k, i)| {
            let v = random_values(3, 1.0 / (1.0 - i.mdp.gamma()), seeding::derive(i.seed, &[seeding::AUDIT, 11]));
            joint_vs_per_state_gap(&i.mdp, &i.mu, &specs[k % specs.len()], &v, &exact)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditCheck::new("joint_maximizer", &stats, 1e-3))
}

/// Runs every check in a fixed order.
pub fn run_audit(cfg: &ExperimentConfig) -> Result<Vec<AuditCheck>> {
    cfg.audit.validate()?;
    let ctx = Ctx { cfg };
    let inst = ctx.instances()?;
    let small = ctx.small_instances()?;
    let (target, grad) = unbiasedness(&ctx, &inst)?;
    Ok(vec![
        fixed_point(&ctx, &inst)?,
        contraction(&ctx, &inst)?,
        rate_bound(&ctx, &inst)?,
        gradient_gap(&ctx, &inst)?,
        exact_gradient_fd(&ctx, &inst)?,
        sampled_gradient_fd(&ctx, &inst)?,
        target,
        grad,
        score_form(&ctx, &inst)?,
        peng_greedy(&ctx, &small)?,
        joint_maximizer(&ctx, &small)?,
    ])
}

pub(super) fn check_rows(cfg: &ExperimentConfig, checks: &[AuditCheck]) -> Vec<ResultRow> {
    let mut sink = RowSink::new(cfg.experiment.name(), cfg.seed);
    for c in checks {
        sink.push("audit", None, 0, &format!("{}_pass", c.name), if c.passed { 1.0 } else { 0.0 });
        sink.push("audit", None, 0, &format!("{}_statistic", c.name), c.statistic);
        sink.push("audit", None, 0, &format!("{}_threshold", c.name), c.threshold);
    }
    sink.rows
}
