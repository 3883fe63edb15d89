//! Value-iteration style recursions built from an improvement step and an
//! evaluation step, plus tabular actor-critic loops.
//!
//! Every recursion starts from `V_0 = 0` and reports the error of the policy
//! it produced, evaluated exactly: `errors[i] = ||V^{pi_{i+1}} - V*||`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gradients::{averaged_objective_gradient, ImprovementObjective};
use crate::mdp::{exact_value, greedy_policy, optimal_control, Mdp, SoftmaxPolicy, TabularPolicy, ValueFunction};
use crate::operators::{self, contraction_rate, TraceKind, TraceSpec};
use crate::sampling::{self, TargetBootstrap};
use crate::seeding;

/// Optimal value and policy every recursion is scored against.
#[derive(Clone, Debug)]
pub struct Reference {
    pub v_star: ValueFunction,
    pub pi_star: TabularPolicy,
}

impl Reference {
    pub fn new(mdp: &Mdp) -> Result<Self> {
        let (v_star, pi_star) = optimal_control(mdp, 1e-10)?;
        Ok(Self { v_star, pi_star })
    }
}

/// Behavior policy used at each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BehaviorMode {
    #[default]
    Uniform,
    /// `(1 - eps) pi_i + eps * uniform`, with `pi_0` uniform.
    PreviousMixed { eps: f64 },
}

impl BehaviorMode {
    pub fn validate(&self) -> Result<()> {
        if let BehaviorMode::PreviousMixed { eps } = self {
            if !(*eps > 0.0 && *eps <= 1.0) {
                return Err(LabError::Parameter(format!("behavior eps must lie in (0,1], got {eps}")));
            }
        }
        Ok(())
    }

    fn behavior(&self, previous: Option<&TabularPolicy>, n_states: usize, n_actions: usize) -> TabularPolicy {
        match (self, previous) {
            (BehaviorMode::PreviousMixed { eps }, Some(p)) => p.mix_uniform(*eps),
            _ => TabularPolicy::uniform(n_states, n_actions),
        }
    }

    /// Behavior paired with a given target in the stationary regime.
    fn stationary(&self, pi: &TabularPolicy) -> TabularPolicy {
        match self {
            BehaviorMode::Uniform => TabularPolicy::uniform(pi.n_states(), pi.n_actions()),
            BehaviorMode::PreviousMixed { eps } => pi.mix_uniform(*eps),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `theta = log(greedy(V) + 1e-5)`.
    GreedyLog,
    /// Logits of the previous iteration (greedy-log on the first).
    WarmStart,
    /// `theta = 0`.
    #[default]
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `theta += learning_rate * grad` every step.
    Fixed,
    /// Armijo backtracking from the last accepted step, growing the step by
    /// half after each acceptance.
    #[default]
    Adaptive,
}

/// How the improvement step maximizes its objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Gradient ascent on the state-averaged objective. Finds a local
    /// maximum; with active clipping that need not be the global one.
    #[default]
    Ascent,
    /// Exact maximization of V-trace objectives by [`exact_improvement`].
    Exact,
}

/// Improvement-step settings. The ascent fields are ignored by the exact
/// solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    #[serde(default)]
    pub solver: InnerSolver,
    /// `Some(N)`: exactly `N` steps. `None`: until the gradient sup-norm
    /// drops below `tol` or `max_steps` is reached.
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub step_rule: StepRule,
}

fn default_lr() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-12
}
fn default_max_steps() -> usize {
    10_000
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            solver: InnerSolver::default(),
            n_steps: None,
            learning_rate: default_lr(),
            tol: default_tol(),
            max_steps: default_max_steps(),
            init_mode: InitMode::default(),
            step_rule: StepRule::default(),
        }
    }
}

impl InnerConfig {
    /// Exactly `n` plain gradient steps at the given rate.
    pub fn fixed_steps(n: usize, learning_rate: f64) -> Self {
        Self {
            n_steps: Some(n),
            learning_rate,
            step_rule: StepRule::Fixed,
            init_mode: InitMode::GreedyLog,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(LabError::Parameter(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.n_steps.is_none() && !(self.tol > 0.0) {
            return Err(LabError::Parameter("convergence mode needs tol > 0".into()));
        }
        if self.n_steps.is_none() && self.max_steps == 0 {
            return Err(LabError::Parameter("max_steps must be >= 1".into()));
        }
        if self.step_rule == StepRule::Adaptive && self.learning_rate == 0.0 {
            return Err(LabError::Parameter("adaptive steps need learning_rate > 0".into()));
        }
        Ok(())
    }
}

/// Result of an inner ascent run.
#[derive(Clone, Debug)]
pub struct AscentOutcome {
    pub theta: SoftmaxPolicy,
    pub objective: f64,
    pub grad_norm: f64,
    pub steps: usize,
}

pub fn greedy_log_init(mdp: &Mdp, v: &ValueFunction) -> SoftmaxPolicy {
    SoftmaxPolicy::from_log_probs(&greedy_policy(mdp, v), 1e-5)
}

fn sup_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gradient ascent on `L(theta) = mean_x (R^{pi_theta} v)(x)`.
pub fn maximize_objective(
    mdp: &Mdp,
    objective: &ImprovementObjective<'_>,
    v: &ValueFunction,
    init: SoftmaxPolicy,
    cfg: &InnerConfig,
) -> Result<AscentOutcome> {
    cfg.validate()?;
    objective.validate()?;
    let eval = |theta: &SoftmaxPolicy, step: usize| -> Result<(f64, Vec<f64>)> {
        let (l, g) = averaged_objective_gradient(mdp, theta, objective, v)?;
        if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(LabError::Numeric(format!("non-finite ascent objective at step {step}")));
        }
        Ok((l, g))
    };
    let mut theta = init;
    let (mut value, mut grad) = eval(&theta, 0)?;
    let budget = cfg.n_steps.unwrap_or(cfg.max_steps);
    let mut lr = cfg.learning_rate;
    let mut steps = 0;
    while steps < budget {
        let gnorm = sup_norm(&grad);
        if cfg.n_steps.is_none() && gnorm < cfg.tol {
            break;
        }
        steps += 1;
        match cfg.step_rule {
            StepRule::Fixed => {
                theta.logits_mut().iter_mut().zip(&grad).for_each(|(t, g)| *t += lr * g);
                (value, grad) = eval(&theta, steps)?;
            }
            StepRule::Adaptive => {
                let sq: f64 = grad.iter().map(|g| g * g).sum();
                let accepted = loop {
                    let mut trial = theta.clone();
                    trial.logits_mut().iter_mut().zip(&grad).for_each(|(t, g)| *t += lr * g);
                    let (tv, tg) = eval(&trial, steps)?;
                    if tv >= value + 1e-4 * lr * sq {
                        theta = trial;
                        value = tv;
                        grad = tg;
                        lr = (lr * 1.5).min(1e12);
                        break true;
                    }
                    lr *= 0.5;
                    if lr < 1e-14 {
                        break false;
                    }
                };
                if !accepted {
                    // No ascent step survives rounding; the iterate is as good
                    // as floating point can tell.
                    break;
                }
            }
        }
    }
    Ok(AscentOutcome {
        grad_norm: sup_norm(&grad),
        theta,
        objective: value,
        steps,
    })
}

/// Approximate `argmax_pi R^{pi,mu} v` by gradient ascent from `init`.
pub fn inner_maximize(
    mdp: &Mdp,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    init: SoftmaxPolicy,
    cfg: &InnerConfig,
) -> Result<SoftmaxPolicy> {
    let obj = ImprovementObjective::OffPolicy { mu, spec: *spec };
    Ok(maximize_objective(mdp, &obj, v, init, cfg)?.theta)
}

/// Candidate rows for one state: every point of the simplex where all
/// coordinates but one sit at `0` or at the clip point `min(c_bar mu_a, 1)`.
fn breakpoint_candidates(clip: &[f64]) -> Vec<Vec<f64>> {
    let na = clip.len();
    let mut out = Vec::new();
    for free in 0..na {
        for mask in 0u64..(1u64 << (na - 1)) {
            let mut p = vec![0.0; na];
            let mut bit = 0;
            for (a, slot) in p.iter_mut().enumerate() {
                if a == free {
                    continue;
                }
                if mask >> bit & 1 == 1 {
                    *slot = clip[a];
                }
                bit += 1;
            }
            let rest: f64 = p.iter().sum();
            if rest <= 1.0 + 1e-12 {
                p[free] = (1.0 - rest).max(0.0);
                out.push(p);
            }
        }
    }
    out
}

/// `argmax_pi R^{pi,mu} v` for a V-trace operator, exactly.
///
/// With `W = R^pi v`, `R^pi v` is the value of a controlled process whose
/// per-state choice `p = pi(.|x)` earns
/// `sum_a p_a q(x, a) + sum_a min(c_bar mu_a, p_a) gamma P_a (W - v)(x)`
/// with `q = r + gamma P v`, and whose continuation kernel `sum_a mu_a c_a P_a`
/// is non-negative. Policy iteration on that process therefore improves `W`
/// monotonically. Each per-state problem is separable and piecewise linear,
/// so its maximum sits at a breakpoint candidate and the iteration stops
/// after finitely many changes.
pub fn exact_improvement(
    mdp: &Mdp,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
) -> Result<TabularPolicy> {
    let c_bar = match spec.kind {
        TraceKind::VTrace { c_bar } => c_bar,
        _ => {
            return Err(LabError::Domain(
                "exact improvement is implemented for V-trace objectives only".into(),
            ))
        }
    };
    spec.validate()?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    if na > 16 {
        return Err(LabError::Parameter(format!("exact improvement enumerates 2^(actions-1) rows; {na} actions is too many")));
    }
    let gamma = mdp.gamma();
    let q = mdp.backups(v.as_slice());
    let candidates: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|x| {
            let clip: Vec<f64> = mu.row(x).iter().map(|m| (c_bar * m).min(1.0)).collect();
            breakpoint_candidates(&clip)
        })
        .collect();
    let clip_of = |x: usize, a: usize| (c_bar * mu.prob(x, a)).min(1.0);

    let mut pi = greedy_policy(mdp, v);
    for _ in 0..10_000 {
        let w = operators::apply_operator(mdp, &pi, mu, spec, v)?;
        let lift: Vec<f64> = w.0.iter().zip(v.as_slice()).map(|(w, v)| w - v).collect();
        let d = mdp.expected_next(&lift);
        let score = |x: usize, p: &[f64]| -> f64 {
            p.iter()
                .enumerate()
                .map(|(a, pa)| pa * q[x * na + a] + gamma * pa.min(clip_of(x, a)) * d[x * na + a])
                .sum()
        };
        let mut probs = pi.probs().to_vec();
        let mut changed = false;
        for x in 0..n {
            let current = score(x, pi.row(x));
            let (best, best_score) = candidates[x]
                .iter()
                .map(|p| (p, score(x, p)))
                .fold((None, f64::NEG_INFINITY), |acc, (p, s)| if s > acc.1 { (Some(p), s) } else { acc });
            // Only switch on a clear gain so ties cannot cycle.
            if best_score > current + 1e-12 * current.abs().max(1.0) {
                probs[x * na..(x + 1) * na].copy_from_slice(best.expect("candidate set is non-empty"));
                changed = true;
            }
        }
        if !changed {
            return Ok(pi);
        }
        pi = TabularPolicy::new(n, na, probs)?;
    }
    Err(LabError::Numeric("exact improvement did not settle".into()))
}

/// Per-iteration record of a recursion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub algorithm: String,
    /// `||V^{pi_{i+1}} - V*||_2`.
    pub errors_l2: Vec<f64>,
    /// `||V^{pi_{i+1}} - V*||_inf`.
    pub errors_inf: Vec<f64>,
    /// Contraction rate at the optimal policy, when the evaluation operator
    /// has one.
    pub eta_star: Option<f64>,
    /// `eta_seq[j-1]` is the rate of the operator that produced `V_j`.
    pub eta_seq: Vec<f64>,
    /// Inner ascent steps taken per iteration (0 when there is no ascent).
    pub inner_steps: Vec<usize>,
    /// Set once the error exceeds ten times its first value.
    pub diverged: bool,
}

impl IterationTrace {
    fn new(name: &str) -> Self {
        Self {
            algorithm: name.to_string(),
            ..Self::default()
        }
    }

    fn record(&mut self, mdp: &Mdp, reference: &Reference, pi: &TabularPolicy) -> Result<()> {
        let v = exact_value(mdp, pi)?;
        self.errors_l2.push(v.norm_l2_diff(&reference.v_star));
        self.errors_inf.push(v.norm_inf_diff(&reference.v_star));
        Ok(())
    }

    /// `max(eta*^i, prod_{j<=i} eta_j) * 4 R_bar / (1 - gamma)^2` for each
    /// recorded iteration `i`.
    pub fn rate_bound(&self, mdp: &Mdp) -> Option<Vec<f64>> {
        let eta_star = self.eta_star?;
        let scale = 4.0 * mdp.reward_bound() / (1.0 - mdp.gamma()).powi(2);
        let mut prod = 1.0;
        let mut out = Vec::with_capacity(self.errors_inf.len());
        for i in 0..self.errors_inf.len() {
            if i > 0 {
                prod *= self.eta_seq[i - 1];
            }
            out.push(eta_star.powi(i as i32).max(prod) * scale);
        }
        Some(out)
    }
}

enum Improve<'a> {
    Greedy,
    Ascent(&'a InnerConfig),
    LambdaExact(f64),
    LambdaAscent(f64, &'a InnerConfig),
}

enum Evaluate {
    OneStep,
    Operator(TraceSpec),
    Exact,
}

struct Recursion<'a> {
    name: &'a str,
    improve: Improve<'a>,
    /// Trace spec of the improvement objective.
    objective: Option<TraceSpec>,
    evaluate: Evaluate,
    behavior: BehaviorMode,
}

fn run_recursion(mdp: &Mdp, reference: &Reference, rec: &Recursion<'_>, iters: usize) -> Result<IterationTrace> {
    if iters == 0 {
        return Err(LabError::Parameter("iters must be >= 1".into()));
    }
    rec.behavior.validate()?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut trace = IterationTrace::new(rec.name);
    let mut v = ValueFunction::zeros(n);
    let mut previous: Option<TabularPolicy> = None;
    let mut warm: Option<SoftmaxPolicy> = None;

    for _ in 0..iters {
        let mu = rec.behavior.behavior(previous.as_ref(), n, na);
        let (pi, steps) = match &rec.improve {
            Improve::Greedy => (greedy_policy(mdp, &v), 0),
            Improve::Ascent(cfg) if cfg.solver == InnerSolver::Exact => {
                let spec = rec.objective.expect("improvement needs an objective spec");
                (exact_improvement(mdp, &mu, &spec, &v)?, 0)
            }
            Improve::Ascent(cfg) => {
                let spec = rec.objective.expect("ascent needs an objective spec");
                let init = match (cfg.init_mode, &warm) {
                    (InitMode::Uniform, _) => SoftmaxPolicy::zeros(n, na),
                    (InitMode::WarmStart, Some(w)) => w.clone(),
                    _ => greedy_log_init(mdp, &v),
                };
                let obj = ImprovementObjective::OffPolicy { mu: &mu, spec };
                let out = maximize_objective(mdp, &obj, &v, init, cfg)?;
                let pi = out.theta.probs();
                warm = Some(out.theta);
                (pi, out.steps)
            }
            Improve::LambdaExact(lambda) => (lambda_greedy(mdp, *lambda, &v)?, 0),
            Improve::LambdaAscent(lambda, cfg) => {
                let obj = ImprovementObjective::OnPolicyLambda { lambda: *lambda };
                let out = maximize_objective(mdp, &obj, &v, greedy_log_init(mdp, &v), cfg)?;
                (out.theta.probs(), out.steps)
            }
        };
        v = match &rec.evaluate {
            Evaluate::OneStep => operators::bellman_backup(mdp, &pi, &v),
            Evaluate::Operator(spec) => operators::apply_operator(mdp, &pi, &mu, spec, &v)?,
            Evaluate::Exact => exact_value(mdp, &pi)?,
        };
        let eta = match &rec.evaluate {
            Evaluate::OneStep => mdp.gamma(),
            Evaluate::Operator(spec) if spec.has_kernel() => contraction_rate(mdp, &pi, &mu, spec)?.eta,
            Evaluate::Operator(_) => f64::NAN,
            Evaluate::Exact => 0.0,
        };
        trace.eta_seq.push(eta);
        trace.inner_steps.push(steps);
        trace.record(mdp, reference, &pi)?;
        previous = Some(pi);
    }

    trace.eta_star = match &rec.evaluate {
        Evaluate::OneStep => Some(mdp.gamma()),
        Evaluate::Operator(spec) if spec.has_kernel() => {
            let mu_star = rec.behavior.stationary(&reference.pi_star);
            Some(contraction_rate(mdp, &reference.pi_star, &mu_star, spec)?.eta)
        }
        Evaluate::Operator(_) => None,
        Evaluate::Exact => Some(0.0),
    };
    let first = trace.errors_inf[0];
    trace.diverged = trace.errors_inf.iter().any(|e| *e > 10.0 * first && *e > 1e-12);
    Ok(trace)
}

/// One-step greedy improvement and one-step evaluation.
pub fn run_vi(mdp: &Mdp, reference: &Reference, iters: usize) -> Result<IterationTrace> {
    let rec = Recursion {
        name: "vi",
        improve: Improve::Greedy,
        objective: None,
        evaluate: Evaluate::OneStep,
        behavior: BehaviorMode::Uniform,
    };
    run_recursion(mdp, reference, &rec, iters)
}

/// One-step greedy improvement, multi-step evaluation.
pub fn run_multistep_pe(
    mdp: &Mdp,
    reference: &Reference,
    behavior: BehaviorMode,
    spec: &TraceSpec,
    iters: usize,
) -> Result<IterationTrace> {
    spec.validate()?;
    let rec = Recursion {
        name: "multistep_pe",
        improve: Improve::Greedy,
        objective: None,
        evaluate: Evaluate::Operator(*spec),
        behavior,
    };
    run_recursion(mdp, reference, &rec, iters)
}

/// Multi-step improvement by inner ascent, one-step evaluation.
pub fn run_multistep_pi(
    mdp: &Mdp,
    reference: &Reference,
    behavior: BehaviorMode,
    spec: &TraceSpec,
    iters: usize,
    cfg: &InnerConfig,
) -> Result<IterationTrace> {
    spec.validate()?;
    let rec = Recursion {
        name: "multistep_pi",
        improve: Improve::Ascent(cfg),
        objective: Some(*spec),
        evaluate: Evaluate::OneStep,
        behavior,
    };
    run_recursion(mdp, reference, &rec, iters)
}

/// Multi-step improvement by inner ascent and multi-step evaluation.
pub fn run_domo_vi(
    mdp: &Mdp,
    reference: &Reference,
    behavior: BehaviorMode,
    spec: &TraceSpec,
    iters: usize,
    cfg: &InnerConfig,
) -> Result<IterationTrace> {
    spec.validate()?;
    let rec = Recursion {
        name: "domo_vi",
        improve: Improve::Ascent(cfg),
        objective: Some(*spec),
        evaluate: Evaluate::Operator(*spec),
        behavior,
    };
    run_recursion(mdp, reference, &rec, iters)
}

/// DoMo-VI with a fixed budget of `n` ascent steps from the greedy-log
/// initialization each iteration.
pub fn run_domo_ac_tabular(
    mdp: &Mdp,
    reference: &Reference,
    behavior: BehaviorMode,
    spec: &TraceSpec,
    iters: usize,
    n: usize,
    learning_rate: f64,
) -> Result<IterationTrace> {
    spec.validate()?;
    let cfg = InnerConfig::fixed_steps(n, learning_rate);
    let name = format!("domo_ac_n{n}");
    let rec = Recursion {
        name: &name,
        improve: Improve::Ascent(&cfg),
        objective: Some(*spec),
        evaluate: Evaluate::Operator(*spec),
        behavior,
    };
    run_recursion(mdp, reference, &rec, iters)
}

/// How lambda-PI solves its improvement step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LambdaImprovement {
    /// Exact maximizer via policy iteration on the surrogate MDP.
    #[default]
    Exact,
    /// Gradient ascent on the on-policy TD(lambda) objective.
    Ascent(InnerConfig),
}

/// `argmax_pi T_lambda^pi v` for every state at once.
///
/// `T_lambda^pi v = (I - gamma lambda P^pi)^{-1} (r^pi + gamma (1 - lambda) P^pi v)`
/// is the value of `pi` in an MDP with rewards `r + gamma (1 - lambda) P v`
/// and discount `gamma lambda`, so the maximizer is that MDP's optimal policy.
pub fn lambda_greedy(mdp: &Mdp, lambda: f64, v: &ValueFunction) -> Result<TabularPolicy> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(LabError::Parameter(format!("lambda must lie in [0,1), got {lambda}")));
    }
    let gamma = mdp.gamma();
    let pv = mdp.expected_next(v.as_slice());
    let reward: Vec<f64> = mdp
        .rewards()
        .iter()
        .zip(&pv)
        .map(|(r, p)| r + gamma * (1.0 - lambda) * p)
        .collect();
    let surrogate = Mdp::new(
        mdp.n_states(),
        mdp.n_actions(),
        mdp.transitions().to_vec(),
        reward,
        gamma * lambda,
    )?;
    Ok(optimal_control(&surrogate, 1e-12)?.1)
}

/// Multi-step greedy improvement against the on-policy TD(lambda) operator,
/// followed by exact evaluation.
pub fn run_lambda_pi(
    mdp: &Mdp,
    reference: &Reference,
    lambda: f64,
    iters: usize,
    method: &LambdaImprovement,
) -> Result<IterationTrace> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(LabError::Parameter(format!("lambda must lie in [0,1), got {lambda}")));
    }
    let improve = match method {
        LambdaImprovement::Exact => Improve::LambdaExact(lambda),
        LambdaImprovement::Ascent(cfg) => Improve::LambdaAscent(lambda, cfg),
    };
    let rec = Recursion {
        name: "lambda_pi",
        improve,
        objective: None,
        evaluate: Evaluate::Exact,
        behavior: BehaviorMode::Uniform,
    };
    let mut trace = run_recursion(mdp, reference, &rec, iters)?;
    let gamma = mdp.gamma();
    let rate = gamma * (1.0 - lambda) / (1.0 - gamma * lambda);
    trace.eta_star = Some(rate);
    trace.eta_seq.iter_mut().for_each(|e| *e = rate);
    Ok(trace)
}

/// Hyper-parameters of the sampled actor-critic loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineAcConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub polyak_tau: f64,
    pub segment_length: usize,
    pub total_iterations: usize,
    pub bootstrap: TargetBootstrap,
}

impl Default for OnlineAcConfig {
    fn default() -> Self {
        Self {
            actor_lr: 0.5,
            critic_lr: 0.25,
            polyak_tau: 0.1,
            segment_length: 10,
            total_iterations: 5_000,
            bootstrap: TargetBootstrap::NextState,
        }
    }
}

impl OnlineAcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.polyak_tau > 0.0 && self.polyak_tau <= 1.0) {
            return Err(LabError::Parameter(format!("polyak_tau must lie in (0,1], got {}", self.polyak_tau)));
        }
        if self.segment_length == 0 {
            return Err(LabError::Parameter("segment_length must be >= 1".into()));
        }
        if self.total_iterations == 0 {
            return Err(LabError::Parameter("total_iterations must be >= 1".into()));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(LabError::Parameter(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Sampled actor-critic with a tabular softmax actor, a tabular critic and a
/// Polyak-averaged target critic.
///
/// Each iteration samples one segment of `segment_length` steps under a
/// snapshot of the current policy from a uniformly drawn start state. The
/// actor follows the mean over start points `t` of the per-trajectory
/// gradient on the suffix from `t`; the critic regresses onto recursive
/// targets computed with the target table.
pub fn run_domo_ac_online(
    mdp: &Mdp,
    reference: &Reference,
    spec: &TraceSpec,
    cfg: &OnlineAcConfig,
    seed: u64,
) -> Result<IterationTrace> {
    cfg.validate()?;
    spec.validate()?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut theta = SoftmaxPolicy::zeros(n, na);
    let mut critic = ValueFunction::zeros(n);
    let mut target = ValueFunction::zeros(n);
    let mut trace = IterationTrace::new("domo_ac_online");
    let t_len = cfg.segment_length;
    let inv_t = 1.0 / t_len as f64;

    for i in 0..cfg.total_iterations {
        let mut rng = seeding::rng(seeding::derive(seed, &[seeding::ONLINE, i as u64]));
        let mu = theta.probs();
        let start = rand::Rng::random_range(&mut rng, 0..n);
        let traj = sampling::sample_trajectory_with(&mut rng, mdp, &mu, start, t_len)?;

        let mut grad = vec![0.0; n * na];
        for t in 0..traj.len() {
            let suffix = traj.suffix(t);
            sampling::accumulate_gradient(&suffix, &mu, &mu, spec, &critic, gamma, inv_t, &mut grad)?;
        }
        theta
            .logits_mut()
            .iter_mut()
            .zip(&grad)
            .for_each(|(th, g)| *th += cfg.actor_lr * g);

        let pi = theta.probs();
        let targets = sampling::recursive_targets(&traj, &pi, &mu, spec, &target, gamma, cfg.bootstrap)?;
        let mut step = vec![0.0; n];
        for (t, st) in traj.steps.iter().enumerate() {
            step[st.state] += 2.0 * inv_t * (targets[t] - critic[st.state]);
        }
        for (c, s) in critic.0.iter_mut().zip(&step) {
            *c += cfg.critic_lr * s;
        }
        for (tg, c) in target.0.iter_mut().zip(&critic.0) {
            *tg = (1.0 - cfg.polyak_tau) * *tg + cfg.polyak_tau * c;
        }
        trace.record(mdp, reference, &pi)?;
        trace.inner_steps.push(0);
    }
    let first = trace.errors_inf[0];
    trace.diverged = trace.errors_inf.iter().any(|e| *e > 10.0 * first && *e > 1e-12);
    Ok(trace)
}
