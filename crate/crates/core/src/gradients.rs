//! Analytic gradients with respect to softmax logits.
//!
//! Every operator handled here has the form `u = A^{-1} b(pi)` with
//! `A = I - gamma K(pi)`. Differentiating gives
//!
//! ```text
//! du = A^{-1} (db + gamma dK u - gamma dK v)
//! ```
//!
//! and since the logits of state `s` only move row `s` of `pi`, the
//! derivative with respect to `theta(s, b)` is column `s` of `A^{-1}` times
//! a scalar `z(s, b)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::linalg;
use crate::mdp::{exact_q, exact_value, Mdp, SoftmaxPolicy, TabularPolicy, ValueFunction};
use crate::operators::{self, contraction_rate, TraceKind, TraceSpec};

/// `d value(out_state) / d theta(param_state, param_action)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `[out_state][param_state][param_action]`.
    pub grad: Vec<f64>,
}

impl PolicyGradient {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            grad: vec![0.0; n_states * n_states * n_actions],
        }
    }

    #[inline]
    pub fn get(&self, out: usize, s: usize, b: usize) -> f64 {
        self.grad[(out * self.n_states + s) * self.n_actions + b]
    }

    #[inline]
    pub fn get_mut(&mut self, out: usize, s: usize, b: usize) -> &mut f64 {
        &mut self.grad[(out * self.n_states + s) * self.n_actions + b]
    }

    /// Gradient vector over states for one scalar parameter.
    pub fn column(&self, s: usize, b: usize) -> Vec<f64> {
        (0..self.n_states).map(|x| self.get(x, s, b)).collect()
    }

    /// Gradient of a single output state, flattened over `[s][b]`.
    pub fn row(&self, out: usize) -> &[f64] {
        let len = self.n_states * self.n_actions;
        &self.grad[out * len..(out + 1) * len]
    }

    pub fn n_params(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Projection of every `(out, s)` slice onto the zero-sum subspace, i.e.
    /// the component that survives softmax shift invariance.
    pub fn projected(&self) -> Self {
        let mut out = self.clone();
        for chunk in out.grad.chunks_mut(self.n_actions) {
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            chunk.iter_mut().for_each(|g| *g -= mean);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &PolicyGradient) -> f64 {
        self.grad
            .iter()
            .zip(&other.grad)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Objective whose output is differentiated: an off-policy operator with a
/// fixed behavior policy, or the on-policy TD(lambda) operator where the
/// behavior is the candidate policy itself.
#[derive(Clone, Copy, Debug)]
pub enum ImprovementObjective<'a> {
    OffPolicy {
        mu: &'a TabularPolicy,
        spec: TraceSpec,
    },
    OnPolicyLambda {
        lambda: f64,
    },
}

impl ImprovementObjective<'_> {
    /// Operator output at policy `pi`.
    pub fn evaluate(&self, mdp: &Mdp, pi: &TabularPolicy, v: &ValueFunction) -> Result<ValueFunction> {
        match self {
            ImprovementObjective::OffPolicy { mu, spec } => {
                operators::apply_operator(mdp, pi, mu, spec, v)
            }
            ImprovementObjective::OnPolicyLambda { lambda } => {
                // Behavior equal to the target: K = lambda P^pi, no support
                // requirement on pi.
                pi.check_shape(mdp)?;
                let gamma = mdp.gamma();
                let p_pi = mdp.weighted_kernel(pi.probs());
                let rhs = mdp.policy_reward(pi) + (&p_pi * v.to_dvector()) * (gamma * (1.0 - lambda));
                Ok(linalg::solve(linalg::identity_minus(gamma * lambda, &p_pi), &rhs)?.into())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ImprovementObjective::OffPolicy { mu, spec } => {
                spec.validate()?;
                if !mu.has_full_support() {
                    return Err(LabError::Domain(
                        "behavior policy must give every action positive probability".into(),
                    ));
                }
                Ok(())
            }
            ImprovementObjective::OnPolicyLambda { lambda } => {
                if !(0.0..=1.0).contains(lambda) {
                    return Err(LabError::Parameter(format!("lambda must lie in [0,1], got {lambda}")));
                }
                Ok(())
            }
        }
    }
}

/// Pieces shared by the full and state-averaged gradients.
struct Linearization {
    system: DMatrix<f64>,
    output: DVector<f64>,
    /// `z(s, b)`, row-major `[s][b]`.
    z: Vec<f64>,
}

/// `z(s, b) = sum_a dpi(a|s)/dtheta(s,b) f(s, a) = pi_b (f_b - <pi, f>)`.
fn softmax_contract(pi: &TabularPolicy, f: &[f64], n_actions: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(f.len());
    for (prow, frow) in pi.probs().chunks(n_actions).zip(f.chunks(n_actions)) {
        let mean: f64 = prow.iter().zip(frow).map(|(p, f)| p * f).sum();
        z.extend(prow.iter().zip(frow).map(|(p, f)| p * (f - mean)));
    }
    z
}

fn linearize(
    mdp: &Mdp,
    pi: &TabularPolicy,
    objective: &ImprovementObjective<'_>,
    v: &ValueFunction,
) -> Result<Linearization> {
    let gamma = mdp.gamma();
    let na = mdp.n_actions();
    let q_v = mdp.backups(v.as_slice());

    let (weights, slopes) = match objective {
        ImprovementObjective::OffPolicy { mu, spec } => {
            if let TraceKind::PengLambda { lambda } = spec.kind {
                operators::check_inputs(mdp, pi, mu, spec)?;
                let p_mu = mdp.weighted_kernel(mu.probs());
                let system = linalg::identity_minus(lambda * gamma, &p_mu);
                let output = objective.evaluate(mdp, pi, v)?.to_dvector();
                let f: Vec<f64> = q_v.iter().map(|q| (1.0 - lambda) * q).collect();
                let z = softmax_contract(pi, &f, na);
                return Ok(Linearization { system, output, z });
            }
            let ck = operators::corrected_kernel(mdp, pi, mu, spec)?;
            (ck.pi_weights, ck.weight_slopes)
        }
        ImprovementObjective::OnPolicyLambda { lambda } => {
            pi.check_shape(mdp)?;
            (
                pi.probs().iter().map(|p| lambda * p).collect::<Vec<_>>(),
                vec![*lambda; pi.probs().len()],
            )
        }
    };

    let kernel = mdp.weighted_kernel(&weights);
    let system = linalg::identity_minus(gamma, &kernel);
    let vd = v.to_dvector();
    let rhs = DVector::from_fn(mdp.n_states(), |x, _| {
        (0..na).map(|a| pi.prob(x, a) * q_v[x * na + a]).sum::<f64>()
    }) - (&kernel * &vd) * gamma;
    let output = linalg::solve(system.clone(), &rhs)?;
    let lift = output.as_slice().iter().zip(v.as_slice()).map(|(u, v)| u - v).collect::<Vec<_>>();
    let p_lift = mdp.expected_next(&lift);
    let f: Vec<f64> = q_v
        .iter()
        .zip(&slopes)
        .zip(&p_lift)
        .map(|((q, dw), pl)| q + gamma * dw * pl)
        .collect();
    let z = softmax_contract(pi, &f, na);
    Ok(Linearization { system, output, z })
}

fn expand(system: DMatrix<f64>, z: &[f64], n_states: usize, n_actions: usize) -> Result<PolicyGradient> {
    let inv = linalg::inverse(system)?;
    let mut g = PolicyGradient::zeros(n_states, n_actions);
    for x in 0..n_states {
        for s in 0..n_states {
            let col = inv[(x, s)];
            for b in 0..n_actions {
                *g.get_mut(x, s, b) = col * z[s * n_actions + b];
            }
        }
    }
    Ok(g)
}

/// Gradient of `V^{pi_theta}` with respect to the logits.
pub fn exact_policy_gradient(mdp: &Mdp, theta: &SoftmaxPolicy) -> Result<PolicyGradient> {
    let pi = theta.probs();
    pi.check_shape(mdp)?;
    let q = exact_q(mdp, &pi)?;
    let z = softmax_contract(&pi, &q.values, mdp.n_actions());
    let system = linalg::identity_minus(mdp.gamma(), &mdp.weighted_kernel(pi.probs()));
    expand(system, &z, mdp.n_states(), mdp.n_actions())
}

/// Gradient of the operator output `R v` with respect to the logits, `v`
/// held fixed.
pub fn exact_operator_gradient(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
) -> Result<PolicyGradient> {
    objective_gradient(mdp, theta, &ImprovementObjective::OffPolicy { mu, spec: *spec }, v)
}

/// Full gradient tensor of an improvement objective.
pub fn objective_gradient(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    objective: &ImprovementObjective<'_>,
    v: &ValueFunction,
) -> Result<PolicyGradient> {
    let pi = theta.probs();
    let lin = linearize(mdp, &pi, objective, v)?;
    expand(lin.system, &lin.z, mdp.n_states(), mdp.n_actions())
}

/// Gradient of the truncated operator output
/// `v + sum_{t < t_max} (gamma K)^t (T^pi v - v)` with `v` held fixed.
///
/// With `S_m = sum_{j<m} (gamma K)^j delta`, the kernel part of the
/// derivative is `sum_{k <= t_max - 2} (gamma K)^k gamma dK S_{t_max-1-k}`.
pub fn exact_truncated_gradient(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    t_max: usize,
) -> Result<PolicyGradient> {
    if t_max == 0 {
        return Err(LabError::Parameter("t_max must be at least 1".into()));
    }
    let pi = theta.probs();
    let ck = operators::corrected_kernel(mdp, &pi, mu, spec)?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let gk = &ck.kernel * gamma;
    let delta = operators::bellman_backup(mdp, &pi, v).to_dvector() - v.to_dvector();

    // powers[k] = (gamma K)^k, partial[m] = S_m
    let mut powers = Vec::with_capacity(t_max);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..t_max {
        powers.push(&gk * &powers[k - 1]);
    }
    let mut partial = Vec::with_capacity(t_max);
    partial.push(DVector::<f64>::zeros(n));
    let mut term = delta;
    for m in 1..t_max {
        partial.push(&partial[m - 1] + &term);
        term = &gk * term;
    }
    let sum_powers = powers.iter().fold(DMatrix::<f64>::zeros(n, n), |acc, p| acc + p);

    let q_v = mdp.backups(v.as_slice());
    let z_backup = softmax_contract(&pi, &q_v, na);
    let mut g = PolicyGradient::zeros(n, na);
    for x in 0..n {
        for s in 0..n {
            for b in 0..na {
                *g.get_mut(x, s, b) = sum_powers[(x, s)] * z_backup[s * na + b];
            }
        }
    }
    for k in 0..t_max.saturating_sub(1) {
        let lifted = mdp.expected_next(partial[t_max - 1 - k].as_slice());
        let f: Vec<f64> = lifted.iter().zip(&ck.weight_slopes).map(|(l, dw)| gamma * dw * l).collect();
        let z = softmax_contract(&pi, &f, na);
        let pw = &powers[k];
        for x in 0..n {
            for s in 0..n {
                let c = pw[(x, s)];
                if c == 0.0 {
                    continue;
                }
                for b in 0..na {
                    *g.get_mut(x, s, b) += c * z[s * na + b];
                }
            }
        }
    }
    Ok(g)
}

/// State-averaged objective `L = mean_x (R v)(x)` and its gradient over the
/// logits (row-major `[s][b]`).
pub fn averaged_objective_gradient(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    objective: &ImprovementObjective<'_>,
    v: &ValueFunction,
) -> Result<(f64, Vec<f64>)> {
    let pi = theta.probs();
    let lin = linearize(mdp, &pi, objective, v)?;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let weights = DVector::from_element(n, 1.0 / n as f64);
    let y = linalg::solve(lin.system.transpose(), &weights)?;
    let grad = lin
        .z
        .iter()
        .enumerate()
        .map(|(i, z)| y[i / na] * z)
        .collect();
    Ok((lin.output.mean(), grad))
}

/// Per-parameter sides of the bound
/// `|| d R V - d V^pi ||_inf <= eta || d V^pi ||_inf` evaluated at `V = V^pi`.
#[derive(Clone, Debug)]
pub struct GradientGapReport {
    /// `|| d_j R V - d_j V^pi ||_inf` for each parameter `j = (s, b)`.
    pub lhs: Vec<f64>,
    /// `eta || d_j V^pi ||_inf`.
    pub rhs: Vec<f64>,
    pub eta: f64,
}

impl GradientGapReport {
    /// Largest `lhs - rhs` over parameters.
    pub fn worst_slack(&self) -> f64 {
        self.lhs
            .iter()
            .zip(&self.rhs)
            .map(|(l, r)| l - r)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst_slack() <= tol
    }
}

pub fn theorem2_check(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
) -> Result<GradientGapReport> {
    let pi = theta.probs();
    let v = exact_value(mdp, &pi)?;
    let exact = exact_policy_gradient(mdp, theta)?;
    let approx = exact_operator_gradient(mdp, theta, mu, spec, &v)?;
    let eta = contraction_rate(mdp, &pi, mu, spec)?.eta;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut lhs = Vec::with_capacity(n * na);
    let mut rhs = Vec::with_capacity(n * na);
    for s in 0..n {
        for b in 0..na {
            let g = exact.column(s, b);
            let g1 = approx.column(s, b);
            let gap = g.iter().zip(&g1).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            lhs.push(gap);
            rhs.push(eta * linalg::norm_inf(&g));
        }
    }
    Ok(GradientGapReport { lhs, rhs, eta })
}
