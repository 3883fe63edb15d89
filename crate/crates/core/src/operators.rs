//! Exact matrix-form evaluation operators with off-policy trace corrections.
//!
//! For a trace family with coefficient `c(x, a)`, the operator is
//!
//! ```text
//! R v = (I - gamma K)^{-1} (r^pi + gamma (P^pi - K) v),   K = sum_a mu(a|x) c(x,a) P(.|x,a)
//! ```
//!
//! which equals `v + (I - gamma K)^{-1} (T^pi v - v)`. Peng's lambda operator
//! has no trace correction and uses its own closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg;
use crate::mdp::{Mdp, TabularPolicy, ValueFunction};

/// Trace coefficient family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    /// `c = min(c_bar, rho)`; `c_bar` may be `f64::INFINITY`.
    VTrace { c_bar: f64 },
    /// `c = pi(a|x)`.
    TreeBackup,
    /// `c = lambda`, importance ratio kept on the TD term.
    QLambda { lambda: f64 },
    /// Uncorrected geometric mixture of n-step backups.
    PengLambda { lambda: f64 },
}

/// A trace family plus the optional target-ratio truncation used by the
/// recursive sampled targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub kind: TraceKind,
    #[serde(default)]
    pub rho_bar: Option<f64>,
    /// Slope of the V-trace coefficient with respect to `rho` on the clipped
    /// branch. The true derivative is 0; any other value is only meaningful
    /// as a negative control for the gradient audits.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub clipped_slope: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl TraceSpec {
    pub fn new(kind: TraceKind) -> Self {
        Self {
            kind,
            rho_bar: None,
            clipped_slope: 0.0,
        }
    }

    pub fn vtrace(c_bar: f64) -> Self {
        Self::new(TraceKind::VTrace { c_bar })
    }

    pub fn tree_backup() -> Self {
        Self::new(TraceKind::TreeBackup)
    }

    pub fn q_lambda(lambda: f64) -> Self {
        Self::new(TraceKind::QLambda { lambda })
    }

    pub fn peng_lambda(lambda: f64) -> Self {
        Self::new(TraceKind::PengLambda { lambda })
    }

    pub fn with_rho_bar(mut self, rho_bar: f64) -> Self {
        self.rho_bar = Some(rho_bar);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TraceKind::VTrace { c_bar } => {
                if !(c_bar >= 0.0) {
                    return Err(LabError::Parameter(format!("c_bar must be >= 0, got {c_bar}")));
                }
                if let Some(rho_bar) = self.rho_bar {
                    if !(rho_bar >= c_bar) {
                        return Err(LabError::Parameter(format!(
                            "rho_bar ({rho_bar}) must be >= c_bar ({c_bar})"
                        )));
                    }
                }
            }
            TraceKind::QLambda { lambda } | TraceKind::PengLambda { lambda } => {
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(LabError::Parameter(format!(
                        "lambda must lie in [0,1], got {lambda}"
                    )));
                }
            }
            TraceKind::TreeBackup => {}
        }
        if let Some(rho_bar) = self.rho_bar {
            if !(rho_bar >= 0.0) {
                return Err(LabError::Parameter(format!("rho_bar must be >= 0, got {rho_bar}")));
            }
        }
        Ok(())
    }

    /// Whether the family is expressed through a corrected kernel.
    pub fn has_kernel(&self) -> bool {
        !matches!(self.kind, TraceKind::PengLambda { .. })
    }

    /// Trace coefficient `c` and its derivative with respect to `pi(a|x)`.
    ///
    /// At the clip boundary `rho == c_bar` the clipped branch is used.
    #[inline]
    pub fn trace(&self, pi_a: f64, mu_a: f64) -> (f64, f64) {
        match self.kind {
            TraceKind::VTrace { c_bar } => {
                let rho = pi_a / mu_a;
                if rho < c_bar {
                    (rho, 1.0 / mu_a)
                } else {
                    (c_bar, self.clipped_slope / mu_a)
                }
            }
            TraceKind::TreeBackup => (pi_a, 1.0),
            TraceKind::QLambda { lambda } => (lambda, 0.0),
            TraceKind::PengLambda { .. } => (0.0, 0.0),
        }
    }

    /// Truncated target ratio `min(rho_bar, rho)`; untruncated when unset.
    #[inline]
    pub fn truncated_rho(&self, rho: f64) -> f64 {
        match self.rho_bar {
            Some(rb) => rho.min(rb),
            None => rho,
        }
    }

    /// Short name and scalar parameter, as written to result files.
    pub fn descriptor(&self) -> (&'static str, f64) {
        match self.kind {
            TraceKind::VTrace { c_bar } => ("vtrace", c_bar),
            TraceKind::TreeBackup => ("tree_backup", f64::NAN),
            TraceKind::QLambda { lambda } => ("q_lambda", lambda),
            TraceKind::PengLambda { lambda } => ("peng_lambda", lambda),
        }
    }
}

/// Trace-weighted action table and the induced sub-stochastic kernel.
#[derive(Clone, Debug)]
pub struct CorrectedKernel {
    /// `mu(a|x) c(x, a)`, row-major `[x][a]`.
    pub pi_weights: Vec<f64>,
    /// `d pi_weights / d pi(a|x)`, row-major `[x][a]`.
    pub weight_slopes: Vec<f64>,
    /// `sum_a pi_weights(x, a) P(y|x, a)`.
    pub kernel: DMatrix<f64>,
}

/// `gamma (I - gamma K)^{-1} (P^pi - K)`.
#[derive(Clone, Debug)]
pub struct ContractionMatrix {
    pub gamma_matrix: DMatrix<f64>,
    /// `Gamma e`, computed as `gamma (I - gamma K)^{-1} (1 - sum_a w(x, a))`
    /// using that transition rows sum to one.
    row_sums: Vec<f64>,
}

/// Contraction modulus of an operator in the sup norm.
#[derive(Clone, Debug)]
pub struct ContractionRate {
    /// Largest entry of `per_state`.
    pub eta: f64,
    /// Row sums of the contraction matrix, `Gamma e`.
    pub per_state: Vec<f64>,
    /// Largest absolute row sum; equals `eta` when the matrix is entrywise
    /// non-negative.
    pub operator_norm: f64,
}

pub(crate) fn check_inputs(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
) -> Result<()> {
    pi.check_shape(mdp)?;
    mu.check_shape(mdp)?;
    spec.validate()?;
    if !mu.has_full_support() {
        return Err(LabError::Domain(
            "behavior policy must give every action positive probability".into(),
        ));
    }
    Ok(())
}

/// Trace weights `mu c` and the kernel they induce.
pub fn corrected_kernel(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
) -> Result<CorrectedKernel> {
    check_inputs(mdp, pi, mu, spec)?;
    if !spec.has_kernel() {
        return Err(LabError::Domain(
            "Peng's lambda operator is not expressed through a corrected kernel".into(),
        ));
    }
    let mut pi_weights = Vec::with_capacity(pi.probs().len());
    let mut weight_slopes = Vec::with_capacity(pi.probs().len());
    for (p, m) in pi.probs().iter().zip(mu.probs()) {
        let (c, dc) = spec.trace(*p, *m);
        pi_weights.push(m * c);
        weight_slopes.push(m * dc);
    }
    let kernel = mdp.weighted_kernel(&pi_weights);
    Ok(CorrectedKernel {
        pi_weights,
        weight_slopes,
        kernel,
    })
}

/// `T^pi v`.
pub fn bellman_backup(mdp: &Mdp, pi: &TabularPolicy, v: &ValueFunction) -> ValueFunction {
    let q = mdp.backups(v.as_slice());
    ValueFunction(
        q.chunks(mdp.n_actions())
            .zip(pi.probs().chunks(mdp.n_actions()))
            .map(|(qr, pr)| qr.iter().zip(pr).map(|(q, p)| q * p).sum())
            .collect(),
    )
}

/// Expected operator output `R v`.
pub fn apply_operator(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
) -> Result<ValueFunction> {
    check_inputs(mdp, pi, mu, spec)?;
    if let TraceKind::PengLambda { lambda } = spec.kind {
        return apply_peng(mdp, pi, mu, lambda, v);
    }
    let ck = corrected_kernel(mdp, pi, mu, spec)?;
    let gamma = mdp.gamma();
    let backup = bellman_backup(mdp, pi, v).to_dvector();
    let vd = v.to_dvector();
    // r^pi + gamma P^pi v - gamma K v
    let rhs = backup - (&ck.kernel * &vd) * gamma;
    let system = linalg::identity_minus(gamma, &ck.kernel);
    Ok(linalg::solve(system, &rhs)?.into())
}

/// `(I - lambda gamma P^mu)^{-1} (lambda r^mu + (1 - lambda) T^pi v)`.
fn apply_peng(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    lambda: f64,
    v: &ValueFunction,
) -> Result<ValueFunction> {
    let gamma = mdp.gamma();
    let p_mu = mdp.weighted_kernel(mu.probs());
    let rhs = mdp.policy_reward(mu) * lambda + bellman_backup(mdp, pi, v).to_dvector() * (1.0 - lambda);
    let system = linalg::identity_minus(lambda * gamma, &p_mu);
    Ok(linalg::solve(system, &rhs)?.into())
}

/// Operator truncated after `t_max` steps:
/// `v + sum_{t < t_max} (gamma K)^t (T^pi v - v)`.
pub fn apply_truncated(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    t_max: usize,
) -> Result<ValueFunction> {
    if t_max == 0 {
        return Err(LabError::Parameter("t_max must be at least 1".into()));
    }
    let ck = corrected_kernel(mdp, pi, mu, spec)?;
    let gamma = mdp.gamma();
    let vd = v.to_dvector();
    let mut term = bellman_backup(mdp, pi, v).to_dvector() - &vd;
    let mut acc = term.clone();
    for _ in 1..t_max {
        term = (&ck.kernel * &term) * gamma;
        acc += &term;
    }
    Ok((vd + acc).into())
}

/// `R^m v`.
pub fn apply_m_fold(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    m: usize,
) -> Result<ValueFunction> {
    if m == 0 {
        return Err(LabError::Parameter("m must be at least 1".into()));
    }
    let mut out = v.clone();
    for _ in 0..m {
        out = apply_operator(mdp, pi, mu, spec, &out)?;
    }
    Ok(out)
}

pub fn contraction_matrix(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
) -> Result<ContractionMatrix> {
    let ck = corrected_kernel(mdp, pi, mu, spec)?;
    let gamma = mdp.gamma();
    let p_pi = mdp.weighted_kernel(pi.probs());
    let system = linalg::identity_minus(gamma, &ck.kernel);
    let diff = (p_pi - &ck.kernel) * gamma;
    let lu = system.lu();
    let gamma_matrix = lu
        .solve(&diff)
        .ok_or_else(|| LabError::Numeric("singular linear system".into()))?;
    let na = mdp.n_actions();
    let escape = DVector::from_fn(mdp.n_states(), |x, _| {
        gamma * (1.0 - ck.pi_weights[x * na..(x + 1) * na].iter().sum::<f64>())
    });
    let row_sums = lu
        .solve(&escape)
        .ok_or_else(|| LabError::Numeric("singular linear system".into()))?
        .as_slice()
        .to_vec();
    Ok(ContractionMatrix {
        gamma_matrix,
        row_sums,
    })
}

impl ContractionMatrix {
    pub fn rate(&self) -> ContractionRate {
        let n = self.gamma_matrix.nrows();
        let per_state = self.row_sums.clone();
        let operator_norm = (0..n)
            .map(|x| self.gamma_matrix.row(x).iter().map(|g| g.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let eta = per_state.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ContractionRate {
            eta,
            per_state,
            operator_norm,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (&self.gamma_matrix * DVector::from_column_slice(v)).as_slice().to_vec()
    }
}

/// Contraction rate `eta = max_x (Gamma e)(x)`.
pub fn contraction_rate(
    mdp: &Mdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
) -> Result<ContractionRate> {
    Ok(contraction_matrix(mdp, pi, mu, spec)?.rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_value, gen_random_mdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Mdp, TabularPolicy, TabularPolicy) {
        let mdp = gen_random_mdp(10, 4, 0.1, 0.9, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let pi = TabularPolicy::random(&mut rng, 10, 4);
        let mu = TabularPolicy::random(&mut rng, 10, 4);
        (mdp, pi, mu)
    }

    fn max_rho(pi: &TabularPolicy, mu: &TabularPolicy) -> f64 {
        pi.probs()
            .iter()
            .zip(mu.probs())
            .map(|(p, m)| p / m)
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_clip_kernel_vanishes() {
        let (mdp, pi, mu) = setup(1);
        let ck = corrected_kernel(&mdp, &pi, &mu, &TraceSpec::vtrace(0.0)).unwrap();
        assert!(ck.pi_weights.iter().all(|w| *w == 0.0));
        assert!(ck.kernel.iter().all(|k| *k == 0.0));
    }

    #[test]
    fn inactive_clip_recovers_target_weights() {
        let (mdp, pi, mu) = setup(2);
        let spec = TraceSpec::vtrace(max_rho(&pi, &mu) * 2.0);
        let ck = corrected_kernel(&mdp, &pi, &mu, &spec).unwrap();
        for (w, p) in ck.pi_weights.iter().zip(pi.probs()) {
            assert!((w - p).abs() < 1e-15);
        }
        let p_pi = mdp.weighted_kernel(pi.probs());
        assert!((ck.kernel - p_pi).amax() < 1e-14);
    }

    #[test]
    fn on_policy_weights_equal_pi() {
        let (mdp, pi, _) = setup(3);
        let ck = corrected_kernel(&mdp, &pi, &pi, &TraceSpec::vtrace(1.0)).unwrap();
        for (w, p) in ck.pi_weights.iter().zip(pi.probs()) {
            assert!((w - p).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_never_exceed_target() {
        let (mdp, pi, mu) = setup(4);
        for spec in [TraceSpec::vtrace(0.5), TraceSpec::vtrace(1.0), TraceSpec::tree_backup()] {
            let ck = corrected_kernel(&mdp, &pi, &mu, &spec).unwrap();
            for (w, p) in ck.pi_weights.iter().zip(pi.probs()) {
                assert!(*w >= 0.0 && *w <= p + 1e-15);
            }
            for x in 0..10 {
                assert!(ck.kernel.row(x).sum() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn support_violation_is_rejected() {
        let (mdp, pi, _) = setup(5);
        let greedy = TabularPolicy::deterministic(4, &[0; 10]);
        let err = corrected_kernel(&mdp, &pi, &greedy, &TraceSpec::vtrace(1.0));
        assert!(matches!(err, Err(LabError::Domain(_))));
    }

    #[test]
    fn zero_clip_is_bellman_backup() {
        let (mdp, pi, mu) = setup(6);
        let v = ValueFunction((0..10).map(|i| i as f64 - 3.0).collect());
        let out = apply_operator(&mdp, &pi, &mu, &TraceSpec::vtrace(0.0), &v).unwrap();
        let backup = bellman_backup(&mdp, &pi, &v);
        assert!(out.norm_inf_diff(&backup) <= 1e-12);
    }

    #[test]
    fn huge_clip_is_exact_evaluation() {
        let (mdp, pi, mu) = setup(7);
        let v = ValueFunction(vec![5.0; 10]);
        let out = apply_operator(&mdp, &pi, &mu, &TraceSpec::vtrace(1e9), &v).unwrap();
        let exact = exact_value(&mdp, &pi).unwrap();
        assert!(out.norm_inf_diff(&exact) <= 1e-8);
    }

    #[test]
    fn target_value_is_a_fixed_point() {
        let (mdp, pi, mu) = setup(8);
        let vpi = exact_value(&mdp, &pi).unwrap();
        for spec in [
            TraceSpec::vtrace(0.5),
            TraceSpec::vtrace(1.0),
            TraceSpec::tree_backup(),
            TraceSpec::q_lambda(0.7),
        ] {
            let out = apply_operator(&mdp, &pi, &mu, &spec, &vpi).unwrap();
            assert!(out.norm_inf_diff(&vpi) <= 1e-8, "{spec:?}");
            for t in [1, 3, 50] {
                let tr = apply_truncated(&mdp, &pi, &mu, &spec, &vpi, t).unwrap();
                assert!(tr.norm_inf_diff(&vpi) <= 1e-10);
            }
            let m = apply_m_fold(&mdp, &pi, &mu, &spec, &vpi, 4).unwrap();
            assert!(m.norm_inf_diff(&vpi) <= 1e-8);
        }
    }

    #[test]
    fn one_step_truncation_is_bellman_backup() {
        let (mdp, pi, mu) = setup(9);
        let v = ValueFunction((0..10).map(|i| (i as f64).sin()).collect());
        let out = apply_truncated(&mdp, &pi, &mu, &TraceSpec::vtrace(1.0), &v, 1).unwrap();
        assert!(out.norm_inf_diff(&bellman_backup(&mdp, &pi, &v)) < 1e-12);
    }

    #[test]
    fn long_truncation_converges_to_operator() {
        let (mdp, pi, mu) = setup(10);
        let v = ValueFunction((0..10).map(|i| (i as f64).cos() * 4.0).collect());
        for spec in [TraceSpec::vtrace(1.0), TraceSpec::tree_backup(), TraceSpec::q_lambda(0.5)] {
            let full = apply_operator(&mdp, &pi, &mu, &spec, &v).unwrap();
            let tr = apply_truncated(&mdp, &pi, &mu, &spec, &v, 1000).unwrap();
            assert!(full.norm_inf_diff(&tr) < 1e-8);
        }
    }

    #[test]
    fn single_fold_equals_operator() {
        let (mdp, pi, mu) = setup(11);
        let v = ValueFunction(vec![1.0; 10]);
        let spec = TraceSpec::vtrace(0.7);
        assert_eq!(
            apply_m_fold(&mdp, &pi, &mu, &spec, &v, 1).unwrap(),
            apply_operator(&mdp, &pi, &mu, &spec, &v).unwrap()
        );
    }

    #[test]
    fn rate_extremes() {
        let (mdp, pi, mu) = setup(12);
        let slow = contraction_rate(&mdp, &pi, &mu, &TraceSpec::vtrace(0.0)).unwrap();
        assert_eq!(slow.eta, mdp.gamma());
        let fast = contraction_rate(&mdp, &pi, &mu, &TraceSpec::vtrace(max_rho(&pi, &mu) + 1.0)).unwrap();
        assert!(fast.eta.abs() <= 1e-10);
    }

    #[test]
    fn clip_boundary_uses_clipped_branch() {
        let spec = TraceSpec::vtrace(2.0);
        assert_eq!(spec.trace(0.5, 0.25), (2.0, 0.0));
        assert_eq!(spec.trace(0.4, 0.25), (1.6, 4.0));
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(TraceSpec::vtrace(-1.0).validate().is_err());
        assert!(TraceSpec::q_lambda(1.5).validate().is_err());
        assert!(TraceSpec::vtrace(2.0).with_rho_bar(1.0).validate().is_err());
        assert!(TraceSpec::vtrace(1.0).with_rho_bar(1.0).validate().is_ok());
    }
}
