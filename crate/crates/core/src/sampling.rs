//! Trajectory simulation and per-trajectory estimators of the trace
//! operators and their logit gradients.
//!
//! Sampled chains never terminate on their own, so every estimator here
//! targets the operator truncated at the trajectory length.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gradients::exact_policy_gradient;
use crate::mdp::{Mdp, SoftmaxPolicy, TabularPolicy, ValueFunction};
use crate::operators::{TraceKind, TraceSpec};
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start_state(&self) -> usize {
        self.steps[0].state
    }

    /// Sub-trajectory starting at step `t`.
    pub fn suffix(&self, t: usize) -> Trajectory {
        Trajectory {
            steps: self.steps[t..].to_vec(),
        }
    }
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum; take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Roll `horizon` steps under `mu` from `start_state` using `rng`.
///
/// The horizon is clipped to the MDP's `horizon_cap` when one is set.
pub fn sample_trajectory_with<R: Rng + ?Sized>(
    rng: &mut R,
    mdp: &Mdp,
    mu: &TabularPolicy,
    start_state: usize,
    horizon: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(LabError::Parameter("horizon must be >= 1".into()));
    }
    if start_state >= mdp.n_states() {
        return Err(LabError::Parameter(format!(
            "start state {start_state} out of range for {} states",
            mdp.n_states()
        )));
    }
    mu.check_shape(mdp)?;
    let len = mdp.horizon_cap().map_or(horizon, |h| horizon.min(h));
    let mut steps = Vec::with_capacity(len);
    let mut x = start_state;
    for _ in 0..len {
        let a = sample_index(rng, mu.row(x));
        let y = sample_index(rng, mdp.transition_row(x, a));
        steps.push(Step {
            state: x,
            action: a,
            reward: mdp.reward(x, a),
            next_state: y,
        });
        x = y;
    }
    Ok(Trajectory { steps })
}

pub fn sample_trajectory(
    mdp: &Mdp,
    mu: &TabularPolicy,
    start_state: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    sample_trajectory_with(&mut seeding::rng(seed), mdp, mu, start_state, horizon)
}

fn check_sampled(spec: &TraceSpec) -> Result<()> {
    spec.validate()?;
    if let TraceKind::PengLambda { .. } = spec.kind {
        return Err(LabError::Domain(
            "Peng's lambda operator has no importance-weighted sample estimate".into(),
        ));
    }
    Ok(())
}

fn behavior_prob(mu: &TabularPolicy, x: usize, a: usize) -> Result<f64> {
    let m = mu.prob(x, a);
    if m > 0.0 {
        Ok(m)
    } else {
        Err(LabError::Domain(format!(
            "sampled action {a} at state {x} has zero behavior probability"
        )))
    }
}

/// Tail sums `T_t = rho_t delta_t + gamma c_t T_{t+1}` with `T_len = 0`,
/// together with the per-step ratio, trace and trace slope.
struct TraceSweep {
    tail: Vec<f64>,
    delta: Vec<f64>,
    rho: Vec<f64>,
    trace: Vec<f64>,
    slope: Vec<f64>,
    mu_a: Vec<f64>,
}

fn sweep(
    traj: &Trajectory,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    gamma: f64,
) -> Result<TraceSweep> {
    let n = traj.len();
    let mut out = TraceSweep {
        tail: vec![0.0; n + 1],
        delta: Vec::with_capacity(n),
        rho: Vec::with_capacity(n),
        trace: Vec::with_capacity(n),
        slope: Vec::with_capacity(n),
        mu_a: Vec::with_capacity(n),
    };
    for st in &traj.steps {
        let m = behavior_prob(mu, st.state, st.action)?;
        let p = pi.prob(st.state, st.action);
        let (c, dc) = spec.trace(p, m);
        out.delta.push(st.reward + gamma * v[st.next_state] - v[st.state]);
        out.rho.push(p / m);
        out.trace.push(c);
        out.slope.push(dc);
        out.mu_a.push(m);
    }
    for t in (0..n).rev() {
        out.tail[t] = out.rho[t] * out.delta[t] + gamma * out.trace[t] * out.tail[t + 1];
    }
    Ok(out)
}

/// `V(X_0) + sum_t gamma^t c_{0:t-1} rho_t delta_t` over the trajectory.
pub fn stochastic_target(
    traj: &Trajectory,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    gamma: f64,
) -> Result<f64> {
    check_sampled(spec)?;
    if traj.is_empty() {
        return Err(LabError::Parameter("empty trajectory".into()));
    }
    let sw = sweep(traj, pi, mu, spec, v, gamma)?;
    Ok(v[traj.start_state()] + sw.tail[0])
}

/// Logit gradient of [`stochastic_target`] on a fixed trajectory, flattened
/// `[s][b]`.
///
/// With `A_t = prod_{k<t} gamma c_k`, the target is
/// `V(X_0) + sum_t A_t rho_t delta_t`, so the sensitivity to `pi(A_t|X_t)` is
/// `A_t (delta_t / mu_t + gamma T_{t+1} dc_t/dpi)`.
pub fn stochastic_gradient(
    traj: &Trajectory,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    gamma: f64,
) -> Result<Vec<f64>> {
    let pi = theta.probs();
    let mut grad = vec![0.0; pi.probs().len()];
    accumulate_gradient(traj, &pi, mu, spec, v, gamma, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale` times the per-trajectory gradient into `grad`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_gradient(
    traj: &Trajectory,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    gamma: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    check_sampled(spec)?;
    let sw = sweep(traj, pi, mu, spec, v, gamma)?;
    let na = pi.n_actions();
    let mut prefix = scale;
    for (t, st) in traj.steps.iter().enumerate() {
        if prefix == 0.0 {
            break;
        }
        let kappa = prefix * (sw.delta[t] / sw.mu_a[t] + gamma * sw.tail[t + 1] * sw.slope[t]);
        let row = pi.row(st.state);
        let pa = row[st.action];
        let g = &mut grad[st.state * na..(st.state + 1) * na];
        for (b, (gb, pb)) in g.iter_mut().zip(row).enumerate() {
            let ind = if b == st.action { 1.0 } else { 0.0 };
            *gb += kappa * pa * (ind - pb);
        }
        prefix *= gamma * sw.trace[t];
    }
    Ok(())
}

/// `V_hat(X_t) = V(X_t) + rho_t (R_t + gamma V_hat(X_{t+1}) - V(X_t))`,
/// bootstrapped with `V_hat(X_len) = V(X_len)`. Length `len + 1`.
pub fn doubly_robust_values(
    traj: &Trajectory,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    v: &ValueFunction,
    gamma: f64,
) -> Result<Vec<f64>> {
    let n = traj.len();
    let mut out = vec![0.0; n + 1];
    out[n] = traj.steps.last().map_or(0.0, |st| v[st.next_state]);
    for t in (0..n).rev() {
        let st = &traj.steps[t];
        let rho = pi.prob(st.state, st.action) / behavior_prob(mu, st.state, st.action)?;
        out[t] = v[st.state] + rho * (st.reward + gamma * out[t + 1] - v[st.state]);
    }
    Ok(out)
}

/// Score-function form `sum_t gamma^t rho_{0:t} A_hat_t grad log pi(A_t|X_t)`
/// with `A_hat_t = R_t + gamma V_hat(X_{t+1}) - V(X_t)` from the doubly
/// robust recursion.
pub fn doubly_robust_score_gradient(
    traj: &Trajectory,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    v: &ValueFunction,
    gamma: f64,
) -> Result<Vec<f64>> {
    let pi = theta.probs();
    let na = pi.n_actions();
    let v_hat = doubly_robust_values(traj, &pi, mu, v, gamma)?;
    let mut grad = vec![0.0; pi.probs().len()];
    let mut weight = 1.0;
    for (t, st) in traj.steps.iter().enumerate() {
        weight *= pi.prob(st.state, st.action) / mu.prob(st.state, st.action);
        let adv = st.reward + gamma * v_hat[t + 1] - v[st.state];
        for b in 0..na {
            let ind = if b == st.action { 1.0 } else { 0.0 };
            grad[st.state * na + b] += weight * adv * (ind - pi.prob(st.state, b));
        }
        weight *= gamma;
    }
    Ok(grad)
}

/// Which value is subtracted inside the trace term of the recursive target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetBootstrap {
    /// `gamma c_t (V_target(X_{t+1}) - v(X_{t+1}))`; telescopes to the
    /// operator's sample estimate.
    #[default]
    NextState,
    /// `gamma c_t (V_target(X_{t+1}) - v(X_t))`, the variant sometimes
    /// printed for the recursion. Kept for comparison only.
    CurrentState,
}

/// Backward recursion
/// `V_target(X_t) = v(X_t) + rho~_t delta_t + gamma c_t (V_target(X_{t+1}) - v(.))`
/// with `V_target(X_len) = v(X_len)` and `rho~_t = min(rho_bar, rho_t)`.
/// Length `len + 1`.
pub fn recursive_targets(
    traj: &Trajectory,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    spec: &TraceSpec,
    v: &ValueFunction,
    gamma: f64,
    bootstrap: TargetBootstrap,
) -> Result<Vec<f64>> {
    check_sampled(spec)?;
    let n = traj.len();
    let mut out = vec![0.0; n + 1];
    out[n] = traj.steps.last().map_or(0.0, |st| v[st.next_state]);
    for t in (0..n).rev() {
        let st = &traj.steps[t];
        let m = behavior_prob(mu, st.state, st.action)?;
        let p = pi.prob(st.state, st.action);
        let (c, _) = spec.trace(p, m);
        let rho = spec.truncated_rho(p / m);
        let delta = st.reward + gamma * v[st.next_state] - v[st.state];
        let anchor = match bootstrap {
            TargetBootstrap::NextState => v[st.next_state],
            TargetBootstrap::CurrentState => v[st.state],
        };
        out[t] = v[st.state] + rho * delta + gamma * c * (out[t + 1] - anchor);
    }
    Ok(out)
}

/// Bias, variance and squared error of one estimator configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub c_bar: f64,
    /// Unbiased estimate of the squared bias; can dip below zero when the
    /// bias is small next to the variance.
    pub bias_sq: f64,
    /// Total variance of one estimate, summed over components.
    pub variance: f64,
    pub mse: f64,
    pub n_trajectories: usize,
    pub n_repetitions: usize,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub c_bar_grid: Vec<f64>,
    /// Trajectories per start state per repetition.
    pub n_traj: usize,
    pub n_rep: usize,
    pub horizon: usize,
    pub seed: u64,
}

/// Bias/variance study of the per-trajectory logit gradient of
/// `R V(x)` for every start state `x`, measured against the exact policy
/// gradient.
///
/// Each repetition draws `n_traj` trajectories from every start state and
/// averages their gradients into one `[out][s][b]` estimate. The same
/// trajectories are reused for every grid value.
pub fn bias_variance_sweep(
    mdp: &Mdp,
    theta: &SoftmaxPolicy,
    mu: &TabularPolicy,
    v: &ValueFunction,
    cfg: &SweepConfig,
) -> Result<Vec<EstimatorStats>> {
    if cfg.c_bar_grid.is_empty() {
        return Err(LabError::Parameter("c_bar grid must be non-empty".into()));
    }
    if cfg.n_traj == 0 || cfg.n_rep < 2 {
        return Err(LabError::Parameter("need n_traj >= 1 and n_rep >= 2".into()));
    }
    let specs: Vec<TraceSpec> = cfg.c_bar_grid.iter().map(|&c| TraceSpec::vtrace(c)).collect();
    for s in &specs {
        s.validate()?;
    }
    let pi = theta.probs();
    let reference = exact_policy_gradient(mdp, theta)?;
    let n = mdp.n_states();
    let dim = reference.grad.len();
    let per_state = n * mdp.n_actions();
    let gamma = mdp.gamma();

    // estimates[rep][grid] -> flattened [out][s][b]
    let estimates: Vec<Vec<Vec<f64>>> = (0..cfg.n_rep)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Vec<f64>>> {
            let mut est = vec![vec![0.0; dim]; specs.len()];
            let scale = 1.0 / cfg.n_traj as f64;
            for x in 0..n {
                for k in 0..cfg.n_traj {
                    let seed = seeding::derive(cfg.seed, &[seeding::TRAJECTORY, rep as u64, x as u64, k as u64]);
                    let traj = sample_trajectory(mdp, mu, x, cfg.horizon, seed)?;
                    for (e, spec) in est.iter_mut().zip(&specs) {
                        let slot = &mut e[x * per_state..(x + 1) * per_state];
                        accumulate_gradient(&traj, &pi, mu, spec, v, gamma, scale, slot)?;
                    }
                }
            }
            Ok(est)
        })
        .collect::<Result<_>>()?;

    let reps = cfg.n_rep as f64;
    let stats = specs
        .iter()
        .enumerate()
        .map(|(g, spec)| {
            let mut mean = vec![0.0; dim];
            for rep in &estimates {
                for (m, e) in mean.iter_mut().zip(&rep[g]) {
                    *m += e / reps;
                }
            }
            // Unbiased estimates: the squared error of the mean carries an
            // extra variance / n_rep, which is removed from the bias term.
            let sq_err: f64 = mean.iter().zip(&reference.grad).map(|(m, r)| (m - r).powi(2)).sum();
            let variance: f64 = estimates
                .iter()
                .map(|rep| rep[g].iter().zip(&mean).map(|(e, m)| (e - m).powi(2)).sum::<f64>())
                .sum::<f64>()
                / (reps - 1.0);
            let bias_sq = sq_err - variance / reps;
            let c_bar = match spec.kind {
                TraceKind::VTrace { c_bar } => c_bar,
                _ => unreachable!("sweep grid is V-trace only"),
            };
            EstimatorStats {
                c_bar,
                bias_sq,
                variance,
                mse: bias_sq + variance,
                n_trajectories: cfg.n_traj,
                n_repetitions: cfg.n_rep,
            }
        })
        .collect();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::gen_random_mdp;

    fn setup(seed: u64) -> (Mdp, SoftmaxPolicy, TabularPolicy, ValueFunction) {
        let mdp = gen_random_mdp(5, 3, 0.5, 0.9, seed).unwrap();
        let mut rng = seeding::rng(seed + 1);
        let logits = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = SoftmaxPolicy::new(5, 3, logits).unwrap();
        let mu = TabularPolicy::random(&mut rng, 5, 3).mix_uniform(0.2);
        let v = ValueFunction((0..5).map(|_| rng.random_range(-2.0..2.0)).collect());
        (mdp, theta, mu, v)
    }

    #[test]
    fn self_loop_stays_put() {
        let mdp = Mdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 1.0], 0.5).unwrap();
        let mu = TabularPolicy::uniform(1, 2);
        let traj = sample_trajectory(&mdp, &mu, 0, 25, 3).unwrap();
        assert_eq!(traj.len(), 25);
        assert!(traj.steps.iter().all(|s| s.state == 0 && s.next_state == 0));
    }

    #[test]
    fn trajectories_chain_and_repeat() {
        let (mdp, _, mu, _) = setup(1);
        let a = sample_trajectory(&mdp, &mu, 2, 50, 9).unwrap();
        let b = sample_trajectory(&mdp, &mu, 2, 50, 9).unwrap();
        assert_eq!(a, b);
        for w in a.steps.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
    }

    #[test]
    fn horizon_cap_truncates() {
        let (mdp, _, mu, _) = setup(2);
        let mdp = mdp.with_horizon_cap(Some(7));
        assert_eq!(sample_trajectory(&mdp, &mu, 0, 50, 1).unwrap().len(), 7);
    }

    #[test]
    fn one_step_target() {
        let (mdp, theta, mu, v) = setup(3);
        let pi = theta.probs();
        let traj = sample_trajectory(&mdp, &mu, 1, 1, 4).unwrap();
        let st = traj.steps[0];
        let rho = pi.prob(st.state, st.action) / mu.prob(st.state, st.action);
        let expected = v[st.state] + rho * (st.reward + 0.9 * v[st.next_state] - v[st.state]);
        let got = stochastic_target(&traj, &pi, &mu, &TraceSpec::vtrace(1.0), &v, 0.9).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn on_policy_target_telescopes() {
        let (mdp, theta, _, v) = setup(4);
        let pi = theta.probs();
        let traj = sample_trajectory(&mdp, &pi, 0, 30, 5).unwrap();
        let got = stochastic_target(&traj, &pi, &pi, &TraceSpec::vtrace(1.0), &v, 0.9).unwrap();
        let mut ret = 0.0;
        let mut disc = 1.0;
        for st in &traj.steps {
            ret += disc * st.reward;
            disc *= 0.9;
        }
        ret += disc * v[traj.steps.last().unwrap().next_state];
        assert!((got - ret).abs() < 1e-10);
    }

    #[test]
    fn zero_ratio_collapses_dr() {
        let (mdp, _, mu, v) = setup(5);
        let pi = TabularPolicy::deterministic(3, &[0; 5]);
        let traj = sample_trajectory(&mdp, &mu, 0, 40, 6).unwrap();
        let dr = doubly_robust_values(&traj, &pi, &mu, &v, 0.9).unwrap();
        for (t, st) in traj.steps.iter().enumerate() {
            if st.action != 0 {
                assert_eq!(dr[t], v[st.state]);
            }
        }
    }

    #[test]
    fn dr_equals_untruncated_target() {
        let (mdp, theta, mu, v) = setup(6);
        let pi = theta.probs();
        let traj = sample_trajectory(&mdp, &mu, 3, 40, 7).unwrap();
        let dr = doubly_robust_values(&traj, &pi, &mu, &v, 0.9).unwrap();
        let t = stochastic_target(&traj, &pi, &mu, &TraceSpec::vtrace(f64::INFINITY), &v, 0.9).unwrap();
        assert!((dr[0] - t).abs() < 1e-9 * t.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mdp, theta, mu, v) = setup(7);
        for spec in [
            TraceSpec::vtrace(0.0),
            TraceSpec::vtrace(0.7),
            TraceSpec::vtrace(f64::INFINITY),
            TraceSpec::tree_backup(),
            TraceSpec::q_lambda(0.5),
        ] {
            let traj = sample_trajectory(&mdp, &mu, 0, 20, 8).unwrap();
            let g = stochastic_gradient(&traj, &theta, &mu, &spec, &v, 0.9).unwrap();
            let h = 1e-5;
            for j in 0..15 {
                let mut p = theta.clone();
                p.logits_mut()[j] += h;
                let mut m = theta.clone();
                m.logits_mut()[j] -= h;
                let fp = stochastic_target(&traj, &p.probs(), &mu, &spec, &v, 0.9).unwrap();
                let fm = stochastic_target(&traj, &m.probs(), &mu, &spec, &v, 0.9).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{spec:?} {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn zero_clip_gradient_uses_first_step_only() {
        let (mdp, theta, mu, v) = setup(8);
        let pi = theta.probs();
        let traj = sample_trajectory(&mdp, &mu, 2, 30, 9).unwrap();
        let g = stochastic_gradient(&traj, &theta, &mu, &TraceSpec::vtrace(0.0), &v, 0.9).unwrap();
        let st = traj.steps[0];
        let rho = pi.prob(st.state, st.action) / mu.prob(st.state, st.action);
        let delta = st.reward + 0.9 * v[st.next_state] - v[st.state];
        for s in 0..5 {
            for b in 0..3 {
                let expected = if s == st.state {
                    let ind = if b == st.action { 1.0 } else { 0.0 };
                    rho * delta * (ind - pi.prob(s, b))
                } else {
                    0.0
                };
                assert!((g[s * 3 + b] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn untruncated_gradient_is_score_form() {
        let (mdp, theta, mu, v) = setup(9);
        let traj = sample_trajectory(&mdp, &mu, 1, 60, 10).unwrap();
        let a = stochastic_gradient(&traj, &theta, &mu, &TraceSpec::vtrace(f64::INFINITY), &v, 0.9).unwrap();
        let b = doubly_robust_score_gradient(&traj, &theta, &mu, &v, 0.9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn recursive_targets_reduce() {
        let (mdp, theta, mu, v) = setup(10);
        let pi = theta.probs();
        let traj = sample_trajectory(&mdp, &mu, 0, 25, 11).unwrap();
        let one = recursive_targets(&traj, &pi, &mu, &TraceSpec::vtrace(0.0), &v, 0.9, TargetBootstrap::NextState)
            .unwrap();
        for (t, st) in traj.steps.iter().enumerate() {
            let rho = pi.prob(st.state, st.action) / mu.prob(st.state, st.action);
            let delta = st.reward + 0.9 * v[st.next_state] - v[st.state];
            assert!((one[t] - (v[st.state] + rho * delta)).abs() < 1e-12);
        }
        let full = recursive_targets(
            &traj,
            &pi,
            &mu,
            &TraceSpec::vtrace(f64::INFINITY),
            &v,
            0.9,
            TargetBootstrap::NextState,
        )
        .unwrap();
        let dr = doubly_robust_values(&traj, &pi, &mu, &v, 0.9).unwrap();
        for (a, b) in full.iter().zip(&dr) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn printed_bootstrap_differs() {
        let (mdp, theta, mu, v) = setup(11);
        let pi = theta.probs();
        let traj = sample_trajectory(&mdp, &mu, 0, 25, 12).unwrap();
        let spec = TraceSpec::vtrace(1.0).with_rho_bar(1.0);
        let a = recursive_targets(&traj, &pi, &mu, &spec, &v, 0.9, TargetBootstrap::NextState).unwrap();
        let b = recursive_targets(&traj, &pi, &mu, &spec, &v, 0.9, TargetBootstrap::CurrentState).unwrap();
        assert_eq!(a[25], b[25]);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn peng_has_no_sample_estimate() {
        let (mdp, theta, mu, v) = setup(12);
        let traj = sample_trajectory(&mdp, &mu, 0, 5, 1).unwrap();
        assert!(matches!(
            stochastic_target(&traj, &theta.probs(), &mu, &TraceSpec::peng_lambda(0.5), &v, 0.9),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn sweep_decomposes() {
        let (mdp, theta, _, _) = setup(13);
        let mu = TabularPolicy::uniform(5, 3);
        let v = crate::mdp::exact_value(&mdp, &theta.probs()).unwrap();
        let cfg = SweepConfig {
            c_bar_grid: vec![0.0, 1.0, 10.0],
            n_traj: 5,
            n_rep: 4,
            horizon: 30,
            seed: 3,
        };
        let stats = bias_variance_sweep(&mdp, &theta, &mu, &v, &cfg).unwrap();
        assert_eq!(stats.len(), 3);
        for s in &stats {
            assert!(s.variance >= 0.0);
            assert!((s.mse - s.bias_sq - s.variance).abs() < 1e-12);
        }
        assert_eq!(stats, bias_variance_sweep(&mdp, &theta, &mu, &v, &cfg).unwrap());
    }
}
