//! Finite MDPs, tabular and softmax policies, and exact evaluation.
//!
//! Transition probabilities are stored row-major as `[x][a][y]` and rewards
//! as `[x][a]`. Rewards are deterministic expected rewards.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg;

const ROW_TOL: f64 = 1e-12;

/// A finite discounted MDP with a fixed expected-reward table.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    horizon_cap: Option<usize>,
    seed: Option<u64>,
}

impl Mdp {
    /// Builds and validates an MDP from flat row-major arrays.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(LabError::Parameter(format!(
                "dimensions must be positive, got {n_states}x{n_actions}"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(LabError::Parameter(format!("gamma must lie in [0,1), got {gamma}")));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(LabError::Parameter(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(LabError::Parameter(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(LabError::Parameter(format!(
                    "transition row (x={}, a={}) is not a distribution (sum {sum})",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(LabError::Parameter("reward entries must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            horizon_cap: None,
            seed: None,
        })
    }

    pub fn with_horizon_cap(mut self, cap: Option<usize>) -> Self {
        self.horizon_cap = cap;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon_cap(&self) -> Option<usize> {
        self.horizon_cap
    }

    /// Seed this instance was generated from, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `P(.|x, a)` as a slice of length `n_states`.
    #[inline]
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Largest absolute expected reward.
    pub fn reward_bound(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `(P v)(x, a)` for every pair, row-major `[x][a]`.
    pub fn expected_next(&self, v: &[f64]) -> Vec<f64> {
        self.transition
            .chunks(self.n_states)
            .map(|row| row.iter().zip(v).map(|(p, vy)| p * vy).sum())
            .collect()
    }

    /// One-step backups `r(x,a) + gamma (P v)(x,a)`, row-major `[x][a]`.
    pub fn backups(&self, v: &[f64]) -> Vec<f64> {
        self.expected_next(v)
            .into_iter()
            .zip(&self.reward)
            .map(|(pv, r)| r + self.gamma * pv)
            .collect()
    }

    /// Matrix `sum_a w(x,a) P(y|x,a)` for a `[x][a]` weight table.
    pub fn weighted_kernel(&self, weights: &[f64]) -> DMatrix<f64> {
        let n = self.n_states;
        let mut m = DMatrix::zeros(n, n);
        for x in 0..n {
            for a in 0..self.n_actions {
                let w = weights[x * self.n_actions + a];
                if w == 0.0 {
                    continue;
                }
                for (y, p) in self.transition_row(x, a).iter().enumerate() {
                    m[(x, y)] += w * p;
                }
            }
        }
        m
    }

    /// Expected reward vector `r^pi`.
    pub fn policy_reward(&self, policy: &TabularPolicy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |x, _| {
            (0..self.n_actions)
                .map(|a| policy.prob(x, a) * self.reward(x, a))
                .sum()
        })
    }

    /// Applies a state relabeling `perm[old] = new`. Used by equivariance checks.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let (n, na) = (self.n_states, self.n_actions);
        if perm.len() != n {
            return Err(LabError::Parameter("permutation length mismatch".into()));
        }
        let mut transition = vec![0.0; self.transition.len()];
        let mut reward = vec![0.0; self.reward.len()];
        for x in 0..n {
            for a in 0..na {
                reward[perm[x] * na + a] = self.reward(x, a);
                for (y, p) in self.transition_row(x, a).iter().enumerate() {
                    transition[(perm[x] * na + a) * n + perm[y]] = *p;
                }
            }
        }
        Mdp::new(n, na, transition, reward, self.gamma)
    }

    /// Returns a copy with `k` added to every reward.
    pub fn shift_rewards(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.reward.iter_mut().for_each(|r| *r += k);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk representation of an [`Mdp`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    format: String,
    version: u32,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    #[serde(default)]
    horizon_cap: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    /// Row-major `[x][a][y]`.
    transition: Vec<f64>,
    /// Row-major `[x][a]`.
    reward: Vec<f64>,
}

const MDP_FORMAT: &str = "domo-lab/mdp";
const MDP_VERSION: u32 = 1;

impl From<&Mdp> for MdpFile {
    fn from(m: &Mdp) -> Self {
        Self {
            format: MDP_FORMAT.into(),
            version: MDP_VERSION,
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            horizon_cap: m.horizon_cap,
            seed: m.seed,
            transition: m.transition.clone(),
            reward: m.reward.clone(),
        }
    }
}

impl TryFrom<MdpFile> for Mdp {
    type Error = LabError;

    fn try_from(f: MdpFile) -> Result<Self> {
        if f.format != MDP_FORMAT || f.version != MDP_VERSION {
            return Err(LabError::Parameter(format!(
                "unsupported MDP file {} v{}",
                f.format, f.version
            )));
        }
        let mut mdp = Mdp::new(f.n_states, f.n_actions, f.transition, f.reward, f.gamma)?;
        mdp.horizon_cap = f.horizon_cap;
        mdp.seed = f.seed;
        Ok(mdp)
    }
}

/// Samples a random MDP: every transition row is Dirichlet(alpha, ..., alpha)
/// and every reward entry is standard normal.
pub fn gen_random_mdp(
    n_states: usize,
    n_actions: usize,
    alpha: f64,
    gamma: f64,
    seed: u64,
) -> Result<Mdp> {
    if n_states < 2 || n_actions < 1 {
        return Err(LabError::Parameter(format!(
            "need at least 2 states and 1 action, got {n_states}x{n_actions}"
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(LabError::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(LabError::Parameter(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(sample_dirichlet(&mut rng, alpha, n_states));
    }
    let reward = (0..n_states * n_actions)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut mdp = Mdp::new(n_states, n_actions, transition, reward, gamma)?;
    mdp.seed = Some(seed);
    Ok(mdp)
}

/// Symmetric Dirichlet draw computed in log space.
///
/// For small `alpha` the raw gamma variates underflow, so each component is
/// drawn as `log G(1 + alpha) + log(U) / alpha` and normalized with
/// log-sum-exp.
fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, dim: usize) -> Vec<f64> {
    let boosted = Gamma::new(alpha + 1.0, 1.0).expect("shape is positive");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>();
            // u in [0, 1); map to (0, 1] so the log is finite.
            g.ln() + (1.0 - u).ln() / alpha
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// A stochastic policy table `pi(a|x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(LabError::Parameter("policy table has wrong size".into()));
        }
        for (x, row) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(LabError::Parameter(format!(
                    "policy row {x} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy choosing `actions[x]` at every state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    /// Random full-support policy with rows drawn Dirichlet(1, ..., 1).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let row = sample_dirichlet(rng, 1.0, n_actions);
            probs.extend(row);
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// `(1 - eps) * self + eps * uniform`.
    pub fn mix_uniform(&self, eps: f64) -> Self {
        let u = 1.0 / self.n_actions as f64;
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs: self.probs.iter().map(|p| (1.0 - eps) * p + eps * u).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }

    /// Most probable action per state, lowest index on ties.
    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.n_states).map(|x| argmax(self.row(x))).collect()
    }

    pub(crate) fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(LabError::Parameter(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Softmax policy over per-state logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(LabError::Parameter("logit table has wrong size".into()));
        }
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(LabError::Parameter("logits must not be NaN or +inf".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    /// Logits `log(pi(a|x) + offset)`; with a deterministic `pi` this yields
    /// a softmax policy close to it.
    pub fn from_log_probs(policy: &TabularPolicy, offset: f64) -> Self {
        Self {
            n_states: policy.n_states,
            n_actions: policy.n_actions,
            logits: policy.probs.iter().map(|p| (p + offset).ln()).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Induced action probabilities.
    pub fn probs(&self) -> TabularPolicy {
        let mut probs = Vec::with_capacity(self.logits.len());
        for row in self.logits.chunks(self.n_actions) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            probs.extend(exps.into_iter().map(|e| e / total));
        }
        TabularPolicy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        }
    }
}

/// State values, one entry per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn norm_inf_diff(&self, other: &ValueFunction) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn norm_l2_diff(&self, other: &ValueFunction) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<DVector<f64>> for ValueFunction {
    fn from(v: DVector<f64>) -> Self {
        Self(v.as_slice().to_vec())
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Action values `q(x, a)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QFunction {
    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }
}

/// `V^pi` by a direct solve of `(I - gamma P^pi) v = r^pi`.
pub fn exact_value(mdp: &Mdp, policy: &TabularPolicy) -> Result<ValueFunction> {
    policy.check_shape(mdp)?;
    let system = linalg::identity_minus(mdp.gamma, &mdp.weighted_kernel(policy.probs()));
    let rhs = mdp.policy_reward(policy);
    Ok(linalg::solve(system, &rhs)?.into())
}

/// `Q^pi(x, a) = r(x, a) + gamma (P V^pi)(x, a)`.
pub fn exact_q(mdp: &Mdp, policy: &TabularPolicy) -> Result<QFunction> {
    let v = exact_value(mdp, policy)?;
    Ok(QFunction {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        values: mdp.backups(v.as_slice()),
    })
}

/// Deterministic greedy policy with respect to the one-step backup of `v`.
/// Ties go to the lowest action index.
pub fn greedy_policy(mdp: &Mdp, v: &ValueFunction) -> TabularPolicy {
    let q = mdp.backups(v.as_slice());
    let actions: Vec<usize> = q.chunks(mdp.n_actions).map(argmax).collect();
    TabularPolicy::deterministic(mdp.n_actions, &actions)
}

/// Value iteration to `tol`, followed by greedy policy extraction.
///
/// Iterates `T` until the sup-norm update drops below
/// `tol (1 - gamma) / (2 gamma)`, extracts the greedy policy and then runs
/// policy-iteration sweeps until the greedy policy is stable, so the returned
/// policy is an exact optimum of the tabular problem.
pub fn optimal_control(mdp: &Mdp, tol: f64) -> Result<(ValueFunction, TabularPolicy)> {
    if !(tol > 0.0) {
        return Err(LabError::Parameter(format!("tol must be positive, got {tol}")));
    }
    let gamma = mdp.gamma;
    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / (2.0 * gamma)
    };
    let mut v = ValueFunction::zeros(mdp.n_states);
    loop {
        let q = mdp.backups(v.as_slice());
        let next: Vec<f64> = q
            .chunks(mdp.n_actions)
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next = ValueFunction(next);
        let delta = next.norm_inf_diff(&v);
        v = next;
        if delta < threshold {
            break;
        }
    }
    let mut policy = greedy_policy(mdp, &v);
    let mut value = exact_value(mdp, &policy)?;
    // Bounded by the number of deterministic policies; in practice a handful.
    for _ in 0..1000 {
        let improved = greedy_policy(mdp, &value);
        if improved == policy {
            break;
        }
        // Only switch when the backup strictly improves, to avoid cycling on ties.
        let q = mdp.backups(value.as_slice());
        let gain = (0..mdp.n_states).any(|x| {
            let cur = policy.argmax_actions()[x];
            let new = improved.argmax_actions()[x];
            q[x * mdp.n_actions + new] > q[x * mdp.n_actions + cur] + 1e-12
        });
        if !gain {
            break;
        }
        policy = improved;
        value = exact_value(mdp, &policy)?;
    }
    Ok((value, policy))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
