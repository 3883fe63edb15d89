//! Library quantities against independent brute-force references.

#![allow(clippy::needless_range_loop)]

use domo_lab::mdp::{exact_value, gen_random_mdp};
use domo_lab::operators::{apply_operator, bellman_backup, contraction_rate};
use domo_lab::sampling::sample_trajectory;
use domo_lab::{seeding, Mdp, TabularPolicy, TraceSpec, ValueFunction};

fn random_pair(mdp: &Mdp, seed: u64) -> (TabularPolicy, TabularPolicy) {
    let mut rng = seeding::rng(seed);
    let pi = TabularPolicy::random(&mut rng, mdp.n_states(), mdp.n_actions());
    let mu = TabularPolicy::random(&mut rng, mdp.n_states(), mdp.n_actions()).mix_uniform(0.1);
    (pi, mu)
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// `gamma (1 - E c_0) + gamma^2 (E c_0 - E c_0 c_1) + ...`, summed term by
/// term with `E c_0 ... c_{t-1} = K^t e`, `K(x, y) = sum_a mu min(c_bar, rho) P`.
#[test]
fn contraction_rate_matches_trace_series() {
    for seed in 0..10 {
        let mdp = gen_random_mdp(8, 3, 0.3, 0.9, seed).unwrap();
        let (pi, mu) = random_pair(&mdp, 1000 + seed);
        for c_bar in [0.0_f64, 0.5, 1.0, 10.0] {
            let n = mdp.n_states();
            let kernel: Vec<Vec<f64>> = (0..n)
                .map(|x| {
                    (0..n)
                        .map(|y| {
                            (0..mdp.n_actions())
                                .map(|a| {
                                    let (p, m) = (pi.prob(x, a), mu.prob(x, a));
                                    m * c_bar.min(p / m) * mdp.transition_row(x, a)[y]
                                })
                                .sum()
                        })
                        .collect()
                })
                .collect();
            let mut survival = vec![1.0; n];
            let mut series = vec![0.0; n];
            let mut g = 1.0;
            for _ in 0..1000 {
                g *= mdp.gamma();
                let next = mat_vec(&kernel, &survival);
                for x in 0..n {
                    series[x] += g * (survival[x] - next[x]);
                }
                survival = next;
            }
            let rate = contraction_rate(&mdp, &pi, &mu, &TraceSpec::vtrace(c_bar)).unwrap();
            for (a, b) in rate.per_state.iter().zip(&series) {
                assert!((a - b).abs() <= 1e-8, "seed {seed} c {c_bar}: {a} vs {b}");
            }
        }
    }
}

/// Visit frequencies over 1e5 trajectories against `e_start^T P_mu^t`.
#[test]
fn state_visits_match_exact_marginals() {
    let mdp = gen_random_mdp(4, 2, 1.0, 0.9, 3).unwrap();
    let (_, mu) = random_pair(&mdp, 4);
    let (n, horizon, n_traj) = (4, 5, 100_000);
    let mut counts = vec![vec![0usize; n]; horizon];
    for k in 0..n_traj {
        let traj = sample_trajectory(&mdp, &mu, 0, horizon, seeding::derive(17, &[k as u64])).unwrap();
        for (t, step) in traj.steps.iter().enumerate() {
            counts[t][step.state] += 1;
        }
    }
    let mut marginal = vec![0.0; n];
    marginal[0] = 1.0;
    for row in counts.iter() {
        for x in 0..n {
            let p = marginal[x];
            let freq = row[x] as f64 / n_traj as f64;
            let se = (p * (1.0 - p) / n_traj as f64).sqrt().max(1e-12);
            assert!((freq - p).abs() <= 4.0 * se, "state {x}: {freq} vs {p}");
        }
        let mut next = vec![0.0; n];
        for x in 0..n {
            for a in 0..2 {
                for (y, p) in mdp.transition_row(x, a).iter().enumerate() {
                    next[y] += marginal[x] * mu.prob(x, a) * p;
                }
            }
        }
        marginal = next;
    }
}

/// Enumerates deterministic policies: Peng's operator is maximized per state
/// by the one-step greedy action.
#[test]
fn peng_maximizer_is_one_step_greedy() {
    let spec = TraceSpec::peng_lambda(0.5);
    let mut agree = 0;
    let mut total = 0;
    for seed in 0..50 {
        let mdp = gen_random_mdp(3, 2, 1.0, 0.9, seed).unwrap();
        let (_, mu) = random_pair(&mdp, 500 + seed);
        let mut rng = seeding::rng(seed);
        let v = ValueFunction((0..3).map(|_| rand::Rng::random_range(&mut rng, -10.0..10.0)).collect());
        let mut best = [(f64::NEG_INFINITY, 0usize); 3];
        for code in 0..8usize {
            let actions: Vec<usize> = (0..3).map(|x| (code >> x) & 1).collect();
            let out = apply_operator(&mdp, &TabularPolicy::deterministic(2, &actions), &mu, &spec, &v).unwrap();
            for x in 0..3 {
                if out[x] > best[x].0 {
                    best[x] = (out[x], actions[x]);
                }
            }
        }
        let greedy: Vec<usize> = (0..3)
            .map(|x| {
                let q: Vec<f64> = (0..2)
                    .map(|a| {
                        let pi = TabularPolicy::deterministic(2, &[a, a, a]);
                        bellman_backup(&mdp, &pi, &v)[x]
                    })
                    .collect();
                usize::from(q[1] > q[0])
            })
            .collect();
        for x in 0..3 {
            total += 1;
            agree += usize::from(best[x].1 == greedy[x]);
        }
    }
    assert!(agree as f64 >= 0.95 * total as f64, "{agree} of {total}");
}

#[test]
fn zero_discount_rates_vanish() {
    for seed in 0..5 {
        let mdp = gen_random_mdp(6, 3, 0.5, 0.0, seed).unwrap();
        let (pi, mu) = random_pair(&mdp, seed);
        for spec in [TraceSpec::vtrace(0.0), TraceSpec::vtrace(1.0), TraceSpec::tree_backup(), TraceSpec::q_lambda(0.7)] {
            let rate = contraction_rate(&mdp, &pi, &mu, &spec).unwrap();
            assert_eq!(rate.eta, 0.0);
            let v = ValueFunction(vec![3.0; 6]);
            let out = apply_operator(&mdp, &pi, &mu, &spec, &v).unwrap();
            let v_pi = exact_value(&mdp, &pi).unwrap();
            assert!(out.norm_inf_diff(&v_pi) <= 1e-12);
        }
    }
}
