//! Randomized invariants over small MDPs, policies and configs.

use proptest::prelude::*;

use domo_lab::experiments::{self, ExperimentConfig};
use domo_lab::mdp::{exact_value, gen_random_mdp};
use domo_lab::operators::{apply_operator, contraction_rate};
use domo_lab::{seeding, Mdp, TabularPolicy, TraceSpec, ValueFunction};

fn instance(seed: u64, n: usize, na: usize) -> (Mdp, TabularPolicy, TabularPolicy, ValueFunction) {
    let mdp = gen_random_mdp(n, na, 0.5, 0.85, seed).unwrap();
    let mut rng = seeding::rng(seeding::derive(seed, &[1]));
    let pi = TabularPolicy::random(&mut rng, n, na);
    let mu = TabularPolicy::random(&mut rng, n, na).mix_uniform(0.1);
    let v = ValueFunction((0..n).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect());
    (mdp, pi, mu, v)
}

fn specs(c_bar: f64) -> [TraceSpec; 3] {
    [TraceSpec::vtrace(c_bar), TraceSpec::tree_backup(), TraceSpec::q_lambda(0.5)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn target_value_is_fixed(seed in any::<u64>(), n in 2usize..7, na in 1usize..4, c_bar in 0.0f64..20.0) {
        let (mdp, pi, mu, _) = instance(seed, n, na);
        let v_pi = exact_value(&mdp, &pi).unwrap();
        for spec in specs(c_bar) {
            let out = apply_operator(&mdp, &pi, &mu, &spec, &v_pi).unwrap();
            prop_assert!(out.norm_inf_diff(&v_pi) <= 1e-8);
        }
    }

    #[test]
    fn clipped_rates_lie_in_zero_gamma(seed in any::<u64>(), n in 2usize..7, na in 1usize..4, c_bar in 0.0f64..20.0) {
        let (mdp, pi, mu, _) = instance(seed, n, na);
        let rate = contraction_rate(&mdp, &pi, &mu, &TraceSpec::vtrace(c_bar)).unwrap();
        for r in &rate.per_state {
            prop_assert!(*r >= -1e-12 && *r <= mdp.gamma() + 1e-12);
        }
        prop_assert!((rate.eta - rate.operator_norm).abs() <= 1e-12);
    }

    #[test]
    fn rate_shrinks_as_clip_grows(seed in any::<u64>(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let (mdp, pi, mu, _) = instance(seed, 5, 3);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let eta = |c: f64| contraction_rate(&mdp, &pi, &mu, &TraceSpec::vtrace(c)).unwrap().eta;
        prop_assert!(eta(hi) <= eta(lo) + 1e-12);
    }

    #[test]
    fn operator_commutes_with_relabeling(seed in any::<u64>(), c_bar in 0.0f64..5.0, shuffle in any::<u64>()) {
        let (mdp, pi, mu, v) = instance(seed, 5, 3);
        let mut perm: Vec<usize> = (0..5).collect();
        let mut rng = seeding::rng(shuffle);
        for i in (1..5).rev() {
            perm.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
        }
        let relabel_rows = |p: &TabularPolicy| {
            let mut probs = vec![0.0; 15];
            for x in 0..5 {
                probs[perm[x] * 3..perm[x] * 3 + 3].copy_from_slice(p.row(x));
            }
            TabularPolicy::new(5, 3, probs).unwrap()
        };
        let mut pv = vec![0.0; 5];
        for x in 0..5 {
            pv[perm[x]] = v[x];
        }
        let permuted = mdp.permute_states(&perm).unwrap();
        for spec in specs(c_bar) {
            let out = apply_operator(&mdp, &pi, &mu, &spec, &v).unwrap();
            let pout = apply_operator(&permuted, &relabel_rows(&pi), &relabel_rows(&mu), &spec, &ValueFunction(pv.clone())).unwrap();
            for x in 0..5 {
                prop_assert!((out[x] - pout[perm[x]]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn reward_shift_moves_output_by_constant(seed in any::<u64>(), c_bar in 0.0f64..5.0, k in -3.0f64..3.0) {
        let (mdp, pi, mu, v) = instance(seed, 4, 2);
        let shift = k / (1.0 - mdp.gamma());
        let shifted_v = ValueFunction(v.0.iter().map(|x| x + shift).collect());
        for spec in specs(c_bar) {
            let out = apply_operator(&mdp, &pi, &mu, &spec, &v).unwrap();
            let sout = apply_operator(&mdp.shift_rewards(k), &pi, &mu, &spec, &shifted_v).unwrap();
            for x in 0..4 {
                prop_assert!((sout[x] - out[x] - shift).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn float_text_round_trips(x in any::<f64>()) {
        let text = experiments::format_float(x);
        let back: f64 = text.parse().unwrap();
        if x.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), n_mdps in 1usize..500, c_bar in 0.0f64..100.0, iterations in 1usize..100) {
        let cfg = ExperimentConfig { seed, n_mdps, c_bar, iterations, ..ExperimentConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        prop_assert_eq!(experiments::parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn sibling_seeds_differ(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(seeding::child(seed, i), seeding::child(seed, j));
        prop_assert_eq!(seeding::derive(seed, &[i, j]), seeding::child(seeding::child(seed, i), j));
    }
}
