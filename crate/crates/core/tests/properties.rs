//! Property tests over the public API.

use approx::assert_relative_eq;
use dpmreg::diagnostics::{effective_sample_size, split_rhat};
use dpmreg::dpm::{gibbs_sweep_assignments, resample_atoms, BaseMeasure, ClusterState, DpmConfig, ATOM_TARGET_ACCEPTANCE};
use dpmreg::mh::AdaptiveStep;
use dpmreg::quadrature::{gauss_hermite, normal_expectation};
use dpmreg::sim::{gen_survival_panel, OutcomeFamily, ScenarioSpec, SummaryRow};
use dpmreg::stats::{log_sum_exp, normalize_log_weights, weibull_log_survival, WeibullParam};
use dpmreg::survival::fit_cox;
use dpmreg::RandomStream;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_is_bias_squared_plus_variance(est in prop::collection::vec(-5.0f64..5.0, 1..60), truth in -3.0f64..3.0) {
        let r = SummaryRow::from_estimates("m", truth, &est, 0);
        prop_assert!((r.mse - (r.bias().powi(2) + r.sd.powi(2))).abs() < 1e-10);
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(xs in prop::collection::vec(-50.0f64..50.0, 1..20), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        assert_relative_eq!(log_sum_exp(&shifted), log_sum_exp(&xs) + c, epsilon = 1e-9, max_relative = 1e-12);
        let w = normalize_log_weights(&shifted).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weibull_quantile_inverts_survival(shape in 0.2f64..5.0, log_rate in -4.0f64..4.0, u in 0.001f64..0.999) {
        let p = WeibullParam::from_log_rate(shape, log_rate).unwrap();
        let t = p.quantile(u);
        // S(t) = 1 − u
        assert_relative_eq!(weibull_log_survival(t, p).unwrap().exp(), 1.0 - u, max_relative = 1e-9);
    }

    #[test]
    fn cluster_state_stays_consistent(seed in any::<u64>(), n in 1usize..25, spread in 0.1f64..10.0) {
        let cfg = DpmConfig::new(1.3, BaseMeasure::NormalMean { sd: 3.0 }, 2).unwrap();
        let mut st = ClusterState::single_cluster(n, 0.0);
        let mut s = RandomStream::new(seed);
        let mut step = AdaptiveStep::new(1.0, ATOM_TARGET_ACCEPTANCE);
        let ll = |i: usize, a: f64| -((a - spread * (i % 3) as f64).powi(2));
        for _ in 0..10 {
            gibbs_sweep_assignments(&mut st, &cfg, ll, &mut s).unwrap();
            resample_atoms(&mut st, &cfg, |who, a| who.iter().map(|&i| ll(i, a)).sum(), &mut step, &mut s);
            prop_assert!(st.check_invariants().is_ok());
            prop_assert_eq!(st.counts().iter().sum::<usize>(), n);
            prop_assert!(st.n_clusters() >= 1 && st.n_clusters() <= n);
        }
    }

    #[test]
    fn ess_and_rhat_are_affine_invariant(seed in any::<u64>(), a in 0.01f64..100.0, b in -100.0f64..100.0) {
        let mut s = RandomStream::new(seed);
        let mut x = 0.0;
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..400).map(|_| { x = 0.7 * x + s.std_normal(); x }).collect())
            .collect();
        let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| a * v + b).collect()).collect();
        let e1 = effective_sample_size(&chains[0]).unwrap().value;
        let e2 = effective_sample_size(&moved[0]).unwrap().value;
        assert_relative_eq!(e1, e2, max_relative = 1e-6);
        prop_assert!(e1 > 0.0 && e1 <= 400.0);
        let r1 = split_rhat(&chains.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
        let r2 = split_rhat(&moved.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
        assert_relative_eq!(r1, r2, max_relative = 1e-6);
        prop_assert!(r1 >= 0.99);
    }

    #[test]
    fn hermite_rule_is_exact_for_low_degree(n in 5usize..40, mu in -3.0f64..3.0, sd in 0.1f64..3.0) {
        // E[X²] and E[X⁴] of N(μ, sd²)
        let m2 = normal_expectation(n, mu, sd, |x| x * x);
        assert_relative_eq!(m2, mu * mu + sd * sd, max_relative = 1e-10);
        let m4 = normal_expectation(n, mu, sd, |x| x.powi(4));
        let exact = mu.powi(4) + 6.0 * mu * mu * sd * sd + 3.0 * sd.powi(4);
        assert_relative_eq!(m4, exact, max_relative = 1e-10);
        let (_, w) = gauss_hermite(n);
        assert_relative_eq!(w.iter().sum::<f64>(), std::f64::consts::PI.sqrt(), max_relative = 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cox_ignores_covariate_shift_and_time_scale(seed in any::<u64>(), shift in -20.0f64..20.0, scale in 0.01f64..100.0) {
        let spec = ScenarioSpec {
            n_subjects: 40,
            li: 3,
            ..ScenarioSpec::mix_means(OutcomeFamily::Survival { shape: 1.2, censor_quantile: Some(0.9) })
        };
        let (panel, _) = gen_survival_panel(&spec, &mut RandomStream::new(seed)).unwrap();
        let base = fit_cox(&panel).unwrap().coefficients[0];
        let shifted = fit_cox(&panel.shift_covariate(0, shift)).unwrap().coefficients[0];
        let scaled = fit_cox(&panel.rescale_times(scale).unwrap()).unwrap().coefficients[0];
        assert_relative_eq!(base, shifted, epsilon = 1e-7);
        assert_relative_eq!(base, scaled, epsilon = 1e-9);
    }
}
