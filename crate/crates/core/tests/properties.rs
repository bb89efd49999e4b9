use proptest::prelude::*;

use privbayes::ops::ops_scale;
use privbayes::privacy::{
    amplify_subsample, compose_advanced, gaussian_sigma, sample_covariance, sgld_noise_variance, PrivacyBudget,
    PrivacyLedger,
};

proptest! {
    #[test]
    fn small_eps_composition_bound(c_frac in 1e-6f64..1.0, k in 10usize..10_000, log_dp in -12.0f64..-1.0) {
        let dp = 10f64.powf(log_dp);
        let c = c_frac * (1.0 / dp).ln().sqrt();
        let eps = c / (2.0 * k as f64 * (1.0 / dp).ln()).sqrt();
        let out = compose_advanced(eps, 0.0, k, dp).unwrap();
        prop_assert!(out.epsilon() <= 2.0 * c * (1.0 + 1e-12));
    }

    #[test]
    fn gaussian_sigma_monotone(s in 0.01f64..10.0, e1 in 0.01f64..0.99, e2 in 0.01f64..0.99, d1 in 1e-9f64..0.5, d2 in 1e-9f64..0.5) {
        let (lo_e, hi_e) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (lo_d, hi_d) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(gaussian_sigma(s, hi_e, lo_d).unwrap() <= gaussian_sigma(s, lo_e, lo_d).unwrap());
        prop_assert!(gaussian_sigma(s, lo_e, hi_d).unwrap() <= gaussian_sigma(s, lo_e, lo_d).unwrap());
        prop_assert!(gaussian_sigma(2.0 * s, lo_e, lo_d).unwrap() >= gaussian_sigma(s, lo_e, lo_d).unwrap());
    }

    #[test]
    fn ledger_total_ignores_order(events in prop::collection::vec((0.0f64..5.0, 0.0f64..0.01), 0..20), seed in any::<u64>()) {
        let mut fwd = PrivacyLedger::new();
        for (i, (e, d)) in events.iter().enumerate() {
            fwd.record(format!("e{i}"), PrivacyBudget::new(*e, *d).unwrap());
        }
        let mut idx: Vec<usize> = (0..events.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut perm = PrivacyLedger::new();
        for &i in &idx {
            perm.record(format!("e{i}"), PrivacyBudget::new(events[i].0, events[i].1).unwrap());
        }
        prop_assert!((fwd.total().epsilon() - perm.total().epsilon()).abs() <= 1e-9);
        prop_assert!((fwd.total().delta() - perm.total().delta()).abs() <= 1e-12);
        prop_assert_eq!(fwd.len(), events.len());
    }

    #[test]
    fn covariance_is_psd(pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..30)) {
        let c = sample_covariance(&pts).unwrap();
        prop_assert!((c.clone() - c.transpose()).norm() <= 1e-12);
        let min = c.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-12);
    }

    #[test]
    fn ops_scale_in_unit_interval(b in 1e-3f64..100.0, eps in 0.0f64..1000.0) {
        let r = ops_scale(b, eps);
        prop_assert!((0.0..=1.0).contains(&r));
        if eps >= 4.0 * b {
            prop_assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn amplification_shrinks(e in 0.0f64..0.999, d in 0.0f64..0.5, gamma in 1e-4f64..0.5) {
        let a = amplify_subsample(PrivacyBudget::new(e, d).unwrap(), gamma).unwrap();
        prop_assert!(a.epsilon() <= e + 1e-15);
        prop_assert!(a.delta() <= d + 1e-15);
    }

    #[test]
    fn sgld_noise_at_least_step(eta in 1e-10f64..1.0, eps in 0.1f64..10.0) {
        let s = sgld_noise_variance(1000, 5.0, 10, 1.0, eps, 1e-5, eta).unwrap();
        prop_assert!(s >= eta);
    }
}
