//! Property tests for the scaling laws and structural invariants.

use notrade::asymptotics::{
    abs_pow_four_thirds, band_halfwidth, band_halfwidth_with_claim, monetary_halfwidth_cash_gamma,
};
use notrade::frictionless::{bs_delta_gamma, ClaimSpec, Underlying};
use notrade::grid::TimeGrid;
use notrade::sde::{pair_coefficients, simulate_correlated_pair, EstimationWindow, GbmSpec};
use notrade::stats::exp_certainty_equivalent;
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn halfwidth_cube_root_spread_scaling(
        p in 0.05f64..20.0,
        eps in 1e-6f64..0.2,
        lambda in 0.1f64..10.0,
        s in 1.0f64..1e4,
        c_phi in 1e-12f64..1.0,
        c_s in 1e-6f64..1e6,
    ) {
        let base = band_halfwidth(p, eps, &[s], &[c_phi], &[c_s]).unwrap()[0];
        let scaled = band_halfwidth(p, lambda.powi(3) * eps, &[s], &[c_phi], &[c_s]).unwrap()[0];
        prop_assert!(rel_close(scaled, lambda * base, 1e-12),
            "halfwidth({}) = {scaled} vs {} * {base}", lambda.powi(3) * eps, lambda);
    }

    #[test]
    fn halfwidth_risk_aversion_scaling(
        p in 0.05f64..20.0,
        eps in 1e-6f64..0.2,
        lambda in 0.2f64..5.0,
        s in 1.0f64..1e4,
        c_phi in 1e-12f64..1.0,
        c_s in 1e-6f64..1e6,
    ) {
        // Holding c_phi fixed, halfwidth(lambda^3 p) = halfwidth(p) / lambda.
        let base = band_halfwidth(p, eps, &[s], &[c_phi], &[c_s]).unwrap()[0];
        let scaled = band_halfwidth(lambda.powi(3) * p, eps, &[s], &[c_phi], &[c_s]).unwrap()[0];
        prop_assert!(rel_close(scaled, base / lambda, 1e-12));
    }

    #[test]
    fn monetary_form_consistent_with_share_form(
        p in 0.05f64..20.0,
        eps in 1e-6f64..0.2,
        s in 1.0f64..1e4,
        cg in -500.0f64..500.0,
        sigma in 0.01f64..1.0,
    ) {
        // Feeding c_phiH = CG^2 c_S / S^4 into the share-form halfwidth and
        // multiplying by S reproduces the cash-gamma monetary form to 1e-10.
        let c_s = sigma * sigma * s * s;
        let c_phi_h = cg * cg * c_s / (s * s * s * s);
        let share = band_halfwidth_with_claim(p, eps, &[s], &[c_phi_h], &[c_s]).unwrap()[0];
        let monetary = monetary_halfwidth_cash_gamma(p, eps, &[s], &[cg]).unwrap()[0];
        prop_assert!(rel_close(share * s, monetary, 1e-10),
            "share*S = {} vs monetary = {monetary}", share * s);
    }

    #[test]
    fn corrections_vanish_at_zero_spread(
        p in 0.05f64..20.0,
        s in 1.0f64..1e4,
        cg in prop::collection::vec(-300.0f64..300.0, 1..8),
    ) {
        let ss = vec![s; cg.len()];
        let hw = monetary_halfwidth_cash_gamma(p, 0.0, &ss, &cg).unwrap();
        prop_assert!(hw.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn certainty_equivalent_jensen(
        wealths in prop::collection::vec(-50.0f64..50.0, 1..40),
        p in 0.01f64..5.0,
    ) {
        let mean = wealths.iter().sum::<f64>() / wealths.len() as f64;
        let (ce, _) = exp_certainty_equivalent(&wealths, p).unwrap();
        prop_assert!(ce <= mean + 1e-9);
    }

    #[test]
    fn four_thirds_power_even_and_monotone(
        x in -1e4f64..1e4,
    ) {
        prop_assert_eq!(abs_pow_four_thirds(x), abs_pow_four_thirds(-x));
        prop_assert!(abs_pow_four_thirds(x) >= 0.0);
        prop_assert!(rel_close(abs_pow_four_thirds(x), x.abs().powf(4.0 / 3.0), 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pair_coefficients_cauchy_schwarz_random_models(
        rho in -1.0f64..1.0,
        sigma_s in 0.05f64..0.6,
        sigma_y in 0.05f64..0.6,
        seed in 0u64..1000,
    ) {
        let g = TimeGrid::uniform(0.0, 0.5, 256).unwrap();
        let spec_s = GbmSpec::new(100.0, 0.02, sigma_s).unwrap();
        let spec_y = GbmSpec::new(50.0, -0.01, sigma_y).unwrap();
        let ps = simulate_correlated_pair(spec_s, spec_y, rho, &g, 1, seed).unwrap();
        let (sx, sy) = pair_coefficients(&ps, "S", "Y", 0, EstimationWindow { steps: 16 }).unwrap();
        let cross = &sx.cross.as_ref().unwrap().1;
        for j in 0..cross.len() {
            prop_assert!(cross[j] * cross[j] <= sx.c[j] * sy.c[j] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn semistatic_objective_midpoint_convex(
        a in -6.0f64..6.0,
        b in -6.0f64..6.0,
        strike in 80.0f64..120.0,
    ) {
        // The 4/3-power residual objective is convex in the static position:
        // midpoint convexity on random evaluation pairs.
        prop_assume!((a - b).abs() > 1e-6);
        let g = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let ps = notrade::sde::simulate_gbm_tagged(
            GbmSpec::new(100.0, 0.0, 0.2).unwrap(),
            &g,
            16,
            7,
            notrade::sde::Measure::Q,
        )
        .unwrap();
        let h = ClaimSpec::call(100.0, 1.0, Underlying::Traded, 1.0).unwrap();
        let hp = ClaimSpec::call(strike, 1.0, Underlying::Traded, 1.0).unwrap();
        let objective = |x: f64| -> f64 {
            let grid = ps.grid();
            let mut total = 0.0;
            for i in 0..ps.n_paths() {
                let s = ps.path("S", i).unwrap();
                for j in 0..grid.n_steps() {
                    let ga = bs_delta_gamma(&h, grid.t(j), s[j], 0.2).unwrap().gamma * s[j] * s[j];
                    let gb = bs_delta_gamma(&hp, grid.t(j), s[j], 0.2).unwrap().gamma * s[j] * s[j];
                    total += abs_pow_four_thirds(ga - x * gb) * 0.04 * grid.dt(j);
                }
            }
            total / ps.n_paths() as f64
        };
        let mid = objective(0.5 * (a + b));
        let avg = 0.5 * (objective(a) + objective(b));
        prop_assert!(mid <= avg * (1.0 + 1e-9) + 1e-12);
    }
}
