//! Experiment orchestration: dispatch a validated configuration to the
//! library, assemble the report and emit plot data.

use std::path::{Path, PathBuf};

use notrade::asymptotics::{
    complete_price_correction, incomplete_martingale_price, incomplete_smalln_corrections,
    indifference_price, marginal_investment_price, marginal_option_expansion,
    semistatic_gamma_hedge, welfare_loss, BandModel, BsClaimCashGamma, CashGammaModel,
    ClaimHedgeBand, ConstCashGamma, DecomposedTargetBand, PricingRegime, PureInvestmentBand,
};
use notrade::frictionless::{
    basis_claim_price, bs_delta_gamma, hedging_error_second_moment, BlackScholesMarket, Underlying,
};
use notrade::policy::{run_band_policy, scaling_study, welfare_experiment, InitialPosition};
use notrade::sde::{simulate_gbm, simulate_gbm_tagged, GbmSpec, Measure};
use notrade::shadow::{
    drift_condition_residual, optimality_condition_checks, shadow_coefficients, shadow_path,
};

use crate::config::{ExperimentConfig, ExperimentKind, MarketConfig};
use crate::report::{CsvFile, Report};

pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub warnings: usize,
}

type RunResult = Result<RunOutput, String>;

fn fail<T>(context: &str, err: impl std::fmt::Display) -> Result<T, String> {
    Err(format!("{context}: {err}"))
}

fn require_black_scholes(cfg: &ExperimentConfig) -> Result<BlackScholesMarket, String> {
    match cfg.market {
        MarketConfig::BlackScholes(m) => Ok(m),
        MarketConfig::BasisRisk(_) => fail(
            cfg.kind.name(),
            "this experiment needs [market] type = black_scholes",
        ),
    }
}

/// Upper bound on materialized path-set sizes (values, not bytes); the
/// pricing experiments hold full path sets in memory.
const MAX_PATHSET_VALUES: usize = 60_000_000;

fn guard_pathset(cfg: &ExperimentConfig) -> Result<(), String> {
    let values = cfg.numerics.n_paths * (cfg.numerics.n_steps + 1);
    if values > MAX_PATHSET_VALUES {
        return fail(
            cfg.kind.name(),
            format!(
                "n_paths * (n_steps + 1) = {values} exceeds the in-memory path-set limit \
                 {MAX_PATHSET_VALUES}; lower n_steps (pricing integrals resolve well at 2500) \
                 or n_paths"
            ),
        );
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    match cfg.kind {
        ExperimentKind::Band => run_band(cfg, out_dir),
        ExperimentKind::Welfare => run_welfare(cfg, out_dir),
        ExperimentKind::Scaling => run_scaling(cfg, out_dir),
        ExperimentKind::Price => run_price(cfg, out_dir),
        ExperimentKind::Hedge => run_hedge(cfg, out_dir),
        ExperimentKind::Semistatic => run_semistatic(cfg, out_dir),
        ExperimentKind::ShadowCheck => run_shadow_check(cfg, out_dir),
    }
}

fn finish(mut report: Report, cfg: &ExperimentConfig, out_dir: &Path, mut files: Vec<PathBuf>) -> RunResult {
    report.extend_echo(&cfg.echo);
    let warnings = 0;
    match report.write(out_dir, &cfg.output_prefix) {
        Ok(mut written) => {
            files.append(&mut written);
            Ok(RunOutput { files, warnings })
        }
        Err(e) => fail("report", e),
    }
}

/// No-trade corridor along the deterministic mean price path, in monetary
/// terms, ready for plotting.
fn run_band(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let market = require_black_scholes(cfg)?;
    let eps = cfg.numerics.eps.expect("validated");
    let p = cfg.preference.p;
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;

    let band: Box<dyn BandModel> = match &cfg.claim {
        Some(claim) => {
            if claim.underlying != Underlying::Traded {
                return fail("band", "claim must be written on the traded asset");
            }
            Box::new(ClaimHedgeBand { market, p, eps, claim: claim.clone() })
        }
        None => Box::new(PureInvestmentBand::new(market, p, eps).map_err(|e| e.to_string())?),
    };

    let mut csv = CsvFile::new(
        out_dir,
        &format!("{}_band.csv", cfg.output_prefix),
        "t,s_ref,target_monetary,lower_monetary,upper_monetary",
    );
    // Subsample to at most ~2000 rows of plot data.
    let stride = (grid.n_steps() / 2000).max(1);
    for j in (0..=grid.n_steps()).step_by(stride) {
        let t = grid.t(j);
        let s_ref = market.s0 * (market.mu * t).exp();
        let (center, halfwidth) = band.eval(t, s_ref);
        let target = center * s_ref;
        let half = halfwidth * s_ref;
        csv.row(&[t, s_ref, target, target - half, target + half]);
    }
    let files = vec![csv.write().map_err(|e| e.to_string())?];

    let mut report = Report::new(format!("no-trade band corridor ({})", cfg.output_prefix));
    let (c0, h0) = band.eval(0.0, market.s0);
    report.field("monetary_target_t0", c0 * market.s0);
    report.field("monetary_halfwidth_t0", h0 * market.s0);
    report.field("share_halfwidth_t0", h0);
    report.field("relative_spread_eps", eps);
    finish(report, cfg, out_dir, files)
}

fn run_welfare(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let market = require_black_scholes(cfg)?;
    let eps = cfg.numerics.eps.expect("validated");
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;
    let rep = welfare_experiment(
        &market,
        &cfg.preference,
        eps,
        &grid,
        cfg.numerics.n_paths,
        cfg.numerics.seed,
    )
    .map_err(|e| format!("welfare: {e}"))?;

    let mut report = Report::new(format!("band-policy welfare ({})", cfg.output_prefix));
    report.estimate("ce_friction", rep.ce_friction.0, rep.ce_friction.1);
    report.estimate("ce_frictionless", rep.ce_frictionless.0, rep.ce_frictionless.1);
    report.field("ce_frictionless_closed_form", rep.ce_frictionless_closed);
    report.estimate("loss", rep.loss.0, rep.loss.1);
    report.estimate("displacement_loss", rep.displacement_loss.0, rep.displacement_loss.1);
    report.estimate("direct_cost_loss", rep.direct_cost_loss.0, rep.direct_cost_loss.1);
    report.field("loss_split_direct_over_displacement", rep.direct_cost_loss.0 / rep.displacement_loss.0);
    report.field("ergodic_ratio", rep.ergodic_ratio);
    report.field("predicted_loss_closed_form", rep.predicted_loss);
    report.field("monetary_halfwidth", rep.monetary_halfwidth);
    report.field("mean_trades_per_path", rep.mean_trades);
    report.field("mean_setup_cost", rep.mean_setup_cost);
    if rep.degenerate_steps > 0 {
        report.warn(format!(
            "{} steps ran with a degenerate (zero-width) band and tracked the center",
            rep.degenerate_steps
        ));
    }
    finish(report, cfg, out_dir, Vec::new())
}

fn run_scaling(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let market = require_black_scholes(cfg)?;
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;
    let study = scaling_study(
        &market,
        &cfg.preference,
        &cfg.numerics.eps_list,
        &grid,
        cfg.numerics.n_paths,
        cfg.numerics.seed,
    )
    .map_err(|e| format!("scaling: {e}"))?;

    let mut csv = CsvFile::new(
        out_dir,
        &format!("{}_scaling.csv", cfg.output_prefix),
        "eps,ln_eps,loss,loss_se,ln_loss,ce_loss,ce_loss_se,predicted_loss",
    );
    for row in &study.rows {
        csv.row(&[
            row.eps,
            row.eps.ln(),
            row.loss.0,
            row.loss.1,
            row.loss.0.ln(),
            row.ce_loss.0,
            row.ce_loss.1,
            row.predicted_loss,
        ]);
    }
    let files = vec![csv.write().map_err(|e| e.to_string())?];

    let mut report = Report::new(format!("welfare-loss spread scaling ({})", cfg.output_prefix));
    report.estimate("loss_slope_vs_eps", study.slope, study.slope_se);
    report.field("n_rows", study.rows.len());
    for row in &study.rows {
        let key = format!("loss_at_eps_{}", row.eps);
        report.estimate(&key, row.loss.0, row.loss.1);
    }
    let mut warn_count = 0;
    for (eps, msg) in &study.excluded {
        report.warn(format!("eps = {eps}: {msg}"));
        warn_count += 1;
    }
    let out = finish(report, cfg, out_dir, files)?;
    Ok(RunOutput { files: out.files, warnings: warn_count })
}

fn run_price(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let market = require_black_scholes(cfg)?;
    guard_pathset(cfg)?;
    let eps = cfg.numerics.eps.expect("validated");
    let p = cfg.preference.p;
    let n = cfg.numerics.n_claims;
    let claim = cfg.claim.clone().expect("validated");
    if claim.underlying != Underlying::Traded {
        return fail("price", "complete-market pricing needs a claim on the traded asset");
    }
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;
    let q_spec = GbmSpec::new(market.s0, 0.0, market.sigma).map_err(|e| e.to_string())?;
    let ps = simulate_gbm_tagged(q_spec, &grid, cfg.numerics.n_paths, cfg.numerics.seed, Measure::Q)
        .map_err(|e| format!("price: {e}"))?;
    let c_s = move |_t: f64, s: f64| market.sigma * market.sigma * s * s;

    let frictionless =
        bs_delta_gamma(&claim, 0.0, market.s0, market.sigma).map_err(|e| e.to_string())?.value
            * claim.quantity;
    let cg_phi = ConstCashGamma(market.pure_investment_cash_gamma(p));
    let cg_h = BsClaimCashGamma { claim: claim.clone(), sigma: market.sigma };

    // Closed-form route and the band/welfare-loss route.
    let (corr, corr_se) = complete_price_correction(p, eps, &cg_phi, &cg_h, &ps, &c_s)
        .map_err(|e| format!("price: {e}"))?;
    let window = cfg.numerics.window;
    let with_claim = DecomposedTargetBand {
        market,
        p,
        eps,
        claim: Some(claim.clone()),
        window_steps: window,
    };
    let without_claim = DecomposedTargetBand { market, p, eps, claim: None, window_steps: window };
    let loss_with = welfare_loss(p, &with_claim, &ps, &c_s, false).map_err(|e| e.to_string())?;
    let loss_without = welfare_loss(p, &without_claim, &ps, &c_s, false).map_err(|e| e.to_string())?;
    let band_route = indifference_price(&loss_with, &loss_without, frictionless, PricingRegime::Complete);

    // Marginal regimes.
    let marginal = marginal_investment_price(p, n, eps, &cg_h, &ps, &c_s, frictionless / claim.quantity)
        .map_err(|e| format!("price: {e}"))?;
    let expansion = marginal_option_expansion(
        p,
        eps,
        n,
        &cg_phi,
        &cg_h,
        &ps,
        &c_s,
        frictionless / claim.quantity,
    );

    let mut report = Report::new(format!("indifference price with small costs ({})", cfg.output_prefix));
    report.field("frictionless_price", frictionless);
    report.estimate("correction_closed_form_route", corr, corr_se);
    report.estimate("correction_band_route", band_route.correction, band_route.correction_se);
    report.field("total_price", frictionless + corr);
    report.field("regime", PricingRegime::Complete);
    report.estimate(
        "marginal_investment_correction_per_claim",
        marginal.correction,
        marginal.correction_se,
    );
    match expansion {
        Ok(exp) => {
            report.field("smalln_first_order_per_claim", exp.first_order);
            report.field("smalln_second_order_coeff_per_claim", exp.second_order);
            let interior = &exp.band_factor[..exp.band_factor.len().saturating_sub(1)];
            let fmin = interior.iter().cloned().fold(f64::INFINITY, f64::min);
            let fmax = interior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            report.field("band_factor_min", fmin);
            report.field("band_factor_max", fmax);
        }
        Err(e) => report.warn(format!("small-claim expansion unavailable: {e}")),
    }
    finish(report, cfg, out_dir, Vec::new())
}

fn run_hedge(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let MarketConfig::BasisRisk(market) = cfg.market else {
        return fail("hedge", "this experiment needs [market] type = basis_risk");
    };
    let claim = cfg.claim.clone().expect("validated");
    if claim.underlying != Underlying::NonTraded {
        return fail("hedge", "basis-risk hedging needs a claim on the non-traded factor");
    }
    let eps = cfg.numerics.eps.expect("validated");
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;
    let n = cfg.numerics.n_claims;
    let p = cfg.preference.p;

    let (err2, err2_se) = hedging_error_second_moment(
        &market,
        &claim,
        &grid,
        cfg.numerics.n_paths,
        cfg.numerics.seed,
    )
    .map_err(|e| format!("hedge: {e}"))?;
    let frictionless = basis_claim_price(&market, &claim).map_err(|e| e.to_string())?;

    let mut report = Report::new(format!("basis-risk hedging ({})", cfg.output_prefix));
    report.field("frictionless_price_per_claim", frictionless);
    report.estimate("hedging_error_second_moment", err2, err2_se);

    if market.mu_s == 0.0 {
        let q = incomplete_martingale_price(
            p,
            n,
            eps,
            &market,
            &claim,
            &grid,
            cfg.numerics.n_paths,
            cfg.numerics.seed,
        )
        .map_err(|e| format!("hedge: {e}"))?;
        report.field("regime", PricingRegime::IncompleteMartingale);
        report.estimate(
            "hedging_error_term_per_claim",
            q.hedging_error_term.0,
            q.hedging_error_term.1,
        );
        report.estimate("cost_term_per_claim", q.cost_term.0, q.cost_term.1);
        report.field("total_price_per_claim", q.quote.total);
    } else {
        let c = incomplete_smalln_corrections(
            p,
            n,
            eps,
            &market,
            &claim,
            &grid,
            cfg.numerics.n_paths,
            cfg.numerics.seed,
        )
        .map_err(|e| format!("hedge: {e}"))?;
        report.field("regime", PricingRegime::IncompleteSmallN);
        let interior = &c.band_factor[..c.band_factor.len().saturating_sub(1)];
        let fmin = interior.iter().cloned().fold(f64::INFINITY, f64::min);
        let fmax = interior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        report.field("band_factor_min", fmin);
        report.field("band_factor_max", fmax);
        report.estimate("strategy_term", c.strategy_term.0, c.strategy_term.1);
        report.estimate("measure_term_covariance_form", c.measure_term.0, c.measure_term.1);
        report.estimate(
            "measure_term_exact_density",
            c.measure_term_exact.0,
            c.measure_term_exact.1,
        );
        report.field("price_impact", c.price_impact);
    }
    finish(report, cfg, out_dir, Vec::new())
}

fn run_semistatic(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let market = require_black_scholes(cfg)?;
    guard_pathset(cfg)?;
    let claim = cfg.claim.clone().expect("validated");
    let claim2 = cfg.claim2.clone().expect("validated");
    for (label, c) in [("claim", &claim), ("claim2", &claim2)] {
        if c.underlying != Underlying::Traded {
            return fail("semistatic", format!("[{label}] must be written on the traded asset"));
        }
    }
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;
    let q_spec = GbmSpec::new(market.s0, 0.0, market.sigma).map_err(|e| e.to_string())?;
    let ps = simulate_gbm_tagged(q_spec, &grid, cfg.numerics.n_paths, cfg.numerics.seed, Measure::Q)
        .map_err(|e| format!("semistatic: {e}"))?;
    let c_s = move |_t: f64, s: f64| market.sigma * market.sigma * s * s;
    let cg_h = BsClaimCashGamma { claim, sigma: market.sigma };
    let cg_hp = BsClaimCashGamma { claim: claim2, sigma: market.sigma };
    let (n_star, objective) =
        semistatic_gamma_hedge(&cg_h, &cg_hp, &ps, &c_s, cfg.numerics.interval)
            .map_err(|e| format!("semistatic: {e}"))?;

    // Objective sweep around the minimizer for plotting.
    let mut csv = CsvFile::new(
        out_dir,
        &format!("{}_objective.csv", cfg.output_prefix),
        "n_prime,objective",
    );
    let sweep_n = 40;
    for i in 0..=sweep_n {
        let x = n_star - 1.0 + 2.0 * i as f64 / sweep_n as f64;
        let v = sweep_objective(&cg_h, &cg_hp, &ps, &c_s, x);
        csv.row(&[x, v]);
    }
    let files = vec![csv.write().map_err(|e| e.to_string())?];

    let mut report = Report::new(format!("semi-static gamma hedge ({})", cfg.output_prefix));
    report.field("n_star", n_star);
    report.field("objective_at_n_star", objective);
    report.field("objective_at_zero", sweep_objective(&cg_h, &cg_hp, &ps, &c_s, 0.0));
    finish(report, cfg, out_dir, files)
}

fn sweep_objective<C>(
    a: &dyn CashGammaModel,
    b: &dyn CashGammaModel,
    ps: &notrade::sde::PathSet,
    c_s: &C,
    x: f64,
) -> f64
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    let grid = ps.grid();
    let mut total = 0.0;
    for i in 0..ps.n_paths() {
        let s = ps.path("S", i).expect("factor S");
        let av = a.cash_gamma_path(grid, s);
        let bv = b.cash_gamma_path(grid, s);
        for j in 0..grid.n_steps() {
            total += notrade::asymptotics::abs_pow_four_thirds(av[j] - x * bv[j])
                * c_s(grid.t(j), s[j])
                / (s[j] * s[j])
                * grid.dt(j);
        }
    }
    total / ps.n_paths() as f64
}

fn run_shadow_check(cfg: &ExperimentConfig, out_dir: &Path) -> RunResult {
    let market = require_black_scholes(cfg)?;
    let eps = cfg.numerics.eps.expect("validated");
    let p = cfg.preference.p;
    let grid = cfg.numerics.grid().map_err(|e| e.to_string())?;

    let drift = drift_condition_residual(
        &market,
        &cfg.preference,
        eps,
        &grid,
        cfg.numerics.n_paths,
        cfg.numerics.seed,
        Measure::Q,
        1_000,
    )
    .map_err(|e| format!("shadow-check: {e}"))?;
    let mut csv_buf = Vec::new();
    drift.dump_csv(&mut csv_buf).map_err(|e| e.to_string())?;
    let csv_path = out_dir.join(format!("{}_drift_buckets.csv", cfg.output_prefix));
    std::fs::create_dir_all(out_dir).map_err(|e| e.to_string())?;
    std::fs::write(&csv_path, csv_buf).map_err(|e| e.to_string())?;
    let files = vec![csv_path];

    let optimality = optimality_condition_checks(
        &market,
        &cfg.preference,
        eps,
        &grid,
        cfg.numerics.n_paths.min(20_000),
        cfg.numerics.seed,
    )
    .map_err(|e| format!("shadow-check: {e}"))?;

    // Containment and pasting on a small materialized sample.
    let sample_paths = cfg.numerics.n_paths.min(64);
    let ps = simulate_gbm(market.gbm_spec(), &grid, sample_paths, cfg.numerics.seed)
        .map_err(|e| e.to_string())?;
    let band = PureInvestmentBand::new(market, p, eps).map_err(|e| e.to_string())?;
    let c_s = move |_t: f64, s: f64| market.sigma * market.sigma * s * s;
    let (res, _) = run_band_policy(
        &ps,
        "S",
        &band,
        eps,
        cfg.preference.x0,
        InitialPosition::UniformInBand,
        &c_s,
    )
    .map_err(|e| e.to_string())?;
    let k = market.pure_investment_monetary(p);
    let mut contained = 0usize;
    let mut total = 0usize;
    let mut boundary_mismatch: f64 = 0.0;
    let dt = grid.dt(0);
    for i in 0..res.per_path.len() {
        let s = ps.path("S", i).map_err(|e| e.to_string())?;
        let cs_series: Vec<f64> = s.iter().map(|&x| market.sigma * market.sigma * x * x).collect();
        let c_phi: Vec<f64> =
            s.iter().map(|&x| k * k * market.sigma * market.sigma / (x * x)).collect();
        let coeffs = shadow_coefficients(p, eps, s, &cs_series, &c_phi).map_err(|e| e.to_string())?;
        let slack: Vec<f64> = c_phi.iter().map(|c| 3.0 * (c * dt).sqrt()).collect();
        let sp = shadow_path(&res.deviations[i], s, &coeffs, eps, &res.bands[i].halfwidth, &slack)
            .map_err(|e| e.to_string())?;
        contained += (sp.containment_fraction * s.len() as f64).round() as usize;
        total += s.len();
        boundary_mismatch = boundary_mismatch.max(sp.boundary_mismatch);
    }

    let mut report = Report::new(format!("shadow price diagnostics ({})", cfg.output_prefix));
    report.field("drift_regression_coefficient", drift.coefficient);
    report.field("risk_aversion_p", p);
    report.field("drift_sup_bucket_residual", drift.sup_residual);
    report.field("drift_dropped_buckets", drift.dropped_buckets);
    report.estimate(
        "dual_density_terminal_mean",
        optimality.z_eps_terminal_mean.0,
        optimality.z_eps_terminal_mean.1,
    );
    report.estimate(
        "frictionless_martingale_check",
        optimality.q_martingale_check.0,
        optimality.q_martingale_check.1,
    );
    report.estimate(
        "terminal_residual_mean",
        optimality.terminal_residual_mean.0,
        optimality.terminal_residual_mean.1,
    );
    report.field("terminal_residual_rms", optimality.terminal_residual_rms);
    report.field("containment_fraction", contained as f64 / total as f64);
    report.field("boundary_mismatch_max", boundary_mismatch);
    finish(report, cfg, out_dir, files)
}
