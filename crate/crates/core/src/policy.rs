//! Band-following trading policy under proportional costs: exact wealth
//! accounting, certainty equivalents, and the welfare experiments that check
//! the leading-order loss, its 2/3-1/3 split between trading costs and
//! displacement, and the ergodic deviation statistic.
//!
//! Policy semantics: per step, after the price update, a position above the
//! upper boundary is sold down exactly to it at the bid `(1 - eps) S`, a
//! position below the lower boundary is bought up to it at the ask
//! `(1 + eps) S`, and nothing happens inside the band. Wealth is marked at
//! mid at the horizon; the self-financing identity
//! `X_T = x0 + sum(position * dS) - sum(eps * S * |trade|)` holds pathwise.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::asymptotics::{BandModel, BandSpec, PureInvestmentBand};
use crate::error::{Error, Result};
use crate::frictionless::{BlackScholesMarket, ExponentialPreference};
use crate::grid::TimeGrid;
use crate::sde::{path_rng, GbmStream, PathSet};
use crate::stats::{exp_ce_difference, exp_certainty_equivalent, mean_se, ols_slope};

/// One executed trade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeEntry {
    pub step: usize,
    /// Signed trade size in shares (buys positive).
    pub trade: f64,
    /// Execution price: `(1 + eps) S` on buys, `(1 - eps) S` on sells.
    pub price: f64,
    /// Cost relative to mid, `eps * S * |trade|`.
    pub cost: f64,
}

/// Complete trade record of one path.
#[derive(Debug, Clone, Default)]
pub struct TradeLedger {
    pub entries: Vec<TradeEntry>,
    pub cumulative_cost: f64,
}

impl TradeLedger {
    fn record(&mut self, step: usize, trade: f64, mid: f64, eps: f64) {
        let price = if trade > 0.0 { (1.0 + eps) * mid } else { (1.0 - eps) * mid };
        let cost = eps * mid * trade.abs();
        self.cumulative_cost += cost;
        self.entries.push(TradeEntry { step, trade, price, cost });
    }

    /// Per-path ledger dump: `path_id,step,t,S,phi_center,halfwidth,position,trade,cost`.
    pub fn dump_csv<W: Write>(
        ledgers: &[TradeLedger],
        bands: &[BandSpec],
        positions: &[Vec<f64>],
        grid: &TimeGrid,
        s_paths: &[Vec<f64>],
        out: &mut W,
    ) -> Result<()> {
        writeln!(out, "path_id,step,t,S,phi_center,halfwidth,position,trade,cost")?;
        for (i, ledger) in ledgers.iter().enumerate() {
            let mut trades = vec![(0.0, 0.0); grid.n_points()];
            for e in &ledger.entries {
                trades[e.step] = (e.trade, e.cost);
            }
            for j in 0..grid.n_points() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    i,
                    j,
                    grid.t(j),
                    s_paths[i][j],
                    bands[i].center[j],
                    bands[i].halfwidth[j],
                    positions[i][j],
                    trades[j].0,
                    trades[j].1
                )?;
            }
        }
        Ok(())
    }
}

/// How the position is initialized at `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPosition {
    /// Start from the given holding and, if it lies outside the band, trade
    /// to the nearest boundary (minimal initial trade).
    Shares(f64),
    /// Jump from the given holding to the band center at the ask/bid.
    TradeToCenter(f64),
    /// Draw the initial deviation uniformly inside the band, with no trade.
    /// This is the stationary initialization of the deviation process.
    UniformInBand,
}

/// Salt applied to the seed for policy-level randomness, so the uniform
/// initial draw never desynchronizes the price substreams.
const INIT_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-path outcome of the band policy.
#[derive(Debug, Clone)]
pub struct PolicyPathStats {
    /// Terminal wealth with costs, marked at mid.
    pub wealth: f64,
    /// Terminal wealth of the same position path traded at mid (no costs).
    pub wealth_mid: f64,
    /// Terminal wealth of holding the band center, traded at mid.
    pub wealth_center: f64,
    /// Running transaction costs, excluding the initial trade.
    pub cost: f64,
    /// Cost of the initial trade (reported separately).
    pub setup_cost: f64,
    /// `int deviation^2 d<S>` (left point).
    pub displacement_qv: f64,
    /// `int halfwidth^2 d<S>` (left point).
    pub band_qv: f64,
    /// Time average of `deviation^2 / halfwidth^2`.
    pub ratio_time_avg: f64,
    pub n_trades: usize,
    /// Steps where the halfwidth vanished and the policy tracked the center.
    pub degenerate_steps: usize,
    /// Terminal price.
    pub s_terminal: f64,
}

/// Full result of running the band policy on a path set.
#[derive(Debug, Clone)]
pub struct PolicyRunResult {
    pub per_path: Vec<PolicyPathStats>,
    /// Position path per path (post-trade at each grid point).
    pub positions: Vec<Vec<f64>>,
    /// Deviation from the band center per path (post-trade).
    pub deviations: Vec<Vec<f64>>,
    pub bands: Vec<BandSpec>,
}

struct StepKernel<'a> {
    eps: f64,
    ledger: Option<&'a mut TradeLedger>,
}

struct KernelState {
    pos: f64,
    gains: f64,
    center_gains: f64,
    cost: f64,
    setup_cost: f64,
    displacement_qv: f64,
    band_qv: f64,
    ratio_sum: f64,
    ratio_count: usize,
    n_trades: usize,
    degenerate_steps: usize,
}

impl KernelState {
    fn new() -> Self {
        KernelState {
            pos: 0.0,
            gains: 0.0,
            center_gains: 0.0,
            cost: 0.0,
            setup_cost: 0.0,
            displacement_qv: 0.0,
            band_qv: 0.0,
            ratio_sum: 0.0,
            ratio_count: 0,
            n_trades: 0,
            degenerate_steps: 0,
        }
    }

    fn observe_point(&mut self, center: f64, halfwidth: f64) {
        if halfwidth > 0.0 {
            let d = self.pos - center;
            self.ratio_sum += d * d / (halfwidth * halfwidth);
        }
        self.ratio_count += 1;
    }
}

impl<'a> StepKernel<'a> {
    /// Trade toward the band `[center - h, center + h]` at mid price `s`.
    fn rebalance(&mut self, state: &mut KernelState, step: usize, s: f64, center: f64, h: f64, setup: bool) {
        let (lo, hi) = (center - h, center + h);
        let target = if h == 0.0 {
            if !setup {
                state.degenerate_steps += 1;
            }
            center
        } else if state.pos > hi {
            hi
        } else if state.pos < lo {
            lo
        } else {
            return;
        };
        let trade = target - state.pos;
        if trade == 0.0 {
            return;
        }
        let cost = self.eps * s * trade.abs();
        if setup {
            state.setup_cost += cost;
        } else {
            state.cost += cost;
        }
        state.n_trades += 1;
        state.pos = target;
        if let Some(ledger) = self.ledger.as_deref_mut() {
            ledger.record(step, trade, s, self.eps);
        }
    }
}

/// Execute the policy along one explicit price path.
#[allow(clippy::too_many_arguments)]
fn run_policy_path(
    grid: &TimeGrid,
    prices: &[f64],
    band: &BandSpec,
    eps: f64,
    x0: f64,
    init: InitialPosition,
    init_draw: Option<f64>,
    c_s_of: &dyn Fn(f64, f64) -> f64,
    mut ledger: Option<&mut TradeLedger>,
    mut positions_out: Option<&mut Vec<f64>>,
) -> PolicyPathStats {
    let n_steps = grid.n_steps();
    let mut state = KernelState::new();
    let mut kernel = StepKernel { eps, ledger: ledger.as_deref_mut() };

    // Initial position at t0.
    let (c0, h0) = (band.center[0], band.halfwidth[0]);
    match init {
        InitialPosition::Shares(q0) => {
            state.pos = q0;
            kernel.rebalance(&mut state, 0, prices[0], c0, h0, true);
        }
        InitialPosition::TradeToCenter(q0) => {
            state.pos = q0;
            let trade = c0 - q0;
            if trade != 0.0 {
                state.setup_cost += eps * prices[0] * trade.abs();
                state.n_trades += 1;
                if let Some(l) = kernel.ledger.as_deref_mut() {
                    l.record(0, trade, prices[0], eps);
                }
            }
            state.pos = c0;
        }
        InitialPosition::UniformInBand => {
            let u = init_draw.unwrap_or(0.0);
            state.pos = c0 + u * h0;
        }
    }
    state.observe_point(c0, h0);
    if let Some(out) = positions_out.as_deref_mut() {
        out.push(state.pos);
    }

    for j in 0..n_steps {
        let dt = grid.dt(j);
        let s_prev = prices[j];
        let dev = state.pos - band.center[j];
        let cs = c_s_of(grid.t(j), s_prev);
        state.displacement_qv += dev * dev * cs * dt;
        state.band_qv += band.halfwidth[j] * band.halfwidth[j] * cs * dt;
        let s = prices[j + 1];
        let ds = s - s_prev;
        state.gains += state.pos * ds;
        state.center_gains += band.center[j] * ds;
        kernel.rebalance(&mut state, j + 1, s, band.center[j + 1], band.halfwidth[j + 1], false);
        if j + 1 < n_steps + 1 {
            state.observe_point(band.center[j + 1], band.halfwidth[j + 1]);
        }
        if let Some(out) = positions_out.as_deref_mut() {
            out.push(state.pos);
        }
    }

    PolicyPathStats {
        wealth: x0 + state.gains - state.cost - state.setup_cost,
        wealth_mid: x0 + state.gains,
        wealth_center: x0 + state.center_gains,
        cost: state.cost,
        setup_cost: state.setup_cost,
        displacement_qv: state.displacement_qv,
        band_qv: state.band_qv,
        ratio_time_avg: state.ratio_sum / state.ratio_count as f64,
        n_trades: state.n_trades,
        degenerate_steps: state.degenerate_steps,
        s_terminal: *prices.last().unwrap(),
    }
}

/// Run the band policy on every valid path of a path set.
///
/// `c_s_of(t, s)` supplies the local price variance entering the pathwise
/// loss integrals. Trade ledgers and position paths are recorded.
pub fn run_band_policy<C>(
    pathset: &PathSet,
    factor: &str,
    band: &dyn BandModel,
    eps: f64,
    x0: f64,
    init: InitialPosition,
    c_s_of: &C,
) -> Result<(PolicyRunResult, Vec<TradeLedger>)>
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::parameter(format!("spread must be nonnegative, got {eps}")));
    }
    let grid = pathset.grid();
    let paths: Vec<usize> = (0..pathset.n_paths()).filter(|&i| pathset.is_valid(i)).collect();
    if paths.is_empty() {
        return Err(Error::EmptySample("no valid paths".into()));
    }
    let outs: Vec<(PolicyPathStats, Vec<f64>, Vec<f64>, BandSpec, TradeLedger)> = paths
        .par_iter()
        .map(|&i| {
            let prices = pathset.path(factor, i).expect("factor");
            if prices.iter().any(|x| !x.is_finite()) {
                panic!("non-finite price on valid path");
            }
            let band_spec = band.band_for_path(grid, prices).expect("band model");
            let mut ledger = TradeLedger::default();
            let mut positions = Vec::with_capacity(grid.n_points());
            let draw = match init {
                InitialPosition::UniformInBand => {
                    let mut rng = path_rng(pathset.seed() ^ INIT_SEED_SALT, i as u64);
                    Some(rng.random_range(-1.0..1.0))
                }
                _ => None,
            };
            let stats = run_policy_path(
                grid,
                prices,
                &band_spec,
                eps,
                x0,
                init,
                draw,
                c_s_of,
                Some(&mut ledger),
                Some(&mut positions),
            );
            let deviations: Vec<f64> =
                positions.iter().zip(&band_spec.center).map(|(p, c)| p - c).collect();
            (stats, positions, deviations, band_spec, ledger)
        })
        .collect();
    let mut result = PolicyRunResult {
        per_path: Vec::with_capacity(outs.len()),
        positions: Vec::with_capacity(outs.len()),
        deviations: Vec::with_capacity(outs.len()),
        bands: Vec::with_capacity(outs.len()),
    };
    let mut ledgers = Vec::with_capacity(outs.len());
    for (stats, positions, deviations, band_spec, ledger) in outs {
        result.per_path.push(stats);
        result.positions.push(positions);
        result.deviations.push(deviations);
        result.bands.push(band_spec);
        ledgers.push(ledger);
    }
    Ok((result, ledgers))
}

/// Certainty equivalent `-(1/p) ln E[exp(-p X)]` of sampled terminal wealths,
/// with a delta-method standard error.
pub fn certainty_equivalent(wealths: &[f64], p: f64) -> Result<(f64, f64)> {
    exp_certainty_equivalent(wealths, p)
}

/// Aggregated welfare statistics of the band policy in a Black-Scholes
/// market.
#[derive(Debug, Clone)]
pub struct WelfareReport {
    /// Monte-Carlo certainty equivalent with costs.
    pub ce_friction: (f64, f64),
    /// Monte-Carlo certainty equivalent of the frictionless optimizer on the
    /// same paths.
    pub ce_frictionless: (f64, f64),
    /// Closed-form frictionless certainty equivalent `x0 + mu^2 T/(2 p sigma^2)`.
    pub ce_frictionless_closed: f64,
    /// `ce_frictionless - ce_friction` on common paths.
    pub loss: (f64, f64),
    /// Displacement part, `(p/2) E_Q[int deviation^2 d<S>]`.
    pub displacement_loss: (f64, f64),
    /// Direct trading-cost part, `E_Q[costs]`.
    pub direct_cost_loss: (f64, f64),
    /// Time average of `deviation^2 / halfwidth^2` across paths and steps.
    pub ergodic_ratio: f64,
    /// Closed-form prediction `(p/2)(3 eps/(2p))^(2/3) (mu/(p sigma^2))^(4/3) sigma^2 T`.
    pub predicted_loss: f64,
    /// Constant monetary halfwidth of the band.
    pub monetary_halfwidth: f64,
    pub mean_setup_cost: f64,
    pub mean_trades: f64,
    pub n_paths: usize,
    pub degenerate_steps: usize,
}

/// Options for [`welfare_experiment_with`].
#[derive(Debug, Clone, Copy)]
pub struct WelfareOptions {
    /// Initial deviation drawn uniformly in the band (stationary start,
    /// default) or a jump to the band center.
    pub init: WelfareInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WelfareInit {
    StationaryUniform,
    BandCenter,
}

impl Default for WelfareOptions {
    fn default() -> Self {
        WelfareOptions { init: WelfareInit::StationaryUniform }
    }
}

struct WelfarePathOut {
    x_eps: f64,
    x_frictionless: f64,
    z_cost: f64,
    z_displacement: f64,
    ratio_avg: f64,
    setup_cost: f64,
    n_trades: usize,
    degenerate: usize,
}

/// Streaming per-path welfare kernel: price generation, policy execution and
/// accumulator updates in one pass (no materialized path set).
fn welfare_path(
    market: &BlackScholesMarket,
    pref: &ExponentialPreference,
    band: &PureInvestmentBand,
    eps: f64,
    grid: &TimeGrid,
    seed: u64,
    path: u64,
    init: WelfareInit,
) -> WelfarePathOut {
    let n_steps = grid.n_steps();
    let horizon = grid.horizon();
    let k = market.pure_investment_monetary(pref.p);
    let sigma = market.sigma;
    let mut stream = GbmStream::new(market.gbm_spec(), grid, seed, path);
    let mut state = KernelState::new();
    let mut kernel = StepKernel { eps, ledger: None };

    let (c0, h0) = band.eval(grid.t0(), market.s0);
    match init {
        WelfareInit::StationaryUniform => {
            let mut rng = path_rng(seed ^ INIT_SEED_SALT, path);
            let u: f64 = rng.random_range(-1.0..1.0);
            state.pos = c0 + u * h0;
        }
        WelfareInit::BandCenter => {
            state.pos = c0;
        }
    }
    state.observe_point(c0, h0);

    let mut s_prev = market.s0;
    let mut frictionless_gains = 0.0;
    for j in 0..n_steps {
        let dt = grid.dt(j);
        let t = grid.t(j);
        let (center, halfwidth) = band.eval(t, s_prev);
        let dev = state.pos - center;
        let cs = sigma * sigma * s_prev * s_prev;
        state.displacement_qv += dev * dev * cs * dt;
        state.band_qv += halfwidth * halfwidth * cs * dt;
        let s = stream.step();
        let ds = s - s_prev;
        state.gains += state.pos * ds;
        frictionless_gains += (k / s_prev) * ds;
        let (c_new, h_new) = band.eval(grid.t(j + 1), s);
        kernel.rebalance(&mut state, j + 1, s, c_new, h_new, false);
        state.observe_point(c_new, h_new);
        s_prev = s;
    }

    // Density of the entropy martingale measure, from the terminal price.
    let lam = market.mu / sigma;
    let w_t = ((s_prev / market.s0).ln() - (market.mu - 0.5 * sigma * sigma) * horizon) / sigma;
    let z = (-lam * w_t - 0.5 * lam * lam * horizon).exp();

    WelfarePathOut {
        x_eps: pref.x0 + state.gains - state.cost - state.setup_cost,
        x_frictionless: pref.x0 + frictionless_gains,
        z_cost: z * state.cost,
        z_displacement: z * state.displacement_qv,
        ratio_avg: state.ratio_sum / state.ratio_count as f64,
        setup_cost: state.setup_cost,
        n_trades: state.n_trades,
        degenerate: state.degenerate_steps,
    }
}

/// Closed-form leading-order welfare loss in the Black-Scholes model.
pub fn bs_predicted_loss(market: &BlackScholesMarket, p: f64, eps: f64, horizon: f64) -> f64 {
    let k = market.pure_investment_monetary(p);
    0.5 * p
        * (1.5 * eps / p).powf(2.0 / 3.0)
        * (k * k).powf(2.0 / 3.0)
        * market.sigma
        * market.sigma
        * horizon
}

/// Run the band policy in a Black-Scholes market and report the welfare
/// statistics.
pub fn welfare_experiment(
    market: &BlackScholesMarket,
    pref: &ExponentialPreference,
    eps: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<WelfareReport> {
    welfare_experiment_with(market, pref, eps, grid, n_paths, seed, WelfareOptions::default())
}

pub fn welfare_experiment_with(
    market: &BlackScholesMarket,
    pref: &ExponentialPreference,
    eps: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    options: WelfareOptions,
) -> Result<WelfareReport> {
    if n_paths == 0 {
        return Err(Error::parameter("n_paths must be at least 1"));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::parameter(format!("spread must be nonnegative, got {eps}")));
    }
    let band = PureInvestmentBand::new(*market, pref.p, eps)?;
    let outs: Vec<WelfarePathOut> = (0..n_paths)
        .into_par_iter()
        .map(|i| welfare_path(market, pref, &band, eps, grid, seed, i as u64, options.init))
        .collect();

    let x_eps: Vec<f64> = outs.iter().map(|o| o.x_eps).collect();
    let x_fl: Vec<f64> = outs.iter().map(|o| o.x_frictionless).collect();
    let ce_friction = exp_certainty_equivalent(&x_eps, pref.p)?;
    let ce_frictionless = exp_certainty_equivalent(&x_fl, pref.p)?;
    let loss = exp_ce_difference(&x_fl, &x_eps, pref.p)?;

    let zc: Vec<f64> = outs.iter().map(|o| o.z_cost).collect();
    let zd: Vec<f64> = outs.iter().map(|o| 0.5 * pref.p * o.z_displacement).collect();
    let direct_cost_loss = mean_se(&zc);
    let displacement_loss = mean_se(&zd);
    let ergodic_ratio = outs.iter().map(|o| o.ratio_avg).sum::<f64>() / n_paths as f64;

    Ok(WelfareReport {
        ce_friction,
        ce_frictionless,
        ce_frictionless_closed: market.frictionless_ce(pref, grid.horizon()),
        loss,
        displacement_loss,
        direct_cost_loss,
        ergodic_ratio,
        predicted_loss: bs_predicted_loss(market, pref.p, eps, grid.horizon()),
        monetary_halfwidth: band.monetary_halfwidth(),
        mean_setup_cost: outs.iter().map(|o| o.setup_cost).sum::<f64>() / n_paths as f64,
        mean_trades: outs.iter().map(|o| o.n_trades as f64).sum::<f64>() / n_paths as f64,
        n_paths,
        degenerate_steps: outs.iter().map(|o| o.degenerate).sum(),
    })
}

/// One row of a spread-scaling study.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub eps: f64,
    /// Simulated loss (displacement + direct cost, measure-tilted estimators).
    pub loss: (f64, f64),
    /// Loss from the certainty-equivalent difference.
    pub ce_loss: (f64, f64),
    /// Closed-form prediction.
    pub predicted_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// OLS slope of ln(loss) against ln(eps).
    pub slope: f64,
    pub slope_se: f64,
    /// Spreads excluded from the fit (nonpositive loss estimate), with a
    /// warning message each.
    pub excluded: Vec<(f64, String)>,
}

/// Welfare loss against the spread on a ladder of eps values with common
/// random numbers (identical seed, hence identical price paths, per eps).
pub fn scaling_study(
    market: &BlackScholesMarket,
    pref: &ExponentialPreference,
    eps_list: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<ScalingStudy> {
    if eps_list.len() < 3 {
        return Err(Error::parameter("scaling study needs at least 3 eps values"));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &eps in eps_list {
        if eps == 0.0 {
            excluded.push((eps, "zero spread excluded (loss is identically 0)".into()));
            continue;
        }
        let report = welfare_experiment(market, pref, eps, grid, n_paths, seed)?;
        let loss_val = report.displacement_loss.0 + report.direct_cost_loss.0;
        let loss_se = (report.displacement_loss.1.powi(2) + report.direct_cost_loss.1.powi(2)).sqrt();
        if loss_val <= 0.0 {
            excluded.push((eps, format!("nonpositive loss estimate {loss_val:.3e} excluded")));
            continue;
        }
        rows.push(ScalingRow {
            eps,
            loss: (loss_val, loss_se),
            ce_loss: report.loss,
            predicted_loss: report.predicted_loss,
        });
    }
    if rows.len() < 2 {
        return Err(Error::EmptySample("fewer than two usable scaling points".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.loss.0.ln()).collect();
    let (slope, slope_se) = ols_slope(&xs, &ys)?;
    Ok(ScalingStudy { rows, slope, slope_se, excluded })
}
