//! Leading-order quantities for small proportional costs: no-trade band
//! halfwidths, welfare losses, utility-indifference prices, small-trade-size
//! expansions, the semi-static gamma-hedge objective, and the incomplete
//! market (basis-risk) price corrections.
//!
//! Conventions: `eps` is the half relative bid-ask spread (trades execute at
//! `(1 ± eps) S`), `p` the absolute risk aversion, `c_S` the local variance
//! of the price, and `c_phi` the local variance of the frictionless target.
//! The band halfwidth in shares is
//! `((3 / (2 p)) (c_phi / c_S) eps S)^(1/3)`, equivalently in monetary terms
//! `(3 / (2 p))^(1/3) |cash gamma|^(2/3) (eps S)^(1/3)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frictionless::{bs_delta_gamma, BasisRiskMarket, BlackScholesMarket, ClaimSpec};
use crate::frictionless::{basis_claim_price, basis_claim_value_hedge, decompose_strategy};
use crate::grid::TimeGrid;
use crate::sde::{Measure, PairStream, PathSet};
use crate::stats::{golden_section, mean_se};

/// Per-path no-trade band: target strategy and halfwidth in shares.
#[derive(Debug, Clone)]
pub struct BandSpec {
    pub center: Vec<f64>,
    pub halfwidth: Vec<f64>,
}

impl BandSpec {
    pub fn new(center: Vec<f64>, halfwidth: Vec<f64>) -> Result<Self> {
        if center.len() != halfwidth.len() {
            return Err(Error::GridMismatch("band center/halfwidth lengths differ".into()));
        }
        if halfwidth.iter().any(|&h| h < 0.0 || !h.is_finite()) {
            return Err(Error::parameter("band halfwidth must be finite and nonnegative"));
        }
        Ok(BandSpec { center, halfwidth })
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }
}

/// Pointwise band model: target and halfwidth as functions of (t, S).
pub trait BandModel: Sync {
    fn eval(&self, t: f64, s: f64) -> (f64, f64);

    fn band_for_path(&self, grid: &TimeGrid, s: &[f64]) -> Result<BandSpec> {
        let mut center = Vec::with_capacity(s.len());
        let mut halfwidth = Vec::with_capacity(s.len());
        for (j, &sj) in s.iter().enumerate() {
            let (c, h) = self.eval(grid.t(j), sj);
            center.push(c);
            halfwidth.push(h);
        }
        BandSpec::new(center, halfwidth)
    }
}

/// Path-level halfwidth model; every pointwise [`BandModel`] provides one,
/// and models that need the whole path (windowed gamma estimation) implement
/// it directly.
pub trait HalfwidthModel: Sync {
    fn halfwidth_for_path(&self, grid: &TimeGrid, s: &[f64]) -> Result<Vec<f64>>;
}

impl<B: BandModel> HalfwidthModel for B {
    fn halfwidth_for_path(&self, grid: &TimeGrid, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.band_for_path(grid, s)?.halfwidth)
    }
}

/// No-trade band halfwidth in shares, pointwise.
pub fn band_halfwidth_at(p: f64, eps: f64, s: f64, c_phi: f64, c_s: f64) -> f64 {
    (1.5 / p * (c_phi / c_s) * eps * s).cbrt()
}

/// No-trade band halfwidth series in shares.
///
/// The band is symmetric around the frictionless target; the halfwidth
/// vanishes exactly where `c_phi = 0` or `eps = 0`.
pub fn band_halfwidth(p: f64, eps: f64, s: &[f64], c_phi: &[f64], c_s: &[f64]) -> Result<Vec<f64>> {
    if !(p > 0.0) {
        return Err(Error::parameter(format!("risk aversion must be positive, got {p}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::parameter(format!("spread must be nonnegative, got {eps}")));
    }
    if s.len() != c_phi.len() || s.len() != c_s.len() {
        return Err(Error::GridMismatch("halfwidth input series lengths differ".into()));
    }
    if c_s.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Degenerate("local price variance must be positive".into()));
    }
    if c_phi.iter().any(|&c| c < 0.0) {
        return Err(Error::parameter("local target variance must be nonnegative"));
    }
    Ok((0..s.len()).map(|j| band_halfwidth_at(p, eps, s[j], c_phi[j], c_s[j])).collect())
}

/// Halfwidth around the target with a sold claim: same formula driven by the
/// local variance of the combined optimizer.
pub fn band_halfwidth_with_claim(
    p: f64,
    eps: f64,
    s: &[f64],
    c_phi_h: &[f64],
    c_s: &[f64],
) -> Result<Vec<f64>> {
    band_halfwidth(p, eps, s, c_phi_h, c_s)
}

/// Monetary halfwidth from the total cash gamma of the position:
/// `(3/(2p))^(1/3) |cash gamma|^(2/3) eps^(1/3)`.
///
/// This is the share-form halfwidth times the price: the local variance
/// ratio equals `(cash gamma)^2 / S^4`, so the explicit price factors cancel.
pub fn monetary_halfwidth_cash_gamma(p: f64, eps: f64, s: &[f64], cash_gamma: &[f64]) -> Result<Vec<f64>> {
    if !(p > 0.0) {
        return Err(Error::parameter(format!("risk aversion must be positive, got {p}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::parameter(format!("spread must be nonnegative, got {eps}")));
    }
    if s.len() != cash_gamma.len() {
        return Err(Error::GridMismatch("monetary halfwidth input lengths differ".into()));
    }
    let coeff = (1.5 * eps / p).cbrt();
    Ok(cash_gamma.iter().map(|&cg| coeff * (cg * cg).cbrt()).collect())
}

/// Band of the pure investment position in the Black-Scholes model. The
/// target is `mu/(p sigma^2 S)` and the halfwidth has the closed form
/// `(3 eps/(2p))^(1/3) (mu/(p sigma^2))^(2/3) / S` shares.
#[derive(Debug, Clone, Copy)]
pub struct PureInvestmentBand {
    pub market: BlackScholesMarket,
    pub p: f64,
    pub eps: f64,
    monetary_position: f64,
    monetary_halfwidth: f64,
}

impl PureInvestmentBand {
    pub fn new(market: BlackScholesMarket, p: f64, eps: f64) -> Result<Self> {
        if !(p > 0.0) || !(eps >= 0.0) {
            return Err(Error::parameter("band model requires p > 0 and eps >= 0"));
        }
        let k = market.pure_investment_monetary(p);
        Ok(PureInvestmentBand {
            market,
            p,
            eps,
            monetary_position: k,
            monetary_halfwidth: (1.5 * eps / p).cbrt() * (k * k).cbrt(),
        })
    }

    /// Constant monetary halfwidth `(3 eps/(2p))^(1/3) k^(2/3)`.
    pub fn monetary_halfwidth(&self) -> f64 {
        self.monetary_halfwidth
    }
}

impl BandModel for PureInvestmentBand {
    fn eval(&self, _t: f64, s: f64) -> (f64, f64) {
        (self.monetary_position / s, self.monetary_halfwidth / s)
    }
}

/// Band around the combined target `phi + Delta^H` in the Black-Scholes
/// model, with the halfwidth driven by the total cash gamma.
#[derive(Debug, Clone)]
pub struct ClaimHedgeBand {
    pub market: BlackScholesMarket,
    pub p: f64,
    pub eps: f64,
    pub claim: ClaimSpec,
}

impl BandModel for ClaimHedgeBand {
    fn eval(&self, t: f64, s: f64) -> (f64, f64) {
        let k = self.market.pure_investment_monetary(self.p);
        let greeks = bs_delta_gamma(&self.claim, t, s, self.market.sigma)
            .expect("positive price along simulated paths");
        let center = k / s + self.claim.quantity * greeks.delta;
        let cash_gamma = -k + self.claim.quantity * greeks.gamma * s * s;
        let h_mon = (1.5 * self.eps / self.p).cbrt() * (cash_gamma * cash_gamma).cbrt();
        (center, h_mon / s)
    }
}

/// Cash-gamma path model for the pricing pipelines.
pub trait CashGammaModel: Sync {
    fn cash_gamma_path(&self, grid: &TimeGrid, s: &[f64]) -> Vec<f64>;
}

/// No sensitivity (marginal pure investment).
pub struct ZeroCashGamma;

impl CashGammaModel for ZeroCashGamma {
    fn cash_gamma_path(&self, _grid: &TimeGrid, s: &[f64]) -> Vec<f64> {
        vec![0.0; s.len()]
    }
}

/// Constant cash gamma; the Black-Scholes pure investment has
/// `Gamma^phi S^2 = -mu/(p sigma^2)`.
pub struct ConstCashGamma(pub f64);

impl CashGammaModel for ConstCashGamma {
    fn cash_gamma_path(&self, _grid: &TimeGrid, s: &[f64]) -> Vec<f64> {
        vec![self.0; s.len()]
    }
}

/// Analytic claim cash gamma `quantity * Gamma(t, S) S^2`.
pub struct BsClaimCashGamma {
    pub claim: ClaimSpec,
    pub sigma: f64,
}

impl CashGammaModel for BsClaimCashGamma {
    fn cash_gamma_path(&self, grid: &TimeGrid, s: &[f64]) -> Vec<f64> {
        (0..s.len())
            .map(|j| {
                let g = bs_delta_gamma(&self.claim, grid.t(j), s[j], self.sigma)
                    .expect("positive price along simulated paths");
                self.claim.quantity * g.gamma * s[j] * s[j]
            })
            .collect()
    }
}

/// Numeric route: build the delta-hedge path and estimate its signed gamma by
/// windowed covariation against the price path, independent of the analytic
/// gamma formula.
pub struct WindowedDeltaCashGamma {
    pub claim: ClaimSpec,
    pub sigma: f64,
    pub window_steps: usize,
}

impl CashGammaModel for WindowedDeltaCashGamma {
    fn cash_gamma_path(&self, grid: &TimeGrid, s: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = (0..s.len())
            .map(|j| {
                self.claim.quantity
                    * bs_delta_gamma(&self.claim, grid.t(j), s[j], self.sigma)
                        .expect("positive price along simulated paths")
                        .delta
            })
            .collect();
        decompose_strategy(&delta, s, grid, self.window_steps)
            .expect("matched series lengths")
            .cash_gamma
    }
}

/// Numeric-route band: decompose the combined target `phi + Delta^H` by
/// windowed covariation and feed the monetary cash-gamma halfwidth.
pub struct DecomposedTargetBand {
    pub market: BlackScholesMarket,
    pub p: f64,
    pub eps: f64,
    pub claim: Option<ClaimSpec>,
    pub window_steps: usize,
}

impl HalfwidthModel for DecomposedTargetBand {
    fn halfwidth_for_path(&self, grid: &TimeGrid, s: &[f64]) -> Result<Vec<f64>> {
        let k = self.market.pure_investment_monetary(self.p);
        let mut target: Vec<f64> = s.iter().map(|&x| k / x).collect();
        if let Some(claim) = &self.claim {
            for j in 0..s.len() {
                target[j] += claim.quantity
                    * bs_delta_gamma(claim, grid.t(j), s[j], self.market.sigma)?.delta;
            }
        }
        let decomp = decompose_strategy(&target, s, grid, self.window_steps)?;
        let h_mon = monetary_halfwidth_cash_gamma(self.p, self.eps, s, &decomp.cash_gamma)?;
        Ok(h_mon.iter().zip(s).map(|(h, &x)| h / x).collect())
    }
}

/// Monte-Carlo estimate of a welfare quantity, in currency.
#[derive(Debug, Clone)]
pub struct LossEstimate {
    pub value: f64,
    pub std_error: f64,
    pub measure: Measure,
    /// Optional mean integrand per grid step.
    pub trace: Option<Vec<f64>>,
}

/// Expected welfare loss `(p/2) E[ int halfwidth^2 d<S> ]` over a path set
/// generated under the marginal pricing measure (Q, or Q^H with a claim).
///
/// Left-point rule on the simulation grid; invalid paths are excluded.
pub fn welfare_loss<H, C>(
    p: f64,
    halfwidth: &H,
    pathset: &PathSet,
    c_s: &C,
    with_trace: bool,
) -> Result<LossEstimate>
where
    H: HalfwidthModel + ?Sized,
    C: Fn(f64, f64) -> f64 + Sync,
{
    if pathset.measure() == Measure::P {
        return Err(Error::MeasureMismatch { expected: Measure::Q, got: Measure::P });
    }
    let grid = pathset.grid();
    let n_steps = grid.n_steps();
    let paths: Vec<usize> = (0..pathset.n_paths()).filter(|&i| pathset.is_valid(i)).collect();
    if paths.is_empty() {
        return Err(Error::EmptySample("no valid paths".into()));
    }
    let integrals: Vec<f64> = paths
        .par_iter()
        .map(|&i| {
            let s = pathset.path("S", i).expect("factor S");
            let hw = halfwidth.halfwidth_for_path(grid, s).expect("halfwidth model");
            let mut acc = 0.0;
            for j in 0..n_steps {
                acc += hw[j] * hw[j] * c_s(grid.t(j), s[j]) * grid.dt(j);
            }
            acc
        })
        .collect();
    let trace = if with_trace {
        let mut mean_rows = vec![0.0; n_steps];
        for &i in &paths {
            let s = pathset.path("S", i)?;
            let hw = halfwidth.halfwidth_for_path(grid, s)?;
            for j in 0..n_steps {
                mean_rows[j] += hw[j] * hw[j] * c_s(grid.t(j), s[j]) / paths.len() as f64;
            }
        }
        Some(mean_rows)
    } else {
        None
    };
    let (mean, se) = mean_se(&integrals);
    Ok(LossEstimate {
        value: 0.5 * p * mean,
        std_error: 0.5 * p * se,
        measure: pathset.measure(),
        trace,
    })
}

/// Pricing regimes for [`PriceQuote`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PricingRegime {
    General,
    Complete,
    MarginalInvestment,
    MarginalOption,
    IncompleteMartingale,
    IncompleteSmallN,
}

impl std::fmt::Display for PricingRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PricingRegime::General => "general",
            PricingRegime::Complete => "complete",
            PricingRegime::MarginalInvestment => "marginal_investment",
            PricingRegime::MarginalOption => "marginal_option",
            PricingRegime::IncompleteMartingale => "incomplete_martingale",
            PricingRegime::IncompleteSmallN => "incomplete_smalln",
        };
        write!(f, "{s}")
    }
}

/// Utility-indifference price split into the frictionless part and the
/// transaction-cost correction.
#[derive(Debug, Clone, Copy)]
pub struct PriceQuote {
    pub frictionless: f64,
    pub correction: f64,
    pub correction_se: f64,
    pub total: f64,
    pub regime: PricingRegime,
}

impl PriceQuote {
    pub fn new(frictionless: f64, correction: f64, correction_se: f64, regime: PricingRegime) -> Self {
        PriceQuote { frictionless, correction, correction_se, total: frictionless + correction, regime }
    }
}

/// Indifference price from the welfare losses with and without the claim:
/// the frictionless price is corrected by the difference of the two
/// transaction-cost effects. The sign of the correction can go either way.
pub fn indifference_price(
    loss_with: &LossEstimate,
    loss_without: &LossEstimate,
    frictionless_price: f64,
    regime: PricingRegime,
) -> PriceQuote {
    let correction = loss_with.value - loss_without.value;
    let se = (loss_with.std_error * loss_with.std_error
        + loss_without.std_error * loss_without.std_error)
        .sqrt();
    PriceQuote::new(frictionless_price, correction, se, regime)
}

const FOUR_THIRDS_AS_SQ_POW: f64 = 2.0 / 3.0;

/// `|x|^(4/3)` evaluated as `(x^2)^(2/3)`, stable across sign changes.
#[inline]
pub fn abs_pow_four_thirds(x: f64) -> f64 {
    (x * x).powf(FOUR_THIRDS_AS_SQ_POW)
}

fn check_q_measure(pathset: &PathSet) -> Result<()> {
    if pathset.measure() == Measure::P {
        return Err(Error::MeasureMismatch { expected: Measure::Q, got: Measure::P });
    }
    Ok(())
}

/// Transaction-cost correction to the complete-market indifference price:
/// `(9p/32)^(1/3) eps^(2/3) E_Q[ int (|CG_phi + CG_H|^(4/3) - |CG_phi|^(4/3)) d<S>/S^2 ]`.
pub fn complete_price_correction<C>(
    p: f64,
    eps: f64,
    cg_phi: &dyn CashGammaModel,
    cg_h: &dyn CashGammaModel,
    pathset: &PathSet,
    c_s: &C,
) -> Result<(f64, f64)>
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    check_q_measure(pathset)?;
    let grid = pathset.grid();
    let n_steps = grid.n_steps();
    let paths: Vec<usize> = (0..pathset.n_paths()).filter(|&i| pathset.is_valid(i)).collect();
    let integrals: Vec<f64> = paths
        .par_iter()
        .map(|&i| {
            let s = pathset.path("S", i).expect("factor S");
            let a = cg_phi.cash_gamma_path(grid, s);
            let b = cg_h.cash_gamma_path(grid, s);
            let mut acc = 0.0;
            for j in 0..n_steps {
                let w = c_s(grid.t(j), s[j]) / (s[j] * s[j]) * grid.dt(j);
                acc += (abs_pow_four_thirds(a[j] + b[j]) - abs_pow_four_thirds(a[j])) * w;
            }
            acc
        })
        .collect();
    let (mean, se) = mean_se(&integrals);
    let constant = (9.0 * p / 32.0).cbrt() * eps.powf(2.0 / 3.0);
    Ok((constant * mean, constant * se))
}

/// Indifference price per claim when the pure investment gamma is
/// negligible: `E_Q[H] + (9 p n eps^2 / 32)^(1/3) E_Q[int |CG_H|^(4/3) d<S>/S^2]`.
///
/// The correction scales with the cube roots of `p` and `n`, which enter
/// interchangeably.
pub fn marginal_investment_price<C>(
    p: f64,
    n: f64,
    eps: f64,
    cg_h: &dyn CashGammaModel,
    pathset: &PathSet,
    c_s: &C,
    frictionless_price: f64,
) -> Result<PriceQuote>
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    check_q_measure(pathset)?;
    let grid = pathset.grid();
    let n_steps = grid.n_steps();
    let paths: Vec<usize> = (0..pathset.n_paths()).filter(|&i| pathset.is_valid(i)).collect();
    let integrals: Vec<f64> = paths
        .par_iter()
        .map(|&i| {
            let s = pathset.path("S", i).expect("factor S");
            let b = cg_h.cash_gamma_path(grid, s);
            let mut acc = 0.0;
            for j in 0..n_steps {
                let w = c_s(grid.t(j), s[j]) / (s[j] * s[j]) * grid.dt(j);
                acc += abs_pow_four_thirds(b[j]) * w;
            }
            acc
        })
        .collect();
    let (mean, se) = mean_se(&integrals);
    let constant = (9.0 * p * n * eps * eps / 32.0).cbrt();
    Ok(PriceQuote::new(frictionless_price, constant * mean, constant * se, PricingRegime::MarginalInvestment))
}

/// Small-trade-size expansion of the complete-market price correction and
/// the associated band adjustment.
#[derive(Debug, Clone)]
pub struct MarginalOptionExpansion {
    /// Per-claim quote with the first- and second-order correction applied.
    pub quote: PriceQuote,
    /// O(1)-in-n correction term per claim.
    pub first_order: f64,
    /// Coefficient of n in the per-claim correction.
    pub second_order: f64,
    /// Mean band adjustment factor per grid point,
    /// `1 + (2/3) n Gamma^H / Gamma^phi`.
    pub band_factor: Vec<f64>,
}

/// Taylor expansion of the complete-market correction for a small number of
/// claims; requires a nonvanishing pure-investment gamma along the paths.
pub fn marginal_option_expansion<C>(
    p: f64,
    eps: f64,
    n: f64,
    cg_phi: &dyn CashGammaModel,
    cg_h: &dyn CashGammaModel,
    pathset: &PathSet,
    c_s: &C,
    frictionless_price: f64,
) -> Result<MarginalOptionExpansion>
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    check_q_measure(pathset)?;
    let grid = pathset.grid();
    let n_steps = grid.n_steps();
    let n_points = grid.n_points();
    let paths: Vec<usize> = (0..pathset.n_paths()).filter(|&i| pathset.is_valid(i)).collect();
    let per_path: Result<Vec<(f64, f64)>> = paths
        .par_iter()
        .map(|&i| {
            let s = pathset.path("S", i).expect("factor S");
            let a = cg_phi.cash_gamma_path(grid, s);
            let b = cg_h.cash_gamma_path(grid, s);
            let mut i1 = 0.0;
            let mut i2 = 0.0;
            for j in 0..n_steps {
                if a[j] == 0.0 {
                    return Err(Error::Degenerate(
                        "pure-investment gamma vanishes; use the marginal-investment regime".into(),
                    ));
                }
                let w = c_s(grid.t(j), s[j]) / (s[j] * s[j]) * grid.dt(j);
                let ratio = b[j] / a[j];
                let base = abs_pow_four_thirds(a[j]);
                i1 += (4.0 / 3.0) * base * ratio * w;
                i2 += (2.0 / 9.0) * base * ratio * ratio * w;
            }
            Ok((i1, i2))
        })
        .collect();
    let per_path = per_path?;
    let constant = (9.0 * p / 32.0).cbrt() * eps.powf(2.0 / 3.0);
    let i1s: Vec<f64> = per_path.iter().map(|x| x.0).collect();
    let i2s: Vec<f64> = per_path.iter().map(|x| x.1).collect();
    let (m1, se1) = mean_se(&i1s);
    let (m2, se2) = mean_se(&i2s);
    let first = constant * m1;
    let second = constant * m2;
    let correction = first + n * second;
    let correction_se = constant * (se1 * se1 + n * n * se2 * se2).sqrt();

    // Mean band factor across paths, in deterministic chunked order.
    let mut factor = vec![0.0; n_points];
    for chunk in paths.chunks(256) {
        let rows: Vec<Vec<f64>> = chunk
            .par_iter()
            .map(|&i| {
                let s = pathset.path("S", i).expect("factor S");
                let a = cg_phi.cash_gamma_path(grid, s);
                let b = cg_h.cash_gamma_path(grid, s);
                (0..n_points).map(|j| 1.0 + (2.0 / 3.0) * n * b[j] / a[j]).collect()
            })
            .collect();
        for row in rows {
            for j in 0..n_points {
                factor[j] += row[j];
            }
        }
    }
    for f in &mut factor {
        *f /= paths.len() as f64;
    }
    Ok(MarginalOptionExpansion {
        quote: PriceQuote::new(frictionless_price, correction, correction_se, PricingRegime::MarginalOption),
        first_order: first,
        second_order: second,
        band_factor: factor,
    })
}

/// Optimal static hedge position: minimize the expected `4/3`-power average
/// of the residual cash gamma `CG_H - n' CG_H'` over `n'`.
///
/// Returns the minimizer and the objective value. The search interval is
/// widened once by a factor of ten if the minimum sits on its edge.
pub fn semistatic_gamma_hedge<C>(
    cg_h: &dyn CashGammaModel,
    cg_h_prime: &dyn CashGammaModel,
    pathset: &PathSet,
    c_s: &C,
    interval: (f64, f64),
) -> Result<(f64, f64)>
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    check_q_measure(pathset)?;
    if !(interval.0 < interval.1) {
        return Err(Error::parameter("search interval must be nonempty"));
    }
    let grid = pathset.grid();
    let n_steps = grid.n_steps();
    let paths: Vec<usize> = (0..pathset.n_paths()).filter(|&i| pathset.is_valid(i)).collect();
    if paths.is_empty() {
        return Err(Error::EmptySample("no valid paths".into()));
    }
    // Flatten (A, B, weight) across paths once; each objective evaluation is
    // a fused pass.
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = paths
        .par_iter()
        .map(|&i| {
            let s = pathset.path("S", i).expect("factor S");
            let a = cg_h.cash_gamma_path(grid, s);
            let b = cg_h_prime.cash_gamma_path(grid, s);
            let w: Vec<f64> =
                (0..n_steps).map(|j| c_s(grid.t(j), s[j]) / (s[j] * s[j]) * grid.dt(j)).collect();
            (a, b, w)
        })
        .collect();
    let n_valid = rows.len() as f64;
    let objective = |x: f64| -> f64 {
        let partials: Vec<f64> = rows
            .par_iter()
            .map(|(a, b, w)| {
                let mut acc = 0.0;
                for j in 0..n_steps {
                    acc += abs_pow_four_thirds(a[j] - x * b[j]) * w[j];
                }
                acc
            })
            .collect();
        partials.iter().sum::<f64>() / n_valid
    };

    let mut lo = interval.0;
    let mut hi = interval.1;
    let mut widened = false;
    loop {
        let f_lo = objective(lo);
        let f_hi = objective(hi);
        let f_mid = objective(0.5 * (lo + hi));
        if f_mid <= f_lo && f_mid <= f_hi {
            break;
        }
        if widened {
            return Err(Error::BracketFailure(format!(
                "objective not bracketed on [{lo}, {hi}] after widening"
            )));
        }
        let center = 0.5 * (lo + hi);
        let half = 5.0 * (hi - lo);
        lo = center - half;
        hi = center + half;
        widened = true;
    }
    let tol = 1e-10 * (1.0 + hi.abs().max(lo.abs()));
    Ok(golden_section(objective, lo, hi, tol))
}

/// Per-claim price in the basis-risk market with a vanishing risk premium:
/// frictionless expectation, the hedging-error correction linear in `p n`,
/// and the transaction-cost correction driven by the hedge's cash gamma.
#[derive(Debug, Clone)]
pub struct IncompleteMartingalePrice {
    pub frictionless: f64,
    pub hedging_error_term: (f64, f64),
    pub cost_term: (f64, f64),
    pub quote: PriceQuote,
}

/// Price per claim for a small position in a claim on the non-traded factor
/// when the traded asset is a martingale (`mu_S = 0`, so Q = P and no pure
/// investment takes place). The two corrections separate at leading order
/// and are reported individually.
pub fn incomplete_martingale_price(
    p: f64,
    n: f64,
    eps: f64,
    market: &BasisRiskMarket,
    claim: &ClaimSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<IncompleteMartingalePrice> {
    if market.mu_s != 0.0 {
        return Err(Error::Unsupported(
            "nontrivial risk premium: use the small-claim correction machinery".into(),
        ));
    }
    if n_paths == 0 {
        return Err(Error::parameter("n_paths must be at least 1"));
    }
    let v0 = basis_claim_price(market, claim)?;
    let q_market = market.under_entropy_measure();
    let n_steps = grid.n_steps();
    let per_path: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut stream = PairStream::new(
                q_market.traded_spec(),
                q_market.nontraded_spec(),
                market.rho,
                grid,
                seed,
                i as u64,
            );
            let mut gains = 0.0;
            let mut cost_integral = 0.0;
            let mut s = q_market.s0;
            let mut y = q_market.y0;
            for j in 0..n_steps {
                let t = grid.t(j);
                let dt = grid.dt(j);
                let xi = unit_hedge(market, claim, t, s, y);
                let c_xi = hedge_local_variance(market, claim, t, s, y);
                let c_s = market.sigma_s * market.sigma_s * s * s;
                // (c_xi / c_S * S^4)^(2/3) * c_S / S^2, left point.
                cost_integral += (c_xi / c_s * s.powi(4)).powf(2.0 / 3.0) * c_s / (s * s) * dt;
                let (s_new, y_new) = stream.step();
                gains += xi * (s_new - s);
                s = s_new;
                y = y_new;
            }
            let shortfall = claim.unit_payoff(y) - v0 - gains;
            (shortfall * shortfall, cost_integral)
        })
        .collect();
    let sq: Vec<f64> = per_path.iter().map(|x| x.0).collect();
    let ci: Vec<f64> = per_path.iter().map(|x| x.1).collect();
    let (sq_mean, sq_se) = mean_se(&sq);
    let (ci_mean, ci_se) = mean_se(&ci);
    let hedging_error_term = (0.5 * p * n * sq_mean, 0.5 * p * n * sq_se);
    let cost_const = (9.0 * p * n * eps * eps / 32.0).cbrt();
    let cost_term = (cost_const * ci_mean, cost_const * ci_se);
    let correction = hedging_error_term.0 + cost_term.0;
    let correction_se = (hedging_error_term.1.powi(2) + cost_term.1.powi(2)).sqrt();
    Ok(IncompleteMartingalePrice {
        frictionless: v0,
        hedging_error_term,
        cost_term,
        quote: PriceQuote::new(v0, correction, correction_se, PricingRegime::IncompleteMartingale),
    })
}

fn unit_hedge(market: &BasisRiskMarket, claim: &ClaimSpec, t: f64, s: f64, y: f64) -> f64 {
    let (_, xi) = basis_claim_value_hedge(market, claim, t, s, y).expect("hedge evaluation");
    xi / claim.quantity
}

/// Local variance of the mean-variance hedge ratio, from finite-difference
/// sensitivities in (S, Y) (relative bump 1e-4).
fn hedge_local_variance(market: &BasisRiskMarket, claim: &ClaimSpec, t: f64, s: f64, y: f64) -> f64 {
    let xi = unit_hedge(market, claim, t, s, y);
    // xi is proportional to 1/S, so the S-sensitivity is exact.
    let xi_s = -xi / s;
    let bump = 1e-4 * y;
    let up = unit_hedge(market, claim, t, s, y + bump);
    let down = unit_hedge(market, claim, t, s, y - bump);
    let xi_y = (up - down) / (2.0 * bump);
    let sig_s = market.sigma_s * s;
    let sig_y = market.sigma_y * y;
    let rho = market.rho;
    // Nonnegative by Cauchy-Schwarz; clamp finite-difference rounding.
    (xi_s * xi_s * sig_s * sig_s
        + 2.0 * xi_s * xi_y * rho * sig_s * sig_y
        + xi_y * xi_y * sig_y * sig_y)
        .max(0.0)
}

/// Covariation of the hedge with the pure investment strategy, relative to
/// the strategy's own local variance.
fn hedge_strategy_covariation_ratio(
    market: &BasisRiskMarket,
    claim: &ClaimSpec,
    p: f64,
    t: f64,
    s: f64,
    y: f64,
) -> f64 {
    let k = market.mu_s / (p * market.sigma_s * market.sigma_s);
    let xi = unit_hedge(market, claim, t, s, y);
    let xi_s = -xi / s;
    let bump = 1e-4 * y;
    let up = unit_hedge(market, claim, t, s, y + bump);
    let down = unit_hedge(market, claim, t, s, y - bump);
    let xi_y = (up - down) / (2.0 * bump);
    // phi = k/S is driven by the traded Brownian only.
    let sigma_phi_w = -k * market.sigma_s / s;
    let sigma_xi_w = xi_s * market.sigma_s * s + xi_y * market.rho * market.sigma_y * y;
    let c_phi = sigma_phi_w * sigma_phi_w;
    sigma_phi_w * sigma_xi_w / c_phi
}

/// Small-claim corrections in the basis-risk market with a nontrivial risk
/// premium: band adjustment factor and the two pieces of the leading-order
/// price impact (strategy change and pricing-measure change).
#[derive(Debug, Clone)]
pub struct SmallClaimCorrections {
    /// Mean band adjustment factor per grid point,
    /// `1 + (2n/3) d<phi, xi>/d<phi>`.
    pub band_factor: Vec<f64>,
    /// `(p/2) E_Q[int (4n/3) (halfwidth)^2 (d<phi,xi>/d<phi>) d<S>]`.
    pub strategy_term: (f64, f64),
    /// Covariance form of the measure-change term,
    /// `(p/2) n p E_Q[(H - E_Q[H] - int xi dS) int (halfwidth)^2 d<S>]`.
    pub measure_term: (f64, f64),
    /// Same quantity from the exact claim-tilted density, as a mutual oracle
    /// for the covariance form (the two agree to O(n^2)).
    pub measure_term_exact: (f64, f64),
    /// strategy_term + measure_term.
    pub price_impact: f64,
}


/// Leading-order impact of the claim on the no-trade band and on the price
/// of transaction costs when the pure investment is nontrivial.
///
/// Simulates under the physical measure; Q-expectations use the exact
/// entropy-measure density built from the traded Brownian motion. Requires a
/// fluctuating pure-investment target (`mu_S != 0`), since the band
/// adjustment is relative to the pure-investment band.
pub fn incomplete_smalln_corrections(
    p: f64,
    n: f64,
    eps: f64,
    market: &BasisRiskMarket,
    claim: &ClaimSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<SmallClaimCorrections> {
    if market.mu_s == 0.0 {
        return Err(Error::Degenerate(
            "pure investment target has no fluctuation (mu_S = 0); the band adjustment is undefined"
                .into(),
        ));
    }
    if n_paths == 0 {
        return Err(Error::parameter("n_paths must be at least 1"));
    }
    let v0 = basis_claim_price(market, claim)?;
    let k = market.mu_s / (p * market.sigma_s * market.sigma_s);
    let lam = market.mu_s / market.sigma_s;
    let horizon = grid.horizon();
    let n_steps = grid.n_steps();
    let n_points = grid.n_points();

    struct PathOut {
        z: f64,
        shortfall: f64,
        band_integral: f64,
        strategy_integral: f64,
        tilt: f64,
        factor_row: Vec<f64>,
    }

    let run_path = |i: usize| -> PathOut {
        let mut stream = PairStream::new(
            market.traded_spec(),
            market.nontraded_spec(),
            market.rho,
            grid,
            seed,
            i as u64,
        );
        let mut s = market.s0;
        let mut y = market.y0;
        let mut xi_gains = 0.0;
        let mut target_gains = 0.0;
        let mut band_integral = 0.0;
        let mut strategy_integral = 0.0;
        let mut factor_row = Vec::with_capacity(n_points);
        for j in 0..n_steps {
            let t = grid.t(j);
            let dt = grid.dt(j);
            let xi = unit_hedge(market, claim, t, s, y);
            let ratio = hedge_strategy_covariation_ratio(market, claim, p, t, s, y);
            factor_row.push(1.0 + (2.0 * n / 3.0) * ratio);
            let c_s = market.sigma_s * market.sigma_s * s * s;
            let c_phi = k * k * market.sigma_s * market.sigma_s / (s * s);
            let h = band_halfwidth_at(p, eps, s, c_phi, c_s);
            band_integral += h * h * c_s * dt;
            strategy_integral += h * h * ratio * c_s * dt;
            let phi = k / s;
            let (s_new, _) = stream.step();
            xi_gains += xi * (s_new - s);
            target_gains += (phi + n * xi) * (s_new - s);
            s = s_new;
            y = stream.y;
        }
        let last = *factor_row.last().unwrap_or(&1.0);
        factor_row.push(last);
        let z = (-lam * stream.w_s - 0.5 * lam * lam * horizon).exp();
        let payoff = claim.unit_payoff(y);
        PathOut {
            z,
            shortfall: payoff - v0 - xi_gains,
            band_integral,
            strategy_integral,
            tilt: (-p * (target_gains - n * payoff)).exp(),
            factor_row,
        }
    };

    // Deterministic chunked accumulation: parallel inside each chunk, chunks
    // merged in order.
    let mut outs: Vec<PathOut> = Vec::with_capacity(n_paths);
    let mut factor_sum = vec![0.0; n_points];
    for start in (0..n_paths).step_by(256) {
        let end = (start + 256).min(n_paths);
        let chunk: Vec<PathOut> = (start..end).into_par_iter().map(run_path).collect();
        for o in chunk {
            for j in 0..n_points {
                factor_sum[j] += o.factor_row[j];
            }
            outs.push(o);
        }
    }
    for f in &mut factor_sum {
        *f /= n_paths as f64;
    }

    // Q-expectations via the exact density Z = dQ/dP (E[Z] = 1).
    let strat: Vec<f64> = outs.iter().map(|o| o.z * o.strategy_integral).collect();
    let (sm, sse) = mean_se(&strat);
    let scale_strategy = 0.5 * p * (4.0 * n / 3.0);
    let strategy_term = (scale_strategy * sm, scale_strategy * sse);

    let cov: Vec<f64> = outs.iter().map(|o| o.z * o.shortfall * o.band_integral).collect();
    let (cm, cse) = mean_se(&cov);
    let scale_measure = 0.5 * p * n * p;
    let measure_term = (scale_measure * cm, scale_measure * cse);

    // Exact-density route: compare self-normalized expectations of the band
    // integral under the claim-tilted measure and under Q.
    let nf = outs.len() as f64;
    let zsum: f64 = outs.iter().map(|o| o.z).sum();
    let zx: f64 = outs.iter().map(|o| o.z * o.band_integral).sum();
    let wsum: f64 = outs.iter().map(|o| o.tilt).sum();
    let wx: f64 = outs.iter().map(|o| o.tilt * o.band_integral).sum();
    let e_q = zx / zsum;
    let e_nh = wx / wsum;
    // Delta-method SE for the difference of the two self-normalized means on
    // shared paths.
    let se_sq: f64 = outs
        .iter()
        .map(|o| {
            let u = o.tilt * (o.band_integral - e_nh) / (wsum / nf)
                - o.z * (o.band_integral - e_q) / (zsum / nf);
            u * u
        })
        .sum::<f64>()
        / (nf * nf);
    let measure_term_exact = (0.5 * p * (e_nh - e_q), 0.5 * p * se_sq.sqrt());

    Ok(SmallClaimCorrections {
        band_factor: factor_sum,
        strategy_term,
        measure_term,
        measure_term_exact,
        price_impact: strategy_term.0 + measure_term.0,
    })
}
