//! Deterministic, seed-reproducible simulation of Itô-process paths and
//! estimation of local quadratic (co)variation coefficients.
//!
//! Every path is driven by its own counter-based substream keyed by
//! `(seed, path index)`, so simulation is reproducible bit-for-bit at any
//! parallelism degree and a streaming consumer sees exactly the same numbers
//! as a materialized [`PathSet`].

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Probability measure a path set was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Physical measure.
    P,
    /// Minimal entropy martingale measure.
    Q,
    /// Entropy measure tilted by a sold claim.
    QH,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::P => write!(f, "P"),
            Measure::Q => write!(f, "Q"),
            Measure::QH => write!(f, "Q^H"),
        }
    }
}

/// Per-path RNG substream. ChaCha streams are independent, so path `i` can be
/// generated in isolation, in parallel, or lazily with identical output.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Geometric Brownian motion parameters, `dS = mu S dt + sigma S dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmSpec {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GbmSpec {
    pub fn new(s0: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(s0 > 0.0) {
            return Err(Error::parameter(format!("initial price must be positive, got {s0}")));
        }
        if !(sigma > 0.0) {
            return Err(Error::parameter(format!("volatility must be positive, got {sigma}")));
        }
        if !mu.is_finite() {
            return Err(Error::parameter(format!("drift must be finite, got {mu}")));
        }
        Ok(GbmSpec { s0, mu, sigma })
    }
}

/// Sampled paths of named factors on a shared grid.
///
/// Factor values are stored row-major: path `i` of a factor occupies
/// `values[i * n_points .. (i + 1) * n_points]`. The measure tag is set once
/// at creation. Paths that produced non-finite values are flagged invalid and
/// should be excluded by consumers; they are never silently patched.
#[derive(Debug, Clone)]
pub struct PathSet {
    grid: TimeGrid,
    factors: Vec<(String, Vec<f64>)>,
    n_paths: usize,
    seed: u64,
    measure: Measure,
    invalid: Vec<usize>,
}

impl PathSet {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    /// Indices of paths flagged invalid (non-finite values during stepping).
    pub fn invalid_paths(&self) -> &[usize] {
        &self.invalid
    }

    pub fn is_valid(&self, path: usize) -> bool {
        !self.invalid.contains(&path)
    }

    pub fn factor_names(&self) -> Vec<&str> {
        self.factors.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn factor(&self, name: &str) -> Result<&[f64]> {
        self.factors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::parameter(format!("unknown factor '{name}'")))
    }

    /// Values of one factor along one path.
    pub fn path(&self, name: &str, path: usize) -> Result<&[f64]> {
        let values = self.factor(name)?;
        let np = self.grid.n_points();
        if path >= self.n_paths {
            return Err(Error::parameter(format!(
                "path index {path} out of range ({} paths)",
                self.n_paths
            )));
        }
        Ok(&values[path * np..(path + 1) * np])
    }

    /// Debug dump, one row per (path, step): `path_id,step,t,<factors...>`.
    pub fn dump_csv<W: Write>(&self, out: &mut W, max_paths: Option<usize>) -> Result<()> {
        let names: Vec<&str> = self.factor_names();
        write!(out, "path_id,step,t")?;
        for n in &names {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
        let limit = max_paths.unwrap_or(self.n_paths).min(self.n_paths);
        let np = self.grid.n_points();
        for i in 0..limit {
            for j in 0..np {
                write!(out, "{},{},{}", i, j, self.grid.t(j))?;
                for (_, v) in &self.factors {
                    write!(out, ",{}", v[i * np + j])?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    fn flag_invalid(factors: &[(String, Vec<f64>)], n_paths: usize, np: usize) -> Vec<usize> {
        (0..n_paths)
            .filter(|&i| {
                factors.iter().any(|(_, v)| v[i * np..(i + 1) * np].iter().any(|x| !x.is_finite()))
            })
            .collect()
    }
}

/// Streaming generator of a single GBM path, bitwise-identical to the
/// corresponding row of [`simulate_gbm`] for the same `(seed, path)` pair.
pub struct GbmStream<'g> {
    grid: &'g TimeGrid,
    spec: GbmSpec,
    rng: ChaCha8Rng,
    pub s: f64,
    step: usize,
}

impl<'g> GbmStream<'g> {
    pub fn new(spec: GbmSpec, grid: &'g TimeGrid, seed: u64, path: u64) -> Self {
        GbmStream { grid, spec, rng: path_rng(seed, path), s: spec.s0, step: 0 }
    }

    /// Advance one step and return the new level.
    pub fn step(&mut self) -> f64 {
        let dt = self.grid.dt(self.step);
        let z: f64 = self.rng.sample(StandardNormal);
        self.s *= ((self.spec.mu - 0.5 * self.spec.sigma * self.spec.sigma) * dt
            + self.spec.sigma * dt.sqrt() * z)
            .exp();
        self.step += 1;
        self.s
    }
}

/// Streaming generator of a correlated (S, Y) pair, matching
/// [`simulate_correlated_pair`] values exactly.
pub struct PairStream<'g> {
    grid: &'g TimeGrid,
    spec_s: GbmSpec,
    spec_y: GbmSpec,
    rho: f64,
    rng: ChaCha8Rng,
    pub s: f64,
    pub y: f64,
    /// Running value of the Brownian motion driving S.
    pub w_s: f64,
    step: usize,
}

impl<'g> PairStream<'g> {
    pub fn new(spec_s: GbmSpec, spec_y: GbmSpec, rho: f64, grid: &'g TimeGrid, seed: u64, path: u64) -> Self {
        PairStream {
            grid,
            spec_s,
            spec_y,
            rho,
            rng: path_rng(seed, path),
            s: spec_s.s0,
            y: spec_y.s0,
            w_s: 0.0,
            step: 0,
        }
    }

    pub fn step(&mut self) -> (f64, f64) {
        let dt = self.grid.dt(self.step);
        let sq = dt.sqrt();
        let z_s: f64 = self.rng.sample(StandardNormal);
        let z_y = if self.rho.abs() == 1.0 {
            // Degenerate correlation reuses the single noise stream.
            self.rho.signum() * z_s
        } else {
            let z_perp: f64 = self.rng.sample(StandardNormal);
            self.rho * z_s + (1.0 - self.rho * self.rho).sqrt() * z_perp
        };
        self.w_s += sq * z_s;
        self.s *= ((self.spec_s.mu - 0.5 * self.spec_s.sigma * self.spec_s.sigma) * dt
            + self.spec_s.sigma * sq * z_s)
            .exp();
        self.y *= ((self.spec_y.mu - 0.5 * self.spec_y.sigma * self.spec_y.sigma) * dt
            + self.spec_y.sigma * sq * z_y)
            .exp();
        self.step += 1;
        (self.s, self.y)
    }
}

/// Exact lognormal stepping of geometric Brownian motion: the marginal law at
/// every grid point is exact, regardless of step count.
pub fn simulate_gbm(spec: GbmSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    simulate_gbm_tagged(spec, grid, n_paths, seed, Measure::P)
}

/// As [`simulate_gbm`] with an explicit measure tag (the caller asserts the
/// drift is the one valid under that measure).
pub fn simulate_gbm_tagged(
    spec: GbmSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathSet> {
    if n_paths == 0 {
        return Err(Error::parameter("n_paths must be at least 1"));
    }
    let np = grid.n_points();
    let mut values = vec![0.0f64; n_paths * np];
    values
        .par_chunks_mut(np)
        .enumerate()
        .for_each(|(i, row)| {
            let mut stream = GbmStream::new(spec, grid, seed, i as u64);
            row[0] = spec.s0;
            for j in 1..np {
                row[j] = stream.step();
            }
        });
    let factors = vec![("S".to_string(), values)];
    let invalid = PathSet::flag_invalid(&factors, n_paths, np);
    Ok(PathSet { grid: grid.clone(), factors, n_paths, seed, measure, invalid })
}

/// Two GBM factors S and Y driven by Brownian motions with instantaneous
/// correlation `rho`; `rho = ±1` reuses a single noise stream.
pub fn simulate_correlated_pair(
    spec_s: GbmSpec,
    spec_y: GbmSpec,
    rho: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    simulate_correlated_pair_tagged(spec_s, spec_y, rho, grid, n_paths, seed, Measure::P)
}

pub fn simulate_correlated_pair_tagged(
    spec_s: GbmSpec,
    spec_y: GbmSpec,
    rho: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathSet> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::parameter(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    if n_paths == 0 {
        return Err(Error::parameter("n_paths must be at least 1"));
    }
    let np = grid.n_points();
    let mut s_values = vec![0.0f64; n_paths * np];
    let mut y_values = vec![0.0f64; n_paths * np];
    s_values
        .par_chunks_mut(np)
        .zip(y_values.par_chunks_mut(np))
        .enumerate()
        .for_each(|(i, (srow, yrow))| {
            let mut stream = PairStream::new(spec_s, spec_y, rho, grid, seed, i as u64);
            srow[0] = spec_s.s0;
            yrow[0] = spec_y.s0;
            for j in 1..np {
                let (s, y) = stream.step();
                srow[j] = s;
                yrow[j] = y;
            }
        });
    let factors = vec![("S".to_string(), s_values), ("Y".to_string(), y_values)];
    let invalid = PathSet::flag_invalid(&factors, n_paths, np);
    Ok(PathSet { grid: grid.clone(), factors, n_paths, seed, measure, invalid })
}

/// First-order Euler-Maruyama scheme for `dX = b(t, X) dt + sigma(t, X) dW`.
///
/// Paths that produce non-finite values are flagged invalid and excluded by
/// downstream consumers, with the count reported on the path set.
pub fn euler_maruyama<F>(
    model: F,
    x0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet>
where
    F: Fn(f64, f64) -> (f64, f64) + Sync,
{
    if n_paths == 0 {
        return Err(Error::parameter("n_paths must be at least 1"));
    }
    let np = grid.n_points();
    let mut values = vec![0.0f64; n_paths * np];
    values
        .par_chunks_mut(np)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = path_rng(seed, i as u64);
            let mut x = x0;
            row[0] = x;
            for j in 1..np {
                let t = grid.t(j - 1);
                let dt = grid.dt(j - 1);
                let (b, sigma) = model(t, x);
                let z: f64 = rng.sample(StandardNormal);
                x += b * dt + sigma * dt.sqrt() * z;
                row[j] = x;
            }
        });
    let factors = vec![("X".to_string(), values)];
    let invalid = PathSet::flag_invalid(&factors, n_paths, np);
    Ok(PathSet { grid: grid.clone(), factors, n_paths, seed, measure: Measure::P, invalid })
}

/// Local drift and quadratic-variation series of one factor along a grid.
///
/// Units: `b` in factor per year, `c` in factor² per year. The optional
/// `cross` series holds the local covariation with a second named factor and
/// satisfies Cauchy-Schwarz against the two `c` series pointwise.
#[derive(Debug, Clone)]
pub struct CoefficientSeries {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub cross: Option<(String, Vec<f64>)>,
}

/// Estimation settings for [`local_coefficients`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EstimationWindow {
    /// Number of steps in the moving window; 0 selects the default of 1% of
    /// the grid length (at least one step).
    pub steps: usize,
}

impl EstimationWindow {
    fn resolve(self, n_steps: usize) -> Result<usize> {
        let w = if self.steps == 0 { (n_steps / 100).max(1) } else { self.steps };
        if w > n_steps {
            return Err(Error::parameter(format!(
                "estimation window of {w} steps exceeds grid length {n_steps}"
            )));
        }
        Ok(w)
    }
}

/// Local coefficients of `factor` along path `path` of `pathset`.
///
/// If analytic coefficient functions `(t, x) -> (b, sigma)` are supplied they
/// are evaluated along the path (preferred). Otherwise `c` is estimated from
/// squared increments averaged over a moving window, and `b` from raw
/// increments over the same window.
pub fn local_coefficients<F>(
    pathset: &PathSet,
    factor: &str,
    path: usize,
    window: EstimationWindow,
    analytic: Option<F>,
) -> Result<CoefficientSeries>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let xs = pathset.path(factor, path)?;
    let grid = pathset.grid();
    let n = grid.n_steps();
    if let Some(f) = analytic {
        let mut b = Vec::with_capacity(n + 1);
        let mut c = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let (bj, sj) = f(grid.t(j), xs[j]);
            b.push(bj);
            c.push(sj * sj);
        }
        return Ok(CoefficientSeries { b, c, cross: None });
    }
    let w = window.resolve(n)?;
    let mut b = Vec::with_capacity(n + 1);
    let mut c = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let (lo, hi) = window_bounds(j, n, w);
        let mut sb = 0.0;
        let mut sc = 0.0;
        for k in lo..hi {
            let dx = xs[k + 1] - xs[k];
            let dt = grid.dt(k);
            sb += dx / dt;
            sc += dx * dx / dt;
        }
        let m = (hi - lo) as f64;
        b.push(sb / m);
        c.push(sc / m);
    }
    Ok(CoefficientSeries { b, c, cross: None })
}

/// Windowed local coefficients for a factor pair, including their local
/// covariation. The estimates come from the same window sums, so the
/// Cauchy-Schwarz bound `cross² <= c_x c_y` holds pointwise by construction.
pub fn pair_coefficients(
    pathset: &PathSet,
    factor_x: &str,
    factor_y: &str,
    path: usize,
    window: EstimationWindow,
) -> Result<(CoefficientSeries, CoefficientSeries)> {
    let xs = pathset.path(factor_x, path)?;
    let ys = pathset.path(factor_y, path)?;
    let grid = pathset.grid();
    let n = grid.n_steps();
    let w = window.resolve(n)?;
    let mut bx = Vec::with_capacity(n + 1);
    let mut by = Vec::with_capacity(n + 1);
    let mut cx = Vec::with_capacity(n + 1);
    let mut cy = Vec::with_capacity(n + 1);
    let mut cxy = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let (lo, hi) = window_bounds(j, n, w);
        let (mut sbx, mut sby, mut scx, mut scy, mut scxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in lo..hi {
            let dx = xs[k + 1] - xs[k];
            let dy = ys[k + 1] - ys[k];
            let dt = grid.dt(k);
            sbx += dx / dt;
            sby += dy / dt;
            scx += dx * dx / dt;
            scy += dy * dy / dt;
            scxy += dx * dy / dt;
        }
        let m = (hi - lo) as f64;
        bx.push(sbx / m);
        by.push(sby / m);
        cx.push(scx / m);
        cy.push(scy / m);
        cxy.push(scxy / m);
    }
    let sx = CoefficientSeries { b: bx, c: cx, cross: Some((factor_y.to_string(), cxy)) };
    let sy = CoefficientSeries { b: by, c: cy, cross: None };
    Ok((sx, sy))
}

fn window_bounds(j: usize, n_steps: usize, w: usize) -> (usize, usize) {
    // Window of w steps roughly centered on grid point j, clipped to the grid.
    let half = w / 2;
    let lo = j.saturating_sub(half).min(n_steps - w);
    (lo, lo + w)
}
