use crate::error::{Error, Result};

/// Discrete time grid on `[t0, T]`, in years.
///
/// Points are strictly increasing with `points[0] == t0` and
/// `points[n_steps] == T`. Uniform spacing is the default; nonuniform grids
/// can be built from explicit points.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

/// Default resolution: steps per unit year. The band halfwidth scales like
/// the cube root of the spread, so it must be resolved by many steps.
pub const DEFAULT_STEPS_PER_YEAR: usize = 10_000;

impl TimeGrid {
    /// Uniform grid with `n_steps` steps between `t0` and `t_end`.
    pub fn uniform(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t0 >= t_end {
            return Err(Error::parameter(format!(
                "time grid requires t0 < T, got t0={t0}, T={t_end}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::parameter("time grid requires n_steps >= 1"));
        }
        let dt = (t_end - t0) / n_steps as f64;
        let mut points: Vec<f64> = (0..=n_steps).map(|i| t0 + i as f64 * dt).collect();
        points[n_steps] = t_end;
        Ok(TimeGrid { points })
    }

    /// Grid from explicit points; must be strictly increasing.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::parameter("time grid requires at least two points"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|t| !t.is_finite()) {
            return Err(Error::parameter("time grid points must be finite and strictly increasing"));
        }
        Ok(TimeGrid { points })
    }

    pub fn t0(&self) -> f64 {
        self.points[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn horizon(&self) -> f64 {
        self.t_end() - self.t0()
    }

    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn t(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Step length of the i-th step, `t[i+1] - t[i]`.
    pub fn dt(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints_exact() {
        let g = TimeGrid::uniform(0.0, 1.0, 7).unwrap();
        assert_eq!(g.t0(), 0.0);
        assert_eq!(g.t_end(), 1.0);
        assert_eq!(g.n_steps(), 7);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::uniform(1.0, 1.0, 10).is_err());
        assert!(TimeGrid::uniform(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::from_points(vec![0.0, 0.0, 1.0]).is_err());
        assert!(TimeGrid::from_points(vec![0.0]).is_err());
    }
}
