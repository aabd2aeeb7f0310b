use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{fourier_factor, Band, OMEGA0};

/// Logarithmic scale grid `s_j = s0 · 2^(j·dj)`, `j = 0..=J`, in weeks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    pub s0: f64,
    pub dj: f64,
    pub j_max: usize,
    pub scales: Vec<f64>,
    pub fourier_periods: Vec<f64>,
    /// Series length the grid was built for.
    pub n_steps: usize,
    pub dt: f64,
}

/// Builds the grid with `J = floor(log2(N·dt / s0) / dj)`.
pub fn build_grid(n: usize, s0: f64, dj: f64) -> Result<ScaleGrid> {
    let dt = 1.0;
    if n < 8 {
        return Err(Error::SeriesTooShort { needed: 8, got: n });
    }
    if !(s0 >= 2.0 * dt) {
        return Err(Error::param(format!("s0 must be at least 2·dt, got {s0}")));
    }
    if !(dj > 0.0 && dj <= 1.0) {
        return Err(Error::param(format!("dj must lie in (0, 1], got {dj}")));
    }
    let j = ((n as f64 * dt / s0).log2() / dj + 1e-9).floor();
    if j < 1.0 {
        return Err(Error::SeriesTooShort {
            needed: (2.0 * s0 / dt).ceil() as usize,
            got: n,
        });
    }
    Ok(ScaleGrid::with_range(s0, dj, j as usize, n, dt))
}

impl ScaleGrid {
    /// Grid without the resolvability checks of [`build_grid`].
    pub(crate) fn with_range(s0: f64, dj: f64, j_max: usize, n_steps: usize, dt: f64) -> Self {
        let scales: Vec<f64> = (0..=j_max).map(|j| s0 * (j as f64 * dj).exp2()).collect();
        let ff = fourier_factor(OMEGA0);
        let fourier_periods = scales.iter().map(|s| s * ff).collect();
        ScaleGrid {
            s0,
            dj,
            j_max,
            scales,
            fourier_periods,
            n_steps,
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Indices whose Fourier period lies inside the band (bounds inclusive).
    pub fn band_indices(&self, band: Band) -> Result<Vec<usize>> {
        let (lo, hi) = band.period_bounds_weeks();
        let idx: Vec<usize> = self
            .fourier_periods
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= lo && p <= hi)
            .map(|(j, _)| j)
            .collect();
        if idx.is_empty() {
            return Err(Error::param(format!(
                "band {band} holds no grid scale (periods {lo:.2} to {hi:.2} weeks)"
            )));
        }
        Ok(idx)
    }

    /// Sub-grid holding only the scales of `band`, for transforms that need no
    /// other rows.
    pub fn restrict_to_band(&self, band: Band) -> Result<ScaleGrid> {
        let idx = self.band_indices(band)?;
        let first = idx[0];
        let mut g = ScaleGrid::with_range(
            self.scales[first],
            self.dj,
            idx.len() - 1,
            self.n_steps,
            self.dt,
        );
        // keep the parent's exact values rather than recomputing powers
        g.scales = idx.iter().map(|&j| self.scales[j]).collect();
        g.fourier_periods = idx.iter().map(|&j| self.fourier_periods[j]).collect();
        Ok(g)
    }

    /// Index of the scale whose Fourier period is nearest `period` weeks
    /// (compared on a log axis).
    pub fn nearest_period(&self, period: f64) -> usize {
        let target = period.ln();
        self.fourier_periods
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1.ln() - target)
                    .abs()
                    .total_cmp(&(b.1.ln() - target).abs())
            })
            .map(|(j, _)| j)
            .expect("non-empty grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_size_from_formula() {
        let g = build_grid(512, 2.0, 0.25).unwrap();
        assert_eq!(g.j_max, 32);
        assert_eq!(g.len(), 33);
        assert_eq!(g.scales[32], 512.0);
    }

    #[test]
    fn octave_grid() {
        let g = build_grid(8, 2.0, 1.0).unwrap();
        assert_eq!(g.scales, vec![2.0, 4.0, 8.0]);
    }

    #[test]
    fn fourier_ratio_constant() {
        let g = build_grid(256, 2.0, 0.1).unwrap();
        let expected = 4.0 * std::f64::consts::PI / (6.0 + 38f64.sqrt());
        assert!((expected - 1.0330).abs() < 5e-5);
        for (p, s) in g.fourier_periods.iter().zip(&g.scales) {
            assert!((p / s - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_errors() {
        assert!(build_grid(7, 2.0, 0.25).is_err());
        assert!(build_grid(64, 1.0, 0.25).is_err());
        assert!(build_grid(64, 2.0, 0.0).is_err());
        assert!(build_grid(64, 2.0, 1.5).is_err());
        // log2(9/5) / 1 < 1
        assert!(build_grid(9, 5.0, 1.0).is_err());
    }

    #[test]
    fn band_lookup() {
        let g = build_grid(520, 2.0, 0.05).unwrap();
        let idx = g.band_indices(Band::CIRCANNUAL).unwrap();
        for &j in &idx {
            assert!(g.fourier_periods[j] >= 41.6 && g.fourier_periods[j] <= 57.2);
        }
        let sub = g.restrict_to_band(Band::CIRCANNUAL).unwrap();
        assert_eq!(sub.len(), idx.len());
        assert_eq!(sub.scales[0], g.scales[idx[0]]);
        assert!(g.band_indices(Band::new(0.001, 0.002).unwrap()).is_err());
    }
}
