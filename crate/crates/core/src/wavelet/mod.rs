//! Morlet continuous wavelet transform of weekly series.
//!
//! The transform of a length-`N` series `y` at scale `s` and step `n` is
//!
//! ```text
//! W(s, n) = sqrt(dt / s) · Σ_t y(t) · ψ*((t − n)·dt / s),   ψ(u) = π^(-1/4) e^(iω0u) e^(-u²/2)
//! ```
//!
//! evaluated for all `n` at once in the frequency domain: the zero-padded
//! series is multiplied by the analytic Morlet response
//! `sqrt(2πs/dt) · π^(-1/4) · H(ω) · exp(-(sω − ω0)²/2)` and inverted.
//! Padding is long enough that the circular product has no wrap-around at any
//! grid scale, so the result agrees with the direct sum wherever the wavelet
//! is resolved below the Nyquist frequency (`s ≳ 4·dt` for `ω0 = 6`).

mod grid;

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{build_grid, ScaleGrid};

/// Morlet non-dimensional frequency.
pub const OMEGA0: f64 = 6.0;
/// Reconstruction factor of the ω0 = 6 Morlet wavelet.
pub const C_DELTA: f64 = 0.776;
pub const WEEKS_PER_YEAR: f64 = 52.0;
/// Padding reaches this many e-folding widths (in units of s) past the data,
/// where the Gaussian envelope has fallen below 1e-12.
const PAD_WIDTHS: f64 = 7.5;
/// Distance from the response peak, in units of `s·ω`, past which
/// `exp(-x²/2)` is zero in double precision.
const RESPONSE_CUTOFF: f64 = 39.0;

/// `λ / s` for the Morlet wavelet: `4π / (ω0 + sqrt(2 + ω0²))`.
pub fn fourier_factor(omega0: f64) -> f64 {
    4.0 * PI / (omega0 + (2.0 + omega0 * omega0).sqrt())
}

fn psi0_at_zero() -> f64 {
    PI.powf(-0.25)
}

/// Band of Fourier periods in years, e.g. the circannual band `(0.8, 1.1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_years: f64,
    pub hi_years: f64,
}

impl Band {
    pub const CIRCANNUAL: Band = Band {
        lo_years: 0.8,
        hi_years: 1.1,
    };

    pub fn new(lo_years: f64, hi_years: f64) -> Result<Self> {
        if !(lo_years > 0.0 && hi_years >= lo_years) {
            return Err(Error::param(format!(
                "band bounds must satisfy 0 < lo <= hi, got ({lo_years}, {hi_years})"
            )));
        }
        Ok(Band { lo_years, hi_years })
    }

    pub fn period_bounds_weeks(&self) -> (f64, f64) {
        (self.lo_years * WEEKS_PER_YEAR, self.hi_years * WEEKS_PER_YEAR)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo_years, self.hi_years)
    }
}

/// Maximum reliable scale at each step: `min(i, N−1−i)·dt / √2`.
pub fn cone_of_influence(n: usize, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|i| i.min(n - 1 - i) as f64 * dt / SQRT_2)
        .collect()
}

/// Power-of-two FFT length, at least `2N` and free of wrap-around up to `s_max`.
pub fn padded_len(n: usize, s_max_steps: f64) -> usize {
    let need = (2 * n).max(n + (PAD_WIDTHS * s_max_steps).ceil() as usize);
    need.next_power_of_two()
}

#[derive(Clone, Debug)]
pub struct WaveletTransform {
    /// One row per scale, one column per time step.
    pub coeffs: Vec<Vec<Complex64>>,
    pub grid: ScaleGrid,
    pub coi: Vec<f64>,
    pub omega0: f64,
    pub n_steps: usize,
    pub dt: f64,
    /// Week index of column 0 in the originating series.
    pub offset: usize,
}

impl WaveletTransform {
    pub fn power(&self, j: usize, n: usize) -> f64 {
        self.coeffs[j][n].norm_sqr()
    }

    pub fn in_cone(&self, j: usize, n: usize) -> bool {
        self.grid.scales[j] <= self.coi[n]
    }

    pub fn with_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    /// Writes `|W|²` with one row per Fourier period and one column per week.
    pub fn write_power_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["period_weeks".to_string()];
        header.extend((0..self.n_steps).map(|n| (n + self.offset).to_string()));
        w.write_record(&header)?;
        for (j, row) in self.coeffs.iter().enumerate() {
            let mut rec = vec![self.grid.fourier_periods[j].to_string()];
            rec.extend(row.iter().map(|c| c.norm_sqr().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Cone of influence per week, as a scale and as a Fourier period.
    pub fn write_coi_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["week", "coi_scale", "coi_period"])?;
        let ff = fourier_factor(self.omega0);
        for (n, c) in self.coi.iter().enumerate() {
            w.write_record([
                (n + self.offset).to_string(),
                c.to_string(),
                (c * ff).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes the transform of `y` (already zero-mean if so desired) on `grid`.
pub fn transform(y: &[f64], grid: &ScaleGrid) -> Result<WaveletTransform> {
    let n = y.len();
    if n != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "grid built for {} steps, series has {n}",
            grid.n_steps
        )));
    }
    if n == 0 || grid.is_empty() {
        return Err(Error::Empty("transform of an empty series or grid".into()));
    }
    if let Some(t) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::param(format!("non-finite value at step {t}")));
    }
    let dt = grid.dt;

    // each scale gets the shortest power-of-two length free of wrap-around;
    // fine scales share a short FFT, only the coarsest need the long one
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, &s) in grid.scales.iter().enumerate() {
        by_len.entry(padded_len(n, s / dt)).or_default().push(j);
    }

    let mut planner = FftPlanner::<f64>::new();
    let mut coeffs: Vec<Vec<Complex64>> = vec![Vec::new(); grid.len()];
    for (len, rows) in by_len {
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut spectrum: Vec<Complex64> = y
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(len)
            .collect();
        forward.process(&mut spectrum);

        let dw = 2.0 * PI / (len as f64 * dt);
        // only 0 < ω < Nyquist carries weight: H(ω) drops the rest
        let k_top = len.div_ceil(2) - 1;
        let norm_base = psi0_at_zero() / len as f64;
        let done: Vec<(usize, Vec<Complex64>)> = rows
            .par_iter()
            .map(|&j| {
                let s = grid.scales[j];
                let norm = (2.0 * PI * s / dt).sqrt() * norm_base;
                // exp(-x²/2) underflows to zero beyond |x| ≈ 38.6
                let lo = (((OMEGA0 - RESPONSE_CUTOFF) / (s * dw)).floor().max(1.0)) as usize;
                let hi = (((OMEGA0 + RESPONSE_CUTOFF) / (s * dw)).ceil() as usize).min(k_top);
                let mut buf = vec![Complex64::new(0.0, 0.0); len];
                for k in lo..=hi {
                    let arg = s * dw * k as f64 - OMEGA0;
                    buf[k] = spectrum[k] * (norm * (-0.5 * arg * arg).exp());
                }
                inverse.process(&mut buf);
                buf.truncate(n);
                (j, buf)
            })
            .collect();
        for (j, row) in done {
            coeffs[j] = row;
        }
    }

    Ok(WaveletTransform {
        coeffs,
        grid: grid.clone(),
        coi: cone_of_influence(n, dt),
        omega0: OMEGA0,
        n_steps: n,
        dt,
        offset: 0,
    })
}

/// Time-averaged wavelet power per scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalSpectrum {
    pub power: Vec<f64>,
    /// Steps entering each scale's average.
    pub n_avg: Vec<usize>,
    pub grid: ScaleGrid,
    pub coi_masked: bool,
}

/// Mean of `|W|²` over time; with `coi_mask`, only over steps inside the cone.
/// A scale with no step inside the cone gets power 0 and `n_avg` 0.
pub fn global_spectrum(w: &WaveletTransform, coi_mask: bool) -> GlobalSpectrum {
    let (power, n_avg) = w
        .coeffs
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let (sum, count) = row
                .iter()
                .enumerate()
                .filter(|&(n, _)| !coi_mask || w.in_cone(j, n))
                .fold((0.0, 0usize), |(s, c), (_, v)| (s + v.norm_sqr(), c + 1));
            (if count > 0 { sum / count as f64 } else { 0.0 }, count)
        })
        .unzip();
    GlobalSpectrum {
        power,
        n_avg,
        grid: w.grid.clone(),
        coi_masked: coi_mask,
    }
}

/// Band-averaged power per time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleAvgPower {
    pub power: Vec<f64>,
    pub band: Band,
    pub c_delta: f64,
    pub scale_indices: Vec<usize>,
    /// Step lies inside the cone for every scale of the band.
    pub coi_valid: Vec<bool>,
    pub offset: usize,
}

/// `(dj·dt / C_δ) · Σ_band |W(s_j, n)|² / s_j` for every step `n`.
pub fn scale_avg_power(w: &WaveletTransform, band: Band) -> Result<ScaleAvgPower> {
    let grid = &w.grid;
    let idx = grid.band_indices(band)?;
    let factor = grid.dj * w.dt / C_DELTA;
    let power = (0..w.n_steps)
        .map(|n| {
            factor
                * idx
                    .iter()
                    .map(|&j| w.power(j, n) / grid.scales[j])
                    .sum::<f64>()
        })
        .collect();
    let s_top = idx.iter().map(|&j| grid.scales[j]).fold(0.0, f64::max);
    let coi_valid = w.coi.iter().map(|&c| s_top <= c).collect();
    Ok(ScaleAvgPower {
        power,
        band,
        c_delta: C_DELTA,
        scale_indices: idx,
        coi_valid,
        offset: w.offset,
    })
}

/// Empirical `C_δ` from the transform of a unit impulse.
#[derive(Clone, Debug)]
pub struct DeltaCalibration {
    pub n_steps: usize,
    /// Impulse location; the centre when `None`.
    pub position: Option<usize>,
    pub s0: f64,
    pub dj: f64,
    /// Keep only scales inside the cone at the impulse.
    pub cone_only: bool,
}

impl Default for DeltaCalibration {
    fn default() -> Self {
        DeltaCalibration {
            n_steps: 8192,
            position: None,
            // sπ ≪ ω0 at the smallest scale, so the sum converges at that end
            s0: 0.25,
            dj: 0.05,
            cone_only: false,
        }
    }
}

impl DeltaCalibration {
    pub fn run(&self) -> Result<f64> {
        let n = self.n_steps;
        if n < 8 {
            return Err(Error::SeriesTooShort { needed: 8, got: n });
        }
        if !(self.dj > 0.0 && self.s0 > 0.0) {
            return Err(Error::param("calibration needs positive s0 and dj"));
        }
        let pos = self.position.unwrap_or(n / 2);
        if pos >= n {
            return Err(Error::param(format!("impulse at {pos} outside {n} steps")));
        }
        let dt = 1.0;
        let s_max = n as f64 / 2.0;
        let j_max = ((s_max / self.s0).log2() / self.dj).floor() as usize;
        let grid = ScaleGrid::with_range(self.s0, self.dj, j_max, n, dt);
        let mut impulse = vec![0.0; n];
        impulse[pos] = 1.0;
        let w = transform(&impulse, &grid)?;
        let sum: f64 = (0..grid.len())
            .filter(|&j| !self.cone_only || w.in_cone(j, pos))
            .map(|j| w.coeffs[j][pos].re / grid.scales[j].sqrt())
            .sum();
        Ok(self.dj * dt.sqrt() / psi0_at_zero() * sum)
    }
}

/// Measured `C_δ` for resolution `dj` with a centred impulse.
pub fn reconstruct_delta(dj: f64) -> Result<f64> {
    DeltaCalibration {
        dj,
        ..Default::default()
    }
    .run()
}
