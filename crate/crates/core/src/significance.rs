//! Red-noise significance tests for wavelet power.
//!
//! Under an AR(1) null with lag-1 coefficient `α` and variance `σ²`, the
//! normalised power `|W(s,n)|² / σ²` is distributed as `P_k · χ²_ν / ν`,
//! where `P_k` is the AR(1) spectrum at the scale's Fourier frequency and
//! `ν = 2` for a complex wavelet. Time- and scale-averaged power follow the
//! same law with an effective `ν` that grows with the number of averaged,
//! mutually correlated coefficients.
//!
//! The averaged-case decorrelation constants are `γ = 2.32` (time) and
//! `δj0 = 0.60` (scale) for the ω0 = 6 Morlet wavelet. Because they are
//! approximations, an empirical threshold from AR(1) surrogates is available
//! as well; see [`monte_carlo_thresholds`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::preprocess::{detrend, sample_variance, smooth, valid_range, DETREND_WINDOW, MIN_DETREND_LEN};
use crate::wavelet::{
    global_spectrum, scale_avg_power, transform, Band, GlobalSpectrum, ScaleAvgPower, ScaleGrid,
    WaveletTransform, C_DELTA,
};

pub const DEFAULT_P_LEVEL: f64 = 0.95;
pub const DOF_LOCAL: f64 = 2.0;
pub const GAMMA: f64 = 2.32;
pub const DJ0: f64 = 0.60;
pub const MAX_ALPHA: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceContext {
    pub alpha: f64,
    pub variance: f64,
    /// `P_k` at each grid scale.
    pub background: Vec<f64>,
    pub p_level: f64,
    pub dof_local: f64,
    pub gamma: f64,
    pub dj0: f64,
}

impl SignificanceContext {
    pub fn new(alpha: f64, variance: f64, grid: &ScaleGrid, p_level: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::param(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Degenerate(format!(
                "series variance must be positive, got {variance}"
            )));
        }
        if !(p_level > 0.0 && p_level < 1.0) {
            return Err(Error::param(format!("p_level must lie in (0, 1), got {p_level}")));
        }
        Ok(SignificanceContext {
            alpha,
            variance,
            background: background_spectrum(alpha, grid),
            p_level,
            dof_local: DOF_LOCAL,
            gamma: GAMMA,
            dj0: DJ0,
        })
    }

    /// Context with `α` estimated from `y` itself.
    pub fn from_series(y: &[f64], variance: f64, grid: &ScaleGrid, p_level: f64) -> Result<Self> {
        Self::new(estimate_ar1(y)?, variance, grid, p_level)
    }

    /// Same null at a different significance level.
    pub fn with_p_level(&self, p_level: f64) -> Result<Self> {
        if !(p_level > 0.0 && p_level < 1.0) {
            return Err(Error::param(format!("p_level must lie in (0, 1), got {p_level}")));
        }
        Ok(SignificanceContext {
            p_level,
            ..self.clone()
        })
    }
}

fn autocorrelation(y: &[f64], mean: f64, c0: f64, lag: usize) -> f64 {
    let ck: f64 = y
        .iter()
        .zip(&y[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    ck / c0
}

/// `α = (ρ1 + √ρ2) / 2`, or `ρ1` when `ρ2 < 0`, clamped to `[0, 0.999]`.
pub fn estimate_ar1(y: &[f64]) -> Result<f64> {
    if y.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: y.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let c0: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::Degenerate("constant series has no autocorrelation".into()));
    }
    let r1 = autocorrelation(y, mean, c0, 1);
    let r2 = autocorrelation(y, mean, c0, 2);
    Ok(ar1_statistic(r1, r2))
}

fn ar1_statistic(r1: f64, r2: f64) -> f64 {
    let alpha = if r2 < 0.0 { r1 } else { (r1 + r2.sqrt()) / 2.0 };
    alpha.clamp(0.0, MAX_ALPHA)
}

/// AR(1) spectrum `(1 − α²) / (1 + α² − 2α cos(2π f))` at frequency `f`
/// (cycles per step). Its mean over the Fourier frequencies of any length is 1.
pub fn ar1_spectrum(alpha: f64, f: f64) -> f64 {
    (1.0 - alpha * alpha) / (1.0 + alpha * alpha - 2.0 * alpha * (2.0 * std::f64::consts::PI * f).cos())
}

/// `P_k` at `k = N·dt / λ_j`, i.e. at frequency `dt / λ_j`.
pub fn background_spectrum(alpha: f64, grid: &ScaleGrid) -> Vec<f64> {
    grid.fourier_periods
        .iter()
        .map(|&p| ar1_spectrum(alpha, grid.dt / p))
        .collect()
}

/// Upper `p` quantile of `χ²_dof`.
pub fn chi2_quantile(p: f64, dof: f64) -> f64 {
    ChiSquared::new(dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

pub fn pointwise_threshold(ctx: &SignificanceContext) -> Vec<f64> {
    let q = chi2_quantile(ctx.p_level, ctx.dof_local) / ctx.dof_local;
    ctx.background.iter().map(|pk| ctx.variance * pk * q).collect()
}

/// Effective degrees of freedom of a time average over `n_avg` steps at scale `s`.
pub fn global_dof(ctx: &SignificanceContext, n_avg: usize, s: f64, dt: f64) -> f64 {
    let n = n_avg.max(1) as f64;
    ctx.dof_local * (1.0 + (n * dt / (ctx.gamma * s)).powi(2)).sqrt()
}

/// Per-scale threshold for the time-averaged spectrum. Scales with no
/// averaged step are tested as single coefficients.
pub fn global_threshold(ctx: &SignificanceContext, grid: &ScaleGrid, n_avg: &[usize]) -> Result<Vec<f64>> {
    if n_avg.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} averaging counts for {} scales",
            n_avg.len(),
            grid.len()
        )));
    }
    Ok((0..grid.len())
        .map(|j| {
            let nu = global_dof(ctx, n_avg[j], grid.scales[j], grid.dt);
            ctx.variance * ctx.background[j] * chi2_quantile(ctx.p_level, nu) / nu
        })
        .collect())
}

/// Band-average quantities shared by the threshold and its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDof {
    /// `(Σ 1/s_j)⁻¹`
    pub s_avg: f64,
    /// Geometric mid-scale `√(s_j1 · s_j2)`.
    pub s_mid: f64,
    /// `S_avg · Σ P_j / s_j`
    pub p_bar: f64,
    pub dof: f64,
}

pub fn band_dof(ctx: &SignificanceContext, grid: &ScaleGrid, idx: &[usize]) -> Result<BandDof> {
    let (&first, &last) = match (idx.first(), idx.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Empty("band holds no scale".into())),
    };
    let na = idx.len() as f64;
    let s_avg = 1.0 / idx.iter().map(|&j| 1.0 / grid.scales[j]).sum::<f64>();
    let s_mid = (grid.scales[first] * grid.scales[last]).sqrt();
    let p_bar = s_avg * idx.iter().map(|&j| ctx.background[j] / grid.scales[j]).sum::<f64>();
    let dof = ctx.dof_local * na * (s_avg / s_mid) * (1.0 + (na * grid.dj / ctx.dj0).powi(2)).sqrt();
    Ok(BandDof {
        s_avg,
        s_mid,
        p_bar,
        dof,
    })
}

/// Threshold for band-averaged power in the units of [`scale_avg_power`].
pub fn scale_avg_threshold(ctx: &SignificanceContext, grid: &ScaleGrid, idx: &[usize]) -> Result<f64> {
    let b = band_dof(ctx, grid, idx)?;
    Ok(grid.dj * grid.dt / (C_DELTA * b.s_avg)
        * ctx.variance
        * b.p_bar
        * chi2_quantile(ctx.p_level, b.dof)
        / b.dof)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Pointwise,
    Global,
    ScaleAvg,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Analytic,
    Montecarlo,
    /// Analytic masks, with the surrogate thresholds reported alongside.
    Both,
}

/// Outcome of one test.
///
/// `mask` is row-major with `rows × cols` entries: `(scales, steps)` for
/// point-wise, `(scales, 1)` for global and `(1, steps)` for band tests.
/// `threshold` has one entry per row, or one in total for band tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMask {
    pub kind: MaskKind,
    pub threshold: Vec<f64>,
    pub mask: Vec<bool>,
    pub rows: usize,
    pub cols: usize,
    pub coi_applied: bool,
}

impl SignificanceMask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn test_pointwise(w: &WaveletTransform, thresholds: &[f64], coi: bool) -> SignificanceMask {
    let (rows, cols) = (w.grid.len(), w.n_steps);
    let mut mask = Vec::with_capacity(rows * cols);
    for j in 0..rows {
        for n in 0..cols {
            mask.push(w.power(j, n) > thresholds[j] && (!coi || w.in_cone(j, n)));
        }
    }
    SignificanceMask {
        kind: MaskKind::Pointwise,
        threshold: thresholds.to_vec(),
        mask,
        rows,
        cols,
        coi_applied: coi,
    }
}

/// A scale with no step inside the cone is never significant when the
/// spectrum was cone-masked.
pub fn test_global(gs: &GlobalSpectrum, thresholds: &[f64]) -> SignificanceMask {
    let mask = gs
        .power
        .iter()
        .zip(thresholds)
        .zip(&gs.n_avg)
        .map(|((p, t), &n)| n > 0 && p > t)
        .collect();
    SignificanceMask {
        kind: MaskKind::Global,
        threshold: thresholds.to_vec(),
        mask,
        rows: gs.power.len(),
        cols: 1,
        coi_applied: gs.coi_masked,
    }
}

/// Steps outside the band's cone are never flagged when `coi` is set.
pub fn test_scale_avg(sap: &ScaleAvgPower, threshold: f64, coi: bool) -> SignificanceMask {
    let mask = sap
        .power
        .iter()
        .zip(&sap.coi_valid)
        .map(|(&p, &ok)| p > threshold && (!coi || ok))
        .collect();
    SignificanceMask {
        kind: MaskKind::ScaleAvg,
        threshold: vec![threshold],
        mask,
        rows: 1,
        cols: sap.power.len(),
        coi_applied: coi,
    }
}

/// Stationary AR(1) draw with marginal variance `variance`.
pub fn ar1_series<R: rand::Rng + ?Sized>(alpha: f64, variance: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let sd = variance.sqrt();
    let innov = Normal::new(0.0, sd * (1.0 - alpha * alpha).sqrt()).expect("finite sd");
    let mut out = Vec::with_capacity(n);
    let mut x = Normal::new(0.0, sd).expect("finite sd").sample(rng);
    for _ in 0..n {
        out.push(x);
        x = alpha * x + innov.sample(rng);
    }
    out
}

/// RNG for surrogate `replicate`: one ChaCha stream per replicate, so draws
/// do not depend on scheduling.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub(crate) fn demeaned(y: &[f64]) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    y.iter().map(|v| v - mean).collect()
}

/// The process each surrogate is drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Surrogate {
    /// AR(1) with the context's `α` and `σ²` at the analysed length.
    #[default]
    Ar1,
    /// AR(1) with these parameters at the detrended level, then detrended,
    /// smoothed and trimmed to the fully supported range like the data.
    Preprocessed { alpha: f64, variance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub replicates: usize,
    pub seed: u64,
    /// Cone-mask the surrogate global spectra.
    pub coi_mask: bool,
    pub surrogate: Surrogate,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            replicates: 1000,
            seed: 0,
            coi_mask: true,
            surrogate: Surrogate::Ar1,
        }
    }
}

/// Autocovariance at `lag` of unit-variance AR(1) noise after detrending,
/// away from the series ends.
fn detrended_ar1_autocov(alpha: f64, lag: i64) -> f64 {
    let (n1, n2) = DETREND_WINDOW;
    let w = 1.0 / (n2 - n1) as f64;
    let taps: Vec<(i64, f64)> = (n1..n2).map(|k| (k, if k == 0 { 1.0 - w } else { -w })).collect();
    taps.iter()
        .flat_map(|&(a, ca)| {
            taps.iter()
                .map(move |&(b, cb)| ca * cb * alpha.powi((lag + a - b).unsigned_abs() as i32))
        })
        .sum()
}

impl Surrogate {
    /// Preprocessed surrogate whose detrended stage matches `d` in variance
    /// and in the statistic of [`estimate_ar1`].
    pub fn matched_to_detrended(d: &[f64]) -> Result<Self> {
        let target = estimate_ar1(d)?;
        let stat = |a: f64| {
            let g0 = detrended_ar1_autocov(a, 0);
            ar1_statistic(detrended_ar1_autocov(a, 1) / g0, detrended_ar1_autocov(a, 2) / g0)
        };
        let (mut lo, mut hi) = (0.0, MAX_ALPHA);
        let alpha = if stat(lo) >= target {
            lo
        } else if stat(hi) <= target {
            hi
        } else {
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if stat(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        Ok(Surrogate::Preprocessed {
            alpha,
            variance: sample_variance(d) / detrended_ar1_autocov(alpha, 0),
        })
    }
}

fn draw_surrogate(ctx: &SignificanceContext, n: usize, surrogate: Surrogate, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    match surrogate {
        Surrogate::Ar1 => Ok(demeaned(&ar1_series(ctx.alpha, ctx.variance, n, rng))),
        Surrogate::Preprocessed { alpha, variance } => {
            // the fully supported range keeps N − 52 steps
            let full = n + MIN_DETREND_LEN - 1;
            let y = smooth(&detrend(&ar1_series(alpha, variance, full, rng))?)?;
            let range = valid_range(full).expect("long enough by construction");
            Ok(demeaned(&y[range]))
        }
    }
}

/// Empirical `p_level` quantiles of the null statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McThresholds {
    /// Per scale, from the mid-series coefficient of each surrogate.
    pub pointwise: Vec<f64>,
    pub global: Vec<f64>,
    /// Pooled over every cone-valid step of every surrogate; `None` without
    /// a band or when the band never enters the cone.
    pub scale_avg: Option<f64>,
    pub replicates: usize,
}

fn quantile(values: Vec<f64>, p: f64) -> f64 {
    Data::new(values).quantile(p)
}

/// Thresholds from `mc.replicates` AR(1) surrogates, each demeaned and
/// transformed on `grid` exactly like the data.
pub fn monte_carlo_thresholds(
    ctx: &SignificanceContext,
    grid: &ScaleGrid,
    band: Option<Band>,
    mc: &MonteCarlo,
) -> Result<McThresholds> {
    if let Surrogate::Preprocessed { alpha, variance } = mc.surrogate {
        if !(0.0..1.0).contains(&alpha) || !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::param(format!(
                "surrogate needs alpha in [0, 1) and positive variance, got {alpha}, {variance}"
            )));
        }
    }
    if mc.replicates < 20 {
        return Err(Error::TooFewSamples {
            needed: 20,
            got: mc.replicates,
        });
    }
    let n = grid.n_steps;
    let mid = n / 2;
    struct Draw {
        point: Vec<f64>,
        global: Vec<f64>,
        band: Vec<f64>,
    }
    let draws: Vec<Draw> = (0..mc.replicates)
        .into_par_iter()
        .map(|r| -> Result<Draw> {
            let mut rng = replicate_rng(mc.seed, r as u64);
            let y = draw_surrogate(ctx, n, mc.surrogate, &mut rng)?;
            let w = transform(&y, grid)?;
            let point = (0..grid.len()).map(|j| w.power(j, mid)).collect();
            let gs = global_spectrum(&w, mc.coi_mask);
            let band = match band {
                Some(b) => {
                    let sap = scale_avg_power(&w, b)?;
                    sap.power
                        .iter()
                        .zip(&sap.coi_valid)
                        .filter(|(_, &ok)| ok)
                        .map(|(&p, _)| p)
                        .collect()
                }
                None => Vec::new(),
            };
            Ok(Draw {
                point,
                global: gs.power,
                band,
            })
        })
        .collect::<Result<_>>()?;

    let pointwise = (0..grid.len())
        .map(|j| quantile(draws.iter().map(|d| d.point[j]).collect(), ctx.p_level))
        .collect();
    let global = (0..grid.len())
        .map(|j| quantile(draws.iter().map(|d| d.global[j]).collect(), ctx.p_level))
        .collect();
    // a band entirely outside the cone has no null sample to calibrate on
    let pooled: Vec<f64> = draws.iter().flat_map(|d| d.band.iter().copied()).collect();
    let scale_avg = (!pooled.is_empty()).then(|| quantile(pooled, ctx.p_level));
    Ok(McThresholds {
        pointwise,
        global,
        scale_avg,
        replicates: mc.replicates,
    })
}

/// Threshold report written next to each region's results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub alpha: f64,
    pub variance: f64,
    pub p_level: f64,
    pub method: Method,
    pub periods_weeks: Vec<f64>,
    pub per_scale_thresholds: Vec<f64>,
    pub global_thresholds: Vec<f64>,
    pub scale_avg_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<McThresholds>,
}
