//! Per-region and city-wide analysis: filtered series → transform →
//! significance → composed statistics and run durations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{composed_band_series, composed_spectrum, CoiPolicy, ComposedBandSeries, ComposedSpectrum};
use crate::error::{Error, Result};
use crate::preprocess::{detrend, sample_variance, smooth, valid_range, ProcessedSeries};
use crate::significance::{
    demeaned, estimate_ar1, global_threshold, monte_carlo_thresholds, pointwise_threshold, scale_avg_threshold,
    test_global, test_scale_avg, Method, MonteCarlo, SignificanceContext, SignificanceMask, Surrogate,
    ThresholdReport, DEFAULT_P_LEVEL,
};
use crate::wavelet::{build_grid, global_spectrum, scale_avg_power, transform, Band, GlobalSpectrum, ScaleAvgPower};
use crate::waves::{duration_survey, DurationSurvey, SurveyOptions};

/// Which surrogates calibrate the Monte-Carlo thresholds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// AR(1) matched to the analysed series.
    #[default]
    Ar1,
    /// AR(1) whose detrended form matches the detrended series, preprocessed
    /// like the data.
    /// Bare segments without a detrended stage fall back to `Ar1`.
    Preprocessed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub s0: f64,
    pub dj: f64,
    pub p_level: f64,
    pub bands: Vec<Band>,
    pub method: Method,
    /// Surrogates per region for the Monte-Carlo thresholds.
    pub replicates: usize,
    pub surrogates: SurrogateMode,
    pub seed: u64,
    /// Average the global spectrum inside the cone only.
    pub coi_mask_global: bool,
    pub coi_policy: CoiPolicy,
    pub survey: SurveyOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            s0: 2.0,
            dj: 0.05,
            p_level: DEFAULT_P_LEVEL,
            bands: vec![Band::CIRCANNUAL],
            method: Method::Analytic,
            replicates: 1000,
            surrogates: SurrogateMode::Ar1,
            seed: 0,
            coi_mask_global: true,
            coi_policy: CoiPolicy::Exclude,
            survey: SurveyOptions::default(),
        }
    }
}

/// Band power with its significance mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub power: ScaleAvgPower,
    pub mask: SignificanceMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionAnalysis {
    pub region_id: usize,
    /// Week index of the first analysed step.
    pub offset: usize,
    pub context: SignificanceContext,
    pub global: GlobalSpectrum,
    pub global_mask: SignificanceMask,
    pub bands: Vec<BandResult>,
    pub report: ThresholdReport,
}

/// Analyses an already filtered segment whose first step is week `offset`.
/// The segment is demeaned before the transform; `variance` is the null's σ².
pub fn analyze_segment(
    region_id: usize,
    offset: usize,
    segment: &[f64],
    variance: f64,
    cfg: &AnalysisConfig,
) -> Result<RegionAnalysis> {
    analyze_segment_with(region_id, offset, segment, variance, cfg, Surrogate::Ar1)
}

/// [`analyze_segment`] with an explicit surrogate process for the
/// Monte-Carlo thresholds.
pub fn analyze_segment_with(
    region_id: usize,
    offset: usize,
    segment: &[f64],
    variance: f64,
    cfg: &AnalysisConfig,
    surrogate: Surrogate,
) -> Result<RegionAnalysis> {
    let grid = build_grid(segment.len(), cfg.s0, cfg.dj)?;
    let y = demeaned(segment);
    let ctx = SignificanceContext::new(estimate_ar1(&y)?, variance, &grid, cfg.p_level)?;
    let w = transform(&y, &grid)?.with_offset(offset);

    let global = global_spectrum(&w, cfg.coi_mask_global);
    let pointwise = pointwise_threshold(&ctx);
    let global_thr = global_threshold(&ctx, &grid, &global.n_avg)?;

    let band_powers = cfg
        .bands
        .iter()
        .map(|&b| {
            let idx = grid.band_indices(b)?;
            Ok((scale_avg_power(&w, b)?, scale_avg_threshold(&ctx, &grid, &idx)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mc = match cfg.method {
        Method::Analytic => None,
        Method::Montecarlo | Method::Both => {
            let mc = MonteCarlo {
                replicates: cfg.replicates,
                seed: cfg.seed ^ region_id as u64,
                coi_mask: cfg.coi_mask_global,
                surrogate,
            };
            // one surrogate set per band: the global and point-wise parts repeat
            let per_band = if cfg.bands.is_empty() {
                vec![monte_carlo_thresholds(&ctx, &grid, None, &mc)?]
            } else {
                cfg.bands
                    .iter()
                    .map(|&b| monte_carlo_thresholds(&ctx, &grid, Some(b), &mc))
                    .collect::<Result<Vec<_>>>()?
            };
            Some(per_band)
        }
    };

    let use_mc = cfg.method == Method::Montecarlo;
    let mc_first = mc.as_ref().map(|v| &v[0]);
    let global_used = match (use_mc, mc_first) {
        (true, Some(m)) => m.global.clone(),
        _ => global_thr.clone(),
    };
    let global_mask = test_global(&global, &global_used);
    let bands = band_powers
        .into_iter()
        .enumerate()
        .map(|(i, (power, thr))| {
            let used = match (use_mc, mc.as_ref()) {
                (true, Some(m)) => m[i].scale_avg.unwrap_or(thr),
                _ => thr,
            };
            BandResult {
                mask: test_scale_avg(&power, used, true),
                power,
            }
        })
        .collect::<Vec<_>>();

    let report = ThresholdReport {
        alpha: ctx.alpha,
        variance: ctx.variance,
        p_level: ctx.p_level,
        method: cfg.method,
        periods_weeks: grid.fourier_periods.clone(),
        per_scale_thresholds: match (use_mc, mc_first) {
            (true, Some(m)) => m.pointwise.clone(),
            _ => pointwise,
        },
        global_thresholds: global_used,
        scale_avg_threshold: bands.first().map(|b| b.mask.threshold[0]),
        montecarlo: mc.and_then(|v| v.into_iter().next()),
    };
    Ok(RegionAnalysis {
        region_id,
        offset,
        context: ctx,
        global,
        global_mask,
        bands,
        report,
    })
}

/// Surrogate process for a series whose detrended stage over the valid
/// range is `d`.
fn surrogate_for(d: &[f64], cfg: &AnalysisConfig) -> Result<Surrogate> {
    Ok(match (cfg.surrogates, cfg.method) {
        (SurrogateMode::Preprocessed, Method::Montecarlo | Method::Both) => Surrogate::matched_to_detrended(d)?,
        _ => Surrogate::Ar1,
    })
}

pub fn analyze_processed(ps: &ProcessedSeries, region_id: usize, cfg: &AnalysisConfig) -> Result<RegionAnalysis> {
    let (offset, seg) = ps.segment();
    let surrogate = surrogate_for(&ps.d[ps.valid_range()], cfg)?;
    analyze_segment_with(region_id, offset, seg, ps.variance, cfg, surrogate)
}

/// Runs the detrend and smoothing stages on a log-scale series `x` and
/// analyses the fully supported segment.
pub fn analyze_log_series(x: &[f64], region_id: usize, cfg: &AnalysisConfig) -> Result<RegionAnalysis> {
    let d = detrend(x)?;
    let y = smooth(&d)?;
    let range = valid_range(y.len()).expect("detrend checked the length");
    let seg = &y[range.clone()];
    let surrogate = surrogate_for(&d[range.clone()], cfg)?;
    analyze_segment_with(region_id, *range.start(), seg, sample_variance(seg), cfg, surrogate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub composed: ComposedBandSeries,
    pub survey: DurationSurvey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityAnalysis {
    pub regions: Vec<RegionAnalysis>,
    pub composed: ComposedSpectrum,
    pub bands: Vec<BandSummary>,
}

/// Composes already analysed regions.
pub fn compose_city(regions: Vec<RegionAnalysis>, cfg: &AnalysisConfig) -> Result<CityAnalysis> {
    if regions.is_empty() {
        return Err(Error::Empty("no region passed the analysis filters".into()));
    }
    let pairs: Vec<_> = regions.iter().map(|r| (&r.global, &r.global_mask)).collect();
    let composed = composed_spectrum(&pairs)?;
    let bands = cfg
        .bands
        .iter()
        .enumerate()
        .map(|(i, &band)| {
            let pairs: Vec<_> = regions
                .iter()
                .map(|r| (&r.bands[i].power, &r.bands[i].mask))
                .collect();
            let composed = composed_band_series(&pairs, cfg.coi_policy)?;
            let per_region: Vec<_> = regions
                .iter()
                .map(|r| (r.region_id, &r.bands[i].power, &r.bands[i].mask))
                .collect();
            Ok(BandSummary {
                composed,
                survey: duration_survey(&per_region, band, &cfg.survey),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CityAnalysis {
        regions,
        composed,
        bands,
    })
}

/// Analyses log-scale series `(region_id, x)` in parallel and composes them.
pub fn analyze_city_log(series: &[(usize, Vec<f64>)], cfg: &AnalysisConfig) -> Result<CityAnalysis> {
    let regions = series
        .par_iter()
        .map(|(id, x)| analyze_log_series(x, *id, cfg))
        .collect::<Result<Vec<_>>>()?;
    compose_city(regions, cfg)
}
