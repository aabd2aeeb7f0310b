//! How long regions keep a band significant, and which law those hold times follow.

mod fit;
mod runs;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::significance::SignificanceMask;
use crate::wavelet::{Band, ScaleAvgPower};

pub use fit::{
    fit_durations, sample_duration, DurationFit, DurationModel, Law, BETA_STARTS,
    DEFAULT_MIN_SAMPLES, MIN_BETA,
};
pub use runs::{extract_runs, runs_for, write_runs_csv, RunRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyOptions {
    /// Fit runs that touch the cone boundary as if complete.
    pub include_truncated: bool,
    pub min_samples: usize,
    pub models: Vec<DurationModel>,
}

impl Default for SurveyOptions {
    fn default() -> Self {
        SurveyOptions {
            include_truncated: false,
            min_samples: DEFAULT_MIN_SAMPLES,
            models: DurationModel::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    pub n_regions: usize,
    pub n_runs: usize,
    pub n_truncated: usize,
    pub n_fitted: usize,
    /// Share of regions whose longest run covers less than half of their
    /// cone-valid weeks; regions without any run count as short.
    pub short_longest_fraction: f64,
}

/// Fit ranking, or the reason no fit was possible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitOutcome {
    Ranked(Vec<DurationFit>),
    Failed(String),
}

impl FitOutcome {
    pub fn best(&self) -> Option<&DurationFit> {
        match self {
            FitOutcome::Ranked(f) => f.first(),
            FitOutcome::Failed(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationSurvey {
    pub band: Band,
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
    pub samples: Vec<u64>,
    pub fits: FitOutcome,
    pub summary: SurveySummary,
    pub include_truncated: bool,
}

/// Extracts runs for every `(region_id, band power, band mask)` and fits the
/// pooled durations.
pub fn duration_survey(
    regions: &[(usize, &ScaleAvgPower, &SignificanceMask)],
    band: Band,
    opts: &SurveyOptions,
) -> DurationSurvey {
    let per_region: BTreeMap<usize, (Vec<RunRecord>, usize)> = regions
        .iter()
        .map(|&(id, sap, mask)| {
            let valid = sap.coi_valid.iter().filter(|&&v| v).count();
            (id, (runs_for(id, sap, mask), valid))
        })
        .collect();

    let short = per_region
        .values()
        .filter(|(runs, valid)| {
            let longest = runs.iter().map(|r| r.duration).max().unwrap_or(0);
            2 * longest < *valid
        })
        .count();
    let runs: Vec<RunRecord> = per_region.into_values().flat_map(|(r, _)| r).collect();
    let samples: Vec<u64> = runs
        .iter()
        .filter(|r| opts.include_truncated || !r.truncated)
        .map(|r| r.duration as u64)
        .collect();
    let fits = match fit_durations(&samples, &opts.models, opts.min_samples) {
        Ok(f) => FitOutcome::Ranked(f),
        Err(e) => FitOutcome::Failed(e.to_string()),
    };
    DurationSurvey {
        band,
        summary: SurveySummary {
            n_regions: regions.len(),
            n_runs: runs.len(),
            n_truncated: runs.iter().filter(|r| r.truncated).count(),
            n_fitted: samples.len(),
            short_longest_fraction: if regions.is_empty() {
                0.0
            } else {
                short as f64 / regions.len() as f64
            },
        },
        runs,
        samples,
        fits,
        include_truncated: opts.include_truncated,
    }
}
