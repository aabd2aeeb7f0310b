use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use wavetrack::analysis::{AnalysisConfig, SurrogateMode};
use wavetrack::compose::CoiPolicy;
use wavetrack::ingest::FormatConfig;
use wavetrack::significance::{Method, DEFAULT_P_LEVEL};
use wavetrack::wavelet::Band;
use wavetrack::waves::{SurveyOptions, DEFAULT_MIN_SAMPLES};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub events: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub format: FormatConfig,
    /// Monday the first week starts on; defaults to the Monday of the first event.
    pub epoch: Option<NaiveDate>,
    pub category_filter: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub s0: f64,
    pub dj: f64,
    pub p_level: f64,
    pub bands: Vec<Band>,
    /// Minimum mean events per week for a region to be analysed.
    pub phi: f64,
    pub r_values: Vec<usize>,
    pub method: Method,
    pub replicates: usize,
    pub surrogates: SurrogateMode,
    pub coi_mask_global: bool,
    pub coi_policy: CoiPolicy,
    pub include_truncated: bool,
    pub min_samples: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            s0: 2.0,
            dj: 0.05,
            p_level: DEFAULT_P_LEVEL,
            bands: vec![Band::CIRCANNUAL],
            phi: 1.0,
            r_values: (0..=6).map(|k| 1 << k).collect(),
            method: Method::Analytic,
            replicates: 1000,
            surrogates: SurrogateMode::Ar1,
            coi_mask_global: true,
            coi_policy: CoiPolicy::Exclude,
            include_truncated: false,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn analysis_config(&self) -> AnalysisConfig {
        let a = &self.analysis;
        AnalysisConfig {
            s0: a.s0,
            dj: a.dj,
            p_level: a.p_level,
            bands: a.bands.clone(),
            method: a.method,
            replicates: a.replicates,
            surrogates: a.surrogates,
            seed: self.seed,
            coi_mask_global: a.coi_mask_global,
            coi_policy: a.coi_policy,
            survey: SurveyOptions {
                include_truncated: a.include_truncated,
                min_samples: a.min_samples,
                ..SurveyOptions::default()
            },
        }
    }

    pub fn format(&self) -> FormatConfig {
        let mut f = self.inputs.format.clone();
        if self.inputs.category_filter.is_some() {
            f.category_filter = self.inputs.category_filter.clone();
        }
        f
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let a = &self.analysis;
        if !(a.s0 >= 2.0) {
            return Err(CliError::field("analysis.s0", "must be at least 2 weeks"));
        }
        if !(a.dj > 0.0 && a.dj <= 1.0) {
            return Err(CliError::field("analysis.dj", "must lie in (0, 1]"));
        }
        if !(a.p_level > 0.0 && a.p_level < 1.0) {
            return Err(CliError::field("analysis.p_level", "must lie in (0, 1)"));
        }
        if !(a.phi > 0.0) {
            return Err(CliError::field("analysis.phi", "must be positive"));
        }
        for b in &a.bands {
            Band::new(b.lo_years, b.hi_years).map_err(|e| CliError::field("analysis.bands", e.to_string()))?;
        }
        if a.r_values.is_empty() {
            return Err(CliError::field("analysis.r_values", "must not be empty"));
        }
        if let Some(r) = a.r_values.iter().find(|r| !r.is_power_of_two()) {
            return Err(CliError::field("analysis.r_values", format!("{r} is not a power of two")));
        }
        if a.method != Method::Analytic && a.replicates < 20 {
            return Err(CliError::field("analysis.replicates", "need at least 20 surrogates"));
        }
        Ok(())
    }
}

/// A run config with its paths resolved against the config's directory.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub events: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
}

impl Loaded {
    pub fn events(&self) -> Result<&Path, CliError> {
        self.events
            .as_deref()
            .ok_or_else(|| CliError::field("inputs.events", "missing"))
    }

    pub fn weights(&self) -> Result<&Path, CliError> {
        self.weights
            .as_deref()
            .ok_or_else(|| CliError::field("inputs.weights", "missing"))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        field: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        field: None,
        message: format!("{}: {e}", path.display()),
    })
}

/// Loads a run config, applies the command-line overrides and checks that
/// every referenced input exists.
pub fn load(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Loaded, CliError> {
    let mut config: RunConfig = read_json(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |field: &'static str, p: &Option<PathBuf>| -> Result<Option<PathBuf>, CliError> {
        match p {
            None => Ok(None),
            Some(p) => {
                let full = base.join(p);
                if full.is_file() {
                    Ok(Some(full))
                } else {
                    Err(CliError::field(field, format!("{} does not exist", full.display())))
                }
            }
        }
    };
    let events = resolve("inputs.events", &config.inputs.events)?;
    let weights = resolve("inputs.weights", &config.inputs.weights)?;
    let out = match (out, &config.out) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::field("out", "missing; set it in the config or pass --out")),
    };
    Ok(Loaded {
        config,
        events,
        weights,
        out,
    })
}
