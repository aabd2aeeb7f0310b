//! City-level aggregation of per-region significance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::significance::{MaskKind, SignificanceMask};
use crate::wavelet::{Band, GlobalSpectrum, ScaleAvgPower};

/// Per-scale share of regions whose global spectrum is significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedSpectrum {
    pub periods_weeks: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_regions: usize,
    pub fraction: Vec<f64>,
}

impl ComposedSpectrum {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["period_weeks", "count", "fraction"])?;
        for ((p, c), f) in self.periods_weeks.iter().zip(&self.counts).zip(&self.fraction) {
            w.write_record([p.to_string(), c.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn composed_spectrum(regions: &[(&GlobalSpectrum, &SignificanceMask)]) -> Result<ComposedSpectrum> {
    let (first, _) = regions
        .first()
        .ok_or_else(|| Error::Empty("no regions to compose".into()))?;
    let grid = &first.grid;
    let mut counts = vec![0usize; grid.len()];
    for (gs, mask) in regions {
        if gs.grid != *grid {
            return Err(Error::GridMismatch("regions use different scale grids".into()));
        }
        if mask.kind != MaskKind::Global || mask.mask.len() != grid.len() {
            return Err(Error::GridMismatch(
                "composed spectrum needs one global mask entry per scale".into(),
            ));
        }
        for (c, &m) in counts.iter_mut().zip(&mask.mask) {
            *c += m as usize;
        }
    }
    let n = regions.len();
    Ok(ComposedSpectrum {
        periods_weeks: grid.fourier_periods.clone(),
        fraction: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        counts,
        n_regions: n,
    })
}

/// How weeks outside a region's cone of influence enter the weekly share.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoiPolicy {
    /// Dropped from numerator and denominator.
    #[default]
    Exclude,
    /// Kept in the denominator as insignificant.
    CountAsInsignificant,
}

/// Per-week share of regions with significant band power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedBandSeries {
    pub band: Band,
    /// Week index (within the binning window) of each entry.
    pub weeks: Vec<usize>,
    pub counts: Vec<usize>,
    pub valid_regions: Vec<usize>,
    /// `None` where no region contributes.
    pub fraction: Vec<Option<f64>>,
    pub n_regions: usize,
    pub coi_policy: CoiPolicy,
}

impl ComposedBandSeries {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["week", "count", "valid_regions", "fraction"])?;
        for i in 0..self.weeks.len() {
            w.write_record([
                self.weeks[i].to_string(),
                self.counts[i].to_string(),
                self.valid_regions[i].to_string(),
                self.fraction[i].map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fractions of the weeks where at least one region contributes.
    pub fn defined(&self) -> Vec<f64> {
        self.fraction.iter().flatten().copied().collect()
    }
}

pub fn composed_band_series(
    regions: &[(&ScaleAvgPower, &SignificanceMask)],
    policy: CoiPolicy,
) -> Result<ComposedBandSeries> {
    let (first, _) = regions
        .first()
        .ok_or_else(|| Error::Empty("no regions to compose".into()))?;
    let len = first.power.len();
    let mut counts = vec![0usize; len];
    let mut valid = vec![0usize; len];
    for (sap, mask) in regions {
        if sap.band != first.band || sap.power.len() != len || sap.offset != first.offset {
            return Err(Error::GridMismatch(
                "regions differ in band, length or week offset".into(),
            ));
        }
        if mask.kind != MaskKind::ScaleAvg || mask.mask.len() != len {
            return Err(Error::GridMismatch(
                "composed band series needs one band mask entry per week".into(),
            ));
        }
        for t in 0..len {
            let counted = policy == CoiPolicy::CountAsInsignificant || sap.coi_valid[t];
            if counted {
                valid[t] += 1;
                counts[t] += (mask.mask[t] && sap.coi_valid[t]) as usize;
            }
        }
    }
    Ok(ComposedBandSeries {
        band: first.band,
        weeks: (0..len).map(|t| t + first.offset).collect(),
        fraction: counts
            .iter()
            .zip(&valid)
            .map(|(&c, &v)| (v > 0).then(|| c as f64 / v as f64))
            .collect(),
        counts,
        valid_regions: valid,
        n_regions: regions.len(),
        coi_policy: policy,
    })
}
