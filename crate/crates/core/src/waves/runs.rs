use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::significance::SignificanceMask;
use crate::wavelet::{Band, ScaleAvgPower};

/// A maximal stretch of consecutive significant weeks in one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub region_id: usize,
    pub band: Band,
    pub start_week: usize,
    pub end_week: usize,
    pub duration: usize,
    /// The run touches the first or last cone-valid week, so its true length
    /// is unknown.
    pub truncated: bool,
}

/// Runs of `mask` restricted to weeks where `coi_valid` holds. Indices are
/// shifted by `offset` into window weeks.
pub fn extract_runs(
    region_id: usize,
    band: Band,
    mask: &[bool],
    coi_valid: &[bool],
    offset: usize,
) -> Vec<RunRecord> {
    debug_assert_eq!(mask.len(), coi_valid.len());
    let first_valid = coi_valid.iter().position(|&v| v);
    let last_valid = coi_valid.iter().rposition(|&v| v);
    let (Some(lo), Some(hi)) = (first_valid, last_valid) else {
        return Vec::new();
    };
    let mut runs = Vec::new();
    let mut t = 0;
    while t < mask.len() {
        if !(mask[t] && coi_valid[t]) {
            t += 1;
            continue;
        }
        let start = t;
        while t < mask.len() && mask[t] && coi_valid[t] {
            t += 1;
        }
        let end = t - 1;
        runs.push(RunRecord {
            region_id,
            band,
            start_week: start + offset,
            end_week: end + offset,
            duration: end - start + 1,
            truncated: start == lo || end == hi,
        });
    }
    runs
}

/// Runs of a band mask over the band's own cone.
pub fn runs_for(region_id: usize, sap: &ScaleAvgPower, mask: &SignificanceMask) -> Vec<RunRecord> {
    extract_runs(region_id, sap.band, &mask.mask, &sap.coi_valid, sap.offset)
}

pub fn write_runs_csv<W: Write>(runs: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region_id", "start_week", "end_week", "duration", "truncated"])?;
    for r in runs {
        w.write_record([
            r.region_id.to_string(),
            r.start_week.to_string(),
            r.end_week.to_string(),
            r.duration.to_string(),
            r.truncated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
