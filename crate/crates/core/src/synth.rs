//! Synthetic cities: AR(1) regional noise plus planted periodic waves.
//!
//! A region's series lives on the log scale the preprocessing works on,
//! `x(t) = log10(r(t) + 1)`:
//!
//! ```text
//! x(t) = baseline + AR1(α, σ)(t) + Σ_waves active(t) · A · sin(2πt / period + φ(region))
//! ```
//!
//! with `t = 1…n_weeks`. Event emission inverts the log transform
//! (`r = round(10^x − 1)`, floored at 0) and scatters each week's events
//! uniformly over the days of the week and the region's rectangle.
//!
//! Every random draw derives from the config seed: region `i` uses
//! `seed ⊕ i` with one ChaCha stream for noise and another for event
//! placement; rotating schedules use `seed` on their own stream.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Rect;
use crate::ingest::{EventRecord, EventSet, RawSeries};
use crate::partition::{Partition, PopulationWeights, WeightedPoint};
use crate::significance::ar1_series;
use crate::waves::{sample_duration, Law};

const NOISE_STREAM: u64 = 0;
const EVENT_STREAM: u64 = 1;
const SCHEDULE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    #[default]
    Series,
    Events,
}

/// One region carrying a wave over the 1-based inclusive weeks
/// `start_week..=end_week`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub region_id: usize,
    pub start_week: usize,
    pub end_week: usize,
}

impl ScheduleEntry {
    pub fn len(&self) -> usize {
        self.end_week + 1 - self.start_week
    }

    pub fn is_empty(&self) -> bool {
        self.end_week < self.start_week
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    pub period_weeks: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
}

impl WaveSpec {
    /// The wave held by `regions` for the whole series.
    pub fn stationary(period_weeks: f64, amplitude: f64, regions: impl IntoIterator<Item = usize>, n_weeks: usize) -> Self {
        WaveSpec {
            period_weeks,
            amplitude,
            schedule: regions
                .into_iter()
                .map(|region_id| ScheduleEntry {
                    region_id,
                    start_week: 1,
                    end_week: n_weeks,
                })
                .collect(),
        }
    }
}

/// Hold times `ceil(X)` with `P(X > x) = exp(−(x/τ)^β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldLaw {
    pub tau: f64,
    pub beta: f64,
}

/// A wave carried by exactly `active_regions` regions at every week, with
/// membership passing on as holds expire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotatingWave {
    pub period_weeks: f64,
    pub amplitude: f64,
    pub active_regions: usize,
    pub hold: HoldLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub n_weeks: usize,
    pub alpha: f64,
    /// Marginal standard deviation of the AR(1) noise.
    pub noise_sigma: f64,
    /// Mean log level; 1.0 is about nine events per region-week.
    #[serde(default)]
    pub baseline: f64,
    #[serde(default)]
    pub waves: Vec<WaveSpec>,
    #[serde(default)]
    pub rotating: Vec<RotatingWave>,
    pub seed: u64,
    #[serde(default)]
    pub emit: Emit,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_bbox")]
    pub bbox: Rect,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date")
}

fn default_bbox() -> Rect {
    Rect::new(41.6, 42.0, -87.9, -87.5)
}

impl SynthConfig {
    /// Plain AR(1) city without waves.
    pub fn null(n_regions: usize, n_weeks: usize, alpha: f64, noise_sigma: f64, seed: u64) -> Self {
        SynthConfig {
            n_regions,
            n_weeks,
            alpha,
            noise_sigma,
            baseline: 0.0,
            waves: Vec::new(),
            rotating: Vec::new(),
            seed,
            emit: Emit::Series,
            start_date: default_start(),
            bbox: default_bbox(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 || self.n_weeks == 0 {
            return Err(Error::param("n_regions and n_weeks must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::param(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma must be finite and non-negative"));
        }
        for (i, w) in self.waves.iter().enumerate() {
            check_wave(w.period_weeks, w.amplitude, &format!("waves[{i}]"))?;
            for e in &w.schedule {
                if e.region_id >= self.n_regions {
                    return Err(Error::param(format!(
                        "waves[{i}] schedules region {} of {}",
                        e.region_id, self.n_regions
                    )));
                }
                if e.start_week < 1 || e.end_week > self.n_weeks || e.is_empty() {
                    return Err(Error::param(format!(
                        "waves[{i}] schedule ({}, {}) outside weeks 1..={}",
                        e.start_week, e.end_week, self.n_weeks
                    )));
                }
            }
        }
        for (i, w) in self.rotating.iter().enumerate() {
            check_wave(w.period_weeks, w.amplitude, &format!("rotating[{i}]"))?;
            if w.active_regions == 0 || w.active_regions >= self.n_regions {
                return Err(Error::param(format!(
                    "rotating[{i}] needs 0 < active_regions < n_regions"
                )));
            }
            if !(w.hold.tau > 0.0 && w.hold.beta > 0.0 && w.hold.beta <= 1.0) {
                return Err(Error::param(format!(
                    "rotating[{i}] hold law needs tau > 0 and 0 < beta <= 1"
                )));
            }
        }
        Ok(())
    }

    /// Explicit waves plus the schedules drawn for the rotating ones.
    pub fn expanded_waves(&self) -> Result<Vec<WaveSpec>> {
        self.validate()?;
        let mut out = self.waves.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SCHEDULE_STREAM);
        for w in &self.rotating {
            out.push(WaveSpec {
                period_weeks: w.period_weeks,
                amplitude: w.amplitude,
                schedule: rotating_schedule(self.n_regions, self.n_weeks, w.active_regions, w.hold, &mut rng),
            });
        }
        Ok(out)
    }
}

fn check_wave(period: f64, amplitude: f64, what: &str) -> Result<()> {
    if !(period >= 2.0 && period.is_finite()) {
        return Err(Error::param(format!("{what}: period must be at least 2 weeks")));
    }
    if !amplitude.is_finite() {
        return Err(Error::param(format!("{what}: amplitude must be finite")));
    }
    Ok(())
}

/// `k` of `n_regions` regions hold the wave each week. A region keeps it for
/// a drawn hold time, then hands it to a region that is neither active nor
/// just released.
pub fn rotating_schedule<R: Rng + ?Sized>(
    n_regions: usize,
    n_weeks: usize,
    k: usize,
    hold: HoldLaw,
    rng: &mut R,
) -> Vec<ScheduleEntry> {
    let law = Law::StretchedExponential {
        tau: hold.tau,
        beta: hold.beta,
    };
    let mut schedule = Vec::new();
    // (region, first week, last week)
    let mut active: Vec<(usize, usize, usize)> = Vec::with_capacity(k);
    let all: Vec<usize> = (0..n_regions).collect();
    let first: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
    for region in first {
        let d = sample_duration(&law, rng) as usize;
        active.push((region, 1, d));
    }
    for week in 1..=n_weeks {
        let ending: Vec<usize> = (0..active.len()).filter(|&i| active[i].2 < week).collect();
        if ending.is_empty() {
            continue;
        }
        let busy: BTreeSet<usize> = active.iter().map(|a| a.0).collect();
        let free: Vec<usize> = all.iter().copied().filter(|r| !busy.contains(r)).collect();
        let picks: Vec<usize> = free.choose_multiple(rng, ending.len()).copied().collect();
        for (&slot, region) in ending.iter().zip(picks) {
            let (r, s, e) = active[slot];
            schedule.push(ScheduleEntry {
                region_id: r,
                start_week: s,
                end_week: e,
            });
            let d = sample_duration(&law, rng) as usize;
            active[slot] = (region, week, week + d - 1);
        }
    }
    for (r, s, e) in active {
        schedule.push(ScheduleEntry {
            region_id: r,
            start_week: s,
            end_week: e.min(n_weeks),
        });
    }
    schedule.sort_by_key(|e| (e.start_week, e.region_id));
    schedule
}

/// Per-region phase, spread evenly around the circle by the golden ratio.
pub fn phase(region_id: usize) -> f64 {
    const GOLDEN: f64 = 0.618_033_988_749_894_8;
    2.0 * PI * (region_id as f64 * GOLDEN).fract()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `active[region][week − 1]`: any wave present.
    pub active: Vec<Vec<bool>>,
    /// Scheduled hold lengths per region, clipped to the series.
    pub holds: Vec<Vec<usize>>,
    pub waves: Vec<WaveSpec>,
}

impl GroundTruth {
    pub fn from_waves(waves: Vec<WaveSpec>, n_regions: usize, n_weeks: usize) -> Self {
        let mut active = vec![vec![false; n_weeks]; n_regions];
        let mut holds = vec![Vec::new(); n_regions];
        for w in &waves {
            for e in &w.schedule {
                for t in e.start_week..=e.end_week {
                    active[e.region_id][t - 1] = true;
                }
                holds[e.region_id].push(e.len());
            }
        }
        GroundTruth {
            active,
            holds,
            waves,
        }
    }
}

fn region_rng(seed: u64, region_id: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ region_id as u64);
    rng.set_stream(stream);
    rng
}

/// Log-scale series of one region for already expanded waves.
pub fn region_series(cfg: &SynthConfig, waves: &[WaveSpec], region_id: usize) -> Vec<f64> {
    let n = cfg.n_weeks;
    let mut x = if cfg.noise_sigma > 0.0 {
        let mut rng = region_rng(cfg.seed, region_id, NOISE_STREAM);
        ar1_series(cfg.alpha, cfg.noise_sigma * cfg.noise_sigma, n, &mut rng)
    } else {
        vec![0.0; n]
    };
    for v in x.iter_mut() {
        *v += cfg.baseline;
    }
    let ph = phase(region_id);
    for w in waves {
        for e in w.schedule.iter().filter(|e| e.region_id == region_id) {
            for t in e.start_week..=e.end_week {
                x[t - 1] += w.amplitude * (2.0 * PI * t as f64 / w.period_weeks + ph).sin();
            }
        }
    }
    x
}

/// Series and active-week row of one region.
pub fn gen_region_series(cfg: &SynthConfig, region_id: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    if region_id >= cfg.n_regions {
        return Err(Error::param(format!(
            "region {region_id} outside 0..{}",
            cfg.n_regions
        )));
    }
    let waves = cfg.expanded_waves()?;
    let y = region_series(cfg, &waves, region_id);
    let mut truth = GroundTruth::from_waves(waves, cfg.n_regions, cfg.n_weeks);
    Ok((y, truth.active.swap_remove(region_id)))
}

/// Every region's series with the ground truth.
pub fn gen_city(cfg: &SynthConfig) -> Result<(Vec<Vec<f64>>, GroundTruth)> {
    let waves = cfg.expanded_waves()?;
    let series = (0..cfg.n_regions)
        .into_par_iter()
        .map(|r| region_series(cfg, &waves, r))
        .collect();
    Ok((series, GroundTruth::from_waves(waves, cfg.n_regions, cfg.n_weeks)))
}

/// Inverse of `log10(r + 1)`, rounded and floored at zero.
pub fn to_counts(x: &[f64]) -> Vec<u64> {
    x.iter()
        .map(|&v| (10f64.powf(v) - 1.0).round().max(0.0) as u64)
        .collect()
}

/// Events for every region of `partition` (region ids `0..n_regions`),
/// together with the weekly counts they were drawn from.
pub fn gen_event_stream(cfg: &SynthConfig, partition: &Partition) -> Result<(EventSet, Vec<RawSeries>, GroundTruth)> {
    if partition.r() != cfg.n_regions {
        return Err(Error::GridMismatch(format!(
            "partition has {} regions, config {}",
            partition.r(),
            cfg.n_regions
        )));
    }
    let (series, truth) = gen_city(cfg)?;
    let per_region: Vec<(Vec<EventRecord>, RawSeries)> = partition
        .regions()
        .par_iter()
        .map(|region| -> Result<_> {
            let id = region.region_id;
            let x = series.get(id).ok_or_else(|| {
                Error::GridMismatch(format!("partition region id {id} outside 0..{}", cfg.n_regions))
            })?;
            let counts = to_counts(x);
            let mut rng = region_rng(cfg.seed, id, EVENT_STREAM);
            let rect = region.rect;
            let mut events = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
            for (week, &c) in counts.iter().enumerate() {
                let monday = cfg.start_date + Duration::weeks(week as i64);
                for _ in 0..c {
                    let day = monday + Duration::days(rng.random_range(0..7));
                    let lat = uniform_in(&mut rng, rect.lat_min, rect.lat_max);
                    let lon = uniform_in(&mut rng, rect.lon_min, rect.lon_max);
                    let ts = day.and_hms_opt(12, 0, 0).expect("valid time");
                    events.push(EventRecord::new(ts, lat, lon)?);
                }
            }
            Ok((
                events,
                RawSeries {
                    counts,
                    week_start: cfg.start_date,
                    region_id: Some(id),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let mut all = Vec::new();
    let mut raws = Vec::new();
    for (e, r) in per_region {
        all.extend(e);
        raws.push(r);
    }
    Ok((EventSet::new(all), raws, truth))
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Unit-weight population on an `n_lat × n_lon` grid of cell centres.
pub fn uniform_population(bbox: Rect, n_lat: usize, n_lon: usize) -> Result<PopulationWeights> {
    let dlat = (bbox.lat_max - bbox.lat_min) / n_lat as f64;
    let dlon = (bbox.lon_max - bbox.lon_min) / n_lon as f64;
    let points = (0..n_lat)
        .flat_map(|i| {
            (0..n_lon).map(move |j| WeightedPoint {
                lat: bbox.lat_min + (i as f64 + 0.5) * dlat,
                lon: bbox.lon_min + (j as f64 + 0.5) * dlon,
                weight: 1.0,
            })
        })
        .collect();
    PopulationWeights::new(points)
}

/// Columns `region_id,week,x,count`, weeks 1-based.
pub fn write_series_csv<W: Write>(series: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region_id", "week", "x", "count"])?;
    for (id, x) in series.iter().enumerate() {
        for (t, (v, c)) in x.iter().zip(to_counts(x)).enumerate() {
            w.write_record([id.to_string(), (t + 1).to_string(), v.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
