//! Equal-population spatial partitioning.
//!
//! A city is cut into `r = 2^k` rectangles by recursive weighted-median
//! bisection of resident-population points. The root cut runs across the
//! longest extent of the points; each level below alternates the axis.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{coord, Axis, Rect};
use crate::ingest::{assign_regions, bin_weekly, EventSet, WeekWindow};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub lat: f64,
    pub lon: f64,
    pub weight: f64,
}

/// Resident population as weighted points (e.g. census block centroids).
#[derive(Clone, Debug)]
pub struct PopulationWeights {
    points: Vec<WeightedPoint>,
    total: f64,
}

impl PopulationWeights {
    pub fn new(points: Vec<WeightedPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("no population points".into()));
        }
        if let Some(p) = points.iter().find(|p| !(p.weight > 0.0 && p.weight.is_finite())) {
            return Err(Error::param(format!(
                "population weight must be positive, got {}",
                p.weight
            )));
        }
        let total = points.iter().map(|p| p.weight).sum();
        Ok(PopulationWeights { points, total })
    }

    pub fn points(&self) -> &[WeightedPoint] {
        &self.points
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn bbox(&self) -> Rect {
        Rect::bounding(self.points.iter().map(|p| (p.lat, p.lon))).expect("non-empty")
    }

    fn distinct_locations(&self) -> usize {
        self.points
            .iter()
            .map(|p| (p.lat.to_bits(), p.lon.to_bits()))
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Reads a delimited `lat,lon,weight` file with a header row.
pub fn parse_weights<R: Read>(source: R) -> Result<PopulationWeights> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (lat_c, lon_c, w_c) = (column("lat")?, column("lon")?, column("weight")?);
    let mut points = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::param(format!("bad numeric field in weights row {row:?}")))
        };
        points.push(WeightedPoint {
            lat: field(lat_c)?,
            lon: field(lon_c)?,
            weight: field(w_c)?,
        });
    }
    PopulationWeights::new(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: usize,
    #[serde(flatten)]
    pub rect: Rect,
    pub population: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    regions: Vec<Region>,
}

impl Partition {
    pub fn from_regions(mut regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Empty("partition without regions".into()));
        }
        regions.sort_by_key(|r| r.region_id);
        Ok(Partition { regions })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn r(&self) -> usize {
        self.regions.len()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.population).collect()
    }

    /// max/min region population.
    pub fn imbalance(&self) -> f64 {
        let pops = self.populations();
        let max = pops.iter().cloned().fold(f64::MIN, f64::max);
        let min = pops.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// Lowest-id region whose closed rectangle holds the point.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<usize> {
        self.regions
            .iter()
            .find(|r| r.rect.contains(lat, lon))
            .map(|r| r.region_id)
    }
}

/// Splits the population into `r` rectangles of near-equal weight.
///
/// `r` must be a power of two. Cuts fall midway between adjacent distinct
/// coordinates, so no population point ever lies on a region boundary.
pub fn split(weights: &PopulationWeights, r: usize) -> Result<Partition> {
    if r == 0 || !r.is_power_of_two() {
        return Err(Error::param(format!("region count {r} is not a power of two")));
    }
    let distinct = weights.distinct_locations();
    if r > distinct {
        return Err(Error::Degenerate(format!(
            "{r} regions requested but only {distinct} distinct point locations"
        )));
    }
    let bbox = weights.bbox();
    let root_axis = if bbox.extent(Axis::Lat) > bbox.extent(Axis::Lon) {
        Axis::Lat
    } else {
        Axis::Lon
    };
    let idx: Vec<usize> = (0..weights.points.len()).collect();
    let mut regions = Vec::with_capacity(r);
    bisect(&weights.points, idx, bbox, root_axis, r, &mut regions)?;
    for (id, region) in regions.iter_mut().enumerate() {
        region.region_id = id;
    }
    Partition::from_regions(regions)
}

fn bisect(
    points: &[WeightedPoint],
    mut idx: Vec<usize>,
    rect: Rect,
    axis: Axis,
    leaves: usize,
    out: &mut Vec<Region>,
) -> Result<()> {
    if leaves == 1 {
        out.push(Region {
            region_id: 0,
            rect,
            population: idx.iter().map(|&i| points[i].weight).sum(),
        });
        return Ok(());
    }
    let half = leaves / 2;
    let cut = best_cut(points, &mut idx, axis, half)
        .map(|c| (axis, c))
        .or_else(|| best_cut(points, &mut idx, axis.other(), half).map(|c| (axis.other(), c)));
    let Some((axis, (pos, at))) = cut else {
        return Err(Error::Degenerate(format!(
            "cannot split {} points into {leaves} regions",
            idx.len()
        )));
    };
    let right = idx.split_off(pos);
    let (lo, hi) = rect.split(axis, at);
    bisect(points, idx, lo, axis.other(), half, out)?;
    bisect(points, right, hi, axis.other(), half, out)
}

/// Sorts `idx` along `axis` and returns `(split position, cut coordinate)` of
/// the weighted-median cut leaving at least `min_side` points on each side.
fn best_cut(
    points: &[WeightedPoint],
    idx: &mut [usize],
    axis: Axis,
    min_side: usize,
) -> Option<(usize, f64)> {
    let key = |i: usize| coord(points[i].lat, points[i].lon, axis);
    let tie = |i: usize| coord(points[i].lat, points[i].lon, axis.other());
    idx.sort_by(|&a, &b| {
        key(a)
            .partial_cmp(&key(b))
            .unwrap_or(Ordering::Equal)
            .then(tie(a).partial_cmp(&tie(b)).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let total: f64 = idx.iter().map(|&i| points[i].weight).sum();
    let target = total / 2.0;

    let mut best: Option<(f64, usize, f64)> = None;
    let mut cum = 0.0;
    for k in 0..idx.len() - 1 {
        cum += points[idx[k]].weight;
        let (a, b) = (key(idx[k]), key(idx[k + 1]));
        let left_n = k + 1;
        if a == b || left_n < min_side || idx.len() - left_n < min_side {
            continue;
        }
        let err = (cum - target).abs();
        if best.is_none_or(|(e, _, _)| err < e) {
            best = Some((err, left_n, 0.5 * (a + b)));
        }
    }
    best.map(|(_, pos, at)| (pos, at))
}

/// `R(r)` table of the region-count sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// r → number of regions whose mean weekly count reaches `phi`.
    pub table: BTreeMap<usize, usize>,
    pub phi: f64,
    /// Region count maximizing the table; smallest r on ties.
    pub r_u: usize,
}

/// Mean events per week of each region for a given partition.
pub fn region_rates(events: &EventSet, partition: &Partition, window: WeekWindow) -> Result<Vec<f64>> {
    let assignment = assign_regions(events, partition);
    assignment
        .regions
        .values()
        .map(|set| bin_weekly(set, window).map(|s| s.mean_rate()))
        .collect()
}

/// Counts, for each candidate `r`, the regions with mean rate ≥ `phi`.
pub fn region_sweep(
    events: &EventSet,
    weights: &PopulationWeights,
    phi: f64,
    r_values: &[usize],
) -> Result<SweepResult> {
    if events.is_empty() {
        return Err(Error::Empty("region sweep over an empty event set".into()));
    }
    if !(phi > 0.0) {
        return Err(Error::param(format!("phi must be positive, got {phi}")));
    }
    if r_values.is_empty() {
        return Err(Error::param("no region counts to sweep"));
    }
    let window = WeekWindow::covering(events, None)?;
    let counts: Vec<(usize, usize)> = r_values
        .par_iter()
        .map(|&r| {
            let partition = split(weights, r)?;
            let rates = region_rates(events, &partition, window)?;
            Ok((r, rates.iter().filter(|&&rate| rate >= phi).count()))
        })
        .collect::<Result<_>>()?;
    let table: BTreeMap<usize, usize> = counts.into_iter().collect();
    let best = table.values().copied().max().unwrap_or(0);
    let r_u = table
        .iter()
        .find(|(_, &v)| v == best)
        .map(|(&r, _)| r)
        .expect("non-empty table");
    Ok(SweepResult { table, phi, r_u })
}
