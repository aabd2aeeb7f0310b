//! Event ingestion: delimited-text parsing, weekly binning and region assignment.
//!
//! Weeks are seven-day windows counted from a start date. Unless a start is
//! supplied, the first week begins on the Monday (00:00 UTC) of the week holding
//! the earliest event.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Rect;
use crate::partition::Partition;

/// A single geolocated, timestamped offence.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub category: Option<String>,
}

impl EventRecord {
    pub fn new(timestamp: NaiveDateTime, lat: f64, lon: f64) -> Result<Self> {
        if !valid_lat_lon(lat, lon) {
            return Err(Error::param(format!(
                "coordinates out of range: lat={lat}, lon={lon}"
            )));
        }
        Ok(EventRecord {
            timestamp,
            lat,
            lon,
            category: None,
        })
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }
}

fn valid_lat_lon(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

/// Events sorted by timestamp, with their weekly time span and bounding box.
#[derive(Clone, Debug, Default)]
pub struct EventSet {
    records: Vec<EventRecord>,
    time_span: Option<(NaiveDate, NaiveDate)>,
    bbox: Option<Rect>,
    /// Rows dropped because they were malformed or out of range.
    pub rejected: usize,
    /// Rows dropped by the category filter.
    pub filtered: usize,
}

impl EventSet {
    pub fn new(mut records: Vec<EventRecord>) -> Self {
        // stable: equal timestamps keep input order
        records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
        let time_span = match (records.first(), records.last()) {
            (Some(first), Some(last)) => Some((monday_of(first.date()), monday_of(last.date()))),
            _ => None,
        };
        let bbox = Rect::bounding(records.iter().map(|r| (r.lat, r.lon)));
        EventSet {
            records,
            time_span,
            bbox,
            rejected: 0,
            filtered: 0,
        }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `[first_week_start, last_week_start]`, Monday-aligned.
    pub fn time_span(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.time_span
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.bbox
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.records.first().map(EventRecord::date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.records.last().map(EventRecord::date)
    }
}

pub fn monday_of(date: NaiveDate) -> NaiveDate {
    date - Duration::days(i64::from(date.weekday().num_days_from_monday()))
}

/// Column mapping for delimited event files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormatConfig {
    pub timestamp_column: String,
    pub lat_column: String,
    pub lon_column: String,
    pub category_column: Option<String>,
    /// chrono format string; date-only formats are read as midnight UTC.
    pub timestamp_format: String,
    /// Field delimiter. When unset, a tab in the header selects tab, else comma.
    pub delimiter: Option<char>,
    /// Keep only rows whose category is one of these labels.
    pub category_filter: Option<Vec<String>>,
}

impl Default for FormatConfig {
    fn default() -> Self {
        FormatConfig {
            timestamp_column: "date".into(),
            lat_column: "lat".into(),
            lon_column: "lon".into(),
            category_column: Some("category".into()),
            timestamp_format: "%Y-%m-%d".into(),
            delimiter: None,
            category_filter: None,
        }
    }
}

fn parse_timestamp(raw: &str, fmt: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(ts) = NaiveDateTime::parse_from_str(raw, fmt) {
        return Some(ts);
    }
    if let Ok(ts) = DateTime::parse_from_str(raw, fmt) {
        return Some(ts.naive_utc());
    }
    NaiveDate::parse_from_str(raw, fmt)
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Parses a delimited event file. Malformed rows are counted in
/// [`EventSet::rejected`] and skipped.
pub fn parse_events<R: Read>(mut source: R, format: &FormatConfig) -> Result<EventSet> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;

    let delimiter = match format.delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => return Err(Error::param(format!("non-ASCII delimiter {c:?}"))),
        None => {
            let header = text.lines().next().unwrap_or("");
            if header.contains('\t') {
                b'\t'
            } else {
                b','
            }
        }
    };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = column(&format.timestamp_column)?;
    let lat_col = column(&format.lat_column)?;
    let lon_col = column(&format.lon_column)?;
    let cat_col = match &format.category_column {
        Some(name) => match column(name) {
            Ok(idx) => Some(idx),
            // a filter without its column cannot be honoured
            Err(e) if format.category_filter.is_some() => return Err(e),
            Err(_) => None,
        },
        None => None,
    };

    let mut records = Vec::new();
    let mut rejected = 0;
    let mut filtered = 0;
    for row in reader.records() {
        let Ok(row) = row else {
            rejected += 1;
            continue;
        };
        let category = cat_col.and_then(|c| row.get(c)).map(|s| s.trim().to_string());
        if let Some(allowed) = &format.category_filter {
            match &category {
                Some(c) if allowed.iter().any(|a| a == c) => {}
                _ => {
                    filtered += 1;
                    continue;
                }
            }
        }
        let parsed = (|| {
            let ts = parse_timestamp(row.get(ts_col)?, &format.timestamp_format)?;
            let lat: f64 = row.get(lat_col)?.trim().parse().ok()?;
            let lon: f64 = row.get(lon_col)?.trim().parse().ok()?;
            let mut rec = EventRecord::new(ts, lat, lon).ok()?;
            rec.category = category.clone();
            Some(rec)
        })();
        match parsed {
            Some(rec) => records.push(rec),
            None => rejected += 1,
        }
    }

    if records.is_empty() {
        return Err(Error::NoValidRows { rejected, filtered });
    }
    let mut set = EventSet::new(records);
    set.rejected = rejected;
    set.filtered = filtered;
    Ok(set)
}

/// Writes events in the default [`FormatConfig`] layout (`date,lat,lon,category`).
pub fn write_events_csv<W: Write>(events: &EventSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "lat", "lon", "category"])?;
    for e in events.records() {
        w.write_record([
            e.timestamp.format("%Y-%m-%d").to_string(),
            e.lat.to_string(),
            e.lon.to_string(),
            e.category.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A run of whole weeks starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekWindow {
    pub start: NaiveDate,
    pub n_weeks: usize,
}

impl WeekWindow {
    /// Window `[start, end)`; the span must be a positive multiple of seven days.
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let days = (end - start).num_days();
        if days <= 0 {
            return Err(Error::InvalidWindow(format!(
                "window [{start}, {end}) is empty or inverted"
            )));
        }
        if days % 7 != 0 {
            return Err(Error::InvalidWindow(format!(
                "window [{start}, {end}) spans {days} days, not whole weeks"
            )));
        }
        Ok(WeekWindow {
            start,
            n_weeks: (days / 7) as usize,
        })
    }

    pub fn from_weeks(start: NaiveDate, n_weeks: usize) -> Result<Self> {
        if n_weeks == 0 {
            return Err(Error::InvalidWindow("window holds zero weeks".into()));
        }
        Ok(WeekWindow { start, n_weeks })
    }

    /// Smallest window starting at `epoch` (or the Monday of the first event's
    /// week) that holds the last event.
    pub fn covering(events: &EventSet, epoch: Option<NaiveDate>) -> Result<Self> {
        let (first, last) = match (events.first_date(), events.last_date()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Empty("event set has no records".into())),
        };
        let start = epoch.unwrap_or_else(|| monday_of(first));
        let days = (last - start).num_days();
        if days < 0 {
            return Err(Error::InvalidWindow(format!(
                "epoch {start} falls after the last event ({last})"
            )));
        }
        Self::from_weeks(start, (days / 7) as usize + 1)
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(7 * self.n_weeks as i64)
    }

    pub fn week_start(&self, week: usize) -> NaiveDate {
        self.start + Duration::days(7 * week as i64)
    }

    /// Zero-based week holding `date`, if inside the window.
    pub fn week_of(&self, date: NaiveDate) -> Option<usize> {
        let days = (date - self.start).num_days();
        if days < 0 {
            return None;
        }
        let week = (days / 7) as usize;
        (week < self.n_weeks).then_some(week)
    }
}

/// Weekly event counts `r(t)`, one entry per week, no gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub counts: Vec<u64>,
    pub week_start: NaiveDate,
    pub region_id: Option<usize>,
}

impl RawSeries {
    /// Time step in weeks; always one.
    pub const DT_WEEKS: f64 = 1.0;

    pub fn n_weeks(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean_rate(&self) -> f64 {
        if self.counts.is_empty() {
            0.0
        } else {
            self.total() as f64 / self.counts.len() as f64
        }
    }
}

pub fn bin_weekly(events: &EventSet, window: WeekWindow) -> Result<RawSeries> {
    if window.n_weeks == 0 {
        return Err(Error::InvalidWindow("window holds zero weeks".into()));
    }
    let mut counts = vec![0u64; window.n_weeks];
    for e in events.records() {
        if let Some(w) = window.week_of(e.date()) {
            counts[w] += 1;
        }
    }
    Ok(RawSeries {
        counts,
        week_start: window.start,
        region_id: None,
    })
}

/// Events split by region, plus those that fell outside every region.
#[derive(Clone, Debug, Default)]
pub struct RegionAssignment {
    pub regions: BTreeMap<usize, EventSet>,
    pub outside: EventSet,
}

impl RegionAssignment {
    pub fn total(&self) -> usize {
        self.regions.values().map(EventSet::len).sum::<usize>() + self.outside.len()
    }
}

/// Maps each event to the lowest-id region whose closed rectangle holds it.
/// Every region of the partition appears in the output, possibly empty.
pub fn assign_regions(events: &EventSet, partition: &Partition) -> RegionAssignment {
    let mut buckets: BTreeMap<usize, Vec<EventRecord>> = partition
        .regions()
        .iter()
        .map(|r| (r.region_id, Vec::new()))
        .collect();
    let mut outside = Vec::new();
    for e in events.records() {
        match partition.locate(e.lat, e.lon) {
            Some(id) => buckets.get_mut(&id).expect("region bucket").push(e.clone()),
            None => outside.push(e.clone()),
        }
    }
    RegionAssignment {
        regions: buckets
            .into_iter()
            .map(|(id, recs)| (id, EventSet::new(recs)))
            .collect(),
        outside: EventSet::new(outside),
    }
}

/// One record of the region-assignment export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionExport {
    pub region_id: usize,
    pub polygon: Vec<[f64; 2]>,
    pub n_events: usize,
}

pub fn region_export(assignment: &RegionAssignment, partition: &Partition) -> Vec<RegionExport> {
    partition
        .regions()
        .iter()
        .map(|r| RegionExport {
            region_id: r.region_id,
            polygon: r.rect.polygon(),
            n_events: assignment.regions.get(&r.region_id).map_or(0, EventSet::len),
        })
        .collect()
}
