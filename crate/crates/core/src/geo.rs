//! Axis-aligned latitude/longitude rectangles.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lat,
    Lon,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Lat => Axis::Lon,
            Axis::Lon => Axis::Lat,
        }
    }
}

/// Closed rectangle in degrees. A point on an edge is contained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Rect {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Self {
        Rect {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        }
    }

    /// Smallest rectangle holding every `(lat, lon)` point, `None` for no points.
    pub fn bounding<I>(points: I) -> Option<Rect>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut it = points.into_iter();
        let (lat, lon) = it.next()?;
        let mut r = Rect::new(lat, lat, lon, lon);
        for (lat, lon) in it {
            r.lat_min = r.lat_min.min(lat);
            r.lat_max = r.lat_max.max(lat);
            r.lon_min = r.lon_min.min(lon);
            r.lon_max = r.lon_max.max(lon);
        }
        Some(r)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn extent(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Lat => self.lat_max - self.lat_min,
            Axis::Lon => self.lon_max - self.lon_min,
        }
    }

    /// Splits at `at` along `axis` into the low and high halves.
    pub fn split(&self, axis: Axis, at: f64) -> (Rect, Rect) {
        let (mut lo, mut hi) = (*self, *self);
        match axis {
            Axis::Lat => {
                lo.lat_max = at;
                hi.lat_min = at;
            }
            Axis::Lon => {
                lo.lon_max = at;
                hi.lon_min = at;
            }
        }
        (lo, hi)
    }

    /// Closed `[lon, lat]` ring, counter-clockwise from the south-west corner.
    pub fn polygon(&self) -> Vec<[f64; 2]> {
        vec![
            [self.lon_min, self.lat_min],
            [self.lon_max, self.lat_min],
            [self.lon_max, self.lat_max],
            [self.lon_min, self.lat_max],
            [self.lon_min, self.lat_min],
        ]
    }
}

pub(crate) fn coord(lat: f64, lon: f64, axis: Axis) -> f64 {
    match axis {
        Axis::Lat => lat,
        Axis::Lon => lon,
    }
}
