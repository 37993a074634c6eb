//! Base stations, coverage, copy configurations and the joint-transmission
//! channel.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest network a [`Configuration`] bitmask can describe.
pub const MAX_STATIONS: usize = 64;

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub id: usize,
    pub position: Point,
    pub range: f64,
}

/// Set of base stations holding a given content, one bit per station.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(u64);

impl Configuration {
    pub const EMPTY: Configuration = Configuration(0);

    pub const fn from_mask(mask: u64) -> Self {
        Configuration(mask)
    }

    pub fn single(b: usize) -> Self {
        Configuration(1u64 << b)
    }

    pub fn from_ids<I: IntoIterator<Item = usize>>(ids: I) -> Self {
        ids.into_iter()
            .fold(Configuration::EMPTY, |acc, b| acc.with(b))
    }

    pub const fn mask(self) -> u64 {
        self.0
    }

    /// `x ⊕ e(b)`: add a copy at `b` (no-op if present).
    #[must_use]
    pub const fn with(self, b: usize) -> Self {
        Configuration(self.0 | (1u64 << b))
    }

    /// `x ⊖ e(b)`: drop the copy at `b` (no-op if absent).
    #[must_use]
    pub const fn without(self, b: usize) -> Self {
        Configuration(self.0 & !(1u64 << b))
    }

    pub const fn contains(self, b: usize) -> bool {
        self.0 >> b & 1 == 1
    }

    /// Number of copies.
    pub const fn weight(self) -> u32 {
        self.0.count_ones()
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[must_use]
    pub const fn intersect(self, other: Configuration) -> Self {
        Configuration(self.0 & other.0)
    }

    #[must_use]
    pub const fn union(self, other: Configuration) -> Self {
        Configuration(self.0 | other.0)
    }

    #[must_use]
    pub const fn difference(self, other: Configuration) -> Self {
        Configuration(self.0 & !other.0)
    }

    /// `self <= other` componentwise.
    pub const fn is_subset_of(self, other: Configuration) -> bool {
        self.0 & !other.0 == 0
    }

    /// Station ids present, ascending.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(b)
            }
        })
    }

    /// All `2^stations` configurations in mask order.
    pub fn all(stations: usize) -> impl Iterator<Item = Configuration> {
        assert!(stations < MAX_STATIONS, "cannot enumerate 2^{stations} states");
        (0..1u64 << stations).map(Configuration)
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    stations: Vec<BaseStation>,
    region: Region,
}

impl Topology {
    /// Builds a topology. When `region` is `None` the bounding box of the
    /// stations grown by the largest range on every side is used.
    pub fn new(stations: Vec<BaseStation>, region: Option<Region>) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::config("stations", "at least one base station is required"));
        }
        if stations.len() > MAX_STATIONS {
            return Err(Error::config(
                "stations",
                format!("at most {MAX_STATIONS} stations are supported, got {}", stations.len()),
            ));
        }
        let mut seen = vec![false; stations.len()];
        for s in &stations {
            if s.id >= stations.len() || seen[s.id] {
                return Err(Error::config(
                    "stations.id",
                    format!("ids must be unique and contiguous from 0, found {}", s.id),
                ));
            }
            seen[s.id] = true;
            if !(s.range > 0.0 && s.range.is_finite()) {
                return Err(Error::config(
                    format!("stations[{}].range_m", s.id),
                    "range must be positive",
                ));
            }
        }
        let mut stations = stations;
        stations.sort_by_key(|s| s.id);

        let region = match region {
            Some(r) => r,
            None => {
                let pad = stations.iter().map(|s| s.range).fold(0.0, f64::max);
                let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
                let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for s in &stations {
                    x0 = x0.min(s.position.x);
                    y0 = y0.min(s.position.y);
                    x1 = x1.max(s.position.x);
                    y1 = y1.max(s.position.y);
                }
                Region {
                    x0: x0 - pad,
                    y0: y0 - pad,
                    x1: x1 + pad,
                    y1: y1 + pad,
                }
            }
        };
        if !(region.width() > 0.0 && region.height() > 0.0) {
            return Err(Error::config("region", "region must have positive area"));
        }
        if let Some(s) = stations.iter().find(|s| !region.contains(&s.position)) {
            return Err(Error::config(
                "region",
                format!("station {} lies outside the region", s.id),
            ));
        }
        Ok(Topology { stations, region })
    }

    /// The bundled ten-station urban layout (range 150 m).
    pub fn berlin() -> Self {
        TopologyFile::parse(BERLIN_JSON)
            .and_then(TopologyFile::into_topology)
            .expect("bundled layout is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: TopologyFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        file.into_topology()
    }

    pub fn stations(&self) -> &[BaseStation] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Stations whose disk contains `point` (the user's `I_u`).
    pub fn coverage_set(&self, point: &Point) -> Configuration {
        let mut mask = 0u64;
        for s in &self.stations {
            let (dx, dy) = (s.position.x - point.x, s.position.y - point.y);
            if dx * dx + dy * dy <= s.range * s.range {
                mask |= 1u64 << s.id;
            }
        }
        Configuration(mask)
    }

    /// Closest station among those covering `point`.
    pub fn nearest_covering(&self, point: &Point) -> Option<usize> {
        self.stations
            .iter()
            .filter(|s| s.position.distance(point) <= s.range)
            .min_by(|a, b| {
                a.position
                    .distance(point)
                    .total_cmp(&b.position.distance(point))
                    .then(a.id.cmp(&b.id))
            })
            .map(|s| s.id)
    }

    /// Largest number of stations covering a single point, sampled on a
    /// `resolution x resolution` grid.
    pub fn max_overlap(&self, resolution: usize) -> u32 {
        self.grid_points(resolution)
            .map(|p| self.coverage_set(&p).weight())
            .max()
            .unwrap_or(0)
    }

    /// Cell centers of a regular grid over the region.
    pub fn grid_points(&self, resolution: usize) -> impl Iterator<Item = Point> + '_ {
        let r = self.region;
        let dx = r.width() / resolution as f64;
        let dy = r.height() / resolution as f64;
        (0..resolution).flat_map(move |i| {
            (0..resolution).map(move |j| {
                Point::new(r.x0 + (i as f64 + 0.5) * dx, r.y0 + (j as f64 + 0.5) * dy)
            })
        })
    }
}

const BERLIN_JSON: &str = include_str!("../data/berlin.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub range_m: f64,
}

/// On-disk topology: a bare station array or an object with an optional
/// region override.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyFile {
    Stations(Vec<StationRecord>),
    WithRegion {
        stations: Vec<StationRecord>,
        #[serde(default)]
        region: Option<Region>,
    },
}

impl TopologyFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<inline>".into(),
            source,
        })
    }

    pub fn into_topology(self) -> Result<Topology> {
        let (records, region) = match self {
            TopologyFile::Stations(s) => (s, None),
            TopologyFile::WithRegion { stations, region } => (stations, region),
        };
        let stations = records
            .into_iter()
            .map(|r| BaseStation {
                id: r.id,
                position: Point::new(r.x_m, r.y_m),
                range: r.range_m,
            })
            .collect();
        Topology::new(stations, region)
    }
}

/// Per-link SNR distribution (linear scale), identical for all links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnrModel {
    Constant { linear: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl SnrModel {
    pub fn from_db(db: f64) -> Self {
        SnrModel::Constant {
            linear: 10f64.powf(db / 10.0),
        }
    }

    pub fn min(&self) -> f64 {
        match *self {
            SnrModel::Constant { linear } => linear,
            SnrModel::Uniform { lo, .. } => lo,
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            SnrModel::Constant { linear } => linear,
            SnrModel::Uniform { hi, .. } => hi,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SnrModel::Constant { .. })
    }

    /// Draws one link SNR.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrModel::Constant { linear } => linear,
            SnrModel::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Radio and content parameters for coordinated transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub bandwidth_hz: f64,
    pub snr: SnrModel,
    pub backhaul_delay_s: f64,
    pub content_size_bits: f64,
}

impl Default for ChannelModel {
    /// 5 MHz, 10 dB, 100 ms backhaul, 1 Mbit contents.
    fn default() -> Self {
        ChannelModel {
            bandwidth_hz: 5.0e6,
            snr: SnrModel::from_db(10.0),
            backhaul_delay_s: 0.1,
            content_size_bits: 1.0e6,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        positive("W_hz", self.bandwidth_hz)?;
        positive("d_backhaul_s", self.backhaul_delay_s)?;
        positive("M_bits", self.content_size_bits)?;
        match self.snr {
            SnrModel::Constant { linear } => positive("snr", linear)?,
            SnrModel::Uniform { lo, hi } => {
                if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::config("snr", "uniform SNR needs 0 <= lo < hi"));
                }
            }
        }
        Ok(())
    }

    /// `W log2(1 + snr_sum)` in bits per second.
    pub fn capacity(&self, snr_sum: f64) -> f64 {
        aggregate_capacity(self, snr_sum)
    }

    /// Time to push one content at the aggregate capacity; infinite when the
    /// capacity is zero.
    pub fn transmission_delay(&self, snr_sum: f64) -> f64 {
        let c = self.capacity(snr_sum);
        if c > 0.0 {
            self.content_size_bits / c
        } else {
            f64::INFINITY
        }
    }
}

/// Aggregate capacity of cooperating links, `W log2(1 + Σ h)`.
pub fn aggregate_capacity(channel: &ChannelModel, snr_sum: f64) -> f64 {
    debug_assert!(snr_sum >= 0.0);
    channel.bandwidth_hz * snr_sum.ln_1p() / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_topology() -> Topology {
        let stations = (0..3)
            .map(|i| BaseStation {
                id: i,
                position: Point::new(100.0 * i as f64, 0.0),
                range: 60.0,
            })
            .collect();
        Topology::new(stations, None).unwrap()
    }

    #[test]
    fn station_position_is_covered() {
        let t = line_topology();
        for s in t.stations() {
            assert!(t.coverage_set(&s.position).contains(s.id));
        }
    }

    #[test]
    fn far_point_is_uncovered() {
        let t = line_topology();
        assert!(t.coverage_set(&Point::new(50.0, 59.0)).is_empty());
        assert_eq!(t.nearest_covering(&Point::new(50.0, 59.0)), None);
    }

    #[test]
    fn default_region_pads_by_max_range() {
        let r = *line_topology().region();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (-60.0, 260.0, -60.0, 60.0));
    }

    #[test]
    fn rejects_bad_ids_and_ranges() {
        let bad = vec![BaseStation {
            id: 1,
            position: Point::default(),
            range: 1.0,
        }];
        assert!(Topology::new(bad, None).is_err());
        let bad = vec![BaseStation {
            id: 0,
            position: Point::default(),
            range: 0.0,
        }];
        assert!(Topology::new(bad, None).is_err());
    }

    #[test]
    fn configuration_algebra() {
        let x = Configuration::from_ids([0, 2]);
        assert_eq!(x.with(2), x);
        assert_eq!(x.without(1), x);
        assert_eq!(x.with(1).without(1), x.without(1));
        assert_eq!(x.with(1).weight(), 3);
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(Configuration::all(3).count(), 8);
    }

    #[test]
    fn capacity_values() {
        let ch = ChannelModel::default();
        assert_eq!(aggregate_capacity(&ch, 0.0), 0.0);
        assert!(ch.transmission_delay(0.0).is_infinite());
        // 5e6 * log2(11)
        let c10 = aggregate_capacity(&ch, 10.0);
        assert!((c10 - 1.729_715_809_318_649e7).abs() < 1.0, "{c10}");
        assert!((ch.transmission_delay(10.0) - 0.057_812_965).abs() < 1e-8);
        let c20 = aggregate_capacity(&ch, 20.0);
        assert!((c20 - 2.196_158_711_389_380e7).abs() < 1.0, "{c20}");
        assert!((ch.transmission_delay(20.0) - 0.045_534_050).abs() < 1e-8);
    }

    #[test]
    fn snr_from_db() {
        assert!((SnrModel::from_db(10.0).min() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn topology_file_forms() {
        let bare = r#"[{"id":0,"x_m":0,"y_m":0,"range_m":10}]"#;
        let t = TopologyFile::parse(bare).unwrap().into_topology().unwrap();
        assert_eq!(t.len(), 1);
        let with_region = r#"{"stations":[{"id":0,"x_m":1,"y_m":1,"range_m":10}],
            "region":{"x0":0,"y0":0,"x1":2,"y1":2}}"#;
        let t = TopologyFile::parse(with_region)
            .unwrap()
            .into_topology()
            .unwrap();
        assert_eq!(t.region().area(), 4.0);
    }

    #[test]
    fn berlin_layout_loads() {
        let t = Topology::berlin();
        assert_eq!(t.len(), 10);
        assert!(t.stations().iter().all(|s| s.range == 150.0));
    }
}
