//! Domain vocabulary shared by every stage of the pipeline: sensor records,
//! voyages, route geometry and the small enumerations that label them.
//!
//! Angles are stored in degrees throughout and only converted to radians
//! inside trigonometric kernels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for all great-circle distances, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(p: LatLon, q: LatLon) -> f64 {
    let phi1 = p.lat.to_radians();
    let phi2 = q.lat.to_radians();
    let dphi = (q.lat - p.lat).to_radians();
    let dlambda = (q.lon - p.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Initial bearing from `p` towards `q`, degrees in `[0, 360)`.
pub fn initial_bearing(p: LatLon, q: LatLon) -> f64 {
    let phi1 = p.lat.to_radians();
    let phi2 = q.lat.to_radians();
    let dlambda = (q.lon - p.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    normalize_degrees(y.atan2(x).to_degrees())
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoyageId(pub u32);

impl fmt::Display for VoyageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for VoyageId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim().parse().map(VoyageId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Southbound,
    Northbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteSegment {
    North,
    Middle,
    South,
    Direct,
}

impl RouteSegment {
    pub const ALL: [RouteSegment; 4] = [
        RouteSegment::North,
        RouteSegment::Middle,
        RouteSegment::South,
        RouteSegment::Direct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RouteSegment::North => "North",
            RouteSegment::Middle => "Middle",
            RouteSegment::South => "South",
            RouteSegment::Direct => "Direct",
        }
    }
}

impl FromStr for RouteSegment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RouteSegment::ALL
            .into_iter()
            .find(|seg| seg.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown route segment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeedMode {
    Cruising,
    Maneuvering,
}

impl SpeedMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeedMode::Cruising => "Cruising",
            SpeedMode::Maneuvering => "Maneuvering",
        }
    }
}

impl FromStr for SpeedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cruising" => Ok(SpeedMode::Cruising),
            "maneuvering" => Ok(SpeedMode::Maneuvering),
            _ => Err(Error::Invalid(format!("unknown speed mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeatherState {
    Calm,
    Moderate,
    Rough,
}

impl WeatherState {
    pub const ALL: [WeatherState; 3] = [WeatherState::Calm, WeatherState::Moderate, WeatherState::Rough];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherState::Calm => "Calm",
            WeatherState::Moderate => "Moderate",
            WeatherState::Rough => "Rough",
        }
    }
}

impl FromStr for WeatherState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeatherState::ALL
            .into_iter()
            .find(|w| w.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown weather state {s:?}")))
    }
}

/// One resampled sensor observation.
///
/// Weather fields that have not been observed or fused yet are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    /// Speed over ground, m/s.
    pub sog: f64,
    pub heading: f64,
    /// Liters per hour.
    pub fuel_rate: f64,
    pub wind_speed: f64,
    /// Direction the wind blows from.
    pub wind_dir: f64,
    pub wave_height: f64,
    pub wave_dir: f64,
    pub current_speed: f64,
    /// Direction the current flows towards.
    pub current_dir: f64,
    pub voyage_id: Option<VoyageId>,
    pub segment: Option<RouteSegment>,
    pub speed_mode: Option<SpeedMode>,
    // Parsed when present, never used by the models.
    pub pitch: Option<f64>,
    pub roll: Option<f64>,
    pub torque: Option<f64>,
}

impl Record {
    /// A record with the required navigation fields set and all weather unset.
    pub fn new(timestamp: f64, pos: LatLon, sog: f64, heading: f64, fuel_rate: f64) -> Self {
        Self {
            timestamp,
            lat: pos.lat,
            lon: pos.lon,
            sog,
            heading,
            fuel_rate,
            wind_speed: f64::NAN,
            wind_dir: f64::NAN,
            wave_height: f64::NAN,
            wave_dir: f64::NAN,
            current_speed: f64::NAN,
            current_dir: f64::NAN,
            voyage_id: None,
            segment: None,
            speed_mode: None,
            pitch: None,
            roll: None,
            torque: None,
        }
    }

    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }

    pub fn has_weather(&self) -> bool {
        [
            self.wind_speed,
            self.wind_dir,
            self.wave_height,
            self.current_speed,
            self.current_dir,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Checks the value-range invariants. Unset (`NaN`) weather fields pass.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Invalid(format!("record at t={}: {what} = {v}", self.timestamp)));
        if !self.timestamp.is_finite() {
            return bad("timestamp", self.timestamp);
        }
        if !self.position().is_valid() {
            return Err(Error::Invalid(format!(
                "record at t={}: position ({}, {}) out of range",
                self.timestamp, self.lat, self.lon
            )));
        }
        for (name, v) in [("sog", self.sog), ("fuel_rate", self.fuel_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, v);
            }
        }
        if !(0.0..360.0).contains(&self.heading) {
            return bad("heading", self.heading);
        }
        for (name, v) in [
            ("wind_speed", self.wind_speed),
            ("wave_height", self.wave_height),
            ("current_speed", self.current_speed),
        ] {
            if !v.is_nan() && !(v >= 0.0 && v.is_finite()) {
                return bad(name, v);
            }
        }
        for (name, v) in [
            ("wind_dir", self.wind_dir),
            ("wave_dir", self.wave_dir),
            ("current_dir", self.current_dir),
        ] {
            if !v.is_nan() && !(0.0..360.0).contains(&v) {
                return bad(name, v);
            }
        }
        Ok(())
    }
}

/// Circular geofence around a port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geofence {
    pub center: LatLon,
    pub radius_m: f64,
}

impl Geofence {
    pub fn contains(&self, p: LatLon) -> bool {
        haversine_distance(self.center, p) <= self.radius_m
    }
}

/// Axis-aligned latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLonBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl LatLonBox {
    pub fn contains(&self, p: LatLon) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }
}

/// Fixed-route geometry and the thresholds used to label records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    /// Southern port; departures from here are northbound.
    pub port_a: Geofence,
    /// Northern port.
    pub port_b: Geofence,
    /// `[south_max, north_min]`: records below the first breakpoint are South,
    /// at or above the second are North, Middle in between.
    pub segment_bounds: [f64; 2],
    /// Records inside this box are classified Direct regardless of latitude.
    pub direct_region: Option<LatLonBox>,
    pub cruising_sog_threshold: f64,
    /// Minimum time in seconds a vessel must spend inside a port before a
    /// departure counts as the start of a voyage.
    pub min_port_dwell: f64,
}

impl RouteConfig {
    pub fn validate(&self) -> Result<()> {
        let dist = haversine_distance(self.port_a.center, self.port_b.center);
        if dist <= self.port_a.radius_m + self.port_b.radius_m {
            return Err(Error::Invalid("port geofences overlap".into()));
        }
        if !(self.segment_bounds[0] < self.segment_bounds[1]) {
            return Err(Error::Invalid(format!(
                "segment breakpoints must be strictly increasing, got {:?}",
                self.segment_bounds
            )));
        }
        if !(self.cruising_sog_threshold > 0.0) {
            return Err(Error::Invalid("cruising_sog_threshold must be positive".into()));
        }
        if !(self.min_port_dwell >= 0.0) {
            return Err(Error::Invalid("min_port_dwell must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ordered records of one port-to-port crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VoyageRepr", into = "VoyageRepr")]
pub struct Voyage {
    id: VoyageId,
    direction: Direction,
    records: Vec<Record>,
    totals: Option<crate::efficiency::VoyageTotals>,
    eff_score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct VoyageRepr {
    id: VoyageId,
    direction: Direction,
    records: Vec<Record>,
    totals: Option<crate::efficiency::VoyageTotals>,
    eff_score: Option<f64>,
}

impl TryFrom<VoyageRepr> for Voyage {
    type Error = Error;

    fn try_from(r: VoyageRepr) -> Result<Self> {
        let mut v = Voyage::new(r.id, r.direction, r.records)?;
        v.totals = r.totals;
        v.eff_score = r.eff_score;
        Ok(v)
    }
}

impl From<Voyage> for VoyageRepr {
    fn from(v: Voyage) -> Self {
        VoyageRepr {
            id: v.id,
            direction: v.direction,
            records: v.records,
            totals: v.totals,
            eff_score: v.eff_score,
        }
    }
}

impl Voyage {
    /// Validates and stamps `id` onto every record whose `voyage_id` is unset.
    pub fn new(id: VoyageId, direction: Direction, mut records: Vec<Record>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::Invalid(format!(
                "voyage {id} needs at least 2 records, got {}",
                records.len()
            )));
        }
        for (i, r) in records.iter_mut().enumerate() {
            match r.voyage_id {
                None => r.voyage_id = Some(id),
                Some(other) if other != id => {
                    return Err(Error::Invalid(format!(
                        "voyage {id}: record {i} carries voyage id {other}"
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(i) = records.windows(2).position(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::Invalid(format!(
                "voyage {id}: timestamps not strictly increasing at record {}",
                i + 1
            )));
        }
        Ok(Self {
            id,
            direction,
            records,
            totals: None,
            eff_score: None,
        })
    }

    pub fn id(&self) -> VoyageId {
        self.id
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> Option<&crate::efficiency::VoyageTotals> {
        self.totals.as_ref()
    }

    pub fn eff_score(&self) -> Option<f64> {
        self.eff_score
    }

    pub fn start_time(&self) -> f64 {
        self.records[0].timestamp
    }

    pub fn end_time(&self) -> f64 {
        self.records[self.records.len() - 1].timestamp
    }

    pub fn with_totals(mut self, totals: crate::efficiency::VoyageTotals) -> Self {
        self.totals = Some(totals);
        self
    }

    pub fn with_eff_score(mut self, score: f64) -> Self {
        self.eff_score = Some(score);
        self
    }

    /// Rebuilds the voyage with each record passed through `f`. Timestamps and
    /// voyage ids must be left intact.
    pub fn map_records(self, f: impl FnMut(Record) -> Record) -> Result<Self> {
        let records: Vec<Record> = self.records.into_iter().map(f).collect();
        let mut v = Voyage::new(self.id, self.direction, records)?;
        v.totals = self.totals;
        v.eff_score = self.eff_score;
        Ok(v)
    }

    pub fn try_map_records(self, f: impl FnMut((usize, Record)) -> Result<Record>) -> Result<Self> {
        let records = self.records.into_iter().enumerate().map(f).collect::<Result<Vec<_>>>()?;
        let mut v = Voyage::new(self.id, self.direction, records)?;
        v.totals = self.totals;
        v.eff_score = self.eff_score;
        Ok(v)
    }
}

/// Cumulative along-track distance of every record, normalized to `[0, 1]`.
pub fn along_track_fraction(voyage: &Voyage) -> Result<Vec<f64>> {
    let recs = voyage.records();
    let mut cum = Vec::with_capacity(recs.len());
    let mut total = 0.0;
    cum.push(0.0);
    for w in recs.windows(2) {
        total += haversine_distance(w[0].position(), w[1].position());
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateVoyage(voyage.id().to_string()));
    }
    let n = cum.len();
    for c in cum.iter_mut() {
        *c /= total;
    }
    cum[n - 1] = 1.0;
    Ok(cum)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Measured,
    Predicted(String),
}

/// Per-step SOG aligned to along-track positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub voyage_id: VoyageId,
    pub positions: Vec<f64>,
    pub sog: Vec<f64>,
    pub provenance: Provenance,
}

impl SpeedProfile {
    pub fn new(voyage_id: VoyageId, positions: Vec<f64>, sog: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if positions.len() != sog.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: sog.len(),
            });
        }
        if positions.is_empty() {
            return Err(Error::Empty("speed profile has no steps".into()));
        }
        if positions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("profile positions must lie in [0, 1]".into()));
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("profile positions must be strictly increasing".into()));
        }
        Ok(Self {
            voyage_id,
            positions,
            sog,
            provenance,
        })
    }

    /// Measured profile of a voyage.
    pub fn measured(voyage: &Voyage) -> Result<Self> {
        let positions = along_track_fraction(voyage)?;
        let sog = voyage.records().iter().map(|r| r.sog).collect();
        SpeedProfile::new(voyage.id(), positions, sog, Provenance::Measured)
    }

    pub fn len(&self) -> usize {
        self.sog.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sog.is_empty()
    }

    /// Clamps every value into `[lo, hi]`.
    pub fn clipped(mut self, lo: f64, hi: f64) -> Self {
        for v in &mut self.sog {
            *v = v.clamp(lo, hi);
        }
        self
    }
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, clamped at the ends.
/// `xs` must be non-decreasing.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let span = xs[hi] - xs[lo];
    if span <= 0.0 {
        return ys[lo];
    }
    let f = (x - xs[lo]) / span;
    ys[lo] * (1.0 - f) + ys[hi] * f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, lat: f64, lon: f64) -> Record {
        Record::new(t, LatLon::new(lat, lon), 3.0, 0.0, 10.0)
    }

    #[test]
    fn haversine_identity_and_antipodal() {
        let p = LatLon::new(57.0, 11.9);
        assert_eq!(haversine_distance(p, p), 0.0);
        let d = haversine_distance(LatLon::new(0.0, 0.0), LatLon::new(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-6);
        assert!((d - 20_015_086.796).abs() < 1.0);
    }

    #[test]
    fn haversine_matches_spherical_law_of_cosines() {
        let p = LatLon::new(57.60, 11.90);
        let q = LatLon::new(57.65, 11.90);
        let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
        let dl = (q.lon - p.lon).to_radians();
        let cos_c = phi1.sin() * phi2.sin() + phi1.cos() * phi2.cos() * dl.cos();
        let oracle = EARTH_RADIUS_M * cos_c.clamp(-1.0, 1.0).acos();
        let d = haversine_distance(p, q);
        assert!((d - oracle).abs() < 0.1, "{d} vs {oracle}");
        assert!((haversine_distance(q, p) - d).abs() < 1e-9);
    }

    #[test]
    fn along_track_equal_spacing() {
        let v = Voyage::new(
            VoyageId(1),
            Direction::Northbound,
            vec![rec(0.0, 57.60, 11.9), rec(60.0, 57.61, 11.9), rec(120.0, 57.62, 11.9)],
        )
        .unwrap();
        let f = along_track_fraction(&v).unwrap();
        assert_eq!(f[0], 0.0);
        assert!((f[1] - 0.5).abs() < 1e-9);
        assert_eq!(f[2], 1.0);

        let two = Voyage::new(
            VoyageId(2),
            Direction::Northbound,
            vec![rec(0.0, 57.60, 11.9), rec(60.0, 57.61, 11.9)],
        )
        .unwrap();
        assert_eq!(along_track_fraction(&two).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn along_track_matches_manual_cumulative_sum() {
        let pts = [
            (57.600, 11.900),
            (57.605, 11.910),
            (57.612, 11.913),
            (57.620, 11.930),
            (57.631, 11.931),
        ];
        let recs: Vec<Record> = pts
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| rec(i as f64 * 60.0, a, b))
            .collect();
        let v = Voyage::new(VoyageId(3), Direction::Northbound, recs).unwrap();
        let legs: Vec<f64> = pts
            .windows(2)
            .map(|w| haversine_distance(LatLon::new(w[0].0, w[0].1), LatLon::new(w[1].0, w[1].1)))
            .collect();
        let total: f64 = legs.iter().sum();
        let mut expect = vec![0.0];
        let mut acc = 0.0;
        for l in &legs {
            acc += l;
            expect.push(acc / total);
        }
        let got = along_track_fraction(&v).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_voyage_is_rejected() {
        let v = Voyage::new(
            VoyageId(4),
            Direction::Southbound,
            vec![rec(0.0, 57.6, 11.9), rec(60.0, 57.6, 11.9)],
        )
        .unwrap();
        assert!(matches!(along_track_fraction(&v), Err(Error::DegenerateVoyage(_))));
    }

    #[test]
    fn voyage_construction_invariants() {
        let bad_time = Voyage::new(
            VoyageId(1),
            Direction::Northbound,
            vec![rec(60.0, 57.6, 11.9), rec(60.0, 57.61, 11.9)],
        );
        assert!(bad_time.is_err());
        let single = Voyage::new(VoyageId(1), Direction::Northbound, vec![rec(0.0, 57.6, 11.9)]);
        assert!(single.is_err());
        let mut foreign = rec(60.0, 57.61, 11.9);
        foreign.voyage_id = Some(VoyageId(9));
        let mixed = Voyage::new(VoyageId(1), Direction::Northbound, vec![rec(0.0, 57.6, 11.9), foreign]);
        assert!(mixed.is_err());
        let ok = Voyage::new(
            VoyageId(7),
            Direction::Northbound,
            vec![rec(0.0, 57.6, 11.9), rec(1.0, 57.61, 11.9)],
        )
        .unwrap();
        assert!(ok.records().iter().all(|r| r.voyage_id == Some(VoyageId(7))));
    }

    #[test]
    fn record_validation() {
        let mut r = rec(0.0, 57.6, 11.9);
        assert!(r.validate().is_ok());
        r.wind_dir = 360.0;
        assert!(r.validate().is_err());
        r.wind_dir = f64::NAN;
        r.sog = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn interp_linear_basics() {
        let xs = [0.0, 0.5, 1.0];
        let ys = [1.0, 3.0, 5.0];
        assert_eq!(interp_linear(&xs, &ys, 0.25), 2.0);
        assert_eq!(interp_linear(&xs, &ys, -1.0), 1.0);
        assert_eq!(interp_linear(&xs, &ys, 2.0), 5.0);
        assert_eq!(interp_linear(&xs, &ys, 0.5), 3.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn along_track_is_monotone_and_endpoint_exact(
                steps in prop::collection::vec((0.0f64..0.01, -0.01f64..0.01), 1..40)
            ) {
                let mut lat = 57.6;
                let mut lon = 11.9;
                let mut recs = vec![rec(0.0, lat, lon)];
                for (i, (dlat, dlon)) in steps.iter().enumerate() {
                    lat += dlat;
                    lon += dlon;
                    recs.push(rec((i + 1) as f64, lat, lon));
                }
                let v = Voyage::new(VoyageId(1), Direction::Northbound, recs).unwrap();
                if let Ok(f) = along_track_fraction(&v) {
                    prop_assert_eq!(f[0], 0.0);
                    prop_assert_eq!(*f.last().unwrap(), 1.0);
                    prop_assert!(f.windows(2).all(|w| w[1] >= w[0]));
                }
            }

            #[test]
            fn haversine_symmetric_nonnegative(a in -89.0f64..89.0, b in -179.0f64..179.0,
                                               c in -89.0f64..89.0, d in -179.0f64..179.0) {
                let p = LatLon::new(a, b);
                let q = LatLon::new(c, d);
                let pq = haversine_distance(p, q);
                prop_assert!(pq >= 0.0);
                prop_assert!((pq - haversine_distance(q, p)).abs() <= 1e-6);
            }
        }
    }
}
