//! Gridded hindcast fusion and threshold-based weather labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_json, write_atomic, write_json};
use crate::model::{normalize_degrees, Voyage, WeatherState};

/// A scalar field sampled on a regular `[time][lat][lon]` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    times: Vec<f64>,
    lats: Vec<f64>,
    lons: Vec<f64>,
    values: Vec<f64>,
}

fn strictly_increasing(axis: &[f64]) -> bool {
    axis.iter().all(|v| v.is_finite()) && axis.windows(2).all(|w| w[1] > w[0])
}

/// Index of the lower corner of the cell containing `x`, plus the fractional
/// offset inside it. `None` when `x` is outside the axis range.
fn locate(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if !(x >= axis[0] && x <= axis[n - 1]) {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let hi = axis.partition_point(|&v| v <= x).clamp(1, n - 1);
    let lo = hi - 1;
    Some((lo, (x - axis[lo]) / (axis[hi] - axis[lo])))
}

#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a * (1.0 - f) + b * f
}

impl Grid3D {
    pub fn new(times: Vec<f64>, lats: Vec<f64>, lons: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("time", &times), ("lat", &lats), ("lon", &lons)] {
            if axis.is_empty() || !strictly_increasing(axis) {
                return Err(Error::Invalid(format!("grid {name} axis must be non-empty and strictly increasing")));
            }
        }
        let expected = times.len() * lats.len() * lons.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("grid contains non-finite values".into()));
        }
        Ok(Self {
            times,
            lats,
            lons,
            values,
        })
    }

    /// Builds a grid by evaluating `f(t, lat, lon)` at every node.
    pub fn from_fn(times: Vec<f64>, lats: Vec<f64>, lons: Vec<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(times.len() * lats.len() * lons.len());
        for &t in &times {
            for &la in &lats {
                for &lo in &lons {
                    values.push(f(t, la, lo));
                }
            }
        }
        Grid3D::new(times, lats, lons, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, ti: usize, ai: usize, oi: usize) -> f64 {
        self.values[(ti * self.lats.len() + ai) * self.lons.len() + oi]
    }

    /// Trilinear blend of the eight corners enclosing `(t, lat, lon)`.
    /// Exact at grid nodes; no extrapolation.
    pub fn interpolate(&self, t: f64, lat: f64, lon: f64) -> Result<f64> {
        let out = |what: &str, v: f64, axis: &[f64]| {
            Error::Domain(format!(
                "{what} {v} outside grid range [{}, {}]",
                axis[0],
                axis[axis.len() - 1]
            ))
        };
        let (ti, ft) = locate(&self.times, t).ok_or_else(|| out("time", t, &self.times))?;
        let (ai, fa) = locate(&self.lats, lat).ok_or_else(|| out("lat", lat, &self.lats))?;
        let (oi, fo) = locate(&self.lons, lon).ok_or_else(|| out("lon", lon, &self.lons))?;
        let t1 = (ti + 1).min(self.times.len() - 1);
        let a1 = (ai + 1).min(self.lats.len() - 1);
        let o1 = (oi + 1).min(self.lons.len() - 1);
        let plane = |tt: usize| {
            let c0 = lerp(self.at(tt, ai, oi), self.at(tt, ai, o1), fo);
            let c1 = lerp(self.at(tt, a1, oi), self.at(tt, a1, o1), fo);
            lerp(c0, c1, fa)
        };
        Ok(lerp(plane(ti), plane(t1), ft))
    }

    /// Min and max of the corner values of the cell enclosing a point.
    pub fn corner_bounds(&self, t: f64, lat: f64, lon: f64) -> Option<(f64, f64)> {
        let (ti, _) = locate(&self.times, t)?;
        let (ai, _) = locate(&self.lats, lat)?;
        let (oi, _) = locate(&self.lons, lon)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for tt in [ti, (ti + 1).min(self.times.len() - 1)] {
            for aa in [ai, (ai + 1).min(self.lats.len() - 1)] {
                for oo in [oi, (oi + 1).min(self.lons.len() - 1)] {
                    let v = self.at(tt, aa, oo);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        Some((lo, hi))
    }

    /// `time,lat,lon,value` rows in `[time][lat][lon]` order.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time", "lat", "lon", "value"])?;
        for (ti, t) in self.times.iter().enumerate() {
            for (ai, la) in self.lats.iter().enumerate() {
                for (oi, lo) in self.lons.iter().enumerate() {
                    w.write_record([fmt_f64(*t), fmt_f64(*la), fmt_f64(*lo), fmt_f64(self.at(ti, ai, oi))])?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }

    /// Densifies `time,lat,lon,value` rows; axes are the distinct sorted
    /// coordinates and every lattice node must appear exactly once.
    pub fn from_csv<R: std::io::Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("grid file lacks column {name:?}")))
        };
        let (ct, ca, co, cv) = (col("time")?, col("lat")?, col("lon")?, col("value")?);
        let mut rows = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Invalid(format!("bad grid row {:?}", row)))
            };
            rows.push([num(ct)?, num(ca)?, num(co)?, num(cv)?]);
        }
        if rows.is_empty() {
            return Err(Error::Empty("grid file has no rows".into()));
        }
        let axis = |k: usize| -> Vec<f64> {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (times, lats, lons) = (axis(0), axis(1), axis(2));
        let find = |axis: &[f64], x: f64| axis.binary_search_by(|v| v.total_cmp(&x)).expect("axis value");
        let mut values = vec![f64::NAN; times.len() * lats.len() * lons.len()];
        let mut seen = vec![false; values.len()];
        for r in &rows {
            let i = (find(&times, r[0]) * lats.len() + find(&lats, r[1])) * lons.len() + find(&lons, r[2]);
            if seen[i] {
                return Err(Error::Invalid(format!("duplicate grid node ({}, {}, {})", r[0], r[1], r[2])));
            }
            seen[i] = true;
            values[i] = r[3];
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("grid file does not cover the full lattice".into()));
        }
        Grid3D::new(times, lats, lons, values)
    }
}

/// Free function form of [`Grid3D::interpolate`].
pub fn trilinear_interpolate(g: &Grid3D, t: f64, lat: f64, lon: f64) -> Result<f64> {
    g.interpolate(t, lat, lon)
}

/// Gridded weather variables. Wind and current directions travel as
/// vector components so interpolation never crosses the 0/360 seam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherVar {
    WaveHeight,
    WindSpeed,
    WindU,
    WindV,
    CurrentU,
    CurrentV,
}

impl WeatherVar {
    pub const ALL: [WeatherVar; 6] = [
        WeatherVar::WaveHeight,
        WeatherVar::WindSpeed,
        WeatherVar::WindU,
        WeatherVar::WindV,
        WeatherVar::CurrentU,
        WeatherVar::CurrentV,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherVar::WaveHeight => "wave_height",
            WeatherVar::WindSpeed => "wind_speed",
            WeatherVar::WindU => "wind_u",
            WeatherVar::WindV => "wind_v",
            WeatherVar::CurrentU => "current_u",
            WeatherVar::CurrentV => "current_v",
        }
    }
}

impl fmt::Display for WeatherVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeatherVar::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown weather variable {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    pub grids: BTreeMap<WeatherVar, Grid3D>,
}

/// Interpolated weather at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherSample {
    pub wave_height: f64,
    pub wind_speed: f64,
    /// Direction the wind blows from.
    pub wind_dir: f64,
    pub current_speed: f64,
    /// Direction the current flows towards.
    pub current_dir: f64,
}

/// Meteorological "from" direction of a flow vector `(u east, v north)`.
pub fn from_direction(u: f64, v: f64) -> f64 {
    if u == 0.0 && v == 0.0 {
        return 0.0;
    }
    normalize_degrees((-u).atan2(-v).to_degrees())
}

/// Oceanographic "towards" direction of a flow vector.
pub fn towards_direction(u: f64, v: f64) -> f64 {
    if u == 0.0 && v == 0.0 {
        return 0.0;
    }
    normalize_degrees(u.atan2(v).to_degrees())
}

/// Flow vector `(u, v)` of a wind blowing from `dir` degrees at `speed`.
pub fn wind_components(speed: f64, from_dir: f64) -> (f64, f64) {
    let r = from_dir.to_radians();
    (-speed * r.sin(), -speed * r.cos())
}

impl GridSet {
    pub fn new(grids: BTreeMap<WeatherVar, Grid3D>) -> Result<Self> {
        if let Some(missing) = WeatherVar::ALL.iter().find(|v| !grids.contains_key(v)) {
            return Err(Error::Schema(format!("grid set lacks variable {missing}")));
        }
        Ok(Self { grids })
    }

    pub fn get(&self, var: WeatherVar) -> &Grid3D {
        &self.grids[&var]
    }

    pub fn sample(&self, t: f64, lat: f64, lon: f64) -> Result<WeatherSample> {
        let v = |var| self.get(var).interpolate(t, lat, lon);
        let (wu, wv) = (v(WeatherVar::WindU)?, v(WeatherVar::WindV)?);
        let (cu, cv) = (v(WeatherVar::CurrentU)?, v(WeatherVar::CurrentV)?);
        Ok(WeatherSample {
            wave_height: v(WeatherVar::WaveHeight)?.max(0.0),
            wind_speed: v(WeatherVar::WindSpeed)?.max(0.0),
            wind_dir: from_direction(wu, wv),
            current_speed: cu.hypot(cv),
            current_dir: towards_direction(cu, cv),
        })
    }

    /// Writes one CSV per variable plus `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut manifest = GridManifest {
            schema_version: 1,
            variables: BTreeMap::new(),
        };
        for (var, grid) in &self.grids {
            let file = format!("{var}.csv");
            write_atomic(&dir.join(&file), &grid.to_csv()?)?;
            manifest.variables.insert(*var, file);
        }
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    /// Loads the grids listed in a manifest; file paths are relative to the
    /// manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: GridManifest = read_json(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut grids = BTreeMap::new();
        for (var, file) in &manifest.variables {
            let path = base.join(file);
            let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let grid = Grid3D::from_csv(std::io::BufReader::new(f))
                .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
            grids.insert(*var, grid);
        }
        GridSet::new(grids)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub schema_version: u32,
    pub variables: BTreeMap<WeatherVar, String>,
}

/// Overwrites every record's weather fields with values interpolated from
/// `grids`. Wave direction is left as recorded.
pub fn attach_weather(v: Voyage, grids: &GridSet) -> Result<Voyage> {
    v.try_map_records(|(i, mut r)| {
        let s = grids.sample(r.timestamp, r.lat, r.lon).map_err(|e| Error::OutOfDomain {
            index: i,
            detail: e.to_string(),
        })?;
        r.wave_height = s.wave_height;
        r.wind_speed = s.wind_speed;
        r.wind_dir = s.wind_dir;
        r.current_speed = s.current_speed;
        r.current_dir = s.current_dir;
        Ok(r)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherThresholds {
    pub calm_max_wave: f64,
    pub rough_min_wave: f64,
}

impl Default for WeatherThresholds {
    fn default() -> Self {
        Self {
            calm_max_wave: 0.5,
            rough_min_wave: 1.25,
        }
    }
}

impl WeatherThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.calm_max_wave && self.calm_max_wave < self.rough_min_wave) {
            return Err(Error::Invalid(format!(
                "weather thresholds must satisfy 0 < calm_max_wave < rough_min_wave, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Calm below `calm_max_wave`, Rough from `rough_min_wave`, else Moderate.
pub fn label_weather_state(wave_height: f64, th: &WeatherThresholds) -> WeatherState {
    if wave_height < th.calm_max_wave {
        WeatherState::Calm
    } else if wave_height >= th.rough_min_wave {
        WeatherState::Rough
    } else {
        WeatherState::Moderate
    }
}

/// Modal threshold label over a voyage's records; ties go to the calmer state.
pub fn dominant_weather_state(v: &Voyage, th: &WeatherThresholds) -> WeatherState {
    let mut counts = [0usize; 3];
    for r in v.records() {
        counts[label_weather_state(r.wave_height, th).index()] += 1;
    }
    let best = (0..3).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    WeatherState::ALL[best]
}

/// Distinct sorted values, used when inspecting grids.
pub fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.map(f64::to_bits).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}
