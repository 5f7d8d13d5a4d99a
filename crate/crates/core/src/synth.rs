//! Seeded generator of a route, hindcast-like weather grids and a voyage
//! track with injected inefficiency.
//!
//! Randomness comes from ChaCha8 seeded with `SynthConfig::seed`. Stream 0
//! drives the weather fields and stream `k + 1` drives voyage `k`, so adding
//! voyages never changes the earlier ones.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficiency::{fuel_rate_model, FuelModelCoeffs};
use crate::error::{Error, Result};
use crate::ingest::{records_to_csv_bytes, resample_1min, tag_voyages};
use crate::io::{write_atomic, write_json};
use crate::model::{
    haversine_distance, initial_bearing, Direction, Geofence, LatLon, LatLonBox, Record, RouteConfig, Voyage,
    VoyageId, WeatherState,
};
use crate::weather::{
    label_weather_state, wind_components, Grid3D, GridSet, WeatherThresholds, WeatherVar,
};

pub const GRID_STEP_DEG: f64 = 0.25;
pub const GRID_STEP_S: f64 = 3600.0;
const STEP_S: f64 = 60.0;
const KM_PER_DEG: f64 = 111.195;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherFieldConfig {
    pub wave_mean: f64,
    /// Scale of the wave-height anomaly; 0 gives constant fields.
    pub storm_amplitude: f64,
    /// Wind speed is `wind_base + wind_per_wave * wave_height` plus its own anomaly.
    pub wind_base: f64,
    pub wind_per_wave: f64,
    pub wind_noise: f64,
    pub current_amplitude: f64,
    pub temporal_corr_h: f64,
    pub spatial_corr_km: f64,
    pub harmonics: usize,
}

impl Default for WeatherFieldConfig {
    fn default() -> Self {
        Self {
            wave_mean: 0.9,
            storm_amplitude: 0.6,
            wind_base: 3.0,
            wind_per_wave: 4.0,
            wind_noise: 1.0,
            current_amplitude: 0.3,
            temporal_corr_h: 12.0,
            spatial_corr_km: 150.0,
            harmonics: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptainConfig {
    /// Cruising speed in calm weather, m/s.
    pub target_sog: f64,
    pub maneuver_sog: f64,
    /// Relative spread of the per-voyage target speed.
    pub target_spread: f64,
    /// Probability that a voyage's captain overspeeds in rough weather.
    pub p_ineff: f64,
    pub overspeed_factor: f64,
    pub moderate_factor: f64,
    pub rough_factor: f64,
    /// Relative per-minute speed noise.
    pub speed_noise: f64,
    /// Lag-one correlation of the speed noise.
    pub noise_corr: f64,
}

impl Default for CaptainConfig {
    fn default() -> Self {
        Self {
            target_sog: 5.0,
            maneuver_sog: 2.0,
            target_spread: 0.03,
            p_ineff: 0.3,
            overspeed_factor: 1.25,
            moderate_factor: 0.95,
            rough_factor: 0.8,
            speed_noise: 0.03,
            noise_corr: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_voyages: usize,
    pub seed: u64,
    /// Unix time of the first slot.
    pub start_time: f64,
    /// Each voyage owns one slot of this length, departing `dwell_s` into it.
    pub slot_s: f64,
    pub dwell_s: f64,
    /// Route polyline from port A to port B. The canal runs between the
    /// second and third waypoints.
    pub waypoints: Vec<LatLon>,
    /// Distance from either end of the polyline over which the vessel maneuvers.
    pub approach_m: f64,
    pub weather: WeatherFieldConfig,
    pub captain: CaptainConfig,
    /// Thresholds the captain reacts to and the truth labels use.
    pub thresholds: WeatherThresholds,
    pub fuel_noise: f64,
    pub coeffs: FuelModelCoeffs,
    /// Coefficient of an extra `sog^4` term the surrogate cannot represent.
    pub mismatch_c4: f64,
}

const PORT_A: LatLon = LatLon {
    lat: 57.600,
    lon: 11.900,
};
const PORT_B: LatLon = LatLon {
    lat: 57.780,
    lon: 11.970,
};

/// Route labels matching the default waypoints.
pub fn default_route() -> RouteConfig {
    RouteConfig {
        port_a: Geofence {
            center: PORT_A,
            radius_m: 1000.0,
        },
        port_b: Geofence {
            center: PORT_B,
            radius_m: 1000.0,
        },
        segment_bounds: [57.660, 57.678],
        direct_region: Some(LatLonBox {
            lat_min: 57.700,
            lat_max: 57.740,
            lon_min: 11.950,
            lon_max: 12.010,
        }),
        cruising_sog_threshold: 3.0,
        min_port_dwell: 600.0,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        let (port_a, port_b) = (PORT_A, PORT_B);
        Self {
            n_voyages: 200,
            seed: 42,
            start_time: 1_577_836_800.0,
            slot_s: 3.0 * 3600.0,
            dwell_s: 1800.0,
            waypoints: vec![
                port_a,
                LatLon::new(57.660, 11.930),
                LatLon::new(57.678, 11.932),
                LatLon::new(57.730, 11.990),
                port_b,
            ],
            approach_m: 1500.0,
            weather: WeatherFieldConfig::default(),
            captain: CaptainConfig::default(),
            thresholds: WeatherThresholds::default(),
            fuel_noise: 0.05,
            coeffs: FuelModelCoeffs {
                c0: 5.0,
                c1: 0.12,
                c2: 1.5,
                c3: 0.05,
            },
            mismatch_c4: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_voyages < 2 {
            return bad(format!("n_voyages must be at least 2, got {}", self.n_voyages));
        }
        let w = &self.weather;
        let c = &self.captain;
        for (name, v) in [
            ("storm_amplitude", w.storm_amplitude),
            ("wind_noise", w.wind_noise),
            ("current_amplitude", w.current_amplitude),
            ("target_spread", c.target_spread),
            ("speed_noise", c.speed_noise),
            ("fuel_noise", self.fuel_noise),
            ("mismatch_c4", self.mismatch_c4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&c.p_ineff) {
            return bad(format!("p_ineff must lie in [0, 1], got {}", c.p_ineff));
        }
        if !(0.0..1.0).contains(&c.noise_corr) {
            return bad(format!("noise_corr must lie in [0, 1), got {}", c.noise_corr));
        }
        for (name, v) in [
            ("target_sog", c.target_sog),
            ("maneuver_sog", c.maneuver_sog),
            ("overspeed_factor", c.overspeed_factor),
            ("moderate_factor", c.moderate_factor),
            ("rough_factor", c.rough_factor),
            ("temporal_corr_h", w.temporal_corr_h),
            ("spatial_corr_km", w.spatial_corr_km),
            ("slot_s", self.slot_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.waypoints.len() < 2 {
            return bad("route needs at least two waypoints".into());
        }
        if !(self.dwell_s > 0.0 && self.dwell_s < self.slot_s) {
            return bad(format!("dwell_s must be positive and shorter than the slot, got {}", self.dwell_s));
        }
        self.thresholds.validate()
    }

    /// Checks that voyages generated with this config are tagged by `route`.
    pub fn check_route(&self, route: &RouteConfig) -> Result<()> {
        route.validate()?;
        let ends = (self.waypoints[0], *self.waypoints.last().unwrap());
        if !route.port_a.contains(ends.0) || !route.port_b.contains(ends.1) {
            return Err(Error::Invalid("waypoint polyline must start in port A and end in port B".into()));
        }
        if self.dwell_s < route.min_port_dwell {
            return Err(Error::Invalid(format!(
                "dwell_s {} is shorter than min_port_dwell {}",
                self.dwell_s, route.min_port_dwell
            )));
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.n_voyages as f64 * self.slot_s
    }
}

/// Polyline with cumulative along-track distance.
#[derive(Debug, Clone)]
pub struct Polyline {
    points: Vec<LatLon>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<LatLon>) -> Self {
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            cum.push(cum.last().unwrap() + haversine_distance(w[0], w[1]));
        }
        Self { points, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Distance of each waypoint from the start.
    pub fn vertex_distances(&self) -> &[f64] {
        &self.cum
    }

    /// Point at along-track distance `s`, linear in latitude and longitude
    /// within a leg.
    pub fn point_at(&self, s: f64) -> LatLon {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.iter().position(|c| *c >= s) {
            Some(0) => return self.points[0],
            Some(i) => i,
            None => return *self.points.last().unwrap(),
        };
        let (a, b) = (self.points[i - 1], self.points[i]);
        let f = (s - self.cum[i - 1]) / (self.cum[i] - self.cum[i - 1]);
        LatLon::new(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let first = (lo / step).floor() as i64;
    let mut last = (hi / step).ceil() as i64;
    if last == first {
        last += 1;
    }
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Smooth random anomaly: a hourly Ornstein-Uhlenbeck series plus a few
/// travelling sinusoids. Unit variance overall.
struct Anomaly {
    ou: Vec<f64>,
    t0: f64,
    waves: Vec<[f64; 4]>,
}

impl Anomaly {
    fn new(rng: &mut ChaCha8Rng, times: &[f64], cfg: &WeatherFieldConfig) -> Self {
        let rho = (-1.0 / cfg.temporal_corr_h).exp();
        let innov = (1.0 - rho * rho).sqrt();
        let mut x = normal(rng);
        let mut ou = Vec::with_capacity(times.len());
        for _ in times {
            ou.push(x);
            x = rho * x + innov * normal(rng);
        }
        let k_space = TAU / cfg.spatial_corr_km;
        let waves = (0..cfg.harmonics)
            .map(|_| {
                let period_h = cfg.temporal_corr_h * rng.random_range(2.0..8.0);
                let dir: f64 = rng.random_range(0.0..TAU);
                [
                    TAU / (period_h * 3600.0),
                    k_space * dir.cos(),
                    k_space * dir.sin(),
                    rng.random_range(0.0..TAU),
                ]
            })
            .collect();
        Self {
            ou,
            t0: times[0],
            waves,
        }
    }

    /// `ti` indexes the hourly axis the OU series was drawn on.
    fn at(&self, ti: usize, t: f64, lat: f64, lon: f64) -> f64 {
        let y = lat * KM_PER_DEG;
        let x = lon * KM_PER_DEG * lat.to_radians().cos();
        let h = self.waves.len();
        let s: f64 = self
            .waves
            .iter()
            .map(|[w, kx, ky, ph]| (w * (t - self.t0) + kx * x + ky * y + ph).sin())
            .sum();
        let harm = if h == 0 { 0.0 } else { s * (1.0 / h as f64).sqrt() };
        // OU and harmonic parts weighted to unit variance.
        (self.ou[ti] + harm) / 1.5f64.sqrt()
    }
}

/// Hourly × 0.25° grids covering the route polyline and `[t_start, t_end]`.
pub fn generate_weather_fields(cfg: &SynthConfig, t_start: f64, t_end: f64) -> Result<GridSet> {
    let w = &cfg.weather;
    let (mut lat_lo, mut lat_hi, mut lon_lo, mut lon_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &cfg.waypoints {
        lat_lo = lat_lo.min(p.lat);
        lat_hi = lat_hi.max(p.lat);
        lon_lo = lon_lo.min(p.lon);
        lon_hi = lon_hi.max(p.lon);
    }
    let times = axis(t_start, t_end, GRID_STEP_S);
    let lats = axis(lat_lo, lat_hi, GRID_STEP_DEG);
    let lons = axis(lon_lo, lon_hi, GRID_STEP_DEG);
    let mut rng = stream_rng(cfg.seed, 0);
    let wave_a = Anomaly::new(&mut rng, &times, w);
    let wind_a = Anomaly::new(&mut rng, &times, w);
    let dir_a = Anomaly::new(&mut rng, &times, w);
    let cur_a = Anomaly::new(&mut rng, &times, w);
    let wind_dir_mean: f64 = rng.random_range(0.0..360.0);
    let tidal_phase: f64 = rng.random_range(0.0..TAU);

    let n = times.len() * lats.len() * lons.len();
    let mut vals: BTreeMap<WeatherVar, Vec<f64>> = WeatherVar::ALL.iter().map(|v| (*v, Vec::with_capacity(n))).collect();
    for (ti, &t) in times.iter().enumerate() {
        for &lat in &lats {
            for &lon in &lons {
                let wave = (w.wave_mean + w.storm_amplitude * wave_a.at(ti, t, lat, lon)).max(0.0);
                let wind = (w.wind_base + w.wind_per_wave * wave + w.wind_noise * wind_a.at(ti, t, lat, lon)).max(0.0);
                let dir = wind_dir_mean + 60.0 * dir_a.at(ti, t, lat, lon);
                let (wu, wv) = wind_components(wind, dir);
                // Semi-diurnal tide along the channel plus a slow drift.
                let tide = (TAU * (t - times[0]) / (12.42 * 3600.0) + tidal_phase).sin();
                let cu = 0.2 * w.current_amplitude * cur_a.at(ti, t, lat, lon);
                let cv = w.current_amplitude * tide;
                let entries = [
                    (WeatherVar::WaveHeight, wave),
                    (WeatherVar::WindSpeed, wind),
                    (WeatherVar::WindU, wu),
                    (WeatherVar::WindV, wv),
                    (WeatherVar::CurrentU, cu),
                    (WeatherVar::CurrentV, cv),
                ];
                for (var, v) in entries {
                    vals.get_mut(&var).unwrap().push(v);
                }
            }
        }
    }
    let grids = vals
        .into_iter()
        .map(|(var, v)| Ok((var, Grid3D::new(times.clone(), lats.clone(), lons.clone(), v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    GridSet::new(grids)
}

/// Generator-side labels for one voyage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoyageTruth {
    pub voyage_id: VoyageId,
    pub direction: Direction,
    pub departure: f64,
    pub target_sog: f64,
    /// The captain was drawn as one who overspeeds in rough weather.
    pub careless_captain: bool,
    /// The careless captain actually met rough weather while cruising.
    pub overspeed: bool,
    pub weather_state: WeatherState,
    pub rough_minutes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Continuous 1-minute track, including port dwells.
    pub track: Vec<Record>,
    pub truth: Vec<VoyageTruth>,
}

/// Track of one slot: dwell at the origin, sail, then wait at the destination.
fn generate_slot(cfg: &SynthConfig, grids: &GridSet, line: &Polyline, k: usize) -> Result<(Vec<Record>, VoyageTruth)> {
    let cap = &cfg.captain;
    let mut rng = stream_rng(cfg.seed, k as u64 + 1);
    let direction = if k % 2 == 0 {
        Direction::Northbound
    } else {
        Direction::Southbound
    };
    let target = cap.target_sog * (1.0 + cap.target_spread * normal(&mut rng)).max(0.5);
    let careless = rng.random::<f64>() < cap.p_ineff;
    let length = line.length();
    let verts = line.vertex_distances();
    // Canal between the second and third waypoints, measured from port A.
    let canal = (verts[1.min(verts.len() - 1)], verts[2.min(verts.len() - 1)]);
    let along_from_a = |s: f64| match direction {
        Direction::Northbound => s,
        Direction::Southbound => length - s,
    };

    let slot_start = cfg.start_time + k as f64 * cfg.slot_s;
    let departure = slot_start + cfg.dwell_s;
    let slot_end = slot_start + cfg.slot_s;

    // Positions at every minute of the slot, as distance travelled.
    let mut travelled = Vec::new();
    let mut weather_at = Vec::new();
    let mut rough_minutes = 0usize;
    let mut noise = 0.0;
    let innov = (1.0 - cap.noise_corr * cap.noise_corr).sqrt();
    let mut s = 0.0;
    let mut t = slot_start;
    while t < slot_end {
        travelled.push(s);
        let pos = line.point_at(along_from_a(s));
        let wx = grids.sample(t, pos.lat, pos.lon)?;
        weather_at.push(wx);
        noise = cap.noise_corr * noise + innov * normal(&mut rng);
        if t >= departure && s < length {
            let a = along_from_a(s);
            let maneuvering = s < cfg.approach_m || s > length - cfg.approach_m || (a >= canal.0 && a < canal.1);
            let v = if maneuvering {
                cap.maneuver_sog * (1.0 + cap.speed_noise * noise).max(0.5)
            } else {
                let factor = match label_weather_state(wx.wave_height, &cfg.thresholds) {
                    WeatherState::Calm => 1.0,
                    WeatherState::Moderate => cap.moderate_factor,
                    WeatherState::Rough => {
                        rough_minutes += 1;
                        if careless {
                            cap.overspeed_factor
                        } else {
                            cap.rough_factor
                        }
                    }
                };
                target * factor * (1.0 + cap.speed_noise * noise).max(0.5)
            };
            s = (s + v * STEP_S).min(length);
        }
        t += STEP_S;
    }
    if s < length {
        return Err(Error::Invalid(format!(
            "voyage {k} did not arrive within its slot; increase slot_s"
        )));
    }

    let positions: Vec<LatLon> = travelled.iter().map(|s| line.point_at(along_from_a(*s))).collect();
    let mut records = Vec::with_capacity(positions.len());
    let mut heading = initial_bearing(positions[0], line.point_at(along_from_a(1.0)));
    for i in 0..positions.len() {
        let t = slot_start + i as f64 * STEP_S;
        let next = positions.get(i + 1).copied().unwrap_or(positions[i]);
        let d = haversine_distance(positions[i], next);
        let sog = d / STEP_S;
        if d > 0.0 {
            heading = initial_bearing(positions[i], next);
        }
        let wx = weather_at[i];
        let rel = wx.wind_dir - heading;
        let mut rate = fuel_rate_model(sog, wx.wave_height, wx.wind_speed, rel, &cfg.coeffs) + cfg.mismatch_c4 * sog.powi(4);
        rate *= (1.0 + cfg.fuel_noise * normal(&mut rng)).max(0.0);
        let mut r = Record::new(t, positions[i], sog, heading, rate);
        r.wave_height = wx.wave_height;
        r.wave_dir = wx.wind_dir;
        r.wind_speed = wx.wind_speed;
        r.wind_dir = wx.wind_dir;
        r.current_speed = wx.current_speed;
        r.current_dir = wx.current_dir;
        records.push(r);
    }

    let sailing: Vec<f64> = records
        .iter()
        .filter(|r| r.timestamp >= departure && r.sog > 0.0)
        .map(|r| r.wave_height)
        .collect();
    let mut counts = [0usize; 3];
    for w in &sailing {
        counts[label_weather_state(*w, &cfg.thresholds).index()] += 1;
    }
    let best = (0..3).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    let truth = VoyageTruth {
        voyage_id: VoyageId(k as u32),
        direction,
        departure,
        target_sog: target,
        careless_captain: careless,
        overspeed: careless && rough_minutes > 0,
        weather_state: WeatherState::ALL[best],
        rough_minutes,
    };
    Ok((records, truth))
}

/// Generates every voyage slot in parallel and concatenates them in order.
pub fn generate_voyages(cfg: &SynthConfig, grids: &GridSet) -> Result<SynthCorpus> {
    cfg.validate()?;
    let line = Polyline::new(cfg.waypoints.clone());
    let slots = (0..cfg.n_voyages)
        .into_par_iter()
        .map(|k| generate_slot(cfg, grids, &line, k))
        .collect::<Result<Vec<_>>>()?;
    let mut track = Vec::new();
    let mut truth = Vec::with_capacity(slots.len());
    for (recs, tr) in slots {
        track.extend(recs);
        truth.push(tr);
    }
    Ok(SynthCorpus { track, truth })
}

/// Weather grids spanning the whole schedule, with one hour of margin.
pub fn generate(cfg: &SynthConfig) -> Result<(GridSet, SynthCorpus)> {
    cfg.validate()?;
    let grids = generate_weather_fields(cfg, cfg.start_time - GRID_STEP_S, cfg.end_time() + GRID_STEP_S)?;
    let corpus = generate_voyages(cfg, &grids)?;
    Ok((grids, corpus))
}

/// Voyages as ingest sees them: resampled and tagged with ids from 0.
pub fn corpus_voyages(track: &[Record], route: &RouteConfig) -> Result<Vec<Voyage>> {
    Ok(tag_voyages(&resample_1min(track)?, route, 0))
}

pub const RECORDS_FILE: &str = "records.csv";
pub const GRIDS_DIR: &str = "grids";
pub const TRUTH_FILE: &str = "truth.json";
pub const SYNTH_MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub schema_version: u32,
    pub config: SynthConfig,
    pub n_records: usize,
    pub records: String,
    pub grids_manifest: String,
    pub truth: String,
}

/// Writes `records.csv`, `grids/`, `truth.json` and `manifest.json`.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig, grids: &GridSet, corpus: &SynthCorpus) -> Result<()> {
    write_atomic(&dir.join(RECORDS_FILE), &records_to_csv_bytes(&corpus.track)?)?;
    grids.write(&dir.join(GRIDS_DIR))?;
    write_json(&dir.join(TRUTH_FILE), &corpus.truth)?;
    write_json(
        &dir.join(SYNTH_MANIFEST_FILE),
        &SynthManifest {
            schema_version: 1,
            config: cfg.clone(),
            n_records: corpus.track.len(),
            records: RECORDS_FILE.into(),
            grids_manifest: format!("{GRIDS_DIR}/{}", crate::weather::MANIFEST_FILE),
            truth: TRUTH_FILE.into(),
        },
    )
}
