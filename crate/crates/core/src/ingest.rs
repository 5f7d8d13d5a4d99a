//! Raw record ingestion: CSV parsing, 1-minute resampling, voyage tagging,
//! segment / speed-mode labeling and corpus statistics.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, fmt_opt_f64, read_json, write_atomic, write_json};
use crate::model::{
    haversine_distance, normalize_degrees, Direction, RouteConfig, RouteSegment, Record, SpeedMode, Voyage,
    VoyageId,
};

/// Column order of every record CSV this crate writes.
pub const RECORD_COLUMNS: [&str; 18] = [
    "timestamp",
    "lat",
    "lon",
    "sog",
    "heading",
    "fuel_rate",
    "wind_speed",
    "wind_dir",
    "wave_height",
    "wave_dir",
    "current_speed",
    "current_dir",
    "voyage_id",
    "segment",
    "speed_mode",
    "pitch",
    "roll",
    "torque",
];

const REQUIRED: [&str; 6] = ["timestamp", "lat", "lon", "sog", "heading", "fuel_rate"];

/// Maps record field names to CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: BTreeMap<String, String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            columns: RECORD_COLUMNS.iter().map(|c| (c.to_string(), c.to_string())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecords {
    pub records: Vec<Record>,
    pub dropped: usize,
}

/// Parses a record CSV. Rows whose required fields are missing, unparseable
/// or out of range are dropped and counted; unparseable optional fields are
/// treated as missing.
pub fn parse_records<R: Read>(source: R, schema: &Schema) -> Result<ParsedRecords> {
    for field in REQUIRED {
        if !schema.columns.contains_key(field) {
            return Err(Error::Schema(format!("required field {field:?} is not mapped")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Empty("record file has no header row".into()));
    }
    let mut idx: BTreeMap<&str, usize> = BTreeMap::new();
    for (field, col) in &schema.columns {
        match headers.iter().position(|h| h == col) {
            Some(i) => {
                idx.insert(field.as_str(), i);
            }
            None if REQUIRED.contains(&field.as_str()) => {
                return Err(Error::Schema(format!("required column {col:?} (field {field}) not in header")))
            }
            None => {}
        }
    }

    let mut records = Vec::new();
    let mut dropped = 0usize;
    let mut rows = 0usize;
    for row in rdr.records() {
        rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let get = |field: &str| idx.get(field).and_then(|&i| row.get(i)).filter(|s| !s.is_empty());
        let num = |field: &str| get(field).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let opt = |field: &str| num(field).unwrap_or(f64::NAN);
        let angle = |field: &str| num(field).map(normalize_degrees).unwrap_or(f64::NAN);

        let (Some(timestamp), Some(lat), Some(lon), Some(sog), Some(heading), Some(fuel_rate)) = (
            num("timestamp"),
            num("lat"),
            num("lon"),
            num("sog"),
            num("heading"),
            num("fuel_rate"),
        ) else {
            dropped += 1;
            continue;
        };
        let record = Record {
            timestamp,
            lat,
            lon,
            sog,
            heading: normalize_degrees(heading),
            fuel_rate,
            wind_speed: opt("wind_speed"),
            wind_dir: angle("wind_dir"),
            wave_height: opt("wave_height"),
            wave_dir: angle("wave_dir"),
            current_speed: opt("current_speed"),
            current_dir: angle("current_dir"),
            voyage_id: get("voyage_id").and_then(|s| s.parse().ok()),
            segment: get("segment").and_then(|s| s.parse().ok()),
            speed_mode: get("speed_mode").and_then(|s| s.parse().ok()),
            pitch: num("pitch"),
            roll: num("roll"),
            torque: num("torque"),
        };
        if record.validate().is_err() {
            dropped += 1;
            continue;
        }
        records.push(record);
    }
    if rows == 0 {
        return Err(Error::Empty("record file has no data rows".into()));
    }
    Ok(ParsedRecords { records, dropped })
}

pub fn read_records_file(path: &Path, schema: &Schema) -> Result<ParsedRecords> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(std::io::BufReader::new(f), schema).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        Error::Empty(m) => Error::Empty(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes records in the canonical column order.
pub fn write_records<W: Write>(sink: W, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            fmt_f64(r.timestamp),
            fmt_f64(r.lat),
            fmt_f64(r.lon),
            fmt_f64(r.sog),
            fmt_f64(r.heading),
            fmt_f64(r.fuel_rate),
            fmt_f64(r.wind_speed),
            fmt_f64(r.wind_dir),
            fmt_f64(r.wave_height),
            fmt_f64(r.wave_dir),
            fmt_f64(r.current_speed),
            fmt_f64(r.current_dir),
            r.voyage_id.map(|v| v.to_string()).unwrap_or_default(),
            r.segment.map(|s| s.as_str().to_string()).unwrap_or_default(),
            r.speed_mode.map(|s| s.as_str().to_string()).unwrap_or_default(),
            fmt_opt_f64(r.pitch),
            fmt_opt_f64(r.roll),
            fmt_opt_f64(r.torque),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

pub fn records_to_csv_bytes(records: &[Record]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    Ok(buf)
}

fn mean_finite(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Circular mean in degrees of the finite entries; a lone value is returned as-is.
pub fn circular_mean_deg(values: impl Iterator<Item = f64>) -> f64 {
    let finite: Vec<f64> = values.filter(|v| v.is_finite()).collect();
    match finite.len() {
        0 => f64::NAN,
        1 => finite[0],
        _ => {
            let (s, c) = finite.iter().fold((0.0, 0.0), |(s, c), d| {
                let r = d.to_radians();
                (s + r.sin(), c + r.cos())
            });
            normalize_degrees(s.atan2(c).to_degrees())
        }
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let m = mean_finite(values.flatten());
    m.is_finite().then_some(m)
}

/// Aggregates time-ordered records into one record per 60 s window.
///
/// Numeric fields are window means, angular fields circular means, and the
/// timestamp is the window start. Labels are taken from the first record.
pub fn resample_1min(records: &[Record]) -> Result<Vec<Record>> {
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Invalid(format!("records not time-ordered at index {}", i + 1)));
    }
    let window = |r: &Record| (r.timestamp / 60.0).floor();
    let mut out = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let key = window(&records[start]);
        let mut end = start + 1;
        while end < records.len() && window(&records[end]) == key {
            end += 1;
        }
        let group = &records[start..end];
        let first = &group[0];
        let field = |f: fn(&Record) -> f64| mean_finite(group.iter().map(f));
        let angle = |f: fn(&Record) -> f64| circular_mean_deg(group.iter().map(f));
        out.push(Record {
            timestamp: key * 60.0,
            lat: field(|r| r.lat),
            lon: field(|r| r.lon),
            sog: field(|r| r.sog),
            heading: angle(|r| r.heading),
            fuel_rate: field(|r| r.fuel_rate),
            wind_speed: field(|r| r.wind_speed),
            wind_dir: angle(|r| r.wind_dir),
            wave_height: field(|r| r.wave_height),
            wave_dir: angle(|r| r.wave_dir),
            current_speed: field(|r| r.current_speed),
            current_dir: angle(|r| r.current_dir),
            voyage_id: first.voyage_id,
            segment: first.segment,
            speed_mode: first.speed_mode,
            pitch: mean_opt(group.iter().map(|r| r.pitch)),
            roll: mean_opt(group.iter().map(|r| r.roll)),
            torque: mean_opt(group.iter().map(|r| r.torque)),
        });
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Port {
    A,
    B,
}

enum TagState {
    Unknown,
    InPort { port: Port, since: f64, last: f64 },
    Transit { origin: Port, records: Vec<Record> },
}

/// Splits a time-ordered track into voyages.
///
/// A voyage starts at the first record outside a port geofence after the
/// vessel dwelled inside it for at least `min_port_dwell` seconds, and ends
/// with the first record inside the opposite geofence. Returning to the
/// origin port abandons the crossing. Voyage ids are assigned sequentially
/// from `first_id`.
pub fn tag_voyages(records: &[Record], route: &RouteConfig, first_id: u32) -> Vec<Voyage> {
    let mut voyages = Vec::new();
    let mut next_id = first_id;
    let mut state = TagState::Unknown;
    for r in records {
        let pos = r.position();
        let port = if route.port_a.contains(pos) {
            Some(Port::A)
        } else if route.port_b.contains(pos) {
            Some(Port::B)
        } else {
            None
        };
        state = match (state, port) {
            (TagState::Transit { origin, mut records }, Some(p)) => {
                if p != origin {
                    records.push(r.clone());
                    let direction = match origin {
                        Port::A => Direction::Northbound,
                        Port::B => Direction::Southbound,
                    };
                    let id = VoyageId(next_id);
                    let cleared = records
                        .into_iter()
                        .map(|mut rec| {
                            rec.voyage_id = None;
                            rec
                        })
                        .collect();
                    match Voyage::new(id, direction, cleared) {
                        Ok(v) => {
                            voyages.push(v);
                            next_id += 1;
                        }
                        Err(e) => log::warn!("discarding crossing ending at t={}: {e}", r.timestamp),
                    }
                }
                TagState::InPort {
                    port: p,
                    since: r.timestamp,
                    last: r.timestamp,
                }
            }
            (TagState::Transit { origin, mut records }, None) => {
                records.push(r.clone());
                TagState::Transit { origin, records }
            }
            (TagState::InPort { port, since, .. }, Some(p)) if p == port => TagState::InPort {
                port,
                since,
                last: r.timestamp,
            },
            (_, Some(p)) => TagState::InPort {
                port: p,
                since: r.timestamp,
                last: r.timestamp,
            },
            (TagState::InPort { port, since, last }, None) => {
                if last - since >= route.min_port_dwell {
                    TagState::Transit {
                        origin: port,
                        records: vec![r.clone()],
                    }
                } else {
                    TagState::Unknown
                }
            }
            (TagState::Unknown, None) => TagState::Unknown,
        };
    }
    voyages
}

pub fn classify_segment(r: &Record, route: &RouteConfig) -> RouteSegment {
    if route.direct_region.is_some_and(|b| b.contains(r.position())) {
        return RouteSegment::Direct;
    }
    let [south_max, north_min] = route.segment_bounds;
    if r.lat < south_max {
        RouteSegment::South
    } else if r.lat < north_min {
        RouteSegment::Middle
    } else {
        RouteSegment::North
    }
}

pub fn classify_speed_mode(r: &Record, route: &RouteConfig) -> SpeedMode {
    if r.sog >= route.cruising_sog_threshold {
        SpeedMode::Cruising
    } else {
        SpeedMode::Maneuvering
    }
}

/// Stamps segment and speed-mode labels onto every record.
pub fn annotate_voyage(v: Voyage, route: &RouteConfig) -> Result<Voyage> {
    v.map_records(|mut r| {
        r.segment = Some(classify_segment(&r, route));
        r.speed_mode = Some(classify_speed_mode(&r, route));
        r
    })
}

/// Midpoint between the two dominant modes of the SOG histogram.
///
/// The histogram uses `bin_width` bins smoothed with a 3-bin moving average.
/// The second mode is the tallest local maximum at least `min_separation`
/// away from the first. Returns `None` when the histogram is unimodal.
pub fn sog_mode_midpoint(sogs: &[f64], bin_width: f64, min_separation: f64) -> Option<f64> {
    let finite: Vec<f64> = sogs.iter().copied().filter(|v| v.is_finite() && *v >= 0.0).collect();
    let max = finite.iter().copied().fold(f64::NAN, f64::max);
    if finite.is_empty() || !(bin_width > 0.0) || !(max > 0.0) {
        return None;
    }
    let nbins = (max / bin_width).floor() as usize + 1;
    let mut hist = vec![0.0; nbins];
    for v in &finite {
        hist[((v / bin_width).floor() as usize).min(nbins - 1)] += 1.0;
    }
    let smooth: Vec<f64> = (0..nbins)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(nbins - 1);
            hist[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let center = |i: usize| (i as f64 + 0.5) * bin_width;
    let is_peak = |i: usize| {
        let left = if i == 0 { f64::NEG_INFINITY } else { smooth[i - 1] };
        let right = if i + 1 == nbins { f64::NEG_INFINITY } else { smooth[i + 1] };
        smooth[i] > 0.0 && smooth[i] >= left && smooth[i] >= right
    };
    let first = (0..nbins).filter(|&i| is_peak(i)).max_by(|&a, &b| {
        smooth[a].total_cmp(&smooth[b]).then(b.cmp(&a))
    })?;
    let second = (0..nbins)
        .filter(|&i| is_peak(i) && (center(i) - center(first)).abs() >= min_separation)
        .max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(b.cmp(&a)))?;
    Some(0.5 * (center(first) + center(second)))
}

/// Totals over one speed-mode scope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopeTotals {
    pub fuel_total_l: f64,
    pub time_total_h: f64,
    pub distance_total_km: f64,
    /// Distance over time, m/s.
    pub speed_avg_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub variable: String,
    pub all: f64,
    pub cruising: f64,
    pub difference_pct: f64,
}

impl StatsRow {
    pub fn new(variable: impl Into<String>, all: f64, cruising: f64) -> Self {
        let difference_pct = if all != 0.0 { (all - cruising) / all * 100.0 } else { 0.0 };
        Self {
            variable: variable.into(),
            all,
            cruising,
            difference_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub all: ScopeTotals,
    pub cruising: ScopeTotals,
}

impl StatsTable {
    pub fn rows(&self) -> Vec<StatsRow> {
        vec![
            StatsRow::new("Fuel, total (Liter)", self.all.fuel_total_l, self.cruising.fuel_total_l),
            StatsRow::new("Time, total (Hour)", self.all.time_total_h, self.cruising.time_total_h),
            StatsRow::new(
                "Distance, total (km)",
                self.all.distance_total_km,
                self.cruising.distance_total_km,
            ),
            StatsRow::new("Speed, average (m/s)", self.all.speed_avg_ms, self.cruising.speed_avg_ms),
        ]
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variable", "all", "cruising", "difference_pct"])?;
        for row in self.rows() {
            w.write_record([
                row.variable,
                format!("{:.4}", row.all),
                format!("{:.4}", row.cruising),
                format!("{:.4}", row.difference_pct),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Corpus totals over all legs and over legs that start in Cruising mode.
///
/// Each leg `i -> i+1` is charged with the fuel rate of record `i`; the same
/// convention as [`crate::efficiency::voyage_totals`]. Records without a
/// speed-mode label are classified with `route`.
pub fn dataset_stats(voyages: &[Voyage], route: &RouteConfig) -> Result<StatsTable> {
    if voyages.is_empty() {
        return Err(Error::Empty("no voyages to summarize".into()));
    }
    let mut acc = [[0.0f64; 3]; 2];
    for v in voyages {
        for w in v.records().windows(2) {
            let dt = w[1].timestamp - w[0].timestamp;
            let leg = [
                w[0].fuel_rate * dt / 3600.0,
                dt / 3600.0,
                haversine_distance(w[0].position(), w[1].position()) / 1000.0,
            ];
            let mode = w[0].speed_mode.unwrap_or_else(|| classify_speed_mode(&w[0], route));
            for k in 0..3 {
                acc[0][k] += leg[k];
                if mode == SpeedMode::Cruising {
                    acc[1][k] += leg[k];
                }
            }
        }
    }
    let scope = |a: [f64; 3]| ScopeTotals {
        fuel_total_l: a[0],
        time_total_h: a[1],
        distance_total_km: a[2],
        speed_avg_ms: if a[1] > 0.0 { a[2] * 1000.0 / (a[1] * 3600.0) } else { 0.0 },
    };
    Ok(StatsTable {
        all: scope(acc[0]),
        cruising: scope(acc[1]),
    })
}

/// One entry of the voyage corpus index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub voyage_id: VoyageId,
    pub direction: Direction,
    pub record_count: usize,
    pub start_timestamp: f64,
    pub end_timestamp: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub schema_version: u32,
    pub voyages: Vec<IndexEntry>,
}

pub const INDEX_FILE: &str = "index.json";

/// Writes one CSV per voyage plus `index.json` into `dir`.
pub fn write_voyages(dir: &Path, voyages: &[Voyage]) -> Result<()> {
    let mut entries = Vec::with_capacity(voyages.len());
    for v in voyages {
        let file = format!("voyage_{:05}.csv", v.id().0);
        write_atomic(&dir.join(&file), &records_to_csv_bytes(v.records())?)?;
        entries.push(IndexEntry {
            voyage_id: v.id(),
            direction: v.direction(),
            record_count: v.len(),
            start_timestamp: v.start_time(),
            end_timestamp: v.end_time(),
            file,
        });
    }
    write_json(
        &dir.join(INDEX_FILE),
        &CorpusIndex {
            schema_version: 1,
            voyages: entries,
        },
    )
}

/// Reads a directory written by [`write_voyages`].
pub fn read_voyages(dir: &Path) -> Result<Vec<Voyage>> {
    let index: CorpusIndex = read_json(&dir.join(INDEX_FILE))?;
    let schema = Schema::default();
    index
        .voyages
        .iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let parsed = read_records_file(&path, &schema)?;
            if parsed.dropped > 0 {
                return Err(Error::Invalid(format!("{}: {} malformed rows", path.display(), parsed.dropped)));
            }
            Voyage::new(e.voyage_id, e.direction, parsed.records)
        })
        .collect()
}
