//! Per-step model inputs shared by the kNN and LSTM models.

use crate::error::Result;
use crate::model::{along_track_fraction, Record, Voyage};

pub const FEATURE_NAMES: [&str; 6] = [
    "along_track",
    "wave_height",
    "wind_speed",
    "wind_rel_cos",
    "wind_rel_sin",
    "current_along",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

pub type FeatureRow = [f64; N_FEATURES];

pub fn record_features(r: &Record, along_track: f64) -> FeatureRow {
    let rel = (r.wind_dir - r.heading).to_radians();
    let cur = (r.current_dir - r.heading).to_radians();
    [
        along_track,
        r.wave_height,
        r.wind_speed,
        rel.cos(),
        rel.sin(),
        r.current_speed * cur.cos(),
    ]
}

pub fn voyage_features(v: &Voyage) -> Result<Vec<FeatureRow>> {
    let pos = along_track_fraction(v)?;
    Ok(v.records().iter().zip(&pos).map(|(r, p)| record_features(r, *p)).collect())
}

/// Column means and population standard deviations.
pub fn column_moments(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for j in 0..dim {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for j in 0..dim {
            let d = r[j] - mean[j];
            var[j] += d * d;
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}
