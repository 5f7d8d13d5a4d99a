//! k-nearest-neighbour speed regression over standardized features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{column_moments, voyage_features, FeatureRow, FEATURE_NAMES, N_FEATURES};
use crate::model::{Provenance, SpeedMode, SpeedProfile, Voyage};

pub const DEFAULT_K_GRID: [usize; 6] = [1, 3, 5, 9, 15, 25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    /// Indices into the full feature row that survived the variance check.
    pub kept: Vec<usize>,
    pub dropped: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Standardized training rows over the kept features.
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub k: usize,
}

fn is_constant(mean: f64, std: f64) -> bool {
    !(std > 1e-12 * mean.abs().max(1.0))
}

/// Builds the feature store from raw rows; constant columns are dropped.
pub fn build_knn_from_rows(rows: &[FeatureRow], targets: &[f64], k: usize) -> Result<KnnModel> {
    if rows.is_empty() {
        return Err(Error::Empty("kNN training set is empty".into()));
    }
    if rows.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: targets.len(),
        });
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let (mean, std) = column_moments(&raw, N_FEATURES);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..N_FEATURES {
        if is_constant(mean[j], std[j]) {
            dropped.push(FEATURE_NAMES[j].to_string());
        } else {
            kept.push(j);
        }
    }
    let means: Vec<f64> = kept.iter().map(|&j| mean[j]).collect();
    let stds: Vec<f64> = kept.iter().map(|&j| std[j]).collect();
    let mut model = KnnModel {
        kept,
        dropped,
        means,
        stds,
        rows: Vec::new(),
        targets: targets.to_vec(),
        k,
    };
    model.rows = rows.iter().map(|r| model.standardize(r)).collect();
    Ok(model)
}

/// Training rows from the cruising records of `voyages`.
pub fn training_rows(voyages: &[Voyage]) -> Result<(Vec<FeatureRow>, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for v in voyages {
        let feats = voyage_features(v)?;
        for (r, f) in v.records().iter().zip(feats) {
            if r.speed_mode == Some(SpeedMode::Cruising) {
                rows.push(f);
                targets.push(r.sog);
            }
        }
    }
    Ok((rows, targets))
}

pub fn build_knn(voyages: &[Voyage], k: usize) -> Result<KnnModel> {
    let (rows, targets) = training_rows(voyages)?;
    build_knn_from_rows(&rows, &targets, k)
}

impl KnnModel {
    pub fn standardize(&self, row: &FeatureRow) -> Vec<f64> {
        self.kept
            .iter()
            .enumerate()
            .map(|(c, &j)| (row[j] - self.means[c]) / self.stds[c])
            .collect()
    }

    fn sq_dist(&self, q: &[f64], i: usize) -> f64 {
        self.rows[i].iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Indices of the `k` nearest rows, ordered by (distance, index).
    pub fn neighbours(&self, row: &FeatureRow, k: usize) -> Vec<usize> {
        let q = self.standardize(row);
        let mut cand: Vec<(f64, usize)> = (0..self.rows.len()).map(|i| (self.sq_dist(&q, i), i)).collect();
        let k = k.min(cand.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k, cmp);
            cand.truncate(k);
        }
        cand.sort_by(cmp);
        cand.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict_with_k(&self, row: &FeatureRow, k: usize) -> f64 {
        let nb = self.neighbours(row, k);
        nb.iter().map(|&i| self.targets[i]).sum::<f64>() / nb.len() as f64
    }

    pub fn predict(&self, row: &FeatureRow) -> f64 {
        self.predict_with_k(row, self.k)
    }
}

/// Mean speed of the `k` nearest standardized rows.
pub fn knn_predict(m: &KnnModel, query: &FeatureRow) -> f64 {
    m.predict(query)
}

/// Picks the candidate k with the lowest validation RMSE; ties go to the
/// smaller k. Neighbour lists are computed once at the largest candidate.
pub fn select_k(m: &KnnModel, candidates: &[usize], val_rows: &[FeatureRow], val_targets: &[f64]) -> Result<usize> {
    let mut ks: Vec<usize> = candidates.iter().copied().filter(|&k| k > 0).collect();
    ks.sort_unstable();
    ks.dedup();
    let Some(&kmax) = ks.last() else {
        return Err(Error::Invalid("no candidate k values".into()));
    };
    if ks.len() == 1 || val_rows.is_empty() {
        return Ok(ks[0]);
    }
    let sq_err: Vec<Vec<f64>> = val_rows
        .par_iter()
        .zip(val_targets)
        .map(|(row, y)| {
            let nb = m.neighbours(row, kmax);
            ks.iter()
                .map(|&k| {
                    let kk = k.min(nb.len());
                    let pred = nb[..kk].iter().map(|&i| m.targets[i]).sum::<f64>() / kk as f64;
                    (pred - y) * (pred - y)
                })
                .collect()
        })
        .collect();
    let mut best = (f64::INFINITY, ks[0]);
    for (c, &k) in ks.iter().enumerate() {
        let mse = sq_err.iter().map(|e| e[c]).sum::<f64>() / val_rows.len() as f64;
        if mse < best.0 {
            best = (mse, k);
        }
    }
    Ok(best.1)
}

/// Predicted profile for a voyage, clipped to `[sog_min, sog_max]`.
pub fn knn_profile(m: &KnnModel, v: &Voyage, sog_min: f64, sog_max: f64) -> Result<SpeedProfile> {
    let feats = voyage_features(v)?;
    let pos = feats.iter().map(|f| f[0]).collect();
    let sog = feats.par_iter().map(|f| m.predict(f)).collect();
    Ok(SpeedProfile::new(v.id(), pos, sog, Provenance::Predicted("KNN".into()))?.clipped(sog_min, sog_max))
}
