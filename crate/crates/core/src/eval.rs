//! Train every model on every cluster, optimize the held-out voyages and
//! report efficiency gains.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{percentile_clusters, ClusterName, ClusterSet};
use crate::dtw::{nn1_dtw_predict, DtwCandidate, DtwConfig};
use crate::efficiency::{
    calibrate_fuel_model, eff_gain, enforce_arrival_time, estimate_profile_efficiency, score_corpus, Calibration,
    EfficiencyModel, EvaluationRecord, FuelModelCoeffs, NormalizationConstants, MODEL_FILE_SCHEMA, ProfileEstimate, RouteLegs,
};
use crate::error::{Error, Result};
use crate::hmm::{
    build_speed_policy, fit_hmm, hmm_predict, voyage_observations, HmmArtifact, HmmFitConfig, HmmModel, SpeedPolicy,
};
use crate::ingest::{annotate_voyage, resample_1min, tag_voyages};
use crate::io::{fmt_f64, fmt_opt_f64, read_json, write_atomic, write_json};
use crate::knn::{build_knn, knn_profile, select_k, training_rows, KnnModel, DEFAULT_K_GRID};
use crate::lstm::{fit_lstm, lstm_predict, LstmConfig, LstmModel};
use crate::model::{Provenance, Record, RouteConfig, SpeedProfile, Voyage, VoyageId, WeatherState};
use crate::weather::{attach_weather, dominant_weather_state, GridSet, WeatherThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Predicts the measured profile; every gain must be exactly zero.
    Identity,
    Lstm,
    Knn,
    Dtw,
    Hmm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Identity,
        ModelKind::Lstm,
        ModelKind::Knn,
        ModelKind::Dtw,
        ModelKind::Hmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Identity => "Identity",
            ModelKind::Lstm => "LSTM",
            ModelKind::Knn => "KNN",
            ModelKind::Dtw => "1NN-DTW",
            ModelKind::Hmm => "HMM",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("dtw") {
            return Ok(ModelKind::Dtw);
        }
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown model {s:?}")))
    }
}

/// Where the fuel-model coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelSource {
    /// Least squares on the training split.
    Calibrate,
    Fixed(FuelModelCoeffs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub knn_k_grid: Vec<usize>,
    pub dtw: DtwConfig,
    pub hmm: HmmFitConfig,
    pub hmm_bins: usize,
    pub lstm: LstmConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            knn_k_grid: DEFAULT_K_GRID.to_vec(),
            dtw: DtwConfig::default(),
            hmm: HmmFitConfig::default(),
            hmm_bins: 20,
            lstm: LstmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Fraction of voyages used for training.
    pub split: f64,
    pub clusters: Vec<ClusterName>,
    pub models: Vec<ModelKind>,
    /// Allowed relative increase of the estimated voyage time.
    pub arrival_slack: f64,
    pub sog_min: f64,
    pub sog_max: f64,
    pub thresholds: WeatherThresholds,
    pub fuel: FuelSource,
    pub settings: ModelSettings,
    pub seed: u64,
    /// How many test voyages get a speed-profile plot.
    pub profile_plots: usize,
    /// Cluster whose predictions are plotted.
    pub plot_cluster: ClusterName,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            split: 0.7,
            clusters: ClusterName::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            arrival_slack: 0.05,
            sog_min: 1.0,
            sog_max: 7.5,
            thresholds: WeatherThresholds::default(),
            fuel: FuelSource::Calibrate,
            settings: ModelSettings::default(),
            seed: 42,
            profile_plots: 3,
            plot_cluster: ClusterName::Top75Pr,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Invalid(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if !(self.arrival_slack >= 0.0 && self.arrival_slack.is_finite()) {
            return Err(Error::Invalid(format!("arrival_slack must be non-negative, got {}", self.arrival_slack)));
        }
        if !(self.sog_min > 0.0 && self.sog_min < self.sog_max && self.sog_max.is_finite()) {
            return Err(Error::Invalid(format!(
                "need 0 < sog_min < sog_max, got [{}, {}]",
                self.sog_min, self.sog_max
            )));
        }
        if self.clusters.is_empty() || self.models.is_empty() {
            return Err(Error::Invalid("experiment needs at least one cluster and one model".into()));
        }
        self.thresholds.validate()?;
        self.settings.lstm.validate()
    }
}

/// Resamples, tags, labels and fuses a raw track into voyages. Voyages that
/// fall outside the weather grids are dropped with a warning.
pub fn build_corpus(track: &[Record], route: &RouteConfig, grids: &GridSet) -> Result<Vec<Voyage>> {
    let tagged = tag_voyages(&resample_1min(track)?, route, 0);
    let mut out = Vec::with_capacity(tagged.len());
    for v in tagged {
        let id = v.id();
        match annotate_voyage(v, route).and_then(|v| attach_weather(v, grids)) {
            Ok(v) => out.push(v),
            Err(e) => log::warn!("dropping voyage {id}: {e}"),
        }
    }
    Ok(out)
}

/// Seeded split by voyage id; both halves are returned sorted by id.
pub fn split_ids(ids: &[VoyageId], fraction: f64, seed: u64) -> Result<(Vec<VoyageId>, Vec<VoyageId>)> {
    if ids.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 voyages to split, got {}", ids.len())));
    }
    let mut shuffled: Vec<VoyageId> = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut train = shuffled[..n_train].to_vec();
    let mut test = shuffled[n_train..].to_vec();
    train.sort();
    test.sort();
    Ok((train, test))
}

/// A held-out voyage with everything the estimator needs.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub voyage: Voyage,
    pub legs: RouteLegs,
    pub measured: SpeedProfile,
    pub meas: ProfileEstimate,
    pub bound_h: f64,
    pub state: WeatherState,
}

impl TestCase {
    pub fn new(
        voyage: Voyage,
        coeffs: &FuelModelCoeffs,
        norm: &NormalizationConstants,
        slack: f64,
        th: &WeatherThresholds,
    ) -> Result<Self> {
        let legs = RouteLegs::from_voyage(&voyage)?;
        let measured = SpeedProfile::measured(&voyage)?;
        let meas = estimate_profile_efficiency(&measured, &legs, coeffs, norm)?;
        let state = dominant_weather_state(&voyage, th);
        Ok(Self {
            bound_h: meas.time_h * (1.0 + slack),
            voyage,
            legs,
            measured,
            meas,
            state,
        })
    }
}

/// A model trained on one cluster.
#[derive(Debug, Clone)]
pub enum Trained {
    Identity,
    Knn(KnnModel),
    Dtw(Vec<DtwCandidate>),
    Hmm(HmmModel, SpeedPolicy),
    Lstm(LstmModel),
}

fn knn_with_selected_k(voyages: &[Voyage], grid: &[usize]) -> Result<KnnModel> {
    // Every fifth voyage validates k, then the model is rebuilt on all of them.
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (i, v) in voyages.iter().enumerate() {
        if i % 5 == 4 {
            val.push(v.clone());
        } else {
            fit.push(v.clone());
        }
    }
    let first = grid.iter().copied().find(|k| *k > 0).unwrap_or(1);
    let k = if val.is_empty() {
        first
    } else {
        let m = build_knn(&fit, first)?;
        let (rows, targets) = training_rows(&val)?;
        select_k(&m, grid, &rows, &targets)?
    };
    build_knn(voyages, k)
}

fn dtw_candidates(voyages: &[Voyage], cfg: &DtwConfig) -> Result<Vec<DtwCandidate>> {
    voyages
        .iter()
        .map(|v| {
            Ok(DtwCandidate {
                profile: SpeedProfile::measured(v)?,
                wave: cfg
                    .use_wave_channel
                    .then(|| v.records().iter().map(|r| r.wave_height).collect()),
                eff_score: v.eff_score().unwrap_or(f64::NEG_INFINITY),
            })
        })
        .collect()
}

pub const TRAINED_MANIFEST_FILE: &str = "model.json";

/// Describes a saved model directory. 1NN-DTW keeps no parameters and is
/// rebuilt from `members`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedManifest {
    pub schema_version: u32,
    pub model: ModelKind,
    pub cluster: ClusterName,
    pub members: Vec<VoyageId>,
    pub seed: u64,
}

impl Trained {
    pub fn kind(&self) -> ModelKind {
        match self {
            Trained::Identity => ModelKind::Identity,
            Trained::Knn(_) => ModelKind::Knn,
            Trained::Dtw(_) => ModelKind::Dtw,
            Trained::Hmm(..) => ModelKind::Hmm,
            Trained::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn save(&self, dir: &Path, manifest: &TrainedManifest) -> Result<()> {
        if manifest.model != self.kind() {
            return Err(Error::Invalid(format!("manifest says {}, model is {}", manifest.model, self.kind())));
        }
        match self {
            Trained::Identity | Trained::Dtw(_) => {}
            Trained::Knn(m) => write_json(&dir.join("knn.json"), m)?,
            Trained::Hmm(m, p) => write_json(
                &dir.join("hmm.json"),
                &HmmArtifact {
                    schema_version: 1,
                    model: m.clone(),
                    policy: p.clone(),
                },
            )?,
            Trained::Lstm(m) => m.save(&dir.join("lstm.bin"), &dir.join("lstm.json"))?,
        }
        write_json(&dir.join(TRAINED_MANIFEST_FILE), manifest)
    }

    /// Loads a model saved by [`Trained::save`]. `train` must contain the
    /// manifest's members when the model is 1NN-DTW.
    pub fn load(dir: &Path, train: &[Voyage], s: &ModelSettings) -> Result<(Self, TrainedManifest)> {
        let manifest: TrainedManifest = read_json(&dir.join(TRAINED_MANIFEST_FILE))?;
        if manifest.schema_version != MODEL_FILE_SCHEMA {
            return Err(Error::Schema(format!(
                "{}: unsupported model schema version {}",
                dir.display(),
                manifest.schema_version
            )));
        }
        let trained = match manifest.model {
            ModelKind::Identity => Trained::Identity,
            ModelKind::Knn => Trained::Knn(read_json(&dir.join("knn.json"))?),
            ModelKind::Hmm => {
                let a: HmmArtifact = read_json(&dir.join("hmm.json"))?;
                a.model.validate()?;
                Trained::Hmm(a.model, a.policy)
            }
            ModelKind::Lstm => Trained::Lstm(LstmModel::load(&dir.join("lstm.bin"), &dir.join("lstm.json"))?),
            ModelKind::Dtw => {
                let by_id: BTreeMap<VoyageId, &Voyage> = train.iter().map(|v| (v.id(), v)).collect();
                let members = manifest
                    .members
                    .iter()
                    .map(|id| {
                        by_id
                            .get(id)
                            .map(|v| (*v).clone())
                            .ok_or_else(|| Error::Invalid(format!("cluster member {id} is not in the training corpus")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Trained::Dtw(dtw_candidates(&members, &s.dtw)?)
            }
        };
        Ok((trained, manifest))
    }

    pub fn train(kind: ModelKind, voyages: &[Voyage], s: &ModelSettings, seed: u64) -> Result<Self> {
        if voyages.is_empty() {
            return Err(Error::Empty(format!("{kind} training cluster is empty")));
        }
        Ok(match kind {
            ModelKind::Identity => Trained::Identity,
            ModelKind::Knn => Trained::Knn(knn_with_selected_k(voyages, &s.knn_k_grid)?),
            ModelKind::Dtw => Trained::Dtw(dtw_candidates(voyages, &s.dtw)?),
            ModelKind::Hmm => {
                let seqs: Vec<_> = voyages.iter().map(voyage_observations).collect();
                let fit = fit_hmm(&seqs, seed, &s.hmm)?;
                let policy = build_speed_policy(voyages, &fit.model, s.hmm_bins)?;
                Trained::Hmm(fit.model, policy)
            }
            ModelKind::Lstm => Trained::Lstm(fit_lstm(voyages, &LstmConfig { seed, ..s.lstm })?),
        })
    }

    /// Raw predicted profile, before the maneuvering override and the
    /// arrival-time constraint.
    pub fn predict(&self, tc: &TestCase, s: &ModelSettings, sog_min: f64, sog_max: f64) -> Result<SpeedProfile> {
        let v = &tc.voyage;
        match self {
            Trained::Identity => Ok(SpeedProfile {
                provenance: Provenance::Predicted(ModelKind::Identity.as_str().into()),
                ..tc.measured.clone()
            }),
            Trained::Knn(m) => knn_profile(m, v, sog_min, sog_max),
            Trained::Dtw(c) => {
                let wave: Option<Vec<f64>> =
                    s.dtw.use_wave_channel.then(|| v.records().iter().map(|r| r.wave_height).collect());
                Ok(nn1_dtw_predict(c, &tc.measured, wave.as_deref(), &s.dtw)?.profile.clipped(sog_min, sog_max))
            }
            Trained::Hmm(m, p) => Ok(hmm_predict(m, p, v, sog_min, sog_max)?.0),
            Trained::Lstm(m) => lstm_predict(m, v, sog_min, sog_max),
        }
    }
}

/// Optimized profile after restoring measured speeds on maneuvering legs and
/// enforcing the arrival-time bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub profile: SpeedProfile,
    pub estimate: ProfileEstimate,
    pub constrained: bool,
    pub infeasible: bool,
}

pub fn optimize(pred: &SpeedProfile, tc: &TestCase, coeffs: &FuelModelCoeffs, norm: &NormalizationConstants, sog_max: f64) -> Result<Optimized> {
    if pred.len() != tc.measured.len() {
        return Err(Error::DimensionMismatch {
            expected: tc.measured.len(),
            got: pred.len(),
        });
    }
    let mut sog = pred.sog.clone();
    for (i, adjustable) in tc.legs.adjustable.iter().enumerate() {
        if !adjustable {
            sog[i] = tc.measured.sog[i];
        }
    }
    let last = sog.len() - 1;
    sog[last] = tc.measured.sog[last];
    let adj = enforce_arrival_time(&sog, &tc.legs, tc.bound_h, sog_max)?;
    let profile = SpeedProfile {
        sog: adj.sog,
        ..pred.clone()
    };
    let estimate = estimate_profile_efficiency(&profile, &tc.legs, coeffs, norm)?;
    Ok(Optimized {
        profile,
        estimate,
        constrained: adj.constrained,
        infeasible: adj.infeasible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub cluster: String,
    pub model: String,
    /// Absent when the cell failed or no gain was defined.
    pub mean_gain_pct: Option<f64>,
    pub improved_count: f64,
    pub test_count: f64,
}

/// Per (cluster, model) mean gain and improved count, then one `Average`
/// row per model over the clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
}

pub const AVERAGE_ROW: &str = "Average";

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Population standard deviation.
fn pop_std(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
}

impl GainTable {
    /// `cells` maps (cluster, model) to the records of that job, or `None`
    /// for a failed job.
    pub fn from_cells(cells: &BTreeMap<(ClusterName, ModelKind), Option<Vec<EvaluationRecord>>>) -> Self {
        let mut rows = Vec::new();
        let mut per_model: BTreeMap<ModelKind, Vec<GainRow>> = BTreeMap::new();
        for ((c, m), recs) in cells {
            let row = match recs {
                Some(recs) => {
                    let gains: Vec<f64> = recs.iter().filter_map(|r| r.gain_pct).collect();
                    GainRow {
                        cluster: c.as_str().into(),
                        model: m.as_str().into(),
                        mean_gain_pct: mean(&gains),
                        improved_count: recs.iter().filter(|r| r.improved()).count() as f64,
                        test_count: recs.len() as f64,
                    }
                }
                None => GainRow {
                    cluster: c.as_str().into(),
                    model: m.as_str().into(),
                    mean_gain_pct: None,
                    improved_count: 0.0,
                    test_count: 0.0,
                },
            };
            if recs.is_some() {
                per_model.entry(*m).or_default().push(row.clone());
            }
            rows.push(row);
        }
        for (m, cells) in per_model {
            let gains: Vec<f64> = cells.iter().filter_map(|r| r.mean_gain_pct).collect();
            let improved: Vec<f64> = cells.iter().map(|r| r.improved_count).collect();
            let tests: Vec<f64> = cells.iter().map(|r| r.test_count).collect();
            rows.push(GainRow {
                cluster: AVERAGE_ROW.into(),
                model: m.as_str().into(),
                mean_gain_pct: mean(&gains),
                improved_count: mean(&improved).unwrap_or(0.0),
                test_count: mean(&tests).unwrap_or(0.0),
            });
        }
        Self { rows }
    }

    pub fn get(&self, cluster: &str, model: &str) -> Option<&GainRow> {
        self.rows.iter().find(|r| r.cluster == cluster && r.model == model)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(GAIN_TABLE_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.cluster.clone(),
                r.model.clone(),
                fmt_opt_f64(r.mean_gain_pct),
                fmt_f64(r.improved_count),
                fmt_f64(r.test_count),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

pub const GAIN_TABLE_COLUMNS: [&str; 5] = ["cluster", "model", "mean_gain_pct", "improved_count", "test_count"];
pub const WEATHER_COLUMNS: [&str; 5] = ["model", "state", "mean_gain_pct", "std_gain_pct", "n_voyages"];
pub const RECORD_COLUMNS: [&str; 8] = [
    "voyage_id",
    "cluster",
    "model",
    "eff_meas",
    "eff_pred",
    "gain_pct",
    "weather_state",
    "constrained_flag",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub model: String,
    pub state: WeatherState,
    pub mean_gain_pct: Option<f64>,
    pub std_gain_pct: Option<f64>,
    pub n_voyages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherBreakdownTable {
    pub rows: Vec<WeatherRow>,
}

impl WeatherBreakdownTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(WEATHER_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.state.as_str().to_string(),
                fmt_opt_f64(r.mean_gain_pct),
                fmt_opt_f64(r.std_gain_pct),
                r.n_voyages.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Mean and population standard deviation of gains per (model, threshold
/// state), pooling every cluster's record with equal weight. States without
/// voyages get empty statistics.
pub fn weather_breakdown(records: &[EvaluationRecord]) -> WeatherBreakdownTable {
    let mut models: Vec<&str> = Vec::new();
    for r in records {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut rows = Vec::new();
    for m in models {
        for state in WeatherState::ALL {
            let gains: Vec<f64> = records
                .iter()
                .filter(|r| r.model == m && r.weather_state == state)
                .filter_map(|r| r.gain_pct)
                .collect();
            rows.push(WeatherRow {
                model: m.to_string(),
                state,
                mean_gain_pct: mean(&gains),
                std_gain_pct: pop_std(&gains),
                n_voyages: gains.len(),
            });
        }
    }
    WeatherBreakdownTable { rows }
}

/// Parses a file written by [`records_to_csv`].
pub fn records_from_csv<R: std::io::Read>(source: R) -> Result<Vec<EvaluationRecord>> {
    let mut rdr = csv::Reader::from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Schema(format!("expected columns {RECORD_COLUMNS:?}, got {headers:?}")));
    }
    let bad = |line: usize, what: &str| Error::Schema(format!("records line {line}: bad {what}"));
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let num = |k: usize| row[k].parse::<f64>().map_err(|_| bad(line, RECORD_COLUMNS[k]));
        out.push(EvaluationRecord {
            voyage_id: row[0].parse().map_err(|_| bad(line, "voyage_id"))?,
            cluster: row[1].to_string(),
            model: row[2].to_string(),
            eff_meas: num(3)?,
            eff_pred: num(4)?,
            gain_pct: if row[5].is_empty() { None } else { Some(num(5)?) },
            weather_state: row[6].parse().map_err(|_| bad(line, "weather_state"))?,
            constrained: match &row[7] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(line, "constrained_flag")),
            },
        });
    }
    Ok(out)
}

impl GainTable {
    /// Rebuilds the table from flat records; `failures` become empty cells.
    pub fn from_records(records: &[EvaluationRecord], failures: &[JobFailure]) -> Result<Self> {
        let mut cells: BTreeMap<(ClusterName, ModelKind), Option<Vec<EvaluationRecord>>> = BTreeMap::new();
        for r in records {
            let key = (r.cluster.parse()?, r.model.parse()?);
            cells.entry(key).or_insert_with(|| Some(Vec::new())).get_or_insert_with(Vec::new).push(r.clone());
        }
        for f in failures {
            cells.insert((f.cluster.parse()?, f.model.parse()?), None);
        }
        Ok(Self::from_cells(&cells))
    }
}

pub fn records_to_csv(records: &[EvaluationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.voyage_id.to_string(),
            r.cluster.clone(),
            r.model.clone(),
            fmt_f64(r.eff_meas),
            fmt_f64(r.eff_pred),
            fmt_opt_f64(r.gain_pct),
            r.weather_state.as_str().to_string(),
            u8::from(r.constrained).to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

/// Measured and optimized profiles of one test voyage, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePlot {
    pub voyage_id: VoyageId,
    pub measured: SpeedProfile,
    pub predicted: Vec<(String, SpeedProfile)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub cluster: String,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub n_voyages: usize,
    pub train_ids: Vec<VoyageId>,
    pub test_ids: Vec<VoyageId>,
    pub skipped_test_ids: Vec<VoyageId>,
    pub coeffs: FuelModelCoeffs,
    pub calibration: Option<Calibration>,
    pub normalization: NormalizationConstants,
    pub clusters: ClusterSet,
    pub failures: Vec<JobFailure>,
    pub constrained_count: usize,
    pub infeasible_count: usize,
    pub partial: bool,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub gain_table: GainTable,
    pub weather: WeatherBreakdownTable,
    pub records: Vec<EvaluationRecord>,
    pub plots: Vec<ProfilePlot>,
    pub summary: ExperimentSummary,
}

/// Optimized test voyages of one (cluster, model) job.
#[derive(Debug, Clone)]
pub struct JobOutput {
    pub records: Vec<EvaluationRecord>,
    pub profiles: Vec<SpeedProfile>,
    pub infeasible: usize,
}

/// Fails with [`Error::Leakage`] when a test voyage sits in a training cluster.
pub fn check_leakage(clusters: &ClusterSet, test_ids: &[VoyageId]) -> Result<()> {
    let test: BTreeSet<VoyageId> = test_ids.iter().copied().collect();
    for (c, ids) in &clusters.members {
        if let Some(id) = ids.iter().find(|id| test.contains(id)) {
            return Err(Error::Leakage(format!("test voyage {id} is in training cluster {c}")));
        }
    }
    Ok(())
}

/// Everything derived from the training split: fuel model, normalization
/// constants and clusters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train_ids: Vec<VoyageId>,
    pub test_ids: Vec<VoyageId>,
    /// Training voyages with totals and Eff-Scores.
    pub train: Vec<Voyage>,
    pub coeffs: FuelModelCoeffs,
    pub calibration: Option<Calibration>,
    pub norm: NormalizationConstants,
    pub clusters: ClusterSet,
}

pub fn prepare(corpus: &[Voyage], cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let ids: Vec<VoyageId> = corpus.iter().map(|v| v.id()).collect();
    if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
        return Err(Error::Invalid("corpus has duplicate voyage ids".into()));
    }
    let (train_ids, test_ids) = split_ids(&ids, cfg.split, cfg.seed)?;
    let by_id: BTreeMap<VoyageId, &Voyage> = corpus.iter().map(|v| (v.id(), v)).collect();
    let train: Vec<Voyage> = train_ids.iter().map(|id| by_id[id].clone()).collect();
    let (coeffs, calibration) = match cfg.fuel {
        FuelSource::Fixed(c) => (c, None),
        FuelSource::Calibrate => {
            let cal = calibrate_fuel_model(&train)?;
            (cal.coeffs, Some(cal))
        }
    };
    let (train, norm) = score_corpus(train)?;
    let clusters = percentile_clusters(&train)?;
    check_leakage(&clusters, &test_ids)?;
    Ok(Prepared {
        train_ids,
        test_ids,
        train,
        coeffs,
        calibration,
        norm,
        clusters,
    })
}

impl Prepared {
    /// Training voyages in cluster `c`, in id order.
    pub fn members(&self, c: ClusterName) -> Vec<Voyage> {
        let ids: BTreeSet<&VoyageId> = self.clusters.get(c).iter().collect();
        self.train.iter().filter(|v| ids.contains(&v.id())).cloned().collect()
    }

    /// Test cases in id order, plus the ids of test voyages that could not be
    /// estimated.
    pub fn test_cases(&self, corpus: &[Voyage], cfg: &ExperimentConfig) -> (Vec<TestCase>, Vec<VoyageId>) {
        let by_id: BTreeMap<VoyageId, &Voyage> = corpus.iter().map(|v| (v.id(), v)).collect();
        let mut cases = Vec::new();
        let mut skipped = Vec::new();
        for id in &self.test_ids {
            match TestCase::new(by_id[id].clone(), &self.coeffs, &self.norm, cfg.arrival_slack, &cfg.thresholds) {
                Ok(tc) => cases.push(tc),
                Err(e) => {
                    log::warn!("skipping test voyage {id}: {e}");
                    skipped.push(*id);
                }
            }
        }
        (cases, skipped)
    }

    pub fn efficiency_model(&self) -> EfficiencyModel {
        EfficiencyModel {
            schema_version: MODEL_FILE_SCHEMA,
            coeffs: self.coeffs,
            normalization: self.norm,
            calibration: self.calibration.clone(),
        }
    }
}

/// Predicts, optimizes and scores every test case with one trained model.
pub fn evaluate_trained(
    trained: &Trained,
    cases: &[TestCase],
    cluster: ClusterName,
    kind: ModelKind,
    prep: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<JobOutput> {
    let mut out = JobOutput {
        records: Vec::with_capacity(cases.len()),
        profiles: Vec::with_capacity(cases.len()),
        infeasible: 0,
    };
    for tc in cases {
        let pred = trained.predict(tc, &cfg.settings, cfg.sog_min, cfg.sog_max)?;
        let opt = optimize(&pred, tc, &prep.coeffs, &prep.norm, cfg.sog_max)?;
        if opt.infeasible {
            out.infeasible += 1;
        }
        out.records.push(EvaluationRecord {
            voyage_id: tc.voyage.id(),
            cluster: cluster.as_str().into(),
            model: kind.as_str().into(),
            eff_meas: tc.meas.eff_score,
            eff_pred: opt.estimate.eff_score,
            gain_pct: eff_gain(tc.meas.eff_score, opt.estimate.eff_score).ok(),
            weather_state: tc.state,
            constrained: opt.constrained,
        });
        out.profiles.push(opt.profile);
    }
    Ok(out)
}

/// Runs every (cluster, model) job on a fused, labeled corpus. Failed jobs
/// are logged and reported; the experiment carries on.
pub fn run_experiment(corpus: &[Voyage], cfg: &ExperimentConfig) -> Result<Experiment> {
    let prep = prepare(corpus, cfg)?;
    let (cases, skipped) = prep.test_cases(corpus, cfg);
    let plot_ids: BTreeSet<VoyageId> = cases.iter().take(cfg.profile_plots).map(|c| c.voyage.id()).collect();

    let mut models: Vec<ModelKind> = cfg.models.clone();
    models.sort();
    models.dedup();
    let mut cluster_names: Vec<ClusterName> = cfg.clusters.clone();
    cluster_names.sort();
    cluster_names.dedup();
    let jobs: Vec<(ClusterName, ModelKind)> = cluster_names
        .iter()
        .flat_map(|c| models.iter().map(move |m| (*c, *m)))
        .collect();

    let run_job = |c: ClusterName, kind: ModelKind| -> Result<JobOutput> {
        let trained = Trained::train(kind, &prep.members(c), &cfg.settings, cfg.seed)?;
        evaluate_trained(&trained, &cases, c, kind, &prep, cfg)
    };
    let results: Vec<((ClusterName, ModelKind), Result<JobOutput>)> = jobs
        .par_iter()
        .map(|&(c, m)| {
            log::info!("training {m} on {c}");
            ((c, m), run_job(c, m))
        })
        .collect();

    let mut cells = BTreeMap::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut plotted: BTreeMap<VoyageId, Vec<(String, SpeedProfile)>> = BTreeMap::new();
    let mut infeasible_count = 0;
    for ((c, m), res) in results {
        match res {
            Ok(out) => {
                infeasible_count += out.infeasible;
                if c == cfg.plot_cluster {
                    for (r, p) in out.records.iter().zip(out.profiles) {
                        if plot_ids.contains(&r.voyage_id) {
                            plotted.entry(r.voyage_id).or_default().push((m.as_str().to_string(), p));
                        }
                    }
                }
                records.extend(out.records.iter().cloned());
                cells.insert((c, m), Some(out.records));
            }
            Err(e) => {
                log::error!("{m} on {c} failed: {e}");
                failures.push(JobFailure {
                    cluster: c.as_str().into(),
                    model: m.as_str().into(),
                    error: e.to_string(),
                });
                cells.insert((c, m), None);
            }
        }
    }
    let plots = cases
        .iter()
        .filter(|tc| plot_ids.contains(&tc.voyage.id()))
        .map(|tc| ProfilePlot {
            voyage_id: tc.voyage.id(),
            measured: tc.measured.clone(),
            predicted: plotted.remove(&tc.voyage.id()).unwrap_or_default(),
        })
        .collect();
    let constrained_count = records.iter().filter(|r| r.constrained).count();
    let summary = ExperimentSummary {
        schema_version: 1,
        n_voyages: corpus.len(),
        train_ids: prep.train_ids,
        test_ids: prep.test_ids,
        partial: !failures.is_empty(),
        skipped_test_ids: skipped,
        coeffs: prep.coeffs,
        calibration: prep.calibration,
        normalization: prep.norm,
        clusters: prep.clusters,
        failures,
        constrained_count,
        infeasible_count,
    };
    Ok(Experiment {
        gain_table: GainTable::from_cells(&cells),
        weather: weather_breakdown(&records),
        records,
        plots,
        summary,
    })
}

const PALETTE: [&str; 6] = ["#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const W: f64 = 800.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (v, y) in [(y_lo, H - PAD), (y_hi, PAD)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.2}</text>"#,
            PAD - 4.0
        );
    }
}

fn polyline(out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str, label: &str) {
    let mut d = String::new();
    for (x, y) in pts {
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></polyline>"#,
        d.trim_end(),
        escape(label)
    );
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Measured plus one polyline per model over along-track position.
pub fn profile_svg(plot: &ProfilePlot) -> String {
    let series: Vec<(&str, &SpeedProfile)> = std::iter::once(("Measured", &plot.measured))
        .chain(plot.predicted.iter().map(|(n, p)| (n.as_str(), p)))
        .collect();
    let (lo, hi) = y_range(series.iter().flat_map(|(_, p)| p.sog.iter().copied()));
    let mut out = String::new();
    svg_open(&mut out, &format!("Speed profile, voyage {}", plot.voyage_id));
    axes(&mut out, "along-track position", "SOG (m/s)", lo, hi);
    let sx = |x: f64| PAD + x * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(
            &mut out,
            p.positions.iter().zip(&p.sog).map(|(x, y)| (sx(*x), sy(*y))),
            color,
            name,
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            W - PAD + 4.0 - 120.0,
            PAD + 14.0 * i as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Gains sorted ascending, with a zero reference line.
pub fn sorted_gains_svg(model: &str, cluster: &str, gains: &[f64]) -> String {
    let mut g = gains.to_vec();
    g.sort_by(f64::total_cmp);
    let (lo, hi) = y_range(g.iter().copied().chain([0.0]));
    let mut out = String::new();
    svg_open(&mut out, &format!("Sorted gains, {model} trained on {cluster}"));
    axes(&mut out, "test voyages (sorted)", "gain (%)", lo, hi);
    let n = g.len().max(2) - 1;
    let sx = |i: usize| PAD + i as f64 / n as f64 * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        sy(0.0),
        W - PAD,
        sy(0.0)
    );
    polyline(&mut out, g.iter().enumerate().map(|(i, y)| (sx(i), sy(*y))), PALETTE[1], model);
    out.push_str("</svg>\n");
    out
}

pub const GAIN_TABLE_FILE: &str = "gain_table.csv";
pub const WEATHER_FILE: &str = "weather_breakdown.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "experiment.json";

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes the three CSVs, the summary, one profile SVG per plotted voyage and
/// one sorted-gains SVG per model. No SVGs are written without records.
pub fn emit_reports(exp: &Experiment, plot_cluster: ClusterName, outdir: &Path) -> Result<()> {
    write_atomic(&outdir.join(RECORDS_FILE), &records_to_csv(&exp.records)?)?;
    write_json(&outdir.join(SUMMARY_FILE), &exp.summary)?;
    write_tables(&exp.gain_table, &exp.weather, outdir)?;
    if exp.records.is_empty() {
        return Ok(());
    }
    for p in &exp.plots {
        let file = outdir.join("profiles").join(format!("voyage_{:05}.svg", p.voyage_id.0));
        write_atomic(&file, profile_svg(p).as_bytes())?;
    }
    write_sorted_gains(&exp.records, plot_cluster, outdir)
}

fn write_tables(gains: &GainTable, weather: &WeatherBreakdownTable, outdir: &Path) -> Result<()> {
    write_atomic(&outdir.join(GAIN_TABLE_FILE), &gains.to_csv()?)?;
    write_atomic(&outdir.join(WEATHER_FILE), &weather.to_csv()?)
}

fn write_sorted_gains(records: &[EvaluationRecord], plot_cluster: ClusterName, outdir: &Path) -> Result<()> {
    let mut models: Vec<&str> = Vec::new();
    for r in records {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    for m in models {
        let gains: Vec<f64> = records
            .iter()
            .filter(|r| r.model == m && r.cluster == plot_cluster.as_str())
            .filter_map(|r| r.gain_pct)
            .collect();
        if gains.is_empty() {
            continue;
        }
        let file = outdir.join(format!("sorted_gains_{}.svg", file_safe(m)));
        write_atomic(&file, sorted_gains_svg(m, plot_cluster.as_str(), &gains).as_bytes())?;
    }
    Ok(())
}

/// Regenerates the gain table, the weather breakdown and the sorted-gains
/// plots from the records and summary of an earlier run in `outdir`.
pub fn rebuild_reports(outdir: &Path, plot_cluster: ClusterName) -> Result<GainTable> {
    let path = outdir.join(RECORDS_FILE);
    let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let records = records_from_csv(std::io::BufReader::new(f))?;
    let summary: ExperimentSummary = read_json(&outdir.join(SUMMARY_FILE))?;
    let table = GainTable::from_records(&records, &summary.failures)?;
    write_tables(&table, &weather_breakdown(&records), outdir)?;
    if !records.is_empty() {
        write_sorted_gains(&records, plot_cluster, outdir)?;
    }
    Ok(table)
}

impl fmt::Display for GainTable {
    /// Fixed-width text rendering for terminals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<9} {:<9} {:>10} {:>9} {:>6}", "cluster", "model", "gain %", "improved", "tests")?;
        for r in &self.rows {
            let gain = r.mean_gain_pct.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:<9} {:<9} {:>10} {:>9.2} {:>6.2}",
                r.cluster, r.model, gain, r.improved_count, r.test_count
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficiency::profile_time_h;
    use crate::synth::{default_route, generate, SynthConfig};
    use std::sync::OnceLock;

    fn corpus() -> &'static [Voyage] {
        static CORPUS: OnceLock<Vec<Voyage>> = OnceLock::new();
        CORPUS.get_or_init(|| {
            let cfg = SynthConfig {
                n_voyages: 40,
                ..SynthConfig::default()
            };
            let (grids, c) = generate(&cfg).unwrap();
            build_corpus(&c.track, &default_route(), &grids).unwrap()
        })
    }

    fn quick_config(models: Vec<ModelKind>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            clusters: vec![ClusterName::Top50Pr, ClusterName::Top75Pr],
            models,
            ..ExperimentConfig::default()
        };
        cfg.settings.lstm.epochs = 2;
        cfg.settings.hmm.n_starts = 1;
        cfg
    }

    fn record(model: &str, state: WeatherState, gain: Option<f64>) -> EvaluationRecord {
        EvaluationRecord {
            voyage_id: VoyageId(0),
            cluster: "Top75Pr".into(),
            model: model.into(),
            eff_meas: 0.5,
            eff_pred: 0.5,
            gain_pct: gain,
            weather_state: state,
            constrained: false,
        }
    }

    #[test]
    fn model_names_round_trip() {
        for m in ModelKind::ALL {
            assert_eq!(m.as_str().parse::<ModelKind>().unwrap(), m);
        }
        assert_eq!("dtw".parse::<ModelKind>().unwrap(), ModelKind::Dtw);
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn split_is_disjoint_sorted_and_seeded() {
        let ids: Vec<VoyageId> = (0..50).map(VoyageId).collect();
        let (train, test) = split_ids(&ids, 0.7, 42).unwrap();
        assert_eq!((train.len(), test.len()), (35, 15));
        assert!(train.windows(2).all(|w| w[0] < w[1]) && test.windows(2).all(|w| w[0] < w[1]));
        let all: BTreeSet<_> = train.iter().chain(&test).collect();
        assert_eq!(all.len(), 50);
        assert_eq!(split_ids(&ids, 0.7, 42).unwrap(), (train.clone(), test));
        assert_ne!(split_ids(&ids, 0.7, 43).unwrap().0, train);
        assert!(split_ids(&ids[..1], 0.7, 42).is_err());
    }

    #[test]
    fn leakage_guard_rejects_shared_voyages() {
        let mut members = BTreeMap::new();
        members.insert(ClusterName::Top10Pr, vec![VoyageId(1), VoyageId(2)]);
        let clusters = ClusterSet { members };
        assert!(check_leakage(&clusters, &[VoyageId(3)]).is_ok());
        assert!(matches!(check_leakage(&clusters, &[VoyageId(2)]), Err(Error::Leakage(_))));
    }

    #[test]
    fn average_row_is_the_column_mean() {
        let mut cells = BTreeMap::new();
        let recs = |gains: &[f64]| {
            Some(gains.iter().map(|g| record("HMM", WeatherState::Calm, Some(*g))).collect::<Vec<_>>())
        };
        cells.insert((ClusterName::Top10Pr, ModelKind::Hmm), recs(&[1.0, -2.0, 4.0]));
        cells.insert((ClusterName::Top25Pr, ModelKind::Hmm), recs(&[3.0, 0.5]));
        cells.insert((ClusterName::Top50Pr, ModelKind::Hmm), None);
        let t = GainTable::from_cells(&cells);
        let a = t.get(ClusterName::Top10Pr.as_str(), "HMM").unwrap();
        assert!((a.mean_gain_pct.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!((a.improved_count, a.test_count), (2.0, 3.0));
        let failed = t.get(ClusterName::Top50Pr.as_str(), "HMM").unwrap();
        assert_eq!(failed.mean_gain_pct, None);
        let avg = t.get(AVERAGE_ROW, "HMM").unwrap();
        assert!((avg.mean_gain_pct.unwrap() - 1.375).abs() < 1e-12);
        assert!((avg.improved_count - 2.0).abs() < 1e-12);
        assert!((avg.test_count - 2.5).abs() < 1e-12);
    }

    #[test]
    fn weather_breakdown_statistics() {
        let recs = vec![
            record("KNN", WeatherState::Rough, Some(2.0)),
            record("KNN", WeatherState::Rough, Some(4.0)),
            record("KNN", WeatherState::Rough, None),
        ];
        let t = weather_breakdown(&recs);
        assert_eq!(t.rows.len(), 3);
        let rough = t.rows.iter().find(|r| r.state == WeatherState::Rough).unwrap();
        assert_eq!((rough.mean_gain_pct, rough.std_gain_pct, rough.n_voyages), (Some(3.0), Some(1.0), 2));
        let calm = t.rows.iter().find(|r| r.state == WeatherState::Calm).unwrap();
        assert_eq!((calm.mean_gain_pct, calm.n_voyages), (None, 0));
        let csv = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert!(csv.starts_with("model,state,mean_gain_pct,std_gain_pct,n_voyages\n"));
        assert!(csv.contains("KNN,Calm,,,0\n"));
    }

    #[test]
    fn svgs_have_one_polyline_per_series() {
        let p = SpeedProfile::new(VoyageId(3), vec![0.0, 0.5, 1.0], vec![4.0, 5.0, 4.5], Provenance::Measured).unwrap();
        let plot = ProfilePlot {
            voyage_id: VoyageId(3),
            measured: p.clone(),
            predicted: vec![("KNN".into(), p.clone()), ("HMM<&>".into(), p)],
        };
        let svg = profile_svg(&plot);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("HMM&lt;&amp;&gt;"));
        let g = sorted_gains_svg("HMM", "Top75Pr", &[1.0, -1.0, 0.5]);
        assert_eq!(g.matches("<polyline").count(), 1);
        assert_eq!(g.matches("<line").count(), 1);
    }

    #[test]
    fn empty_experiment_writes_headers_only() {
        let exp = Experiment {
            gain_table: GainTable { rows: vec![] },
            weather: weather_breakdown(&[]),
            records: vec![],
            plots: vec![],
            summary: ExperimentSummary {
                schema_version: 1,
                n_voyages: 0,
                train_ids: vec![],
                test_ids: vec![],
                skipped_test_ids: vec![],
                coeffs: FuelModelCoeffs::from_array([1.0, 0.0, 0.0, 0.0]),
                calibration: None,
                normalization: NormalizationConstants {
                    fuel_max_l: 1.0,
                    time_max_h: 1.0,
                },
                clusters: ClusterSet { members: BTreeMap::new() },
                failures: vec![],
                constrained_count: 0,
                infeasible_count: 0,
                partial: false,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&exp, ClusterName::Top75Pr, dir.path()).unwrap();
        let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(read(GAIN_TABLE_FILE), GAIN_TABLE_COLUMNS.join(",") + "\n");
        assert_eq!(read(WEATHER_FILE), WEATHER_COLUMNS.join(",") + "\n");
        assert_eq!(read(RECORDS_FILE), RECORD_COLUMNS.join(",") + "\n");
        let svgs = walk(dir.path()).into_iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).count();
        assert_eq!(svgs, 0);
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn reports_rebuild_from_records() {
        let cfg = quick_config(vec![ModelKind::Identity, ModelKind::Knn]);
        let exp = run_experiment(corpus(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&exp, cfg.plot_cluster, dir.path()).unwrap();
        let before: Vec<Vec<u8>> = [GAIN_TABLE_FILE, WEATHER_FILE, "sorted_gains_KNN.svg"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect();
        std::fs::remove_file(dir.path().join(GAIN_TABLE_FILE)).unwrap();
        let table = rebuild_reports(dir.path(), cfg.plot_cluster).unwrap();
        assert_eq!(table, exp.gain_table);
        let after: Vec<Vec<u8>> = [GAIN_TABLE_FILE, WEATHER_FILE, "sorted_gains_KNN.svg"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect();
        assert_eq!(before, after);
        let parsed = records_from_csv(&records_to_csv(&exp.records).unwrap()[..]).unwrap();
        assert_eq!(parsed, exp.records);
    }

    #[test]
    fn identity_gains_are_zero_and_the_arrival_bound_holds() {
        let cfg = quick_config(vec![ModelKind::Identity, ModelKind::Hmm, ModelKind::Knn]);
        let exp = run_experiment(corpus(), &cfg).unwrap();
        assert!(exp.summary.failures.is_empty(), "{:?}", exp.summary.failures);
        let n_test = exp.summary.test_ids.len() - exp.summary.skipped_test_ids.len();
        assert_eq!(exp.records.len(), n_test * 2 * 3);
        for r in exp.records.iter().filter(|r| r.model == "Identity") {
            assert_eq!(r.gain_pct, Some(0.0));
            assert_eq!(r.eff_pred, r.eff_meas);
        }
        assert_eq!(exp.gain_table.rows.len(), 2 * 3 + 3);

        let prep = prepare(corpus(), &cfg).unwrap();
        let (cases, _) = prep.test_cases(corpus(), &cfg);
        let trained = Trained::train(ModelKind::Hmm, &prep.members(ClusterName::Top75Pr), &cfg.settings, cfg.seed).unwrap();
        let out = evaluate_trained(&trained, &cases, ClusterName::Top75Pr, ModelKind::Hmm, &prep, &cfg).unwrap();
        for (tc, p) in cases.iter().zip(&out.profiles) {
            let t = profile_time_h(&p.sog, &tc.legs).unwrap();
            assert!(t <= tc.bound_h * (1.0 + 1e-9), "voyage {}: {t} h > {} h", tc.voyage.id(), tc.bound_h);
        }
    }

    #[test]
    fn experiment_is_deterministic_across_thread_counts() {
        let cfg = quick_config(vec![ModelKind::Knn, ModelKind::Dtw]);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let exp = pool.install(|| run_experiment(corpus(), &cfg)).unwrap();
            (records_to_csv(&exp.records).unwrap(), exp.gain_table.to_csv().unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn saved_models_predict_the_same() {
        let mut cfg = quick_config(ModelKind::ALL.to_vec());
        cfg.settings.lstm.epochs = 1;
        let prep = prepare(corpus(), &cfg).unwrap();
        let (cases, _) = prep.test_cases(corpus(), &cfg);
        let c = ClusterName::Top50Pr;
        let members = prep.members(c);
        for kind in ModelKind::ALL {
            let trained = Trained::train(kind, &members, &cfg.settings, cfg.seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let manifest = TrainedManifest {
                schema_version: MODEL_FILE_SCHEMA,
                model: kind,
                cluster: c,
                members: members.iter().map(|v| v.id()).collect(),
                seed: cfg.seed,
            };
            trained.save(dir.path(), &manifest).unwrap();
            let (loaded, m) = Trained::load(dir.path(), &prep.train, &cfg.settings).unwrap();
            assert_eq!(m, manifest);
            let a = trained.predict(&cases[0], &cfg.settings, cfg.sog_min, cfg.sog_max).unwrap();
            let b = loaded.predict(&cases[0], &cfg.settings, cfg.sog_min, cfg.sog_max).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }
}
