//! Surrogate fuel model, voyage totals, Eff-Score and efficiency gain.
//!
//! Measured and predicted profiles both go through
//! [`estimate_profile_efficiency`], so any bias of the surrogate cancels in
//! the gain.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::model::{haversine_distance, SpeedMode, SpeedProfile, Voyage, VoyageId, WeatherState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelModelCoeffs {
    /// Baseline, L/h.
    pub c0: f64,
    /// Cubic speed term, L/h per (m/s)^3.
    pub c1: f64,
    /// Wave added resistance, L/h per m (m/s)^2.
    pub c2: f64,
    /// Headwind added resistance, L/h per (m/s)^3.
    pub c3: f64,
}

impl FuelModelCoeffs {
    pub fn as_array(&self) -> [f64; 4] {
        [self.c0, self.c1, self.c2, self.c3]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            c0: a[0],
            c1: a[1],
            c2: a[2],
            c3: a[3],
        }
    }
}

/// Regressors of the surrogate at one operating point.
fn design_row(sog: f64, wave_height: f64, wind_speed: f64, wind_rel_angle: f64) -> [f64; 4] {
    let v2 = sog * sog;
    let head = (wind_speed * wind_rel_angle.to_radians().cos()).max(0.0);
    [1.0, v2 * sog, wave_height * v2, head * v2]
}

/// Fuel rate in L/h. `wind_rel_angle` is the angle between the direction the
/// wind comes from and the heading, so 0 is a pure headwind.
pub fn fuel_rate_model(sog: f64, wave_height: f64, wind_speed: f64, wind_rel_angle: f64, c: &FuelModelCoeffs) -> f64 {
    let x = design_row(sog, wave_height, wind_speed, wind_rel_angle);
    let coef = c.as_array();
    (0..4).map(|k| coef[k] * x[k]).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub coeffs: FuelModelCoeffs,
    /// Residual RMSE of the fit, L/h.
    pub rmse: f64,
    /// Standard errors of the unclamped estimates.
    pub std_errors: [f64; 4],
    pub n_records: usize,
    /// Mean measured fuel rate, L/h.
    pub mean_fuel_rate: f64,
}

pub const MIN_CALIBRATION_RECORDS: usize = 100;

/// Least-squares fit of the surrogate against measured fuel rates of every
/// record that carries weather. `c0` and `c1` are clamped at zero afterwards.
pub fn calibrate_fuel_model(voyages: &[Voyage]) -> Result<Calibration> {
    let rows: Vec<([f64; 4], f64)> = voyages
        .iter()
        .flat_map(|v| v.records())
        .filter(|r| r.has_weather() && r.fuel_rate.is_finite())
        .map(|r| {
            (
                design_row(r.sog, r.wave_height, r.wind_speed, r.wind_dir - r.heading),
                r.fuel_rate,
            )
        })
        .collect();
    let n = rows.len();
    if n < MIN_CALIBRATION_RECORDS {
        return Err(Error::Calibration(format!(
            "need at least {MIN_CALIBRATION_RECORDS} records with weather and fuel rate, got {n}"
        )));
    }
    let x = DMatrix::from_fn(n, 4, |i, j| rows[i].0[j]);
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.1));

    // Rank check on unit-norm columns so units do not mask collinearity.
    let norms: Vec<f64> = (0..4).map(|j| x.column(j).norm()).collect();
    if norms.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Calibration("a regressor is identically zero".into()));
    }
    let mut xn = x.clone();
    for (j, c) in norms.iter().enumerate() {
        xn.column_mut(j).unscale_mut(*c);
    }
    let sv = xn.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Err(Error::Calibration(format!(
            "rank-deficient design (condition {:.3e})",
            smax / smin
        )));
    }
    let svd = xn.svd(true, true);
    let beta_n = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::Calibration(e.to_string()))?;
    let beta: Vec<f64> = (0..4).map(|j| beta_n[j] / norms[j]).collect();

    let resid = &y - &x * DVector::from_column_slice(&beta);
    let rss = resid.norm_squared();
    let rmse = (rss / n as f64).sqrt();
    let sigma2 = if n > 4 { rss / (n - 4) as f64 } else { 0.0 };
    let xtx = x.transpose() * &x;
    let cov = xtx
        .try_inverse()
        .ok_or_else(|| Error::Calibration("normal matrix is singular".into()))?;
    let std_errors = std::array::from_fn(|j| (sigma2 * cov[(j, j)]).max(0.0).sqrt());

    let mut coeffs = FuelModelCoeffs::from_array([beta[0], beta[1], beta[2], beta[3]]);
    if coeffs.c0 < 0.0 || coeffs.c1 < 0.0 {
        log::warn!("clamping non-physical fuel coefficients {coeffs:?}");
        coeffs.c0 = coeffs.c0.max(0.0);
        coeffs.c1 = coeffs.c1.max(0.0);
    }
    Ok(Calibration {
        coeffs,
        rmse,
        std_errors,
        n_records: n,
        mean_fuel_rate: y.mean(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoyageTotals {
    pub fuel_total_l: f64,
    pub time_total_h: f64,
    pub distance_total_km: f64,
}

/// Left-rule integration: each record's fuel rate applies until the next one.
pub fn voyage_totals(v: &Voyage) -> VoyageTotals {
    let mut fuel = 0.0;
    let mut dist = 0.0;
    for w in v.records().windows(2) {
        let dt = w[1].timestamp - w[0].timestamp;
        fuel += w[0].fuel_rate * dt / 3600.0;
        dist += haversine_distance(w[0].position(), w[1].position());
    }
    VoyageTotals {
        fuel_total_l: fuel,
        time_total_h: (v.end_time() - v.start_time()) / 3600.0,
        distance_total_km: dist / 1000.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub fuel_max_l: f64,
    pub time_max_h: f64,
}

impl NormalizationConstants {
    pub fn from_totals<'a>(totals: impl IntoIterator<Item = &'a VoyageTotals>) -> Result<Self> {
        let mut fuel_max = f64::NEG_INFINITY;
        let mut time_max = f64::NEG_INFINITY;
        let mut any = false;
        for t in totals {
            any = true;
            fuel_max = fuel_max.max(t.fuel_total_l);
            time_max = time_max.max(t.time_total_h);
        }
        if !any {
            return Err(Error::Empty("no voyage totals to normalize".into()));
        }
        let n = Self {
            fuel_max_l: fuel_max,
            time_max_h: time_max,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fuel_max_l > 0.0 && self.time_max_h > 0.0) {
            return Err(Error::Domain(format!("normalization maxima must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// Eff-Score of raw totals. Values above the training maxima are allowed.
    pub fn score(&self, fuel_l: f64, time_h: f64) -> Result<f64> {
        eff_score(fuel_l / self.fuel_max_l, time_h / self.time_max_h)
    }
}

/// One minus the harmonic mean of normalized fuel and time. Inputs above 1
/// are accepted and give negative scores.
pub fn eff_score(fuel_nm: f64, time_nm: f64) -> Result<f64> {
    if !(fuel_nm > 0.0 && time_nm > 0.0 && fuel_nm.is_finite() && time_nm.is_finite()) {
        return Err(Error::Domain(format!(
            "eff_score needs positive finite inputs, got ({fuel_nm}, {time_nm})"
        )));
    }
    Ok(1.0 - 2.0 * (fuel_nm * time_nm) / (fuel_nm + time_nm))
}

/// Computes totals where missing, derives corpus maxima, and attaches the
/// score to every voyage.
pub fn score_corpus(voyages: Vec<Voyage>) -> Result<(Vec<Voyage>, NormalizationConstants)> {
    if voyages.is_empty() {
        return Err(Error::Empty("cannot score an empty corpus".into()));
    }
    let voyages: Vec<Voyage> = voyages
        .into_iter()
        .map(|v| match v.totals() {
            Some(_) => v,
            None => {
                let t = voyage_totals(&v);
                v.with_totals(t)
            }
        })
        .collect();
    let n = NormalizationConstants::from_totals(voyages.iter().filter_map(|v| v.totals()))?;
    let scored = apply_scores(voyages, &n)?;
    Ok((scored, n))
}

/// Scores voyages against fixed constants, e.g. test voyages against the
/// training maxima.
pub fn apply_scores(voyages: Vec<Voyage>, n: &NormalizationConstants) -> Result<Vec<Voyage>> {
    voyages
        .into_iter()
        .map(|v| {
            let t = match v.totals() {
                Some(t) => *t,
                None => voyage_totals(&v),
            };
            let s = n.score(t.fuel_total_l, t.time_total_h)?;
            Ok(v.with_totals(t).with_eff_score(s))
        })
        .collect()
}

/// Fixed per-leg geometry and weather of one voyage. Leg `i` runs from record
/// `i` to record `i + 1` and takes its weather from record `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteLegs {
    pub distance_m: Vec<f64>,
    pub wave_height: Vec<f64>,
    pub wind_speed: Vec<f64>,
    pub wind_rel_angle: Vec<f64>,
    /// Legs whose speed an optimizer may change (cruising at the start record).
    pub adjustable: Vec<bool>,
}

impl RouteLegs {
    pub fn from_voyage(v: &Voyage) -> Result<Self> {
        let recs = v.records();
        let m = recs.len() - 1;
        let mut legs = RouteLegs {
            distance_m: Vec::with_capacity(m),
            wave_height: Vec::with_capacity(m),
            wind_speed: Vec::with_capacity(m),
            wind_rel_angle: Vec::with_capacity(m),
            adjustable: Vec::with_capacity(m),
        };
        for (i, w) in recs.windows(2).enumerate() {
            let r = &w[0];
            if !r.has_weather() {
                return Err(Error::Invalid(format!(
                    "voyage {}: record {i} has no weather; run fusion first",
                    v.id()
                )));
            }
            let d = haversine_distance(r.position(), w[1].position());
            if !(d > 0.0) {
                return Err(Error::DegenerateVoyage(format!("{} (zero-length leg {i})", v.id())));
            }
            legs.distance_m.push(d);
            legs.wave_height.push(r.wave_height);
            legs.wind_speed.push(r.wind_speed);
            legs.wind_rel_angle.push(r.wind_dir - r.heading);
            legs.adjustable.push(r.speed_mode == Some(SpeedMode::Cruising));
        }
        Ok(legs)
    }

    pub fn len(&self) -> usize {
        self.distance_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distance_m.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub fuel_l: f64,
    pub time_h: f64,
    pub eff_score: f64,
}

fn check_leg_speeds(sog: &[f64], legs: &RouteLegs) -> Result<()> {
    if sog.len() != legs.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: legs.len() + 1,
            got: sog.len(),
        });
    }
    if let Some(i) = sog[..legs.len()].iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("profile speed at step {i} is {}, must be positive", sog[i])));
    }
    Ok(())
}

/// Total time in hours of driving the legs at the given speeds.
pub fn profile_time_h(sog: &[f64], legs: &RouteLegs) -> Result<f64> {
    check_leg_speeds(sog, legs)?;
    Ok(legs.distance_m.iter().zip(sog).map(|(d, v)| d / v).sum::<f64>() / 3600.0)
}

/// Fuel, time and Eff-Score of a profile driven over `legs`. The profile has
/// one more step than there are legs; its last value is not used.
pub fn estimate_profile_efficiency(
    p: &SpeedProfile,
    legs: &RouteLegs,
    c: &FuelModelCoeffs,
    n: &NormalizationConstants,
) -> Result<ProfileEstimate> {
    check_leg_speeds(&p.sog, legs)?;
    let mut fuel = 0.0;
    let mut secs = 0.0;
    for i in 0..legs.len() {
        let v = p.sog[i];
        let dt = legs.distance_m[i] / v;
        let rate = fuel_rate_model(v, legs.wave_height[i], legs.wind_speed[i], legs.wind_rel_angle[i], c);
        fuel += rate * dt / 3600.0;
        secs += dt;
    }
    let time_h = secs / 3600.0;
    Ok(ProfileEstimate {
        fuel_l: fuel,
        time_h,
        eff_score: n.score(fuel, time_h)?,
    })
}

/// Percent change from `meas` to `pred`; undefined for `meas <= 0`.
pub fn eff_gain(meas: f64, pred: f64) -> Result<f64> {
    if !(meas > 0.0) {
        return Err(Error::UndefinedGain(meas));
    }
    Ok((pred - meas) / meas * 100.0)
}

/// Outcome of enforcing the arrival-time bound on a predicted profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalAdjustment {
    pub sog: Vec<f64>,
    /// Speeds had to be raised.
    pub constrained: bool,
    /// The bound is still violated after every adjustable leg hit `sog_max`.
    pub infeasible: bool,
}

/// Raises the speed of adjustable legs by a common factor until the estimated
/// time is within `bound_h`, never exceeding `sog_max`. Legs that saturate are
/// frozen and the factor is recomputed for the rest.
pub fn enforce_arrival_time(sog: &[f64], legs: &RouteLegs, bound_h: f64, sog_max: f64) -> Result<ArrivalAdjustment> {
    let mut out = sog.to_vec();
    let bound_s = bound_h * 3600.0;
    if profile_time_h(&out, legs)? * 3600.0 <= bound_s {
        return Ok(ArrivalAdjustment {
            sog: out,
            constrained: false,
            infeasible: false,
        });
    }
    let mut free: Vec<bool> = (0..legs.len()).map(|i| legs.adjustable[i] && out[i] < sog_max).collect();
    loop {
        let (mut t_free, mut t_fixed) = (0.0, 0.0);
        for i in 0..legs.len() {
            let t = legs.distance_m[i] / out[i];
            if free[i] {
                t_free += t;
            } else {
                t_fixed += t;
            }
        }
        let room = bound_s - t_fixed;
        if t_free == 0.0 || room <= 0.0 {
            break;
        }
        let scale = t_free / room;
        if scale <= 1.0 {
            break;
        }
        let mut saturated = false;
        for i in 0..legs.len() {
            if free[i] {
                let v = out[i] * scale;
                if v >= sog_max {
                    out[i] = sog_max;
                    free[i] = false;
                    saturated = true;
                } else {
                    out[i] = v;
                }
            }
        }
        if !saturated {
            break;
        }
    }
    // Rounding in the closed-form factor can leave the total a hair over.
    let mut t = profile_time_h(&out, legs)? * 3600.0;
    let mut guard = 0;
    while t > bound_s && guard < 8 {
        let mut changed = false;
        for i in 0..legs.len() {
            if legs.adjustable[i] && out[i] < sog_max {
                out[i] = (out[i] * (1.0 + 1e-12)).min(sog_max);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        t = profile_time_h(&out, legs)? * 3600.0;
        guard += 1;
    }
    Ok(ArrivalAdjustment {
        sog: out,
        constrained: true,
        infeasible: t > bound_s,
    })
}

/// One evaluated (voyage, cluster, model) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub voyage_id: VoyageId,
    pub cluster: String,
    pub model: String,
    pub eff_meas: f64,
    pub eff_pred: f64,
    /// `None` when the measured score is not positive.
    pub gain_pct: Option<f64>,
    pub weather_state: WeatherState,
    pub constrained: bool,
}

impl EvaluationRecord {
    pub fn improved(&self) -> bool {
        self.gain_pct.is_some_and(|g| g > 0.0)
    }
}

pub const MODEL_FILE_SCHEMA: u32 = 1;

/// Persisted fuel model and normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    pub schema_version: u32,
    pub coeffs: FuelModelCoeffs,
    pub normalization: NormalizationConstants,
    pub calibration: Option<Calibration>,
}

impl EfficiencyModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: EfficiencyModel = read_json(path)?;
        if m.schema_version != MODEL_FILE_SCHEMA {
            return Err(Error::Schema(format!(
                "{}: unsupported model schema version {}",
                path.display(),
                m.schema_version
            )));
        }
        m.normalization.validate()?;
        Ok(m)
    }
}
