//! Gaussian hidden Markov model over (wave_height, wind_speed) and the
//! state-conditional speed policy built on top of it.
//!
//! Observations are 2-vectors with diagonal covariance per state. After
//! fitting, states are ordered by ascending mean wave height, so index 0 is
//! Calm and the last index is Rough.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{along_track_fraction, Provenance, SpeedMode, SpeedProfile, Voyage, WeatherState};

pub type Obs = [f64; 2];

pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub pi: Vec<f64>,
    /// Row-stochastic transition matrix.
    pub trans: Vec<Vec<f64>>,
    pub means: Vec<Obs>,
    pub vars: Vec<Obs>,
    /// Set when the training data had no spread and the model is a floor fit.
    #[serde(default)]
    pub degenerate: bool,
}

impl HmmModel {
    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        if k == 0 || self.trans.len() != k || self.means.len() != k || self.vars.len() != k {
            return Err(Error::Invalid("inconsistent HMM dimensions".into()));
        }
        let stochastic = |row: &[f64]| {
            row.len() == k && row.iter().all(|p| *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if !stochastic(&self.pi) || !self.trans.iter().all(|r| stochastic(r)) {
            return Err(Error::Invalid("HMM probabilities do not sum to one".into()));
        }
        if self.vars.iter().flatten().any(|v| !(*v >= VARIANCE_FLOOR)) {
            return Err(Error::Invalid("HMM variance below floor".into()));
        }
        Ok(())
    }

    pub fn log_emission(&self, s: usize, o: &Obs) -> f64 {
        let mut lp = 0.0;
        for d in 0..2 {
            let diff = o[d] - self.means[s][d];
            lp -= 0.5 * (LN_2PI + self.vars[s][d].ln() + diff * diff / self.vars[s][d]);
        }
        lp
    }

    /// Reorders states by ascending mean wave height (stable).
    pub fn relabel_by_wave(&mut self) {
        let k = self.n_states();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| self.means[a][0].total_cmp(&self.means[b][0]).then(a.cmp(&b)));
        self.pi = order.iter().map(|&i| self.pi[i]).collect();
        self.means = order.iter().map(|&i| self.means[i]).collect();
        self.vars = order.iter().map(|&i| self.vars[i]).collect();
        self.trans = order
            .iter()
            .map(|&i| order.iter().map(|&j| self.trans[i][j]).collect())
            .collect();
    }

    /// Weather state of a decoded index for a three-state model.
    pub fn weather_state(&self, s: usize) -> WeatherState {
        let k = self.n_states();
        if k == 3 {
            return WeatherState::ALL[s];
        }
        // Spread other sizes evenly over the three labels.
        WeatherState::ALL[(s * 3 / k.max(1)).min(2)]
    }
}

/// Per-step emission likelihoods scaled by the step maximum, plus the log
/// of that maximum.
fn scaled_emissions(m: &HmmModel, obs: &[Obs]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = m.n_states();
    let mut b = Vec::with_capacity(obs.len());
    let mut shift = Vec::with_capacity(obs.len());
    for o in obs {
        let lb: Vec<f64> = (0..k).map(|s| m.log_emission(s, o)).collect();
        let mx = lb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        b.push(lb.iter().map(|l| (l - mx).exp()).collect());
        shift.push(mx);
    }
    (b, shift)
}

struct Forward {
    alpha: Vec<Vec<f64>>,
    scale: Vec<f64>,
    loglik: f64,
}

fn forward(m: &HmmModel, b: &[Vec<f64>], shift: &[f64]) -> Forward {
    let k = m.n_states();
    let t_len = b.len();
    let mut alpha = vec![vec![0.0; k]; t_len];
    let mut scale = vec![0.0; t_len];
    let mut loglik = 0.0;
    for t in 0..t_len {
        for s in 0..k {
            let prior = if t == 0 {
                m.pi[s]
            } else {
                (0..k).map(|r| alpha[t - 1][r] * m.trans[r][s]).sum()
            };
            alpha[t][s] = prior * b[t][s];
        }
        let c: f64 = alpha[t].iter().sum();
        scale[t] = c;
        if c > 0.0 {
            for a in &mut alpha[t] {
                *a /= c;
            }
        }
        loglik += c.ln() + shift[t];
    }
    Forward { alpha, scale, loglik }
}

/// Log-likelihood of one sequence by the scaled forward algorithm.
pub fn forward_loglik(m: &HmmModel, obs: &[Obs]) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    let (b, shift) = scaled_emissions(m, obs);
    forward(m, &b, &shift).loglik
}

/// Sufficient statistics of one sequence for the M-step.
struct SeqStats {
    loglik: f64,
    gamma0: Vec<f64>,
    xi: Vec<Vec<f64>>,
    gamma_sum: Vec<f64>,
    obs_sum: Vec<Obs>,
    obs_sq: Vec<Obs>,
}

fn e_step(m: &HmmModel, obs: &[Obs]) -> SeqStats {
    let k = m.n_states();
    let (b, shift) = scaled_emissions(m, obs);
    let f = forward(m, &b, &shift);
    let t_len = obs.len();
    let mut beta = vec![vec![1.0; k]; t_len];
    for t in (0..t_len - 1).rev() {
        for s in 0..k {
            beta[t][s] = (0..k).map(|r| m.trans[s][r] * b[t + 1][r] * beta[t + 1][r]).sum::<f64>() / f.scale[t + 1];
        }
    }
    let mut st = SeqStats {
        loglik: f.loglik,
        gamma0: vec![0.0; k],
        xi: vec![vec![0.0; k]; k],
        gamma_sum: vec![0.0; k],
        obs_sum: vec![[0.0; 2]; k],
        obs_sq: vec![[0.0; 2]; k],
    };
    for t in 0..t_len {
        let norm: f64 = (0..k).map(|s| f.alpha[t][s] * beta[t][s]).sum();
        for s in 0..k {
            let g = if norm > 0.0 { f.alpha[t][s] * beta[t][s] / norm } else { 0.0 };
            if t == 0 {
                st.gamma0[s] = g;
            }
            st.gamma_sum[s] += g;
            for d in 0..2 {
                st.obs_sum[s][d] += g * obs[t][d];
                st.obs_sq[s][d] += g * obs[t][d] * obs[t][d];
            }
        }
        if t + 1 < t_len {
            let c = f.scale[t + 1];
            for s in 0..k {
                for r in 0..k {
                    st.xi[s][r] += f.alpha[t][s] * m.trans[s][r] * b[t + 1][r] * beta[t + 1][r] / c;
                }
            }
        }
    }
    st
}

/// One Baum-Welch iteration. Returns the updated model and the total
/// log-likelihood of the data under the *input* model.
pub fn baum_welch_step(m: &HmmModel, seqs: &[Vec<Obs>]) -> (HmmModel, f64) {
    let k = m.n_states();
    // Parallel E-step, sequential accumulation in sequence order.
    let stats: Vec<SeqStats> = seqs.par_iter().filter(|s| !s.is_empty()).map(|s| e_step(m, s)).collect();
    let mut loglik = 0.0;
    let mut gamma0 = vec![0.0; k];
    let mut xi = vec![vec![0.0; k]; k];
    let mut gsum = vec![0.0; k];
    let mut osum = vec![[0.0; 2]; k];
    let mut osq = vec![[0.0; 2]; k];
    for st in &stats {
        loglik += st.loglik;
        for s in 0..k {
            gamma0[s] += st.gamma0[s];
            gsum[s] += st.gamma_sum[s];
            for d in 0..2 {
                osum[s][d] += st.obs_sum[s][d];
                osq[s][d] += st.obs_sq[s][d];
            }
            for r in 0..k {
                xi[s][r] += st.xi[s][r];
            }
        }
    }
    let mut next = m.clone();
    let g0: f64 = gamma0.iter().sum();
    if g0 > 0.0 {
        next.pi = gamma0.iter().map(|g| g / g0).collect();
    }
    for s in 0..k {
        let row: f64 = xi[s].iter().sum();
        if row > 0.0 {
            next.trans[s] = xi[s].iter().map(|x| x / row).collect();
        }
        // A state with no responsibility keeps its previous emission.
        if gsum[s] > 0.0 {
            for d in 0..2 {
                let mu = osum[s][d] / gsum[s];
                let var = osq[s][d] / gsum[s] - mu * mu;
                next.means[s][d] = mu;
                next.vars[s][d] = var.max(VARIANCE_FLOOR);
            }
        }
    }
    (next, loglik)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmFitConfig {
    pub n_states: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
}

impl Default for HmmFitConfig {
    fn default() -> Self {
        Self {
            n_states: 3,
            max_iter: 100,
            tol: 1e-6,
            n_starts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmFit {
    pub model: HmmModel,
    pub loglik: f64,
    /// Log-likelihood before each iteration of the winning start.
    pub trace: Vec<f64>,
}

fn moments(values: impl Iterator<Item = Obs>) -> Option<(Obs, Obs)> {
    let (mut n, mut s, mut q) = (0.0, [0.0; 2], [0.0; 2]);
    for o in values {
        n += 1.0;
        for d in 0..2 {
            s[d] += o[d];
            q[d] += o[d] * o[d];
        }
    }
    if n == 0.0 {
        return None;
    }
    let mean = [s[0] / n, s[1] / n];
    let var = [
        (q[0] / n - mean[0] * mean[0]).max(VARIANCE_FLOOR),
        (q[1] / n - mean[1] * mean[1]).max(VARIANCE_FLOOR),
    ];
    Some((mean, var))
}

/// Deterministic start: states seeded from wave-height quantile groups.
pub fn tercile_init(seqs: &[Vec<Obs>], k: usize) -> HmmModel {
    let mut all: Vec<Obs> = seqs.iter().flatten().copied().collect();
    all.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let n = all.len();
    let global = moments(all.iter().copied()).unwrap_or(([0.0; 2], [1.0; 2]));
    let mut means = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    for s in 0..k {
        let (lo, hi) = (s * n / k, (s + 1) * n / k);
        let (mu, var) = moments(all[lo..hi].iter().copied()).unwrap_or(global);
        means.push(mu);
        vars.push(var);
    }
    let stay = if k > 1 { 0.8 } else { 1.0 };
    let move_p = if k > 1 { 0.2 / (k - 1) as f64 } else { 0.0 };
    HmmModel {
        pi: vec![1.0 / k as f64; k],
        trans: (0..k)
            .map(|i| (0..k).map(|j| if i == j { stay } else { move_p }).collect())
            .collect(),
        means,
        vars,
        degenerate: false,
    }
}

fn jitter(m: &HmmModel, rng: &mut ChaCha8Rng) -> HmmModel {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = m.clone();
    for s in 0..m.n_states() {
        for d in 0..2 {
            out.means[s][d] += 0.25 * m.vars[s][d].sqrt() * normal.sample(rng);
        }
    }
    out
}

/// Runs Baum-Welch from `start` until `max_iter` or an improvement below `tol`.
pub fn run_baum_welch(start: HmmModel, seqs: &[Vec<Obs>], max_iter: usize, tol: f64) -> HmmFit {
    let mut model = start;
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let (next, ll) = baum_welch_step(&model, seqs);
        let improved = trace.last().is_none_or(|prev: &f64| ll - prev >= tol);
        trace.push(ll);
        if !improved {
            break;
        }
        model = next;
    }
    let loglik = seqs.iter().map(|s| forward_loglik(&model, s)).sum();
    HmmFit { model, loglik, trace }
}

/// Multi-start Baum-Welch. Start 0 is the tercile initialization; further
/// starts jitter its means with the seeded RNG. The best final
/// log-likelihood wins and its states are relabeled by wave height.
pub fn fit_hmm(seqs: &[Vec<Obs>], seed: u64, cfg: &HmmFitConfig) -> Result<HmmFit> {
    let usable: Vec<Vec<Obs>> = seqs.iter().filter(|s| s.len() >= 3).cloned().collect();
    if usable.len() < 3 {
        return Err(Error::Invalid(format!(
            "HMM needs at least 3 sequences of length >= 3, got {}",
            usable.len()
        )));
    }
    if usable.iter().flatten().any(|o| !(o[0].is_finite() && o[1].is_finite())) {
        return Err(Error::Invalid("HMM observations must be finite".into()));
    }
    let k = cfg.n_states.max(1);
    let base = tercile_init(&usable, k);
    let first = usable[0][0];
    if usable.iter().flatten().all(|o| *o == first) {
        log::warn!("HMM training data has no spread; returning a variance-floor model");
        let mut m = base;
        m.vars = vec![[VARIANCE_FLOOR; 2]; k];
        m.degenerate = true;
        let loglik = usable.iter().map(|s| forward_loglik(&m, s)).sum();
        return Ok(HmmFit {
            model: m,
            loglik,
            trace: vec![loglik],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<HmmFit> = None;
    for start in 0..cfg.n_starts.max(1) {
        let init = if start == 0 { base.clone() } else { jitter(&base, &mut rng) };
        let fit = run_baum_welch(init, &usable, cfg.max_iter, cfg.tol);
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one start");
    fit.model.relabel_by_wave();
    Ok(fit)
}

/// Most probable state path. Ties resolve to the lower state index.
pub fn viterbi(m: &HmmModel, obs: &[Obs]) -> Vec<usize> {
    let k = m.n_states();
    let t_len = obs.len();
    if t_len == 0 {
        return Vec::new();
    }
    let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let log_a: Vec<Vec<f64>> = m.trans.iter().map(|r| r.iter().map(|p| ln(*p)).collect()).collect();
    let mut delta: Vec<f64> = (0..k).map(|s| ln(m.pi[s]) + m.log_emission(s, &obs[0])).collect();
    let mut back = vec![vec![0usize; k]; t_len];
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; k];
        for s in 0..k {
            let mut arg = 0;
            let mut val = f64::NEG_INFINITY;
            for r in 0..k {
                let v = delta[r] + log_a[r][s];
                if v > val {
                    val = v;
                    arg = r;
                }
            }
            back[t][s] = arg;
            next[s] = val + m.log_emission(s, &obs[t]);
        }
        delta = next;
    }
    let mut last = 0;
    for s in 1..k {
        if delta[s] > delta[last] {
            last = s;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

/// Joint log-probability of observations and a given state path.
pub fn path_log_prob(m: &HmmModel, obs: &[Obs], path: &[usize]) -> f64 {
    let mut lp = m.pi[path[0]].ln() + m.log_emission(path[0], &obs[0]);
    for t in 1..obs.len() {
        lp += m.trans[path[t - 1]][path[t]].ln() + m.log_emission(path[t], &obs[t]);
    }
    lp
}

/// `(wave_height, wind_speed)` per record.
pub fn voyage_observations(v: &Voyage) -> Vec<Obs> {
    v.records().iter().map(|r| [r.wave_height, r.wind_speed]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyCell {
    pub min_sog: f64,
    pub mean_sog: f64,
    pub max_sog: f64,
    pub count: usize,
}

impl PolicyCell {
    fn from_values(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min_sog: v.iter().cloned().fold(f64::INFINITY, f64::min),
            mean_sog: v.iter().sum::<f64>() / v.len() as f64,
            max_sog: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            count: v.len(),
        })
    }

    /// Calm takes the fastest observed speed, Moderate the mean, Rough the
    /// slowest.
    pub fn speed_for(&self, state: WeatherState) -> f64 {
        match state {
            WeatherState::Calm => self.max_sog,
            WeatherState::Moderate => self.mean_sog,
            WeatherState::Rough => self.min_sog,
        }
    }
}

/// Position-binned, state-conditional speed statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedPolicy {
    pub bins: usize,
    /// `cells[bin][state]`; `None` where no cruising sample fell.
    pub cells: Vec<Vec<Option<PolicyCell>>>,
    /// Cluster-wide statistics per state, used for empty cells.
    pub fallback: Vec<PolicyCell>,
}

pub fn position_bin(pos: f64, bins: usize) -> usize {
    ((pos * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

impl SpeedPolicy {
    pub fn cell(&self, bin: usize, state: usize) -> &PolicyCell {
        self.cells[bin][state].as_ref().unwrap_or(&self.fallback[state])
    }

    pub fn lookup(&self, pos: f64, state: usize, label: WeatherState) -> f64 {
        self.cell(position_bin(pos, self.bins), state).speed_for(label)
    }
}

/// Decodes each voyage and collects cruising speeds per (bin, state).
pub fn build_speed_policy(voyages: &[Voyage], m: &HmmModel, bins: usize) -> Result<SpeedPolicy> {
    if voyages.is_empty() {
        return Err(Error::Empty("speed policy needs at least one voyage".into()));
    }
    if bins == 0 {
        return Err(Error::Invalid("speed policy needs at least one bin".into()));
    }
    let k = m.n_states();
    let mut acc: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k]; bins];
    let mut per_state: Vec<Vec<f64>> = vec![Vec::new(); k];
    for v in voyages {
        let pos = along_track_fraction(v)?;
        let path = viterbi(m, &voyage_observations(v));
        for ((r, p), s) in v.records().iter().zip(&pos).zip(&path) {
            if r.speed_mode == Some(SpeedMode::Cruising) {
                acc[position_bin(*p, bins)][*s].push(r.sog);
                per_state[*s].push(r.sog);
            }
        }
    }
    let all: Vec<f64> = per_state.iter().flatten().copied().collect();
    let overall = PolicyCell::from_values(&all)
        .ok_or_else(|| Error::Empty("no cruising records to build a speed policy".into()))?;
    let fallback = per_state
        .iter()
        .map(|v| PolicyCell::from_values(v).unwrap_or(overall))
        .collect();
    let cells = acc
        .iter()
        .map(|row| row.iter().map(|v| PolicyCell::from_values(v)).collect())
        .collect();
    Ok(SpeedPolicy { bins, cells, fallback })
}

/// Decoded state indices and policy speeds for a voyage, clipped to
/// `[sog_min, sog_max]`.
pub fn hmm_predict(m: &HmmModel, policy: &SpeedPolicy, v: &Voyage, sog_min: f64, sog_max: f64) -> Result<(SpeedProfile, Vec<usize>)> {
    let pos = along_track_fraction(v)?;
    let path = viterbi(m, &voyage_observations(v));
    let sog = pos
        .iter()
        .zip(&path)
        .map(|(p, s)| policy.lookup(*p, *s, m.weather_state(*s)))
        .collect();
    let profile = SpeedProfile::new(v.id(), pos, sog, Provenance::Predicted("HMM".into()))?.clipped(sog_min, sog_max);
    Ok((profile, path))
}

/// Persisted HMM plus policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmArtifact {
    pub schema_version: u32,
    pub model: HmmModel,
    pub policy: SpeedPolicy,
}
