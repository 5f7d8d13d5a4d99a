//! Single-layer LSTM with a linear head, trained by backpropagation through
//! time and Adam.
//!
//! Parameters live in one flat vector laid out as
//! `Wx (4H x I) | Wh (4H x H) | b (4H) | head_w (H) | head_b`, gate blocks in
//! the order input, forget, cell, output.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{column_moments, voyage_features, FeatureRow, N_FEATURES};
use crate::io::{read_json, write_atomic, write_json};
use crate::model::{Provenance, SpeedProfile, Voyage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// One update per epoch on the gradient of the whole training set.
    #[serde(default)]
    pub full_batch: bool,
    /// Freeze recurrent weights and train only the linear head.
    #[serde(default)]
    pub head_only: bool,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            input_dim: N_FEATURES,
            hidden_dim: 16,
            window: 32,
            learning_rate: 1e-3,
            epochs: 50,
            clip_norm: 1.0,
            seed: 0,
            full_batch: false,
            head_only: false,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.window == 0 {
            return Err(Error::Invalid("LSTM dimensions and window must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::Invalid("LSTM clip norm must be positive and learning rate non-negative".into()));
        }
        Ok(())
    }
}

pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
    4 * hidden_dim * (input_dim + hidden_dim + 1) + hidden_dim + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub data: Vec<f64>,
}

struct Offsets {
    wh: usize,
    b: usize,
    head_w: usize,
    head_b: usize,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            data: vec![0.0; param_count(input_dim, hidden_dim)],
        }
    }

    fn offsets(&self) -> Offsets {
        let (i, h) = (self.input_dim, self.hidden_dim);
        let wh = 4 * h * i;
        let b = wh + 4 * h * h;
        let head_w = b + 4 * h;
        Offsets {
            wh,
            b,
            head_w,
            head_b: head_w + h,
        }
    }

    /// Start of the linear head within `data`.
    pub fn head_offset(&self) -> usize {
        self.offsets().head_w
    }

    pub fn forget_biases(&self) -> &[f64] {
        let o = self.offsets();
        let h = self.hidden_dim;
        &self.data[o.b + h..o.b + 2 * h]
    }

    pub fn head_bias_mut(&mut self) -> &mut f64 {
        let o = self.offsets();
        &mut self.data[o.head_b]
    }
}

/// Uniform init in `[-1/sqrt(H), 1/sqrt(H)]`, forget-gate biases set to 1.
pub fn init_lstm(cfg: &LstmConfig) -> Result<LstmParams> {
    cfg.validate()?;
    let mut p = LstmParams::zeros(cfg.input_dim, cfg.hidden_dim);
    let bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for v in &mut p.data {
        *v = rng.random_range(-bound..=bound);
    }
    let o = p.offsets();
    let h = cfg.hidden_dim;
    for v in &mut p.data[o.b + h..o.b + 2 * h] {
        *v = 1.0;
    }
    Ok(p)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations of one time step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

pub struct ForwardPass {
    pub outputs: Vec<f64>,
    pub cache: Vec<StepCache>,
    pub final_state: State,
}

/// Hidden and cell state `(h, c)`.
pub type State = (Vec<f64>, Vec<f64>);

/// Runs the network from a zero state over `inputs`.
pub fn lstm_forward(p: &LstmParams, inputs: &[Vec<f64>]) -> Result<ForwardPass> {
    lstm_forward_from(p, inputs, None)
}

/// Runs the network from `state`, or from zero when `None`.
pub fn lstm_forward_from(p: &LstmParams, inputs: &[Vec<f64>], state: Option<&State>) -> Result<ForwardPass> {
    let (nin, h) = (p.input_dim, p.hidden_dim);
    if let Some(bad) = inputs.iter().find(|x| x.len() != nin) {
        return Err(Error::DimensionMismatch {
            expected: nin,
            got: bad.len(),
        });
    }
    let o = p.offsets();
    let w = &p.data;
    let (mut h_prev, mut c_prev) = match state {
        Some((h0, c0)) => (h0.clone(), c0.clone()),
        None => (vec![0.0; h], vec![0.0; h]),
    };
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut cache = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut z = w[o.b..o.b + 4 * h].to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let wx = &w[r * nin..(r + 1) * nin];
            let wh = &w[o.wh + r * h..o.wh + (r + 1) * h];
            *zr += wx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            *zr += wh.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut gates = vec![0.0; 4 * h];
        for u in 0..h {
            gates[u] = sigmoid(z[u]);
            gates[h + u] = sigmoid(z[h + u]);
            gates[2 * h + u] = z[2 * h + u].tanh();
            gates[3 * h + u] = sigmoid(z[3 * h + u]);
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hh = vec![0.0; h];
        for u in 0..h {
            c[u] = gates[h + u] * c_prev[u] + gates[u] * gates[2 * h + u];
            tanh_c[u] = c[u].tanh();
            hh[u] = gates[3 * h + u] * tanh_c[u];
        }
        let y = w[o.head_b] + w[o.head_w..o.head_w + h].iter().zip(&hh).map(|(a, b)| a * b).sum::<f64>();
        outputs.push(y);
        cache.push(StepCache {
            x: x.clone(),
            h_prev: std::mem::replace(&mut h_prev, hh.clone()),
            c_prev: std::mem::replace(&mut c_prev, c),
            gates,
            tanh_c,
            h: hh,
        });
    }
    Ok(ForwardPass {
        outputs,
        cache,
        final_state: (h_prev, c_prev),
    })
}

/// Sum of squared errors over the window, and its gradient scaled by
/// `1 / denom`, accumulated into `grad`. The incoming state is treated as a
/// constant; the final state is returned for the next window.
pub fn window_gradient(
    p: &LstmParams,
    inputs: &[Vec<f64>],
    targets: &[f64],
    state: Option<&State>,
    denom: f64,
    grad: &mut [f64],
) -> Result<(f64, State)> {
    let fp = lstm_forward_from(p, inputs, state)?;
    let (nin, h) = (p.input_dim, p.hidden_dim);
    let o = p.offsets();
    let w = &p.data;
    let mut sse = 0.0;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..inputs.len()).rev() {
        let s = &fp.cache[t];
        let err = fp.outputs[t] - targets[t];
        sse += err * err;
        let dy = 2.0 * err / denom;
        grad[o.head_b] += dy;
        for u in 0..h {
            grad[o.head_w + u] += dy * s.h[u];
        }
        for u in 0..h {
            let (gi, gf, gg, go) = (s.gates[u], s.gates[h + u], s.gates[2 * h + u], s.gates[3 * h + u]);
            let dh = dy * w[o.head_w + u] + dh_next[u];
            let d_o = dh * s.tanh_c[u];
            let dc = dh * go * (1.0 - s.tanh_c[u] * s.tanh_c[u]) + dc_next[u];
            dz[u] = dc * gg * gi * (1.0 - gi);
            dz[h + u] = dc * s.c_prev[u] * gf * (1.0 - gf);
            dz[2 * h + u] = dc * gi * (1.0 - gg * gg);
            dz[3 * h + u] = d_o * go * (1.0 - go);
            dc_next[u] = dc * gf;
        }
        for v in dh_next.iter_mut() {
            *v = 0.0;
        }
        for r in 0..4 * h {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            for k in 0..nin {
                grad[r * nin + k] += d * s.x[k];
            }
            for k in 0..h {
                grad[o.wh + r * h + k] += d * s.h_prev[k];
                dh_next[k] += d * w[o.wh + r * h + k];
            }
            grad[o.b + r] += d;
        }
    }
    Ok((sse, fp.final_state))
}

/// One training window of standardized inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Continues the sequence of the previous window, so it starts from that
    /// window's final state instead of zero.
    pub continues: bool,
}

/// Mean squared error over every step of every window, with state carried
/// across continuing windows.
pub fn dataset_loss(p: &LstmParams, windows: &[Window]) -> Result<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    let mut state: Option<State> = None;
    for w in windows {
        let carried = if w.continues { state.as_ref() } else { None };
        let fp = lstm_forward_from(p, &w.inputs, carried)?;
        sse += fp.outputs.iter().zip(&w.targets).map(|(y, t)| (y - t) * (y - t)).sum::<f64>();
        n += w.targets.len();
        state = Some(fp.final_state);
    }
    Ok(sse / n.max(1) as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, range: std::ops::Range<usize>) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for k in range {
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * grad[k];
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * grad[k] * grad[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad {
            *g *= s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: LstmParams,
    /// Full-dataset loss after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Truncated BPTT over the windows in order, one Adam step per window (or
/// per epoch with `full_batch`). State flows forward across continuing
/// windows but gradients stop at window boundaries.
pub fn train_lstm(p: LstmParams, windows: &[Window], cfg: &LstmConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Empty("LSTM needs at least one training window".into()));
    }
    let mut params = p;
    let n = params.data.len();
    let range = if cfg.head_only { params.head_offset()..n } else { 0..n };
    let mut adam = Adam::new(n);
    let total: usize = windows.iter().map(|w| w.targets.len()).sum();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; n];
    for epoch in 0..cfg.epochs {
        let mut state: Option<State> = None;
        if cfg.full_batch {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for w in windows {
                let carried = if w.continues { state.as_ref() } else { None };
                let (_, next) = window_gradient(&params, &w.inputs, &w.targets, carried, total as f64, &mut grad)?;
                state = Some(next);
            }
            clip(&mut grad, cfg.clip_norm);
            adam.step(&mut params.data, &grad, cfg.learning_rate, range.clone());
        } else {
            for w in windows {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let carried = if w.continues { state.as_ref() } else { None };
                let denom = w.targets.len() as f64;
                let (_, next) = window_gradient(&params, &w.inputs, &w.targets, carried, denom, &mut grad)?;
                state = Some(next);
                clip(&mut grad, cfg.clip_norm);
                adam.step(&mut params.data, &grad, cfg.learning_rate, range.clone());
            }
        }
        let loss = dataset_loss(&params, windows)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        loss_curve.push(loss);
    }
    Ok(TrainOutcome { params, loss_curve })
}

/// Standardization constants for features and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardizer {
    /// Zero spread maps to a unit scale.
    pub fn fit(rows: &[FeatureRow], targets: &[f64]) -> Self {
        let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let (fm, fs) = column_moments(&raw, N_FEATURES);
        let t: Vec<Vec<f64>> = targets.iter().map(|v| vec![*v]).collect();
        let (tm, ts) = column_moments(&t, 1);
        let unit = |s: f64| if s > 0.0 { s } else { 1.0 };
        Self {
            feature_mean: fm,
            feature_std: fs.into_iter().map(unit).collect(),
            target_mean: tm[0],
            target_std: unit(ts[0]),
        }
    }

    pub fn inputs(&self, row: &FeatureRow) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (v - self.feature_mean[j]) / self.feature_std[j])
            .collect()
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn untarget(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}

/// Non-overlapping windows over each sequence in order; the tail window of a
/// sequence may be shorter.
pub fn make_windows(seqs: &[(Vec<FeatureRow>, Vec<f64>)], st: &Standardizer, window: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (rows, ys) in seqs {
        let mut start = 0;
        while start < rows.len() {
            let end = (start + window).min(rows.len());
            out.push(Window {
                inputs: rows[start..end].iter().map(|r| st.inputs(r)).collect(),
                targets: ys[start..end].iter().map(|y| st.target(*y)).collect(),
                continues: start > 0,
            });
            start = end;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub params: LstmParams,
    pub standardizer: Standardizer,
    pub loss_curve: Vec<f64>,
}

/// Feature and speed sequences of every record of each voyage.
pub fn voyage_sequences(voyages: &[Voyage]) -> Result<Vec<(Vec<FeatureRow>, Vec<f64>)>> {
    voyages
        .iter()
        .map(|v| Ok((voyage_features(v)?, v.records().iter().map(|r| r.sog).collect())))
        .collect()
}

pub fn fit_lstm(voyages: &[Voyage], cfg: &LstmConfig) -> Result<LstmModel> {
    if voyages.is_empty() {
        return Err(Error::Empty("LSTM training cluster is empty".into()));
    }
    let seqs = voyage_sequences(voyages)?;
    let rows: Vec<FeatureRow> = seqs.iter().flat_map(|s| s.0.iter().copied()).collect();
    let ys: Vec<f64> = seqs.iter().flat_map(|s| s.1.iter().copied()).collect();
    let st = Standardizer::fit(&rows, &ys);
    let windows = make_windows(&seqs, &st, cfg.window);
    let init = init_lstm(cfg)?;
    let out = train_lstm(init, &windows, cfg)?;
    Ok(LstmModel {
        config: *cfg,
        params: out.params,
        standardizer: st,
        loss_curve: out.loss_curve,
    })
}

impl LstmModel {
    /// De-standardized network output for each row, unclipped.
    pub fn raw_predict(&self, rows: &[FeatureRow]) -> Result<Vec<f64>> {
        let inputs: Vec<Vec<f64>> = rows.iter().map(|r| self.standardizer.inputs(r)).collect();
        let fp = lstm_forward(&self.params, &inputs)?;
        Ok(fp.outputs.into_iter().map(|z| self.standardizer.untarget(z)).collect())
    }

    pub fn save(&self, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.params.data.len() * 8);
        for v in &self.params.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(bin_path, &bytes)?;
        write_json(
            sidecar_path,
            &LstmSidecar {
                schema_version: 1,
                input_dim: self.params.input_dim,
                hidden_dim: self.params.hidden_dim,
                n_params: self.params.data.len(),
                layout: "Wx[4H,I] Wh[4H,H] b[4H] head_w[H] head_b; gates i,f,g,o".into(),
                config: self.config,
                standardizer: self.standardizer.clone(),
                loss_curve: self.loss_curve.clone(),
            },
        )
    }

    pub fn load(bin_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let side: LstmSidecar = read_json(sidecar_path)?;
        let bytes = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let expected = param_count(side.input_dim, side.hidden_dim);
        if bytes.len() != expected * 8 || side.n_params != expected {
            return Err(Error::DimensionMismatch {
                expected: expected * 8,
                got: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            config: side.config,
            params: LstmParams {
                input_dim: side.input_dim,
                hidden_dim: side.hidden_dim,
                data,
            },
            standardizer: side.standardizer,
            loss_curve: side.loss_curve,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LstmSidecar {
    schema_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    n_params: usize,
    layout: String,
    config: LstmConfig,
    standardizer: Standardizer,
    loss_curve: Vec<f64>,
}

/// Predicted profile over the whole voyage, clipped to `[sog_min, sog_max]`.
pub fn lstm_predict(m: &LstmModel, v: &Voyage, sog_min: f64, sog_max: f64) -> Result<SpeedProfile> {
    let rows = voyage_features(v)?;
    let pos = rows.iter().map(|r| r[0]).collect();
    let sog = m.raw_predict(&rows)?;
    Ok(SpeedProfile::new(v.id(), pos, sog, Provenance::Predicted("LSTM".into()))?.clipped(sog_min, sog_max))
}

/// Largest relative error between the analytic gradient of the window loss
/// and central finite differences with step `eps`, over every parameter.
pub fn gradient_check(p: &LstmParams, inputs: &[Vec<f64>], targets: &[f64], eps: f64) -> Result<f64> {
    let n = targets.len() as f64;
    let mut grad = vec![0.0; p.data.len()];
    window_gradient(p, inputs, targets, None, n, &mut grad)?;
    let loss = |q: &LstmParams| -> Result<f64> {
        let fp = lstm_forward(q, inputs)?;
        Ok(fp.outputs.iter().zip(targets).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / n)
    };
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for k in 0..p.data.len() {
        let orig = q.data[k];
        q.data[k] = orig + eps;
        let up = loss(&q)?;
        q.data[k] = orig - eps;
        let down = loss(&q)?;
        q.data[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = grad[k].abs().max(numeric.abs());
        if denom > 0.0 {
            worst = worst.max((grad[k] - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
