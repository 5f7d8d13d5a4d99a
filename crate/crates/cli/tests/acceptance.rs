//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Golden fixtures for the end-to-end run live in `tests/golden`. Run with
//! `SEASPEED_BLESS=1` to rewrite them after a verified change.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seaspeed_core::clustering::ClusterName;
use seaspeed_core::dtw::{dtw_distance, DtwConfig};
use seaspeed_core::efficiency::{calibrate_fuel_model, eff_score};
use seaspeed_core::eval::{build_corpus, ExperimentSummary, ModelKind, GAIN_TABLE_COLUMNS, RECORD_COLUMNS, WEATHER_COLUMNS};
use seaspeed_core::features::{FeatureRow, N_FEATURES};
use seaspeed_core::hmm::{baum_welch_step, forward_loglik, viterbi, HmmModel, Obs};
use seaspeed_core::knn::build_knn_from_rows;
use seaspeed_core::lstm::{init_lstm, lstm_forward, window_gradient, LstmConfig};
use seaspeed_core::model::WeatherState;
use seaspeed_core::synth::{default_route, generate, SynthConfig};
use seaspeed_core::weather::Grid3D;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

// 1 --------------------------------------------------------------------------

fn naive_dtw(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
    let c = (a[i] - b[j]).abs();
    if i == 0 && j == 0 {
        return c;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(naive_dtw(a, b, i - 1, j));
    }
    if j > 0 {
        best = best.min(naive_dtw(a, b, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(naive_dtw(a, b, i - 1, j - 1));
    }
    c + best
}

fn int_seq(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| rng.random_range(0..=9) as f64).collect()
}

fn dtw_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = DtwConfig::default();
    for k in 0..200 {
        let (a, b) = (int_seq(&mut rng), int_seq(&mut rng));
        let got = dtw_distance(&a, &b, &cfg).map_err(|e| e.to_string())?;
        let want = naive_dtw(&a, &b, a.len() - 1, b.len() - 1);
        ensure(got == want, || format!("pair {k}: {a:?} {b:?}: {got} != {want}"))?;
    }
    within(start.elapsed(), 5.0)?;
    Ok("200 pairs exact".into())
}

// 2 --------------------------------------------------------------------------

fn dtw_properties() -> Check {
    let cfg = DtwConfig::default();
    let d = |a: &[f64], b: &[f64], c: &DtwConfig| dtw_distance(a, b, c).map_err(|e| e.to_string());
    let examples: [(&[f64], &[f64], f64); 3] = [
        (&[2.5, -1.0, 7.0], &[2.5, -1.0, 7.0], 0.0),
        (&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 3.0),
        (&[1.0, 3.0, 4.0, 9.0], &[1.0, 3.0, 4.0, 9.0, 9.0], 0.0),
    ];
    for (a, b, want) in examples {
        let got = d(a, b, &cfg)?;
        ensure(got == want, || format!("{a:?} vs {b:?}: {got} != {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..300 {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ab = d(&a, &b, &cfg)?;
        ensure(d(&a, &a, &cfg)? == 0.0, || format!("case {k}: identity not zero"))?;
        ensure(ab >= 0.0, || format!("case {k}: negative distance {ab}"))?;
        ensure(ab == d(&b, &a, &cfg)?, || format!("case {k}: asymmetric"))?;
        let wide = DtwConfig {
            band_radius: Some(n.max(m)),
            ..cfg
        };
        ensure(ab == d(&a, &b, &wide)?, || format!("case {k}: wide band differs"))?;
    }
    Ok("3 hand tables, 300 random pairs".into())
}

// 3 --------------------------------------------------------------------------

fn stochastic(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_hmm(rng: &mut ChaCha8Rng, k: usize) -> HmmModel {
    HmmModel {
        pi: stochastic(rng, k),
        trans: (0..k).map(|_| stochastic(rng, k)).collect(),
        means: (0..k).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..12.0)]).collect(),
        vars: (0..k).map(|_| [rng.random_range(0.05..1.0), rng.random_range(0.5..4.0)]).collect(),
        degenerate: false,
    }
}

fn random_obs(rng: &mut ChaCha8Rng, t: usize) -> Vec<Obs> {
    (0..t).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..12.0)]).collect()
}

fn gauss_ln(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Log joint probability of every state path, by enumeration.
fn enumerate_paths(m: &HmmModel, obs: &[Obs]) -> Vec<(Vec<usize>, f64)> {
    let k = m.pi.len();
    let emit = |s: usize, o: &Obs| gauss_ln(o[0], m.means[s][0], m.vars[s][0]) + gauss_ln(o[1], m.means[s][1], m.vars[s][1]);
    let mut out = Vec::new();
    let total = k.pow(obs.len() as u32);
    for code in 0..total {
        let mut path = Vec::with_capacity(obs.len());
        let mut c = code;
        for _ in 0..obs.len() {
            path.push(c % k);
            c /= k;
        }
        let mut lp = m.pi[path[0]].ln() + emit(path[0], &obs[0]);
        for t in 1..obs.len() {
            lp += m.trans[path[t - 1]][path[t]].ln() + emit(path[t], &obs[t]);
        }
        out.push((path, lp));
    }
    out
}

fn hmm_oracle() -> Check {
    let start = Instant::now();
    let mut worst_drop: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut m = random_hmm(&mut rng, 3);
        let seqs: Vec<Vec<Obs>> = (0..4).map(|_| random_obs(&mut rng, 40)).collect();
        let ll = |m: &HmmModel| seqs.iter().map(|s| forward_loglik(m, s)).sum::<f64>();
        let mut prev = ll(&m);
        for it in 0..25 {
            m = baum_welch_step(&m, &seqs).0;
            let cur = ll(&m);
            worst_drop = worst_drop.max(prev - cur);
            ensure(cur >= prev - 1e-9, || format!("seed {seed} iteration {it}: {prev} -> {cur}"))?;
            prev = cur;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ll: f64 = 0.0;
    for case in 0..100 {
        let k = rng.random_range(2..=3);
        let t = rng.random_range(1..=6);
        let m = random_hmm(&mut rng, k);
        let obs = random_obs(&mut rng, t);
        let paths = enumerate_paths(&m, &obs);
        let max = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let want = max + paths.iter().map(|p| (p.1 - max).exp()).sum::<f64>().ln();
        let got = forward_loglik(&m, &obs);
        worst_ll = worst_ll.max((got - want).abs());
        ensure((got - want).abs() <= 1e-9, || format!("case {case}: forward {got} vs {want}"))?;
        let best = paths.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let vit = viterbi(&m, &obs);
        ensure(vit == best.0, || format!("case {case}: viterbi {vit:?} vs {:?}", best.0))?;
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "max likelihood drop {worst_drop:.1e}, max forward error {worst_ll:.1e}"
    ))
}

// 4 --------------------------------------------------------------------------

fn lstm_gradient() -> Check {
    let start = Instant::now();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let cfg = LstmConfig {
            input_dim: 3,
            hidden_dim: 2,
            seed,
            ..LstmConfig::default()
        };
        let mut p = init_lstm(&cfg).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        // Move off the initial biases so every parameter has a gradient.
        for v in p.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let inputs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let targets: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = targets.len() as f64;
        let mut grad = vec![0.0; p.data.len()];
        window_gradient(&p, &inputs, &targets, None, n, &mut grad).map_err(|e| e.to_string())?;
        let loss = |q: &seaspeed_core::lstm::LstmParams| -> f64 {
            let out = lstm_forward(q, &inputs).expect("forward").outputs;
            out.iter().zip(&targets).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / n
        };
        let mut q = p.clone();
        for k in 0..p.data.len() {
            let orig = q.data[k];
            q.data[k] = orig + eps;
            let up = loss(&q);
            q.data[k] = orig - eps;
            let down = loss(&q);
            q.data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = grad[k].abs().max(numeric.abs());
            ensure(scale > 0.0, || format!("seed {seed}: parameter {k} has zero gradient"))?;
            worst = worst.max((grad[k] - numeric).abs() / scale);
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("max relative error {worst:.2e} over 5 nets"))
}

// 5 --------------------------------------------------------------------------

fn rational_abs(r: BigRational) -> BigRational {
    if r < BigRational::from_integer(BigInt::from(0)) {
        -r
    } else {
        r
    }
}

/// `1 - 2ab/(a+b)` in exact arithmetic on the binary inputs, rounded to the
/// nearest double.
fn exact_eff(a: f64, b: f64) -> f64 {
    let (ra, rb) = (BigRational::from_float(a).unwrap(), BigRational::from_float(b).unwrap());
    let one = BigRational::from_integer(BigInt::from(1));
    let two = BigRational::from_integer(BigInt::from(2));
    let exact = one - two * ra.clone() * rb.clone() / (ra + rb);
    let approx = eff_score(a, b).unwrap();
    let cands = [f64::from_bits(approx.to_bits() - 1), approx, f64::from_bits(approx.to_bits() + 1)];
    *cands
        .iter()
        .min_by_key(|c| rational_abs(BigRational::from_float(**c).unwrap() - exact.clone()))
        .unwrap()
}

fn eff_score_suite() -> Check {
    let e = |a, b| eff_score(a, b).map_err(|e| e.to_string());
    ensure(e(1.0, 1.0)? == 0.0, || "eff_score(1, 1) != 0".into())?;
    ensure(e(0.5, 0.5)? == 0.5, || "eff_score(0.5, 0.5) != 0.5".into())?;
    // The stored inputs 0.2 and 0.8 are not the decimals; exact arithmetic on
    // them rounds to one ulp below the double nearest 0.68.
    let v = e(0.2, 0.8)?;
    ensure(v == exact_eff(0.2, 0.8), || format!("eff_score(0.2, 0.8) = {v:?} is not correctly rounded"))?;
    ensure((v - 0.68).abs() <= f64::EPSILON * 0.68, || format!("eff_score(0.2, 0.8) = {v:?}"))?;
    let grid: Vec<f64> = (1..=50).map(|i| i as f64 / 50.0).collect();
    for (i, &a) in grid.iter().enumerate() {
        for (j, &b) in grid.iter().enumerate() {
            let s = e(a, b)?;
            ensure(s == e(b, a)?, || format!("asymmetric at ({a}, {b})"))?;
            if i + 1 < grid.len() {
                ensure(e(grid[i + 1], b)? < s, || format!("not decreasing in fuel at ({a}, {b})"))?;
            }
            if j + 1 < grid.len() {
                ensure(e(a, grid[j + 1])? < s, || format!("not decreasing in time at ({a}, {b})"))?;
            }
        }
    }
    Ok(format!("eff_score(0.2, 0.8) = {v:?}, exact rounding; 50x50 grid"))
}

// 6 --------------------------------------------------------------------------

fn trilinear() -> Check {
    let times: Vec<f64> = (0..5).map(|i| 1.6e9 + 3600.0 * i as f64).collect();
    let lats = vec![57.25, 57.5, 57.75, 58.0];
    let lons = vec![11.0, 11.25, 11.5];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let f = |t: f64, y: f64, x: f64| {
        let (t, y, x) = ((t - 1.6e9) / 3600.0, y - 57.0, x - 11.0);
        c[0] + c[1] * t + c[2] * y + c[3] * x + c[4] * t * y + c[5] * t * x + c[6] * y * x + c[7] * t * y * x
    };
    let g = Grid3D::from_fn(times.clone(), lats.clone(), lons.clone(), f).map_err(|e| e.to_string())?;
    for (ti, &t) in times.iter().enumerate() {
        for (ai, &y) in lats.iter().enumerate() {
            for (oi, &x) in lons.iter().enumerate() {
                let got = g.interpolate(t, y, x).map_err(|e| e.to_string())?;
                ensure(got == g.at(ti, ai, oi), || format!("corner ({t}, {y}, {x}): {got}"))?;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(times[0]..times[4]);
        let y = rng.random_range(lats[0]..lats[3]);
        let x = rng.random_range(lons[0]..lons[2]);
        let got = g.interpolate(t, y, x).map_err(|e| e.to_string())?;
        worst = worst.max((got - f(t, y, x)).abs());
    }
    ensure(worst <= 1e-12, || format!("max error {worst:.2e}"))?;
    Ok(format!("corners exact, max interior error {worst:.1e}"))
}

// 7 --------------------------------------------------------------------------

fn knn_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Small integer features make exact distance ties common.
    let row = |rng: &mut ChaCha8Rng| -> FeatureRow { std::array::from_fn(|_| rng.random_range(0..5) as f64) };
    let rows: Vec<FeatureRow> = (0..400).map(|_| row(&mut rng)).collect();
    let targets: Vec<f64> = (0..400).map(|_| rng.random_range(1.0..7.0)).collect();
    let m = build_knn_from_rows(&rows, &targets, 5).map_err(|e| e.to_string())?;
    ensure(m.kept.len() == N_FEATURES, || format!("dropped features {:?}", m.dropped))?;
    for q in 0..1000 {
        let query = row(&mut rng);
        let k = [1, 3, 5, 9, 15, 25][q % 6];
        let z = m.standardize(&query);
        let mut scan: Vec<(f64, usize)> = m
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want = scan[..k].iter().map(|(_, i)| targets[*i]).sum::<f64>() / k as f64;
        let got = m.predict_with_k(&query, k);
        ensure(got == want, || format!("query {q} (k={k}): {got} != {want}"))?;
    }
    Ok("1000 queries exact".into())
}

// 8 --------------------------------------------------------------------------

fn calibration() -> Check {
    let cfg = SynthConfig {
        n_voyages: 12,
        fuel_noise: 0.0,
        ..SynthConfig::default()
    };
    let (grids, corpus) = generate(&cfg).map_err(|e| e.to_string())?;
    let voyages = build_corpus(&corpus.track, &default_route(), &grids).map_err(|e| e.to_string())?;
    let cal = calibrate_fuel_model(&voyages).map_err(|e| e.to_string())?;
    let worst = cal
        .coeffs
        .as_array()
        .iter()
        .zip(cfg.coeffs.as_array())
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-8, || format!("coefficients {:?} vs {:?}", cal.coeffs, cfg.coeffs))?;
    Ok(format!("max coefficient error {worst:.1e}"))
}

// 9-11 -----------------------------------------------------------------------

struct Run {
    data: PathBuf,
    out: PathBuf,
    synth: Duration,
    evaluate: Duration,
}

fn seaspeed(args: &[&str], data: &Path, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let res = Command::new(env!("CARGO_BIN_EXE_seaspeed"))
        .args(args)
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !res.status.success() {
        return Err(format!(
            "seaspeed {args:?} exited with {}: {}",
            res.status,
            String::from_utf8_lossy(&res.stderr)
        ));
    }
    Ok(start.elapsed())
}

fn end_to_end(root: &Path, name: &str, jobs: &str) -> Result<Run, String> {
    let data = root.join(name).join("data");
    let out = root.join(name).join("out");
    let synth = seaspeed(&["synth", "--seed", "42", "--jobs", jobs], &data, &out)?;
    let evaluate = seaspeed(&["evaluate", "--seed", "42", "--jobs", jobs], &data, &out)?;
    Ok(Run {
        data,
        out,
        synth,
        evaluate,
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|row| row.map(|row| row.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| e.to_string())?;
    Ok((header, rows))
}

fn e2e_criteria(run: &Run) -> Check {
    let total = run.synth + run.evaluate;
    within(total, 300.0)?;
    let (_, records) = read_csv(&run.out.join("records.csv"))?;
    let identity: Vec<&Vec<String>> = records.iter().filter(|r| r[2] == "Identity").collect();
    ensure(!identity.is_empty(), || "no identity records".into())?;
    ensure(identity.iter().all(|r| r[5] == "0" && r[3] == r[4]), || "identity gain is not exactly 0".into())?;

    let summary: ExperimentSummary = serde_json::from_slice(
        &std::fs::read(run.out.join("experiment.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(summary.failures.is_empty(), || format!("failed jobs {:?}", summary.failures))?;
    let test: BTreeSet<_> = summary.test_ids.iter().collect();
    for (c, ids) in &summary.clusters.members {
        ensure(ids.iter().all(|id| !test.contains(id)), || format!("cluster {c} contains test voyages"))?;
    }

    let (_, gains) = read_csv(&run.out.join("gain_table.csv"))?;
    let hmm = gains
        .iter()
        .find(|r| r[0] == ClusterName::Top75Pr.as_str() && r[1] == ModelKind::Hmm.as_str())
        .ok_or("no Top75Pr/HMM row")?;
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let (mean, improved, tests) = (num(&hmm[2])?, num(&hmm[3])?, num(&hmm[4])?);
    let share = improved / tests;
    ensure(mean > 0.0 && share >= 0.55, || {
        format!("HMM on Top75Pr: mean gain {mean:.3}%, improved {improved}/{tests}")
    })?;
    Ok(format!(
        "{:.0} s (synth {:.0} s), {} identity records at 0, HMM/Top75Pr mean {mean:+.3}% improved {improved}/{tests} ({:.1}%)",
        total.as_secs_f64(),
        run.synth.as_secs_f64(),
        identity.len(),
        100.0 * share
    ))
}

fn tree(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| format!("{}: {e}", d.display()))? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn compare_trees(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>, what: &str) -> Result<(), String> {
    let names_a: Vec<_> = a.keys().collect();
    let names_b: Vec<_> = b.keys().collect();
    ensure(names_a == names_b, || format!("{what}: file sets differ: {names_a:?} vs {names_b:?}"))?;
    for (k, v) in a {
        ensure(&b[k] == v, || format!("{what}: {} differs", k.display()))?;
    }
    Ok(())
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn determinism(a: &Run, b: &Run) -> Check {
    let out_a = tree(&a.out)?;
    compare_trees(&out_a, &tree(&b.out)?, "output trees")?;
    compare_trees(&tree(&a.data)?, &tree(&b.data)?, "data trees")?;
    let golden = golden_dir();
    if std::env::var_os("SEASPEED_BLESS").is_some() {
        if golden.exists() {
            std::fs::remove_dir_all(&golden).map_err(|e| e.to_string())?;
        }
        for (rel, bytes) in &out_a {
            let p = golden.join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).map_err(|e| e.to_string())?;
            std::fs::write(&p, bytes).map_err(|e| e.to_string())?;
        }
        return Ok(format!("blessed {} golden files", out_a.len()));
    }
    ensure(golden.exists(), || format!("{} missing; run with SEASPEED_BLESS=1", golden.display()))?;
    compare_trees(&out_a, &tree(&golden)?, "golden fixtures")?;
    Ok(format!("{} output files identical across runs and to the golden fixtures", out_a.len()))
}

fn report_schema(run: &Run) -> Check {
    let (h, gains) = read_csv(&run.out.join("gain_table.csv"))?;
    ensure(h == GAIN_TABLE_COLUMNS, || format!("gain table header {h:?}"))?;
    let clusters: Vec<&str> = ClusterName::ALL.iter().map(|c| c.as_str()).chain(["Average"]).collect();
    let models: Vec<&str> = ModelKind::ALL.iter().map(|m| m.as_str()).collect();
    ensure(gains.len() == clusters.len() * models.len(), || format!("{} gain rows", gains.len()))?;
    for c in &clusters {
        for m in &models {
            let row = gains.iter().find(|r| r[0] == *c && r[1] == *m).ok_or(format!("no row {c}/{m}"))?;
            let improved: f64 = row[3].parse().map_err(|_| format!("{c}/{m}: improved_count {:?}", row[3]))?;
            let tests: f64 = row[4].parse().map_err(|_| format!("{c}/{m}: test_count {:?}", row[4]))?;
            row[2].parse::<f64>().map_err(|_| format!("{c}/{m}: mean_gain_pct {:?}", row[2]))?;
            ensure((0.0..=tests).contains(&improved) && tests > 0.0, || format!("{c}/{m}: {improved}/{tests}"))?;
        }
    }
    let (h, weather) = read_csv(&run.out.join("weather_breakdown.csv"))?;
    ensure(h == WEATHER_COLUMNS, || format!("weather header {h:?}"))?;
    ensure(weather.len() == models.len() * 3, || format!("{} weather rows", weather.len()))?;
    for m in &models {
        for s in WeatherState::ALL {
            let row = weather
                .iter()
                .find(|r| r[0] == *m && r[1] == s.as_str())
                .ok_or(format!("no weather row {m}/{}", s.as_str()))?;
            let n: usize = row[4].parse().map_err(|_| format!("{m}: n_voyages {:?}", row[4]))?;
            if n > 0 {
                row[2].parse::<f64>().map_err(|_| format!("{m}: mean {:?}", row[2]))?;
                let sd: f64 = row[3].parse().map_err(|_| format!("{m}: std {:?}", row[3]))?;
                ensure(sd >= 0.0, || format!("{m}: negative std"))?;
            } else {
                ensure(row[2].is_empty() && row[3].is_empty(), || format!("{m}: statistics without voyages"))?;
            }
        }
    }
    let (h, _) = read_csv(&run.out.join("records.csv"))?;
    ensure(h == RECORD_COLUMNS, || format!("records header {h:?}"))?;
    let svgs = tree(&run.out)?
        .keys()
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .count();
    ensure(svgs > 0, || "no SVG output".into())?;
    Ok(format!("{} gain rows, {} weather rows, {svgs} SVGs", gains.len(), weather.len()))
}

fn main() {
    // Ignore libtest flags such as --nocapture.
    let mut results: Vec<(usize, &str, Check, Duration)> = Vec::new();
    let unit: [(usize, &str, fn() -> Check); 8] = [
        (1, "DTW equals the naive recursion", dtw_oracle),
        (2, "DTW properties and hand-computed tables", dtw_properties),
        (3, "HMM Baum-Welch monotone; forward and Viterbi match enumeration", hmm_oracle),
        (4, "LSTM analytic gradient matches finite differences", lstm_gradient),
        (5, "Eff-Score examples, symmetry and monotonicity", eff_score_suite),
        (6, "Trilinear interpolation reproduces trilinear polynomials", trilinear),
        (7, "kNN matches an exhaustive scan", knn_oracle),
        (8, "Fuel-model calibration recovers noise-free coefficients", calibration),
    ];
    for (n, name, f) in unit {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        results.push((n, name, res, start.elapsed()));
    }

    let root = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let first = end_to_end(root.path(), "a", "1");
    let e2e_time = start.elapsed();
    let second = first.as_ref().ok().map(|_| end_to_end(root.path(), "b", "4"));
    let (c9, c10, c11) = match (&first, &second) {
        (Ok(a), Some(Ok(b))) => (e2e_criteria(a), determinism(a, b), report_schema(a)),
        (Err(e), _) | (_, Some(Err(e))) => (Err(e.clone()), Err(e.clone()), Err(e.clone())),
        _ => unreachable!(),
    };
    results.push((9, "End-to-end synth and evaluate at seed 42", c9, e2e_time));
    results.push((10, "Deterministic, byte-identical output trees", c10, Duration::ZERO));
    results.push((11, "Report formats", c11, Duration::ZERO));

    let mut failed = 0;
    for (n, name, res, took) in &results {
        let (tag, detail) = match res {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => {
                failed += 1;
                ("FAIL", d.clone())
            }
        };
        println!("{tag} {n:>2} {name} [{:.2} s]: {detail}", took.as_secs_f64());
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
