//! Dynamic time warping and 1-nearest-neighbour profile retrieval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{interp_linear, Provenance, SpeedProfile, VoyageId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtwConfig {
    /// Sakoe-Chiba radius in steps; `None` is unconstrained.
    pub band_radius: Option<usize>,
    /// z-score each sequence before alignment.
    pub normalize_inputs: bool,
    /// Add |wave_a - wave_b| to the local cost (needs wave channels).
    pub use_wave_channel: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            band_radius: None,
            normalize_inputs: false,
            use_wave_channel: false,
        }
    }
}

/// DTW over abstract sequences of lengths `n` and `m` with local cost
/// `cost(i, j)`. With a band, only cells with `|i - j| <= radius` are
/// admissible, so the length difference must not exceed the radius.
pub fn dtw_with_cost(n: usize, m: usize, band_radius: Option<usize>, cost: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::Empty("dtw needs non-empty sequences".into()));
    }
    if let Some(r) = band_radius {
        if n.abs_diff(m) > r {
            return Err(Error::InfeasibleBand { radius: r, n, m });
        }
    }
    let inside = |i: usize, j: usize| band_radius.is_none_or(|r| i.abs_diff(j) <= r);
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            if !inside(i, j) {
                cur[j] = f64::INFINITY;
                continue;
            }
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = cost(i, j) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Absolute-difference DTW between two real sequences.
pub fn dtw_distance(a: &[f64], b: &[f64], cfg: &DtwConfig) -> Result<f64> {
    if cfg.normalize_inputs && !a.is_empty() && !b.is_empty() {
        let (za, zb) = (zscore(a), zscore(b));
        dtw_with_cost(a.len(), b.len(), cfg.band_radius, |i, j| (za[i] - zb[j]).abs())
    } else {
        dtw_with_cost(a.len(), b.len(), cfg.band_radius, |i, j| (a[i] - b[j]).abs())
    }
}

/// A sequence to compare: speed plus an optional wave-height channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels<'a> {
    pub sog: &'a [f64],
    pub wave: Option<&'a [f64]>,
}

fn channel_distance(a: &Channels<'_>, b: &Channels<'_>, cfg: &DtwConfig) -> Result<f64> {
    match (cfg.use_wave_channel, a.wave, b.wave) {
        (true, Some(wa), Some(wb)) => {
            let (sa, sb, wa, wb) = if cfg.normalize_inputs {
                (zscore(a.sog), zscore(b.sog), zscore(wa), zscore(wb))
            } else {
                (a.sog.to_vec(), b.sog.to_vec(), wa.to_vec(), wb.to_vec())
            };
            dtw_with_cost(sa.len(), sb.len(), cfg.band_radius, |i, j| {
                (sa[i] - sb[j]).abs() + (wa[i] - wb[j]).abs()
            })
        }
        (true, _, _) => Err(Error::Invalid("wave channel requested but missing".into())),
        _ => dtw_distance(a.sog, b.sog, cfg),
    }
}

/// One efficient training voyage available for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwCandidate {
    pub profile: SpeedProfile,
    pub wave: Option<Vec<f64>>,
    pub eff_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwMatch {
    pub voyage_id: VoyageId,
    pub distance: f64,
    pub profile: SpeedProfile,
}

/// Returns the candidate closest to `query` under DTW, resampled onto the
/// query's positions. Ties go to the higher Eff-Score, then the lower id.
pub fn nn1_dtw_predict(
    candidates: &[DtwCandidate],
    query: &SpeedProfile,
    query_wave: Option<&[f64]>,
    cfg: &DtwConfig,
) -> Result<DtwMatch> {
    if candidates.is_empty() {
        return Err(Error::Empty("1NN-DTW cluster is empty".into()));
    }
    let q = Channels {
        sog: &query.sog,
        wave: query_wave,
    };
    let dists = candidates
        .par_iter()
        .map(|c| {
            let ch = Channels {
                sog: &c.profile.sog,
                wave: c.wave.as_deref(),
            };
            channel_distance(&q, &ch, cfg)
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = (0..candidates.len())
        .min_by(|&x, &y| {
            dists[x]
                .total_cmp(&dists[y])
                .then(candidates[y].eff_score.total_cmp(&candidates[x].eff_score))
                .then(candidates[x].profile.voyage_id.cmp(&candidates[y].profile.voyage_id))
        })
        .expect("non-empty");
    let src = &candidates[best].profile;
    let sog = query
        .positions
        .iter()
        .map(|&x| interp_linear(&src.positions, &src.sog, x))
        .collect();
    let profile = SpeedProfile::new(
        query.voyage_id,
        query.positions.clone(),
        sog,
        Provenance::Predicted("1NN-DTW".into()),
    )?;
    Ok(DtwMatch {
        voyage_id: src.voyage_id,
        distance: dists[best],
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let c = (a[i] - b[j]).abs();
        if i == 0 && j == 0 {
            return c;
        }
        let mut best = f64::INFINITY;
        if i > 0 {
            best = best.min(naive(a, b, i - 1, j));
        }
        if j > 0 {
            best = best.min(naive(a, b, i, j - 1));
        }
        if i > 0 && j > 0 {
            best = best.min(naive(a, b, i - 1, j - 1));
        }
        c + best
    }

    #[test]
    fn hand_computed_tables() {
        let cfg = DtwConfig::default();
        assert_eq!(dtw_distance(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &cfg).unwrap(), 3.0);
        assert_eq!(
            dtw_distance(&[1.0, 3.0, 4.0, 9.0], &[1.0, 3.0, 4.0, 9.0, 9.0], &cfg).unwrap(),
            0.0
        );
        assert_eq!(dtw_distance(&[2.0, 5.0], &[2.0, 5.0], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let cfg = DtwConfig::default();
        assert!(dtw_distance(&[], &[1.0], &cfg).is_err());
        let band = DtwConfig {
            band_radius: Some(1),
            ..cfg
        };
        assert!(matches!(
            dtw_distance(&[1.0; 3], &[1.0; 6], &band),
            Err(Error::InfeasibleBand { .. })
        ));
    }

    #[test]
    fn band_zero_is_diagonal() {
        let band = DtwConfig {
            band_radius: Some(0),
            ..Default::default()
        };
        let a = [1.0f64, 5.0, 2.0, 8.0];
        let b = [2.0, 1.0, 2.0, 3.0];
        let diag: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert_eq!(dtw_distance(&a, &b, &band).unwrap(), diag);
    }

    fn candidate(id: u32, sog: Vec<f64>, eff: f64) -> DtwCandidate {
        let n = sog.len();
        let pos = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        DtwCandidate {
            profile: SpeedProfile::new(VoyageId(id), pos, sog, Provenance::Measured).unwrap(),
            wave: None,
            eff_score: eff,
        }
    }

    #[test]
    fn retrieval_picks_identical_and_breaks_ties() {
        let cands = vec![
            candidate(1, vec![3.0, 4.0, 5.0, 4.0], 0.3),
            candidate(2, vec![1.0, 1.0, 1.0, 1.0], 0.9),
            candidate(3, vec![5.0, 5.0, 5.0, 5.0], 0.5),
        ];
        let q = candidate(99, vec![3.0, 4.0, 5.0, 4.0], 0.0).profile;
        let m = nn1_dtw_predict(&cands, &q, None, &DtwConfig::default()).unwrap();
        assert_eq!(m.voyage_id, VoyageId(1));
        assert_eq!(m.profile.sog, q.sog);
        assert_eq!(m.profile.voyage_id, VoyageId(99));

        // equidistant: 2.0 is 1 away from both
        let cands = vec![
            candidate(5, vec![1.0, 1.0], 0.4),
            candidate(4, vec![3.0, 3.0], 0.4),
            candidate(6, vec![3.0, 3.0], 0.7),
        ];
        let q = candidate(99, vec![2.0, 2.0], 0.0).profile;
        assert_eq!(nn1_dtw_predict(&cands, &q, None, &DtwConfig::default()).unwrap().voyage_id, VoyageId(6));
        let cands = vec![candidate(5, vec![1.0, 1.0], 0.4), candidate(4, vec![3.0, 3.0], 0.4)];
        assert_eq!(nn1_dtw_predict(&cands, &q, None, &DtwConfig::default()).unwrap().voyage_id, VoyageId(4));
    }

    #[test]
    fn retrieval_resamples_onto_query_positions() {
        let cands = vec![candidate(1, vec![2.0, 4.0], 0.3)];
        let q = candidate(9, vec![1.0, 1.0, 1.0, 1.0, 1.0], 0.0).profile;
        let m = nn1_dtw_predict(&cands, &q, None, &DtwConfig::default()).unwrap();
        assert_eq!(m.profile.sog, vec![2.0, 2.5, 3.0, 3.5, 4.0]);
        assert!(nn1_dtw_predict(&[], &q, None, &DtwConfig::default()).is_err());
    }

    #[test]
    fn wave_channel_changes_the_match() {
        let mut a = candidate(1, vec![3.0, 3.0, 3.0], 0.3);
        a.wave = Some(vec![2.0, 2.0, 2.0]);
        let mut b = candidate(2, vec![3.1, 3.1, 3.1], 0.3);
        b.wave = Some(vec![0.5, 0.5, 0.5]);
        let q = candidate(9, vec![3.0, 3.0, 3.0], 0.0).profile;
        let wave = [0.5, 0.5, 0.5];
        let plain = nn1_dtw_predict(&[a.clone(), b.clone()], &q, Some(&wave), &DtwConfig::default()).unwrap();
        assert_eq!(plain.voyage_id, VoyageId(1));
        let cfg = DtwConfig {
            use_wave_channel: true,
            ..Default::default()
        };
        assert_eq!(nn1_dtw_predict(&[a, b], &q, Some(&wave), &cfg).unwrap().voyage_id, VoyageId(2));
    }

    fn seq() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..10).prop_map(f64::from), 1..=8)
    }

    proptest! {
        #[test]
        fn matches_naive_recursion(a in seq(), b in seq()) {
            let got = dtw_distance(&a, &b, &DtwConfig::default()).unwrap();
            prop_assert_eq!(got, naive(&a, &b, a.len() - 1, b.len() - 1));
        }

        #[test]
        fn symmetric_nonnegative_identity(a in seq(), b in seq()) {
            let cfg = DtwConfig::default();
            let ab = dtw_distance(&a, &b, &cfg).unwrap();
            prop_assert_eq!(ab, dtw_distance(&b, &a, &cfg).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(dtw_distance(&a, &a, &cfg).unwrap(), 0.0);
        }

        #[test]
        fn wide_band_equals_unbanded(a in seq(), b in seq()) {
            let wide = DtwConfig { band_radius: Some(usize::MAX), ..Default::default() };
            prop_assert_eq!(
                dtw_distance(&a, &b, &wide).unwrap(),
                dtw_distance(&a, &b, &DtwConfig::default()).unwrap()
            );
        }

        #[test]
        fn bounded_by_diagonal(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let diag: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(dtw_distance(&a, &b, &DtwConfig::default()).unwrap() <= diag + 1e-9);
        }
    }
}
