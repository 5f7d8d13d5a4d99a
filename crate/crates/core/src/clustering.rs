//! Nested top-percentile voyage clusters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Voyage, VoyageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClusterName {
    Top10Pr,
    Top25Pr,
    Top50Pr,
    Top75Pr,
}

impl ClusterName {
    pub const ALL: [ClusterName; 4] = [
        ClusterName::Top10Pr,
        ClusterName::Top25Pr,
        ClusterName::Top50Pr,
        ClusterName::Top75Pr,
    ];

    pub fn percent(self) -> usize {
        match self {
            ClusterName::Top10Pr => 10,
            ClusterName::Top25Pr => 25,
            ClusterName::Top50Pr => 50,
            ClusterName::Top75Pr => 75,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterName::Top10Pr => "Top10Pr",
            ClusterName::Top25Pr => "Top25Pr",
            ClusterName::Top50Pr => "Top50Pr",
            ClusterName::Top75Pr => "Top75Pr",
        }
    }
}

impl fmt::Display for ClusterName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClusterName::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown cluster {s:?}")))
    }
}

/// `ceil(p * n / 100)` in integer arithmetic.
pub fn cluster_size(percent: usize, n: usize) -> usize {
    (percent * n).div_ceil(100)
}

/// Cluster name to sorted voyage ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterSet {
    pub members: BTreeMap<ClusterName, Vec<VoyageId>>,
}

impl ClusterSet {
    pub fn get(&self, c: ClusterName) -> &[VoyageId] {
        self.members.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, c: ClusterName, id: VoyageId) -> bool {
        self.get(c).binary_search(&id).is_ok()
    }
}

/// Ranks `(id, score)` pairs best first; equal scores go to the lower id.
pub fn rank_by_score(scored: &[(VoyageId, f64)]) -> Vec<VoyageId> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(id, _)| id).collect()
}

pub fn percentile_clusters_from_scores(scored: &[(VoyageId, f64)]) -> Result<ClusterSet> {
    if scored.is_empty() {
        return Err(Error::Empty("cannot cluster an empty corpus".into()));
    }
    if let Some((id, s)) = scored.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Invalid(format!("voyage {id} has non-finite score {s}")));
    }
    let ranked = rank_by_score(scored);
    let members = ClusterName::ALL
        .into_iter()
        .map(|c| {
            let mut ids = ranked[..cluster_size(c.percent(), ranked.len())].to_vec();
            ids.sort();
            (c, ids)
        })
        .collect();
    Ok(ClusterSet { members })
}

/// Every voyage must already carry an Eff-Score.
pub fn percentile_clusters(voyages: &[Voyage]) -> Result<ClusterSet> {
    let scored = voyages
        .iter()
        .map(|v| {
            v.eff_score()
                .map(|s| (v.id(), s))
                .ok_or_else(|| Error::Invalid(format!("voyage {} has no eff_score", v.id())))
        })
        .collect::<Result<Vec<_>>>()?;
    percentile_clusters_from_scores(&scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<VoyageId> {
        v.iter().map(|&i| VoyageId(i)).collect()
    }

    #[test]
    fn ten_distinct() {
        let scored: Vec<_> = (0..10).map(|i| (VoyageId(i), i as f64 / 10.0)).collect();
        let c = percentile_clusters_from_scores(&scored).unwrap();
        let sizes: Vec<usize> = ClusterName::ALL.iter().map(|n| c.get(*n).len()).collect();
        assert_eq!(sizes, vec![1, 3, 5, 8]);
        assert_eq!(c.get(ClusterName::Top10Pr), ids(&[9]).as_slice());
        assert_eq!(c.get(ClusterName::Top25Pr), ids(&[7, 8, 9]).as_slice());
    }

    #[test]
    fn ties_go_to_lower_ids() {
        let scored: Vec<_> = (0..7).rev().map(|i| (VoyageId(i), 0.3)).collect();
        let c = percentile_clusters_from_scores(&scored).unwrap();
        assert_eq!(c.get(ClusterName::Top10Pr), ids(&[0]).as_slice());
        assert_eq!(c.get(ClusterName::Top25Pr), ids(&[0, 1]).as_slice());
        assert_eq!(c.get(ClusterName::Top50Pr), ids(&[0, 1, 2, 3]).as_slice());
        assert_eq!(c.get(ClusterName::Top75Pr), ids(&[0, 1, 2, 3, 4, 5]).as_slice());
    }

    #[test]
    fn single_voyage_in_all() {
        let c = percentile_clusters_from_scores(&[(VoyageId(4), 0.0)]).unwrap();
        for n in ClusterName::ALL {
            assert_eq!(c.get(n), ids(&[4]).as_slice());
        }
        assert!(percentile_clusters_from_scores(&[]).is_err());
    }

    #[test]
    fn ceil_counts() {
        assert_eq!(cluster_size(10, 162), 17);
        assert_eq!(cluster_size(75, 4), 3);
        assert_eq!(cluster_size(10, 1), 1);
        for n in 1..500 {
            for p in [10, 25, 50, 75] {
                assert_eq!(cluster_size(p, n), (p as f64 * n as f64 / 100.0).ceil() as usize);
            }
        }
    }

    #[test]
    fn cluster_name_round_trip() {
        for c in ClusterName::ALL {
            assert_eq!(c.as_str().parse::<ClusterName>().unwrap(), c);
        }
        assert!("Top5Pr".parse::<ClusterName>().is_err());
    }

    proptest! {
        #[test]
        fn nested_and_ordered(scores in proptest::collection::vec(0u8..20, 1..60)) {
            let scored: Vec<_> = scores.iter().enumerate().map(|(i, s)| (VoyageId(i as u32), *s as f64)).collect();
            let c = percentile_clusters_from_scores(&scored).unwrap();
            let min_of = |n: ClusterName| c.get(n).iter().map(|id| scored[id.0 as usize].1).fold(f64::INFINITY, f64::min);
            for w in ClusterName::ALL.windows(2) {
                prop_assert!(c.get(w[0]).iter().all(|id| c.contains(w[1], *id)));
                prop_assert!(min_of(w[0]) >= min_of(w[1]));
            }
        }

        #[test]
        fn permutation_invariant(scores in proptest::collection::vec(0u8..10, 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let scored: Vec<_> = scores.iter().enumerate().map(|(i, s)| (VoyageId(i as u32), *s as f64)).collect();
            let mut shuffled = scored.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                percentile_clusters_from_scores(&scored).unwrap(),
                percentile_clusters_from_scores(&shuffled).unwrap()
            );
        }
    }
}
