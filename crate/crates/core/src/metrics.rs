//! Evaluation metrics.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{distances_from_similarity, DistanceMatrix, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::oracles::GroundTruth;
use crate::types::{ItemId, RankingResponse, ResponseLog, Triplet};

pub const METRICS_CSV_HEADER: &str =
    "round,normalized_count,mean_tau,holdout_acc,coherence,label_seconds";

/// One row of a metric trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub round: usize,
    pub normalized_query_count: u64,
    pub mean_tau: Option<f64>,
    pub holdout_accuracy: Option<f64>,
    pub coherence: Option<f64>,
    pub cumulative_label_seconds: Option<f64>,
}

impl MetricSample {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.normalized_query_count,
            opt(self.mean_tau),
            opt(self.holdout_accuracy),
            opt(self.coherence),
            opt(self.cumulative_label_seconds)
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::domain(format!(
                "expected 6 metric fields, got {}",
                f.len()
            )));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|e| Error::domain(format!("{s:?}: {e}")))
            }
        };
        Ok(Self {
            round: f[0]
                .parse()
                .map_err(|e| Error::domain(format!("round {:?}: {e}", f[0])))?,
            normalized_query_count: f[1]
                .parse()
                .map_err(|e| Error::domain(format!("normalized_count {:?}: {e}", f[1])))?,
            mean_tau: opt(f[2])?,
            holdout_accuracy: opt(f[3])?,
            coherence: opt(f[4])?,
            cumulative_label_seconds: opt(f[5])?,
        })
    }
}

pub fn write_metrics_csv(w: &mut impl Write, samples: &[MetricSample]) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for s in samples {
        writeln!(w, "{}", s.csv_row())?;
    }
    Ok(())
}

/// Kendall's tau between two rankings of the same items (no ties):
/// `(concordant − discordant) / C(n, 2)`.
pub fn kendall_tau(r1: &[ItemId], r2: &[ItemId]) -> Result<f64> {
    if r1.len() != r2.len() || r1.len() < 2 {
        return Err(Error::domain(format!(
            "rankings must share a size of at least 2, got {} and {}",
            r1.len(),
            r2.len()
        )));
    }
    let pos2: HashMap<ItemId, usize> = r2.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    if pos2.len() != r2.len() {
        return Err(Error::domain("second ranking repeats an item"));
    }
    let ranks: Vec<usize> = r1
        .iter()
        .map(|id| {
            pos2.get(id)
                .copied()
                .ok_or_else(|| Error::domain(format!("item {id} missing from the second ranking")))
        })
        .collect::<Result<_>>()?;
    Ok(tau_of_positions(&ranks))
}

/// Tau between the identity order and `ranks` (positions are distinct).
fn tau_of_positions(ranks: &[usize]) -> f64 {
    let n = ranks.len();
    let mut score: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            score += if ranks[i] < ranks[j] { 1 } else { -1 };
        }
    }
    score as f64 / (n * (n - 1) / 2) as f64
}

/// `items` sorted by ascending `dist`, ties by id.
fn order_by(items: impl Iterator<Item = ItemId>, dist: impl Fn(ItemId) -> f64) -> Vec<ItemId> {
    let mut keyed: Vec<(f64, ItemId)> = items.map(|b| (dist(b), b)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, b)| b).collect()
}

/// Body of `response` ranked by embedding distance to its head.
pub fn impute_ranking(d: &DistanceMatrix, response: &RankingResponse) -> Vec<ItemId> {
    let head = response.head().0;
    order_by(response.query().body().iter().copied(), |b| {
        d.get(head, b.0)
    })
}

/// Mean over heads of tau between the total rankings of all other items by
/// learned and by planted distance.
pub fn mean_tau_vs_truth(k: &SimilarityMatrix, gt: &GroundTruth) -> Result<f64> {
    let n = k.n();
    if gt.n_items() != n {
        return Err(Error::domain(format!(
            "embedding has {n} items but the ground truth has {}",
            gt.n_items()
        )));
    }
    if n < 3 {
        return Err(Error::domain("mean tau needs at least 3 items"));
    }
    let d = distances_from_similarity(k);
    let mut total = 0.0;
    for a in 0..n {
        let head = ItemId(a);
        let others = || (0..n).filter(move |&i| i != a).map(ItemId);
        let learned = order_by(others(), |b| d.get(a, b.0));
        let truth = order_by(others(), |b| gt.squared_distance(head, b));
        total += kendall_tau(&learned, &truth)?;
    }
    Ok(total / n as f64)
}

/// Fraction of triplets whose order agrees with the embedding; exact ties score ½.
pub fn holdout_accuracy(k: &SimilarityMatrix, holdout: &[Triplet]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::domain("holdout set is empty"));
    }
    let n = k.n();
    let d = distances_from_similarity(k);
    let mut agree = 0.0;
    for t in holdout {
        if [t.head, t.closer, t.farther].iter().any(|id| id.0 >= n) {
            return Err(Error::domain(format!(
                "holdout triplet references an item beyond {n}"
            )));
        }
        let (dc, df) = (d.get(t.head.0, t.closer.0), d.get(t.head.0, t.farther.0));
        agree += if dc < df {
            1.0
        } else if dc == df {
            0.5
        } else {
            0.0
        };
    }
    Ok(agree / holdout.len() as f64)
}

/// Mean tau between each recorded ranking and the ranking imputed from `k`.
pub fn coherence(k: &SimilarityMatrix, responses: &[RankingResponse]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::domain("coherence needs at least one response"));
    }
    let d = distances_from_similarity(k);
    let mut total = 0.0;
    for r in responses {
        r.query().check_bounds(k.n())?;
        total += kendall_tau(&impute_ranking(&d, r), r.ranking())?;
    }
    Ok(total / responses.len() as f64)
}

/// Constituent triplet comparisons: `max(1, k − 2)` per response.
pub fn normalized_query_count(log: &ResponseLog) -> u64 {
    log.iter().map(response_weight).sum()
}

pub fn response_weight(r: &RankingResponse) -> u64 {
    r.tuple_size().saturating_sub(2).max(1) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{answer_deterministic, make_ground_truth};
    use crate::types::{ResponseSource, TupleQuery};
    use nalgebra::DMatrix;

    fn ids(v: &[usize]) -> Vec<ItemId> {
        v.iter().copied().map(ItemId).collect()
    }

    fn response(head: usize, ranking: &[usize]) -> RankingResponse {
        let q = TupleQuery::new(ItemId(head), ids(ranking)).unwrap();
        RankingResponse::new(q, ids(ranking), 0.0, ResponseSource::Simulated).unwrap()
    }

    /// Unit-norm planted cloud: both a ground truth and an elliptope point.
    fn sphere_points(n: usize, dim: usize, seed: u64) -> (GroundTruth, SimilarityMatrix) {
        let mut c = make_ground_truth(n, dim, seed).unwrap().coords().clone();
        for mut col in c.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        let k = SimilarityMatrix::from_coordinates(&c).unwrap();
        (GroundTruth::new(c).unwrap(), k)
    }

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn tau_examples() {
        let r = ids(&[0, 1, 2, 3]);
        assert_eq!(kendall_tau(&r, &r).unwrap(), 1.0);
        assert_eq!(kendall_tau(&r, &ids(&[3, 2, 1, 0])).unwrap(), -1.0);
        assert!((kendall_tau(&r, &ids(&[0, 2, 1, 3])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&r, &ids(&[0, 1, 2])).is_err());
        assert!(kendall_tau(&r, &ids(&[0, 1, 2, 9])).is_err());
        assert!(kendall_tau(&ids(&[0]), &ids(&[0])).is_err());
    }

    #[test]
    fn tau_matches_pair_count_oracle_up_to_six() {
        for n in 2..=6 {
            let perms = all_permutations(n);
            let base = ids(&(0..n).collect::<Vec<_>>());
            for p in &perms {
                let other = ids(p);
                // oracle: count concordant / discordant pairs over items
                let pos = |r: &[ItemId], x: ItemId| r.iter().position(|&y| y == x).unwrap();
                let (mut c, mut d) = (0i64, 0i64);
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (ItemId(i), ItemId(j));
                        let s1 = pos(&base, a) < pos(&base, b);
                        let s2 = pos(&other, a) < pos(&other, b);
                        if s1 == s2 {
                            c += 1
                        } else {
                            d += 1
                        }
                    }
                }
                let expected = (c - d) as f64 / (c + d) as f64;
                assert_eq!(kendall_tau(&base, &other).unwrap(), expected);
                assert_eq!(kendall_tau(&other, &base).unwrap(), expected);
            }
        }
    }

    #[test]
    fn mean_tau_of_exact_embedding_is_one() {
        let (gt, k) = sphere_points(15, 3, 1);
        assert_eq!(mean_tau_vs_truth(&k, &gt).unwrap(), 1.0);
    }

    #[test]
    fn mean_tau_is_isometry_invariant() {
        let (gt, k) = sphere_points(15, 2, 2);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let mirror = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let moved = GroundTruth::new(mirror * rot * gt.coords()).unwrap();
        assert_eq!(mean_tau_vs_truth(&k, &moved).unwrap(), 1.0);
    }

    #[test]
    fn mean_tau_matches_independent_implementation() {
        let n = 30;
        let (_, k) = sphere_points(n, 6, 3);
        let gt = make_ground_truth(n, 2, 4).unwrap();
        // second implementation: brute-force pairwise concordance straight from K
        let km = k.as_matrix();
        let dk = |a: usize, b: usize| (km[(a, a)] - 2.0 * km[(a, b)] + km[(b, b)]).max(0.0).sqrt();
        let dg = |a: usize, b: usize| gt.squared_distance(ItemId(a), ItemId(b)).sqrt();
        let mut total = 0.0;
        for a in 0..n {
            let others: Vec<usize> = (0..n).filter(|&i| i != a).collect();
            let before = |d: &dyn Fn(usize, usize) -> f64, x: usize, y: usize| {
                let (dx, dy) = (d(a, x), d(a, y));
                dx < dy || (dx == dy && x < y)
            };
            let mut s = 0i64;
            for (i, &x) in others.iter().enumerate() {
                for &y in &others[i + 1..] {
                    s += if before(&dk, x, y) == before(&dg, x, y) {
                        1
                    } else {
                        -1
                    };
                }
            }
            total += s as f64 / (others.len() * (others.len() - 1) / 2) as f64;
        }
        let expected = total / n as f64;
        assert!((mean_tau_vs_truth(&k, &gt).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn holdout_extremes_and_mixture() {
        let (gt, k) = sphere_points(12, 3, 5);
        let mut consistent = Vec::new();
        for a in 0..12 {
            let q = TupleQuery::new(ItemId(a), ids(&[(a + 1) % 12, (a + 5) % 12])).unwrap();
            let r = answer_deterministic(&q, &gt);
            consistent.push(Triplet::new(ItemId(a), r.ranking()[0], r.ranking()[1]).unwrap());
        }
        let consistent = &consistent[..10];
        assert_eq!(holdout_accuracy(&k, consistent).unwrap(), 1.0);
        let reversed: Vec<Triplet> = consistent.iter().map(|t| t.reversed()).collect();
        assert_eq!(holdout_accuracy(&k, &reversed).unwrap(), 0.0);
        let mixed: Vec<Triplet> = consistent[..6]
            .iter()
            .copied()
            .chain(reversed[6..].iter().copied())
            .collect();
        assert!((holdout_accuracy(&k, &mixed).unwrap() - 0.6).abs() < 1e-15);
        assert!(holdout_accuracy(&k, &[]).is_err());
    }

    #[test]
    fn holdout_ties_count_half() {
        let k = SimilarityMatrix::identity(3);
        let t = Triplet::new(ItemId(0), ItemId(1), ItemId(2)).unwrap();
        assert_eq!(holdout_accuracy(&k, &[t]).unwrap(), 0.5);
    }

    #[test]
    fn coherence_extremes_and_mixture() {
        let (gt, k) = sphere_points(12, 3, 6);
        let agreeing: Vec<RankingResponse> = (0..6)
            .map(|a| {
                let q = TupleQuery::new(ItemId(a), ids(&[a + 1, a + 3, a + 4, a + 6])).unwrap();
                answer_deterministic(&q, &gt)
            })
            .collect();
        assert_eq!(coherence(&k, &agreeing).unwrap(), 1.0);
        let reversed: Vec<RankingResponse> = agreeing.iter().map(|r| r.reversed()).collect();
        assert_eq!(coherence(&k, &reversed).unwrap(), -1.0);
        let half: Vec<RankingResponse> = agreeing[..3]
            .iter()
            .chain(&reversed[3..])
            .cloned()
            .collect();
        assert!(coherence(&k, &half).unwrap().abs() < 1e-15);
        assert!(coherence(&k, &[]).is_err());
    }

    #[test]
    fn normalized_counts() {
        let triplets: ResponseLog = (0..10).map(|i| response(i, &[10, 11])).collect();
        assert_eq!(normalized_query_count(&triplets), 10);
        let fives: ResponseLog = (0..10).map(|i| response(i, &[10, 11, 12, 13])).collect();
        assert_eq!(normalized_query_count(&fives), 30);
        let mixed: ResponseLog = (0..5)
            .map(|i| response(i, &[10, 11]))
            .chain((0..5).map(|i| response(i, &[10, 11, 12])))
            .collect();
        assert_eq!(normalized_query_count(&mixed), 15);
        assert_eq!(normalized_query_count(&ResponseLog::new()), 0);
    }

    #[test]
    fn metric_rows_round_trip() {
        let s = MetricSample {
            round: 3,
            normalized_query_count: 700,
            mean_tau: Some(0.8125),
            holdout_accuracy: None,
            coherence: Some(-0.1),
            cumulative_label_seconds: None,
        };
        assert_eq!(s.csv_row(), "3,700,0.8125,,-0.1,");
        assert_eq!(MetricSample::parse_csv_row(&s.csv_row()).unwrap(), s);
        assert!(MetricSample::parse_csv_row("1,2,3").is_err());
    }
}
