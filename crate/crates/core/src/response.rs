//! Ranking probability models.
//!
//! A triplet "`b1` is closer to `a` than `b2`" has probability
//! `(D²(a,b2) + μ) / (D²(a,b1) + D²(a,b2) + 2μ)`. A tuple ranking is weighted by
//! the product of its adjacent-pair triplet probabilities and normalized by exact
//! enumeration over all permutations of the body.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ItemId;

/// Largest body that is normalized by enumeration (7! = 5040 rankings).
pub const MAX_ENUMERABLE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    mu: f64,
}

#[derive(Deserialize)]
struct RawParams {
    mu: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.mu)
    }
}

impl ModelParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::domain(format!(
                "mu must be positive and finite, got {mu}"
            )));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { mu: 0.5 }
    }
}

/// Distances from a query head to each body item, in body storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDistances {
    pub head: ItemId,
    entries: Vec<(ItemId, f64)>,
}

impl QueryDistances {
    pub fn new(head: ItemId, entries: Vec<(ItemId, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("query distances need at least one body item"));
        }
        if entries.iter().any(|(_, d)| !d.is_finite()) {
            return Err(Error::domain("query distances must be finite"));
        }
        for (i, (a, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(b, _)| a == b) {
                return Err(Error::domain(format!(
                    "item {a} repeats in query distances"
                )));
            }
        }
        Ok(Self { head, entries })
    }

    pub fn entries(&self) -> &[(ItemId, f64)] {
        &self.entries
    }

    pub fn body(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn distance_of(&self, id: ItemId) -> Option<f64> {
        self.entries.iter().find(|(b, _)| *b == id).map(|&(_, d)| d)
    }
}

#[inline]
pub(crate) fn triplet_prob_sq(d2_closer: f64, d2_farther: f64, mu: f64) -> f64 {
    (d2_farther + mu) / (d2_closer + d2_farther + 2.0 * mu)
}

/// Probability that `b1` (at distance `d_ab1` from the head) is ranked closer
/// than `b2`. Distances are squared internally, so their sign does not matter.
pub fn triplet_prob(d_ab1: f64, d_ab2: f64, params: ModelParams) -> Result<f64> {
    if !(d_ab1.is_finite() && d_ab2.is_finite()) {
        return Err(Error::domain(format!(
            "triplet distances must be finite, got ({d_ab1}, {d_ab2})"
        )));
    }
    Ok(triplet_prob_sq(d_ab1 * d_ab1, d_ab2 * d_ab2, params.mu))
}

/// Unnormalized tuple weight: the product of adjacent-pair triplet probabilities.
pub fn ranking_weight(ranking: &[ItemId], dq: &QueryDistances, params: ModelParams) -> Result<f64> {
    if ranking.len() != dq.len() {
        return Err(Error::domain(format!(
            "ranking of {} items against a body of {}",
            ranking.len(),
            dq.len()
        )));
    }
    let mut d2 = Vec::with_capacity(ranking.len());
    for (i, &id) in ranking.iter().enumerate() {
        if ranking[..i].contains(&id) {
            return Err(Error::domain(format!("item {id} repeats in ranking")));
        }
        let d = dq
            .distance_of(id)
            .ok_or_else(|| Error::domain(format!("item {id} is not in the query body")))?;
        d2.push(d * d);
    }
    Ok(d2
        .windows(2)
        .map(|w| triplet_prob_sq(w[0], w[1], params.mu))
        .product())
}

/// All permutations of `0..m` in lexicographic order, flattened.
pub(crate) struct PermutationTable {
    pub m: usize,
    pub flat: Vec<u8>,
}

impl PermutationTable {
    fn build(m: usize) -> Self {
        let mut flat = Vec::new();
        let mut perm: Vec<u8> = (0..m as u8).collect();
        loop {
            flat.extend_from_slice(&perm);
            // next lexicographic permutation
            let Some(i) = (1..m).rev().find(|&i| perm[i - 1] < perm[i]) else {
                break;
            };
            let j = (i..m).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
            perm.swap(i - 1, j);
            perm[i..].reverse();
        }
        Self { m, flat }
    }

    pub fn count(&self) -> usize {
        self.flat.len() / self.m.max(1)
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, u8> {
        self.flat.chunks_exact(self.m)
    }

    /// Shared table for bodies of `m` items.
    pub fn get(m: usize) -> Result<&'static PermutationTable> {
        static TABLES: [OnceLock<PermutationTable>; MAX_ENUMERABLE + 1] =
            [const { OnceLock::new() }; MAX_ENUMERABLE + 1];
        if m > MAX_ENUMERABLE {
            return Err(Error::Capacity {
                size: m,
                limit: MAX_ENUMERABLE,
            });
        }
        Ok(TABLES[m].get_or_init(|| Self::build(m)))
    }
}

/// Fills `out` with the normalized ranking probabilities for squared distances
/// `d2`, in `table` order. `pair` is scratch space of at least `m * m`.
pub(crate) fn pmf_from_squared(
    d2: &[f64],
    mu: f64,
    table: &PermutationTable,
    pair: &mut [f64],
    out: &mut [f64],
) {
    let m = table.m;
    debug_assert_eq!(d2.len(), m);
    for i in 0..m {
        for j in 0..m {
            pair[i * m + j] = triplet_prob_sq(d2[i], d2[j], mu);
        }
    }
    let mut z = 0.0;
    for (w, perm) in out.iter_mut().zip(table.iter()) {
        let mut p = 1.0;
        for ij in perm.windows(2) {
            p *= pair[ij[0] as usize * m + ij[1] as usize];
        }
        *w = p;
        z += p;
    }
    let inv = 1.0 / z;
    for w in out.iter_mut() {
        *w *= inv;
    }
}

/// Shannon entropy in nats.
pub(crate) fn entropy(pmf: &[f64]) -> f64 {
    -pmf.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// A normalized distribution over all rankings of a body.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingPmf {
    pub rankings: Vec<Vec<ItemId>>,
    pub probs: Vec<f64>,
}

impl RankingPmf {
    pub fn prob_of(&self, ranking: &[ItemId]) -> Option<f64> {
        self.rankings
            .iter()
            .position(|r| r == ranking)
            .map(|i| self.probs[i])
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

/// Exact ranking distribution for a query, enumerating all `(k-1)!` rankings.
pub fn ranking_pmf(dq: &QueryDistances, params: ModelParams) -> Result<RankingPmf> {
    let m = dq.len();
    let table = PermutationTable::get(m)?;
    let d2: Vec<f64> = dq.entries.iter().map(|&(_, d)| d * d).collect();
    let mut pair = vec![0.0; m * m];
    let mut probs = vec![0.0; table.count()];
    pmf_from_squared(&d2, params.mu, table, &mut pair, &mut probs);
    let rankings = table
        .iter()
        .map(|perm| perm.iter().map(|&i| dq.entries[i as usize].0).collect())
        .collect();
    Ok(RankingPmf { rankings, probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }

    fn params(mu: f64) -> ModelParams {
        ModelParams::new(mu).unwrap()
    }

    fn dq(dists: &[f64]) -> QueryDistances {
        QueryDistances::new(
            ItemId(0),
            dists
                .iter()
                .enumerate()
                .map(|(i, &d)| (ItemId(i + 1), d))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn triplet_prob_examples() {
        assert_close!(triplet_prob(1.3, 1.3, params(0.5)).unwrap(), 0.5, 0.0);
        assert_close!(
            triplet_prob(1.0, 3f64.sqrt(), params(0.5)).unwrap(),
            0.7,
            1e-15
        );
        assert_close!(triplet_prob(0.0, 0.0, params(0.1)).unwrap(), 0.5, 0.0);
        assert!(triplet_prob(f64::NAN, 1.0, params(0.5)).is_err());
        assert!(triplet_prob(1.0, f64::INFINITY, params(0.5)).is_err());
        assert!(ModelParams::new(0.0).is_err());
        assert!(ModelParams::new(-1.0).is_err());
    }

    #[test]
    fn ranking_weight_examples() {
        let q = dq(&[1.0, 3f64.sqrt()]);
        let w = ranking_weight(&[ItemId(1), ItemId(2)], &q, params(0.5)).unwrap();
        assert_close!(w, 0.7, 1e-15);

        let flat = dq(&[2.0; 4]);
        let w = ranking_weight(
            &[ItemId(3), ItemId(1), ItemId(4), ItemId(2)],
            &flat,
            params(0.5),
        )
        .unwrap();
        assert_close!(w, 0.5f64.powi(3), 1e-15);

        // k = 4: product of the two adjacent factors, by hand
        let q = dq(&[1.0, 2.0, 0.5]);
        let w = ranking_weight(&[ItemId(3), ItemId(1), ItemId(2)], &q, params(0.5)).unwrap();
        let f1 = (1.0 + 0.5) / (0.25 + 1.0 + 1.0);
        let f2 = (4.0 + 0.5) / (1.0 + 4.0 + 1.0);
        assert_close!(w, f1 * f2, 1e-15);

        assert!(ranking_weight(&[ItemId(1)], &q, params(0.5)).is_err());
        assert!(ranking_weight(&[ItemId(1), ItemId(1), ItemId(2)], &q, params(0.5)).is_err());
        assert!(ranking_weight(&[ItemId(1), ItemId(2), ItemId(9)], &q, params(0.5)).is_err());
    }

    #[test]
    fn pmf_examples() {
        let pmf = ranking_pmf(&dq(&[1.0, 3f64.sqrt()]), params(0.5)).unwrap();
        assert_close!(pmf.prob_of(&[ItemId(1), ItemId(2)]).unwrap(), 0.7, 1e-15);
        assert_close!(pmf.prob_of(&[ItemId(2), ItemId(1)]).unwrap(), 0.3, 1e-15);

        let pmf = ranking_pmf(&dq(&[1.5; 3]), params(0.5)).unwrap();
        assert_eq!(pmf.probs.len(), 6);
        for p in &pmf.probs {
            assert_close!(*p, 1.0 / 6.0, 1e-15);
        }
    }

    #[test]
    fn pmf_capacity_limit() {
        let err = ranking_pmf(&dq(&[1.0; 8]), params(0.5)).unwrap_err();
        assert!(matches!(err, Error::Capacity { size: 8, limit: 7 }));
        assert!(err.to_string().contains('7'));
        assert_eq!(
            ranking_pmf(&dq(&[1.0; 7]), params(0.5))
                .unwrap()
                .probs
                .len(),
            5040
        );
    }

    #[test]
    fn permutation_table_is_lexicographic_and_complete() {
        let t = PermutationTable::get(3).unwrap();
        let perms: Vec<Vec<u8>> = t.iter().map(|p| p.to_vec()).collect();
        assert_eq!(
            perms,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
        assert_eq!(PermutationTable::get(6).unwrap().count(), 720);
    }

    #[test]
    fn query_distances_reject_bad_input() {
        assert!(QueryDistances::new(ItemId(0), vec![(ItemId(1), f64::NAN)]).is_err());
        assert!(QueryDistances::new(ItemId(0), vec![(ItemId(1), 1.0), (ItemId(1), 2.0)]).is_err());
    }
}
