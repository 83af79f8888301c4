//! Monte Carlo mutual information between the embedding and a tuple's ranking.
//!
//! The estimate uses the symmetric form `H(R | r) − H(R | K, r)`: distances from
//! the head to each body item are sampled from `N(D̂, σ²)`, the ranking pmf is
//! evaluated for every sample, and the score is the entropy of the averaged pmf
//! minus the average of the per-sample entropies.
//!
//! Noise for a body item is drawn from a stream keyed by `(seed, item id)`, so
//! the estimate does not depend on the order of the body, and candidates that
//! share a seed share their noise for common items.
//!
//! Cost per candidate is `O(N_f · (k−1)! · k)`; the `(k−1)!` factor comes from
//! exact normalization of the tuple model.

use rand_distr::{Distribution, StandardNormal};

use crate::embedding::DistanceMatrix;
use crate::error::{Error, Result};
use crate::response::{entropy, pmf_from_squared, ModelParams, PermutationTable, QueryDistances};
use crate::seed;
use crate::types::ItemId;

/// Gaussian posterior over the head-to-body distances of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancePosterior {
    pub means: QueryDistances,
    pub sigma2: f64,
    pub n_samples: usize,
}

impl DistancePosterior {
    pub fn new(means: QueryDistances, sigma2: f64, n_samples: usize) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::domain(format!(
                "sigma2 must be finite and nonnegative, got {sigma2}"
            )));
        }
        if n_samples == 0 {
            return Err(Error::domain("at least one Monte Carlo sample is required"));
        }
        Ok(Self {
            means,
            sigma2,
            n_samples,
        })
    }

    /// Posterior for `head` and `body` read off an estimated distance matrix.
    pub fn from_distances(
        d_hat: &DistanceMatrix,
        head: ItemId,
        body: &[ItemId],
        sigma2: f64,
        n_samples: usize,
    ) -> Result<Self> {
        let n = d_hat.n();
        if let Some(bad) = std::iter::once(&head).chain(body).find(|id| id.0 >= n) {
            return Err(Error::domain(format!(
                "item {bad} out of range for {n} items"
            )));
        }
        let entries = body.iter().map(|&b| (b, d_hat.get(head.0, b.0))).collect();
        Self::new(QueryDistances::new(head, entries)?, sigma2, n_samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub body: Vec<ItemId>,
    /// Estimated mutual information in nats.
    pub info: f64,
}

/// Population variance over all `N²` entries, zero diagonal included.
pub fn embedding_variance(d_hat: &DistanceMatrix) -> f64 {
    let m = d_hat.as_matrix();
    let count = m.len() as f64;
    if count == 0.0 {
        return 0.0;
    }
    let mean = m.iter().sum::<f64>() / count;
    m.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / count
}

/// Monte Carlo sample count: `max(10, ⌈N/10⌉)`.
pub fn default_sample_count(n_items: usize) -> usize {
    n_items.div_ceil(10).max(10)
}

/// Standard normal draws for `item`, keyed by `(seed, item)`.
fn item_noise(seed: u64, item: ItemId, n: usize, out: &mut Vec<f64>) {
    let mut rng = seed::rng(seed, &[item.0 as u64]);
    out.clear();
    out.extend((0..n).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
}

/// `N_f` independent draws of every body distance from `N(mean, σ²)`.
pub fn sample_distances(post: &DistancePosterior, rng_seed: u64) -> Vec<QueryDistances> {
    let sigma = post.sigma2.sqrt();
    let mut noise = Vec::new();
    let columns: Vec<Vec<f64>> = post
        .means
        .entries()
        .iter()
        .map(|&(id, mean)| {
            item_noise(rng_seed, id, post.n_samples, &mut noise);
            noise.iter().map(|z| mean + sigma * z).collect()
        })
        .collect();
    (0..post.n_samples)
        .map(|s| {
            let entries = post
                .means
                .entries()
                .iter()
                .zip(&columns)
                .map(|(&(id, _), col)| (id, col[s]))
                .collect();
            QueryDistances::new(post.means.head, entries).expect("finite samples")
        })
        .collect()
}

/// Entropy in nats of the exact ranking distribution.
pub fn ranking_entropy(dq: &QueryDistances, params: ModelParams) -> Result<f64> {
    Ok(crate::response::ranking_pmf(dq, params)?.entropy())
}

/// Mutual information estimate for one candidate body.
pub fn mutual_information(
    post: &DistancePosterior,
    params: ModelParams,
    rng_seed: u64,
) -> Result<CandidateScore> {
    let body: Vec<ItemId> = post.means.body().collect();
    let m = body.len();
    let table = PermutationTable::get(m)?;
    if post.sigma2 == 0.0 || post.n_samples == 1 {
        // every sampled pmf is identical: the two entropy terms cancel
        return Ok(CandidateScore { body, info: 0.0 });
    }

    // canonical id order makes the estimate independent of body order
    let mut entries = post.means.entries().to_vec();
    entries.sort_by_key(|&(id, _)| id);

    let n_f = post.n_samples;
    let sigma = post.sigma2.sqrt();
    let mut noise = Vec::with_capacity(n_f);
    let mut samples = vec![0.0; m * n_f];
    for (j, &(id, mean)) in entries.iter().enumerate() {
        item_noise(rng_seed, id, n_f, &mut noise);
        for (s, z) in noise.iter().enumerate() {
            samples[s * m + j] = mean + sigma * z;
        }
    }

    let n_perm = table.count();
    let mut pair = vec![0.0; m * m];
    let mut pmf = vec![0.0; n_perm];
    let mut mean_pmf = vec![0.0; n_perm];
    let mut d2 = vec![0.0; m];
    let mut entropy_sum = 0.0;
    for sample in samples.chunks_exact(m) {
        for (t, d) in d2.iter_mut().zip(sample) {
            *t = d * d;
        }
        pmf_from_squared(&d2, params.mu(), table, &mut pair, &mut pmf);
        entropy_sum += entropy(&pmf);
        for (acc, p) in mean_pmf.iter_mut().zip(&pmf) {
            *acc += p;
        }
    }
    let inv = 1.0 / n_f as f64;
    mean_pmf.iter_mut().for_each(|p| *p *= inv);
    let info = entropy(&mean_pmf) - entropy_sum * inv;
    Ok(CandidateScore { body, info })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn information_is_bounded(
            means in prop::collection::vec(0.0f64..2.5, 2..=5),
            sigma2 in 0.0f64..2.0,
            mu in 0.05f64..1.0,
            n_f in 1usize..40,
            seed in any::<u64>(),
        ) {
            let entries = means.iter().enumerate().map(|(i, &d)| (ItemId(i + 1), d)).collect();
            let post = DistancePosterior::new(QueryDistances::new(ItemId(0), entries).unwrap(), sigma2, n_f).unwrap();
            let s = mutual_information(&post, ModelParams::new(mu).unwrap(), seed).unwrap();
            prop_assert!(s.info >= -1e-12);
            prop_assert!(s.info <= factorial(means.len()).ln() + 1e-9);
        }
    }
}
