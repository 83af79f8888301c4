//! Property checks with fixed tolerances, shared by the integration tests and
//! the acceptance report. Each returns a description of the first violation.

// `!(a <= b)` is deliberate: a NaN must fail the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use infotuple::embedding::{
    fit_triplets, loss_gradient, project_to_elliptope, MdsConfig, ProjectionMethod,
    SimilarityMatrix,
};
use infotuple::infogain::{mutual_information, DistancePosterior};
use infotuple::metrics::{
    coherence, holdout_accuracy, kendall_tau, mean_tau_vs_truth, normalized_query_count,
};
use infotuple::oracles::{
    answer_deterministic, answer_plackett_luce, make_ground_truth, wrap_inversion, GroundTruth,
    Oracle, OracleConfig, OracleKind, SimulatedOracle,
};
use infotuple::response::{ranking_pmf, triplet_prob, ModelParams, QueryDistances};
use infotuple::{ItemId, RankingResponse, ResponseLog, ResponseSource, Triplet, TupleQuery};
use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn query(distances: &[f64]) -> QueryDistances {
    let entries = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| (ItemId(i + 1), d))
        .collect();
    QueryDistances::new(ItemId(0), entries).unwrap()
}

fn ln_factorial(m: usize) -> f64 {
    (2..=m).map(|i| (i as f64).ln()).sum()
}

/// Full-rank unit-diagonal matrix from random unit vectors.
pub fn random_similarity(n: usize, rng: &mut ChaCha8Rng) -> SimilarityMatrix {
    let mut m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    let mut k = m.transpose() * m;
    k.fill_diagonal(1.0);
    SimilarityMatrix::new(k).unwrap()
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    (&a + a.transpose()) * 0.5
}

/// A response that simply keeps the body order; useful for arbitrary logs.
pub fn random_response(n: usize, k: usize, rng: &mut ChaCha8Rng) -> RankingResponse {
    let picks = index::sample(rng, n, k).into_vec();
    let body: Vec<ItemId> = picks[1..].iter().copied().map(ItemId).collect();
    let q = TupleQuery::new(ItemId(picks[0]), body.clone()).unwrap();
    RankingResponse::new(q, body, 0.0, ResponseSource::Simulated).unwrap()
}

/// Every triplet over the planted configuration, each oriented by the truth.
pub fn all_consistent_triplets(gt: &GroundTruth) -> Vec<Triplet> {
    let n = gt.n_items();
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            for c in b + 1..n {
                if a == b || a == c {
                    continue;
                }
                let q = TupleQuery::new(ItemId(a), vec![ItemId(b), ItemId(c)]).unwrap();
                out.extend(infotuple::constituent_triplets(&answer_deterministic(
                    &q, gt,
                )));
            }
        }
    }
    out
}

// ---- response model and information gain

pub fn pmf_matches_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for body in 2..=6 {
        for _ in 0..20 {
            let mu = rng.random_range(0.05..3.0);
            let d: Vec<f64> = (0..body).map(|_| rng.random_range(0.0..3.0)).collect();
            let pmf = ranking_pmf(&query(&d), ModelParams::new(mu).unwrap()).map_err(fail)?;
            let total: f64 = pmf.probs.iter().sum();
            ensure!(
                (total - 1.0).abs() <= 1e-12,
                "body {body}: pmf sums to {total}"
            );
            let d2: Vec<f64> = d.iter().map(|x| x * x).collect();
            let reference = super::brute_force_pmf(&d2, mu);
            ensure!(
                reference.len() == pmf.probs.len(),
                "body {body}: support size differs"
            );
            for (perm, p) in reference {
                let ranking: Vec<ItemId> = perm.iter().map(|&i| ItemId(i + 1)).collect();
                let got = pmf.prob_of(&ranking).ok_or("ranking missing from pmf")?;
                ensure!((got - p).abs() <= 1e-12, "body {body}: {got} vs {p}");
            }
        }
    }
    Ok(())
}

pub fn triplet_complement_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let params = ModelParams::new(rng.random_range(1e-3..10.0)).unwrap();
        let (d1, d2) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let sum = triplet_prob(d1, d2, params).map_err(fail)?
            + triplet_prob(d2, d1, params).map_err(fail)?;
        ensure!((sum - 1.0).abs() <= 1e-12, "p + p' = {sum} at ({d1}, {d2})");
    }
    Ok(())
}

pub fn mutual_information_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1_000 {
        let body = rng.random_range(2..=5);
        let d: Vec<f64> = (0..body).map(|_| rng.random_range(0.0..2.5)).collect();
        let post = DistancePosterior::new(
            query(&d),
            rng.random_range(0.0..1.0),
            rng.random_range(2..40),
        )
        .map_err(fail)?;
        let params = ModelParams::new(rng.random_range(0.05..2.0)).unwrap();
        let info = mutual_information(&post, params, i).map_err(fail)?.info;
        let upper = ln_factorial(body) + 1e-9;
        ensure!(
            info >= -1e-12 && info <= upper,
            "candidate {i}: {info} outside [0, {upper}]"
        );
    }
    Ok(())
}

pub fn mutual_information_zero_variance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..200 {
        let body = rng.random_range(2..=6);
        let d: Vec<f64> = (0..body).map(|_| rng.random_range(0.0..2.5)).collect();
        let post = DistancePosterior::new(query(&d), 0.0, 50).map_err(fail)?;
        let info = mutual_information(&post, ModelParams::default(), i)
            .map_err(fail)?
            .info;
        ensure!(info == 0.0, "candidate {i}: {info} at zero variance");
    }
    Ok(())
}

pub fn triplet_information_matches_quadrature() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..20u64 {
        let m1 = rng.random_range(0.2..2.0);
        let m2 = rng.random_range(0.2..2.0);
        let sigma2 = rng.random_range(0.02..0.6);
        let mu = rng.random_range(0.1..1.0);
        let expected = super::triplet_mi_quadrature(m1, m2, sigma2, mu, 80);
        let post = DistancePosterior::new(query(&[m1, m2]), sigma2, 10_000).map_err(fail)?;
        let got = mutual_information(&post, ModelParams::new(mu).unwrap(), instance)
            .map_err(fail)?
            .info;
        ensure!(
            (got - expected).abs() < 0.01,
            "instance {instance}: {got} vs {expected}"
        );
    }
    Ok(())
}

// ---- optimization

fn relative_error(fd: &[f64], analytic: &[f64]) -> f64 {
    let diff: f64 = fd
        .iter()
        .zip(analytic)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

pub fn gradient_matches_finite_differences() -> Check {
    let mu = 0.5;
    let params = ModelParams::new(mu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for instance in 0..50 {
        let (n, responses, entries) = if instance < 25 {
            (4, 1, 16)
        } else {
            (20, 50, 10)
        };
        let k = random_similarity(n, &mut rng);
        let log: ResponseLog = (0..responses)
            .map(|_| {
                let size = if responses == 1 {
                    3
                } else {
                    rng.random_range(3..=5)
                };
                random_response(n, size, &mut rng)
            })
            .collect();
        let triplets = log.triplets();
        let g = loss_gradient(&k, &log, params).map_err(fail)?;
        let cells: Vec<(usize, usize)> = if entries == n * n {
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
        } else {
            // entries touched by the log, so the gradient is not trivially zero
            (0..entries)
                .map(|e| {
                    let t = triplets[e * triplets.len() / entries];
                    match e % 3 {
                        0 => (t.head.0, t.closer.0),
                        1 => (t.farther.0, t.head.0),
                        _ => (t.head.0, t.head.0),
                    }
                })
                .collect()
        };
        let fd: Vec<f64> = cells
            .iter()
            .map(|&(i, j)| super::fd_entry(k.as_matrix(), &triplets, mu, i, j, 1e-5))
            .collect();
        let analytic: Vec<f64> = cells.iter().map(|&c| g[c]).collect();
        let err = relative_error(&fd, &analytic);
        ensure!(err < 1e-4, "instance {instance}: relative error {err:e}");
    }
    Ok(())
}

pub fn projection_matches_convex_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for method in [ProjectionMethod::Newton, ProjectionMethod::Dykstra] {
        let cfg = MdsConfig {
            projection: method,
            ..MdsConfig::default()
        };
        for n in 2..=4 {
            for _ in 0..15 {
                let g = random_symmetric(n, &mut rng);
                if g.symmetric_eigenvalues().min() >= 0.0 {
                    continue;
                }
                let p = project_to_elliptope(&g, &cfg).map_err(fail)?;
                ensure!(p.converged, "{method:?} n={n}: did not converge");
                let dist = (p.matrix.as_matrix() - super::projection_oracle(&g)).norm();
                ensure!(dist < 1e-6, "{method:?} n={n}: Frobenius distance {dist:e}");
                checked += 1;
            }
        }
    }
    ensure!(checked >= 40, "only {checked} non-trivial instances");
    Ok(())
}

pub fn projection_is_idempotent() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for method in [ProjectionMethod::Newton, ProjectionMethod::Dykstra] {
        let cfg = MdsConfig {
            projection: method,
            ..MdsConfig::default()
        };
        for n in [3, 8, 30] {
            let g = random_symmetric(n, &mut rng) * 2.0;
            let once = project_to_elliptope(&g, &cfg).map_err(fail)?.matrix;
            let twice = project_to_elliptope(once.as_matrix(), &cfg)
                .map_err(fail)?
                .matrix;
            let gap = (once.as_matrix() - twice.as_matrix()).amax();
            ensure!(gap < 1e-9, "{method:?} n={n}: moved by {gap:e}");
            SimilarityMatrix::new(once.into_matrix()).map_err(fail)?;
        }
    }
    Ok(())
}

pub fn planted_configuration_is_recovered() -> Check {
    let gt = make_ground_truth(20, 2, 9).map_err(fail)?;
    let triplets = all_consistent_triplets(&gt);
    ensure!(triplets.len() == 20 * 171, "{} triplets", triplets.len());
    let fit = fit_triplets(&triplets, 20, &MdsConfig::default(), None).map_err(fail)?;
    let tau = mean_tau_vs_truth(&fit.similarity, &gt).map_err(fail)?;
    ensure!(tau >= 0.8, "mean tau {tau}");
    Ok(())
}

// ---- metrics

pub fn kendall_tau_matches_pair_counting() -> Check {
    for n in 2..=6 {
        let ids: Vec<ItemId> = (0..n).map(ItemId).collect();
        let perms = super::permutations(n);
        for p in &perms {
            let r1: Vec<ItemId> = p.iter().map(|&i| ids[i]).collect();
            for q in &perms {
                let r2: Vec<ItemId> = q.iter().map(|&i| ids[i]).collect();
                let pos = |r: &[ItemId], x: ItemId| r.iter().position(|&y| y == x).unwrap();
                let (mut concordant, mut discordant) = (0i64, 0i64);
                for a in 0..n {
                    for b in a + 1..n {
                        let s1 = pos(&r1, ids[a]) < pos(&r1, ids[b]);
                        let s2 = pos(&r2, ids[a]) < pos(&r2, ids[b]);
                        if s1 == s2 {
                            concordant += 1;
                        } else {
                            discordant += 1;
                        }
                    }
                }
                let expected = (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64;
                let got = kendall_tau(&r1, &r2).map_err(fail)?;
                ensure!(got == expected, "n={n} {p:?} vs {q:?}: {got} vs {expected}");
            }
        }
    }
    Ok(())
}

fn log_of(tuple_size: usize, count: usize) -> ResponseLog {
    let mut rng = ChaCha8Rng::seed_from_u64(tuple_size as u64);
    (0..count)
        .map(|_| random_response(12, tuple_size, &mut rng))
        .collect()
}

pub fn normalized_counts() -> Check {
    let triplets = normalized_query_count(&log_of(3, 10));
    ensure!(triplets == 10, "10 triplets count as {triplets}");
    let fives = normalized_query_count(&log_of(5, 10));
    ensure!(fives == 30, "10 five-tuples count as {fives}");
    Ok(())
}

/// Points along a short arc of the unit circle, where chord distance grows
/// with angular separation, and the unit-diagonal embedding they induce.
fn arc(n: usize) -> (GroundTruth, SimilarityMatrix) {
    let coords = DMatrix::from_fn(2, n, |r, j| {
        let angle = j as f64 * 0.3 + (j * j) as f64 * 0.01;
        if r == 0 {
            angle.cos()
        } else {
            angle.sin()
        }
    });
    let k = SimilarityMatrix::from_coordinates(&coords).unwrap();
    (GroundTruth::new(coords).unwrap(), k)
}

pub fn holdout_and_coherence_extremes() -> Check {
    let (gt, k) = arc(8);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut agreeing = Vec::new();
    let mut responses = Vec::new();
    while agreeing.len() < 50 {
        let q = random_response(8, 4, &mut rng).query().clone();
        let r = answer_deterministic(&q, &gt);
        // skip near-equidistant pairs, where the order is a rounding accident
        let d = |b| gt.squared_distance(r.head(), b);
        if r.ranking().windows(2).any(|w| d(w[1]) - d(w[0]) < 1e-6) {
            continue;
        }
        agreeing.extend(infotuple::constituent_triplets(&r));
        responses.push(r);
    }
    let flipped: Vec<Triplet> = agreeing.iter().map(|t| t.reversed()).collect();
    let reversed: Vec<RankingResponse> = responses.iter().map(|r| r.reversed()).collect();
    let checks = [
        (
            "holdout accuracy, agreeing",
            holdout_accuracy(&k, &agreeing).map_err(fail)?,
            1.0,
        ),
        (
            "holdout accuracy, flipped",
            holdout_accuracy(&k, &flipped).map_err(fail)?,
            0.0,
        ),
        (
            "coherence, consistent",
            coherence(&k, &responses).map_err(fail)?,
            1.0,
        ),
        (
            "coherence, reversed",
            coherence(&k, &reversed).map_err(fail)?,
            -1.0,
        ),
    ];
    for (name, got, want) in checks {
        ensure!((got - want).abs() < 1e-12, "{name}: {got}, expected {want}");
    }
    Ok(())
}

// ---- simulated oracles

fn within_binomial(hits: usize, draws: usize, p: f64, sigmas: f64) -> Result<f64, String> {
    let rate = hits as f64 / draws as f64;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    ensure!(
        (rate - p).abs() <= sigmas * sigma,
        "rate {rate} vs {p} (σ = {sigma:.2e})"
    );
    Ok(rate)
}

pub fn plackett_luce_three_to_one() -> Check {
    // scores 1 / (D² + μ) with μ = 0.5: item 1 at D² = 0.5 scores 1, item 2
    // at D² = 2.5 scores 1/3
    let coords = DMatrix::from_row_slice(1, 3, &[0.0, 0.5f64.sqrt(), 2.5f64.sqrt()]);
    let gt = GroundTruth::new(coords).map_err(fail)?;
    let cfg = OracleConfig {
        kind: OracleKind::PlackettLuce,
        pl_mu: 0.5,
        ..OracleConfig::default()
    };
    let q = TupleQuery::new(ItemId(0), vec![ItemId(1), ItemId(2)]).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 100_000;
    let hits = (0..draws)
        .filter(|_| answer_plackett_luce(&q, &gt, &cfg, &mut rng).ranking()[0] == ItemId(1))
        .count();
    within_binomial(hits, draws, 0.75, 3.0).map(|_| ())
}

pub fn inversion_frequency() -> Check {
    let gt = make_ground_truth(10, 2, 3).map_err(fail)?;
    let q = TupleQuery::new(ItemId(0), vec![ItemId(1), ItemId(2), ItemId(3)]).map_err(fail)?;
    let base = answer_deterministic(&q, &gt);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let draws = 100_000;
    let hits = (0..draws)
        .filter(|_| wrap_inversion(base.clone(), 1.0 / 3.0, &mut rng).ranking() != base.ranking())
        .count();
    within_binomial(hits, draws, 1.0 / 3.0, 3.0).map(|_| ())
}

pub fn deterministic_oracle_is_idempotent() -> Check {
    let gt = make_ground_truth(30, 3, 4).map_err(fail)?;
    let mut oracle = SimulatedOracle::new(gt.clone(), OracleConfig::default()).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..500 {
        let size = rng.random_range(3..=8);
        let q = random_response(30, size, &mut rng).query().clone();
        let first = answer_deterministic(&q, &gt);
        ensure!(
            first == answer_deterministic(&q, &gt),
            "query {i}: answers differ"
        );
        let via_oracle = [
            oracle.answer(&q, i).map_err(fail)?,
            oracle.answer(&q, i + 1).map_err(fail)?,
        ];
        ensure!(
            via_oracle.iter().all(|r| r.ranking() == first.ranking()),
            "query {i}: simulated oracle disagrees with itself"
        );
    }
    Ok(())
}
