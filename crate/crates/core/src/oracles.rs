//! Simulated oracles over a planted point cloud.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{ItemId, RankingResponse, ResponseSource, TupleQuery};

/// Planted coordinates, one column per item.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    coords: DMatrix<f64>,
}

impl GroundTruth {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("ground-truth coordinates must be finite"));
        }
        if coords.nrows() == 0 {
            return Err(Error::domain("ground truth needs at least one dimension"));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.coords.ncols()
    }

    #[inline]
    pub fn squared_distance(&self, a: ItemId, b: ItemId) -> f64 {
        let (ca, cb) = (self.coords.column(a.0), self.coords.column(b.0));
        ca.iter()
            .zip(cb.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }

    /// Root mean square distance over all unordered pairs.
    pub fn rms_pairwise_distance(&self) -> f64 {
        let n = self.n_items();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..n {
            for i in 0..j {
                total += self.squared_distance(ItemId(i), ItemId(j));
            }
        }
        (total / (n * (n - 1) / 2) as f64).sqrt()
    }

    /// Reads whitespace- or comma-separated coordinates, one item per line.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: e.to_string(),
                })?;
            if rows.first().is_some_and(|r| r.len() != row.len()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: "ragged coordinate rows".into(),
                });
            }
            rows.push(row);
        }
        let dim = rows.first().map_or(0, Vec::len);
        Self::new(DMatrix::from_fn(dim, rows.len(), |r, c| rows[c][r]))
    }
}

/// I.i.d. standard normal coordinates.
pub fn make_ground_truth(n_items: usize, dim: usize, seed: u64) -> Result<GroundTruth> {
    if dim == 0 {
        return Err(Error::domain("ground truth needs at least one dimension"));
    }
    let mut rng = seed::rng(seed, &[seed::tag::GROUND_TRUTH]);
    GroundTruth::new(DMatrix::from_fn(dim, n_items, |_, _| {
        StandardNormal.sample(&mut rng)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Deterministic,
    PlackettLuce,
    Gaussian,
}

/// Oracle configuration. Any kind can be wrapped with ranking inversion by
/// setting `invert_prob > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Regularizer of the Plackett-Luce scores `1 / (D² + pl_mu)`.
    #[serde(default = "default_pl_mu")]
    pub pl_mu: f64,
    /// Coordinate noise scale; defaults to 0.3 × RMS pairwise distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
    #[serde(default)]
    pub invert_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pl_mu() -> f64 {
    0.5
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Deterministic,
            pl_mu: default_pl_mu(),
            gaussian_sigma: None,
            invert_prob: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.invert_prob) {
            return Err(Error::Config(format!(
                "oracle.invert_prob must lie in [0, 1], got {}",
                self.invert_prob
            )));
        }
        if !(self.pl_mu.is_finite() && self.pl_mu > 0.0) {
            return Err(Error::Config(format!(
                "oracle.pl_mu must be positive, got {}",
                self.pl_mu
            )));
        }
        if let Some(s) = self.gaussian_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!(
                    "oracle.gaussian_sigma must be nonnegative, got {s}"
                )));
            }
        }
        Ok(())
    }

    /// Fills in the data-dependent Gaussian noise default.
    pub fn resolved(mut self, gt: &GroundTruth) -> Self {
        if self.gaussian_sigma.is_none() {
            self.gaussian_sigma = Some(0.3 * gt.rms_pairwise_distance());
        }
        self
    }
}

fn sort_by_distance(head: ItemId, body: &[ItemId], sq_dist: impl Fn(ItemId) -> f64) -> Vec<ItemId> {
    let mut keyed: Vec<(f64, ItemId)> = body.iter().map(|&b| (sq_dist(b), b)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    debug_assert!(keyed.iter().all(|(_, b)| *b != head));
    keyed.into_iter().map(|(_, b)| b).collect()
}

fn respond(q: &TupleQuery, ranking: Vec<ItemId>) -> RankingResponse {
    RankingResponse::new(q.clone(), ranking, 0.0, ResponseSource::Simulated)
        .expect("oracles return permutations of the body")
}

/// Body sorted by planted distance to the head; ties go to the lower id.
pub fn answer_deterministic(q: &TupleQuery, gt: &GroundTruth) -> RankingResponse {
    let ranking = sort_by_distance(q.head(), q.body(), |b| gt.squared_distance(q.head(), b));
    respond(q, ranking)
}

/// Sequential Plackett-Luce draws with scores `1 / (D² + pl_mu)`.
pub fn answer_plackett_luce(
    q: &TupleQuery,
    gt: &GroundTruth,
    cfg: &OracleConfig,
    rng: &mut impl Rng,
) -> RankingResponse {
    let mut remaining: Vec<(ItemId, f64)> = q
        .body()
        .iter()
        .map(|&b| (b, 1.0 / (gt.squared_distance(q.head(), b) + cfg.pl_mu)))
        .collect();
    let mut ranking = Vec::with_capacity(remaining.len());
    while remaining.len() > 1 {
        let total: f64 = remaining.iter().map(|(_, s)| s).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (i, (_, s)) in remaining.iter().enumerate() {
            if u < *s {
                pick = i;
                break;
            }
            u -= s;
        }
        ranking.push(remaining.remove(pick).0);
    }
    ranking.extend(remaining.into_iter().map(|(b, _)| b));
    respond(q, ranking)
}

/// Perturbs the head and body coordinates with fresh Gaussian noise, then sorts
/// by the perturbed distances.
pub fn answer_gaussian(
    q: &TupleQuery,
    gt: &GroundTruth,
    sigma: f64,
    rng: &mut impl Rng,
) -> RankingResponse {
    let dim = gt.dim();
    let mut noisy = |id: ItemId| -> Vec<f64> {
        gt.coords
            .column(id.0)
            .iter()
            .map(|&x| x + sigma * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    };
    let head = noisy(q.head());
    let body: Vec<(ItemId, Vec<f64>)> = q.body().iter().map(|&b| (b, noisy(b))).collect();
    let ranking = sort_by_distance(q.head(), q.body(), |b| {
        let p = &body.iter().find(|(id, _)| *id == b).unwrap().1;
        (0..dim).map(|r| (p[r] - head[r]).powi(2)).sum()
    });
    respond(q, ranking)
}

/// Reverses the whole ranking with probability `invert_prob`.
pub fn wrap_inversion(
    inner: RankingResponse,
    invert_prob: f64,
    rng: &mut impl Rng,
) -> RankingResponse {
    if invert_prob > 0.0 && rng.random::<f64>() < invert_prob {
        inner.reversed()
    } else {
        inner
    }
}

/// Anything that answers tuple queries.
pub trait Oracle {
    /// Answers `query`, the `index`-th query of the run.
    fn answer(&mut self, query: &TupleQuery, index: u64) -> Result<RankingResponse>;
}

/// A seeded simulated oracle. Each query draws from its own stream keyed by the
/// query index, so answers do not depend on what was asked before.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    gt: GroundTruth,
    cfg: OracleConfig,
}

impl SimulatedOracle {
    pub fn new(gt: GroundTruth, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.resolved(&gt);
        Ok(Self { gt, cfg })
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }
}

impl Oracle for SimulatedOracle {
    fn answer(&mut self, query: &TupleQuery, index: u64) -> Result<RankingResponse> {
        query
            .check_bounds(self.gt.n_items())
            .map_err(|e| Error::Oracle(e.to_string()))?;
        let mut rng = seed::rng(self.cfg.seed, &[seed::tag::ORACLE, index]);
        let inner = match self.cfg.kind {
            OracleKind::Deterministic => answer_deterministic(query, &self.gt),
            OracleKind::PlackettLuce => answer_plackett_luce(query, &self.gt, &self.cfg, &mut rng),
            OracleKind::Gaussian => answer_gaussian(
                query,
                &self.gt,
                self.cfg.gaussian_sigma.unwrap_or(0.0),
                &mut rng,
            ),
        };
        let mut response = wrap_inversion(inner, self.cfg.invert_prob, &mut rng);
        response.timestamp = index as f64;
        Ok(response)
    }
}
