//! Query selection: random burn-in, then rounds that pose one tuple per head,
//! chosen either by maximal mutual information over a sampled candidate pool or
//! uniformly at random.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    distances_from_similarity, fit_mds, DistanceMatrix, MdsConfig, MdsFit, SimilarityMatrix,
};
use crate::error::{Error, Result};
use crate::infogain::{
    default_sample_count, embedding_variance, mutual_information, CandidateScore, DistancePosterior,
};
use crate::metrics::{
    coherence, holdout_accuracy, mean_tau_vs_truth, normalized_query_count, MetricSample,
};
use crate::oracles::{GroundTruth, Oracle};
use crate::response::{ModelParams, MAX_ENUMERABLE};
use crate::seed::{self, tag};
use crate::types::{ItemId, RankingResponse, ResponseLog, Triplet, TupleQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    InfoTuple,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub tuple_size: usize,
    /// Random triplets posed per head before adaptive rounds start.
    pub burn_in: usize,
    /// Number of adaptive rounds.
    pub horizon: usize,
    /// Candidate bodies scored per head; defaults to `⌈10·√N⌉`.
    pub candidates_per_head: Option<usize>,
    /// Monte Carlo samples per candidate; defaults to `max(10, ⌈N/10⌉)`.
    pub n_f: Option<usize>,
    pub mu: f64,
    pub mds: MdsConfig,
    /// Iteration cap for the warm-started refit after each round.
    pub refit_max_iters: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tuple_size: 3,
            burn_in: 5,
            horizon: 20,
            candidates_per_head: None,
            n_f: None,
            mu: ModelParams::default().mu(),
            mds: MdsConfig::default(),
            refit_max_iters: 200,
            strategy: Strategy::InfoTuple,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    /// Validates against a catalog of `n_items` and fills in defaults.
    pub fn plan(&self, n_items: usize) -> Result<SelectionPlan> {
        let k = self.tuple_size;
        if k < 3 {
            return Err(Error::Config(format!(
                "tuple_size must be at least 3, got {k}"
            )));
        }
        if n_items < 3 {
            return Err(Error::Config(format!(
                "at least 3 items are required, got {n_items}"
            )));
        }
        if k > n_items {
            return Err(Error::Config(format!(
                "tuple_size {k} needs a body of {} items but only {} non-head items exist",
                k - 1,
                n_items - 1
            )));
        }
        if self.strategy == Strategy::InfoTuple && k - 1 > MAX_ENUMERABLE {
            return Err(Error::Config(format!(
                "tuple_size {k} exceeds the scoring limit of {}",
                MAX_ENUMERABLE + 1
            )));
        }
        if self.candidates_per_head == Some(0) {
            return Err(Error::Config(
                "candidates_per_head must be at least 1".into(),
            ));
        }
        if self.n_f == Some(0) {
            return Err(Error::Config("n_f must be at least 1".into()));
        }
        if self.refit_max_iters == 0 {
            return Err(Error::Config("refit_max_iters must be positive".into()));
        }
        let params = ModelParams::new(self.mu).map_err(|e| Error::Config(e.to_string()))?;
        let mut mds = self.mds;
        mds.params = params;
        mds.seed = seed::derive(self.seed, &[tag::INIT, self.mds.seed]);
        mds.validate()?;
        Ok(SelectionPlan {
            n_items,
            tuple_size: k,
            burn_in: self.burn_in,
            horizon: self.horizon,
            candidates: self
                .candidates_per_head
                .unwrap_or_else(|| (10.0 * (n_items as f64).sqrt()).ceil() as usize),
            n_f: self.n_f.unwrap_or_else(|| default_sample_count(n_items)),
            params,
            mds,
            refit_max_iters: self.refit_max_iters,
            strategy: self.strategy,
            seed: self.seed,
        })
    }
}

/// A [`SelectionConfig`] validated for a catalog size, defaults resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub n_items: usize,
    pub tuple_size: usize,
    pub burn_in: usize,
    pub horizon: usize,
    pub candidates: usize,
    pub n_f: usize,
    pub params: ModelParams,
    pub mds: MdsConfig,
    pub refit_max_iters: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

/// The current embedding with the quantities selection reads from it.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub similarity: SimilarityMatrix,
    pub distances: DistanceMatrix,
    pub sigma2: f64,
    pub loss: f64,
    pub iterations: usize,
}

impl EmbeddingState {
    pub fn new(similarity: SimilarityMatrix, loss: f64, iterations: usize) -> Self {
        let distances = distances_from_similarity(&similarity);
        let sigma2 = embedding_variance(&distances);
        Self {
            similarity,
            distances,
            sigma2,
            loss,
            iterations,
        }
    }

    pub fn from_fit(fit: MdsFit) -> Self {
        let loss = fit.final_loss();
        Self::new(fit.similarity, loss, fit.iterations)
    }
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    /// One entry per head, in head order.
    pub choices: Vec<(TupleQuery, CandidateScore)>,
    pub loss: f64,
    pub selection_ms: f64,
    pub refit_ms: f64,
}

pub const ROUNDS_CSV_HEADER: &str = "round,head,body,info,loss";

/// Wall-clock timings live apart from the round rows so that those stay
/// reproducible.
pub const TIMING_CSV_HEADER: &str = "round,selection_ms,refit_ms";

impl RoundReport {
    /// CSV rows, one per head; body ids are space separated.
    pub fn csv_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.choices.iter().map(move |(q, score)| {
            let body: Vec<String> = q.body().iter().map(|b| b.to_string()).collect();
            format!(
                "{},{},{},{},{}",
                self.round,
                q.head(),
                body.join(" "),
                score.info,
                self.loss
            )
        })
    }

    pub fn timing_row(&self) -> String {
        format!(
            "{},{:.3},{:.3}",
            self.round, self.selection_ms, self.refit_ms
        )
    }
}

/// `T₀` random triplets per head, in passes over all heads.
pub fn burn_in_queries(n_items: usize, burn_in: usize, rng_seed: u64) -> Result<Vec<TupleQuery>> {
    if burn_in == 0 {
        return Ok(Vec::new());
    }
    if n_items < 3 {
        return Err(Error::domain(format!(
            "burn-in triplets need at least 3 items, got {n_items}"
        )));
    }
    let mut rng = seed::rng(rng_seed, &[tag::BURN_IN]);
    let mut out = Vec::with_capacity(n_items * burn_in);
    for _ in 0..burn_in {
        for a in 0..n_items {
            out.push(TupleQuery::new(
                ItemId(a),
                sample_body(a, n_items, 2, &mut rng),
            )?);
        }
    }
    Ok(out)
}

/// `size` distinct items other than `head`, in sampled order.
fn sample_body(head: usize, n_items: usize, size: usize, rng: &mut impl Rng) -> Vec<ItemId> {
    index::sample(rng, n_items - 1, size)
        .into_iter()
        .map(|i| ItemId(if i >= head { i + 1 } else { i }))
        .collect()
}

/// `C(n, r)`, saturating.
fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// All `size`-subsets of `items` in lexicographic order.
fn all_subsets(items: &[ItemId], size: usize) -> Vec<Vec<ItemId>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    let n = items.len();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(pos) = (0..size).rev().find(|&p| idx[p] < n - size + p) else {
            return out;
        };
        idx[pos] += 1;
        for p in pos + 1..size {
            idx[p] = idx[p - 1] + 1;
        }
    }
}

/// Up to `m` distinct bodies of `body_size` items excluding `head`, each sorted
/// by id. When `m` reaches the number of distinct bodies, all are returned in
/// lexicographic order.
pub fn propose_candidates(
    head: ItemId,
    n_items: usize,
    body_size: usize,
    m: usize,
    rng_seed: u64,
) -> Result<Vec<Vec<ItemId>>> {
    if m == 0 {
        return Err(Error::domain("at least one candidate must be requested"));
    }
    if head.0 >= n_items || body_size == 0 || body_size > n_items - 1 {
        return Err(Error::domain(format!(
            "cannot form a body of {body_size} around head {head} among {n_items} items"
        )));
    }
    let others: Vec<ItemId> = (0..n_items).filter(|&i| i != head.0).map(ItemId).collect();
    let total = binomial(others.len(), body_size);
    if m as u128 >= total {
        return Ok(all_subsets(&others, body_size));
    }
    let mut rng = seed::rng(rng_seed, &[]);
    if total <= 4 * m as u128 {
        // dense request: subsample the enumeration instead of rejecting
        let all = all_subsets(&others, body_size);
        return Ok(index::sample(&mut rng, all.len(), m)
            .into_iter()
            .map(|i| all[i].clone())
            .collect());
    }
    let mut seen = HashSet::with_capacity(m);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let mut body = sample_body(head.0, n_items, body_size, &mut rng);
        body.sort_unstable();
        if seen.insert(body.clone()) {
            out.push(body);
        }
    }
    Ok(out)
}

/// Mutual information of every candidate body, sharing one noise seed.
pub fn score_candidates(
    head: ItemId,
    bodies: &[Vec<ItemId>],
    state: &EmbeddingState,
    plan: &SelectionPlan,
    score_seed: u64,
) -> Result<Vec<CandidateScore>> {
    bodies
        .iter()
        .map(|body| {
            let post = DistancePosterior::from_distances(
                &state.distances,
                head,
                body,
                state.sigma2,
                plan.n_f,
            )?;
            let mut score = mutual_information(&post, plan.params, score_seed)?;
            score.body = body.clone();
            Ok(score)
        })
        .collect()
}

/// Highest score; equal scores go to the lexicographically least body.
pub fn argmax_score(scores: Vec<CandidateScore>) -> Option<CandidateScore> {
    scores.into_iter().reduce(|best, s| {
        if s.info > best.info || (s.info == best.info && s.body < best.body) {
            s
        } else {
            best
        }
    })
}

/// Chooses the query for `head` in `round`.
pub fn select_query(
    head: ItemId,
    state: &EmbeddingState,
    plan: &SelectionPlan,
    round: usize,
) -> Result<(TupleQuery, CandidateScore)> {
    let key = [round as u64, head.0 as u64];
    let body_size = plan.tuple_size - 1;
    let best = match plan.strategy {
        Strategy::Random => {
            let seed = seed::derive(plan.seed, &[tag::RANDOM_PICK, key[0], key[1]]);
            let body = propose_candidates(head, plan.n_items, body_size, 1, seed)?.swap_remove(0);
            CandidateScore { body, info: 0.0 }
        }
        Strategy::InfoTuple => {
            let propose_seed = seed::derive(plan.seed, &[tag::PROPOSE, key[0], key[1]]);
            let score_seed = seed::derive(plan.seed, &[tag::SCORE, key[0], key[1]]);
            let bodies =
                propose_candidates(head, plan.n_items, body_size, plan.candidates, propose_seed)?;
            let scores = score_candidates(head, &bodies, state, plan, score_seed)?;
            argmax_score(scores).expect("at least one candidate")
        }
    };
    Ok((TupleQuery::new(head, best.body.clone())?, best))
}

/// What to measure during a run and how often.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsPlan<'a> {
    /// Sample after the burn-in fit, every `every` rounds, and after the last
    /// round. Zero samples only the burn-in fit and the final round.
    pub every: usize,
    pub ground_truth: Option<&'a GroundTruth>,
    pub holdout: Option<&'a [Triplet]>,
    /// Also report coherence against every response collected so far.
    pub coherence: bool,
}

impl MetricsPlan<'_> {
    fn due(&self, round: usize, horizon: usize) -> bool {
        round == 0 || round == horizon || (self.every > 0 && round.is_multiple_of(self.every))
    }

    pub fn sample(
        &self,
        round: usize,
        state: &EmbeddingState,
        log: &ResponseLog,
    ) -> Result<MetricSample> {
        Ok(MetricSample {
            round,
            normalized_query_count: normalized_query_count(log),
            mean_tau: self
                .ground_truth
                .map(|gt| mean_tau_vs_truth(&state.similarity, gt))
                .transpose()?,
            holdout_accuracy: match self.holdout {
                Some(h) if !h.is_empty() => Some(holdout_accuracy(&state.similarity, h)?),
                _ => None,
            },
            coherence: if self.coherence && !log.is_empty() {
                Some(coherence(&state.similarity, log.as_slice())?)
            } else {
                None
            },
            cumulative_label_seconds: None,
        })
    }
}

/// Receives progress as a run advances, e.g. to stream outputs to disk.
pub trait RunObserver {
    fn on_response(&mut self, _response: &RankingResponse) -> Result<()> {
        Ok(())
    }
    fn on_round(&mut self, _report: &RoundReport) -> Result<()> {
        Ok(())
    }
    fn on_metric(&mut self, _sample: &MetricSample) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: EmbeddingState,
    pub log: ResponseLog,
    pub reports: Vec<RoundReport>,
    pub metrics: Vec<MetricSample>,
}

fn ask(
    oracle: &mut dyn Oracle,
    query: &TupleQuery,
    log: &mut ResponseLog,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    let response = oracle.answer(query, log.len() as u64)?;
    if response.query().canonical() != query.canonical() {
        return Err(Error::Oracle(format!(
            "oracle answered a different query for head {}",
            query.head()
        )));
    }
    observer.on_response(&response)?;
    log.push(response);
    Ok(())
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Burn-in, initial fit, then `horizon` rounds of one query per head followed by
/// a warm-started refit. Oracle query indices count up from 0 in posing order.
pub fn run_experiment(
    n_items: usize,
    oracle: &mut dyn Oracle,
    cfg: &SelectionConfig,
    metrics: &MetricsPlan<'_>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    let plan = cfg.plan(n_items)?;
    let mut log = ResponseLog::new();
    for q in burn_in_queries(n_items, plan.burn_in, plan.seed)? {
        ask(oracle, &q, &mut log, observer)?;
    }
    let mut state = EmbeddingState::from_fit(fit_mds(&log, n_items, &plan.mds, None)?);
    let mut samples = Vec::new();
    let mut record =
        |round: usize, state: &EmbeddingState, log: &ResponseLog, obs: &mut dyn RunObserver| {
            if metrics.due(round, plan.horizon) {
                let s = metrics.sample(round, state, log)?;
                obs.on_metric(&s)?;
                samples.push(s);
            }
            Ok::<_, Error>(())
        };
    record(0, &state, &log, observer)?;

    let refit_cfg = MdsConfig {
        max_iters: plan.refit_max_iters,
        ..plan.mds
    };
    let mut reports = Vec::with_capacity(plan.horizon);
    for round in 1..=plan.horizon {
        let started = Instant::now();
        let choices = (0..n_items)
            .map(|a| select_query(ItemId(a), &state, &plan, round))
            .collect::<Result<Vec<_>>>()?;
        let selection_ms = millis(started);
        for (q, _) in &choices {
            ask(oracle, q, &mut log, observer)?;
        }
        let started = Instant::now();
        state =
            EmbeddingState::from_fit(fit_mds(&log, n_items, &refit_cfg, Some(&state.similarity))?);
        let report = RoundReport {
            round,
            choices,
            loss: state.loss,
            selection_ms,
            refit_ms: millis(started),
        };
        observer.on_round(&report)?;
        reports.push(report);
        record(round, &state, &log, observer)?;
    }
    Ok(RunOutcome {
        state,
        log,
        reports,
        metrics: samples,
    })
}
