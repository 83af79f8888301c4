//! Labeling sessions as a synchronous state machine.
//!
//! Queries are issued in batches of `batch_size`: the first `batch_size − 1`
//! are fresh and the last repeats one of them with the body reshuffled. A batch
//! whose repeat is answered differently from the original is discarded: its
//! responses never reach the fit, and every head it covered is queued again
//! with a fresh candidate pool. Responses enter the fit only once their batch
//! has passed its check, and the embedding is refit after every `N` newly
//! validated responses.
//!
//! Fitting and selection are handed out as [`Job`]s so that the caller can run
//! them off the request path; results come back through [`SessionCore::apply`].

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use infotuple::embedding::{
    fit_triplets, random_initialization, read_snapshot, recover_coordinates, write_snapshot,
    EmbeddingCoordinates, MdsConfig, Snapshot,
};
use infotuple::metrics::{coherence, holdout_accuracy, normalized_query_count, MetricSample};
use infotuple::seed;
use infotuple::selection::{
    burn_in_queries, propose_candidates, select_query, EmbeddingState, SelectionConfig,
    SelectionPlan,
};
use infotuple::types::check_permutation;
use infotuple::{
    ItemCatalog, ItemId, RankingResponse, ResponseLog, ResponseSource, Triplet, TupleQuery,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::journal::{Journal, Record, Task, JOURNAL_VERSION, SNAPSHOT_FILE};
use crate::ServiceError;

pub const DEFAULT_BATCH_SIZE: usize = 25;

// stream tags, disjoint from the library's
const TAG_PRESENT: u64 = 101;
const TAG_REPEAT: u64 = 102;
const TAG_REISSUE: u64 = 103;

/// Catalog data shared by every session over it.
#[derive(Debug)]
pub struct CatalogData {
    pub id: String,
    pub catalog: ItemCatalog,
    pub preload: Vec<Triplet>,
    pub holdout: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issued {
    pub query_id: String,
    pub seq: u64,
    pub query: TupleQuery,
    pub presented: Vec<ItemId>,
    pub batch: usize,
    pub position: usize,
    #[serde(skip)]
    pub repeat_of: Option<String>,
    #[serde(skip)]
    pub task: Option<Task>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Its batch has not been checked yet.
    Pending,
    Valid,
    Excluded,
}

#[derive(Debug, Clone)]
pub struct Answer {
    pub query_id: String,
    pub response: RankingResponse,
    pub elapsed_seconds: f64,
    pub batch: usize,
    pub repeat: bool,
    pub status: Status,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidityStats {
    pub batches_completed: usize,
    pub batches_valid: usize,
    pub batches_invalid: usize,
    pub responses_valid: usize,
    pub responses_excluded: usize,
    pub responses_pending: usize,
    pub queries_reissued: usize,
}

#[derive(Debug, Clone, Default)]
struct Batch {
    index: usize,
    /// Fresh query ids in issue order.
    fresh: Vec<String>,
    repeat_issued: bool,
}

/// An embedding published for readers, with its coordinates precomputed.
#[derive(Debug)]
pub struct Published {
    pub state: EmbeddingState,
    pub coords: Option<EmbeddingCoordinates>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmitAck {
    pub query_id: String,
    pub batch: usize,
    pub position: usize,
    /// Set when this response completed its batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_valid: Option<bool>,
}

pub enum Next {
    Query(Issued),
    /// Background selection has not caught up yet.
    Wait,
    Exhausted,
}

/// Background work handed out by [`SessionCore::next_job`].
pub enum Job {
    Init {
        triplets: Vec<Triplet>,
        n_items: usize,
        mds: MdsConfig,
        dim: usize,
    },
    Refit(Box<RefitJob>),
    Select {
        task: Task,
        plan: SelectionPlan,
        state: Arc<Published>,
    },
}

pub struct RefitJob {
    triplets: Vec<Triplet>,
    log: ResponseLog,
    label_seconds: f64,
    valid: usize,
    round: usize,
    warm: Option<Arc<Published>>,
    mds: MdsConfig,
    n_items: usize,
    dim: usize,
    holdout: Vec<Triplet>,
    snapshot: Option<PathBuf>,
}

pub enum JobOutput {
    Init(Published),
    Refit {
        published: Published,
        valid: usize,
        metric: MetricSample,
    },
    Selected {
        task: Task,
        query: TupleQuery,
    },
    Failed(String),
}

fn publish(state: EmbeddingState, dim: usize) -> Published {
    let dim = dim.min(state.similarity.n());
    let coords = recover_coordinates(&state.similarity, dim).ok();
    Published { state, coords }
}

impl Job {
    pub fn run(self) -> JobOutput {
        match self.execute() {
            Ok(out) => out,
            Err(e) => JobOutput::Failed(e.to_string()),
        }
    }

    fn execute(self) -> Result<JobOutput, ServiceError> {
        Ok(match self {
            Job::Init {
                triplets,
                n_items,
                mds,
                dim,
            } => {
                let state = if triplets.is_empty() {
                    EmbeddingState::new(random_initialization(n_items, mds.seed), 0.0, 0)
                } else {
                    EmbeddingState::from_fit(fit_triplets(&triplets, n_items, &mds, None)?)
                };
                JobOutput::Init(publish(state, dim))
            }
            Job::Refit(job) => {
                let warm = job.warm.as_ref().map(|p| &p.state.similarity);
                let state = EmbeddingState::from_fit(fit_triplets(
                    &job.triplets,
                    job.n_items,
                    &job.mds,
                    warm,
                )?);
                let metric = MetricSample {
                    round: job.round,
                    normalized_query_count: normalized_query_count(&job.log),
                    mean_tau: None,
                    holdout_accuracy: if job.holdout.is_empty() {
                        None
                    } else {
                        Some(holdout_accuracy(&state.similarity, &job.holdout)?)
                    },
                    coherence: if job.log.is_empty() {
                        None
                    } else {
                        Some(coherence(&state.similarity, job.log.as_slice())?)
                    },
                    cumulative_label_seconds: Some(job.label_seconds),
                };
                if let Some(path) = &job.snapshot {
                    write_snapshot_file(path, &state)?;
                }
                JobOutput::Refit {
                    published: publish(state, job.dim),
                    valid: job.valid,
                    metric,
                }
            }
            Job::Select { task, plan, state } => {
                let Task::Select {
                    round,
                    head,
                    attempt,
                } = task
                else {
                    unreachable!("only selection tasks are scheduled as jobs")
                };
                let plan = if attempt == 0 {
                    plan
                } else {
                    SelectionPlan {
                        seed: seed::derive(plan.seed, &[TAG_REISSUE, attempt as u64]),
                        ..plan
                    }
                };
                let (query, _) = select_query(head, &state.state, &plan, round)?;
                JobOutput::Selected { task, query }
            }
        })
    }
}

fn write_snapshot_file(path: &Path, state: &EmbeddingState) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    write_snapshot(
        &mut w,
        &Snapshot {
            similarity: state.similarity.clone(),
            iterations: state.iterations,
            loss: state.loss,
        },
    )?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub struct SessionCore {
    pub id: String,
    pub catalog: Arc<CatalogData>,
    pub config: SelectionConfig,
    pub batch_size: usize,
    plan: SelectionPlan,
    prefetch: usize,
    dim: usize,
    dir: Option<PathBuf>,
    journal: Option<Journal>,

    tasks: VecDeque<Task>,
    round: usize,
    prepared: HashMap<Task, TupleQuery>,
    next_seq: u64,
    issued: HashMap<String, Issued>,
    outstanding: Option<String>,
    batch: Batch,

    answers: Vec<Answer>,
    answered: HashMap<String, usize>,
    stats: ValidityStats,

    published: Option<Arc<Published>>,
    fitted_valid: usize,
    fits: usize,
    metrics: Vec<MetricSample>,
    busy: bool,
    pub worker_active: bool,
    last_error: Option<String>,
}

impl SessionCore {
    /// A fresh session. The burn-in schedule is skipped when the catalog
    /// preloads triplets.
    pub fn new(
        id: String,
        catalog: Arc<CatalogData>,
        config: SelectionConfig,
        batch_size: usize,
        prefetch: usize,
        dim: usize,
    ) -> Result<Self, ServiceError> {
        let n = catalog.catalog.len();
        let plan = config
            .plan(n)
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        if batch_size < 2 {
            return Err(ServiceError::Validation(format!(
                "batch_size must be at least 2 to hold a repeat, got {batch_size}"
            )));
        }
        let tasks = if catalog.preload.is_empty() {
            burn_in_queries(n, plan.burn_in, plan.seed)?
                .into_iter()
                .map(|query| Task::BurnIn { query })
                .collect()
        } else {
            VecDeque::new()
        };
        Ok(Self {
            id,
            catalog,
            config,
            batch_size,
            plan,
            prefetch: prefetch.max(1),
            dim,
            dir: None,
            journal: None,
            tasks,
            round: 0,
            prepared: HashMap::new(),
            next_seq: 0,
            issued: HashMap::new(),
            outstanding: None,
            batch: Batch::default(),
            answers: Vec::new(),
            answered: HashMap::new(),
            stats: ValidityStats::default(),
            published: None,
            fitted_valid: 0,
            fits: 0,
            metrics: Vec::new(),
            busy: false,
            worker_active: false,
            last_error: None,
        })
    }

    /// Starts journaling into `dir`, writing the creation record first.
    pub fn create_journal(&mut self, dir: &Path) -> Result<(), ServiceError> {
        let mut journal = Journal::open(dir)?;
        journal.append(&Record::Created {
            v: JOURNAL_VERSION,
            session_id: self.id.clone(),
            catalog_id: self.catalog.id.clone(),
            batch_size: self.batch_size,
            config: self.config.clone(),
        })?;
        self.journal = Some(journal);
        self.dir = Some(dir.to_path_buf());
        Ok(())
    }

    /// Rebuilds a session from its journal records. The latest embedding
    /// snapshot in `dir`, if any, is published as the current state.
    pub fn replay(
        records: &[Record],
        catalog: Arc<CatalogData>,
        prefetch: usize,
        dim: usize,
        dir: Option<&Path>,
    ) -> Result<Self, ServiceError> {
        let bad = |msg: String| ServiceError::Journal(msg);
        let Some(Record::Created {
            session_id,
            catalog_id,
            batch_size,
            config,
            ..
        }) = records.first()
        else {
            return Err(bad("journal does not start with a created record".into()));
        };
        if *catalog_id != catalog.id {
            return Err(bad(format!(
                "journal is for catalog {catalog_id}, not {}",
                catalog.id
            )));
        }
        let mut core = Self::new(
            session_id.clone(),
            catalog,
            config.clone(),
            *batch_size,
            prefetch,
            dim,
        )?;
        for (i, record) in records.iter().enumerate().skip(1) {
            let at = |e: ServiceError| bad(format!("record {}: {e}", i + 1));
            match record {
                Record::Created { .. } => {
                    return Err(bad(format!("record {}: second created record", i + 1)))
                }
                Record::Issued {
                    query_id,
                    seq,
                    query,
                    presented,
                    batch,
                    position,
                    repeat_of,
                    task,
                    ..
                } => {
                    let issued = Issued {
                        query_id: query_id.clone(),
                        seq: *seq,
                        query: query.clone(),
                        presented: presented.clone(),
                        batch: *batch,
                        position: *position,
                        repeat_of: repeat_of.clone(),
                        task: task.clone(),
                    };
                    core.replay_issue(issued).map_err(at)?;
                }
                Record::Response {
                    query_id,
                    ranking,
                    elapsed_seconds,
                    timestamp,
                    ..
                } => {
                    core.submit(query_id, ranking.clone(), *elapsed_seconds, *timestamp)
                        .map_err(at)?;
                }
                Record::Refit {
                    valid_responses,
                    metric,
                    ..
                } => {
                    core.fitted_valid = *valid_responses;
                    core.fits += 1;
                    core.metrics.push(metric.clone());
                }
            }
        }
        if let Some(dir) = dir {
            let path = dir.join(SNAPSHOT_FILE);
            if core.fits > 0 && path.is_file() {
                let snap = read_snapshot(BufReader::new(File::open(&path)?))?;
                if snap.similarity.n() == core.n_items() {
                    let state = EmbeddingState::new(snap.similarity, snap.loss, snap.iterations);
                    core.published = Some(Arc::new(publish(state, dim)));
                }
            }
            core.journal = Some(Journal::open(dir)?);
            core.dir = Some(dir.to_path_buf());
        }
        Ok(core)
    }

    pub fn n_items(&self) -> usize {
        self.catalog.catalog.len()
    }

    pub fn plan(&self) -> &SelectionPlan {
        &self.plan
    }

    fn journal(&mut self, record: Record) -> Result<(), ServiceError> {
        match self.journal.as_mut() {
            Some(j) => j.append(&record),
            None => Ok(()),
        }
    }

    /// Queues the next round's heads once the current work runs out.
    fn ensure_round(&mut self) {
        if self.tasks.is_empty() && self.round < self.plan.horizon {
            self.round += 1;
            let round = self.round;
            self.tasks.extend((0..self.n_items()).map(|h| Task::Select {
                round,
                head: ItemId(h),
                attempt: 0,
            }));
        }
    }

    fn repeat_due(&mut self) -> bool {
        if self.batch.repeat_issued || self.batch.fresh.is_empty() {
            return false;
        }
        if self.batch.fresh.len() + 1 >= self.batch_size {
            return true;
        }
        // no fresh work left: close the short batch with its repeat
        self.ensure_round();
        self.tasks.is_empty()
    }

    fn shuffled(&self, body: &[ItemId], seq: u64) -> Vec<ItemId> {
        let mut order = body.to_vec();
        order.shuffle(&mut seed::rng(self.plan.seed, &[TAG_PRESENT, seq]));
        order
    }

    fn record_issue(&mut self, issued: Issued) -> Issued {
        if issued.repeat_of.is_some() {
            self.batch.repeat_issued = true;
        } else {
            self.batch.fresh.push(issued.query_id.clone());
        }
        self.next_seq = issued.seq + 1;
        self.outstanding = Some(issued.query_id.clone());
        self.issued.insert(issued.query_id.clone(), issued.clone());
        issued
    }

    fn build(&self, query: &TupleQuery, repeat_of: Option<String>, task: Option<Task>) -> Issued {
        let seq = self.next_seq;
        let query = query.canonical();
        Issued {
            query_id: format!("q{seq}"),
            seq,
            presented: self.shuffled(query.body(), seq),
            query,
            batch: self.batch.index,
            position: self.batch.fresh.len() + usize::from(self.batch.repeat_issued),
            repeat_of,
            task,
        }
    }

    /// The outstanding query, or the next one if none is outstanding.
    pub fn next_query(&mut self) -> Result<Next, ServiceError> {
        if let Some(id) = &self.outstanding {
            return Ok(Next::Query(self.issued[id].clone()));
        }
        let issued = if self.repeat_due() {
            let pick = seed::rng(self.plan.seed, &[TAG_REPEAT, self.batch.index as u64])
                .random_range(0..self.batch.fresh.len());
            let original = self.issued[&self.batch.fresh[pick]].clone();
            self.build(&original.query, Some(original.query_id), None)
        } else {
            self.ensure_round();
            let Some(task) = self.tasks.front().cloned() else {
                return Ok(Next::Exhausted);
            };
            let query = match &task {
                Task::BurnIn { query } => query.clone(),
                Task::Select { .. } => match self.prepared.remove(&task) {
                    Some(q) => q,
                    None => return Ok(Next::Wait),
                },
            };
            self.tasks.pop_front();
            self.build(&query, None, Some(task))
        };
        self.journal(Record::Issued {
            v: JOURNAL_VERSION,
            query_id: issued.query_id.clone(),
            seq: issued.seq,
            query: issued.query.clone(),
            presented: issued.presented.clone(),
            batch: issued.batch,
            position: issued.position,
            repeat_of: issued.repeat_of.clone(),
            task: issued.task.clone(),
        })?;
        Ok(Next::Query(self.record_issue(issued)))
    }

    fn replay_issue(&mut self, issued: Issued) -> Result<(), ServiceError> {
        let bad = |m: String| ServiceError::Journal(m);
        if self.outstanding.is_some() {
            return Err(bad(format!(
                "{} issued while another query is outstanding",
                issued.query_id
            )));
        }
        if issued.batch != self.batch.index {
            return Err(bad(format!(
                "{} belongs to batch {}, expected {}",
                issued.query_id, issued.batch, self.batch.index
            )));
        }
        match (&issued.repeat_of, &issued.task) {
            (Some(original), None) => {
                if !self.repeat_due() || !self.batch.fresh.contains(original) {
                    return Err(bad(format!("unexpected repeat {}", issued.query_id)));
                }
            }
            (None, Some(task)) => {
                if self.repeat_due() {
                    return Err(bad(format!(
                        "{} issued where a repeat was due",
                        issued.query_id
                    )));
                }
                self.ensure_round();
                if self.tasks.front() != Some(task) {
                    return Err(bad(format!(
                        "{} does not match the schedule",
                        issued.query_id
                    )));
                }
                self.tasks.pop_front();
                self.prepared.remove(task);
            }
            _ => {
                return Err(bad(format!(
                    "{} needs exactly one of task and repeat_of",
                    issued.query_id
                )))
            }
        }
        self.record_issue(issued);
        Ok(())
    }

    /// Records a ranking for the outstanding query. `ranking` lists body ids
    /// most similar first, whatever order they were presented in.
    pub fn submit(
        &mut self,
        query_id: &str,
        ranking: Vec<ItemId>,
        elapsed_seconds: f64,
        timestamp: f64,
    ) -> Result<SubmitAck, ServiceError> {
        let Some(issued) = self.issued.get(query_id).cloned() else {
            return Err(ServiceError::NotFound(format!("unknown query {query_id}")));
        };
        if self.answered.contains_key(query_id) {
            return Err(ServiceError::Conflict(format!(
                "query {query_id} was already answered"
            )));
        }
        if self.outstanding.as_deref() != Some(query_id) {
            return Err(ServiceError::Conflict(format!(
                "query {query_id} is not outstanding"
            )));
        }
        check_permutation(issued.query.body(), &ranking)
            .map_err(|e| ServiceError::Validation(format!("ranking: {e}")))?;
        if !elapsed_seconds.is_finite() || elapsed_seconds < 0.0 {
            return Err(ServiceError::Validation(format!(
                "elapsed_seconds must be finite and nonnegative, got {elapsed_seconds}"
            )));
        }
        let response = RankingResponse::new(
            issued.query.clone(),
            ranking.clone(),
            timestamp,
            ResponseSource::Human,
        )?;
        self.journal(Record::Response {
            v: JOURNAL_VERSION,
            query_id: query_id.to_string(),
            ranking,
            elapsed_seconds,
            timestamp,
        })?;
        self.answered
            .insert(query_id.to_string(), self.answers.len());
        self.answers.push(Answer {
            query_id: query_id.to_string(),
            response,
            elapsed_seconds,
            batch: issued.batch,
            repeat: issued.repeat_of.is_some(),
            status: Status::Pending,
        });
        self.stats.responses_pending += 1;
        self.outstanding = None;

        let batch_valid = match &issued.repeat_of {
            Some(original) => {
                let first = &self.answers[self.answered[original]].response;
                let consistent = first.ranking() == self.answers.last().unwrap().response.ranking();
                self.close_batch(consistent);
                Some(consistent)
            }
            None => None,
        };
        Ok(SubmitAck {
            query_id: query_id.to_string(),
            batch: issued.batch,
            position: issued.position,
            batch_valid,
        })
    }

    fn close_batch(&mut self, valid: bool) {
        let batch = std::mem::take(&mut self.batch);
        let status = if valid {
            Status::Valid
        } else {
            Status::Excluded
        };
        for a in self
            .answers
            .iter_mut()
            .rev()
            .take_while(|a| a.batch == batch.index)
        {
            a.status = status;
        }
        let size = batch.fresh.len() + 1;
        self.stats.responses_pending -= size;
        self.stats.batches_completed += 1;
        if valid {
            self.stats.batches_valid += 1;
            self.stats.responses_valid += size;
        } else {
            self.stats.batches_invalid += 1;
            self.stats.responses_excluded += size;
            let reissued: Vec<Task> = batch
                .fresh
                .iter()
                .enumerate()
                .map(|(position, id)| self.reissue(&self.issued[id], batch.index, position))
                .collect();
            self.stats.queries_reissued += reissued.len();
            for task in reissued.into_iter().rev() {
                self.tasks.push_front(task);
            }
        }
        self.batch = Batch {
            index: batch.index + 1,
            ..Batch::default()
        };
    }

    /// The same head again: a new selection attempt, or a new random burn-in
    /// triplet.
    fn reissue(&self, issued: &Issued, batch: usize, position: usize) -> Task {
        match issued.task.clone().expect("fresh queries carry their task") {
            Task::Select {
                round,
                head,
                attempt,
            } => Task::Select {
                round,
                head,
                attempt: attempt + 1,
            },
            Task::BurnIn { query } => {
                let seed = seed::derive(
                    self.plan.seed,
                    &[TAG_REISSUE, batch as u64, position as u64],
                );
                let body =
                    propose_candidates(query.head(), self.n_items(), query.body().len(), 1, seed)
                        .ok()
                        .and_then(|mut c| c.pop());
                let query = body
                    .and_then(|b| TupleQuery::new(query.head(), b).ok())
                    .unwrap_or(query);
                Task::BurnIn { query }
            }
        }
    }

    /// Responses that have passed their batch check, excluding repeats.
    pub fn valid_log(&self) -> ResponseLog {
        self.answers
            .iter()
            .filter(|a| a.status == Status::Valid && !a.repeat)
            .map(|a| a.response.clone())
            .collect()
    }

    fn valid_count(&self) -> usize {
        self.answers
            .iter()
            .filter(|a| a.status == Status::Valid && !a.repeat)
            .count()
    }

    /// No query can be issued any more.
    pub fn is_exhausted(&mut self) -> bool {
        self.outstanding.is_none() && !self.repeat_due() && {
            self.ensure_round();
            self.tasks.is_empty()
        }
    }

    /// The next piece of background work, if any. At most one job is handed
    /// out at a time.
    pub fn next_job(&mut self) -> Option<Job> {
        if self.busy {
            return None;
        }
        let valid = self.valid_count();
        let unfitted = valid.saturating_sub(self.fitted_valid);
        let job = if unfitted > 0 && (unfitted >= self.n_items() || self.is_exhausted()) {
            Some(self.refit_job(valid))
        } else {
            self.ensure_round();
            let wanted = self
                .tasks
                .iter()
                .take(self.prefetch)
                .find(|t| matches!(t, Task::Select { .. }) && !self.prepared.contains_key(*t))
                .cloned();
            wanted.map(|task| match &self.published {
                Some(state) => Job::Select {
                    task,
                    plan: self.plan.clone(),
                    state: state.clone(),
                },
                // fewer than N validated responses so far, but fit what there is
                None if unfitted > 0 => self.refit_job(valid),
                None => Job::Init {
                    triplets: self.catalog.preload.clone(),
                    n_items: self.n_items(),
                    mds: self.plan.mds,
                    dim: self.dim,
                },
            })
        };
        self.busy = job.is_some();
        job
    }

    fn refit_job(&self, valid: usize) -> Job {
        let log = self.valid_log();
        let mut triplets = self.catalog.preload.clone();
        triplets.extend(log.triplets());
        let label_seconds = self
            .answers
            .iter()
            .filter(|a| a.status == Status::Valid && !a.repeat)
            .map(|a| a.elapsed_seconds)
            .sum();
        // the first fit runs to convergence, later ones are warm-started refits
        let mds = if self.fits == 0 {
            self.plan.mds
        } else {
            MdsConfig {
                max_iters: self.plan.refit_max_iters,
                ..self.plan.mds
            }
        };
        Job::Refit(Box::new(RefitJob {
            triplets,
            log,
            label_seconds,
            valid,
            round: self.fits + 1,
            warm: self.published.clone(),
            mds,
            n_items: self.n_items(),
            dim: self.dim,
            holdout: self.catalog.holdout.clone(),
            snapshot: self.dir.as_ref().map(|d| d.join(SNAPSHOT_FILE)),
        }))
    }

    pub fn apply(&mut self, output: JobOutput) -> Result<(), ServiceError> {
        self.busy = false;
        match output {
            JobOutput::Init(p) => {
                if self.published.is_none() {
                    self.published = Some(Arc::new(p));
                }
            }
            JobOutput::Refit {
                published,
                valid,
                metric,
            } => {
                self.published = Some(Arc::new(published));
                self.fitted_valid = valid;
                self.fits += 1;
                self.metrics.push(metric.clone());
                self.journal(Record::Refit {
                    v: JOURNAL_VERSION,
                    valid_responses: valid,
                    metric,
                })?;
            }
            JobOutput::Selected { task, query } => {
                if self.tasks.contains(&task) {
                    self.prepared.insert(task, query);
                }
            }
            JobOutput::Failed(e) => {
                // drop whatever triggered it so the worker does not spin
                self.fitted_valid = self.valid_count();
                if let Some(Task::Select { .. }) = self.tasks.front() {
                    self.tasks.pop_front();
                }
                self.last_error = Some(e);
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let published = self.published.clone();
        SessionSnapshot {
            session_id: self.id.clone(),
            catalog_id: self.catalog.id.clone(),
            n_items: self.n_items(),
            round: self.round,
            fits: self.fits,
            loss: published.as_ref().map(|p| p.state.loss),
            coordinates: published.as_ref().and_then(|p| p.coords.as_ref()).map(|c| {
                (0..c.coords.ncols())
                    .map(|j| c.coords.column(j).iter().copied().collect())
                    .collect()
            }),
            metrics: self.metrics.clone(),
            validity: self.stats.clone(),
            responses: self.answers.len(),
            last_error: self.last_error.clone(),
        }
    }

    pub fn record_error(&mut self, e: String) {
        self.last_error = Some(e);
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }

    pub fn stats(&self) -> &ValidityStats {
        &self.stats
    }

    pub fn metrics(&self) -> &[MetricSample] {
        &self.metrics
    }

    pub fn published(&self) -> Option<Arc<Published>> {
        self.published.clone()
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub catalog_id: String,
    pub n_items: usize,
    pub round: usize,
    pub fits: usize,
    pub loss: Option<f64>,
    /// One row per item.
    pub coordinates: Option<Vec<Vec<f64>>>,
    pub metrics: Vec<MetricSample>,
    pub validity: ValidityStats,
    pub responses: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

/// Runs every pending job inline until none is left. Tests and replays use
/// this in place of the background worker.
pub fn drain_jobs(core: &mut SessionCore) -> Result<(), ServiceError> {
    while let Some(job) = core.next_job() {
        let out = job.run();
        core.apply(out)?;
    }
    Ok(())
}
