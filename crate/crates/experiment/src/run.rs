//! Executing a spec and writing its outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use infotuple::embedding::{write_snapshot, Snapshot};
use infotuple::metrics::{write_metrics_csv, MetricSample, METRICS_CSV_HEADER};
use infotuple::oracles::{answer_deterministic, GroundTruth, SimulatedOracle};
use infotuple::seed::{self, tag};
use infotuple::selection::{
    run_experiment, MetricsPlan, RoundReport, RunObserver, ROUNDS_CSV_HEADER, TIMING_CSV_HEADER,
};
use infotuple::{ItemId, RankingResponse, Triplet, TupleQuery};
use rand::seq::index;

use crate::spec::ExperimentSpec;
use crate::ExperimentError;

/// Environment variable bounding how many seeds run concurrently.
pub const THREADS_ENV: &str = "INFOTUPLE_THREADS";

pub const MANIFEST: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const EMBEDDING_FILE: &str = "embedding.txt";
/// The only output that differs between identical reruns.
pub const TIMING_FILE: &str = "timing.csv";

pub fn seed_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("seed-{seed}"))
}

/// `size` random noiseless triplets over the planted configuration.
pub fn synthetic_holdout(
    truth: &GroundTruth,
    size: usize,
    run_seed: u64,
) -> infotuple::Result<Vec<Triplet>> {
    let n = truth.n_items();
    if size == 0 {
        return Ok(Vec::new());
    }
    if n < 3 {
        return Err(infotuple::Error::Config(
            "holdout triplets need at least 3 items".into(),
        ));
    }
    let mut rng = seed::rng(run_seed, &[tag::HOLDOUT]);
    (0..size)
        .map(|_| {
            let picks = index::sample(&mut rng, n, 3).into_vec();
            let q = TupleQuery::new(ItemId(picks[0]), vec![ItemId(picks[1]), ItemId(picks[2])])?;
            let r = answer_deterministic(&q, truth);
            Triplet::new(r.head(), r.ranking()[0], r.ranking()[1])
        })
        .collect()
}

/// Streams a run's responses, round reports and metric samples to disk,
/// flushing after every round so a failed run leaves its prefix behind.
struct FileObserver {
    responses: BufWriter<File>,
    rounds: BufWriter<File>,
    timing: BufWriter<File>,
    metrics: BufWriter<File>,
}

impl FileObserver {
    fn create(dir: &Path) -> std::io::Result<Self> {
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        let mut rounds = open(ROUNDS_FILE)?;
        writeln!(rounds, "{ROUNDS_CSV_HEADER}")?;
        let mut timing = open(TIMING_FILE)?;
        writeln!(timing, "{TIMING_CSV_HEADER}")?;
        let mut metrics = open(METRICS_FILE)?;
        writeln!(metrics, "{METRICS_CSV_HEADER}")?;
        Ok(Self {
            responses: open(RESPONSES_FILE)?,
            rounds,
            timing,
            metrics,
        })
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.responses.flush()?;
        self.rounds.flush()?;
        self.timing.flush()?;
        self.metrics.flush()
    }
}

impl RunObserver for FileObserver {
    fn on_response(&mut self, response: &RankingResponse) -> infotuple::Result<()> {
        serde_json::to_writer(&mut self.responses, response).map_err(std::io::Error::from)?;
        self.responses.write_all(b"\n")?;
        Ok(())
    }

    fn on_round(&mut self, report: &RoundReport) -> infotuple::Result<()> {
        for row in report.csv_rows() {
            writeln!(self.rounds, "{row}")?;
        }
        writeln!(self.timing, "{}", report.timing_row())?;
        self.flush()?;
        Ok(())
    }

    fn on_metric(&mut self, sample: &MetricSample) -> infotuple::Result<()> {
        writeln!(self.metrics, "{}", sample.csv_row())?;
        Ok(())
    }
}

/// Outputs of one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics: Vec<MetricSample>,
}

/// One seed of a resolved spec, written under `seed_dir(output, seed)`.
pub fn run_seed(
    spec: &ExperimentSpec,
    output: &Path,
    run_seed: u64,
) -> Result<SeedOutcome, ExperimentError> {
    let data = spec.dataset(run_seed)?;
    let dir = seed_dir(output, run_seed);
    fs::create_dir_all(&dir)?;
    let mut oracle_cfg = spec.oracle;
    oracle_cfg.seed = seed::derive(spec.oracle.seed, &[run_seed]);
    let mut selection = spec.selection.clone();
    selection.seed = seed::derive(spec.selection.seed, &[run_seed]);
    let mut oracle = SimulatedOracle::new(data.truth.clone(), oracle_cfg)?;
    let plan = MetricsPlan {
        every: spec.metric_every,
        ground_truth: Some(&data.truth),
        holdout: (!data.holdout.is_empty()).then_some(data.holdout.as_slice()),
        coherence: spec.coherence,
    };
    let mut observer = FileObserver::create(&dir)?;
    let result = run_experiment(
        data.catalog.len(),
        &mut oracle,
        &selection,
        &plan,
        &mut observer,
    );
    observer.flush()?;
    let outcome = result?;
    let mut w = BufWriter::new(File::create(dir.join(EMBEDDING_FILE))?);
    write_snapshot(
        &mut w,
        &Snapshot {
            similarity: outcome.state.similarity.clone(),
            iterations: outcome.state.iterations,
            loss: outcome.state.loss,
        },
    )?;
    w.flush()?;
    Ok(SeedOutcome {
        seed: run_seed,
        metrics: outcome.metrics,
    })
}

/// Seeds to run concurrently: the environment override, else the number of CPUs.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Validates `spec`, writes the resolved manifest and runs every seed.
/// `output` overrides the configured output directory. Outcomes are in seed order.
pub fn run_spec(
    spec: &ExperimentSpec,
    output: Option<&Path>,
) -> Result<Vec<SeedOutcome>, ExperimentError> {
    // the manifest keeps the experiment's own output_dir so that it does not depend
    // on where a particular rerun was written
    let resolved = spec.resolve()?;
    let out = output.map_or_else(|| resolved.output_dir.clone(), Path::to_path_buf);
    fs::create_dir_all(&out)?;
    fs::write(out.join(MANIFEST), resolved.to_toml())?;

    let seeds = resolved.seeds.clone();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedOutcome, ExperimentError>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    let workers = thread_count().min(seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed(&resolved, &out, seeds[i]);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Metrics written for one seed.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricSample>, ExperimentError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_CSV_HEADER => {}
        other => {
            return Err(ExperimentError::Schema(format!(
                "{}: unexpected header {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            MetricSample::parse_csv_row(l)
                .map_err(|e| ExperimentError::Schema(format!("{}:{}: {e}", path.display(), i + 2)))
        })
        .collect()
}

/// Writes samples in the metrics CSV schema.
pub fn write_metrics(path: &Path, samples: &[MetricSample]) -> Result<(), ExperimentError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_metrics_csv(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use infotuple::oracles::make_ground_truth;

    #[test]
    fn holdout_is_consistent_with_truth() {
        let gt = make_ground_truth(20, 2, 1).unwrap();
        let h = synthetic_holdout(&gt, 50, 3).unwrap();
        assert_eq!(h.len(), 50);
        for t in &h {
            assert!(
                gt.squared_distance(t.head, t.closer) <= gt.squared_distance(t.head, t.farther)
            );
        }
        assert_eq!(h, synthetic_holdout(&gt, 50, 3).unwrap());
        assert!(synthetic_holdout(&gt, 0, 3).unwrap().is_empty());
    }
}
