//! Experiment specification files.

use std::path::{Path, PathBuf};

use infotuple::oracles::{GroundTruth, OracleConfig};
use infotuple::selection::SelectionConfig;
use infotuple::{ItemCatalog, Triplet};
use serde::{Deserialize, Serialize};

use crate::ExperimentError;

/// A complete experiment: one dataset, one oracle, one selection strategy,
/// repeated over `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Free-form label used by `compare`; defaults to the strategy and tuple size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Metric sampling period in rounds; 0 samples only the start and end.
    #[serde(default = "default_metric_every")]
    pub metric_every: usize,
    /// Report coherence against all collected responses.
    #[serde(default)]
    pub coherence: bool,
    pub dataset: DatasetSpec,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
}

fn default_metric_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Standard normal points in `dim` dimensions, redrawn for every run seed.
    Synthetic {
        n_items: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
        /// Random noiseless triplets held out for accuracy reporting.
        #[serde(default)]
        holdout_size: usize,
    },
    /// Items from a JSON-lines catalog, answered by a simulated oracle over the
    /// given coordinates.
    Catalog {
        catalog: PathBuf,
        coordinates: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holdout: Option<PathBuf>,
    },
}

/// What a spec resolves to for one run seed.
pub struct Dataset {
    pub catalog: ItemCatalog,
    pub truth: GroundTruth,
    pub holdout: Vec<Triplet>,
}

impl ExperimentSpec {
    /// Parses TOML. Syntax errors carry line and column; unknown or missing
    /// fields name the field.
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::InvalidSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::InvalidSpec(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)
            .map_err(|e| ExperimentError::InvalidSpec(format!("{}: {e}", path.display())))?;
        spec.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    /// Resolves relative paths against the directory holding the experiment file.
    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DatasetSpec::Catalog {
            catalog,
            coordinates,
            holdout,
        } = &mut self.dataset
        {
            fix(catalog);
            fix(coordinates);
            if let Some(h) = holdout {
                fix(h);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment specs serialize")
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            let strategy = match self.selection.strategy {
                infotuple::selection::Strategy::InfoTuple => "info_tuple",
                infotuple::selection::Strategy::Random => "random",
            };
            format!("{strategy}-{}", self.selection.tuple_size)
        })
    }

    /// Item count without loading per-seed data, if known without loading the dataset.
    fn declared_items(&self) -> Result<usize, ExperimentError> {
        match &self.dataset {
            DatasetSpec::Synthetic { n_items, dim, .. } => {
                if *dim == 0 {
                    return Err(ExperimentError::InvalidSpec(
                        "dataset.dim must be at least 1".into(),
                    ));
                }
                Ok(*n_items)
            }
            DatasetSpec::Catalog { catalog, .. } => ItemCatalog::load(catalog)
                .map(|c| c.len())
                .map_err(|e| ExperimentError::InvalidSpec(format!("dataset.catalog: {e}"))),
        }
    }

    /// Checks everything that can be checked before running, and returns the
    /// spec with defaults made explicit, as written to the manifest.
    pub fn resolve(&self) -> Result<ExperimentSpec, ExperimentError> {
        let invalid = |field: &str, e: infotuple::Error| {
            ExperimentError::InvalidSpec(format!("{field}: {e}"))
        };
        if self.seeds.is_empty() {
            return Err(ExperimentError::InvalidSpec(
                "seeds: at least one seed is required".into(),
            ));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ExperimentError::InvalidSpec("seeds: duplicate seed".into()));
        }
        let n = self.declared_items()?;
        self.oracle.validate().map_err(|e| invalid("oracle", e))?;
        let plan = self
            .selection
            .plan(n)
            .map_err(|e| invalid("selection", e))?;
        if let DatasetSpec::Catalog { .. } = self.dataset {
            // catalog data is the same for every seed
            self.dataset(self.seeds[0]).map_err(|e| match e {
                ExperimentError::InvalidSpec(m) => ExperimentError::InvalidSpec(m),
                other => ExperimentError::InvalidSpec(format!("dataset: {other}")),
            })?;
        }
        let mut resolved = self.clone();
        resolved.label = Some(self.label());
        resolved.selection.candidates_per_head = Some(plan.candidates);
        resolved.selection.n_f = Some(plan.n_f);
        Ok(resolved)
    }

    /// Loads or generates the dataset for one run seed.
    pub fn dataset(&self, run_seed: u64) -> Result<Dataset, ExperimentError> {
        match &self.dataset {
            DatasetSpec::Synthetic {
                n_items,
                dim,
                seed,
                holdout_size,
            } => {
                let truth = infotuple::oracles::make_ground_truth(
                    *n_items,
                    *dim,
                    infotuple::seed::derive(*seed, &[run_seed]),
                )?;
                let holdout = crate::run::synthetic_holdout(&truth, *holdout_size, run_seed)?;
                Ok(Dataset {
                    catalog: ItemCatalog::synthetic(*n_items),
                    truth,
                    holdout,
                })
            }
            DatasetSpec::Catalog {
                catalog,
                coordinates,
                holdout,
            } => {
                let catalog = ItemCatalog::load(catalog)?;
                let truth = GroundTruth::load(coordinates)?;
                if truth.n_items() != catalog.len() {
                    return Err(ExperimentError::InvalidSpec(format!(
                        "dataset.coordinates: {} points for a catalog of {} items",
                        truth.n_items(),
                        catalog.len()
                    )));
                }
                let holdout = match holdout {
                    Some(p) => infotuple::types::load_triplets(p)?,
                    None => Vec::new(),
                };
                if let Some(t) = holdout
                    .iter()
                    .find(|t| t.head.0.max(t.closer.0).max(t.farther.0) >= catalog.len())
                {
                    return Err(ExperimentError::InvalidSpec(format!(
                        "dataset.holdout: triplet {},{},{} references an item outside the catalog",
                        t.head, t.closer, t.farther
                    )));
                }
                Ok(Dataset {
                    catalog,
                    truth,
                    holdout,
                })
            }
        }
    }
}
