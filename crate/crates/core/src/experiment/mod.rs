//! The pool-based active-learning loop, seed aggregation, and result
//! files.
//!
//! One run is: reset the model to its initial weights, train on the
//! labelled set, evaluate on the balanced test set, stop once the label
//! budget is reached, otherwise query `query_size` rows and repeat.

mod curves;
mod records;
mod streams;
mod suite;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{
    balanced_uniform_select, bald_scores, entropy_scores, select_topk, uniform_select, QueryBatch,
    Strategy,
};
use crate::datagen::{self, DataError, Dataset, DatasetSpec, PoolState};
use crate::metrics::{self, EvalBatch, MetricError};
use crate::model::{Model, ModelConfig, ModelError, TrainingData};

pub use curves::{render_svg, write_curves, AxisRange, CURVE_METRICS};
pub use records::{read_csv, write_csv, CSV_HEADER};
pub use streams::{SeedStreams, Stream};
pub use suite::{
    render_table, run_suite, summarize, write_summary_csv, CellFailure, MeanStd, SuiteResult,
    SummaryRow,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("results file: {0}")]
    Format(String),
}

impl ExperimentError {
    /// Configuration problems as opposed to failures during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Data(DataError::Spec(_) | DataError::TestSize(_))
                | ExperimentError::Model(ModelError::Config(_))
        )
    }
}

fn default_query_size() -> usize {
    50
}
fn default_mc_passes() -> usize {
    20
}
fn default_initial_labelled() -> usize {
    100
}
fn default_budget_fraction() -> f64 {
    0.10
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    pub strategy: Strategy,
    #[serde(default = "default_query_size")]
    pub query_size: usize,
    #[serde(default = "default_mc_passes")]
    pub mc_passes: usize,
    #[serde(default = "default_initial_labelled")]
    pub initial_labelled: usize,
    /// Final labelled-set size as a fraction of `|D| + |U|`.
    #[serde(default = "default_budget_fraction")]
    pub budget_fraction: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Measure per-step wall time. Off by default so that results files are
    /// a pure function of the configuration; `wall_ms` is then 0.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, strategy: Strategy) -> Self {
        let model = ModelConfig::with_input_dim(dataset.feature_dim);
        Self {
            dataset,
            model,
            strategy,
            query_size: default_query_size(),
            mc_passes: default_mc_passes(),
            initial_labelled: default_initial_labelled(),
            budget_fraction: default_budget_fraction(),
            seeds: default_seeds(),
            output: None,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        self.dataset.validate()?;
        self.model.validate()?;
        if self.model.input_dim != self.dataset.feature_dim {
            return fail(format!(
                "model.input_dim {} differs from dataset.feature_dim {}",
                self.model.input_dim, self.dataset.feature_dim
            ));
        }
        if self.model.num_classes != 2 || self.model.num_groups != 2 {
            return fail("datasets are binary: num_classes and num_groups must be 2".into());
        }
        if self.initial_labelled < 2 {
            return fail("initial_labelled must be at least 2".into());
        }
        if self.query_size == 0 {
            return fail("query_size must be at least 1".into());
        }
        if self.mc_passes == 0 {
            return fail("mc_passes must be at least 1".into());
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return fail(format!(
                "budget_fraction {} outside (0, 1]",
                self.budget_fraction
            ));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        Ok(())
    }

    /// Labelled-set size at which the loop stops, for a pool of `pool` rows.
    pub fn budget(&self, pool: usize) -> usize {
        (self.budget_fraction * pool as f64).round() as usize
    }
}

/// Metrics of one train/evaluate cycle. Rates are fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub n_labelled: usize,
    pub accuracy: f64,
    pub predictive_parity: f64,
    pub equalized_odds_gap: f64,
    pub equal_opportunity_gap: f64,
    pub nll: f64,
    pub epistemic_gap: f64,
    pub labelled_per_group: [usize; 2],
    pub wall_ms: u64,
}

/// All steps of one `(config, seed)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub strategy: Strategy,
    pub lambda: f64,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// The pool ran dry before the budget was reached.
    pub truncated: bool,
}

/// Hooks into [`run_single_observed`]; all methods default to no-ops.
pub trait RunObserver {
    /// Called after the weight reset, just before training at `step`.
    fn step_started(&mut self, _step: usize, _model: &Model, _pools: &PoolState) {}
    /// Called whenever MC-Dropout predictions are computed for selection.
    fn selection_predictions(&mut self, _step: usize) {}
    /// Called with each query batch before it is labelled.
    fn queried(&mut self, _batch: &QueryBatch, _pools: &PoolState) {}
}

impl RunObserver for () {}

/// The dataset and initial partition a seed produces. Shared by every
/// strategy run with the same seed and dataset spec.
pub fn prepare_data(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, PoolState), ExperimentError> {
    let streams = SeedStreams::new(seed);
    let spec = DatasetSpec {
        seed: streams.derive_seed(Stream::Datagen) ^ config.dataset.seed,
        ..config.dataset.clone()
    };
    let dataset = datagen::generate(&spec)?;
    let pools = datagen::split_pools(
        &dataset,
        spec.n_test,
        config.initial_labelled,
        &mut streams.rng(Stream::Split, 0),
    )?;
    Ok((dataset, pools))
}

pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunResult, ExperimentError> {
    run_single_observed(config, seed, &mut ())
}

pub fn run_single_observed(
    config: &ExperimentConfig,
    seed: u64,
    observer: &mut dyn RunObserver,
) -> Result<RunResult, ExperimentError> {
    config.validate()?;
    let streams = SeedStreams::new(seed);
    let (dataset, mut pools) = prepare_data(config, seed)?;
    let budget = config.budget(pools.pool_size());
    let mut model = Model::build(config.model.clone(), &mut streams.rng(Stream::Init, 0))?;

    let test_x = dataset.features_of(pools.test());
    let test_y = dataset.labels_of(pools.test());
    let test_a = dataset.groups_of(pools.test());

    let mut records = Vec::new();
    let mut truncated = false;
    for step in 0.. {
        let started = Instant::now();
        model.reset_weights();
        observer.step_started(step, &model, &pools);

        let labelled = pools.labelled();
        let x = dataset.features_of(labelled);
        let y = dataset.labels_of(labelled);
        let a = dataset.groups_of(labelled);
        model.train(
            TrainingData {
                features: &x,
                labels: &y,
                groups: &a,
            },
            &mut streams.rng(Stream::Shuffle, step),
            &mut streams.rng(Stream::Dropout, step),
        )?;

        let probs = model.predict_eval(&test_x)?;
        let report = metrics::evaluate(&EvalBatch::new(
            probs,
            config.model.num_classes,
            test_y.clone(),
            test_a.clone(),
        )?)?;
        let test_mc = model.mc_predict(
            &test_x,
            config.mc_passes,
            &mut streams.rng(Stream::McEval, step),
        )?;
        let epistemic_gap = metrics::epistemic_gap(&bald_scores(&test_mc), &test_a)?;
        let per_group = pools.labelled_per_group(dataset.groups(), 2);

        let n_labelled = pools.labelled().len();
        let done = n_labelled >= budget;
        let exhausted = !done && pools.unlabelled().is_empty();

        let query = if done || exhausted {
            None
        } else {
            let k = config.query_size.min(budget - n_labelled);
            Some(select_batch(
                config, &dataset, &pools, &model, &streams, step, k, observer,
            )?)
        };
        let wall_ms = if config.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        records.push(StepRecord {
            step,
            n_labelled,
            accuracy: report.accuracy,
            predictive_parity: report.predictive_parity,
            equalized_odds_gap: report.equalized_odds_gap,
            equal_opportunity_gap: report.equal_opportunity_gap,
            nll: report.nll,
            epistemic_gap,
            labelled_per_group: [per_group[0], per_group[1]],
            wall_ms,
        });

        match query {
            Some(batch) => {
                observer.queried(&batch, &pools);
                pools.label(&batch.indices)?;
            }
            None => {
                truncated = exhausted;
                break;
            }
        }
    }

    Ok(RunResult {
        strategy: config.strategy,
        lambda: config.model.lambda,
        seed,
        records,
        truncated,
    })
}

#[allow(clippy::too_many_arguments)]
fn select_batch(
    config: &ExperimentConfig,
    dataset: &Dataset,
    pools: &PoolState,
    model: &Model,
    streams: &SeedStreams,
    step: usize,
    k: usize,
    observer: &mut dyn RunObserver,
) -> Result<QueryBatch, ExperimentError> {
    let pool = pools.unlabelled();
    let batch = match config.strategy {
        Strategy::Bald | Strategy::Entropy => {
            observer.selection_predictions(step);
            let preds = model.mc_predict(
                &dataset.features_of(pool),
                config.mc_passes,
                &mut streams.rng(Stream::McSelect, step),
            )?;
            let scores = if config.strategy == Strategy::Bald {
                bald_scores(&preds).mutual_information
            } else {
                entropy_scores(&preds)
            };
            select_topk(&scores, k, pool, config.strategy, step)
        }
        Strategy::Uniform => {
            uniform_select(pool, k, &mut streams.rng(Stream::Selection, step), step)
        }
        Strategy::BalancedUniform => balanced_uniform_select(
            pool,
            k,
            dataset.groups(),
            &mut streams.rng(Stream::Selection, step),
            step,
        ),
    };
    Ok(batch)
}
