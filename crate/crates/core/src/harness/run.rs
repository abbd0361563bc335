//! Replicate runs and experiment sweeps.

use rayon::prelude::*;

use super::config::{ExperimentConfig, ShiftSetting};
use super::metrics::{aggregate, AggregateRow, MetricsRow};
use crate::drift::{load_idx, streams, sub_rng, Dataset, Split, StreamState, SwapRecord};
use crate::error::{Error, Result};
use crate::homeostat::{Choice, Controller, HomeostatState, Learner};
use crate::nn::{evaluate, Mlp, INPUT_DIM, NUM_CLASSES};

/// Train and validation data for an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub validation: Dataset,
}

impl ExperimentData {
    /// Loads both splits named by `config` and takes the stratified subsets.
    /// Every path must exist.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let paths = [
            config.resolve(&config.train_images),
            config.resolve(&config.train_labels),
            config.resolve(&config.val_images),
            config.resolve(&config.val_labels),
        ];
        for p in &paths {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
                ));
            }
        }
        let train = load_idx(&paths[0], &paths[1], Split::Train)?;
        let validation = load_idx(&paths[2], &paths[3], Split::Validation)?;
        Ok(Self::subset(train, validation, config))
    }

    /// Applies the configured subset sizes to already loaded splits.
    pub fn subset(train: Dataset, validation: Dataset, config: &ExperimentConfig) -> Self {
        let take = |d: Dataset, n: usize| {
            if n == 0 || n >= d.len() {
                d
            } else {
                d.stratified_subset(n, config.seed)
            }
        };
        ExperimentData {
            train: take(train, config.train_subset),
            validation: take(validation, config.val_subset),
        }
    }
}

/// Everything one replicate produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: u32,
    pub learner: Controller,
    pub setting: ShiftSetting,
    pub rows: Vec<MetricsRow>,
    pub events: Vec<SwapRecord>,
    /// Set when the replicate stopped early. `rows` then holds whatever was
    /// evaluated before the failure.
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub presentation: u64,
    pub reason: String,
}

/// Seed of replicate `r`.
pub fn replicate_seed(config: &ExperimentConfig, replicate: u32) -> u64 {
    config.seed.wrapping_add(replicate as u64)
}

/// Runs one learner for `epochs * epoch_length` presentations, evaluating
/// on the validation set against the stream's current permutation every
/// `eval_interval` presentations and at the end of every epoch.
pub fn run_replicate(
    config: &ExperimentConfig,
    data: &ExperimentData,
    learner: Controller,
    setting: ShiftSetting,
    replicate: u32,
) -> Result<ReplicateResult> {
    let seed = replicate_seed(config, replicate);
    let schedule = config.schedule(setting)?;
    let mut stream = StreamState::new(&data.train, schedule.clone(), seed)?;
    let mut dims = vec![INPUT_DIM];
    dims.extend(&config.hidden);
    dims.push(NUM_CLASSES);
    let net = Mlp::new(&dims, &mut sub_rng(seed, streams::WEIGHTS));
    let mut state = HomeostatState::new(learner, config.policy(), config.store_capacity);
    state.realized = config.realized_effect;
    state.passes = config.store_passes;
    let mut agent = Learner::new(net, state, sub_rng(seed, streams::CONTROLLER));

    let total = config.epochs as u64 * config.epoch_length;
    let mut rows = Vec::new();
    let mut failure = None;
    let (mut applied, mut correct, mut seen) = (0u64, 0u64, 0u64);
    for _ in 0..total {
        let p = stream.next_presentation()?;
        let log = match agent.step(p.index, stream.image(p.sample), p.label) {
            Ok(log) => log,
            Err(Error::ReplicateAborted { presentation, reason }) => {
                failure = Some(Failure { presentation, reason });
                break;
            }
            Err(e) => return Err(e),
        };
        seen += 1;
        correct += log.correct as u64;
        // Random steps always take their effect; constant steps never do.
        applied += match (learner, log.decision.map(|d| d.choice())) {
            (Controller::RandomWalk, _) | (_, Some(Choice::Ingest)) => 1,
            _ => 0,
        };
        let done = p.index + 1;
        let in_epoch = done % config.epoch_length;
        if in_epoch % config.eval_interval == 0 || in_epoch == 0 {
            let (acc, loss) = evaluate(
                agent.net(),
                &data.validation.images,
                &data.validation.labels,
                stream.permutation(),
            );
            let epoch = (done - 1) / config.epoch_length;
            rows.push(MetricsRow {
                replicate,
                learner,
                shift_rate: schedule.rate_at(epoch),
                epoch,
                presentation: done,
                val_accuracy: acc,
                val_loss: loss,
                lr: agent.lr(),
                ingest_rate: applied as f64 / seen as f64,
                train_accuracy: correct as f64 / seen as f64,
            });
            (applied, correct, seen) = (0, 0, 0);
        }
    }
    Ok(ReplicateResult {
        replicate,
        learner,
        setting,
        rows,
        events: stream.event_log().to_vec(),
        failure,
    })
}

/// All replicates of an experiment plus their aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Ordered by learner, setting (config order), replicate.
    pub replicates: Vec<ReplicateResult>,
    pub aggregates: Vec<AggregateRow>,
}

impl Experiment {
    pub fn rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.replicates.iter().flat_map(|r| r.rows.iter())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReplicateResult> {
        self.replicates.iter().filter(|r| r.failure.is_some())
    }
}

/// One `(learner, setting, replicate)` cell of the experiment grid.
pub type Cell = (Controller, ShiftSetting, u32);

/// The experiment grid in output order.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &learner in &config.learners {
        for setting in config.settings() {
            for r in 0..config.replicates {
                out.push((learner, setting, r));
            }
        }
    }
    out
}

/// Runs every cell on a pool of `config.threads` workers (0 = default) and
/// aggregates. Results do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData) -> Result<Experiment> {
    config.validate()?;
    let grid = cells(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config {
            line: 0,
            key: "threads".into(),
            message: e.to_string(),
        })?;
    let replicates = pool.install(|| {
        grid.par_iter()
            .map(|&(learner, setting, r)| run_replicate(config, data, learner, setting, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let aggregates = aggregate(&replicates);
    Ok(Experiment {
        replicates,
        aggregates,
    })
}
