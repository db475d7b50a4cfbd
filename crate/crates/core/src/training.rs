//! Training pairs, optimisers and the two-stage procedure: train with the
//! selector, keep the top-k coordinates, retrain a fresh narrower model.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aslib_io::{FeatureStats, Scenario, SplitIndex};
use crate::autodiff::{Graph, Tensor, Var};
use crate::embedding_store::{EmbeddingCatalog, TokenEmbeddingSequence};
use crate::evaluation::par10_record;
use crate::model::{LossMode, ModelConfig, ModelError, ModelParams};
use crate::nn::{select_topk, GumbelNoise, SelectorMode};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no embedding for algorithm {0}")]
    MissingEmbedding(String),
    #[error("non-finite loss {loss} in {stage} epoch {epoch} batch {batch}")]
    NonFiniteLoss {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("training log: {0}")]
    Log(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TrainingError>;

/// One (problem, algorithm) example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub problem_index: usize,
    pub algorithm_index: usize,
    /// `ln(1 + par10) / ln(1 + 10 C)`.
    pub regression_target: f64,
    /// 1 for every algorithm attaining the instance's minimum PAR10.
    pub class_label: u8,
}

pub fn regression_target(par10: f64, cutoff: f64) -> f64 {
    (1.0 + par10).ln() / (1.0 + 10.0 * cutoff).ln()
}

/// Cross product of `instances` and `algorithms`, instance-major.
///
/// Labels are relative to the given algorithm subset.
pub fn build_pairs(scenario: &Scenario, instances: &[usize], algorithms: &[usize]) -> Vec<TrainPair> {
    let c = scenario.cutoff();
    let mut pairs = Vec::with_capacity(instances.len() * algorithms.len());
    for &p in instances {
        let scores: Vec<f64> = algorithms
            .iter()
            .map(|&a| par10_record(scenario.run(p, a), c))
            .collect();
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        for (&a, &s) in algorithms.iter().zip(&scores) {
            pairs.push(TrainPair {
                problem_index: p,
                algorithm_index: a,
                regression_target: regression_target(s, c),
                class_label: u8::from(s == best),
            });
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Linear interpolation of the temperature from `start` to `end` across
/// stage-1 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSchedule {
    pub start: f64,
    pub end: f64,
}

impl TauSchedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 || self.start == self.end {
            return self.start;
        }
        let t = epoch as f64 / (epochs - 1) as f64;
        self.start + (self.end - self.start) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub tau: TauSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs_stage1: 30,
            epochs_stage2: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            tau: TauSchedule { start: 1.0, end: 1.0 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.epochs_stage1 == 0 || self.epochs_stage2 == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.tau.start > 0.0 && self.tau.end > 0.0) {
            return bad("tau schedule must stay positive");
        }
        Ok(())
    }
}

/// Seed for an independent random stream derived from the run seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_STAGE1_INIT: u64 = 1;
const STREAM_STAGE1_DATA: u64 = 2;
const STREAM_STAGE2_INIT: u64 = 3;
const STREAM_STAGE2_DATA: u64 = 4;

pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, d) in p.values.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p.values[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::default()),
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], lr: f64) {
        let mut tensors = params.tensors_mut();
        match self {
            Optimizer::Sgd => sgd_step(&mut tensors, grads, lr),
            Optimizer::Adam(s) => adam_step(s, &mut tensors, grads, lr),
        }
    }
}

/// Everything a training or evaluation run reads from the scenario and
/// catalog, resolved once.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    pub scenario: &'a Scenario,
    pub catalog: &'a EmbeddingCatalog,
    pub split: SplitIndex,
    pub stats: FeatureStats,
    /// Normalised features of every scenario instance.
    pub problems: Vec<Vec<f64>>,
    /// Scenario indices of the training-time candidates.
    pub algorithms: Vec<usize>,
}

impl<'a> Dataset<'a> {
    /// Normalisation is fitted on the train side only.
    pub fn new(
        scenario: &'a Scenario,
        catalog: &'a EmbeddingCatalog,
        split: SplitIndex,
        algorithms: Option<Vec<usize>>,
    ) -> Result<Self> {
        let stats = FeatureStats::fit(scenario, &split.train);
        Self::with_stats(scenario, catalog, split, stats, algorithms)
    }

    pub fn with_stats(
        scenario: &'a Scenario,
        catalog: &'a EmbeddingCatalog,
        split: SplitIndex,
        stats: FeatureStats,
        algorithms: Option<Vec<usize>>,
    ) -> Result<Self> {
        let algorithms = algorithms.unwrap_or_else(|| (0..scenario.num_algorithms()).collect());
        for &a in &algorithms {
            let id = &scenario.algorithms[a];
            if !catalog.contains(id) {
                return Err(TrainingError::MissingEmbedding(id.clone()));
            }
        }
        let problems = scenario.instances.iter().map(|p| stats.apply(&p.features)).collect();
        Ok(Self {
            scenario,
            catalog,
            split,
            stats,
            problems,
            algorithms,
        })
    }

    pub fn algorithm_ids(&self) -> Vec<String> {
        self.algorithms
            .iter()
            .map(|&a| self.scenario.algorithms[a].clone())
            .collect()
    }

    pub fn train_pairs(&self) -> Vec<TrainPair> {
        build_pairs(self.scenario, &self.split.train, &self.algorithms)
    }

    pub fn sequence(&self, algorithm_index: usize) -> Result<&'a TokenEmbeddingSequence> {
        let id = &self.scenario.algorithms[algorithm_index];
        self.catalog
            .get(id)
            .map_err(|_| TrainingError::MissingEmbedding(id.clone()))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub mean_loss: f64,
    pub tau: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
}

impl StageOutput {
    pub fn first_loss(&self) -> f64 {
        self.log.first().map_or(f64::NAN, |r| r.mean_loss)
    }

    pub fn last_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.mean_loss)
    }
}

/// Mean loss of one batch with gradients for every parameter.
fn batch_loss(
    params: &ModelParams,
    data: &Dataset<'_>,
    rows: &BTreeMap<usize, usize>,
    batch: &[TrainPair],
    noise: Option<(&GumbelNoise, f64)>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let f = params.bind(&mut g, true);
    let weights = match noise {
        Some((noise, tau)) => f.selector_weights_at(&mut g, tau, SelectorMode::Train { noise })?,
        None => None,
    };
    let mut vas: BTreeMap<usize, Var> = BTreeMap::new();
    let mut vps: BTreeMap<usize, Var> = BTreeMap::new();
    let mut losses = Vec::with_capacity(batch.len());
    for pair in batch {
        let va = if params.config.use_algorithm_features {
            let a = pair.algorithm_index;
            Some(match vas.get(&a) {
                Some(&v) => v,
                None => {
                    let v = f.encode_algorithm(&mut g, Some(data.sequence(a)?), rows.get(&a).copied(), weights)?;
                    vas.insert(a, v);
                    v
                }
            })
        } else {
            None
        };
        let p = pair.problem_index;
        let vp = match vps.get(&p) {
            Some(&v) => v,
            None => {
                let v = f.encode_problem(&mut g, &data.problems[p])?;
                vps.insert(p, v);
                v
            }
        };
        let s = f.score(&mut g, vp, va)?;
        let loss = match params.config.loss_mode {
            LossMode::Regression => {
                let t = g.vector(&[pair.regression_target]);
                g.mse_loss(s, t).map_err(ModelError::from)?
            }
            LossMode::Classification => g.bce_loss(s, f64::from(pair.class_label)).map_err(ModelError::from)?,
        };
        losses.push(loss);
    }
    let loss = g.mean_of(&losses).map_err(ModelError::from)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss).map_err(ModelError::from)?;
    let grads = f.vars().into_iter().map(|v| g.grad(v).to_vec()).collect();
    Ok((value, grads))
}

/// Runs `epochs` of minibatch training on `params` in place.
fn fit(
    stage: &'static str,
    params: &mut ModelParams,
    data: &Dataset<'_>,
    train: &TrainConfig,
    epochs: usize,
    data_seed: u64,
) -> Result<Vec<EpochRecord>> {
    let mut pairs = data.train_pairs();
    let rows: BTreeMap<usize, usize> = data
        .algorithms
        .iter()
        .filter_map(|&a| params.row_of(&data.scenario.algorithms[a]).map(|r| (a, r)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let mut opt = Optimizer::new(train.optimizer);
    let use_selector = params.selector.is_some();
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let start = Instant::now();
        let tau = use_selector.then(|| train.tau.at(epoch, epochs));
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in pairs.chunks(train.batch_size).enumerate() {
            let noise = match (tau, &params.selector) {
                (Some(t), Some(sel)) => Some((GumbelNoise::sample(&mut rng, sel.dim()), t)),
                _ => None,
            };
            let (loss, grads) = batch_loss(params, data, &rows, batch, noise.as_ref().map(|(n, t)| (n, *t)))?;
            if !loss.is_finite() {
                return Err(TrainingError::NonFiniteLoss {
                    stage,
                    epoch,
                    batch: b,
                    loss,
                });
            }
            total += loss * batch.len() as f64;
            opt.step(params, &grads, train.learning_rate);
        }
        if let Some((sel, t)) = params.selector.as_mut().zip(tau) {
            sel.tau = t;
        }
        log.push(EpochRecord {
            stage: stage.to_string(),
            epoch,
            mean_loss: total / pairs.len().max(1) as f64,
            tau,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

/// Stage 1: the full-width model with the Gumbel selector.
///
/// Returns the trained parameters and the learned selection probabilities.
pub fn train_stage1(data: &Dataset<'_>, model: &ModelConfig, train: &TrainConfig) -> Result<(StageOutput, Vec<f64>)> {
    train.validate()?;
    let mut config = model.clone();
    config.tau = train.tau.start;
    let mut params = ModelParams::init_stage1(
        &config,
        data.scenario.meta.num_features(),
        &data.algorithm_ids(),
        stream_seed(train.seed, STREAM_STAGE1_INIT),
    )?;
    if params.selector.is_none() {
        return Err(TrainingError::InvalidConfig("stage 1 needs algorithm features".into()));
    }
    let log = fit(
        "stage1",
        &mut params,
        data,
        train,
        train.epochs_stage1,
        stream_seed(train.seed, STREAM_STAGE1_DATA),
    )?;
    let probs = params.selector.as_ref().map(|s| s.probabilities()).unwrap_or_default();
    Ok((StageOutput { params, log }, probs))
}

/// A freshly initialised stage-2 model over `selected`, trained from scratch.
pub fn train_stage2(
    data: &Dataset<'_>,
    model: &ModelConfig,
    train: &TrainConfig,
    selected: Vec<usize>,
) -> Result<StageOutput> {
    train.validate()?;
    let mut params = ModelParams::init_stage2(
        model,
        data.scenario.meta.num_features(),
        &data.algorithm_ids(),
        selected,
        stream_seed(train.seed, STREAM_STAGE2_INIT),
    )?;
    let log = fit(
        "stage2",
        &mut params,
        data,
        train,
        train.epochs_stage2,
        stream_seed(train.seed, STREAM_STAGE2_DATA),
    )?;
    Ok(StageOutput { params, log })
}

/// Keeps the `top_k` most probable coordinates of a stage-1 model and
/// retrains a fresh model over them.
pub fn extract_and_retrain(stage1: &ModelParams, data: &Dataset<'_>, train: &TrainConfig) -> Result<StageOutput> {
    let sel = stage1
        .selector
        .as_ref()
        .ok_or_else(|| TrainingError::InvalidConfig("model has no selector".into()))?;
    let selected = select_topk(sel, stage1.config.top_k).map_err(ModelError::from)?;
    train_stage2(data, &stage1.config, train, selected)
}

/// Result of the whole procedure for one model config.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Stage-1 selection probabilities, when a selector was trained.
    pub stage1_probabilities: Option<Vec<f64>>,
    pub log: Vec<EpochRecord>,
}

/// Two stages with feature selection; a single all-coordinate run otherwise.
///
/// The single run uses the stage-2 seeds, so `top_k == feature_dim` yields
/// the same final model as disabling selection.
pub fn train_model(data: &Dataset<'_>, model: &ModelConfig, train: &TrainConfig) -> Result<TrainedModel> {
    model.validate()?;
    train.validate()?;
    if model.use_algorithm_features && model.use_feature_selection {
        let (s1, probs) = train_stage1(data, model, train)?;
        let s2 = extract_and_retrain(&s1.params, data, train)?;
        let mut log = s1.log;
        log.extend(s2.log);
        Ok(TrainedModel {
            params: s2.params,
            stage1_probabilities: Some(probs),
            log,
        })
    } else {
        let all = (0..model.feature_dim).collect();
        let s2 = train_stage2(data, model, train, all)?;
        Ok(TrainedModel {
            params: s2.params,
            stage1_probabilities: None,
            log: s2.log,
        })
    }
}

/// Writes one JSON object per line.
pub fn write_log(log: &[EpochRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
