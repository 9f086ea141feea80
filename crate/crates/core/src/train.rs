//! Initialization, optimization and the epoch loop.

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::corpus::{Example, Label};
use crate::data::embeddings::EmbeddingTable;
use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{l2_penalty, loss, ModelConfig, ModelParams, ModelVariant};
use crate::params::{InitKind, ParamStore};

pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub clip_threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub freeze_embeddings: bool,
    pub share_encoders: bool,
    pub tie_attention_weights: bool,
    pub lowercase: bool,
    pub min_count: usize,
    pub init_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_size: 100,
            hidden_size: 100,
            learning_rate: 0.005,
            l2: 0.0,
            clip_threshold: 50.0,
            epochs: 30,
            batch_size: 16,
            seed: 1,
            early_stop_patience: 5,
            freeze_embeddings: false,
            share_encoders: false,
            tie_attention_weights: false,
            lowercase: true,
            min_count: 1,
            init_range: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.embedding_size == 0 || self.hidden_size == 0 {
            return bad("embedding and hidden sizes must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch size, epochs and patience must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        if self.clip_threshold.is_nan() || self.clip_threshold <= 0.0 {
            return bad("clip threshold must be positive");
        }
        if self.init_range.is_nan() || self.init_range <= 0.0 {
            return bad("init range must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, variant: ModelVariant) -> ModelConfig {
        ModelConfig {
            variant,
            embedding_size: self.embedding_size,
            hidden_size: self.hidden_size,
            share_encoders: self.share_encoders,
            tie_attention_weights: self.tie_attention_weights,
            init_range: self.init_range,
        }
    }
}

/// A `rows x cols` matrix with orthonormal columns (or rows, when wide),
/// from the QR factorization of a standard normal draw with the signs of
/// `R`'s diagonal folded into `Q`.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let draw = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = draw.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..short {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn fill_orthogonal(data: &mut [f64], cols: usize, block: usize, segments: &[usize], rng: &mut impl Rng) {
    let rows = data.len() / cols;
    let mut r0 = 0;
    while r0 < rows {
        let br = block.min(rows - r0);
        let mut c0 = 0;
        for &w in segments {
            let blk = orthogonal(br, w, rng);
            for i in 0..br {
                data[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + w]
                    .copy_from_slice(&blk[i * w..(i + 1) * w]);
            }
            c0 += w;
        }
        r0 += br;
    }
}

/// Fills every registered parameter according to its [`InitKind`].
/// Pretrained rows are copied verbatim; everything is drawn from one
/// seeded stream in registration order.
pub fn initialize(store: &mut ParamStore, vocab: &Vocabulary, pretrained: Option<&EmbeddingTable>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        let cols = p.value.cols();
        let init = p.init.clone();
        let data = p.value.data_mut();
        match init {
            InitKind::Zero => data.iter_mut().for_each(|v| *v = 0.0),
            InitKind::Uniform(a) => {
                let u = Uniform::new_inclusive(-a, a).expect("finite range");
                data.iter_mut().for_each(|v| *v = rng.sample(u));
            }
            InitKind::Orthogonal { block, segments } => {
                if segments.iter().sum::<usize>() != cols {
                    return Err(Error::Config(format!("{}: segments do not cover {cols} columns", p.name)));
                }
                fill_orthogonal(data, cols, block, &segments, &mut rng);
            }
            InitKind::Embedding(a) => {
                if let Some(table) = pretrained {
                    if table.dim != cols {
                        return Err(Error::Config(format!(
                            "pretrained vectors have dimension {}, model expects {cols}",
                            table.dim
                        )));
                    }
                }
                let u = Uniform::new_inclusive(-a, a).expect("finite range");
                for (row, chunk) in data.chunks_mut(cols).enumerate() {
                    let hit = vocab
                        .token(row)
                        .filter(|_| row != crate::data::vocab::UNK_INDEX)
                        .and_then(|t| pretrained.and_then(|tab| tab.get(t)));
                    match hit {
                        Some(v) => chunk.copy_from_slice(v),
                        None => chunk.iter_mut().for_each(|v| *v = rng.sample(u)),
                    }
                }
            }
        }
    }
    Ok(())
}

/// Registers and initializes a variant's parameters.
pub fn init_params(
    variant: ModelVariant,
    config: &TrainConfig,
    vocab: Vocabulary,
    pretrained: Option<&EmbeddingTable>,
) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::new(config.model_config(variant), vocab)?;
    initialize(&mut params.store, &params.vocab, pretrained, config.seed)?;
    if config.freeze_embeddings {
        params.store.get_mut(params.embedding).trainable = false;
    }
    Ok(params)
}

/// Rescales all gradients to global norm `rho` when they exceed it.
/// Returns the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, rho: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > rho {
        let scale = rho / norm;
        for p in store.iter_mut() {
            if let (_, Some(g)) = p.value.data_and_grad_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}

/// Diagonal AdaGrad accumulators, one per parameter coordinate.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub accum: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        OptimizerState {
            accum: store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            epsilon: ADAGRAD_EPSILON,
        }
    }
}

/// `accum += g^2; theta -= lr g / (sqrt(accum) + eps)`, then zeroes gradients.
/// Frozen parameters keep their values and accumulators.
pub fn adagrad_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64) {
    let eps = state.epsilon;
    for (p, acc) in store.iter_mut().zip(state.accum.iter_mut()) {
        let trainable = p.trainable;
        let (data, grad) = p.value.data_and_grad_mut();
        let Some(grad) = grad else { continue };
        if trainable {
            for ((theta, g), a) in data.iter_mut().zip(grad.iter()).zip(acc.iter_mut()) {
                if *g == 0.0 {
                    continue;
                }
                *a += g * g;
                *theta -= lr * g / (a.sqrt() + eps);
            }
        }
        grad.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
}

pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Fraction of examples whose predicted label matches gold. Forward passes
/// run in parallel; the count does not depend on completion order.
pub fn accuracy(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty set".into()));
    }
    let correct = examples
        .par_iter()
        .map(|ex| params.predict(ex).map(|p| usize::from(p.label == ex.gold)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / examples.len() as f64)
}

/// Predicted labels in input order.
pub fn predict_all(params: &ModelParams, examples: &[Example]) -> Result<Vec<Label>> {
    examples
        .par_iter()
        .map(|ex| params.predict(ex).map(|p| p.label))
        .collect()
}

/// One minibatch: mean cross-entropy (plus L2), backward, clip, step.
/// Returns the batch loss.
pub fn train_batch(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
    batch: &[&Example],
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let mut g = Graph::new();
        let out = params.forward(&mut g, ex)?;
        let l = loss(&mut g, out.probs, ex.gold)?;
        let value = g.value(l).data()[0];
        total += value;
        if !value.is_finite() {
            return Ok(f64::NAN);
        }
        g.backward_scaled(l, scale, &mut params.store)?;
    }
    let penalty = l2_penalty(&mut params.store, config.l2);
    clip_gradients(&mut params.store, config.clip_threshold);
    adagrad_step(&mut params.store, state, config.learning_rate);
    Ok(total * scale + penalty)
}

/// Trains from `params`, keeping the parameters with the best dev
/// accuracy. An empty dev set falls back to training accuracy. `on_epoch`
/// sees each record and may stop the run early.
pub fn train_loop(
    mut params: ModelParams,
    config: &TrainConfig,
    train: &[Example],
    dev: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let dev = if dev.is_empty() { train } else { dev };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut state = OptimizerState::new(&params.store);
    params.store.clear_grad();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let l = train_batch(&mut params, &mut state, config, &batch)?;
            if !l.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            loss_sum += l * batch.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_acc: accuracy(&params, dev)?,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, dev accuracy {:.4}",
            record.train_loss,
            record.dev_acc
        );
        let improved = best.as_ref().is_none_or(|(acc, _, _)| record.dev_acc > *acc);
        if improved {
            best = Some((record.dev_acc, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        let stop = on_epoch(&record).is_break();
        history.push(record);
        if stop || stale >= config.early_stop_patience {
            break;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

/// Hyperparameter grid; every combination is trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub l2: Vec<f64>,
    pub clip_thresholds: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            learning_rates: vec![0.05, 0.0005, 0.0001],
            l2: vec![0.0, 5e-5, 1e-5, 1e-6],
            clip_thresholds: vec![5.0, 10.0, 50.0],
        }
    }
}

impl Grid {
    /// Every combination, ordered by ascending learning rate, then l2, then clip.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        let mut out = Vec::new();
        for &lr in &sorted(&self.learning_rates) {
            for &l2 in &sorted(&self.l2) {
                for &clip in &sorted(&self.clip_thresholds) {
                    out.push(TrainConfig {
                        learning_rate: lr,
                        l2,
                        clip_threshold: clip,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

pub struct GridOutcome {
    pub best: TrainConfig,
    pub best_dev_acc: f64,
    /// Every trial in tie-break order with its best dev accuracy.
    pub trials: Vec<(TrainConfig, f64)>,
}

/// Trains each grid point from `make_params` and returns the configuration
/// with the highest dev accuracy; ties go to the lower learning rate, then
/// lower l2, then lower clip threshold.
pub fn grid_search(
    grid: &Grid,
    base: &TrainConfig,
    make_params: impl Fn(&TrainConfig) -> Result<ModelParams>,
    train: &[Example],
    dev: &[Example],
) -> Result<GridOutcome> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut trials = Vec::with_capacity(configs.len());
    for cfg in configs {
        let params = make_params(&cfg)?;
        let outcome = train_loop(params, &cfg, train, dev, |_| ControlFlow::Continue(()))?;
        let acc = outcome
            .history
            .iter()
            .map(|r| r.dev_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        trials.push((cfg, acc));
    }
    let (best, best_dev_acc) = trials
        .iter()
        .fold(None::<(&TrainConfig, f64)>, |acc, (cfg, a)| match acc {
            Some((_, best)) if *a <= best => acc,
            _ => Some((cfg, *a)),
        })
        .map(|(c, a)| (c.clone(), a))
        .expect("nonempty");
    Ok(GridOutcome {
        best,
        best_dev_acc,
        trials,
    })
}
