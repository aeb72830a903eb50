//! Batching, optimizer, learning-rate schedule and the training loop.
//!
//! The optimized objective is the summed loss divided by the batch size;
//! logs carry both the summed and the per-sample value.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{normalize_text, pair_records, Dataset, RecordPair, PAIR_WINDOW_HOURS};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{total_loss, LossConfig, ModalityView, PairSubset, PositiveSets, TotalLoss};
use crate::model::{ForwardPass, Modality, Model, Params, Payload};
use crate::numerics::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub emcl_enabled: bool,
    pub seed: u64,
    /// Additive noise on sequence payloads during training.
    pub augment_noise_sigma: f64,
    /// Additive noise on image payloads during training.
    pub image_noise_sigma: f64,
    /// Random horizontal flip of image grids during training.
    pub image_flip: bool,
    /// Upper bound on cross-modal pairs per batch, drawn uniformly when
    /// exceeded. `None` uses every pair in the batch.
    pub pair_cap: Option<usize>,
    /// Divide the summed loss by the batch size before the optimizer step.
    pub normalize_by_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr_max: 4e-4,
            lr_min: 0.0,
            weight_decay: 0.1,
            tau: 0.07,
            emcl_enabled: true,
            seed: 0,
            augment_noise_sigma: 0.05,
            image_noise_sigma: 0.05,
            image_flip: true,
            pair_cap: None,
            normalize_by_batch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_max > self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::InvalidConfig("need lr_max > lr_min >= 0".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.augment_noise_sigma >= 0.0) || !(self.image_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("weight decay and noise levels must be non-negative".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { tau: self.tau, emcl_enabled: self.emcl_enabled }
    }
}

/// One batch: dataset record indices plus what the losses need.
#[derive(Debug, Clone, PartialEq)]
pub struct TriModalBatch {
    pub records: Vec<usize>,
    /// Text group per batch position (equal normalized text ⇒ equal id).
    pub group_ids: Vec<usize>,
    /// Batch positions carrying an image payload, in order.
    pub image_rows: Vec<usize>,
    /// Batch positions carrying a sequence payload, in order.
    pub sequence_rows: Vec<usize>,
    /// Pairs as (row in image embeddings, row in sequence embeddings).
    pub pairs: PairSubset,
}

impl TriModalBatch {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn m(&self) -> usize {
        self.pairs.m()
    }
}

/// Epoch-shuffled batches with pair subsets; computes record pairing itself.
pub fn make_batches(ds: &Dataset, batch_size: usize, seed: u64) -> Vec<TriModalBatch> {
    let pairs = pair_records(&ds.records, PAIR_WINDOW_HOURS);
    let groups = dataset_text_groups(ds);
    make_batches_with(ds, &pairs, &groups, batch_size, None, seed)
}

/// Dataset-wide text group ids (normalized text equality).
pub fn dataset_text_groups(ds: &Dataset) -> Vec<usize> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    ds.records
        .iter()
        .map(|r| {
            let next = ids.len();
            *ids.entry(normalize_text(&r.text)).or_insert(next)
        })
        .collect()
}

pub fn make_batches_with(
    ds: &Dataset,
    pairs: &[RecordPair],
    groups: &[usize],
    batch_size: usize,
    pair_cap: Option<usize>,
    seed: u64,
) -> Vec<TriModalBatch> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut r = rng::stream(seed, "batches");
    order.shuffle(&mut r);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let records = chunk.to_vec();
            let mut image_rows = Vec::new();
            let mut sequence_rows = Vec::new();
            let mut image_row_of = HashMap::new();
            let mut sequence_row_of = HashMap::new();
            for (pos, &ri) in records.iter().enumerate() {
                let rec = &ds.records[ri];
                if rec.image_payload.is_some() {
                    image_row_of.insert(ri, image_rows.len());
                    image_rows.push(pos);
                }
                if rec.sequence_payload.is_some() {
                    sequence_row_of.insert(ri, sequence_rows.len());
                    sequence_rows.push(pos);
                }
            }
            let mut batch_pairs: Vec<(usize, usize)> = pairs
                .iter()
                .filter_map(|p| Some((*image_row_of.get(&p.image_record)?, *sequence_row_of.get(&p.sequence_record)?)))
                .collect();
            batch_pairs.sort_unstable();
            if let Some(cap) = pair_cap {
                if batch_pairs.len() > cap {
                    batch_pairs = batch_pairs.choose_multiple(&mut r, cap).copied().collect();
                    batch_pairs.sort_unstable();
                }
            }
            let n = records.len();
            TriModalBatch {
                group_ids: records.iter().map(|&ri| groups[ri]).collect(),
                records,
                image_rows,
                sequence_rows,
                pairs: PairSubset { pairs: batch_pairs, batch_size: n },
            }
        })
        .collect()
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per tensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn for_shapes<I: IntoIterator<Item = usize>>(lens: I) -> Self {
        let lens: Vec<usize> = lens.into_iter().collect();
        Self {
            step: 0,
            m: lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
    hyper: &AdamWHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch(format!("tensor {i}: {} params, {} grads", p.len(), g.len())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            p[j] -= lr * weight_decay * p[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

fn adamw_params(params: &mut Params, grads: &Params, state: &mut AdamWState, lr: f64, wd: f64) -> Result<()> {
    let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.2).collect();
    let mut tensors = params.tensors_mut();
    adamw_step(&mut tensors, &grads, state, lr, wd, &AdamWHyper::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    /// Optimized value (per sample when normalizing by batch size).
    pub loss: f64,
    /// Summed loss as written in the objective.
    pub loss_sum: f64,
    pub tmcl: f64,
    pub emcl: f64,
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub adam: AdamWState,
    pub history: Vec<StepLog>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_val_rsum: Option<f64>,
    pub state: TrainState,
    pub epoch_mean_loss: Vec<f64>,
}

/// Everything computed for one batch: loss and parameter gradients.
pub struct BatchGradients {
    pub loss: TotalLoss,
    pub grads: Params,
}

fn flip_horizontal(grid: &mut [f64], width: usize) {
    for row in grid.chunks_mut(width) {
        row.reverse();
    }
}

/// Forward and backward pass for one batch. With `augment`, payloads are
/// perturbed using the given RNG.
pub fn batch_gradients(
    model: &Model,
    ds: &Dataset,
    batch: &TriModalBatch,
    tokens: &[Vec<usize>],
    cfg: &TrainConfig,
    augment: Option<&mut ChaCha8Rng>,
) -> Result<BatchGradients> {
    let width = ds.meta.image_shape[1];
    let mut images: Vec<Vec<f64>> = batch
        .image_rows
        .iter()
        .map(|&p| ds.records[batch.records[p]].image_payload.clone().expect("image row"))
        .collect();
    let mut sequences: Vec<Vec<f64>> = batch
        .sequence_rows
        .iter()
        .map(|&p| ds.records[batch.records[p]].sequence_payload.clone().expect("sequence row"))
        .collect();
    if let Some(r) = augment {
        for img in &mut images {
            if cfg.image_flip && r.random_bool(0.5) {
                flip_horizontal(img, width);
            }
            add_noise(img, cfg.image_noise_sigma, r);
        }
        for seq in &mut sequences {
            add_noise(seq, cfg.augment_noise_sigma, r);
        }
    }
    let img_payloads: Vec<Payload> = images.iter().map(|x| Payload::Image(x)).collect();
    let seq_payloads: Vec<Payload> = sequences.iter().map(|x| Payload::Sequence(x)).collect();
    let txt_payloads: Vec<Payload> = batch.records.iter().map(|&ri| Payload::Text(&tokens[ri])).collect();
    let img_pass = model.forward(Modality::Image, &img_payloads)?;
    let seq_pass = model.forward(Modality::Sequence, &seq_payloads)?;
    let txt_pass = model.forward(Modality::Text, &txt_payloads)?;

    let view = |rows: &[usize], pass: &ForwardPass| {
        let g: Vec<usize> = rows.iter().map(|&p| batch.group_ids[p]).collect();
        ModalityView {
            text: txt_pass.embeddings.select_rows(rows),
            modality: pass.embeddings.clone(),
            pos: PositiveSets::from_groups(&g),
        }
    };
    let image_view = view(&batch.image_rows, &img_pass);
    let sequence_view = view(&batch.sequence_rows, &seq_pass);
    let loss = total_loss(&image_view, &sequence_view, &batch.pairs, &cfg.loss_config())?;

    let scale = if cfg.normalize_by_batch { 1.0 / batch.n() as f64 } else { 1.0 };
    let d = model.embed_dim();
    let mut d_text = Matrix::zeros(batch.n(), d);
    for (rows, g) in [(&batch.image_rows, &loss.grad_image_text), (&batch.sequence_rows, &loss.grad_sequence_text)] {
        for (k, &p) in rows.iter().enumerate() {
            for (t, v) in d_text.row_mut(p).iter_mut().zip(g.row(k)) {
                *t += v;
            }
        }
    }
    d_text.scale(scale);
    let mut d_img = loss.grad_image.clone();
    d_img.scale(scale);
    let mut d_seq = loss.grad_sequence.clone();
    d_seq.scale(scale);

    let mut grads = model.params.zeros_like();
    model.backward(&img_pass, &d_img, &mut grads)?;
    model.backward(&seq_pass, &d_seq, &mut grads)?;
    model.backward(&txt_pass, &d_text, &mut grads)?;
    Ok(BatchGradients { loss, grads })
}

fn add_noise(x: &mut [f64], sigma: f64, r: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    for v in x {
        let e: f64 = StandardNormal.sample(r);
        *v += sigma * e;
    }
}

/// Where and how training writes its artifacts.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOutputs<'a> {
    /// Directory for `last.json`, `best.json` and `train_log.jsonl`.
    pub dir: Option<&'a Path>,
}

pub const LAST_CHECKPOINT: &str = "last.json";
pub const BEST_CHECKPOINT: &str = "best.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Trains `model` on `train_ds`. When `val_ds` is given, validation RSUM
/// after each epoch selects the best checkpoint; otherwise the last epoch
/// is also the best.
pub fn train(
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    mut model: Model,
    cfg: &TrainConfig,
    outputs: TrainOutputs<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let classes: std::collections::BTreeSet<usize> = train_ds.records.iter().map(|r| r.class_id).collect();
    if classes.len() < 2 {
        return Err(Error::InvalidConfig("training needs at least two classes".into()));
    }
    let tokens: Vec<Vec<usize>> = train_ds.records.iter().map(|r| model.vocab.tokenize(&r.text)).collect();
    let pairs = pair_records(&train_ds.records, PAIR_WINDOW_HOURS);
    let groups = dataset_text_groups(train_ds);
    let batches_per_epoch = train_ds.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let lens: Vec<usize> = model.params.tensors().iter().map(|t| t.2.len()).collect();
    let mut state = TrainState { step: 0, adam: AdamWState::for_shapes(lens), history: Vec::with_capacity(total_steps) };
    let mut aug = rng::stream(cfg.seed, "train-augment");
    let config_json = serde_json::to_value(cfg)?;
    let mut log = String::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let seed = rng::derive_seed(cfg.seed, &format!("epoch-{epoch}"));
        let batches = make_batches_with(train_ds, &pairs, &groups, cfg.batch_size, cfg.pair_cap, seed);
        let mut epoch_loss = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let lr = cosine_lr(state.step, total_steps, cfg.lr_max, cfg.lr_min);
            let BatchGradients { loss, grads } = batch_gradients(&model, train_ds, batch, &tokens, cfg, Some(&mut aug))?;
            if !loss.value.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { step: state.step, batch: bi });
            }
            adamw_params(&mut model.params, &grads, &mut state.adam, lr, cfg.weight_decay)?;
            let scale = if cfg.normalize_by_batch { 1.0 / batch.n() as f64 } else { 1.0 };
            let entry = StepLog {
                step: state.step,
                epoch,
                batch: bi,
                lr,
                loss: loss.value * scale,
                loss_sum: loss.value,
                tmcl: loss.tmcl(),
                emcl: loss.emcl,
                m: batch.m(),
                n: batch.n(),
            };
            epoch_loss += entry.loss;
            writeln!(log, "{}", serde_json::to_string(&entry)?).expect("string write");
            state.history.push(entry);
            state.step += 1;
        }
        epoch_mean_loss.push(epoch_loss / batches.len() as f64);

        let score = match val_ds {
            Some(v) => Some(eval::validation_rsum(&model, v)?),
            None => None,
        };
        let improved = match (&best, score) {
            (None, _) => true,
            (Some((_, b, _)), Some(s)) => s > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((epoch, score.unwrap_or(f64::NAN), model.clone()));
            if let Some(dir) = outputs.dir {
                model.save(&dir.join(BEST_CHECKPOINT), Some(config_json.clone()))?;
            }
        }
        if let Some(dir) = outputs.dir {
            model.save(&dir.join(LAST_CHECKPOINT), Some(config_json.clone()))?;
            crate::io::write_atomic(&dir.join(TRAIN_LOG), log.as_bytes())?;
        }
    }

    let (best_epoch, best_score, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_model,
        best_epoch,
        best_val_rsum: val_ds.map(|_| best_score),
        state,
        epoch_mean_loss,
    })
}
