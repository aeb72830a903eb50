//! Frozen-embedding fusion: text features plus projected image/sequence
//! embeddings feed a small classifier for a binary outcome.
//!
//! The encoders are never touched: embeddings are computed once up front
//! and only the projection, missing-token vectors and classifier train.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy, chance_sigma};
use crate::model::{Model, Payload};
use crate::numerics::{dot, Matrix};
use crate::rng;
use crate::train::{adamw_step, AdamWHyper, AdamWState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    TextOnly,
    #[default]
    TextPlusEmbeddings,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_only" => Ok(Self::TextOnly),
            "text_plus_embeddings" => Ok(Self::TextPlusEmbeddings),
            other => Err(Error::InvalidConfig(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTarget {
    #[default]
    Mortality,
    Readmission,
}

impl OutcomeTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mortality => "mortality",
            Self::Readmission => "readmission",
        }
    }
}

impl std::str::FromStr for OutcomeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mortality" => Ok(Self::Mortality),
            "readmission" | "readmit" => Ok(Self::Readmission),
            other => Err(Error::InvalidConfig(format!("unknown outcome {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Projection width per modality; `None` uses the embedding dimension.
    pub proj_dim: Option<usize>,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: FusionMode,
    pub target: OutcomeTarget,
    pub holdout_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            proj_dim: None,
            hidden_dim: 32,
            epochs: 300,
            lr: 1e-2,
            seed: 0,
            mode: FusionMode::default(),
            target: OutcomeTarget::default(),
            holdout_fraction: 0.2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_dim == Some(0) || self.hidden_dim == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("fusion dims and epochs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("fusion lr must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig("holdout_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Frozen features for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSample {
    pub text: Vec<f64>,
    pub image: Option<Vec<f64>>,
    pub sequence: Option<Vec<f64>>,
}

/// Trainable fusion parameters. Projections and missing tokens are empty
/// in text-only mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub mode: FusionMode,
    pub text_dim: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    /// proj × embed
    pub proj_image: Matrix,
    pub proj_sequence: Matrix,
    pub missing_image: Vec<f64>,
    pub missing_sequence: Vec<f64>,
    /// hidden × input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl FusionParams {
    pub fn input_dim(&self) -> usize {
        match self.mode {
            FusionMode::TextOnly => self.text_dim,
            FusionMode::TextPlusEmbeddings => self.text_dim + 2 * self.proj_dim,
        }
    }

    pub fn init<R: Rng>(mode: FusionMode, text_dim: usize, embed_dim: usize, proj_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect()).expect("shape")
        };
        let p = if mode == FusionMode::TextOnly { 0 } else { proj_dim };
        let proj_image = uniform(p, embed_dim, embed_dim);
        let proj_sequence = uniform(p, embed_dim, embed_dim);
        let input = text_dim + 2 * p;
        let w1 = uniform(hidden, input, input);
        let w2 = uniform(1, hidden, hidden).into_vec();
        Self {
            mode,
            text_dim,
            embed_dim,
            proj_dim: p,
            proj_image,
            proj_sequence,
            missing_image: vec![0.0; p],
            missing_sequence: vec![0.0; p],
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            proj_image: z(&self.proj_image),
            proj_sequence: z(&self.proj_sequence),
            missing_image: vec![0.0; self.missing_image.len()],
            missing_sequence: vec![0.0; self.missing_sequence.len()],
            w1: z(&self.w1),
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: 0.0,
            ..self.clone()
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.proj_image.as_slice(),
            self.proj_sequence.as_slice(),
            &self.missing_image,
            &self.missing_sequence,
            self.w1.as_slice(),
            &self.b1,
            &self.w2,
            std::slice::from_ref(&self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.proj_image.as_mut_slice(),
            self.proj_sequence.as_mut_slice(),
            &mut self.missing_image,
            &mut self.missing_sequence,
            self.w1.as_mut_slice(),
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    /// Classifier logit for one sample.
    pub fn logit(&self, sample: &FusionSample) -> Result<f64> {
        let x = build_fusion_input(sample, self)?;
        Ok(self.head(&x).0)
    }

    fn head(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let h: Vec<f64> = self.w1.iter_rows().zip(&self.b1).map(|(w, b)| (dot(w, x) + b).tanh()).collect();
        (dot(&self.w2, &h) + self.b2, h)
    }
}

fn apply(proj: &Matrix, e: &[f64]) -> Vec<f64> {
    proj.iter_rows().map(|w| dot(w, e)).collect()
}

/// Text features, followed in mixed mode by the projected image and
/// sequence embeddings (or the learned missing-token vector when absent).
pub fn build_fusion_input(sample: &FusionSample, params: &FusionParams) -> Result<Vec<f64>> {
    if sample.text.len() != params.text_dim {
        return Err(Error::ShapeMismatch(format!("text features {} vs {}", sample.text.len(), params.text_dim)));
    }
    let mut x = sample.text.clone();
    if params.mode == FusionMode::TextOnly {
        return Ok(x);
    }
    for (emb, proj, missing) in [
        (&sample.image, &params.proj_image, &params.missing_image),
        (&sample.sequence, &params.proj_sequence, &params.missing_sequence),
    ] {
        match emb {
            Some(e) if e.len() != params.embed_dim => {
                return Err(Error::ShapeMismatch(format!("modality embedding {} vs {}", e.len(), params.embed_dim)));
            }
            Some(e) => x.extend(apply(proj, e)),
            None => x.extend_from_slice(missing),
        }
    }
    Ok(x)
}

/// Mean logistic loss and parameter gradients over the given samples.
pub fn fusion_loss_and_grad(params: &FusionParams, samples: &[FusionSample], labels: &[bool]) -> Result<(f64, FusionParams)> {
    let mut g = params.zeros_like();
    let mut loss = 0.0;
    let inv_n = 1.0 / samples.len() as f64;
    let t = params.text_dim;
    for (s, &y) in samples.iter().zip(labels) {
        let x = build_fusion_input(s, params)?;
        let (z, h) = params.head(&x);
        let y = if y { 1.0 } else { 0.0 };
        // softplus(z) − y·z, computed stably
        loss += (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z) * inv_n;
        let dz = (1.0 / (1.0 + (-z).exp()) - y) * inv_n;
        g.b2 += dz;
        let mut dx = vec![0.0; x.len()];
        for j in 0..h.len() {
            g.w2[j] += dz * h[j];
            let da = dz * params.w2[j] * (1.0 - h[j] * h[j]);
            g.b1[j] += da;
            for (k, (gw, w)) in g.w1.row_mut(j).iter_mut().zip(params.w1.row(j)).enumerate() {
                *gw += da * x[k];
                dx[k] += da * w;
            }
        }
        if params.mode == FusionMode::TextOnly {
            continue;
        }
        let p = params.proj_dim;
        for (slot, emb, gp, gm) in [
            (0, &s.image, &mut g.proj_image, &mut g.missing_image),
            (1, &s.sequence, &mut g.proj_sequence, &mut g.missing_sequence),
        ] {
            let du = &dx[t + slot * p..t + (slot + 1) * p];
            match emb {
                Some(e) => {
                    for (r, &d) in du.iter().enumerate() {
                        for (a, v) in gp.row_mut(r).iter_mut().zip(e) {
                            *a += d * v;
                        }
                    }
                }
                None => {
                    for (a, d) in gm.iter_mut().zip(du) {
                        *a += d;
                    }
                }
            }
        }
    }
    Ok((loss, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub params: FusionParams,
    pub heldout_balanced_accuracy: f64,
    pub train_balanced_accuracy: f64,
    pub heldout_size: usize,
    /// Chance-level standard deviation of the held-out balanced accuracy.
    pub heldout_chance_sigma: f64,
    pub final_loss: f64,
}

/// Frozen features of every record; fails if any record lacks the target.
pub fn fusion_samples(ds: &Dataset, model: &Model, target: OutcomeTarget) -> Result<(Vec<FusionSample>, Vec<bool>)> {
    let mut samples = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    for r in &ds.records {
        let y = match target {
            OutcomeTarget::Mortality => r.outcome_mortality,
            OutcomeTarget::Readmission => r.outcome_readmit,
        };
        let y = y.ok_or_else(|| Error::MissingOutcome(format!("{} has no {} label", r.record_id, target.as_str())))?;
        samples.push(FusionSample {
            text: model.embed_text(&r.text)?,
            image: r.image_payload.as_deref().map(|p| model.embed(Payload::Image(p))).transpose()?,
            sequence: r.sequence_payload.as_deref().map(|p| model.embed(Payload::Sequence(p))).transpose()?,
        });
        labels.push(y);
    }
    Ok((samples, labels))
}

/// Trains the fusion head on frozen `model` embeddings of `ds`.
pub fn train_fusion(ds: &Dataset, model: &Model, cfg: &FusionConfig) -> Result<FusionOutcome> {
    let (samples, labels) = fusion_samples(ds, model, cfg.target)?;
    let d = model.embed_dim();
    fit_fusion(&samples, &labels, d, d, cfg)
}

/// Fixed held-out split: a seeded shuffle, last `fraction` held out.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "fusion-split"));
    let held = ((n as f64) * fraction).round() as usize;
    let held = held.clamp(1, n.saturating_sub(1));
    let train = idx[..n - held].to_vec();
    (train, idx[n - held..].to_vec())
}

/// Trains on precomputed features (full-batch AdamW, no weight decay).
pub fn fit_fusion(samples: &[FusionSample], labels: &[bool], text_dim: usize, embed_dim: usize, cfg: &FusionConfig) -> Result<FusionOutcome> {
    cfg.validate()?;
    if samples.len() != labels.len() {
        return Err(Error::LengthMismatch { left: samples.len(), right: labels.len() });
    }
    if samples.len() < 2 {
        return Err(Error::InvalidConfig("fusion needs at least two samples".into()));
    }
    let (tr, te) = holdout_split(samples.len(), cfg.holdout_fraction, cfg.seed);
    let pick = |ix: &[usize]| -> (Vec<FusionSample>, Vec<bool>) {
        (ix.iter().map(|&i| samples[i].clone()).collect(), ix.iter().map(|&i| labels[i]).collect())
    };
    let (tr_x, tr_y) = pick(&tr);
    let (te_x, te_y) = pick(&te);
    let proj = cfg.proj_dim.unwrap_or(embed_dim);
    let mut params = FusionParams::init(cfg.mode, text_dim, embed_dim, proj, cfg.hidden_dim, &mut rng::stream(cfg.seed, "fusion-init"));
    let mut state = AdamWState::for_shapes(params.tensors().iter().map(|t| t.len()));
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        let (loss, g) = fusion_loss_and_grad(&params, &tr_x, &tr_y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("fusion loss"));
        }
        final_loss = loss;
        let grads = g.tensors();
        adamw_step(&mut params.tensors_mut(), &grads, &mut state, cfg.lr, 0.0, &AdamWHyper::default())?;
    }
    let accuracy = |xs: &[FusionSample], ys: &[bool]| -> Result<f64> {
        let preds = xs.iter().map(|s| Ok((params.logit(s)? > 0.0) as usize)).collect::<Result<Vec<_>>>()?;
        let truth: Vec<usize> = ys.iter().map(|&y| y as usize).collect();
        balanced_accuracy(&preds, &truth)
    };
    let heldout = accuracy(&te_x, &te_y)?;
    let train_acc = accuracy(&tr_x, &tr_y)?;
    let pos = te_y.iter().filter(|&&y| y).count();
    let counts: Vec<usize> = [te_y.len() - pos, pos].into_iter().filter(|&c| c > 0).collect();
    Ok(FusionOutcome {
        heldout_balanced_accuracy: heldout,
        train_balanced_accuracy: train_acc,
        heldout_size: te.len(),
        heldout_chance_sigma: if counts.len() == 2 { chance_sigma(&counts) } else { f64::NAN },
        final_loss,
        params,
    })
}
