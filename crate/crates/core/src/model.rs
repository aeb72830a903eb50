//! Toy encoders for the three modalities and their projection heads.
//!
//! Each non-text encoder is a two-layer perceptron over the flattened
//! payload (`tanh` hidden layer, linear output). The text encoder mean-pools
//! rows of a token-embedding table and feeds the result to its own
//! perceptron. A biasless linear head maps every raw feature to the shared
//! embedding space, followed by L2 normalization.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{truncate_text, Dataset, Record};
use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix, ZERO_NORM};
use crate::rng;

pub const CHECKPOINT_FORMAT: &str = "tribind-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Token id reserved for out-of-vocabulary words.
pub const OOV_ID: usize = 0;
pub const OOV_TOKEN: &str = "<oov>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Sequence,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Sequence => "sequence",
            Modality::Text => "text",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "sequence" => Ok(Modality::Sequence),
            "text" => Ok(Modality::Text),
            other => Err(Error::InvalidConfig(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_dim: usize,
    pub sequence_dim: usize,
    pub vocab_size: usize,
    pub token_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    /// Shared embedding dimension. 256 matches the full-size setup; 32 is
    /// the desk-scale default.
    pub embed_dim: usize,
}

impl ModelConfig {
    /// Desk-scale defaults sized for a dataset's payloads and vocabulary.
    pub fn for_dataset(ds: &Dataset, vocab: &Vocabulary) -> Self {
        Self {
            image_dim: ds.meta.image_len(),
            sequence_dim: ds.meta.sequence_len(),
            vocab_size: vocab.len(),
            token_dim: 32,
            hidden_dim: 64,
            feature_dim: 32,
            embed_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("image_dim", self.image_dim),
            ("sequence_dim", self.sequence_dim),
            ("vocab_size", self.vocab_size),
            ("token_dim", self.token_dim),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Whitespace tokenizer with a fixed word list. Id 0 is the OOV token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
}

impl Vocabulary {
    /// Sorted word list over all (truncated) texts.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(words(&truncate_text(t)));
        }
        let tokens: Vec<String> = std::iter::once(OOV_TOKEN.to_string()).chain(set).collect();
        Self::from(tokens)
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::build(ds.records.iter().map(|r| r.text.as_str()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Truncates to 100 words, then maps each word to its id (OOV when
    /// unknown). Never returns an empty list.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = words(&truncate_text(text))
            .map(|w| self.index.get(&w).copied().unwrap_or(OOV_ID))
            .collect();
        if ids.is_empty() {
            vec![OOV_ID]
        } else {
            ids
        }
    }
}

fn uniform_matrix<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn uniform_vec<R: Rng>(len: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn matvec(w: &Matrix, x: &[f64]) -> Vec<f64> {
    w.iter_rows().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn matvec_t(w: &Matrix, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &yi) in w.iter_rows().zip(y) {
        for (o, a) in out.iter_mut().zip(r) {
            *o += a * yi;
        }
    }
    out
}

fn add_outer(g: &mut Matrix, y: &[f64], x: &[f64]) {
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        for (gv, xv) in g.row_mut(i).iter_mut().zip(x) {
            *gv += yi * xv;
        }
    }
}

/// Two-layer perceptron: `f = W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct MlpCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

impl Mlp {
    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let b_in = 1.0 / (input as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        Self {
            w1: uniform_matrix(hidden, input, b_in, rng),
            b1: uniform_vec(hidden, b_in, rng),
            w2: uniform_matrix(output, hidden, b_hid, rng),
            b2: uniform_vec(output, b_hid, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x.to_vec()).0
    }

    fn forward_cached(&self, input: Vec<f64>) -> (Vec<f64>, MlpCache) {
        let mut hidden = matvec(&self.w1, &input);
        for (h, b) in hidden.iter_mut().zip(&self.b1) {
            *h = (*h + b).tanh();
        }
        let mut out = matvec(&self.w2, &hidden);
        out.iter_mut().zip(&self.b2).for_each(|(o, b)| *o += b);
        (out, MlpCache { input, hidden })
    }

    /// Accumulates parameter gradients into `grads`; returns `d input`.
    fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        add_outer(&mut grads.w2, d_out, &cache.hidden);
        grads.b2.iter_mut().zip(d_out).for_each(|(g, d)| *g += d);
        let d_hidden = matvec_t(&self.w2, d_out);
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&cache.hidden)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        add_outer(&mut grads.w1, &d_pre, &cache.input);
        grads.b1.iter_mut().zip(&d_pre).for_each(|(g, d)| *g += d);
        matvec_t(&self.w1, &d_pre)
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        out.push((format!("{prefix}.w1"), vec![self.w1.rows(), self.w1.cols()], self.w1.as_slice()));
        out.push((format!("{prefix}.b1"), vec![self.b1.len()], &self.b1));
        out.push((format!("{prefix}.w2"), vec![self.w2.rows(), self.w2.cols()], self.w2.as_slice()));
        out.push((format!("{prefix}.b2"), vec![self.b2.len()], &self.b2));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w1.as_mut_slice());
        out.push(&mut self.b1);
        out.push(self.w2.as_mut_slice());
        out.push(&mut self.b2);
    }
}

/// Linear map from raw features to the shared space; normalization is
/// applied by [`project`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub weight: Matrix,
}

impl ProjectionHead {
    pub fn init<R: Rng>(feature_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        Self { weight: uniform_matrix(embed_dim, feature_dim, 1.0 / (feature_dim as f64).sqrt(), rng) }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = Matrix::zeros(dim, dim);
        (0..dim).for_each(|i| weight.set(i, i, 1.0));
        Self { weight }
    }
}

/// `normalize(W raw)`.
pub fn project(raw: &[f64], head: &ProjectionHead) -> Result<Vec<f64>> {
    if raw.len() != head.weight.cols() {
        return Err(Error::ShapeMismatch(format!(
            "raw feature of length {} for a head expecting {}",
            raw.len(),
            head.weight.cols()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw feature"));
    }
    let mut y = matvec(&head.weight, raw);
    let n = norm(&y);
    if !(n >= ZERO_NORM) {
        return Err(Error::ZeroRow { row: 0, norm: n });
    }
    y.iter_mut().for_each(|v| *v /= n);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub image: Mlp,
    pub sequence: Mlp,
    /// `vocab_size x token_dim`.
    pub token_table: Matrix,
    pub text: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHeads {
    pub image: ProjectionHead,
    pub sequence: ProjectionHead,
    pub text: ProjectionHead,
}

impl ProjectionHeads {
    pub fn get(&self, modality: Modality) -> &ProjectionHead {
        match modality {
            Modality::Image => &self.image,
            Modality::Sequence => &self.sequence,
            Modality::Text => &self.text,
        }
    }
}

/// All trainable tensors. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub encoders: EncoderParams,
    pub heads: ProjectionHeads,
}

impl Params {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, "model-init");
        let encoders = EncoderParams {
            image: Mlp::init(cfg.image_dim, cfg.hidden_dim, cfg.feature_dim, &mut r),
            sequence: Mlp::init(cfg.sequence_dim, cfg.hidden_dim, cfg.feature_dim, &mut r),
            token_table: uniform_matrix(cfg.vocab_size, cfg.token_dim, 1.0, &mut r),
            text: Mlp::init(cfg.token_dim, cfg.hidden_dim, cfg.feature_dim, &mut r),
        };
        let heads = ProjectionHeads {
            image: ProjectionHead::init(cfg.feature_dim, cfg.embed_dim, &mut r),
            sequence: ProjectionHead::init(cfg.feature_dim, cfg.embed_dim, &mut r),
            text: ProjectionHead::init(cfg.feature_dim, cfg.embed_dim, &mut r),
        };
        Ok(Self { encoders, heads })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            encoders: EncoderParams {
                image: self.encoders.image.zeros_like(),
                sequence: self.encoders.sequence.zeros_like(),
                token_table: z(&self.encoders.token_table),
                text: self.encoders.text.zeros_like(),
            },
            heads: ProjectionHeads {
                image: ProjectionHead { weight: z(&self.heads.image.weight) },
                sequence: ProjectionHead { weight: z(&self.heads.sequence.weight) },
                text: ProjectionHead { weight: z(&self.heads.text.weight) },
            },
        }
    }

    /// Named tensors with shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        self.encoders.image.tensors("image", &mut out);
        self.encoders.sequence.tensors("sequence", &mut out);
        let t = &self.encoders.token_table;
        out.push(("text.token_table".into(), vec![t.rows(), t.cols()], t.as_slice()));
        self.encoders.text.tensors("text", &mut out);
        for (name, h) in [("image", &self.heads.image), ("sequence", &self.heads.sequence), ("text", &self.heads.text)] {
            out.push((format!("{name}.head"), vec![h.weight.rows(), h.weight.cols()], h.weight.as_slice()));
        }
        out
    }

    /// Same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.encoders.image.tensors_mut(&mut out);
        self.encoders.sequence.tensors_mut(&mut out);
        out.push(self.encoders.token_table.as_mut_slice());
        self.encoders.text.tensors_mut(&mut out);
        out.push(self.heads.image.weight.as_mut_slice());
        out.push(self.heads.sequence.weight.as_mut_slice());
        out.push(self.heads.text.weight.as_mut_slice());
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// Encoder tensors only (everything except the projection heads).
    pub fn encoder_tensor_count(&self) -> usize {
        self.tensors().len() - 3
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }
}

/// A payload for one sample of one modality.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    Image(&'a [f64]),
    Sequence(&'a [f64]),
    Text(&'a [usize]),
}

impl Payload<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Image(_) => Modality::Image,
            Payload::Sequence(_) => Modality::Sequence,
            Payload::Text(_) => Modality::Text,
        }
    }
}

#[derive(Debug, Clone)]
struct SampleCache {
    mlp: MlpCache,
    feature: Vec<f64>,
    /// Unnormalized projection norm.
    proj_norm: f64,
    tokens: Vec<usize>,
}

/// Embeddings for a batch of one modality, with what backprop needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub modality: Modality,
    pub embeddings: Matrix,
    caches: Vec<SampleCache>,
}

/// Encoders, heads, vocabulary and the configuration they were built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Params,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if vocab.len() != config.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} tokens, config declares {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let params = Params::init(&config, seed)?;
        Ok(Self { config, vocab, params })
    }

    /// Desk-scale model sized for a dataset.
    pub fn for_dataset(ds: &Dataset, seed: u64) -> Result<Self> {
        let vocab = Vocabulary::from_dataset(ds);
        let cfg = ModelConfig::for_dataset(ds, &vocab);
        Self::new(cfg, vocab, seed)
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let fresh = Params::init(&self.config, 0)?;
        let ours = self.params.tensors();
        for ((name, want, _), (_, got, data)) in fresh.tensors().iter().zip(&ours) {
            let expected: usize = want.iter().product();
            if want != got || data.len() != expected {
                return Err(Error::ShapeMismatch(format!("tensor {name}: {got:?}, expected {want:?}")));
            }
        }
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::ShapeMismatch("vocabulary size".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(())
    }

    /// Raw feature vector for one sample.
    pub fn encode(&self, payload: Payload<'_>) -> Result<Vec<f64>> {
        Ok(self.encode_cached(payload)?.0)
    }

    fn encode_cached(&self, payload: Payload<'_>) -> Result<(Vec<f64>, MlpCache, Vec<usize>)> {
        let enc = &self.params.encoders;
        let (mlp, input, tokens) = match payload {
            Payload::Image(x) => (&enc.image, x.to_vec(), Vec::new()),
            Payload::Sequence(x) => (&enc.sequence, x.to_vec(), Vec::new()),
            Payload::Text(ids) => {
                let ids: Vec<usize> = if ids.is_empty() {
                    vec![OOV_ID]
                } else {
                    ids.iter().map(|&t| if t < self.config.vocab_size { t } else { OOV_ID }).collect()
                };
                let mut pooled = vec![0.0; self.config.token_dim];
                for &t in &ids {
                    for (p, v) in pooled.iter_mut().zip(enc.token_table.row(t)) {
                        *p += v;
                    }
                }
                let inv = 1.0 / ids.len() as f64;
                pooled.iter_mut().for_each(|p| *p *= inv);
                (&enc.text, pooled, ids)
            }
        };
        if input.len() != mlp.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} payload of length {}, expected {}",
                payload.modality().as_str(),
                input.len(),
                mlp.input_dim()
            )));
        }
        let (feature, cache) = mlp.forward_cached(input);
        Ok((feature, cache, tokens))
    }

    /// Unit-norm embedding for one sample.
    pub fn embed(&self, payload: Payload<'_>) -> Result<Vec<f64>> {
        let raw = self.encode(payload)?;
        project(&raw, self.params.heads.get(payload.modality()))
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let ids = self.vocab.tokenize(text);
        self.embed(Payload::Text(&ids))
    }

    pub fn embed_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Matrix> {
        let rows = texts.iter().map(|t| self.embed_text(t.as_ref())).collect::<Result<Vec<_>>>()?;
        embeddings_matrix(rows, self.config.embed_dim)
    }

    /// Batch forward pass for one modality. All payloads must match `modality`.
    pub fn forward(&self, modality: Modality, payloads: &[Payload<'_>]) -> Result<ForwardPass> {
        let head = self.params.heads.get(modality);
        let mut caches = Vec::with_capacity(payloads.len());
        let mut embeddings = Matrix::zeros(payloads.len(), self.config.embed_dim);
        for (i, p) in payloads.iter().enumerate() {
            if p.modality() != modality {
                return Err(Error::ShapeMismatch(format!(
                    "{} payload in a {} batch",
                    p.modality().as_str(),
                    modality.as_str()
                )));
            }
            let (feature, mlp, tokens) = self.encode_cached(*p)?;
            let y = matvec(&head.weight, &feature);
            let n = norm(&y);
            if !(n >= ZERO_NORM) {
                return Err(Error::ZeroRow { row: i, norm: n });
            }
            embeddings.row_mut(i).iter_mut().zip(&y).for_each(|(e, v)| *e = v / n);
            caches.push(SampleCache { mlp, feature, proj_norm: n, tokens });
        }
        Ok(ForwardPass { modality, embeddings, caches })
    }

    /// Backpropagates `d embeddings` through normalization, head and
    /// encoder, accumulating into `grads`.
    pub fn backward(&self, pass: &ForwardPass, d_embeddings: &Matrix, grads: &mut Params) -> Result<()> {
        if d_embeddings.shape() != pass.embeddings.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} for embeddings {:?}",
                d_embeddings.shape(),
                pass.embeddings.shape()
            )));
        }
        let (head, head_grad) = match pass.modality {
            Modality::Image => (&self.params.heads.image, &mut grads.heads.image),
            Modality::Sequence => (&self.params.heads.sequence, &mut grads.heads.sequence),
            Modality::Text => (&self.params.heads.text, &mut grads.heads.text),
        };
        let mut d_features = Vec::with_capacity(pass.caches.len());
        for (i, cache) in pass.caches.iter().enumerate() {
            let out = pass.embeddings.row(i);
            let g = d_embeddings.row(i);
            // d/dy of y/|y| applied to g: (g − out (out·g)) / |y|
            let og: f64 = out.iter().zip(g).map(|(a, b)| a * b).sum();
            let dy: Vec<f64> = g.iter().zip(out).map(|(gv, ov)| (gv - ov * og) / cache.proj_norm).collect();
            add_outer(&mut head_grad.weight, &dy, &cache.feature);
            d_features.push(matvec_t(&head.weight, &dy));
        }
        let enc = &self.params.encoders;
        for (cache, d_feature) in pass.caches.iter().zip(&d_features) {
            match pass.modality {
                Modality::Image => {
                    enc.image.backward(&cache.mlp, d_feature, &mut grads.encoders.image);
                }
                Modality::Sequence => {
                    enc.sequence.backward(&cache.mlp, d_feature, &mut grads.encoders.sequence);
                }
                Modality::Text => {
                    let d_pooled = enc.text.backward(&cache.mlp, d_feature, &mut grads.encoders.text);
                    let inv = 1.0 / cache.tokens.len() as f64;
                    for &t in &cache.tokens {
                        for (gv, d) in grads.encoders.token_table.row_mut(t).iter_mut().zip(&d_pooled) {
                            *gv += d * inv;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Embeds every present payload of one modality, returning the record
    /// indices alongside the embedding rows.
    pub fn embed_records(&self, records: &[&Record], modality: Modality) -> Result<(Vec<usize>, Matrix)> {
        let mut idx = Vec::new();
        let mut rows = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let emb = match modality {
                Modality::Image => r.image_payload.as_deref().map(|p| self.embed(Payload::Image(p))),
                Modality::Sequence => r.sequence_payload.as_deref().map(|p| self.embed(Payload::Sequence(p))),
                Modality::Text => Some(self.embed_text(&r.text)),
            };
            if let Some(e) = emb {
                idx.push(i);
                rows.push(e?);
            }
        }
        Ok((idx, embeddings_matrix(rows, self.config.embed_dim)?))
    }

    pub fn save(&self, path: &Path, train_config: Option<serde_json::Value>) -> Result<()> {
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            train_config,
            model: self,
        };
        crate::io::write_atomic(path, serde_json::to_string(&ckpt)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Checkpoint::load(path)?.model)
    }
}

fn embeddings_matrix(rows: Vec<Vec<f64>>, dim: usize) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, dim));
    }
    Matrix::from_rows(&rows)
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    train_config: Option<serde_json::Value>,
    model: &'a Model,
}

/// Checkpoint file contents: a JSON object with `format`, `version`, the
/// optional training configuration and the model (config, vocabulary,
/// tensors with shapes).
#[derive(Debug, Clone, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub train_config: Option<serde_json::Value>,
    pub model: Model,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let header: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::SchemaVersionMismatch(format!("unreadable checkpoint: {e}")))?;
        if header.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT)
            || header.get("version").and_then(|v| v.as_u64()) != Some(u64::from(CHECKPOINT_VERSION))
        {
            return Err(Error::SchemaVersionMismatch(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}"
            )));
        }
        let ckpt: Checkpoint = serde_json::from_value(header)?;
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}
