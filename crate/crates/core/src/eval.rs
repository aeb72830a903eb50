//! Evaluation protocols over frozen models: retrieval recall, zero-shot,
//! few-shot linear probing, cross-modal zero-shot and embedding export.
//!
//! Ties are always broken toward the lowest index.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_text, pair_records, Dataset, PAIR_WINDOW_HOURS};
use crate::error::{Error, Result};
use crate::model::{Modality, Model};
use crate::numerics::{dot, l2_normalize_rows, similarity_matrix, Matrix};
use crate::rng;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
pub const FEW_SHOT_KS: [usize; 5] = [1, 2, 4, 8, 16];
pub const FEW_SHOT_REPEATS: usize = 300;
pub const PROBE_ITERATIONS: usize = 200;
pub const PROBE_LR: f64 = 0.1;

/// Rank of gallery item `g` for a query row: items with strictly higher
/// similarity, or equal similarity and lower index, come first.
fn in_top_k(sims: &[f64], g: usize, k: usize) -> bool {
    let s = sims[g];
    let ahead = sims
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < g))
        .count();
    ahead < k
}

/// Percentage of queries with a relevant gallery item in the top `k`.
pub fn recall_at_k(query: &Matrix, gallery: &Matrix, relevant: &[Vec<usize>], k: usize) -> Result<f64> {
    let sims = retrieval_sims(query, gallery, relevant)?;
    Ok(recall_from_sims(&sims, relevant, k))
}

fn retrieval_sims(query: &Matrix, gallery: &Matrix, relevant: &[Vec<usize>]) -> Result<Matrix> {
    if gallery.rows() == 0 {
        return Err(Error::EmptyGallery);
    }
    if relevant.len() != query.rows() {
        return Err(Error::LengthMismatch { left: query.rows(), right: relevant.len() });
    }
    if query.rows() == 0 {
        return Err(Error::InvalidConfig("no retrieval queries".into()));
    }
    for (q, rel) in relevant.iter().enumerate() {
        if rel.is_empty() {
            return Err(Error::InvalidConfig(format!("query {q} has no relevant items")));
        }
        if let Some(&bad) = rel.iter().find(|&&g| g >= gallery.rows()) {
            return Err(Error::IndexOutOfRange { what: "relevant gallery item", index: bad, len: gallery.rows() });
        }
    }
    similarity_matrix(query, gallery)
}

fn recall_from_sims(sims: &Matrix, relevant: &[Vec<usize>], k: usize) -> f64 {
    let hits = (0..sims.rows())
        .into_par_iter()
        .filter(|&q| relevant[q].iter().any(|&g| in_top_k(sims.row(q), g, k)))
        .count();
    100.0 * hits as f64 / sims.rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Recall percentage per K.
    pub recalls: BTreeMap<usize, f64>,
    pub rsum: f64,
}

impl RetrievalResult {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recalls.get(&k).copied()
    }
}

pub fn retrieval(query: &Matrix, gallery: &Matrix, relevant: &[Vec<usize>], ks: &[usize]) -> Result<RetrievalResult> {
    let sims = retrieval_sims(query, gallery, relevant)?;
    let recalls: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, recall_from_sims(&sims, relevant, k))).collect();
    let rsum = rsum(recalls.values().copied());
    Ok(RetrievalResult { recalls, rsum })
}

/// Sum of recall values.
pub fn rsum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().sum()
}

/// Modality-to-text retrieval: every record with the modality queries the
/// texts of all records; any gallery text equal to the query's own text
/// (after normalization) counts as relevant.
pub fn modality_to_text(model: &Model, ds: &Dataset, modality: Modality, ks: &[usize]) -> Result<RetrievalResult> {
    let records: Vec<_> = ds.records.iter().collect();
    let (idx, query) = model.embed_records(&records, modality)?;
    let (_, gallery) = model.embed_records(&records, Modality::Text)?;
    let norm: Vec<String> = ds.records.iter().map(|r| normalize_text(&r.text)).collect();
    let mut by_text: HashMap<&str, Vec<usize>> = HashMap::new();
    for (g, t) in norm.iter().enumerate() {
        by_text.entry(t.as_str()).or_default().push(g);
    }
    let relevant: Vec<Vec<usize>> = idx.iter().map(|&i| by_text[norm[i].as_str()].clone()).collect();
    retrieval(&query, &gallery, &relevant, ks)
}

/// Cross-modal retrieval over paired records in both directions. Queries
/// are the paired records of one modality; the gallery is every record
/// carrying the other modality. Returns (image→sequence, sequence→image).
pub fn cross_modal_retrieval(model: &Model, ds: &Dataset, ks: &[usize]) -> Result<(RetrievalResult, RetrievalResult)> {
    let pairs = pair_records(&ds.records, PAIR_WINDOW_HOURS);
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no paired records for cross-modal retrieval".into()));
    }
    let records: Vec<_> = ds.records.iter().collect();
    let (img_idx, img) = model.embed_records(&records, Modality::Image)?;
    let (seq_idx, seq) = model.embed_records(&records, Modality::Sequence)?;
    let img_row: HashMap<usize, usize> = img_idx.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let seq_row: HashMap<usize, usize> = seq_idx.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let q_img: Vec<usize> = pairs.iter().map(|p| img_row[&p.image_record]).collect();
    let q_seq: Vec<usize> = pairs.iter().map(|p| seq_row[&p.sequence_record]).collect();
    let i2s = retrieval(&img.select_rows(&q_img), &seq, &q_seq.iter().map(|&s| vec![s]).collect::<Vec<_>>(), ks)?;
    let s2i = retrieval(&seq.select_rows(&q_seq), &img, &q_img.iter().map(|&i| vec![i]).collect::<Vec<_>>(), ks)?;
    Ok((i2s, s2i))
}

/// Score used for best-checkpoint selection: modality-to-text RSUM for both
/// modalities plus cross-modal RSUM when the set has pairs.
pub fn validation_rsum(model: &Model, ds: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for m in [Modality::Image, Modality::Sequence] {
        if ds.records.iter().any(|r| match m {
            Modality::Image => r.image_payload.is_some(),
            _ => r.sequence_payload.is_some(),
        }) {
            total += modality_to_text(model, ds, m, &DEFAULT_KS)?.rsum;
        }
    }
    if !pair_records(&ds.records, PAIR_WINDOW_HOURS).is_empty() {
        let (a, b) = cross_modal_retrieval(model, ds, &DEFAULT_KS)?;
        total += a.rsum + b.rsum;
    }
    Ok(total)
}

/// Class prompts for zero-shot classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSpec {
    pub prompts: Vec<Vec<String>>,
    /// `None` uses every prompt; `Some(k)` samples k per class once per run.
    pub prompts_per_class_used: Option<usize>,
}

impl ZeroShotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::InvalidConfig("zero-shot spec has no classes".into()));
        }
        if let Some(c) = self.prompts.iter().position(|p| p.is_empty()) {
            return Err(Error::InvalidConfig(format!("class {c} has no prompts")));
        }
        if self.prompts_per_class_used == Some(0) {
            return Err(Error::InvalidConfig("prompts_per_class_used must be positive".into()));
        }
        Ok(())
    }

    /// Prompts actually used, sampled once from the "zero-shot-prompts" stream.
    pub fn resolve(&self, seed: u64) -> Result<Vec<Vec<String>>> {
        self.validate()?;
        let Some(k) = self.prompts_per_class_used else {
            return Ok(self.prompts.clone());
        };
        let mut r = rng::stream(seed, "zero-shot-prompts");
        Ok(self
            .prompts
            .iter()
            .map(|p| {
                if k >= p.len() {
                    p.clone()
                } else {
                    p.choose_multiple(&mut r, k).cloned().collect()
                }
            })
            .collect())
    }
}

/// Argmin over classes of mean cosine distance to the class's prompt
/// embeddings.
pub fn zero_shot_from_embeddings(emb: &Matrix, class_prompts: &[Matrix]) -> Result<Vec<usize>> {
    if class_prompts.is_empty() || class_prompts.iter().any(|p| p.rows() == 0) {
        return Err(Error::InvalidConfig("every class needs at least one prompt".into()));
    }
    for p in class_prompts {
        if p.cols() != emb.cols() {
            return Err(Error::ShapeMismatch(format!("prompt dim {} vs embedding dim {}", p.cols(), emb.cols())));
        }
    }
    Ok(emb
        .iter_rows()
        .map(|x| {
            let dists = class_prompts.iter().map(|p| {
                p.iter_rows().map(|t| 1.0 - dot(x, t)).sum::<f64>() / p.rows() as f64
            });
            argmin(dists)
        })
        .collect())
}

pub fn zero_shot_classify(emb: &Matrix, spec: &ZeroShotSpec, model: &Model, seed: u64) -> Result<Vec<usize>> {
    let prompts = spec.resolve(seed)?;
    let class_embs = prompts.iter().map(|p| model.embed_texts(p)).collect::<Result<Vec<_>>>()?;
    zero_shot_from_embeddings(emb, &class_embs)
}

fn argmin<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Unweighted mean of per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in preds.iter().zip(labels) {
        let e = per.entry(l).or_default();
        e.1 += 1;
        if p == l {
            e.0 += 1;
        }
    }
    if per.is_empty() {
        return Err(Error::InvalidConfig("balanced accuracy needs at least one label".into()));
    }
    let sum: f64 = per.values().map(|&(hit, tot)| hit as f64 / tot as f64).sum();
    Ok(100.0 * sum / per.len() as f64)
}

/// Standard deviation (percentage points) of balanced accuracy under
/// uniform random guessing among `class_counts.len()` classes.
pub fn chance_sigma(class_counts: &[usize]) -> f64 {
    let c = class_counts.len() as f64;
    let p = 1.0 / c;
    let var: f64 = class_counts.iter().map(|&n| p * (1.0 - p) / n as f64).sum();
    100.0 * var.sqrt() / c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    /// Balanced accuracy per repeat, in repeat order.
    pub per_repeat: Vec<f64>,
}

/// Multinomial logistic regression by full-batch gradient descent from a
/// zero start. Returns (weights C×d, biases).
pub fn fit_logistic(x: &Matrix, y: &[usize], num_classes: usize, iterations: usize, lr: f64) -> (Matrix, Vec<f64>) {
    let (n, d) = x.shape();
    let mut w = Matrix::zeros(num_classes, d);
    let mut b = vec![0.0; num_classes];
    let mut logits = vec![0.0; num_classes];
    for _ in 0..iterations {
        let mut gw = Matrix::zeros(num_classes, d);
        let mut gb = vec![0.0; num_classes];
        for (i, xi) in x.iter_rows().enumerate() {
            for c in 0..num_classes {
                logits[c] = dot(w.row(c), xi) + b[c];
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for c in 0..num_classes {
                let p = (logits[c] - mx).exp() / z;
                let g = (p - if y[i] == c { 1.0 } else { 0.0 }) / n as f64;
                gb[c] += g;
                for (a, &v) in gw.row_mut(c).iter_mut().zip(xi) {
                    *a += g * v;
                }
            }
        }
        gw.scale(lr);
        for (a, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *a -= g;
        }
        for (a, g) in b.iter_mut().zip(&gb) {
            *a -= lr * g;
        }
    }
    (w, b)
}

pub fn predict_logistic(w: &Matrix, b: &[f64], x: &Matrix) -> Vec<usize> {
    x.iter_rows()
        .map(|xi| argmin((0..w.rows()).map(|c| -(dot(w.row(c), xi) + b[c]))))
        .collect()
}

/// Few-shot linear probe: `repeats` random support sets of `k` samples per
/// class; balanced accuracy on the remainder. Repeat `r` draws from a
/// generator seeded by `seed + r`, so results do not depend on how many
/// repeats run or on thread scheduling.
pub fn few_shot_probe(emb: &Matrix, labels: &[usize], k: usize, repeats: usize, seed: u64) -> Result<FewShotResult> {
    if emb.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: emb.rows(), right: labels.len() });
    }
    if k == 0 || repeats == 0 {
        return Err(Error::InvalidConfig("k and repeats must be positive".into()));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let class_list: Vec<usize> = classes.iter().copied().collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); class_list.len()];
    for (i, l) in labels.iter().enumerate() {
        members[class_list.binary_search(l).expect("known class")].push(i);
    }
    for (ci, m) in members.iter().enumerate() {
        if m.len() < k {
            return Err(Error::InsufficientSamples { class: class_list[ci], available: m.len(), required: k });
        }
    }
    if members.iter().all(|m| m.len() == k) {
        return Err(Error::InsufficientSamples { class: class_list[0], available: k, required: k + 1 });
    }
    let per_repeat: Vec<f64> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut g = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed.wrapping_add(r as u64), "few-shot"));
            let mut support = Vec::new();
            let mut support_y = Vec::new();
            let mut query = Vec::new();
            let mut query_y = Vec::new();
            for (ci, m) in members.iter().enumerate() {
                let mut shuffled = m.clone();
                shuffled.shuffle(&mut g);
                for (j, &i) in shuffled.iter().enumerate() {
                    if j < k {
                        support.push(i);
                        support_y.push(ci);
                    } else {
                        query.push(i);
                        query_y.push(ci);
                    }
                }
            }
            let (w, b) = fit_logistic(&emb.select_rows(&support), &support_y, class_list.len(), PROBE_ITERATIONS, PROBE_LR);
            let preds = predict_logistic(&w, &b, &emb.select_rows(&query));
            balanced_accuracy(&preds, &query_y).expect("non-empty query set")
        })
        .collect();
    let mean = per_repeat.iter().sum::<f64>() / repeats as f64;
    let std = (per_repeat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / repeats as f64).sqrt();
    Ok(FewShotResult { k, mean, std, per_repeat })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossModalMode {
    /// Nearest re-normalized class-mean of the support embeddings.
    #[default]
    Prototype,
    /// Class of the single nearest support embedding.
    NearestNeighbor,
}

impl std::str::FromStr for CrossModalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prototype" => Ok(Self::Prototype),
            "1nn" | "nearest_neighbor" => Ok(Self::NearestNeighbor),
            other => Err(Error::InvalidConfig(format!("unknown cross-modal mode {other:?}"))),
        }
    }
}

/// Classifies queries of one modality against a labeled support set of
/// another; every class in `0..num_classes` needs support.
pub fn cross_modal_zero_shot(
    query: &Matrix,
    support: &Matrix,
    support_labels: &[usize],
    num_classes: usize,
    mode: CrossModalMode,
) -> Result<Vec<usize>> {
    if support.rows() != support_labels.len() {
        return Err(Error::LengthMismatch { left: support.rows(), right: support_labels.len() });
    }
    if query.cols() != support.cols() {
        return Err(Error::ShapeMismatch(format!("query dim {} vs support dim {}", query.cols(), support.cols())));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in support_labels {
        if l >= num_classes {
            return Err(Error::IndexOutOfRange { what: "support label", index: l, len: num_classes });
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClassSupport(c));
    }
    match mode {
        CrossModalMode::Prototype => {
            let mut protos = Matrix::zeros(num_classes, support.cols());
            for (row, &l) in support.iter_rows().zip(support_labels) {
                for (p, v) in protos.row_mut(l).iter_mut().zip(row) {
                    *p += v / counts[l] as f64;
                }
            }
            let protos = l2_normalize_rows(&protos)?;
            Ok(query
                .iter_rows()
                .map(|q| argmin(protos.iter_rows().map(|p| 1.0 - dot(q, p))))
                .collect())
        }
        CrossModalMode::NearestNeighbor => Ok(query
            .iter_rows()
            .map(|q| support_labels[argmin(support.iter_rows().map(|s| 1.0 - dot(q, s)))])
            .collect()),
    }
}

/// Balanced accuracy of cross-modal zero-shot: `support_ds` supplies
/// labeled embeddings of the modality other than `query_modality`, and the
/// `query_ds` records carrying `query_modality` are classified.
pub fn cross_modal_accuracy(
    model: &Model,
    support_ds: &Dataset,
    query_ds: &Dataset,
    query_modality: Modality,
    mode: CrossModalMode,
) -> Result<f64> {
    let support_modality = match query_modality {
        Modality::Image => Modality::Sequence,
        Modality::Sequence => Modality::Image,
        Modality::Text => return Err(Error::InvalidConfig("cross-modal queries must be image or sequence".into())),
    };
    let s_records: Vec<_> = support_ds.records.iter().collect();
    let (s_idx, support) = model.embed_records(&s_records, support_modality)?;
    let s_labels: Vec<usize> = s_idx.iter().map(|&i| support_ds.records[i].class_id).collect();
    let q_records: Vec<_> = query_ds.records.iter().collect();
    let (q_idx, query) = model.embed_records(&q_records, query_modality)?;
    if q_idx.is_empty() {
        return Err(Error::InvalidConfig("no cross-modal queries".into()));
    }
    let labels: Vec<usize> = q_idx.iter().map(|&i| query_ds.records[i].class_id).collect();
    let preds = cross_modal_zero_shot(&query, &support, &s_labels, support_ds.meta.num_classes(), mode)?;
    balanced_accuracy(&preds, &labels)
}

/// Writes one CSV row per present image or sequence payload:
/// `record_id,modality,class,e0,...` with 9 significant digits.
pub fn export_embeddings(ds: &Dataset, model: &Model, path: &Path) -> Result<usize> {
    let d = model.embed_dim();
    let mut header = vec!["record_id".to_string(), "modality".into(), "class".into()];
    header.extend((0..d).map(|j| format!("e{j}")));
    let mut buf = Vec::new();
    let mut rows = 0;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&header)?;
        let records: Vec<_> = ds.records.iter().collect();
        let (img_idx, img) = model.embed_records(&records, Modality::Image)?;
        let (seq_idx, seq) = model.embed_records(&records, Modality::Sequence)?;
        let mut entries: Vec<(usize, Modality, &[f64])> = img_idx
            .iter()
            .zip(img.iter_rows())
            .map(|(&i, e)| (i, Modality::Image, e))
            .chain(seq_idx.iter().zip(seq.iter_rows()).map(|(&i, e)| (i, Modality::Sequence, e)))
            .collect();
        entries.sort_by_key(|&(i, m, _)| (i, m == Modality::Sequence));
        for (i, m, e) in entries {
            let r = &ds.records[i];
            let mut fields = vec![r.record_id.clone(), m.as_str().to_string(), r.class_id.to_string()];
            fields.extend(e.iter().map(|v| format!("{v:.8e}")));
            w.write_record(&fields)?;
            rows += 1;
        }
        w.flush()?;
    }
    crate::io::write_atomic(path, &buf)?;
    Ok(rows)
}

/// Metrics keyed task → dataset → metric, serialized as pretty JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport(pub BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>);

impl EvalReport {
    pub fn insert(&mut self, task: &str, dataset: &str, metric: &str, value: f64) {
        self.0
            .entry(task.to_string())
            .or_default()
            .entry(dataset.to_string())
            .or_default()
            .insert(metric.to_string(), value);
    }

    pub fn get(&self, task: &str, dataset: &str, metric: &str) -> Option<f64> {
        self.0.get(task)?.get(dataset)?.get(metric).copied()
    }

    pub fn insert_retrieval(&mut self, task: &str, dataset: &str, r: &RetrievalResult) {
        for (k, v) in &r.recalls {
            self.insert(task, dataset, &format!("R@{k}"), *v);
        }
        self.insert(task, dataset, "RSUM", r.rsum);
    }

    pub fn merge(&mut self, other: &EvalReport) {
        for (task, sets) in &other.0 {
            for (set, metrics) in sets {
                for (m, v) in metrics {
                    self.insert(task, set, m, *v);
                }
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        crate::io::write_atomic(path, s.as_bytes())
    }

    /// Merges into an existing report file (created when absent).
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut base = if path.exists() { Self::load(path)? } else { Self::default() };
        base.merge(self);
        base.save(path)
    }
}
