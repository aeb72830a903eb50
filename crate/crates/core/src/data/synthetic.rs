//! Synthetic tri-modal patient cases.
//!
//! Each record draws a latent vector `z = center[class] + spread * ε`. The
//! image grid and the sequence array are fixed linear maps of `z` plus
//! Gaussian noise, so both payloads of a record share instance-level
//! signal. Text carries only the class: either a shared per-class prompt
//! (duplicates across records) or a class finding followed by random filler
//! findings (unique). Outcomes are signs of fixed linear functions of
//! `z − center[class]`, which the payloads see but the text does not.
//!
//! Image maps are mirror-symmetric across the vertical axis, so a
//! horizontal flip changes only the noise.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{generate_ecg_report, Dataset, DatasetMeta, Record};
use crate::error::{Error, Result};
use crate::rng;

const BASE_TIME: i64 = 1_600_000_000;
const HOUR: i64 = 3600;

/// Class names for the first five classes; further classes are numbered.
const CLASS_NAMES: [&str; 5] = ["NORM", "HYP", "STTC", "MI", "CD"];

/// Findings that the default rule set labels as the matching class.
const CLASS_PHRASES: [&[&str]; 5] = [
    &["normal ecg", "within normal limits", "normal heart tracing", "no issues found"],
    &["left ventricular hypertrophy", "left atrial enlargement", "voltage overload", "biventricular hypertrophy"],
    &["st elevation", "t wave changes", "nonspecific t abnormalities", "st changes"],
    &["inferior infarct", "anterior infarct", "septal infarct", "myocardial ischemia"],
    &["prolonged pr interval", "conduction delay", "left axis deviation", "bundle branch block"],
];

/// Neutral findings that match no keyword and no disallowed phrase.
const FILLER: [&str; 30] = [
    "sinus rhythm", "heart rate", "regular rhythm", "qrs axis", "qt interval", "low voltage",
    "baseline wander", "limb leads", "precordial leads", "rate stable", "unchanged tracing",
    "compared with prior", "prior study", "rhythm strip", "sinus arrhythmia", "short qt",
    "narrow qrs", "r wave progression", "p wave normal axis", "clockwise rotation",
    "early repolarization", "rsr pattern", "u waves", "tall r waves", "notched p", "heart rhythm",
    "regular rate", "sinus tachycardia", "sinus bradycardia", "axis shift",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_records: usize,
    pub num_classes: usize,
    /// Fraction of records carrying both payloads.
    pub pairing_rate: f64,
    /// Fraction of records whose text comes from the shared per-class pool.
    pub duplicate_text_rate: f64,
    pub noise_sigma: f64,
    pub image_shape: [usize; 2],
    pub sequence_shape: [usize; 2],
    pub latent_dim: usize,
    /// Within-class latent spread relative to unit-variance class centers.
    pub instance_spread: f64,
    /// Size of the shared prompt pool per class.
    pub shared_prompts_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_records: 2000,
            num_classes: 4,
            pairing_rate: 0.25,
            duplicate_text_rate: 0.3,
            noise_sigma: 0.3,
            image_shape: [8, 8],
            sequence_shape: [16, 4],
            latent_dim: 8,
            instance_spread: 1.0,
            shared_prompts_per_class: 2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.pairing_rate) {
            return bad("pairing_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.duplicate_text_rate) {
            return bad("duplicate_text_rate must lie in [0, 1]");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if self.image_shape.contains(&0) || self.sequence_shape.contains(&0) || self.latent_dim == 0 {
            return bad("payload and latent dimensions must be positive");
        }
        if self.shared_prompts_per_class == 0 {
            return bad("shared_prompts_per_class must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.instance_spread >= 0.0) {
            return bad("noise_sigma and instance_spread must be non-negative");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|c| CLASS_NAMES.get(c).map_or_else(|| format!("CLASS{c}"), |s| s.to_string()))
            .collect()
    }
}

/// Findings vocabulary used for class `class` texts.
pub fn class_phrases(class: usize) -> Vec<String> {
    match CLASS_PHRASES.get(class) {
        Some(p) => p.iter().map(|s| s.to_string()).collect(),
        None => (0..4).map(|k| format!("pattern{class} finding{k}")).collect(),
    }
}

/// `count` distinct report-style prompts for a class, used as zero-shot
/// prompt pools. The first `len(phrases)` are single-finding reports.
pub fn class_prompt_pool(class: usize, count: usize) -> Vec<String> {
    let phrases = class_phrases(class);
    (0..count)
        .map(|k| {
            let main = &phrases[k % phrases.len()];
            let extra = k / phrases.len();
            if extra == 0 {
                generate_ecg_report(&[main.as_str()]).expect("non-empty")
            } else {
                let filler = FILLER[(extra - 1) % FILLER.len()];
                generate_ecg_report(&[main.as_str(), filler]).expect("non-empty")
            }
        })
        .collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// `rows x latent` map scaled by `1/sqrt(latent)`.
fn linear_map(rng: &mut ChaCha8Rng, rows: usize, latent: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (latent as f64).sqrt();
    (0..rows).map(|_| gaussian_vec(rng, latent).into_iter().map(|v| v * s).collect()).collect()
}

fn apply(map: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    map.iter().map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.num_records;
    let c = cfg.num_classes;
    let k = cfg.latent_dim;
    let mut structure = rng::stream(cfg.seed, "data-structure");
    let mut sample = rng::stream(cfg.seed, "data-samples");

    let centers: Vec<Vec<f64>> = (0..c).map(|_| gaussian_vec(&mut structure, k)).collect();
    let [h, w] = cfg.image_shape;
    let mut image_map = linear_map(&mut structure, h * w, k);
    for r in 0..h {
        for col in 0..w / 2 {
            image_map[r * w + (w - 1 - col)] = image_map[r * w + col].clone();
        }
    }
    let sequence_map = linear_map(&mut structure, cfg.sequence_shape[0] * cfg.sequence_shape[1], k);
    let mortality_dir = gaussian_vec(&mut structure, k);
    let readmit_dir = gaussian_vec(&mut structure, k);

    let shared_pool: Vec<Vec<String>> = (0..c)
        .map(|class| {
            let phrases = class_phrases(class);
            (0..cfg.shared_prompts_per_class)
                .map(|j| {
                    let p = &phrases[j % phrases.len()];
                    if j < phrases.len() {
                        generate_ecg_report(&[p.as_str()]).expect("non-empty")
                    } else {
                        generate_ecg_report(&[p.as_str(), FILLER[j % FILLER.len()]]).expect("non-empty")
                    }
                })
                .collect()
        })
        .collect();

    // Balanced labels, then random assignment of pairing and duplication.
    let mut classes: Vec<usize> = (0..n).map(|i| i % c).collect();
    classes.shuffle(&mut sample);
    let n_paired = (cfg.pairing_rate * n as f64).floor() as usize;
    let n_dup = (cfg.duplicate_text_rate * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample);
    let mut paired = vec![false; n];
    order[..n_paired].iter().for_each(|&i| paired[i] = true);
    order.shuffle(&mut sample);
    let mut duplicated = vec![false; n];
    order[..n_dup].iter().for_each(|&i| duplicated[i] = true);

    let mut used_texts: HashSet<String> = shared_pool.iter().flatten().cloned().collect();
    let mut records = Vec::with_capacity(n);
    let mut single_count = 0usize;
    for i in 0..n {
        let class = classes[i];
        let eps = gaussian_vec(&mut sample, k);
        let dev: Vec<f64> = eps.iter().map(|e| e * cfg.instance_spread).collect();
        let z: Vec<f64> = centers[class].iter().zip(&dev).map(|(m, d)| m + d).collect();
        let mut noisy = |map: &[Vec<f64>]| -> Vec<f64> {
            apply(map, &z)
                .into_iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut sample);
                    v + cfg.noise_sigma * e
                })
                .collect()
        };
        let image = noisy(&image_map);
        let sequence = noisy(&sequence_map);

        let (has_image, has_sequence) = if paired[i] {
            (true, true)
        } else {
            single_count += 1;
            if single_count % 2 == 1 { (true, false) } else { (false, true) }
        };

        let t0 = BASE_TIME + i as i64 * 72 * HOUR;
        let offset = sample.random_range(-12 * HOUR..=12 * HOUR);
        let visit_id = if !paired[i] || sample.random_bool(0.5) { Some(format!("V{i:06}")) } else { None };

        let text = if duplicated[i] {
            shared_pool[class].choose(&mut sample).expect("non-empty pool").clone()
        } else {
            let phrases = class_phrases(class);
            loop {
                let main = phrases.choose(&mut sample).expect("non-empty").as_str();
                let mut parts = vec![main];
                parts.extend(FILLER.choose_multiple(&mut sample, 5).copied());
                let t = generate_ecg_report(&parts)?;
                if used_texts.insert(t.clone()) {
                    break t;
                }
            }
        };

        let dot = |d: &[f64]| d.iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>();
        records.push(Record {
            record_id: format!("R{i:06}"),
            subject_id: format!("S{i:06}"),
            visit_id,
            class_id: class,
            image_payload: has_image.then_some(image),
            sequence_payload: has_sequence.then_some(sequence),
            text,
            image_time: has_image.then_some(t0),
            sequence_time: has_sequence.then_some(t0 + offset),
            outcome_readmit: Some(dot(&readmit_dir) > 0.0),
            outcome_mortality: Some(dot(&mortality_dir) > 0.0),
        });
    }

    let meta = DatasetMeta {
        class_names: cfg.class_names(),
        image_shape: cfg.image_shape,
        sequence_shape: cfg.sequence_shape,
    };
    let ds = Dataset { meta, records };
    ds.validate()?;
    Ok(ds)
}
