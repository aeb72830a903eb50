//! Records, datasets and their file format, cross-modal pairing, and text
//! utilities.
//!
//! # Dataset file
//!
//! JSON lines. The first line is a header object:
//!
//! ```text
//! {"format":"tribind-dataset","version":1,"meta":{...},"num_records":N}
//! ```
//!
//! followed by one [`Record`] object per line, field names as in the struct.
//! Payloads are inline number arrays (row-major grids), timestamps are
//! integer seconds UTC.

mod labels;
mod synthetic;
mod templates;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use labels::{label_text, ExclusionReason, LabelClass, LabelOutcome, LabelRuleSet};
pub use synthetic::{class_phrases, class_prompt_pool, generate_synthetic, SyntheticConfig};
pub use templates::{
    generate_demographics, generate_ecg_report, make_prompt, DemographicFields, ECG_PROMPT_TEMPLATE,
    LABEL_PLACEHOLDER,
};

pub const DATASET_FORMAT: &str = "tribind-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Words kept by [`truncate_text`].
pub const MAX_TEXT_WORDS: usize = 100;

/// Default pairing window for subject-level matching.
pub const PAIR_WINDOW_HOURS: f64 = 24.0;

/// One patient case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: String,
    pub subject_id: String,
    pub visit_id: Option<String>,
    pub class_id: usize,
    /// Row-major `image_shape` grid.
    pub image_payload: Option<Vec<f64>>,
    /// Row-major `sequence_shape` (time steps x channels) array.
    pub sequence_payload: Option<Vec<f64>>,
    pub text: String,
    pub image_time: Option<i64>,
    pub sequence_time: Option<i64>,
    pub outcome_readmit: Option<bool>,
    pub outcome_mortality: Option<bool>,
}

impl Record {
    pub fn has_both(&self) -> bool {
        self.image_payload.is_some() && self.sequence_payload.is_some()
    }

    fn validate(&self, meta: &DatasetMeta) -> Result<()> {
        if self.image_payload.is_none() && self.sequence_payload.is_none() {
            return Err(Error::InvalidConfig(format!("record {} has no payload", self.record_id)));
        }
        if self.text.trim().is_empty() {
            return Err(Error::MissingField("text"));
        }
        if self.image_payload.is_some() && self.image_time.is_none() {
            return Err(Error::MissingField("image_time"));
        }
        if self.sequence_payload.is_some() && self.sequence_time.is_none() {
            return Err(Error::MissingField("sequence_time"));
        }
        if self.class_id >= meta.num_classes() {
            return Err(Error::IndexOutOfRange { what: "classes", index: self.class_id, len: meta.num_classes() });
        }
        for (what, payload, len) in [
            ("image_payload", &self.image_payload, meta.image_len()),
            ("sequence_payload", &self.sequence_payload, meta.sequence_len()),
        ] {
            if let Some(p) = payload {
                if p.len() != len {
                    return Err(Error::ShapeMismatch(format!(
                        "record {}: {what} has {} values, expected {len}",
                        self.record_id,
                        p.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class_names: Vec<String>,
    /// `[height, width]`.
    pub image_shape: [usize; 2],
    /// `[time steps, channels]`.
    pub sequence_shape: [usize; 2],
}

impl DatasetMeta {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_len(&self) -> usize {
        self.image_shape[0] * self.image_shape[1]
    }

    pub fn sequence_len(&self) -> usize {
        self.sequence_shape[0] * self.sequence_shape[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    meta: DatasetMeta,
    num_records: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.records.iter().try_for_each(|r| r.validate(&self.meta))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Deterministic shuffled split into train / validation / test index
    /// lists with the given fractions for the first two.
    pub fn split(&self, train_frac: f64, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, "split"));
        let n_train = (train_frac * self.len() as f64).round() as usize;
        let n_val = ((val_frac * self.len() as f64).round() as usize).min(self.len() - n_train.min(self.len()));
        let test = idx.split_off((n_train + n_val).min(idx.len()));
        let val = idx.split_off(n_train.min(idx.len()));
        (idx, val, test)
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        meta: ds.meta.clone(),
        num_records: ds.len(),
    };
    serde_json::to_writer(&mut buf, &header)?;
    buf.push(b'\n');
    for r in &ds.records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::SchemaVersionMismatch("empty dataset file".into()))?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::SchemaVersionMismatch(format!("unreadable header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::SchemaVersionMismatch(format!(
            "found {} v{}, expected {DATASET_FORMAT} v{DATASET_VERSION}",
            header.format, header.version
        )));
    }
    let mut records = Vec::with_capacity(header.num_records);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    if records.len() != header.num_records {
        return Err(Error::LengthMismatch { left: records.len(), right: header.num_records });
    }
    let ds = Dataset { meta: header.meta, records };
    ds.validate()?;
    Ok(ds)
}

/// First 100 whitespace-delimited words joined by single spaces.
pub fn truncate_text(text: &str) -> String {
    text.split_whitespace().take(MAX_TEXT_WORDS).collect::<Vec<_>>().join(" ")
}

/// Key used to decide whether two texts are identical: truncated,
/// lowercased, whitespace collapsed.
pub fn normalize_text(text: &str) -> String {
    truncate_text(text).to_lowercase()
}

/// Dense group ids over texts (first occurrence order).
pub fn text_group_ids<S: AsRef<str>>(texts: &[S]) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    texts
        .iter()
        .map(|t| {
            let next = seen.len();
            *seen.entry(normalize_text(t.as_ref())).or_insert(next)
        })
        .collect()
}

/// A cross-modal pair: image payload of one record with the sequence
/// payload of another (possibly the same) record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordPair {
    pub image_record: usize,
    pub sequence_record: usize,
}

/// Pairs image-bearing records with sequence-bearing records.
///
/// Two records pair when they share a visit id, or failing that share a
/// subject id with acquisition times at most `window_hours` apart. Each
/// record joins at most one pair: candidates are taken greedily, visit
/// matches first, then by earliest acquisition time, then smallest time gap,
/// with record ids breaking remaining ties.
pub fn pair_records(records: &[Record], window_hours: f64) -> Vec<RecordPair> {
    let window = window_hours * 3600.0;
    struct Candidate<'a> {
        visit_match: bool,
        earliest: i64,
        gap: i64,
        ids: (&'a str, &'a str),
        pair: RecordPair,
    }
    let mut cands = Vec::new();
    for (i, a) in records.iter().enumerate() {
        let (Some(_), Some(ta)) = (&a.image_payload, a.image_time) else { continue };
        for (j, b) in records.iter().enumerate() {
            let (Some(_), Some(tb)) = (&b.sequence_payload, b.sequence_time) else { continue };
            let visit_match = matches!((&a.visit_id, &b.visit_id), (Some(x), Some(y)) if x == y);
            let gap = (ta - tb).abs();
            if visit_match || (a.subject_id == b.subject_id && gap as f64 <= window) {
                let (x, y) = (a.record_id.as_str(), b.record_id.as_str());
                cands.push(Candidate {
                    visit_match,
                    earliest: ta.min(tb),
                    gap,
                    ids: if x <= y { (x, y) } else { (y, x) },
                    pair: RecordPair { image_record: i, sequence_record: j },
                });
            }
        }
    }
    cands.sort_by(|p, q| {
        q.visit_match
            .cmp(&p.visit_match)
            .then(p.earliest.cmp(&q.earliest))
            .then(p.gap.cmp(&q.gap))
            .then(p.ids.cmp(&q.ids))
            .then_with(|| {
                let id = |c: &Candidate| records[c.pair.image_record].record_id.as_str();
                id(p).cmp(id(q))
            })
    });
    let mut used = vec![false; records.len()];
    let mut out = Vec::new();
    for c in cands {
        let RecordPair { image_record: i, sequence_record: j } = c.pair;
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        out.push(c.pair);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, subject: &str, visit: Option<&str>, image_t: Option<i64>, seq_t: Option<i64>) -> Record {
        Record {
            record_id: id.into(),
            subject_id: subject.into(),
            visit_id: visit.map(Into::into),
            class_id: 0,
            image_payload: image_t.map(|_| vec![0.0]),
            sequence_payload: seq_t.map(|_| vec![0.0]),
            text: "x".into(),
            image_time: image_t,
            sequence_time: seq_t,
            outcome_readmit: None,
            outcome_mortality: None,
        }
    }

    const H: i64 = 3600;

    #[test]
    fn visit_id_overrides_window() {
        let r = [rec("a", "s1", Some("v1"), Some(0), None), rec("b", "s1", Some("v1"), None, Some(30 * H))];
        assert_eq!(pair_records(&r, 24.0), vec![RecordPair { image_record: 0, sequence_record: 1 }]);
    }

    #[test]
    fn subject_window_boundaries() {
        let inside = [rec("a", "s1", None, Some(0), None), rec("b", "s1", None, None, Some(23 * H))];
        assert_eq!(pair_records(&inside, 24.0).len(), 1);
        let outside = [rec("a", "s1", None, Some(0), None), rec("b", "s1", None, None, Some(25 * H))];
        assert!(pair_records(&outside, 24.0).is_empty());
        let other_subject = [rec("a", "s1", None, Some(0), None), rec("b", "s2", None, None, Some(H))];
        assert!(pair_records(&other_subject, 24.0).is_empty());
    }

    #[test]
    fn each_record_pairs_once_earliest_first() {
        let r = [
            rec("a", "s1", None, Some(10 * H), None),
            rec("b", "s1", None, None, Some(0)),
            rec("c", "s1", None, Some(20 * H), None),
        ];
        let pairs = pair_records(&r, 24.0);
        assert_eq!(pairs, vec![RecordPair { image_record: 0, sequence_record: 1 }]);
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_text("a  b\tc"), "a b c");
        let long: Vec<String> = (0..105).map(|i| format!("w{i}")).collect();
        assert_eq!(truncate_text(&long.join(" ")).split(' ').count(), 100);
        assert_eq!(truncate_text(""), "");
    }

    #[test]
    fn group_ids_normalize_case_and_spacing() {
        assert_eq!(text_group_ids(&["Normal ECG", "normal  ecg", "other"]), vec![0, 0, 1]);
    }

    #[test]
    fn dataset_round_trip_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let meta = DatasetMeta { class_names: vec!["A".into()], image_shape: [1, 1], sequence_shape: [1, 1] };
        let empty = Dataset { meta: meta.clone(), records: vec![] };
        save_dataset(&empty, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), empty);

        let mut r = rec("a", "s", None, Some(1), None);
        r.image_payload = Some(vec![0.1 + 0.2]);
        let one = Dataset { meta, records: vec![r] };
        save_dataset(&one, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), one);

        fs::write(&path, "{\"format\":\"tribind-dataset\",\"version\":7}\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::SchemaVersionMismatch(_))));
        fs::write(&path, "garbage\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::SchemaVersionMismatch(_))));
    }
}
