//! Keyword labeling of ECG report text with disallowed-content exclusion.
//!
//! Matching is case-insensitive substring search. Disallowed phrases are
//! checked first; classes are then tried in rule-set order and the first
//! class with any keyword hit wins, so a keyword listed under two classes
//! ("PVC") resolves to the earlier one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_RULES: &str = include_str!("../../assets/ecg_label_rules.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelClass {
    pub name: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRuleSet {
    pub classes: Vec<LabelClass>,
    pub disallowed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    DisallowedContent,
    NoKeyword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelOutcome {
    /// Index into [`LabelRuleSet::classes`].
    Class(usize),
    Excluded(ExclusionReason),
}

impl Default for LabelRuleSet {
    /// NORM, HYP, STTC, MI, CD keyword lists and the poor-quality exclusions.
    fn default() -> Self {
        Self::from_json(DEFAULT_RULES).expect("bundled rule set is valid")
    }
}

impl LabelRuleSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Self = serde_json::from_str(text)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("rule set has no classes".into()));
        }
        for c in &self.classes {
            if c.keywords.is_empty() || c.keywords.iter().any(String::is_empty) {
                return Err(Error::InvalidConfig(format!("class {} needs non-empty keywords", c.name)));
            }
        }
        Ok(())
    }

    pub fn class_name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(|c| c.name.as_str())
    }
}

pub fn label_text(text: &str, rules: &LabelRuleSet) -> LabelOutcome {
    let haystack = text.to_lowercase();
    let hit = |needle: &String| haystack.contains(&needle.to_lowercase());
    if rules.disallowed.iter().any(hit) {
        return LabelOutcome::Excluded(ExclusionReason::DisallowedContent);
    }
    rules
        .classes
        .iter()
        .position(|c| c.keywords.iter().any(hit))
        .map_or(LabelOutcome::Excluded(ExclusionReason::NoKeyword), LabelOutcome::Class)
}
