//! Prompt and report text generators.

use crate::error::{Error, Result};

/// Placeholder substituted by [`make_prompt`].
pub const LABEL_PLACEHOLDER: &str = "{LABEL}";

/// Zero-shot template for ECG labels.
pub const ECG_PROMPT_TEMPLATE: &str = "This ECG shows {LABEL}.";

/// Substitutes `label` into every `{LABEL}` of `template`.
pub fn make_prompt(template: &str, label: &str) -> Result<String> {
    if !template.contains(LABEL_PLACEHOLDER) {
        return Err(Error::MissingField("{LABEL} placeholder"));
    }
    if label.is_empty() {
        return Err(Error::MissingField("label"));
    }
    Ok(template.replace(LABEL_PLACEHOLDER, label))
}

/// Machine-report text: `ECG presents {r0}. Additional findings include the
/// following: {r1, ..., rk}.` A single report yields only the first sentence.
pub fn generate_ecg_report<S: AsRef<str>>(reports: &[S]) -> Result<String> {
    let (first, rest) = reports.split_first().ok_or(Error::MissingField("report_0"))?;
    if first.as_ref().is_empty() {
        return Err(Error::MissingField("report_0"));
    }
    let mut out = format!("ECG presents {}.", first.as_ref());
    if !rest.is_empty() {
        let joined: Vec<&str> = rest.iter().map(AsRef::as_ref).collect();
        out.push_str(" Additional findings include the following: ");
        out.push_str(&joined.join(", "));
        out.push('.');
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DemographicFields {
    pub gender: String,
    pub anchor_age: String,
    pub admission_type: String,
    pub admission_location: String,
}

/// `{gender} patient, who is at the age of {anchor_age}, was admitted as
/// {admission_type}. Location: {admission_location}.`
pub fn generate_demographics(f: &DemographicFields) -> Result<String> {
    for (name, v) in [
        ("gender", &f.gender),
        ("anchor_age", &f.anchor_age),
        ("admission_type", &f.admission_type),
        ("admission_location", &f.admission_location),
    ] {
        if v.is_empty() {
            return Err(Error::MissingField(name));
        }
    }
    Ok(format!(
        "{} patient, who is at the age of {}, was admitted as {}. Location: {}.",
        f.gender, f.anchor_age, f.admission_type, f.admission_location
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_substitution() {
        assert_eq!(
            make_prompt(ECG_PROMPT_TEMPLATE, "atrial fibrillation").unwrap(),
            "This ECG shows atrial fibrillation."
        );
        assert!(matches!(make_prompt("no slot", "x"), Err(Error::MissingField(_))));
        assert!(make_prompt(ECG_PROMPT_TEMPLATE, "").is_err());
    }

    #[test]
    fn report_formats() {
        assert_eq!(
            generate_ecg_report(&["r0", "r1", "r2"]).unwrap(),
            "ECG presents r0. Additional findings include the following: r1, r2."
        );
        assert_eq!(generate_ecg_report(&["sinus rhythm"]).unwrap(), "ECG presents sinus rhythm.");
        assert!(generate_ecg_report::<&str>(&[]).is_err());
    }

    #[test]
    fn demographics_format() {
        let f = DemographicFields {
            gender: "F".into(),
            anchor_age: "63".into(),
            admission_type: "EW EMER.".into(),
            admission_location: "EMERGENCY ROOM".into(),
        };
        assert_eq!(
            generate_demographics(&f).unwrap(),
            "F patient, who is at the age of 63, was admitted as EW EMER.. Location: EMERGENCY ROOM."
        );
        let missing = DemographicFields { gender: String::new(), ..f };
        assert!(matches!(generate_demographics(&missing), Err(Error::MissingField("gender"))));
    }
}
