use serde::{Deserialize, Serialize};

use crate::lang_filter::is_arabic_letter;
use crate::protect::{check_placeholders, strip_placeholders, MaskedText};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValidationStatus {
    Valid,
    PlaceholderLoss,
    ScriptRatioLow,
    EmptyOutput,
    BackendError,
}

impl ValidationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationStatus::Valid => "Valid",
            ValidationStatus::PlaceholderLoss => "PlaceholderLoss",
            ValidationStatus::ScriptRatioLow => "ScriptRatioLow",
            ValidationStatus::EmptyOutput => "EmptyOutput",
            ValidationStatus::BackendError => "BackendError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub status: ValidationStatus,
    pub arabic_ratio: f64,
    /// Which placeholder broke, or the backend error text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ValidationOutcome {
    pub fn is_valid(&self) -> bool {
        self.status == ValidationStatus::Valid
    }

    pub(crate) fn backend_error(detail: String) -> Self {
        Self {
            status: ValidationStatus::BackendError,
            arabic_ratio: 0.0,
            detail: Some(detail),
        }
    }
}

/// Share of Arabic letters among all letters outside placeholders; 0 when
/// there are no letters at all.
pub fn arabic_ratio(text: &str) -> f64 {
    let visible = strip_placeholders(text);
    let (mut arabic, mut letters) = (0usize, 0usize);
    for c in visible.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if is_arabic_letter(c) {
            arabic += 1;
        }
    }
    if letters == 0 {
        0.0
    } else {
        arabic as f64 / letters as f64
    }
}

/// Checks, in order: non-empty output, every placeholder exactly once, and
/// the Arabic-letter ratio against `threshold`.
pub fn validate_translation(masked: &MaskedText, output: &str, threshold: f64) -> ValidationOutcome {
    if output.trim().is_empty() {
        return ValidationOutcome {
            status: ValidationStatus::EmptyOutput,
            arabic_ratio: 0.0,
            detail: None,
        };
    }
    if let Err(e) = check_placeholders(masked, output) {
        return ValidationOutcome {
            status: ValidationStatus::PlaceholderLoss,
            arabic_ratio: 0.0,
            detail: Some(e.to_string()),
        };
    }
    let ratio = arabic_ratio(output);
    let status = if ratio >= threshold {
        ValidationStatus::Valid
    } else {
        ValidationStatus::ScriptRatioLow
    };
    ValidationOutcome {
        status,
        arabic_ratio: ratio,
        detail: None,
    }
}
