use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Language;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("language detector unavailable: {0}")]
pub struct DetectorUnavailable(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorVerdict {
    pub language: Language,
    pub confidence: f64,
}

impl DetectorVerdict {
    pub fn unknown() -> Self {
        Self {
            language: Language::Unknown,
            confidence: 0.0,
        }
    }
}

/// Which detector produced a verdict, and whether a remote call failed over.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub verdict: DetectorVerdict,
    pub fell_back: bool,
}

pub const DETECTOR_URL_ENV: &str = "GEMFORGE_DETECTOR_URL";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorBackend {
    #[default]
    Heuristic,
    Remote {
        endpoint: String,
        timeout_secs: u64,
    },
}

impl DetectorBackend {
    /// Remote when the endpoint env var is set, heuristic otherwise.
    pub fn from_env() -> Self {
        match std::env::var(DETECTOR_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => DetectorBackend::Remote {
                endpoint: url,
                timeout_secs: 10,
            },
            _ => DetectorBackend::Heuristic,
        }
    }

    pub fn detect(&self, text: &str) -> Detection {
        match self {
            DetectorBackend::Heuristic => Detection {
                verdict: detect_heuristic(text),
                fell_back: false,
            },
            DetectorBackend::Remote {
                endpoint,
                timeout_secs,
            } => match detect_remote(endpoint, Duration::from_secs(*timeout_secs), text) {
                Ok(verdict) => Detection {
                    verdict,
                    fell_back: false,
                },
                Err(_) => Detection {
                    verdict: detect_heuristic(text),
                    fell_back: true,
                },
            },
        }
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    language: String,
    score: f64,
}

/// POSTs `{"text": ..}` and expects `{"language": iso-code, "score": number}`.
pub fn detect_remote(
    endpoint: &str,
    timeout: Duration,
    text: &str,
) -> Result<DetectorVerdict, DetectorUnavailable> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let resp: RemoteResponse = agent
        .post(endpoint)
        .send_json(RemoteRequest { text })
        .map_err(|e| DetectorUnavailable(e.to_string()))?
        .body_mut()
        .read_json()
        .map_err(|e| DetectorUnavailable(e.to_string()))?;
    let score = if resp.score.is_finite() {
        resp.score.clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(DetectorVerdict {
        language: Language::parse(&resp.language),
        confidence: score,
    })
}

const ENGLISH: &[&str] = &[
    "the", "a", "an", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "by",
    "from", "is", "are", "was", "were", "be", "been", "it", "this", "that", "these", "those",
    "i", "you", "he", "she", "we", "they", "not", "what", "which", "who", "how", "can", "do",
    "does", "have", "has", "will", "would", "should", "my", "your", "their", "its", "as",
    "if", "so", "about", "over", "into", "than", "then", "there", "when", "where", "why",
    // imperative openers common in instructions
    "explain", "write", "describe", "give", "list", "tell", "me", "please", "make", "create",
    "summarize", "summarise", "help", "some", "any", "all", "our", "his", "her", "them", "us",
    "more", "most", "also", "only", "just", "could", "did", "had",
];

const FRENCH: &[&str] = &[
    "le", "la", "les", "un", "une", "des", "du", "de", "et", "ou", "est", "sont", "il",
    "elle", "ils", "elles", "nous", "vous", "je", "tu", "sur", "dans", "avec", "pour", "par",
    "pas", "ne", "que", "qui", "ce", "cette", "ces", "mais", "au", "aux", "son", "sa", "ses",
    "leur", "se", "très", "aussi", "être", "avoir", "comment", "pourquoi",
];

const SPANISH: &[&str] = &[
    "el", "la", "los", "las", "un", "una", "unos", "unas", "y", "o", "es", "son", "está",
    "están", "de", "del", "en", "con", "por", "para", "que", "qué", "no", "se", "su", "sus",
    "al", "lo", "como", "cómo", "pero", "muy", "también", "yo", "tú", "él", "ella",
    "nosotros", "ellos", "este", "esta", "porque",
];

const GERMAN: &[&str] = &[
    "der", "die", "das", "ein", "eine", "einen", "und", "oder", "ist", "sind", "war", "nicht",
    "mit", "auf", "für", "von", "zu", "im", "dem", "den", "des", "ich", "du", "er", "sie",
    "es", "wir", "ihr", "auch", "wie", "was", "aber", "noch", "bei", "nach", "über", "sehr",
    "dass", "warum",
];

const ARABIC: &[&str] = &[
    "في", "من", "على", "إلى", "عن", "هذا", "هذه", "التي", "الذي", "ما", "لا", "هو", "هي",
    "كان", "أن", "إن", "مع", "ديال", "هاد", "واش", "كي", "باش", "شي", "حتى", "و",
];

/// Latin-script profiles, in tie-break order.
const LATIN_PROFILES: [(&str, &[&str]); 4] = [
    ("en", ENGLISH),
    ("fr", FRENCH),
    ("es", SPANISH),
    ("de", GERMAN),
];

/// Stopword hits needed before the support factor saturates at 1.
const FULL_SUPPORT_HITS: f64 = 3.0;

pub fn is_arabic_letter(c: char) -> bool {
    matches!(c as u32,
        0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF)
        && c.is_alphabetic()
}

fn is_latin_letter(c: char) -> bool {
    c.is_alphabetic() && (c.is_ascii() || matches!(c as u32, 0x00C0..=0x024F | 0x1E00..=0x1EFF))
}

/// Script-ratio plus stopword-profile heuristic.
///
/// Arabic-script-dominant text is reported as `OtherLang("ar")` with the
/// Arabic letter ratio as confidence; the heuristic cannot tell Darija from
/// MSA. Otherwise the best Latin profile wins and confidence is
/// `margin * support * latin_ratio`, where margin is `best / (best + runner_up)`
/// and support is `min(1, best / 3)`.
pub fn detect_heuristic(text: &str) -> DetectorVerdict {
    let mut letters = 0usize;
    let mut arabic = 0usize;
    let mut latin = 0usize;
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if is_arabic_letter(c) {
            arabic += 1;
        } else if is_latin_letter(c) {
            latin += 1;
        }
    }
    if letters == 0 {
        return DetectorVerdict::unknown();
    }
    let arabic_ratio = arabic as f64 / letters as f64;
    let latin_ratio = latin as f64 / letters as f64;

    let words: Vec<String> = text
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();

    if arabic_ratio >= 0.5 {
        let hits = words.iter().filter(|w| ARABIC.contains(&w.as_str())).count();
        let support = if hits > 0 { 1.0 } else { 0.9 };
        return DetectorVerdict {
            language: Language::OtherLang("ar".into()),
            confidence: (arabic_ratio * support).clamp(0.0, 1.0),
        };
    }

    let mut scores: Vec<(&str, usize)> = LATIN_PROFILES
        .iter()
        .map(|(code, list)| {
            let hits = words.iter().filter(|w| list.contains(&w.as_str())).count();
            (*code, hits)
        })
        .collect();
    // stable sort keeps tie-break order
    scores.sort_by_key(|s| std::cmp::Reverse(s.1));
    let (best_code, best) = scores[0];
    let runner_up = scores[1].1;
    if best == 0 {
        return DetectorVerdict::unknown();
    }
    let margin = best as f64 / (best + runner_up) as f64;
    let support = (best as f64 / FULL_SUPPORT_HITS).min(1.0);
    DetectorVerdict {
        language: Language::parse(best_code),
        confidence: (margin * support * latin_ratio).clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_hits(text: &str, list: &[&str]) -> usize {
        text.split_whitespace()
            .filter(|w| list.contains(&w.to_lowercase().as_str()))
            .count()
    }

    #[test]
    fn pangram_is_confident_english() {
        let text = "The quick brown fox jumps over the lazy dog";
        // oracle: the, over, the hit the English list and nothing else
        assert_eq!(profile_hits(text, ENGLISH), 3);
        for list in [FRENCH, SPANISH, GERMAN] {
            assert_eq!(profile_hits(text, list), 0);
        }
        let v = detect_heuristic(text);
        assert_eq!(v.language, Language::English);
        assert!(v.confidence >= 0.9, "{}", v.confidence);
    }

    #[test]
    fn empty_is_unknown_zero() {
        assert_eq!(detect_heuristic(""), DetectorVerdict::unknown());
        assert_eq!(detect_heuristic("1234 !!"), DetectorVerdict::unknown());
    }

    #[test]
    fn french_sentence_is_not_english() {
        let text = "le chat est sur la table et il dort";
        let fr = profile_hits(text, FRENCH);
        let en = profile_hits(text, ENGLISH);
        assert!(fr > en, "fr={fr} en={en}");
        let v = detect_heuristic(text);
        assert_eq!(v.language, Language::OtherLang("fr".into()));
    }

    #[test]
    fn arabic_script_detected() {
        let v = detect_heuristic("هاد الجزء كيعرف بالمفاهيم الأساسية");
        assert_eq!(v.language, Language::OtherLang("ar".into()));
        assert!(v.confidence > 0.8);
    }

    #[test]
    fn confidence_in_unit_interval() {
        for t in ["a", "the the the the", "la la la", "Die Katze ist auf dem Tisch", "x y z"] {
            let v = detect_heuristic(t);
            assert!((0.0..=1.0).contains(&v.confidence));
        }
    }

    #[test]
    fn unreachable_remote_falls_back() {
        let backend = DetectorBackend::Remote {
            endpoint: "http://127.0.0.1:9/detect".into(),
            timeout_secs: 1,
        };
        let d = backend.detect("The cat is on the table");
        assert!(d.fell_back);
        assert_eq!(d.verdict.language, Language::English);
    }
}
