//! Seeded English-retention selection and final corpus assembly.
//!
//! The draw is reproducible across implementations:
//!
//! * group samples by source tag, sort ids lexicographically (byte order);
//! * seed = splitmix64(policy seed XOR fnv1a64(source tag));
//! * generator is xorshift64* (shifts 12, 25, 27; multiplier
//!   `0x2545F4914F6CDD1D`);
//! * uniform index below `n`: draw `r`, reject while `r < (2^64 - n) mod n`,
//!   return `r mod n`;
//! * partial Fisher–Yates: for `i` in `0..need`, swap position `i` with
//!   `i + uniform(len - i)`; the first `need` ids are retained.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    compute_stats, CorpusStats, InstructionSample, Language, SampleState, Source, TrainingRecipe,
};
use crate::token_gate::{TokenBudget, TokenizerSpec};

pub const DEFAULT_SEED: u64 = 20_250_101;
/// Ratio for source tags without an explicit entry.
pub const DEFAULT_OTHER_RATIO: f64 = 0.20;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("retention ratio {ratio} for {tag} is outside [0, 1]")]
    InvalidRatio { tag: String, ratio: f64 },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("sample {0} is dropped")]
    DroppedSample(String),
    #[error("forced-English id {0} is not in the corpus")]
    UnknownForcedId(String),
    #[error("sample {0} is in both pools")]
    OverlapDetected(String),
}

/// splitmix64 finalizer, used to spread seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        // zero is the generator's only fixed point
        Self {
            state: if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Unbiased integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }
}

fn source_seed(seed: u64, source: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(source.as_bytes()))
}

/// Round-half-up of `ratio * n`; the epsilon absorbs binary representation
/// error such as `0.29 * 100 = 28.999…`.
pub fn retained_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 0.5 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPolicy {
    /// Keyed by source tag as written in records (`LIMA`, `DEITA`, ...).
    pub retention_ratio: BTreeMap<String, f64>,
    pub seed: u64,
    #[serde(default)]
    pub forced_english: BTreeSet<String>,
}

impl Default for MixPolicy {
    fn default() -> Self {
        let retention_ratio = [("LIMA", 0.30), ("DEITA", 0.26), ("TULU", 0.28)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            retention_ratio,
            seed: DEFAULT_SEED,
            forced_english: BTreeSet::new(),
        }
    }
}

impl MixPolicy {
    /// Ratios that give the shipped pool sizes exactly: 300 of 1,000,
    /// 1,300 of 5,000 and 13,000 of 46,000 (28% is 12,880 of 46,000).
    pub fn published_counts() -> Self {
        let mut p = Self::default();
        p.retention_ratio.insert("TULU".into(), 13.0 / 46.0);
        p
    }

    pub fn uniform(ratio: f64, seed: u64) -> Self {
        Self {
            retention_ratio: BTreeMap::from([("*".to_string(), ratio)]),
            seed,
            forced_english: BTreeSet::new(),
        }
    }

    /// Explicit source entry, then the `*` wildcard, then [`DEFAULT_OTHER_RATIO`].
    pub fn ratio_for(&self, source: &str) -> f64 {
        self.retention_ratio
            .get(source)
            .or_else(|| self.retention_ratio.get("*"))
            .copied()
            .unwrap_or(DEFAULT_OTHER_RATIO)
    }

    pub fn validate(&self) -> Result<(), MixError> {
        for (source, &ratio) in &self.retention_ratio {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(MixError::InvalidRatio {
                    tag: source.clone(),
                    ratio,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSplit {
    pub total: usize,
    pub ratio: f64,
    pub target: usize,
    pub forced: usize,
    pub english: usize,
    pub translate: usize,
    /// English count beyond the target caused by forced samples.
    pub overshoot: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MixSelection {
    pub english: Vec<InstructionSample>,
    pub translate: Vec<InstructionSample>,
    /// Input ids in input order, for reassembly.
    pub order: Vec<String>,
    pub splits: BTreeMap<String, SourceSplit>,
}

/// Splits a live corpus into the English-retention pool and the pool to
/// translate. Forced samples are the policy's list plus every sample with
/// `retain_english` set. Both pools keep input order.
pub fn select_retained(corpus: Vec<InstructionSample>, policy: &MixPolicy) -> Result<MixSelection, MixError> {
    policy.validate()?;
    let mut seen = HashSet::new();
    for s in &corpus {
        if s.is_dropped() {
            return Err(MixError::DroppedSample(s.id.clone()));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(MixError::DuplicateId(s.id.clone()));
        }
    }
    if let Some(id) = policy.forced_english.iter().find(|id| !seen.contains(id.as_str())) {
        return Err(MixError::UnknownForcedId(id.clone()));
    }

    let mut groups: BTreeMap<String, Vec<&InstructionSample>> = BTreeMap::new();
    for s in &corpus {
        groups.entry(s.source.to_string()).or_default().push(s);
    }

    let mut retained: HashSet<String> = HashSet::new();
    let mut splits = BTreeMap::new();
    for (source, members) in &groups {
        let ratio = policy.ratio_for(source);
        let target = retained_count(ratio, members.len());
        let mut forced: Vec<&str> = Vec::new();
        let mut rest: Vec<&str> = Vec::new();
        for s in members {
            if s.retain_english || policy.forced_english.contains(&s.id) {
                forced.push(&s.id);
            } else {
                rest.push(&s.id);
            }
        }
        rest.sort_unstable();
        let need = target.saturating_sub(forced.len()).min(rest.len());
        let mut rng = XorShift64Star::new(source_seed(policy.seed, source));
        for i in 0..need {
            let j = i + rng.below((rest.len() - i) as u64) as usize;
            rest.swap(i, j);
        }
        let english = forced.len() + need;
        retained.extend(forced.iter().chain(&rest[..need]).map(|id| id.to_string()));
        splits.insert(
            source.clone(),
            SourceSplit {
                total: members.len(),
                ratio,
                target,
                forced: forced.len(),
                english,
                translate: members.len() - english,
                overshoot: english.saturating_sub(target),
            },
        );
    }

    let order = corpus.iter().map(|s| s.id.clone()).collect();
    let (english, translate) = corpus.into_iter().partition(|s| retained.contains(&s.id));
    Ok(MixSelection {
        english,
        translate,
        order,
        splits,
    })
}

/// Everything the manifest records that the mixer itself does not know.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestContext {
    pub tokenizer: TokenizerSpec,
    pub token_budget: TokenBudget,
    pub glossary_hash: String,
    pub backend: String,
    pub translate_code_comments: bool,
    pub script_threshold: f64,
    pub rules_version: String,
    /// stage → drop reason → count
    pub drop_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    pub policy: MixPolicy,
    pub splits: BTreeMap<String, SourceSplit>,
    pub english_ratio: f64,
    pub tokenizer: TokenizerSpec,
    pub token_budget: TokenBudget,
    pub glossary_hash: String,
    pub backend: String,
    pub translate_code_comments: bool,
    pub script_threshold: f64,
    pub rules_version: String,
    pub drop_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub training_recipes: Vec<TrainingRecipe>,
    pub stats: CorpusStats,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Joins the pools in the order given by `order` (ids missing from it go
/// last, in pool order). Translated samples that were dropped are left out
/// and counted under the `translate` stage.
pub fn assemble_final(
    translated: Vec<InstructionSample>,
    english: Vec<InstructionSample>,
    order: &[String],
    policy: &MixPolicy,
    splits: BTreeMap<String, SourceSplit>,
    ctx: ManifestContext,
) -> Result<(Vec<InstructionSample>, DatasetManifest), MixError> {
    let english_ids: HashSet<&str> = english.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = translated.iter().find(|s| english_ids.contains(s.id.as_str())) {
        return Err(MixError::OverlapDetected(s.id.clone()));
    }

    let mut drop_counts = ctx.drop_counts;
    let mut pool = Vec::with_capacity(translated.len() + english.len());
    for mut s in translated {
        if let Some(reason) = s.drop_reason {
            *drop_counts
                .entry("translate".into())
                .or_default()
                .entry(reason.to_string())
                .or_default() += 1;
            continue;
        }
        s.language = Language::Darija;
        s.advance(SampleState::Final);
        pool.push(s);
    }
    for mut s in english {
        s.language = Language::English;
        s.advance(SampleState::Retained);
        s.advance(SampleState::Final);
        pool.push(s);
    }

    let rank: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    pool.sort_by_key(|s| rank.get(s.id.as_str()).copied().unwrap_or(usize::MAX));

    let stats = compute_stats(&pool);
    let english_count = stats.per_language.get("english").copied().unwrap_or(0);
    let english_ratio = if stats.total == 0 {
        0.0
    } else {
        english_count as f64 / stats.total as f64
    };
    let sources: BTreeSet<String> = pool.iter().map(|s| s.source.to_string()).collect();
    let training_recipes = sources
        .iter()
        .flat_map(|s| TrainingRecipe::for_source(&Source::parse(s)))
        .collect();

    let manifest = DatasetManifest {
        manifest_version: 1,
        policy: policy.clone(),
        splits,
        english_ratio,
        tokenizer: ctx.tokenizer,
        token_budget: ctx.token_budget,
        glossary_hash: ctx.glossary_hash,
        backend: ctx.backend,
        translate_code_comments: ctx.translate_code_comments,
        script_threshold: ctx.script_threshold,
        rules_version: ctx.rules_version,
        drop_counts,
        training_recipes,
        stats,
    };
    Ok((pool, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Turn, DropReason};
    use proptest::prelude::*;

    fn corpus(source: Source, n: usize) -> Vec<InstructionSample> {
        (0..n)
            .map(|i| {
                InstructionSample::new(
                    format!("{}-{i:06}", source.as_str()),
                    source.clone(),
                    vec![Turn::human(format!("q{i}")), Turn::assistant("a")],
                )
            })
            .collect()
    }

    #[test]
    fn xorshift_reference_values() {
        // first outputs for state 1, computed by hand from the recurrence
        let mut r = XorShift64Star::new(1);
        let x1: u64 = {
            let mut x = 1u64;
            x ^= x >> 12;
            x ^= x << 25;
            x ^= x >> 27;
            x
        };
        assert_eq!(x1, 0x2000001);
        assert_eq!(r.next_u64(), x1.wrapping_mul(0x2545F4914F6CDD1D));
        assert_eq!(splitmix64(0), 0xE220A8397B1DCDAF);
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = XorShift64Star::new(7);
        let mut hits = [0usize; 3];
        for _ in 0..3000 {
            hits[r.below(3) as usize] += 1;
        }
        assert!(hits.iter().all(|&h| h > 800));
    }

    #[test]
    fn rounding() {
        assert_eq!(retained_count(0.30, 1000), 300);
        assert_eq!(retained_count(0.26, 5000), 1300);
        assert_eq!(retained_count(0.28, 46000), 12880);
        assert_eq!(retained_count(13.0 / 46.0, 46000), 13000);
        assert_eq!(retained_count(0.29, 100), 29);
        assert_eq!(retained_count(0.25, 10), 3);
        assert_eq!(retained_count(0.0, 10), 0);
    }

    #[test]
    fn lima_and_deita_splits() {
        let sel = select_retained(corpus(Source::Lima, 1000), &MixPolicy::default()).unwrap();
        assert_eq!((sel.english.len(), sel.translate.len()), (300, 700));
        let sel = select_retained(corpus(Source::Deita, 5000), &MixPolicy::default()).unwrap();
        assert_eq!((sel.english.len(), sel.translate.len()), (1300, 3700));
    }

    #[test]
    fn zero_ratio_retains_nothing() {
        let sel = select_retained(corpus(Source::Lima, 10), &MixPolicy::uniform(0.0, 1)).unwrap();
        assert!(sel.english.is_empty());
        assert_eq!(sel.translate.len(), 10);
    }

    #[test]
    fn forced_overshoot_is_reported() {
        let mut c = corpus(Source::Lima, 10);
        for s in c.iter_mut().take(4) {
            s.retain_english = true;
        }
        let sel = select_retained(c, &MixPolicy::uniform(0.2, 1)).unwrap();
        let split = &sel.splits["LIMA"];
        assert_eq!((split.target, split.english, split.overshoot), (2, 4, 2));
        assert!(sel.english.iter().all(|s| s.retain_english));
    }

    #[test]
    fn errors() {
        let mut c = corpus(Source::Lima, 3);
        c[2].id = c[0].id.clone();
        assert!(matches!(select_retained(c, &MixPolicy::default()), Err(MixError::DuplicateId(_))));
        let mut c = corpus(Source::Lima, 3);
        c[1].drop_with(DropReason::OverBudget);
        assert!(matches!(select_retained(c, &MixPolicy::default()), Err(MixError::DroppedSample(_))));
        let mut p = MixPolicy::default();
        p.forced_english.insert("nope".into());
        assert!(matches!(select_retained(corpus(Source::Lima, 3), &p), Err(MixError::UnknownForcedId(_))));
        let p = MixPolicy::uniform(1.5, 0);
        assert!(matches!(select_retained(corpus(Source::Lima, 3), &p), Err(MixError::InvalidRatio { .. })));
    }

    #[test]
    fn overlap_detected() {
        let c = corpus(Source::Lima, 2);
        let err = assemble_final(c.clone(), c, &[], &MixPolicy::default(), BTreeMap::new(), ManifestContext::default());
        assert!(matches!(err, Err(MixError::OverlapDetected(_))));
    }

    #[test]
    fn assembly_keeps_input_order_and_stats() {
        let sel = select_retained(corpus(Source::Lima, 1000), &MixPolicy::default()).unwrap();
        let (fin, manifest) = assemble_final(
            sel.translate,
            sel.english,
            &sel.order,
            &MixPolicy::default(),
            sel.splits,
            ManifestContext::default(),
        )
        .unwrap();
        let ids: Vec<_> = fin.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids, sel.order);
        assert_eq!(manifest.stats.total, 1000);
        assert_eq!(manifest.stats.per_language["darija"], 700);
        assert_eq!(manifest.stats.per_language["english"], 300);
        assert_eq!(manifest.stats, compute_stats(&fin));
        assert!(fin.iter().all(|s| s.state == SampleState::Final));
        assert_eq!(manifest.training_recipes.len(), 1);
    }

    #[test]
    fn empty_translate_pool() {
        let c = corpus(Source::Deita, 5);
        let (fin, m) =
            assemble_final(vec![], c, &[], &MixPolicy::default(), BTreeMap::new(), ManifestContext::default()).unwrap();
        assert_eq!(fin.len(), 5);
        assert_eq!(m.english_ratio, 1.0);
    }

    #[test]
    fn failed_translations_counted() {
        let mut t = corpus(Source::Lima, 3);
        t[0].drop_with(DropReason::TranslationFailed);
        let (fin, m) =
            assemble_final(t, vec![], &[], &MixPolicy::default(), BTreeMap::new(), ManifestContext::default()).unwrap();
        assert_eq!(fin.len(), 2);
        assert_eq!(m.drop_counts["translate"]["TranslationFailed"], 1);
    }

    proptest! {
        #[test]
        fn partition_and_determinism(n in 0usize..300, ratio in 0.0f64..=1.0, seed in any::<u64>(), forced in 0usize..20) {
            let mut c = corpus(Source::Tulu, n);
            for s in c.iter_mut().take(forced) {
                s.retain_english = true;
            }
            let policy = MixPolicy::uniform(ratio, seed);
            let a = select_retained(c.clone(), &policy).unwrap();
            let b = select_retained(c, &policy).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.english.len() + a.translate.len(), n);
            let expected = retained_count(ratio, n).max(forced.min(n));
            prop_assert_eq!(a.english.len(), expected);
        }

        #[test]
        fn sources_are_independent(seed in any::<u64>()) {
            let mut c = corpus(Source::Lima, 50);
            let alone = select_retained(c.clone(), &MixPolicy::uniform(0.3, seed)).unwrap();
            c.extend(corpus(Source::Deita, 40));
            let mixed = select_retained(c, &MixPolicy::uniform(0.3, seed)).unwrap();
            let lima: Vec<_> = mixed.english.iter().filter(|s| s.source == Source::Lima).cloned().collect();
            prop_assert_eq!(alone.english, lima);
            prop_assert_eq!(mixed.splits["DEITA"].english, 12);
        }
    }
}
