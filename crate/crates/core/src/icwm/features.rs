//! Feature extraction for the learned execution proxy.
//!
//! The feature space is a domain-tag indicator, code token unigrams and
//! bigrams, and resource-relation indicators (declared memory vs budget,
//! program length buckets). Structural features occupy fixed low ids;
//! vocabulary features (tokens, bigrams) are assigned ids after them at
//! training time. Unknown tokens at inference map to a shared OOV feature.

use std::collections::{BTreeMap, BTreeSet};

use crate::envstore::{Domain, EnvironmentBundle};
use crate::scalar::Scalar;

/// Numeric features extracted from a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleFeatures {
    pub memory_budget: u64,
    pub step_limit: u64,
    pub artifact_count: usize,
}

impl BundleFeatures {
    pub fn of(bundle: &EnvironmentBundle) -> Self {
        BundleFeatures {
            memory_budget: bundle.resource_limits.memory_budget,
            step_limit: bundle.resource_limits.step_limit,
            artifact_count: bundle.artifacts.len(),
        }
    }
}

/// Shared feature for tokens unseen at training time.
pub const OOV_FEATURE: u32 = 0;
const DOMAIN_BASE: u32 = 1;
const MEM_GT_BUDGET: u32 = DOMAIN_BASE + Domain::ALL.len() as u32;
const MEM_LE_BUDGET: u32 = MEM_GT_BUDGET + 1;
const LENGTH_BASE: u32 = MEM_LE_BUDGET + 1;
const LENGTH_BUCKETS: u32 = 5;

/// Number of fixed structural features; vocabulary ids start here.
pub const STRUCTURAL_FEATURES: u32 = LENGTH_BASE + LENGTH_BUCKETS;

pub fn domain_feature(domain: Domain) -> u32 {
    DOMAIN_BASE + Domain::ALL.iter().position(|d| *d == domain).unwrap() as u32
}

pub fn mem_gt_budget_feature() -> u32 {
    MEM_GT_BUDGET
}

pub fn mem_le_budget_feature() -> u32 {
    MEM_LE_BUDGET
}

fn length_bucket(line_count: usize) -> u32 {
    let bucket = match line_count {
        0..=4 => 0,
        5..=8 => 1,
        9..=16 => 2,
        17..=32 => 3,
        _ => 4,
    };
    LENGTH_BASE + bucket
}

/// Human-readable name of a structural feature id.
pub fn structural_name(id: u32) -> Option<String> {
    if id == OOV_FEATURE {
        return Some("oov".to_string());
    }
    if (DOMAIN_BASE..MEM_GT_BUDGET).contains(&id) {
        let domain = Domain::ALL[(id - DOMAIN_BASE) as usize];
        return Some(format!("domain:{domain}"));
    }
    if id == MEM_GT_BUDGET {
        return Some("res:mem_gt_budget".to_string());
    }
    if id == MEM_LE_BUDGET {
        return Some("res:mem_le_budget".to_string());
    }
    if (LENGTH_BASE..STRUCTURAL_FEATURES).contains(&id) {
        return Some(format!("len:b{}", id - LENGTH_BASE));
    }
    None
}

/// Lowercased maximal runs of ASCII alphanumerics; whitespace and punctuation
/// split.
pub fn tokenize(code: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in code.chars() {
        if c.is_ascii_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Declared memory of a MiniLang-style candidate: `mem N` on the first line.
pub fn declared_memory(code: &str) -> Option<u64> {
    let first = code.lines().next()?.trim();
    let mut parts = first.split_whitespace();
    if parts.next()? != "mem" {
        return None;
    }
    let n = parts.next()?.parse::<u64>().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(n)
}

fn unigram_name(token: &str) -> String {
    format!("tok:{token}")
}

fn bigram_name(a: &str, b: &str) -> String {
    format!("bi:{a} {b}")
}

/// Token/bigram feature names mapped to ids at and above
/// [`STRUCTURAL_FEATURES`]. Frozen after training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    map: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Assign ids to every unigram and bigram seen in the corpus, in
    /// lexicographic name order so the mapping is input-order independent.
    pub fn build<'a>(codes: impl Iterator<Item = &'a str>) -> Self {
        let mut names = BTreeSet::new();
        for code in codes {
            let tokens = tokenize(code);
            for token in &tokens {
                names.insert(unigram_name(token));
            }
            for pair in tokens.windows(2) {
                names.insert(bigram_name(&pair[0], &pair[1]));
            }
        }
        let map = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| (name, STRUCTURAL_FEATURES + i as u32))
            .collect();
        Vocabulary { map }
    }

    /// Rebuild from (name, id) pairs, e.g. when loading a parameter file.
    pub fn from_entries(entries: BTreeMap<String, u32>) -> Self {
        Vocabulary { map: entries }
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.map.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total feature-space width: structural features plus vocabulary.
    pub fn feature_count(&self) -> usize {
        STRUCTURAL_FEATURES as usize + self.map.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, u32)> {
        self.map.iter().map(|(name, id)| (name, *id))
    }

    /// Vocab unigram tokens present in `code`, with their feature ids.
    pub fn known_code_tokens(&self, code: &str) -> Vec<(String, u32)> {
        let mut seen = BTreeSet::new();
        tokenize(code)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .filter_map(|t| self.id(&unigram_name(&t)).map(|id| (t, id)))
            .collect()
    }
}

/// Sparse feature vector: feature id -> weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<S: Scalar> {
    weights: BTreeMap<u32, S>,
}

impl<S: Scalar> FeatureVector<S> {
    fn bump(&mut self, id: u32, amount: S) {
        *self.weights.entry(id).or_insert_with(S::zero) += amount;
    }

    pub fn get(&self, id: u32) -> S {
        self.weights.get(&id).copied().unwrap_or_else(S::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, S)> + '_ {
        self.weights.iter().map(|(id, w)| (*id, *w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Deterministic featurization of one (domain, bundle, code) input.
pub fn featurize<S: Scalar>(
    domain: Domain,
    bundle_features: &BundleFeatures,
    code: &str,
    vocabulary: &Vocabulary,
) -> FeatureVector<S> {
    let one = S::one();
    let mut vector = FeatureVector {
        weights: BTreeMap::new(),
    };
    vector.bump(domain_feature(domain), one);

    let tokens = tokenize(code);
    for token in &tokens {
        match vocabulary.id(&unigram_name(token)) {
            Some(id) => vector.bump(id, one),
            None => vector.bump(OOV_FEATURE, one),
        }
    }
    for pair in tokens.windows(2) {
        match vocabulary.id(&bigram_name(&pair[0], &pair[1])) {
            Some(id) => vector.bump(id, one),
            None => vector.bump(OOV_FEATURE, one),
        }
    }

    if let Some(declared) = declared_memory(code) {
        if declared > bundle_features.memory_budget {
            vector.bump(mem_gt_budget_feature(), one);
        } else {
            vector.bump(mem_le_budget_feature(), one);
        }
    }
    vector.bump(length_bucket(code.trim_end().lines().count()), one);
    vector
}
