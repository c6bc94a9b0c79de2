//! Concept-pair supervision for the two auxiliary heads.
//!
//! Concepts from the triple index are located in sentence A and sentence B
//! of a packed sequence, every cross-side pair is labelled for relation
//! existence (either direction counts) and relation type (A→B only), and
//! relation-free pairs are down-sampled to at most `γ` per positive.

mod cache;
mod mentions;

pub use cache::{load_cache, save_cache, CacheRecord};
pub use mentions::{find_mentions, ConceptMention, Side, DEFAULT_MAX_NGRAM};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{RelationId, TripleIndex};

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("negative ratio must be a finite value >= 0, got {0}")]
    BadRatio(f64),
    #[error("inconsistent pair ({i}, {j}): {reason}")]
    Inconsistent { i: usize, j: usize, reason: String },
    #[error("typed pair count {stored} does not match recount {recount}")]
    TypedCount { stored: usize, recount: usize },
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labelled concept pair. `i` and `j` are the packed positions of the
/// first subword of the A-side and B-side mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionPair {
    pub a: usize,
    pub b: usize,
    pub i: usize,
    pub j: usize,
    /// Some relation links the two concepts, in either direction.
    pub exists: bool,
    /// A typed A→B relation exists; `relation` then holds its id.
    pub typed: bool,
    pub relation: Option<RelationId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionSet {
    pub a_mentions: Vec<ConceptMention>,
    pub b_mentions: Vec<ConceptMention>,
    /// Positives first (in A-major order), then sampled negatives.
    pub pairs: Vec<SupervisionPair>,
    pub positives: usize,
    /// |S|: pairs carrying a relation-type label.
    pub typed_count: usize,
}

impl SupervisionSet {
    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Builds the labelled pair set for one packed sequence. Deterministic in
/// `(mentions, index, gamma, seed)`.
pub fn build_supervision(mentions: &[ConceptMention], index: &TripleIndex, gamma: f64, seed: u64) -> Result<SupervisionSet, SupervisionError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(SupervisionError::BadRatio(gamma));
    }
    let a_mentions: Vec<ConceptMention> = mentions.iter().filter(|m| m.side == Side::A).cloned().collect();
    let b_mentions: Vec<ConceptMention> = mentions.iter().filter(|m| m.side == Side::B).cloned().collect();

    let mut positives = Vec::new();
    let mut candidates = Vec::new();
    for (ai, a) in a_mentions.iter().enumerate() {
        for (bi, b) in b_mentions.iter().enumerate() {
            let forward = index.lookup_ids(a.phrase_id, b.phrase_id);
            let backward = index.lookup_ids(b.phrase_id, a.phrase_id);
            let relation = forward.first_type();
            let pair = SupervisionPair {
                a: ai,
                b: bi,
                i: a.begin,
                j: b.begin,
                exists: !(forward.is_empty() && backward.is_empty()),
                typed: relation.is_some(),
                relation,
            };
            if pair.exists {
                positives.push(pair);
            } else {
                candidates.push(pair);
            }
        }
    }

    let wanted = (gamma * positives.len() as f64).floor() as usize;
    let take = wanted.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, candidates.len(), take).into_vec();
    picked.sort_unstable();

    let n_pos = positives.len();
    let typed_count = positives.iter().filter(|p| p.typed).count();
    let mut pairs = positives;
    pairs.extend(picked.into_iter().map(|k| candidates[k].clone()));
    Ok(SupervisionSet { a_mentions, b_mentions, pairs, positives: n_pos, typed_count })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExistenceLabel {
    pub i: usize,
    pub j: usize,
    pub y: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypeLabel {
    pub i: usize,
    pub j: usize,
    pub k: RelationId,
}

/// Flat label lists consumed by the auxiliary losses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMatrices {
    pub existence: Vec<ExistenceLabel>,
    pub types: Vec<TypeLabel>,
}

impl LabelMatrices {
    /// Folds existence into the type task: every sampled negative becomes a
    /// typed pair of the extra class `no_relation` (normally `R`).
    pub fn with_no_relation_class(mut self, no_relation: RelationId) -> Self {
        let extra: Vec<TypeLabel> =
            self.existence.iter().filter(|e| !e.y).map(|e| TypeLabel { i: e.i, j: e.j, k: no_relation }).collect();
        self.types.extend(extra);
        self
    }
}

/// Splits a set into existence labels (all pairs) and type labels (pairs
/// with a typed A→B relation), checking the set's internal consistency.
pub fn label_matrices(set: &SupervisionSet) -> Result<LabelMatrices, SupervisionError> {
    let mut out = LabelMatrices::default();
    for p in &set.pairs {
        let bad = |reason: &str| SupervisionError::Inconsistent { i: p.i, j: p.j, reason: reason.into() };
        match (p.typed, p.relation) {
            (true, Some(k)) => {
                if !p.exists {
                    return Err(bad("typed pair without existence label"));
                }
                out.types.push(TypeLabel { i: p.i, j: p.j, k });
            }
            (true, None) => return Err(bad("typed pair without relation id")),
            (false, Some(_)) => return Err(bad("relation id on untyped pair")),
            (false, None) => {}
        }
        out.existence.push(ExistenceLabel { i: p.i, j: p.j, y: p.exists });
    }
    if out.types.len() != set.typed_count {
        return Err(SupervisionError::TypedCount { stored: set.typed_count, recount: out.types.len() });
    }
    Ok(out)
}

/// Mixes a run seed with stream coordinates (epoch, example, option, ...)
/// into an independent 64-bit seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for &p in parts {
        h = splitmix64(h ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
