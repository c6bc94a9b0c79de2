use serde::{Deserialize, Serialize};

use crate::kb::TripleIndex;
use crate::text::{pretokenize, PackedSequence, SideAlignment};

pub const DEFAULT_MAX_NGRAM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// A knowledge-base phrase found in one side of a packed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMention {
    pub phrase: String,
    pub phrase_id: u32,
    pub side: Side,
    /// Packed position of the phrase's first subword.
    pub begin: usize,
    /// Number of packed positions the phrase covers.
    pub span: usize,
}

impl ConceptMention {
    pub fn end(&self) -> usize {
        self.begin + self.span
    }
}

/// Greedy longest match of word n-grams (`n <= max_ngram`) against the
/// index's phrases, run separately on each side. Words cut off by
/// truncation never match, and each phrase is kept once per side at its
/// first occurrence.
pub fn find_mentions(packed: &PackedSequence, index: &TripleIndex, max_ngram: usize) -> Vec<ConceptMention> {
    let mut out = side_mentions(&packed.side_a, Side::A, index, max_ngram);
    out.extend(side_mentions(&packed.side_b, Side::B, index, max_ngram));
    out
}

fn side_mentions(side: &SideAlignment, tag: Side, index: &TripleIndex, max_ngram: usize) -> Vec<ConceptMention> {
    let words = pretokenize(&side.text);
    // Packed token range of each word, if the whole word survived packing.
    let spans: Vec<Option<(usize, usize)>> = words
        .iter()
        .map(|&(s, e)| match (side.token_at(s), side.token_at(e - 1)) {
            (Some(first), Some(last)) => Some((first, last + 1)),
            _ => None,
        })
        .collect();

    let mut out: Vec<ConceptMention> = Vec::new();
    let mut phrase = String::new();
    let mut p = 0;
    while p < words.len() {
        let longest = max_ngram.min(words.len() - p);
        let mut matched = 0;
        for n in (1..=longest).rev() {
            if spans[p..p + n].iter().any(Option::is_none) {
                continue;
            }
            phrase.clear();
            for (k, &(s, e)) in words[p..p + n].iter().enumerate() {
                if k > 0 {
                    phrase.push(' ');
                }
                phrase.push_str(&side.text[s..e]);
            }
            if let Some(id) = index.phrase_id(&phrase) {
                let begin = spans[p].expect("checked").0;
                let end = spans[p + n - 1].expect("checked").1;
                if !out.iter().any(|m| m.phrase_id == id) {
                    out.push(ConceptMention { phrase: phrase.clone(), phrase_id: id, side: tag, begin, span: end - begin });
                }
                matched = n;
                break;
            }
        }
        p += matched.max(1);
    }
    out
}
