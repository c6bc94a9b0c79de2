use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::{normalize, pretokenize, TextError};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
/// Prefix marking a piece that continues a word rather than starting one.
pub const CONTINUATION: &str = "##";

const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Token table with dense ids. `[PAD]` is always id 0, followed by
/// `[UNK]`, `[CLS]` and `[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    max_piece_chars: usize,
}

/// One subword with its byte range in the normalized input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

impl Vocab {
    /// Builds a vocab from regular tokens; the specials are prepended.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_token_list(all)
    }

    /// Full token table including the leading specials, as written by [`Vocab::save`].
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self, TextError> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(TextError::BadVocab(format!("line {} must be {s}", i + 1)));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        let mut max_piece_chars = 1;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TextError::BadVocab(format!("token {i} is empty or contains whitespace")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TextError::BadVocab(format!("duplicate token {t:?}")));
            }
            let bare = t.strip_prefix(CONTINUATION).unwrap_or(t);
            max_piece_chars = max_piece_chars.max(bare.chars().count());
        }
        Ok(Self { tokens, ids, max_piece_chars })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn cls_id(&self) -> u32 {
        2
    }

    pub fn sep_id(&self) -> u32 {
        3
    }

    /// Greedy longest-match segmentation of `text` after normalization.
    /// Offsets index into [`normalize`]`(text)`; a word containing a
    /// character the vocab cannot spell becomes a single `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        self.tokenize_normalized(&normalize(text))
    }

    pub fn tokenize_normalized(&self, normalized: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut piece = String::new();
        for (ws, we) in pretokenize(normalized) {
            let word = &normalized[ws..we];
            let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
            let n_chars = bounds.len() - 1;
            let mut pieces = Vec::new();
            let mut pos = 0;
            while pos < n_chars {
                let mut found = None;
                let longest = (pos + self.max_piece_chars).min(n_chars);
                for end in (pos + 1..=longest).rev() {
                    piece.clear();
                    if pos > 0 {
                        piece.push_str(CONTINUATION);
                    }
                    piece.push_str(&word[bounds[pos]..bounds[end]]);
                    if let Some(id) = self.id(&piece) {
                        found = Some((id, end));
                        break;
                    }
                }
                match found {
                    Some((id, end)) => {
                        pieces.push(Token { id, start: ws + bounds[pos], end: ws + bounds[end] });
                        pos = end;
                    }
                    None => {
                        pieces.clear();
                        pieces.push(Token { id: self.unk_id(), start: ws, end: we });
                        break;
                    }
                }
            }
            out.extend(pieces);
        }
        out
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path)?;
        Self::from_token_list(text.lines().map(str::to_string).collect())
    }
}

/// Trains a byte-pair vocabulary on `corpus` with at most `merges` merge
/// steps. Pair frequencies count every adjacent position weighted by word
/// frequency; ties go to the lexicographically smallest pair, so the result
/// does not depend on corpus order beyond word counts.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], merges: usize) -> Result<Vocab, TextError> {
    if corpus.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        let norm = normalize(text.as_ref());
        for (s, e) in pretokenize(&norm) {
            *counts.entry(norm[s..e].to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.chars().map(String::from).collect(), c))
        .collect();
    words.sort();

    let alphabet: BTreeSet<String> = words.iter().flat_map(|(w, _)| w.iter().cloned()).collect();
    let mut tokens: Vec<String> = Vec::new();
    for c in &alphabet {
        tokens.push(c.clone());
        tokens.push(format!("{CONTINUATION}{c}"));
    }

    for _ in 0..merges {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (w, c) in &words {
            for win in w.windows(2) {
                *pairs.entry((win[0].as_str(), win[1].as_str())).or_default() += c;
            }
        }
        let Some(((l, r), _)) = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa))) else {
            break;
        };
        let (l, r) = (l.to_string(), r.to_string());
        let merged = format!("{l}{r}");
        for (w, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < w.len() {
                if w[i] == l && w[i + 1] == r {
                    w[i] = merged.clone();
                    w.remove(i + 1);
                }
                i += 1;
            }
        }
        tokens.push(merged.clone());
        tokens.push(format!("{CONTINUATION}{merged}"));
    }

    let mut seen = std::collections::HashSet::new();
    tokens.retain(|t| seen.insert(t.clone()));
    Vocab::from_tokens(tokens)
}
