use super::{normalize, Example, TextError, Token, Vocab};

/// Token-level alignment of one source text (sentence A or B) inside a
/// packed sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideAlignment {
    /// Normalized source text; offsets index into it.
    pub text: String,
    /// Byte range of each kept token, in sequence order.
    pub token_offsets: Vec<(usize, usize)>,
    /// Packed position of the first kept token.
    pub first_position: usize,
    /// For every byte of `text`, the packed position of the token covering
    /// it; `None` for inter-word spaces and truncated tokens.
    pub char_to_token: Vec<Option<usize>>,
}

impl SideAlignment {
    fn new(text: String, tokens: &[Token], first_position: usize) -> Self {
        let mut char_to_token = vec![None; text.len()];
        for (t, tok) in tokens.iter().enumerate() {
            for slot in &mut char_to_token[tok.start..tok.end] {
                *slot = Some(first_position + t);
            }
        }
        Self {
            text,
            token_offsets: tokens.iter().map(|t| (t.start, t.end)).collect(),
            first_position,
            char_to_token,
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_offsets.len()
    }

    /// Packed position of the token covering byte `offset`.
    pub fn token_at(&self, offset: usize) -> Option<usize> {
        self.char_to_token.get(offset).copied().flatten()
    }
}

/// `[CLS] A [SEP] B [SEP] [PAD]...` where A is the document (plus question)
/// and B is one option.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    pub cls_index: usize,
    pub sep_indices: [usize; 2],
    pub side_a: SideAlignment,
    pub side_b: SideAlignment,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-padding positions (everything up to the second `[SEP]`).
    pub fn content_len(&self) -> usize {
        self.sep_indices[1] + 1
    }

    /// The same sequence with its padding tail removed.
    pub fn trimmed(&self) -> PackedSequence {
        let n = self.content_len();
        let mut out = self.clone();
        out.token_ids.truncate(n);
        out.segment_ids.truncate(n);
        out.attention_mask.truncate(n);
        out
    }
}

/// Packs option `option_index` of `example`. Sentence A is truncated from
/// its end when the pair does not fit; the option and the delimiters are
/// never cut. The result is padded to exactly `max_seq_len`.
pub fn pack(example: &Example, option_index: usize, vocab: &Vocab, max_seq_len: usize) -> Result<PackedSequence, TextError> {
    let count = example.options.len();
    if option_index >= count {
        return Err(TextError::OptionIndex { index: option_index, count });
    }
    let a_text = normalize(&example.side_a_text());
    let b_text = normalize(&example.options[option_index]);
    let mut a_tokens = vocab.tokenize_normalized(&a_text);
    let b_tokens = vocab.tokenize_normalized(&b_text);

    let budget = max_seq_len.saturating_sub(3);
    if b_tokens.len() > budget {
        return Err(TextError::OptionTooLong { tokens: b_tokens.len(), budget });
    }
    a_tokens.truncate(budget - b_tokens.len());

    let mut token_ids = Vec::with_capacity(max_seq_len);
    token_ids.push(vocab.cls_id());
    token_ids.extend(a_tokens.iter().map(|t| t.id));
    let sep_a = token_ids.len();
    token_ids.push(vocab.sep_id());
    token_ids.extend(b_tokens.iter().map(|t| t.id));
    let sep_b = token_ids.len();
    token_ids.push(vocab.sep_id());
    let content = token_ids.len();
    token_ids.resize(max_seq_len, vocab.pad_id());

    let segment_ids = (0..max_seq_len).map(|i| u8::from(i > sep_a && i < content)).collect();
    let attention_mask = (0..max_seq_len).map(|i| u8::from(i < content)).collect();

    Ok(PackedSequence {
        token_ids,
        segment_ids,
        attention_mask,
        cls_index: 0,
        sep_indices: [sep_a, sep_b],
        side_a: SideAlignment::new(a_text, &a_tokens, 1),
        side_b: SideAlignment::new(b_text, &b_tokens, sep_a + 1),
    })
}
