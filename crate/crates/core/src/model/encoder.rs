use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, LayerVars, ModelError, ParamVars};
use crate::autodiff::{Graph, Tensor, Var};
use crate::scalar::lit;
use crate::text::PackedSequence;
use crate::Scalar;

const NORM_EPS: f64 = 1e-12;
const MASKED: f64 = -1e9;

/// Inverted dropout driven by its own seeded stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    rng: ChaCha8Rng,
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), rate }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, ModelError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep: T = lit(1.0 / (1.0 - self.rate));
        let n = g.value(x).len();
        let mask = (0..n).map(|_| if self.rng.random::<f64>() < self.rate { T::zero() } else { keep }).collect();
        Ok(g.mul_const(x, mask)?)
    }
}

fn maybe_dropout<T: Scalar>(g: &mut Graph<'_, T>, x: Var, d: &mut Option<&mut Dropout>) -> Result<Var, ModelError> {
    match d {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// Final hidden states, `[len, hidden]`, for one packed sequence. Positions
/// with a zero attention mask are hidden from every query.
pub fn encode<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    config: &EncoderConfig,
    pv: &ParamVars,
    packed: &PackedSequence,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var, ModelError> {
    let len = packed.len();
    if len == 0 || len > config.max_positions {
        return Err(ModelError::SequenceTooLong { len, max: config.max_positions });
    }
    if let Some(&id) = packed.token_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::TokenId { id, vocab: config.vocab_size });
    }
    let ids: Vec<usize> = packed.token_ids.iter().map(|&i| i as usize).collect();
    let segs: Vec<usize> = packed.segment_ids.iter().map(|&s| s as usize).collect();
    let positions: Vec<usize> = (0..len).collect();

    let tok = g.gather_rows(pv.token, &ids)?;
    let pos = g.gather_rows(pv.position, &positions)?;
    let seg = g.gather_rows(pv.segment, &segs)?;
    let x = g.add(tok, pos)?;
    let x = g.add(x, seg)?;
    let x = g.layer_norm(x, pv.embed_norm.0, pv.embed_norm.1, lit(NORM_EPS))?;
    let mut x = maybe_dropout(g, x, &mut dropout)?;

    let mask = if packed.attention_mask.iter().all(|&m| m == 1) {
        None
    } else {
        let row: Vec<T> = packed.attention_mask.iter().map(|&m| if m == 1 { T::zero() } else { lit(MASKED) }).collect();
        let data = (0..len).flat_map(|_| row.iter().copied()).collect();
        Some(g.constant(Tensor::new(vec![len, len], data)?))
    };

    for layer in &pv.layers {
        x = encoder_layer(g, config, layer, x, mask, &mut dropout)?;
    }
    Ok(x)
}

fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: Var, (w, b): (Var, Var)) -> Result<Var, ModelError> {
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

fn encoder_layer<T: Scalar>(
    g: &mut Graph<'_, T>,
    config: &EncoderConfig,
    layer: &LayerVars,
    x: Var,
    mask: Option<Var>,
    dropout: &mut Option<&mut Dropout>,
) -> Result<Var, ModelError> {
    let d = config.head_dim();
    let scale: T = lit(1.0 / (d as f64).sqrt());
    let q = linear(g, x, layer.query)?;
    let k = g.matmul(x, layer.key)?;
    let v = linear(g, x, layer.value)?;
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = g.slice_last(q, h * d, d)?;
        let kh = g.slice_last(k, h * d, d)?;
        let vh = g.slice_last(v, h * d, d)?;
        let scores = g.matmul_t(qh, kh)?;
        let mut scores = g.affine(scores, scale, T::zero());
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let p = g.softmax(scores);
        heads.push(g.matmul(p, vh)?);
    }
    let ctx = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
    let attn = linear(g, ctx, layer.output)?;
    let attn = maybe_dropout(g, attn, dropout)?;
    let x = g.add(x, attn)?;
    let x = g.layer_norm(x, layer.attn_norm.0, layer.attn_norm.1, lit(NORM_EPS))?;

    let hidden = linear(g, x, layer.ffn_in)?;
    let hidden = g.gelu(hidden);
    let out = linear(g, hidden, layer.ffn_out)?;
    let out = maybe_dropout(g, out, dropout)?;
    let x2 = g.add(x, out)?;
    Ok(g.layer_norm(x2, layer.ffn_norm.0, layer.ffn_norm.1, lit(NORM_EPS))?)
}
