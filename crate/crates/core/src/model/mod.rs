//! Transformer encoder with an answer head and two relation heads.
//!
//! The answer head scores each option from the `[CLS]` state. The relation
//! heads read the final hidden states at the first subword of each concept
//! pair: a bilinear existence score and a two-layer type classifier.

mod checkpoint;
mod encoder;
mod heads;
mod params;
mod suite;

pub use encoder::{encode, Dropout};
pub use heads::{answer_logit, answer_loss, joint_loss, relation_existence_loss, relation_type_loss, LossWeights};
pub use params::{bind, LayerVars, ModelParams, ParamVars};
pub use suite::{GradCheckSuite, SuiteReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::gradcheck::{check_gradients, GradCheckReport};
use crate::autodiff::{softmax, AutodiffError, Graph, Tensor, Var};
use crate::supervision::{LabelMatrices, SupervisionError};
use crate::text::{pack, Example, PackedSequence, TextError, Vocab};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenId { id: u32, vocab: usize },
    #[error("pair index {index} outside sequence of {len}")]
    PairIndex { index: usize, len: usize },
    #[error("relation class {class} but the type head has {classes}")]
    RelationClass { class: usize, classes: usize },
    #[error("gold option {gold} of {count}")]
    Gold { gold: usize, count: usize },
    #[error("loss weight must be finite and >= 0, got {0}")]
    BadWeight(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ff", self.ff),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!("hidden {} not divisible by {} heads", self.hidden, self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Rows of the type head: the relation count, plus one for the merged
    /// no-relation class.
    pub type_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.type_classes == 0 {
            return Err(ModelError::Config("type_classes must be positive".into()));
        }
        Ok(())
    }
}

/// One option's packed input with its pair labels.
#[derive(Debug, Clone, Copy)]
pub struct OptionInput<'a> {
    pub packed: &'a PackedSequence,
    pub labels: &'a LabelMatrices,
}

/// Loss values of one example. `existence` and `relation_type` are means
/// over the example's options, so `total = answer + λ₁·existence + λ₂·relation_type`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub answer: f64,
    pub existence: f64,
    pub relation_type: f64,
}

/// Graph handles produced by [`example_loss`].
#[derive(Debug, Clone)]
pub struct ExampleGraph {
    pub params: ParamVars,
    pub loss: Var,
    pub logits: Vec<Var>,
    pub components: LossComponents,
}

/// Records the joint loss of one example on `g`. Both auxiliary losses are
/// always evaluated for reporting, but only terms with a positive weight are
/// connected to `loss`.
pub fn example_loss<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    config: &ModelConfig,
    tensors: &'p [Tensor<T>],
    options: &[OptionInput<'_>],
    gold: usize,
    weights: LossWeights,
    mut dropout: Option<&mut Dropout>,
) -> Result<ExampleGraph, ModelError> {
    weights.validate()?;
    let pv = bind(g, config, tensors)?;
    let mut logits = Vec::with_capacity(options.len());
    let mut aux = Vec::with_capacity(options.len());
    for opt in options {
        let h = encode(g, &config.encoder, &pv, opt.packed, dropout.as_deref_mut())?;
        logits.push(answer_logit(g, h, pv.v)?);
        let re = relation_existence_loss(g, h, &opt.labels.existence, pv.w1)?;
        let rt = relation_type_loss(g, h, &opt.labels.types, pv.w2, pv.w3)?;
        aux.push((re, rt));
    }
    let ap = answer_loss(g, &logits, gold)?;
    let loss = joint_loss(g, ap, &aux, weights)?;

    let n = options.len() as f64;
    let mean_of = |f: &dyn Fn(&(Var, Var)) -> Var| aux.iter().map(|p| g.value(f(p)).item().to_f64_lossy()).sum::<f64>() / n;
    let components = LossComponents {
        total: g.value(loss).item().to_f64_lossy(),
        answer: g.value(ap).item().to_f64_lossy(),
        existence: mean_of(&|p| p.0),
        relation_type: mean_of(&|p| p.1),
    };
    Ok(ExampleGraph { params: pv, loss, logits, components })
}

/// Analytic gradients of [`example_loss`] for every parameter tensor, with
/// zeros where backward did not reach.
pub fn example_gradients<T: Scalar>(
    config: &ModelConfig,
    tensors: &[Tensor<T>],
    options: &[OptionInput<'_>],
    gold: usize,
    weights: LossWeights,
    dropout: Option<&mut Dropout>,
) -> Result<(LossComponents, Vec<Vec<T>>), ModelError> {
    let mut g = Graph::new();
    let out = example_loss(&mut g, config, tensors, options, gold, weights, dropout)?;
    g.backward(out.loss)?;
    let grads = out
        .params
        .all
        .iter()
        .zip(tensors)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![T::zero(); t.len()], <[T]>::to_vec))
        .collect();
    Ok((out.components, grads))
}

/// Central finite-difference check of every parameter gradient of the
/// joint loss on one example.
pub fn check_example_gradients(
    config: &ModelConfig,
    tensors: &[Tensor<f64>],
    options: &[OptionInput<'_>],
    gold: usize,
    weights: LossWeights,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, analytic) = example_gradients(config, tensors, options, gold, weights, None)?;
    let mut probe = tensors.to_vec();
    let mut failure = None;
    let report = check_gradients(&mut probe, &analytic, eps, tolerance, |ts| {
        let mut g = Graph::new();
        match example_loss(&mut g, config, ts, options, gold, weights, None) {
            Ok(out) => g.value(out.loss).item(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Softmax over option logits and the arg-max, ties to the lowest index.
pub fn choose<T: Scalar>(logits: &[T]) -> Result<(usize, Vec<T>), ModelError> {
    let probs = softmax(logits)?;
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    Ok((best, probs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub index: usize,
    pub probabilities: Vec<T>,
    pub logits: Vec<T>,
}

/// Parameters together with the tokenizer state needed to pack inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub params: ModelParams<T>,
    pub vocab: Vocab,
    pub max_seq_len: usize,
}

impl<T: Scalar> Model<T> {
    pub fn new(params: ModelParams<T>, vocab: Vocab, max_seq_len: usize) -> Result<Self, ModelError> {
        let enc = &params.config().encoder;
        if vocab.len() != enc.vocab_size {
            return Err(ModelError::Config(format!("vocab has {} tokens, encoder expects {}", vocab.len(), enc.vocab_size)));
        }
        if max_seq_len > enc.max_positions || max_seq_len < 4 {
            return Err(ModelError::Config(format!("max_seq_len {max_seq_len} outside 4..={}", enc.max_positions)));
        }
        Ok(Self { params, vocab, max_seq_len })
    }

    /// Packs every option, trimmed of padding.
    pub fn pack_example(&self, example: &Example) -> Result<Vec<PackedSequence>, ModelError> {
        (0..example.options.len()).map(|o| Ok(pack(example, o, &self.vocab, self.max_seq_len)?.trimmed())).collect()
    }

    pub fn option_logits(&self, packed: &[PackedSequence]) -> Result<Vec<T>, ModelError> {
        let mut g = Graph::new();
        let config = self.params.config();
        let pv = bind(&mut g, config, self.params.tensors())?;
        packed
            .iter()
            .map(|p| {
                let h = encode(&mut g, &config.encoder, &pv, p, None)?;
                let l = answer_logit(&mut g, h, pv.v)?;
                Ok(g.value(l).item())
            })
            .collect()
    }

    pub fn predict(&self, example: &Example) -> Result<Prediction<T>, ModelError> {
        let logits = self.option_logits(&self.pack_example(example)?)?;
        let (index, probabilities) = choose(&logits)?;
        Ok(Prediction { index, probabilities, logits })
    }
}
