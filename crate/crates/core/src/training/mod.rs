//! Joint training, evaluation and the ablation runner.

mod ablation;
mod config;
mod optim;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use config::{parse_kv, AblationMode, EncoderShape, TrainConfig, FINETUNE_LEARNING_RATE};
pub use optim::{clip_global_norm, Adam};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph};
use crate::kb::TripleIndex;
use crate::model::{
    choose, example_gradients, example_loss, Dropout, LossComponents, LossWeights, Model, ModelConfig, ModelError, ModelParams,
    OptionInput,
};
use crate::supervision::{build_supervision, derive_seed, find_mentions, label_matrices, ConceptMention, LabelMatrices, SupervisionError};
use crate::text::{pack, train_bpe, Example, PackedSequence, TextError, Vocab};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss or gradient at step {step} on example {example}: {detail}")]
    NonFinite { step: u64, example: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// Stream tags for derived seeds.
const INIT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const SUPERVISION_STREAM: u64 = 3;
const DROPOUT_STREAM: u64 = 4;

/// One optimizer step's mean losses over its batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "L_AP")]
    pub answer: f64,
    #[serde(rename = "L_RE")]
    pub existence: f64,
    #[serde(rename = "L_RT")]
    pub relation_type: f64,
}

pub fn write_history(path: &Path, history: &[HistoryRecord]) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in history {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// An example packed once, with its concept mentions per option.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub ordinal: usize,
    pub id: String,
    pub label: usize,
    pub packed: Vec<PackedSequence>,
    pub mentions: Vec<Vec<ConceptMention>>,
}

/// Packs (trimmed) every option of every example and, given an index, finds
/// its concept mentions.
pub fn prepare(
    dataset: &[Example],
    vocab: &Vocab,
    max_seq_len: usize,
    index: Option<&TripleIndex>,
    max_ngram: usize,
) -> Result<Vec<PreparedExample>, TrainError> {
    dataset
        .iter()
        .enumerate()
        .map(|(ordinal, ex)| {
            ex.validate()?;
            let mut packed = Vec::with_capacity(ex.options.len());
            let mut mentions = Vec::with_capacity(ex.options.len());
            for o in 0..ex.options.len() {
                let p = pack(ex, o, vocab, max_seq_len)?.trimmed();
                mentions.push(index.map(|idx| find_mentions(&p, idx, max_ngram)).unwrap_or_default());
                packed.push(p);
            }
            Ok(PreparedExample { ordinal, id: ex.id.clone(), label: ex.label, packed, mentions })
        })
        .collect()
}

/// Where pair labels come from when building supervision.
#[derive(Debug, Clone, Copy)]
pub struct SupervisionSource<'a> {
    pub index: &'a TripleIndex,
    pub gamma: f64,
    pub seed: u64,
    /// Append the no-relation class (id = relation count) for negatives.
    pub merged: bool,
}

impl SupervisionSource<'_> {
    /// Label lists for every option of `ex`, sampled with the stream for
    /// `round` (the epoch, or 0 when frozen).
    pub fn labels(&self, ex: &PreparedExample, round: u64) -> Result<Vec<LabelMatrices>, TrainError> {
        let no_relation = self.index.relations().len();
        ex.mentions
            .iter()
            .enumerate()
            .map(|(o, ms)| {
                let seed = derive_seed(self.seed, &[SUPERVISION_STREAM, round, ex.ordinal as u64, o as u64]);
                let set = build_supervision(ms, self.index, self.gamma, seed)?;
                let labels = label_matrices(&set)?;
                Ok(if self.merged { labels.with_no_relation_class(no_relation) } else { labels })
            })
            .collect()
    }
}

/// Every document, question and option, as BPE training text.
pub fn corpus(dataset: &[Example]) -> Vec<&str> {
    let mut out = Vec::new();
    for ex in dataset {
        out.push(ex.document.as_str());
        if let Some(q) = &ex.question {
            out.push(q.as_str());
        }
        out.extend(ex.options.iter().map(String::as_str));
    }
    out
}

pub fn model_config(config: &TrainConfig, vocab_size: usize, relations: usize) -> ModelConfig {
    ModelConfig {
        encoder: config.encoder.build(vocab_size, config.max_seq_len),
        type_classes: relations + usize::from(config.mode.merged()),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<HistoryRecord>,
}

/// Trains a fresh model on `dataset` under the joint objective. Everything
/// random (tokenizer is deterministic; init, data order, negative sampling,
/// dropout) derives from `config.seed`.
pub fn train<T: Scalar>(dataset: &[Example], index: &TripleIndex, config: &TrainConfig) -> Result<TrainOutput<T>, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let vocab = train_bpe(&corpus(dataset), config.bpe_merges)?;
    let model_cfg = model_config(config, vocab.len(), index.relations().len());
    let params = ModelParams::<T>::init(model_cfg.clone(), derive_seed(config.seed, &[INIT_STREAM]))?;
    let mut model = Model::new(params, vocab, config.max_seq_len)?;

    let prepared = prepare(dataset, &model.vocab, config.max_seq_len, Some(index), config.max_ngram)?;
    let source = SupervisionSource { index, gamma: config.gamma, seed: config.seed, merged: config.mode.merged() };
    let weights = config.weights();
    let dropout_rate = model_cfg.encoder.dropout;

    let mut adam = Adam::new(config.learning_rate, model.params.tensors());
    let mut history = Vec::new();
    let mut labels: Vec<Vec<LabelMatrices>> = Vec::new();
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 0..config.epochs {
        if epoch == 0 || !config.freeze_supervision {
            labels = prepared.iter().map(|ex| source.labels(ex, epoch as u64)).collect::<Result<_, _>>()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[ORDER_STREAM, epoch as u64]));
        order.shuffle(&mut rng);

        for batch in order.chunks(config.batch_size) {
            let step = adam.steps() + 1;
            let mut sum: Option<Vec<Vec<T>>> = None;
            let mut comps = LossComponents::default();
            for &k in batch {
                let ex = &prepared[k];
                let inputs: Vec<OptionInput> =
                    ex.packed.iter().zip(&labels[k]).map(|(p, l)| OptionInput { packed: p, labels: l }).collect();
                let mut dropout = (dropout_rate > 0.0)
                    .then(|| Dropout::new(dropout_rate, derive_seed(config.seed, &[DROPOUT_STREAM, epoch as u64, ex.ordinal as u64])));
                let (c, grads) = example_gradients(&model_cfg, model.params.tensors(), &inputs, ex.label, weights, dropout.as_mut())
                    .map_err(|e| match e {
                        ModelError::Autodiff(AutodiffError::NonFinite(detail)) => {
                            TrainError::NonFinite { step, example: ex.id.clone(), detail }
                        }
                        e => e.into(),
                    })?;
                comps.total += c.total;
                comps.answer += c.answer;
                comps.existence += c.existence;
                comps.relation_type += c.relation_type;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                        }
                    }
                }
            }
            let n = batch.len() as f64;
            let mut grads = sum.expect("non-empty batch");
            let inv = T::from_f64_lossy(1.0 / n);
            grads.iter_mut().flatten().for_each(|g| *g = *g * inv);
            let norm = clip_global_norm(&mut grads, config.clip_norm);
            if !norm.is_finite() {
                return Err(TrainError::NonFinite { step, example: prepared[batch[0]].id.clone(), detail: "gradient norm".into() });
            }
            adam.update(model.params.tensors_mut(), &grads);
            history.push(HistoryRecord {
                step,
                epoch,
                loss: comps.total / n,
                answer: comps.answer / n,
                existence: comps.existence / n,
                relation_type: comps.relation_type / n,
            });
        }
    }
    if !model.params.is_finite() {
        return Err(TrainError::NonFinite { step: adam.steps(), example: String::new(), detail: "parameters".into() });
    }
    Ok(TrainOutput { model, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub examples: usize,
    /// Per-example means; the auxiliary ones are 0 without a knowledge index.
    pub mean_losses: LossComponents,
    pub weights: LossWeights,
    pub predictions: Vec<usize>,
    pub model: ModelConfig,
    pub max_seq_len: usize,
}

/// Accuracy of `model` on `dataset`. With a supervision source the report
/// also carries the auxiliary losses under `weights`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    dataset: &[Example],
    source: Option<SupervisionSource<'_>>,
    weights: LossWeights,
    max_ngram: usize,
) -> Result<EvalReport, TrainError> {
    let prepared = prepare(dataset, &model.vocab, model.max_seq_len, source.map(|s| s.index), max_ngram)?;
    let cfg = model.params.config();
    let mut sums = LossComponents::default();
    let mut predictions = Vec::with_capacity(prepared.len());
    let mut correct = 0;
    for ex in &prepared {
        let labels = match source {
            Some(s) => s.labels(ex, 0)?,
            None => vec![LabelMatrices::default(); ex.packed.len()],
        };
        let inputs: Vec<OptionInput> = ex.packed.iter().zip(&labels).map(|(p, l)| OptionInput { packed: p, labels: l }).collect();
        let mut g = Graph::new();
        let out = example_loss(&mut g, cfg, model.params.tensors(), &inputs, ex.label, weights, None)?;
        let logits: Vec<T> = out.logits.iter().map(|&l| g.value(l).item()).collect();
        let (pick, _) = choose(&logits)?;
        correct += usize::from(pick == ex.label);
        predictions.push(pick);
        sums.total += out.components.total;
        sums.answer += out.components.answer;
        sums.existence += out.components.existence;
        sums.relation_type += out.components.relation_type;
    }
    let n = prepared.len().max(1) as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        correct,
        examples: prepared.len(),
        mean_losses: LossComponents {
            total: sums.total / n,
            answer: sums.answer / n,
            existence: sums.existence / n,
            relation_type: sums.relation_type / n,
        },
        weights,
        predictions,
        model: cfg.clone(),
        max_seq_len: model.max_seq_len,
    })
}
