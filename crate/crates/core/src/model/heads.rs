use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::scalar::lit;
use crate::supervision::{ExistenceLabel, TypeLabel};
use crate::Scalar;

/// λ₁ (existence) and λ₂ (type) in the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub existence: f64,
    pub relation_type: f64,
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights { existence: 0.0, relation_type: 0.0 };

    pub fn new(existence: f64, relation_type: f64) -> Self {
        Self { existence, relation_type }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for w in [self.existence, self.relation_type] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ModelError::BadWeight(w));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(0.5, 0.5)
    }
}

/// `vᵀ h₀`, the `[CLS]` score of one option, as a 1-element vector.
pub fn answer_logit<T: Scalar>(g: &mut Graph<'_, T>, hidden: Var, v: Var) -> Result<Var, ModelError> {
    let cls = g.gather_rows(hidden, &[0])?;
    Ok(g.matmul(cls, v)?)
}

/// Negative log-likelihood of `gold` under the softmax of the option logits.
pub fn answer_loss<T: Scalar>(g: &mut Graph<'_, T>, logits: &[Var], gold: usize) -> Result<Var, ModelError> {
    if gold >= logits.len() {
        return Err(ModelError::Gold { gold, count: logits.len() });
    }
    let z = g.concat(logits)?;
    let ls = g.log_softmax(z);
    let picked = g.pick(ls, &[gold])?;
    Ok(g.affine(picked, -T::one(), T::zero()))
}

fn rows<T: Scalar>(g: &mut Graph<'_, T>, hidden: Var, idx: &[usize]) -> Result<Var, ModelError> {
    let len = g.shape(hidden)[0];
    if let Some(&index) = idx.iter().find(|&&i| i >= len) {
        return Err(ModelError::PairIndex { index, len });
    }
    Ok(g.gather_rows(hidden, idx)?)
}

fn zero<T: Scalar>(g: &mut Graph<'_, T>) -> Var {
    g.constant(Tensor::scalar(T::zero()))
}

/// Mean binary cross-entropy of `sigmoid(h_iᵀ W₁ h_j)` over the labelled
/// pairs; 0 for an empty list.
pub fn relation_existence_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    hidden: Var,
    labels: &[ExistenceLabel],
    w1: Var,
) -> Result<Var, ModelError> {
    if labels.is_empty() {
        return Ok(zero(g));
    }
    let is: Vec<usize> = labels.iter().map(|l| l.i).collect();
    let js: Vec<usize> = labels.iter().map(|l| l.j).collect();
    let hi = rows(g, hidden, &is)?;
    let hj = rows(g, hidden, &js)?;
    let proj = g.matmul(hi, w1)?;
    let prod = g.mul(proj, hj)?;
    let scores = g.sum_last(prod);
    // -log p for positives, -log (1 - p) = -log sigmoid(-s) for negatives
    let signs = labels.iter().map(|l| if l.y { T::one() } else { -T::one() }).collect();
    let signed = g.mul_const(scores, signs)?;
    let ll = g.log_sigmoid(signed);
    let mean = g.mean(ll);
    Ok(g.affine(mean, -T::one(), T::zero()))
}

/// `-(1/|S|) Σ log softmax(W₃ ReLU(W₂ [h_i; h_j]))[k]` over the typed
/// pairs; 0 when there are none.
pub fn relation_type_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    hidden: Var,
    labels: &[TypeLabel],
    w2: Var,
    w3: Var,
) -> Result<Var, ModelError> {
    if labels.is_empty() {
        return Ok(zero(g));
    }
    let classes = g.shape(w3)[0];
    if let Some(l) = labels.iter().find(|l| l.k >= classes) {
        return Err(ModelError::RelationClass { class: l.k, classes });
    }
    let is: Vec<usize> = labels.iter().map(|l| l.i).collect();
    let js: Vec<usize> = labels.iter().map(|l| l.j).collect();
    let ks: Vec<usize> = labels.iter().map(|l| l.k).collect();
    let hi = rows(g, hidden, &is)?;
    let hj = rows(g, hidden, &js)?;
    let pair = g.concat(&[hi, hj])?;
    let inner = g.matmul_t(pair, w2)?;
    let inner = g.relu(inner);
    let logits = g.matmul_t(inner, w3)?;
    let ls = g.log_softmax(logits);
    let picked = g.pick(ls, &ks).map_err(|e| match e {
        AutodiffError::Index { index, len } => ModelError::RelationClass { class: index, classes: len },
        e => e.into(),
    })?;
    let mean = g.mean(picked);
    Ok(g.affine(mean, -T::one(), T::zero()))
}

/// `L = L_AP + (1/N) Σ_l (λ₁ L_RE_l + λ₂ L_RT_l)`. A term whose weight is
/// zero is left out of the graph entirely, so with both weights at zero the
/// result is the answer loss node itself.
pub fn joint_loss<T: Scalar>(g: &mut Graph<'_, T>, answer: Var, per_option: &[(Var, Var)], weights: LossWeights) -> Result<Var, ModelError> {
    weights.validate()?;
    if per_option.is_empty() {
        return Ok(answer);
    }
    let n = per_option.len() as f64;
    let mut total = answer;
    for &(re, rt) in per_option {
        for (term, w) in [(re, weights.existence), (rt, weights.relation_type)] {
            if w == 0.0 {
                continue;
            }
            let scaled = g.affine(term, lit(w / n), T::zero());
            total = g.add(total, scaled)?;
        }
    }
    Ok(total)
}
