//! Relation-aware multi-task training for multi-choice reading comprehension.
//!
//! A small transformer encoder scores each (document, option) pair through its
//! `[CLS]` state. Two auxiliary heads read concept pairs found by matching a
//! triple store against the packed text: one predicts whether any relation
//! links the pair, the other which relation type does. Everything runs on a
//! reverse-mode autodiff engine generic over `f32`/`f64`.

pub mod autodiff;
mod scalar;
pub mod kb;
pub mod model;
pub mod supervision;
pub mod synth;
pub mod text;
pub mod training;

pub use scalar::Scalar;

/// `f64` instantiations of the generic types.
pub type Tensor = autodiff::Tensor<f64>;
pub type Graph<'p> = autodiff::Graph<'p, f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Model = model::Model<f64>;
pub type Adam = training::Adam<f64>;
pub type TrainOutput = training::TrainOutput<f64>;
