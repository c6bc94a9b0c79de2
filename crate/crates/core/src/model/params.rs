use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::autodiff::{Graph, Tensor, Var};
use crate::scalar::lit;
use crate::Scalar;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zero,
    One,
}

/// Canonical parameter list: name, shape and default initialisation.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let e = &config.encoder;
    let (h, f) = (e.hidden, e.ff);
    let mut out = vec![
        ("embed.token".to_string(), vec![e.vocab_size, h], Init::Normal),
        ("embed.position".to_string(), vec![e.max_positions, h], Init::Normal),
        ("embed.segment".to_string(), vec![2, h], Init::Normal),
        ("embed.norm.gamma".to_string(), vec![h], Init::One),
        ("embed.norm.beta".to_string(), vec![h], Init::Zero),
    ];
    for l in 0..e.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        for proj in ["query", "key", "value", "output"] {
            out.push((p(&format!("attn.{proj}.weight")), vec![h, h], Init::Normal));
            // a key bias shifts every score of a query equally, so it has no effect
            if proj != "key" {
                out.push((p(&format!("attn.{proj}.bias")), vec![h], Init::Zero));
            }
        }
        out.push((p("attn.norm.gamma"), vec![h], Init::One));
        out.push((p("attn.norm.beta"), vec![h], Init::Zero));
        out.push((p("ffn.in.weight"), vec![h, f], Init::Normal));
        out.push((p("ffn.in.bias"), vec![f], Init::Zero));
        out.push((p("ffn.out.weight"), vec![f, h], Init::Normal));
        out.push((p("ffn.out.bias"), vec![h], Init::Zero));
        out.push((p("ffn.norm.gamma"), vec![h], Init::One));
        out.push((p("ffn.norm.beta"), vec![h], Init::Zero));
    }
    out.push(("head.answer.v".into(), vec![h], Init::Zero));
    out.push(("head.exist.w1".into(), vec![h, h], Init::Normal));
    out.push(("head.type.w2".into(), vec![h, 2 * h], Init::Normal));
    out.push(("head.type.w3".into(), vec![config.type_classes, h], Init::Zero));
    out
}

/// All trainable tensors, in a fixed order with stable names.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Truncated-normal (σ = 0.02, cut at 2σ) weights, zero biases, unit
    /// norm gains; the answer vector and the type output matrix start at 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut draw = || loop {
            let x: f64 = normal.sample(&mut rng);
            if x.abs() <= 2.0 * INIT_STD {
                return x;
            }
        };
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Normal => (0..n).map(|_| lit(draw())).collect(),
                Init::Zero => vec![T::zero(); n],
                Init::One => vec![T::one(); n],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, names, tensors })
    }

    /// Every entry drawn from N(0, std), norm gains from N(1, std). Used for
    /// gradient checks, where zero heads would hide most of the graph.
    pub fn random(config: ModelConfig, std: f64, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let base = if init == Init::One { 1.0 } else { 0.0 };
            let data = (0..n).map(|_| lit(base + normal.sample(&mut rng))).collect();
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the config's layout.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, got {}", expected.len(), named.len())));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((want, shape, _), (name, t)) in expected.into_iter().zip(named) {
            if want != name || t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!("tensor {name} {:?} where {want} {shape:?} was expected", t.shape())));
            }
            if !t.is_finite() {
                return Err(ModelError::Checkpoint(format!("tensor {name} has non-finite values")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { config, names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub query: (Var, Var),
    pub key: Var,
    pub value: (Var, Var),
    pub output: (Var, Var),
    pub attn_norm: (Var, Var),
    pub ffn_in: (Var, Var),
    pub ffn_out: (Var, Var),
    pub ffn_norm: (Var, Var),
}

/// Graph leaves for every parameter; `all` is in canonical order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub all: Vec<Var>,
    pub token: Var,
    pub position: Var,
    pub segment: Var,
    pub embed_norm: (Var, Var),
    pub layers: Vec<LayerVars>,
    pub v: Var,
    pub w1: Var,
    pub w2: Var,
    pub w3: Var,
}

/// Registers `tensors` (in canonical order for `config`) as parameter leaves.
pub fn bind<'p, T: Scalar>(g: &mut Graph<'p, T>, config: &ModelConfig, tensors: &'p [Tensor<T>]) -> Result<ParamVars, ModelError> {
    let expected = layout(config);
    if expected.len() != tensors.len() {
        return Err(ModelError::Config(format!("expected {} tensors, got {}", expected.len(), tensors.len())));
    }
    for ((name, shape, _), t) in expected.iter().zip(tensors) {
        if t.shape() != shape.as_slice() {
            return Err(ModelError::Config(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
        }
    }
    let all: Vec<Var> = tensors.iter().map(|t| g.param(t)).collect();
    let mut it = all.iter().copied();
    let mut next = || it.next().expect("layout checked");
    let token = next();
    let position = next();
    let segment = next();
    let embed_norm = (next(), next());
    let mut layers = Vec::with_capacity(config.encoder.layers);
    for _ in 0..config.encoder.layers {
        layers.push(LayerVars {
            query: (next(), next()),
            key: next(),
            value: (next(), next()),
            output: (next(), next()),
            attn_norm: (next(), next()),
            ffn_in: (next(), next()),
            ffn_out: (next(), next()),
            ffn_norm: (next(), next()),
        });
    }
    let (v, w1, w2, w3) = (next(), next(), next(), next());
    Ok(ParamVars { all, token, position, segment, embed_norm, layers, v, w1, w2, w3 })
}
