use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{EncoderConfig, LossWeights};
use crate::supervision::DEFAULT_MAX_NGRAM;

/// Which auxiliary tasks are trained alongside answer prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Ap,
    Re,
    Rt,
    ReRt,
    /// Type task with an extra no-relation class absorbing the negatives;
    /// the existence task is off.
    Merged,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [Self::Ap, Self::Re, Self::Rt, Self::ReRt, Self::Merged];

    pub fn key(self) -> &'static str {
        match self {
            Self::Ap => "ap",
            Self::Re => "re",
            Self::Rt => "rt",
            Self::ReRt => "re_rt",
            Self::Merged => "merged",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Self::Ap => "AP only",
            Self::Re => "+ L_RE",
            Self::Rt => "+ L_RT",
            Self::ReRt => "+ L_RE + L_RT",
            Self::Merged => "+ L_RT + no-relation",
        }
    }

    /// Effective loss weights given the configured λ₁, λ₂.
    pub fn weights(self, lambda_re: f64, lambda_rt: f64) -> LossWeights {
        match self {
            Self::Ap => LossWeights::NONE,
            Self::Re => LossWeights::new(lambda_re, 0.0),
            Self::Rt | Self::Merged => LossWeights::new(0.0, lambda_rt),
            Self::ReRt => LossWeights::new(lambda_re, lambda_rt),
        }
    }

    pub fn merged(self) -> bool {
        self == Self::Merged
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AblationMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown mode {s:?} (expected ap, re, rt, re_rt or merged)")))
    }
}

/// Encoder shape; vocabulary size and positions are filled in at training
/// time from the tokenizer and `max_seq_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff: usize,
    pub dropout: f64,
}

impl EncoderShape {
    pub fn build(&self, vocab_size: usize, max_positions: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            ff: self.ff,
            vocab_size,
            max_positions,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_re: f64,
    pub lambda_rt: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Examples per optimizer step; all options of an example stay together.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: AblationMode,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Sample negatives once instead of every epoch.
    pub freeze_supervision: bool,
    pub max_ngram: usize,
    pub max_seq_len: usize,
    pub bpe_merges: usize,
    pub encoder: EncoderShape,
}

/// Learning rate used for fine-tuning a pretrained encoder; kept as a preset.
pub const FINETUNE_LEARNING_RATE: f64 = 2e-5;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_re: 0.5,
            lambda_rt: 0.5,
            gamma: 4.0,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 3,
            seed: 0,
            mode: AblationMode::ReRt,
            clip_norm: 1.0,
            freeze_supervision: false,
            max_ngram: DEFAULT_MAX_NGRAM,
            max_seq_len: 64,
            bpe_merges: 1000,
            encoder: EncoderShape { layers: 2, heads: 2, hidden: 32, ff: 64, dropout: 0.1 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [("lambda_re", self.lambda_re), ("lambda_rt", self.lambda_rt), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be finite and >= 0, got {}", self.clip_norm));
        }
        for (name, v) in [("batch_size", self.batch_size), ("epochs", self.epochs), ("max_ngram", self.max_ngram)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.max_seq_len < 4 {
            return bad(format!("max_seq_len must be at least 4, got {}", self.max_seq_len));
        }
        self.encoder.build(1, self.max_seq_len).validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn weights(&self) -> LossWeights {
        self.mode.weights(self.lambda_re, self.lambda_rt)
    }

    /// Sets one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
            value.parse().map_err(|_| TrainError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "lambda_re" => self.lambda_re = parse(key, value)?,
            "lambda_rt" => self.lambda_rt = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "freeze_supervision" => self.freeze_supervision = parse(key, value)?,
            "max_ngram" => self.max_ngram = parse(key, value)?,
            "max_seq_len" => self.max_seq_len = parse(key, value)?,
            "bpe_merges" => self.bpe_merges = parse(key, value)?,
            "layers" => self.encoder.layers = parse(key, value)?,
            "heads" => self.encoder.heads = parse(key, value)?,
            "hidden" => self.encoder.hidden = parse(key, value)?,
            "ff" => self.encoder.ff = parse(key, value)?,
            "dropout" => self.encoder.dropout = parse(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file on top of `self`. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), TrainError> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// The config as `key = value` lines, readable by [`TrainConfig::apply_kv`].
    pub fn to_kv(&self) -> String {
        let e = &self.encoder;
        let pairs: [(&str, String); 18] = [
            ("lambda_re", self.lambda_re.to_string()),
            ("lambda_rt", self.lambda_rt.to_string()),
            ("gamma", self.gamma.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("freeze_supervision", self.freeze_supervision.to_string()),
            ("max_ngram", self.max_ngram.to_string()),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("layers", e.layers.to_string()),
            ("heads", e.heads.to_string()),
            ("hidden", e.hidden.to_string()),
            ("ff", e.ff.to_string()),
            ("dropout", e.dropout.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Splits flat `key = value` text into pairs, rejecting lines without `=`
/// and repeated keys.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, TrainError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(TrainError::Config(format!("line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(TrainError::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(TrainError::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
