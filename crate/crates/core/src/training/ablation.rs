use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, TrainConfig, TrainError};
use crate::kb::TripleIndex;
use crate::model::LossWeights;
use crate::text::Example;

use super::AblationMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub label: String,
    /// Dev accuracy per seed, as fractions.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub stdev: f64,
    /// Mean gain over the answer-only row in accuracy points; `None` when
    /// that row was not run.
    pub delta_points: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains one model per (mode, seed) on `train_set` and scores it on `dev`.
/// `progress` sees each finished run.
pub fn run_ablation(
    train_set: &[Example],
    dev: &[Example],
    index: &TripleIndex,
    base: &TrainConfig,
    modes: &[AblationMode],
    seeds: &[u64],
    mut progress: impl FnMut(AblationMode, u64, f64),
) -> Result<AblationTable, TrainError> {
    if seeds.is_empty() || modes.is_empty() {
        return Err(TrainError::Config("ablation needs at least one mode and one seed".into()));
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = TrainConfig { mode, seed, ..base.clone() };
            let out = train::<f32>(train_set, index, &config)?;
            let report = evaluate(&out.model, dev, None, LossWeights::NONE, config.max_ngram)?;
            progress(mode, seed, report.accuracy);
            accuracies.push(report.accuracy);
        }
        let (mean, stdev) = mean_stdev(&accuracies);
        rows.push(AblationRow { mode, label: mode.label().to_string(), accuracies, mean, stdev, delta_points: None });
    }
    if let Some(base_mean) = rows.iter().find(|r| r.mode == AblationMode::Ap).map(|r| r.mean) {
        for r in &mut rows {
            r.delta_points = Some(100.0 * (r.mean - base_mean));
        }
    }
    Ok(AblationTable { seeds: seeds.to_vec(), rows })
}

impl AblationTable {
    pub fn row(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Fixed-width text table: accuracy as mean ± stdev in percent and the
    /// gain over the answer-only row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:>16} {:>8}", "setting", "dev acc (%)", "delta");
        for r in &self.rows {
            let delta = r.delta_points.map_or_else(|| "-".to_string(), |d| format!("{d:+.2}"));
            let acc = format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.stdev);
            let _ = writeln!(out, "{:<22} {:>16} {:>8}", r.label, acc, delta);
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "seeds: {}", seeds.join(", "));
        out
    }
}
