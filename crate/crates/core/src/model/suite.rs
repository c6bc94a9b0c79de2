use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_example_gradients, EncoderConfig, LossWeights, ModelConfig, ModelError, ModelParams, OptionInput};
use crate::autodiff::gradcheck::GradCheckReport;
use crate::supervision::{ExistenceLabel, LabelMatrices, TypeLabel};
use crate::text::{pack, train_bpe, Example, PackedSequence};

/// Finite-difference check of the full joint loss on a random tiny model
/// and random inputs with random pair labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSuite {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub relations: usize,
    pub seq_len: usize,
    pub options: usize,
    pub seed: u64,
    /// Std of the random parameters; large enough that no unit is linear.
    pub init_std: f64,
    pub step: f64,
    pub tolerance: f64,
    pub weights: LossWeights,
}

impl Default for GradCheckSuite {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 16,
            relations: 5,
            seq_len: 32,
            options: 2,
            seed: 0,
            init_std: 0.3,
            step: 1e-3,
            tolerance: 1e-4,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub report: GradCheckReport,
    /// Parameter tensor names, indexed by `GradCheckEntry::tensor`.
    pub names: Vec<String>,
    pub scalars: usize,
}

impl GradCheckSuite {
    pub fn run(&self) -> Result<SuiteReport, ModelError> {
        if self.seq_len < 8 || self.options < 2 {
            return Err(ModelError::Config("gradcheck needs seq_len >= 8 and at least two options".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let letters = "abcdefghij";
        let vocab = train_bpe(&[letters], 0)?;
        let config = ModelConfig {
            encoder: EncoderConfig {
                layers: self.layers,
                heads: self.heads,
                hidden: self.hidden,
                ff: 2 * self.hidden,
                vocab_size: vocab.len(),
                max_positions: self.seq_len,
                dropout: 0.0,
            },
            type_classes: self.relations,
        };
        let params = ModelParams::<f64>::random(config.clone(), self.init_std, self.seed)?;

        // Leave a few padding slots so the mask is exercised.
        let b_words = 4;
        let a_words = self.seq_len - b_words - 3 - 4;
        let word = |rng: &mut ChaCha8Rng| letters.chars().nth(rng.random_range(0..letters.len())).unwrap().to_string();
        let document: Vec<String> = (0..a_words).map(|_| word(&mut rng)).collect();
        let options: Vec<String> =
            (0..self.options).map(|_| (0..b_words).map(|_| word(&mut rng)).collect::<Vec<_>>().join(" ")).collect();
        let gold = rng.random_range(0..self.options);
        let example = Example { id: "gradcheck".into(), document: document.join(" "), question: None, options, label: gold };

        let packed: Vec<PackedSequence> =
            (0..self.options).map(|o| pack(&example, o, &vocab, self.seq_len)).collect::<Result<_, _>>()?;
        let labels: Vec<LabelMatrices> = packed.iter().map(|p| self.random_labels(&mut rng, p)).collect();
        let inputs: Vec<OptionInput> = packed.iter().zip(&labels).map(|(p, l)| OptionInput { packed: p, labels: l }).collect();
        let report = check_example_gradients(&config, params.tensors(), &inputs, gold, self.weights, self.step, self.tolerance)?;
        Ok(SuiteReport { report, names: params.names().to_vec(), scalars: params.scalar_count() })
    }

    fn random_labels(&self, rng: &mut ChaCha8Rng, p: &PackedSequence) -> LabelMatrices {
        let a = (p.side_a.first_position, p.side_a.first_position + p.side_a.token_count());
        let b = (p.side_b.first_position, p.side_b.first_position + p.side_b.token_count());
        let mut out = LabelMatrices::default();
        for n in 0..4 {
            let (i, j) = (rng.random_range(a.0..a.1), rng.random_range(b.0..b.1));
            let y = n == 0 || rng.random_bool(0.5);
            out.existence.push(ExistenceLabel { i, j, y });
            if y {
                out.types.push(TypeLabel { i, j, k: rng.random_range(0..self.relations) });
            }
        }
        out
    }
}
