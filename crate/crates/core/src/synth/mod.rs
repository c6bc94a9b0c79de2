//! Planted-relation multi-choice datasets with a matching triple dump.
//!
//! Concepts are pseudo-words split into relation families. Family `r` is a
//! clique: the dump links every ordered pair of its members under `r`, and
//! no triple crosses families.
//!
//! Every example's document mentions one anchor concept `c_A`. The correct
//! option holds another member `c_B` of the anchor's family; each distractor
//! holds a member of some other family. In a *gap* example nothing but the
//! triple `(c_A, r, c_B)` tells the correct option apart. In the other
//! examples the correct option also repeats one document word, so word
//! overlap alone solves them.

mod audit;

pub use audit::{audit, audit_files, AuditReport};

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::CONCEPTNET_RELATIONS;
use crate::text::{write_dataset, Example, TextError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("spec infeasible: {0}")]
    Infeasible(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Filler words, split evenly between documents and options.
    pub vocab_size: usize,
    /// Concept phrases, split evenly across families.
    pub concepts: usize,
    /// Relation families, named after the first ConceptNet relations.
    pub relations: usize,
    pub examples: usize,
    pub options: usize,
    pub gap_rate: f64,
    /// Extra cross-family triples, as a fraction of the family triples.
    pub noise_rate: f64,
    pub seed: u64,
    pub document_words: usize,
    pub option_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab_size: 400,
            concepts: 100,
            relations: 5,
            examples: 2500,
            options: 2,
            gap_rate: 0.5,
            noise_rate: 0.0,
            seed: 0,
            document_words: 2,
            option_words: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("concepts", self.concepts),
            ("relations", self.relations),
            ("examples", self.examples),
            ("document_words", self.document_words),
            ("option_words", self.option_words),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(SynthError::Spec(format!("{name} must be positive")));
        }
        if self.options < 2 {
            return Err(SynthError::Spec("need at least two options".into()));
        }
        if self.relations > CONCEPTNET_RELATIONS.len() {
            return Err(SynthError::Spec(format!("at most {} relations", CONCEPTNET_RELATIONS.len())));
        }
        for (name, v) in [("gap_rate", self.gap_rate), ("noise_rate", self.noise_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Spec(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.vocab_size < 4 {
            return Err(SynthError::Spec("vocab_size must be at least 4".into()));
        }
        Ok(())
    }

    fn check_feasible(&self) -> Result<(), SynthError> {
        let members = self.concepts / self.relations;
        if members < 2 {
            return Err(SynthError::Infeasible(format!(
                "{} concepts cannot give each of {} families two members",
                self.concepts, self.relations
            )));
        }
        if self.relations < 2 {
            return Err(SynthError::Infeasible("distractors need a second family".into()));
        }
        let free = (self.relations - 1) * members;
        if free < self.options - 1 {
            return Err(SynthError::Infeasible(format!(
                "{free} concepts outside a family cannot fill {} distractors",
                self.options - 1
            )));
        }
        if self.vocab_size / 2 < self.document_words || self.vocab_size / 2 < self.option_words * self.options {
            return Err(SynthError::Infeasible("vocab_size too small for the word counts".into()));
        }
        Ok(())
    }
}

/// Ground truth for one generated example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    pub gap: bool,
    /// Family of the anchor concept.
    pub relation: String,
    /// The one concept in the document.
    pub anchor: String,
    /// Concept of each option, in option order.
    pub option_concepts: Vec<String>,
    /// Document word repeated in the correct option (non-gap examples).
    pub overlap_word: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub format: String,
    pub version: u32,
    pub spec: SynthSpec,
    pub entries: Vec<ManifestEntry>,
    /// Triples connecting each example's anchor to its answer.
    pub planted: Vec<(String, String, String)>,
}

const MANIFEST_FORMAT: &str = "relweave-synth-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub examples: Vec<Example>,
    /// Sorted (subject, relation, object) triples of the dump.
    pub triples: Vec<(String, String, String)>,
    pub manifest: SynthManifest,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "th"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 5] = ["", "n", "r", "x", "l"];

/// `count` distinct pseudo-words of `syllables` syllables, none in `taken`.
fn pseudo_words(rng: &mut ChaCha8Rng, count: usize, syllables: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        // Widen the space if it is getting crowded.
        let n = syllables + attempts / (50 * count.max(1));
        let w: String = (0..n)
            .map(|_| {
                let (o, v, c) = (ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap(), CODAS.choose(rng).unwrap());
                format!("{o}{v}{c}")
            })
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Family {
    relation: &'static str,
    members: Vec<String>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    spec.check_feasible()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = BTreeSet::new();
    let per_family = spec.concepts / spec.relations;
    let families: Vec<Family> = CONCEPTNET_RELATIONS[..spec.relations]
        .iter()
        .map(|&relation| Family { relation, members: pseudo_words(&mut rng, per_family, 3, &mut taken) })
        .collect();
    let fillers = pseudo_words(&mut rng, spec.vocab_size, 1, &mut taken);
    let (doc_words, opt_words) = fillers.split_at(spec.vocab_size / 2);

    let mut triples = BTreeSet::new();
    for f in &families {
        for s in &f.members {
            for o in f.members.iter().filter(|o| *o != s) {
                triples.insert((s.clone(), f.relation.to_string(), o.clone()));
            }
        }
    }

    let gap_count = (spec.gap_rate * spec.examples as f64).round() as usize;
    let mut gap_flags: Vec<bool> = (0..spec.examples).map(|i| i < gap_count).collect();
    gap_flags.shuffle(&mut rng);
    // Balanced labels: cycle through the options, then shuffle.
    let mut labels: Vec<usize> = (0..spec.examples).map(|i| i % spec.options).collect();
    labels.shuffle(&mut rng);

    let mut examples = Vec::with_capacity(spec.examples);
    let mut entries = Vec::with_capacity(spec.examples);
    let mut planted = BTreeSet::new();
    for (i, (&gap, &label)) in gap_flags.iter().zip(&labels).enumerate() {
        let family = &families[rng.random_range(0..families.len())];
        let pair: Vec<&String> = family.members.choose_multiple(&mut rng, 2).collect();
        let (anchor, answer) = (pair[0].clone(), pair[1].clone());
        planted.insert((anchor.clone(), family.relation.to_string(), answer.clone()));
        let free: Vec<&String> =
            families.iter().filter(|f| f.relation != family.relation).flat_map(|f| f.members.iter()).collect();
        let mut option_concepts: Vec<String> = free.choose_multiple(&mut rng, spec.options - 1).map(|s| (*s).clone()).collect();
        option_concepts.insert(label, answer);

        let mut document: Vec<String> = doc_words.choose_multiple(&mut rng, spec.document_words).cloned().collect();
        let overlap_word = (!gap).then(|| document.choose(&mut rng).unwrap().clone());
        let at = rng.random_range(0..=document.len());
        document.insert(at, anchor.clone());

        let pool: Vec<&String> = opt_words.choose_multiple(&mut rng, spec.option_words * spec.options).collect();
        let options: Vec<String> = (0..spec.options)
            .map(|o| {
                let mut words: Vec<String> =
                    pool[o * spec.option_words..(o + 1) * spec.option_words].iter().map(|w| (*w).clone()).collect();
                if o == label {
                    if let Some(w) = &overlap_word {
                        words[0] = w.clone();
                        words.shuffle(&mut rng);
                    }
                }
                let at = rng.random_range(0..=words.len());
                words.insert(at, option_concepts[o].clone());
                words.join(" ")
            })
            .collect();

        let id = format!("synth-{i:05}");
        examples.push(Example { id: id.clone(), document: document.join(" "), question: None, options, label });
        entries.push(ManifestEntry {
            id,
            label,
            gap,
            relation: family.relation.to_string(),
            anchor,
            option_concepts,
            overlap_word,
        });
    }

    add_noise(spec, &families, &entries, &mut triples, &mut rng);

    let manifest = SynthManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        entries,
        planted: planted.into_iter().collect(),
    };
    Ok(SynthOutput { examples, triples: triples.into_iter().collect(), manifest })
}

/// Cross-family triples that never link an anchor to one of its example's
/// distractor concepts.
fn add_noise(
    spec: &SynthSpec,
    families: &[Family],
    entries: &[ManifestEntry],
    triples: &mut BTreeSet<(String, String, String)>,
    rng: &mut ChaCha8Rng,
) {
    let family_triples = triples.len();
    let wanted = (spec.noise_rate * family_triples as f64).round() as usize;
    if wanted == 0 || families.len() < 2 {
        return;
    }
    let mut forbidden = BTreeSet::new();
    for e in entries {
        for (o, c) in e.option_concepts.iter().enumerate() {
            if o != e.label {
                forbidden.insert((e.anchor.clone(), c.clone()));
                forbidden.insert((c.clone(), e.anchor.clone()));
            }
        }
    }
    let mut attempts = 0;
    while triples.len() < family_triples + wanted && attempts < 100 * wanted {
        attempts += 1;
        let a = rng.random_range(0..families.len());
        let b = (a + rng.random_range(1..families.len())) % families.len();
        let s = families[a].members.choose(rng).unwrap();
        let o = families[b].members.choose(rng).unwrap();
        if forbidden.contains(&(s.clone(), o.clone())) {
            continue;
        }
        let r = families.choose(rng).unwrap().relation;
        triples.insert((s.clone(), r.to_string(), o.clone()));
    }
}

impl SynthOutput {
    /// Writes the dataset (JSONL), the dump (TSV) and the manifest (JSON).
    pub fn write(&self, dataset: &Path, dump: &Path, manifest: &Path) -> Result<(), SynthError> {
        write_dataset(dataset, &self.examples)?;
        write_dump(dump, &self.triples)?;
        let text = serde_json::to_string(&self.manifest).map_err(|e| SynthError::Manifest(e.to_string()))?;
        fs::write(manifest, text)?;
        Ok(())
    }

    /// Splits off the last `dev` examples (and their manifest entries).
    pub fn split_dev(&self, dev: usize) -> (Vec<Example>, Vec<Example>) {
        let cut = self.examples.len().saturating_sub(dev);
        (self.examples[..cut].to_vec(), self.examples[cut..].to_vec())
    }
}

pub fn write_dump(path: &Path, triples: &[(String, String, String)]) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (s, r, o) in triples {
        writeln!(w, "{s}\t{r}\t{o}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Vec<(String, String, String)>, SynthError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(SynthError::Dump { line: n + 1, reason: "expected subject, relation, object".into() });
        }
        out.push((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()));
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<SynthManifest, SynthError> {
    let m: SynthManifest =
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| SynthError::Manifest(e.to_string()))?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(SynthError::Manifest(format!("unsupported {} v{}", m.format, m.version)));
    }
    Ok(m)
}

#[cfg(test)]
mod tests;
