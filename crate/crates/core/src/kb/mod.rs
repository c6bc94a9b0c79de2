//! Knowledge triples: relation-type vocabulary, ingestion of tab-separated
//! dumps, and directed (subject, object) pair lookup.
//!
//! A dump line is `subject<TAB>relation<TAB>object[<TAB>weight]`. Relation
//! names may carry a `/r/` prefix as in ConceptNet URIs. Relations in the
//! [`RelationVocab`] become typed facts. Excluded relations (`RelatedTo`,
//! `ExternalURL`, `dbpedia/*`) are either dropped or, when requested, kept as
//! *typeless* facts that only signal that some relation exists.

mod relations;

pub use relations::{RelationId, RelationVocab, CONCEPTNET_RELATIONS, EXCLUDED_RELATIONS};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("no valid triples in {0}")]
    NoValidLines(String),
    #[error("relation vocabulary: {0}")]
    BadRelationVocab(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("empty phrase in triple")]
    EmptyPhrase,
    #[error("index file: {0}")]
    BadIndexFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase, underscores to spaces, whitespace collapsed.
pub fn phrase_normalize(raw: &str) -> String {
    raw.replace('_', " ").split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// One typed knowledge fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: RelationId,
    pub object: String,
    pub weight: f64,
}

impl Triple {
    pub fn new(subject: &str, relation: RelationId, object: &str) -> Result<Self, KbError> {
        let (subject, object) = (phrase_normalize(subject), phrase_normalize(object));
        if subject.is_empty() || object.is_empty() {
            return Err(KbError::EmptyPhrase);
        }
        Ok(Self { subject, relation, object, weight: 1.0 })
    }
}

/// Result of a directed pair query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lookup {
    /// Typed relation ids, ascending.
    pub relations: Vec<RelationId>,
    /// Whether an excluded-type fact links the pair.
    pub typeless: bool,
}

impl Lookup {
    pub fn is_empty(&self) -> bool {
        self.relations.is_empty() && !self.typeless
    }

    /// Lowest typed relation id, the one supervision uses.
    pub fn first_type(&self) -> Option<RelationId> {
        self.relations.first().copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PairEntry {
    typed: BTreeSet<RelationId>,
    typeless: BTreeSet<String>,
}

/// Counters collected while reading a dump.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub malformed: usize,
    pub skipped_relation: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleIndex {
    relations: RelationVocab,
    pairs: HashMap<(u32, u32), PairEntry>,
    phrase_ids: HashMap<String, u32>,
    phrases: Vec<String>,
    max_phrase_words: usize,
    fact_count: usize,
    pub stats: IngestStats,
}

impl TripleIndex {
    pub fn new(relations: RelationVocab) -> Self {
        Self {
            relations,
            pairs: HashMap::new(),
            phrase_ids: HashMap::new(),
            phrases: Vec::new(),
            max_phrase_words: 0,
            fact_count: 0,
            stats: IngestStats::default(),
        }
    }

    pub fn relations(&self) -> &RelationVocab {
        &self.relations
    }

    /// Number of distinct stored facts (typed and typeless).
    pub fn fact_count(&self) -> usize {
        self.fact_count
    }

    pub fn contains_phrase(&self, phrase: &str) -> bool {
        self.phrase_ids.contains_key(phrase)
    }

    /// Interned id of a stored phrase.
    pub fn phrase_id(&self, phrase: &str) -> Option<u32> {
        self.phrase_ids.get(phrase).copied()
    }

    pub fn phrase(&self, id: u32) -> Option<&str> {
        self.phrases.get(id as usize).map(String::as_str)
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases.len()
    }

    /// Longest phrase, in words.
    pub fn max_phrase_words(&self) -> usize {
        self.max_phrase_words
    }

    fn intern(&mut self, phrase: String) -> u32 {
        if let Some(&id) = self.phrase_ids.get(&phrase) {
            return id;
        }
        let id = self.phrases.len() as u32;
        self.max_phrase_words = self.max_phrase_words.max(phrase.split(' ').count());
        self.phrases.push(phrase.clone());
        self.phrase_ids.insert(phrase, id);
        id
    }

    fn entry(&mut self, subject: String, object: String) -> &mut PairEntry {
        let key = (self.intern(subject), self.intern(object));
        self.pairs.entry(key).or_default()
    }

    /// Adds a typed fact; returns false if it was already present.
    pub fn insert(&mut self, triple: Triple) -> Result<bool, KbError> {
        if self.relations.name(triple.relation).is_none() {
            return Err(KbError::UnknownRelation(triple.relation.to_string()));
        }
        let added = self.entry(triple.subject, triple.object).typed.insert(triple.relation);
        self.fact_count += usize::from(added);
        Ok(added)
    }

    /// Adds a fact whose relation is outside the type vocabulary; it only
    /// marks the pair as related.
    pub fn insert_typeless(&mut self, subject: &str, relation_name: &str, object: &str) -> Result<bool, KbError> {
        let (s, o) = (phrase_normalize(subject), phrase_normalize(object));
        if s.is_empty() || o.is_empty() {
            return Err(KbError::EmptyPhrase);
        }
        let added = self.entry(s, o).typeless.insert(relation_name.to_string());
        self.fact_count += usize::from(added);
        Ok(added)
    }

    /// Directed exact-match query on normalized phrases.
    pub fn lookup(&self, subject: &str, object: &str) -> Lookup {
        match (self.phrase_id(subject), self.phrase_id(object)) {
            (Some(s), Some(o)) => self.lookup_ids(s, o),
            _ => Lookup::default(),
        }
    }

    /// [`TripleIndex::lookup`] on interned phrase ids.
    pub fn lookup_ids(&self, subject: u32, object: u32) -> Lookup {
        match self.pairs.get(&(subject, object)) {
            Some(e) => Lookup { relations: e.typed.iter().copied().collect(), typeless: !e.typeless.is_empty() },
            None => Lookup::default(),
        }
    }

    /// Every stored fact as `(subject, relation name, object)`, sorted.
    pub fn facts(&self) -> Vec<(String, String, String)> {
        let mut out = Vec::with_capacity(self.fact_count);
        for (&(s, o), e) in &self.pairs {
            let (s, o) = (&self.phrases[s as usize], &self.phrases[o as usize]);
            for &r in &e.typed {
                let name = self.relations.name(r).expect("validated on insert");
                out.push((s.clone(), name.to_string(), o.clone()));
            }
            for name in &e.typeless {
                out.push((s.clone(), name.clone(), o.clone()));
            }
        }
        out.sort();
        out
    }

    /// Builds an index from a tab-separated dump. Malformed lines and lines
    /// with relations outside the vocabulary are counted and skipped.
    pub fn ingest(path: &Path, relations: RelationVocab, keep_excluded_for_existence: bool) -> Result<Self, KbError> {
        let reader = BufReader::new(File::open(path)?);
        let mut index = Self::new(relations);
        let mut valid = 0usize;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            index.stats.lines += 1;
            let Some((subject, relation, object, weight)) = parse_line(&line) else {
                index.stats.malformed += 1;
                continue;
            };
            let name = RelationVocab::canonical_name(relation);
            let added = if let Some(id) = index.relations.id(name) {
                let Ok(mut t) = Triple::new(subject, id, object) else {
                    index.stats.malformed += 1;
                    continue;
                };
                t.weight = weight;
                index.insert(t)?
            } else if keep_excluded_for_existence && index.relations.is_excluded(name) {
                match index.insert_typeless(subject, name, object) {
                    Ok(added) => added,
                    Err(_) => {
                        index.stats.malformed += 1;
                        continue;
                    }
                }
            } else {
                index.stats.skipped_relation += 1;
                continue;
            };
            valid += 1;
            if !added {
                index.stats.duplicates += 1;
            }
        }
        if valid == 0 {
            return Err(KbError::NoValidLines(path.display().to_string()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            relations: self.relations.names().to_vec(),
            excluded: self.relations.excluded().iter().cloned().collect(),
            stats: self.stats.clone(),
            facts: self.facts(),
        };
        let text = serde_json::to_string(&file).map_err(|e| KbError::BadIndexFile(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = fs::read_to_string(path)?;
        let file: IndexFile = serde_json::from_str(&text).map_err(|e| KbError::BadIndexFile(e.to_string()))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(KbError::BadIndexFile(format!("unsupported {} v{}", file.format, file.version)));
        }
        let relations = RelationVocab::new(file.relations, file.excluded)?;
        let mut index = Self::new(relations);
        for (s, r, o) in file.facts {
            match index.relations.id(&r) {
                Some(id) => index.insert(Triple::new(&s, id, &o)?)?,
                None => index.insert_typeless(&s, &r, &o)?,
            };
        }
        index.stats = file.stats;
        Ok(index)
    }

    /// Per-relation fact counts, by name.
    pub fn relation_histogram(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (_, name, _) in self.facts() {
            *out.entry(name).or_default() += 1;
        }
        out
    }
}

const INDEX_FORMAT: &str = "relweave-triple-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    relations: Vec<String>,
    excluded: Vec<String>,
    stats: IngestStats,
    facts: Vec<(String, String, String)>,
}

fn parse_line(line: &str) -> Option<(&str, &str, &str, f64)> {
    let fields: Vec<&str> = line.split('\t').collect();
    match fields.as_slice() {
        [s, r, o] => Some((*s, *r, *o, 1.0)),
        [s, r, o, w] => {
            let w: f64 = w.trim().parse().ok()?;
            (w.is_finite() && w >= 0.0).then_some((*s, *r, *o, w))
        }
        _ => None,
    }
    .filter(|(_, r, _, _)| !r.trim().is_empty())
}
