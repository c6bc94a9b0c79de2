use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::KbError;

pub type RelationId = usize;

/// The selected ConceptNet relation types, in id order.
pub const CONCEPTNET_RELATIONS: [&str; 34] = [
    "IsA",
    "PartOf",
    "HasA",
    "UsedFor",
    "CapableOf",
    "AtLocation",
    "Causes",
    "HasSubevent",
    "HasFirstSubevent",
    "HasLastSubevent",
    "HasPrerequisite",
    "HasProperty",
    "MotivatedByGoal",
    "ObstructedBy",
    "Desires",
    "CreatedBy",
    "Synonym",
    "Antonym",
    "DistinctFrom",
    "DerivedFrom",
    "SymbolOf",
    "DefinedAs",
    "MannerOf",
    "LocatedNear",
    "HasContext",
    "SimilarTo",
    "EtymologicallyRelatedTo",
    "EtymologicallyDerivedFrom",
    "CausesDesire",
    "MadeOf",
    "ReceivesAction",
    "FormOf",
    "InstanceOf",
    "Entails",
];

/// Relation names never used as types. `dbpedia` also covers every
/// `dbpedia/...` sub-relation.
pub const EXCLUDED_RELATIONS: [&str; 3] = ["RelatedTo", "ExternalURL", "dbpedia"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    names: Vec<String>,
    ids: HashMap<String, RelationId>,
    excluded: BTreeSet<String>,
}

impl RelationVocab {
    pub fn new<S: Into<String>>(names: Vec<S>, excluded: Vec<S>) -> Result<Self, KbError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let excluded: BTreeSet<String> = excluded.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(KbError::BadRelationVocab("needs at least one relation".into()));
        }
        let mut ids = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(KbError::BadRelationVocab(format!("bad relation name {n:?}")));
            }
            if excluded_by(&excluded, n) {
                return Err(KbError::BadRelationVocab(format!("{n} is excluded")));
            }
            if ids.insert(n.clone(), i).is_some() {
                return Err(KbError::BadRelationVocab(format!("duplicate relation {n}")));
            }
        }
        Ok(Self { names, ids, excluded })
    }

    /// All 34 selected ConceptNet types.
    pub fn conceptnet() -> Self {
        Self::new(CONCEPTNET_RELATIONS.to_vec(), EXCLUDED_RELATIONS.to_vec()).expect("static list is valid")
    }

    /// The first `r` selected ConceptNet types.
    pub fn conceptnet_prefix(r: usize) -> Result<Self, KbError> {
        if r == 0 || r > CONCEPTNET_RELATIONS.len() {
            return Err(KbError::BadRelationVocab(format!("need 1..=34 relation types, got {r}")));
        }
        Self::new(CONCEPTNET_RELATIONS[..r].to_vec(), EXCLUDED_RELATIONS.to_vec())
    }

    /// Selected ConceptNet types that actually occur in a dump, in canonical
    /// order.
    pub fn from_dump(path: &Path) -> Result<Self, KbError> {
        let mut seen = HashSet::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if let Some(rel) = line.split('\t').nth(1) {
                seen.insert(Self::canonical_name(rel).to_string());
            }
        }
        let names: Vec<&str> = CONCEPTNET_RELATIONS.iter().copied().filter(|n| seen.contains(*n)).collect();
        Self::new(names, EXCLUDED_RELATIONS.to_vec())
    }

    /// Strips surrounding whitespace and a ConceptNet `/r/` prefix.
    pub fn canonical_name(raw: &str) -> &str {
        let t = raw.trim();
        t.strip_prefix("/r/").unwrap_or(t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<RelationId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: RelationId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn excluded(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn is_excluded(&self, name: &str) -> bool {
        excluded_by(&self.excluded, name)
    }
}

fn excluded_by(excluded: &BTreeSet<String>, name: &str) -> bool {
    excluded.contains(name) || excluded.iter().any(|e| name.starts_with(&format!("{e}/")))
}
