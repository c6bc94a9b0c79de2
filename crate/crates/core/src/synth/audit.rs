use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_dump, read_manifest, SynthError, SynthManifest};
use crate::text::{read_dataset, Example};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub examples: usize,
    pub gap_examples: usize,
    pub label_mismatches: usize,
    /// Examples per gold option index.
    pub label_counts: Vec<usize>,
    pub discrepancies: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

fn words(text: &str) -> HashSet<&str> {
    text.split_whitespace().collect()
}

/// Checks a dataset and dump against the manifest they were generated with.
pub fn audit(examples: &[Example], triples: &[(String, String, String)], manifest: &SynthManifest) -> AuditReport {
    let mut report = AuditReport { examples: examples.len(), ..AuditReport::default() };
    let facts: HashSet<(&str, &str, &str)> = triples.iter().map(|(s, r, o)| (s.as_str(), r.as_str(), o.as_str())).collect();
    let linked: HashSet<(&str, &str)> = triples
        .iter()
        .flat_map(|(s, _, o)| [(s.as_str(), o.as_str()), (o.as_str(), s.as_str())])
        .collect();
    let issues = &mut report.discrepancies;

    if examples.len() != manifest.entries.len() {
        issues.push(format!("dataset has {} examples, manifest {}", examples.len(), manifest.entries.len()));
    }
    for (s, r, o) in &manifest.planted {
        if !facts.contains(&(s.as_str(), r.as_str(), o.as_str())) {
            issues.push(format!("missing fact {s} {r} {o}"));
        }
    }
    let mut counts = BTreeMap::new();
    for (ex, e) in examples.iter().zip(&manifest.entries) {
        *counts.entry(ex.label).or_insert(0usize) += 1;
        if ex.id != e.id {
            issues.push(format!("example {} does not match manifest entry {}", ex.id, e.id));
            continue;
        }
        if ex.label != e.label {
            report.label_mismatches += 1;
        }
        if ex.options.len() != e.option_concepts.len() || e.label >= ex.options.len() {
            issues.push(format!("{}: option count or label out of range", e.id));
            continue;
        }
        let doc = words(&ex.document);
        let opts: Vec<HashSet<&str>> = ex.options.iter().map(|o| words(o)).collect();
        if !doc.contains(e.anchor.as_str()) {
            issues.push(format!("{}: document lacks concept {}", e.id, e.anchor));
        }
        for (o, c) in e.option_concepts.iter().enumerate() {
            if !opts[o].contains(c.as_str()) {
                issues.push(format!("{}: option {o} lacks concept {c}", e.id));
            }
            if o == e.label {
                continue;
            }
            if linked.contains(&(e.anchor.as_str(), c.as_str())) {
                issues.push(format!("{}: distractor concept {c} is linked to document concept {}", e.id, e.anchor));
            }
        }
        let gold = &e.option_concepts[e.label];
        if !facts.contains(&(e.anchor.as_str(), e.relation.as_str(), gold.as_str())) {
            issues.push(format!("{}: missing fact {} {} {gold}", e.id, e.anchor, e.relation));
        }
        if doc.contains(gold.as_str()) || opts.iter().enumerate().any(|(o, ws)| o != e.label && ws.contains(gold.as_str())) {
            issues.push(format!("{}: answer concept {gold} appears outside the correct option", e.id));
        }
        if e.gap {
            report.gap_examples += 1;
            let shared = opts[e.label].iter().filter(|w| doc.contains(*w)).count();
            if shared > 0 {
                issues.push(format!("{}: gap example shares {shared} word(s) with its correct option", e.id));
            }
        } else {
            match &e.overlap_word {
                Some(w) if doc.contains(w.as_str()) && opts[e.label].contains(w.as_str()) => {}
                _ => issues.push(format!("{}: correct option does not repeat a document word", e.id)),
            }
        }
        for (o, ws) in opts.iter().enumerate() {
            if o != e.label && ws.iter().any(|w| doc.contains(w)) {
                issues.push(format!("{}: distractor {o} shares a word with the document", e.id));
            }
        }
    }
    if report.label_mismatches > 0 {
        issues.push(format!("{} label(s) differ from the manifest", report.label_mismatches));
    }
    let n = examples.first().map_or(0, |e| e.options.len());
    report.label_counts = (0..n).map(|k| counts.get(&k).copied().unwrap_or(0)).collect();
    report
}

pub fn audit_files(dataset: &Path, dump: &Path, manifest: &Path) -> Result<AuditReport, SynthError> {
    Ok(audit(&read_dataset(dataset)?, &read_dump(dump)?, &read_manifest(manifest)?))
}
