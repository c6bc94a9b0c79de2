use std::collections::HashSet;

use proptest::prelude::*;

use super::*;

fn small(examples: usize, gap_rate: f64, seed: u64) -> SynthSpec {
    SynthSpec { examples, gap_rate, seed, ..SynthSpec::default() }
}

/// Picks the option sharing the most words with the document, ties to the
/// lowest index.
fn overlap_oracle(ex: &Example) -> usize {
    let doc: HashSet<&str> = ex.document.split_whitespace().collect();
    let scores: Vec<usize> = ex.options.iter().map(|o| o.split_whitespace().filter(|w| doc.contains(w)).count()).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn oracle_accuracy(examples: &[Example]) -> f64 {
    examples.iter().filter(|e| overlap_oracle(e) == e.label).count() as f64 / examples.len() as f64
}

#[test]
fn overlap_solves_the_no_gap_set() {
    let out = generate(&small(1000, 0.0, 1)).unwrap();
    assert_eq!(oracle_accuracy(&out.examples), 1.0);
}

#[test]
fn overlap_is_at_chance_on_the_all_gap_set() {
    for n in [2, 3] {
        let out = generate(&SynthSpec { options: n, ..small(1200, 1.0, 2) }).unwrap();
        let acc = oracle_accuracy(&out.examples);
        assert!((acc - 1.0 / n as f64).abs() < 0.03, "N={n}: {acc}");
    }
}

#[test]
fn planted_triples_are_in_the_dump() {
    let out = generate(&small(500, 0.5, 3)).unwrap();
    let dump: HashSet<_> = out.triples.iter().collect();
    assert!(!out.manifest.planted.is_empty());
    assert!(out.manifest.planted.iter().all(|t| dump.contains(t)));
    for (ex, e) in out.examples.iter().zip(&out.manifest.entries).filter(|(_, e)| e.gap) {
        let gold = &e.option_concepts[ex.label];
        assert!(ex.options[ex.label].split_whitespace().any(|w| w == gold));
        assert!(!ex.document.split_whitespace().any(|w| w == gold));
        assert!(ex.document.split_whitespace().any(|w| w == e.anchor));
    }
}

#[test]
fn fresh_generation_passes_audit_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&SynthSpec { noise_rate: 0.2, ..small(400, 0.5, 4) }).unwrap();
    let (d, k, m) = (dir.path().join("d.jsonl"), dir.path().join("k.tsv"), dir.path().join("m.json"));
    out.write(&d, &k, &m).unwrap();
    let report = audit_files(&d, &k, &m).unwrap();
    assert!(report.passed(), "{:?}", report.discrepancies);
    assert_eq!(report.examples, 400);
    assert_eq!(report.gap_examples, 200);
    assert_eq!(read_manifest(&m).unwrap(), out.manifest);
    assert_eq!(read_dump(&k).unwrap(), out.triples);
}

#[test]
fn a_deleted_triple_is_named() {
    let out = generate(&small(200, 1.0, 5)).unwrap();
    let victim = out.manifest.planted[7].clone();
    let dump: Vec<_> = out.triples.iter().filter(|t| **t != victim).cloned().collect();
    let report = audit(&out.examples, &dump, &out.manifest);
    assert!(!report.passed());
    let needle = format!("missing fact {} {} {}", victim.0, victim.1, victim.2);
    assert!(report.discrepancies.iter().any(|d| d == &needle), "{:?}", report.discrepancies);
}

#[test]
fn shuffled_labels_are_counted() {
    let out = generate(&small(300, 0.5, 6)).unwrap();
    let mut examples = out.examples.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    labels.shuffle(&mut rng);
    for (e, l) in examples.iter_mut().zip(&labels) {
        e.label = *l;
    }
    let expected = out.examples.iter().zip(&examples).filter(|(a, b)| a.label != b.label).count();
    assert!(expected > 0);
    let report = audit(&examples, &out.triples, &out.manifest);
    assert_eq!(report.label_mismatches, expected);
    assert!(!report.passed());
}

#[test]
fn a_linked_distractor_is_flagged() {
    let out = generate(&small(50, 0.5, 7)).unwrap();
    let e = &out.manifest.entries[0];
    let distractor = &e.option_concepts[(e.label + 1) % 2];
    let mut dump = out.triples.clone();
    dump.push((e.anchor.clone(), "IsA".into(), distractor.clone()));
    let report = audit(&out.examples, &dump, &out.manifest);
    assert!(report.discrepancies.iter().any(|d| d.contains("is linked to document concept")));
}

#[test]
fn labels_are_balanced_and_lengths_unbiased() {
    for n in [2, 4] {
        let out = generate(&SynthSpec { options: n, ..small(2000, 0.5, 8) }).unwrap();
        let report = audit(&out.examples, &out.triples, &out.manifest);
        for &c in &report.label_counts {
            let share = c as f64 / 2000.0;
            assert!((share - 1.0 / n as f64).abs() <= 0.02, "N={n}: {:?}", report.label_counts);
        }
        let longer = out
            .examples
            .iter()
            .filter(|e| {
                let len = |o: &String| o.split_whitespace().count();
                let gold = len(&e.options[e.label]);
                e.options.iter().enumerate().all(|(i, o)| i == e.label || gold > len(o))
            })
            .count();
        assert!((longer as f64) / 2000.0 <= 0.6);
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&small(300, 0.5, 11)).unwrap();
    let b = generate(&small(300, 0.5, 11)).unwrap();
    assert_eq!(a, b);
    let c = generate(&small(300, 0.5, 12)).unwrap();
    assert_ne!(a.examples, c.examples);
}

#[test]
fn infeasible_and_invalid_specs() {
    let too_few = SynthSpec { concepts: 6, ..SynthSpec::default() };
    assert!(matches!(generate(&too_few), Err(SynthError::Infeasible(_))));
    let one_family = SynthSpec { relations: 1, ..SynthSpec::default() };
    assert!(matches!(generate(&one_family), Err(SynthError::Infeasible(_))));
    let crowded = SynthSpec { concepts: 20, options: 21, ..SynthSpec::default() };
    assert!(matches!(generate(&crowded), Err(SynthError::Infeasible(_))));
    assert!(matches!(generate(&SynthSpec { gap_rate: 1.5, ..SynthSpec::default() }), Err(SynthError::Spec(_))));
    assert!(matches!(generate(&SynthSpec { options: 1, ..SynthSpec::default() }), Err(SynthError::Spec(_))));
    assert!(matches!(generate(&SynthSpec { relations: 35, ..SynthSpec::default() }), Err(SynthError::Spec(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_feasible_spec_passes_audit(
        seed in any::<u64>(),
        gap in 0.0f64..=1.0,
        noise in 0.0f64..=0.3,
        options in 2usize..4,
        relations in 2usize..8,
    ) {
        let spec = SynthSpec { examples: 60, gap_rate: gap, noise_rate: noise, options, relations, seed, ..SynthSpec::default() };
        let out = generate(&spec).unwrap();
        let report = audit(&out.examples, &out.triples, &out.manifest);
        prop_assert!(report.passed(), "{:?}", report.discrepancies);
    }
}
