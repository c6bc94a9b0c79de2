//! End-to-end acceptance checks. Runs as a plain binary so each criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relweave::kb::{RelationVocab, Triple, TripleIndex};
use relweave::model::{answer_logit, answer_loss, joint_loss, relation_existence_loss, relation_type_loss, GradCheckSuite, LossWeights};
use relweave::supervision::{
    build_supervision, find_mentions, load_cache, save_cache, CacheRecord, ConceptMention, ExistenceLabel, Side, TypeLabel,
};
use relweave::synth::{audit_files, generate, SynthSpec};
use relweave::text::{pack, pretokenize, train_bpe, Example, PackedSequence};
use relweave::training::{run_ablation, train, AblationMode, AblationTable, EncoderShape, TrainConfig};
use relweave::{Graph, Model, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. gradient suite

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let suite = GradCheckSuite::default();
    let out = suite.run().map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let r = &out.report;
    let detail = format!(
        "{} tensors, {} of {} scalars checked, max rel err {:.2e} (tol {:.0e}), {secs:.1}s",
        out.names.len(),
        r.checked,
        out.scalars,
        r.worst.as_ref().map_or(0.0, |w| w.rel_err),
        suite.tolerance
    );
    check(r.passed() && r.checked == out.scalars && secs < 60.0, detail)
}

// ---------------------------------------------------------------------------
// 2. loss oracles, written against plain Vec<f64> arithmetic

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn ref_answer(hs: &[Vec<Vec<f64>>], v: &[f64], gold: usize) -> f64 {
    let z: Vec<f64> = hs.iter().map(|h| dot(&h[0], v)).collect();
    log_sum_exp(&z) - z[gold]
}

fn ref_existence(h: &[Vec<f64>], labels: &[ExistenceLabel], w1: &[Vec<f64>]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .map(|l| {
            let s: f64 = (0..w1.len()).map(|a| h[l.i][a] * dot(&w1[a], &h[l.j])).sum();
            let p = 1.0 / (1.0 + (-s).exp());
            if l.y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

fn ref_type(h: &[Vec<f64>], labels: &[TypeLabel], w2: &[Vec<f64>], w3: &[Vec<f64>]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .map(|l| {
            let pair: Vec<f64> = h[l.i].iter().chain(&h[l.j]).cloned().collect();
            let inner: Vec<f64> = w2.iter().map(|row| dot(row, &pair).max(0.0)).collect();
            let logits: Vec<f64> = w3.iter().map(|row| dot(row, &inner)).collect();
            log_sum_exp(&logits) - logits[l.k]
        })
        .sum();
    total / labels.len() as f64
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

fn tensor(m: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

struct LossCase {
    hs: Vec<Vec<Vec<f64>>>,
    v: Vec<f64>,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    w3: Vec<Vec<f64>>,
    gold: usize,
    existence: Vec<Vec<ExistenceLabel>>,
    types: Vec<Vec<TypeLabel>>,
    weights: LossWeights,
}

fn loss_case(rng: &mut ChaCha8Rng) -> LossCase {
    let n = rng.random_range(2..=4);
    let h = rng.random_range(2..=5);
    let t = rng.random_range(3..=7);
    let classes = rng.random_range(2..=6);
    let hs = (0..n).map(|_| rand_matrix(rng, t, h)).collect();
    let mut existence = Vec::new();
    let mut types = Vec::new();
    for _ in 0..n {
        let count = rng.random_range(0..=5);
        let ex: Vec<ExistenceLabel> =
            (0..count).map(|_| ExistenceLabel { i: rng.random_range(1..t), j: rng.random_range(1..t), y: rng.random_bool(0.4) }).collect();
        let ty = ex.iter().filter(|l| l.y).map(|l| TypeLabel { i: l.i, j: l.j, k: rng.random_range(0..classes) }).collect();
        existence.push(ex);
        types.push(ty);
    }
    let weights = match rng.random_range(0..4) {
        0 => LossWeights::NONE,
        1 => LossWeights::new(rng.random_range(0.0..2.0), 0.0),
        2 => LossWeights::new(0.0, rng.random_range(0.0..2.0)),
        _ => LossWeights::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)),
    };
    LossCase {
        hs,
        v: (0..h).map(|_| rng.random_range(-1.5..1.5)).collect(),
        w1: rand_matrix(rng, h, h),
        w2: rand_matrix(rng, h, 2 * h),
        w3: rand_matrix(rng, classes, h),
        gold: rng.random_range(0..n),
        existence,
        types,
        weights,
    }
}

/// Library values (answer, per-option existence, per-option type, joint).
fn library_losses(c: &LossCase) -> (f64, Vec<f64>, Vec<f64>, f64) {
    let mut g = Graph::new();
    let v = g.leaf(Tensor::vector(c.v.clone()), true);
    let w1 = g.leaf(tensor(&c.w1), true);
    let w2 = g.leaf(tensor(&c.w2), true);
    let w3 = g.leaf(tensor(&c.w3), true);
    let mut logits = Vec::new();
    let mut aux = Vec::new();
    for (o, h) in c.hs.iter().enumerate() {
        let hv = g.leaf(tensor(h), true);
        logits.push(answer_logit(&mut g, hv, v).unwrap());
        let re = relation_existence_loss(&mut g, hv, &c.existence[o], w1).unwrap();
        let rt = relation_type_loss(&mut g, hv, &c.types[o], w2, w3).unwrap();
        aux.push((re, rt));
    }
    let ap = answer_loss(&mut g, &logits, c.gold).unwrap();
    let joint = joint_loss(&mut g, ap, &aux, c.weights).unwrap();
    let item = |g: &Graph, x| g.value(x).item();
    (
        item(&g, ap),
        aux.iter().map(|&(re, _)| item(&g, re)).collect(),
        aux.iter().map(|&(_, rt)| item(&g, rt)).collect(),
        item(&g, joint),
    )
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let c = loss_case(&mut rng);
        let (ap, re, rt, joint) = library_losses(&c);
        let n = c.hs.len() as f64;
        let ref_ap = ref_answer(&c.hs, &c.v, c.gold);
        let ref_re: Vec<f64> = c.hs.iter().zip(&c.existence).map(|(h, l)| ref_existence(h, l, &c.w1)).collect();
        let ref_rt: Vec<f64> = c.hs.iter().zip(&c.types).map(|(h, l)| ref_type(h, l, &c.w2, &c.w3)).collect();
        let ref_joint = ref_ap
            + ref_re.iter().map(|x| c.weights.existence / n * x).sum::<f64>()
            + ref_rt.iter().map(|x| c.weights.relation_type / n * x).sum::<f64>();
        worst[0] = worst[0].max((ap - ref_ap).abs());
        for o in 0..c.hs.len() {
            worst[1] = worst[1].max((re[o] - ref_re[o]).abs());
            worst[2] = worst[2].max((rt[o] - ref_rt[o]).abs());
        }
        worst[3] = worst[3].max((joint - ref_joint).abs());
    }
    let detail = format!(
        "100 instances, max abs diff answer {:.1e}, existence {:.1e}, type {:.1e}, joint {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    );
    check(worst.iter().all(|&w| w <= 1e-12), detail)
}

// ---------------------------------------------------------------------------
// 3. matcher against exhaustive n-gram enumeration

fn brute_force(p: &PackedSequence, phrases: &HashSet<String>, max_ngram: usize) -> Vec<(Side, String, usize, usize)> {
    let mut out = Vec::new();
    for (side, tag) in [(&p.side_a, Side::A), (&p.side_b, Side::B)] {
        let words = pretokenize(&side.text);
        let kept = |w: &(usize, usize)| (w.0..w.1).all(|b| side.char_to_token[b].is_some());
        let mut seen = HashSet::new();
        let mut start = 0;
        while start < words.len() {
            let mut best = None;
            for n in 1..=max_ngram.min(words.len() - start) {
                let ws = &words[start..start + n];
                let text = ws.iter().map(|&(s, e)| &side.text[s..e]).collect::<Vec<_>>().join(" ");
                if ws.iter().all(kept) && phrases.contains(&text) {
                    best = Some((n, text));
                }
            }
            match best {
                Some((n, text)) => {
                    let begin = side.char_to_token[words[start].0].unwrap();
                    let end = side.char_to_token[words[start + n - 1].1 - 1].unwrap() + 1;
                    if seen.insert(text.clone()) {
                        out.push((tag, text, begin, end - begin));
                    }
                    start += n;
                }
                None => start += 1,
            }
        }
    }
    out
}

fn matcher_oracle() -> Outcome {
    let lexicon = ["salt", "sea", "water", "boat", "sail", "wind", "deep", "blue", "fish", "net", "old", "harbor"];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut phrases = HashSet::new();
    while phrases.len() < 30 {
        let n = rng.random_range(1..=3);
        phrases.insert((0..n).map(|_| lexicon[rng.random_range(0..lexicon.len())]).collect::<Vec<_>>().join(" "));
    }
    let mut index = TripleIndex::new(RelationVocab::conceptnet());
    let at_location = index.relations().id("AtLocation").unwrap();
    for p in &phrases {
        index.insert(Triple::new(p, at_location, "shore").unwrap()).unwrap();
    }
    phrases.insert("shore".into());
    let vocab = train_bpe(&[lexicon.join(" ")], 25).unwrap();
    let mut discrepancies = 0;
    let mut mentions = 0;
    for doc in 0..200 {
        let words = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| lexicon[rng.random_range(0..lexicon.len())]).collect::<Vec<_>>().join(" ");
        let len = rng.random_range(1..30);
        let document = words(&mut rng, len);
        let olen = rng.random_range(1..6);
        let option = words(&mut rng, olen);
        let ex = Example { id: format!("d{doc}"), document, question: None, options: vec![option, "shore".into()], label: 0 };
        let max_len = if doc % 4 == 0 { 20 } else { 128 };
        let p = pack(&ex, 0, &vocab, max_len).unwrap();
        let got: Vec<_> = find_mentions(&p, &index, 4).into_iter().map(|m| (m.side, m.phrase, m.begin, m.span)).collect();
        mentions += got.len();
        if got != brute_force(&p, &phrases, 4) {
            discrepancies += 1;
        }
    }
    check(discrepancies == 0, format!("200 documents, {mentions} mentions, {discrepancies} discrepancies"))
}

// ---------------------------------------------------------------------------
// 4. negative sampling ratio

fn sampling_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut total_negatives = 0;
    for build in 0..1000u64 {
        let (n_a, n_b) = (rng.random_range(3..=8), rng.random_range(3..=8));
        let positives = rng.random_range(1..=(n_a * n_b) / 5);
        let mut cells: Vec<(usize, usize)> = (0..n_a).flat_map(|i| (0..n_b).map(move |j| (i, j))).collect();
        for k in 0..positives {
            let pick = rng.random_range(k..cells.len());
            cells.swap(k, pick);
        }
        let mut index = TripleIndex::new(RelationVocab::conceptnet());
        let is_a = index.relations().id("IsA").unwrap();
        let used_for = index.relations().id("UsedFor").unwrap();
        for i in 0..n_a {
            index.insert(Triple::new(&format!("a{i}"), is_a, "thing").unwrap()).unwrap();
        }
        for j in 0..n_b {
            index.insert(Triple::new(&format!("b{j}"), is_a, "thing").unwrap()).unwrap();
        }
        for &(i, j) in &cells[..positives] {
            index.insert(Triple::new(&format!("a{i}"), used_for, &format!("b{j}")).unwrap()).unwrap();
        }
        let mention = |name: String, side, begin| ConceptMention { phrase_id: index.phrase_id(&name).unwrap(), phrase: name, side, begin, span: 1 };
        let mut ms: Vec<ConceptMention> = (0..n_a).map(|i| mention(format!("a{i}"), Side::A, 1 + i)).collect();
        ms.extend((0..n_b).map(|j| mention(format!("b{j}"), Side::B, 2 + n_a + j)));
        let set = build_supervision(&ms, &index, 4.0, build).map_err(|e| e.to_string())?;
        total_negatives += set.negatives();
        if set.positives != positives || set.negatives() != (4.0 * positives as f64).floor() as usize {
            failures += 1;
        }
    }
    check(failures == 0, format!("1000 builds at gamma 4, {total_negatives} negatives, {failures} violations"))
}

// ---------------------------------------------------------------------------
// 5 and 6. ablation on planted-relation data

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn ablation_config() -> TrainConfig {
    TrainConfig { epochs: 15, ..TrainConfig::default() }
}

fn ablation_spec() -> SynthSpec {
    SynthSpec { examples: 2500, options: 2, gap_rate: 0.5, seed: 0, ..SynthSpec::default() }
}

fn ablation() -> Result<(AblationTable, f64), String> {
    let t = Instant::now();
    let out = generate(&ablation_spec()).map_err(|e| e.to_string())?;
    let (train_set, dev) = out.split_dev(500);
    let spec = &out.manifest.spec;
    let mut index = TripleIndex::new(RelationVocab::conceptnet_prefix(spec.relations).map_err(|e| e.to_string())?);
    for (s, r, o) in &out.triples {
        let id = index.relations().id(r).ok_or_else(|| format!("unknown relation {r}"))?;
        index.insert(Triple::new(s, id, o).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    }
    let modes = [AblationMode::Ap, AblationMode::Re, AblationMode::Rt, AblationMode::ReRt, AblationMode::Merged];
    let table = run_ablation(&train_set, &dev, &index, &ablation_config(), &modes, &SEEDS, |_, _, _| {}).map_err(|e| e.to_string())?;
    Ok((table, t.elapsed().as_secs_f64()))
}

fn directional_gain(table: &AblationTable, secs: f64) -> Outcome {
    let delta = |m| table.row(m).and_then(|r| r.delta_points).unwrap_or(f64::NAN);
    let (re, rt, both) = (delta(AblationMode::Re), delta(AblationMode::Rt), delta(AblationMode::ReRt));
    let ap = table.row(AblationMode::Ap).map(|r| r.mean).unwrap_or(f64::NAN);
    let detail = format!(
        "2000/500 split, 5 seeds: AP {:.2}%, delta RE {re:+.2}, RT {rt:+.2}, RE+RT {both:+.2} points, {:.1} min",
        100.0 * ap,
        secs / 60.0
    );
    check(both >= 2.0 && re >= 0.5 && rt >= 0.5 && secs < 1800.0, detail)
}

fn merged_ordering(table: &AblationTable) -> Outcome {
    let mean = |m| table.row(m).map(|r| r.mean).unwrap_or(f64::NAN);
    let (merged, both) = (mean(AblationMode::Merged), mean(AblationMode::ReRt));
    check(merged <= both, format!("merged {:.2}% vs RE+RT {:.2}%", 100.0 * merged, 100.0 * both))
}

// ---------------------------------------------------------------------------
// 7 and 8. determinism and round trips

fn small_run() -> (Vec<Example>, TripleIndex, TrainConfig) {
    let out = generate(&SynthSpec { examples: 60, concepts: 40, seed: 9, ..SynthSpec::default() }).unwrap();
    let mut index = TripleIndex::new(RelationVocab::conceptnet_prefix(out.manifest.spec.relations).unwrap());
    for (s, r, o) in &out.triples {
        index.insert(Triple::new(s, index.relations().id(r).unwrap(), o).unwrap()).unwrap();
    }
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        bpe_merges: 200,
        max_seq_len: 48,
        seed: 17,
        encoder: EncoderShape { layers: 2, heads: 2, hidden: 16, ff: 32, dropout: 0.1 },
        ..TrainConfig::default()
    };
    (out.examples, index, config)
}

fn determinism() -> Outcome {
    let (data, index, config) = small_run();
    let a = train::<f64>(&data, &index, &config).map_err(|e| e.to_string())?;
    let b = train::<f64>(&data, &index, &config).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (x, y) in a.model.params.tensors().iter().zip(b.model.params.tensors()) {
        for (p, q) in x.data().iter().zip(y.data()) {
            worst = worst.max((p - q).abs());
            count += 1;
        }
    }
    check(worst <= 1e-12 && count > 0, format!("{count} parameters, max abs diff {worst:.1e}"))
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, index, config) = small_run();
    let model = train::<f64>(&data, &index, &TrainConfig { epochs: 1, ..config }).map_err(|e| e.to_string())?.model;
    let ckpt = dir.path().join("model.json");
    model.save(&ckpt).map_err(|e| e.to_string())?;
    let loaded = Model::load(&ckpt).map_err(|e| e.to_string())?;
    let bits = |m: &Model| m.params.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<u64>>();
    let same_params = bits(&model) == bits(&loaded) && model.params.names() == loaded.params.names();
    let same_vocab = model.vocab.tokens() == loaded.vocab.tokens();

    let mut records = Vec::new();
    for ex in data.iter().take(20) {
        for o in 0..ex.options.len() {
            let p = pack(ex, o, &model.vocab, config.max_seq_len).map_err(|e| e.to_string())?;
            let ms = find_mentions(&p, &index, config.max_ngram);
            let set = build_supervision(&ms, &index, config.gamma, o as u64).map_err(|e| e.to_string())?;
            records.push(CacheRecord { example_id: ex.id.clone(), option: o, set });
        }
    }
    let cache = dir.path().join("cache.jsonl");
    save_cache(&cache, &records).map_err(|e| e.to_string())?;
    let same_cache = load_cache(&cache).map_err(|e| e.to_string())? == records;

    let out = generate(&SynthSpec { examples: 600, noise_rate: 0.1, seed: 21, ..SynthSpec::default() }).map_err(|e| e.to_string())?;
    let (d, k, m) = (dir.path().join("d.jsonl"), dir.path().join("k.tsv"), dir.path().join("m.json"));
    out.write(&d, &k, &m).map_err(|e| e.to_string())?;
    let report = audit_files(&d, &k, &m).map_err(|e| e.to_string())?;

    let detail = format!(
        "checkpoint bit-exact {same_params}, vocab {same_vocab}, cache of {} sets {same_cache}, audit of {} examples {} discrepancies",
        records.len(),
        report.examples,
        report.discrepancies.len()
    );
    check(same_params && same_vocab && same_cache && report.passed(), detail)
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag} {name}: {detail}");
    };
    report(1, "gradient suite", gradient_suite());
    report(2, "loss oracles", loss_oracles());
    report(3, "matcher oracle", matcher_oracle());
    report(4, "sampling contract", sampling_contract());
    report(7, "determinism", determinism());
    report(8, "round trips", round_trips());
    match ablation() {
        Ok((table, secs)) => {
            eprintln!("{}", table.render());
            report(5, "directional gain", directional_gain(&table, secs));
            report(6, "merged ordering", merged_ordering(&table));
        }
        Err(e) => {
            report(5, "directional gain", Err(e.clone()));
            report(6, "merged ordering", Err(e));
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
