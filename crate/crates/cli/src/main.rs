mod manifest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use relweave::kb::{RelationVocab, TripleIndex};
use relweave::model::{GradCheckSuite, LossWeights, Model};
use relweave::synth::{self, SynthSpec};
use relweave::text::{read_dataset, write_dataset, Example};
use relweave::training::{self, parse_kv, AblationMode, SupervisionSource, TrainConfig};
use relweave::Scalar;

use manifest::{beside, write_atomic, Recorder};

#[derive(Parser)]
#[command(name = "relweave", version, about = "Relation-aware multi-task training for multi-choice reading comprehension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a triple index from a tab-separated dump.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset, triple dump and ground-truth manifest.
    Gen(GenArgs),
    /// Check generated artifacts against their ground-truth manifest.
    Audit(AuditArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train every ablation mode over several seeds and tabulate dev accuracy.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter gradient on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RelationSet {
    /// All selected ConceptNet relation types.
    Conceptnet,
    /// Only the selected types that occur in the dump.
    Dump,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep excluded relations (RelatedTo, ...) as typeless facts for the existence task.
    #[arg(long)]
    keep_relatedto_existence: bool,
    #[arg(long, value_enum, default_value = "conceptnet")]
    relations: RelationSet,
    /// Run manifest path [default: <out>.run.json].
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for train.jsonl, dev.jsonl, triples.tsv and truth.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().vocab_size)]
    vocab_size: usize,
    #[arg(long, default_value_t = SynthSpec::default().concepts)]
    concepts: usize,
    #[arg(long, default_value_t = SynthSpec::default().relations)]
    relations: usize,
    #[arg(long, default_value_t = SynthSpec::default().examples)]
    examples: usize,
    #[arg(long, default_value_t = SynthSpec::default().options)]
    options: usize,
    #[arg(long, default_value_t = SynthSpec::default().gap_rate)]
    gap_rate: f64,
    #[arg(long, default_value_t = SynthSpec::default().noise_rate)]
    noise_rate: f64,
    /// [default: $RELWEAVE_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = SynthSpec::default().document_words)]
    document_words: usize,
    #[arg(long, default_value_t = SynthSpec::default().option_words)]
    option_words: usize,
    /// Examples split off the end into dev.jsonl.
    #[arg(long, default_value_t = 0)]
    dev: usize,
}

#[derive(Args)]
struct AuditArgs {
    /// Dataset files, concatenated in the given order.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Triple index from `ingest`, or a `.tsv` dump.
    #[arg(long)]
    kb: PathBuf,
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<AblationMode>,
    /// [default: config file, else $RELWEAVE_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Evaluate on this dataset after training.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    lambda_re: Option<f64>,
    #[arg(long)]
    lambda_rt: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    freeze_supervision: bool,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also report auxiliary losses against this knowledge source.
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda_re: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda_rt: f64,
    /// Seed for negative sampling [default: $RELWEAVE_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Record file [default: <checkpoint>.eval.json].
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value = "ap,re,rt,re_rt,merged", value_delimiter = ',')]
    modes: Vec<AblationMode>,
    #[command(flatten)]
    overrides: Overrides,
    /// Table as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `key = value` file with layers, heads, hidden, relations, seq_len, seed, step, tolerance.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// A problem with the arguments rather than the run; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("RELWEAVE_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(format!("RELWEAVE_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}\n\nRun `relweave --help` for usage.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let mut rec = Recorder::start("ingest");
    rec.input(&a.triples);
    let relations = match a.relations {
        RelationSet::Conceptnet => RelationVocab::conceptnet(),
        RelationSet::Dump => RelationVocab::from_dump(&a.triples)?,
    };
    let index = TripleIndex::ingest(&a.triples, relations, a.keep_relatedto_existence)
        .with_context(|| format!("ingesting {}", a.triples.display()))?;
    index.save(&a.out)?;
    rec.output(&a.out);
    let s = &index.stats;
    println!(
        "{} facts over {} phrases and {} relation types ({} lines, {} malformed, {} skipped relation, {} duplicate)",
        index.fact_count(),
        index.phrase_count(),
        index.relations().len(),
        s.lines,
        s.malformed,
        s.skipped_relation,
        s.duplicates
    );
    let config = json!({
        "keep_relatedto_existence": a.keep_relatedto_existence,
        "relations": index.relations().names(),
    });
    rec.finish(&a.manifest.unwrap_or_else(|| beside(&a.out)), config, None)?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut rec = Recorder::start("gen");
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let spec = SynthSpec {
        vocab_size: a.vocab_size,
        concepts: a.concepts,
        relations: a.relations,
        examples: a.examples,
        options: a.options,
        gap_rate: a.gap_rate,
        noise_rate: a.noise_rate,
        seed,
        document_words: a.document_words,
        option_words: a.option_words,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if a.dev >= spec.examples {
        return Err(usage(format!("--dev {} leaves no training examples out of {}", a.dev, spec.examples)));
    }
    let out = synth::generate(&spec)?;
    let report = synth::audit(&out.examples, &out.triples, &out.manifest);
    if !report.passed() {
        bail!("generated data failed its audit: {}", report.discrepancies.join("; "));
    }
    fs::create_dir_all(&a.out)?;
    let (train, dev) = out.split_dev(a.dev);
    let paths = [a.out.join("train.jsonl"), a.out.join("triples.tsv"), a.out.join("truth.json")];
    out.write(&paths[0], &paths[1], &paths[2])?;
    // `write` emitted every example; keep only the training part there.
    write_dataset(&paths[0], &train)?;
    paths.iter().for_each(|p| rec.output(p));
    if a.dev > 0 {
        let dev_path = a.out.join("dev.jsonl");
        write_dataset(&dev_path, &dev)?;
        rec.output(&dev_path);
    }
    println!(
        "{} train / {} dev examples ({} gap), {} triples, labels {:?}",
        train.len(),
        dev.len(),
        report.gap_examples,
        out.triples.len(),
        report.label_counts
    );
    rec.finish(&a.out.join("run.json"), serde_json::to_value(&spec)?, Some(seed))?;
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> Result<()> {
    let mut examples = Vec::new();
    for p in &a.data {
        examples.extend(read_dataset(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let report = synth::audit(&examples, &synth::read_dump(&a.dump)?, &synth::read_manifest(&a.truth)?);
    println!("{} examples, {} gap, labels {:?}", report.examples, report.gap_examples, report.label_counts);
    if !report.passed() {
        for d in &report.discrepancies {
            eprintln!("  {d}");
        }
        bail!("audit failed with {} discrepancies", report.discrepancies.len());
    }
    println!("audit passed");
    Ok(())
}

fn load_kb(path: &Path) -> Result<TripleIndex> {
    let index = if path.extension().is_some_and(|e| e == "tsv") {
        TripleIndex::ingest(path, RelationVocab::from_dump(path)?, true)?
    } else {
        TripleIndex::load(path)?
    };
    Ok(index)
}

fn load_data(path: &Path) -> Result<Vec<Example>> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

/// Defaults, then the config file, then flags. Returns whether the file set a seed.
fn build_config(file: Option<&Path>, o: &Overrides) -> Result<(TrainConfig, bool)> {
    let mut c = TrainConfig::default();
    let mut file_seed = false;
    if let Some(p) = file {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let pairs = parse_kv(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        file_seed = pairs.iter().any(|(k, _)| k == "seed");
        for (k, v) in pairs {
            c.set(&k, &v).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        }
    }
    let flag = |e: training::TrainError| usage(e.to_string());
    for kv in &o.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k.trim(), v.trim()).map_err(flag)?;
    }
    let numeric: [(&str, Option<String>); 6] = [
        ("lambda_re", o.lambda_re.map(|v| v.to_string())),
        ("lambda_rt", o.lambda_rt.map(|v| v.to_string())),
        ("gamma", o.gamma.map(|v| v.to_string())),
        ("learning_rate", o.lr.map(|v| v.to_string())),
        ("epochs", o.epochs.map(|v| v.to_string())),
        ("batch_size", o.batch_size.map(|v| v.to_string())),
    ];
    for (k, v) in numeric {
        if let Some(v) = v {
            c.set(k, &v).map_err(flag)?;
        }
    }
    if o.freeze_supervision {
        c.freeze_supervision = true;
    }
    Ok((c, file_seed))
}

fn config_json(c: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(c).expect("config serializes")
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut rec = Recorder::start("train");
    let (mut config, file_seed) = build_config(a.config.as_deref(), &a.overrides)?;
    if let Some(m) = a.mode {
        config.mode = m;
    }
    match (a.seed, file_seed) {
        (Some(s), _) => config.seed = s,
        (None, true) => {}
        (None, false) => config.seed = env_seed()?.unwrap_or(config.seed),
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    let data = load_data(&a.data)?;
    let kb = load_kb(&a.kb)?;
    rec.input(&a.data);
    rec.input(&a.kb);
    if let Some(p) = &a.config {
        rec.input(p);
    }
    fs::create_dir_all(&a.out)?;
    let (ckpt, hist, kv) = (a.out.join("model.json"), a.out.join("history.jsonl"), a.out.join("config.kv"));
    let dev = a.dev.as_deref().map(load_data).transpose()?;
    let summary = match a.precision {
        Precision::F32 => train_and_save::<f32>(&data, &kb, &config, &ckpt, &hist, dev.as_deref())?,
        Precision::F64 => train_and_save::<f64>(&data, &kb, &config, &ckpt, &hist, dev.as_deref())?,
    };
    write_atomic(&kv, config.to_kv().as_bytes())?;
    for p in [&ckpt, &hist, &kv] {
        rec.output(p);
    }
    println!("{summary}");
    let mut cfg = config_json(&config);
    cfg["precision"] = json!(match a.precision {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    });
    rec.finish(&a.out.join("run.json"), cfg, Some(config.seed))?;
    Ok(())
}

fn train_and_save<T: Scalar>(
    data: &[Example],
    kb: &TripleIndex,
    config: &TrainConfig,
    ckpt: &Path,
    hist: &Path,
    dev: Option<&[Example]>,
) -> Result<String> {
    let out = training::train::<T>(data, kb, config)?;
    out.model.save(ckpt)?;
    training::write_history(hist, &out.history)?;
    let last = out.history.last().expect("at least one step");
    let mut summary = format!(
        "mode {} seed {}: {} steps, last batch L={:.4} (AP {:.4}, RE {:.4}, RT {:.4})",
        config.mode, config.seed, last.step, last.loss, last.answer, last.existence, last.relation_type
    );
    if let Some(dev) = dev {
        let r = training::evaluate(&out.model, dev, None, LossWeights::NONE, config.max_ngram)?;
        summary.push_str(&format!("\ndev accuracy {:.4} ({}/{})", r.accuracy, r.correct, r.examples));
    }
    Ok(summary)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut rec = Recorder::start("eval");
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let weights = LossWeights::new(a.lambda_re, a.lambda_rt);
    weights.validate().map_err(|e| usage(e.to_string()))?;
    let model = Model::<f64>::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data = load_data(&a.data)?;
    rec.input(&a.checkpoint);
    rec.input(&a.data);
    let kb = a.kb.as_deref().map(load_kb).transpose()?;
    if let Some(p) = &a.kb {
        rec.input(p);
    }
    let source = kb.as_ref().map(|index| SupervisionSource {
        index,
        gamma: a.gamma,
        seed,
        merged: model.params.config().type_classes == index.relations().len() + 1,
    });
    let weights = if source.is_some() { weights } else { LossWeights::NONE };
    let report = training::evaluate(&model, &data, source, weights, relweave::supervision::DEFAULT_MAX_NGRAM)?;
    println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.examples);
    let m = &report.mean_losses;
    println!("mean L {:.4}  L_AP {:.4}  L_RE {:.4}  L_RT {:.4}", m.total, m.answer, m.existence, m.relation_type);
    let record = a.record.unwrap_or_else(|| {
        let mut s = a.checkpoint.as_os_str().to_owned();
        s.push(".eval.json");
        PathBuf::from(s)
    });
    write_atomic(&record, serde_json::to_string_pretty(&report)?.as_bytes())?;
    rec.output(&record);
    let config = json!({ "gamma": a.gamma, "weights": weights, "with_kb": kb.is_some() });
    rec.finish(&beside(&record), config, Some(seed))?;
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut rec = Recorder::start("ablate");
    let (config, _) = build_config(a.config.as_deref(), &a.overrides)?;
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (seeds, modes) = (a.seeds, a.modes);
    let train = load_data(&a.train)?;
    let dev = load_data(&a.dev)?;
    let kb = load_kb(&a.kb)?;
    for p in [&a.train, &a.dev, &a.kb] {
        rec.input(p);
    }
    let table = training::run_ablation(&train, &dev, &kb, &config, &modes, &seeds, |mode, seed, acc| {
        eprintln!("{mode:>7} seed {seed}: dev accuracy {acc:.4}");
    })?;
    print!("{}", table.render());
    write_atomic(&a.out, serde_json::to_string_pretty(&table)?.as_bytes())?;
    rec.output(&a.out);
    let mut cfg = config_json(&config);
    cfg["seeds"] = json!(seeds);
    cfg["modes"] = json!(modes);
    rec.finish(&beside(&a.out), cfg, None)?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut suite = GradCheckSuite::default();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        for (k, v) in parse_kv(&text).map_err(|e| usage(e.to_string()))? {
            let bad = || usage(format!("{}: bad value {v:?} for {k}", p.display()));
            match k.as_str() {
                "layers" => suite.layers = v.parse().map_err(|_| bad())?,
                "heads" => suite.heads = v.parse().map_err(|_| bad())?,
                "hidden" => suite.hidden = v.parse().map_err(|_| bad())?,
                "relations" => suite.relations = v.parse().map_err(|_| bad())?,
                "seq_len" => suite.seq_len = v.parse().map_err(|_| bad())?,
                "seed" => suite.seed = v.parse().map_err(|_| bad())?,
                "step" => suite.step = v.parse().map_err(|_| bad())?,
                "tolerance" => suite.tolerance = v.parse().map_err(|_| bad())?,
                _ => return Err(usage(format!("{}: unknown gradcheck key {k:?}", p.display()))),
            }
        }
    }
    if let Some(t) = a.tolerance {
        suite.tolerance = t;
    }
    if let Some(s) = a.seed {
        suite.seed = s;
    }
    let out = suite.run().map_err(|e| match e {
        relweave::model::ModelError::Config(m) => usage(m),
        e => e.into(),
    })?;
    let r = &out.report;
    println!(
        "checked {} scalars in {} tensors ({} layers, hidden {}, {} relations, seq {})",
        r.checked,
        out.names.len(),
        suite.layers,
        suite.hidden,
        suite.relations,
        suite.seq_len
    );
    if let Some(w) = &r.worst {
        println!(
            "max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
            w.rel_err, out.names[w.tensor], w.element, w.analytic, w.numeric
        );
    }
    if !r.passed() {
        for f in r.failures.iter().take(20) {
            eprintln!("  {}[{}]: rel err {:.3e}", out.names[f.tensor], f.element, f.rel_err);
        }
        bail!("{} gradient(s) exceed tolerance {:e}", r.failures.len(), suite.tolerance);
    }
    println!("all gradients within {:e}", suite.tolerance);
    Ok(())
}
