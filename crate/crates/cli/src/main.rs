use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod manifest;

use glotparse::analysis::{
    self, char_analogy_accuracy, format_char_embeddings, nearest_words, parse_char_embeddings,
    parse_pairs, pos_error_attribution, AnalogyOptions, Metric, PL_RU_PAIRS,
};
use glotparse::decoder::{compare_decoders, DecodeOptions, Decoder};
use glotparse::model::{ModelBundle, SharingSpec};
use glotparse::trainer::{load_model, save_model, write_metric_log, LanguageData, TrainConfig, Trainer};
use glotparse::treebank::{load_conllu_with, to_conllu, Sentence, TreeCheck};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "glotparse", version, about = "Character-level multilingual dependency parser")]
struct Cli {
    /// Worker threads (1 gives bit-identical runs; default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write a run manifest to this file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser on one or more languages; the first is the main one.
    Train(TrainArgs),
    /// Parse a CoNLL-U file, replacing the head and relation columns.
    Parse(ParseArgs),
    /// Attachment scores of a parsed file, or of a model on a gold file.
    Eval(EvalArgs),
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Args)]
struct TrainArgs {
    /// `<lang>=<path>`, repeatable.
    #[arg(long, required = true, value_parser = lang_path)]
    train: Vec<(String, PathBuf)>,
    #[arg(long, value_parser = lang_path)]
    dev: Vec<(String, PathBuf)>,
    /// Shared subnetworks: any of reader,tagger,pos,parser, or all/none.
    #[arg(long)]
    share: Option<SharingSpec>,
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DecodeArgs {
    #[arg(long, default_value = "greedy")]
    decoder: Decoder,
    /// Require exactly one word attached to ROOT (CLE only).
    #[arg(long)]
    single_root: bool,
}

impl DecodeArgs {
    fn options(&self) -> DecodeOptions {
        DecodeOptions {
            decoder: self.decoder,
            single_root: self.single_root,
        }
    }
}

#[derive(Args)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    language: String,
}

#[derive(Args)]
struct ParseArgs {
    #[command(flatten)]
    io: ModelInput,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Also replace the UPOS column with predicted tags.
    #[arg(long)]
    tag: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Parsed file to score.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    predicted: Option<PathBuf>,
    /// Parse the gold file with this model instead.
    #[arg(long, requires = "language")]
    model: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Leave out tokens tagged PUNCT.
    #[arg(long)]
    exclude_punct: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Analyze {
    /// Cross-script character analogies.
    Analogy(AnalogyArgs),
    /// Target-language words closest to a source-language word.
    Neighbors(NeighborArgs),
    /// How POS mistakes line up with head and label mistakes.
    PosErrors(PosErrorArgs),
    /// Greedy versus Chu-Liu-Edmonds decoding on a parsed set.
    Decoders(DecoderArgs),
    /// Dump a language's character embeddings.
    Embeddings(EmbeddingArgs),
}

#[derive(Args)]
struct AnalogyArgs {
    #[arg(long, requires_all = ["source", "target"])]
    model: Option<PathBuf>,
    /// Source language (with --model).
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Embedding files instead of a model.
    #[arg(long, conflicts_with = "model", requires = "target_embeddings")]
    source_embeddings: Option<PathBuf>,
    #[arg(long, requires = "source_embeddings")]
    target_embeddings: Option<PathBuf>,
    /// `src<TAB>tgt` letter pairs; defaults to the built-in Polish-Russian list.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    /// Only query each unordered pair of pairs once.
    #[arg(long)]
    unordered: bool,
    #[arg(long)]
    exclude_r1: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct NeighborArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source: String,
    #[arg(long)]
    target: String,
    /// CoNLL-U file whose forms make up the target vocabulary.
    #[arg(long)]
    vocab: PathBuf,
    /// Query word, repeatable.
    #[arg(long, required = true)]
    query: Vec<String>,
    #[arg(short, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PosErrorArgs {
    #[command(flatten)]
    io: ModelInput,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DecoderArgs {
    #[command(flatten)]
    io: ModelInput,
    #[arg(long)]
    single_root: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EmbeddingArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    language: String,
}

fn lang_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok((l.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected <lang>=<path>, got {s:?}")),
    }
}

fn load(path: &Path, language: &str) -> Result<Vec<Sentence>> {
    load_checked(path, language, TreeCheck::Require)
}

/// Rejected sentences are logged by the loader and skipped.
fn load_checked(path: &Path, language: &str, check: TreeCheck) -> Result<Vec<Sentence>> {
    let report = load_conllu_with(path, language, check)?;
    if report.sentences.is_empty() {
        bail!("{}: no usable sentences", path.display());
    }
    Ok(report.sentences)
}

fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    load_model(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize") + "\n"
}

fn cmd_train(a: &TrainArgs, manifest: &mut RunManifest) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            manifest.input(p)?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.share {
        config.sharing = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let mut data = Vec::new();
    for (lang, path) in &a.train {
        manifest.input(path)?;
        data.push(LanguageData::new(lang, load(path, lang)?, Vec::new()));
    }
    for (lang, path) in &a.dev {
        manifest.input(path)?;
        let d = data
            .iter_mut()
            .find(|d| &d.language == lang)
            .with_context(|| format!("--dev {lang} has no matching --train"))?;
        d.dev = load(path, lang)?;
    }
    manifest.seed = Some(config.seed);
    manifest.config = serde_json::to_value(&config)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if manifest.path.is_none() {
        manifest.path = Some(a.out.join("manifest.json"));
    }
    manifest.start()?;
    let mut trainer = Trainer::new(config.clone(), data)?;
    trainer.set_output(&a.out);
    let outcome = trainer.train();
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => bail!("{e}; the best model so far is kept in {}", a.out.display()),
    };
    save_model(&a.out, &outcome.bundle, &config)?;
    write_metric_log(&a.out.join("metrics.jsonl"), &outcome.state.log)?;
    eprintln!(
        "best main-language UAS {:.2} at epoch {}; model in {}",
        outcome.state.best_uas.unwrap_or(0.0),
        outcome.state.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn cmd_parse(a: &ParseArgs, manifest: &mut RunManifest) -> Result<()> {
    let bundle = load_bundle(&a.io.model)?;
    manifest.model(&a.io.model)?;
    manifest.input(&a.io.input)?;
    manifest.start()?;
    let gold = load(&a.io.input, &a.io.language)?;
    let parsed = analysis::parse_corpus(&bundle, &a.io.language, &gold, a.decode.options())?;
    let out: Vec<Sentence> = gold
        .iter()
        .zip(&parsed)
        .map(|(s, (p, _))| {
            let mut p = p.clone();
            if !a.tag {
                p.upos = None;
            }
            p.apply_to(s)
        })
        .collect();
    emit(a.output.as_deref(), &to_conllu(&out))
}

fn cmd_eval(a: &EvalArgs, manifest: &mut RunManifest) -> Result<()> {
    manifest.input(&a.gold)?;
    let language = a.language.as_deref().unwrap_or("_");
    let gold = load(&a.gold, language)?;
    let predicted: Vec<analysis::Parsed> = match (&a.predicted, &a.model) {
        (Some(p), _) => {
            manifest.input(p)?;
            manifest.start()?;
            // Greedy output need not be a tree.
            load_checked(p, language, TreeCheck::Skip)?.iter().map(analysis::Parsed::gold).collect()
        }
        (None, Some(m)) => {
            manifest.model(m)?;
            manifest.start()?;
            let bundle = load_bundle(m)?;
            analysis::parse_corpus(&bundle, language, &gold, a.decode.options())?
                .into_iter()
                .map(|p| p.0)
                .collect()
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let report = analysis::attachment_scores(&predicted, &gold, !a.exclude_punct)?;
    if a.json {
        emit(None, &json(&report))
    } else {
        emit(
            None,
            &format!("UAS {:.2}\nLAS {:.2}\ntokens {}\n", report.uas, report.las, report.tokens),
        )
    }
}

fn read_text(path: &Path, manifest: &mut RunManifest) -> Result<String> {
    manifest.input(path)?;
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_analogy(a: &AnalogyArgs, manifest: &mut RunManifest) -> Result<()> {
    let (source, target) = match (&a.model, &a.source_embeddings, &a.target_embeddings) {
        (Some(m), _, _) => {
            manifest.model(m)?;
            let bundle = load_bundle(m)?;
            let (s, t) = (a.source.as_deref().unwrap(), a.target.as_deref().unwrap());
            (
                bundle.char_embeddings(bundle.language_index(s)?)?,
                bundle.char_embeddings(bundle.language_index(t)?)?,
            )
        }
        (None, Some(s), Some(t)) => (
            parse_char_embeddings(&read_text(s, manifest)?).with_context(|| s.display().to_string())?,
            parse_char_embeddings(&read_text(t, manifest)?).with_context(|| t.display().to_string())?,
        ),
        _ => bail!("give either --model with --source/--target, or --source-embeddings and --target-embeddings"),
    };
    let pairs = match &a.pairs {
        Some(p) => parse_pairs(&read_text(p, manifest)?).with_context(|| p.display().to_string())?,
        None => parse_pairs(PL_RU_PAIRS)?,
    };
    // Candidates are the letters of the target alphabet.
    let target: Vec<_> = target.into_iter().filter(|(c, _)| c.is_alphabetic()).collect();
    let opts = AnalogyOptions {
        metric: a.metric,
        ordered: !a.unordered,
        exclude_r1: a.exclude_r1,
    };
    manifest.start()?;
    let report = char_analogy_accuracy(&source, &target, &pairs, opts)?;
    if a.json {
        return emit(None, &json(&report));
    }
    let mut s = String::new();
    for q in &report.queries {
        s += &format!(
            "{} - {} + {} -> {} (expected {}, rank {})\n",
            q.p2, q.p1, q.r1, q.predicted, q.expected, q.rank
        );
    }
    s += &format!("accuracy {:.1}% ({} of {})\n", report.accuracy, report.correct, report.total);
    emit(None, &s)
}

fn cmd_neighbors(a: &NeighborArgs, manifest: &mut RunManifest) -> Result<()> {
    manifest.model(&a.model)?;
    manifest.input(&a.vocab)?;
    manifest.start()?;
    let bundle = load_bundle(&a.model)?;
    let words: Vec<String> = load(&a.vocab, &a.target)?
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.form.clone()))
        .collect();
    let mut records = Vec::new();
    let mut text = String::new();
    for q in &a.query {
        let n = nearest_words(&bundle, q, &a.source, &a.target, &words, a.k, a.metric)?;
        let shown: Vec<String> = n.iter().map(|x| format!("{} ({:.3})", x.word, x.distance)).collect();
        text += &format!("{q}: {}\n", shown.join(", "));
        records.push(serde_json::json!({ "query": q, "neighbors": n }));
    }
    emit(None, &if a.json { json(&records) } else { text })
}

fn cmd_pos_errors(a: &PosErrorArgs, manifest: &mut RunManifest) -> Result<()> {
    manifest.model(&a.io.model)?;
    manifest.input(&a.io.input)?;
    manifest.start()?;
    let bundle = load_bundle(&a.io.model)?;
    let corpus = load(&a.io.input, &a.io.language)?;
    let t = pos_error_attribution(&bundle, &a.io.language, &corpus, a.decode.options())?;
    if a.json {
        return emit(None, &json(&t));
    }
    let mut s = format!("tokens {}\npos head label count\n", t.tokens);
    let ok = |b: usize| if b == 1 { "ok " } else { "err" };
    for p in [1, 0] {
        for h in [1, 0] {
            for l in [1, 0] {
                s += &format!("{} {}  {}   {}\n", ok(p), ok(h), ok(l), t.counts[p][h][l]);
            }
        }
    }
    for r in &t.rates {
        let v = r.rate.map_or("undefined".to_string(), |v| format!("{:.1}%", 100.0 * v));
        s += &format!("P({}) = {} ({}/{})\n", r.name, v, r.numerator, r.denominator);
    }
    emit(None, &s)
}

fn cmd_decoders(a: &DecoderArgs, manifest: &mut RunManifest) -> Result<()> {
    manifest.model(&a.io.model)?;
    manifest.input(&a.io.input)?;
    manifest.start()?;
    let bundle = load_bundle(&a.io.model)?;
    let corpus = load(&a.io.input, &a.io.language)?;
    let parsed = analysis::parse_corpus(&bundle, &a.io.language, &corpus, DecodeOptions::default())?;
    let scores: Vec<_> = parsed.into_iter().filter_map(|p| p.1).collect();
    let gold: Vec<Vec<usize>> = corpus.iter().map(Sentence::heads).collect();
    let r = compare_decoders(&scores, Some(&gold), a.single_root)?;
    if a.json {
        return emit(None, &json(&r));
    }
    let pct = |x: f64| format!("{:.2}%", 100.0 * x);
    let mut s = format!(
        "sentences {}\nidentical trees {}\nidentical heads {}\ngreedy output not a tree {}\n",
        r.sentences.len(),
        pct(r.agreement_rate),
        pct(r.token_agreement_rate),
        pct(r.cycle_rate)
    );
    if let (Some(g), Some(c)) = (r.greedy_uas, r.cle_uas) {
        s += &format!("UAS greedy {:.2} cle {:.2}\n", g, c);
    }
    emit(None, &s)
}

fn cmd_embeddings(a: &EmbeddingArgs, manifest: &mut RunManifest) -> Result<()> {
    manifest.model(&a.model)?;
    manifest.start()?;
    let bundle = load_bundle(&a.model)?;
    let table = bundle.char_embeddings(bundle.language_index(&a.language)?)?;
    emit(None, &format_char_embeddings(&table))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut manifest = RunManifest::new(std::env::args().collect(), cli.workers, cli.manifest.clone());
    match &cli.command {
        Command::Train(a) => cmd_train(a, &mut manifest),
        Command::Parse(a) => cmd_parse(a, &mut manifest),
        Command::Eval(a) => cmd_eval(a, &mut manifest),
        Command::Analyze(Analyze::Analogy(a)) => cmd_analogy(a, &mut manifest),
        Command::Analyze(Analyze::Neighbors(a)) => cmd_neighbors(a, &mut manifest),
        Command::Analyze(Analyze::PosErrors(a)) => cmd_pos_errors(a, &mut manifest),
        Command::Analyze(Analyze::Decoders(a)) => cmd_decoders(a, &mut manifest),
        Command::Analyze(Analyze::Embeddings(a)) => cmd_embeddings(a, &mut manifest),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn lang_path_pairs() {
        assert_eq!(lang_path("pl=a/b.conllu").unwrap(), ("pl".into(), PathBuf::from("a/b.conllu")));
        assert!(lang_path("pl").is_err());
        assert!(lang_path("=x").is_err());
    }

    #[test]
    fn parsers_are_sync() {
        fn check<T: analysis::SentenceParser>() {}
        check::<ModelBundle>();
    }
}
