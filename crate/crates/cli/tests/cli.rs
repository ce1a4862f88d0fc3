use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use glotparse::synthetic::{cipher_sentence, Grammar};
use glotparse::treebank::{parse_conllu, parse_conllu_with, to_conllu, Sentence, TreeCheck};

const CONFIG: &str = r#"
epochs = 3
batch_size = 4
seed = 3

[model]
char_embed_dim = 8
filters = [[1, 8], [2, 8], [3, 8]]
reader_proj_dim = 16
reader_mlp_layers = 1
tagger_layers = 1
tagger_hidden = 16
scorer_hidden = 16
labeler_units = 8
"#;

fn glotparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glotparse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn write(path: &Path, sentences: &[Sentence]) {
    std::fs::write(path, to_conllu(sentences)).unwrap();
}

/// Toy corpora plus one trained two-language model, shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let g = Grammar::new(1);
        let a = g.sentences("a", 12, 1, "train");
        let b: Vec<Sentence> = a.iter().map(|s| cipher_sentence(s, "b")).collect();
        write(&root.join("a.conllu"), &a);
        write(&root.join("b.conllu"), &b);
        write(&root.join("a-dev.conllu"), &g.sentences("a", 5, 2, "dev"));
        std::fs::write(root.join("config.toml"), CONFIG).unwrap();
        let f = Fixture { _dir: dir, root };
        let out = glotparse(&[
            "--workers", "1", "train",
            "--train", &format!("a={}", f.path("a.conllu")),
            "--train", &format!("b={}", f.path("b.conllu")),
            "--dev", &format!("a={}", f.path("a-dev.conllu")),
            "--share", "all",
            "--config", &f.path("config.toml"),
            "--out", &f.path("model"),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        f
    })
}

#[test]
fn missing_train_is_a_usage_error() {
    let o = glotparse(&["train", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = glotparse(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = glotparse(&["train", "--train", "nolang", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_writes_model_log_and_manifest() {
    let f = fixture();
    for file in ["model.toml", "vocab.tsv", "params.ckpt", "model-card.txt", "metrics.jsonl", "manifest.json"] {
        assert!(f.root.join("model").join(file).exists(), "{file}");
    }
    let log = std::fs::read_to_string(f.root.join("model/metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "language", "UAS", "LAS", "L_h", "L_l", "L_t"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.root.join("model/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config"]["sharing"], "all");
    let card = std::fs::read_to_string(f.root.join("model/model-card.txt")).unwrap();
    assert!(card.contains("shared subnetworks: all"));
}

#[test]
fn same_seed_gives_identical_logs() {
    let f = fixture();
    let run = |out: &str| {
        let o = glotparse(&[
            "--workers", "1", "train",
            "--train", &format!("a={}", f.path("a.conllu")),
            "--dev", &format!("a={}", f.path("a-dev.conllu")),
            "--config", &f.path("config.toml"),
            "--epochs", "2",
            "--out", &f.path(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(f.root.join(out).join("metrics.jsonl")).unwrap()
    };
    assert_eq!(run("r1"), run("r2"));
}

#[test]
fn parse_keeps_forms_and_reloads() {
    let f = fixture();
    let gold = parse_conllu(&std::fs::read_to_string(f.root.join("a-dev.conllu")).unwrap(), "a").sentences;
    for decoder in ["greedy", "cle"] {
        let text = stdout(&glotparse(&[
            "parse", "--model", &f.path("model"), "--input", &f.path("a-dev.conllu"),
            "--language", "a", "--decoder", decoder,
        ]));
        // Greedy trees may contain cycles; CLE output is always a tree.
        let check = if decoder == "cle" { TreeCheck::Require } else { TreeCheck::Skip };
        let back = parse_conllu_with(&text, "a", check);
        assert!(back.rejected.is_empty(), "{decoder}: {:?}", back.rejected);
        assert_eq!(back.sentences.len(), gold.len());
        for (p, g) in back.sentences.iter().zip(&gold) {
            assert_eq!(p.forms().collect::<Vec<_>>(), g.forms().collect::<Vec<_>>());
            assert_eq!(p.tokens.iter().map(|t| &t.upos).collect::<Vec<_>>(), g.tokens.iter().map(|t| &t.upos).collect::<Vec<_>>());
        }
    }
}

#[test]
fn unknown_language_names_the_known_ones() {
    let f = fixture();
    let o = glotparse(&["parse", "--model", &f.path("model"), "--input", &f.path("a-dev.conllu"), "--language", "zz"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("zz") && err.contains('a') && err.contains('b'), "{err}");
}

#[test]
fn eval_of_a_file_against_itself_is_perfect() {
    let f = fixture();
    let text = stdout(&glotparse(&["eval", "--gold", &f.path("a-dev.conllu"), "--predicted", &f.path("a-dev.conllu")]));
    assert!(text.contains("UAS 100.00") && text.contains("LAS 100.00"), "{text}");
    let parsed = f.path("a-dev.parsed");
    stdout(&glotparse(&[
        "parse", "--model", &f.path("model"), "--input", &f.path("a-dev.conllu"), "--language", "a", "--output", &parsed,
    ]));
    let from_file = stdout(&glotparse(&["eval", "--gold", &f.path("a-dev.conllu"), "--predicted", &parsed, "--json"]));
    let text = stdout(&glotparse(&[
        "eval", "--gold", &f.path("a-dev.conllu"), "--model", &f.path("model"), "--language", "a", "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let from_file: serde_json::Value = serde_json::from_str(&from_file).unwrap();
    assert_eq!(report["uas"], from_file["uas"]);
    assert!(report["las"].as_f64().unwrap() <= report["uas"].as_f64().unwrap());
}

#[test]
fn analogy_on_offset_embeddings_is_perfect() {
    let f = fixture();
    let pairs = "a\tα\nb\tβ\nc\tγ\nd\tδ\n";
    let src = "a\t1 0 0\nb\t0 1 0\nc\t0 0 1\nd\t1 1 0\n";
    let tgt = "α\t1 0 5\nβ\t0 1 5\nγ\t0 0 6\nδ\t1 1 5\n";
    std::fs::write(f.root.join("pairs.tsv"), pairs).unwrap();
    std::fs::write(f.root.join("src.emb"), src).unwrap();
    std::fs::write(f.root.join("tgt.emb"), tgt).unwrap();
    let text = stdout(&glotparse(&[
        "analyze", "analogy", "--source-embeddings", &f.path("src.emb"), "--target-embeddings",
        &f.path("tgt.emb"), "--pairs", &f.path("pairs.tsv"), "--metric", "euclidean",
    ]));
    assert!(text.contains("accuracy 100.0% (12 of 12)"), "{text}");
}

#[test]
fn analyses_of_a_trained_model_run() {
    let f = fixture();
    let model = f.path("model");
    let dev = f.path("a-dev.conllu");
    let text = stdout(&glotparse(&["analyze", "decoders", "--model", &model, "--input", &dev, "--language", "a", "--json"]));
    let r: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(r["agreement_rate"].as_f64().is_some() && r["cycle_rate"].as_f64().is_some());

    let text = stdout(&glotparse(&["analyze", "pos-errors", "--model", &model, "--input", &dev, "--language", "a"]));
    assert!(text.contains("P(head wrong | pos wrong)"), "{text}");

    let text = stdout(&glotparse(&[
        "analyze", "neighbors", "--model", &model, "--source", "a", "--target", "b",
        "--vocab", &f.path("b.conllu"), "--query", "tego", "-k", "3",
    ]));
    assert_eq!(text.lines().next().unwrap().matches('(').count(), 3, "{text}");

    let text = stdout(&glotparse(&["analyze", "embeddings", "--model", &model, "--language", "b"]));
    assert!(text.lines().any(|l| l.starts_with("т\t")));

    let o = glotparse(&["--manifest", &f.path("m.json"), "analyze", "analogy", "--model", &model, "--source", "a", "--target", "b"]);
    // The built-in pair list names Polish letters the toy alphabet lacks.
    assert_eq!(o.status.code(), Some(1));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.root.join("m.json")).unwrap()).unwrap();
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
}
