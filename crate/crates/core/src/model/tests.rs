use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::decoder::Decoder;
use crate::synthetic::{cipher_sentence, Grammar};
use crate::treebank::Token;

fn corpus(lang: &str, n: usize, seed: u64) -> Vec<Sentence> {
    Grammar::new(1).sentences(lang, n, seed, "model-tests")
}

/// Even-numbered languages use the Latin toy language, odd ones its
/// Cyrillic cipher.
fn vocab_for(langs: &[&str]) -> (VocabularySet, Vec<Vec<Sentence>>) {
    let base = corpus("a", 12, 3);
    let corpora: Vec<(String, Vec<Sentence>)> = langs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let ss = base
                .iter()
                .map(|s| {
                    if i % 2 == 0 {
                        let mut s = s.clone();
                        s.language = l.to_string();
                        s
                    } else {
                        cipher_sentence(s, l)
                    }
                })
                .collect();
            (l.to_string(), ss)
        })
        .collect();
    let v = VocabularySet::build(&corpora).unwrap();
    (v, corpora.into_iter().map(|c| c.1).collect())
}

fn tiny_bundle(sharing: SharingSpec, langs: &[&str]) -> (ModelBundle, Vec<Vec<Sentence>>) {
    let (v, c) = vocab_for(langs);
    (ModelBundle::new(ModelConfig::tiny(), sharing, v, 7).unwrap(), c)
}

fn set_param(bundle: &mut ModelBundle, name: &str, f: impl Fn(f64) -> f64) {
    let id = bundle.store().id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let p = bundle.store_mut().get_mut(id);
    for v in p.value.data_mut() {
        *v = f(*v);
    }
}

fn names(bundle: &ModelBundle) -> Vec<String> {
    bundle.store().iter().map(|(_, p)| p.name().to_string()).collect()
}

#[test]
fn dimension_contract_with_full_size_defaults() {
    let sentences = vec![Sentence::new(
        "a",
        vec![
            Token::new("x", "X", 0, "root"),
            Token::new("ab", "X", 1, "dep"),
            Token::new("abcdefgh", "X", 1, "dep"),
        ],
    )];
    let v = VocabularySet::build(&[("a".into(), sentences)]).unwrap();
    let b = ModelBundle::new(ModelConfig::default(), SharingSpec::none(), v, 1).unwrap();
    for forms in [vec!["x"], vec!["x", "ab", "abcdefgh"]] {
        let st = b.states(0, &forms).unwrap();
        assert_eq!(st.e.shape(), &[forms.len(), 512]);
        assert_eq!(st.h.shape(), &[forms.len() + 1, 548]);
        assert!(st.e.is_finite() && st.h.is_finite());
    }
    assert_eq!(b.read_word(0, "x").unwrap().len(), 512);
}

/// Reader output recomputed with explicit loops over positions and filters.
fn naive_read(b: &ModelBundle, lang: &str, form: &str) -> Vec<f64> {
    let s = b.store();
    let val = |name: &str| s.value(s.id(name).unwrap()).clone();
    let c = b.config();
    let d = c.char_embed_dim;
    let chars = val(&format!("{lang}.reader.chars"));
    let fences = val(&format!("{lang}.reader.fences"));
    let mut seq: Vec<Vec<f64>> = vec![fences.row_slice(0).to_vec()];
    for r in b.vocab().encode_chars(form, lang).unwrap() {
        seq.push(chars.row_slice(r).to_vec());
    }
    seq.push(fences.row_slice(1).to_vec());
    let mut pooled = Vec::new();
    for &(w, count) in &c.filters {
        let f = val(&format!("{lang}.reader.filters.k{w}"));
        for j in 0..count {
            if w > seq.len() {
                pooled.push(0.0);
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for start in 0..=seq.len() - w {
                let mut acc = 0.0;
                for o in 0..w {
                    for k in 0..d {
                        acc += seq[start + o][k] * f.get(o * d + k, j);
                    }
                }
                best = best.max(acc);
            }
            pooled.push(best);
        }
    }
    let layer = |x: &[f64], name: &str, relu: bool| -> Vec<f64> {
        let w = val(&format!("{name}.w"));
        let bias = val(&format!("{name}.b"));
        (0..w.cols())
            .map(|j| {
                let v = bias.data()[j] + x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum::<f64>();
                if relu {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect()
    };
    let mut x = layer(&pooled, &format!("{lang}.reader.proj"), false);
    for i in 0..c.reader_mlp_layers {
        x = layer(&x, &format!("{lang}.reader.mlp{i}"), true);
    }
    x
}

#[test]
fn reader_matches_naive_convolution() {
    let (mut b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Nonzero biases so every path is exercised.
    for name in ["a.reader.proj.b", "a.reader.mlp0.b"] {
        set_param(&mut b, name, |_| 0.0);
        let id = b.store().id(name).unwrap();
        for v in b.store_mut().get_mut(id).value.data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    let words: Vec<String> = corpus("a", 5, 3).iter().flat_map(|s| s.forms().map(String::from).collect::<Vec<_>>()).collect();
    for w in words.iter().chain([&"q".to_string(), &"ab".to_string()]) {
        let fast = b.read_word(0, w).unwrap();
        let slow = naive_read(&b, "a", w);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-10, "{w}: {x} vs {y}");
        }
    }
}

#[test]
fn zero_reader_gives_zero_embedding() {
    let (mut b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let ids = b.subnet_params(0, Subnet::Reader);
    for id in ids {
        b.store_mut().get_mut(id).value.data_mut().fill(0.0);
    }
    assert!(b.read_word(0, "tego").unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn tagger_is_bidirectional() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let st = b.states(0, &["ten", "tego", "os"]).unwrap();
    let mut e = st.e.clone();
    let cols = e.cols();
    e.data_mut()[2 * cols] += 0.5;
    let h2 = b.tag_embeddings(0, &e, None).unwrap();
    let h1 = b.tag_embeddings(0, &st.e, None).unwrap();
    assert_eq!(h1, st.h);
    let diff: f64 = h1.row_slice(1).iter().zip(h2.row_slice(1)).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-8);
}

#[test]
fn zero_tagger_weights_give_constant_states() {
    let (mut b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let names = names(&b);
    for n in names.iter().filter(|n| n.contains(".tagger.l") && !n.ends_with(".b")) {
        set_param(&mut b, n, |_| 0.0);
    }
    let h = b.states(0, &["ten", "tego", "os"]).unwrap().h;
    for r in 1..h.rows() {
        assert_eq!(h.row_slice(r), h.row_slice(0));
    }
}

#[test]
fn head_rows_are_distributions() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    for n in 1..5 {
        let forms: Vec<&str> = ["ten", "tego", "os", "na"].into_iter().take(n).collect();
        let st = b.states(0, &forms).unwrap();
        let s = b.score_heads(0, &st.h).unwrap();
        assert_eq!(s.len(), n);
        for w in 1..=n {
            assert_eq!(s.row(w).len(), n + 1);
            let total: f64 = s.row(w).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn identical_states_give_uniform_heads() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let row: Vec<f64> = (0..b.config().tagger_hidden).map(|i| (i as f64 * 0.37).sin()).collect();
    let h = Tensor::from_rows(&vec![row; 4]).unwrap();
    let s = b.score_heads(0, &h).unwrap();
    for w in 1..=3 {
        for &v in s.row(w) {
            assert!((v - (0.25f64).ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn labeler_and_pos_outputs_are_distributions() {
    let (mut b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let h = b.states(0, &["ten", "tego", "os"]).unwrap().h;
    let d = b.label_edge(0, &h, 2, 1).unwrap();
    assert_eq!(d.len(), b.vocab().deprel().len());
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for t in b.predict_pos(0, &h).unwrap() {
        for r in 0..t.rows() {
            assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    for id in b.subnet_params(0, Subnet::Parser) {
        b.store_mut().get_mut(id).value.data_mut().fill(0.0);
    }
    let d = b.label_edge(0, &h, 2, 1).unwrap();
    let u = 1.0 / d.len() as f64;
    assert!(d.iter().all(|&p| (p - u).abs() < 1e-12));
}

#[test]
fn labels_depend_only_on_their_own_edge() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let h = b.states(0, &["ten", "tego", "os", "na"]).unwrap().h;
    let a = b.label_distributions(0, &h, &[(1, 2), (2, 0), (3, 2), (4, 3)]).unwrap();
    let c = b.label_distributions(0, &h, &[(1, 4), (2, 0), (3, 2), (4, 3)]).unwrap();
    assert_eq!(a[1..], c[1..]);
    assert_eq!(a[1], b.label_edge(0, &h, 2, 0).unwrap());
}

#[test]
fn pos_predictor_does_not_affect_trees() {
    let (mut b, c) = tiny_bundle(SharingSpec::none(), &["a"]);
    let opts = DecodeOptions {
        decoder: Decoder::Cle,
        single_root: false,
    };
    let forms: Vec<&str> = c[0][0].forms().collect();
    let before = b.predict(0, &forms, opts).unwrap();
    for id in b.subnet_params(0, Subnet::Pos) {
        b.store_mut().get_mut(id).value.data_mut().fill(0.0);
    }
    let after = b.predict(0, &forms, opts).unwrap();
    assert_eq!(before.tree, after.tree);
    assert_eq!(before.scores, after.scores);
}

#[test]
fn loss_components_and_uniform_scorer() {
    let (mut b, c) = tiny_bundle(SharingSpec::none(), &["a"]);
    let s = &c[0][0];
    let l = b.sentence_loss(0, s, None).unwrap();
    let w = b.config().loss_weights;
    assert!((l.total - (w.head * l.head + w.label * l.label + w.pos * l.pos)).abs() < 1e-12);
    assert!(l.head > 0.0 && l.label > 0.0 && l.pos > 0.0);
    set_param(&mut b, "a.parser.scorer.v", |_| 0.0);
    let l = b.sentence_loss(0, s, None).unwrap();
    assert!((l.head - ((s.len() + 1) as f64).ln()).abs() < 1e-12);
}

#[test]
fn sum_reduction_scales_with_length() {
    let (v, c) = vocab_for(&["a"]);
    let mean = ModelBundle::new(ModelConfig::tiny(), SharingSpec::none(), v.clone(), 7).unwrap();
    let mut cfg = ModelConfig::tiny();
    cfg.reduction = LossReduction::Sum;
    let sum = ModelBundle::new(cfg, SharingSpec::none(), v, 7).unwrap();
    let s = &c[0][1];
    let (a, b) = (mean.sentence_loss(0, s, None).unwrap(), sum.sentence_loss(0, s, None).unwrap());
    let n = s.len() as f64;
    assert!((a.head * n - b.head).abs() < 1e-9);
    assert!((a.label * n - b.label).abs() < 1e-9);
    assert!((a.pos * n - b.pos).abs() < 1e-9);
}

#[test]
fn unk_targets_keep_the_loss_defined() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    let s = Sentence::new("a", vec![Token::new("żółw", "NEVER", 0, "unseen")]);
    let l = b.sentence_loss(0, &s, None).unwrap();
    assert!(l.total.is_finite());
}

#[test]
fn zero_pos_weight_gives_pos_heads_no_gradient() {
    let (v, c) = vocab_for(&["a"]);
    let mut cfg = ModelConfig::tiny();
    cfg.loss_weights.pos = 0.0;
    let b = ModelBundle::new(cfg, SharingSpec::none(), v, 7).unwrap();
    let (_, g) = b.loss_and_gradients(0, &c[0][0], None).unwrap();
    for id in b.subnet_params(0, Subnet::Pos) {
        assert!(g.get(id).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let (b, c) = tiny_bundle(SharingSpec::none(), &["a"]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut total = vec![0.0; b.store().len()];
    for s in &c[0][..6] {
        let (_, g) = b.loss_and_gradients(0, s, Some(&mut rng)).unwrap();
        for (id, t) in g.iter() {
            total[id.index()] += t.sum_squares();
        }
    }
    for (id, p) in b.store().iter() {
        assert!(total[id.index()] > 0.0, "{} has no gradient", p.name());
    }
}

#[test]
fn inference_is_bitwise_deterministic() {
    let (b, c) = tiny_bundle(SharingSpec::none(), &["a"]);
    let forms: Vec<&str> = c[0][2].forms().collect();
    let x = b.states(0, &forms).unwrap();
    let y = b.states(0, &forms).unwrap();
    assert_eq!(x, y);
    assert_eq!(b.sentence_loss(0, &c[0][2], None).unwrap(), b.sentence_loss(0, &c[0][2], None).unwrap());
}

#[test]
fn dropout_changes_training_loss_only_with_rng() {
    let (b, c) = tiny_bundle(SharingSpec::none(), &["a"]);
    let s = &c[0][0];
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(1);
    let a = b.sentence_loss(0, s, Some(&mut r1)).unwrap();
    let d = b.sentence_loss(0, s, Some(&mut r2)).unwrap();
    assert_eq!(a, d);
    assert_ne!(a, b.sentence_loss(0, s, None).unwrap());
}

#[test]
fn full_sharing_has_one_copy_of_everything() {
    let (b, _) = tiny_bundle(SharingSpec::all(), &["a", "b"]);
    let ns = names(&b);
    let private: Vec<&String> = ns.iter().filter(|n| n.starts_with("a.") || n.starts_with("b.")).collect();
    assert_eq!(private, vec!["a.reader.fences", "b.reader.fences"]);
    for s in Subnet::ALL {
        let (pa, pb) = (b.subnet_params(0, s), b.subnet_params(1, s));
        let shared_a: Vec<_> = pa.iter().filter(|id| !b.store().get(**id).name().ends_with("fences")).collect();
        let shared_b: Vec<_> = pb.iter().filter(|id| !b.store().get(**id).name().ends_with("fences")).collect();
        assert_eq!(shared_a, shared_b);
    }
    assert_eq!(b.language_groups(), vec![vec![0, 1]]);
}

#[test]
fn parser_only_sharing() {
    let (b, _) = tiny_bundle("parser".parse().unwrap(), &["pl", "cs"]);
    for s in [Subnet::Reader, Subnet::Tagger, Subnet::Pos] {
        let pa = b.subnet_params(0, s);
        let pb = b.subnet_params(1, s);
        assert!(pa.iter().all(|id| !pb.contains(id)), "{s:?}");
    }
    assert_eq!(b.subnet_params(0, Subnet::Parser), b.subnet_params(1, Subnet::Parser));
    assert!(names(&b).iter().any(|n| n == "parser.scorer.v"));
    assert!(names(&b).iter().any(|n| n == "pl.tagger.root"));
}

#[test]
fn private_networks_double_the_parameter_count() {
    // Same script in both languages so the inventories match.
    let base = corpus("a", 12, 3);
    let relabel = |l: &str| -> Vec<Sentence> {
        base.iter()
            .map(|s| {
                let mut s = s.clone();
                s.language = l.into();
                s
            })
            .collect()
    };
    let v2 = VocabularySet::build(&[("a".into(), relabel("a")), ("b".into(), relabel("b"))]).unwrap();
    let v1 = VocabularySet::build(&[("a".into(), relabel("a"))]).unwrap();
    let b2 = ModelBundle::new(ModelConfig::tiny(), SharingSpec::none(), v2, 7).unwrap();
    let b1 = ModelBundle::new(ModelConfig::tiny(), SharingSpec::none(), v1, 7).unwrap();
    assert_eq!(b2.num_values(), 2 * b1.num_values());
    assert_eq!(b2.language_groups(), vec![vec![0], vec![1]]);
}

#[test]
fn sharing_couples_languages_only_when_shared() {
    for (spec, coupled) in [(SharingSpec::all(), true), (SharingSpec::none(), false)] {
        let (mut b, c) = tiny_bundle(spec, &["a", "b"]);
        let forms: Vec<&str> = c[1][0].forms().collect();
        let before = b.states(1, &forms).unwrap();
        let (_, g) = b.loss_and_gradients(0, &c[0][0], None).unwrap();
        for (id, t) in g.iter() {
            let p = b.store_mut().get_mut(id);
            for (v, gv) in p.value.data_mut().iter_mut().zip(t.data()) {
                *v -= 0.1 * gv;
            }
        }
        let after = b.states(1, &forms).unwrap();
        assert_eq!(before != after, coupled, "{spec}");
    }
}

#[test]
fn character_embeddings_per_language() {
    let (b, _) = tiny_bundle(SharingSpec::all(), &["a", "b"]);
    let ea = b.char_embeddings(0).unwrap();
    let eb = b.char_embeddings(1).unwrap();
    assert!(ea.iter().any(|(c, _)| *c == 't'));
    assert!(eb.iter().any(|(c, _)| *c == 'т'));
    assert!(eb.iter().all(|(c, _)| !c.is_ascii_alphabetic()));
}

#[test]
fn model_card_mentions_dimensions() {
    let (b, _) = tiny_bundle("reader,tagger".parse().unwrap(), &["a", "b"]);
    let card = b.model_card();
    assert!(card.contains("shared subnetworks: reader,tagger"));
    assert!(card.contains("languages: a, b"));
    assert!(card.contains("32 units"));
}

#[test]
fn unknown_language_is_reported() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    assert!(b.states(3, &["x"]).is_err());
    assert!(b.language_index("zz").is_err());
}

#[test]
fn empty_inputs_are_errors() {
    let (b, _) = tiny_bundle(SharingSpec::none(), &["a"]);
    assert!(matches!(b.states(0, &[]), Err(ModelError::EmptySentence)));
    assert!(matches!(b.read_word(0, ""), Err(ModelError::EmptyWord(1))));
}

#[test]
fn sentence_loss_matches_finite_differences() {
    let (mut b, corpora) = tiny_bundle("reader,parser".parse().unwrap(), &["a", "b"]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let lang = trial % 2;
        let s = &corpora[lang][trial];
        let ids = b.language_params(lang);
        let coords: Vec<_> = ids
            .iter()
            .map(|&id| (id, rng.random_range(0..b.store().value(id).len())))
            .collect();
        let dropout = (trial % 3 != 0).then_some(trial as u64);
        worst = worst.max(b.gradient_check(lang, s, dropout, &coords).unwrap().worst);
    }
    assert!(worst < crate::numcore::gradcheck::TOLERANCE, "{worst}");
}
