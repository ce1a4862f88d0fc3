use super::*;
use crate::numcore::Precision;
use crate::synthetic::{cipher_sentence, Grammar};

fn toy(language: &str, n: usize, tag: &str) -> Vec<Sentence> {
    Grammar::new(1).sentences(language, n, 7, tag)
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        batch_size: 4,
        epochs: 3,
        ..Default::default()
    }
}

#[test]
fn patience_one_with_frozen_parameters_stops_after_two_evaluations() {
    let data = vec![LanguageData::new("a", toy("a", 6, "t"), toy("a", 4, "d"))];
    let mut t = Trainer::new(TrainConfig { patience: 1, epochs: 20, ..tiny_config() }, data).unwrap();
    t.set_frozen(true);
    let before = t.bundle().store().snapshot();
    let out = t.train().unwrap();
    assert_eq!(out.state.evaluations, 2);
    assert_eq!(out.state.epoch, 2);
    assert_eq!(out.bundle.store().snapshot(), before);
}

#[test]
fn training_lowers_the_loss_and_logs_every_language() {
    let a = toy("a", 8, "t");
    let b: Vec<Sentence> = a.iter().map(|s| cipher_sentence(s, "b")).collect();
    let data = vec![LanguageData::new("a", a, vec![]), LanguageData::new("b", b, vec![])];
    let mut config = tiny_config();
    config.sharing = SharingSpec::all();
    config.optimizer.epsilon_start = 1e-6;
    config.optimizer.weight_decay = 1.0;
    let mut t = Trainer::new(config, data).unwrap();
    let first = t.run_epoch().unwrap();
    for _ in 0..4 {
        t.run_epoch().unwrap();
    }
    let last = t.run_epoch().unwrap();
    assert!(last[0].total < first[0].total, "{first:?} -> {last:?}");
    t.record_evaluation(&last).unwrap();
    let langs: Vec<&str> = t.state().log.iter().map(|r| r.language.as_str()).collect();
    assert_eq!(langs, ["a", "b"]);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let run = || {
        let data = vec![LanguageData::new("a", toy("a", 6, "t"), toy("a", 3, "d"))];
        Trainer::new(tiny_config(), data).unwrap().train().unwrap().state.log
    };
    assert_eq!(run(), run());
}

#[test]
fn best_uas_never_decreases_and_best_parameters_are_restored() {
    let data = vec![LanguageData::new("a", toy("a", 8, "t"), toy("a", 4, "d"))];
    let mut config = tiny_config();
    config.epochs = 6;
    config.optimizer.epsilon_start = 1e-6;
    let out = Trainer::new(config.clone(), data.clone()).unwrap().train().unwrap();
    let best = out.state.best_uas.unwrap();
    assert!(out.state.log.iter().all(|r| r.uas <= best));
    let reports = evaluate_checkpoint(
        &out.bundle,
        &[("a", &data[0].dev)],
        DecodeOptions::default(),
        config.include_punct,
    )
    .unwrap();
    assert_eq!(reports[0].uas, best);
}

#[test]
fn full_sharing_keeps_one_copy_of_each_subnetwork() {
    let a = toy("a", 4, "t");
    let b: Vec<Sentence> = a.iter().map(|s| cipher_sentence(s, "b")).collect();
    let data = vec![LanguageData::new("a", a, vec![]), LanguageData::new("b", b, vec![])];
    let t = Trainer::new(TrainConfig { sharing: SharingSpec::all(), ..tiny_config() }, data).unwrap();
    let names: Vec<&str> = t.bundle().store().iter().map(|(_, p)| p.name()).collect();
    let private: Vec<&&str> = names.iter().filter(|n| n.starts_with("a.") || n.starts_with("b.")).collect();
    assert_eq!(private, [&"a.reader.fences", &"b.reader.fences"]);
    assert_eq!(t.bundle().language_groups(), vec![vec![0, 1]]);
}

#[test]
fn untrained_model_is_near_chance() {
    // Chance level: a head drawn uniformly from the n other positions
    // (ROOT included), estimated by simulation.
    use rand::Rng;
    let dev = toy("a", 40, "d");
    let mut rng = crate::seed::rng(5, "chance");
    let (mut hit, mut total) = (0usize, 0usize);
    for _ in 0..200 {
        for s in &dev {
            for (i, h) in s.heads().into_iter().enumerate() {
                let mut guess = rng.random_range(0..s.len());
                if guess >= i + 1 {
                    guess += 1;
                }
                hit += usize::from(guess == h);
                total += 1;
            }
        }
    }
    let chance = 100.0 * hit as f64 / total as f64;
    let mut scores = Vec::new();
    for seed in 0..8 {
        let data = vec![LanguageData::new("a", toy("a", 6, "t"), dev.clone())];
        let t = Trainer::new(TrainConfig { seed, ..tiny_config() }, data).unwrap();
        scores.push(t.evaluate().unwrap()[0].uas);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((mean - chance).abs() < 10.0, "untrained mean {mean:.1} vs chance {chance:.1} ({scores:?})");
}

#[test]
fn model_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = vec![LanguageData::new("a", toy("a", 4, "t"), vec![])];
    let config = TrainConfig { sharing: SharingSpec::all(), ..tiny_config() };
    let t = Trainer::new(config.clone(), data.clone()).unwrap();
    save_model(dir.path(), t.bundle(), &config).unwrap();
    let loaded = load_model(dir.path()).unwrap();
    assert_eq!(loaded.store().snapshot(), t.bundle().store().snapshot());
    assert_eq!(loaded.sharing(), SharingSpec::all());
    let forms: Vec<&str> = data[0].train[0].forms().collect();
    let p1 = t.bundle().predict(0, &forms, DecodeOptions::default()).unwrap();
    let p2 = loaded.predict(0, &forms, DecodeOptions::default()).unwrap();
    assert_eq!(p1.tree, p2.tree);

    let files = ModelFiles::new(dir.path());
    std::fs::write(&files.config, "sharing = \"none\"\nseed = 1\n[model]\n").unwrap();
    assert!(load_model(dir.path()).is_err());
}

#[test]
fn output_directory_tracks_the_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = vec![LanguageData::new("a", toy("a", 4, "t"), toy("a", 2, "d"))];
    let mut t = Trainer::new(tiny_config(), data).unwrap();
    t.set_output(dir.path());
    let out = t.train().unwrap();
    assert_eq!(out.state.best_checkpoint, Some(dir.path().join("params.ckpt")));
    assert!(load_model(dir.path()).is_ok());
}

#[test]
fn divergence_keeps_the_last_good_parameters() {
    let data = vec![LanguageData::new("a", toy("a", 4, "t"), vec![])];
    let mut t = Trainer::new(tiny_config(), data).unwrap();
    let id = t.bundle().store().id("a.parser.scorer.v").unwrap();
    t.bundle_mut().store_mut().get_mut(id).value.data_mut()[0] = f64::NAN;
    let before = Checkpoint::from_store(t.bundle().store(), Precision::F64, "");
    match t.run_epoch() {
        Err(TrainError::Diverged { epoch, last_good, .. }) => {
            assert_eq!(epoch, 1);
            assert_eq!(last_good.tensors.len(), before.tensors.len());
            assert_eq!(last_good.tensors[1], before.tensors[1]);
        }
        other => panic!("expected divergence, got {:?}", other.err()),
    }
}
