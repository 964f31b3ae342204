use cbrqa::experiments::{build_pipeline, run_experiment_on, ExperimentConfig, ExperimentKind, StructureCheck};
use cbrqa::pipeline::{evaluate_gold, Flags, Pipeline};
use cbrqa::revise::ReviseMode;
use cbrqa::worldgen::{generate_dataset, generate_world, Dataset, SplitKind, TemplateConfig, World, WorldConfig};
use cbrqa::Error;

fn config() -> ExperimentConfig {
    ExperimentConfig {
        world: WorldConfig {
            n_entities: 700,
            ..WorldConfig::with_seed(5)
        },
        templates: TemplateConfig {
            n_train: 400,
            n_valid: 50,
            n_test: 120,
            ..TemplateConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn setup() -> (World, Dataset, Pipeline) {
    let cfg = config();
    let world = generate_world(&cfg.world).unwrap();
    let data = generate_dataset(&world, &cfg.templates, &SplitKind::Standard, cfg.dataset_seed).unwrap();
    let (pipeline, _) = build_pipeline(&world, &data.train, &cfg).unwrap();
    (world, data, pipeline)
}

#[test]
fn prediction_logs_are_reproducible() {
    let (world, data, pipeline) = setup();
    let flags = Flags::default();
    let a: Vec<String> = pipeline.run(&data.test, &flags, true).unwrap().iter().map(|r| r.log_line()).collect();
    let (rebuilt, _) = build_pipeline(&world, &data.train, &config()).unwrap();
    let b: Vec<String> = rebuilt.run(&data.test, &flags, true).unwrap().iter().map(|r| r.log_line()).collect();
    assert_eq!(a, b);
    let single = pipeline
        .answer_with_mentions(&data.test[3].question, data.test[3].mentions.clone(), &flags)
        .unwrap();
    assert_eq!(single.log_line(), a[3]);
}

#[test]
fn gold_lfs_answer_perfectly_and_pipeline_beats_chance() {
    let (_, data, pipeline) = setup();
    assert_eq!(evaluate_gold(&pipeline.kb, &data.test).unwrap().exact_match_accuracy, 1.0);
    let (metrics, results) = pipeline.evaluate(&data.test, &Flags::default()).unwrap();
    assert_eq!(metrics.n, data.test.len());
    assert!(metrics.exact_match_accuracy > 0.5, "{metrics:?}");
    assert!(StructureCheck::of(&results).holds());
}

#[test]
fn no_cases_without_global_vocabulary_is_tagged() {
    let (_, data, pipeline) = setup();
    let mut flags = Flags::default();
    flags.k = 0;
    let r = pipeline.answer_with_mentions(&data.test[0].question, data.test[0].mentions.clone(), &flags).unwrap();
    assert_eq!(r.error.as_deref(), Some(Error::NoCasesToReuse.to_string().as_str()));
    assert!(r.answers.is_empty() && r.chosen.is_none());

    flags.generator.use_global_vocab = true;
    let r = pipeline.answer_with_mentions(&data.test[0].question, data.test[0].mentions.clone(), &flags).unwrap();
    assert!(r.error.is_none());
    assert!(r.candidates.iter().all(|c| c.lf.patterns.len() == 1));
}

#[test]
fn result_json_uses_documented_keys() {
    let (_, data, pipeline) = setup();
    let r = pipeline.answer("what is the capital of nowhere in particular", &Flags::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.log_line()).unwrap();
    for key in ["question", "mentions", "retrieved", "serialized_input", "candidates", "chosen", "revisions", "answers", "selection_rule"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let r = pipeline.answer(&data.test[0].question, &Flags::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.log_line()).unwrap();
    assert!(v["retrieved"][0]["sparql"].is_string());
    assert!(v.get("timings").is_none());
}

#[test]
fn transe_without_table_is_a_version_error() {
    let (world, _, pipeline) = setup();
    let bare = Pipeline::new(
        world.incomplete.clone(),
        world.aliases.clone(),
        pipeline.encoder.clone(),
        pipeline.memory.clone(),
        None,
    )
    .unwrap();
    assert!(matches!(bare.similarity(ReviseMode::Transe), Err(Error::VersionMismatch(_))));
    assert!(bare.similarity(ReviseMode::Off).unwrap().is_none());
}

#[test]
fn experiment_on_wrong_split_is_rejected() {
    let cfg = config();
    let world = generate_world(&cfg.world).unwrap();
    let data = generate_dataset(&world, &cfg.templates, &SplitKind::Standard, 1).unwrap();
    let err = run_experiment_on(ExperimentKind::NovelCombination, &world, &data, &cfg).unwrap_err();
    assert!(matches!(err, Error::SplitMismatch { .. }), "{err}");
}
