//! Experiment harnesses: held-out relation with case injection, k ablation,
//! novel relation combinations and revise ablation with the corrupted-LF
//! benchmark.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::lf::{execute, AnswerSet, LogicalForm, Skeleton};
use crate::memory::{Case, CaseMemory, NewCase, Provenance};
use crate::pipeline::{retrieval_recall, Flags, Metrics, MetricsSummary, Pipeline, PipelineResult};
use crate::retriever::{train_retriever, Encoder, EncoderConfig, TrainConfig, TrainItem};
use crate::reuse::question_tokens;
use crate::revise::{align, train_transe, ReviseMode, TransEConfig};
use crate::worldgen::{generate_dataset, generate_world, Dataset, DatasetExample, QuestionKind, SplitKind, TemplateConfig, World, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    HeldoutInjection,
    KAblation,
    NovelCombination,
    ReviseAblation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::HeldoutInjection,
        ExperimentKind::KAblation,
        ExperimentKind::NovelCombination,
        ExperimentKind::ReviseAblation,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::HeldoutInjection => "heldout_injection",
            ExperimentKind::KAblation => "k_ablation",
            ExperimentKind::NovelCombination => "novel_combination",
            ExperimentKind::ReviseAblation => "revise_ablation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub templates: TemplateConfig,
    pub dataset_seed: u64,
    pub encoder: EncoderConfig,
    pub retriever_training: TrainConfig,
    pub transe: TransEConfig,
    pub flags: Flags,
    pub heldout_relations: Vec<String>,
    pub inject_per_relation: usize,
    pub injection_strategy: InjectionStrategy,
    pub k_values: Vec<usize>,
    /// Upper bound on corrupted-LF benchmark items.
    pub corrupt_limit: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            templates: TemplateConfig::default(),
            dataset_seed: 1,
            encoder: EncoderConfig::default(),
            retriever_training: TrainConfig::default(),
            transe: TransEConfig::default(),
            flags: Flags::default(),
            heldout_relations: vec![
                "finance.currency.currency_code".into(),
                "film.film.genre".into(),
                "people.person.religion".into(),
            ],
            inject_per_relation: 5,
            injection_strategy: InjectionStrategy::Diverse,
            k_values: vec![0, 1, 10, 20],
            corrupt_limit: 400,
        }
    }
}

impl ExperimentConfig {
    /// The split an experiment kind runs on.
    pub fn split_for(&self, kind: ExperimentKind) -> SplitKind {
        match kind {
            ExperimentKind::HeldoutInjection => SplitKind::HeldoutRelation {
                relations: self.heldout_relations.clone(),
            },
            ExperimentKind::NovelCombination => SplitKind::NovelCombination,
            ExperimentKind::KAblation | ExperimentKind::ReviseAblation => SplitKind::Standard,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub retriever_epoch_loss: Vec<f64>,
    pub transe_epoch_loss: Vec<f64>,
    pub build_ms: f64,
}

/// Trains the retriever on `train`, fills the memory with it, trains TransE
/// on the incomplete KB and assembles a pipeline over that KB.
pub fn build_pipeline(world: &World, train: &[DatasetExample], config: &ExperimentConfig) -> Result<(Pipeline, BuildReport)> {
    let t0 = Instant::now();
    let mut encoder = Encoder::new(config.encoder.clone())?;
    let items: Vec<TrainItem> = train
        .iter()
        .map(|e| TrainItem {
            question: &e.question,
            mentions: &e.mentions,
            lf: &e.gold_lf,
        })
        .collect();
    let retriever = train_retriever(&mut encoder, &items, &config.retriever_training)?;
    let memory = CaseMemory::build(train.iter().map(train_case).collect(), &encoder)?;
    let (table, transe) = train_transe(&world.incomplete, &config.transe)?;
    let pipeline = Pipeline::new(world.incomplete.clone(), world.aliases.clone(), encoder, memory, Some(table))?;
    Ok((
        pipeline,
        BuildReport {
            retriever_epoch_loss: retriever.epoch_loss,
            transe_epoch_loss: transe.epoch_loss,
            build_ms: t0.elapsed().as_secs_f64() * 1e3,
        },
    ))
}

pub fn train_case(e: &DatasetExample) -> Case {
    Case {
        id: e.id.clone(),
        question: e.question.clone(),
        mentions: e.mentions.clone(),
        lf: e.gold_lf.clone(),
        provenance: Provenance::Train,
    }
}

/// Revised slots whose LF skeleton matches the pre-revision candidate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureCheck {
    pub revisions: usize,
    pub preserved: usize,
}

impl StructureCheck {
    pub fn of(results: &[PipelineResult]) -> Self {
        let mut check = StructureCheck::default();
        for r in results {
            for rev in &r.revisions {
                check.revisions += 1;
                if Skeleton::of(&rev.result.lf) == Skeleton::of(&r.candidates[rev.candidate].lf) {
                    check.preserved += 1;
                }
            }
        }
        check
    }

    pub fn merge(self, other: StructureCheck) -> Self {
        StructureCheck {
            revisions: self.revisions + other.revisions,
            preserved: self.preserved + other.preserved,
        }
    }

    pub fn holds(&self) -> bool {
        self.revisions == self.preserved
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedCase {
    pub id: String,
    pub source_example: String,
    pub relation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoForgetting {
    pub initial_questions: usize,
    /// Initial-set questions whose top-k retrieval contains no injected case.
    pub unaffected: usize,
    pub identical_log_lines: usize,
    pub unaffected_log_identical: bool,
    pub unaffected_metrics_identical: bool,
    pub before: MetricsSummary,
    pub after: MetricsSummary,
    pub initial_before: MetricsSummary,
    pub initial_after: MetricsSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutReport {
    pub relations: Vec<String>,
    pub flags: Flags,
    pub injected: Vec<InjectedCase>,
    pub gradient_steps: usize,
    pub injection_ms: f64,
    /// All held-out questions, before injection.
    pub heldout_before: MetricsSummary,
    /// Held-out questions not used for injection, before and after.
    pub remaining_before: MetricsSummary,
    pub remaining_after: MetricsSummary,
    pub per_relation_after: BTreeMap<String, MetricsSummary>,
    pub no_forgetting: NoForgetting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KAblationRow {
    pub k: usize,
    pub metrics: MetricsSummary,
    pub recall_at_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KAblationReport {
    pub flags: Flags,
    pub rows: Vec<KAblationRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectCountRow {
    pub kind: QuestionKind,
    pub total: usize,
    /// Correct answers keyed by `k`.
    pub correct: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NovelCombinationReport {
    pub flags: Flags,
    pub rows: Vec<KAblationRow>,
    pub correct_counts: Vec<CorrectCountRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptedItem {
    pub source_example: String,
    pub gold: LogicalForm,
    pub corrupted: LogicalForm,
    pub swapped_slots: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub backend: ReviseMode,
    pub beam: usize,
    pub recovered: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptedReport {
    pub items: usize,
    pub single_swaps: usize,
    pub double_swaps: usize,
    pub rows: Vec<RecoveryRow>,
}

impl CorruptedReport {
    pub fn rate(&self, backend: ReviseMode, beam: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.backend == backend && r.beam == beam)
            .map(|r| r.rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviseAblationRow {
    pub revise: ReviseMode,
    pub metrics: MetricsSummary,
    pub revised_predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviseAblationReport {
    pub flags: Flags,
    pub rows: Vec<ReviseAblationRow>,
    pub corrupted: CorruptedReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentResult {
    HeldoutInjection(HeldoutReport),
    KAblation(KAblationReport),
    NovelCombination(NovelCombinationReport),
    ReviseAblation(ReviseAblationReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub world_seed: u64,
    pub dataset_seed: u64,
    pub split: String,
    pub build: BuildReport,
    pub structure: StructureCheck,
    pub result: ExperimentResult,
}

/// A report plus its JSON-lines prediction log.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub log: Vec<String>,
}

#[derive(Serialize)]
struct LogEntry<'a> {
    run: &'a str,
    id: &'a str,
    #[serde(flatten)]
    result: &'a PipelineResult,
}

fn log_run(log: &mut Vec<String>, run: &str, examples: &[DatasetExample], results: &[PipelineResult]) {
    for (ex, r) in examples.iter().zip(results) {
        let entry = LogEntry {
            run,
            id: &ex.id,
            result: r,
        };
        log.push(serde_json::to_string(&entry).expect("log entry serializes"));
    }
}

fn score(examples: &[DatasetExample], results: &[PipelineResult]) -> Metrics {
    Metrics::compute(
        examples
            .iter()
            .zip(results)
            .map(|(ex, r)| (ex.id.as_str(), &r.answers, &ex.gold_answers)),
    )
}

/// Generates the world and split, builds the components and runs `kind`.
pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let world = generate_world(&config.world)?;
    let dataset = generate_dataset(&world, &config.templates, &config.split_for(kind), config.dataset_seed)?;
    run_experiment_on(kind, &world, &dataset, config)
}

/// Runs `kind` on an existing world and split.
pub fn run_experiment_on(kind: ExperimentKind, world: &World, dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let expected = config.split_for(kind);
    let matches = match (&expected, &dataset.spec.kind) {
        (SplitKind::HeldoutRelation { .. }, SplitKind::HeldoutRelation { .. }) => true,
        (a, b) => a == b,
    };
    if !matches {
        return Err(Error::SplitMismatch {
            expected: expected.name().into(),
            found: dataset.spec.kind.name().into(),
        });
    }
    let (pipeline, build) = build_pipeline(world, &dataset.train, config)?;
    let mut log = Vec::new();
    let mut structure = StructureCheck::default();
    let result = match kind {
        ExperimentKind::HeldoutInjection => {
            let SplitKind::HeldoutRelation { relations } = &dataset.spec.kind else {
                unreachable!("checked above")
            };
            ExperimentResult::HeldoutInjection(heldout_injection(pipeline, dataset, relations, config, &mut log, &mut structure)?)
        }
        ExperimentKind::KAblation => ExperimentResult::KAblation(k_ablation(&pipeline, dataset, config, &mut log, &mut structure)?),
        ExperimentKind::NovelCombination => {
            let (flags, rows, results) = k_rows(&pipeline, dataset, config, &[0, 20], "k", &mut log, &mut structure)?;
            let correct_counts = correct_count_table(&dataset.test, &rows, &results);
            ExperimentResult::NovelCombination(NovelCombinationReport {
                flags,
                rows,
                correct_counts,
            })
        }
        ExperimentKind::ReviseAblation => {
            ExperimentResult::ReviseAblation(revise_ablation(&pipeline, world, dataset, config, &mut log, &mut structure)?)
        }
    };
    Ok(ExperimentOutput {
        report: ExperimentReport {
            world_seed: world.config.seed,
            dataset_seed: config.dataset_seed,
            split: dataset.spec.kind.name().into(),
            build,
            structure,
            result,
        },
        log,
    })
}

/// Flags for the held-out experiment: neither revision nor the global
/// relation vocabulary may reach a relation that no case carries.
pub fn heldout_flags(flags: &Flags) -> Flags {
    let mut f = flags.clone();
    f.revise = ReviseMode::Off;
    f.generator.use_global_vocab = false;
    f
}

/// How held-out examples are picked for injection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionStrategy {
    /// Test order.
    First,
    /// Each pick adds the most content words not yet covered.
    #[default]
    Diverse,
}

/// Picks up to `n` examples per relation, alternating over question kinds.
pub fn injection_choice<'a>(
    heldout: &[&'a DatasetExample],
    relations: &[String],
    n: usize,
    strategy: InjectionStrategy,
) -> Vec<(&'a DatasetExample, String)> {
    let mut chosen = Vec::new();
    let mut used = BTreeSet::new();
    for r in relations {
        let mut by_kind: BTreeMap<QuestionKind, Vec<&'a DatasetExample>> = BTreeMap::new();
        for &ex in heldout {
            if ex.gold_lf.relations().contains(r.as_str()) && !used.contains(ex.id.as_str()) {
                by_kind.entry(ex.kind).or_default().push(ex);
            }
        }
        let mut queues: Vec<Vec<&'a DatasetExample>> = by_kind.into_values().collect();
        let mut covered: BTreeSet<String> = BTreeSet::new();
        let mut picked = 0;
        while picked < n && queues.iter().any(|q| !q.is_empty()) {
            for q in queues.iter_mut() {
                if picked == n || q.is_empty() {
                    continue;
                }
                let i = match strategy {
                    InjectionStrategy::First => 0,
                    InjectionStrategy::Diverse => {
                        let gain = |ex: &DatasetExample| {
                            question_tokens(&ex.question, &ex.mentions)
                                .into_iter()
                                .filter(|t| !covered.contains(t))
                                .collect::<BTreeSet<_>>()
                                .len()
                        };
                        // First maximum keeps ties in test order.
                        (0..q.len()).fold(0, |best, j| if gain(q[j]) > gain(q[best]) { j } else { best })
                    }
                };
                let ex = q.remove(i);
                covered.extend(question_tokens(&ex.question, &ex.mentions));
                used.insert(ex.id.as_str());
                chosen.push((ex, r.clone()));
                picked += 1;
            }
        }
    }
    chosen
}

fn heldout_injection(
    mut pipeline: Pipeline,
    dataset: &Dataset,
    relations: &[String],
    config: &ExperimentConfig,
    log: &mut Vec<String>,
    structure: &mut StructureCheck,
) -> Result<HeldoutReport> {
    let flags = heldout_flags(&config.flags);
    let is_heldout = |ex: &DatasetExample| relations.iter().any(|r| ex.gold_lf.relations().contains(r.as_str()));
    let test = &dataset.test;

    let before = pipeline.run(test, &flags, false)?;
    log_run(log, "before_injection", test, &before);
    *structure = structure.merge(StructureCheck::of(&before));
    let before_metrics = score(test, &before);

    let heldout: Vec<&DatasetExample> = test.iter().filter(|e| is_heldout(e)).collect();
    let heldout_ids: BTreeSet<&str> = heldout.iter().map(|e| e.id.as_str()).collect();
    let chosen = injection_choice(&heldout, relations, config.inject_per_relation, config.injection_strategy);

    let t = Instant::now();
    let mut injected = Vec::new();
    for (ex, relation) in &chosen {
        let lf_text = ex.gold_lf.print();
        let id = pipeline.memory.inject(
            NewCase {
                id: None,
                question: &ex.question,
                lf_text: &lf_text,
                mentions: ex.mentions.clone(),
                provenance: Provenance::Injected {
                    author: "heldout_injection".into(),
                    timestamp: 0,
                },
            },
            &pipeline.encoder,
        )?;
        injected.push(InjectedCase {
            id,
            source_example: ex.id.clone(),
            relation: relation.clone(),
        });
    }
    let injection_ms = t.elapsed().as_secs_f64() * 1e3;

    let after = pipeline.run(test, &flags, false)?;
    log_run(log, "after_injection", test, &after);
    *structure = structure.merge(StructureCheck::of(&after));
    let after_metrics = score(test, &after);

    let used: BTreeSet<&str> = chosen.iter().map(|(e, _)| e.id.as_str()).collect();
    let remaining: BTreeSet<&str> = heldout_ids.iter().copied().filter(|id| !used.contains(id)).collect();
    let mut per_relation_after = BTreeMap::new();
    for r in relations {
        let ids: BTreeSet<&str> = heldout
            .iter()
            .filter(|e| remaining.contains(e.id.as_str()) && e.gold_lf.relations().contains(r.as_str()))
            .map(|e| e.id.as_str())
            .collect();
        per_relation_after.insert(r.clone(), after_metrics.subset(&ids).summary());
    }

    let injected_ids: BTreeSet<&str> = injected.iter().map(|c| c.id.as_str()).collect();
    let initial: Vec<usize> = (0..test.len()).filter(|&i| !heldout_ids.contains(test[i].id.as_str())).collect();
    let unaffected: Vec<usize> = initial
        .iter()
        .copied()
        .filter(|&i| after[i].retrieved.iter().all(|c| !injected_ids.contains(c.id.as_str())))
        .collect();
    let identical = unaffected
        .iter()
        .filter(|&&i| before[i].log_line() == after[i].log_line())
        .count();
    let unaffected_ids: BTreeSet<&str> = unaffected.iter().map(|&i| test[i].id.as_str()).collect();
    let initial_ids: BTreeSet<&str> = initial.iter().map(|&i| test[i].id.as_str()).collect();
    let (mb, ma) = (before_metrics.subset(&unaffected_ids), after_metrics.subset(&unaffected_ids));
    let bits = |m: &MetricsSummary| [m.exact_match_accuracy, m.precision, m.recall, m.f1].map(f64::to_bits);
    let before_log: String = unaffected.iter().map(|&i| before[i].log_line() + "\n").collect();
    let after_log: String = unaffected.iter().map(|&i| after[i].log_line() + "\n").collect();

    Ok(HeldoutReport {
        relations: relations.to_vec(),
        flags,
        injected,
        gradient_steps: 0,
        injection_ms,
        heldout_before: before_metrics.subset(&heldout_ids).summary(),
        remaining_before: before_metrics.subset(&remaining).summary(),
        remaining_after: after_metrics.subset(&remaining).summary(),
        per_relation_after,
        no_forgetting: NoForgetting {
            initial_questions: initial.len(),
            unaffected: unaffected.len(),
            identical_log_lines: identical,
            unaffected_log_identical: before_log.as_bytes() == after_log.as_bytes(),
            unaffected_metrics_identical: bits(&mb.summary()) == bits(&ma.summary()),
            before: mb.summary(),
            after: ma.summary(),
            initial_before: before_metrics.subset(&initial_ids).summary(),
            initial_after: after_metrics.subset(&initial_ids).summary(),
        },
    })
}

/// Flags for the k sweeps: the global relation vocabulary is on so that
/// k = 0 still produces candidates.
pub fn sweep_flags(flags: &Flags) -> Flags {
    let mut f = flags.clone();
    f.generator.use_global_vocab = true;
    f
}

type KRows = (Flags, Vec<KAblationRow>, Vec<Metrics>);

fn k_rows(
    pipeline: &Pipeline,
    dataset: &Dataset,
    config: &ExperimentConfig,
    ks: &[usize],
    run_prefix: &str,
    log: &mut Vec<String>,
    structure: &mut StructureCheck,
) -> Result<KRows> {
    let flags = sweep_flags(&config.flags);
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &k in ks {
        let f = Flags { k, ..flags.clone() };
        let results = pipeline.run(&dataset.test, &f, false)?;
        log_run(log, &format!("{run_prefix}={k}"), &dataset.test, &results);
        *structure = structure.merge(StructureCheck::of(&results));
        let metrics = score(&dataset.test, &results);
        rows.push(KAblationRow {
            k,
            metrics: metrics.summary(),
            recall_at_k: retrieval_recall(&pipeline.memory, &pipeline.encoder, &dataset.test, k)?,
        });
        all.push(metrics);
    }
    Ok((flags, rows, all))
}

fn k_ablation(
    pipeline: &Pipeline,
    dataset: &Dataset,
    config: &ExperimentConfig,
    log: &mut Vec<String>,
    structure: &mut StructureCheck,
) -> Result<KAblationReport> {
    let (flags, rows, _) = k_rows(pipeline, dataset, config, &config.k_values, "k", log, structure)?;
    Ok(KAblationReport { flags, rows })
}

fn correct_count_table(test: &[DatasetExample], rows: &[KAblationRow], metrics: &[Metrics]) -> Vec<CorrectCountRow> {
    let kinds: BTreeMap<&str, QuestionKind> = test.iter().map(|e| (e.id.as_str(), e.kind)).collect();
    QuestionKind::ALL
        .into_iter()
        .map(|kind| {
            let ids: BTreeSet<&str> = kinds.iter().filter(|(_, k)| **k == kind).map(|(id, _)| *id).collect();
            CorrectCountRow {
                kind,
                total: ids.len(),
                correct: rows.iter().zip(metrics).map(|(r, m)| (r.k, m.subset(&ids).correct())).collect(),
            }
        })
        .collect()
}

fn revise_ablation(
    pipeline: &Pipeline,
    world: &World,
    dataset: &Dataset,
    config: &ExperimentConfig,
    log: &mut Vec<String>,
    structure: &mut StructureCheck,
) -> Result<ReviseAblationReport> {
    let mut rows = Vec::new();
    for mode in [ReviseMode::Off, ReviseMode::Surface, ReviseMode::Transe] {
        let flags = Flags {
            revise: mode,
            ..config.flags.clone()
        };
        let results = pipeline.run(&dataset.test, &flags, false)?;
        log_run(log, &format!("revise={}", mode.as_str()), &dataset.test, &results);
        *structure = structure.merge(StructureCheck::of(&results));
        rows.push(ReviseAblationRow {
            revise: mode,
            metrics: score(&dataset.test, &results).summary(),
            revised_predictions: results
                .iter()
                .filter(|r| r.chosen.as_ref().is_some_and(|c| c.revised))
                .count(),
        });
    }
    let items = corrupted_benchmark(world, &pipeline.kb, dataset.all(), config.corrupt_limit)?;
    let corrupted = recovery(pipeline, &items, config.flags.revise_beam)?;
    Ok(ReviseAblationReport {
        flags: config.flags.clone(),
        rows,
        corrupted,
    })
}

/// Planted synonym partner of each relation, in both directions.
pub fn synonym_partners(world: &World) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for r in &world.config.relations {
        if let Some(s) = &r.synonym_of {
            map.insert(r.name.clone(), s.clone());
            map.insert(s.clone(), r.name.clone());
        }
    }
    map
}

/// Gold LFs with their first one or two synonym-bearing relations swapped to
/// the planted partner. Only items whose gold LF answers on `kb` and whose
/// corrupted LF answers nothing there are kept.
pub fn corrupted_benchmark<'a>(
    world: &World,
    kb: &KnowledgeBase,
    examples: impl IntoIterator<Item = &'a DatasetExample>,
    limit: usize,
) -> Result<Vec<CorruptedItem>> {
    let partners = synonym_partners(world);
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for ex in examples {
        if items.len() >= limit {
            break;
        }
        let slots: Vec<usize> = ex
            .gold_lf
            .patterns
            .iter()
            .enumerate()
            .filter(|(_, p)| partners.get(&p.relation).is_some_and(|s| kb.relation(s).is_some()))
            .map(|(i, _)| i)
            .take(2)
            .collect();
        if slots.is_empty() || !seen.insert(ex.gold_lf.print()) {
            continue;
        }
        let mut corrupted = ex.gold_lf.clone();
        for &i in &slots {
            corrupted = corrupted.with_relation(i, &partners[&ex.gold_lf.patterns[i].relation]);
        }
        if execute(&ex.gold_lf, kb)?.is_empty() || !execute(&corrupted, kb)?.is_empty() {
            continue;
        }
        items.push(CorruptedItem {
            source_example: ex.id.clone(),
            gold: ex.gold_lf.clone(),
            corrupted,
            swapped_slots: slots,
        });
    }
    Ok(items)
}

/// Whether `lf` answers nonempty and like the gold LF on `kb`.
fn gold_equivalent(answers: &AnswerSet, gold: &AnswerSet) -> bool {
    !answers.is_empty() && answers == gold
}

/// Recovery rates of each backend at the configured beam and greedily.
pub fn recovery(pipeline: &Pipeline, items: &[CorruptedItem], beam: usize) -> Result<CorruptedReport> {
    let golds: Vec<AnswerSet> = items.iter().map(|it| execute(&it.gold, &pipeline.kb)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for mode in [ReviseMode::Transe, ReviseMode::Surface, ReviseMode::Off] {
        let sim = pipeline.similarity(mode)?;
        let beams: &[usize] = if mode == ReviseMode::Off { &[beam] } else { &[beam, 1] };
        for &b in beams {
            let mut recovered = 0;
            for (it, gold) in items.iter().zip(&golds) {
                let answers = match &sim {
                    Some(sim) => {
                        let r = align(&it.corrupted, &pipeline.kb, sim, b)?;
                        if r.executed {
                            r.answers
                        } else {
                            AnswerSet::new()
                        }
                    }
                    None => execute(&it.corrupted, &pipeline.kb)?,
                };
                if gold_equivalent(&answers, gold) {
                    recovered += 1;
                }
            }
            rows.push(RecoveryRow {
                backend: mode,
                beam: b,
                recovered,
                rate: if items.is_empty() { 0.0 } else { recovered as f64 / items.len() as f64 },
            });
        }
    }
    Ok(CorruptedReport {
        items: items.len(),
        single_swaps: items.iter().filter(|i| i.swapped_slots.len() == 1).count(),
        double_swaps: items.iter().filter(|i| i.swapped_slots.len() == 2).count(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(ExperimentKind::parse("nope"), None);
    }

    #[test]
    fn split_kinds() {
        let c = ExperimentConfig::default();
        assert_eq!(c.split_for(ExperimentKind::KAblation), SplitKind::Standard);
        assert_eq!(c.split_for(ExperimentKind::NovelCombination), SplitKind::NovelCombination);
        assert!(matches!(
            c.split_for(ExperimentKind::HeldoutInjection),
            SplitKind::HeldoutRelation { .. }
        ));
    }

    #[test]
    fn heldout_flags_close_every_path_to_unseen_relations() {
        let f = heldout_flags(&Flags::default());
        assert_eq!(f.revise, ReviseMode::Off);
        assert!(!f.generator.use_global_vocab);
    }
}
