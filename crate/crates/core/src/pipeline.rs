//! End-to-end answering: link, retrieve, reuse, revise, execute. Also the
//! evaluation metrics.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::lf::{execute, AnswerSet, LogicalForm};
use crate::linker::{AliasTable, Mention};
use crate::memory::CaseMemory;
use crate::retriever::Encoder;
use crate::reuse::{serialize_input, Candidate, Generator, GeneratorConfig};
use crate::revise::{align, AlignmentResult, EmbeddingTable, RelationSimilarity, ReviseMode};
use crate::worldgen::DatasetExample;

/// When revision is attempted during candidate selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisePolicy {
    /// Each candidate in beam order is executed and, if empty, revised before
    /// moving to the next one.
    BeamOrder,
    /// All candidates are executed first; revision is tried in beam order only
    /// when none of them answers directly.
    AfterDirect,
}

impl RevisePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            RevisePolicy::BeamOrder => "beam_order",
            RevisePolicy::AfterDirect => "after_direct",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub k: usize,
    pub generator: GeneratorConfig,
    pub revise: ReviseMode,
    pub revise_beam: usize,
    pub revise_policy: RevisePolicy,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            k: 20,
            generator: GeneratorConfig::default(),
            revise: ReviseMode::Transe,
            revise_beam: 5,
            revise_policy: RevisePolicy::BeamOrder,
        }
    }
}

/// The loaded components. The KB is the one queries execute against.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub kb: KnowledgeBase,
    pub aliases: AliasTable,
    pub encoder: Encoder,
    pub memory: CaseMemory,
    pub generator: Generator,
    pub transe: Option<EmbeddingTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCase {
    pub id: String,
    pub question: String,
    #[serde(rename = "sparql")]
    pub lf: LogicalForm,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionRecord {
    /// Index into the candidate list.
    pub candidate: usize,
    pub result: AlignmentResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub candidate: usize,
    #[serde(rename = "sparql")]
    pub lf: LogicalForm,
    pub revised: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub link_ms: f64,
    pub retrieve_ms: f64,
    pub generate_ms: f64,
    pub revise_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub question: String,
    pub mentions: Vec<Mention>,
    pub retrieved: Vec<RetrievedCase>,
    pub serialized_input: String,
    pub candidates: Vec<Candidate>,
    pub chosen: Option<Chosen>,
    pub revisions: Vec<RevisionRecord>,
    pub answers: AnswerSet,
    pub selection_rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall-clock only; left out of prediction logs so they stay reproducible.
    #[serde(skip)]
    pub timings: StageTimings,
}

impl PipelineResult {
    /// One JSON line for the prediction log.
    pub fn log_line(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Pipeline {
    pub fn new(
        kb: KnowledgeBase,
        aliases: AliasTable,
        encoder: Encoder,
        memory: CaseMemory,
        transe: Option<EmbeddingTable>,
    ) -> Result<Self> {
        memory.check_encoder(&encoder)?;
        if let Some(t) = &transe {
            RelationSimilarity::transe(&kb, t)?;
        }
        let generator = Generator::new(kb.relation_names());
        Ok(Pipeline {
            kb,
            aliases,
            encoder,
            memory,
            generator,
            transe,
        })
    }

    pub fn similarity(&self, mode: ReviseMode) -> Result<Option<RelationSimilarity<'_>>> {
        match mode {
            ReviseMode::Off => Ok(None),
            ReviseMode::Surface => Ok(Some(RelationSimilarity::surface(&self.kb))),
            ReviseMode::Transe => match &self.transe {
                Some(t) => RelationSimilarity::transe(&self.kb, t).map(Some),
                None => Err(Error::VersionMismatch("revise=transe needs TransE embeddings".into())),
            },
        }
    }

    /// Links mentions with the alias table, then answers.
    pub fn answer(&self, question: &str, flags: &Flags) -> Result<PipelineResult> {
        let t0 = Instant::now();
        let mentions = self.aliases.link(question);
        let link_ms = ms(t0);
        let mut result = self.answer_with_mentions(question, mentions, flags)?;
        result.timings.link_ms = link_ms;
        result.timings.total_ms = ms(t0);
        Ok(result)
    }

    pub fn answer_with_mentions(&self, question: &str, mentions: Vec<Mention>, flags: &Flags) -> Result<PipelineResult> {
        let similarity = self.similarity(flags.revise)?;
        self.answer_inner(question, mentions, flags, similarity.as_ref())
    }

    fn answer_inner(
        &self,
        question: &str,
        mentions: Vec<Mention>,
        flags: &Flags,
        similarity: Option<&RelationSimilarity>,
    ) -> Result<PipelineResult> {
        let mut timings = StageTimings::default();
        let t = Instant::now();
        let hits = self.memory.retrieve(&self.encoder, question, &mentions, flags.k, None)?;
        timings.retrieve_ms = ms(t);
        let case_refs: Vec<_> = hits.iter().map(|(c, _)| *c).collect();
        let serialized_input = serialize_input(question, &mentions, &case_refs);
        let retrieved = hits
            .iter()
            .map(|(c, s)| RetrievedCase {
                id: c.id.clone(),
                question: c.question.clone(),
                lf: c.lf.clone(),
                similarity: *s,
            })
            .collect();

        let t = Instant::now();
        let generated = self.generator.generate(question, &mentions, &hits, &flags.generator);
        timings.generate_ms = ms(t);
        let mut result = PipelineResult {
            question: question.to_string(),
            mentions,
            retrieved,
            serialized_input,
            candidates: Vec::new(),
            chosen: None,
            revisions: Vec::new(),
            answers: AnswerSet::new(),
            selection_rule: format!(
                "first nonempty in beam order; revise={} policy={}",
                flags.revise.as_str(),
                flags.revise_policy.as_str()
            ),
            error: None,
            timings,
        };
        let candidates = match generated {
            Ok(c) => c,
            Err(Error::NoCasesToReuse) => {
                result.error = Some(Error::NoCasesToReuse.to_string());
                return Ok(result);
            }
            Err(e) => return Err(e),
        };

        let t = Instant::now();
        let direct: Vec<AnswerSet> = candidates
            .iter()
            .map(|c| execute(&c.lf, &self.kb).unwrap_or_default())
            .collect();
        let mut chosen: Option<(Chosen, AnswerSet)> = None;
        let revise = |i: usize, revisions: &mut Vec<RevisionRecord>| -> Result<Option<(Chosen, AnswerSet)>> {
            let Some(sim) = similarity else { return Ok(None) };
            let r = align(&candidates[i].lf, &self.kb, sim, flags.revise_beam)?;
            let out = r.executed.then(|| {
                (
                    Chosen {
                        candidate: i,
                        lf: r.lf.clone(),
                        revised: r.changed(),
                    },
                    r.answers.clone(),
                )
            });
            revisions.push(RevisionRecord { candidate: i, result: r });
            Ok(out)
        };
        let direct_hit = |i: usize| -> Option<(Chosen, AnswerSet)> {
            (!direct[i].is_empty()).then(|| {
                (
                    Chosen {
                        candidate: i,
                        lf: candidates[i].lf.clone(),
                        revised: false,
                    },
                    direct[i].clone(),
                )
            })
        };
        match flags.revise_policy {
            RevisePolicy::BeamOrder => {
                for i in 0..candidates.len() {
                    chosen = match direct_hit(i) {
                        Some(hit) => Some(hit),
                        None => revise(i, &mut result.revisions)?,
                    };
                    if chosen.is_some() {
                        break;
                    }
                }
            }
            RevisePolicy::AfterDirect => {
                chosen = (0..candidates.len()).find_map(direct_hit);
                if chosen.is_none() {
                    for i in 0..candidates.len() {
                        chosen = revise(i, &mut result.revisions)?;
                        if chosen.is_some() {
                            break;
                        }
                    }
                }
            }
        }
        result.timings.revise_ms = ms(t);
        let (chosen, answers) = match chosen {
            Some(c) => c,
            None => (
                Chosen {
                    candidate: 0,
                    lf: candidates[0].lf.clone(),
                    revised: false,
                },
                direct[0].clone(),
            ),
        };
        result.chosen = Some(chosen);
        result.answers = answers;
        result.candidates = candidates;
        Ok(result)
    }

    /// Answers every example with its gold mentions when `gold_mentions` is
    /// set, otherwise with linked ones. Work is spread over threads; results
    /// keep the input order.
    pub fn run(&self, examples: &[DatasetExample], flags: &Flags, gold_mentions: bool) -> Result<Vec<PipelineResult>> {
        let similarity = self.similarity(flags.revise)?;
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
        let chunk = examples.len().div_ceil(threads.max(1)).max(1);
        let parts: Vec<Result<Vec<PipelineResult>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = examples
                .chunks(chunk)
                .map(|part| {
                    let similarity = similarity.as_ref();
                    scope.spawn(move || {
                        part.iter()
                            .map(|ex| {
                                let t0 = Instant::now();
                                let mentions = if gold_mentions {
                                    ex.mentions.clone()
                                } else {
                                    self.aliases.link(&ex.question)
                                };
                                let link_ms = ms(t0);
                                let mut r = self.answer_inner(&ex.question, mentions, flags, similarity)?;
                                r.timings.link_ms = link_ms;
                                r.timings.total_ms = ms(t0);
                                Ok(r)
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut out = Vec::with_capacity(examples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Runs and scores a split.
    pub fn evaluate(&self, examples: &[DatasetExample], flags: &Flags) -> Result<(Metrics, Vec<PipelineResult>)> {
        let results = self.run(examples, flags, false)?;
        let metrics = Metrics::compute(
            examples
                .iter()
                .zip(&results)
                .map(|(ex, r)| (ex.id.as_str(), &r.answers, &ex.gold_answers)),
        );
        Ok((metrics, results))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub exact_match: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ExampleScore {
    pub fn new(id: &str, predicted: &AnswerSet, gold: &AnswerSet) -> Self {
        let hit = predicted.intersection_len(gold) as f64;
        let precision = if predicted.is_empty() { 0.0 } else { hit / predicted.len() as f64 };
        let recall = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ExampleScore {
            id: id.to_string(),
            exact_match: predicted == gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub exact_match_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_example: Vec<ExampleScore>,
}

/// Aggregate scores without the per-example records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub exact_match_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            n: self.n,
            exact_match_accuracy: self.exact_match_accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }

    pub fn correct(&self) -> usize {
        self.per_example.iter().filter(|s| s.exact_match).count()
    }

    /// Macro-averaged scores over `(id, predicted, gold)` triples.
    pub fn compute<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a AnswerSet, &'a AnswerSet)>,
    {
        Self::from_scores(items.into_iter().map(|(id, p, g)| ExampleScore::new(id, p, g)).collect())
    }

    pub fn from_scores(per_example: Vec<ExampleScore>) -> Self {
        let n = per_example.len();
        let mean = |f: &dyn Fn(&ExampleScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_example.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Metrics {
            n,
            exact_match_accuracy: mean(&|s| f64::from(u8::from(s.exact_match))),
            precision: mean(&|s| s.precision),
            recall: mean(&|s| s.recall),
            f1: mean(&|s| s.f1),
            per_example,
        }
    }

    /// Metrics restricted to the given example ids.
    pub fn subset(&self, ids: &BTreeSet<&str>) -> Metrics {
        Self::from_scores(
            self.per_example
                .iter()
                .filter(|s| ids.contains(s.id.as_str()))
                .cloned()
                .collect(),
        )
    }
}

/// Mean fraction of gold-LF relations covered by the union of the top-`k`
/// retrieved cases' relations.
pub fn retrieval_recall(
    memory: &CaseMemory,
    encoder: &Encoder,
    examples: &[DatasetExample],
    k: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let hits = memory.retrieve(encoder, &ex.question, &ex.mentions, k, Some(&ex.id))?;
        let covered: BTreeSet<&str> = hits.iter().flat_map(|(c, _)| c.lf.relations()).collect();
        let gold = ex.gold_lf.relations();
        if !gold.is_empty() {
            total += gold.iter().filter(|r| covered.contains(*r)).count() as f64 / gold.len() as f64;
        }
    }
    Ok(total / examples.len() as f64)
}

/// Executes gold LFs directly; a harness sanity check.
pub fn evaluate_gold(kb: &KnowledgeBase, examples: &[DatasetExample]) -> Result<Metrics> {
    let predicted: Vec<AnswerSet> = examples
        .iter()
        .map(|ex| execute(&ex.gold_lf, kb))
        .collect::<Result<_>>()?;
    Ok(Metrics::compute(
        examples
            .iter()
            .zip(&predicted)
            .map(|(ex, p)| (ex.id.as_str(), p, &ex.gold_answers)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Value;

    fn set(xs: &[&str]) -> AnswerSet {
        xs.iter().map(|x| Value::Entity(x.to_string())).collect()
    }

    #[test]
    fn metric_formulas() {
        let s = ExampleScore::new("a", &set(&["a", "b"]), &set(&["a", "b"]));
        assert!(s.exact_match && s.precision == 1.0 && s.recall == 1.0 && s.f1 == 1.0);
        let s = ExampleScore::new("b", &set(&["a"]), &set(&["a", "b"]));
        assert!(!s.exact_match);
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        let s = ExampleScore::new("c", &set(&[]), &set(&["a"]));
        assert_eq!((s.exact_match, s.precision, s.recall, s.f1), (false, 0.0, 0.0, 0.0));
    }

    #[test]
    fn macro_average() {
        let (g, p1, p2) = (set(&["a", "b"]), set(&["a", "b"]), set(&[]));
        let m = Metrics::compute([("x", &p1, &g), ("y", &p2, &g)]);
        assert_eq!(m.n, 2);
        assert_eq!(m.exact_match_accuracy, 0.5);
        assert_eq!(m.f1, 0.5);
        let only = m.subset(&["y"].into_iter().collect());
        assert_eq!(only.exact_match_accuracy, 0.0);
    }
}
