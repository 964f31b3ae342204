//! Compositional reuse generator: builds candidate logical forms from the
//! skeletons and relations of retrieved cases.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::{self, LogicalForm, Skeleton};
use crate::linker::Mention;
use crate::memory::Case;
use crate::text::{cosine, fold_token, is_stopword, word_tokens, RelationLexicon};

pub const SEP: &str = "[SEP]";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub beam: usize,
    /// Weight of lexical relation/question similarity.
    pub alpha: f64,
    /// Weight of case support.
    pub beta: f64,
    /// Additive score for relations that come only from the global vocabulary.
    pub gamma_oov: f64,
    pub use_global_vocab: bool,
    /// Softmax temperature applied to retrieval similarities.
    pub temperature: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            beam: 5,
            alpha: 1.0,
            beta: 1.0,
            gamma_oov: -2.0,
            use_global_vocab: false,
            temperature: 0.02,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidConfig("beam must be at least 1".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma_oov > 0.0 {
            return Err(Error::InvalidConfig("need alpha, beta >= 0 and gamma_oov <= 0".into()));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Where a slot's relation came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSource {
    Case(String),
    GlobalVocab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "sparql")]
    pub lf: LogicalForm,
    pub score: f64,
    /// One entry per slot.
    pub support: Vec<SlotSource>,
}

/// The question with each mention followed by its entity id, then every case
/// question (augmented the same way) and its LF, joined by `[SEP]`.
pub fn serialize_input(question: &str, mentions: &[Mention], cases: &[&Case]) -> String {
    let mut parts = vec![augment(question, mentions)];
    for case in cases {
        parts.push(augment(&case.question, &case.mentions));
        parts.push(case.lf.to_string());
    }
    parts.join(&format!(" {SEP} "))
}

fn augment(question: &str, mentions: &[Mention]) -> String {
    let mut ends: Vec<(usize, &str)> = mentions.iter().map(|m| (m.span.1, m.entity.as_str())).collect();
    ends.sort();
    let mut out = String::with_capacity(question.len() + 16 * ends.len());
    let mut next = ends.iter().peekable();
    for (i, c) in question.chars().enumerate() {
        while let Some((_, id)) = next.next_if(|(end, _)| *end == i) {
            out.push(' ');
            out.push_str(id);
        }
        out.push(c);
    }
    for (_, id) in next {
        out.push(' ');
        out.push_str(id);
    }
    out
}

/// Query entity ids in order of first appearance, without repeats.
pub fn anchor_entities(mentions: &[Mention]) -> Vec<&str> {
    let mut sorted: Vec<&Mention> = mentions.iter().collect();
    sorted.sort_by_key(|m| m.span);
    let mut seen = BTreeSet::new();
    sorted
        .into_iter()
        .filter(|m| seen.insert(m.entity.as_str()))
        .map(|m| m.entity.as_str())
        .collect()
}

/// Content tokens of the question outside entity mentions, plural-folded.
pub fn question_tokens(question: &str, mentions: &[Mention]) -> Vec<String> {
    word_tokens(question)
        .into_iter()
        .filter(|t| !mentions.iter().any(|m| t.start < m.span.1 && m.span.0 < t.end))
        .filter(|t| !is_stopword(&t.text))
        .map(|t| fold_token(&t.text))
        .collect()
}

/// Stateless apart from the relation vocabulary and its tf-idf statistics.
#[derive(Clone, Debug)]
pub struct Generator {
    vocab: Vec<String>,
    lexicon: RelationLexicon,
}

struct Scored<'a> {
    skeleton: &'a Skeleton,
    score: f64,
    /// Per slot, candidate relations sorted by descending score.
    slots: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone)]
struct Partial {
    skeleton: usize,
    relations: Vec<usize>,
    prefix: f64,
    bound: f64,
}

impl Generator {
    pub fn new<S: AsRef<str>>(vocab: &[S]) -> Self {
        let mut vocab: Vec<String> = vocab.iter().map(|s| s.as_ref().to_string()).collect();
        vocab.sort();
        vocab.dedup();
        let lexicon = RelationLexicon::new(vocab.iter().map(String::as_str));
        Generator { vocab, lexicon }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn lexicon(&self) -> &RelationLexicon {
        &self.lexicon
    }

    /// Lexical similarity of a relation to the question tokens.
    pub fn lexsim(&self, relation: &str, question_tokens: &[String]) -> f64 {
        cosine(
            &self.lexicon.relation_vector(relation),
            &self.lexicon.vector(question_tokens),
        )
    }

    /// Candidates in descending score order, at most `config.beam` of them.
    pub fn generate(
        &self,
        question: &str,
        mentions: &[Mention],
        cases: &[(&Case, f64)],
        config: &GeneratorConfig,
    ) -> Result<Vec<Candidate>> {
        self.generate_with_beam(question, mentions, cases, config, config.beam)
    }

    /// Every candidate over the hypothesis space, fully sorted.
    pub fn enumerate(
        &self,
        question: &str,
        mentions: &[Mention],
        cases: &[(&Case, f64)],
        config: &GeneratorConfig,
    ) -> Result<Vec<Candidate>> {
        self.generate_with_beam(question, mentions, cases, config, usize::MAX)
    }

    fn generate_with_beam(
        &self,
        question: &str,
        mentions: &[Mention],
        cases: &[(&Case, f64)],
        config: &GeneratorConfig,
        beam: usize,
    ) -> Result<Vec<Candidate>> {
        config.validate()?;
        let weights = softmax(cases.iter().map(|(_, s)| *s), config.temperature);
        let anchors = anchor_entities(mentions);

        // Skeleton pool with support.
        let mut skeletons: BTreeMap<Skeleton, f64> = BTreeMap::new();
        for ((case, _), w) in cases.iter().zip(&weights) {
            *skeletons.entry(case.lf.skeleton()).or_default() += w;
        }
        if skeletons.is_empty() {
            if !config.use_global_vocab {
                return Err(Error::NoCasesToReuse);
            }
            skeletons.insert(default_skeleton(), 0.0);
        }
        skeletons.retain(|s, _| s.num_anchors() <= anchors.len());
        if skeletons.is_empty() {
            return Err(Error::NoCasesToReuse);
        }

        // Relation pool: name -> (in cases, support by depth, best case by depth).
        let mut pool: BTreeMap<&str, RelationStats> = BTreeMap::new();
        for ((case, sim), w) in cases.iter().zip(&weights) {
            let depths = case.lf.pattern_depths();
            for (p, d) in case.lf.patterns.iter().zip(depths) {
                pool.entry(p.relation.as_str()).or_default().add(d, *w, &case.id, *sim);
            }
        }
        if config.use_global_vocab {
            for r in &self.vocab {
                pool.entry(r.as_str()).or_default();
            }
        }
        let relations: Vec<&str> = pool.keys().copied().collect();
        let qtokens = question_tokens(question, mentions);
        let lex: Vec<f64> = relations.iter().map(|r| self.lexsim(r, &qtokens)).collect();

        let scored: Vec<Scored> = skeletons
            .iter()
            .map(|(skeleton, score)| {
                let slots = skeleton
                    .slot_depths()
                    .into_iter()
                    .map(|depth| {
                        let mut options: Vec<(usize, f64)> = relations
                            .iter()
                            .enumerate()
                            .map(|(i, r)| {
                                let stats = &pool[r];
                                let oov = if stats.in_cases { 0.0 } else { config.gamma_oov };
                                let s = config.alpha * lex[i] + config.beta * stats.support(depth) + oov;
                                (i, s)
                            })
                            .collect();
                        options.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                        options
                    })
                    .collect();
                Scored {
                    skeleton,
                    score: *score,
                    slots,
                }
            })
            .collect();

        let complete = beam_search(&scored, beam);
        let mut out: Vec<Candidate> = Vec::with_capacity(complete.len());
        let mut printed = BTreeSet::new();
        for p in complete {
            let s = &scored[p.skeleton];
            let names: Vec<&str> = p.relations.iter().map(|&i| relations[i]).collect();
            let lf = s.skeleton.instantiate(&names, &anchors);
            if !printed.insert(lf.print()) {
                continue;
            }
            let depths = s.skeleton.slot_depths();
            let support = names
                .iter()
                .zip(depths)
                .map(|(r, d)| pool[r].source(d))
                .collect();
            out.push(Candidate {
                lf,
                score: p.prefix,
                support,
            });
        }
        out.sort_by(|a, b| cmp_candidates(a, b));
        Ok(out)
    }
}

fn cmp_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.lf.print().cmp(&b.lf.print()))
}

/// Beam search over skeletons and slot assignments. Partials are ranked by
/// prefix score plus the best possible completion, so the kept set always
/// contains the prefixes of the global top `beam` assignments.
fn beam_search(scored: &[Scored], beam: usize) -> Vec<Partial> {
    let best_rest = |s: &Scored, from: usize| -> f64 {
        s.slots[from..].iter().map(|o| o.first().map_or(f64::NEG_INFINITY, |x| x.1)).sum()
    };
    let mut frontier: Vec<Partial> = scored
        .iter()
        .enumerate()
        .filter(|(_, s)| s.slots.iter().all(|o| !o.is_empty()))
        .map(|(i, s)| Partial {
            skeleton: i,
            relations: Vec::new(),
            prefix: s.score,
            bound: s.score + best_rest(s, 0),
        })
        .collect();
    let rank = |a: &Partial, b: &Partial| {
        b.bound
            .total_cmp(&a.bound)
            .then(a.skeleton.cmp(&b.skeleton))
            .then_with(|| a.relations.cmp(&b.relations))
    };
    frontier.sort_by(rank);
    frontier.truncate(beam);
    loop {
        let mut next = Vec::new();
        let mut grew = false;
        for p in frontier {
            let s = &scored[p.skeleton];
            let slot = p.relations.len();
            if slot == s.slots.len() {
                next.push(p);
                continue;
            }
            grew = true;
            let rest = best_rest(s, slot + 1);
            for &(r, score) in &s.slots[slot] {
                let mut relations = p.relations.clone();
                relations.push(r);
                let prefix = p.prefix + score;
                next.push(Partial {
                    skeleton: p.skeleton,
                    relations,
                    prefix,
                    bound: prefix + rest,
                });
                if next.len() >= beam.saturating_mul(4).max(64) && beam != usize::MAX {
                    // Options are sorted, later ones cannot beat the kept ones.
                    next.sort_by(rank);
                    next.truncate(beam);
                }
            }
        }
        next.sort_by(rank);
        next.truncate(beam);
        frontier = next;
        if !grew {
            return frontier;
        }
    }
}

#[derive(Default)]
struct RelationStats {
    in_cases: bool,
    by_depth: BTreeMap<usize, f64>,
    /// Highest-similarity contributing case, per depth and overall.
    best: BTreeMap<Option<usize>, (f64, String)>,
}

impl RelationStats {
    fn add(&mut self, depth: usize, weight: f64, case: &str, sim: f64) {
        self.in_cases = true;
        *self.by_depth.entry(depth).or_default() += weight;
        for key in [Some(depth), None] {
            let better = self.best.get(&key).map_or(true, |(s, id)| {
                sim > *s || (sim == *s && case < id.as_str())
            });
            if better {
                self.best.insert(key, (sim, case.to_string()));
            }
        }
    }

    fn support(&self, depth: usize) -> f64 {
        self.by_depth.get(&depth).copied().unwrap_or(0.0)
    }

    fn source(&self, depth: usize) -> SlotSource {
        match self.best.get(&Some(depth)).or_else(|| self.best.get(&None)) {
            Some((_, id)) => SlotSource::Case(id.clone()),
            None => SlotSource::GlobalVocab,
        }
    }
}

fn softmax(sims: impl Iterator<Item = f64>, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = sims.map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// One anchored pattern, used when there are no cases but the global
/// vocabulary is enabled.
pub fn default_skeleton() -> Skeleton {
    lf::LogicalForm::new(
        "x",
        vec![lf::TriplePattern::new(lf::Term::entity("e"), "r", lf::Term::var("x"))],
        None,
    )
    .expect("valid one-hop form")
    .skeleton()
}
