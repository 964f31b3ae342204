use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rng_stream, World, DATE};
use crate::error::{Error, Result};
use crate::kb::Node;
use crate::lf::{execute, AnswerSet, LogicalForm, OrderLimit, SortDirection, Term, TriplePattern};
use crate::linker::{Mention, MentionSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    OneHop,
    Chain,
    Conjunction,
    Superlative,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 4] = [
        QuestionKind::OneHop,
        QuestionKind::Chain,
        QuestionKind::Conjunction,
        QuestionKind::Superlative,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub id: String,
    pub question: String,
    pub mentions: Vec<Mention>,
    #[serde(rename = "sparql")]
    pub gold_lf: LogicalForm,
    #[serde(rename = "answers")]
    pub gold_answers: AnswerSet,
    #[serde(default = "default_kind")]
    pub kind: QuestionKind,
}

fn default_kind() -> QuestionKind {
    QuestionKind::OneHop
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Relative frequency of one-hop, chain, conjunction and superlative forms.
    pub mix: [f64; 4],
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Test questions generated per held-out relation.
    pub heldout_per_relation: usize,
    /// Probability that a question opens with a conversational filler.
    #[serde(default)]
    pub filler_rate: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            mix: [0.3, 0.3, 0.3, 0.1],
            n_train: 1000,
            n_valid: 300,
            n_test: 600,
            heldout_per_relation: 40,
            filler_rate: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Standard,
    HeldoutRelation { relations: Vec<String> },
    NovelCombination,
    McdLike,
}

impl SplitKind {
    pub fn name(&self) -> &'static str {
        match self {
            SplitKind::Standard => "standard",
            SplitKind::HeldoutRelation { .. } => "heldout_relation",
            SplitKind::NovelCombination => "novel_combination",
            SplitKind::McdLike => "mcd_like",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub kind: SplitKind,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    /// Split diagnostics such as atom and compound divergence.
    #[serde(default)]
    pub stats: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<DatasetExample>,
    pub valid: Vec<DatasetExample>,
    pub test: Vec<DatasetExample>,
    pub spec: SplitSpec,
}

impl Dataset {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(dir.join("train.jsonl"), &self.train)?;
        write_jsonl(dir.join("valid.jsonl"), &self.valid)?;
        write_jsonl(dir.join("test.jsonl"), &self.test)?;
        let path = dir.join("split.json");
        fs::write(&path, serde_json::to_string_pretty(&self.spec)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("split.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
        Ok(Dataset {
            train: read_jsonl(dir.join("train.jsonl"))?,
            valid: read_jsonl(dir.join("valid.jsonl"))?,
            test: read_jsonl(dir.join("test.jsonl"))?,
            spec: serde_json::from_str(&text)?,
        })
    }

    pub fn all(&self) -> impl Iterator<Item = &DatasetExample> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    Ok(items)
}

const ONE_HOP: [&str; 3] = [
    "what is the {n} of {e}?",
    "tell me the {n} of {e}",
    "which {n} does {e} have?",
];
const CHAIN: [&str; 3] = [
    "what is the {n2} of the {n1} of {e}?",
    "tell me the {n2} of the {n1} of {e}",
    "which {n2} does the {n1} of {e} have?",
];
const CONJUNCTION: [&str; 3] = [
    "which {t} has {n1} {e1} and {n2} {e2}?",
    "find the {t} with {n1} {e1} and {n2} {e2}",
    "what {t} has both {n1} {e1} and {n2} {e2}?",
];
const SUPERLATIVE: [&str; 3] = [
    "what is the {n} of {e} with the {w} {nd}?",
    "tell me the {n} of {e} with the {w} {nd}",
    "which {n} of {e} has the {w} {nd}?",
];
const FILLERS: [&str; 8] = [
    "quick question,",
    "i was wondering",
    "could you tell me",
    "do you happen to know",
    "i need to know",
    "out of curiosity,",
    "help me out here,",
    "for my homework,",
];

/// Fills `{name}` placeholders; entity placeholders become gold mentions.
fn realize(
    template: &str,
    words: &[(&str, &str)],
    entities: &[(&str, &str, &str)],
) -> (String, Vec<Mention>) {
    let mut question = String::new();
    let mut spans = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        question.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("closed placeholder");
        let key = &rest[open + 1..close];
        if let Some((_, name, id)) = entities.iter().find(|(k, _, _)| *k == key) {
            let start = question.chars().count();
            question.push_str(name);
            spans.push(((start, start + name.chars().count()), *id));
        } else {
            let (_, w) = words.iter().find(|(k, _)| *k == key).expect("known placeholder");
            question.push_str(w);
        }
        rest = &rest[close + 1..];
    }
    question.push_str(rest);
    let mentions = spans
        .into_iter()
        .map(|(span, id)| Mention::new(&question, span, id, MentionSource::Gold))
        .collect();
    (question, mentions)
}

struct Sampler<'a> {
    world: &'a World,
    rng: ChaCha8Rng,
    n_templates: usize,
    filler_rate: f64,
}

/// Relation constraint for one sampling call.
struct Filter<'a> {
    allowed: &'a dyn Fn(&str) -> bool,
    must: Option<&'a str>,
}

impl<'a> Sampler<'a> {
    /// One of the relation's phrasings, limited to `n_question_templates` variants.
    fn noun(&mut self, r: &str) -> &'a str {
        let world: &'a World = self.world;
        let schema = world.config.relation(r).expect("schema relation");
        let phrasings: Vec<&'a str> = schema.phrasings().take(self.n_templates).collect();
        phrasings[self.rng.gen_range(0..phrasings.len())]
    }

    fn schema_relations(&self, f: &Filter) -> Vec<&'a super::RelationSchema> {
        let world: &'a World = self.world;
        world
            .config
            .relations
            .iter()
            .filter(|r| (f.allowed)(&r.name))
            .filter(|r| world.full.relation(&r.name).is_some())
            .collect()
    }

    fn name(&self, id: &str) -> &'a str {
        let world: &'a World = self.world;
        &world.entity_info(id).expect("known entity").name
    }

    fn template(&mut self, templates: &[&str; 3]) -> String {
        let t = templates[self.rng.gen_range(0..self.n_templates)];
        if self.rng.gen_bool(self.filler_rate) {
            format!("{} {t}", FILLERS.choose(&mut self.rng).expect("fillers"))
        } else {
            t.to_string()
        }
    }

    fn random_head(&mut self, relation: &str) -> Option<String> {
        let kb = &self.world.full;
        let pairs = kb.pairs(kb.relation(relation)?);
        let (s, _) = pairs.choose(&mut self.rng)?;
        Some(kb.entity_name(*s).to_string())
    }

    fn finish(
        &self,
        kind: QuestionKind,
        lf: LogicalForm,
        (question, mentions): (String, Vec<Mention>),
    ) -> Option<DatasetExample> {
        let answers = execute(&lf, &self.world.full).ok()?;
        if answers.is_empty() || answers.len() > 25 {
            return None;
        }
        Some(DatasetExample {
            id: String::new(),
            question,
            mentions,
            gold_lf: lf,
            gold_answers: answers,
            kind,
        })
    }

    fn one_hop(&mut self, f: &Filter) -> Option<DatasetExample> {
        let rels: Vec<&str> = self
            .schema_relations(f)
            .into_iter()
            .filter(|r| r.range != DATE)
            .map(|r| r.name.as_str())
            .filter(|r| f.must.map_or(true, |m| m == *r))
            .collect();
        let r = *rels.choose(&mut self.rng)?;
        let e = self.random_head(r)?;
        let lf = LogicalForm::new(
            "x",
            vec![TriplePattern::new(Term::entity(&e), r, Term::var("x"))],
            None,
        )
        .ok()?;
        let t = self.template(&ONE_HOP);
        let n = self.noun(r);
        let q = realize(&t, &[("n", n)], &[("e", self.name(&e), &e)]);
        self.finish(QuestionKind::OneHop, lf, q)
    }

    fn chain(&mut self, f: &Filter) -> Option<DatasetExample> {
        let rels = self.schema_relations(f);
        let mut pairs = Vec::new();
        for a in &rels {
            for b in &rels {
                if a.range == b.domain && b.range != DATE && a.name != b.name && a.noun != b.noun {
                    let ok = f.must.map_or(true, |m| m == a.name || m == b.name);
                    if ok {
                        pairs.push((a.name.as_str(), b.name.as_str()));
                    }
                }
            }
        }
        let (r1, r2) = *pairs.choose(&mut self.rng)?;
        let e = self.random_head(r1)?;
        let lf = LogicalForm::new(
            "x",
            vec![
                TriplePattern::new(Term::entity(&e), r1, Term::var("y")),
                TriplePattern::new(Term::var("y"), r2, Term::var("x")),
            ],
            None,
        )
        .ok()?;
        let t = self.template(&CHAIN);
        let (n1, n2) = (self.noun(r1), self.noun(r2));
        let q = realize(
            &t,
            &[("n1", n1), ("n2", n2)],
            &[("e", self.name(&e), &e)],
        );
        self.finish(QuestionKind::Chain, lf, q)
    }

    fn conjunction(&mut self, f: &Filter) -> Option<DatasetExample> {
        let rels: Vec<_> = self
            .schema_relations(f)
            .into_iter()
            .filter(|r| r.constraint && r.range != DATE)
            .collect();
        let mut pairs = Vec::new();
        for a in &rels {
            for b in &rels {
                if a.domain == b.domain && a.range != b.range && a.noun != b.noun {
                    let ok = f.must.map_or(true, |m| m == a.name || m == b.name);
                    if ok {
                        pairs.push((*a, *b));
                    }
                }
            }
        }
        let (a, b) = *pairs.choose(&mut self.rng)?;
        let kb: &'a crate::kb::KnowledgeBase = &self.world.full;
        let x = self.random_head(&a.name)?;
        let xid = kb.entity(&x)?;
        let o1 = *kb.objects(xid, kb.relation(&a.name)?).choose(&mut self.rng)?;
        let o2 = *kb.objects(xid, kb.relation(&b.name)?).choose(&mut self.rng)?;
        let (Node::Entity(o1), Node::Entity(o2)) = (o1, o2) else {
            return None;
        };
        let (e1, e2) = (kb.entity_name(o1).to_string(), kb.entity_name(o2).to_string());
        let lf = LogicalForm::new(
            "x",
            vec![
                TriplePattern::new(Term::var("x"), &a.name, Term::entity(&e1)),
                TriplePattern::new(Term::var("x"), &b.name, Term::entity(&e2)),
            ],
            None,
        )
        .ok()?;
        let world: &'a World = self.world;
        let type_noun = &world.config.entity_type(&a.domain)?.noun;
        let t = self.template(&CONJUNCTION);
        let (n1, n2) = (self.noun(&a.name), self.noun(&b.name));
        let q = realize(
            &t,
            &[("t", type_noun), ("n1", n1), ("n2", n2)],
            &[("e1", self.name(&e1), &e1), ("e2", self.name(&e2), &e2)],
        );
        self.finish(QuestionKind::Conjunction, lf, q)
    }

    fn superlative(&mut self, f: &Filter) -> Option<DatasetExample> {
        let rels = self.schema_relations(f);
        let mut pairs = Vec::new();
        for a in &rels {
            for d in &rels {
                if d.range == DATE && a.range == d.domain {
                    let ok = f.must.map_or(true, |m| m == a.name || m == d.name);
                    if ok {
                        pairs.push((a.name.as_str(), d.name.as_str()));
                    }
                }
            }
        }
        let (r, d) = *pairs.choose(&mut self.rng)?;
        let e = self.random_head(r)?;
        let kb: &'a crate::kb::KnowledgeBase = &self.world.full;
        let (eid, rid) = (kb.entity(&e)?, kb.relation(r)?);
        let did = kb.relation(d)?;
        let dated = kb
            .objects(eid, rid)
            .iter()
            .filter(|o| matches!(o, Node::Entity(x) if !kb.objects(*x, did).is_empty()))
            .count();
        if dated < 2 {
            return None;
        }
        let (direction, word) = if self.rng.gen_bool(0.5) {
            (SortDirection::Asc, "earliest")
        } else {
            (SortDirection::Desc, "latest")
        };
        let lf = LogicalForm::new(
            "x",
            vec![
                TriplePattern::new(Term::entity(&e), r, Term::var("x")),
                TriplePattern::new(Term::var("x"), d, Term::var("sk0")),
            ],
            Some(OrderLimit {
                var: "sk0".into(),
                direction,
                limit: 1,
            }),
        )
        .ok()?;
        let t = self.template(&SUPERLATIVE);
        let (n, nd) = (self.noun(r), self.noun(d));
        let q = realize(
            &t,
            &[("n", n), ("w", word), ("nd", nd)],
            &[("e", self.name(&e), &e)],
        );
        self.finish(QuestionKind::Superlative, lf, q)
    }

    fn sample(&mut self, kind: QuestionKind, f: &Filter) -> Option<DatasetExample> {
        match kind {
            QuestionKind::OneHop => self.one_hop(f),
            QuestionKind::Chain => self.chain(f),
            QuestionKind::Conjunction => self.conjunction(f),
            QuestionKind::Superlative => self.superlative(f),
        }
    }

    fn pick_kind(&mut self, mix: &[f64; 4]) -> QuestionKind {
        let total: f64 = mix.iter().sum();
        let mut u = self.rng.gen::<f64>() * total;
        for (k, w) in QuestionKind::ALL.iter().zip(mix) {
            if u < *w {
                return *k;
            }
            u -= w;
        }
        QuestionKind::OneHop
    }

    /// Draws `n` examples with distinct questions.
    fn pool(
        &mut self,
        n: usize,
        mix: &[f64; 4],
        f: &Filter,
        seen: &mut BTreeSet<String>,
    ) -> Vec<DatasetExample> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n && attempts < 200 * n.max(1) {
            attempts += 1;
            let kind = self.pick_kind(mix);
            if let Some(ex) = self.sample(kind, f) {
                if seen.insert(ex.question.to_lowercase()) {
                    out.push(ex);
                }
            }
        }
        out
    }
}

fn relation_key(ex: &DatasetExample) -> BTreeSet<String> {
    ex.gold_lf.relations().into_iter().map(String::from).collect()
}

fn assign_ids(examples: &mut [DatasetExample], prefix: &str) {
    for (i, ex) in examples.iter_mut().enumerate() {
        ex.id = format!("{prefix}{i:05}");
    }
}

/// Chernoff-coefficient divergence between two frequency tables.
fn divergence(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>, alpha: f64) -> f64 {
    let na: usize = a.values().sum();
    let nb: usize = b.values().sum();
    if na == 0 || nb == 0 {
        return 1.0;
    }
    let coeff: f64 = a
        .iter()
        .filter_map(|(k, &ca)| b.get(k).map(|&cb| (ca, cb)))
        .map(|(ca, cb)| {
            (ca as f64 / na as f64).powf(alpha) * (cb as f64 / nb as f64).powf(1.0 - alpha)
        })
        .sum();
    1.0 - coeff
}

fn compound_of(ex: &DatasetExample) -> String {
    let rels: Vec<&str> = ex.gold_lf.patterns.iter().map(|p| p.relation.as_str()).collect();
    format!("{}|{}", ex.gold_lf.skeleton(), rels.join(","))
}

fn frequencies<'a, F: Fn(&DatasetExample) -> Vec<String>>(
    examples: impl Iterator<Item = &'a DatasetExample>,
    f: F,
) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for ex in examples {
        for k in f(ex) {
            *m.entry(k).or_insert(0) += 1;
        }
    }
    m
}

/// Moves whole groups (by `key`) into the test side until it holds `n_test`
/// examples, never removing the last train occurrence of a relation.
fn hold_out_groups(
    pool: Vec<DatasetExample>,
    n_test: usize,
    key: impl Fn(&DatasetExample) -> Option<String>,
    rng: &mut ChaCha8Rng,
) -> (Vec<DatasetExample>, Vec<DatasetExample>) {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in pool.iter().enumerate() {
        if let Some(k) = key(ex) {
            groups.entry(k).or_default().push(i);
        }
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    keys.shuffle(rng);
    let mut relation_count: BTreeMap<String, usize> = BTreeMap::new();
    for ex in &pool {
        for r in relation_key(ex) {
            *relation_count.entry(r).or_insert(0) += 1;
        }
    }
    let mut held = vec![false; pool.len()];
    let mut n_held = 0;
    for k in keys {
        if n_held >= n_test {
            break;
        }
        let members = &groups[&k];
        let mut removal: BTreeMap<String, usize> = BTreeMap::new();
        for &i in members {
            for r in relation_key(&pool[i]) {
                *removal.entry(r).or_insert(0) += 1;
            }
        }
        // Keep a margin so later truncation of train still covers the relation.
        if removal.iter().any(|(r, c)| relation_count[r] < c + 5) {
            continue;
        }
        for (r, c) in removal {
            *relation_count.get_mut(&r).unwrap() -= c;
        }
        for &i in members {
            held[i] = true;
        }
        n_held += members.len();
    }
    let (mut test, mut rest) = (Vec::new(), Vec::new());
    for (ex, h) in pool.into_iter().zip(held) {
        if h {
            test.push(ex);
        } else {
            rest.push(ex);
        }
    }
    test.truncate(n_test);
    (rest, test)
}

/// Checks the novel-combination constraints, naming the first offender.
pub(crate) fn check_novel_combination(
    train: &[DatasetExample],
    test: &[DatasetExample],
) -> Result<()> {
    let train_sets: Vec<BTreeSet<String>> = train.iter().map(relation_key).collect();
    let train_relations: BTreeSet<&String> = train_sets.iter().flatten().collect();
    for ex in test {
        let rels = relation_key(ex);
        if let Some(r) = rels.iter().find(|r| !train_relations.contains(r)) {
            return Err(Error::UnsatisfiableSplit(format!(
                "relation {r} of test example {} never appears in train",
                ex.id
            )));
        }
        if train_sets.iter().any(|t| rels.is_subset(t)) {
            return Err(Error::UnsatisfiableSplit(format!(
                "relation combination {{{}}} of test example {} is covered by a train example",
                rels.into_iter().collect::<Vec<_>>().join(", "),
                ex.id
            )));
        }
    }
    Ok(())
}

/// Generates train/valid/test for the requested split kind. Every example's
/// gold LF executes to its stored answers on the full KB.
pub fn generate_dataset(
    world: &World,
    templates: &TemplateConfig,
    split: &SplitKind,
    seed: u64,
) -> Result<Dataset> {
    let mut sampler = Sampler {
        world,
        rng: rng_stream(seed, 10),
        n_templates: world.config.n_question_templates,
        filler_rate: templates.filler_rate,
    };
    let (nt, nv, ns) = (templates.n_train, templates.n_valid, templates.n_test);
    let mut seen = BTreeSet::new();
    let any = |_: &str| true;
    let shortfall = |have: usize, want: usize| {
        Error::InvalidConfig(format!("could only generate {have} of {want} distinct questions"))
    };
    let mut stats = BTreeMap::new();

    let (mut train, mut valid, mut test) = match split {
        SplitKind::Standard => {
            let f = Filter { allowed: &any, must: None };
            let mut pool = sampler.pool(nt + nv + ns, &templates.mix, &f, &mut seen);
            if pool.len() < nt + nv + ns {
                return Err(shortfall(pool.len(), nt + nv + ns));
            }
            let test = pool.split_off(nt + nv);
            let valid = pool.split_off(nt);
            (pool, valid, test)
        }
        SplitKind::HeldoutRelation { relations } => {
            for r in relations {
                if world.config.relation(r).is_none() || world.full.relation(r).is_none() {
                    return Err(Error::UnsatisfiableSplit(format!("held-out relation {r} has no facts")));
                }
            }
            let allowed = |r: &str| !relations.iter().any(|h| h == r);
            let f = Filter { allowed: &allowed, must: None };
            let mut pool = sampler.pool(nt + nv + ns, &templates.mix, &f, &mut seen);
            if pool.len() < nt + nv + ns {
                return Err(shortfall(pool.len(), nt + nv + ns));
            }
            let mut test = pool.split_off(nt + nv);
            let valid = pool.split_off(nt);
            for r in relations {
                let f = Filter { allowed: &any, must: Some(r) };
                let half = templates.heldout_per_relation / 2;
                let mut got = sampler.pool(half, &[0.0, 1.0, 0.0, 0.0], &f, &mut seen);
                let rest = templates.heldout_per_relation - got.len();
                got.extend(sampler.pool(rest, &[1.0, 0.0, 0.0, 0.0], &f, &mut seen));
                if got.is_empty() {
                    return Err(Error::UnsatisfiableSplit(format!(
                        "no test question can be built for held-out relation {r}"
                    )));
                }
                test.extend(got);
            }
            (pool, valid, test)
        }
        SplitKind::NovelCombination | SplitKind::McdLike => {
            let f = Filter { allowed: &any, must: None };
            let want = 2 * (nt + nv + ns);
            let pool = sampler.pool(want, &templates.mix, &f, &mut seen);
            let (mut rest, test) = if *split == SplitKind::NovelCombination {
                hold_out_groups(
                    pool,
                    ns,
                    |ex| {
                        let k = relation_key(ex);
                        (k.len() >= 2).then(|| k.into_iter().collect::<Vec<_>>().join(","))
                    },
                    &mut sampler.rng,
                )
            } else {
                hold_out_groups(pool, ns, |ex| Some(compound_of(ex)), &mut sampler.rng)
            };
            if test.is_empty() {
                return Err(Error::UnsatisfiableSplit(
                    "no relation combination can be held out while keeping its relations in train".into(),
                ));
            }
            if *split == SplitKind::NovelCombination {
                let test_sets: Vec<BTreeSet<String>> = test.iter().map(relation_key).collect();
                rest.retain(|ex| {
                    let k = relation_key(ex);
                    !test_sets.iter().any(|t| t.is_subset(&k))
                });
            }
            if rest.len() < nt + nv {
                return Err(shortfall(rest.len(), nt + nv));
            }
            rest.truncate(nt + nv);
            let valid = rest.split_off(nt);
            (rest, valid, test)
        }
    };

    assign_ids(&mut train, "tr");
    assign_ids(&mut valid, "va");
    assign_ids(&mut test, "te");

    match split {
        SplitKind::NovelCombination => check_novel_combination(&train, &test)?,
        SplitKind::HeldoutRelation { relations } => {
            if let Some(ex) = train
                .iter()
                .chain(&valid)
                .find(|ex| relations.iter().any(|r| ex.gold_lf.relations().contains(r.as_str())))
            {
                return Err(Error::UnsatisfiableSplit(format!(
                    "train example {} uses a held-out relation",
                    ex.id
                )));
            }
        }
        _ => {}
    }

    let atoms = |ex: &DatasetExample| relation_key(ex).into_iter().collect();
    let compounds = |ex: &DatasetExample| vec![compound_of(ex)];
    stats.insert(
        "atom_divergence".into(),
        divergence(&frequencies(train.iter(), atoms), &frequencies(test.iter(), atoms), 0.5),
    );
    stats.insert(
        "compound_divergence".into(),
        divergence(
            &frequencies(train.iter(), compounds),
            &frequencies(test.iter(), compounds),
            0.1,
        ),
    );

    let ids = |v: &[DatasetExample]| v.iter().map(|e| e.id.clone()).collect();
    let spec = SplitSpec {
        kind: split.clone(),
        train: ids(&train),
        valid: ids(&valid),
        test: ids(&test),
        stats,
    };
    Ok(Dataset {
        train,
        valid,
        test,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::{generate_world, WorldConfig};

    fn small_templates() -> TemplateConfig {
        TemplateConfig {
            n_train: 400,
            n_valid: 50,
            n_test: 100,
            heldout_per_relation: 10,
            ..TemplateConfig::default()
        }
    }

    #[test]
    fn gold_lfs_reproduce_answers_and_spans_fit() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let d = generate_dataset(&world, &small_templates(), &SplitKind::Standard, 1).unwrap();
        assert_eq!((d.train.len(), d.valid.len(), d.test.len()), (400, 50, 100));
        let kinds: BTreeSet<_> = d.all().map(|e| e.kind).collect();
        assert_eq!(kinds.len(), 4);
        for ex in d.all() {
            assert_eq!(execute(&ex.gold_lf, &world.full).unwrap(), ex.gold_answers);
            assert!(!ex.gold_answers.is_empty());
            assert!(crate::linker::check_mentions(&ex.question, &ex.mentions));
            for m in &ex.mentions {
                assert_eq!(world.entity_info(&m.entity).unwrap().name, m.surface);
            }
        }
    }

    #[test]
    fn heldout_relation_split() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let r = "finance.currency.currency_code".to_string();
        let split = SplitKind::HeldoutRelation { relations: vec![r.clone()] };
        let d = generate_dataset(&world, &small_templates(), &split, 2).unwrap();
        assert!(d.train.iter().all(|e| !e.gold_lf.relations().contains(r.as_str())));
        assert!(d.test.iter().filter(|e| e.gold_lf.relations().contains(r.as_str())).count() >= 1);
    }

    #[test]
    fn novel_combination_split() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let d = generate_dataset(&world, &small_templates(), &SplitKind::NovelCombination, 3).unwrap();
        assert!(!d.test.is_empty());
        check_novel_combination(&d.train, &d.test).unwrap();
    }

    #[test]
    fn mcd_like_split_diverges_in_compounds() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let d = generate_dataset(&world, &small_templates(), &SplitKind::McdLike, 4).unwrap();
        assert!(d.spec.stats["compound_divergence"] > d.spec.stats["atom_divergence"]);
    }

    #[test]
    fn jsonl_round_trip() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let t = TemplateConfig { n_train: 20, n_valid: 5, n_test: 5, ..small_templates() };
        let d = generate_dataset(&world, &t, &SplitKind::Standard, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
        let line = fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for field in ["id", "question", "mentions", "sparql", "answers"] {
            assert!(v.get(field).is_some(), "{field}");
        }
    }

    #[test]
    fn unsatisfiable_heldout_names_relation() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let split = SplitKind::HeldoutRelation { relations: vec!["no.such.relation".into()] };
        let err = generate_dataset(&world, &small_templates(), &split, 2).unwrap_err();
        assert!(err.to_string().contains("no.such.relation"));
    }

    #[test]
    fn realize_tracks_spans() {
        let (q, m) = realize("what is the {n} of {e}?", &[("n", "capital")], &[("e", "Zorvia", "m.1")]);
        assert_eq!(q, "what is the capital of Zorvia?");
        assert_eq!(m[0].span, (23, 29));
    }
}
