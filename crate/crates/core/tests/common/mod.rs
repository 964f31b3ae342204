//! Random KBs, random logical forms and a brute-force query oracle.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use cbrqa::kb::{KnowledgeBase, Literal, LiteralKind, RawTriple, Value};
use cbrqa::lf::{LogicalForm, OrderLimit, SortDirection, Term, TriplePattern};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VARS: [&str; 3] = ["x", "y", "z_1"];

pub fn entity_name(i: usize) -> String {
    format!("m.0e{i}")
}

pub fn relation_name(i: usize) -> String {
    format!("dom{}.type_{}.prop-{i}", i % 3, i % 2)
}

pub fn random_literal(rng: &mut ChaCha8Rng) -> Literal {
    match rng.gen_range(0..10) {
        0..=2 => {
            let v = ["1", "1.0", "2", "-3", "10", "2.50", "007", "1e2"].choose(rng).unwrap();
            Literal::new(*v, LiteralKind::Number)
        }
        3..=5 => {
            let y = rng.gen_range(1990..1995);
            let m = rng.gen_range(1..4);
            Literal::new(format!("{y}-0{m}-01"), LiteralKind::Date)
        }
        6 if rng.gen_bool(0.05) => Literal::new("n/a", LiteralKind::Number),
        _ => {
            let v = ["alpha", "Beta gamma", "say \"hi\"", "back\\slash", "zeta", "ünï", "a.b c"]
                .choose(rng)
                .unwrap();
            Literal::new(*v, LiteralKind::Plain)
        }
    }
}

/// A KB of at most `max_triples` triples over about 40 entities and a few
/// relations. Some relations mix entity and literal objects.
pub fn random_kb(rng: &mut ChaCha8Rng, max_triples: usize) -> KnowledgeBase {
    let n_entities = rng.gen_range(10..=40);
    let n_relations = rng.gen_range(2..=6);
    let n = rng.gen_range(1..=max_triples);
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let s = entity_name(rng.gen_range(0..n_entities));
        let rel = rng.gen_range(0..n_relations);
        let r = relation_name(rel);
        let literal_bias = if rel % 2 == 0 { 0.15 } else { 0.7 };
        if rng.gen_bool(literal_bias) {
            let l = random_literal(rng);
            triples.push(RawTriple::literal(&s, &r, &l.value, l.kind));
        } else {
            triples.push(RawTriple::entity(&s, &r, &entity_name(rng.gen_range(0..n_entities))));
        }
    }
    KnowledgeBase::from_triples(triples)
}

fn random_ground(rng: &mut ChaCha8Rng, kb: &KnowledgeBase, allow_literal: bool) -> Term {
    let triples: Vec<RawTriple> = kb.raw_triples().collect();
    let t = triples.choose(rng).unwrap();
    match rng.gen_range(0..10) {
        0 => Term::Entity(entity_name(999)),
        1..=5 => Term::Entity(t.subject.clone()),
        _ => match (&t.object, allow_literal) {
            (Value::Literal(l), true) => Term::Literal(l.clone()),
            (Value::Literal(_), false) => Term::Entity(t.subject.clone()),
            (Value::Entity(e), _) => Term::Entity(e.clone()),
        },
    }
}

/// A valid LF with at most three patterns and three variables, mostly built
/// from KB vocabulary so that many queries have answers.
pub fn random_lf(rng: &mut ChaCha8Rng, kb: &KnowledgeBase) -> LogicalForm {
    loop {
        let n_patterns = rng.gen_range(1..=3);
        let mut patterns = Vec::new();
        for _ in 0..n_patterns {
            let relation = if rng.gen_bool(0.05) {
                "absent.relation.name".to_string()
            } else {
                kb.relation_names().choose(rng).unwrap().clone()
            };
            let subject = if rng.gen_bool(0.75) {
                Term::var(VARS.choose(rng).unwrap())
            } else {
                random_ground(rng, kb, false)
            };
            let object = if rng.gen_bool(0.7) {
                Term::var(VARS.choose(rng).unwrap())
            } else {
                random_ground(rng, kb, true)
            };
            patterns.push(TriplePattern::new(subject, &relation, object));
        }
        let vars: Vec<String> = patterns.iter().flat_map(|p| p.vars().map(str::to_string)).collect();
        let Some(select) = vars.choose(rng).cloned() else {
            continue;
        };
        let order_limit = rng.gen_bool(0.35).then(|| OrderLimit {
            var: vars.choose(rng).unwrap().clone(),
            direction: if rng.gen_bool(0.5) { SortDirection::Asc } else { SortDirection::Desc },
            limit: rng.gen_range(1..=4),
        });
        if let Ok(lf) = LogicalForm::new(&select, patterns, order_limit) {
            return lf;
        }
    }
}

/// Every variable assignment satisfying all patterns, found by a nested loop
/// over the raw triples in pattern order.
pub fn brute_force_rows(lf: &LogicalForm, triples: &[RawTriple]) -> Vec<BTreeMap<String, Value>> {
    fn term_matches(term: &Term, value: &Value, row: &mut BTreeMap<String, Value>) -> bool {
        match (term, value) {
            (Term::Var(v), _) => match row.get(v) {
                Some(bound) => bound == value,
                None => {
                    row.insert(v.clone(), value.clone());
                    true
                }
            },
            (Term::Entity(e), Value::Entity(f)) => e == f,
            (Term::Literal(l), Value::Literal(m)) => l == m,
            _ => false,
        }
    }
    fn go(
        patterns: &[TriplePattern],
        triples: &[RawTriple],
        row: &BTreeMap<String, Value>,
        out: &mut Vec<BTreeMap<String, Value>>,
    ) {
        let Some((p, rest)) = patterns.split_first() else {
            out.push(row.clone());
            return;
        };
        for t in triples.iter().filter(|t| t.relation == p.relation) {
            let mut next = row.clone();
            if term_matches(&p.subject, &Value::Entity(t.subject.clone()), &mut next)
                && term_matches(&p.object, &t.object, &mut next)
            {
                go(rest, triples, &next, out);
            }
        }
    }
    let mut out = Vec::new();
    go(&lf.patterns, triples, &BTreeMap::new(), &mut out);
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Class {
    Entity,
    Literal(LiteralKind),
}

fn class_of(v: &Value) -> Class {
    match v {
        Value::Entity(_) => Class::Entity,
        Value::Literal(l) => Class::Literal(l.kind),
    }
}

fn key_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Literal(x), Value::Literal(y)) if x.kind == LiteralKind::Number => {
            let fx: f64 = x.value.parse().unwrap();
            let fy: f64 = y.value.parse().unwrap();
            fx.partial_cmp(&fy).unwrap()
        }
        (Value::Literal(x), Value::Literal(y)) => x.value.cmp(&y.value),
        (Value::Entity(x), Value::Entity(y)) => x.cmp(y),
        _ => unreachable!("one sort class"),
    }
}

/// What the oracle expects from an execution.
#[derive(Debug)]
pub enum Expected {
    Exact(BTreeSet<Value>),
    /// Any answer set obtainable by breaking ties among rows whose sort key
    /// equals the cutoff key.
    Limited {
        sure: BTreeSet<Value>,
        tied: Vec<Value>,
        take: usize,
    },
    Unorderable,
}

impl Expected {
    pub fn accepts(&self, got: &std::result::Result<BTreeSet<Value>, String>) -> bool {
        match (self, got) {
            (Expected::Unorderable, Err(e)) => e.contains("order"),
            (Expected::Exact(want), Ok(got)) => want == got,
            (Expected::Limited { sure, tied, take }, Ok(got)) => {
                if !sure.is_subset(got) {
                    return false;
                }
                let tied_values: BTreeSet<&Value> = tied.iter().collect();
                let extra: Vec<&Value> = got.iter().filter(|v| !sure.contains(*v)).collect();
                if extra.iter().any(|v| !tied_values.contains(v)) || extra.len() > *take {
                    return false;
                }
                // Enough tied rows must carry answer values to fill the quota.
                let fill = tied.iter().filter(|v| got.contains(*v)).count();
                fill >= *take
            }
            _ => false,
        }
    }
}

pub fn oracle(lf: &LogicalForm, kb: &KnowledgeBase) -> Expected {
    let triples: Vec<RawTriple> = kb.raw_triples().collect();
    if lf.patterns.iter().any(|p| matches!(p.subject, Term::Literal(_))) {
        return Expected::Exact(BTreeSet::new());
    }
    let rows = brute_force_rows(lf, &triples);
    let Some(ol) = &lf.order_limit else {
        return Expected::Exact(rows.iter().map(|r| r[&lf.select].clone()).collect());
    };
    let keys: Vec<&Value> = rows.iter().map(|r| &r[&ol.var]).collect();
    let classes: BTreeSet<Class> = keys.iter().map(|v| class_of(v)).collect();
    if classes.len() > 1 {
        return Expected::Unorderable;
    }
    let bad_number = keys.iter().any(|v| match v {
        Value::Literal(l) if l.kind == LiteralKind::Number => l.value.parse::<f64>().map_or(true, f64::is_nan),
        _ => false,
    });
    if bad_number {
        return Expected::Unorderable;
    }
    if rows.len() <= ol.limit {
        return Expected::Exact(rows.iter().map(|r| r[&lf.select].clone()).collect());
    }
    let mut sorted: Vec<&BTreeMap<String, Value>> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        let o = key_cmp(&a[&ol.var], &b[&ol.var]);
        match ol.direction {
            SortDirection::Asc => o,
            SortDirection::Desc => o.reverse(),
        }
    });
    let cutoff = &sorted[ol.limit - 1][&ol.var];
    let before = |r: &BTreeMap<String, Value>| {
        let o = key_cmp(&r[&ol.var], cutoff);
        match ol.direction {
            SortDirection::Asc => o == Ordering::Less,
            SortDirection::Desc => o == Ordering::Greater,
        }
    };
    let sure: Vec<&BTreeMap<String, Value>> = sorted.iter().copied().filter(|r| before(r)).collect();
    let tied: Vec<Value> = sorted
        .iter()
        .filter(|r| key_cmp(&r[&ol.var], cutoff) == Ordering::Equal)
        .map(|r| r[&lf.select].clone())
        .collect();
    Expected::Limited {
        take: ol.limit - sure.len(),
        sure: sure.iter().map(|r| r[&lf.select].clone()).collect(),
        tied,
    }
}

pub fn run_executor(lf: &LogicalForm, kb: &KnowledgeBase) -> std::result::Result<BTreeSet<Value>, String> {
    cbrqa::lf::execute(lf, kb).map(|a| a.0).map_err(|e| e.to_string())
}

/// Inserts FILTER clauses between the patterns of a printed LF.
pub fn with_filters(printed: &str, rng: &mut ChaCha8Rng) -> String {
    const FILTERS: [&str; 4] = [
        "FILTER (?x != ns:m.0e1)",
        "FILTER (!isLiteral(?y) OR lang(?y) = '' OR langMatches(lang(?y), 'en'))",
        "FILTER NOT EXISTS { ?x ns:a.b ?q . }",
        "FILTER(xsd:dateTime(?z_1) >= \"1990-01-01\"^^xsd:dateTime)",
    ];
    let mut out = String::new();
    for (i, part) in printed.split(" . ").enumerate() {
        if i > 0 {
            out.push_str(" . ");
            if rng.gen_bool(0.5) {
                out.push_str(FILTERS.choose(rng).unwrap());
                out.push(' ');
            }
        }
        out.push_str(part);
    }
    out
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error between the analytic TransE hinge gradient and central
/// differences, over every active (positive, corrupted) pair of a five-triple KB.
pub fn transe_gradient_error(seed: u64, dim: usize) -> f64 {
    use cbrqa::revise::EmbeddingTable;
    let positives = [(0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 1, 4), (0, 2, 4)];
    let table = EmbeddingTable::init(5, 3, dim, 4.0, seed).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for &pos in &positives {
        for corrupt in 0..5 {
            let neg = if corrupt % 2 == 0 { (corrupt, pos.1, pos.2) } else { (pos.0, pos.1, corrupt) };
            if neg == pos || table.hinge(pos, neg) <= 0.0 {
                continue;
            }
            let g = table.hinge_gradient(pos, neg);
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for e in 0..5 {
                for k in 0..dim {
                    let mut plus = table.clone();
                    plus.entity_mut(e)[k] += h;
                    let mut minus = table.clone();
                    minus.entity_mut(e)[k] -= h;
                    numeric.push((plus.hinge(pos, neg) - minus.hinge(pos, neg)) / (2.0 * h));
                    analytic.push(g.entity.get(&e).map_or(0.0, |v| v[k]));
                }
            }
            for r in 0..3 {
                for k in 0..dim {
                    let mut plus = table.clone();
                    plus.relation_mut(r)[k] += h;
                    let mut minus = table.clone();
                    minus.relation_mut(r)[k] -= h;
                    numeric.push((plus.hinge(pos, neg) - minus.hinge(pos, neg)) / (2.0 * h));
                    analytic.push(g.relation.get(&r).map_or(0.0, |v| v[k]));
                }
            }
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    worst
}

/// Relative error between the analytic retriever batch-loss gradient and
/// central differences over every parameter of a small encoder.
pub fn retriever_gradient_error(seed: u64) -> f64 {
    use cbrqa::retriever::{Encoder, EncoderConfig};
    use rand::SeedableRng;
    let config = EncoderConfig {
        hash_bits: 5,
        dim: 6,
        temperature: 0.2,
        seed,
        ..EncoderConfig::default()
    };
    let enc = Encoder::new(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let batch: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..32)).collect())
        .collect();
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i != j && rng.gen_bool(0.4) { rng.gen_range(0.1..1.0) } else { 0.0 }).collect())
        .collect();
    let (_, grads) = enc.batch_loss(&batch, &weights);
    let d = config.dim;
    let h = 1e-6;
    let params = enc.params().to_vec();
    let mut analytic = Vec::with_capacity(params.len());
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus[i] += h;
        let mut minus = params.clone();
        minus[i] -= h;
        let lp = Encoder::from_params(config.clone(), plus).unwrap().batch_loss(&batch, &weights).0;
        let lm = Encoder::from_params(config.clone(), minus).unwrap().batch_loss(&batch, &weights).0;
        numeric.push((lp - lm) / (2.0 * h));
        analytic.push(grads.get(&(i / d)).map_or(0.0, |g| g[i % d]));
    }
    relative_error(&analytic, &numeric)
}
