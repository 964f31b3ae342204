//! Backtracking conjunctive-query evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, LiteralKind, Node, RelationId};

use super::{AnswerSet, LogicalForm, SortDirection, Term};

#[derive(Clone, Copy, Debug)]
enum Slot {
    Var(usize),
    Const(Node),
}

#[derive(Clone, Copy, Debug)]
struct Compiled {
    subject: Slot,
    relation: RelationId,
    object: Slot,
}

/// Evaluates `lf` against `kb`. Relations, entities or literals absent from the
/// KB make the query unsatisfiable rather than failing.
pub fn execute(lf: &LogicalForm, kb: &KnowledgeBase) -> Result<AnswerSet> {
    let mut var_index: HashMap<&str, usize> = HashMap::new();
    for v in lf.vars() {
        let n = var_index.len();
        var_index.insert(v, n);
    }
    let Some(compiled) = compile(lf, kb, &var_index) else {
        return Ok(AnswerSet::new());
    };

    let select = var_index[lf.select.as_str()];
    let mut bindings: Vec<Option<Node>> = vec![None; var_index.len()];
    let mut used = vec![false; compiled.len()];
    let mut rows: Vec<Vec<Option<Node>>> = Vec::new();
    search(&compiled, kb, &mut bindings, &mut used, &mut |b| rows.push(b.to_vec()));

    let answers = match &lf.order_limit {
        None => rows
            .iter()
            .filter_map(|r| r[select])
            .map(|n| kb.value(n))
            .collect(),
        Some(ol) => {
            let sort = var_index[ol.var.as_str()];
            let keys: Vec<Node> = rows.iter().filter_map(|r| r[sort]).collect();
            check_orderable(&keys, kb, &ol.var)?;
            let mut order: Vec<usize> = (0..rows.len()).collect();
            // Stable sort keeps join order among equal keys.
            order.sort_by(|&a, &b| {
                let ord = compare_nodes(kb, rows[a][sort].unwrap(), rows[b][sort].unwrap());
                match ol.direction {
                    SortDirection::Asc => ord,
                    SortDirection::Desc => ord.reverse(),
                }
            });
            order
                .into_iter()
                .take(ol.limit)
                .filter_map(|i| rows[i][select])
                .map(|n| kb.value(n))
                .collect()
        }
    };
    Ok(answers)
}

fn compile(
    lf: &LogicalForm,
    kb: &KnowledgeBase,
    var_index: &HashMap<&str, usize>,
) -> Option<Vec<Compiled>> {
    let slot = |t: &Term| -> Option<Slot> {
        match t {
            Term::Var(v) => Some(Slot::Var(var_index[v.as_str()])),
            Term::Entity(e) => kb.entity(e).map(|e| Slot::Const(Node::Entity(e))),
            Term::Literal(l) => kb.literal(l).map(|l| Slot::Const(Node::Literal(l))),
        }
    };
    lf.patterns
        .iter()
        .map(|p| {
            let subject = slot(&p.subject)?;
            if matches!(subject, Slot::Const(Node::Literal(_))) {
                return None;
            }
            Some(Compiled {
                subject,
                relation: kb.relation(&p.relation)?,
                object: slot(&p.object)?,
            })
        })
        .collect()
}

fn resolve(slot: Slot, bindings: &[Option<Node>]) -> Option<Node> {
    match slot {
        Slot::Const(n) => Some(n),
        Slot::Var(i) => bindings[i],
    }
}

/// Estimated fan-out of a pattern under the current bindings.
fn cost(p: &Compiled, kb: &KnowledgeBase, bindings: &[Option<Node>]) -> (usize, usize) {
    let s = resolve(p.subject, bindings);
    let o = resolve(p.object, bindings);
    let unbound = usize::from(s.is_none()) + usize::from(o.is_none());
    let size = match (s, o) {
        (Some(_), Some(_)) => 0,
        (Some(Node::Entity(s)), None) => kb.objects(s, p.relation).len(),
        (Some(Node::Literal(_)), None) => 0,
        (None, Some(o)) => kb.subjects(o, p.relation).len(),
        (None, None) => kb.pairs(p.relation).len(),
    };
    (unbound, size)
}

fn search(
    patterns: &[Compiled],
    kb: &KnowledgeBase,
    bindings: &mut Vec<Option<Node>>,
    used: &mut Vec<bool>,
    emit: &mut dyn FnMut(&[Option<Node>]),
) {
    // Most-constrained pattern first: fewest unbound terms, then smallest fan-out.
    let next = (0..patterns.len())
        .filter(|&i| !used[i])
        .min_by_key(|&i| (cost(&patterns[i], kb, bindings), i));
    let Some(i) = next else {
        emit(bindings);
        return;
    };
    let p = patterns[i];
    used[i] = true;
    let s = resolve(p.subject, bindings);
    let o = resolve(p.object, bindings);
    match (s, o) {
        (Some(Node::Entity(s)), Some(o)) => {
            if kb.contains(s, p.relation, o) {
                search(patterns, kb, bindings, used, emit);
            }
        }
        (Some(Node::Literal(_)), _) => {}
        (Some(Node::Entity(s)), None) => {
            for &obj in kb.objects(s, p.relation) {
                bind_and_recurse(p.object, obj, patterns, kb, bindings, used, emit);
            }
        }
        (None, Some(o)) => {
            for &subj in kb.subjects(o, p.relation) {
                bind_and_recurse(p.subject, Node::Entity(subj), patterns, kb, bindings, used, emit);
            }
        }
        (None, None) => {
            for &(subj, obj) in kb.pairs(p.relation) {
                let (Slot::Var(sv), Slot::Var(ov)) = (p.subject, p.object) else {
                    unreachable!("unbound slots are variables");
                };
                if sv == ov {
                    if Node::Entity(subj) == obj {
                        bindings[sv] = Some(obj);
                        search(patterns, kb, bindings, used, emit);
                        bindings[sv] = None;
                    }
                    continue;
                }
                bindings[sv] = Some(Node::Entity(subj));
                bindings[ov] = Some(obj);
                search(patterns, kb, bindings, used, emit);
                bindings[sv] = None;
                bindings[ov] = None;
            }
        }
    }
    used[i] = false;
}

fn bind_and_recurse(
    slot: Slot,
    value: Node,
    patterns: &[Compiled],
    kb: &KnowledgeBase,
    bindings: &mut Vec<Option<Node>>,
    used: &mut Vec<bool>,
    emit: &mut dyn FnMut(&[Option<Node>]),
) {
    if let Slot::Var(v) = slot {
        bindings[v] = Some(value);
        search(patterns, kb, bindings, used, emit);
        bindings[v] = None;
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum SortClass {
    Entity,
    Literal(LiteralKind),
}

fn class(kb: &KnowledgeBase, n: Node) -> SortClass {
    match n {
        Node::Entity(_) => SortClass::Entity,
        Node::Literal(l) => SortClass::Literal(kb.literal_value(l).kind),
    }
}

fn check_orderable(keys: &[Node], kb: &KnowledgeBase, var: &str) -> Result<()> {
    let classes: BTreeSet<SortClass> = keys.iter().map(|&n| class(kb, n)).collect();
    let unorderable = || Error::Unorderable {
        var: var.to_string(),
    };
    if classes.len() > 1 {
        return Err(unorderable());
    }
    if classes.contains(&SortClass::Literal(LiteralKind::Number)) {
        for &k in keys {
            if let Node::Literal(l) = k {
                if kb.literal_value(l).value.parse::<f64>().map_or(true, f64::is_nan) {
                    return Err(unorderable());
                }
            }
        }
    }
    Ok(())
}

/// Typed comparison; callers must have checked the keys share one class.
pub(crate) fn compare_nodes(kb: &KnowledgeBase, a: Node, b: Node) -> Ordering {
    match (a, b) {
        (Node::Literal(x), Node::Literal(y)) => {
            let (x, y) = (kb.literal_value(x), kb.literal_value(y));
            if x.kind == LiteralKind::Number && y.kind == LiteralKind::Number {
                let (fx, fy) = (
                    x.value.parse::<f64>().unwrap_or(f64::NAN),
                    y.value.parse::<f64>().unwrap_or(f64::NAN),
                );
                fx.partial_cmp(&fy).unwrap_or(Ordering::Equal)
            } else {
                // ISO dates order lexicographically.
                x.value.cmp(&y.value)
            }
        }
        _ => kb.node_name(a).cmp(kb.node_name(b)),
    }
}
