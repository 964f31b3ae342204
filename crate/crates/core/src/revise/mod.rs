//! Revision of non-executing logical forms: relations without a satisfying
//! edge are replaced by similar relations found on the bound entities'
//! incident edges. The pattern structure is never changed.

mod transe;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use transe::{train_transe, EmbeddingTable, IndexTriple, TransEConfig, TransEGradient, TransEReport};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Node, RelationId};
use crate::lf::{execute, AnswerSet, LogicalForm, Term};
use crate::text::{cosine, RelationLexicon};

/// Upper bound on partial bindings kept per beam state.
const MAX_ROWS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviseMode {
    Off,
    Surface,
    Transe,
}

impl ReviseMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(ReviseMode::Off),
            "surface" => Some(ReviseMode::Surface),
            "transe" => Some(ReviseMode::Transe),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReviseMode::Off => "off",
            ReviseMode::Surface => "surface",
            ReviseMode::Transe => "transe",
        }
    }
}

/// Relation-to-relation similarity over one KB's vocabulary.
#[derive(Clone, Debug)]
pub struct RelationSimilarity<'a> {
    kb: &'a KnowledgeBase,
    lexicon: RelationLexicon,
    transe: Option<&'a EmbeddingTable>,
    /// Relations whose TransE vector is used; others fall back to surface.
    usable: Vec<bool>,
}

impl<'a> RelationSimilarity<'a> {
    /// tf-idf cosine over relation name tokens.
    pub fn surface(kb: &'a KnowledgeBase) -> Self {
        RelationSimilarity {
            kb,
            lexicon: RelationLexicon::new(kb.relation_names().iter().map(String::as_str)),
            transe: None,
            usable: Vec::new(),
        }
    }

    /// Cosine of TransE relation vectors. Relations without a fitted vector,
    /// or whose translation collapsed to less than half the median norm (as
    /// happens for relations between same-typed entities), fall back to
    /// surface similarity.
    pub fn transe(kb: &'a KnowledgeBase, table: &'a EmbeddingTable) -> Result<Self> {
        if table.num_relations() != kb.num_relations() || table.num_entities() != kb.num_entities() {
            return Err(Error::VersionMismatch(format!(
                "embeddings cover {} entities / {} relations, KB has {} / {}",
                table.num_entities(),
                table.num_relations(),
                kb.num_entities(),
                kb.num_relations()
            )));
        }
        let norms: Vec<f64> = (0..table.num_relations()).map(|r| table.relation_norm(r)).collect();
        let mut fitted: Vec<f64> = (0..norms.len()).filter(|&r| table.is_trained(r)).map(|r| norms[r]).collect();
        fitted.sort_by(f64::total_cmp);
        let median = fitted.get(fitted.len() / 2).copied().unwrap_or(0.0);
        let usable = (0..norms.len())
            .map(|r| table.is_trained(r) && norms[r] >= 0.5 * median)
            .collect();
        Ok(RelationSimilarity {
            transe: Some(table),
            usable,
            ..Self::surface(kb)
        })
    }

    pub fn is_transe(&self) -> bool {
        self.transe.is_some()
    }

    /// Whether `relation` is compared through its TransE vector.
    pub fn uses_embedding(&self, relation: &str) -> bool {
        self.kb
            .relation(relation)
            .is_some_and(|r| self.usable.get(r.0 as usize).copied().unwrap_or(false))
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        if let Some(table) = self.transe {
            if let (Some(x), Some(y)) = (self.kb.relation(a), self.kb.relation(b)) {
                let (x, y) = (x.0 as usize, y.0 as usize);
                if self.usable[x] && self.usable[y] {
                    return table.relation_cosine(x, y);
                }
            }
        }
        cosine(&self.lexicon.relation_vector(a), &self.lexicon.relation_vector(b))
    }

    /// Other relations of the KB ranked by similarity to `relation`.
    pub fn nearest(&self, relation: &str, k: usize) -> Vec<(&'a str, f64)> {
        let mut out: Vec<(&'a str, f64)> = self
            .kb
            .relation_names()
            .iter()
            .filter(|r| r.as_str() != relation)
            .map(|r| (r.as_str(), self.similarity(relation, r)))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        out.truncate(k);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub slot: usize,
    pub original: String,
    pub replacement: String,
    pub similarity: f64,
}

impl Substitution {
    pub fn is_identity(&self) -> bool {
        self.original == self.replacement
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    #[serde(rename = "sparql")]
    pub lf: LogicalForm,
    /// One entry per aligned slot, in processing order.
    pub substitutions: Vec<Substitution>,
    pub executed: bool,
    pub answers: AnswerSet,
    /// Slots between two never-bound variables, left as predicted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unaligned: Vec<usize>,
}

impl AlignmentResult {
    pub fn changed(&self) -> bool {
        self.substitutions.iter().any(|s| !s.is_identity())
    }
}

#[derive(Clone, Copy)]
enum End {
    Const(Option<Node>),
    Var(usize),
}

type Row = Vec<Option<Node>>;

#[derive(Clone)]
struct State {
    relations: Vec<String>,
    substitutions: Vec<Substitution>,
    score: f64,
    rows: Vec<Row>,
}

/// Pattern indices with a bound endpoint first; the rest are unanchorable.
fn processing_order(lf: &LogicalForm) -> (Vec<usize>, Vec<usize>) {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    let mut done = vec![false; lf.patterns.len()];
    let mut order = Vec::new();
    let is_bound = |t: &Term, bound: &BTreeSet<&str>| match t {
        Term::Var(v) => bound.contains(v.as_str()),
        _ => true,
    };
    loop {
        let next = (0..lf.patterns.len()).find(|&i| {
            !done[i] && (is_bound(&lf.patterns[i].subject, &bound) || is_bound(&lf.patterns[i].object, &bound))
        });
        let Some(i) = next else { break };
        done[i] = true;
        order.push(i);
        bound.extend(lf.patterns[i].vars());
    }
    let rest = (0..lf.patterns.len()).filter(|&i| !done[i]).collect();
    (order, rest)
}

fn resolve(t: &Term, kb: &KnowledgeBase, vars: &HashMap<&str, usize>) -> End {
    match t {
        Term::Var(v) => End::Var(vars[v.as_str()]),
        Term::Entity(e) => End::Const(kb.entity(e).map(Node::Entity)),
        Term::Literal(l) => End::Const(kb.literal(l).map(Node::Literal)),
    }
}

fn value_at(end: End, row: &Row) -> Option<Option<Node>> {
    match end {
        End::Const(n) => Some(n),
        End::Var(v) => row[v].map(Some),
    }
}

/// Rows extended by one pattern with relation `r`.
fn extend(rows: &[Row], kb: &KnowledgeBase, s: End, r: RelationId, o: End) -> Vec<Row> {
    let mut out = Vec::new();
    for row in rows {
        let sv = value_at(s, row);
        let ov = value_at(o, row);
        let mut push = |subj: Node, obj: Node| {
            let mut next = row.clone();
            if let End::Var(v) = s {
                next[v] = Some(subj);
            }
            if let End::Var(v) = o {
                match next[v] {
                    Some(existing) if existing != obj => return,
                    _ => next[v] = Some(obj),
                }
            }
            out.push(next);
        };
        match (sv, ov) {
            (Some(None), _) | (_, Some(None)) => {}
            (Some(Some(Node::Entity(se))), Some(Some(on))) => {
                if kb.contains(se, r, on) {
                    push(Node::Entity(se), on);
                }
            }
            (Some(Some(Node::Entity(se))), None) => {
                for &on in kb.objects(se, r) {
                    push(Node::Entity(se), on);
                }
            }
            (Some(Some(Node::Literal(_))), _) => {}
            (None, Some(Some(on))) => {
                for &se in kb.subjects(on, r) {
                    push(Node::Entity(se), on);
                }
            }
            (None, None) => {
                for &(se, on) in kb.pairs(r) {
                    push(Node::Entity(se), on);
                }
            }
        }
        if out.len() >= MAX_ROWS {
            out.truncate(MAX_ROWS);
            break;
        }
    }
    out
}

/// Relations on edges leaving bound subjects, entering bound objects, or
/// connecting both when both ends are bound.
fn incident(rows: &[Row], kb: &KnowledgeBase, s: End, o: End) -> BTreeSet<RelationId> {
    let mut rels = BTreeSet::new();
    for row in rows {
        match (value_at(s, row), value_at(o, row)) {
            (Some(Some(Node::Entity(se))), Some(Some(on))) => {
                rels.extend(kb.out_edges(se).iter().filter(|(_, n)| *n == on).map(|(r, _)| *r));
            }
            (Some(Some(Node::Entity(se))), None) => {
                rels.extend(kb.out_edges(se).iter().map(|(r, _)| *r));
            }
            (None, Some(Some(Node::Entity(oe)))) => {
                rels.extend(kb.in_edges(oe).iter().map(|(r, _)| *r));
            }
            (None, Some(Some(lit @ Node::Literal(_)))) => {
                rels.extend(kb.relations().filter(|&r| !kb.subjects(lit, r).is_empty()));
            }
            _ => {}
        }
    }
    rels
}

/// Aligns each pattern whose relation has no satisfying edge to the most
/// similar relation on the bound entities' incident edges, keeping the
/// `beam` best joint substitutions. Returns the best one that executes to a
/// nonempty answer, or the original LF with `executed = false`.
pub fn align(
    lf: &LogicalForm,
    kb: &KnowledgeBase,
    similarity: &RelationSimilarity,
    beam: usize,
) -> Result<AlignmentResult> {
    lf.validate()?;
    let beam = beam.max(1);
    let vars: HashMap<&str, usize> = lf.vars().into_iter().enumerate().map(|(i, v)| (v, i)).collect();
    let (order, unaligned) = processing_order(lf);
    let mut beam_states = vec![State {
        relations: lf.patterns.iter().map(|p| p.relation.clone()).collect(),
        substitutions: Vec::new(),
        score: 0.0,
        rows: vec![vec![None; vars.len()]],
    }];

    for &slot in &order {
        let p = &lf.patterns[slot];
        let s = resolve(&p.subject, kb, &vars);
        let o = resolve(&p.object, kb, &vars);
        let mut next = Vec::new();
        for state in &beam_states {
            let predicted = &state.relations[slot];
            let direct = kb
                .relation(predicted)
                .map(|r| extend(&state.rows, kb, s, r, o))
                .unwrap_or_default();
            let options: Vec<(String, f64, Vec<Row>)> = if !direct.is_empty() {
                vec![(predicted.clone(), 1.0, direct)]
            } else {
                incident(&state.rows, kb, s, o)
                    .into_iter()
                    .map(|r| {
                        let name = kb.relation_name(r).to_string();
                        let sim = similarity.similarity(predicted, &name);
                        (name, sim, extend(&state.rows, kb, s, r, o))
                    })
                    .filter(|(_, _, rows)| !rows.is_empty())
                    .collect()
            };
            for (replacement, sim, rows) in options {
                let mut st = state.clone();
                st.substitutions.push(Substitution {
                    slot,
                    original: predicted.clone(),
                    replacement: replacement.clone(),
                    similarity: sim,
                });
                st.relations[slot] = replacement;
                st.score += sim;
                st.rows = rows;
                next.push(st);
            }
        }
        next.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.relations.cmp(&b.relations)));
        next.truncate(beam);
        beam_states = next;
        if beam_states.is_empty() {
            break;
        }
    }

    for state in beam_states {
        let mut revised = lf.clone();
        for (p, r) in revised.patterns.iter_mut().zip(&state.relations) {
            p.relation = r.clone();
        }
        match execute(&revised, kb) {
            Ok(answers) if !answers.is_empty() => {
                return Ok(AlignmentResult {
                    lf: revised,
                    substitutions: state.substitutions,
                    executed: true,
                    answers,
                    unaligned,
                });
            }
            _ => {}
        }
    }
    Ok(AlignmentResult {
        lf: lf.clone(),
        substitutions: Vec::new(),
        executed: false,
        answers: execute(lf, kb).unwrap_or_default(),
        unaligned,
    })
}

/// Rank of each relation among the nearest neighbours of its planted partner,
/// for `(relation, partner)` pairs. `None` when outside the top `k`.
pub fn neighbour_ranks(
    similarity: &RelationSimilarity,
    pairs: &[(String, String)],
    k: usize,
) -> BTreeMap<(String, String), Option<usize>> {
    pairs
        .iter()
        .map(|(a, b)| {
            let rank = similarity.nearest(a, k).iter().position(|(r, _)| r == b);
            ((a.clone(), b.clone()), rank)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::RawTriple;
    use crate::lf::parse;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_triples([
            RawTriple::entity("m.actor", "tv.tv_actor.starring_roles", "m.show"),
            RawTriple::entity("m.actor", "people.person.nationality", "m.land"),
            RawTriple::entity("m.show", "tv.tv_program.original_network", "m.net"),
            RawTriple::entity("m.other", "tv.tv_character.appeared_in_tv_program", "m.show2"),
        ])
    }

    #[test]
    fn executable_lf_aligns_with_itself() {
        let kb = kb();
        let sim = RelationSimilarity::surface(&kb);
        let lf = parse("SELECT DISTINCT ?x WHERE { ns:m.actor ns:tv.tv_actor.starring_roles ?x . }").unwrap();
        let r = align(&lf, &kb, &sim, 5).unwrap();
        assert!(r.executed);
        assert_eq!(r.lf, lf);
        assert!(r.substitutions.iter().all(|s| s.is_identity() && s.similarity == 1.0));
    }

    #[test]
    fn missing_relation_is_replaced_locally() {
        let kb = kb();
        let sim = RelationSimilarity::surface(&kb);
        let lf = parse(
            "SELECT DISTINCT ?x WHERE { ns:m.actor ns:tv.tv_character.appeared_in_tv_program ?y . ?y ns:tv.tv_program.original_network ?x . }",
        )
        .unwrap();
        let r = align(&lf, &kb, &sim, 5).unwrap();
        assert!(r.executed);
        assert_eq!(r.lf.patterns[0].relation, "tv.tv_actor.starring_roles");
        assert_eq!(r.lf.skeleton(), lf.skeleton());
        assert_eq!(r.substitutions.len(), 2);
        assert!(r.changed());
    }

    #[test]
    fn no_incident_edges_returns_original() {
        let kb = kb();
        let sim = RelationSimilarity::surface(&kb);
        let lf = parse("SELECT DISTINCT ?x WHERE { ns:m.net ns:a.b.c ?x . }").unwrap();
        let r = align(&lf, &kb, &sim, 5).unwrap();
        assert!(!r.executed);
        assert_eq!(r.lf, lf);
        assert!(r.answers.is_empty());
    }

    #[test]
    fn floating_pattern_is_reported() {
        let kb = kb();
        let sim = RelationSimilarity::surface(&kb);
        let lf = parse("SELECT DISTINCT ?x WHERE { ?x ns:tv.tv_actor.starring_roles ?y . }").unwrap();
        let r = align(&lf, &kb, &sim, 5).unwrap();
        assert_eq!(r.unaligned, vec![0]);
    }

    #[test]
    fn surface_similarity_examples() {
        let kb = KnowledgeBase::from_triples([
            RawTriple::entity("a", "people.person.sibling_s", "b"),
            RawTriple::entity("a", "fictional_universe.fictional_character.sibling_s", "b"),
            RawTriple::entity("a", "location.country.languages_spoken", "b"),
            RawTriple::entity("a", "film.film.genre", "b"),
        ]);
        let sim = RelationSimilarity::surface(&kb);
        let s = |a: &str, b: &str| sim.similarity(a, b);
        assert_eq!(s("film.film.genre", "film.film.genre"), 1.0);
        assert!(
            s("people.person.sibling_s", "fictional_universe.fictional_character.sibling_s")
                > s("people.person.sibling_s", "location.country.languages_spoken")
        );
        assert_eq!(s("film.film.genre", "location.country.languages_spoken"), 0.0);
    }
}
