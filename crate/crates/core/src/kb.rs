//! Immutable in-memory triple store.
//!
//! Entities, relations and literals are interned in sorted name order after the
//! whole input is read, so the resulting ids do not depend on input line order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::relation_tokens;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LiteralId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    Plain,
    Date,
    Number,
}

impl LiteralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LiteralKind::Plain => "plain",
            LiteralKind::Date => "date",
            LiteralKind::Number => "number",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(LiteralKind::Plain),
            "date" => Some(LiteralKind::Date),
            "number" => Some(LiteralKind::Number),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub value: String,
    pub kind: LiteralKind,
}

impl Literal {
    pub fn new(value: impl Into<String>, kind: LiteralKind) -> Self {
        Literal {
            value: value.into(),
            kind,
        }
    }
}

/// An owned object/answer value, independent of any KB's interning.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Entity(String),
    Literal(Literal),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Entity(e) => f.write_str(e),
            Value::Literal(l) => write!(f, "\"{}\"", l.value),
        }
    }
}

/// A KB node: the object position of a triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Entity(EntityId),
    Literal(LiteralId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
    Both,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "out" => Some(Direction::Out),
            "in" => Some(Direction::In),
            "both" => Some(Direction::Both),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawTriple {
    pub subject: String,
    pub relation: String,
    pub object: Value,
}

impl RawTriple {
    pub fn entity(s: &str, r: &str, o: &str) -> Self {
        RawTriple {
            subject: s.to_string(),
            relation: r.to_string(),
            object: Value::Entity(o.to_string()),
        }
    }

    pub fn literal(s: &str, r: &str, value: &str, kind: LiteralKind) -> Self {
        RawTriple {
            subject: s.to_string(),
            relation: r.to_string(),
            object: Value::Literal(Literal::new(value, kind)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: Node,
}

/// An incident edge as seen from one entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub relation: RelationId,
    pub neighbor: Node,
    pub direction: Direction,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    entity_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_tokens: Vec<Vec<String>>,
    relation_index: HashMap<String, RelationId>,
    literals: Vec<Literal>,
    literal_index: HashMap<Literal, LiteralId>,
    triples: Vec<Triple>,
    out_index: Vec<Vec<(RelationId, Node)>>,
    in_index: Vec<Vec<(RelationId, EntityId)>>,
    out_by_rel: HashMap<(EntityId, RelationId), Vec<Node>>,
    in_by_rel: HashMap<(Node, RelationId), Vec<EntityId>>,
    by_relation: Vec<Vec<(EntityId, Node)>>,
}

impl KnowledgeBase {
    /// Builds a KB from raw triples; duplicates collapse.
    pub fn from_triples<I: IntoIterator<Item = RawTriple>>(triples: I) -> Self {
        let distinct: BTreeSet<RawTriple> = triples.into_iter().collect();

        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        let mut literals = BTreeSet::new();
        for t in &distinct {
            entities.insert(t.subject.clone());
            relations.insert(t.relation.clone());
            match &t.object {
                Value::Entity(e) => {
                    entities.insert(e.clone());
                }
                Value::Literal(l) => {
                    literals.insert(l.clone());
                }
            }
        }

        let entity_names: Vec<String> = entities.into_iter().collect();
        let entity_index = entity_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), EntityId(i as u32)))
            .collect::<HashMap<_, _>>();
        let relation_names: Vec<String> = relations.into_iter().collect();
        let relation_tokens = relation_names.iter().map(|r| relation_tokens(r)).collect();
        let relation_index = relation_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), RelationId(i as u32)))
            .collect::<HashMap<_, _>>();
        let literals: Vec<Literal> = literals.into_iter().collect();
        let literal_index = literals
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), LiteralId(i as u32)))
            .collect::<HashMap<_, _>>();

        let mut kb = KnowledgeBase {
            out_index: vec![Vec::new(); entity_names.len()],
            in_index: vec![Vec::new(); entity_names.len()],
            by_relation: vec![Vec::new(); relation_names.len()],
            entity_names,
            entity_index,
            relation_names,
            relation_tokens,
            relation_index,
            literals,
            literal_index,
            ..Default::default()
        };

        for t in &distinct {
            let subject = kb.entity_index[&t.subject];
            let relation = kb.relation_index[&t.relation];
            let object = match &t.object {
                Value::Entity(e) => Node::Entity(kb.entity_index[e]),
                Value::Literal(l) => Node::Literal(kb.literal_index[l]),
            };
            kb.triples.push(Triple {
                subject,
                relation,
                object,
            });
        }
        kb.triples.sort();

        for t in &kb.triples {
            kb.out_index[t.subject.0 as usize].push((t.relation, t.object));
            kb.out_by_rel
                .entry((t.subject, t.relation))
                .or_default()
                .push(t.object);
            kb.in_by_rel
                .entry((t.object, t.relation))
                .or_default()
                .push(t.subject);
            kb.by_relation[t.relation.0 as usize].push((t.subject, t.object));
            if let Node::Entity(o) = t.object {
                kb.in_index[o.0 as usize].push((t.relation, t.subject));
            }
        }
        // Ids follow name order, so sorting ids sorts by name; literals go after entities.
        for edges in &mut kb.out_index {
            edges.sort();
        }
        for edges in &mut kb.in_index {
            edges.sort();
        }
        kb
    }

    /// Loads a tab-separated triple file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: &str| Error::MalformedTriple {
                line: line_no,
                message: message.to_string(),
            };
            if fields.len() != 3 && fields.len() != 4 {
                return Err(bad(&format!("expected 3 or 4 fields, found {}", fields.len())));
            }
            if fields[..3].iter().any(|f| f.is_empty()) {
                return Err(bad("empty field"));
            }
            let object = if fields.len() == 4 {
                let kind = LiteralKind::parse(fields[3])
                    .ok_or_else(|| bad(&format!("unknown literal type {:?}", fields[3])))?;
                Value::Literal(Literal::new(fields[2], kind))
            } else {
                Value::Entity(fields[2].to_string())
            };
            raw.push(RawTriple {
                subject: fields[0].to_string(),
                relation: fields[1].to_string(),
                object,
            });
        }
        Ok(Self::from_triples(raw))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(self.entity_name(t.subject));
            out.push('\t');
            out.push_str(self.relation_name(t.relation));
            out.push('\t');
            match t.object {
                Node::Entity(e) => out.push_str(self.entity_name(e)),
                Node::Literal(l) => {
                    let lit = &self.literals[l.0 as usize];
                    out.push_str(&lit.value);
                    out.push('\t');
                    out.push_str(lit.kind.as_str());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn raw_triples(&self) -> impl Iterator<Item = RawTriple> + '_ {
        self.triples.iter().map(move |t| RawTriple {
            subject: self.entity_name(t.subject).to_string(),
            relation: self.relation_name(t.relation).to_string(),
            object: self.value(t.object),
        })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn literal(&self, lit: &Literal) -> Option<LiteralId> {
        self.literal_index.get(lit).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.0 as usize]
    }

    /// Lowercase name tokens split on '.' and '_'.
    pub fn relation_tokens(&self, id: RelationId) -> &[String] {
        &self.relation_tokens[id.0 as usize]
    }

    pub fn literal_value(&self, id: LiteralId) -> &Literal {
        &self.literals[id.0 as usize]
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entity_names.len() as u32).map(EntityId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relation_names.len() as u32).map(RelationId)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn value(&self, node: Node) -> Value {
        match node {
            Node::Entity(e) => Value::Entity(self.entity_name(e).to_string()),
            Node::Literal(l) => Value::Literal(self.literal_value(l).clone()),
        }
    }

    /// Resolves an owned value to a node of this KB, if present.
    pub fn node(&self, value: &Value) -> Option<Node> {
        match value {
            Value::Entity(e) => self.entity(e).map(Node::Entity),
            Value::Literal(l) => self.literal(l).map(Node::Literal),
        }
    }

    pub fn node_name(&self, node: Node) -> &str {
        match node {
            Node::Entity(e) => self.entity_name(e),
            Node::Literal(l) => &self.literal_value(l).value,
        }
    }

    /// Objects reached from `subject` over `relation`.
    pub fn objects(&self, subject: EntityId, relation: RelationId) -> &[Node] {
        self.out_by_rel
            .get(&(subject, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Subjects reaching `object` over `relation`.
    pub fn subjects(&self, object: Node, relation: RelationId) -> &[EntityId] {
        self.in_by_rel
            .get(&(object, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Every (subject, object) pair carrying `relation`.
    pub fn pairs(&self, relation: RelationId) -> &[(EntityId, Node)] {
        &self.by_relation[relation.0 as usize]
    }

    pub fn contains(&self, subject: EntityId, relation: RelationId, object: Node) -> bool {
        self.objects(subject, relation).contains(&object)
    }

    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, Node)] {
        self.out_index
            .get(e.0 as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        self.in_index
            .get(e.0 as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Incident edges of `e`, sorted by relation name then neighbor name.
    /// An entity unknown to this KB has no edges.
    pub fn neighborhood(&self, e: EntityId, direction: Direction) -> Vec<Edge> {
        let mut edges = Vec::new();
        if matches!(direction, Direction::Out | Direction::Both) {
            edges.extend(self.out_edges(e).iter().map(|&(relation, neighbor)| Edge {
                relation,
                neighbor,
                direction: Direction::Out,
            }));
        }
        if matches!(direction, Direction::In | Direction::Both) {
            edges.extend(self.in_edges(e).iter().map(|&(relation, s)| Edge {
                relation,
                neighbor: Node::Entity(s),
                direction: Direction::In,
            }));
        }
        edges.sort_by(|a, b| {
            self.relation_name(a.relation)
                .cmp(self.relation_name(b.relation))
                .then_with(|| self.node_name(a.neighbor).cmp(self.node_name(b.neighbor)))
                .then_with(|| (a.direction as u8).cmp(&(b.direction as u8)))
        });
        edges
    }

    /// Name-level neighborhood lookup; unknown names yield an empty list.
    pub fn neighborhood_by_name(&self, entity: &str, direction: Direction) -> Vec<Edge> {
        match self.entity(entity) {
            Some(e) => self.neighborhood(e, direction),
            None => Vec::new(),
        }
    }

    pub fn has_edge(&self, s: EntityId, r: RelationId, direction: Direction) -> bool {
        let out = || self.out_by_rel.contains_key(&(s, r));
        let inc = || self.in_by_rel.contains_key(&(Node::Entity(s), r));
        match direction {
            Direction::Out => out(),
            Direction::In => inc(),
            Direction::Both => out() || inc(),
        }
    }

    /// Distinct relations on the edges of `e` in a direction.
    pub fn incident_relations(&self, e: EntityId, direction: Direction) -> BTreeSet<RelationId> {
        let mut rels = BTreeSet::new();
        if matches!(direction, Direction::Out | Direction::Both) {
            rels.extend(self.out_edges(e).iter().map(|(r, _)| *r));
        }
        if matches!(direction, Direction::In | Direction::Both) {
            rels.extend(self.in_edges(e).iter().map(|(r, _)| *r));
        }
        rels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JAMAICA: &str = "m.03_r3";
    const SPOKEN: &str = "location.country.languages_spoken";

    #[test]
    fn empty_file_gives_empty_kb() {
        let kb = KnowledgeBase::parse_tsv("").unwrap();
        assert_eq!(kb.len(), 0);
        assert_eq!(kb.num_entities(), 0);
        assert_eq!(kb.num_relations(), 0);
    }

    #[test]
    fn single_line_indexes_out_edge() {
        let kb = KnowledgeBase::parse_tsv("m.03_r3\tlocation.country.languages_spoken\tm.01428y\n")
            .unwrap();
        assert_eq!(kb.len(), 1);
        let j = kb.entity(JAMAICA).unwrap();
        let out = kb.neighborhood(j, Direction::Out);
        assert_eq!(out.len(), 1);
        assert_eq!(kb.relation_name(out[0].relation), SPOKEN);
        assert_eq!(kb.node_name(out[0].neighbor), "m.01428y");
    }

    #[test]
    fn duplicates_and_comments_are_dropped() {
        let text = "# comment\na\tr\tb\na\tr\tb\n\n";
        let kb = KnowledgeBase::parse_tsv(text).unwrap();
        assert_eq!(kb.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KnowledgeBase::parse_tsv("a\tr\tb\nbroken line\n").unwrap_err();
        match err {
            Error::MalformedTriple { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = KnowledgeBase::parse_tsv("a\tr\t1\tweird\n").unwrap_err();
        assert!(matches!(err, Error::MalformedTriple { line: 1, .. }));
    }

    #[test]
    fn literals_keep_their_type_tag() {
        let kb = KnowledgeBase::parse_tsv("f\tfilm.film.release_date\t1999-03-31\tdate\n").unwrap();
        let lit = Literal::new("1999-03-31", LiteralKind::Date);
        assert!(kb.literal(&lit).is_some());
        assert!(kb.to_tsv().contains("\tdate"));
    }

    #[test]
    fn neighborhood_symmetry_and_has_edge() {
        let kb = KnowledgeBase::from_triples([RawTriple::entity("a", "r", "b")]);
        let (a, b, r) = (
            kb.entity("a").unwrap(),
            kb.entity("b").unwrap(),
            kb.relation("r").unwrap(),
        );
        let out = kb.neighborhood(a, Direction::Out);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].relation, out[0].neighbor), (r, Node::Entity(b)));
        let inc = kb.neighborhood(b, Direction::In);
        assert_eq!((inc[0].relation, inc[0].neighbor), (r, Node::Entity(a)));
        assert!(kb.neighborhood(b, Direction::Out).is_empty());

        assert!(kb.has_edge(a, r, Direction::Out));
        assert!(kb.has_edge(b, r, Direction::In));
        assert!(!kb.has_edge(a, r, Direction::In));
    }

    #[test]
    fn has_edge_false_for_absent_relation() {
        let kb = KnowledgeBase::from_triples([
            RawTriple::entity("a", "r", "b"),
            RawTriple::entity("c", "r2", "b"),
        ]);
        let a = kb.entity("a").unwrap();
        let r2 = kb.relation("r2").unwrap();
        assert!(!kb.has_edge(a, r2, Direction::Out));
    }

    #[test]
    fn unknown_entity_has_empty_neighborhood() {
        let kb = KnowledgeBase::from_triples([RawTriple::entity("a", "r", "b")]);
        assert!(kb.neighborhood_by_name("m.nothing", Direction::Both).is_empty());
        assert!(kb.neighborhood(EntityId(99), Direction::Both).is_empty());
    }

    #[test]
    fn three_out_edges_sorted_by_relation() {
        let kb = KnowledgeBase::from_triples([
            RawTriple::entity(JAMAICA, "location.location.contains", "m.kingston"),
            RawTriple::entity(JAMAICA, SPOKEN, "m.01428y"),
            RawTriple::entity(JAMAICA, "location.country.currency_used", "m.jmd"),
            RawTriple::entity("m.other", SPOKEN, "m.01428y"),
        ]);
        let out = kb.neighborhood(kb.entity(JAMAICA).unwrap(), Direction::Out);
        let names: Vec<&str> = out.iter().map(|e| kb.relation_name(e.relation)).collect();
        assert_eq!(
            names,
            vec![
                "location.country.currency_used",
                SPOKEN,
                "location.location.contains"
            ]
        );
    }

    #[test]
    fn relation_tokens_split_on_dots_and_underscores() {
        let kb = KnowledgeBase::from_triples([RawTriple::entity("a", SPOKEN, "b")]);
        let r = kb.relation(SPOKEN).unwrap();
        assert_eq!(
            kb.relation_tokens(r),
            &["location", "country", "languages", "spoken"]
        );
    }
}
