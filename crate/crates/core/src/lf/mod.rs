//! Logical forms: a conjunctive SPARQL subset with optional ORDER BY/LIMIT.

mod exec;
mod parse;
mod skeleton;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{Literal, LiteralKind, Value};

pub use exec::execute;
pub use parse::parse;
pub use skeleton::{SkelPattern, SkelTerm, Skeleton};

/// A subject or object position of a triple pattern. Variable names are stored
/// without the leading '?'.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Entity(String),
    Var(String),
    Literal(Literal),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.trim_start_matches('?').to_string())
    }

    pub fn entity(name: &str) -> Self {
        Term::Entity(name.to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_ground(&self) -> bool {
        !matches!(self, Term::Var(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriplePattern {
    pub subject: Term,
    pub relation: String,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(subject: Term, relation: &str, object: Term) -> Self {
        TriplePattern {
            subject,
            relation: relation.to_string(),
            object,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.subject.as_var().into_iter().chain(self.object.as_var())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrderLimit {
    pub var: String,
    pub direction: SortDirection,
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogicalForm {
    pub select: String,
    pub patterns: Vec<TriplePattern>,
    pub order_limit: Option<OrderLimit>,
}

impl LogicalForm {
    /// Builds an LF and checks its invariants.
    pub fn new(
        select: &str,
        patterns: Vec<TriplePattern>,
        order_limit: Option<OrderLimit>,
    ) -> Result<Self> {
        let lf = LogicalForm {
            select: select.trim_start_matches('?').to_string(),
            patterns,
            order_limit,
        };
        lf.validate()?;
        Ok(lf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(Error::InvalidLogicalForm("empty WHERE body".into()));
        }
        let vars = self.vars();
        if !vars.contains(self.select.as_str()) {
            return Err(Error::InvalidLogicalForm(format!(
                "selected variable ?{} does not occur in any pattern",
                self.select
            )));
        }
        if let Some(ol) = &self.order_limit {
            if !vars.contains(ol.var.as_str()) {
                return Err(Error::InvalidLogicalForm(format!(
                    "sort variable ?{} does not occur in any pattern",
                    ol.var
                )));
            }
            if ol.limit == 0 {
                return Err(Error::InvalidLogicalForm("LIMIT must be positive".into()));
            }
        }
        for p in &self.patterns {
            if matches!(p.subject, Term::Literal(_)) {
                return Err(Error::InvalidLogicalForm(
                    "literal in subject position".into(),
                ));
            }
            for v in p.vars() {
                if v.is_empty() || !v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(Error::InvalidLogicalForm(format!("bad variable name ?{v}")));
                }
            }
        }
        Ok(())
    }

    pub fn vars(&self) -> BTreeSet<&str> {
        self.patterns.iter().flat_map(|p| p.vars()).collect()
    }

    /// Exact set of relations used by the patterns.
    pub fn relations(&self) -> BTreeSet<&str> {
        self.patterns.iter().map(|p| p.relation.as_str()).collect()
    }

    /// Entities mentioned anywhere in the patterns.
    pub fn entities(&self) -> BTreeSet<&str> {
        self.patterns
            .iter()
            .flat_map(|p| [&p.subject, &p.object])
            .filter_map(|t| match t {
                Term::Entity(e) => Some(e.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton::of(self)
    }

    /// Distance (in patterns) of each pattern from the nearest pattern that
    /// touches a ground term. Patterns unreachable from any ground term get
    /// `usize::MAX`.
    pub fn pattern_depths(&self) -> Vec<usize> {
        pattern_depths(
            self.patterns
                .iter()
                .map(|p| {
                    let ground = p.subject.is_ground() || p.object.is_ground();
                    let vars: Vec<&str> = p.vars().collect();
                    (ground, vars)
                })
                .collect(),
        )
    }

    /// Canonical text; `parse(&lf.to_string())` reproduces `lf`.
    pub fn print(&self) -> String {
        self.to_string()
    }

    /// Replaces ground entities according to `map`, leaving others untouched.
    pub fn substitute_entities(&self, map: &BTreeMap<String, String>) -> LogicalForm {
        let sub = |t: &Term| match t {
            Term::Entity(e) => Term::Entity(map.get(e).cloned().unwrap_or_else(|| e.clone())),
            other => other.clone(),
        };
        LogicalForm {
            select: self.select.clone(),
            patterns: self
                .patterns
                .iter()
                .map(|p| TriplePattern {
                    subject: sub(&p.subject),
                    relation: p.relation.clone(),
                    object: sub(&p.object),
                })
                .collect(),
            order_limit: self.order_limit.clone(),
        }
    }

    /// Copy with the relation of pattern `slot` replaced.
    pub fn with_relation(&self, slot: usize, relation: &str) -> LogicalForm {
        let mut lf = self.clone();
        lf.patterns[slot].relation = relation.to_string();
        lf
    }
}

pub(crate) fn pattern_depths(patterns: Vec<(bool, Vec<&str>)>) -> Vec<usize> {
    let n = patterns.len();
    let mut depth = vec![usize::MAX; n];
    for (i, (ground, _)) in patterns.iter().enumerate() {
        if *ground {
            depth[i] = 0;
        }
    }
    // Breadth-first over patterns linked by shared variables.
    let mut level = 0;
    loop {
        let frontier: Vec<usize> = (0..n).filter(|&i| depth[i] == level).collect();
        if frontier.is_empty() {
            break;
        }
        for j in 0..n {
            if depth[j] != usize::MAX {
                continue;
            }
            let linked = frontier
                .iter()
                .any(|&i| patterns[i].1.iter().any(|v| patterns[j].1.contains(v)));
            if linked {
                depth[j] = level + 1;
            }
        }
        level += 1;
    }
    depth
}

fn fmt_term(t: &Term, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match t {
        Term::Entity(e) => write!(f, "ns:{e}"),
        Term::Var(v) => write!(f, "?{v}"),
        Term::Literal(l) => fmt_literal(l, f),
    }
}

fn fmt_literal(l: &Literal, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let escaped = l.value.replace('\\', "\\\\").replace('"', "\\\"");
    match l.kind {
        LiteralKind::Plain => write!(f, "\"{escaped}\""),
        LiteralKind::Date => write!(f, "\"{escaped}\"^^xsd:dateTime"),
        LiteralKind::Number => write!(f, "\"{escaped}\"^^xsd:decimal"),
    }
}

impl fmt::Display for LogicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SELECT DISTINCT ?{} WHERE {{ ", self.select)?;
        for p in &self.patterns {
            fmt_term(&p.subject, f)?;
            write!(f, " ns:{} ", p.relation)?;
            fmt_term(&p.object, f)?;
            f.write_str(" . ")?;
        }
        f.write_str("}")?;
        if let Some(ol) = &self.order_limit {
            match ol.direction {
                SortDirection::Asc => write!(f, " ORDER BY ?{}", ol.var)?,
                SortDirection::Desc => write!(f, " ORDER BY DESC(?{})", ol.var)?,
            }
            write!(f, " LIMIT {}", ol.limit)?;
        }
        Ok(())
    }
}

impl Serialize for LogicalForm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LogicalForm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// The answers of a logical form: a set of values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerSet(pub BTreeSet<Value>);

impl AnswerSet {
    pub fn new() -> Self {
        AnswerSet(BTreeSet::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: &Value) -> bool {
        self.0.contains(v)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Value> {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &AnswerSet) -> usize {
        self.0.intersection(&other.0).count()
    }
}

impl FromIterator<Value> for AnswerSet {
    fn from_iter<I: IntoIterator<Item = Value>>(iter: I) -> Self {
        AnswerSet(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const RELIGION_LF: &str = "SELECT DISTINCT ?x WHERE { ?c ns:religion.religion.notable_figures ns:m.02gjv7 . ?c ns:religion.religion.texts ?x . }";

    #[test]
    fn relations_of_single_pattern() {
        let lf = parse(
            "SELECT DISTINCT ?x WHERE { ns:m.03_r3 ns:location.country.languages_spoken ?x . }",
        )
        .unwrap();
        assert_eq!(
            lf.relations().into_iter().collect::<Vec<_>>(),
            vec!["location.country.languages_spoken"]
        );
    }

    #[test]
    fn relations_of_repeated_relation_is_singleton() {
        let lf = parse("SELECT DISTINCT ?x WHERE { ns:a ns:r ?y . ?y ns:r ?x . }").unwrap();
        assert_eq!(lf.relations().len(), 1);
    }

    #[test]
    fn relations_of_religion_example() {
        let lf = parse(RELIGION_LF).unwrap();
        let rels: Vec<_> = lf.relations().into_iter().collect();
        assert_eq!(
            rels,
            vec![
                "religion.religion.notable_figures",
                "religion.religion.texts"
            ]
        );
    }

    #[test]
    fn depths_follow_shared_variables() {
        let lf = parse(
            "SELECT DISTINCT ?x WHERE { ns:a ns:r1 ?y . ?y ns:r2 ?z . ?z ns:r3 ?x . ?q ns:r4 ?w . }",
        )
        .unwrap();
        assert_eq!(lf.pattern_depths(), vec![0, 1, 2, usize::MAX]);
    }

    #[test]
    fn print_puts_order_limit_once_at_end() {
        let text = "SELECT DISTINCT ?x WHERE { ns:a ns:r ?x . ?x ns:d ?sk0 . } ORDER BY xsd:datetime(?sk0) LIMIT 1";
        let lf = parse(text).unwrap();
        let printed = lf.print();
        assert!(printed.ends_with("} ORDER BY ?sk0 LIMIT 1"));
        assert_eq!(printed.matches("ORDER BY").count(), 1);
        assert_eq!(parse(&printed).unwrap(), lf);
    }

    #[test]
    fn validate_rejects_unbound_select() {
        let p = TriplePattern::new(Term::entity("a"), "r", Term::var("y"));
        assert!(LogicalForm::new("x", vec![p], None).is_err());
    }
}
