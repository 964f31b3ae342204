use std::collections::HashMap;
use std::fmt;

use crate::kb::Literal;

use super::{LogicalForm, OrderLimit, SortDirection, Term, TriplePattern};

/// A term of a skeleton: entities become numbered anchors and variables are
/// renumbered in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SkelTerm {
    Anchor(usize),
    Var(usize),
    Literal(Literal),
}

/// One pattern with its relation abstracted; the slot index is the pattern index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkelPattern {
    pub subject: SkelTerm,
    pub object: SkelTerm,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Skeleton {
    pub select: usize,
    pub patterns: Vec<SkelPattern>,
    pub order_limit: Option<(usize, SortDirection, usize)>,
}

impl Skeleton {
    pub fn of(lf: &LogicalForm) -> Skeleton {
        fn term<'a>(
            t: &'a Term,
            vars: &mut HashMap<&'a str, usize>,
            anchors: &mut HashMap<&'a str, usize>,
        ) -> SkelTerm {
            match t {
                Term::Var(v) => {
                    let n = vars.len();
                    SkelTerm::Var(*vars.entry(v.as_str()).or_insert(n))
                }
                Term::Entity(e) => {
                    let n = anchors.len();
                    SkelTerm::Anchor(*anchors.entry(e.as_str()).or_insert(n))
                }
                Term::Literal(l) => SkelTerm::Literal(l.clone()),
            }
        }
        let mut vars = HashMap::new();
        let mut anchors = HashMap::new();
        let mut patterns = Vec::with_capacity(lf.patterns.len());
        for p in &lf.patterns {
            let subject = term(&p.subject, &mut vars, &mut anchors);
            let object = term(&p.object, &mut vars, &mut anchors);
            patterns.push(SkelPattern { subject, object });
        }
        let select = vars[lf.select.as_str()];
        let order_limit = lf
            .order_limit
            .as_ref()
            .map(|ol| (vars[ol.var.as_str()], ol.direction, ol.limit));
        Skeleton {
            select,
            patterns,
            order_limit,
        }
    }

    pub fn num_slots(&self) -> usize {
        self.patterns.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.patterns
            .iter()
            .flat_map(|p| [&p.subject, &p.object])
            .filter_map(|t| match t {
                SkelTerm::Anchor(a) => Some(a + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Distance of each slot from the nearest anchored (or literal) pattern.
    pub fn slot_depths(&self) -> Vec<usize> {
        let var_list = |p: &SkelPattern| -> Vec<usize> {
            [&p.subject, &p.object]
                .into_iter()
                .filter_map(|t| match t {
                    SkelTerm::Var(v) => Some(*v),
                    _ => None,
                })
                .collect()
        };
        let names: Vec<Vec<String>> = self
            .patterns
            .iter()
            .map(|p| var_list(p).iter().map(|v| v.to_string()).collect())
            .collect();
        super::pattern_depths(
            self.patterns
                .iter()
                .zip(&names)
                .map(|(p, n)| {
                    let ground = !matches!(p.subject, SkelTerm::Var(_))
                        || !matches!(p.object, SkelTerm::Var(_));
                    (ground, n.iter().map(String::as_str).collect())
                })
                .collect(),
        )
    }

    fn var_name(&self, v: usize) -> String {
        if v == self.select {
            return "x".into();
        }
        if let Some((sort, _, _)) = self.order_limit {
            if v == sort {
                return "sk0".into();
            }
        }
        const NAMES: [&str; 4] = ["y", "z", "w", "c"];
        // Rank among the remaining variables.
        let rank = (0..v)
            .filter(|&u| u != self.select && self.order_limit.map_or(true, |(s, _, _)| s != u))
            .count();
        NAMES
            .get(rank)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("v{rank}"))
    }

    /// Fills slots with relations and anchors with entity ids.
    pub fn instantiate<R: AsRef<str>, A: AsRef<str>>(
        &self,
        relations: &[R],
        anchors: &[A],
    ) -> LogicalForm {
        assert_eq!(relations.len(), self.num_slots(), "one relation per slot");
        assert!(anchors.len() >= self.num_anchors(), "too few anchors");
        let term = |t: &SkelTerm| match t {
            SkelTerm::Anchor(a) => Term::Entity(anchors[*a].as_ref().to_string()),
            SkelTerm::Var(v) => Term::Var(self.var_name(*v)),
            SkelTerm::Literal(l) => Term::Literal(l.clone()),
        };
        LogicalForm {
            select: self.var_name(self.select),
            patterns: self
                .patterns
                .iter()
                .zip(relations)
                .map(|(p, r)| TriplePattern {
                    subject: term(&p.subject),
                    relation: r.as_ref().to_string(),
                    object: term(&p.object),
                })
                .collect(),
            order_limit: self.order_limit.map(|(v, direction, limit)| OrderLimit {
                var: self.var_name(v),
                direction,
                limit,
            }),
        }
    }
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let term = |t: &SkelTerm| match t {
            SkelTerm::Anchor(a) => format!("<A{a}>"),
            SkelTerm::Var(v) => format!("?v{v}"),
            SkelTerm::Literal(l) => format!("{:?}", l.value),
        };
        write!(f, "SELECT ?v{} {{ ", self.select)?;
        for (i, p) in self.patterns.iter().enumerate() {
            write!(f, "{} [{}] {} . ", term(&p.subject), i, term(&p.object))?;
        }
        f.write_str("}")?;
        if let Some((v, d, n)) = self.order_limit {
            write!(f, " ORDER {:?} ?v{v} LIMIT {n}", d)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::lf::parse;

    #[test]
    fn same_relation_different_entity() {
        let rihanna = parse("SELECT DISTINCT ?x WHERE { ns:m.06wrpx ns:people.person.sibling_s ?x . }")
            .unwrap();
        let bieber = parse("SELECT DISTINCT ?x WHERE { ns:m.06w2sn5 ns:people.person.sibling_s ?x . }")
            .unwrap();
        assert_eq!(rihanna.skeleton(), bieber.skeleton());
    }

    #[test]
    fn different_relation_same_structure() {
        let a = parse("SELECT DISTINCT ?x WHERE { ns:m.a ns:people.person.sibling_s ?x . }").unwrap();
        let b = parse("SELECT DISTINCT ?q WHERE { ns:m.b ns:people.person.parents ?q . }").unwrap();
        assert_eq!(a.skeleton(), b.skeleton());
    }

    #[test]
    fn pattern_count_matters() {
        let a = parse("SELECT DISTINCT ?x WHERE { ns:m.a ns:r ?x . }").unwrap();
        let b = parse("SELECT DISTINCT ?x WHERE { ns:m.a ns:r ?y . ?y ns:s ?x . }").unwrap();
        assert_ne!(a.skeleton(), b.skeleton());
    }

    #[test]
    fn instantiate_round_trips_canonical_names() {
        let lf = parse(
            "SELECT DISTINCT ?x WHERE { ns:m.a ns:r1 ?y . ?y ns:r2 ?x . ?x ns:d ?sk0 . } ORDER BY ?sk0 LIMIT 1",
        )
        .unwrap();
        let sk = lf.skeleton();
        assert_eq!(sk.num_anchors(), 1);
        assert_eq!(sk.slot_depths(), vec![0, 1, 2]);
        let back = sk.instantiate(&["r1", "r2", "d"], &["m.a"]);
        assert_eq!(back, lf);
    }

    #[test]
    fn repeated_entity_shares_anchor() {
        let lf = parse("SELECT DISTINCT ?x WHERE { ns:m.a ns:r ?x . ?x ns:s ns:m.a . }").unwrap();
        assert_eq!(lf.skeleton().num_anchors(), 1);
    }
}
