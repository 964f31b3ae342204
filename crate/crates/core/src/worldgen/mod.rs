//! Deterministic synthetic worlds: a typed KB, its incomplete copy, an alias
//! table, and template-generated question/LF datasets.

mod dataset;
mod names;
pub mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, LiteralKind, RawTriple};
use crate::linker::AliasTable;

pub use dataset::{
    generate_dataset, read_jsonl, write_jsonl, Dataset, DatasetExample, QuestionKind, SplitKind,
    SplitSpec, TemplateConfig,
};
pub use schema::{EntityType, NameStyle, RelationSchema, DATE};

use names::{entity_id, iso_date, Namer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub types: Vec<EntityType>,
    pub relations: Vec<RelationSchema>,
    /// Paraphrase templates used per question form (1 to 3).
    pub n_question_templates: usize,
    /// Fraction of KB edges withheld from the incomplete copy.
    pub drop_edge_rate: f64,
    /// Fraction of entities that receive a shared, ambiguous alias.
    pub ambiguous_alias_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            n_entities: 1500,
            types: schema::default_types(),
            relations: schema::default_relations(),
            n_question_templates: 3,
            drop_edge_rate: 0.0,
            ambiguous_alias_rate: 0.05,
        }
    }
}

impl WorldConfig {
    pub fn with_seed(seed: u64) -> Self {
        WorldConfig {
            seed,
            ..Self::default()
        }
    }

    /// Keeps only the named relations and the entity types they reference.
    pub fn restricted_to(mut self, relations: &[&str]) -> Self {
        self.relations.retain(|r| relations.contains(&r.name.as_str()));
        let used: BTreeSet<String> = self
            .relations
            .iter()
            .flat_map(|r| [r.domain.clone(), r.range.clone()])
            .collect();
        self.types.retain(|t| used.contains(&t.name));
        self
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSchema> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn entity_type(&self, name: &str) -> Option<&EntityType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_entities == 0 {
            return bad("n_entities must be positive".into());
        }
        if self.relations.is_empty() {
            return bad("no relations".into());
        }
        if !(1..=3).contains(&self.n_question_templates) {
            return bad("n_question_templates must be in 1..=3".into());
        }
        if !(0.0..1.0).contains(&self.drop_edge_rate) {
            return bad(format!("drop_edge_rate {} not in [0, 1)", self.drop_edge_rate));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_alias_rate) {
            return bad("ambiguous_alias_rate not in [0, 1]".into());
        }
        let mut seen = BTreeSet::new();
        for t in &self.types {
            if t.weight <= 0.0 || !t.weight.is_finite() {
                return bad(format!("type {} has non-positive weight", t.name));
            }
            if !seen.insert(t.name.as_str()) || t.name == DATE {
                return bad(format!("duplicate or reserved type name {}", t.name));
            }
        }
        let mut rels = BTreeSet::new();
        for r in &self.relations {
            if !rels.insert(r.name.as_str()) {
                return bad(format!("duplicate relation {}", r.name));
            }
            if self.entity_type(&r.domain).is_none() {
                return bad(format!("relation {}: unknown domain type {}", r.name, r.domain));
            }
            if r.range != DATE && self.entity_type(&r.range).is_none() {
                return bad(format!("relation {}: unknown range type {}", r.name, r.range));
            }
            if r.fanout.0 == 0 || r.fanout.0 > r.fanout.1 {
                return bad(format!("relation {}: bad fan-out {:?}", r.name, r.fanout));
            }
            if !(0.0..=1.0).contains(&r.coverage) {
                return bad(format!("relation {}: coverage not in [0, 1]", r.name));
            }
            if let Some(s) = &r.synonym_of {
                match self.relation(s) {
                    Some(base) if base.synonym_of.is_none() => {
                        if base.domain != r.domain || base.range != r.range {
                            return bad(format!("synonym {} differs in type from {}", r.name, s));
                        }
                    }
                    _ => return bad(format!("relation {}: bad synonym target {}", r.name, s)),
                }
            }
        }
        for t in &self.types {
            let touched = self.relations.iter().any(|r| r.domain == t.name || r.range == t.name);
            if !touched {
                return bad(format!("type {} is not used by any relation", t.name));
            }
        }
        if self.n_entities < self.types.len() {
            return bad(format!(
                "{} entities cannot cover {} types",
                self.n_entities,
                self.types.len()
            ));
        }
        Ok(())
    }

    /// Entities per type by largest remainder, at least one each.
    fn type_counts(&self) -> Vec<usize> {
        let total: f64 = self.types.iter().map(|t| t.weight).sum();
        let spare = (self.n_entities - self.types.len()) as f64;
        let shares: Vec<f64> = self.types.iter().map(|t| spare * t.weight / total).collect();
        let mut counts: Vec<usize> = shares.iter().map(|s| 1 + s.floor() as usize).collect();
        let mut rest = self.n_entities - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for i in order.into_iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInfo {
    pub id: String,
    pub name: String,
    pub kind: String,
}

#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub full: KnowledgeBase,
    pub incomplete: KnowledgeBase,
    pub aliases: AliasTable,
    pub entities: Vec<EntityInfo>,
    by_id: BTreeMap<String, usize>,
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl World {
    fn new(
        config: WorldConfig,
        full: KnowledgeBase,
        incomplete: KnowledgeBase,
        aliases: AliasTable,
        entities: Vec<EntityInfo>,
    ) -> Self {
        let by_id = entities.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        World {
            config,
            full,
            incomplete,
            aliases,
            entities,
            by_id,
        }
    }

    pub fn entity_info(&self, id: &str) -> Option<&EntityInfo> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    /// Entities of one type in generation order.
    pub fn entities_of(&self, kind: &str) -> impl Iterator<Item = &EntityInfo> {
        let kind = kind.to_string();
        self.entities.iter().filter(move |e| e.kind == kind)
    }

    /// Writes `world.json`, `kb.tsv`, `kb_incomplete.tsv`, `aliases.tsv` and
    /// `entities.tsv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        write("world.json", serde_json::to_string_pretty(&self.config)? + "\n")?;
        write("kb.tsv", self.full.to_tsv())?;
        write("kb_incomplete.tsv", self.incomplete.to_tsv())?;
        write("aliases.tsv", self.aliases.to_tsv())?;
        let mut ents = String::new();
        for e in &self.entities {
            ents.push_str(&format!("{}\t{}\t{}\n", e.id, e.kind, e.name));
        }
        write("entities.tsv", ents)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        let config: WorldConfig = serde_json::from_str(&read("world.json")?)?;
        let full = KnowledgeBase::parse_tsv(&read("kb.tsv")?)?;
        let incomplete = KnowledgeBase::parse_tsv(&read("kb_incomplete.tsv")?)?;
        let aliases = AliasTable::parse_tsv(&read("aliases.tsv")?)?;
        let mut entities = Vec::new();
        for (i, line) in read("entities.tsv")?.lines().enumerate() {
            let mut f = line.splitn(3, '\t');
            match (f.next(), f.next(), f.next()) {
                (Some(id), Some(kind), Some(name)) => entities.push(EntityInfo {
                    id: id.into(),
                    kind: kind.into(),
                    name: name.into(),
                }),
                _ => {
                    return Err(Error::MalformedTriple {
                        line: i + 1,
                        message: "entities.tsv expects id<TAB>type<TAB>name".into(),
                    })
                }
            }
        }
        Ok(World::new(config, full, incomplete, aliases, entities))
    }
}

/// Builds the full KB, its incomplete copy and the alias table from `config`.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let counts = config.type_counts();

    let mut rng = rng_stream(config.seed, 1);
    let mut namer = Namer::new(config.types.iter().map(|t| t.noun.clone()));
    let mut used_ids = BTreeSet::new();
    let mut entities = Vec::new();
    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (t, &n) in config.types.iter().zip(&counts) {
        for _ in 0..n {
            by_type.entry(t.name.as_str()).or_default().push(entities.len());
            entities.push(EntityInfo {
                id: entity_id(&mut rng, &mut used_ids),
                name: namer.name(&t.naming, &mut rng),
                kind: t.name.clone(),
            });
        }
    }
    for r in &config.relations {
        if r.range != DATE && by_type.get(r.range.as_str()).map_or(true, Vec::is_empty) {
            return Err(Error::InvalidConfig(format!(
                "relation {}: range type {} has zero entities",
                r.name, r.range
            )));
        }
    }

    let mut rng = rng_stream(config.seed, 2);
    // Distinct dates between 1900 and 2019.
    let mut dates: Vec<i64> = (-25_567..18_262).collect();
    dates.shuffle(&mut rng);
    let mut next_date = dates.into_iter();

    let mut synonyms: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &config.relations {
        if let Some(base) = &r.synonym_of {
            synonyms.entry(base.as_str()).or_default().push(r.name.as_str());
        }
    }

    let mut triples: BTreeSet<RawTriple> = BTreeSet::new();
    let mut touched = vec![false; entities.len()];
    for r in config.relations.iter().filter(|r| r.synonym_of.is_none()) {
        let mut variants = vec![r.name.as_str()];
        variants.extend(synonyms.get(r.name.as_str()).into_iter().flatten());
        let heads = &by_type[r.domain.as_str()];
        for &h in heads {
            if !rng.gen_bool(r.coverage) {
                continue;
            }
            let relation = *variants.choose(&mut rng).unwrap();
            touched[h] = true;
            if r.range == DATE {
                let day = next_date
                    .next()
                    .ok_or_else(|| Error::InvalidConfig("date pool exhausted".into()))?;
                triples.insert(RawTriple::literal(
                    &entities[h].id,
                    relation,
                    &iso_date(day),
                    LiteralKind::Date,
                ));
                continue;
            }
            let pool: Vec<usize> = by_type[r.range.as_str()]
                .iter()
                .copied()
                .filter(|&o| o != h)
                .collect();
            let k = rng.gen_range(r.fanout.0..=r.fanout.1).min(pool.len());
            for &o in pool.choose_multiple(&mut rng, k) {
                touched[o] = true;
                triples.insert(RawTriple::entity(&entities[h].id, relation, &entities[o].id));
            }
        }
    }

    // Every entity gets at least one edge so it is part of the KB.
    for e in 0..entities.len() {
        if touched[e] {
            continue;
        }
        let kind = entities[e].kind.as_str();
        let as_head = config
            .relations
            .iter()
            .find(|r| r.synonym_of.is_none() && r.domain == kind);
        let as_tail = config
            .relations
            .iter()
            .find(|r| r.synonym_of.is_none() && r.range == kind);
        if let Some(r) = as_head {
            if r.range == DATE {
                let day = next_date
                    .next()
                    .ok_or_else(|| Error::InvalidConfig("date pool exhausted".into()))?;
                triples.insert(RawTriple::literal(&entities[e].id, &r.name, &iso_date(day), LiteralKind::Date));
                touched[e] = true;
                continue;
            }
            let pool: Vec<usize> = by_type[r.range.as_str()].iter().copied().filter(|&o| o != e).collect();
            if let Some(&o) = pool.choose(&mut rng) {
                triples.insert(RawTriple::entity(&entities[e].id, &r.name, &entities[o].id));
                touched[e] = true;
                touched[o] = true;
                continue;
            }
        }
        if let Some(r) = as_tail {
            let pool: Vec<usize> = by_type[r.domain.as_str()].iter().copied().filter(|&h| h != e).collect();
            if let Some(&h) = pool.choose(&mut rng) {
                triples.insert(RawTriple::entity(&entities[h].id, &r.name, &entities[e].id));
                touched[e] = true;
                touched[h] = true;
                continue;
            }
        }
        return Err(Error::InvalidConfig(format!(
            "entity of type {kind} cannot be connected to the KB"
        )));
    }

    let all: Vec<RawTriple> = triples.into_iter().collect();
    let full = KnowledgeBase::from_triples(all.iter().cloned());

    let mut rng = rng_stream(config.seed, 3);
    let n_drop = (config.drop_edge_rate * all.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut rng);
    let dropped: BTreeSet<usize> = order.into_iter().take(n_drop).collect();
    let incomplete = KnowledgeBase::from_triples(
        all.iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, t)| t.clone()),
    );

    let mut aliases = AliasTable::new();
    for e in &entities {
        aliases.insert(&e.id, &e.name);
    }
    let mut rng = rng_stream(config.seed, 4);
    let quota = (config.ambiguous_alias_rate * entities.len() as f64).round() as usize;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in entities.iter().enumerate() {
        if let Some(t) = config.entity_type(&e.kind) {
            if t.naming == NameStyle::Person {
                let last = e.name.rsplit(' ').next().unwrap_or(&e.name).to_string();
                groups.entry(last).or_default().push(i);
            }
        }
    }
    let mut groups: Vec<(String, Vec<usize>)> =
        groups.into_iter().filter(|(_, g)| g.len() >= 2).collect();
    groups.shuffle(&mut rng);
    let mut assigned = 0;
    for (last, members) in groups {
        if assigned >= quota {
            break;
        }
        for &m in &members {
            aliases.insert(&entities[m].id, &last);
        }
        assigned += members.len();
    }

    Ok(World::new(config.clone(), full, incomplete, aliases, entities))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        let mut c = WorldConfig::with_seed(3).restricted_to(&[
            "people.person.sibling_s",
            "fictional_universe.fictional_character.sibling_s",
            "people.person.nationality",
            "people.person.place_of_birth",
            "people.person.profession",
            "location.country.languages_spoken",
            "location.country.currency_used",
            "location.country.capital",
            "location.city.country",
            "language.human_language.language_family",
            "finance.currency.currency_code",
            "film.film.release_date",
        ]);
        c.n_entities = 100;
        c
    }

    fn c_rel(name: &str, domain: &str, range: &str) -> RelationSchema {
        RelationSchema {
            name: name.into(),
            domain: domain.into(),
            range: range.into(),
            fanout: (1, 1),
            coverage: 1.0,
            noun: "x".into(),
            paraphrases: Vec::new(),
            synonym_of: None,
            constraint: false,
        }
    }

    #[test]
    fn entity_count_contract() {
        let c = small();
        assert_eq!(c.relations.len(), 12);
        let w = generate_world(&c).unwrap();
        assert_eq!(w.full.num_entities(), 100);
        assert_eq!(w.entities.len(), 100);
    }

    #[test]
    fn deterministic_and_zero_drop() {
        let c = small();
        let a = generate_world(&c).unwrap();
        let b = generate_world(&c).unwrap();
        assert_eq!(a.full.to_tsv(), b.full.to_tsv());
        assert_eq!(a.aliases.to_tsv(), b.aliases.to_tsv());
        assert_eq!(a.full.to_tsv(), a.incomplete.to_tsv());
    }

    #[test]
    fn drop_rate_is_exact() {
        let mut c = small();
        c.drop_edge_rate = 0.2;
        let w = generate_world(&c).unwrap();
        let n = w.full.len();
        assert_eq!(w.incomplete.len(), n - (0.2 * n as f64).round() as usize);
        for t in w.incomplete.raw_triples() {
            let s = w.full.entity(&t.subject).unwrap();
            let r = w.full.relation(&t.relation).unwrap();
            let o = w.full.node(&t.object).unwrap();
            assert!(w.full.contains(s, r, o));
        }
    }

    #[test]
    fn zero_entity_range_is_rejected() {
        let mut c = small();
        c.relations.push(c_rel("x.y.z", "person", "ghost"));
        assert!(matches!(generate_world(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn synonyms_partition_heads() {
        let w = generate_world(&WorldConfig::default()).unwrap();
        let a = w.full.relation("people.person.sibling_s").unwrap();
        let b = w.full.relation("fictional_universe.fictional_character.sibling_s").unwrap();
        let heads_a: BTreeSet<_> = w.full.pairs(a).iter().map(|p| p.0).collect();
        let heads_b: BTreeSet<_> = w.full.pairs(b).iter().map(|p| p.0).collect();
        assert!(!heads_a.is_empty() && !heads_b.is_empty());
        assert!(heads_a.is_disjoint(&heads_b));
        assert_eq!(w.full.num_entities(), 1500);
    }

    #[test]
    fn aliases_cover_entities_with_some_ambiguity() {
        let w = generate_world(&WorldConfig::default()).unwrap();
        for e in &w.entities {
            assert!(w.aliases.lookup(&e.name).contains(&e.id.as_str()));
        }
        let ambiguous = w
            .entities
            .iter()
            .filter(|e| {
                let last = e.name.rsplit(' ').next().unwrap();
                e.name.contains(' ') && w.aliases.lookup(last).len() > 1
            })
            .count();
        let rate = ambiguous as f64 / w.entities.len() as f64;
        assert!((0.04..=0.08).contains(&rate), "{rate}");
    }

    #[test]
    fn save_load_round_trip() {
        let w = generate_world(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path()).unwrap();
        let back = World::load(dir.path()).unwrap();
        assert_eq!(back.full.to_tsv(), w.full.to_tsv());
        assert_eq!(back.entities, w.entities);
        assert_eq!(back.config, w.config);
    }
}
