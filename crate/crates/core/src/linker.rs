//! Alias-table entity linking: case-insensitive longest match on word boundaries.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::word_tokens;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionSource {
    Gold,
    #[default]
    Linked,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    /// Character offsets `[start, end)`.
    pub span: (usize, usize),
    #[serde(default)]
    pub surface: String,
    pub entity: String,
    #[serde(default)]
    pub source: MentionSource,
}

impl Mention {
    pub fn new(question: &str, span: (usize, usize), entity: &str, source: MentionSource) -> Self {
        Mention {
            span,
            surface: char_slice(question, span.0, span.1),
            entity: entity.to_string(),
            source,
        }
    }

    pub fn overlaps(&self, other: &Mention) -> bool {
        self.span.0 < other.span.1 && other.span.0 < self.span.1
    }
}

pub(crate) fn char_slice(s: &str, start: usize, end: usize) -> String {
    s.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Validates that mention spans fit the question.
pub fn check_mentions(question: &str, mentions: &[Mention]) -> bool {
    let n = question.chars().count();
    mentions.iter().all(|m| m.span.0 < m.span.1 && m.span.1 <= n)
}

#[derive(Clone, Debug, Default)]
pub struct AliasTable {
    entries: Vec<(String, String)>,
    index: HashMap<Vec<String>, BTreeSet<String>>,
    max_tokens: usize,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entity: &str, alias: &str) {
        let key: Vec<String> = word_tokens(alias).into_iter().map(|t| t.text).collect();
        if key.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(key.len());
        if self.index.entry(key).or_default().insert(entity.to_string()) {
            self.entries.push((entity.to_string(), alias.to_string()));
        }
    }

    pub fn from_pairs<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(pairs: I) -> Self {
        let mut table = Self::new();
        for (e, a) in pairs {
            table.insert(e, a);
        }
        table
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((entity, alias)) = line.split_once('\t') else {
                return Err(Error::MalformedAlias {
                    line: i + 1,
                    message: "expected entity_id<TAB>alias".into(),
                });
            };
            if entity.is_empty() || alias.trim().is_empty() {
                return Err(Error::MalformedAlias {
                    line: i + 1,
                    message: "empty field".into(),
                });
            }
            table.insert(entity, alias);
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (e, a) in &self.entries {
            out.push_str(e);
            out.push('\t');
            out.push_str(a);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Entities sharing the alias, smallest id first.
    pub fn lookup(&self, alias: &str) -> Vec<&str> {
        let key: Vec<String> = word_tokens(alias).into_iter().map(|t| t.text).collect();
        self.index
            .get(&key)
            .map(|s| s.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Links mentions in `question`. Overlaps resolve by longer span, then
    /// earlier start, then smaller entity id; an ambiguous alias links its
    /// smallest entity id.
    pub fn link(&self, question: &str) -> Vec<Mention> {
        let tokens = word_tokens(question);
        let mut candidates: Vec<(usize, usize, &str)> = Vec::new();
        for i in 0..tokens.len() {
            let mut key: Vec<String> = Vec::new();
            for j in i..tokens.len().min(i + self.max_tokens) {
                key.push(tokens[j].text.clone());
                if let Some(entities) = self.index.get(&key) {
                    let entity = entities.iter().next().expect("alias maps to an entity");
                    candidates.push((tokens[i].start, tokens[j].end, entity.as_str()));
                }
            }
        }
        candidates.sort_by(|a, b| {
            (b.1 - b.0)
                .cmp(&(a.1 - a.0))
                .then(a.0.cmp(&b.0))
                .then(a.2.cmp(b.2))
        });
        let mut chosen: Vec<Mention> = Vec::new();
        for (start, end, entity) in candidates {
            let m = Mention::new(question, (start, end), entity, MentionSource::Linked);
            if chosen.iter().all(|c| !c.overlaps(&m)) {
                chosen.push(m);
            }
        }
        chosen.sort_by_key(|m| m.span);
        chosen
    }
}

/// Precision/recall/F1 of linked mentions against gold, matching on (span, entity).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkerScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn linker_scores<'a, I>(pairs: I) -> LinkerScores
where
    I: IntoIterator<Item = (&'a [Mention], &'a [Mention])>,
{
    let (mut tp, mut predicted, mut gold) = (0usize, 0usize, 0usize);
    for (pred, g) in pairs {
        predicted += pred.len();
        gold += g.len();
        tp += pred
            .iter()
            .filter(|p| g.iter().any(|m| m.span == p.span && m.entity == p.entity))
            .count();
    }
    let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    LinkerScores {
        precision,
        recall,
        f1,
    }
}
