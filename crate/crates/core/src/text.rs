//! Tokenization and tf-idf helpers shared by the linker, retriever, generator
//! and the surface-form relation similarity.

use std::collections::{BTreeMap, HashMap};

/// Splits a relation name on '.' and '_' into lowercase tokens.
pub fn relation_tokens(name: &str) -> Vec<String> {
    name.split(['.', '_'])
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// A word token with its character span `[start, end)` in the source string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercased maximal alphanumeric runs, with character offsets.
pub fn word_tokens(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = pos;
            }
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(&mut current),
                start,
                end: pos,
            });
        }
        pos += 1;
    }
    if !current.is_empty() {
        tokens.push(Token {
            text: current,
            start,
            end: pos,
        });
    }
    tokens
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "by", "did", "do", "does", "for", "from", "has", "have",
    "in", "is", "it", "its", "me", "of", "on", "or", "tell", "that", "the", "to", "was", "were",
    "what", "which", "who", "whom", "whose", "with",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Crude plural folding used for lexical matching only.
pub fn fold_token(token: &str) -> String {
    if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

/// FNV-1a, stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Inverse document frequencies over relation names; each relation is a document.
#[derive(Clone, Debug, Default)]
pub struct RelationLexicon {
    idf: HashMap<String, f64>,
    max_idf: f64,
}

impl RelationLexicon {
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(relations: I) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0usize;
        for r in relations {
            n += 1;
            let mut seen: Vec<String> = relation_tokens(r).iter().map(|t| fold_token(t)).collect();
            seen.sort();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let smooth = |d: usize| ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0;
        let idf = df.into_iter().map(|(t, d)| (t, smooth(d))).collect();
        RelationLexicon {
            idf,
            max_idf: smooth(0),
        }
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(self.max_idf)
    }

    /// tf-idf vector over folded tokens.
    pub fn vector<S: AsRef<str>>(&self, tokens: &[S]) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens {
            *tf.entry(fold_token(t.as_ref())).or_default() += 1.0;
        }
        for (t, w) in tf.iter_mut() {
            *w *= self.idf(t);
        }
        tf
    }

    pub fn relation_vector(&self, relation: &str) -> BTreeMap<String, f64> {
        self.vector(&relation_tokens(relation))
    }
}

pub fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(t, w)| b.get(t).map(|v| w * v))
        .sum();
    let na = a.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb = b.values().map(|w| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_tokens_track_char_offsets() {
        let toks = word_tokens("What do Jamaican people speak?");
        assert_eq!(toks[2].text, "jamaican");
        assert_eq!((toks[2].start, toks[2].end), (8, 16));
        let toks = word_tokens("Justin Bieber's brother");
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["justin", "bieber", "s", "brother"]);
    }

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort();
        assert_eq!(sorted, STOPWORDS);
        assert!(is_stopword("the"));
        assert!(!is_stopword("sibling"));
    }

    #[test]
    fn cosine_of_disjoint_vectors_is_zero() {
        let lex = RelationLexicon::new(["a.b", "c.d"]);
        let x = lex.relation_vector("a.b");
        let y = lex.relation_vector("c.d");
        assert_eq!(cosine(&x, &y), 0.0);
        assert!((cosine(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
