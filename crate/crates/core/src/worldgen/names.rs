use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::schema::{NameStyle, FIRST_NAMES, LAST_NAMES, TITLE_ADJECTIVES, TITLE_NOUNS};
use crate::text::is_stopword;

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "tr",
    "st", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "th"];

/// Hands out globally unique entity names.
pub(crate) struct Namer {
    used: BTreeSet<String>,
    reserved: BTreeSet<String>,
}

impl Namer {
    pub fn new(reserved: impl IntoIterator<Item = String>) -> Self {
        let mut reserved: BTreeSet<String> = reserved.into_iter().collect();
        reserved.extend(FIRST_NAMES.iter().map(|s| s.to_string()));
        reserved.extend(LAST_NAMES.iter().map(|s| s.to_string()));
        reserved.extend(TITLE_ADJECTIVES.iter().map(|s| s.to_string()));
        reserved.extend(TITLE_NOUNS.iter().map(|s| s.to_string()));
        Namer {
            used: BTreeSet::new(),
            reserved,
        }
    }

    fn pseudo_word(&self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
            }
            w.push_str(CODAS.choose(rng).unwrap());
            if !self.reserved.contains(&w) && !is_stopword(&w) {
                return w;
            }
        }
    }

    pub fn name(&mut self, style: &NameStyle, rng: &mut ChaCha8Rng) -> String {
        for _ in 0..100_000 {
            let candidate = match style {
                NameStyle::Person => format!(
                    "{} {}",
                    capitalize(FIRST_NAMES.choose(rng).unwrap()),
                    capitalize(LAST_NAMES.choose(rng).unwrap())
                ),
                NameStyle::Word => capitalize(&self.pseudo_word(rng)),
                NameStyle::Suffixed { suffixes } => {
                    let word = self.pseudo_word(rng);
                    let suffix = suffixes.choose(rng).map(String::as_str).unwrap_or("");
                    match suffix.strip_prefix('-') {
                        Some(joined) => capitalize(&format!("{word}{joined}")),
                        None => format!("{} {}", capitalize(&word), capitalize(suffix)),
                    }
                }
                NameStyle::TwoWords => format!(
                    "{} {}",
                    capitalize(&self.pseudo_word(rng)),
                    capitalize(&self.pseudo_word(rng))
                ),
                NameStyle::Title => format!(
                    "{} {}",
                    capitalize(TITLE_ADJECTIVES.choose(rng).unwrap()),
                    capitalize(TITLE_NOUNS.choose(rng).unwrap())
                ),
                NameStyle::Code { len } => (0..*len)
                    .map(|_| rng.gen_range(b'A'..=b'Z') as char)
                    .collect(),
            };
            let key = candidate.to_lowercase();
            if !self.used.contains(&key) && !self.reserved.contains(&key) {
                self.used.insert(key);
                return candidate;
            }
        }
        panic!("name space exhausted for {style:?}");
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Opaque Freebase-like id such as "m.0k3x9".
pub(crate) fn entity_id(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    const ALPHABET: &[u8] = b"0123456789bcdfghjklmnpqrstvwxyz_";
    loop {
        let body: String = (0..5)
            .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
            .collect();
        let id = format!("m.0{body}");
        if used.insert(id.clone()) {
            return id;
        }
    }
}

/// Days since 1970-01-01 to an ISO date.
pub(crate) fn iso_date(days: i64) -> String {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!("{y:04}-{m:02}-{d:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dates() {
        assert_eq!(iso_date(0), "1970-01-01");
        assert_eq!(iso_date(-25567), "1900-01-01");
        assert_eq!(iso_date(11016), "2000-02-29");
    }
}
