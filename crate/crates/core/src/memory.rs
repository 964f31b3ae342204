//! Case memory: solved (question, LF) pairs with cached encoder vectors and
//! exact cosine KNN. Cases can be injected and removed without retraining.
//!
//! Snapshot layout, all in one file:
//!
//! ```text
//! line 1        JSON header {format, version, encoder_version, d, count, next_injected}
//! lines 2..     one JSON case per line (vector omitted), `count` lines
//! rest          count * d little-endian f64 values, row-major
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lf::{parse, LogicalForm};
use crate::linker::Mention;
use crate::retriever::Encoder;

const FORMAT: &str = "cbrqa-memory";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Train,
    Injected { author: String, timestamp: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub question: String,
    pub mentions: Vec<Mention>,
    #[serde(rename = "sparql")]
    pub lf: LogicalForm,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    encoder_version: String,
    d: usize,
    count: usize,
    next_injected: u64,
}

#[derive(Clone, Debug)]
pub struct CaseMemory {
    cases: Vec<Case>,
    index: HashMap<String, usize>,
    /// Row-major `cases.len() x dim` unit vectors.
    matrix: Vec<f64>,
    dim: usize,
    encoder_version: String,
    next_injected: u64,
    encode_ops: u64,
    reencoded: bool,
}

/// Input for [`CaseMemory::inject`].
#[derive(Clone, Debug)]
pub struct NewCase<'a> {
    pub id: Option<String>,
    pub question: &'a str,
    pub lf_text: &'a str,
    pub mentions: Vec<Mention>,
    pub provenance: Provenance,
}

impl CaseMemory {
    pub fn new(encoder: &Encoder) -> Self {
        CaseMemory {
            cases: Vec::new(),
            index: HashMap::new(),
            matrix: Vec::new(),
            dim: encoder.dim(),
            encoder_version: encoder.version().to_string(),
            next_injected: 0,
            encode_ops: 0,
            reencoded: false,
        }
    }

    /// Memory holding `cases`, each encoded once.
    pub fn build(cases: Vec<Case>, encoder: &Encoder) -> Result<Self> {
        let mut m = CaseMemory::new(encoder);
        for c in cases {
            m.push(c, encoder)?;
        }
        Ok(m)
    }

    fn push(&mut self, case: Case, encoder: &Encoder) -> Result<()> {
        if self.index.contains_key(&case.id) {
            return Err(Error::DuplicateCase(case.id));
        }
        let v = encoder.encode(&case.question, &case.mentions, None);
        self.encode_ops += 1;
        self.matrix.extend_from_slice(&v);
        self.index.insert(case.id.clone(), self.cases.len());
        self.cases.push(case);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.index.get(id).map(|&i| &self.cases[i])
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.matrix[i * self.dim..(i + 1) * self.dim])
    }

    pub fn encoder_version(&self) -> &str {
        &self.encoder_version
    }

    /// Number of question encodings performed by this memory.
    pub fn encode_ops(&self) -> u64 {
        self.encode_ops
    }

    /// True when the last load re-encoded cases for a newer encoder.
    pub fn reencoded(&self) -> bool {
        self.reencoded
    }

    pub fn check_encoder(&self, encoder: &Encoder) -> Result<()> {
        if encoder.version() != self.encoder_version {
            return Err(Error::StaleCache {
                memory: self.encoder_version.clone(),
                encoder: encoder.version().to_string(),
            });
        }
        Ok(())
    }

    /// Adds one case; only its vector is computed. The LF is parsed first so a
    /// malformed case leaves the memory untouched.
    pub fn inject(&mut self, new: NewCase, encoder: &Encoder) -> Result<String> {
        self.check_encoder(encoder)?;
        let lf = parse(new.lf_text)?;
        let id = match new.id {
            Some(id) => id,
            None => loop {
                let id = format!("inj-{}", self.next_injected);
                self.next_injected += 1;
                if !self.index.contains_key(&id) {
                    break id;
                }
            },
        };
        self.push(
            Case {
                id: id.clone(),
                question: new.question.to_string(),
                mentions: new.mentions,
                lf,
                provenance: new.provenance,
            },
            encoder,
        )?;
        Ok(id)
    }

    pub fn remove(&mut self, id: &str) -> Result<Case> {
        let i = self
            .index
            .remove(id)
            .ok_or_else(|| Error::UnknownCase(id.to_string()))?;
        let case = self.cases.remove(i);
        self.matrix.drain(i * self.dim..(i + 1) * self.dim);
        for (j, c) in self.cases.iter().enumerate().skip(i) {
            self.index.insert(c.id.clone(), j);
        }
        Ok(case)
    }

    /// Exact top-`k` cases by cosine, ties broken by case id.
    pub fn retrieve(
        &self,
        encoder: &Encoder,
        question: &str,
        mentions: &[Mention],
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<(&Case, f64)>> {
        self.check_encoder(encoder)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = encoder.encode(question, mentions, None);
        Ok(self.nearest(&q, k, exclude))
    }

    /// Top-`k` cases for an already encoded query vector.
    pub fn nearest(&self, q: &[f64], k: usize, exclude: Option<&str>) -> Vec<(&Case, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .matrix
            .chunks_exact(self.dim.max(1))
            .enumerate()
            .filter(|(i, _)| exclude != Some(self.cases[*i].id.as_str()))
            .map(|(i, row)| (i, row.iter().zip(q).map(|(a, b)| a * b).sum()))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.cases[a.0].id.cmp(&self.cases[b.0].id))
        });
        scored.truncate(k);
        scored.into_iter().map(|(i, s)| (&self.cases[i], s)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            encoder_version: self.encoder_version.clone(),
            d: self.dim,
            count: self.cases.len(),
            next_injected: self.next_injected,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for c in &self.cases {
            out.extend(serde_json::to_vec(c)?);
            out.push(b'\n');
        }
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Parses a snapshot. If it was written under a different encoder version
    /// every case is re-encoded with `encoder` and [`reencoded`](Self::reencoded)
    /// is set.
    pub fn from_bytes(bytes: &[u8], encoder: &Encoder) -> Result<Self> {
        let corrupt = |offset: usize, message: String| Error::Corrupt {
            offset: offset as u64,
            message,
        };
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<(usize, &[u8])> {
            let start = *pos;
            let rel = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt(start, "unterminated line".into()))?;
            *pos = start + rel + 1;
            Ok((start, &bytes[start..start + rel]))
        };
        let (off, line) = next_line(&mut pos)?;
        let header: Header =
            serde_json::from_slice(line).map_err(|e| corrupt(off, format!("bad header: {e}")))?;
        if header.format != FORMAT {
            return Err(corrupt(off, "not a case-memory snapshot".into()));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "snapshot format {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let mut cases = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let (off, line) = next_line(&mut pos)?;
            let case: Case =
                serde_json::from_slice(line).map_err(|e| corrupt(off, format!("bad case: {e}")))?;
            cases.push(case);
        }
        let block = &bytes[pos..];
        if block.len() != header.count * header.d * 8 {
            return Err(corrupt(
                pos,
                format!(
                    "vector block has {} bytes, expected {}",
                    block.len(),
                    header.count * header.d * 8
                ),
            ));
        }
        if header.encoder_version != encoder.version() || header.d != encoder.dim() {
            let mut m = CaseMemory::build(cases, encoder)?;
            m.next_injected = header.next_injected;
            m.reencoded = true;
            return Ok(m);
        }
        let matrix = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut index = HashMap::new();
        for (i, c) in cases.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::DuplicateCase(c.id.clone()));
            }
        }
        Ok(CaseMemory {
            cases,
            index,
            matrix,
            dim: header.d,
            encoder_version: header.encoder_version,
            next_injected: header.next_injected,
            encode_ops: 0,
            reencoded: false,
        })
    }

    pub fn load(path: impl AsRef<Path>, encoder: &Encoder) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, encoder)
    }

    /// Same cases, provenance and bit-identical vectors.
    pub fn same_contents(&self, other: &CaseMemory) -> bool {
        self.cases == other.cases
            && self.encoder_version == other.encoder_version
            && self.matrix.len() == other.matrix.len()
            && self
                .matrix
                .iter()
                .zip(&other.matrix)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::EncoderConfig;

    fn enc() -> Encoder {
        Encoder::new(EncoderConfig {
            hash_bits: 10,
            dim: 16,
            ..EncoderConfig::default()
        })
        .unwrap()
    }

    fn train_case(id: &str, q: &str, r: &str) -> Case {
        Case {
            id: id.into(),
            question: q.into(),
            mentions: vec![],
            lf: parse(&format!("SELECT DISTINCT ?x WHERE {{ ns:m.e ns:{r} ?x . }}")).unwrap(),
            provenance: Provenance::Train,
        }
    }

    fn memory() -> CaseMemory {
        CaseMemory::build(
            vec![
                train_case("a", "what is the capital of zorvia", "location.country.capital"),
                train_case("b", "who is the sibling of ida", "people.person.sibling_s"),
            ],
            &enc(),
        )
        .unwrap()
    }

    fn peso(m: &mut CaseMemory, e: &Encoder, lf: &str) -> Result<String> {
        m.inject(
            NewCase {
                id: None,
                question: "What is the Mexican Peso called?",
                lf_text: lf,
                mentions: vec![],
                provenance: Provenance::Injected {
                    author: "expert".into(),
                    timestamp: 1,
                },
            },
            e,
        )
    }

    const PESO_LF: &str =
        "SELECT DISTINCT ?x WHERE { ns:m.012ts8 ns:finance.currency.currency_code ?x . }";

    #[test]
    fn injected_case_is_retrievable_with_one_encode() {
        let e = enc();
        let mut m = memory();
        let before = m.encode_ops();
        let id = peso(&mut m, &e, PESO_LF).unwrap();
        assert_eq!(m.encode_ops(), before + 1);
        let hits = m.retrieve(&e, "What is the Mexican Peso called?", &[], 1, None).unwrap();
        assert_eq!(hits[0].0.id, id);
        let hits = m.retrieve(&e, "What is the Mexican Peso called?", &[], 3, Some(&id)).unwrap();
        assert!(hits.iter().all(|(c, _)| c.id != id));
        assert!(m.retrieve(&e, "x", &[], 0, None).unwrap().is_empty());
    }

    #[test]
    fn inject_then_remove_restores_contents() {
        let e = enc();
        let mut m = memory();
        let original = m.clone();
        let id = peso(&mut m, &e, PESO_LF).unwrap();
        m.remove(&id).unwrap();
        assert!(m.same_contents(&original));
        assert!(matches!(m.remove(&id), Err(Error::UnknownCase(_))));
    }

    #[test]
    fn malformed_lf_leaves_memory_unchanged() {
        let e = enc();
        let mut m = memory();
        let original = m.clone();
        assert!(matches!(peso(&mut m, &e, "SELECT ?x WHERE {"), Err(Error::Syntax { .. })));
        assert!(m.same_contents(&original));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = enc();
        let mut m = memory();
        let err = m
            .inject(
                NewCase {
                    id: Some("a".into()),
                    question: "q",
                    lf_text: PESO_LF,
                    mentions: vec![],
                    provenance: Provenance::Train,
                },
                &e,
            )
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateCase(_)));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn snapshot_round_trips_and_detects_corruption() {
        let e = enc();
        for m in [CaseMemory::new(&e), memory()] {
            let bytes = m.to_bytes().unwrap();
            let back = CaseMemory::from_bytes(&bytes, &e).unwrap();
            assert!(back.same_contents(&m));
            assert!(!back.reencoded());
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
        let bytes = memory().to_bytes().unwrap();
        let err = CaseMemory::from_bytes(&bytes[..bytes.len() - 3], &e).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }));
        let mut garbled = bytes.clone();
        let second_line = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        garbled[second_line] = b'#';
        match CaseMemory::from_bytes(&garbled, &e) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset as usize, second_line),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stale_snapshot_is_reencoded() {
        let bytes = memory().to_bytes().unwrap();
        let new = Encoder::new(EncoderConfig {
            hash_bits: 10,
            dim: 16,
            seed: 9,
            ..EncoderConfig::default()
        })
        .unwrap();
        assert!(matches!(memory().check_encoder(&new), Err(Error::StaleCache { .. })));
        let m = CaseMemory::from_bytes(&bytes, &new).unwrap();
        assert!(m.reencoded());
        assert_eq!(m.encoder_version(), new.version());
        assert_ne!(m.vector("a").unwrap(), memory().vector("a").unwrap());
    }
}
