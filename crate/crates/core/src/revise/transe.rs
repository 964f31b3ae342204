use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Node};

const CHECKPOINT_MAGIC: &[u8; 8] = b"CBRQATRE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 50,
            margin: 1.0,
            epochs: 100,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// (head, relation, tail) as KB indices.
pub type IndexTriple = (usize, usize, usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransEGradient {
    pub entity: BTreeMap<usize, Vec<f64>>,
    pub relation: BTreeMap<usize, Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    margin: f64,
    seed: u64,
    entities: usize,
    relations: usize,
    /// Relations with at least one entity-object triple.
    trained: Vec<bool>,
}

/// Entity and relation vectors indexed like the KB they were trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    margin: f64,
    seed: u64,
    entity: Vec<f64>,
    relation: Vec<f64>,
    trained: Vec<bool>,
    version: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransEReport {
    pub epoch_loss: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl EmbeddingTable {
    /// Random initialization: uniform in ±6/√m, relations normalized once.
    pub fn init(entities: usize, relations: usize, dim: usize, margin: f64, seed: u64) -> Result<Self> {
        if dim == 0 || margin <= 0.0 {
            return Err(Error::InvalidConfig("TransE needs dim > 0 and margin > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n * dim).map(|_| rng.gen_range(-bound..bound)).collect() };
        let mut relation = draw(relations);
        let mut entity = draw(entities);
        relation.chunks_exact_mut(dim).for_each(normalize);
        entity.chunks_exact_mut(dim).for_each(normalize);
        let mut table = EmbeddingTable {
            dim,
            margin,
            seed,
            entity,
            relation,
            trained: vec![false; relations],
            version: String::new(),
        };
        table.refresh_version();
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn num_entities(&self) -> usize {
        self.entity.len() / self.dim
    }

    pub fn num_relations(&self) -> usize {
        self.relation.len() / self.dim
    }

    pub fn entity(&self, i: usize) -> &[f64] {
        &self.entity[i * self.dim..(i + 1) * self.dim]
    }

    pub fn relation(&self, r: usize) -> &[f64] {
        &self.relation[r * self.dim..(r + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entity[i * self.dim..(i + 1) * self.dim]
    }

    pub fn relation_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.relation[r * self.dim..(r + 1) * self.dim]
    }

    /// Whether the relation's vector was fitted (it had entity-object triples).
    pub fn is_trained(&self, r: usize) -> bool {
        self.trained.get(r).copied().unwrap_or(false)
    }

    pub fn relation_norm(&self, r: usize) -> f64 {
        norm(self.relation(r))
    }

    pub fn relation_cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.relation(a), self.relation(b));
        let (nx, ny) = (norm(x), norm(y));
        if nx == 0.0 || ny == 0.0 {
            return 0.0;
        }
        x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (nx * ny)
    }

    fn residual(&self, (h, r, t): IndexTriple) -> Vec<f64> {
        let (h, r, t) = (self.entity(h), self.relation(r), self.entity(t));
        (0..self.dim).map(|i| h[i] + r[i] - t[i]).collect()
    }

    /// ||h + r - t||₂
    pub fn distance(&self, triple: IndexTriple) -> f64 {
        norm(&self.residual(triple))
    }

    /// max(0, γ + d(pos) - d(neg))
    pub fn hinge(&self, pos: IndexTriple, neg: IndexTriple) -> f64 {
        (self.margin + self.distance(pos) - self.distance(neg)).max(0.0)
    }

    /// Analytic gradient of [`hinge`](Self::hinge); empty when the hinge is inactive.
    pub fn hinge_gradient(&self, pos: IndexTriple, neg: IndexTriple) -> TransEGradient {
        let mut g = TransEGradient::default();
        if self.hinge(pos, neg) <= 0.0 {
            return g;
        }
        let d = self.dim;
        let add = |map: &mut BTreeMap<usize, Vec<f64>>, i: usize, v: &[f64], sign: f64| {
            let slot = map.entry(i).or_insert_with(|| vec![0.0; d]);
            for (s, x) in slot.iter_mut().zip(v) {
                *s += sign * x;
            }
        };
        for (triple, sign) in [(pos, 1.0), (neg, -1.0)] {
            let res = self.residual(triple);
            let n = norm(&res);
            if n == 0.0 {
                continue;
            }
            let unit: Vec<f64> = res.iter().map(|x| x / n).collect();
            add(&mut g.entity, triple.0, &unit, sign);
            add(&mut g.relation, triple.1, &unit, sign);
            add(&mut g.entity, triple.2, &unit, -sign);
        }
        g
    }

    fn refresh_version(&mut self) {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.header()).expect("header serializes"));
        for p in self.entity.iter().chain(&self.relation) {
            h.update(p.to_le_bytes());
        }
        let digest = h.finalize();
        self.version = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    }

    fn header(&self) -> Header {
        Header {
            dim: self.dim,
            margin: self.margin,
            seed: self.seed,
            entities: self.num_entities(),
            relations: self.num_relations(),
            trained: self.trained.clone(),
        }
    }

    /// Layout: magic, u64 LE header length, JSON header, entity block then
    /// relation block as f64 LE.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&self.header())?;
        let mut bytes = Vec::with_capacity(16 + header.len() + (self.entity.len() + self.relation.len()) * 8);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for p in self.entity.iter().chain(&self.relation) {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |offset: usize, message: &str| Error::Corrupt {
            offset: offset as u64,
            message: message.into(),
        };
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt(0, "not a TransE checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let raw = bytes.get(16..16 + hlen).ok_or_else(|| corrupt(16, "truncated header"))?;
        let header: Header = serde_json::from_slice(raw).map_err(|e| corrupt(16, &e.to_string()))?;
        if header.dim == 0 || header.trained.len() != header.relations {
            return Err(corrupt(16, "inconsistent header"));
        }
        let body = &bytes[16 + hlen..];
        let ne = header.entities * header.dim;
        let nr = header.relations * header.dim;
        if body.len() != (ne + nr) * 8 {
            return Err(corrupt(16 + hlen, "embedding blocks have the wrong length"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(corrupt(16 + hlen + 8 * i, "non-finite value"));
        }
        let mut table = EmbeddingTable {
            dim: header.dim,
            margin: header.margin,
            seed: header.seed,
            entity: values[..ne].to_vec(),
            relation: values[ne..].to_vec(),
            trained: header.trained,
            version: String::new(),
        };
        table.refresh_version();
        Ok(table)
    }
}

/// Trains TransE with one corrupted triple per positive per epoch. Literal-object
/// triples are skipped.
pub fn train_transe(kb: &KnowledgeBase, config: &TransEConfig) -> Result<(EmbeddingTable, TransEReport)> {
    if config.learning_rate <= 0.0 || config.epochs == 0 {
        return Err(Error::InvalidConfig("TransE needs a positive learning rate and epochs".into()));
    }
    let positives: Vec<IndexTriple> = kb
        .triples()
        .iter()
        .filter_map(|t| match t.object {
            Node::Entity(o) => Some((t.subject.0 as usize, t.relation.0 as usize, o.0 as usize)),
            Node::Literal(_) => None,
        })
        .collect();
    if positives.is_empty() {
        return Err(Error::Untrainable("KB has no entity-object triples".into()));
    }
    let n_entities = kb.num_entities();
    let mut table = EmbeddingTable::init(n_entities, kb.num_relations(), config.dim, config.margin, config.seed)?;
    for &(_, r, _) in &positives {
        table.trained[r] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order = positives.clone();
    let mut report = TransEReport::default();
    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &pos in &order {
            let replacement = rng.gen_range(0..n_entities);
            let neg = if rng.gen_bool(0.5) {
                (replacement, pos.1, pos.2)
            } else {
                (pos.0, pos.1, replacement)
            };
            let loss = table.hinge(pos, neg);
            total += loss;
            if loss <= 0.0 {
                continue;
            }
            let g = table.hinge_gradient(pos, neg);
            for (i, grad) in &g.entity {
                let v = table.entity_mut(*i);
                v.iter_mut().zip(grad).for_each(|(p, d)| *p -= lr * d);
                normalize(v);
            }
            for (r, grad) in &g.relation {
                let v = table.relation_mut(*r);
                v.iter_mut().zip(grad).for_each(|(p, d)| *p -= lr * d);
            }
        }
        report.epoch_loss.push(total / order.len() as f64);
    }
    table.refresh_version();
    Ok((table, report))
}
