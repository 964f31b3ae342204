//! Trainable question encoder: hashed unigram and bigram embeddings averaged
//! and L2-normalized, trained with a relation-F1 weighted in-batch NLL.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lf::LogicalForm;
use crate::linker::Mention;
use crate::text::{fnv1a, word_tokens};

pub const BLANK: &str = "[BLANK]";
pub const EMPTY: &str = "[EMPTY]";
const CHECKPOINT_MAGIC: &[u8; 8] = b"CBRQAENC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// log2 of the number of hash buckets.
    pub hash_bits: u32,
    pub dim: usize,
    pub temperature: f64,
    pub p_mask: f64,
    pub seed: u64,
    /// Also mask mentions when encoding at inference time.
    #[serde(default)]
    pub mask_at_inference: bool,
    /// Half-width of the uniform initialization, in units of `1/sqrt(dim)`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    1.0
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hash_bits: 15,
            dim: 64,
            temperature: 0.1,
            p_mask: 0.5,
            seed: 0,
            mask_at_inference: false,
            init_scale: default_init_scale(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    params: Vec<f64>,
    version: String,
}

/// Token sequence of `question` where each mention chosen by `mask` is
/// replaced by a single [`BLANK`] token.
fn masked_tokens(question: &str, mentions: &[Mention], mask: &mut dyn FnMut() -> bool) -> Vec<String> {
    let masked: Vec<(usize, usize)> = mentions.iter().filter(|_| mask()).map(|m| m.span).collect();
    let mut out = Vec::new();
    let mut last_blank: Option<(usize, usize)> = None;
    for t in word_tokens(question) {
        match masked.iter().find(|s| t.start >= s.0 && t.end <= s.1) {
            Some(&span) => {
                if last_blank != Some(span) {
                    out.push(BLANK.to_string());
                    last_blank = Some(span);
                }
            }
            None => out.push(t.text),
        }
    }
    out
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if !(1..=24).contains(&config.hash_bits) || config.dim == 0 {
            return Err(Error::InvalidConfig("hash_bits must be in 1..=24 and dim positive".into()));
        }
        if config.temperature <= 0.0 || !(0.0..=1.0).contains(&config.p_mask) {
            return Err(Error::InvalidConfig("temperature must be positive, p_mask in [0, 1]".into()));
        }
        if config.init_scale <= 0.0 {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = (1usize << config.hash_bits) * config.dim;
        let scale = config.init_scale / (config.dim as f64).sqrt();
        let params = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let mut enc = Encoder {
            config,
            params,
            version: String::new(),
        };
        enc.refresh_version();
        Ok(enc)
    }

    /// Encoder with explicit parameters (`2^hash_bits * dim` values).
    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        if params.len() != (1usize << config.hash_bits) * config.dim {
            return Err(Error::InvalidConfig("parameter count does not match config".into()));
        }
        let mut enc = Encoder {
            config,
            params,
            version: String::new(),
        };
        enc.refresh_version();
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Hash of config and parameters; cached vectors must carry the same one.
    pub fn version(&self) -> &str {
        &self.version
    }

    fn refresh_version(&mut self) {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        let digest = h.finalize();
        self.version = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    }

    fn bucket(&self, feature: &str) -> usize {
        (fnv1a(feature.as_bytes()) & ((1u64 << self.config.hash_bits) - 1)) as usize
    }

    /// Hashed unigram and bigram feature buckets of a token sequence.
    pub fn features(&self, tokens: &[String]) -> Vec<usize> {
        if tokens.is_empty() {
            return vec![self.bucket(EMPTY)];
        }
        let mut f: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        for w in tokens.windows(2) {
            f.push(self.bucket(&format!("{} {}", w[0], w[1])));
        }
        f
    }

    fn embed(&self, features: &[usize]) -> (Vec<f64>, f64) {
        let d = self.config.dim;
        let mut v = vec![0.0; d];
        for &f in features {
            for (x, p) in v.iter_mut().zip(&self.params[f * d..(f + 1) * d]) {
                *x += p;
            }
        }
        let n = features.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (v, norm)
    }

    /// Unit vector for a bag of feature buckets.
    pub fn encode_features(&self, features: &[usize]) -> Vec<f64> {
        let (v, norm) = self.embed(features);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
        let (v, norm) = self.embed(&[self.bucket(EMPTY)]);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
        let mut e = vec![0.0; self.config.dim];
        e[0] = 1.0;
        e
    }

    /// Encodes a question. In training mode each mention is masked
    /// independently with probability `p_mask` using `rng`.
    pub fn encode(
        &self,
        question: &str,
        mentions: &[Mention],
        training: Option<&mut ChaCha8Rng>,
    ) -> Vec<f64> {
        let tokens = self.tokens(question, mentions, training);
        self.encode_features(&self.features(&tokens))
    }

    pub fn tokens(&self, question: &str, mentions: &[Mention], training: Option<&mut ChaCha8Rng>) -> Vec<String> {
        let p = self.config.p_mask;
        match training {
            Some(rng) => masked_tokens(question, mentions, &mut || rng.gen_bool(p)),
            None if self.config.mask_at_inference => masked_tokens(question, mentions, &mut || true),
            None => masked_tokens(question, mentions, &mut || false),
        }
    }

    /// Loss and sparse gradient for one batch of feature bags and row weights
    /// (`weights[i][j]`, diagonal ignored). Rows with zero total weight are
    /// skipped; the loss is the mean over the remaining rows.
    pub fn batch_loss(&self, batch: &[Vec<usize>], weights: &[Vec<f64>]) -> (f64, BTreeMap<usize, Vec<f64>>) {
        let d = self.config.dim;
        let tau = self.config.temperature;
        let n = batch.len();
        let embedded: Vec<(Vec<f64>, f64)> = batch.iter().map(|f| self.embed(f)).collect();
        let units: Vec<Vec<f64>> = embedded
            .iter()
            .map(|(v, norm)| v.iter().map(|x| x / norm.max(1e-12)).collect())
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut grad_u = vec![vec![0.0; d]; n];
        let mut loss = 0.0;
        let mut active = 0usize;
        for i in 0..n {
            let total: f64 = (0..n).filter(|&j| j != i).map(|j| weights[i][j]).sum();
            if total <= 0.0 {
                continue;
            }
            active += 1;
            let logits: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(&units[i], &units[j]) / tau))
                .collect();
            let max = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l.1 - max).exp()).sum();
            let log_z = max + z.ln();
            for &(j, l) in &logits {
                let w = weights[i][j] / total;
                let p = (l - log_z).exp();
                if w > 0.0 {
                    loss -= w * (l - log_z);
                }
                // d(-sum_j w log p_j)/d s_ij, scaled later by 1/active.
                let g = (p - w) / tau;
                for k in 0..d {
                    grad_u[i][k] += g * units[j][k];
                    grad_u[j][k] += g * units[i][k];
                }
            }
        }
        let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        if active == 0 {
            return (0.0, grads);
        }
        let scale = 1.0 / active as f64;
        for i in 0..n {
            let (_, norm) = &embedded[i];
            let u = &units[i];
            let g = &grad_u[i];
            let ug = dot(u, g);
            let per_feature = scale / (norm.max(1e-12) * batch[i].len() as f64);
            for &f in &batch[i] {
                let row = grads.entry(f).or_insert_with(|| vec![0.0; d]);
                for k in 0..d {
                    row[k] += per_feature * (g[k] - u[k] * ug);
                }
            }
        }
        (loss * scale, grads)
    }

    fn apply(&mut self, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) {
        let d = self.config.dim;
        for (&f, g) in grads {
            for (p, gk) in self.params[f * d..(f + 1) * d].iter_mut().zip(g) {
                *p -= lr * gk;
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&self.config)?;
        let mut bytes = Vec::with_capacity(16 + header.len() + self.params.len() * 8);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for p in &self.params {
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
            return Err(corrupt(0, "not an encoder checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = bytes.get(16..16 + hlen).ok_or_else(|| corrupt(16, "truncated header"))?;
        let config: EncoderConfig =
            serde_json::from_slice(header).map_err(|e| corrupt(16, &e.to_string()))?;
        let body = &bytes[16 + hlen..];
        let expected = (1usize << config.hash_bits) * config.dim * 8;
        if body.len() != expected {
            return Err(corrupt(16 + hlen, "parameter block has the wrong length"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut enc = Encoder {
            config,
            params,
            version: String::new(),
        };
        enc.refresh_version();
        Ok(enc)
    }
}

/// F1 overlap between the relation sets of two LFs.
pub fn relation_f1(a: &LogicalForm, b: &LogicalForm) -> f64 {
    set_f1(&a.relations(), &b.relations())
}

pub(crate) fn set_f1(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let inter = a.intersection(b).count();
    if inter == 0 {
        return 0.0;
    }
    let p = inter as f64 / a.len() as f64;
    let r = inter as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 10,
            learning_rate: 2.0,
            seed: 0,
        }
    }
}

/// A training question with its gold LF.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub question: &'a str,
    pub mentions: &'a [Mention],
    pub lf: &'a LogicalForm,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        s
    }
}

/// Batches pairing each anchor with one partner that shares a relation.
fn make_batches(
    items: &[TrainItem],
    partners: &[Vec<usize>],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut anchors: Vec<usize> = (0..items.len()).filter(|&i| !partners[i].is_empty()).collect();
    anchors.shuffle(rng);
    let per_batch = (batch_size / 2).max(1);
    anchors
        .chunks(per_batch)
        .map(|chunk| {
            let mut batch: Vec<usize> = Vec::with_capacity(batch_size);
            for &a in chunk {
                if !batch.contains(&a) {
                    batch.push(a);
                }
                let p = *partners[a].choose(rng).unwrap();
                if !batch.contains(&p) {
                    batch.push(p);
                }
            }
            batch
        })
        .collect()
}

/// Trains `enc` in place with SGD and linear learning-rate decay.
pub fn train_retriever(enc: &mut Encoder, items: &[TrainItem], config: &TrainConfig) -> Result<TrainReport> {
    if config.batch_size < 2 || config.epochs == 0 || config.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig("batch_size >= 2, epochs >= 1, learning_rate > 0".into()));
    }
    let mut by_relation: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        for r in it.lf.relations() {
            by_relation.entry(r).or_default().push(i);
        }
    }
    let partners: Vec<Vec<usize>> = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let set: BTreeSet<usize> = it
                .lf
                .relations()
                .iter()
                .flat_map(|r| by_relation[r].iter().copied())
                .filter(|&j| j != i)
                .collect();
            set.into_iter().collect()
        })
        .collect();
    if partners.iter().all(Vec::is_empty) {
        return Err(Error::Untrainable("no pair of examples shares a relation".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batches_per_epoch = make_batches(items, &partners, config.batch_size, &mut rng.clone()).len();
    let total_steps = (batches_per_epoch * config.epochs).max(1);
    let mut report = TrainReport::default();
    let mut step = 0;
    for _ in 0..config.epochs {
        let batches = make_batches(items, &partners, config.batch_size, &mut rng);
        let mut sum = 0.0;
        for batch in &batches {
            let feats: Vec<Vec<usize>> = batch
                .iter()
                .map(|&i| {
                    let toks = enc.tokens(items[i].question, items[i].mentions, Some(&mut rng));
                    enc.features(&toks)
                })
                .collect();
            let weights: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| batch.iter().map(|&j| relation_f1(items[i].lf, items[j].lf)).collect())
                .collect();
            let (loss, grads) = enc.batch_loss(&feats, &weights);
            let lr = config.learning_rate * (1.0 - step as f64 / total_steps as f64);
            enc.apply(&grads, lr);
            sum += loss;
            step += 1;
        }
        report.epoch_loss.push(sum / batches.len().max(1) as f64);
    }
    report.steps = step;
    enc.refresh_version();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lf::parse;
    use crate::linker::MentionSource;

    fn small() -> Encoder {
        Encoder::new(EncoderConfig {
            hash_bits: 6,
            dim: 8,
            ..EncoderConfig::default()
        })
        .unwrap()
    }

    fn mention(q: &str, name: &str, e: &str) -> Mention {
        let start = q.find(name).unwrap();
        let s = q[..start].chars().count();
        Mention::new(q, (s, s + name.chars().count()), e, MentionSource::Gold)
    }

    #[test]
    fn unit_norm_and_self_similarity() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        for q in ["", "?!", "who is rihanna's brother?", "a b c d e f g"] {
            let v = enc.encode(q, &[], None);
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{q}");
            let c: f64 = v.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!((c - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_masking_makes_paraphrases_identical() {
        let mut enc = Encoder::new(EncoderConfig::default()).unwrap();
        let a = "Who is Justin Bieber's brother?";
        let b = "Who is Rihanna's brother?";
        let ma = [mention(a, "Justin Bieber", "m.06w2sn5")];
        let mb = [mention(b, "Rihanna", "m.06wrpx")];
        enc.config.p_mask = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(enc.tokens(a, &ma, Some(&mut rng)), enc.tokens(b, &mb, Some(&mut rng)));
        assert_eq!(enc.encode(a, &ma, Some(&mut rng)), enc.encode(b, &mb, Some(&mut rng)));
        enc.config.p_mask = 0.0;
        assert_ne!(enc.encode(a, &ma, Some(&mut rng)), enc.encode(b, &mb, Some(&mut rng)));
    }

    #[test]
    fn f1_examples() {
        let a = parse("SELECT DISTINCT ?x WHERE { ns:e ns:r1 ?y . ?y ns:r2 ?x . }").unwrap();
        let b = parse("SELECT DISTINCT ?x WHERE { ns:e ns:r1 ?x . }").unwrap();
        let c = parse("SELECT DISTINCT ?x WHERE { ns:e ns:r3 ?x . }").unwrap();
        assert_eq!(relation_f1(&a, &a), 1.0);
        assert_eq!(relation_f1(&b, &c), 0.0);
        assert!((relation_f1(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let enc = small();
        let batch = vec![vec![1, 2], vec![3, 4], vec![5]];
        let (loss, grads) = enc.batch_loss(&batch, &vec![vec![0.0; 3]; 3]);
        assert_eq!(loss, 0.0);
        assert!(grads.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_round_trip() {
        let lf = parse("SELECT DISTINCT ?x WHERE { ns:e ns:r ?x . }").unwrap();
        let qs = ["what is the r of a", "tell me the r of b", "r of c please"];
        let items: Vec<TrainItem> = qs
            .iter()
            .map(|q| TrainItem { question: q, mentions: &[], lf: &lf })
            .collect();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let mut a = small();
        let mut b = small();
        train_retriever(&mut a, &items, &cfg).unwrap();
        train_retriever(&mut b, &items, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.version(), b.version());
        assert_ne!(a.version(), small().version());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bin");
        a.save(&path).unwrap();
        let back = Encoder::load(&path).unwrap();
        assert_eq!(back.params(), a.params());
        assert_eq!(back.version(), a.version());
        fs::write(&path, b"CBRQAENC\x05\0\0\0\0\0\0\0{}").unwrap();
        assert!(matches!(Encoder::load(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn untrainable_without_positive_pairs() {
        let a = parse("SELECT DISTINCT ?x WHERE { ns:e ns:r ?x . }").unwrap();
        let b = parse("SELECT DISTINCT ?x WHERE { ns:e ns:s ?x . }").unwrap();
        let items = [
            TrainItem { question: "q1", mentions: &[], lf: &a },
            TrainItem { question: "q2", mentions: &[], lf: &b },
        ];
        let err = train_retriever(&mut small(), &items, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Untrainable(_)));
    }
}
