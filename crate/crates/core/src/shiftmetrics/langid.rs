use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::DetRng;

const MAGIC: &str = "langshift-langid 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangIdConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Hashed feature dimension; a power of two.
    pub buckets: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of each language's documents held out for accuracy.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for LangIdConfig {
    fn default() -> Self {
        Self {
            ngram_min: 1,
            ngram_max: 5,
            buckets: 1 << 18,
            epochs: 5,
            learning_rate: 0.5,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl LangIdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config("need 0 < ngram_min <= ngram_max".into()));
        }
        if !self.buckets.is_power_of_two() || self.buckets > u32::MAX as usize {
            return Err(Error::Config(format!(
                "buckets must be a power of two, got {}",
                self.buckets
            )));
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("epochs and learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Multinomial logistic regression over hashed character n-grams.
#[derive(Clone, Debug, PartialEq)]
pub struct LangIdModel {
    pub config: LangIdConfig,
    pub languages: Vec<String>,
    /// Row-major `(languages, buckets)`.
    weights: Vec<f32>,
    biases: Vec<f32>,
    /// Accuracy on the held-out documents, if any were held out.
    pub heldout_accuracy: Option<f64>,
    pub trained_documents: usize,
}

/// Sparse feature vector: sorted unique bucket ids with L2-normalized counts.
pub type Features = Vec<(u32, f32)>;

/// Character n-gram counts of ` text ` hashed into `buckets`, L2-normalized.
pub fn extract_features(text: &str, cfg: &LangIdConfig) -> Features {
    let chars: Vec<char> = std::iter::once(' ')
        .chain(text.chars())
        .chain(std::iter::once(' '))
        .collect();
    if text.is_empty() {
        return Vec::new();
    }
    let mask = (cfg.buckets - 1) as u64;
    let mut counts: BTreeMap<u32, f32> = BTreeMap::new();
    let mut buf = [0u8; 4];
    for n in cfg.ngram_min..=cfg.ngram_max {
        for w in chars.windows(n) {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ n as u64;
            for c in w {
                for &b in c.encode_utf8(&mut buf).as_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            *counts.entry((h & mask) as u32).or_default() += 1.0;
        }
    }
    let norm = counts.values().map(|c| c * c).sum::<f32>().sqrt();
    counts.into_iter().map(|(k, c)| (k, c / norm)).collect()
}

impl LangIdModel {
    fn scores(&self, x: &Features) -> Vec<f64> {
        let b = self.config.buckets;
        (0..self.languages.len())
            .map(|l| {
                let row = &self.weights[l * b..(l + 1) * b];
                self.biases[l] as f64 + x.iter().map(|&(j, v)| row[j as usize] as f64 * v as f64).sum::<f64>()
            })
            .collect()
    }

    fn probabilities(&self, x: &Features) -> Vec<f64> {
        let s = self.scores(x);
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Most probable language and its probability. Text without features
    /// carries no evidence and gets the uniform outcome `1 / L` (first
    /// language).
    pub fn classify(&self, text: &str) -> (String, f64) {
        let x = extract_features(text, &self.config);
        if x.is_empty() {
            return (self.languages[0].clone(), 1.0 / self.languages.len() as f64);
        }
        let p = self.probabilities(&x);
        let (best, conf) = p.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
        (self.languages[best].clone(), conf)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "config": self.config,
            "languages": self.languages,
            "heldout_accuracy": self.heldout_accuracy,
            "trained_documents": self.trained_documents,
        });
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "{header}").unwrap();
        for x in self.weights.iter().chain(&self.biases) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let digest: String = Sha256::digest(&out).iter().map(|b| format!("{b:02x}")).collect();
        writeln!(out, "\nsha256 {digest}").unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Integrity(format!("language-id model {m}"));
        if bytes.len() < 73 {
            return Err(bad("is truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 73);
        let trailer = std::str::from_utf8(trailer).map_err(|_| bad("trailer is not text"))?;
        let digest: String = Sha256::digest(body).iter().map(|b| format!("{b:02x}")).collect();
        if trailer != format!("\nsha256 {digest}\n") {
            return Err(bad("checksum mismatch"));
        }
        let nl1 = body
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("is truncated"))?;
        if &body[..nl1] != MAGIC.as_bytes() {
            return Err(bad("has an unknown magic line"));
        }
        let rest = &body[nl1 + 1..];
        let nl2 = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("is truncated"))?;
        #[derive(Deserialize)]
        struct Header {
            config: LangIdConfig,
            languages: Vec<String>,
            heldout_accuracy: Option<f64>,
            trained_documents: usize,
        }
        let h: Header = serde_json::from_slice(&rest[..nl2]).map_err(|e| bad(&format!("header: {e}")))?;
        h.config.validate()?;
        let raw = &rest[nl2 + 1..];
        let l = h.languages.len();
        if raw.len() != (l * h.config.buckets + l) * 4 {
            return Err(bad("weight block length does not match header"));
        }
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let (w, b) = vals.split_at(l * h.config.buckets);
        Ok(Self {
            config: h.config,
            languages: h.languages,
            weights: w.to_vec(),
            biases: b.to_vec(),
            heldout_accuracy: h.heldout_accuracy,
            trained_documents: h.trained_documents,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Trains on `(language, texts)` pairs with deterministic per-example
/// gradient descent. Each language's documents are shuffled and a
/// `holdout_fraction` of them is kept out of training and used to report
/// accuracy.
pub fn train_langid<S: AsRef<str>>(corpora: &[(String, Vec<S>)], config: &LangIdConfig) -> Result<LangIdModel> {
    config.validate()?;
    if corpora.len() < 2 {
        return Err(Error::Config(
            "language identification needs at least two languages".into(),
        ));
    }
    let languages: Vec<String> = corpora.iter().map(|(l, _)| l.clone()).collect();
    let mut uniq = languages.clone();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != languages.len() {
        return Err(Error::Config("language names repeat".into()));
    }
    let mut rng = DetRng::derive(config.seed, "langid");
    let mut train: Vec<(usize, Features)> = Vec::new();
    let mut held: Vec<(usize, Features)> = Vec::new();
    for (li, (lang, docs)) in corpora.iter().enumerate() {
        let mut idx: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].as_ref().is_empty()).collect();
        if idx.is_empty() {
            return Err(Error::Input(format!("language {lang} has no non-empty documents")));
        }
        idx.shuffle(&mut rng);
        let n_hold = (config.holdout_fraction * idx.len() as f64).round() as usize;
        let n_hold = n_hold.min(idx.len() - 1);
        for (k, &i) in idx.iter().enumerate() {
            let f = extract_features(docs[i].as_ref(), config);
            if k < n_hold {
                held.push((li, f));
            } else {
                train.push((li, f));
            }
        }
    }
    let l = languages.len();
    let mut model = LangIdModel {
        config: config.clone(),
        languages,
        weights: vec![0.0; l * config.buckets],
        biases: vec![0.0; l],
        heldout_accuracy: None,
        trained_documents: train.len(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let b = config.buckets;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (y, x) = &train[i];
            let p = model.probabilities(x);
            for (k, pk) in p.iter().enumerate() {
                let g = (pk - if k == *y { 1.0 } else { 0.0 }) * config.learning_rate;
                if g == 0.0 {
                    continue;
                }
                let row = &mut model.weights[k * b..(k + 1) * b];
                for &(j, v) in x {
                    row[j as usize] -= (g * v as f64) as f32;
                }
                model.biases[k] -= g as f32;
            }
        }
    }
    if !held.is_empty() {
        let correct = held
            .iter()
            .filter(|(y, x)| {
                let s = model.scores(x);
                let best = s
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    )
                    .0;
                best == *y
            })
            .count();
        model.heldout_accuracy = Some(correct as f64 / held.len() as f64);
    }
    Ok(model)
}
