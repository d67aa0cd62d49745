//! Byte-level byte-pair encoding.
//!
//! Ids `0..=255` are raw bytes, followed by the end-of-document and
//! unknown-byte specials, followed by one id per learned merge in training
//! order. There is no pre-tokenization: each document is one byte sequence
//! and merges may cross whitespace, but never document boundaries.
//!
//! Training picks the most frequent adjacent pair (overlapping occurrences
//! counted) and breaks ties by the smaller `(left bytes, right bytes)` in
//! lexicographic byte order. Merges are applied left to right without
//! overlap, in training and in encoding alike.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BYTE_TOKENS: usize = 256;
pub const EOD_ID: u32 = 256;
pub const UNK_ID: u32 = 257;
pub const NUM_SPECIALS: usize = 2;
/// Smallest valid vocabulary: bytes plus specials, zero merges.
pub const MIN_VOCAB: usize = BYTE_TOKENS + NUM_SPECIALS;

const EOD_TEXT: &str = "<|endoftext|>";
const UNK_TEXT: &str = "<|unk|>";
const FORMAT_TAG: &str = "bpe-vocab";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
}

impl Vocab {
    /// Byte vocabulary with specials and no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    /// Rebuilds a vocabulary from its merge list.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(EOD_TEXT.as_bytes().to_vec());
        tokens.push(UNK_TEXT.as_bytes().to_vec());
        let mut ranks = HashMap::with_capacity(merges.len());
        for (r, &(a, b)) in merges.iter().enumerate() {
            let n = tokens.len() as u32;
            for part in [a, b] {
                if part >= n || is_special(part) {
                    return Err(Error::Data(format!(
                        "merge {r} uses token {part}, which does not exist yet or is special"
                    )));
                }
            }
            let mut bytes = tokens[a as usize].clone();
            bytes.extend_from_slice(&tokens[b as usize]);
            tokens.push(bytes);
            if ranks.insert((a, b), r as u32).is_some() {
                return Err(Error::Data(format!("merge {r} ({a}, {b}) is a duplicate")));
            }
        }
        Ok(Self { tokens, merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn eod(&self) -> u32 {
        EOD_ID
    }

    fn merged_id(&self, rank: u32) -> u32 {
        MIN_VOCAB as u32 + rank
    }

    /// Token ids for `text`, merges applied in training order.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let n = bytes.len();
        if n < 2 || self.merges.is_empty() {
            return bytes.iter().map(|&b| b as u32).collect();
        }
        let mut sym: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        let mut next: Vec<usize> = (1..=n).collect();
        let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
        let mut alive = vec![true; n];
        // min-heap of (rank, position)
        let mut heap: BinaryHeap<Reverse<(u32, usize)>> = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&r) = self.ranks.get(&(sym[i], sym[i + 1])) {
                heap.push(Reverse((r, i)));
            }
        }
        while let Some(Reverse((rank, i))) = heap.pop() {
            if !alive[i] || next[i] >= n {
                continue;
            }
            let j = next[i];
            if self.ranks.get(&(sym[i], sym[j])) != Some(&rank) {
                continue;
            }
            sym[i] = self.merged_id(rank);
            alive[j] = false;
            next[i] = next[j];
            if next[i] < n {
                prev[next[i]] = i;
            }
            let p = prev[i];
            if p < n {
                if let Some(&r) = self.ranks.get(&(sym[p], sym[i])) {
                    heap.push(Reverse((r, p)));
                }
            }
            if next[i] < n {
                if let Some(&r) = self.ranks.get(&(sym[i], sym[next[i]])) {
                    heap.push(Reverse((r, i)));
                }
            }
        }
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            out.push(sym[i]);
            i = next[i];
        }
        out
    }

    /// Exact byte concatenation of the tokens; specials contribute nothing.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self
                .tokens
                .get(id as usize)
                .ok_or_else(|| Error::Index(format!("token id {id} outside vocabulary of {}", self.len())))?;
            if !is_special(id) {
                out.extend_from_slice(bytes);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|e| Error::Data(format!("decoded bytes are not UTF-8: {e}")))
    }

    /// Text form: a header line, one `id hex` line per token, a `merges`
    /// marker, then one `left right` line per merge.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{FORMAT_TAG} {FORMAT_VERSION} tokens={} merges={} eod={EOD_ID} unk={UNK_ID}",
            self.len(),
            self.merges.len()
        )
        .unwrap();
        for (id, bytes) in self.tokens.iter().enumerate() {
            s.push_str(&id.to_string());
            s.push(' ');
            for b in bytes {
                write!(s, "{b:02x}").unwrap();
            }
            s.push('\n');
        }
        s.push_str("merges\n");
        for (a, b) in &self.merges {
            writeln!(s, "{a} {b}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(path, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty vocabulary file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != FORMAT_TAG {
            return Err(err(1, format!("bad header {header:?}")));
        }
        if fields[1] != FORMAT_VERSION.to_string() {
            return Err(err(1, format!("unsupported version {}", fields[1])));
        }
        let kv = |f: &str, key: &str| -> Result<usize> {
            f.strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(1, format!("expected {key}=<n>, got {f:?}")))
        };
        let n_tokens = kv(fields[2], "tokens")?;
        let n_merges = kv(fields[3], "merges")?;
        if kv(fields[4], "eod")? != EOD_ID as usize || kv(fields[5], "unk")? != UNK_ID as usize {
            return Err(err(1, "special ids differ from this build".into()));
        }
        if n_tokens != MIN_VOCAB + n_merges {
            return Err(err(1, format!("{n_tokens} tokens inconsistent with {n_merges} merges")));
        }
        let mut table = Vec::with_capacity(n_tokens);
        for expect in 0..n_tokens {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(expect + 2, format!("file ends after {expect} of {n_tokens} tokens")))?;
            let (id, hex) = line.split_once(' ').unwrap_or((line, ""));
            if id.parse::<usize>().ok() != Some(expect) {
                return Err(err(ln, format!("expected token id {expect}, got {id:?}")));
            }
            table.push(parse_hex(hex).ok_or_else(|| err(ln, format!("bad hex bytes {hex:?}")))?);
        }
        match lines.next() {
            Some((_, "merges")) => {}
            Some((ln, other)) => return Err(err(ln, format!("expected \"merges\", got {other:?}"))),
            None => return Err(err(n_tokens + 2, "missing merges section".into())),
        }
        let mut merges = Vec::with_capacity(n_merges);
        for r in 0..n_merges {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(n_tokens + 3 + r, format!("file ends after {r} of {n_merges} merges")))?;
            let mut parts = line.split(' ');
            let pair = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            merges.push(pair.ok_or_else(|| err(ln, format!("bad merge line {line:?}")))?);
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(ln, format!("unexpected trailing content {extra:?}")));
        }
        let vocab = Self::from_merges(merges).map_err(|e| err(n_tokens + 2, e.to_string()))?;
        if vocab.tokens != table {
            let bad = vocab.tokens.iter().zip(&table).position(|(a, b)| a != b).unwrap_or(0);
            return Err(err(bad + 2, format!("token {bad} bytes disagree with the merge list")));
        }
        Ok(vocab)
    }

    /// Hex SHA-256 of the text form; identifies a tokenizer in checkpoints.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn is_special(id: u32) -> bool {
    id == EOD_ID || id == UNK_ID
}

fn parse_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || s.is_empty() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    std::fs::write(path, vocab.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_text(&text, path)
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Learns merges until the vocabulary holds `vocab_size` tokens. Stops early
/// only when no adjacent pair is left anywhere in the corpus.
pub fn train_bpe<S: AsRef<str>>(documents: &[S], vocab_size: usize) -> Result<Vocab> {
    if vocab_size < MIN_VOCAB {
        return Err(Error::Parameter(format!(
            "vocab_size {vocab_size} is below the {MIN_VOCAB} byte and special tokens"
        )));
    }
    if documents.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::Input("no training text for the tokenizer".into()));
    }
    let mut trainer = Trainer::new(documents);
    let mut tokens: Vec<Vec<u8>> = Vocab::bytes_only().tokens;
    let mut merges = Vec::new();
    while tokens.len() < vocab_size {
        let Some(pair) = trainer.best(&tokens) else { break };
        let new_id = tokens.len() as u32;
        let mut bytes = tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&tokens[pair.1 as usize]);
        tokens.push(bytes);
        merges.push(pair);
        trainer.apply(pair, new_id, &tokens);
    }
    Vocab::from_merges(merges)
}

/// Incremental pair statistics over all documents laid out in one flat
/// array with per-position links; document ends are never linked.
struct Trainer {
    sym: Vec<u32>,
    next: Vec<usize>,
    prev: Vec<usize>,
    alive: Vec<bool>,
    counts: HashMap<(u32, u32), i64>,
    positions: HashMap<(u32, u32), Vec<usize>>,
    heap: BinaryHeap<Candidate>,
}

const NONE: usize = usize::MAX;

impl Trainer {
    fn new<S: AsRef<str>>(documents: &[S]) -> Self {
        let total: usize = documents.iter().map(|d| d.as_ref().len()).sum();
        let mut sym = Vec::with_capacity(total);
        let mut next = Vec::with_capacity(total);
        let mut prev = Vec::with_capacity(total);
        for d in documents {
            let bytes = d.as_ref().as_bytes();
            let start = sym.len();
            for (k, &b) in bytes.iter().enumerate() {
                sym.push(b as u32);
                prev.push(if k == 0 { NONE } else { start + k - 1 });
                next.push(if k + 1 == bytes.len() { NONE } else { start + k + 1 });
            }
        }
        let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
        let mut positions: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for i in 0..sym.len() {
            if next[i] != NONE {
                let p = (sym[i], sym[next[i]]);
                *counts.entry(p).or_default() += 1;
                positions.entry(p).or_default().push(i);
            }
        }
        let alive = vec![true; sym.len()];
        let mut t = Self {
            sym,
            next,
            prev,
            alive,
            counts,
            positions,
            heap: BinaryHeap::new(),
        };
        let base = Vocab::bytes_only().tokens;
        let pairs: Vec<_> = t.counts.iter().map(|(&p, &c)| (p, c)).collect();
        for (p, c) in pairs {
            t.push(p, c, &base);
        }
        t
    }

    fn push(&mut self, pair: (u32, u32), count: i64, tokens: &[Vec<u8>]) {
        self.heap.push(Candidate {
            count,
            left: tokens[pair.0 as usize].clone(),
            right: tokens[pair.1 as usize].clone(),
            pair,
        });
    }

    fn best(&mut self, tokens: &[Vec<u8>]) -> Option<(u32, u32)> {
        while let Some(c) = self.heap.pop() {
            let current = self.counts.get(&c.pair).copied().unwrap_or(0);
            if current <= 0 {
                continue;
            }
            if current != c.count {
                self.push(c.pair, current, tokens);
                continue;
            }
            return Some(c.pair);
        }
        None
    }

    fn bump(&mut self, pair: (u32, u32), delta: i64, pos: usize, touched: &mut Vec<(u32, u32)>) {
        let c = self.counts.entry(pair).or_default();
        *c += delta;
        if delta > 0 {
            self.positions.entry(pair).or_default().push(pos);
            touched.push(pair);
        }
    }

    fn apply(&mut self, pair: (u32, u32), new_id: u32, tokens: &[Vec<u8>]) {
        let mut pos = self.positions.remove(&pair).unwrap_or_default();
        pos.sort_unstable();
        pos.dedup();
        let mut touched = Vec::new();
        for i in pos {
            if !self.alive[i] || self.sym[i] != pair.0 {
                continue;
            }
            let j = self.next[i];
            if j == NONE || self.sym[j] != pair.1 {
                continue;
            }
            let p = self.prev[i];
            let nn = self.next[j];
            if p != NONE {
                self.bump((self.sym[p], pair.0), -1, p, &mut touched);
            }
            if nn != NONE {
                self.bump((pair.1, self.sym[nn]), -1, j, &mut touched);
            }
            *self.counts.get_mut(&pair).expect("counted pair") -= 1;

            self.sym[i] = new_id;
            self.alive[j] = false;
            self.next[i] = nn;
            if nn != NONE {
                self.prev[nn] = i;
            }
            if p != NONE {
                self.bump((self.sym[p], new_id), 1, p, &mut touched);
            }
            if nn != NONE {
                self.bump((new_id, self.sym[nn]), 1, i, &mut touched);
            }
        }
        self.counts.remove(&pair);
        touched.sort_unstable();
        touched.dedup();
        for p in touched {
            let c = self.counts.get(&p).copied().unwrap_or(0);
            if c > 0 {
                self.push(p, c, tokens);
            }
        }
    }
}
