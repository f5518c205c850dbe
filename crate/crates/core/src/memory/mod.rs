//! Vector memory for retrieval-augmented context, and the short ring window
//! used to estimate disturbance dynamics.

mod window;

use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use window::{window_slope, RingWindow, WindowError, DEFAULT_WINDOW};

/// Embedding dimension.
pub const DIM: usize = 256;
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError {
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error("vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("vector has dimension {0}, expected {DIM}")]
    BadDimension(usize),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("store file line {line}: {reason}")]
    Persist { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Experience,
    Observation,
    Knowledge,
    SimOutcome,
}

/// A unit-norm embedding. Construction checks the norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(v: Vec<f64>) -> Result<Self, MemoryError> {
        if v.len() != DIM {
            return Err(MemoryError::BadDimension(v.len()));
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= NORM_TOL) {
            return Err(MemoryError::NotUnit(n));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = MemoryError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Bucket a (lowercased) token hashes to.
pub fn token_bucket(token: &str) -> usize {
    (fnv1a(token) % DIM as u64) as usize
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Feature-hash embedding of text.
pub fn embed(text: &str) -> Result<Embedding, MemoryError> {
    embed_tokens(&tokenize(text))
}

/// Embeds a feature list; each item is tokenized like text.
pub fn embed_features<S: AsRef<str>>(items: &[S]) -> Result<Embedding, MemoryError> {
    let tokens: Vec<String> = items.iter().flat_map(|s| tokenize(s.as_ref())).collect();
    embed_tokens(&tokens)
}

fn embed_tokens(tokens: &[String]) -> Result<Embedding, MemoryError> {
    if tokens.is_empty() {
        return Err(MemoryError::EmptyInput);
    }
    let mut v = vec![0.0; DIM];
    for t in tokens {
        v[token_bucket(t)] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    Embedding::new(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: String,
    pub kind: RecordKind,
    pub stamp: f64,
    pub vector: Embedding,
    pub payload: Value,
}

impl MemoryRecord {
    /// Record whose vector is the embedding of `text`; the text is stored in
    /// the payload under `"text"`.
    pub fn from_text(id: &str, kind: RecordKind, stamp: f64, text: &str) -> Result<Self, MemoryError> {
        Ok(Self {
            id: id.to_string(),
            kind,
            stamp,
            vector: embed(text)?,
            payload: serde_json::json!({ "text": text }),
        })
    }

    /// Text used when the record is placed into a context.
    pub fn text(&self) -> String {
        match self.payload.get("text").and_then(Value::as_str) {
            Some(t) => t.to_string(),
            None => self.payload.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub record: MemoryRecord,
    pub similarity: f64,
}

/// Exhaustive-scan vector store.
#[derive(Debug, Clone, Default)]
pub struct VectorStore {
    records: Vec<MemoryRecord>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MemoryRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Inserts or replaces by id. Returns the store size.
    pub fn upsert(&mut self, record: MemoryRecord) -> usize {
        match self.records.iter_mut().find(|r| r.id == record.id) {
            Some(slot) => *slot = record,
            None => self.records.push(record),
        }
        self.records.len()
    }

    /// Top `k` by cosine similarity, newest first on ties, then by id.
    pub fn knn(&self, query: &Embedding, k: usize) -> Result<Vec<Hit>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        let mut hits: Vec<Hit> = self
            .records
            .iter()
            .map(|r| Hit {
                similarity: query.cosine(&r.vector),
                record: r.clone(),
            })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(b.record.stamp.total_cmp(&a.record.stamp))
                .then_with(|| a.record.id.cmp(&b.record.id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// Retrieved texts in rank order, cut at the first item that would
    /// overflow `token_budget` whitespace tokens.
    pub fn assemble_context(
        &self,
        query: &Embedding,
        k: usize,
        token_budget: usize,
    ) -> Result<Vec<String>, MemoryError> {
        if token_budget == 0 {
            return Err(MemoryError::ZeroBudget);
        }
        let mut used = 0;
        let mut out = Vec::new();
        for hit in self.knn(query, k)? {
            let text = hit.record.text();
            let cost = text.split_whitespace().count();
            if used + cost > token_budget {
                break;
            }
            used += cost;
            out.push(text);
        }
        Ok(out)
    }

    pub fn save_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load_jsonl<R: BufRead>(r: R) -> Result<Self, MemoryError> {
        let mut store = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| MemoryError::Persist {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MemoryRecord = serde_json::from_str(&line).map_err(|e| MemoryError::Persist {
                line: i + 1,
                reason: e.to_string(),
            })?;
            store.upsert(rec);
        }
        Ok(store)
    }
}

/// One writer, many readers. Queries see a consistent snapshot.
#[derive(Debug, Clone, Default)]
pub struct SharedStore(Arc<RwLock<VectorStore>>);

impl SharedStore {
    pub fn new(store: VectorStore) -> Self {
        Self(Arc::new(RwLock::new(store)))
    }

    pub fn upsert(&self, record: MemoryRecord) -> usize {
        self.0.write().unwrap_or_else(|e| e.into_inner()).upsert(record)
    }

    pub fn knn(&self, query: &Embedding, k: usize) -> Result<Vec<Hit>, MemoryError> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).knn(query, k)
    }

    pub fn assemble_context(&self, query: &Embedding, k: usize, budget: usize) -> Result<Vec<String>, MemoryError> {
        self.0
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .assemble_context(query, k, budget)
    }

    pub fn len(&self) -> usize {
        self.0.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, stamp: f64, text: &str) -> MemoryRecord {
        MemoryRecord::from_text(id, RecordKind::Experience, stamp, text).unwrap()
    }

    #[test]
    fn embed_is_deterministic_and_scale_invariant() {
        assert_eq!(embed("pipe").unwrap(), embed("pipe").unwrap());
        let c = embed("pipe pipe").unwrap().cosine(&embed("Pipe").unwrap());
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(embed("  ,. "), Err(MemoryError::EmptyInput));
    }

    #[test]
    fn disjoint_tokens_are_orthogonal() {
        let (a, b) = ("pipeline", "current");
        assert_ne!(token_bucket(a), token_bucket(b));
        assert_eq!(embed(a).unwrap().cosine(&embed(b).unwrap()), 0.0);
    }

    #[test]
    fn non_unit_vector_rejected() {
        assert!(matches!(Embedding::new(vec![0.5; DIM]), Err(MemoryError::NotUnit(_))));
        assert!(matches!(Embedding::new(vec![1.0]), Err(MemoryError::BadDimension(1))));
        let bad = format!(
            r#"{{"id":"a","kind":"experience","stamp":0.0,"vector":[{}],"payload":{{}}}}"#,
            vec!["0.1"; DIM].join(",")
        );
        assert!(VectorStore::load_jsonl(bad.as_bytes()).is_err());
    }

    #[test]
    fn upsert_overwrites_by_id() {
        let mut s = VectorStore::new();
        assert_eq!(s.upsert(rec("a", 0.0, "pipe")), 1);
        assert_eq!(s.upsert(rec("a", 1.0, "current")), 1);
        assert_eq!(s.get("a").unwrap().text(), "current");
        for i in 0..1000 {
            s.upsert(rec(&format!("r{i}"), i as f64, "x"));
        }
        assert_eq!(s.len(), 1001);
    }

    #[test]
    fn knn_identity_and_ties() {
        let mut s = VectorStore::new();
        assert!(s.knn(&embed("a").unwrap(), 3).unwrap().is_empty());
        s.upsert(rec("old", 1.0, "pipe drift"));
        s.upsert(rec("new", 2.0, "pipe drift"));
        s.upsert(rec("other", 3.0, "sand"));
        let hits = s.knn(&embed("pipe drift").unwrap(), 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].record.id, "new");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(hits[1].record.id, "old");
        assert_eq!(s.knn(&embed("x").unwrap(), 0), Err(MemoryError::ZeroK));
    }

    #[test]
    fn context_truncates_whole_items() {
        let mut s = VectorStore::new();
        let q = embed("lateral current east").unwrap();
        assert!(s.assemble_context(&q, 3, 10).unwrap().is_empty());
        s.upsert(rec("a", 0.0, "lateral current east strong"));
        s.upsert(rec("b", 0.0, "lateral current east"));
        s.upsert(rec("c", 0.0, "lateral drift"));
        let all = s.assemble_context(&q, 3, 100).unwrap();
        assert_eq!(
            all,
            vec!["lateral current east", "lateral current east strong", "lateral drift"]
        );
        let two = s.assemble_context(&q, 3, 8).unwrap();
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn persistence_round_trip() {
        let mut s = VectorStore::new();
        s.upsert(rec("a", 0.5, "pipe"));
        s.upsert(rec("b", 1.5, "current"));
        let mut buf = Vec::new();
        s.save_jsonl(&mut buf).unwrap();
        let line: Value = serde_json::from_str(std::str::from_utf8(&buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(line["vector"].as_array().unwrap().len(), DIM);
        assert_eq!(line["kind"], "experience");
        let back = VectorStore::load_jsonl(&buf[..]).unwrap();
        assert_eq!(back.get("b"), s.get("b"));
    }

    #[test]
    fn shared_store_readers_see_writes() {
        let s = SharedStore::default();
        let r = s.clone();
        std::thread::spawn(move || {
            s.upsert(rec("a", 0.0, "pipe"));
        })
        .join()
        .unwrap();
        assert_eq!(r.len(), 1);
    }
}
