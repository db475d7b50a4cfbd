//! Per-algorithm token-embedding sequences.
//!
//! Catalogs come from a JSONL file (one `{"algorithm_id", "tokens"}` object
//! per line), from a seeded synthetic generator, or from a remote embedding
//! service that answers `POST {"text": ...}` with `{"tokens": [[...], ...]}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding dimension {found} does not match catalog dimension {expected} (algorithm {algorithm})")]
    DimMismatch {
        algorithm: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate algorithm {0}")]
    DuplicateAlgorithm(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("unknown algorithm {0}")]
    UnknownAlgorithm(String),
    #[error("malformed token matrix: {0}")]
    MalformedSequence(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

type Result<T> = std::result::Result<T, EmbeddingError>;

/// `T x e` matrix of token embeddings for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    algorithm_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl TokenEmbeddingSequence {
    /// Validates that the rows are non-empty, rectangular and finite.
    pub fn new(algorithm_id: impl Into<String>, tokens: Vec<Vec<f64>>) -> Result<Self> {
        let dim = tokens.first().map(Vec::len).unwrap_or(0);
        if tokens.is_empty() || dim == 0 {
            return Err(EmbeddingError::MalformedSequence(
                "need at least one non-empty token".into(),
            ));
        }
        if let Some(i) = tokens.iter().position(|r| r.len() != dim) {
            return Err(EmbeddingError::MalformedSequence(format!(
                "row {i} has length {} instead of {dim}",
                tokens[i].len()
            )));
        }
        if tokens.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::MalformedSequence("non-finite entry".into()));
        }
        Ok(Self {
            algorithm_id: algorithm_id.into(),
            dim,
            data: tokens.into_iter().flatten().collect(),
        })
    }

    pub fn algorithm_id(&self) -> &str {
        &self.algorithm_id
    }

    /// Number of tokens `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Embedding width `e`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Mean over tokens.
    pub fn mean_token(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.tokens() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn with_id(mut self, algorithm_id: impl Into<String>) -> Self {
        self.algorithm_id = algorithm_id.into();
        self
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    algorithm_id: String,
    tokens: Vec<Vec<f64>>,
}

/// Map from algorithm id to its embedding sequence, all of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCatalog {
    dim: usize,
    entries: BTreeMap<String, TokenEmbeddingSequence>,
}

impl EmbeddingCatalog {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, seq: TokenEmbeddingSequence) -> Result<()> {
        if seq.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                algorithm: seq.algorithm_id.clone(),
                expected: self.dim,
                found: seq.dim(),
            });
        }
        if self.entries.contains_key(&seq.algorithm_id) {
            return Err(EmbeddingError::DuplicateAlgorithm(seq.algorithm_id));
        }
        self.entries.insert(seq.algorithm_id.clone(), seq);
        Ok(())
    }

    pub fn get(&self, algorithm_id: &str) -> Result<&TokenEmbeddingSequence> {
        self.entries
            .get(algorithm_id)
            .ok_or_else(|| EmbeddingError::UnknownAlgorithm(algorithm_id.to_string()))
    }

    pub fn contains(&self, algorithm_id: &str) -> bool {
        self.entries.contains_key(algorithm_id)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut catalog: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| EmbeddingError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let seq = TokenEmbeddingSequence::new(rec.algorithm_id, rec.tokens).map_err(|e| EmbeddingError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            catalog.get_or_insert_with(|| Self::new(seq.dim())).insert(seq)?;
        }
        catalog.ok_or(EmbeddingError::EmptyCatalog)
    }

    /// One record per line, sorted by algorithm id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for seq in self.entries.values() {
            let rec = Record {
                algorithm_id: seq.algorithm_id.clone(),
                tokens: seq.tokens().map(<[f64]>::to_vec).collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("finite values serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }
}

pub fn load_catalog(path: &Path) -> Result<EmbeddingCatalog> {
    let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingCatalog::parse_jsonl(&text)
}

/// Standard-normal catalog, a pure function of its arguments. Ids are
/// consumed in the given order.
pub fn synth_catalog<S: AsRef<str>>(algorithm_ids: &[S], dim: usize, tokens: usize, seed: u64) -> EmbeddingCatalog {
    assert!(dim >= 1 && tokens >= 1, "synthetic catalog needs e, T >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut catalog = EmbeddingCatalog::new(dim);
    for id in algorithm_ids {
        let rows = (0..tokens)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let seq = TokenEmbeddingSequence::new(id.as_ref(), rows).expect("normal draws are finite");
        catalog.insert(seq).expect("synthetic ids must be unique");
    }
    catalog
}

#[derive(Deserialize)]
struct RemoteResponse {
    tokens: Vec<Vec<f64>>,
}

/// Fetches the token embeddings of `code_text` from a remote service.
pub fn fetch_remote(endpoint: &str, algorithm_id: &str, code_text: &str) -> Result<TokenEmbeddingSequence> {
    let body = serde_json::json!({ "text": code_text });
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent
        .post(endpoint)
        .header("content-type", "application/json")
        .send(body.to_string())
        .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    if status != 200 {
        return Err(EmbeddingError::Transport(format!("status {status}")));
    }
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
    let parsed: RemoteResponse =
        serde_json::from_str(&text).map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))?;
    TokenEmbeddingSequence::new(algorithm_id, parsed.tokens)
        .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))
}

/// Fetches and inserts into `catalog`, enforcing its width.
pub fn fetch_into(catalog: &mut EmbeddingCatalog, endpoint: &str, algorithm_id: &str, code_text: &str) -> Result<()> {
    let seq = fetch_remote(endpoint, algorithm_id, code_text)?;
    catalog.insert(seq)
}
