//! Contextual embeddings of keyword occurrences: the mean of the subword
//! vectors a provider assigns to the keyword's tokens in context.

pub mod bpe;
mod context;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canon::KeywordOccurrence;

pub use bpe::{bpe_train, BpeVocab};
pub use context::{ContextWindow, SkipGramConfig};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no vector for occurrence {0}")]
    MissingVector(String),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("occurrence {0} has no keyword tokens")]
    EmptyKeyword(String),
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("BPE vocabulary: {0}")]
    Vocab(String),
    #[error("item {index}: {source}")]
    Batch {
        index: usize,
        source: Box<EmbedError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    FileBacked,
    ContextWindow,
    DeterministicHash,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::FileBacked => "file-backed",
            ProviderKind::ContextWindow => "context-window",
            ProviderKind::DeterministicHash => "deterministic-hash",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEmbedding {
    /// [`KeywordOccurrence::key`] of the embedded occurrence.
    pub occurrence: String,
    pub vector: Vec<f64>,
}

/// Read-only source of occurrence vectors.
pub trait EmbeddingProvider: Sync {
    fn d_b(&self) -> usize;
    fn kind(&self) -> ProviderKind;
    fn embed_occurrence(&self, occ: &KeywordOccurrence) -> Result<ContextualEmbedding, EmbedError>;
}

/// Order-preserving parallel map of [`EmbeddingProvider::embed_occurrence`].
pub fn embed_batch(
    provider: &dyn EmbeddingProvider,
    occs: &[KeywordOccurrence],
) -> Result<Vec<ContextualEmbedding>, EmbedError> {
    occs.par_iter()
        .enumerate()
        .map(|(index, o)| {
            provider.embed_occurrence(o).map_err(|e| EmbedError::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Context token ids and the positions among them that cover the keyword.
pub fn keyword_tokens(
    bpe: &BpeVocab,
    occ: &KeywordOccurrence,
) -> Result<(Vec<u32>, Vec<usize>), EmbedError> {
    let span = occ.span.start - occ.context_offset..occ.span.end - occ.context_offset;
    let toks = bpe.encode_with_offsets(&occ.context);
    let positions: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| r.start < span.end && span.start < r.end)
        .map(|(i, _)| i)
        .collect();
    if positions.is_empty() {
        return Err(EmbedError::EmptyKeyword(occ.key()));
    }
    Ok((toks.into_iter().map(|t| t.0).collect(), positions))
}

pub(crate) fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

/// Gaussian token vectors derived from a hash of the token text and a seed.
/// Ignores context, so parameters of different callables with the same name coincide.
#[derive(Debug, Clone)]
pub struct HashProvider {
    bpe: Arc<BpeVocab>,
    d_b: usize,
    seed: u64,
}

impl HashProvider {
    pub fn new(bpe: Arc<BpeVocab>, d_b: usize, seed: u64) -> Self {
        HashProvider { bpe, d_b, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.d_b)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

impl EmbeddingProvider for HashProvider {
    fn d_b(&self) -> usize {
        self.d_b
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::DeterministicHash
    }

    fn embed_occurrence(&self, occ: &KeywordOccurrence) -> Result<ContextualEmbedding, EmbedError> {
        let (ids, positions) = keyword_tokens(&self.bpe, occ)?;
        let vecs: Vec<Vec<f64>> = positions
            .iter()
            .map(|&p| self.token_vector(self.bpe.token(ids[p]).unwrap_or(bpe::UNK)))
            .collect();
        Ok(ContextualEmbedding {
            occurrence: occ.key(),
            vector: mean_rows(vecs.iter().map(Vec::as_slice), self.d_b),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorEncoding {
    Hex,
    Base64,
}

/// Precomputed vectors keyed by occurrence, e.g. exported from an external encoder.
///
/// File format: a `d_b=<int>` header, then `key<TAB>payload` lines where the
/// payload is `d_b` little-endian f32 values in hex or base64.
#[derive(Debug, Clone, PartialEq)]
pub struct FileBacked {
    d_b: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl FileBacked {
    pub fn new(d_b: usize) -> Self {
        FileBacked {
            d_b,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, v: Vec<f32>) -> Result<(), EmbedError> {
        if v.len() != self.d_b {
            return Err(EmbedError::DimensionMismatch {
                expected: self.d_b,
                got: v.len(),
            });
        }
        self.vectors.insert(key.into(), v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, EmbedError> {
        let err = |line: usize, m: &str| EmbedError::Format {
            line,
            message: m.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let d_b: usize = header
            .trim()
            .strip_prefix("d_b=")
            .and_then(|v| v.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| err(1, "expected `d_b=<int>` header"))?;
        let mut out = FileBacked::new(d_b);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, payload) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "missing tab"))?;
            let payload = payload.trim();
            let bytes =
                if payload.len() == 8 * d_b && payload.bytes().all(|b| b.is_ascii_hexdigit()) {
                    hex::decode(payload).map_err(|e| err(i + 1, &e.to_string()))?
                } else {
                    base64::engine::general_purpose::STANDARD
                        .decode(payload)
                        .map_err(|e| err(i + 1, &e.to_string()))?
                };
            if bytes.len() != 4 * d_b {
                return Err(err(
                    i + 1,
                    &format!("payload has {} bytes, expected {}", bytes.len(), 4 * d_b),
                ));
            }
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(i + 1, "non-finite value"));
            }
            out.vectors.insert(key.to_string(), v);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Writes records sorted by key.
    pub fn write(&self, out: &mut impl Write, encoding: VectorEncoding) -> std::io::Result<()> {
        writeln!(out, "d_b={}", self.d_b)?;
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        for k in keys {
            let bytes: Vec<u8> = self.vectors[k]
                .iter()
                .flat_map(|x| x.to_le_bytes())
                .collect();
            let payload = match encoding {
                VectorEncoding::Hex => hex::encode(bytes),
                VectorEncoding::Base64 => base64::engine::general_purpose::STANDARD.encode(bytes),
            };
            writeln!(out, "{k}\t{payload}")?;
        }
        Ok(())
    }
}

impl EmbeddingProvider for FileBacked {
    fn d_b(&self) -> usize {
        self.d_b
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::FileBacked
    }

    fn embed_occurrence(&self, occ: &KeywordOccurrence) -> Result<ContextualEmbedding, EmbedError> {
        let key = occ.key();
        let v = self
            .vectors
            .get(&key)
            .ok_or_else(|| EmbedError::MissingVector(key.clone()))?;
        Ok(ContextualEmbedding {
            occurrence: key,
            vector: v.iter().map(|&x| x as f64).collect(),
        })
    }
}
