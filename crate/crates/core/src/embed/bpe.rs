//! Byte-pair encoding over pre-split code words, with byte fallback for
//! characters the vocabulary never saw.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EmbedError;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";
const SPECIALS: [&str; 3] = [PAD, UNK, MASK];
const BYTE_BASE: u32 = SPECIALS.len() as u32;

static WORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)[A-Za-z_][A-Za-z0-9_]*|[0-9]+|\s+|.").expect("valid regex"));

/// Splits text into identifier, number, whitespace and single-character words.
pub fn pretokenize(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    WORD_RE.find_iter(text).map(|m| m.range())
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct BpeVocab {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    index: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl Default for BpeVocab {
    fn default() -> Self {
        BpeVocab::new(&BTreeSet::new(), Vec::new()).expect("byte vocabulary")
    }
}

impl PartialEq for BpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

impl BpeVocab {
    /// Specials, the 256 byte tokens, `alphabet` in order, then one token per new merge result.
    pub fn new(
        alphabet: &BTreeSet<char>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, EmbedError> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..=255u8).map(byte_token));
        tokens.extend(alphabet.iter().map(|c| c.to_string()));
        let mut index: HashMap<String, u32> = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(EmbedError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        let mut ranks = HashMap::new();
        for (r, (a, b)) in merges.iter().enumerate() {
            if !index.contains_key(a) || !index.contains_key(b) {
                return Err(EmbedError::Vocab(format!("merge {r} uses unknown token")));
            }
            let joined = format!("{a}{b}");
            if !index.contains_key(&joined) {
                index.insert(joined.clone(), tokens.len() as u32);
                tokens.push(joined);
            }
            ranks.entry((a.clone(), b.clone())).or_insert(r);
        }
        Ok(BpeVocab {
            tokens,
            merges,
            index,
            ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile {
            tokens: self.tokens.clone(),
            merges: self.merges.clone(),
        })
        .expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EmbedError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| EmbedError::Vocab(e.to_string()))?;
        let skip = SPECIALS.len() + 256;
        if file.tokens.len() < skip {
            return Err(EmbedError::Vocab("token table too short".into()));
        }
        let alphabet: BTreeSet<char> = file.tokens[skip..]
            .iter()
            .filter_map(|t| {
                let mut cs = t.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect();
        let vocab = Self::new(&alphabet, file.merges)?;
        if vocab.tokens != file.tokens {
            return Err(EmbedError::Vocab(
                "token table does not match the merges".into(),
            ));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Symbols of one word before merging: known characters, else their bytes.
    fn initial_symbols(&self, word: &str, offset: usize) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (i, c) in word.char_indices() {
            let s = c.to_string();
            let start = offset + i;
            if self.index.contains_key(&s) {
                out.push((s, start..start + c.len_utf8()));
            } else {
                let mut buf = [0u8; 4];
                for (k, b) in c.encode_utf8(&mut buf).bytes().enumerate() {
                    out.push((byte_token(b), start + k..start + k + 1));
                }
            }
        }
        out
    }

    fn merge_word(&self, mut syms: Vec<(String, Range<usize>)>) -> Vec<(String, Range<usize>)> {
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0].0.clone(), w[1].0.clone()))
                        .map(|&r| (r, w[0].0.clone(), w[1].0.clone()))
                })
                .min();
            let Some((_, a, b)) = best else { return syms };
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i].0 == a && syms[i + 1].0 == b {
                    out.push((format!("{a}{b}"), syms[i].1.start..syms[i + 1].1.end));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            syms = out;
        }
    }

    /// Token ids with the byte range of `text` each one covers.
    pub fn encode_with_offsets(&self, text: &str) -> Vec<(u32, Range<usize>)> {
        let mut out = Vec::new();
        for r in pretokenize(text) {
            let syms = self.merge_word(self.initial_symbols(&text[r.clone()], r.start));
            for (s, range) in syms {
                let id = self.index.get(&s).copied().unwrap_or(1);
                out.push((id, range));
            }
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_with_offsets(text)
            .into_iter()
            .map(|t| t.0)
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match id {
                0 | 2 => {}
                1 => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
                b if (BYTE_BASE..BYTE_BASE + 256).contains(&b) => bytes.push((b - BYTE_BASE) as u8),
                _ => match self.token(id) {
                    Some(t) => bytes.extend_from_slice(t.as_bytes()),
                    None => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
                },
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Learns up to `merge_count` merges from `texts`. Each round merges the most
/// frequent adjacent pair inside words; ties go to the smallest pair.
pub fn bpe_train<'a>(texts: impl IntoIterator<Item = &'a str>, merge_count: usize) -> BpeVocab {
    let mut counts: HashMap<&'a str, u64> = HashMap::new();
    for text in texts {
        for r in pretokenize(text) {
            *counts.entry(&text[r]).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.chars().map(|ch| ch.to_string()).collect(), c))
        .collect();
    words.sort();
    let alphabet: BTreeSet<char> = words
        .iter()
        .flat_map(|(w, _)| w.iter().flat_map(|s| s.chars()))
        .collect();
    let mut merges = Vec::new();
    for _ in 0..merge_count {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (w, c) in &words {
            for p in w.windows(2) {
                *pairs.entry((&p[0], &p[1])).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .max_by(|(p, c), (q, d)| c.cmp(d).then_with(|| q.cmp(p)));
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        let joined = format!("{a}{b}");
        for (w, _) in &mut words {
            let mut i = 0;
            while i + 1 < w.len() {
                if w[i] == a && w[i + 1] == b {
                    w[i] = joined.clone();
                    w.remove(i + 1);
                }
                i += 1;
            }
        }
        merges.push((a, b));
    }
    BpeVocab::new(&alphabet, merges).expect("trained merges use known tokens")
}
