//! API keyword dictionaries induced from aligned keyword embeddings.

mod score;
mod table;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{ApiKeyword, Framework, KeywordKind};

pub use score::{csls_rescale, greedy_match, score_matrix, Measure, ScoreMatrix};
pub use table::ScoreTable;

pub const FORMAT_VERSION: u32 = 1;
/// Expansion threshold for dot-product scores.
pub const DEFAULT_TAU: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("{side} embedding {index} has zero norm")]
    ZeroVector { side: &'static str, index: usize },
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("score matrix is {rows}x{cols} but vocabularies have {m1} and {m2} keywords")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        m1: usize,
        m2: usize,
    },
    #[error("K={k} must lie in 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("vocabulary has no callable keywords")]
    EmptyVocabulary,
    #[error("no dictionary entry for `{0}`")]
    UnmappedKeyword(String),
    #[error("dictionary file: {0}")]
    Format(String),
}

/// A callable and the parameter keywords it owns, by vocabulary id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordGroup {
    pub callable: usize,
    pub name: String,
    pub params: Vec<usize>,
}

/// Groups every callable of `vocab` with its parameters. Parameters whose
/// owner is not itself in the vocabulary are left out.
pub fn build_groups(vocab: &[ApiKeyword]) -> Vec<KeywordGroup> {
    let mut by_name: BTreeMap<&str, KeywordGroup> = BTreeMap::new();
    for (id, kw) in vocab.iter().enumerate() {
        if kw.is_callable() {
            by_name.insert(
                &kw.text,
                KeywordGroup {
                    callable: id,
                    name: kw.text.clone(),
                    params: Vec::new(),
                },
            );
        }
    }
    for (id, kw) in vocab.iter().enumerate() {
        if let Some(group) = kw.owner().and_then(|o| by_name.get_mut(o)) {
            group.params.push(id);
        }
    }
    let mut groups: Vec<_> = by_name.into_values().collect();
    groups.sort_by_key(|g| g.callable);
    groups
}

/// Callable score plus each source parameter's best score among the target's parameters.
pub fn group_similarity(g1: &KeywordGroup, g2: &KeywordGroup, s: &ScoreMatrix) -> f64 {
    let params: f64 = greedy_match(s, &g1.params, &g2.params)
        .iter()
        .map(|m| m.2)
        .sum();
    s.get(g1.callable, g2.callable) + params
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub src: String,
    /// `None` drops the argument.
    pub tgt: Option<String>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub src_param: String,
    pub new_call: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub src_callable: String,
    pub tgt_callable: String,
    pub score: f64,
    #[serde(default)]
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub expansions: Vec<Expansion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordDictionary {
    #[serde(default = "format_version")]
    pub version: u32,
    pub src_framework: Framework,
    pub tgt_framework: Framework,
    /// `None` disables expansions.
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    pub groups: Vec<GroupEntry>,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Translation {
    Rename(String),
    Drop,
    /// Drop the argument and emit `new_call` after the owning call.
    Expand(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictConfig {
    pub tau: Option<f64>,
    /// Parameter pairs scoring at or below this are never matched.
    pub drop_floor: f64,
}

impl Default for DictConfig {
    fn default() -> Self {
        DictConfig {
            tau: Some(DEFAULT_TAU),
            drop_floor: f64::NEG_INFINITY,
        }
    }
}

/// Two-level greedy dictionary induction.
///
/// Each source group goes to the target group of highest
/// [`group_similarity`]. Inside a matched pair, parameters whose score
/// against some target callable exceeds `tau` become expansions; the rest
/// are paired one-to-one in descending score order and leftovers are dropped.
pub fn generate_dictionary(
    vocab1: &[ApiKeyword],
    vocab2: &[ApiKeyword],
    s: &ScoreMatrix,
    cfg: &DictConfig,
) -> Result<KeywordDictionary, DictError> {
    let (rows, cols) = s.shape();
    if rows != vocab1.len() || cols != vocab2.len() {
        return Err(DictError::ShapeMismatch {
            rows,
            cols,
            m1: vocab1.len(),
            m2: vocab2.len(),
        });
    }
    let src_groups = build_groups(vocab1);
    let tgt_groups = build_groups(vocab2);
    if src_groups.is_empty() || tgt_groups.is_empty() {
        return Err(DictError::EmptyVocabulary);
    }
    let tgt_callables: Vec<usize> = tgt_groups.iter().map(|g| g.callable).collect();

    let mut groups = Vec::with_capacity(src_groups.len());
    for g1 in &src_groups {
        let mut best: Option<(&KeywordGroup, f64)> = None;
        for g2 in &tgt_groups {
            let v = group_similarity(g1, g2, s);
            best = match best {
                Some((b, bv)) if bv > v || (bv == v && b.name < g2.name) => Some((b, bv)),
                _ => Some((g2, v)),
            };
        }
        let (g2, score) = best.expect("target groups are non-empty");

        let mut expansions = Vec::new();
        let mut candidates = Vec::new();
        for &p in &g1.params {
            let expansion = cfg
                .tau
                .and_then(|tau| score::best_column(s, p, &tgt_callables).filter(|&(_, v)| v > tau));
            match expansion {
                Some((c, v)) => expansions.push(Expansion {
                    src_param: vocab1[p].text.clone(),
                    new_call: format!("{}()", vocab2[c].text),
                    score: v,
                }),
                None => candidates.push(p),
            }
        }
        let pairs = one_to_one(s, &candidates, &g2.params, cfg.drop_floor);
        let params = candidates
            .iter()
            .map(|&p| match pairs.get(&p) {
                Some(&(q, v)) => ParamEntry {
                    src: vocab1[p].text.clone(),
                    tgt: Some(vocab2[q].text.clone()),
                    score: Some(v),
                },
                None => ParamEntry {
                    src: vocab1[p].text.clone(),
                    tgt: None,
                    score: score::best_column(s, p, &g2.params).map(|b| b.1),
                },
            })
            .collect();
        groups.push(GroupEntry {
            src_callable: g1.name.clone(),
            tgt_callable: g2.name.clone(),
            score,
            params,
            expansions,
        });
    }
    Ok(KeywordDictionary {
        version: FORMAT_VERSION,
        src_framework: vocab1[0].framework,
        tgt_framework: vocab2[0].framework,
        tau: cfg.tau,
        measure: Some(s.measure.clone()),
        groups,
    })
}

fn one_to_one(
    s: &ScoreMatrix,
    rows: &[usize],
    cols: &[usize],
    floor: f64,
) -> BTreeMap<usize, (usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        for &j in cols {
            let v = s.get(i, j);
            if v > floor {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut taken_rows = BTreeMap::new();
    let mut taken_cols = std::collections::BTreeSet::new();
    for (v, i, j) in pairs {
        if taken_rows.contains_key(&i) || taken_cols.contains(&j) {
            continue;
        }
        taken_rows.insert(i, (j, v));
        taken_cols.insert(j);
    }
    taken_rows
}

impl KeywordDictionary {
    pub fn from_json(text: &str) -> Result<Self, DictError> {
        let dict: KeywordDictionary =
            serde_json::from_str(text).map_err(|e| DictError::Format(e.to_string()))?;
        if dict.version != FORMAT_VERSION {
            return Err(DictError::Format(format!(
                "unsupported version {}",
                dict.version
            )));
        }
        Ok(dict)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serializes")
    }

    pub fn load(path: &Path) -> Result<Self, DictError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DictError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
    }

    pub fn group(&self, src_callable: &str) -> Option<&GroupEntry> {
        self.groups.iter().find(|g| g.src_callable == src_callable)
    }

    /// Translation of a source keyword; parameters resolve within their owner's group.
    pub fn lookup(&self, kw: &ApiKeyword) -> Result<Translation, DictError> {
        let unmapped = || DictError::UnmappedKeyword(kw.qualified());
        match &kw.kind {
            KeywordKind::Callable => self
                .group(&kw.text)
                .map(|g| Translation::Rename(g.tgt_callable.clone()))
                .ok_or_else(unmapped),
            KeywordKind::Parameter { owner } => {
                let group = self.group(owner).ok_or_else(unmapped)?;
                if let Some(e) = group.expansions.iter().find(|e| e.src_param == kw.text) {
                    return Ok(Translation::Expand(e.new_call.clone()));
                }
                let entry = group
                    .params
                    .iter()
                    .find(|p| p.src == kw.text)
                    .ok_or_else(unmapped)?;
                Ok(match &entry.tgt {
                    Some(t) => Translation::Rename(t.clone()),
                    None => Translation::Drop,
                })
            }
        }
    }

    /// Source/target keyword pairs the dictionary asserts, callables first per group.
    pub fn keyword_pairs(&self) -> Vec<(ApiKeyword, ApiKeyword)> {
        let mut out = Vec::new();
        for g in &self.groups {
            out.push((
                ApiKeyword::callable(self.src_framework, &g.src_callable),
                ApiKeyword::callable(self.tgt_framework, &g.tgt_callable),
            ));
            for p in &g.params {
                if let Some(t) = &p.tgt {
                    out.push((
                        ApiKeyword::parameter(self.src_framework, &g.src_callable, &p.src),
                        ApiKeyword::parameter(self.tgt_framework, &g.tgt_callable, t),
                    ));
                }
            }
        }
        out
    }

    /// Line-oriented differences from `self` to `other`; empty when equivalent.
    pub fn diff(&self, other: &KeywordDictionary) -> Vec<String> {
        let flatten = |d: &KeywordDictionary| -> BTreeMap<String, String> {
            let mut m = BTreeMap::new();
            for g in &d.groups {
                m.insert(g.src_callable.clone(), g.tgt_callable.clone());
                for p in &g.params {
                    let t = p.tgt.clone().unwrap_or_else(|| "<drop>".into());
                    m.insert(format!("{}::{}", g.src_callable, p.src), t);
                }
                for e in &g.expansions {
                    m.insert(
                        format!("{}::{}", g.src_callable, e.src_param),
                        format!("<expand {}>", e.new_call),
                    );
                }
            }
            m
        };
        let (a, b) = (flatten(self), flatten(other));
        let mut out = Vec::new();
        for (k, v) in &a {
            match b.get(k) {
                None => out.push(format!("- {k} -> {v}")),
                Some(w) if w != v => out.push(format!("~ {k} -> {v} | {w}")),
                _ => {}
            }
        }
        for (k, w) in &b {
            if !a.contains_key(k) {
                out.push(format!("+ {k} -> {w}"));
            }
        }
        out
    }
}
