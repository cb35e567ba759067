//! Transpilation and dictionary metrics, and the multi-seed evaluation suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canon::{
    canonicalize, ApiKeyword, CanonError, Framework, KeywordKind, SignatureDatabase, SourceUnit,
};
use crate::dict::{KeywordDictionary, ScoreMatrix, Translation};
use crate::python::ast::walk_stmts_mut;
use crate::python::{unparse_expr, Arg, Expr};

pub const DEFAULT_SEEDS: [u64; 5] = [10, 20, 30, 40, 50];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval set line {line}: {message}")]
    EvalSet { line: usize, message: String },
    #[error("example {id}: gold does not canonicalize: {source}")]
    Gold { id: String, source: CanonError },
    #[error("no signature database for {0}")]
    MissingDatabase(Framework),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multiset of call fingerprints: callee plus argument texts, keywords sorted by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallBag {
    pub calls: BTreeMap<String, usize>,
}

impl CallBag {
    pub fn len(&self) -> usize {
        self.calls.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Size of the multiset intersection.
    pub fn matches(&self, other: &CallBag) -> usize {
        self.calls
            .iter()
            .map(|(k, &n)| n.min(other.calls.get(k).copied().unwrap_or(0)))
            .sum()
    }
}

fn fingerprint(func: &Expr, args: &[Arg]) -> String {
    let mut positional = Vec::new();
    let mut keywords = Vec::new();
    for a in args {
        match a {
            Arg::Positional(e) => positional.push(unparse_expr(e)),
            Arg::Keyword { name, value } => {
                keywords.push(format!("{name}={}", unparse_expr(value)))
            }
            Arg::Star(e) => positional.push(format!("*{}", unparse_expr(e))),
            Arg::DoubleStar(e) => keywords.push(format!("**{}", unparse_expr(e))),
        }
    }
    keywords.sort();
    positional.extend(keywords);
    format!("{}({})", unparse_expr(func), positional.join(", "))
}

/// Canonicalizes `text` and collects every call in it.
pub fn call_bag(text: &str, db: &SignatureDatabase) -> Result<CallBag, CanonError> {
    let unit = canonicalize(&SourceUnit::new(text, db.framework), db)?;
    let mut module = crate::python::parse_module(&unit.text)?;
    let mut bag = CallBag::default();
    walk_stmts_mut(&mut module.body, &mut |e| {
        if let Expr::Call { func, args } = e {
            *bag.calls.entry(fingerprint(func, args)).or_default() += 1;
        }
        true
    });
    Ok(bag)
}

/// `2 n_match / (n_pred + n_truth)`, or 1 when both bags are empty.
pub fn f1(pred: &CallBag, gold: &CallBag) -> f64 {
    let total = pred.len() + gold.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * pred.matches(gold) as f64 / total as f64
}

/// F1 of two source texts; a prediction that fails to canonicalize scores 0.
pub fn f1_text(pred: &str, gold: &str, db: &SignatureDatabase) -> Result<f64, CanonError> {
    let gold = call_bag(gold, db)?;
    Ok(match call_bag(pred, db) {
        Ok(p) => f1(&p, &gold),
        Err(_) => 0.0,
    })
}

pub fn exact_match(pred: &str, gold: &str, db: &SignatureDatabase) -> Result<bool, CanonError> {
    let gold = canonicalize(&SourceUnit::new(gold, db.framework), db)?;
    Ok(
        match canonicalize(&SourceUnit::new(pred, db.framework), db) {
            Ok(p) => p.text == gold.text,
            Err(_) => false,
        },
    )
}

/// Both callables or both parameters.
pub fn same_kind(a: &ApiKeyword, b: &ApiKeyword) -> bool {
    matches!(
        (&a.kind, &b.kind),
        (KeywordKind::Callable, KeywordKind::Callable)
            | (KeywordKind::Parameter { .. }, KeywordKind::Parameter { .. })
    )
}

/// Ranks of each gold pair's target among same-kind candidates of its source
/// row, counting tied candidates ahead of the gold target. `None` when either
/// keyword is missing from the vocabularies.
pub fn gold_ranks(
    s: &ScoreMatrix,
    vocab1: &[ApiKeyword],
    vocab2: &[ApiKeyword],
    gold: &[(ApiKeyword, ApiKeyword)],
) -> Vec<Option<usize>> {
    let idx1: BTreeMap<&ApiKeyword, usize> =
        vocab1.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let idx2: BTreeMap<&ApiKeyword, usize> =
        vocab2.iter().enumerate().map(|(i, k)| (k, i)).collect();
    gold.iter()
        .map(|(a, b)| {
            let (&i, &j) = (idx1.get(a)?, idx2.get(b)?);
            let target = s.get(i, j);
            let ahead = vocab2
                .iter()
                .enumerate()
                .filter(|&(c, kw)| c != j && same_kind(kw, b) && s.get(i, c) >= target)
                .count();
            Some(ahead + 1)
        })
        .collect()
}

pub fn precision_at_k(
    s: &ScoreMatrix,
    vocab1: &[ApiKeyword],
    vocab2: &[ApiKeyword],
    gold: &[(ApiKeyword, ApiKeyword)],
    k: usize,
) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let ranks = gold_ranks(s, vocab1, vocab2, gold);
    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / gold.len() as f64
}

pub fn mrr(
    s: &ScoreMatrix,
    vocab1: &[ApiKeyword],
    vocab2: &[ApiKeyword],
    gold: &[(ApiKeyword, ApiKeyword)],
) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let ranks = gold_ranks(s, vocab1, vocab2, gold);
    ranks
        .iter()
        .map(|r| r.map_or(0.0, |r| 1.0 / r as f64))
        .sum::<f64>()
        / gold.len() as f64
}

/// Fraction of gold pairs the dictionary translates exactly: a callable must
/// map to the gold callable, a parameter must sit in a group mapped to the
/// gold owner and be renamed to the gold name.
pub fn dictionary_precision(dict: &KeywordDictionary, gold: &[(ApiKeyword, ApiKeyword)]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hits = gold
        .iter()
        .filter(|(src, tgt)| match (dict.lookup(src), &src.kind) {
            (Ok(Translation::Rename(t)), KeywordKind::Callable) => {
                tgt.is_callable() && t == tgt.text
            }
            (Ok(Translation::Rename(t)), KeywordKind::Parameter { owner }) => {
                t == tgt.text && dict.group(owner).map(|g| g.tgt_callable.as_str()) == tgt.owner()
            }
            _ => false,
        })
        .count();
    hits as f64 / gold.len() as f64
}

/// Parses `nn.Linear` or `nn.Linear::in_features`.
pub fn parse_qualified(framework: Framework, s: &str) -> ApiKeyword {
    match s.split_once("::") {
        Some((owner, name)) => ApiKeyword::parameter(framework, owner, name),
        None => ApiKeyword::callable(framework, s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub src_framework: Framework,
    pub tgt_framework: Framework,
    pub source: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_keyword_pairs: Option<Vec<(String, String)>>,
}

impl EvalExample {
    pub fn gold_pairs(&self) -> Vec<(ApiKeyword, ApiKeyword)> {
        self.gold_keyword_pairs
            .iter()
            .flatten()
            .map(|(a, b)| {
                (
                    parse_qualified(self.src_framework, a),
                    parse_qualified(self.tgt_framework, b),
                )
            })
            .collect()
    }
}

pub fn load_eval_set(path: &Path) -> Result<Vec<EvalExample>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    parse_eval_set(&text)
}

pub fn parse_eval_set(text: &str) -> Result<Vec<EvalExample>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::EvalSet {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Score matrix and vocabularies for ranking metrics.
pub struct KeywordScores<'a> {
    pub scores: &'a ScoreMatrix,
    pub vocab1: &'a [ApiKeyword],
    pub vocab2: &'a [ApiKeyword],
}

/// Something that transpiles eval examples under a seed.
pub trait Transpiler: Sync {
    /// Returns the prediction, or a failure message that scores as a miss.
    fn transpile(&self, example: &EvalExample, seed: u64) -> Result<String, String>;

    fn keyword_scores(&self) -> Option<KeywordScores<'_>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub f1: f64,
    pub exact_match: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub examples: usize,
    pub f1: f64,
    pub exact_match: f64,
    pub failures: usize,
    pub results: Vec<ExampleResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordMetrics {
    pub gold_pairs: usize,
    pub precision_at_1: f64,
    pub precision_at_5: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<SeedRow>,
    pub mean_f1: f64,
    pub mean_exact_match: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_metrics: Option<KeywordMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// SHA-256 of the JSON rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

fn database_for<'a>(
    dbs: &'a [&SignatureDatabase],
    fw: Framework,
) -> Result<&'a SignatureDatabase, EvalError> {
    dbs.iter()
        .copied()
        .find(|d| d.framework == fw)
        .ok_or(EvalError::MissingDatabase(fw))
}

/// Runs every example under every seed. When `out_dir` is given, predictions
/// are written to `seed_<s>/<id>/pred.py` next to a `gold_test.py` stub for an
/// external test runner, and the report to `report.json`.
pub fn run_suite(
    transpiler: &dyn Transpiler,
    examples: &[EvalExample],
    seeds: &[u64],
    dbs: &[&SignatureDatabase],
    out_dir: Option<&Path>,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    if examples.is_empty() {
        return Ok(report);
    }
    for &seed in seeds {
        let results: Vec<(ExampleResult, Option<String>)> = examples
            .par_iter()
            .map(|ex| {
                let db = database_for(dbs, ex.tgt_framework)?;
                let gold_err = |source| EvalError::Gold {
                    id: ex.id.clone(),
                    source,
                };
                let gold_bag = call_bag(&ex.gold, db).map_err(gold_err)?;
                match transpiler.transpile(ex, seed) {
                    Ok(pred) => {
                        let score = call_bag(&pred, db)
                            .map(|b| f1(&b, &gold_bag))
                            .unwrap_or(0.0);
                        let em = exact_match(&pred, &ex.gold, db).map_err(gold_err)?;
                        Ok((
                            ExampleResult {
                                id: ex.id.clone(),
                                f1: score,
                                exact_match: em,
                                failure: None,
                            },
                            Some(pred),
                        ))
                    }
                    Err(msg) => Ok((
                        ExampleResult {
                            id: ex.id.clone(),
                            f1: 0.0,
                            exact_match: false,
                            failure: Some(msg),
                        },
                        None,
                    )),
                }
            })
            .collect::<Result<_, EvalError>>()?;
        if let Some(dir) = out_dir {
            write_artifacts(&dir.join(format!("seed_{seed}")), examples, &results)?;
        }
        let n = results.len() as f64;
        let results: Vec<ExampleResult> = results.into_iter().map(|r| r.0).collect();
        report.seeds.push(SeedRow {
            seed,
            examples: results.len(),
            f1: results.iter().map(|r| r.f1).sum::<f64>() / n,
            exact_match: results.iter().filter(|r| r.exact_match).count() as f64 / n,
            failures: results.iter().filter(|r| r.failure.is_some()).count(),
            results,
        });
    }
    let rows = report.seeds.len().max(1) as f64;
    report.mean_f1 = report.seeds.iter().map(|r| r.f1).sum::<f64>() / rows;
    report.mean_exact_match = report.seeds.iter().map(|r| r.exact_match).sum::<f64>() / rows;

    let gold: Vec<_> = examples.iter().flat_map(|e| e.gold_pairs()).collect();
    if let (Some(ks), false) = (transpiler.keyword_scores(), gold.is_empty()) {
        report.keyword_metrics = Some(KeywordMetrics {
            gold_pairs: gold.len(),
            precision_at_1: precision_at_k(ks.scores, ks.vocab1, ks.vocab2, &gold, 1),
            precision_at_5: precision_at_k(ks.scores, ks.vocab1, ks.vocab2, &gold, 5),
            mrr: mrr(ks.scores, ks.vocab1, ks.vocab2, &gold),
        });
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    }
    Ok(report)
}

fn write_artifacts(
    dir: &Path,
    examples: &[EvalExample],
    results: &[(ExampleResult, Option<String>)],
) -> Result<(), EvalError> {
    for (ex, (_, pred)) in examples.iter().zip(results) {
        let ex_dir: PathBuf = dir.join(sanitize(&ex.id));
        std::fs::create_dir_all(&ex_dir)?;
        std::fs::write(ex_dir.join("pred.py"), pred.as_deref().unwrap_or(""))?;
        let stub = format!(
            "# Unit test for example {} ({} -> {}).\n# Fill in assertions; the runner imports pred.py.\nfrom pred import *\n",
            ex.id, ex.src_framework, ex.tgt_framework
        );
        std::fs::write(ex_dir.join("gold_test.py"), stub)?;
    }
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
