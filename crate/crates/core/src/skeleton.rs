//! Placeholder skeletons: API keywords are swapped for `PLACEHOLDER_i` so the
//! remaining code can be translated without touching them, then put back.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{ApiKeyword, KeywordOccurrence};
use crate::python::ast::walk_stmts_mut;
use crate::python::{parse_expression, parse_module, unparse, Arg, Expr, ParseError};

pub const PLACEHOLDER_PREFIX: &str = "PLACEHOLDER_";

static PLACEHOLDER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bPLACEHOLDER_([0-9]+)\b").expect("valid regex"));

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("occurrence spans {0:?} and {1:?} overlap or are out of order")]
    Overlap(std::ops::Range<usize>, std::ops::Range<usize>),
    #[error("span {0:?} lies outside the source text")]
    OutOfBounds(std::ops::Range<usize>),
    #[error("source already contains `{PLACEHOLDER_PREFIX}`")]
    ReservedIdentifier,
    #[error("no translation for PLACEHOLDER_{0}")]
    MissingTranslation(usize),
    #[error("PLACEHOLDER_{0} is left in the output")]
    ResidualPlaceholder(usize),
    #[error("PLACEHOLDER_{0}: {1}")]
    InvalidTranslation(usize, String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placeholder {
    pub index: usize,
    pub keyword: ApiKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSkeleton {
    pub text: String,
    pub placeholders: Vec<Placeholder>,
}

pub fn placeholder(index: usize) -> String {
    format!("{PLACEHOLDER_PREFIX}{index}")
}

/// Index of a bare placeholder identifier.
pub fn placeholder_index(name: &str) -> Option<usize> {
    name.strip_prefix(PLACEHOLDER_PREFIX)?.parse().ok()
}

/// All placeholder indices in `text`, in order of appearance.
pub fn scan_placeholders(text: &str) -> Vec<usize> {
    PLACEHOLDER_RE
        .captures_iter(text)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

pub fn to_skeleton(text: &str, occs: &[KeywordOccurrence]) -> Result<CodeSkeleton, SkeletonError> {
    if text.contains(PLACEHOLDER_PREFIX) {
        return Err(SkeletonError::ReservedIdentifier);
    }
    let mut out = String::with_capacity(text.len());
    let mut placeholders = Vec::with_capacity(occs.len());
    let mut cursor = 0;
    let mut prev: Option<&KeywordOccurrence> = None;
    for (i, occ) in occs.iter().enumerate() {
        if occ.span.end > text.len() || occ.span.start > occ.span.end {
            return Err(SkeletonError::OutOfBounds(occ.span.clone()));
        }
        if occ.span.start < cursor {
            let before = prev.map(|p| p.span.clone()).unwrap_or(0..0);
            return Err(SkeletonError::Overlap(before, occ.span.clone()));
        }
        out.push_str(&text[cursor..occ.span.start]);
        out.push_str(&placeholder(i + 1));
        cursor = occ.span.end;
        prev = Some(occ);
        placeholders.push(Placeholder {
            index: i + 1,
            keyword: occ.keyword.clone(),
        });
    }
    out.push_str(&text[cursor..]);
    Ok(CodeSkeleton {
        text: out,
        placeholders,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderMismatch {
    pub missing: Vec<usize>,
    pub duplicate: Vec<usize>,
    pub extra: Vec<usize>,
}

impl PlaceholderMismatch {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty() && self.duplicate.is_empty() && self.extra.is_empty()
    }
}

impl std::fmt::Display for PlaceholderMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "missing {:?}, duplicate {:?}, extra {:?}",
            self.missing, self.duplicate, self.extra
        )
    }
}

/// Checks that `out_text` holds each of the skeleton's placeholders exactly once.
pub fn validate_placeholders(
    src: &CodeSkeleton,
    out_text: &str,
) -> Result<(), PlaceholderMismatch> {
    let n = src.placeholders.len();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for i in scan_placeholders(out_text) {
        *counts.entry(i).or_default() += 1;
    }
    let mut report = PlaceholderMismatch::default();
    for i in 1..=n {
        match counts.get(&i) {
            None => report.missing.push(i),
            Some(&c) if c > 1 => report.duplicate.push(i),
            _ => {}
        }
    }
    report.extra = counts
        .keys()
        .copied()
        .filter(|&i| i == 0 || i > n)
        .collect();
    if report.is_ok() {
        Ok(())
    } else {
        Err(report)
    }
}

/// Fragments that replace one placeholder.
///
/// For a callable placeholder the first fragment is the new callable name and
/// any further fragments are whole call expressions emitted as siblings right
/// after the host call. For a keyword-argument placeholder an empty list drops
/// the argument and a single fragment renames it.
pub type Translations = BTreeMap<usize, Vec<String>>;

/// Puts translated keywords back into a target-side skeleton.
pub fn reinsert(skeleton_out: &str, translations: &Translations) -> Result<String, SkeletonError> {
    for i in scan_placeholders(skeleton_out) {
        if !translations.contains_key(&i) {
            return Err(SkeletonError::MissingTranslation(i));
        }
    }
    let mut module = parse_module(skeleton_out)?;
    let mut extras: BTreeMap<usize, Vec<Expr>> = BTreeMap::new();
    for (&i, frags) in translations {
        if frags.len() > 1 {
            let parsed = frags[1..]
                .iter()
                .map(|f| parse_expression(f))
                .collect::<Result<Vec<_>, _>>()?;
            extras.insert(i, parsed);
        }
    }
    let mut expanded = BTreeSet::new();
    let mut error: Option<SkeletonError> = None;
    walk_stmts_mut(&mut module.body, &mut |expr| {
        if error.is_some() {
            return false;
        }
        match substitute(expr, translations, &extras, &mut expanded) {
            Ok(()) => true,
            Err(e) => {
                error = Some(e);
                false
            }
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if let Some(&i) = extras.keys().find(|i| !expanded.contains(*i)) {
        return Err(SkeletonError::InvalidTranslation(
            i,
            "expanded call must sit in a list, tuple or positional argument".into(),
        ));
    }
    let text = unparse(&module);
    if let Some(&i) = scan_placeholders(&text).first() {
        return Err(SkeletonError::ResidualPlaceholder(i));
    }
    Ok(text)
}

fn host_index(expr: &Expr) -> Option<usize> {
    match expr {
        Expr::Call { func, .. } => match func.as_ref() {
            Expr::Name(n) => placeholder_index(n),
            _ => None,
        },
        _ => None,
    }
}

fn expand_siblings(
    items: &mut Vec<Expr>,
    extras: &BTreeMap<usize, Vec<Expr>>,
    expanded: &mut BTreeSet<usize>,
) {
    let mut i = 0;
    while i < items.len() {
        let host = host_index(&items[i]).filter(|h| extras.contains_key(h));
        i += 1;
        if let Some(h) = host {
            for (k, e) in extras[&h].iter().enumerate() {
                items.insert(i + k, e.clone());
            }
            i += extras[&h].len();
            expanded.insert(h);
        }
    }
}

fn substitute(
    expr: &mut Expr,
    translations: &Translations,
    extras: &BTreeMap<usize, Vec<Expr>>,
    expanded: &mut BTreeSet<usize>,
) -> Result<(), SkeletonError> {
    match expr {
        Expr::Name(name) => {
            if let Some(i) = placeholder_index(name) {
                let frags = &translations[&i];
                let Some(first) = frags.first() else {
                    return Err(SkeletonError::InvalidTranslation(
                        i,
                        "a callable cannot be dropped".into(),
                    ));
                };
                *expr = Expr::dotted(first);
            }
        }
        Expr::List(items) | Expr::Tuple(items) | Expr::Set(items) if !extras.is_empty() => {
            expand_siblings(items, extras, expanded);
        }
        Expr::Call { args, .. } => {
            if !extras.is_empty() {
                let mut positional = Vec::new();
                let mut rest = Vec::new();
                for a in args.drain(..) {
                    match a {
                        Arg::Positional(e) if rest.is_empty() => positional.push(e),
                        other => rest.push(other),
                    }
                }
                expand_siblings(&mut positional, extras, expanded);
                args.extend(positional.into_iter().map(Arg::Positional));
                args.extend(rest);
            }
            let mut kept = Vec::with_capacity(args.len());
            for arg in args.drain(..) {
                match arg {
                    Arg::Keyword { name, value } => match placeholder_index(&name) {
                        Some(i) => match translations[&i].as_slice() {
                            [] => {}
                            [new] => kept.push(Arg::Keyword {
                                name: new.clone(),
                                value,
                            }),
                            _ => {
                                return Err(SkeletonError::InvalidTranslation(
                                    i,
                                    "a parameter maps to at most one name".into(),
                                ))
                            }
                        },
                        None => kept.push(Arg::Keyword { name, value }),
                    },
                    other => kept.push(other),
                }
            }
            *args = kept;
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::{Framework, UnitRef};
    use std::sync::Arc;

    fn occ(text: &str, range: std::ops::Range<usize>) -> KeywordOccurrence {
        KeywordOccurrence {
            keyword: ApiKeyword::callable(Framework::Pytorch, &text[range.clone()]),
            span: range.clone(),
            call_span: range,
            context: Arc::from(text),
            context_offset: 0,
            location: UnitRef::default(),
        }
    }

    fn tr(pairs: &[(usize, &[&str])]) -> Translations {
        pairs
            .iter()
            .map(|(i, f)| (*i, f.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn skeleton_numbers_from_one() {
        let text = "nn.Linear(in_features=128, out_features=64)\n";
        let occs = [occ(text, 0..9), occ(text, 10..21), occ(text, 27..39)];
        let sk = to_skeleton(text, &occs).unwrap();
        assert_eq!(
            sk.text,
            "PLACEHOLDER_1(PLACEHOLDER_2=128, PLACEHOLDER_3=64)\n"
        );
        assert_eq!(sk.placeholders.len(), 3);
        assert_eq!(to_skeleton(text, &[]).unwrap().text, text);
    }

    #[test]
    fn overlapping_spans_rejected() {
        let text = "nn.Linear()\n";
        let occs = [occ(text, 0..9), occ(text, 3..9)];
        assert!(matches!(
            to_skeleton(text, &occs),
            Err(SkeletonError::Overlap(..))
        ));
        assert!(matches!(
            to_skeleton("PLACEHOLDER_1 = 1\n", &[]),
            Err(SkeletonError::ReservedIdentifier)
        ));
    }

    #[test]
    fn reinsert_renames_and_drops() {
        let out = reinsert(
            "x = PLACEHOLDER_1(PLACEHOLDER_2=128, PLACEHOLDER_3=64)\n",
            &tr(&[(1, &["layers.Dense"]), (2, &[]), (3, &["units"])]),
        )
        .unwrap();
        assert_eq!(out, "x = layers.Dense(units=64)\n");
    }

    #[test]
    fn expansion_in_list_context() {
        let out = reinsert(
            "m = keras.Sequential([PLACEHOLDER_1(PLACEHOLDER_2=4, PLACEHOLDER_3='relu'), x])\n",
            &tr(&[
                (1, &["nn.Linear", "nn.ReLU()"]),
                (2, &["out_features"]),
                (3, &[]),
            ]),
        )
        .unwrap();
        assert_eq!(
            out,
            "m = keras.Sequential([nn.Linear(out_features=4), nn.ReLU(), x])\n"
        );
        let out = reinsert(
            "m = nn.Sequential(PLACEHOLDER_1(), y)\n",
            &tr(&[(1, &["nn.Linear", "nn.ReLU()"])]),
        )
        .unwrap();
        assert_eq!(out, "m = nn.Sequential(nn.Linear(), nn.ReLU(), y)\n");
    }

    #[test]
    fn expansion_outside_sequence_rejected() {
        let err = reinsert(
            "self.fc = PLACEHOLDER_1()\n",
            &tr(&[(1, &["nn.Linear", "nn.ReLU()"])]),
        )
        .unwrap_err();
        assert!(matches!(err, SkeletonError::InvalidTranslation(1, _)));
    }

    #[test]
    fn missing_translation_reported() {
        assert!(matches!(
            reinsert("PLACEHOLDER_1(PLACEHOLDER_2=1)\n", &tr(&[(1, &["f"])])),
            Err(SkeletonError::MissingTranslation(2))
        ));
    }

    #[test]
    fn validation_reports_each_kind() {
        let sk = CodeSkeleton {
            text: String::new(),
            placeholders: (1..=3)
                .map(|i| Placeholder {
                    index: i,
                    keyword: ApiKeyword::callable(Framework::Pytorch, "f"),
                })
                .collect(),
        };
        assert!(validate_placeholders(&sk, "PLACEHOLDER_1 PLACEHOLDER_2 PLACEHOLDER_3").is_ok());
        let m = validate_placeholders(&sk, "PLACEHOLDER_1 PLACEHOLDER_3").unwrap_err();
        assert_eq!(m.missing, [2]);
        let m = validate_placeholders(
            &sk,
            "PLACEHOLDER_1 PLACEHOLDER_1 PLACEHOLDER_2 PLACEHOLDER_3 PLACEHOLDER_7",
        )
        .unwrap_err();
        assert_eq!((m.duplicate, m.extra), (vec![1], vec![7]));
    }
}
