use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::python::ast::{Arg, Stmt};
use crate::python::{parse_module, render, unparse, Module};

use super::canonicalize::{qualify_names, ImportEnv};
use super::{CanonError, Framework, SignatureDatabase, SourceUnit};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KeywordKind {
    Callable,
    Parameter { owner: String },
}

/// A callable or parameter name of a framework API.
///
/// The dense vocabulary id is assigned by [`crate::corpus::Vocabulary`];
/// `(framework, kind, text)` is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApiKeyword {
    pub framework: Framework,
    #[serde(flatten)]
    pub kind: KeywordKind,
    pub text: String,
}

impl ApiKeyword {
    pub fn callable(framework: Framework, name: &str) -> Self {
        ApiKeyword {
            framework,
            kind: KeywordKind::Callable,
            text: name.to_string(),
        }
    }

    pub fn parameter(framework: Framework, owner: &str, name: &str) -> Self {
        ApiKeyword {
            framework,
            kind: KeywordKind::Parameter {
                owner: owner.to_string(),
            },
            text: name.to_string(),
        }
    }

    pub fn is_callable(&self) -> bool {
        matches!(self.kind, KeywordKind::Callable)
    }

    pub fn owner(&self) -> Option<&str> {
        match &self.kind {
            KeywordKind::Parameter { owner } => Some(owner),
            KeywordKind::Callable => None,
        }
    }

    /// `nn.Linear` for callables, `nn.Linear::in_features` for parameters.
    pub fn qualified(&self) -> String {
        match &self.kind {
            KeywordKind::Callable => self.text.clone(),
            KeywordKind::Parameter { owner } => format!("{owner}::{}", self.text),
        }
    }
}

/// Where an occurrence lives, used to key externally computed embeddings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub corpus: String,
    pub unit: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordOccurrence {
    pub keyword: ApiKeyword,
    /// Byte range in the canonicalized unit text.
    pub span: Range<usize>,
    /// Span of the callee of the call this keyword belongs to.
    pub call_span: Range<usize>,
    /// Canonicalized source of the enclosing top-level definition.
    pub context: Arc<str>,
    /// Offset of `context` within the unit text.
    pub context_offset: usize,
    pub location: UnitRef,
}

impl KeywordOccurrence {
    /// Span relative to the start of [`Self::context`].
    pub fn context_span(&self) -> Range<usize> {
        self.span.start - self.context_offset..self.span.end - self.context_offset
    }

    /// `corpus:unit:start:end`, the key used by embedding files.
    pub fn key(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.location.corpus, self.location.unit, self.span.start, self.span.end
        )
    }
}

/// Result of extraction: occurrences plus callees skipped for star arguments.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub occurrences: Vec<KeywordOccurrence>,
    pub skipped_star_calls: Vec<String>,
}

/// Locates API keywords in a canonicalized unit.
///
/// The unit must already be canonical; its text is compared against the
/// re-rendered tree so spans always index the caller's text.
pub fn extract_keywords(
    unit: &SourceUnit,
    db: &SignatureDatabase,
) -> Result<Vec<KeywordOccurrence>, CanonError> {
    extract_keywords_at(unit, db, UnitRef::default()).map(|e| e.occurrences)
}

pub fn extract_keywords_at(
    unit: &SourceUnit,
    db: &SignatureDatabase,
    location: UnitRef,
) -> Result<Extraction, CanonError> {
    let module = parse_module(&unit.text)?;
    let rendered = render(&module);
    if rendered.text != unit.text {
        return Err(CanonError::NotCanonical);
    }
    let contexts: Vec<Arc<str>> = rendered
        .statements
        .iter()
        .map(|r| Arc::from(&rendered.text[r.clone()]))
        .collect();
    let mut out = Extraction::default();
    for call in &rendered.calls {
        let Some(callee) = call.callee.as_deref() else {
            continue;
        };
        if db.signature(callee).is_none() {
            continue;
        }
        if call.has_star {
            out.skipped_star_calls.push(callee.to_string());
            continue;
        }
        let context = contexts[call.statement].clone();
        let context_offset = rendered.statements[call.statement].start;
        out.occurrences.push(KeywordOccurrence {
            keyword: ApiKeyword::callable(db.framework, callee),
            span: call.callee_span.clone(),
            call_span: call.callee_span.clone(),
            context: context.clone(),
            context_offset,
            location: location.clone(),
        });
        for (name, span) in &call.keywords {
            out.occurrences.push(KeywordOccurrence {
                keyword: ApiKeyword::parameter(db.framework, callee, name),
                span: span.clone(),
                call_span: call.callee_span.clone(),
                context: context.clone(),
                context_offset,
                location: location.clone(),
            });
        }
    }
    // Keyword names of an outer call can follow a nested call's callee.
    out.occurrences.sort_by_key(|o| o.span.start);
    Ok(out)
}

/// Base classes that mark a class as a framework module definition.
#[derive(Debug, Clone)]
pub struct ModuleBases {
    pub bases: BTreeMap<Framework, Vec<String>>,
}

impl Default for ModuleBases {
    fn default() -> Self {
        let mut bases = BTreeMap::new();
        bases.insert(Framework::Pytorch, vec!["torch.nn.Module".to_string()]);
        bases.insert(
            Framework::Keras,
            [
                "tensorflow.keras.layers.Layer",
                "tensorflow.keras.Model",
                "keras.layers.Layer",
                "keras.Model",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        );
        bases.insert(
            Framework::Mxnet,
            [
                "mxnet.gluon.nn.Block",
                "mxnet.gluon.nn.HybridBlock",
                "mxnet.gluon.Block",
                "mxnet.gluon.HybridBlock",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        );
        ModuleBases { bases }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassExtraction {
    pub units: Vec<SourceUnit>,
    /// Classes found but whose bases matched no framework.
    pub ignored: Vec<String>,
}

/// Splits a file into one unit per framework module class.
///
/// Names inside each class are qualified through the file's imports so the
/// unit canonicalizes correctly without them.
pub fn extract_module_classes(
    file_text: &str,
    origin: &str,
    dbs: &[&SignatureDatabase],
    bases: &ModuleBases,
) -> Result<ClassExtraction, CanonError> {
    let module = parse_module(file_text)?;
    let env = ImportEnv::from_module(&module);
    let mut out = ClassExtraction::default();
    for stmt in &module.body {
        let Stmt::ClassDef {
            name,
            bases: class_bases,
            ..
        } = stmt
        else {
            continue;
        };
        let framework = class_bases.iter().find_map(|arg| match arg {
            Arg::Positional(expr) => expr
                .as_dotted()
                .and_then(|path| match_base(&path, &env, dbs, bases)),
            _ => None,
        });
        match framework {
            Some(framework) => {
                let mut class_stmt = vec![stmt.clone()];
                qualify_names(&mut class_stmt, &env);
                let text = unparse(&Module { body: class_stmt });
                out.units.push(SourceUnit {
                    text,
                    framework,
                    origin: format!("{origin}#{name}"),
                });
            }
            None => out.ignored.push(name.clone()),
        }
    }
    Ok(out)
}

fn match_base(
    path: &str,
    env: &ImportEnv,
    dbs: &[&SignatureDatabase],
    bases: &ModuleBases,
) -> Option<Framework> {
    let qualified = env.qualify(path).unwrap_or_else(|| path.to_string());
    for db in dbs {
        let Some(candidates) = bases.bases.get(&db.framework) else {
            continue;
        };
        let Some(ours) = db.unify_module_prefix(&qualified) else {
            continue;
        };
        if candidates
            .iter()
            .any(|c| db.unify_module_prefix(c).as_deref() == Some(ours.as_str()))
        {
            return Some(db.framework);
        }
    }
    None
}
