//! Canonical form for framework source: unified imports, resolved aliases and
//! keyword-bound call arguments, plus keyword extraction over that form.

mod canonicalize;
mod extract;
mod signature;

use thiserror::Error;

use crate::python::ParseError;

pub use canonicalize::{
    bind_arguments, canonicalize, canonicalize_module, canonicalize_with, qualify_names,
    CanonOptions, CanonWarning, ImportEnv,
};
pub use extract::{
    extract_keywords, extract_keywords_at, extract_module_classes, ApiKeyword, ClassExtraction,
    Extraction, KeywordKind, KeywordOccurrence, ModuleBases, UnitRef,
};
pub use signature::{ApiSignature, Framework, SignatureDatabase};

#[derive(Debug, Error)]
pub enum CanonError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid signature database: {0}")]
    InvalidDatabase(String),
    #[error("unknown framework `{0}`")]
    UnknownFramework(String),
    #[error("unknown callable `{0}`")]
    UnknownCallable(String),
    #[error("`{callee}` takes at most {max} positional arguments, {given} given")]
    Arity {
        callee: String,
        given: usize,
        max: usize,
    },
    #[error("`{callee}` got multiple values for `{name}`")]
    DuplicateKeyword { callee: String, name: String },
    #[error("cannot bind star arguments of `{0}`")]
    StarArguments(String),
    #[error("unit is {unit} but the database is {database}")]
    FrameworkMismatch {
        unit: Framework,
        database: Framework,
    },
    #[error("unit text is not in canonical form")]
    NotCanonical,
}

/// A piece of source code in one framework.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceUnit {
    pub text: String,
    pub framework: Framework,
    /// Free-form provenance such as `path/to/file.py#Net`.
    pub origin: String,
}

impl SourceUnit {
    pub fn new(text: impl Into<String>, framework: Framework) -> Self {
        SourceUnit {
            text: text.into(),
            framework,
            origin: String::new(),
        }
    }
}
