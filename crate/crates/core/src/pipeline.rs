//! End-to-end transpilation: canonicalize, extract keywords, skeletonize,
//! translate the skeleton with a language model, then put dictionary
//! translations back in.

use std::collections::BTreeMap;

use log::warn;
use thiserror::Error;

use crate::canon::{
    canonicalize, extract_keywords, CanonError, KeywordOccurrence, SignatureDatabase, SourceUnit,
};
use crate::dict::{DictError, KeywordDictionary, Translation};
use crate::eval::{EvalExample, KeywordScores, Transpiler};
use crate::llm::{transpile_skeleton, CompletionBackend, LlmError, PromptTemplate};
use crate::skeleton::{
    reinsert, to_skeleton, validate_placeholders, CodeSkeleton, PlaceholderMismatch, SkeletonError,
    Translations,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("language model: {0}")]
    Llm(#[from] LlmError),
    #[error("translated skeleton does not preserve placeholders: {0}")]
    Placeholders(PlaceholderMismatch),
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error("{0}")]
    Config(String),
}

impl PipelineError {
    /// Backend failures are told apart from failures of the pipeline itself.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            PipelineError::Llm(LlmError::BackendUnavailable(_) | LlmError::Config(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmappedPolicy {
    /// Keep the source keyword text and log a warning.
    #[default]
    Keep,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranspileOutput {
    pub text: String,
    pub canonical_source: String,
    pub skeleton: CodeSkeleton,
    pub target_skeleton: String,
    pub translations: Translations,
    pub warnings: Vec<String>,
}

pub struct Pipeline {
    pub src_db: SignatureDatabase,
    pub tgt_db: SignatureDatabase,
    pub dictionary: KeywordDictionary,
    pub template: PromptTemplate,
    pub backend: Box<dyn CompletionBackend>,
    pub unmapped: UnmappedPolicy,
    pub scores: Option<(
        crate::dict::ScoreMatrix,
        Vec<crate::canon::ApiKeyword>,
        Vec<crate::canon::ApiKeyword>,
    )>,
}

impl Pipeline {
    pub fn new(
        src_db: SignatureDatabase,
        tgt_db: SignatureDatabase,
        dictionary: KeywordDictionary,
        template: PromptTemplate,
        backend: Box<dyn CompletionBackend>,
    ) -> Result<Self, PipelineError> {
        let pair = (dictionary.src_framework, dictionary.tgt_framework);
        if pair != (src_db.framework, tgt_db.framework)
            || pair != (template.source, template.target)
        {
            return Err(PipelineError::Config(format!(
                "direction mismatch: databases {} -> {}, dictionary {} -> {}, template {} -> {}",
                src_db.framework,
                tgt_db.framework,
                pair.0,
                pair.1,
                template.source,
                template.target
            )));
        }
        Ok(Pipeline {
            src_db,
            tgt_db,
            dictionary,
            template,
            backend,
            unmapped: UnmappedPolicy::Keep,
            scores: None,
        })
    }

    pub fn transpile(&self, source: &str) -> Result<TranspileOutput, PipelineError> {
        let empty = || TranspileOutput {
            text: String::new(),
            canonical_source: String::new(),
            skeleton: CodeSkeleton {
                text: String::new(),
                placeholders: Vec::new(),
            },
            target_skeleton: String::new(),
            translations: Translations::new(),
            warnings: Vec::new(),
        };
        if source.trim().is_empty() {
            return Ok(empty());
        }
        let unit = canonicalize(
            &SourceUnit::new(source, self.src_db.framework),
            &self.src_db,
        )?;
        let occs = extract_keywords(&unit, &self.src_db)?;
        let skeleton = to_skeleton(&unit.text, &occs)?;
        let target_skeleton = transpile_skeleton(&skeleton, &self.template, self.backend.as_ref())?;
        validate_placeholders(&skeleton, &target_skeleton).map_err(PipelineError::Placeholders)?;
        let (translations, warnings) = self.translations(&occs)?;
        let text = reinsert(&target_skeleton, &translations)?;
        Ok(TranspileOutput {
            text,
            canonical_source: unit.text,
            skeleton,
            target_skeleton,
            translations,
            warnings,
        })
    }

    /// Placeholder `i + 1` stands for `occs[i]`.
    pub fn translations(
        &self,
        occs: &[KeywordOccurrence],
    ) -> Result<(Translations, Vec<String>), PipelineError> {
        let callee_at: BTreeMap<(usize, usize), usize> = occs
            .iter()
            .enumerate()
            .filter(|(_, o)| o.keyword.is_callable())
            .map(|(i, o)| ((o.span.start, o.span.end), i + 1))
            .collect();
        let mut out = Translations::new();
        let mut warnings = Vec::new();
        let mut pending: Vec<(usize, String)> = Vec::new();
        for (i, occ) in occs.iter().enumerate() {
            let idx = i + 1;
            let frags = match self.dictionary.lookup(&occ.keyword) {
                Ok(Translation::Rename(t)) => vec![t],
                Ok(Translation::Drop) => Vec::new(),
                Ok(Translation::Expand(call)) => {
                    let owner = callee_at
                        .get(&(occ.call_span.start, occ.call_span.end))
                        .copied()
                        .ok_or_else(|| {
                            SkeletonError::InvalidTranslation(
                                idx,
                                "expansion without an owning call".into(),
                            )
                        })?;
                    pending.push((owner, call));
                    Vec::new()
                }
                Err(e @ DictError::UnmappedKeyword(_)) if self.unmapped == UnmappedPolicy::Keep => {
                    let msg = format!("PLACEHOLDER_{idx}: {e}, kept as is");
                    warn!("{msg}");
                    warnings.push(msg);
                    vec![occ.keyword.text.clone()]
                }
                Err(e) => return Err(e.into()),
            };
            out.insert(idx, frags);
        }
        for (owner, call) in pending {
            out.get_mut(&owner).expect("owner translated").push(call);
        }
        Ok((out, warnings))
    }
}

impl Transpiler for Pipeline {
    fn transpile(&self, example: &EvalExample, _seed: u64) -> Result<String, String> {
        if (example.src_framework, example.tgt_framework)
            != (self.src_db.framework, self.tgt_db.framework)
        {
            return Err(format!(
                "pipeline does not translate {} -> {}",
                example.src_framework, example.tgt_framework
            ));
        }
        Pipeline::transpile(self, &example.source)
            .map(|o| o.text)
            .map_err(|e| e.to_string())
    }

    fn keyword_scores(&self) -> Option<KeywordScores<'_>> {
        self.scores.as_ref().map(|(s, v1, v2)| KeywordScores {
            scores: s,
            vocab1: v1,
            vocab2: v2,
        })
    }
}
