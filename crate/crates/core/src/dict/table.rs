use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::canon::{ApiKeyword, Framework};
use crate::eval::parse_qualified;

use super::{DictError, Measure, ScoreMatrix};

/// Score matrix on disk, keyed by qualified keyword names. Pairs not listed
/// take `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub src_framework: Framework,
    pub tgt_framework: Framework,
    pub measure: Measure,
    pub vocab1: Vec<String>,
    pub vocab2: Vec<String>,
    #[serde(default)]
    pub default: f64,
    pub scores: Vec<(String, String, f64)>,
}

impl ScoreTable {
    pub fn from_json(text: &str) -> Result<Self, DictError> {
        serde_json::from_str(text).map_err(|e| DictError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DictError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DictError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Dense table with every entry listed.
    pub fn from_matrix(
        s: &ScoreMatrix,
        vocab1: &[ApiKeyword],
        vocab2: &[ApiKeyword],
        src_framework: Framework,
        tgt_framework: Framework,
    ) -> Self {
        let mut scores = Vec::new();
        for (i, a) in vocab1.iter().enumerate() {
            for (j, b) in vocab2.iter().enumerate() {
                scores.push((a.qualified(), b.qualified(), s.get(i, j)));
            }
        }
        ScoreTable {
            src_framework,
            tgt_framework,
            measure: s.measure.clone(),
            vocab1: vocab1.iter().map(ApiKeyword::qualified).collect(),
            vocab2: vocab2.iter().map(ApiKeyword::qualified).collect(),
            default: 0.0,
            scores,
        }
    }

    pub fn vocabs(&self) -> (Vec<ApiKeyword>, Vec<ApiKeyword>) {
        (
            self.vocab1
                .iter()
                .map(|s| parse_qualified(self.src_framework, s))
                .collect(),
            self.vocab2
                .iter()
                .map(|s| parse_qualified(self.tgt_framework, s))
                .collect(),
        )
    }

    pub fn matrix(&self) -> Result<ScoreMatrix, DictError> {
        let index = |v: &[String]| {
            v.iter()
                .enumerate()
                .map(|(i, k)| (k.clone(), i))
                .collect::<HashMap<_, _>>()
        };
        let (rows, cols) = (index(&self.vocab1), index(&self.vocab2));
        if rows.len() != self.vocab1.len() || cols.len() != self.vocab2.len() {
            return Err(DictError::Format("duplicate vocabulary entry".into()));
        }
        let mut s = Array2::from_elem((self.vocab1.len(), self.vocab2.len()), self.default);
        for (a, b, v) in &self.scores {
            let (Some(&i), Some(&j)) = (rows.get(a), cols.get(b)) else {
                return Err(DictError::Format(format!(
                    "score for unknown pair {a} / {b}"
                )));
            };
            if !v.is_finite() {
                return Err(DictError::Format(format!("non-finite score for {a} / {b}")));
            }
            s[[i, j]] = *v;
        }
        Ok(ScoreMatrix::new(s, self.measure.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_table_fills_default() {
        let text = r#"{"src_framework":"pytorch","tgt_framework":"keras","measure":{"kind":"dot"},
            "vocab1":["nn.Linear","nn.Linear::bias"],"vocab2":["layers.Dense"],"default":-1,
            "scores":[["nn.Linear","layers.Dense",3.5]]}"#;
        let t = ScoreTable::from_json(text).unwrap();
        let s = t.matrix().unwrap();
        assert_eq!(s.get(0, 0), 3.5);
        assert_eq!(s.get(1, 0), -1.0);
        let (v1, _) = t.vocabs();
        assert_eq!(
            v1[1],
            ApiKeyword::parameter(Framework::Pytorch, "nn.Linear", "bias")
        );
        let dense =
            ScoreTable::from_matrix(&s, &v1, &t.vocabs().1, t.src_framework, t.tgt_framework);
        assert_eq!(dense.matrix().unwrap(), s);
    }

    #[test]
    fn unknown_pair_is_rejected() {
        let text = r#"{"src_framework":"pytorch","tgt_framework":"keras","measure":{"kind":"cosine"},
            "vocab1":["a"],"vocab2":["b"],"scores":[["a","c",1.0]]}"#;
        assert!(ScoreTable::from_json(text).unwrap().matrix().is_err());
    }
}
