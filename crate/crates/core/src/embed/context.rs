use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::canon::KeywordOccurrence;

use super::{
    keyword_tokens, mean_rows, BpeVocab, ContextualEmbedding, EmbedError, EmbeddingProvider,
    ProviderKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub d_b: usize,
    /// Skip-gram training window.
    pub train_window: usize,
    /// Tokens on each side pooled into the context term.
    pub context_window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            d_b: 32,
            train_window: 3,
            context_window: 4,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

/// Skip-gram token vectors plus a projected context term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    #[serde(skip)]
    bpe: Arc<BpeVocab>,
    config: SkipGramConfig,
    vectors: Vec<Vec<f64>>,
    projection: Vec<Vec<f64>>,
}

fn is_blank(bpe: &BpeVocab, id: u32) -> bool {
    bpe.token(id)
        .is_none_or(|t| t.chars().all(char::is_whitespace))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ContextWindow {
    /// Single-threaded SGD, so the result depends only on the texts and seed.
    pub fn train<S: AsRef<str>>(bpe: Arc<BpeVocab>, texts: &[S], config: SkipGramConfig) -> Self {
        let v = bpe.len();
        let d = config.d_b;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut input: Vec<Vec<f64>> = (0..v)
            .map(|_| {
                (0..d)
                    .map(|_| (rng.random::<f64>() - 0.5) / d as f64)
                    .collect()
            })
            .collect();
        let mut output = vec![vec![0.0; d]; v];
        let projection: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                (0..d)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|x: f64| x / (d as f64).sqrt())
                    .collect()
            })
            .collect();

        let seqs: Vec<Vec<u32>> = texts
            .iter()
            .map(|t| {
                bpe.encode(t.as_ref())
                    .into_iter()
                    .filter(|&id| !is_blank(&bpe, id))
                    .collect()
            })
            .collect();
        let mut counts = vec![0.0f64; v];
        for s in &seqs {
            for &id in s {
                counts[id as usize] += 1.0;
            }
        }
        let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
        let Ok(noise) = WeightedIndex::new(&weights) else {
            return ContextWindow {
                bpe,
                config,
                vectors: input,
                projection,
            };
        };
        let total_steps = (config.epochs * seqs.iter().map(Vec::len).sum::<usize>()).max(1);
        let mut step = 0usize;
        let mut grad = vec![0.0; d];
        for _ in 0..config.epochs {
            for s in &seqs {
                for (i, &center) in s.iter().enumerate() {
                    let lr = config.lr * (1.0 - step as f64 / total_steps as f64).max(1e-4);
                    step += 1;
                    let lo = i.saturating_sub(config.train_window);
                    let hi = (i + config.train_window + 1).min(s.len());
                    for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                        if j == i {
                            continue;
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        let c = center as usize;
                        for k in 0..=config.negatives {
                            let (target, label) = if k == 0 {
                                (ctx as usize, 1.0)
                            } else {
                                let t = noise.sample(&mut rng);
                                if t == ctx as usize {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let dot: f64 = input[c]
                                .iter()
                                .zip(&output[target])
                                .map(|(a, b)| a * b)
                                .sum();
                            let g = lr * (label - sigmoid(dot));
                            for q in 0..d {
                                grad[q] += g * output[target][q];
                                output[target][q] += g * input[c][q];
                            }
                        }
                        for q in 0..d {
                            input[c][q] += grad[q];
                        }
                    }
                }
            }
        }
        ContextWindow {
            bpe,
            config,
            vectors: input,
            projection,
        }
    }

    pub fn config(&self) -> &SkipGramConfig {
        &self.config
    }

    pub fn token_vector(&self, id: u32) -> &[f64] {
        &self.vectors[id as usize]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(bpe: Arc<BpeVocab>, text: &str) -> Result<Self, EmbedError> {
        let mut cw: ContextWindow = serde_json::from_str(text).map_err(|e| EmbedError::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        if cw.vectors.len() != bpe.len() {
            return Err(EmbedError::Vocab(format!(
                "{} vectors for {} tokens",
                cw.vectors.len(),
                bpe.len()
            )));
        }
        let d = cw.config.d_b;
        if let Some(bad) = cw
            .vectors
            .iter()
            .chain(&cw.projection)
            .find(|r| r.len() != d)
        {
            return Err(EmbedError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        if cw.projection.len() != d {
            return Err(EmbedError::DimensionMismatch {
                expected: d,
                got: cw.projection.len(),
            });
        }
        cw.bpe = bpe;
        Ok(cw)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(bpe: Arc<BpeVocab>, path: &Path) -> Result<Self, EmbedError> {
        Self::from_json(bpe, &std::fs::read_to_string(path)?)
    }
}

impl EmbeddingProvider for ContextWindow {
    fn d_b(&self) -> usize {
        self.config.d_b
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::ContextWindow
    }

    fn embed_occurrence(&self, occ: &KeywordOccurrence) -> Result<ContextualEmbedding, EmbedError> {
        let (ids, positions) = keyword_tokens(&self.bpe, occ)?;
        let d = self.config.d_b;
        let mut v = mean_rows(positions.iter().map(|&p| self.token_vector(ids[p])), d);

        let (first, last) = (positions[0], *positions.last().unwrap());
        let w = self.config.context_window;
        let before = ids[..first]
            .iter()
            .rev()
            .filter(|&&id| !is_blank(&self.bpe, id))
            .take(w);
        let after = ids[last + 1..]
            .iter()
            .filter(|&&id| !is_blank(&self.bpe, id))
            .take(w);
        let window: Vec<u32> = before.chain(after).copied().collect();
        if !window.is_empty() {
            let c = mean_rows(window.iter().map(|&id| self.token_vector(id)), d);
            for (q, row) in self.projection.iter().enumerate() {
                v[q] += row.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(ContextualEmbedding {
            occurrence: occ.key(),
            vector: v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::bpe_train;
    use super::super::tests::occ;
    use super::*;

    fn corpus() -> Vec<String> {
        (0..40)
            .map(|i| {
                format!(
                    "self.fc{i} = nn.Linear(in_features={}, out_features=10, bias=True)\n\
                     self.conv{i} = nn.Conv2d(in_channels=3, out_channels={}, kernel_size=3, bias=False)\n",
                    i + 1,
                    i + 2
                )
            })
            .collect()
    }

    fn small() -> ContextWindow {
        let texts = corpus();
        let bpe = Arc::new(bpe_train(texts.iter().map(String::as_str), 60));
        ContextWindow::train(
            bpe,
            &texts,
            SkipGramConfig {
                d_b: 8,
                epochs: 2,
                ..Default::default()
            },
        )
    }

    #[test]
    fn training_is_deterministic() {
        let (a, b) = (small(), small());
        assert_eq!(a.vectors, b.vectors);
        assert!(a.vectors.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn same_parameter_differs_by_owner() {
        let cw = small();
        let text =
            "a = nn.Linear(in_features=1, bias=True)\nb = nn.Conv2d(in_channels=3, bias=False)";
        let first = text.find("bias").unwrap();
        let second = text.rfind("bias").unwrap();
        let e1 = cw
            .embed_occurrence(&occ(text, first, first + 4, 0))
            .unwrap();
        let e2 = cw
            .embed_occurrence(&occ(text, second, second + 4, 0))
            .unwrap();
        assert_eq!(e1.vector.len(), 8);
        assert_ne!(e1.vector, e2.vector);
    }

    #[test]
    fn isolated_keyword_is_token_mean() {
        let cw = small();
        let e = cw.embed_occurrence(&occ("Linear", 0, 6, 0)).unwrap();
        let ids = cw.bpe.encode("Linear");
        let naive = mean_rows(ids.iter().map(|&i| cw.token_vector(i)), 8);
        assert_eq!(e.vector, naive);
    }

    #[test]
    fn json_round_trip() {
        let cw = small();
        let back = ContextWindow::from_json(cw.bpe.clone(), &cw.to_json()).unwrap();
        assert_eq!(back, cw);
        let other = Arc::new(bpe_train(["x"], 0));
        assert!(ContextWindow::from_json(other, &cw.to_json()).is_err());
    }
}
