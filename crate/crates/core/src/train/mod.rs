//! Domain-adversarial alignment of keyword embeddings across two frameworks.

mod model;
pub mod synthetic;

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::ApiKeyword;
use crate::dict::{
    generate_dictionary, score_matrix, DictConfig, DictError, KeywordDictionary, Measure,
};
use crate::nn::{LrSchedule, NnError};

pub use model::{AlignmentModel, LossTerm, Losses, ModelGrads, Optimizers, TrainBatch};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("framework {0} has no training samples")]
    NoSamples(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub total_samples: u64,
    pub warmup_fraction: f64,
    /// Applied to the keyword classification targets.
    pub label_smoothing: f64,
    /// Applied to the discriminator's domain targets.
    pub disc_label_smoothing: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub d: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Measure used to induce the dictionary scored by the selection criterion.
    pub selection_measure: Measure,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 5e-4,
            batch_size: 128,
            total_samples: 1_536_000,
            warmup_fraction: 0.1,
            label_smoothing: 0.1,
            disc_label_smoothing: 0.1,
            dropout: 0.1,
            leaky_slope: 0.01,
            d: 64,
            seed: 10,
            checkpoint_every: 500,
            selection_measure: Measure::Cosine,
        }
    }
}

pub const LR_GRID: [f64; 3] = [2e-4, 5e-4, 1e-3];
pub const BATCH_GRID: [usize; 3] = [64, 128, 256];

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.total_samples / self.batch_size as u64
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.peak_lr, self.warmup_fraction, self.total_steps())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.d == 0 {
            return bad("d must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.label_smoothing)
            || !(0.0..0.5).contains(&self.disc_label_smoothing)
        {
            return bad("label smoothing out of range");
        }
        if self.peak_lr < 0.0 || !self.peak_lr.is_finite() {
            return bad("peak_lr must be finite and non-negative");
        }
        Ok(())
    }
}

/// Contextual embeddings of every occurrence of one framework, with keyword ids.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSamples {
    pub h: Array2<f64>,
    pub y: Vec<usize>,
}

impl KeywordSamples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainError> {
        let bad = |m: String| TrainError::Checkpoint(m);
        let bytes = hex::decode(&self.seed).map_err(|e| bad(e.to_string()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| bad("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(
            self.word_pos
                .parse()
                .map_err(|_| bad("bad rng word position".into()))?,
        );
        Ok(rng)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent uniform with-replacement sampling for each framework.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rngs: [ChaCha8Rng; 2],
}

impl BatchSampler {
    pub fn new(seed: u64) -> Self {
        BatchSampler {
            rngs: [stream(seed, 1), stream(seed, 2)],
        }
    }

    pub fn sample_ids(&mut self, side: usize, population: usize, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| self.rngs[side].random_range(0..population))
            .collect()
    }

    pub fn next_batch(&mut self, data: &[KeywordSamples; 2], n: usize) -> TrainBatch {
        let pick = |s: &mut Self, l: usize| {
            let idx = s.sample_ids(l, data[l].len(), n);
            (
                data[l].h.select(Axis(0), &idx),
                idx.iter().map(|&i| data[l].y[i]).collect::<Vec<_>>(),
            )
        };
        let (h1, y1) = pick(self, 0);
        let (h2, y2) = pick(self, 1);
        TrainBatch {
            h: [h1, h2],
            y: [y1, y2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config: TrainConfig,
    pub model: AlignmentModel,
    pub optimizers: Optimizers,
    pub sampler: [RngState; 2],
    pub dropout_rng: RngState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_cos_sim: Option<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        ck.model.generator.validate()?;
        ck.model.discriminator.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricRecord {
    Step {
        step: u64,
        lr: f64,
        ce1: f64,
        ce2: f64,
        d: f64,
        g: f64,
    },
    Checkpoint {
        step: u64,
        avg_cos_sim: f64,
    },
}

/// Dictionary induced from the model's current output embeddings.
pub fn induce_dictionary(
    model: &AlignmentModel,
    vocabs: [&[ApiKeyword]; 2],
    measure: &Measure,
    dict_cfg: &DictConfig,
) -> Result<KeywordDictionary, TrainError> {
    let s = score_matrix(
        model.embeddings[0].view(),
        model.embeddings[1].view(),
        measure,
    )?;
    Ok(generate_dictionary(vocabs[0], vocabs[1], &s, dict_cfg)?)
}

/// Mean cosine between the output embeddings of each keyword pair the dictionary asserts.
pub fn avg_cosine_similarity(
    model: &AlignmentModel,
    vocabs: [&[ApiKeyword]; 2],
    dict: &KeywordDictionary,
) -> Result<f64, TrainError> {
    let index = |v: &[ApiKeyword], k: &ApiKeyword| v.iter().position(|x| x == k);
    let mut total = 0.0;
    let mut n = 0usize;
    for (a, b) in dict.keyword_pairs() {
        let (Some(i), Some(j)) = (index(vocabs[0], &a), index(vocabs[1], &b)) else {
            continue;
        };
        let (u, v) = (model.embeddings[0].column(i), model.embeddings[1].column(j));
        let denom = u.dot(&u).sqrt() * v.dot(&v).sqrt();
        total += if denom == 0.0 { 0.0 } else { u.dot(&v) / denom };
        n += 1;
    }
    if n == 0 {
        return Err(TrainError::EmptyDictionary);
    }
    Ok(total / n as f64)
}

/// Selection criterion of a model: induce a dictionary, then average its cosines.
pub fn selection_score(
    model: &AlignmentModel,
    vocabs: [&[ApiKeyword]; 2],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let dict_cfg = DictConfig {
        tau: None,
        ..DictConfig::default()
    };
    let dict = induce_dictionary(model, vocabs, &cfg.selection_measure, &dict_cfg)?;
    avg_cosine_similarity(model, vocabs, &dict)
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the end of training.
    pub last: Checkpoint,
    /// Checkpoint with the highest selection score.
    pub best: Checkpoint,
}

/// Hooks invoked during training.
pub trait TrainObserver {
    fn record(&mut self, _record: &MetricRecord) -> std::io::Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _ck: &Checkpoint) -> std::io::Result<()> {
        Ok(())
    }
    /// Polled between steps; returning true ends training after a checkpoint.
    fn should_stop(&self) -> bool {
        false
    }
}

pub struct NoObserver;
impl TrainObserver for NoObserver {}

/// Writes metrics as JSON lines.
pub struct JsonlMetrics<W: Write> {
    pub out: W,
}

impl<W: Write> TrainObserver for JsonlMetrics<W> {
    fn record(&mut self, record: &MetricRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }
}

pub fn initial_checkpoint(
    d_b: usize,
    cfg: &TrainConfig,
    vocab_sizes: [usize; 2],
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    let mut init_rng = stream(cfg.seed, 0);
    let mut model = AlignmentModel::new(d_b, cfg, vocab_sizes, &mut init_rng)?;
    let optimizers = model.optimizers();
    let sampler = BatchSampler::new(cfg.seed);
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        step: 0,
        config: cfg.clone(),
        model,
        optimizers,
        sampler: [
            RngState::capture(&sampler.rngs[0]),
            RngState::capture(&sampler.rngs[1]),
        ],
        dropout_rng: RngState::capture(&stream(cfg.seed, 3)),
        avg_cos_sim: None,
    })
}

/// Runs adversarial training from `start` (a fresh or resumed checkpoint) until
/// the configured number of steps, scoring a checkpoint every
/// `checkpoint_every` steps and at the end.
pub fn train(
    data: &[KeywordSamples; 2],
    vocabs: [&[ApiKeyword]; 2],
    start: Checkpoint,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    for (l, side) in data.iter().enumerate() {
        if side.is_empty() {
            return Err(TrainError::NoSamples(l + 1));
        }
        if side.h.ncols() != start.model.d_b() {
            return Err(NnError::DimensionMismatch {
                expected: start.model.d_b(),
                got: side.h.ncols(),
            }
            .into());
        }
    }
    let cfg = start.config.clone();
    cfg.validate()?;
    let schedule = cfg.schedule();
    let total = cfg.total_steps();
    let mut sampler = BatchSampler {
        rngs: [start.sampler[0].restore()?, start.sampler[1].restore()?],
    };
    let mut dropout_rng = start.dropout_rng.restore()?;
    let mut model = start.model;
    let mut opt = start.optimizers;
    let mut step = start.step;
    let mut best: Option<Checkpoint> = None;

    let snapshot = |model: &AlignmentModel,
                    opt: &Optimizers,
                    sampler: &BatchSampler,
                    dropout: &ChaCha8Rng,
                    step: u64,
                    score: Option<f64>| Checkpoint {
        version: CHECKPOINT_VERSION,
        step,
        config: cfg.clone(),
        model: model.clone(),
        optimizers: opt.clone(),
        sampler: [
            RngState::capture(&sampler.rngs[0]),
            RngState::capture(&sampler.rngs[1]),
        ],
        dropout_rng: RngState::capture(dropout),
        avg_cos_sim: score,
    };

    loop {
        let at_end = step >= total || observer.should_stop();
        let due = cfg.checkpoint_every > 0
            && step > start.step
            && step.is_multiple_of(cfg.checkpoint_every);
        if due || at_end {
            let score = selection_score(&model, vocabs, &cfg).ok();
            if let Some(s) = score {
                observer.record(&MetricRecord::Checkpoint {
                    step,
                    avg_cos_sim: s,
                })?;
            }
            let ck = snapshot(&model, &opt, &sampler, &dropout_rng, step, score);
            observer.checkpoint(&ck)?;
            let better = match (&best, score) {
                (None, _) => true,
                (Some(b), Some(s)) => b.avg_cos_sim.is_none_or(|bs| s > bs),
                (Some(_), None) => false,
            };
            if better {
                best = Some(ck.clone());
            }
            if at_end {
                return Ok(TrainOutcome {
                    last: ck,
                    best: best.expect("set above"),
                });
            }
        }
        step += 1;
        let lr = schedule.lr_at(step);
        let batch = sampler.next_batch(data, cfg.batch_size);
        let losses = model.train_step(&batch, &mut opt, lr, &cfg, &mut dropout_rng)?;
        observer.record(&MetricRecord::Step {
            step,
            lr,
            ce1: losses.ce1,
            ce2: losses.ce2,
            d: losses.d,
            g: losses.g,
        })?;
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub score: f64,
    pub checkpoint: Checkpoint,
}

/// Trains every (lr, batch size) cell and returns them with the index of the
/// cell whose best checkpoint has the highest selection score. Ties go to the
/// smaller learning rate, then the smaller batch size.
pub fn grid_search(
    data: &[KeywordSamples; 2],
    vocabs: [&[ApiKeyword]; 2],
    base: &TrainConfig,
    lrs: &[f64],
    batch_sizes: &[usize],
) -> Result<(Vec<GridCell>, usize), TrainError> {
    if lrs.is_empty() || batch_sizes.is_empty() {
        return Err(TrainError::Config("empty grid".into()));
    }
    let d_b = data[0].h.ncols();
    let sizes = [vocabs[0].len(), vocabs[1].len()];
    let cells: Vec<(f64, usize)> = lrs
        .iter()
        .flat_map(|&lr| batch_sizes.iter().map(move |&n| (lr, n)))
        .collect();
    let results: Vec<GridCell> = cells
        .par_iter()
        .map(|&(lr, n)| {
            let cfg = TrainConfig {
                peak_lr: lr,
                batch_size: n,
                ..base.clone()
            };
            let start = initial_checkpoint(d_b, &cfg, sizes)?;
            let out = train(data, vocabs, start, &mut NoObserver)?;
            let score = out.best.avg_cos_sim.unwrap_or(f64::NEG_INFINITY);
            Ok(GridCell {
                peak_lr: lr,
                batch_size: n,
                score,
                checkpoint: out.best,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let mut best = 0;
    for (i, c) in results.iter().enumerate() {
        let b = &results[best];
        let better = c.score > b.score
            || (c.score == b.score && (c.peak_lr, c.batch_size) < (b.peak_lr, b.batch_size));
        if better {
            best = i;
        }
    }
    Ok((results, best))
}

#[cfg(test)]
mod tests;
