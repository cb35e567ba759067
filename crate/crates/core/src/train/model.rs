use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{bce_with_logits, softmax_cross_entropy, Activation, Adam, Mlp, MlpGrads, NnError};

use super::TrainConfig;

/// Generator, discriminator and one output-embedding matrix per framework.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub generator: Mlp,
    pub discriminator: Mlp,
    /// `embeddings[l]` is d × m_l; column i is keyword i's output embedding.
    pub embeddings: [Array2<f64>; 2],
}

/// Contextual embeddings and keyword ids for both frameworks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub h: [Array2<f64>; 2],
    pub y: [Vec<usize>; 2],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub ce1: f64,
    pub ce2: f64,
    pub d: f64,
    pub g: f64,
}

/// Separate Adam states for the three updates of a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub joint: Adam,
    pub discriminator: Adam,
    pub generator: Adam,
}

/// One of the four training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Ce1,
    Ce2,
    Discriminator,
    Generator,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [
        LossTerm::Ce1,
        LossTerm::Ce2,
        LossTerm::Discriminator,
        LossTerm::Generator,
    ];

    pub fn of(self, l: &Losses) -> f64 {
        match self {
            LossTerm::Ce1 => l.ce1,
            LossTerm::Ce2 => l.ce2,
            LossTerm::Discriminator => l.d,
            LossTerm::Generator => l.g,
        }
    }
}

/// Gradients of every parameter of an [`AlignmentModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub generator: MlpGrads,
    pub discriminator: MlpGrads,
    pub embeddings: [Array2<f64>; 2],
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.generator.slices();
        out.extend(self.discriminator.slices());
        out.extend(
            self.embeddings
                .iter()
                .map(|e| e.as_slice().expect("contiguous")),
        );
        out
    }
}

impl AlignmentModel {
    pub fn new(
        d_b: usize,
        cfg: &TrainConfig,
        vocab_sizes: [usize; 2],
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let d = cfg.d;
        let generator = Mlp::new(&[d_b, d, d], Activation::Relu, cfg.dropout, rng)?;
        let discriminator = Mlp::new(
            &[d, d, 1],
            Activation::LeakyRelu {
                slope: cfg.leaky_slope,
            },
            cfg.dropout,
            rng,
        )?;
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive scale");
        let mut embed = |m: usize| Array2::from_shape_simple_fn((d, m), || normal.sample(rng));
        let embeddings = [embed(vocab_sizes[0]), embed(vocab_sizes[1])];
        Ok(AlignmentModel {
            generator,
            discriminator,
            embeddings,
        })
    }

    pub fn d_b(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn d(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn optimizers(&mut self) -> Optimizers {
        let gen_sizes: Vec<usize> = self
            .generator
            .param_slices_mut()
            .iter()
            .map(|s| s.len())
            .collect();
        let mut joint = gen_sizes.clone();
        joint.extend(self.embeddings.iter().map(|e| e.len()));
        let disc: Vec<usize> = self
            .discriminator
            .param_slices_mut()
            .iter()
            .map(|s| s.len())
            .collect();
        Optimizers {
            joint: Adam::new(&joint),
            discriminator: Adam::new(&disc),
            generator: Adam::new(&gen_sizes),
        }
    }

    /// Generator outputs in inference mode.
    pub fn encode(&self, h: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.generator.predict(h)
    }

    fn check(&self, batch: &TrainBatch) -> Result<(), NnError> {
        for l in 0..2 {
            if batch.h[l].ncols() != self.d_b() {
                return Err(NnError::DimensionMismatch {
                    expected: self.d_b(),
                    got: batch.h[l].ncols(),
                });
            }
            if batch.h[l].nrows() != batch.y[l].len() {
                return Err(NnError::DimensionMismatch {
                    expected: batch.h[l].nrows(),
                    got: batch.y[l].len(),
                });
            }
        }
        Ok(())
    }

    /// All four losses in inference mode (no dropout).
    pub fn losses(
        &self,
        batch: &TrainBatch,
        smoothing: f64,
        disc_smoothing: f64,
    ) -> Result<Losses, NnError> {
        self.check(batch)?;
        let z1 = self.encode(batch.h[0].view())?;
        let z2 = self.encode(batch.h[1].view())?;
        let (ce1, _) =
            softmax_cross_entropy(z1.dot(&self.embeddings[0]).view(), &batch.y[0], smoothing)?;
        let (ce2, _) =
            softmax_cross_entropy(z2.dot(&self.embeddings[1]).view(), &batch.y[1], smoothing)?;
        let z = ndarray::concatenate![Axis(0), z1, z2];
        let logits = self.discriminator.predict(z.view())?;
        let targets = domain_targets(z1.nrows(), z2.nrows(), disc_smoothing);
        let flipped: Vec<f64> = targets.iter().map(|t| 1.0 - t).collect();
        let logits = logits.column(0).to_vec();
        Ok(Losses {
            ce1,
            ce2,
            d: bce_with_logits(&logits, &targets).0,
            g: bce_with_logits(&logits, &flipped).0,
        })
    }

    /// One training iteration: the joint generator and embedding update on the
    /// two classification losses, then the discriminator update, then the
    /// generator update against the discriminator. Each update runs its own
    /// forward pass with the parameters left by the previous one.
    pub fn train_step(
        &mut self,
        batch: &TrainBatch,
        opt: &mut Optimizers,
        lr: f64,
        cfg: &TrainConfig,
        rng: &mut impl Rng,
    ) -> Result<Losses, NnError> {
        self.check(batch)?;
        let mut losses = Losses::default();
        let (n1, n2) = (batch.h[0].nrows(), batch.h[1].nrows());

        // (1) G + E_1 + E_2 on L_CE_1 + L_CE_2
        let mut gen_grads: Option<MlpGrads> = None;
        let mut emb_grads = Vec::with_capacity(2);
        for l in 0..2 {
            let (z, cache) = self.generator.forward(batch.h[l].view(), true, rng)?;
            let logits = z.dot(&self.embeddings[l]);
            let (loss, g_logits) =
                softmax_cross_entropy(logits.view(), &batch.y[l], cfg.label_smoothing)?;
            if l == 0 {
                losses.ce1 = loss;
            } else {
                losses.ce2 = loss;
            }
            emb_grads.push(z.t().dot(&g_logits).as_standard_layout().into_owned());
            let g_z = g_logits.dot(&self.embeddings[l].t());
            let (g, _) = self.generator.backward(&cache, g_z.view())?;
            gen_grads = Some(match gen_grads {
                None => g,
                Some(mut acc) => {
                    for (a, b) in acc.layers.iter_mut().zip(g.layers) {
                        a.weight += &b.weight;
                        a.bias += &b.bias;
                    }
                    acc
                }
            });
        }
        {
            let gen_grads = gen_grads.expect("two sides");
            let mut grads = gen_grads.slices();
            grads.extend(emb_grads.iter().map(|g| g.as_slice().expect("contiguous")));
            let mut params = self.generator.param_slices_mut();
            let [e1, e2] = &mut self.embeddings;
            params.push(e1.as_slice_mut().expect("contiguous"));
            params.push(e2.as_slice_mut().expect("contiguous"));
            opt.joint.update(&mut params, &grads, lr);
        }

        let targets = domain_targets(n1, n2, cfg.disc_label_smoothing);

        // (2) D on L_D
        {
            let z = self.encode_both(batch, rng)?.0;
            let (logits, cache) = self.discriminator.forward(z.view(), true, rng)?;
            let (loss, g) =
                bce_with_logits(logits.column(0).as_slice().expect("contiguous"), &targets);
            losses.d = loss;
            let g = Array2::from_shape_vec((g.len(), 1), g).expect("column");
            let (grads, _) = self.discriminator.backward(&cache, g.view())?;
            opt.discriminator.update(
                &mut self.discriminator.param_slices_mut(),
                &grads.slices(),
                lr,
            );
        }

        // (3) G on L_G
        {
            let (z, caches) = self.encode_both(batch, rng)?;
            let (logits, cache) = self.discriminator.forward(z.view(), true, rng)?;
            let flipped: Vec<f64> = targets.iter().map(|t| 1.0 - t).collect();
            let (loss, g) =
                bce_with_logits(logits.column(0).as_slice().expect("contiguous"), &flipped);
            losses.g = loss;
            let g = Array2::from_shape_vec((g.len(), 1), g).expect("column");
            let (_, g_z) = self.discriminator.backward(&cache, g.view())?;
            let (g1, _) = self
                .generator
                .backward(&caches[0], g_z.slice(ndarray::s![..n1, ..]))?;
            let (g2, _) = self
                .generator
                .backward(&caches[1], g_z.slice(ndarray::s![n1.., ..]))?;
            let mut total = g1;
            for (a, b) in total.layers.iter_mut().zip(g2.layers) {
                a.weight += &b.weight;
                a.bias += &b.bias;
            }
            opt.generator
                .update(&mut self.generator.param_slices_mut(), &total.slices(), lr);
        }
        Ok(losses)
    }

    /// Parameter buffers in the order used by [`ModelGrads::slices`]: generator,
    /// discriminator, then E_1 and E_2.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.generator.param_slices_mut();
        out.extend(self.discriminator.param_slices_mut());
        let [e1, e2] = &mut self.embeddings;
        out.push(e1.as_slice_mut().expect("contiguous"));
        out.push(e2.as_slice_mut().expect("contiguous"));
        out
    }

    /// Value and gradient of one loss term in inference mode.
    pub fn gradient(
        &self,
        batch: &TrainBatch,
        term: LossTerm,
        smoothing: f64,
        disc_smoothing: f64,
    ) -> Result<(f64, ModelGrads), NnError> {
        self.check(batch)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let zero_mlp = |m: &Mlp| MlpGrads {
            layers: m
                .layers
                .iter()
                .map(|l| crate::nn::Linear::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        };
        let mut grads = ModelGrads {
            generator: zero_mlp(&self.generator),
            discriminator: zero_mlp(&self.discriminator),
            embeddings: [
                Array2::zeros(self.embeddings[0].dim()),
                Array2::zeros(self.embeddings[1].dim()),
            ],
        };
        let value = match term {
            LossTerm::Ce1 | LossTerm::Ce2 => {
                let l = if term == LossTerm::Ce1 { 0 } else { 1 };
                let (z, cache) = self.generator.forward(batch.h[l].view(), false, &mut rng)?;
                let (loss, g_logits) = softmax_cross_entropy(
                    z.dot(&self.embeddings[l]).view(),
                    &batch.y[l],
                    smoothing,
                )?;
                grads.embeddings[l] = z.t().dot(&g_logits).as_standard_layout().into_owned();
                grads.generator = self
                    .generator
                    .backward(&cache, g_logits.dot(&self.embeddings[l].t()).view())?
                    .0;
                loss
            }
            LossTerm::Discriminator | LossTerm::Generator => {
                let n1 = batch.h[0].nrows();
                let (z1, c1) = self.generator.forward(batch.h[0].view(), false, &mut rng)?;
                let (z2, c2) = self.generator.forward(batch.h[1].view(), false, &mut rng)?;
                let z = ndarray::concatenate![Axis(0), z1, z2];
                let (logits, cache) = self.discriminator.forward(z.view(), false, &mut rng)?;
                let mut targets = domain_targets(n1, batch.h[1].nrows(), disc_smoothing);
                if term == LossTerm::Generator {
                    targets.iter_mut().for_each(|t| *t = 1.0 - *t);
                }
                let (loss, g) = bce_with_logits(&logits.column(0).to_vec(), &targets);
                let g = Array2::from_shape_vec((g.len(), 1), g).expect("column");
                let (d_grads, g_z) = self.discriminator.backward(&cache, g.view())?;
                grads.discriminator = d_grads;
                let (g1, _) = self
                    .generator
                    .backward(&c1, g_z.slice(ndarray::s![..n1, ..]))?;
                let (g2, _) = self
                    .generator
                    .backward(&c2, g_z.slice(ndarray::s![n1.., ..]))?;
                grads.generator = g1;
                for (a, b) in grads.generator.layers.iter_mut().zip(g2.layers) {
                    a.weight += &b.weight;
                    a.bias += &b.bias;
                }
                loss
            }
        };
        Ok((value, grads))
    }

    fn encode_both(
        &self,
        batch: &TrainBatch,
        rng: &mut impl Rng,
    ) -> Result<(Array2<f64>, [crate::nn::Cache; 2]), NnError> {
        let (z1, c1) = self.generator.forward(batch.h[0].view(), true, rng)?;
        let (z2, c2) = self.generator.forward(batch.h[1].view(), true, rng)?;
        Ok((ndarray::concatenate![Axis(0), z1, z2], [c1, c2]))
    }
}

/// Discriminator targets: framework 1 is label 0, framework 2 label 1, pulled
/// toward 0.5 by `smoothing`.
pub(crate) fn domain_targets(n1: usize, n2: usize, smoothing: f64) -> Vec<f64> {
    let mut t = vec![smoothing; n1];
    t.extend(std::iter::repeat_n(1.0 - smoothing, n2));
    t
}
