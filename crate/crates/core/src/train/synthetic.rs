//! Two artificial frameworks whose keyword embeddings differ by a rotation.
//!
//! Framework 1 has `groups` callables, each owning up to `max_params`
//! parameters. Every keyword gets a cluster center; parameter centers sit near
//! their callable's. Framework 2 has the same structure under fresh names and
//! a shuffled vocabulary order, with every center rotated by one fixed random
//! orthogonal matrix. Occurrences are center plus isotropic Gaussian noise and
//! corresponding keywords occur equally often (Zipf-distributed counts).

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::canon::{ApiKeyword, Framework};

use super::KeywordSamples;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub max_params: usize,
    pub d_b: usize,
    pub noise: f64,
    /// Standard deviation of a parameter center around its callable's center.
    pub param_spread: f64,
    /// Occurrences per framework.
    pub occurrences: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            groups: 20,
            max_params: 4,
            d_b: 32,
            noise: 0.1,
            param_spread: 0.5,
            occurrences: 20_000,
            zipf_exponent: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub vocabs: [Vec<ApiKeyword>; 2],
    pub samples: [KeywordSamples; 2],
    /// Correct translation of every framework-1 keyword.
    pub gold: Vec<(ApiKeyword, ApiKeyword)>,
    pub rotation: Array2<f64>,
    /// `centers[l]` is m × d_b in vocabulary order.
    pub centers: [Array2<f64>; 2],
}

/// Haar-distributed orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
pub fn random_rotation(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let a: Array2<f64> = Array2::from_shape_simple_fn((n, n), || StandardNormal.sample(rng));
        let mut q = Array2::<f64>::zeros((n, n));
        let mut ok = true;
        for j in 0..n {
            let mut v: Array1<f64> = a.column(j).to_owned();
            for k in 0..j {
                let qk = q.column(k);
                let proj = qk.dot(&v);
                v -= &qk.mapv(|x| x * proj);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-9 {
                ok = false;
                break;
            }
            q.column_mut(j).assign(&(v / norm));
        }
        if ok {
            return q;
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng, n: usize, scale: f64| -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
    };

    // Canonical keyword list shared by both sides: (group, param index or None).
    let mut keys: Vec<(usize, Option<usize>)> = Vec::new();
    let mut centers: Vec<Array1<f64>> = Vec::new();
    for g in 0..spec.groups {
        let c = normal(&mut rng, spec.d_b, 1.0);
        keys.push((g, None));
        centers.push(c.clone());
        let n_params = rng.random_range(0..=spec.max_params);
        for p in 0..n_params {
            keys.push((g, Some(p)));
            centers.push(&c + &normal(&mut rng, spec.d_b, spec.param_spread));
        }
    }
    let m = keys.len();
    let rotation = random_rotation(spec.d_b, &mut rng);

    let mut ranks: Vec<usize> = (0..m).collect();
    ranks.shuffle(&mut rng);
    let weights: Vec<f64> = ranks
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let counts: Vec<usize> = weights
        .iter()
        .map(|w| ((w / wsum) * spec.occurrences as f64).round().max(1.0) as usize)
        .collect();

    let name = |side: usize, key: (usize, Option<usize>)| -> ApiKeyword {
        let (fw, callable) = if side == 0 {
            (Framework::Pytorch, format!("src.Call{:02}", key.0))
        } else {
            (Framework::Keras, format!("tgt.Op{:02}", key.0))
        };
        match key.1 {
            None => ApiKeyword::callable(fw, &callable),
            Some(p) => {
                let param = if side == 0 {
                    format!("arg{p}")
                } else {
                    format!("opt{p}")
                };
                ApiKeyword::parameter(fw, &callable, &param)
            }
        }
    };

    // Vocabulary order: side 1 canonical, side 2 shuffled.
    let order1: Vec<usize> = (0..m).collect();
    let mut order2: Vec<usize> = (0..m).collect();
    order2.shuffle(&mut rng);
    let orders = [order1, order2];

    let mut vocabs: [Vec<ApiKeyword>; 2] = [Vec::new(), Vec::new()];
    let mut vocab_centers = [Array2::zeros((m, spec.d_b)), Array2::zeros((m, spec.d_b))];
    let mut position = [vec![0usize; m], vec![0usize; m]];
    for side in 0..2 {
        for (id, &k) in orders[side].iter().enumerate() {
            vocabs[side].push(name(side, keys[k]));
            position[side][k] = id;
            let c = if side == 0 {
                centers[k].clone()
            } else {
                rotation.dot(&centers[k])
            };
            vocab_centers[side].row_mut(id).assign(&c);
        }
    }

    let mut samples = Vec::with_capacity(2);
    for side in 0..2 {
        let total: usize = counts.iter().sum();
        let mut h = Array2::zeros((total, spec.d_b));
        let mut y = Vec::with_capacity(total);
        let mut row = 0;
        for k in 0..m {
            let id = position[side][k];
            for _ in 0..counts[k] {
                let v = &vocab_centers[side].row(id) + &normal(&mut rng, spec.d_b, spec.noise);
                h.row_mut(row).assign(&v);
                y.push(id);
                row += 1;
            }
        }
        samples.push(KeywordSamples { h, y });
    }
    let samples: [KeywordSamples; 2] = samples.try_into().expect("two sides");

    let gold = (0..m)
        .map(|k| (name(0, keys[k]), name(1, keys[k])))
        .collect();
    SyntheticProblem {
        vocabs,
        samples,
        gold,
        rotation,
        centers: vocab_centers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_rotation(6, &mut rng);
        let eye = q.t().dot(&q);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sides_mirror_each_other() {
        let p = generate(&SyntheticSpec {
            occurrences: 2000,
            ..Default::default()
        });
        assert_eq!(p.vocabs[0].len(), p.vocabs[1].len());
        assert_eq!(p.gold.len(), p.vocabs[0].len());
        assert_eq!(p.samples[0].len(), p.samples[1].len());
        let callables = p.vocabs[0].iter().filter(|k| k.is_callable()).count();
        assert_eq!(callables, 20);
        for (a, b) in &p.gold {
            let i = p.vocabs[0].iter().position(|k| k == a).unwrap();
            let j = p.vocabs[1].iter().position(|k| k == b).unwrap();
            let rotated = p.rotation.dot(&p.centers[0].row(i));
            assert!((&rotated - &p.centers[1].row(j))
                .iter()
                .all(|d| d.abs() < 1e-12));
            let count = |l: usize, id: usize| p.samples[l].y.iter().filter(|&&y| y == id).count();
            assert_eq!(count(0, i), count(1, j));
        }
    }
}
