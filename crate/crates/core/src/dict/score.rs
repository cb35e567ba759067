use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::DictError;

/// Similarity measure used to build a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Measure {
    Cosine,
    Dot,
    Csls { k: usize, base: Box<Measure> },
}

impl Measure {
    pub fn csls(k: usize, base: Measure) -> Measure {
        Measure::Csls {
            k,
            base: Box::new(base),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Cosine => f.write_str("cosine"),
            Measure::Dot => f.write_str("dot"),
            Measure::Csls { k, base } => write!(f, "csls({k}, {base})"),
        }
    }
}

/// `s[i, j]` scores source keyword `i` against target keyword `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Array2<f64>,
    pub measure: Measure,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, measure: Measure) -> Self {
        ScoreMatrix { scores, measure }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[[i, j]]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dim()
    }
}

fn unit_columns(e: ArrayView2<f64>, side: &'static str) -> Result<Array2<f64>, DictError> {
    let norms: Array1<f64> = e.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    if let Some(col) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(DictError::ZeroVector { side, index: col });
    }
    Ok(&e / &norms.insert_axis(Axis(0)))
}

/// Scores between the columns of `e1` (d × m1) and `e2` (d × m2).
pub fn score_matrix(
    e1: ArrayView2<f64>,
    e2: ArrayView2<f64>,
    measure: &Measure,
) -> Result<ScoreMatrix, DictError> {
    if e1.nrows() != e2.nrows() {
        return Err(DictError::DimensionMismatch {
            left: e1.nrows(),
            right: e2.nrows(),
        });
    }
    let scores = match measure {
        Measure::Dot => e1.t().dot(&e2),
        Measure::Cosine => unit_columns(e1, "source")?
            .t()
            .dot(&unit_columns(e2, "target")?),
        Measure::Csls { k, base } => {
            let s = score_matrix(e1, e2, base)?;
            return csls_rescale(&s, *k);
        }
    };
    Ok(ScoreMatrix {
        scores,
        measure: measure.clone(),
    })
}

fn top_k_mean(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let top = v[0];
    top + v[1..k].iter().map(|x| x - top).sum::<f64>() / k as f64
}

/// Cross-domain local scaling: `2 s[i,j] - r_row[i] - r_col[j]`, where the
/// `r` terms are the means of the `k` largest scores of row `i` / column `j`.
pub fn csls_rescale(s: &ScoreMatrix, k: usize) -> Result<ScoreMatrix, DictError> {
    let (m1, m2) = s.shape();
    if k == 0 || k > m1.min(m2) {
        return Err(DictError::KOutOfRange { k, max: m1.min(m2) });
    }
    let r_row: Vec<f64> = s
        .scores
        .rows()
        .into_iter()
        .map(|r| top_k_mean(r.iter().copied(), k))
        .collect();
    let r_col: Vec<f64> = s
        .scores
        .columns()
        .into_iter()
        .map(|c| top_k_mean(c.iter().copied(), k))
        .collect();
    let scores = Array2::from_shape_fn((m1, m2), |(i, j)| {
        2.0 * s.scores[[i, j]] - r_row[i] - r_col[j]
    });
    Ok(ScoreMatrix {
        scores,
        measure: Measure::csls(k, s.measure.clone()),
    })
}

/// Per-row argmax over `cols`; ties go to the lowest column index.
pub fn greedy_match(s: &ScoreMatrix, rows: &[usize], cols: &[usize]) -> Vec<(usize, usize, f64)> {
    rows.iter()
        .filter_map(|&i| best_column(s, i, cols).map(|(j, v)| (i, j, v)))
        .collect()
}

pub(crate) fn best_column(s: &ScoreMatrix, i: usize, cols: &[usize]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &j in cols {
        let v = s.scores[[i, j]];
        best = match best {
            Some((bj, bv)) if bv > v || (bv == v && bj < j) => Some((bj, bv)),
            _ => Some((j, v)),
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_of_identical_and_orthogonal() {
        let e = array![[1.0, 0.0], [0.0, 2.0]];
        let s = score_matrix(e.view(), e.view(), &Measure::Cosine).unwrap();
        assert_eq!(s.scores, array![[1.0, 0.0], [0.0, 1.0]]);
        let zero = array![[0.0], [0.0]];
        assert!(matches!(
            score_matrix(zero.view(), e.view(), &Measure::Cosine),
            Err(DictError::ZeroVector { .. })
        ));
    }

    #[test]
    fn constant_matrix_rescales_to_zero() {
        let s = ScoreMatrix::new(Array2::from_elem((4, 3), 0.7), Measure::Dot);
        let c = csls_rescale(&s, 2).unwrap();
        assert!(c.scores.iter().all(|&v| v == 0.0));
        for (value, k) in [(0.37, 3), (-1.3, 1), (1e6 / 3.0, 2), (0.1, 3)] {
            let s = ScoreMatrix::new(Array2::from_elem((3, 5), value), Measure::Dot);
            assert!(
                csls_rescale(&s, k)
                    .unwrap()
                    .scores
                    .iter()
                    .all(|&v| v == 0.0),
                "{value} {k}"
            );
        }
        assert!(csls_rescale(&s, 4).is_err());
        assert!(csls_rescale(&s, 0).is_err());
    }

    #[test]
    fn full_width_csls_subtracts_means() {
        let s = ScoreMatrix::new(array![[1.0, 2.0], [3.0, 5.0]], Measure::Dot);
        let c = csls_rescale(&s, 2).unwrap();
        // row means 1.5, 4; column means 2, 3.5
        assert_eq!(
            c.scores,
            array![
                [2.0 - 1.5 - 2.0, 4.0 - 1.5 - 3.5],
                [6.0 - 4.0 - 2.0, 10.0 - 4.0 - 3.5]
            ]
        );
    }

    #[test]
    fn greedy_ties_pick_lowest_column() {
        let s = ScoreMatrix::new(array![[0.5, 0.5, 0.1], [0.0, 0.2, 0.9]], Measure::Dot);
        assert_eq!(
            greedy_match(&s, &[0, 1], &[0, 1, 2]),
            vec![(0, 0, 0.5), (1, 2, 0.9)]
        );
        assert_eq!(greedy_match(&s, &[0], &[2, 1]), vec![(0, 1, 0.5)]);
        assert!(greedy_match(&s, &[0], &[]).is_empty());
    }
}
