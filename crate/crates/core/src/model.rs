// SPDX-License-Identifier: MIT OR Apache-2.0

//! Piecewise-constant parameterization of a series.
//!
//! A mean profile with `K` segments is written `X beta`, where `X` is the
//! `n x n` lower-triangular matrix of ones and `beta` is sparse: its nonzero
//! entries sit at positions `tau_k + 1` and hold the jumps `mu_{k+1} - mu_k`
//! (with `mu_0 = 0`). Positions are 1-based throughout this module.
//!
//! `X` is never materialized. Column `p` of `X` is the indicator of `t >= p`,
//! so `X_g beta_g` is a cumulative sum, `X_g' v` a suffix sum, and the Gram
//! matrix has the closed form `(X_g' X_g)_{ab} = n + 1 - max(p_a, p_b)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Observed series with its covariate grid and optional calendar labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T> {
    values: Vec<T>,
    covariate: Vec<T>,
    labels: Option<Vec<String>>,
}

impl<T: Scalar> TimeSeries<T> {
    /// Series on the default grid `x_t = t`, `t = 1..n`.
    pub fn new(values: Vec<T>) -> Result<Self> {
        let covariate = (1..=values.len()).map(T::of_usize).collect();
        Self::with_covariate(values, covariate)
    }

    pub fn with_covariate(values: Vec<T>, covariate: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "a series needs at least 2 observations, got {}",
                values.len()
            )));
        }
        if covariate.len() != values.len() {
            return Err(Error::dims(format!(
                "covariate length {} differs from series length {}",
                covariate.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "value at t={} is not finite",
                i + 1
            )));
        }
        if covariate.iter().any(|x| !x.is_finite()) || covariate.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "covariate must be finite and strictly increasing",
            ));
        }
        Ok(Self {
            values,
            covariate,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.values.len() {
            return Err(Error::dims(format!(
                "{} labels for {} observations",
                labels.len(),
                self.values.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn covariate(&self) -> &[T] {
        &self.covariate
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Returns a copy with every value multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * c).collect(),
            covariate: self.covariate.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Change-points `tau_1 < ... < tau_{K-1}` in `(0, n)` and segment means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segmentation<T> {
    pub change_points: Vec<usize>,
    pub means: Vec<T>,
}

impl<T: Scalar> Segmentation<T> {
    pub fn new(change_points: Vec<usize>, means: Vec<T>, n: usize) -> Result<Self> {
        let seg = Self {
            change_points,
            means,
        };
        seg.validate(n)?;
        Ok(seg)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.means.len() != self.change_points.len() + 1 {
            return Err(Error::invalid(format!(
                "{} means for {} change-points",
                self.means.len(),
                self.change_points.len()
            )));
        }
        if self.change_points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("change-points must be strictly increasing"));
        }
        if let Some(&tau) = self.change_points.iter().find(|&&tau| tau == 0 || tau >= n) {
            return Err(Error::invalid(format!(
                "change-point {tau} outside (0, {n})"
            )));
        }
        Ok(())
    }

    /// Number of segments `K`.
    pub fn num_segments(&self) -> usize {
        self.means.len()
    }

    /// `mu(t)` for `t = 1..n`.
    pub fn mean_profile(&self, n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        for t in 1..=n {
            while seg < self.change_points.len() && t > self.change_points[seg] {
                seg += 1;
            }
            out.push(self.means[seg]);
        }
        out
    }
}

/// Sparse `beta`: 1-based position to nonzero jump.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseStepVector<T> {
    entries: BTreeMap<usize, T>,
}

impl<T: Scalar> SparseStepVector<T> {
    pub fn new(entries: impl IntoIterator<Item = (usize, T)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (p, v) in entries {
            if p == 0 {
                return Err(Error::invalid("step positions are 1-based"));
            }
            if v == T::zero() || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "entry at position {p} must be finite and nonzero"
                )));
            }
            if map.insert(p, v).is_some() {
                return Err(Error::invalid(format!("duplicate position {p}")));
            }
        }
        if !map.is_empty() && !map.contains_key(&1) {
            return Err(Error::invalid(
                "position 1 must be present in a nonempty step vector",
            ));
        }
        Ok(Self { entries: map })
    }

    pub fn entries(&self) -> &BTreeMap<usize, T> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn values(&self) -> Vec<T> {
        self.entries.values().copied().collect()
    }

    /// Dense `X beta` of length `n`.
    pub fn apply(&self, n: usize) -> Result<Vec<T>> {
        apply_steps(&self.positions(), &self.values(), n)
    }
}

/// Recovers change-points and means from a step vector.
pub fn beta_to_segmentation<T: Scalar>(
    beta: &SparseStepVector<T>,
    n: usize,
) -> Result<Segmentation<T>> {
    if beta.is_empty() {
        return Ok(Segmentation {
            change_points: Vec::new(),
            means: vec![T::zero()],
        });
    }
    if let Some(&p) = beta.entries.keys().next_back().filter(|&&p| p > n) {
        return Err(Error::PositionOutOfRange { position: p, n });
    }
    let mut change_points = Vec::with_capacity(beta.len() - 1);
    let mut means = Vec::with_capacity(beta.len());
    let mut level = T::zero();
    for (&p, &jump) in &beta.entries {
        if p > 1 {
            change_points.push(p - 1);
        }
        level += jump;
        means.push(level);
    }
    Ok(Segmentation {
        change_points,
        means,
    })
}

/// Inverse of [`beta_to_segmentation`].
pub fn segmentation_to_beta<T: Scalar>(
    seg: &Segmentation<T>,
    n: usize,
) -> Result<SparseStepVector<T>> {
    seg.validate(n)?;
    if seg.change_points.is_empty() && seg.means[0] == T::zero() {
        return Ok(SparseStepVector::default());
    }
    let mut entries = Vec::with_capacity(seg.means.len());
    let mut previous = T::zero();
    for (k, &mu) in seg.means.iter().enumerate() {
        let jump = mu - previous;
        if jump == T::zero() {
            return Err(Error::invalid(format!(
                "segment {} repeats the preceding mean {mu}",
                k + 1
            )));
        }
        let position = if k == 0 {
            1
        } else {
            seg.change_points[k - 1] + 1
        };
        entries.push((position, jump));
        previous = mu;
    }
    SparseStepVector::new(entries)
}

fn check_positions(positions: &[usize], n: usize) -> Result<()> {
    for w in positions.windows(2) {
        if w[1] == w[0] {
            return Err(Error::invalid(format!("duplicate position {}", w[0])));
        }
        if w[1] < w[0] {
            return Err(Error::invalid("positions must be strictly increasing"));
        }
    }
    match (positions.first(), positions.last()) {
        (Some(&0), _) => Err(Error::PositionOutOfRange { position: 0, n }),
        (_, Some(&p)) if p > n => Err(Error::PositionOutOfRange { position: p, n }),
        _ => Ok(()),
    }
}

/// Gram matrix `X_g' X_g` for the step columns at `positions`.
pub fn step_gram<T: Scalar>(positions: &[usize], n: usize) -> Result<Matrix<T>> {
    check_positions(positions, n)?;
    Ok(step_gram_unchecked(positions, n))
}

pub(crate) fn step_gram_unchecked<T: Scalar>(positions: &[usize], n: usize) -> Matrix<T> {
    let d = positions.len();
    Matrix::from_fn(d, d, |a, b| {
        T::of_usize(n + 1 - positions[a].max(positions[b]))
    })
}

/// `X_g c` as a dense vector of length `n`.
pub fn apply_steps<T: Scalar>(positions: &[usize], coefs: &[T], n: usize) -> Result<Vec<T>> {
    check_positions(positions, n)?;
    if positions.len() != coefs.len() {
        return Err(Error::dims("one coefficient per position"));
    }
    let mut out = vec![T::zero(); n];
    for (&p, &c) in positions.iter().zip(coefs) {
        out[p - 1] += c;
    }
    let mut acc = T::zero();
    for v in out.iter_mut() {
        acc += *v;
        *v = acc;
    }
    Ok(out)
}

/// Suffix sums `s[p-1] = sum_{t >= p} v_t`, so `(X' v)_p = s[p-1]`.
pub fn suffix_sums<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    let mut acc = T::zero();
    for (o, &x) in out.iter_mut().zip(v).rev() {
        acc += x;
        *o = acc;
    }
    out
}

/// `X_g' v` for the step columns at `positions`.
pub fn step_transpose<T: Scalar>(positions: &[usize], v: &[T]) -> Result<Vec<T>> {
    check_positions(positions, v.len())?;
    let s = suffix_sums(v);
    Ok(positions.iter().map(|&p| s[p - 1]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_x(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, n, |i, j| if i >= j { 1.0 } else { 0.0 })
    }

    #[test]
    fn beta_to_segmentation_small() {
        let beta = SparseStepVector::new([(1, 2.0), (3, -2.0), (6, 3.0)]).unwrap();
        let seg = beta_to_segmentation(&beta, 6).unwrap();
        assert_eq!(seg.change_points, vec![2, 5]);
        assert_eq!(seg.means, vec![2.0, 0.0, 3.0]);
        assert_eq!(seg.num_segments(), 3);
        // X beta matches mu(t) on each interval
        assert_eq!(beta.apply(6).unwrap(), seg.mean_profile(6));
    }

    #[test]
    fn single_segment() {
        let beta = SparseStepVector::new([(1, 5.0)]).unwrap();
        let seg = beta_to_segmentation(&beta, 10).unwrap();
        assert!(seg.change_points.is_empty());
        assert_eq!(seg.means, vec![5.0]);
    }

    #[test]
    fn particular_series_layout() {
        let beta = SparseStepVector::new([(1, 2.0), (8, -2.0), (19, 2.0), (37, 1.0)]).unwrap();
        let seg = beta_to_segmentation(&beta, 100).unwrap();
        assert_eq!(seg.change_points, vec![7, 18, 36]);
        assert_eq!(seg.means, vec![2.0, 0.0, 2.0, 3.0]);
        let back = segmentation_to_beta(&seg, 100).unwrap();
        assert_eq!(back, beta);
    }

    #[test]
    fn segmentation_to_beta_examples() {
        let seg = Segmentation::new(vec![2, 5], vec![2.0, 0.0, 3.0], 6).unwrap();
        let beta = segmentation_to_beta(&seg, 6).unwrap();
        assert_eq!(
            beta,
            SparseStepVector::new([(1, 2.0), (3, -2.0), (6, 3.0)]).unwrap()
        );
        let zero = Segmentation::new(vec![], vec![0.0], 4).unwrap();
        assert!(segmentation_to_beta(&zero, 4).unwrap().is_empty());
    }

    #[test]
    fn equal_neighbours_rejected() {
        let seg = Segmentation::new(vec![2], vec![1.0, 1.0], 6).unwrap();
        assert!(segmentation_to_beta(&seg, 6).is_err());
    }

    #[test]
    fn bad_step_vectors() {
        assert!(SparseStepVector::new([(2, 1.0)]).is_err());
        assert!(SparseStepVector::new([(1, 0.0)]).is_err());
        let beta = SparseStepVector::new([(1, 1.0), (9, 1.0)]).unwrap();
        assert!(matches!(
            beta_to_segmentation(&beta, 8),
            Err(Error::PositionOutOfRange { position: 9, n: 8 })
        ));
    }

    #[test]
    fn step_gram_examples() {
        let g: Matrix<f64> = step_gram(&[1], 5).unwrap();
        assert_eq!(g.as_slice(), &[5.0]);
        let g: Matrix<f64> = step_gram(&[1, 3], 4).unwrap();
        assert_eq!(g.as_slice(), &[4.0, 2.0, 2.0, 2.0]);
        assert!(step_gram::<f64>(&[2, 2], 4).is_err());
    }

    #[test]
    fn step_gram_particular_positions_match_dense() {
        let pos = [1, 8, 19, 37];
        let g: Matrix<f64> = step_gram(&pos, 100).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| g[(i, i)]).collect();
        assert_eq!(diag, vec![100.0, 93.0, 82.0, 64.0]);
        let xg = dense_x(100).select_columns(&[0, 7, 18, 36]);
        let dense = xg.transpose().matmul(&xg).unwrap();
        assert_eq!(g, dense);
    }

    #[test]
    fn f32_gram() {
        let g: Matrix<f32> = step_gram(&[1, 3], 4).unwrap();
        assert_eq!(g.as_slice(), &[4.0f32, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn transpose_is_suffix_sum() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(step_transpose(&[1, 3], &v).unwrap(), vec![10.0, 7.0]);
    }

    fn positions_strategy() -> impl Strategy<Value = (Vec<usize>, usize)> {
        (2usize..=50).prop_flat_map(|n| {
            (
                proptest::sample::subsequence((2..=n).collect::<Vec<_>>(), 0..n.min(8)),
                Just(n),
            )
                .prop_map(|(mut rest, n)| {
                    rest.insert(0, 1);
                    (rest, n)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn step_gram_matches_dense((pos, n) in positions_strategy()) {
            let g: Matrix<f64> = step_gram(&pos, n).unwrap();
            let cols: Vec<usize> = pos.iter().map(|p| p - 1).collect();
            let xg = dense_x(n).select_columns(&cols);
            prop_assert_eq!(g, xg.transpose().matmul(&xg).unwrap());
        }

        #[test]
        fn round_trip_and_jumps(
            (pos, n) in positions_strategy(),
            raw in proptest::collection::vec(1i32..6, 8),
            signs in proptest::collection::vec(any::<bool>(), 8),
        ) {
            let entries: Vec<(usize, f64)> = pos.iter().enumerate().map(|(i, &p)| {
                let v = raw[i] as f64;
                (p, if signs[i] { v } else { -v })
            }).collect();
            let beta = SparseStepVector::new(entries).unwrap();
            let seg = beta_to_segmentation(&beta, n).unwrap();
            prop_assert_eq!(&segmentation_to_beta(&seg, n).unwrap(), &beta);
            let profile = beta.apply(n).unwrap();
            prop_assert_eq!(&profile, &seg.mean_profile(n));
            let jumps: Vec<usize> = (1..n)
                .filter(|&i| profile[i] != profile[i - 1])
                .map(|i| i + 1)
                .collect();
            prop_assert_eq!(jumps, pos[1..].to_vec());
        }
    }
}
