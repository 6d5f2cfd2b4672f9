// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic series with a known segmentation and bias function, and the
//! quality criteria used to score fits against them.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::LocalFamily;
use crate::error::{Error, Result};
use crate::model::{Segmentation, TimeSeries};
use crate::scalar::Scalar;

const SEGMENTS: usize = 4;
const MIN_SEGMENT_LEN: usize = 5;
const MIN_PEAK_DISTANCE: f64 = 3.0;
const MAX_REJECTIONS: usize = 100_000;

/// Ground truth behind a simulated series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTruth<T> {
    pub segmentation: Segmentation<T>,
    pub f_true: Vec<T>,
    pub sigma: T,
    /// 1-based atoms of the simulation dictionary that make up `f_true`.
    pub true_atom_indices: BTreeSet<usize>,
    pub noise: Vec<T>,
}

impl<T: Scalar> SeriesTruth<T> {
    /// `mu(t) + f(t) + noise(t)`.
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.f_true.len();
        self.segmentation
            .mean_profile(n)
            .into_iter()
            .zip(&self.f_true)
            .zip(&self.noise)
            .map(|((m, &f), &e)| m + f + e)
            .collect()
    }
}

/// Peak times `0.1 n`, `0.5 n`, `0.6 n` with their heights.
fn peaks(n: usize) -> [(usize, usize, f64); 3] {
    // (numerator, denominator) of the fraction of n, height
    [(1, 10, 1.5), (1, 2, -2.0), (3, 5, 3.0)].map(|(a, b, h)| (a * n, b, h))
}

/// Bias function `0.3 sin(2 pi t/20) + 1.5 1{t=0.1n} - 2 1{t=0.5n} + 3 1{t=0.6n}`.
pub fn bias_function(t: usize, n: usize) -> f64 {
    let mut v = 0.3 * (2.0 * std::f64::consts::PI * t as f64 / 20.0).sin();
    for (num, den, h) in peaks(n) {
        if t * den == num {
            v += h;
        }
    }
    v
}

/// Atoms of the simulation dictionary (for `family`) that represent the bias function.
pub fn bias_atom_indices(n: usize, family: LocalFamily) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let local = match family {
        LocalFamily::Point100 => n,
        LocalFamily::Haar128 => 128,
    };
    for (num, den, _) in peaks(n) {
        if num % den != 0 {
            continue;
        }
        let t0 = num / den;
        match family {
            LocalFamily::Point100 => {
                out.insert(1 + t0);
            }
            LocalFamily::Haar128 => {
                let k = ((128 * t0) / n).min(127);
                out.insert(2 + k);
            }
        }
    }
    // sin(2 pi t / 20) = sin(2 pi j t / n) with j = n / 20
    if n.is_multiple_of(20) && (1..=10).contains(&(n / 20)) {
        let j = n / 20;
        out.insert(1 + local + 2 * (j - 1) + 1);
    }
    out
}

fn draw_means<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut means: Vec<f64> = Vec::with_capacity(k);
    while means.len() < k {
        let m = f64::from(rng.random_range(0u8..=5));
        if means.last() != Some(&m) {
            means.push(m);
        }
    }
    means
}

fn admissible(cps: &[usize], n: usize) -> bool {
    let mut bounds = vec![0];
    bounds.extend_from_slice(cps);
    bounds.push(n);
    if bounds.windows(2).any(|w| w[1] < w[0] + MIN_SEGMENT_LEN) {
        return false;
    }
    let peak_times = [0.1 * n as f64, 0.5 * n as f64, 0.6 * n as f64];
    cps.iter().all(|&tau| {
        peak_times
            .iter()
            .all(|&p| (tau as f64 - p).abs() >= MIN_PEAK_DISTANCE)
    })
}

fn draw_change_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    for _ in 0..MAX_REJECTIONS {
        let mut cps: Vec<usize> = rand::seq::index::sample(rng, n - 1, SEGMENTS - 1)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        cps.sort_unstable();
        if admissible(&cps, n) {
            return Ok(cps);
        }
    }
    Err(Error::Sampler(format!(
        "no admissible segmentation found in {MAX_REJECTIONS} attempts"
    )))
}

/// Series with the given segmentation, the bias function and Gaussian noise.
pub fn series_from_truth<T: Scalar, R: Rng + ?Sized>(
    segmentation: Segmentation<T>,
    n: usize,
    sigma: T,
    rng: &mut R,
) -> Result<(TimeSeries<T>, SeriesTruth<T>)> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    segmentation.validate(n)?;
    let f_true: Vec<T> = (1..=n).map(|t| T::of(bias_function(t, n))).collect();
    let noise: Vec<T> = (0..n)
        .map(|_| sigma * T::sample_standard_normal(rng))
        .collect();
    let truth = SeriesTruth {
        segmentation,
        f_true,
        sigma,
        true_atom_indices: bias_atom_indices(n, LocalFamily::Point100),
        noise,
    };
    let series = TimeSeries::new(truth.reconstruct())?;
    Ok((series, truth))
}

/// Random four-segment series: means in `{0,..,5}` with distinct neighbours,
/// change-points at least 3 away from the peaks, segments at least 5 long.
pub fn simulate_series<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    sigma: T,
    rng: &mut R,
) -> Result<(TimeSeries<T>, SeriesTruth<T>)> {
    if n < 25 {
        return Err(Error::invalid(format!("simulation needs n >= 25, got {n}")));
    }
    let means = draw_means(SEGMENTS, rng).into_iter().map(T::of).collect();
    let cps = draw_change_points(n, rng)?;
    series_from_truth(Segmentation::new(cps, means, n)?, n, sigma, rng)
}

/// The fixed series with change-points 7, 18, 36 and means 2, 0, 2, 3 (n = 100).
pub fn particular_series<T: Scalar, R: Rng + ?Sized>(
    sigma: T,
    rng: &mut R,
) -> Result<(TimeSeries<T>, SeriesTruth<T>)> {
    let seg = Segmentation::new(
        vec![7, 18, 36],
        [2.0, 0.0, 2.0, 3.0].map(T::of).to_vec(),
        100,
    )?;
    series_from_truth(seg, 100, sigma, rng)
}

/// RMSE of the mean profile and change-point detection rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub rmse_mu: f64,
    pub fdr_bp: f64,
    pub fnr_bp: f64,
}

/// RMSE of the functional part and atom selection rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalScores {
    pub rmse_f: f64,
    pub fdr_f: f64,
    pub fnr_f: f64,
}

fn rmse<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).as_f64().powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Number of detected change-points matched to a true one within `tolerance`.
///
/// Pairs are matched greedily by increasing distance, each used at most once.
fn matched(detected: &[usize], truth: &[usize], tolerance: usize) -> usize {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        for (j, &t) in truth.iter().enumerate() {
            let dist = d.abs_diff(t);
            if dist <= tolerance {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut hits = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            hits += 1;
        }
    }
    hits
}

fn rates(detected: usize, truth: usize, tp: usize) -> (f64, f64) {
    let fdr = (detected - tp) as f64 / detected.max(1) as f64;
    let fnr = (truth - tp) as f64 / truth.max(1) as f64;
    (fdr, fnr)
}

pub fn segmentation_metrics<T: Scalar>(
    estimate: &Segmentation<T>,
    truth: &Segmentation<T>,
    n: usize,
    tolerance: usize,
) -> SegmentationScores {
    let rmse_mu = rmse(&estimate.mean_profile(n), &truth.mean_profile(n));
    let tp = matched(&estimate.change_points, &truth.change_points, tolerance);
    let (fdr_bp, fnr_bp) = rates(estimate.change_points.len(), truth.change_points.len(), tp);
    SegmentationScores {
        rmse_mu,
        fdr_bp,
        fnr_bp,
    }
}

pub fn functional_metrics<T: Scalar>(
    f_hat: &[T],
    selected_atoms: &BTreeSet<usize>,
    truth: &SeriesTruth<T>,
) -> Result<FunctionalScores> {
    if f_hat.len() != truth.f_true.len() {
        return Err(Error::dims(format!(
            "f_hat has {} values, truth has {}",
            f_hat.len(),
            truth.f_true.len()
        )));
    }
    let sel: BTreeSet<usize> = selected_atoms.iter().copied().filter(|&j| j != 1).collect();
    let tru: BTreeSet<usize> = truth
        .true_atom_indices
        .iter()
        .copied()
        .filter(|&j| j != 1)
        .collect();
    let tp = sel.intersection(&tru).count();
    let (fdr_f, fnr_f) = rates(sel.len(), tru.len(), tp);
    Ok(FunctionalScores {
        rmse_f: rmse(f_hat, &truth.f_true),
        fdr_f,
        fnr_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bias_values() {
        assert!((bias_function(10, 100) - 1.5).abs() < 1e-12);
        assert!((bias_function(50, 100) + 2.0).abs() < 1e-12);
        assert!((bias_function(25, 100) - 0.3).abs() < 1e-12);
        assert!((bias_function(60, 100) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bias_atoms_follow_table_indexing() {
        assert_eq!(
            bias_atom_indices(100, LocalFamily::Point100),
            BTreeSet::from([11, 51, 61, 110])
        );
        // Haar cells floor(1.28 t0): 12, 64, 76 -> indices 14, 66, 78; sine at 130 + 8
        assert_eq!(
            bias_atom_indices(100, LocalFamily::Haar128),
            BTreeSet::from([14, 66, 78, 138])
        );
    }

    #[test]
    fn simulated_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let means = draw_means(4, &mut rng);
            assert!(means.windows(2).all(|w| w[0] != w[1]));
            let cps = draw_change_points(100, &mut rng).unwrap();
            assert_eq!(cps.len(), 3);
            for &tau in &cps {
                let d = [10.0, 50.0, 60.0]
                    .iter()
                    .map(|p: &f64| (tau as f64 - p).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(d >= 3.0);
            }
            let mut b = vec![0];
            b.extend(&cps);
            b.push(100);
            assert!(b.windows(2).all(|w| w[1] - w[0] >= 5));
        }
    }

    #[test]
    fn noise_free_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (series, truth) = simulate_series(100, 0.0f64, &mut rng).unwrap();
        let mu = truth.segmentation.mean_profile(100);
        assert!(truth.noise.iter().all(|&e| e == 0.0));
        for t in 0..100 {
            assert_eq!(series.values()[t], mu[t] + truth.f_true[t]);
        }
        let (s, t) = particular_series(0.1f64, &mut rng).unwrap();
        assert_eq!(s.values(), t.reconstruct().as_slice());
        assert!(simulate_series(20, 1.0f64, &mut rng).is_err());
    }

    #[test]
    fn segmentation_metric_examples() {
        let truth = Segmentation::new(vec![7, 18, 36], vec![2.0, 0.0, 2.0, 3.0], 100).unwrap();
        let est = Segmentation::new(vec![7, 18, 35], vec![2.0, 0.0, 2.0, 3.0], 100).unwrap();
        let s = segmentation_metrics(&est, &truth, 100, 0);
        assert!((s.fdr_bp - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.fnr_bp - 1.0 / 3.0).abs() < 1e-15);
        let windowed = segmentation_metrics(&est, &truth, 100, 1);
        assert_eq!((windowed.fdr_bp, windowed.fnr_bp), (0.0, 0.0));
        let same = segmentation_metrics(&truth, &truth, 100, 0);
        assert_eq!((same.rmse_mu, same.fdr_bp, same.fnr_bp), (0.0, 0.0, 0.0));
        let zero = Segmentation::new(vec![], vec![0.0], 10).unwrap();
        let one = Segmentation::new(vec![], vec![1.0], 10).unwrap();
        let s = segmentation_metrics(&one, &zero, 10, 0);
        assert_eq!(s.rmse_mu, 1.0);
        assert_eq!(s.fdr_bp, 0.0);
    }

    #[test]
    fn functional_metric_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, truth) = particular_series(0.1f64, &mut rng).unwrap();
        let all = BTreeSet::from([1, 11, 51, 61, 110]);
        let s = functional_metrics(&truth.f_true, &all, &truth).unwrap();
        assert_eq!((s.rmse_f, s.fdr_f, s.fnr_f), (0.0, 0.0, 0.0));
        let s = functional_metrics(&truth.f_true, &BTreeSet::from([61]), &truth).unwrap();
        assert_eq!(s.fdr_f, 0.0);
        assert_eq!(s.fnr_f, 0.75);
        assert!(functional_metrics(&[0.0; 3], &all, &truth).is_err());
    }

    proptest::proptest! {
        #[test]
        fn metrics_are_bounded_and_rmse_symmetric(
            a in proptest::collection::btree_set(1usize..60, 0..6),
            b in proptest::collection::btree_set(1usize..60, 0..6),
            tol in 0usize..3,
        ) {
            let mk = |s: &BTreeSet<usize>| {
                let cps: Vec<usize> = s.iter().copied().collect();
                let means = (0..=cps.len()).map(|k| k as f64).collect();
                Segmentation::new(cps, means, 60).unwrap()
            };
            let (sa, sb) = (mk(&a), mk(&b));
            let ab = segmentation_metrics(&sa, &sb, 60, tol);
            let ba = segmentation_metrics(&sb, &sa, 60, tol);
            proptest::prop_assert_eq!(ab.rmse_mu, ba.rmse_mu);
            proptest::prop_assert_eq!(ab.fdr_bp, ba.fnr_bp);
            for v in [ab.fdr_bp, ab.fnr_bp] {
                proptest::prop_assert!((0.0..=1.0).contains(&v));
            }
            proptest::prop_assert!(ab.rmse_mu >= 0.0);
        }
    }
}
