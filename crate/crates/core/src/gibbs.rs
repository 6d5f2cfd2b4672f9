// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gibbs sampler for `(beta, lambda, sigma^2)` given a selected model.
//!
//! Full conditionals, with `s1 = c1/(1+c1)` and `s2 = c2/(1+c2)`:
//!
//! ```text
//! beta   | . ~ N(s1 G^{-1} X_g'(Y - F_r lambda), sigma^2 s1 G^{-1}),   G = X_g'X_g
//! lambda | . ~ N(s2 H^{-1} F_r'(Y - X_g beta),   sigma^2 s2 H^{-1}),   H = F_r'F_r
//! sigma^2| . ~ IG(a, b/2),  density ~ x^{-a-1} exp(-(b/2)/x)
//! a = (n + d_g + d_r)/2
//! b = |Y - X_g beta - F_r lambda|^2 + beta'G beta/c1 + lambda'H lambda/c2
//! ```
//!
//! In segmentation-only mode the lambda step is skipped and its terms drop
//! out of `a` and `b`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::mh::InclusionProbabilities;
use crate::model::{
    apply_steps, beta_to_segmentation, step_gram_unchecked, step_transpose, Segmentation,
    SparseStepVector,
};
use crate::posterior::{LatentState, Mode, PosteriorContext};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Starting variance; the sample variance of `Y` when absent.
    pub initial_sigma2: Option<f64>,
    /// Keep every draw in the result.
    pub keep_draws: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            total_iterations: 20_000,
            burn_in: 5_000,
            seed: 0,
            initial_sigma2: None,
            keep_draws: false,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.total_iterations
            )));
        }
        if let Some(s) = self.initial_sigma2 {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config("initial sigma2 must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One draw of the continuous parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsState<T> {
    pub beta: Vec<T>,
    pub lambda: Vec<T>,
    pub sigma2: T,
}

/// Mean and covariance of a Gaussian full conditional.
#[derive(Clone, Debug)]
pub struct GaussianConditional<T> {
    pub mean: Vec<T>,
    /// `sigma^2 * shrink`; the covariance is `scale * gram^{-1}`.
    pub scale: T,
    gram: Cholesky<T>,
}

impl<T: Scalar> GaussianConditional<T> {
    pub fn covariance(&self) -> Matrix<T> {
        self.gram.inverse().scaled(self.scale)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let z: Vec<T> = (0..self.mean.len())
            .map(|_| T::sample_standard_normal(rng))
            .collect();
        // L^{-T} z has covariance gram^{-1}
        let e = self.gram.solve_upper(&z);
        let sd = self.scale.sqrt();
        self.mean.iter().zip(e).map(|(&m, v)| m + sd * v).collect()
    }
}

fn selected<T: Scalar>(
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = ctx.n();
    if selection.gamma.len() != n || selection.gamma.first() != Some(&true) {
        return Err(Error::invalid(
            "selection gamma must have length n with the first bit set",
        ));
    }
    let atoms = if ctx.mode().has_functional() {
        if selection.r.len() != ctx.num_atoms() || selection.r.first() != Some(&true) {
            return Err(Error::invalid(
                "selection r must have length M with the first bit set",
            ));
        }
        selection.r_indices()
    } else {
        Vec::new()
    };
    Ok((selection.gamma_positions(), atoms))
}

fn f_times<T: Scalar>(ctx: &PosteriorContext<T>, atoms: &[usize], lambda: &[T]) -> Result<Vec<T>> {
    let n = ctx.n();
    if atoms.is_empty() {
        return Ok(vec![T::zero(); n]);
    }
    if lambda.len() != atoms.len() {
        return Err(Error::dims(format!(
            "{} lambda values for {} atoms",
            lambda.len(),
            atoms.len()
        )));
    }
    let f = ctx.design().expect("functional part present").matrix();
    Ok((0..n)
        .map(|i| {
            atoms
                .iter()
                .zip(lambda)
                .fold(T::zero(), |acc, (&j, &l)| acc + f[(i, j - 1)] * l)
        })
        .collect())
}

fn check_sigma2<T: Scalar>(sigma2: T) -> Result<()> {
    if sigma2 > T::zero() && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("sigma2 must be positive and finite"))
    }
}

/// Full conditional of `beta_g`.
pub fn beta_conditional<T: Scalar>(
    lambda: &[T],
    sigma2: T,
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
) -> Result<GaussianConditional<T>> {
    check_sigma2(sigma2)?;
    let (positions, atoms) = selected(ctx, selection)?;
    let y = ctx.values();
    let fl = f_times(ctx, &atoms, lambda)?;
    let z: Vec<T> = y.iter().zip(&fl).map(|(&a, &b)| a - b).collect();
    let xtz = step_transpose(&positions, &z)?;
    let gram = Cholesky::new(&step_gram_unchecked::<T>(&positions, ctx.n()))?;
    let c1 = ctx.hyper().c1;
    let shrink = c1 / (T::one() + c1);
    let mean = gram.solve(&xtz).into_iter().map(|v| v * shrink).collect();
    Ok(GaussianConditional {
        mean,
        scale: sigma2 * shrink,
        gram,
    })
}

/// Full conditional of `lambda_r`.
pub fn lambda_conditional<T: Scalar>(
    beta: &[T],
    sigma2: T,
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
) -> Result<GaussianConditional<T>> {
    check_sigma2(sigma2)?;
    if !ctx.mode().has_functional() {
        return Err(Error::invalid(
            "no functional part in segmentation-only mode",
        ));
    }
    let (positions, atoms) = selected(ctx, selection)?;
    let y = ctx.values();
    let xb = apply_steps(&positions, beta, ctx.n())?;
    let z: Vec<T> = y.iter().zip(&xb).map(|(&a, &b)| a - b).collect();
    let f_r = ctx
        .design()
        .expect("functional part present")
        .select_atoms(&atoms)?;
    let ftz = f_r.tr_mat_vec(&z)?;
    let gram = Cholesky::new(&ctx.ftf(&atoms))?;
    let c2 = ctx.hyper().c2;
    let shrink = c2 / (T::one() + c2);
    let mean = gram.solve(&ftz).into_iter().map(|v| v * shrink).collect();
    Ok(GaussianConditional {
        mean,
        scale: sigma2 * shrink,
        gram,
    })
}

/// Draws `beta_g` from its full conditional.
pub fn draw_beta<T: Scalar, R: Rng + ?Sized>(
    lambda: &[T],
    sigma2: T,
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
    rng: &mut R,
) -> Result<Vec<T>> {
    Ok(beta_conditional(lambda, sigma2, ctx, selection)?.sample(rng))
}

/// Draws `lambda_r` from its full conditional.
pub fn draw_lambda<T: Scalar, R: Rng + ?Sized>(
    beta: &[T],
    sigma2: T,
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
    rng: &mut R,
) -> Result<Vec<T>> {
    Ok(lambda_conditional(beta, sigma2, ctx, selection)?.sample(rng))
}

/// Shape `a` and `b` of the `IG(a, b/2)` conditional of `sigma^2`.
pub fn sigma2_conditional<T: Scalar>(
    beta: &[T],
    lambda: &[T],
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
) -> Result<(T, T)> {
    let (positions, atoms) = selected(ctx, selection)?;
    let n = ctx.n();
    if beta.len() != positions.len() {
        return Err(Error::dims("one beta value per selected position"));
    }
    let xb = apply_steps(&positions, beta, n)?;
    let fl = f_times(ctx, &atoms, lambda)?;
    let rss = ctx
        .values()
        .iter()
        .zip(xb.iter().zip(&fl))
        .map(|(&y, (&a, &b))| {
            let e = y - a - b;
            e * e
        })
        .sum::<T>();
    let gram = step_gram_unchecked::<T>(&positions, n);
    let mut b = rss + dot(beta, &gram.mat_vec(beta)?) / ctx.hyper().c1;
    let mut dims = n + positions.len();
    if ctx.mode().has_functional() {
        let h = ctx.ftf(&atoms);
        b += dot(lambda, &h.mat_vec(lambda)?) / ctx.hyper().c2;
        dims += atoms.len();
    }
    Ok((T::of_usize(dims) * T::of(0.5), b))
}

/// Draws `sigma^2 ~ IG(a, b/2)`.
pub fn draw_sigma2<T: Scalar, R: Rng + ?Sized>(
    beta: &[T],
    lambda: &[T],
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
    rng: &mut R,
) -> Result<T> {
    let (a, b) = sigma2_conditional(beta, lambda, ctx, selection)?;
    if !(b > T::zero()) || !b.is_finite() {
        return Err(Error::Sampler(format!(
            "inverse-gamma rate b = {b} is not positive"
        )));
    }
    Ok(b * T::of(0.5) / T::sample_unit_gamma(a, rng))
}

/// Every draw of a Gibbs run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsDraws<T> {
    pub positions: Vec<usize>,
    pub atoms: Vec<usize>,
    pub states: Vec<GibbsState<T>>,
}

impl<T: Scalar> GibbsDraws<T> {
    /// Delimited export: iteration, beta entries, lambda entries, sigma2.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["iteration".to_string()];
        header.extend(self.positions.iter().map(|p| format!("beta_{p}")));
        header.extend(self.atoms.iter().map(|j| format!("lambda_{j}")));
        header.push("sigma2".into());
        let mut out = header.join(",");
        out.push('\n');
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(s.beta.iter().map(|v| v.to_string()));
            row.extend(s.lambda.iter().map(|v| v.to_string()));
            row.push(s.sigma2.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Posterior-mean estimates and reconstructions for one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub mode: Mode,
    pub selection: LatentState,
    /// Posterior mean of `beta` on the selected positions.
    pub beta_hat: SparseStepVector<T>,
    /// Selected atoms (1-based) and their posterior-mean coefficients.
    pub atoms: Vec<usize>,
    pub lambda_hat: Vec<T>,
    pub sigma2_hat: T,
    /// Posterior mean of `sigma`.
    pub sigma_hat: T,
    /// `F_r lambda_hat` on the grid.
    pub f_hat: Vec<T>,
    /// `X beta_hat` on the grid.
    pub mu_hat: Vec<T>,
    pub segmentation_hat: Segmentation<T>,
    /// Number of nonzero entries of `beta_hat` (segments).
    pub k_hat: usize,
    pub inclusion: Option<InclusionProbabilities>,
    pub draws: Option<GibbsDraws<T>>,
}

fn sample_variance<T: Scalar>(y: &[T]) -> T {
    let n = T::of_usize(y.len());
    let mean = y.iter().copied().sum::<T>() / n;
    y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one())
}

/// Runs the systematic-scan sampler with an RNG seeded from `config.seed`.
pub fn run_gibbs<T: Scalar>(
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
    config: &GibbsConfig,
) -> Result<FitResult<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_gibbs_with_rng(ctx, selection, config, &mut rng)
}

/// Systematic scan `beta -> lambda -> sigma^2`, averaging post-burn-in draws.
pub fn run_gibbs_with_rng<T: Scalar, R: Rng + ?Sized>(
    ctx: &PosteriorContext<T>,
    selection: &LatentState,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<FitResult<T>> {
    config.validate()?;
    let (positions, atoms) = selected(ctx, selection)?;
    let functional = ctx.mode().has_functional();
    let n = ctx.n();

    let mut sigma2 = match config.initial_sigma2 {
        Some(s) => T::of(s),
        None => sample_variance(ctx.values()),
    };
    if !(sigma2 > T::zero()) {
        // constant series; any positive start works
        sigma2 = T::one();
    }
    // start lambda at its conditional mean given beta's conditional mean at lambda = 0
    let mut lambda = vec![T::zero(); atoms.len()];
    if functional {
        let beta0 = beta_conditional(&lambda, sigma2, ctx, selection)?.mean;
        lambda = lambda_conditional(&beta0, sigma2, ctx, selection)?.mean;
    }

    let mut beta_sum = vec![T::zero(); positions.len()];
    let mut lambda_sum = vec![T::zero(); atoms.len()];
    let mut sigma2_sum = T::zero();
    let mut sigma_sum = T::zero();
    let mut kept = Vec::new();
    for it in 1..=config.total_iterations {
        let beta = draw_beta(&lambda, sigma2, ctx, selection, rng)?;
        if functional {
            lambda = draw_lambda(&beta, sigma2, ctx, selection, rng)?;
        }
        sigma2 = draw_sigma2(&beta, &lambda, ctx, selection, rng)?;
        if it > config.burn_in {
            for (s, &v) in beta_sum.iter_mut().zip(&beta) {
                *s += v;
            }
            for (s, &v) in lambda_sum.iter_mut().zip(&lambda) {
                *s += v;
            }
            sigma2_sum += sigma2;
            sigma_sum += sigma2.sqrt();
        }
        if config.keep_draws {
            kept.push(GibbsState {
                beta: beta.clone(),
                lambda: lambda.clone(),
                sigma2,
            });
        }
    }
    let kept_n = T::of_usize(config.total_iterations - config.burn_in);
    let beta_hat_values: Vec<T> = beta_sum.into_iter().map(|s| s / kept_n).collect();
    let lambda_hat: Vec<T> = lambda_sum.into_iter().map(|s| s / kept_n).collect();

    let beta_hat = SparseStepVector::new(
        positions
            .iter()
            .copied()
            .zip(beta_hat_values.iter().copied()),
    )
    .map_err(|e| Error::Sampler(format!("posterior mean of beta: {e}")))?;
    let segmentation_hat = beta_to_segmentation(&beta_hat, n)?;
    let mu_hat = apply_steps(&positions, &beta_hat_values, n)?;
    let f_hat = f_times(ctx, &atoms, &lambda_hat)?;
    Ok(FitResult {
        mode: ctx.mode(),
        selection: selection.clone(),
        k_hat: beta_hat.len(),
        beta_hat,
        atoms: atoms.clone(),
        lambda_hat,
        sigma2_hat: sigma2_sum / kept_n,
        sigma_hat: sigma_sum / kept_n,
        f_hat,
        mu_hat,
        segmentation_hat,
        inclusion: None,
        draws: config.keep_draws.then_some(GibbsDraws {
            positions,
            atoms,
            states: kept,
        }),
    })
}
