// SPDX-License-Identifier: MIT OR Apache-2.0

//! Collapsed posterior over the inclusion vectors `(gamma, r)`.
//!
//! The step coefficients, the dictionary coefficients and the noise variance
//! are integrated out analytically (two g-priors and a Jeffreys prior on
//! `sigma^2`). What remains, up to one additive constant per context, is
//!
//! ```text
//! -(d_g/2) log(1+c1) + log p(gamma) + log p(r)
//!   + 1/2 logdet(F_r'F_r) - (d_r/2) log c2 - 1/2 logdet(A) - (n/2) log(q/2)
//! ```
//!
//! with `U^{-1} = I - s P_g`, `s = c1/(1+c1)`, `P_g` the projection onto the
//! selected step columns, `A = F_r'(U^{-1} + I/c2) F_r` and
//! `q = Y'U^{-1}Y - v'A^{-1}v`, `v = F_r'U^{-1}Y`.
//!
//! [`log_integrated_posterior`] expands every `U^{-1}` product through the
//! projection identity and the closed-form step Gram, so its cost does not
//! depend on forming any `n x n` matrix. [`log_integrated_posterior_dense`]
//! builds `U^{-1}` explicitly and is kept as a reference.

use serde::{Deserialize, Serialize};

use crate::dictionary::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::model::{apply_steps, step_gram_unchecked, suffix_sums, TimeSeries};
use crate::scalar::Scalar;

/// Largest series accepted by the dense reference evaluator.
pub const DENSE_MAX_N: usize = 512;

/// Relative floor below which the residual form `q` counts as zero.
const Q_RELATIVE_FLOOR: f64 = 1e-12;

/// Whether the functional part is part of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Mode {
    /// Segmentation plus dictionary-expanded functional part.
    #[default]
    #[serde(rename = "sp", alias = "SP")]
    SemiParametric,
    /// Segmentation only.
    #[serde(rename = "p", alias = "P")]
    Parametric,
}

impl Mode {
    pub fn has_functional(self) -> bool {
        matches!(self, Mode::SemiParametric)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::SemiParametric => "SP",
            Mode::Parametric => "P",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(Mode::SemiParametric),
            "p" => Ok(Mode::Parametric),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected sp or p)"
            ))),
        }
    }
}

/// g-prior scales and Bernoulli inclusion probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters<T> {
    pub c1: T,
    pub c2: T,
    /// Per-position change-point probabilities, `pi[0] = 1`.
    pub pi: Vec<T>,
    /// Per-atom inclusion probabilities, `eta[0] = 1`.
    pub eta: Vec<T>,
}

impl<T: Scalar> Hyperparameters<T> {
    /// Constant probabilities `pi` over `n` positions and `eta` over `m` atoms,
    /// with the first entry of each pinned to one.
    pub fn uniform(n: usize, m: usize, c1: T, c2: T, pi: T, eta: T) -> Self {
        let pinned = |len: usize, p: T| {
            let mut v = vec![p; len];
            if let Some(first) = v.first_mut() {
                *first = T::one();
            }
            v
        };
        Self {
            c1,
            c2,
            pi: pinned(n, pi),
            eta: pinned(m, eta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > T::zero()) || !(self.c2 > T::zero()) {
            return Err(Error::invalid("c1 and c2 must be positive"));
        }
        for (name, probs) in [("pi", &self.pi), ("eta", &self.eta)] {
            if probs.is_empty() {
                return Err(Error::invalid(format!("{name} is empty")));
            }
            if probs[0] != T::one() {
                return Err(Error::invalid(format!("{name}[1] must equal 1")));
            }
            if probs.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
                return Err(Error::invalid(format!("{name} entries must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Inclusion bits for change-point positions (`gamma`) and atoms (`r`).
///
/// Index 0 of each vector is the pinned first position / constant atom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentState {
    pub gamma: Vec<bool>,
    pub r: Vec<bool>,
}

impl LatentState {
    /// State with only the pinned bits set.
    pub fn minimal(n: usize, m: usize) -> Self {
        let mut gamma = vec![false; n];
        let mut r = vec![false; m];
        gamma[0] = true;
        r[0] = true;
        Self { gamma, r }
    }

    /// State from 1-based positions and atom indices (the pinned ones are added).
    pub fn from_indices(n: usize, m: usize, positions: &[usize], atoms: &[usize]) -> Result<Self> {
        let mut s = Self::minimal(n, m);
        for &p in positions {
            if p == 0 || p > n {
                return Err(Error::PositionOutOfRange { position: p, n });
            }
            s.gamma[p - 1] = true;
        }
        for &j in atoms {
            if j == 0 || j > m {
                return Err(Error::PositionOutOfRange { position: j, n: m });
            }
            s.r[j - 1] = true;
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.first() != Some(&true) || self.r.first() != Some(&true) {
            return Err(Error::invalid("gamma[1] and r[1] must be set"));
        }
        Ok(())
    }

    /// 1-based positions with `gamma = 1`.
    pub fn gamma_positions(&self) -> Vec<usize> {
        ones(&self.gamma)
    }

    /// 1-based atoms with `r = 1`.
    pub fn r_indices(&self) -> Vec<usize> {
        ones(&self.r)
    }

    pub fn d_gamma(&self) -> usize {
        self.gamma.iter().filter(|&&b| b).count()
    }

    pub fn d_r(&self) -> usize {
        self.r.iter().filter(|&&b| b).count()
    }

    /// Change-points `tau = position - 1` for every selected position beyond the first.
    pub fn change_points(&self) -> Vec<usize> {
        self.gamma_positions()
            .into_iter()
            .filter(|&p| p > 1)
            .map(|p| p - 1)
            .collect()
    }
}

fn ones(bits: &[bool]) -> Vec<usize> {
    bits.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i + 1))
        .collect()
}

/// Bernoulli log-prior of an inclusion vector; the pinned first term is 0.
pub fn log_prior_inclusion<T: Scalar>(bits: &[bool], probs: &[T]) -> Result<T> {
    if bits.len() != probs.len() {
        return Err(Error::dims(format!(
            "{} bits for {} probabilities",
            bits.len(),
            probs.len()
        )));
    }
    if bits.first() != Some(&true) || probs.first() != Some(&T::one()) {
        return Err(Error::invalid(
            "the first bit and probability are pinned to 1",
        ));
    }
    let mut total = T::zero();
    for (&b, &p) in bits.iter().zip(probs).skip(1) {
        let term = if b { p } else { T::one() - p };
        if term <= T::zero() {
            return Ok(T::neg_infinity());
        }
        total += term.ln();
    }
    Ok(total)
}

#[derive(Clone, Debug)]
struct FunctionalCache<T> {
    design: DesignMatrix<T>,
    /// `F'F`, `M x M`.
    ftf: Matrix<T>,
    /// `F'Y`.
    fty: Vec<T>,
    /// Row `p-1` holds `(X'F)_{p,.}`: column suffix sums of `F`.
    f_suffix: Matrix<T>,
}

/// Everything needed to evaluate the collapsed posterior for one series.
#[derive(Clone, Debug)]
pub struct PosteriorContext<T> {
    series: TimeSeries<T>,
    hyper: Hyperparameters<T>,
    mode: Mode,
    yty: T,
    y_suffix: Vec<T>,
    functional: Option<FunctionalCache<T>>,
}

impl<T: Scalar> PosteriorContext<T> {
    /// Context for the model with a functional part.
    pub fn semi_parametric(
        series: TimeSeries<T>,
        design: DesignMatrix<T>,
        hyper: Hyperparameters<T>,
    ) -> Result<Self> {
        let n = series.len();
        if design.rows() != n {
            return Err(Error::dims(format!(
                "design has {} rows for a series of length {n}",
                design.rows()
            )));
        }
        let m = design.num_atoms();
        Self::check_hyper(&hyper, n, Some(m))?;
        let f = design.matrix();
        let y = series.values();
        let ft = f.transpose();
        let ftf = ft.matmul(f)?;
        let fty = f.tr_mat_vec(y)?;
        let mut f_suffix = Matrix::zeros(n, m);
        for j in 0..m {
            for (i, v) in suffix_sums(&f.column(j)).into_iter().enumerate() {
                f_suffix[(i, j)] = v;
            }
        }
        let mut ctx = Self::base(series, hyper, Mode::SemiParametric);
        ctx.functional = Some(FunctionalCache {
            design,
            ftf,
            fty,
            f_suffix,
        });
        Ok(ctx)
    }

    /// Context for the segmentation-only model. `hyper.eta` and `hyper.c2` are ignored.
    pub fn parametric(series: TimeSeries<T>, hyper: Hyperparameters<T>) -> Result<Self> {
        Self::check_hyper(&hyper, series.len(), None)?;
        Ok(Self::base(series, hyper, Mode::Parametric))
    }

    fn base(series: TimeSeries<T>, hyper: Hyperparameters<T>, mode: Mode) -> Self {
        let y = series.values();
        let yty = dot(y, y);
        let y_suffix = suffix_sums(y);
        Self {
            series,
            hyper,
            mode,
            yty,
            y_suffix,
            functional: None,
        }
    }

    fn check_hyper(hyper: &Hyperparameters<T>, n: usize, m: Option<usize>) -> Result<()> {
        hyper.validate()?;
        if hyper.pi.len() != n {
            return Err(Error::dims(format!(
                "pi has {} entries for a series of length {n}",
                hyper.pi.len()
            )));
        }
        if let Some(m) = m {
            if hyper.eta.len() != m {
                return Err(Error::dims(format!(
                    "eta has {} entries for {m} atoms",
                    hyper.eta.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.series.len()
    }

    /// Number of atoms, or 1 in segmentation-only mode.
    pub fn num_atoms(&self) -> usize {
        self.functional.as_ref().map_or(1, |f| f.design.num_atoms())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn series(&self) -> &TimeSeries<T> {
        &self.series
    }

    pub fn values(&self) -> &[T] {
        self.series.values()
    }

    pub fn hyper(&self) -> &Hyperparameters<T> {
        &self.hyper
    }

    pub fn design(&self) -> Option<&DesignMatrix<T>> {
        self.functional.as_ref().map(|f| &f.design)
    }

    pub fn yty(&self) -> T {
        self.yty
    }

    /// Same context with `Y` multiplied by `c`.
    pub fn rescaled(&self, c: T) -> Result<Self> {
        let series = self.series.scaled(c);
        match &self.functional {
            Some(f) => Self::semi_parametric(series, f.design.clone(), self.hyper.clone()),
            None => Self::parametric(series, self.hyper.clone()),
        }
    }

    /// Same context with different hyperparameters.
    pub fn with_hyper(&self, hyper: Hyperparameters<T>) -> Result<Self> {
        Self::check_hyper(
            &hyper,
            self.n(),
            self.functional.as_ref().map(|f| f.design.num_atoms()),
        )?;
        let mut out = self.clone();
        out.hyper = hyper;
        Ok(out)
    }

    /// `X_g' Y` for 1-based positions.
    pub(crate) fn xty(&self, positions: &[usize]) -> Vec<T> {
        positions.iter().map(|&p| self.y_suffix[p - 1]).collect()
    }

    /// `X_g' F_r` (`d_g x d_r`).
    pub(crate) fn xtf(&self, positions: &[usize], atoms: &[usize]) -> Matrix<T> {
        let f = self.functional.as_ref().expect("functional part present");
        Matrix::from_fn(positions.len(), atoms.len(), |a, b| {
            f.f_suffix[(positions[a] - 1, atoms[b] - 1)]
        })
    }

    /// `F_r' F_r`.
    pub(crate) fn ftf(&self, atoms: &[usize]) -> Matrix<T> {
        let f = self.functional.as_ref().expect("functional part present");
        let idx: Vec<usize> = atoms.iter().map(|j| j - 1).collect();
        f.ftf.select(&idx, &idx)
    }

    /// `F_r' Y`.
    pub(crate) fn fty(&self, atoms: &[usize]) -> Vec<T> {
        let f = self.functional.as_ref().expect("functional part present");
        atoms.iter().map(|&j| f.fty[j - 1]).collect()
    }

    fn check_state(&self, state: &LatentState) -> Result<()> {
        if state.gamma.len() != self.n() {
            return Err(Error::dims(format!(
                "gamma has {} bits for a series of length {}",
                state.gamma.len(),
                self.n()
            )));
        }
        if self.mode.has_functional() && state.r.len() != self.num_atoms() {
            return Err(Error::dims(format!(
                "r has {} bits for {} atoms",
                state.r.len(),
                self.num_atoms()
            )));
        }
        if !state.gamma[0] {
            return Err(Error::invalid("gamma[1] must be set"));
        }
        if self.mode.has_functional() && !state.r[0] {
            return Err(Error::invalid("r[1] must be set"));
        }
        Ok(())
    }

    fn q_is_degenerate(&self, q: T) -> bool {
        !(q > T::of(Q_RELATIVE_FLOOR) * self.yty) || !q.is_finite()
    }

    fn log_priors(&self, state: &LatentState) -> Result<T> {
        let mut lp = log_prior_inclusion(&state.gamma, &self.hyper.pi)?;
        if self.mode.has_functional() {
            lp += log_prior_inclusion(&state.r, &self.hyper.eta)?;
        }
        Ok(lp)
    }
}

fn half<T: Scalar>() -> T {
    T::of(0.5)
}

/// `|Y - X b - F l|^2 + |X b|^2 / c1 + |F l|^2 / c2` at the penalized minimizer.
///
/// This equals `Y'UY`; evaluating it as a sum of squares avoids the
/// cancellation of `Y'Y` minus the explained part for near-saturated models.
fn penalized_residual<T: Scalar>(
    ctx: &PosteriorContext<T>,
    positions: &[usize],
    beta: &[T],
    fl: Option<&[T]>,
    c2: T,
) -> Result<T> {
    let mu = apply_steps(positions, beta, ctx.n())?;
    let mut resid = T::zero();
    let mut pen_f = T::zero();
    for (i, (&y, &m)) in ctx.values().iter().zip(&mu).enumerate() {
        let f = fl.map_or(T::zero(), |f| f[i]);
        resid += (y - m - f) * (y - m - f);
        pen_f += f * f;
    }
    Ok(resid + dot(&mu, &mu) / ctx.hyper.c1 + pen_f / c2)
}

/// Log collapsed posterior of `state`, computed without any `n x n` matrix.
///
/// Returns `-inf` when the state is unreachable: a selected atom set with a
/// singular Gram matrix, a zero prior, or a vanishing residual form.
pub fn log_integrated_posterior<T: Scalar>(
    state: &LatentState,
    ctx: &PosteriorContext<T>,
) -> Result<T> {
    ctx.check_state(state)?;
    let lp = ctx.log_priors(state)?;
    if lp == T::neg_infinity() {
        return Ok(lp);
    }
    let n = ctx.n();
    let c1 = ctx.hyper.c1;
    let shrink = c1 / (T::one() + c1);
    let positions = state.gamma_positions();
    let d_g = T::of_usize(positions.len());

    let gram = step_gram_unchecked::<T>(&positions, n);
    let gram_chol = match Cholesky::new(&gram) {
        Ok(c) => c,
        Err(_) => return Ok(T::neg_infinity()),
    };
    let xty = ctx.xty(&positions);
    // w = L_G^{-1} X_g'Y
    let w = gram_chol.solve_lower(&xty);

    let mut log_post = -half::<T>() * d_g * (T::one() + c1).ln() + lp;

    let q = if ctx.mode.has_functional() {
        let atoms = state.r_indices();
        let c2 = ctx.hyper.c2;
        let ftf = ctx.ftf(&atoms);
        let ftf_chol = match Cholesky::new(&ftf) {
            Ok(c) => c,
            Err(_) => return Ok(T::neg_infinity()),
        };
        let xtf = ctx.xtf(&positions, &atoms);
        // Wf = L_G^{-1} X_g'F_r, so F_r'P_gF_r = Wf'Wf and F_r'P_gY = Wf'w
        let d_r = atoms.len();
        let mut wf = Matrix::zeros(positions.len(), d_r);
        for b in 0..d_r {
            for (a, v) in gram_chol
                .solve_lower(&xtf.column(b))
                .into_iter()
                .enumerate()
            {
                wf[(a, b)] = v;
            }
        }
        let proj = wf.transpose().matmul(&wf)?;
        let a_mat = ftf
            .scaled(T::one() + T::one() / c2)
            .add_scaled(&proj, -shrink)?;
        let a_chol = match Cholesky::new(&a_mat) {
            Ok(c) => c,
            Err(_) => return Ok(T::neg_infinity()),
        };
        let fty = ctx.fty(&atoms);
        let wf_w = wf.tr_mat_vec(&w)?;
        let v: Vec<T> = fty
            .iter()
            .zip(&wf_w)
            .map(|(&a, &b)| a - shrink * b)
            .collect();
        log_post += half::<T>() * ftf_chol.log_det()
            - half::<T>() * T::of_usize(d_r) * c2.ln()
            - half::<T>() * a_chol.log_det();
        let lambda = a_chol.solve(&v);
        let xtf_l = xtf.mat_vec(&lambda)?;
        let rhs: Vec<T> = xty.iter().zip(&xtf_l).map(|(&a, &b)| a - b).collect();
        let beta: Vec<T> = gram_chol
            .solve(&rhs)
            .into_iter()
            .map(|b| shrink * b)
            .collect();
        let f = ctx.functional.as_ref().expect("functional part present");
        let fl = f.design.select_atoms(&atoms)?.mat_vec(&lambda)?;
        penalized_residual(ctx, &positions, &beta, Some(&fl), c2)?
    } else {
        let beta: Vec<T> = gram_chol
            .solve(&xty)
            .into_iter()
            .map(|b| shrink * b)
            .collect();
        penalized_residual(ctx, &positions, &beta, None, T::one())?
    };
    if ctx.q_is_degenerate(q) {
        return Ok(T::neg_infinity());
    }
    Ok(log_post - half::<T>() * T::of_usize(n) * (q * half::<T>()).ln())
}

/// Reference evaluation that forms `U^{-1}` as an explicit `n x n` matrix.
pub fn log_integrated_posterior_dense<T: Scalar>(
    state: &LatentState,
    ctx: &PosteriorContext<T>,
) -> Result<T> {
    let n = ctx.n();
    if n > DENSE_MAX_N {
        return Err(Error::invalid(format!(
            "dense evaluation is limited to n <= {DENSE_MAX_N}, got {n}"
        )));
    }
    ctx.check_state(state)?;
    let lp = ctx.log_priors(state)?;
    if lp == T::neg_infinity() {
        return Ok(lp);
    }
    let c1 = ctx.hyper.c1;
    let shrink = c1 / (T::one() + c1);
    let y = ctx.values();

    let cols: Vec<usize> = state.gamma_positions().iter().map(|p| p - 1).collect();
    let x_g = Matrix::from_fn(n, cols.len(), |i, j| {
        if i >= cols[j] {
            T::one()
        } else {
            T::zero()
        }
    });
    let gram = x_g.transpose().matmul(&x_g)?;
    let gram_chol = match Cholesky::new(&gram) {
        Ok(c) => c,
        Err(_) => return Ok(T::neg_infinity()),
    };
    let proj = x_g.matmul(&gram_chol.solve_matrix(&x_g.transpose()))?;
    let u_inv = Matrix::identity(n).add_scaled(&proj, -shrink)?;

    let mut log_post = -half::<T>() * T::of_usize(cols.len()) * (T::one() + c1).ln() + lp;

    let core = if ctx.mode.has_functional() {
        let c2 = ctx.hyper.c2;
        let f_r = ctx
            .design()
            .expect("functional part present")
            .select_atoms(&state.r_indices())?;
        let d_r = f_r.cols();
        let ftf = f_r.transpose().matmul(&f_r)?;
        let ftf_chol = match Cholesky::new(&ftf) {
            Ok(c) => c,
            Err(_) => return Ok(T::neg_infinity()),
        };
        let inner = u_inv.add_scaled(&Matrix::identity(n), T::one() / c2)?;
        let a_mat = f_r.transpose().matmul(&inner)?.matmul(&f_r)?;
        let a_chol = match Cholesky::new(&a_mat) {
            Ok(c) => c,
            Err(_) => return Ok(T::neg_infinity()),
        };
        // |A^{-1}| / |c2 (F'F)^{-1}|
        log_post +=
            half::<T>() * (-a_chol.log_det() - T::of_usize(d_r) * c2.ln() + ftf_chol.log_det());
        let u_f = u_inv.matmul(&f_r)?;
        let correction = u_f.matmul(&a_chol.solve_matrix(&u_f.transpose()))?;
        u_inv.add_scaled(&correction, -T::one())?
    } else {
        u_inv
    };
    let q = dot(y, &core.mat_vec(y)?);
    if ctx.q_is_degenerate(q) {
        return Ok(T::neg_infinity());
    }
    Ok(log_post - half::<T>() * T::of_usize(n) * (q * half::<T>()).ln())
}
