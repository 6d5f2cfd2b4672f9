// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference implementations and instance generators shared by the
//! integration tests. Nothing here reuses the library's linear algebra.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use dictseg::dictionary::{Atom, Dictionary};
use dictseg::model::TimeSeries;
use dictseg::posterior::{Hyperparameters, LatentState, Mode, PosteriorContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Dense {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a[0].len());
    let mut t = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            t[j][i] = a[i][j];
        }
    }
    t
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut m = zeros(r, c);
    for i in 0..r {
        for l in 0..k {
            let x = a[i][l];
            for j in 0..c {
                m[i][j] += x * b[l][j];
            }
        }
    }
    m
}

/// `(log|det a|, a^{-1} b)` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Dense, b: &Dense) -> (f64, Dense) {
    let n = a.len();
    let mut m = a.clone();
    let mut rhs = b.clone();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        let d = m[col][col];
        assert!(d != 0.0, "singular system");
        logdet += d.abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / d;
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                for c in 0..rhs[0].len() {
                    rhs[r][c] -= f * rhs[col][c];
                }
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..rhs[0].len() {
            let mut s = rhs[col][c];
            for k in col + 1..n {
                s -= m[col][k] * rhs[k][c];
            }
            rhs[col][c] = s / m[col][col];
        }
    }
    (logdet, rhs)
}

/// Columns of the step design for the 1-based `positions`.
pub fn step_columns(n: usize, positions: &[usize]) -> Dense {
    let mut x = zeros(n, positions.len());
    for (j, &p) in positions.iter().enumerate() {
        for row in x.iter_mut().skip(p - 1) {
            row[j] = 1.0;
        }
    }
    x
}

/// Hat matrix `A (A'A)^{-1} A'`.
pub fn projection(a: &Dense) -> Dense {
    let at = transpose(a);
    let (_, inv_at) = solve(&matmul(&at, a), &at);
    matmul(a, &inv_at)
}

fn log_prior(bits: &[bool], probs: &[f64]) -> f64 {
    bits.iter()
        .zip(probs)
        .skip(1)
        .map(|(&b, &p)| if b { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// Log of the joint posterior integrated over the coefficients and
/// `log sigma^2` by the trapezoid rule, up to a state-independent constant.
///
/// For fixed `sigma^2` the coefficients integrate to the marginal
/// `Y ~ N(0, sigma^2 (I + c1 P_X + c2 P_F))`; with the Jeffreys prior the
/// remaining integrand in `u = log sigma^2` is that density itself.
pub fn quadrature_log_posterior(
    y: &[f64],
    design: &Dense,
    hyper: &Hyperparameters<f64>,
    mode: Mode,
    state: &LatentState,
) -> f64 {
    let n = y.len();
    let x = step_columns(n, &state.gamma_positions());
    let mut cov = identity(n);
    let px = projection(&x);
    for i in 0..n {
        for j in 0..n {
            cov[i][j] += hyper.c1 * px[i][j];
        }
    }
    let mut lp = log_prior(&state.gamma, &hyper.pi);
    if mode == Mode::SemiParametric {
        let atoms = state.r_indices();
        let f: Dense = design
            .iter()
            .map(|row| atoms.iter().map(|&j| row[j - 1]).collect())
            .collect();
        let pf = projection(&f);
        for i in 0..n {
            for j in 0..n {
                cov[i][j] += hyper.c2 * pf[i][j];
            }
        }
        lp += log_prior(&state.r, &hyper.eta);
    }
    let ycol: Dense = y.iter().map(|&v| vec![v]).collect();
    let (logdet, sol) = solve(&cov, &ycol);
    let quad: f64 = y.iter().zip(&sol).map(|(a, b)| a * b[0]).sum();

    // log N(y; 0, s cov) = -n/2 log(2 pi s) - logdet/2 - quad/(2 s)
    let log_density =
        |u: f64| -0.5 * n as f64 * ((2.0 * PI).ln() + u) - 0.5 * logdet - 0.5 * quad * (-u).exp();
    // the integrand peaks at u* = log(quad / n); cover +-40 in u
    let center = (quad / n as f64).ln();
    let (steps, half_width) = (16_000, 40.0);
    let h = 2.0 * half_width / steps as f64;
    let values: Vec<f64> = (0..=steps)
        .map(|k| log_density(center - half_width + k as f64 * h))
        .collect();
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            w * (v - peak).exp()
        })
        .sum();
    lp + peak + (sum * h).ln()
}

/// Design matrix as nested rows.
pub fn dense_design(dict: &Dictionary, covariate: &[f64]) -> Dense {
    let f = dict.evaluate(covariate).unwrap();
    let m = f.matrix();
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn random_atom(rng: &mut ChaCha8Rng, n: usize) -> Atom {
    match rng.random_range(0..5) {
        0 => Atom::Sine {
            cycles: rng.random_range(1..4) as f64,
            period: n as f64,
        },
        1 => Atom::Cosine {
            cycles: rng.random_range(1..4) as f64,
            period: n as f64,
        },
        2 => Atom::Poly {
            degree: rng.random_range(1..3),
        },
        3 => Atom::PointIndicator {
            location: rng.random_range(1..=n) as f64,
        },
        _ => Atom::Haar {
            scale: 2,
            shift: rng.random_range(0..4),
            length: n as f64,
        },
    }
}

/// A random problem instance: series, dictionary, hyperparameters, mode.
pub struct Instance {
    pub ctx: PosteriorContext<f64>,
    pub dict: Dictionary,
    pub design: Dense,
}

pub fn random_instance(seed: u64, n: usize, m: usize, mode: Mode) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = vec![Atom::Constant];
    while atoms.len() < m {
        let a = random_atom(&mut rng, n);
        if !atoms.contains(&a) {
            atoms.push(a);
        }
    }
    let dict = Dictionary::new(atoms).unwrap();
    let jump = rng.random_range(1..n);
    let amp: f64 = rng.random_range(0.2..3.0);
    let noise: f64 = rng.random_range(0.1..1.0);
    let y: Vec<f64> = (1..=n)
        .map(|t| {
            let base = if t > jump { amp } else { 0.0 };
            base + 0.3 * (t as f64 / 2.0).sin() + noise * (rng.random::<f64>() - 0.5)
        })
        .collect();
    let series = TimeSeries::new(y).unwrap();
    let mut hyper = Hyperparameters::uniform(
        n,
        m,
        rng.random_range(1.0..500.0),
        rng.random_range(1.0..500.0),
        0.5,
        0.5,
    );
    for p in hyper.pi.iter_mut().skip(1) {
        *p = rng.random_range(0.01..0.99);
    }
    for p in hyper.eta.iter_mut().skip(1) {
        *p = rng.random_range(0.01..0.99);
    }
    let design = dense_design(&dict, series.covariate());
    let ctx = match mode {
        Mode::SemiParametric => {
            let f = dict.evaluate(series.covariate()).unwrap();
            PosteriorContext::semi_parametric(series, f, hyper).unwrap()
        }
        Mode::Parametric => PosteriorContext::parametric(series, hyper).unwrap(),
    };
    Instance { ctx, dict, design }
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize, m: usize, mode: Mode) -> LatentState {
    let mut s = LatentState::minimal(n, m);
    let pg: f64 = rng.random_range(0.05..0.5);
    for b in s.gamma.iter_mut().skip(1) {
        *b = rng.random::<f64>() < pg;
    }
    if mode == Mode::SemiParametric {
        let pr: f64 = rng.random_range(0.2..0.8);
        for b in s.r.iter_mut().skip(1) {
            *b = rng.random::<f64>() < pr;
        }
    }
    s
}

/// Every state of an `n`-position, `m`-atom problem.
pub fn enumerate_states(n: usize, m: usize) -> Vec<LatentState> {
    let mut out = Vec::new();
    for g in 0..(1u64 << (n - 1)) {
        for r in 0..(1u64 << (m - 1)) {
            let mut s = LatentState::minimal(n, m);
            for i in 1..n {
                s.gamma[i] = g >> (i - 1) & 1 == 1;
            }
            for j in 1..m {
                s.r[j] = r >> (j - 1) & 1 == 1;
            }
            out.push(s);
        }
    }
    out
}

/// `max(|a - b| / max(1, |b|))` style relative gap.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
