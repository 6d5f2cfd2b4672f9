// SPDX-License-Identifier: MIT OR Apache-2.0

//! Atom families for the functional part and their evaluation into `F`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// One dictionary function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Atom {
    Constant,
    /// `2^{J/2} * 1_[0,1](2^J t / L - k)`.
    Haar {
        scale: u32,
        shift: u32,
        length: f64,
    },
    /// Unit spike at `t == location`.
    PointIndicator {
        location: f64,
    },
    /// `sin(2 pi cycles t / period)`.
    Sine {
        cycles: f64,
        period: f64,
    },
    /// `cos(2 pi cycles t / period)`.
    Cosine {
        cycles: f64,
        period: f64,
    },
    /// `t^degree`.
    Poly {
        degree: u32,
    },
    /// Tabulated values on the series grid.
    Custom {
        label: String,
        values: Vec<f64>,
    },
}

impl Atom {
    fn validate(&self) -> Result<()> {
        match self {
            Atom::Haar {
                scale,
                shift,
                length,
            } => {
                if *scale >= 32 || u64::from(*shift) >= 1u64 << scale {
                    return Err(Error::invalid(format!(
                        "Haar shift {shift} outside [0, 2^{scale} - 1]"
                    )));
                }
                if !(*length > 0.0) {
                    return Err(Error::invalid("Haar domain length must be positive"));
                }
            }
            Atom::Sine { cycles, period } | Atom::Cosine { cycles, period } => {
                if !(*period > 0.0) || !(cycles / period > 0.0) || !cycles.is_finite() {
                    return Err(Error::invalid("Fourier frequency must be positive"));
                }
            }
            Atom::Poly { degree } if *degree == 0 => {
                return Err(Error::invalid("polynomial degree must be at least 1"));
            }
            Atom::PointIndicator { location } if !location.is_finite() => {
                return Err(Error::invalid("point location must be finite"));
            }
            Atom::Custom { values, .. } if values.iter().any(|v| !v.is_finite()) => {
                return Err(Error::invalid("custom atom values must be finite"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Value at covariate `x`, where `index` is the 0-based row (used by custom atoms).
    pub fn value(&self, x: f64, index: usize) -> f64 {
        match self {
            Atom::Constant => 1.0,
            Atom::Haar {
                scale,
                shift,
                length,
            } => {
                let levels = f64::from(1u32 << scale);
                let u = levels * x / length - f64::from(*shift);
                if (0.0..=1.0).contains(&u) {
                    levels.sqrt()
                } else {
                    0.0
                }
            }
            Atom::PointIndicator { location } => {
                if x == *location {
                    1.0
                } else {
                    0.0
                }
            }
            Atom::Sine { cycles, period } => (2.0 * PI * cycles * x / period).sin(),
            Atom::Cosine { cycles, period } => (2.0 * PI * cycles * x / period).cos(),
            Atom::Poly { degree } => x.powi(*degree as i32),
            Atom::Custom { values, .. } => values[index],
        }
    }
}

fn num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Constant => write!(f, "constant term"),
            Atom::Haar {
                scale,
                shift,
                length,
            } => write!(f, "Haar(J={scale}, k={shift}, L={})", num(*length)),
            Atom::PointIndicator { location } => {
                write!(f, "Haar function at t={}", num(*location))
            }
            Atom::Sine { cycles, period } => {
                write!(f, "sin(2π×{}×t/{})", num(*cycles), num(*period))
            }
            Atom::Cosine { cycles, period } => {
                write!(f, "cos(2π×{}×t/{})", num(*cycles), num(*period))
            }
            Atom::Poly { degree: 1 } => write!(f, "t"),
            Atom::Poly { degree } => write!(f, "t^{degree}"),
            Atom::Custom { label, .. } => write!(f, "{label}"),
        }
    }
}

/// Which local family the simulation preset uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalFamily {
    /// 128 scaled Haar atoms on dyadic cells of `[0, n]`.
    Haar128,
    /// One unit indicator per integer time `1..=n`.
    #[default]
    Point100,
}

/// Named dictionary recipes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum DictionaryPreset {
    /// Constant, local atoms, `sin/cos(2 pi j t / n)` for `j = 1..10`, `t`, `t^2`.
    Simulation { n: usize, family: LocalFamily },
    /// Constant plus `sin/cos(2 pi i t / span)` for every `i` with `span / i >= floor`.
    FourierPeriodFloor { span: f64, floor: f64 },
    /// Constant, `t`, `t^2`, then `sin/cos(2 pi i t / n)` for `i = 1..10`.
    Exchange { n: usize },
}

const FOURIER_TERMS: usize = 10;

fn fourier_pairs(atoms: &mut Vec<Atom>, count: usize, period: f64) {
    for j in 1..=count {
        let cycles = j as f64;
        atoms.push(Atom::Sine { cycles, period });
        atoms.push(Atom::Cosine { cycles, period });
    }
}

/// Ordered atom family; atom 1 is always the constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    atoms: Vec<Atom>,
}

impl Dictionary {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        match atoms.first() {
            None => return Err(Error::invalid("dictionary needs at least one atom")),
            Some(Atom::Constant) => {}
            Some(other) => {
                return Err(Error::invalid(format!(
                    "first atom must be the constant, got {other}"
                )))
            }
        }
        for a in &atoms {
            a.validate()?;
        }
        Ok(Self { atoms })
    }

    pub fn from_preset(preset: &DictionaryPreset) -> Result<Self> {
        let mut atoms = vec![Atom::Constant];
        match *preset {
            DictionaryPreset::Simulation { n, family } => {
                if n < 2 {
                    return Err(Error::invalid("simulation dictionary needs n >= 2"));
                }
                match family {
                    LocalFamily::Haar128 => {
                        for shift in 0..128 {
                            atoms.push(Atom::Haar {
                                scale: 7,
                                shift,
                                length: n as f64,
                            });
                        }
                    }
                    LocalFamily::Point100 => {
                        for t in 1..=n {
                            atoms.push(Atom::PointIndicator { location: t as f64 });
                        }
                    }
                }
                fourier_pairs(&mut atoms, FOURIER_TERMS, n as f64);
                atoms.push(Atom::Poly { degree: 1 });
                atoms.push(Atom::Poly { degree: 2 });
            }
            DictionaryPreset::FourierPeriodFloor { span, floor } => {
                if !(floor > 0.0) {
                    return Err(Error::invalid("period floor must be positive"));
                }
                if !(span > 0.0) {
                    return Err(Error::invalid("span must be positive"));
                }
                let count = (span / floor).floor() as usize;
                fourier_pairs(&mut atoms, count, span);
            }
            DictionaryPreset::Exchange { n } => {
                if n < 2 {
                    return Err(Error::invalid("exchange dictionary needs n >= 2"));
                }
                atoms.push(Atom::Poly { degree: 1 });
                atoms.push(Atom::Poly { degree: 2 });
                fourier_pairs(&mut atoms, FOURIER_TERMS, n as f64);
            }
        }
        Self::new(atoms)
    }

    /// Number of atoms `M`.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Atom at 1-based `index`.
    pub fn atom(&self, index: usize) -> Result<&Atom> {
        index
            .checked_sub(1)
            .and_then(|i| self.atoms.get(i))
            .ok_or(Error::PositionOutOfRange {
                position: index,
                n: self.atoms.len(),
            })
    }

    /// Human-readable name for the 1-based atom `index`.
    pub fn atom_label(&self, index: usize) -> Result<String> {
        self.atom(index).map(ToString::to_string)
    }

    /// Sub-dictionary with the given 1-based atoms (the first must be 1).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let atoms = indices
            .iter()
            .map(|&i| self.atom(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }

    /// Evaluates every atom on the covariate grid.
    pub fn evaluate<T: Scalar>(&self, covariate: &[T]) -> Result<DesignMatrix<T>> {
        evaluate_dictionary(self, covariate)
    }
}

/// `F[i][j] = phi_j(x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix<T> {
    matrix: Matrix<T>,
}

impl<T: Scalar> DesignMatrix<T> {
    /// Wraps a tabulated design; column 1 must be all ones.
    pub fn from_matrix(matrix: Matrix<T>) -> Result<Self> {
        if matrix.cols() == 0 || matrix.rows() == 0 {
            return Err(Error::invalid("design matrix is empty"));
        }
        if !matrix.is_finite() {
            return Err(Error::invalid("design matrix has non-finite entries"));
        }
        if (0..matrix.rows()).any(|i| matrix[(i, 0)] != T::one()) {
            return Err(Error::invalid("first design column must be all ones"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Number of atoms `M`.
    pub fn num_atoms(&self) -> usize {
        self.matrix.cols()
    }

    /// Columns for 1-based atom indices.
    pub fn select_atoms(&self, indices: &[usize]) -> Result<Matrix<T>> {
        if let Some(&bad) = indices.iter().find(|&&i| i == 0 || i > self.num_atoms()) {
            return Err(Error::PositionOutOfRange {
                position: bad,
                n: self.num_atoms(),
            });
        }
        let cols: Vec<usize> = indices.iter().map(|i| i - 1).collect();
        Ok(self.matrix.select_columns(&cols))
    }
}

/// Evaluates `dict` on `covariate`.
pub fn evaluate_dictionary<T: Scalar>(
    dict: &Dictionary,
    covariate: &[T],
) -> Result<DesignMatrix<T>> {
    let n = covariate.len();
    if covariate.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("covariate must be finite"));
    }
    for atom in dict.atoms() {
        if let Atom::Custom { label, values } = atom {
            if values.len() != n {
                return Err(Error::dims(format!(
                    "custom atom '{label}' has {} values for {n} observations",
                    values.len()
                )));
            }
        }
    }
    let m = dict.len();
    let matrix = Matrix::from_fn(n, m, |i, j| {
        T::of(dict.atoms[j].value(covariate[i].as_f64(), i))
    });
    if !matrix.is_finite() {
        return Err(Error::invalid(
            "dictionary evaluation produced non-finite values",
        ));
    }
    Ok(DesignMatrix { matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Vec<f64> {
        (1..=n).map(|t| t as f64).collect()
    }

    #[test]
    fn preset_sizes() {
        let haar = Dictionary::from_preset(&DictionaryPreset::Simulation {
            n: 100,
            family: LocalFamily::Haar128,
        })
        .unwrap();
        assert_eq!(haar.len(), 151);
        let point = Dictionary::from_preset(&DictionaryPreset::Simulation {
            n: 100,
            family: LocalFamily::Point100,
        })
        .unwrap();
        assert_eq!(point.len(), 123);
        let ex = Dictionary::from_preset(&DictionaryPreset::Exchange { n: 1500 }).unwrap();
        assert_eq!(ex.len(), 23);
    }

    #[test]
    fn period_floor_counts_pairs() {
        // periods span/i >= floor for i = 1..=96 when span = 775 weeks
        let d = Dictionary::from_preset(&DictionaryPreset::FourierPeriodFloor {
            span: 775.0,
            floor: 8.0,
        })
        .unwrap();
        assert_eq!(d.len(), 1 + 2 * 96);
        assert!(
            Dictionary::from_preset(&DictionaryPreset::FourierPeriodFloor {
                span: 775.0,
                floor: 0.0
            })
            .is_err()
        );
    }

    #[test]
    fn atom_values() {
        let s = Atom::Sine {
            cycles: 5.0,
            period: 100.0,
        };
        assert_abs_diff_eq!(s.value(10.0, 0), 0.0, epsilon = 1e-12);
        assert_eq!(Atom::Constant.value(-3.2, 0), 1.0);
        let h = Atom::Haar {
            scale: 7,
            shift: 12,
            length: 100.0,
        };
        assert_abs_diff_eq!(h.value(10.0, 0), 2f64.powf(3.5), epsilon = 1e-12);
        assert_eq!(h.value(20.0, 0), 0.0);
    }

    #[test]
    fn table_labels() {
        let d = Dictionary::from_preset(&DictionaryPreset::Simulation {
            n: 100,
            family: LocalFamily::Point100,
        })
        .unwrap();
        assert_eq!(d.atom_label(1).unwrap(), "constant term");
        assert_eq!(d.atom_label(51).unwrap(), "Haar function at t=50");
        assert_eq!(d.atom_label(110).unwrap(), "sin(2π×5×t/100)");
        assert_eq!(d.atom_label(120).unwrap(), "sin(2π×10×t/100)");
        assert!(d.atom_label(0).is_err());
        assert!(d.atom_label(124).is_err());
    }

    #[test]
    fn table_atoms_reproduce_bias_components() {
        let d = Dictionary::from_preset(&DictionaryPreset::Simulation {
            n: 100,
            family: LocalFamily::Point100,
        })
        .unwrap();
        let f = d.evaluate(&grid(100)).unwrap();
        for (idx, t0) in [(11usize, 10usize), (51, 50), (61, 60)] {
            let col = f.select_atoms(&[idx]).unwrap().column(0);
            for (t, v) in col.iter().enumerate() {
                assert_eq!(*v, if t + 1 == t0 { 1.0 } else { 0.0 });
            }
        }
        let sine = f.select_atoms(&[110]).unwrap().column(0);
        for (i, v) in sine.iter().enumerate() {
            let t = (i + 1) as f64;
            assert_abs_diff_eq!(*v, (2.0 * PI * t / 20.0).sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn first_column_is_ones_and_subsets_select_columns() {
        let d = Dictionary::from_preset(&DictionaryPreset::Exchange { n: 40 }).unwrap();
        let x = grid(40);
        let f = d.evaluate(&x).unwrap();
        assert!(f.matrix().column(0).iter().all(|&v| v == 1.0));
        let idx = [1, 3, 7, 20];
        let sub = d.subset(&idx).unwrap().evaluate(&x).unwrap();
        assert_eq!(sub.matrix(), &f.select_atoms(&idx).unwrap());
        let f32_design = d.evaluate(&[1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(f32_design.num_atoms(), 23);
    }

    #[test]
    fn invalid_dictionaries() {
        assert!(Dictionary::new(vec![]).is_err());
        assert!(Dictionary::new(vec![Atom::Poly { degree: 1 }]).is_err());
        assert!(Dictionary::new(vec![Atom::Constant, Atom::Poly { degree: 0 }]).is_err());
        assert!(Dictionary::new(vec![
            Atom::Constant,
            Atom::Sine {
                cycles: 0.0,
                period: 10.0
            }
        ])
        .is_err());
        assert!(Dictionary::new(vec![
            Atom::Constant,
            Atom::Haar {
                scale: 3,
                shift: 8,
                length: 10.0
            }
        ])
        .is_err());
    }
}
