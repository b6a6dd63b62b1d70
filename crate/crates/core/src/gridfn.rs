//! Nodal grid functions with the pointwise partial order and cone norms.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values at the interior nodes; the function is implicitly zero outside (-1, 1).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridFunction(Vec<f64>);

/// Outcome of a nodewise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    Le,
    Ge,
    Equal,
    Incomparable,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        GridFunction(values)
    }

    pub fn zeros(n: usize) -> Self {
        GridFunction(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        GridFunction(vec![value; n])
    }

    pub fn from_fn(nodes: &[f64], f: impl Fn(f64) -> f64) -> Self {
        GridFunction(nodes.iter().map(|&x| f(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        GridFunction(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Nodewise maximum of two functions.
    pub fn max_with(&self, other: &Self) -> Self {
        self.zip_map(other, f64::max)
    }

    /// Nodewise minimum of two functions.
    pub fn min_with(&self, other: &Self) -> Self {
        self.zip_map(other, f64::min)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// True when self <= other + tol at every node.
    pub fn le_within(&self, other: &Self, tol: f64) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| *a <= b + tol)
    }

    /// Largest violation of self <= other (0 when ordered).
    pub fn le_violation(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max(a - b))
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(v: Vec<f64>) -> Self {
        GridFunction(v)
    }
}

impl Index<usize> for GridFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for GridFunction {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

impl Neg for &GridFunction {
    type Output = GridFunction;
    fn neg(self) -> GridFunction {
        self.scale(-1.0)
    }
}

fn check_profile(u: &GridFunction, phi: &GridFunction) -> Result<()> {
    u.check_len(phi)?;
    if let Some(i) = phi.0.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::domain(format!(
            "cone profile must be positive, node {i} has value {}",
            phi.0[i]
        )));
    }
    Ok(())
}

/// max_i |u_i / phi_i|.
pub fn cone_norm(u: &GridFunction, phi: &GridFunction) -> Result<f64> {
    check_profile(u, phi)?;
    Ok(u.0
        .iter()
        .zip(&phi.0)
        .fold(0.0, |m, (a, p)| m.max((a / p).abs())))
}

/// min_i u_i / phi_i; positive exactly when u lies in the open cone.
pub fn cone_inf(u: &GridFunction, phi: &GridFunction) -> Result<f64> {
    check_profile(u, phi)?;
    Ok(u.0
        .iter()
        .zip(&phi.0)
        .fold(f64::INFINITY, |m, (a, p)| m.min(a / p)))
}

/// Nodewise comparison with an absolute tolerance.
pub fn order_compare(u: &GridFunction, v: &GridFunction, tol: f64) -> Result<Ordering> {
    u.check_len(v)?;
    let mut le = true;
    let mut ge = true;
    for (a, b) in u.0.iter().zip(&v.0) {
        if *a > b + tol {
            le = false;
        }
        if *a < b - tol {
            ge = false;
        }
    }
    Ok(match (le, ge) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Le,
        (false, true) => Ordering::Ge,
        (false, false) => Ordering::Incomparable,
    })
}
