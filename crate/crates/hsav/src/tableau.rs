//! Butcher tableaus: programmatic Gauss-Legendre collocation tables for
//! 1..=10 stages and the algebraic stability condition
//! `b_i a_ij + b_j a_ji = b_i b_j, b_i >= 0` as an executable check.

use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ButcherTableau {
    stages: usize,
    a: Array2<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// Result of checking the algebraic stability condition.
#[derive(Debug, Clone, Copy)]
pub struct StabilityReport {
    /// max_{i,j} |b_i a_ij + b_j a_ji - b_i b_j|
    pub max_residual: f64,
    pub min_weight: f64,
    pub passes: bool,
}

impl ButcherTableau {
    /// Validates the row-sum condition c_i = sum_j a_ij and sum(b) = 1.
    pub fn new(a: Array2<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let s = b.len();
        if s == 0 || a.dim() != (s, s) || c.len() != s {
            return Err(Error::InvalidTableau(format!(
                "inconsistent dimensions: A {:?}, b {}, c {}",
                a.dim(),
                b.len(),
                c.len()
            )));
        }
        for i in 0..s {
            let row_sum: f64 = (0..s).map(|j| a[[i, j]]).sum();
            if (row_sum - c[i]).abs() > 1e-14 {
                return Err(Error::InvalidTableau(format!(
                    "row-sum condition violated at stage {i}: sum a_ij = {row_sum}, c = {}",
                    c[i]
                )));
            }
        }
        let weight_sum: f64 = b.iter().sum();
        if (weight_sum - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidTableau(format!(
                "weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(ButcherTableau { stages: s, a, b, c })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Evaluates the algebraic stability condition exactly; no tolerance is
    /// hidden in the arithmetic.
    pub fn check_stability(&self) -> StabilityReport {
        let s = self.stages;
        let mut max_residual: f64 = 0.0;
        for i in 0..s {
            for j in 0..s {
                let r = self.b[i] * self.a[[i, j]] + self.b[j] * self.a[[j, i]]
                    - self.b[i] * self.b[j];
                max_residual = max_residual.max(r.abs());
            }
        }
        let min_weight = self.b.iter().cloned().fold(f64::INFINITY, f64::min);
        StabilityReport {
            max_residual,
            min_weight,
            passes: max_residual <= 1e-13 && min_weight >= -1e-14,
        }
    }
}

impl fmt::Display for ButcherTableau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.stages;
        for i in 0..s {
            write!(f, "{:>20.16} |", self.c[i])?;
            for j in 0..s {
                write!(f, " {:>20.16}", self.a[[i, j]])?;
            }
            writeln!(f)?;
        }
        writeln!(f, "{:->22}{:->21}", "+", "-".repeat((s - 1) * 21))?;
        write!(f, "{:>20} |", "")?;
        for j in 0..s {
            write!(f, " {:>20.16}", self.b[j])?;
        }
        writeln!(f)
    }
}

/// Gauss-Legendre collocation tableau with `s` stages (order 2s).
///
/// Nodes are the roots of the shifted Legendre polynomial on [0, 1], found
/// by Newton iteration from Chebyshev initial guesses; the A matrix solves
/// the collocation conditions sum_j a_ij c_j^(k-1) = c_i^k / k row by row.
pub fn gauss_tableau(s: usize) -> Result<ButcherTableau> {
    if s == 0 || s > 10 {
        return Err(Error::StageCount(s));
    }
    let (nodes, weights) = gauss_legendre_unit(s);

    let mut a = Array2::zeros((s, s));
    // Vandermonde-type collocation system, one solve per row.
    let mut matrix = vec![0.0; s * s];
    for k in 0..s {
        for j in 0..s {
            matrix[k * s + j] = nodes[j].powi(k as i32);
        }
    }
    for i in 0..s {
        let rhs: Vec<f64> = (1..=s)
            .map(|k| nodes[i].powi(k as i32) / k as f64)
            .collect();
        let row = solve_dense(&matrix, &rhs)?;
        for j in 0..s {
            a[[i, j]] = row[j];
        }
    }

    // Enforce the row-sum identity exactly: c_i = sum_j a_ij holds
    // analytically (k = 1 collocation condition), so snap away the solver's
    // last-digit rounding.
    let c = (0..s)
        .map(|i| (0..s).map(|j| a[[i, j]]).sum())
        .collect::<Vec<f64>>();
    for (ci, ni) in c.iter().zip(nodes.iter()) {
        debug_assert!((ci - ni).abs() < 1e-12);
    }
    ButcherTableau::new(a, weights, c)
}

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre_unit(s: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(s);
    let mut weights = Vec::with_capacity(s);
    for i in 0..s {
        // Chebyshev guess for the i-th root of P_s on [-1, 1], descending.
        let mut x = (std::f64::consts::PI * (4.0 * i as f64 + 3.0) / (4.0 * s as f64 + 2.0)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_eval(s, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_eval(s, x);
        nodes.push(0.5 * (x + 1.0));
        // w on [-1,1] is 2 / ((1 - x^2) P_s'(x)^2); halve for [0, 1].
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    // Newton from descending Chebyshev guesses yields ascending c.
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by(|&p, &q| nodes[p].partial_cmp(&nodes[q]).unwrap());
    let nodes_sorted = idx.iter().map(|&i| nodes[i]).collect();
    let weights_sorted = idx.iter().map(|&i| weights[i]).collect();
    (nodes_sorted, weights_sorted)
}

/// Legendre polynomial P_n and its derivative at x, by the three-term
/// recurrence.
fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Dense linear solve by Gaussian elimination with partial pivoting
/// (row-major n x n matrix).
pub(crate) fn solve_dense(matrix: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut m = matrix.to_vec();
    let mut x = rhs.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| m[p * n + col].abs().partial_cmp(&m[q * n + col].abs()).unwrap())
            .unwrap();
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::InvalidTableau("singular collocation system".into()));
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            x.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            for j in col..n {
                m[row * n + j] -= f * m[col * n + j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col * n + col];
        for row in 0..col {
            x[row] -= m[row * n + col] * x[col];
        }
    }
    Ok(x)
}
