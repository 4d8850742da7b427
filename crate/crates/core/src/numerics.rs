//! Dense vector kernels and the ridge least-squares solve.

use crate::error::{Error, Result};

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(dot_unchecked(a, b))
}

/// `sum_i a[i] * b[i] * c[i]`
pub fn triple_dot(a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    check_len(b, c)?;
    Ok(triple_dot_unchecked(a, b, c))
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn triple_dot_unchecked(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    debug_assert!(a.len() == b.len() && b.len() == c.len());
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| x * y * z)
        .sum()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// The `d x d` system `(AᵀA + λI) z = Aᵀb`.
///
/// Assembly costs O(N·d²); the solve costs O(d³) and is independent of N.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: Mat,
    rhs: Vec<f64>,
}

impl NormalEquations {
    pub fn assemble(a: &Mat, b: &[f64], lambda: f64) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.rows(),
                right: b.len(),
            });
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ridge regularizer must be finite and non-negative, got {lambda}"
            )));
        }
        let d = a.cols();
        let mut gram = Mat::zeros(d, d);
        let mut rhs = vec![0.0; d];
        for (i, &bi) in b.iter().enumerate() {
            let row = a.row(i);
            for j in 0..d {
                let rj = row[j];
                rhs[j] += rj * bi;
                let gj = gram.row_mut(j);
                for k in 0..=j {
                    gj[k] += rj * row[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                let v = gram.get(j, k);
                gram.set(k, j, v);
            }
            let v = gram.get(j, j) + lambda;
            gram.set(j, j, v);
        }
        Ok(Self { gram, rhs })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        let l = cholesky(&self.gram)?;
        Ok(cholesky_solve(&l, &self.rhs))
    }
}

/// Lower-triangular `L` with `L Lᵀ = m`. Fails if `m` is not numerically
/// positive definite.
pub fn cholesky(m: &Mat) -> Result<Mat> {
    let n = m.rows();
    debug_assert_eq!(n, m.cols());
    let scale = (0..n).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    let tol = scale * f64::EPSILON * n.max(1) as f64;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut diag = m.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if diag.is_nan() || diag <= tol {
            return Err(Error::Singular);
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// Minimizer of `‖Az − b‖² + λ‖z‖²`.
pub fn ridge_solve(a: &Mat, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let z = NormalEquations::assemble(a, b, lambda)?.solve()?;
    debug_assert!(z.iter().all(|x| x.is_finite()));
    Ok(z)
}
