//! Small dense symmetric matrices and vector helpers for phase-space arithmetic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Dense symmetric matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = s;
        }
        SymMatrix { n, data }
    }

    /// Builds a matrix from rows, rejecting ragged or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, String> {
        let n = rows.len();
        if n == 0 {
            return Err("matrix must have at least one row".into());
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(format!("row {i} has length {}, expected {n}", row.len()));
            }
            data.extend_from_slice(row);
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(format!("matrix is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// `out = self * v`
    pub fn mul_into(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// `v . self v`
    pub fn quad(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            acc += v[i] * s;
        }
        acc
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.data);
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn is_scaled_identity(&self) -> Option<f64> {
        let s = self.data[0];
        for i in 0..self.n {
            for j in 0..self.n {
                let want = if i == j { s } else { 0.0 };
                if self.get(i, j) != want {
                    return None;
                }
            }
        }
        Some(s)
    }
}

/// JSON form of a matrix: a scalar means a multiple of the identity.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn build(&self, d: usize) -> Result<SymMatrix, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(SymMatrix::scaled_identity(d, *s)),
            MatrixSpec::Rows(rows) => {
                let m = SymMatrix::from_rows(rows)?;
                if m.dim() != d {
                    return Err(format!("matrix has size {} but dimension is {d}", m.dim()));
                }
                Ok(m)
            }
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
