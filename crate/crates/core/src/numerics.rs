//! Dense row-major matrices and the numerical checks the rest of the crate
//! relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with a norm below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Default step for central finite differences.
pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix still has rows
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let n = norm(row);
        if !(n >= ZERO_NORM) {
            return Err(Error::ZeroRow { row: i, norm: n });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// `out[i][j] = a_i · b_j`.
pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "similarity of {}-dim and {}-dim rows",
            a.cols, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ai, b.row(j));
        }
    }
    Ok(out)
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax using max subtraction.
pub fn log_softmax_rows(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("log_softmax_rows input"));
    }
    let mut out = logits.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `max|a-b| / max(max|a|, max|b|, floor)`; the floor keeps all-zero
/// gradients from dividing by zero.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs())
        .fold(floor, f64::max);
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m<R: AsRef<[f64]>>(rows: &[R]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let out = l2_normalize_rows(&m(&[&[3.0, 4.0]])).unwrap();
        assert!((out.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((out.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_axis_vectors() {
        let out = l2_normalize_rows(&m(&[&[1.0, 0.0], &[0.0, 2.0]])).unwrap();
        assert_eq!(out, m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    }

    #[test]
    fn normalize_zero_row_fails() {
        let err = l2_normalize_rows(&m(&[&[0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { row: 0, .. }));
    }

    #[test]
    fn similarity_examples() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(similarity_matrix(&eye, &eye).unwrap(), eye);
        let s = similarity_matrix(&m(&[&[1.0, 0.0]]), &m(&[&[0.6, 0.8]])).unwrap();
        assert_eq!(s.as_slice(), &[0.6]);
        let s = similarity_matrix(&Matrix::zeros(2, 3), &Matrix::zeros(4, 3)).unwrap();
        assert_eq!(s.shape(), (2, 4));
        assert!(matches!(
            similarity_matrix(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn log_softmax_examples() {
        let ln2 = std::f64::consts::LN_2;
        for row in [[0.0, 0.0], [1000.0, 1000.0]] {
            let out = log_softmax_rows(&m(&[&row])).unwrap();
            assert!((out.get(0, 0) + ln2).abs() < 1e-12);
            assert!((out.get(0, 1) + ln2).abs() < 1e-12);
        }
        // log(e/(e+1)) and log(1/(e+1)), evaluated directly.
        let e = std::f64::consts::E;
        let expect = [(e / (e + 1.0)).ln(), (1.0 / (e + 1.0)).ln()];
        assert!((expect[0] + 0.31326).abs() < 1e-5);
        let out = log_softmax_rows(&m(&[&[1.0, 0.0]])).unwrap();
        assert!((out.get(0, 0) - expect[0]).abs() < 1e-12);
        assert!((out.get(0, 1) - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_rejects_nan() {
        assert!(log_softmax_rows(&m(&[&[f64::NAN, 0.0]])).is_err());
    }

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let g = finite_diff_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], DEFAULT_FD_EPS);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_gradient(|_| 3.0, &[0.5, -1.0, 7.0], DEFAULT_FD_EPS);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(max_rows: usize, cols: usize, mag: f64) -> impl Strategy<Value = Matrix> {
            prop::collection::vec(prop::collection::vec(-mag..mag, cols), 1..max_rows)
                .prop_map(|rows| Matrix::from_rows(&rows).unwrap())
        }

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(l in matrix(6, 5, 1e3)) {
                let out = log_softmax_rows(&l).unwrap();
                for row in out.iter_rows() {
                    let s: f64 = row.iter().map(|v| v.exp()).sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn similarity_transpose_symmetry(a in matrix(5, 4, 3.0), b in matrix(5, 4, 3.0)) {
                let ab = similarity_matrix(&a, &b).unwrap();
                let ba = similarity_matrix(&b, &a).unwrap();
                prop_assert_eq!(ab.transpose(), ba);
            }

            #[test]
            fn normalize_idempotent(a in matrix(5, 4, 10.0)) {
                prop_assume!(a.iter_rows().all(|r| norm(r) > 1e-3));
                let once = l2_normalize_rows(&a).unwrap();
                let twice = l2_normalize_rows(&once).unwrap();
                prop_assert!(once.max_abs_diff(&twice) < 1e-12);
                for r in once.iter_rows() {
                    prop_assert!((norm(r) - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
