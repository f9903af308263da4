//! Dense row-major matrices and the handful of vector kernels the rest of
//! the crate needs. Vectors are plain `[f64]` slices.

use serde::{Deserialize, Serialize};

use crate::error::{EcaError, Result};

/// Dense row-major matrix of `f64`. Rows are data points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from a flat row-major buffer.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EcaError::dim(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EcaError::Numerics(format!(
                "entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(EcaError::dim(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        let cols = self.cols;
        (0..self.rows).map(move |i| &self.data[i * cols..(i + 1) * cols])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Column `j` copied out.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.row_iter().map(|r| r[j]).collect()
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
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

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(EcaError::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                axpy(a, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(EcaError::dim(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot_unchecked(r, x)).collect())
    }

    /// `selfᵀ · y` for a column vector `y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.rows != y.len() {
            return Err(EcaError::dim(format!(
                "cannot apply transpose of {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &coef) in self.row_iter().zip(y) {
            axpy(coef, r, &mut out);
        }
        Ok(out)
    }

    /// Stacks the rows of `other` below the rows of `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(EcaError::dim(format!(
                "cannot stack {} columns onto {}",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// `tr(selfᵀ self)`, the squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }
}

/// `Σ aᵢ bᵢ`.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EcaError::dim(format!(
            "dot of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Unit vector along `v`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() || n <= 0.0 {
        return Err(EcaError::DegenerateVector(format!(
            "cannot normalize vector with norm {n}"
        )));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Removes from `g` every component along the orthonormal `basis`,
/// returning `g − Σⱼ (vⱼ·g) vⱼ`.
pub fn complement_project<B: AsRef<[f64]>>(g: &[f64], basis: &[B]) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    complement_project_in_place(&mut out, basis)?;
    Ok(out)
}

/// In-place variant of [`complement_project`]. Components are removed one
/// basis vector at a time (modified Gram-Schmidt ordering).
pub fn complement_project_in_place<B: AsRef<[f64]>>(g: &mut [f64], basis: &[B]) -> Result<()> {
    for (j, v) in basis.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != g.len() {
            return Err(EcaError::dim(format!(
                "basis vector {j} has length {}, expected {}",
                v.len(),
                g.len()
            )));
        }
        let c = dot_unchecked(v, g);
        axpy(-c, v, g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert!((dot(&[3.0, 4.0], &[0.6, 0.8]).unwrap() - 5.0).abs() < 1e-15);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(EcaError::Dimension(_))
        ));
    }

    #[test]
    fn complement_project_examples() {
        let p = complement_project(&[1.0, 1.0], &[[1.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);

        let empty: [Vec<f64>; 0] = [];
        assert_eq!(
            complement_project(&[0.3, -2.0, 5.0], &empty).unwrap(),
            vec![0.3, -2.0, 5.0]
        );

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = complement_project(&[2.0, 2.0, 0.0], &[[s, s, 0.0]]).unwrap();
        assert!(norm(&p) < 1e-14, "{p:?}");

        assert!(complement_project(&[1.0, 1.0], &[[1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let u = normalize(&[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(EcaError::DegenerateVector(_))
        ));
    }

    #[test]
    fn matrix_rejects_bad_buffers() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(EcaError::Dimension(_))
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(EcaError::Numerics(_))
        ));
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_and_matvec() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(a.matvec_transposed(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(a.transpose().as_slice(), &[1.0, 3.0, 2.0, 4.0]);
    }

    fn orthonormal_basis(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for r in raw {
            let p = complement_project(r, &basis).unwrap();
            if norm(&p) > 1e-3 {
                let p = normalize(&p).unwrap();
                // second pass restores orthogonality lost to cancellation
                let p = normalize(&complement_project(&p, &basis).unwrap()).unwrap();
                basis.push(p);
            }
        }
        basis
    }

    proptest! {
        #[test]
        fn complement_projection_is_idempotent_and_orthogonal(
            g in prop::collection::vec(-10.0f64..10.0, 6),
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 0..5),
        ) {
            let basis = orthonormal_basis(&raw);
            let once = complement_project(&g, &basis).unwrap();
            let twice = complement_project(&once, &basis).unwrap();
            let scale = norm(&g).max(1.0);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-10 * scale);
            }
            for v in &basis {
                prop_assert!(dot(v, &once).unwrap().abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn dot_is_symmetric(
            a in prop::collection::vec(-1e3f64..1e3, 1..12),
            b in prop::collection::vec(-1e3f64..1e3, 1..12),
        ) {
            let n = a.len().min(b.len());
            prop_assert_eq!(dot(&a[..n], &b[..n]).unwrap(), dot(&b[..n], &a[..n]).unwrap());
        }

        #[test]
        fn normalize_is_scale_invariant(
            v in prop::collection::vec(-5.0f64..5.0, 1..8),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&v) > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let a = normalize(&v).unwrap();
            let b = normalize(&scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((norm(&a) - 1.0).abs() < 1e-12);
        }
    }
}
