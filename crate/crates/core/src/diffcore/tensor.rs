use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`. Rank 1 (`[n]`) or rank 2 (`[rows, cols]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("rank {} unsupported", shape.len()),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    detail: "ragged rows".into(),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rank-1 tensors are treated as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.len(), other.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self · other` for `[n, k] · [k, m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.data, (k, 1), &other.data, (m, 1), &mut out);
        Tensor::matrix(n, m, out)
    }

    /// `selfᵀ · other` for `[k, n]ᵀ · [k, m]`.
    pub(crate) fn t_matmul(&self, other: &Tensor) -> Tensor {
        let (k, n) = (self.rows(), self.cols());
        let m = other.cols();
        debug_assert_eq!(k, other.rows());
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.data, (1, n), &other.data, (m, 1), &mut out);
        Tensor { shape: vec![n, m], data: out }
    }

    /// `self · otherᵀ` for `[n, k] · [m, k]ᵀ`.
    pub(crate) fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (n, k) = (self.rows(), self.cols());
        let m = other.rows();
        debug_assert_eq!(k, other.cols());
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, &self.data, (k, 1), &other.data, (1, k), &mut out);
        Tensor { shape: vec![n, m], data: out }
    }

    pub(crate) fn with_shape_of(data: Vec<f64>, like: &Tensor) -> Tensor {
        Tensor { shape: like.shape.clone(), data }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    n: usize,
    k: usize,
    m: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: the slices hold exactly n*k, k*m and n*m elements and the
    // strides describe in-bounds row- or column-major views of them.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
