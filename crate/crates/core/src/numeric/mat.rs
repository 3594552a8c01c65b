use crate::error::{ensure_dim, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim("Mat::from_vec", rows * cols, data.len())?;
        Ok(Mat { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("Mat::matvec", self.cols, x.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("Mat::matvec_t", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

fn view(m: &Mat, transpose: bool) -> (usize, usize, View<'_>) {
    let (rs, cs) = (m.cols as isize, 1isize);
    if transpose {
        (
            m.cols,
            m.rows,
            View {
                data: &m.data,
                rs: cs,
                cs: rs,
            },
        )
    } else {
        (
            m.rows,
            m.cols,
            View {
                data: &m.data,
                rs,
                cs,
            },
        )
    }
}

/// `out = beta * out + op(a) · op(b)`.
pub fn gemm_into(a: &Mat, ta: bool, b: &Mat, tb: bool, beta: f64, out: &mut Mat) -> Result<()> {
    let (m, k, av) = view(a, ta);
    let (k2, n, bv) = view(b, tb);
    ensure_dim("gemm inner", k, k2)?;
    ensure_dim("gemm rows", m, out.rows)?;
    ensure_dim("gemm cols", n, out.cols)?;
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        for v in &mut out.data {
            *v *= beta;
        }
        return Ok(());
    }
    let c_rs = out.cols as isize;
    // SAFETY: every view describes a buffer of exactly rows*cols elements with
    // in-bounds strides, and `out` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            av.data.as_ptr(),
            av.rs,
            av.cs,
            bv.data.as_ptr(),
            bv.rs,
            bv.cs,
            beta,
            out.data.as_mut_ptr(),
            c_rs,
            1,
        );
    }
    Ok(())
}

/// `op(a) · op(b)`.
pub fn gemm(a: &Mat, ta: bool, b: &Mat, tb: bool) -> Result<Mat> {
    let rows = if ta { a.cols } else { a.rows };
    let cols = if tb { b.rows } else { b.cols };
    let mut out = Mat::zeros(rows, cols);
    gemm_into(a, ta, b, tb, 0.0, &mut out)?;
    Ok(out)
}
