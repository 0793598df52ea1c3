/// Dense row-major matrix of `f64`. Rows index batch items, columns index features.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: &[f64]) -> Self {
        Self::from_vec(1, data.len(), data.to_vec())
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
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

    /// `[self | other[:, ..prefix]]`, row by row.
    pub fn hcat_prefix(&self, other: &Matrix, prefix: usize) -> Matrix {
        assert_eq!(self.rows, other.rows);
        assert!(prefix <= other.cols);
        let cols = self.cols + prefix;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(&other.row(r)[..prefix]);
        }
        Matrix::from_vec(self.rows, cols, data)
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix::from_vec(self.rows, end - start, data)
    }
}

/// `out = x · wᵀ + bias`, where `w` is `out_cols × x.cols` row-major.
pub(crate) fn affine(x: &Matrix, w: &[f64], bias: &[f64]) -> Matrix {
    let n = bias.len();
    let k = x.cols;
    debug_assert_eq!(w.len(), n * k);
    let mut out = Matrix::zeros(x.rows, n);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(bias);
    }
    if x.rows == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: all pointers and strides describe in-bounds row-major buffers
    // of the stated dimensions.
    unsafe {
        matrixmultiply::dgemm(
            x.rows,
            k,
            n,
            1.0,
            x.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            1.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `g · w`, where `g` is `rows × out` and `w` is `out × in` row-major.
pub(crate) fn back_input(g: &Matrix, w: &[f64], fan_in: usize) -> Matrix {
    let n = g.cols;
    debug_assert_eq!(w.len(), n * fan_in);
    let mut out = Matrix::zeros(g.rows, fan_in);
    if g.rows == 0 || n == 0 || fan_in == 0 {
        return out;
    }
    // SAFETY: see `affine`.
    unsafe {
        matrixmultiply::dgemm(
            g.rows,
            n,
            fan_in,
            1.0,
            g.data.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            fan_in as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            fan_in as isize,
            1,
        );
    }
    out
}

/// `dw += gᵀ · x`, with `dw` laid out `g.cols × x.cols` row-major.
pub(crate) fn accumulate_weight_grad(g: &Matrix, x: &Matrix, dw: &mut [f64]) {
    assert_eq!(g.rows, x.rows);
    let (m, k, n) = (g.cols, g.rows, x.cols);
    debug_assert_eq!(dw.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: see `affine`; `g` is read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            g.data.as_ptr(),
            1,
            m as isize,
            x.data.as_ptr(),
            n as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
