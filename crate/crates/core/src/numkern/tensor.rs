use crate::error::KernelError;

/// Dense row-major matrix of `f64`. Column vectors are `n x 1` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Tensor2D { rows, cols, data })
    }

    /// Builds a tensor from nested rows. Panics on ragged input; intended for tests and literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor2D { rows: r, cols: c, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor2D {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2D::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
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
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut t = Tensor2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Standard matrix product. The inner loop runs over `k` in row-major order for a
    /// fixed accumulation sequence.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D, KernelError> {
        if self.cols != other.rows {
            return Err(KernelError::dims("matmul", self.shape(), other.shape()));
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.cols {
                let mut acc = 0.0;
                for (k, &a) in a_row.iter().enumerate() {
                    acc += a * other.data[k * other.cols + j];
                }
                out.data[i * other.cols + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn hadamard(&self, other: &Tensor2D) -> Result<Tensor2D, KernelError> {
        if self.shape() != other.shape() {
            return Err(KernelError::dims("hadamard", self.shape(), other.shape()));
        }
        Ok(Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor2D) -> Result<Tensor2D, KernelError> {
        if self.shape() != other.shape() {
            return Err(KernelError::dims("add", self.shape(), other.shape()));
        }
        Ok(Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

// Slice-level helpers used on the hot training path. Shapes are checked by callers;
// debug builds assert them.

/// `out = w · x` for `w` of shape `out.len() x x.len()`.
#[inline]
pub fn matvec_into(w: &Tensor2D, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w.data[i * w.cols..(i + 1) * w.cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

pub fn matvec(w: &Tensor2D, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows];
    matvec_into(w, x, &mut out);
    out
}

/// `out += wᵀ · dy`.
#[inline]
pub fn matvec_t_accum(w: &Tensor2D, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, dy.len());
    debug_assert_eq!(w.cols, out.len());
    for (i, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w.data[i * w.cols..(i + 1) * w.cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

/// `g += scale · dy ⊗ x`.
#[inline]
pub fn outer_accum(g: &mut Tensor2D, dy: &[f64], x: &[f64], scale: f64) {
    debug_assert_eq!(g.rows, dy.len());
    debug_assert_eq!(g.cols, x.len());
    let cols = g.cols;
    for (i, &d) in dy.iter().enumerate() {
        let s = d * scale;
        if s == 0.0 {
            continue;
        }
        let row = &mut g.data[i * cols..(i + 1) * cols];
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += s * xv;
        }
    }
}
