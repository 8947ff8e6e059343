/// Lower-triangular Cholesky factor stored row by row.
///
/// Row `i` holds `i + 1` entries starting at offset `i (i + 1) / 2`, so
/// appending a row never moves existing data.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct PackedCholesky {
    n: usize,
    data: Vec<f64>,
}

impl PackedCholesky {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            n: 0,
            data: Vec::with_capacity(n * (n + 1) / 2),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.row(i)[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.row(i)[j]
        }
    }

    /// Solves `L v = b` in place.
    pub fn forward_solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
        }
    }

    /// Solves `Lᵀ x = b` for a column-major right-hand side with `cols`
    /// columns stored row-major as `n × cols`.
    pub fn backward_solve_rows(&self, b: &mut [f64], cols: usize) {
        debug_assert_eq!(b.len(), self.n * cols);
        for i in (0..self.n).rev() {
            let d = self.diag(i);
            for c in 0..cols {
                b[i * cols + c] /= d;
            }
            // Scatter x_i into the rows above through column i of Lᵀ.
            let row = self.row(i);
            for (k, l) in row[..i].iter().enumerate() {
                for c in 0..cols {
                    b[k * cols + c] -= l * b[i * cols + c];
                }
            }
        }
    }

    /// Appends a row `[off_diag..., diag]`.
    pub fn push_row(&mut self, off_diag: &[f64], diag: f64) {
        debug_assert_eq!(off_diag.len(), self.n);
        debug_assert!(diag > 0.0);
        self.data.extend_from_slice(off_diag);
        self.data.push(diag);
        self.n += 1;
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
