//! Safe strided wrapper over `matrixmultiply::dgemm`.

#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` view.
    pub fn rm(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

impl<'a> MatMut<'a> {
    pub fn rm(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!(a.rows, c.rows, "output rows");
    assert_eq!(b.cols, c.cols, "output cols");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for i in 0..c.rows {
            for j in 0..c.cols {
                let v = &mut c.data[i * c.row_stride + j * c.col_stride];
                *v = if beta == 0.0 { 0.0 } else { beta * *v };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is uniquely
    // borrowed, so dgemm reads and writes only inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr(),
            c.row_stride as isize,
            c.col_stride as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_transpose_product() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]; a^T b = [[26,30],[38,44]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(1.0, MatRef::rm(&a, 2, 2).t(), MatRef::rm(&b, 2, 2), 0.0, MatMut::rm(&mut c, 2, 2));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn empty_inner_dimension_zeroes_output() {
        let mut c = [5.0; 4];
        gemm(1.0, MatRef::rm(&[], 2, 0), MatRef::rm(&[], 0, 2), 0.0, MatMut::rm(&mut c, 2, 2));
        assert_eq!(c, [0.0; 4]);
    }
}
