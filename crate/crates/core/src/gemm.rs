//! Bounds-checked wrapper over `matrixmultiply::dgemm`.
//!
//! Matrices are described as strided views into slices. Input views may
//! overlap (convolution patches are read straight out of the signal with a
//! row stride smaller than the row width); the output view must not.

/// Strided read-only matrix view: element `(i, j)` is `data[offset + i*rs + j*cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        View {
            data,
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs;
        assert!(last < self.data.len(), "gemm view out of bounds");
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, where `c` is row-major with
/// row stride `rsc` starting at `c_offset`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    c_offset: usize,
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!(rsc >= n, "output rows overlap");
    assert!(c_offset + (m - 1) * rsc + n <= c.len(), "gemm output out of bounds");
    // SAFETY: every element touched is inside the slices (checked above), the
    // output rows are disjoint because rsc >= n, and `c` is borrowed mutably
    // so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            rsc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(2, 3, 4, 1.0, View::row_major(&a, 3), View::row_major(&b, 4), 1.0, &mut c, 0, 4);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = 1.0 + (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], expect);
            }
        }
    }

    #[test]
    fn overlapping_input_rows() {
        // rows are sliding windows of length 2 over [1,2,3,4]
        let signal = [1.0, 2.0, 3.0, 4.0];
        let a = View { data: &signal, offset: 0, rs: 1, cs: 1 };
        let kernel = [1.0, -1.0];
        let mut out = vec![0.0; 3];
        gemm(3, 2, 1, 1.0, a, View::row_major(&kernel, 1), 0.0, &mut out, 0, 1);
        assert_eq!(out, vec![-1.0, -1.0, -1.0]);
    }
}
