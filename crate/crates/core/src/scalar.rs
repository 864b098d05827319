//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Row/column strides of a dense matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Strides { row: cols, col: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub const fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols }
    }

    fn span(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row + (cols - 1) * self.col + 1
        }
    }
}

/// Floating-point type the network and metrics can run in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + crate::net::DirectKernels
{
    /// `c ← alpha·a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
        sc: Strides,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_spans(m: usize, k: usize, n: usize, a: (usize, Strides), b: (usize, Strides), c: (usize, Strides)) {
    assert!(a.1.span(m, k) <= a.0, "gemm: lhs view out of bounds");
    assert!(b.1.span(k, n) <= b.0, "gemm: rhs view out of bounds");
    assert!(c.1.span(m, n) <= c.0, "gemm: output view out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                sa: Strides,
                b: &[Self],
                sb: Strides,
                beta: Self,
                c: &mut [Self],
                sc: Strides,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_spans(m, k, n, (a.len(), sa), (b.len(), sb), (c.len(), sc));
                // SAFETY: every view was bounds-checked against its slice above and
                // `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        sa.row as isize,
                        sa.col as isize,
                        b.as_ptr(),
                        sb.row as isize,
                        sb.col as isize,
                        beta,
                        c.as_mut_ptr(),
                        sc.row as isize,
                        sc.col as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        f64::gemm(
            m,
            k,
            n,
            1.0,
            &a,
            Strides::row_major(k),
            &b,
            Strides::row_major(n),
            0.0,
            &mut c,
            Strides::row_major(n),
        );
        for (x, y) in c.iter().zip(naive(m, k, n, &a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_transposed_lhs() {
        // a stored as k×m row-major, used as its transpose.
        let (m, k, n) = (2, 3, 2);
        let at: Vec<f32> = vec![1., 2., 3., 4., 5., 6.];
        let b: Vec<f32> = vec![1., 0., 0., 1., 1., 1.];
        let mut c = vec![0.0f32; m * n];
        f32::gemm(
            m,
            k,
            n,
            1.0,
            &at,
            Strides::transposed(m),
            &b,
            Strides::row_major(n),
            0.0,
            &mut c,
            Strides::row_major(n),
        );
        // a = [[1,3,5],[2,4,6]]
        assert_eq!(c, vec![6., 8., 8., 10.]);
    }
}
