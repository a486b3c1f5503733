use num_traits::Float;

/// Floating-point element type of tensors and networks.
///
/// Training runs in `f32`; `f64` exists so finite-difference checks can
/// evaluate the loss without single-precision cancellation.
pub trait Scalar: Float + Default + Send + Sync + std::fmt::Debug + 'static {
    /// `c = alpha * a * b + beta * c` for strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows as isize - 1) as usize * rs as usize + (cols as isize - 1) as usize * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs out of bounds");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs out of bounds");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every pointer offset reachable from the given
                // dimensions and strides was bounds-checked above.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0f32, 2., 3., 4., 5., 6.]; // 2x3
        let b = [7.0f32, 8., 9., 10., 11., 12.]; // 3x2
        let mut c = [0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [58., 64., 139., 154.]);
        // transposed view of b
        let bt = [7.0f32, 9., 11., 8., 10., 12.];
        let mut c2 = [0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &a, (3, 1), &bt, (1, 3), 0.0, &mut c2, (2, 1));
        assert_eq!(c, c2);
    }
}
