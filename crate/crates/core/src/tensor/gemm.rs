use super::Real;

/// Row and column stride of a matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Layout { rs: cols, cs: 1 }
    }

    pub fn transposed(cols: usize) -> Self {
        Layout { rs: 1, cs: cols }
    }

    fn fits(self, rows: usize, cols: usize, len: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < len
    }
}

/// `c = alpha * a·b + beta * c` where `a` is m×k and `b` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    assert!(la.fits(m, k, a.len()), "gemm: lhs out of bounds");
    assert!(lb.fits(k, n, b.len()), "gemm: rhs out of bounds");
    assert!(lc.fits(m, n, c.len()), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds checked above; `c` is a unique borrow distinct from `a`, `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        // [1 2; 3 4] · [5; 6] = [17; 39]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0];
        let mut c = [0.0f64; 2];
        gemm(
            2,
            2,
            1,
            1.0,
            &a,
            Layout::row_major(2),
            &b,
            Layout::row_major(1),
            0.0,
            &mut c,
            Layout::row_major(1),
        );
        assert_eq!(c, [17.0, 39.0]);
        // aᵀ · b = [1*5+3*6; 2*5+4*6]
        gemm(
            2,
            2,
            1,
            1.0,
            &a,
            Layout::transposed(2),
            &b,
            Layout::row_major(1),
            1.0,
            &mut c,
            Layout::row_major(1),
        );
        assert_eq!(c, [17.0 + 23.0, 39.0 + 34.0]);
    }
}
