// Thin safe wrappers over `matrixmultiply` for row-major operands.

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Logical rows×cols matrix; stored transposed when `trans`.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! gemm_impl {
    ($name:ident, $t:ty, $kernel:path) => {
        #[allow(clippy::too_many_arguments)]
        pub(crate) fn $name(
            m: usize,
            k: usize,
            n: usize,
            a: &[$t],
            trans_a: bool,
            b: &[$t],
            trans_b: bool,
            beta: $t,
            c: &mut [$t],
        ) {
            assert!(a.len() >= m * k, "gemm: lhs too short");
            assert!(b.len() >= k * n, "gemm: rhs too short");
            assert!(c.len() >= m * n, "gemm: output too short");
            if m == 0 || n == 0 {
                return;
            }
            let (rsa, csa) = strides(m, k, trans_a);
            let (rsb, csb) = strides(k, n, trans_b);
            // SAFETY: bounds asserted above; strides describe dense row-major
            // (or transposed) layouts inside those bounds.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    };
}

gemm_impl!(sgemm, f32, matrixmultiply::sgemm);
gemm_impl!(dgemm, f64, matrixmultiply::dgemm);
