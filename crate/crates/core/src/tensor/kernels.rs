//! Plain loops for the dense products. Each output row is computed from its
//! own input row only, with a fixed summation order, so a row's value never
//! depends on what else is in the batch.

/// `c += a * b` with `a: [m x k]`, `b: [k x n]`, `c: [m x n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        while p < k {
            let ap = arow[p];
            let bp = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += ap * bp[j];
            }
            p += 1;
        }
    }
}

/// `c += a^T * d` with `a: [m x k]`, `d: [m x n]`, `c: [k x n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], d: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(d.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let drow = &d[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            if ap == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += ap * drow[j];
            }
        }
    }
}

/// `c += d * b^T` with `d: [m x n]`, `b: [k x n]`, `c: [m x k]`.
pub(crate) fn gemm_nt_acc(d: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut bt = vec![0.0; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    gemm_acc(d, &bt, c, m, n, k);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive_products() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_acc(&a, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T d where a: [m x k], d: [m x n]
        let d: Vec<f64> = (0..m * n).map(|v| v as f64 - 4.0).collect();
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c2 = vec![0.0; k * n];
        gemm_tn_acc(&a, &d, &mut c2, m, k, n);
        for (x, y) in c2.iter().zip(naive(&at, &d, k, m, n)) {
            assert!((x - y).abs() < 1e-12);
        }

        // d b^T where b: [k x n]
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c3 = vec![0.0; m * k];
        gemm_nt_acc(&d, &b, &mut c3, m, k, n);
        for (x, y) in c3.iter().zip(naive(&d, &bt, m, n, k)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
