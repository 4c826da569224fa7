//! Slice-level matrix kernels with `f64` accumulation.
//!
//! Every kernel adds into `acc` (row-major `[M,N]`), so callers can
//! accumulate over a batch before rounding once. Summation order is fixed
//! by the loop structure, which makes results bitwise reproducible.

/// `acc += A·B` with `A: [M,K]`, `B: [K,N]`.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], acc: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(acc.len(), m * n);
    for (a_row, acc_row) in a.chunks_exact(k).zip(acc.chunks_exact_mut(n)) {
        for (&a_ip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if a_ip == 0.0 {
                continue;
            }
            let a_ip = a_ip as f64;
            for (c, &b_pj) in acc_row.iter_mut().zip(b_row) {
                *c += a_ip * b_pj as f64;
            }
        }
    }
}

/// `acc += Aᵀ·B` with `A: [K,M]`, `B: [K,N]`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], acc: &mut [f64]) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(acc.len(), m * n);
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&a_pi, acc_row) in a_row.iter().zip(acc.chunks_exact_mut(n)) {
            if a_pi == 0.0 {
                continue;
            }
            let a_pi = a_pi as f64;
            for (c, &b_pj) in acc_row.iter_mut().zip(b_row) {
                *c += a_pi * b_pj as f64;
            }
        }
    }
}

/// `acc += A·Bᵀ` with `A: [M,K]`, `B: [N,K]`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], acc: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(acc.len(), m * n);
    for (a_row, acc_row) in a.chunks_exact(k).zip(acc.chunks_exact_mut(n)) {
        for (b_row, c) in b.chunks_exact(k).zip(acc_row.iter_mut()) {
            *c += dot(a_row, b_row);
        }
    }
}

const LANES: usize = 8;

/// Dot product split over eight independent partial sums, combined in lane order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            lanes[l] += xa[l] as f64 * xb[l] as f64;
        }
    }
    let mut tail = 0.0f64;
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x as f64 * y as f64;
    }
    lanes.iter().sum::<f64>() + tail
}

pub fn round_f32(acc: &[f64]) -> Vec<f32> {
    acc.iter().map(|&x| x as f32).collect()
}
