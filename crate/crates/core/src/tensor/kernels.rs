//! Raw matmul kernels shared by forward and backward passes.
//!
//! Conventions (all row-major):
//!   mm:     c[m,n]  = a[m,k] . b[k,n]
//!   mm_nt:  c[m,n]  = a[m,k] . b[n,k]^T
//!   mm_tn:  c[k,n] += a[m,k]^T . b[m,n]
//!
//! `_acc` variants accumulate into `c` instead of overwriting. Row chunks of
//! the output are independent, so the std build may fan them out across
//! threads; each output element is still produced by a single fixed-order
//! reduction, keeping results bit-identical at any thread count.

#[cfg(feature = "std")]
const PAR_THRESHOLD: usize = 1 << 17;

/// Run `f(row_start, out_chunk)` over row chunks of `out`, possibly in
/// parallel.
fn for_row_chunks(out: &mut [f64], rows: usize, row_len: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    #[cfg(feature = "std")]
    {
        let threads = super::max_threads().min(rows.max(1));
        if threads > 1 && rows * row_len >= PAR_THRESHOLD / 8 {
            let chunk_rows = rows.div_ceil(threads);
            std::thread::scope(|scope| {
                for (ci, chunk) in out.chunks_mut(chunk_rows * row_len).enumerate() {
                    let f = &f;
                    scope.spawn(move || f(ci * chunk_rows, chunk));
                }
            });
            return;
        }
    }
    let _ = (rows, row_len);
    f(0, out);
}

fn mm_chunk(a: &[f64], b: &[f64], c: &mut [f64], row0: usize, k: usize, n: usize, acc: bool) {
    if !acc {
        c.fill(0.0);
    }
    for (r, crow) in c.chunks_mut(n).enumerate() {
        let i = row0 + r;
        let arow = &a[i * k..(i + 1) * k];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += ail * bv;
            }
        }
    }
}

pub fn mm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for_row_chunks(c, m, n, |row0, chunk| mm_chunk(a, b, chunk, row0, k, n, false));
}

pub fn mm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for_row_chunks(c, m, n, |row0, chunk| mm_chunk(a, b, chunk, row0, k, n, true));
}

fn mm_nt_chunk(a: &[f64], b: &[f64], c: &mut [f64], row0: usize, k: usize, n: usize) {
    for (r, crow) in c.chunks_mut(n).enumerate() {
        let i = row0 + r;
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut dot = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                dot += av * bv;
            }
            *cv += dot;
        }
    }
}

pub fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    c.fill(0.0);
    for_row_chunks(c, m, n, |row0, chunk| mm_nt_chunk(a, b, chunk, row0, k, n));
}

pub fn mm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for_row_chunks(c, m, n, |row0, chunk| mm_nt_chunk(a, b, chunk, row0, k, n));
}

pub fn mm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for_row_chunks(c, k, n, |row0, chunk| {
        for (r, crow) in chunk.chunks_mut(n).enumerate() {
            let l = row0 + r;
            for i in 0..m {
                let ail = a[i * k + l];
                if ail == 0.0 {
                    continue;
                }
                let brow = &b[i * n..(i + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += ail * bv;
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;
    use alloc::vec::Vec;

    fn naive_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_match_naive_reference() {
        let mut rng = Rng::new(9);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (7, 2, 9), (16, 16, 16)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.next_normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.next_normal()).collect();
            let want = naive_mm(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            mm(&a, &b, &mut c, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            // b stored transposed for mm_nt
            let mut bt = vec![0.0; k * n];
            for l in 0..k {
                for j in 0..n {
                    bt[j * k + l] = b[l * n + j];
                }
            }
            let mut c2 = vec![0.0; m * n];
            mm_nt(&a, &bt, &mut c2, m, k, n);
            for (x, y) in c2.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            // a^T . g via mm_tn_acc equals naive on transposed a
            let g: Vec<f64> = (0..m * n).map(|_| rng.next_normal()).collect();
            let mut c3 = vec![0.0; k * n];
            mm_tn_acc(&a, &g, &mut c3, m, k, n);
            let mut a_t = vec![0.0; k * m];
            for i in 0..m {
                for l in 0..k {
                    a_t[l * m + i] = a[i * k + l];
                }
            }
            let want3 = naive_mm(&a_t, &g, k, m, n);
            for (x, y) in c3.iter().zip(&want3) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[cfg(feature = "std")]
    #[test]
    fn threaded_matches_single_threaded() {
        let mut rng = Rng::new(4);
        let (m, k, n) = (64, 48, 96);
        let a: Vec<f64> = (0..m * k).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.next_normal()).collect();
        let mut c1 = vec![0.0; m * n];
        super::super::set_max_threads(1);
        mm(&a, &b, &mut c1, m, k, n);
        let mut c4 = vec![0.0; m * n];
        super::super::set_max_threads(4);
        mm(&a, &b, &mut c4, m, k, n);
        super::super::set_max_threads(1);
        assert_eq!(c1, c4);
    }
}
