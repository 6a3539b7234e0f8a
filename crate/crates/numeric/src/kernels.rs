//! Low-level compute kernels shared by forward and backward passes.
//!
//! All reductions use a fixed accumulation order so results are
//! bit-identical between runs regardless of thread count: parallelism
//! only ever splits work across disjoint output rows.

use rayon::prelude::*;

use crate::element::Element;

/// Dot product with an 8-lane fixed reassociation pattern. The lane
/// split lets LLVM vectorize while keeping a deterministic result.
#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 8;
    let mut acc = [T::zero(); 8];
    for c in 0..chunks {
        let i = c * 8;
        for l in 0..8 {
            acc[l] += a[i + l] * b[i + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[j*rows + i] = x[i*cols + j]` — transpose a row-major matrix.
pub fn transpose<T: Element>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Row-parallel work threshold; below it the rayon dispatch overhead
/// outweighs the win.
const PAR_FLOP_THRESHOLD: usize = 1 << 20;

/// C[m,n] = A[m,k] @ B[k,n]. Packs `B` transposed so every dot runs on
/// contiguous slices.
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let bt = transpose(b, k, n);
    matmul_packed(a, &bt, m, k, n)
}

/// Same as [`matmul`] but `bt` is already `B` transposed (`[n, k]` row-major).
pub fn matmul_packed<T: Element>(a: &[T], bt: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let row = |i: usize, out_row: &mut [T]| {
        let ar = &a[i * k..i * k + k];
        for j in 0..n {
            out_row[j] = dot(ar, &bt[j * k..j * k + k]);
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
    out
}

/// Numerically stable softmax over each contiguous row of `cols` values,
/// in place. Rows whose every entry is `-inf` become all zeros and are
/// counted in the return value.
pub fn softmax_rows<T: Element>(x: &mut [T], cols: usize) -> u64 {
    debug_assert_eq!(x.len() % cols.max(1), 0);
    let mut degenerate = 0u64;
    for row in x.chunks_mut(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        if max == T::neg_infinity() {
            for v in row.iter_mut() {
                *v = T::zero();
            }
            degenerate += 1;
            continue;
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    degenerate
}

/// Gelu (tanh approximation) and its derivative; the same approximation
/// is used in forward and backward so gradient checks close exactly.
#[inline]
pub fn gelu<T: Element>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = T::from_f64(0.044_715);
    let inner = c * (x + k * x * x * x);
    T::from_f64(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    let d_inner = c * (T::one() + T::from_f64(3.0) * k * x * x);
    half * (T::one() + t) + half * x * sech2 * d_inner
}
