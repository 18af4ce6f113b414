//! Radix-2 complex FFT over power-of-two axes of a row-major tensor.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math::{cos, sin};

/// In-place forward transform `X_k = sum_j x_j exp(-2 pi i jk / n)`.
/// `data.len()` must be a power of two.
pub(crate) fn fft_in_place(data: &mut [Complex64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let angle = -2.0 * core::f64::consts::PI / len as f64;
        let w_len = Complex64::new(cos(angle), sin(angle));
        for chunk in data.chunks_mut(len) {
            let mut w = Complex64::new(1.0, 0.0);
            let (lo, hi) = chunk.split_at_mut(len / 2);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let v = *b * w;
                *b = *a - v;
                *a += v;
                w *= w_len;
            }
        }
        len <<= 1;
    }
}

/// Forward transform along every axis of an `n^dim` tensor.
pub(crate) fn fft_nd(data: &mut [Complex64], n: usize, dim: usize) {
    let mut line: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let outer = n.pow(axis as u32);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + j * stride];
                }
                fft_in_place(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}
