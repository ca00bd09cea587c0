//! Separable n-dimensional complex FFT on a row-major buffer, one rustfft
//! pass per axis. Non-contiguous axes are transposed to contiguous rows first.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::par;

pub struct FftNd {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("dims", &self.dims).finish()
    }
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims: dims.to_vec(),
            forward: dims.iter().map(|&d| planner.plan_fft_forward(d)).collect(),
            inverse: dims.iter().map(|&d| planner.plan_fft_inverse(d)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Unnormalised inverse; divide by [`FftNd::len`] to invert `forward`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len());
        let n = self.dims.len();
        let mut scratch = vec![Complex64::default(); data.len()];
        for axis in 0..n {
            let len = self.dims[axis];
            let inner: usize = self.dims[axis + 1..].iter().product();
            let plan = &plans[axis];
            if inner == 1 {
                par::for_each_chunk_mut(data, len, |_, line| plan.process(line));
                continue;
            }
            // Each block of `len * inner` values is a [len][inner] matrix;
            // transpose to [inner][len], transform rows, transpose back.
            let block = len * inner;
            {
                let src: &[Complex64] = data;
                par::for_each_chunk_mut(&mut scratch, block, |b, out| {
                    transpose(&src[b * block..(b + 1) * block], out, len, inner);
                });
            }
            par::for_each_chunk_mut(&mut scratch, len, |_, line| plan.process(line));
            {
                let src: &[Complex64] = &scratch;
                par::for_each_chunk_mut(data, block, |b, out| {
                    transpose(&src[b * block..(b + 1) * block], out, inner, len);
                });
            }
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Smallest `2^a 3^b 5^c` not below `n`.
pub fn smooth_size(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}
