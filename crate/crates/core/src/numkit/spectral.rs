//! Real DFT along the time (row) axis of a window of feature vectors.
//!
//! Windows are a handful of rows long, so the transform is evaluated
//! directly against a twiddle table. For every non-DC bin the first sample of
//! each column is subtracted before summation; this leaves `X_k` (k > 0)
//! unchanged mathematically and makes constant columns contribute exactly
//! zero outside the DC bin.

use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor2};
use crate::{Error, Result};

struct Twiddles<T> {
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> Twiddles<T> {
    fn new(w: usize) -> Self {
        let mut cos = Vec::with_capacity(w);
        let mut sin = Vec::with_capacity(w);
        for m in 0..w {
            // Quarter turns are snapped so w = 4 is evaluated exactly.
            let (c, s) = if (4 * m) % w == 0 {
                match (4 * m) / w {
                    0 => (1.0, 0.0),
                    1 => (0.0, 1.0),
                    2 => (-1.0, 0.0),
                    _ => (0.0, -1.0),
                }
            } else {
                let theta = core::f64::consts::TAU * m as f64 / w as f64;
                (libm::cos(theta), libm::sin(theta))
            };
            cos.push(T::lit(c));
            sin.push(T::lit(s));
        }
        Self { cos, sin }
    }

    /// Complex bin `k` of column `col`.
    fn bin(&self, x: &Tensor2<T>, col: usize, k: usize) -> (T, T) {
        let w = x.rows();
        if k == 0 {
            let sum = (0..w).fold(T::zero(), |acc, n| acc + x.get(n, col));
            return (sum, T::zero());
        }
        let origin = x.get(0, col);
        let (mut re, mut im) = (T::zero(), T::zero());
        for n in 1..w {
            let y = x.get(n, col) - origin;
            let m = (k * n) % w;
            re = re + y * self.cos[m];
            im = im - y * self.sin[m];
        }
        (re, im)
    }
}

/// Per-bin squared magnitude summed over columns:
/// `out[k] = Σ_j |DFT(x[:, j])[k]|²` for `k = 0..=w/2`.
pub fn rfft_mag_sq<T: Real>(x: &Tensor2<T>) -> Result<Vec<T>> {
    let w = x.rows();
    if w < 2 {
        return Err(Error::WindowTooShort { len: w });
    }
    let tw = Twiddles::new(w);
    let mut out = vec![T::zero(); w / 2 + 1];
    for col in 0..x.cols() {
        for (k, o) in out.iter_mut().enumerate() {
            let (re, im) = tw.bin(x, col, k);
            *o = *o + re * re + im * im;
        }
    }
    Ok(out)
}

/// Magnitudes `|DFT(x[:, j])[k]|` for the lowest `n_bins` bins of every
/// column, returned as an `n_bins × cols` matrix.
pub fn column_dft_magnitudes<T: Real>(x: &Tensor2<T>, n_bins: usize) -> Result<Tensor2<T>> {
    let w = x.rows();
    if w < 2 {
        return Err(Error::WindowTooShort { len: w });
    }
    if n_bins == 0 || n_bins > w / 2 + 1 {
        return Err(Error::InvalidConfig(alloc::format!(
            "cannot retain {n_bins} bins of a length-{w} real transform"
        )));
    }
    let tw = Twiddles::new(w);
    let mut out = Tensor2::zeros(n_bins, x.cols());
    for col in 0..x.cols() {
        for k in 0..n_bins {
            let (re, im) = tw.bin(x, col, k);
            out.set(k, col, re.hypot(im));
        }
    }
    Ok(out)
}
