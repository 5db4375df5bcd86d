use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor2};
use crate::{Error, Result};

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn l2_norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Pulls an upstream gradient through `p = softmax(v)`.
pub fn softmax_backward<T: Real>(p: &[T], dp: &[T]) -> Vec<T> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

pub fn log_softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "log_softmax" });
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = v.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    Ok(v.iter().map(|&x| x - lse).collect())
}

/// `ln(1 + e^x)`, written to stay finite for large `|x|`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Column means of a matrix (mean over rows).
pub fn mean_rows<T: Real>(x: &Tensor2<T>) -> Vec<T> {
    let mut out = vec![T::zero(); x.cols()];
    for row in x.iter_rows() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    let n = T::lit(x.rows() as f64);
    out.iter_mut().for_each(|o| *o = *o / n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0f64, -(3.0f64).ln()]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_constant_is_uniform() {
        for c in [-40.0f64, 0.0, 3.5, 700.0] {
            let p = softmax(&[c, c, c]).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax(&[0.0f64, f64::NAN]).is_err());
    }

    #[test]
    fn softplus_is_positive_and_tame() {
        assert!((softplus(0.0f64) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-745.0f64) >= 0.0);
        assert!(softplus(-30.0f64) > 0.0);
        assert_eq!(softplus(1000.0f64), 1000.0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in proptest::collection::vec(-30.0f64..30.0, 1..12),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&v).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_backward_matches_finite_differences(
            v in proptest::collection::vec(-3.0f64..3.0, 2..6),
            g in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let g = &g[..v.len()];
            let p = softmax(&v).unwrap();
            let analytic = softmax_backward(&p, g);
            let h = 1e-6;
            for i in 0..v.len() {
                let mut up = v.clone();
                up[i] += h;
                let mut dn = v.clone();
                dn[i] -= h;
                let fu = dot(&softmax(&up).unwrap(), g);
                let fd = dot(&softmax(&dn).unwrap(), g);
                prop_assert!((analytic[i] - (fu - fd) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }
}
