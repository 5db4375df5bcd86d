use alloc::string::String;

use super::{flatten_params, nudge_param, Parameters, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub n_params: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `objective` evaluates the scalar loss; `backward` must fill the gradient
/// accumulators of `params` (they are zeroed beforehand). Every scalar
/// parameter is perturbed by `±h` in turn.
pub fn grad_check<T, P, F, B>(
    params: &mut P,
    objective: F,
    mut backward: B,
    h: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    P: Parameters<T>,
    F: Fn(&P) -> T,
    B: FnMut(&mut P),
{
    let first = objective(params);
    let second = objective(params);
    if !same_bits(first, second) {
        return Err(Error::NonDeterministic {
            param: String::from("<initial point>"),
        });
    }
    if !first.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }

    params.zero_grad();
    backward(params);
    let analytic = params.flat_grads();
    let values = flatten_params(params);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        n_params: values.len(),
    };
    let step = T::lit(h);
    for (i, (&v, &a)) in values.iter().zip(&analytic).enumerate() {
        let (_, name) = nudge_param(params, i, v + step);
        let up = objective(params);
        nudge_param(params, i, v - step);
        let down = objective(params);
        nudge_param(params, i, v);
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        let numeric = (up.as_f64() - down.as_f64()) / (2.0 * h);
        let a = a.as_f64();
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if rel > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst_param = name;
        }
    }

    let again = objective(params);
    if !same_bits(first, again) {
        return Err(Error::NonDeterministic {
            param: report.worst_param,
        });
    }
    Ok(report)
}

fn same_bits<T: Real>(a: T, b: T) -> bool {
    a.as_f64().to_bits() == b.as_f64().to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cell::Cell;

    struct Scalar {
        w: [f64; 1],
        g: [f64; 1],
    }

    impl Parameters<f64> for Scalar {
        fn visit_params(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
            f("w", &mut self.w, &mut self.g);
        }
    }

    #[test]
    fn square_at_three() {
        let mut p = Scalar { w: [3.0], g: [0.0] };
        let report = grad_check(&mut p, |p| p.w[0] * p.w[0], |p| p.g[0] = 2.0 * p.w[0], 1e-5)
            .unwrap();
        assert!(report.max_rel_err <= 1e-10, "{report:?}");
        assert_eq!(report.n_params, 1);
        assert_eq!(p.w[0], 3.0);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut p = Scalar { w: [3.0], g: [0.0] };
        let report =
            grad_check(&mut p, |p| p.w[0] * p.w[0], |p| p.g[0] = 5.0, 1e-5).unwrap();
        assert!(report.max_rel_err > 0.1);
        assert_eq!(report.worst_param, "w[0]");
    }

    #[test]
    fn nondeterministic_objective_is_rejected() {
        let mut p = Scalar { w: [1.0], g: [0.0] };
        let calls = Cell::new(0u32);
        let err = grad_check(
            &mut p,
            |p| {
                calls.set(calls.get() + 1);
                p.w[0] + calls.get() as f64
            },
            |_| {},
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }
}
