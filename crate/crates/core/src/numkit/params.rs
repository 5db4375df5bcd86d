use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::Real;

/// A bundle of trainable tensors, each paired with its gradient accumulator.
pub trait Parameters<T: Real> {
    /// Calls `f(name, values, grads)` once per tensor, in a fixed order.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T]));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, _, g| g.fill(T::zero()));
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, v, _| n += v.len());
        n
    }

    fn flat_grads(&mut self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit_params("", &mut |_, _, g| out.extend_from_slice(g));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn flatten_params<T: Real, P: Parameters<T> + ?Sized>(p: &mut P) -> Vec<T> {
    let mut out = Vec::new();
    p.visit_params("", &mut |_, v, _| out.extend_from_slice(v));
    out
}

/// Overwrites every parameter from a flat buffer laid out like [`flatten_params`].
pub fn load_flat_params<T: Real, P: Parameters<T> + ?Sized>(p: &mut P, flat: &[T]) {
    let mut offset = 0;
    p.visit_params("", &mut |_, v, _| {
        v.copy_from_slice(&flat[offset..offset + v.len()]);
        offset += v.len();
    });
    assert_eq!(offset, flat.len(), "flat parameter buffer length");
}

/// Sets flat parameter `index` to `value`; returns the previous value and the
/// name of the tensor it lives in.
pub fn nudge_param<T: Real, P: Parameters<T> + ?Sized>(
    p: &mut P,
    index: usize,
    value: T,
) -> (T, String) {
    let mut offset = 0;
    let mut found = None;
    p.visit_params("", &mut |name, v, _| {
        if found.is_none() && index < offset + v.len() {
            let old = v[index - offset];
            v[index - offset] = value;
            found = Some((old, format!("{name}[{}]", index - offset)));
        }
        offset += v.len();
    });
    found.expect("parameter index out of range")
}
