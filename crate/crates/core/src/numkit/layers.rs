use alloc::vec;
use alloc::vec::Vec;

use super::params::join;
use super::{dot, Parameters, Real, Tensor2};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Affine map `y = W x + b` with gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap<T> {
    pub weight: Tensor2<T>,
    /// Empty when the map has no bias.
    pub bias: Vec<T>,
    pub grad_weight: Tensor2<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> LinearMap<T> {
    pub fn zeros(d_out: usize, d_in: usize, with_bias: bool) -> Self {
        let nb = if with_bias { d_out } else { 0 };
        Self {
            weight: Tensor2::zeros(d_out, d_in),
            bias: vec![T::zero(); nb],
            grad_weight: Tensor2::zeros(d_out, d_in),
            grad_bias: vec![T::zero(); nb],
        }
    }

    /// Weights and bias drawn uniformly from `±1/√d_in`.
    pub fn init(d_out: usize, d_in: usize, with_bias: bool, rng: &mut SeededRng) -> Self {
        let mut map = Self::zeros(d_out, d_in, with_bias);
        let bound = 1.0 / libm::sqrt(d_in as f64);
        for w in map.weight.data_mut() {
            *w = T::lit(rng.uniform_in(-bound, bound));
        }
        for b in &mut map.bias {
            *b = T::lit(rng.uniform_in(-bound, bound));
        }
        map
    }

    pub fn from_weight(weight: Tensor2<T>, bias: Option<Vec<T>>) -> Result<Self> {
        let (d_out, d_in) = weight.shape();
        let bias = bias.unwrap_or_default();
        if !bias.is_empty() && bias.len() != d_out {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: (d_out, d_in),
                rhs: (bias.len(), 1),
            });
        }
        Ok(Self {
            grad_weight: Tensor2::zeros(d_out, d_in),
            grad_bias: vec![T::zero(); bias.len()],
            weight,
            bias,
        })
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }

    fn check_in(&self, len: usize) -> Result<()> {
        if len != self.d_in() {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: self.weight.shape(),
                rhs: (len, 1),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_in(x.len())?;
        let mut y: Vec<T> = self.weight.iter_rows().map(|row| dot(row, x)).collect();
        for (o, &b) in y.iter_mut().zip(&self.bias) {
            *o = *o + b;
        }
        Ok(y)
    }

    /// Accumulates `∂L/∂W += dy xᵀ`, `∂L/∂b += dy` and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &[T], dy: &[T]) -> Result<Vec<T>> {
        self.check_in(x.len())?;
        if dy.len() != self.d_out() {
            return Err(Error::ShapeMismatch {
                op: "linear backward",
                lhs: self.weight.shape(),
                rhs: (dy.len(), 1),
            });
        }
        let d_in = self.d_in();
        let gw = self.grad_weight.data_mut();
        for (i, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (acc, &xi) in gw[i * d_in..(i + 1) * d_in].iter_mut().zip(x) {
                *acc = *acc + g * xi;
            }
        }
        for (acc, &g) in self.grad_bias.iter_mut().zip(dy) {
            *acc = *acc + g;
        }
        self.backward_input(dy)
    }

    /// `Wᵀ dy` without touching the accumulators.
    pub fn backward_input(&self, dy: &[T]) -> Result<Vec<T>> {
        if dy.len() != self.d_out() {
            return Err(Error::ShapeMismatch {
                op: "linear backward",
                lhs: self.weight.shape(),
                rhs: (dy.len(), 1),
            });
        }
        let mut dx = vec![T::zero(); self.d_in()];
        for (row, &g) in self.weight.iter_rows().zip(dy) {
            if g == T::zero() {
                continue;
            }
            for (d, &w) in dx.iter_mut().zip(row) {
                *d = *d + g * w;
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for LinearMap<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f(
            &join(prefix, "weight"),
            self.weight.data_mut(),
            self.grad_weight.data_mut(),
        );
        if self.has_bias() {
            f(&join(prefix, "bias"), &mut self.bias, &mut self.grad_bias);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
    pub grad_gain: Vec<T>,
    pub grad_bias: Vec<T>,
    pub eps: T,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: T,
}

impl<T: Real> LayerNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// Unit gain, zero bias.
    pub fn new(d: usize) -> Self {
        Self::with_eps(d, T::lit(Self::DEFAULT_EPS))
    }

    pub fn with_eps(d: usize, eps: T) -> Self {
        assert!(eps > T::zero(), "layernorm eps must be positive");
        Self {
            gain: vec![T::one(); d],
            bias: vec![T::zero(); d],
            grad_gain: vec![T::zero(); d],
            grad_bias: vec![T::zero(); d],
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, LayerNormCache<T>)> {
        let d = x.len();
        if d < 2 {
            return Err(Error::DimensionTooSmall {
                op: "layernorm",
                dim: d,
                min: 2,
            });
        }
        if d != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "layernorm",
                lhs: (self.dim(), 1),
                rhs: (d, 1),
            });
        }
        let n = T::lit(d as f64);
        let mean = x.iter().copied().sum::<T>() / n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + self.eps).sqrt();
        let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
        let y = xhat
            .iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(&h, (&g, &b))| g * h + b)
            .collect();
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &[T]) -> Vec<T> {
        let d = dy.len();
        let n = T::lit(d as f64);
        let mut g = Vec::with_capacity(d);
        for i in 0..d {
            self.grad_gain[i] = self.grad_gain[i] + dy[i] * cache.xhat[i];
            self.grad_bias[i] = self.grad_bias[i] + dy[i];
            g.push(dy[i] * self.gain[i]);
        }
        let sum_g = g.iter().copied().sum::<T>();
        let sum_gx = dot(&g, &cache.xhat);
        g.iter()
            .zip(&cache.xhat)
            .map(|(&gi, &xi)| cache.inv_std / n * (n * gi - sum_g - xi * sum_gx))
            .collect()
    }
}

impl<T: Real> Parameters<T> for LayerNorm<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f(&join(prefix, "gain"), &mut self.gain, &mut self.grad_gain);
        f(&join(prefix, "bias"), &mut self.bias, &mut self.grad_bias);
    }
}

/// Two affine layers with a tanh in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub hidden: LinearMap<T>,
    pub out: LinearMap<T>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    x: Vec<T>,
    h: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn init(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            hidden: LinearMap::init(d_hidden, d_in, true, rng),
            out: LinearMap::init(d_out, d_hidden, true, rng),
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let h: Vec<T> = self.hidden.forward(x)?.into_iter().map(T::tanh).collect();
        let y = self.out.forward(&h)?;
        Ok((y, MlpCache { x: x.to_vec(), h }))
    }

    pub fn backward(&mut self, cache: &MlpCache<T>, dy: &[T]) -> Result<Vec<T>> {
        let dh = self.out.backward(&cache.h, dy)?;
        let dpre: Vec<T> = dh
            .iter()
            .zip(&cache.h)
            .map(|(&g, &h)| g * (T::one() - h * h))
            .collect();
        self.hidden.backward(&cache.x, &dpre)
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.hidden.visit_params(&join(prefix, "hidden"), f);
        self.out.visit_params(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;

    #[test]
    fn scalar_linear_backward() {
        let mut lin = LinearMap::from_weight(Tensor2::new(1, 1, vec![2.5f64]).unwrap(), None)
            .unwrap();
        let dx = lin.backward(&[4.0], &[1.0]).unwrap();
        assert_eq!(lin.grad_weight.data(), &[4.0]);
        assert_eq!(dx, vec![2.5]);
    }

    #[test]
    fn zero_upstream_leaves_grads_zero() {
        let mut rng = SeededRng::new(3);
        let mut lin = LinearMap::<f64>::init(3, 4, true, &mut rng);
        lin.backward(&[1.0, 2.0, 3.0, 4.0], &[0.0; 3]).unwrap();
        assert!(lin.flat_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_grad_clears_accumulators() {
        let mut rng = SeededRng::new(4);
        let mut lin = LinearMap::<f64>::init(2, 2, true, &mut rng);
        lin.backward(&[1.0, -1.0], &[0.5, 2.0]).unwrap();
        assert!(lin.flat_grads().iter().any(|&g| g != 0.0));
        lin.zero_grad();
        assert!(lin.flat_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_rejects_wrong_width() {
        let lin = LinearMap::<f32>::zeros(2, 3, false);
        assert!(lin.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn layernorm_constant_input_is_zero() {
        let ln = LayerNorm::<f64>::new(5);
        let (y, _) = ln.forward(&[3.25; 5]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_two_point() {
        let ln = LayerNorm::<f64>::with_eps(2, 1e-14);
        let (y, _) = ln.forward(&[1.0, -1.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_zero_gain_outputs_bias() {
        let mut ln = LayerNorm::<f64>::new(3);
        ln.gain = vec![0.0; 3];
        ln.bias = vec![0.1, -0.2, 0.3];
        let (y, _) = ln.forward(&[5.0, -1.0, 2.0]).unwrap();
        assert_eq!(y, ln.bias);
    }

    #[test]
    fn layernorm_needs_two_dims() {
        let ln = LayerNorm::<f64>::new(1);
        assert!(matches!(
            ln.forward(&[1.0]),
            Err(Error::DimensionTooSmall { .. })
        ));
    }

    #[test]
    fn layernorm_statistics() {
        let ln = LayerNorm::<f64>::new(6);
        let x = [0.3, -1.2, 4.0, 2.2, 0.0, -0.7];
        let (y, _) = ln.forward(&x).unwrap();
        let mean = y.iter().sum::<f64>() / 6.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        let xm = x.iter().sum::<f64>() / 6.0;
        let xv = x.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - xv / (xv + 1e-5)).abs() < 1e-12);
    }

    struct LnProbe {
        ln: LayerNorm<f64>,
        x: Vec<f64>,
        gx: Vec<f64>,
        w: Vec<f64>,
    }

    impl Parameters<f64> for LnProbe {
        fn visit_params(
            &mut self,
            prefix: &str,
            f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]),
        ) {
            self.ln.visit_params(prefix, f);
            f("x", &mut self.x, &mut self.gx);
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let mut probe = LnProbe {
            ln: LayerNorm::new(5),
            x: (0..5).map(|_| rng.normal()).collect(),
            gx: vec![0.0; 5],
            w: (0..5).map(|_| rng.normal()).collect(),
        };
        for g in probe.ln.gain.iter_mut() {
            *g = 1.0 + 0.3 * rng.normal();
        }
        let report = grad_check(
            &mut probe,
            |p: &LnProbe| dot(&p.ln.forward(&p.x).unwrap().0, &p.w),
            |p: &mut LnProbe| {
                let (_, cache) = p.ln.forward(&p.x).unwrap();
                let w = p.w.clone();
                let dx = p.ln.backward(&cache, &w);
                p.gx.copy_from_slice(&dx);
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }

    struct MlpProbe {
        mlp: Mlp<f64>,
        x: Vec<f64>,
        gx: Vec<f64>,
    }

    impl Parameters<f64> for MlpProbe {
        fn visit_params(
            &mut self,
            prefix: &str,
            f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]),
        ) {
            self.mlp.visit_params(prefix, f);
            f("x", &mut self.x, &mut self.gx);
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = SeededRng::new(12);
        let mut probe = MlpProbe {
            mlp: Mlp::init(4, 7, 3, &mut rng),
            x: (0..4).map(|_| rng.normal()).collect(),
            gx: vec![0.0; 4],
        };
        let report = grad_check(
            &mut probe,
            |p: &MlpProbe| {
                let y = p.mlp.forward(&p.x).unwrap().0;
                y.iter().map(|v| v * v).sum()
            },
            |p: &mut MlpProbe| {
                let (y, cache) = p.mlp.forward(&p.x).unwrap();
                let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
                let dx = p.mlp.backward(&cache, &dy).unwrap();
                p.gx.copy_from_slice(&dx);
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }
}
