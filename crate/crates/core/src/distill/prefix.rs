use alloc::vec::Vec;

use crate::numkit::{join, log_softmax, mean_rows, LinearMap, Parameters, Real, Tensor2};
use crate::rng::SeededRng;
use crate::{Error, Result};

pub const N_CHOICES: usize = 4;

/// Projections into the decoder width: `W_z` for the team belief, `W_P` for
/// prompt rows and `Q` for the query embedding. All bias-free.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixParams<T> {
    pub w_z: LinearMap<T>,
    pub w_p: LinearMap<T>,
    pub q_proj: LinearMap<T>,
}

impl<T: Real> PrefixParams<T> {
    pub fn init(d_lm: usize, d_z: usize, d_prompt: usize, d_query: usize, rng: &mut SeededRng) -> Self {
        Self {
            w_z: LinearMap::init(d_lm, d_z, false, rng),
            w_p: LinearMap::init(d_lm, d_prompt, false, rng),
            q_proj: LinearMap::init(d_lm, d_query, false, rng),
        }
    }

    pub fn d_lm(&self) -> usize {
        self.w_z.d_out()
    }
}

impl<T: Real> Parameters<T> for PrefixParams<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.w_z.visit_params(&join(prefix, "w_z"), f);
        self.w_p.visit_params(&join(prefix, "w_p"), f);
        self.q_proj.visit_params(&join(prefix, "q_proj"), f);
    }
}

/// `[W_z z; W_P P rows; Q q]`, `(1 + L + 1) × d_lm`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSequence<T> {
    pub rows: Tensor2<T>,
}

impl<T: Real> PrefixSequence<T> {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }
}

pub fn assemble_prefix<T: Real>(
    z: &[T],
    prompts: &Tensor2<T>,
    query: &[T],
    params: &PrefixParams<T>,
) -> Result<PrefixSequence<T>> {
    let d_lm = params.d_lm();
    let mut rows = Tensor2::zeros(prompts.rows() + 2, d_lm);
    rows.row_mut(0).copy_from_slice(&params.w_z.forward(z)?);
    for (l, p) in prompts.iter_rows().enumerate() {
        rows.row_mut(1 + l).copy_from_slice(&params.w_p.forward(p)?);
    }
    let last = prompts.rows() + 1;
    rows.row_mut(last).copy_from_slice(&params.q_proj.forward(query)?);
    Ok(PrefixSequence { rows })
}

/// Gradients w.r.t. `z` and the prompt rows for per-row upstream gradients.
/// Parameter gradients are accumulated only when `accumulate` is set;
/// otherwise the projections act as constants.
pub(crate) fn prefix_backward<T: Real>(
    params: &mut PrefixParams<T>,
    z: &[T],
    prompts: &Tensor2<T>,
    query: &[T],
    d_rows: &Tensor2<T>,
    accumulate: bool,
) -> Result<(Vec<T>, Tensor2<T>)> {
    let mut d_prompts = Tensor2::zeros(prompts.rows(), prompts.cols());
    let dz = if accumulate {
        params.w_z.backward(z, d_rows.row(0))?
    } else {
        params.w_z.backward_input(d_rows.row(0))?
    };
    for l in 0..prompts.rows() {
        let dp = if accumulate {
            params.w_p.backward(prompts.row(l), d_rows.row(1 + l))?
        } else {
            params.w_p.backward_input(d_rows.row(1 + l))?
        };
        d_prompts.row_mut(l).copy_from_slice(&dp);
    }
    if accumulate {
        params.q_proj.backward(query, d_rows.row(prompts.rows() + 1))?;
    }
    Ok((dz, d_prompts))
}

/// Four-way linear head over the mean prefix row. Stands in for the
/// decoder's answer-letter prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateHead<T> {
    pub linear: LinearMap<T>,
}

impl<T: Real> SurrogateHead<T> {
    pub fn init(d_lm: usize, rng: &mut SeededRng) -> Self {
        Self {
            linear: LinearMap::init(N_CHOICES, d_lm, true, rng),
        }
    }
}

impl<T: Real> Parameters<T> for SurrogateHead<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.linear.visit_params(&join(prefix, "linear"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput<T> {
    pub loss: T,
    pub predicted: usize,
    pub logits: Vec<T>,
    pub(crate) pooled: Vec<T>,
    pub(crate) log_probs: Vec<T>,
}

/// Cross-entropy of the head's logits against `answer`, plus the argmax
/// (first maximum on ties).
pub fn surrogate_lm_loss<T: Real>(
    prefix: &PrefixSequence<T>,
    head: &SurrogateHead<T>,
    answer: usize,
) -> Result<SurrogateOutput<T>> {
    if answer >= N_CHOICES {
        return Err(Error::InvalidAnswer { index: answer });
    }
    let pooled = mean_rows(&prefix.rows);
    let logits = head.linear.forward(&pooled)?;
    let log_probs = log_softmax(&logits)?;
    Ok(SurrogateOutput {
        loss: -log_probs[answer],
        predicted: argmax(&logits),
        logits,
        pooled,
        log_probs,
    })
}

pub(crate) fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradient of `scale * loss` w.r.t. every prefix row.
pub(crate) fn surrogate_backward<T: Real>(
    head: &mut SurrogateHead<T>,
    out: &SurrogateOutput<T>,
    answer: usize,
    n_rows: usize,
    scale: T,
    accumulate: bool,
) -> Result<Tensor2<T>> {
    let d_logits: Vec<T> = out
        .log_probs
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            let target = if i == answer { T::one() } else { T::zero() };
            (lp.exp() - target) * scale
        })
        .collect();
    let d_pooled = if accumulate {
        head.linear.backward(&out.pooled, &d_logits)?
    } else {
        head.linear.backward_input(&d_logits)?
    };
    let inv = T::one() / T::lit(n_rows as f64);
    let mut d_rows = Tensor2::zeros(n_rows, d_pooled.len());
    for r in 0..n_rows {
        for (x, &g) in d_rows.row_mut(r).iter_mut().zip(&d_pooled) {
            *x = g * inv;
        }
    }
    Ok(d_rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_layout() {
        let mut rng = SeededRng::new(1);
        let mut p = PrefixParams::<f64>::init(6, 3, 4, 2, &mut rng);
        let prompts = Tensor2::new(8, 4, (0..32).map(|i| i as f64 * 0.1).collect()).unwrap();
        let seq = assemble_prefix(&[1.0, 2.0, 3.0], &prompts, &[0.5, -0.5], &p).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.rows.row(9), p.q_proj.forward(&[0.5, -0.5]).unwrap().as_slice());
        p.w_z.weight.fill(0.0);
        p.w_p.weight.fill(0.0);
        let seq = assemble_prefix(&[1.0, 2.0, 3.0], &prompts, &[0.5, -0.5], &p).unwrap();
        assert!(seq.rows.data()[..9 * 6].iter().all(|&v| v == 0.0));
        assert!(assemble_prefix(&[1.0], &prompts, &[0.5, -0.5], &p).is_err());
    }

    #[test]
    fn uniform_logits_cost_ln4() {
        let mut rng = SeededRng::new(2);
        let mut head = SurrogateHead::<f64>::init(3, &mut rng);
        head.linear.weight.fill(0.0);
        head.linear.bias.fill(0.0);
        let seq = PrefixSequence {
            rows: Tensor2::new(2, 3, vec![1.0; 6]).unwrap(),
        };
        let out = surrogate_lm_loss(&seq, &head, 2).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(out.predicted, 0);
        head.linear.bias[2] = 60.0;
        let out = surrogate_lm_loss(&seq, &head, 2).unwrap();
        assert!(out.loss < 1e-20);
        assert_eq!(out.predicted, 2);
        assert!(matches!(
            surrogate_lm_loss(&seq, &head, 4),
            Err(Error::InvalidAnswer { index: 4 })
        ));
    }
}
