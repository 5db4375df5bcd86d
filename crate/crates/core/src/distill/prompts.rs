use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numkit::{dot, join, l2_norm, LayerNorm, LayerNormCache, LinearMap, Mlp, MlpCache, Parameters, Real, Tensor2};
use crate::privileged::Privileged;
use crate::rng::SeededRng;
use crate::stream::POSE_SUMMARY_DIM;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Student,
    Teacher,
}

/// Whether privileged inputs may be consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Training,
    Inference,
}

/// `L` learnable prompt rows, learnable positional codes, a conditioning
/// projection broadcast over rows and a shared row-wise layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank<T> {
    pub role: PromptRole,
    pub prompts: Tensor2<T>,
    pub grad_prompts: Tensor2<T>,
    pub positions: Tensor2<T>,
    pub grad_positions: Tensor2<T>,
    pub cond: LinearMap<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> PromptBank<T> {
    pub fn init(
        role: PromptRole,
        n_prompts: usize,
        d: usize,
        d_cond: usize,
        init_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_prompts == 0 {
            return Err(Error::InvalidConfig("prompt count must be at least 1".into()));
        }
        let mut gaussian = |rows, cols| {
            let data = (0..rows * cols).map(|_| T::lit(init_std * rng.normal())).collect();
            Tensor2::new(rows, cols, data)
        };
        let prompts = gaussian(n_prompts, d)?;
        let positions = gaussian(n_prompts, d)?;
        Ok(Self {
            role,
            grad_prompts: Tensor2::zeros(n_prompts, d),
            grad_positions: Tensor2::zeros(n_prompts, d),
            prompts,
            positions,
            cond: LinearMap::init(d, d_cond, true, rng),
            norm: LayerNorm::new(d),
        })
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.rows()
    }

    pub fn dim(&self) -> usize {
        self.prompts.cols()
    }

    /// `LN(C + pos + Lin(c))` row by row.
    pub fn forward(&self, c: &[T]) -> Result<(PromptOutput<T>, PromptCache<T>)> {
        let shift = self.cond.forward(c)?;
        let mut data = Tensor2::zeros(self.n_prompts(), self.dim());
        let mut rows = Vec::with_capacity(self.n_prompts());
        for l in 0..self.n_prompts() {
            let pre: Vec<T> = self
                .prompts
                .row(l)
                .iter()
                .zip(self.positions.row(l))
                .zip(&shift)
                .map(|((&a, &b), &s)| a + b + s)
                .collect();
            let (y, cache) = self.norm.forward(&pre)?;
            data.row_mut(l).copy_from_slice(&y);
            rows.push(cache);
        }
        Ok((
            PromptOutput {
                role: self.role,
                data,
            },
            PromptCache {
                cond_input: c.to_vec(),
                rows,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the
    /// conditioning input.
    pub fn backward(&mut self, cache: &PromptCache<T>, d_out: &Tensor2<T>) -> Result<Vec<T>> {
        let mut d_shift = vec![T::zero(); self.dim()];
        for (l, row_cache) in cache.rows.iter().enumerate() {
            let d_pre = self.norm.backward(row_cache, d_out.row(l));
            for (i, &g) in d_pre.iter().enumerate() {
                let gp = self.grad_prompts.row_mut(l);
                gp[i] = gp[i] + g;
                let gq = self.grad_positions.row_mut(l);
                gq[i] = gq[i] + g;
                d_shift[i] = d_shift[i] + g;
            }
        }
        self.cond.backward(&cache.cond_input, &d_shift)
    }
}

impl<T: Real> Parameters<T> for PromptBank<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f(
            &join(prefix, "prompts"),
            self.prompts.data_mut(),
            self.grad_prompts.data_mut(),
        );
        f(
            &join(prefix, "positions"),
            self.positions.data_mut(),
            self.grad_positions.data_mut(),
        );
        self.cond.visit_params(&join(prefix, "cond"), f);
        self.norm.visit_params(&join(prefix, "norm"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptOutput<T> {
    pub role: PromptRole,
    /// `L × d`, each row layer-normalized.
    pub data: Tensor2<T>,
}

#[derive(Debug, Clone)]
pub struct PromptCache<T> {
    cond_input: Vec<T>,
    rows: Vec<LayerNormCache<T>>,
}

/// Ground-truth pose summaries of every robot in the team; training only.
#[derive(Debug, Clone)]
pub struct TeacherInputs<T> {
    pub summaries: Privileged<Vec<[T; POSE_SUMMARY_DIM]>>,
}

/// Teacher-side caches: per-robot pose MLP passes plus the prompt bank.
#[derive(Debug, Clone)]
pub struct TeacherCache<T> {
    pub(crate) pose: Vec<MlpCache<T>>,
    pub(crate) bank: PromptCache<T>,
}

/// `P_T = LN(C̄ + pos + Lin(p̄))` with `p̄` the team mean of the teacher's
/// own pose embeddings of the ground-truth summaries.
pub fn teacher_forward<T: Real>(
    inputs: &TeacherInputs<T>,
    pose_mlp: &Mlp<T>,
    bank: &PromptBank<T>,
    phase: Phase,
) -> Result<(PromptOutput<T>, TeacherCache<T>)> {
    if phase == Phase::Inference {
        return Err(Error::PrivilegedAtInference);
    }
    if bank.role != PromptRole::Teacher {
        return Err(Error::InvalidConfig("teacher_forward needs the teacher bank".into()));
    }
    let summaries = inputs.summaries.reveal();
    if summaries.is_empty() {
        return Err(Error::TeamSize { n: 0, max: 8 });
    }
    let mut mean = vec![T::zero(); pose_mlp.out.d_out()];
    let mut pose = Vec::with_capacity(summaries.len());
    let inv = T::one() / T::lit(summaries.len() as f64);
    for s in summaries {
        let (e, cache) = pose_mlp.forward(s)?;
        for (m, v) in mean.iter_mut().zip(e) {
            *m = *m + v * inv;
        }
        pose.push(cache);
    }
    let (out, bank_cache) = bank.forward(&mean)?;
    Ok((
        out,
        TeacherCache {
            pose,
            bank: bank_cache,
        },
    ))
}

pub(crate) fn teacher_backward<T: Real>(
    pose_mlp: &mut Mlp<T>,
    bank: &mut PromptBank<T>,
    cache: &TeacherCache<T>,
    d_out: &Tensor2<T>,
) -> Result<()> {
    let d_mean = bank.backward(&cache.bank, d_out)?;
    let inv = T::one() / T::lit(cache.pose.len() as f64);
    let d_each: Vec<T> = d_mean.iter().map(|&g| g * inv).collect();
    for c in &cache.pose {
        pose_mlp.backward(c, &d_each)?;
    }
    Ok(())
}

/// `P_S = LN(C + pos + Lin(z))`.
pub fn student_forward<T: Real>(
    z: &[T],
    bank: &PromptBank<T>,
) -> Result<(PromptOutput<T>, PromptCache<T>)> {
    if bank.role != PromptRole::Student {
        return Err(Error::InvalidConfig("student_forward needs the student bank".into()));
    }
    bank.forward(z)
}

/// Mean over rows of `1 - cos(P_S[l], P_T[l])` and its gradient w.r.t. `P_S`.
/// The teacher side is treated as a constant.
pub fn distill_loss<T: Real>(
    student: &PromptOutput<T>,
    teacher: &PromptOutput<T>,
) -> Result<(T, Tensor2<T>)> {
    let (a, b) = (&student.data, &teacher.data);
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "distill_loss",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let l = a.rows();
    let inv_l = T::one() / T::lit(l as f64);
    let mut loss = T::zero();
    let mut grad = Tensor2::zeros(l, a.cols());
    for row in 0..l {
        let (s, t) = (a.row(row), b.row(row));
        let (ns, nt) = (l2_norm(s), l2_norm(t));
        if ns == T::zero() || nt == T::zero() {
            return Err(Error::DegenerateRow { row });
        }
        let cos = dot(s, t) / (ns * nt);
        loss = loss + (T::one() - cos) * inv_l;
        for ((g, &si), &ti) in grad.row_mut(row).iter_mut().zip(s).zip(t) {
            *g = -(ti / (ns * nt) - cos * si / (ns * ns)) * inv_l;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;
    use crate::privileged::AccessTracker;

    fn out(rows: usize, cols: usize, data: Vec<f64>) -> PromptOutput<f64> {
        PromptOutput {
            role: PromptRole::Student,
            data: Tensor2::new(rows, cols, data).unwrap(),
        }
    }

    #[test]
    fn distill_loss_reference_points() {
        let p = out(2, 2, vec![1.0, 2.0, -3.0, 0.5]);
        let neg = out(2, 2, vec![-1.0, -2.0, 3.0, -0.5]);
        let scaled = out(2, 2, vec![2.0, 4.0, -0.3, 0.05]);
        let orth = out(2, 2, vec![-2.0, 1.0, 0.5, 3.0]);
        assert!(distill_loss(&p, &p).unwrap().0.abs() < 1e-15);
        assert!(distill_loss(&p, &scaled).unwrap().0.abs() < 1e-15);
        assert!((distill_loss(&p, &neg).unwrap().0 - 2.0).abs() < 1e-15);
        assert!((distill_loss(&p, &orth).unwrap().0 - 1.0).abs() < 1e-15);
        let zero = out(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            distill_loss(&zero, &p),
            Err(Error::DegenerateRow { row: 0 })
        ));
    }

    #[test]
    fn distill_gradient_matches_differences() {
        let mut rng = SeededRng::new(3);
        let s: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let t = out(3, 4, (0..12).map(|_| rng.normal()).collect());
        let (_, g) = distill_loss(&out(3, 4, s.clone()), &t).unwrap();
        for i in 0..12 {
            let h = 1e-6;
            let mut plus = s.clone();
            plus[i] += h;
            let mut minus = s.clone();
            minus[i] -= h;
            let fd = (distill_loss(&out(3, 4, plus), &t).unwrap().0
                - distill_loss(&out(3, 4, minus), &t).unwrap().0)
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_condition_reduces_to_prompts_plus_positions() {
        let mut rng = SeededRng::new(4);
        let mut bank = PromptBank::<f64>::init(PromptRole::Student, 3, 5, 4, 0.5, &mut rng).unwrap();
        bank.cond.bias.fill(0.0);
        let (p, _) = student_forward(&[0.0; 4], &bank).unwrap();
        for l in 0..3 {
            let pre: Vec<f64> = (0..5)
                .map(|i| bank.prompts.get(l, i) + bank.positions.get(l, i))
                .collect();
            assert_eq!(p.data.row(l), bank.norm.forward(&pre).unwrap().0.as_slice());
        }
    }

    #[test]
    fn rows_are_normalized() {
        let mut rng = SeededRng::new(5);
        let bank = PromptBank::<f64>::init(PromptRole::Student, 4, 16, 3, 0.3, &mut rng).unwrap();
        let (p, _) = bank.forward(&[0.2, -1.0, 0.7]).unwrap();
        for row in p.data.iter_rows() {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn teacher_refuses_inference_and_counts_reads() {
        let mut rng = SeededRng::new(6);
        let bank = PromptBank::<f64>::init(PromptRole::Teacher, 2, 4, 3, 0.02, &mut rng).unwrap();
        let mlp = Mlp::init(POSE_SUMMARY_DIM, 3, 3, &mut rng);
        let tracker = AccessTracker::new();
        let inputs = TeacherInputs {
            summaries: Privileged::new(vec![[0.1; POSE_SUMMARY_DIM]], tracker.clone()),
        };
        assert!(matches!(
            teacher_forward(&inputs, &mlp, &bank, Phase::Inference),
            Err(Error::PrivilegedAtInference)
        ));
        assert_eq!(tracker.reads(), 0);
        let a = teacher_forward(&inputs, &mlp, &bank, Phase::Training).unwrap().0;
        let b = teacher_forward(&inputs, &mlp, &bank, Phase::Training).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(tracker.reads(), 2);
        assert!(student_forward(&[0.0; 3], &bank).is_err());
    }

    #[test]
    fn bank_gradient() {
        let mut rng = SeededRng::new(7);
        let mut bank = PromptBank::<f64>::init(PromptRole::Student, 3, 5, 4, 0.5, &mut rng).unwrap();
        let c: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let w = Tensor2::new(3, 5, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let objective = |b: &PromptBank<f64>| {
            let (p, _) = b.forward(&c).unwrap();
            dot(p.data.data(), w.data())
        };
        let report = grad_check(
            &mut bank,
            objective,
            |b| {
                let (_, cache) = b.forward(&c).unwrap();
                b.backward(&cache, &w).unwrap();
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }
}
