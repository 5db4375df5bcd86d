use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::prefix::{
    assemble_prefix, prefix_backward, surrogate_backward, surrogate_lm_loss, PrefixParams,
    SurrogateHead, SurrogateOutput, N_CHOICES,
};
use super::prompts::{
    distill_loss, student_forward, teacher_backward, teacher_forward, Phase, PromptBank,
    PromptRole, TeacherInputs,
};
use crate::fusion::{fuse, fuse_backward, FusionDims, FusionParams, RobotObservation};
use crate::numkit::{join, Mlp, Parameters, Real};
use crate::rng::SeededRng;
use crate::stream::POSE_SUMMARY_DIM;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_lm: f64,
    pub lambda_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_lm: 1.0,
            lambda_d: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_lm) || !ok(self.lambda_d) {
            return Err(Error::InvalidConfig(alloc::format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda_lm,
                self.lambda_d
            )));
        }
        Ok(())
    }

    pub fn distills(&self) -> bool {
        self.lambda_d > 0.0
    }
}

/// `λ_LM · L_LM + λ_d · L_distill`.
pub fn composite_loss<T: Real>(lm: T, distill: T, weights: &LossWeights) -> T {
    T::lit(weights.lambda_lm) * lm + T::lit(weights.lambda_d) * distill
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fusion: FusionDims,
    pub d_query: usize,
    pub n_prompts: usize,
    pub d_lm: usize,
    pub prompt_init_std: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(d_token: usize, d_query: usize, k: usize) -> Self {
        Self {
            fusion: FusionDims::new(d_token, k),
            d_query,
            n_prompts: 8,
            d_lm: 128,
            prompt_init_std: 0.02,
            seed: 0,
        }
    }
}

/// Everything that runs at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Student<T> {
    pub fusion: FusionParams<T>,
    pub bank: PromptBank<T>,
    pub prefix: PrefixParams<T>,
    pub head: SurrogateHead<T>,
}

impl<T: Real> Parameters<T> for Student<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.fusion.visit_params(&join(prefix, "fusion"), f);
        self.bank.visit_params(&join(prefix, "prompts"), f);
        self.prefix.visit_params(&join(prefix, "prefix"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

/// Training-only: a pose MLP for ground-truth summaries and its prompt bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher<T> {
    pub pose_mlp: Mlp<T>,
    pub bank: PromptBank<T>,
}

impl<T: Real> Parameters<T> for Teacher<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.pose_mlp.visit_params(&join(prefix, "pose_mlp"), f);
        self.bank.visit_params(&join(prefix, "prompts"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub student: Student<T>,
    /// Absent in builds without the distillation path.
    pub teacher: Option<Teacher<T>>,
}

/// One multiple-choice question over a team.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub team: Vec<RobotObservation<T>>,
    pub query: Vec<T>,
    pub answer: Option<usize>,
    pub teacher: Option<TeacherInputs<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleLosses<T> {
    pub lm: T,
    /// Zero when the distillation path is skipped.
    pub distill: T,
    pub teacher_lm: T,
    pub predicted: usize,
}

impl<T: Real> Model<T> {
    /// Student parameters are drawn first, so a model without a teacher
    /// starts from the same student as one with it.
    pub fn init(config: ModelConfig) -> Result<Self> {
        Self::build(config, true)
    }

    pub fn student_only(config: ModelConfig) -> Result<Self> {
        Self::build(config, false)
    }

    fn build(config: ModelConfig, with_teacher: bool) -> Result<Self> {
        let mut rng = SeededRng::new(config.seed);
        let student = Self::init_student(&config, &mut rng)?;
        let teacher = if with_teacher {
            let d_pose = config.fusion.d_pose;
            Some(Teacher {
                pose_mlp: Mlp::init(POSE_SUMMARY_DIM, d_pose, d_pose, &mut rng),
                bank: PromptBank::init(
                    PromptRole::Teacher,
                    config.n_prompts,
                    config.fusion.d_state,
                    d_pose,
                    config.prompt_init_std,
                    &mut rng,
                )?,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            student,
            teacher,
        })
    }

    fn init_student(config: &ModelConfig, rng: &mut SeededRng) -> Result<Student<T>> {
        if config.d_query == 0 || config.d_lm == 0 {
            return Err(Error::InvalidConfig("query and decoder widths must be positive".into()));
        }
        let fusion = FusionParams::init(config.fusion, rng)?;
        let d = config.fusion.d_state;
        let bank = PromptBank::init(
            PromptRole::Student,
            config.n_prompts,
            d,
            config.fusion.d_belief,
            config.prompt_init_std,
            rng,
        )?;
        let prefix = PrefixParams::init(config.d_lm, config.fusion.d_belief, d, config.d_query, rng);
        let head = SurrogateHead::init(config.d_lm, rng);
        Ok(Student {
            fusion,
            bank,
            prefix,
            head,
        })
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.student.visit_params(&join(prefix, "student"), f);
        if let Some(t) = self.teacher.as_mut() {
            t.visit_params(&join(prefix, "teacher"), f);
        }
    }
}

impl<T: Real> Student<T> {
    /// Inference-only forward: answer logits and argmax.
    pub fn predict(&self, team: &[RobotObservation<T>], query: &[T]) -> Result<(usize, Vec<T>)> {
        let (belief, _) = fuse(&self.fusion, team)?;
        let (p_s, _) = student_forward(&belief.data, &self.bank)?;
        let prefix = assemble_prefix(&belief.data, &p_s.data, query, &self.prefix)?;
        let out = surrogate_lm_loss(&prefix, &self.head, 0)?;
        Ok((out.predicted, out.logits))
    }
}

fn require_answer<T>(ex: &Example<T>) -> Result<usize> {
    match ex.answer {
        Some(a) if a < N_CHOICES => Ok(a),
        Some(a) => Err(Error::InvalidAnswer { index: a }),
        None => Err(Error::InvalidConfig("training example has no answer".into())),
    }
}

fn require_teacher<'a, T>(
    model: &'a Model<T>,
    ex: &'a Example<T>,
) -> Result<(&'a Teacher<T>, &'a TeacherInputs<T>)> {
    let teacher = model
        .teacher
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("distillation weight set but model has no teacher".into()))?;
    let inputs = ex
        .teacher
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("distillation needs ground-truth poses".into()))?;
    Ok((teacher, inputs))
}

/// Forward and backward for one example; gradients of
/// `scale · (λ_LM L_S + λ_d D + λ_LM L_T)` are accumulated. `D` sees the
/// teacher prompts as constants and `L_T` only reaches teacher parameters.
pub(crate) fn accumulate_example<T: Real>(
    model: &mut Model<T>,
    ex: &Example<T>,
    weights: &LossWeights,
    scale: T,
) -> Result<ExampleLosses<T>> {
    let answer = require_answer(ex)?;
    let lm_scale = scale * T::lit(weights.lambda_lm);
    let student = &model.student;
    let (belief, fcache) = fuse(&student.fusion, &ex.team)?;
    let z = belief.data;
    let (p_s, scache) = student_forward(&z, &student.bank)?;
    let prefix_s = assemble_prefix(&z, &p_s.data, &ex.query, &student.prefix)?;
    let out_s = surrogate_lm_loss(&prefix_s, &student.head, answer)?;

    let mut teacher_pass = None;
    let mut distill = T::zero();
    let mut teacher_lm = T::zero();
    if weights.distills() {
        let (teacher, inputs) = require_teacher(model, ex)?;
        let (p_t, tcache) = teacher_forward(inputs, &teacher.pose_mlp, &teacher.bank, Phase::Training)?;
        let (d, d_ps) = distill_loss(&p_s, &p_t)?;
        let prefix_t = assemble_prefix(&z, &p_t.data, &ex.query, &student.prefix)?;
        let out_t = surrogate_lm_loss(&prefix_t, &student.head, answer)?;
        distill = d;
        teacher_lm = out_t.loss;
        teacher_pass = Some((p_t, tcache, d_ps, out_t));
    }

    let n_rows = prefix_s.len();
    let student = &mut model.student;
    let d_rows = surrogate_backward(&mut student.head, &out_s, answer, n_rows, lm_scale, true)?;
    let (mut dz, mut d_ps) =
        prefix_backward(&mut student.prefix, &z, &p_s.data, &ex.query, &d_rows, true)?;

    if let Some((p_t, tcache, g_distill, out_t)) = &teacher_pass {
        let ds = scale * T::lit(weights.lambda_d);
        for (a, &b) in d_ps.data_mut().iter_mut().zip(g_distill.data()) {
            *a = *a + ds * b;
        }
        // teacher path: shared projections and head act as constants
        let d_rows_t = surrogate_backward(&mut student.head, out_t, answer, n_rows, lm_scale, false)?;
        let (_, d_pt) =
            prefix_backward(&mut student.prefix, &z, &p_t.data, &ex.query, &d_rows_t, false)?;
        let teacher = model.teacher.as_mut().expect("checked above");
        teacher_backward(&mut teacher.pose_mlp, &mut teacher.bank, tcache, &d_pt)?;
    }

    let student = &mut model.student;
    let dz_bank = student.bank.backward(&scache, &d_ps)?;
    for (a, b) in dz.iter_mut().zip(dz_bank) {
        *a = *a + b;
    }
    fuse_backward(&mut student.fusion, &fcache, &dz)?;

    Ok(ExampleLosses {
        lm: out_s.loss,
        distill,
        teacher_lm,
        predicted: out_s.predicted,
    })
}

fn teacher_lm_loss<T: Real>(
    teacher: &Teacher<T>,
    frozen: &Student<T>,
    z: &[T],
    ex: &Example<T>,
    answer: usize,
) -> Result<(T, super::prompts::PromptOutput<T>)> {
    let inputs = ex
        .teacher
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("distillation needs ground-truth poses".into()))?;
    let (p_t, _) = teacher_forward(inputs, &teacher.pose_mlp, &teacher.bank, Phase::Training)?;
    let prefix = assemble_prefix(z, &p_t.data, &ex.query, &frozen.prefix)?;
    let out: SurrogateOutput<T> = surrogate_lm_loss(&prefix, &frozen.head, answer)?;
    Ok((out.loss, p_t))
}

/// The scalar whose gradient w.r.t. `live` (at `live == frozen`) is what
/// the trainer accumulates:
/// mean over the batch of `λ_LM L_S + λ_d D(P_S, P_T) + λ_LM L_T`, where the
/// distillation target `P_T`, and the belief, projections and head seen by
/// the teacher's own loss, all come from `frozen`.
pub fn composite_objective<T: Real>(
    live: &Model<T>,
    frozen: &Model<T>,
    batch: &[Example<T>],
    weights: &LossWeights,
) -> Result<T> {
    let mut total = T::zero();
    for ex in batch {
        let answer = require_answer(ex)?;
        let (belief, _) = fuse(&live.student.fusion, &ex.team)?;
        let (p_s, _) = student_forward(&belief.data, &live.student.bank)?;
        let prefix = assemble_prefix(&belief.data, &p_s.data, &ex.query, &live.student.prefix)?;
        let lm = surrogate_lm_loss(&prefix, &live.student.head, answer)?.loss;
        total = total + T::lit(weights.lambda_lm) * lm;
        if weights.distills() {
            let (frozen_teacher, _) = require_teacher(frozen, ex)?;
            let (z_frozen, _) = fuse(&frozen.student.fusion, &ex.team)?;
            let (_, p_t) = teacher_lm_loss(frozen_teacher, &frozen.student, &z_frozen.data, ex, answer)?;
            let (d, _) = distill_loss(&p_s, &p_t)?;
            let (live_teacher, _) = require_teacher(live, ex)?;
            let (lt, _) = teacher_lm_loss(live_teacher, &frozen.student, &z_frozen.data, ex, answer)?;
            total = total + T::lit(weights.lambda_d) * d + T::lit(weights.lambda_lm) * lt;
        }
    }
    Ok(total / T::lit(batch.len() as f64))
}

/// Accumulates gradients of [`composite_objective`] at `live == frozen`.
pub fn composite_backward<T: Real>(
    model: &mut Model<T>,
    batch: &[Example<T>],
    weights: &LossWeights,
) -> Result<Vec<ExampleLosses<T>>> {
    let scale = T::one() / T::lit(batch.len() as f64);
    batch
        .iter()
        .map(|ex| accumulate_example(model, ex, weights, scale))
        .collect()
}
