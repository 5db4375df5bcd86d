use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{accumulate_example, composite_loss, Example, LossWeights, Model, Student};
use crate::numkit::{AdamConfig, AdamState, Parameters, Real};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Seed of the per-epoch example shuffle.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            accumulation: 4,
            max_steps: None,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.accumulation == 0 {
            return Err(Error::InvalidConfig("batch size and accumulation must be positive".into()));
        }
        Ok(())
    }

    pub fn examples_per_step(&self) -> usize {
        self.batch_size * self.accumulation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_lm: f64,
    pub loss_distill: f64,
    pub grad_norm: f64,
}

/// Model plus one optimizer per side. The teacher is stepped on its own so
/// its gradients never enter the student's clipping norm.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub config: TrainConfig,
    student_opt: AdamState<T>,
    teacher_opt: AdamState<T>,
    steps: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.weights.distills() && model.teacher.is_none() {
            return Err(Error::InvalidConfig(
                "distillation weight set but model has no teacher".into(),
            ));
        }
        Ok(Self {
            model,
            config,
            student_opt: AdamState::new(config.adam),
            teacher_opt: AdamState::new(config.adam),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One optimizer step on `batch`, which holds every example of the
    /// step (all micro-batches). The loss is averaged over it.
    pub fn step(&mut self, batch: &[&Example<T>]) -> Result<TrainLogRow> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty training batch".into()));
        }
        let weights = self.config.weights;
        self.model.zero_grad();
        let scale = T::one() / T::lit(batch.len() as f64);
        let (mut lm, mut distill) = (0.0, 0.0);
        for ex in batch {
            let losses = accumulate_example(&mut self.model, ex, &weights, scale)?;
            let total: T = composite_loss(losses.lm, losses.distill, &weights);
            if !total.is_finite() || !losses.teacher_lm.is_finite() {
                return Err(Error::NonFinite { op: "train_step" });
            }
            lm += losses.lm.as_f64();
            distill += losses.distill.as_f64();
        }
        let n = batch.len() as f64;
        let report = self.student_opt.step(&mut self.model.student);
        if !report.grad_norm.is_finite() {
            return Err(Error::NonFinite { op: "train_step" });
        }
        if weights.distills() {
            if let Some(teacher) = self.model.teacher.as_mut() {
                self.teacher_opt.step(teacher);
            }
        }
        self.steps += 1;
        let (lm, distill) = (lm / n, distill / n);
        Ok(TrainLogRow {
            step: self.steps,
            loss_total: weights.lambda_lm * lm + weights.lambda_d * distill,
            loss_lm: lm,
            loss_distill: distill,
            grad_norm: report.grad_norm,
        })
    }
}

pub fn train_step<T: Real>(trainer: &mut Trainer<T>, batch: &[&Example<T>]) -> Result<TrainLogRow> {
    trainer.step(batch)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: Vec<TrainLogRow>,
}

/// Seeded shuffle each epoch, `batch_size · accumulation` examples per step,
/// a trailing partial step kept.
pub fn train_loop<T: Real>(
    model: Model<T>,
    examples: &[Example<T>],
    config: &TrainConfig,
    mut on_step: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome<T>> {
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    let mut trainer = Trainer::new(model, *config)?;
    let mut rng = SeededRng::new(config.shuffle_seed);
    let mut log = Vec::new();
    let per_step = config.examples_per_step();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    'epochs: for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(per_step) {
            if config.max_steps.is_some_and(|m| trainer.steps() >= m) {
                break 'epochs;
            }
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &examples[i]).collect();
            let row = trainer.step(&batch)?;
            on_step(&row);
            log.push(row);
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mc4Report {
    pub correct: usize,
    pub total: usize,
    /// Team size to `(correct, total)`.
    pub by_team_size: BTreeMap<usize, (usize, usize)>,
}

impl Mc4Report {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn team_accuracy(&self, n: usize) -> Option<f64> {
        self.by_team_size.get(&n).map(|&(c, t)| ratio(c, t))
    }

    pub fn merge(&mut self, other: &Mc4Report) {
        self.correct += other.correct;
        self.total += other.total;
        for (&n, &(c, t)) in &other.by_team_size {
            let e = self.by_team_size.entry(n).or_default();
            e.0 += c;
            e.1 += t;
        }
    }
}

fn ratio(c: usize, t: usize) -> f64 {
    if t == 0 {
        0.0
    } else {
        c as f64 / t as f64
    }
}

/// Argmax accuracy of the student. Only the student is reachable here, so
/// no privileged input can be touched.
pub fn evaluate_mc4<T: Real>(student: &Student<T>, examples: &[Example<T>]) -> Result<Mc4Report> {
    let mut report = Mc4Report::default();
    for ex in examples {
        let answer = ex
            .answer
            .ok_or_else(|| Error::InvalidConfig("evaluation example has no answer".into()))?;
        let (predicted, _) = student.predict(&ex.team, &ex.query)?;
        let hit = usize::from(predicted == answer);
        report.correct += hit;
        report.total += 1;
        let e = report.by_team_size.entry(ex.team.len()).or_default();
        e.0 += hit;
        e.1 += 1;
    }
    Ok(report)
}
