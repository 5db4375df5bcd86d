//! Prompt-space distillation from a privileged-pose teacher, prefix assembly,
//! the four-way answer head and the end-to-end trainer.

mod model;
mod prefix;
mod prompts;
mod train;

pub use model::{
    composite_backward, composite_loss, composite_objective, Example, ExampleLosses, LossWeights, Model, ModelConfig,
    Student, Teacher,
};
pub use prefix::{assemble_prefix, surrogate_lm_loss, PrefixParams, PrefixSequence, SurrogateHead, SurrogateOutput};
pub use prompts::{
    distill_loss, student_forward, teacher_forward, Phase, PromptBank, PromptCache, PromptOutput,
    PromptRole, TeacherInputs,
};
pub use train::{evaluate_mc4, train_loop, train_step, Mc4Report, TrainConfig, TrainLogRow, TrainOutcome, Trainer};
