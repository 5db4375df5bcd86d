//! `spcor gradcheck`: central-difference checks of every hand-written
//! backward pass on small random instances, always at 64 bits.

use serde::{Deserialize, Serialize};
use spcor_core::distill::{
    composite_backward, composite_objective, Example, LossWeights, Model, ModelConfig, TeacherInputs,
};
use spcor_core::fusion::{fuse, fuse_backward, FusionDims, FusionParams, RobotObservation};
use spcor_core::numkit::{dot, grad_check, GradCheckReport, Parameters};
use spcor_core::privileged::{AccessTracker, Privileged};
use spcor_core::rng::SeededRng;
use spcor_core::Tensor2;

use crate::config::{GradcheckModule, GradcheckSettings};
use crate::SpcorResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleReport {
    pub module: GradcheckModule,
    pub instances: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    /// Scalars checked, summed over instances.
    pub n_checked: usize,
    pub passed: bool,
}

fn toy_dims(rng: &mut SeededRng) -> FusionDims {
    FusionDims {
        d_token: 4,
        d_state: 6,
        d_spectral: 5,
        d_pose: 3,
        d_belief: 4,
        k: 4,
        n_low: 3,
        max_robots: 8,
        n_heads: [1, 2, 3][rng.below(3)],
    }
}

fn random_team(rng: &mut SeededRng, dims: &FusionDims, n: usize) -> Vec<RobotObservation<f64>> {
    let mut roles: Vec<usize> = (0..dims.max_robots).collect();
    rng.shuffle(&mut roles);
    (0..n)
        .map(|r| RobotObservation {
            role: roles[r],
            tokens: Tensor2::new(
                dims.k,
                dims.d_token,
                (0..dims.k * dims.d_token).map(|_| rng.normal()).collect(),
            )
            .expect("toy shape"),
            pose_summary: core::array::from_fn(|_| rng.normal()),
        })
        .collect()
}

/// Moves every parameter off its initial value so LayerNorm gains and
/// zero-initialised tensors are exercised too.
fn jitter<P: Parameters<f64>>(p: &mut P, rng: &mut SeededRng, std: f64) {
    p.visit_params("", &mut |_, v, _| v.iter_mut().for_each(|x| *x += std * rng.normal()));
}

/// The spectral-token branch (LayerNorm + MLP over the low-frequency token
/// magnitudes) seen through the fused belief.
struct SpectralBranch(FusionParams<f64>);

impl Parameters<f64> for SpectralBranch {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        let p = if prefix.is_empty() { "fusion".to_owned() } else { format!("{prefix}.fusion") };
        self.0.spectral_norm.visit_params(&format!("{p}.spectral_norm"), f);
        self.0.spectral_mlp.visit_params(&format!("{p}.spectral_mlp"), f);
    }
}

fn squared_norm_check<P: Parameters<f64>>(
    p: &mut P,
    team: &[RobotObservation<f64>],
    h: f64,
    get: fn(&P) -> &FusionParams<f64>,
    get_mut: fn(&mut P) -> &mut FusionParams<f64>,
) -> SpcorResult<GradCheckReport> {
    Ok(grad_check(
        p,
        |p| {
            let (b, _) = fuse(get(p), team).expect("toy fusion");
            dot(&b.data, &b.data)
        },
        |p| {
            let (b, cache) = fuse(get(p), team).expect("toy fusion");
            let dz: Vec<f64> = b.data.iter().map(|v| 2.0 * v).collect();
            fuse_backward(get_mut(p), &cache, &dz).expect("toy fusion backward");
        },
        h,
    )?)
}

fn check_fusion(seed: u64, instance: usize, h: f64, spectral_only: bool) -> SpcorResult<GradCheckReport> {
    let mut rng = SeededRng::new(seed ^ (instance as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let dims = toy_dims(&mut rng);
    let mut params = FusionParams::<f64>::init(dims, &mut rng)?;
    jitter(&mut params, &mut rng, 0.1);
    let n = 1 + instance % dims.max_robots;
    let team = random_team(&mut rng, &dims, n);
    if spectral_only {
        squared_norm_check(&mut SpectralBranch(params), &team, h, |p| &p.0, |p| &mut p.0)
    } else {
        squared_norm_check(&mut params, &team, h, |p| p, |p| p)
    }
}

fn toy_model_config(seed: u64, n_heads: usize) -> ModelConfig {
    ModelConfig {
        fusion: FusionDims {
            d_token: 3,
            d_state: 6,
            d_spectral: 3,
            d_pose: 3,
            d_belief: 4,
            k: 4,
            n_low: 3,
            max_robots: 8,
            n_heads,
        },
        d_query: 3,
        n_prompts: 3,
        d_lm: 5,
        prompt_init_std: 0.5,
        seed,
    }
}

fn toy_example(rng: &mut SeededRng, cfg: &ModelConfig) -> Example<f64> {
    let n = 1 + rng.below(cfg.fusion.max_robots);
    let team = random_team(rng, &cfg.fusion, n);
    let summaries = (0..n).map(|_| core::array::from_fn(|_| rng.normal())).collect();
    Example {
        team,
        query: (0..cfg.d_query).map(|_| rng.normal()).collect(),
        answer: Some(rng.below(4)),
        teacher: Some(TeacherInputs {
            summaries: Privileged::new(summaries, AccessTracker::new()),
        }),
    }
}

fn check_distill(seed: u64, instance: usize, h: f64) -> SpcorResult<GradCheckReport> {
    let mut rng = SeededRng::new(seed ^ (instance as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
    let n_heads = [1, 2, 3][rng.below(3)];
    let cfg = toy_model_config(rng.next_u64(), n_heads);
    let mut model = Model::<f64>::init(cfg)?;
    jitter(&mut model, &mut rng, 0.05);
    let batch: Vec<Example<f64>> = (0..2).map(|_| toy_example(&mut rng, &cfg)).collect();
    let weights = LossWeights {
        lambda_lm: 0.5 + rng.uniform(),
        lambda_d: 0.1 + rng.uniform(),
    };
    let frozen = model.clone();
    Ok(grad_check(
        &mut model,
        |m| composite_objective(m, &frozen, &batch, &weights).expect("toy objective"),
        |m| {
            composite_backward(m, &batch, &weights).expect("toy backward");
        },
        h,
    )?)
}

pub fn run_module(module: GradcheckModule, settings: &GradcheckSettings, seed: u64) -> SpcorResult<ModuleReport> {
    let mut out = ModuleReport {
        module,
        instances: settings.instances,
        max_rel_err: 0.0,
        worst_param: String::new(),
        n_checked: 0,
        passed: true,
    };
    for i in 0..settings.instances {
        let r = match module {
            GradcheckModule::SamplerSpectral => check_fusion(seed, i, settings.step, true)?,
            GradcheckModule::Fusion => check_fusion(seed, i, settings.step, false)?,
            GradcheckModule::Distill => check_distill(seed, i, settings.step)?,
            GradcheckModule::All => unreachable!("expanded by the caller"),
        };
        out.n_checked += r.n_params;
        if r.max_rel_err >= out.max_rel_err || out.worst_param.is_empty() {
            out.max_rel_err = r.max_rel_err;
            out.worst_param = format!("instance {i}: {}", r.worst_param);
        }
    }
    out.passed = out.max_rel_err <= settings.threshold;
    Ok(out)
}

pub fn run_gradcheck(settings: &GradcheckSettings, seed: u64) -> SpcorResult<Vec<ModuleReport>> {
    settings
        .module
        .expand()
        .into_iter()
        .map(|m| run_module(m, settings, seed))
        .collect()
}

pub fn format_reports(reports: &[ModuleReport], threshold: f64) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "{:<17} {:>3} instances {:>7} scalars  max rel err {:.3e}  [{}]  worst {}\n",
            r.module.label(),
            r.instances,
            r.n_checked,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" },
            r.worst_param
        ));
    }
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    s.push_str(&format!("overall max rel err {worst:.3e} (threshold {threshold:.0e})\n"));
    s
}
