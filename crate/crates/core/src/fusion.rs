//! Multi-robot view fusion.
//!
//! Each robot contributes `K` sampled visual tokens. A probabilistic head
//! turns them into an evidence mean `μ_r` and a positive spread `σ_r`; a
//! low-frequency magnitude spectrum of the tokens gives a spectral token
//! `F_r`; commanded motion gives a pose embedding `P_r`. The auxiliary token
//! `A_r = W_p P_r + W_f F_r + E_r` carries motion, temporal and role cues that
//! the means attend to (single head, residual). The updated means are pooled
//! with weights `softmax(-‖σ_r‖)` and projected into the team belief `z`.
//!
//! No parameter shape depends on the team size, so one set of weights serves
//! any `N` in `1..=max_robots`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numkit::join;
use crate::numkit::{
    column_dft_magnitudes, dot, l2_norm, mean_rows, sigmoid, softmax, softmax_backward, softplus,
    LayerNorm, LayerNormCache, LinearMap, Mlp, MlpCache, Parameters, Real, Tensor2,
};
use crate::rng::SeededRng;
use crate::stream::{PoseLog, POSE_SUMMARY_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    /// Width of the per-frame visual tokens.
    pub d_token: usize,
    /// Width of `μ_r`, `σ_r` and the auxiliary tokens.
    pub d_state: usize,
    pub d_spectral: usize,
    pub d_pose: usize,
    pub d_belief: usize,
    /// Sampled tokens per robot.
    pub k: usize,
    /// Retained low-frequency bins, DC included.
    pub n_low: usize,
    pub max_robots: usize,
    /// Attention heads; `d_state` must be divisible by it.
    pub n_heads: usize,
}

impl FusionDims {
    pub fn new(d_token: usize, k: usize) -> Self {
        Self {
            d_token,
            d_state: 128,
            d_spectral: 64,
            d_pose: 32,
            d_belief: 128,
            k,
            n_low: k / 2 + 1,
            max_robots: 8,
            n_heads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::WindowTooShort { len: self.k });
        }
        if self.n_low < 2 || self.n_low > self.k / 2 + 1 {
            return Err(Error::InvalidConfig(alloc::format!(
                "n_low={} must lie in [2, K/2+1] for K={}",
                self.n_low,
                self.k
            )));
        }
        let dims = [
            self.d_token,
            self.d_state,
            self.d_spectral,
            self.d_pose,
            self.d_belief,
            self.max_robots,
        ];
        if dims.contains(&0) || self.n_heads == 0 {
            return Err(Error::InvalidConfig("fusion widths must be positive".into()));
        }
        if !self.d_state.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(alloc::format!(
                "d_state={} is not divisible by n_heads={}",
                self.d_state,
                self.n_heads
            )));
        }
        Ok(())
    }
}

/// Learnable robot-role table; row `r` is `E_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleEmbeddingTable<T> {
    pub table: Tensor2<T>,
    pub grad: Tensor2<T>,
}

impl<T: Real> RoleEmbeddingTable<T> {
    pub fn init(max_robots: usize, d: usize, rng: &mut SeededRng) -> Self {
        let mut table = Tensor2::zeros(max_robots, d);
        for v in table.data_mut() {
            *v = T::lit(0.02 * rng.normal());
        }
        Self {
            grad: Tensor2::zeros(max_robots, d),
            table,
        }
    }

    pub fn row(&self, role: usize) -> Result<&[T]> {
        if role >= self.table.rows() {
            return Err(Error::TeamSize {
                n: role + 1,
                max: self.table.rows(),
            });
        }
        Ok(self.table.row(role))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub dims: FusionDims,
    pub mu_head: LinearMap<T>,
    pub sigma_head: LinearMap<T>,
    pub spectral_norm: LayerNorm<T>,
    pub spectral_mlp: Mlp<T>,
    pub pose_mlp: Mlp<T>,
    pub w_pose: LinearMap<T>,
    pub w_spectral: LinearMap<T>,
    pub roles: RoleEmbeddingTable<T>,
    pub w_q: LinearMap<T>,
    pub w_k: LinearMap<T>,
    pub w_v: LinearMap<T>,
    pub w_o: LinearMap<T>,
    pub w_b: LinearMap<T>,
}

impl<T: Real> FusionParams<T> {
    pub fn init(dims: FusionDims, rng: &mut SeededRng) -> Result<Self> {
        dims.validate()?;
        let d = dims.d_state;
        Ok(Self {
            mu_head: LinearMap::init(d, dims.d_token, true, rng),
            sigma_head: LinearMap::init(d, dims.d_token, true, rng),
            spectral_norm: LayerNorm::new(dims.n_low),
            spectral_mlp: Mlp::init(dims.n_low, dims.d_spectral, dims.d_spectral, rng),
            pose_mlp: Mlp::init(POSE_SUMMARY_DIM, dims.d_pose, dims.d_pose, rng),
            w_pose: LinearMap::init(d, dims.d_pose, false, rng),
            w_spectral: LinearMap::init(d, dims.d_spectral, false, rng),
            roles: RoleEmbeddingTable::init(dims.max_robots, d, rng),
            w_q: LinearMap::init(d, d, false, rng),
            w_k: LinearMap::init(d, d, false, rng),
            w_v: LinearMap::init(d, d, false, rng),
            w_o: LinearMap::init(d, d, false, rng),
            w_b: LinearMap::init(dims.d_belief, d, false, rng),
            dims,
        })
    }
}

impl<T: Real> Parameters<T> for FusionParams<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.mu_head.visit_params(&join(prefix, "mu_head"), f);
        self.sigma_head.visit_params(&join(prefix, "sigma_head"), f);
        self.spectral_norm
            .visit_params(&join(prefix, "spectral_norm"), f);
        self.spectral_mlp.visit_params(&join(prefix, "spectral_mlp"), f);
        self.pose_mlp.visit_params(&join(prefix, "pose_mlp"), f);
        self.w_pose.visit_params(&join(prefix, "w_pose"), f);
        self.w_spectral.visit_params(&join(prefix, "w_spectral"), f);
        f(
            &join(prefix, "roles"),
            self.roles.table.data_mut(),
            self.roles.grad.data_mut(),
        );
        self.w_q.visit_params(&join(prefix, "w_q"), f);
        self.w_k.visit_params(&join(prefix, "w_k"), f);
        self.w_v.visit_params(&join(prefix, "w_v"), f);
        self.w_o.visit_params(&join(prefix, "w_o"), f);
        self.w_b.visit_params(&join(prefix, "w_b"), f);
    }
}

/// What one robot feeds into fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotObservation<T> {
    /// Row of the role table assigned to this robot.
    pub role: usize,
    /// `K × d_token` sampled tokens in timestep order.
    pub tokens: Tensor2<T>,
    /// Mean commanded-motion summary over the sampled timesteps.
    pub pose_summary: [T; POSE_SUMMARY_DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralToken<T> {
    pub data: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SpectralCache<T> {
    /// Column-mean magnitudes of the retained bins, before normalization.
    pub retained: Vec<T>,
    norm: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    pooled: Vec<T>,
    sigma_pre: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxToken<T> {
    pub role: usize,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamBelief<T> {
    pub data: Vec<T>,
    /// Pooling weight of each robot, in input order.
    pub weights: Vec<T>,
}

fn check_token_rows<T: Real>(tokens: &Tensor2<T>, dims: &FusionDims) -> Result<()> {
    if tokens.rows() != dims.k || tokens.cols() != dims.d_token {
        return Err(Error::ShapeMismatch {
            op: "sampled tokens",
            lhs: tokens.shape(),
            rhs: (dims.k, dims.d_token),
        });
    }
    Ok(())
}

/// Low-frequency magnitude spectrum of the sampled tokens along the time
/// axis, column-mean pooled, layer-normalized and passed through the
/// spectral MLP.
pub fn extract_spectral_token<T: Real>(
    tokens: &Tensor2<T>,
    params: &FusionParams<T>,
) -> Result<(SpectralToken<T>, SpectralCache<T>)> {
    check_token_rows(tokens, &params.dims)?;
    let mags = column_dft_magnitudes(tokens, params.dims.n_low)?;
    let retained = mean_rows(&mags.transpose());
    let (normed, norm) = params.spectral_norm.forward(&retained)?;
    let (data, mlp) = params.spectral_mlp.forward(&normed)?;
    Ok((
        SpectralToken { data },
        SpectralCache {
            retained,
            norm,
            mlp,
        },
    ))
}

fn spectral_backward<T: Real>(
    params: &mut FusionParams<T>,
    cache: &SpectralCache<T>,
    d_token: &[T],
) -> Result<()> {
    let d_norm = params.spectral_mlp.backward(&cache.mlp, d_token)?;
    params.spectral_norm.backward(&cache.norm, &d_norm);
    Ok(())
}

/// `μ = W_μ mean(h)`, `σ = softplus(W_σ mean(h))`.
pub fn probabilistic_head<T: Real>(
    tokens: &Tensor2<T>,
    params: &FusionParams<T>,
) -> Result<(RobotState<T>, HeadCache<T>)> {
    check_token_rows(tokens, &params.dims)?;
    let pooled = mean_rows(tokens);
    let mu = params.mu_head.forward(&pooled)?;
    let sigma_pre = params.sigma_head.forward(&pooled)?;
    let sigma = sigma_pre.iter().map(|&x| softplus(x)).collect();
    Ok((RobotState { mu, sigma }, HeadCache { pooled, sigma_pre }))
}

/// Pose MLP applied to the mean commanded-motion summary over `frames`.
pub fn embed_pose<T: Real>(
    log: &PoseLog,
    frames: &[usize],
    params: &FusionParams<T>,
) -> Result<Vec<T>> {
    let summary = log.summarize(frames)?.map(T::lit);
    Ok(params.pose_mlp.forward(&summary)?.0)
}

/// `A_r = W_p P_r + W_f F_r + E_r`.
pub fn build_aux_tokens<T: Real>(
    pose: &[Vec<T>],
    spectral: &[SpectralToken<T>],
    roles: &[usize],
    params: &FusionParams<T>,
) -> Result<Vec<AuxToken<T>>> {
    if pose.len() != spectral.len() || pose.len() != roles.len() {
        return Err(Error::ShapeMismatch {
            op: "aux tokens",
            lhs: (pose.len(), spectral.len()),
            rhs: (roles.len(), 1),
        });
    }
    pose.iter()
        .zip(spectral)
        .zip(roles)
        .map(|((p, f), &role)| {
            let a = params.w_pose.forward(p)?;
            let b = params.w_spectral.forward(&f.data)?;
            let e = params.roles.row(role)?;
            let data = a
                .iter()
                .zip(&b)
                .zip(e)
                .map(|((&x, &y), &z)| x + y + z)
                .collect();
            Ok(AuxToken { role, data })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    queries: Vec<Vec<T>>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    /// `alpha[r][h]` is robot `r`'s attention row for head `h`.
    alpha: Vec<Vec<Vec<T>>>,
    context: Vec<Vec<T>>,
}

impl<T> AttentionCache<T> {
    pub fn weights(&self) -> &[Vec<Vec<T>>] {
        &self.alpha
    }
}

/// Scaled dot-product attention from the robot means (queries) onto the
/// auxiliary tokens (keys and values), with a residual update:
/// `μ̂_r = μ_r + W_o Σ_j α_rj W_v A_j`. Heads split the state width evenly
/// and each uses scale `1/√(d/H)`.
pub fn cross_attend<T: Real>(
    mu: &[Vec<T>],
    aux: &[AuxToken<T>],
    params: &FusionParams<T>,
) -> Result<(Vec<Vec<T>>, AttentionCache<T>)> {
    if mu.is_empty() || mu.len() != aux.len() {
        return Err(Error::TeamSize {
            n: mu.len(),
            max: params.dims.max_robots,
        });
    }
    let d = params.dims.d_state;
    let dh = d / params.dims.n_heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let queries = mu
        .iter()
        .map(|m| params.w_q.forward(m))
        .collect::<Result<Vec<_>>>()?;
    let keys = aux
        .iter()
        .map(|a| params.w_k.forward(&a.data))
        .collect::<Result<Vec<_>>>()?;
    let values = aux
        .iter()
        .map(|a| params.w_v.forward(&a.data))
        .collect::<Result<Vec<_>>>()?;

    let mut alpha = Vec::with_capacity(mu.len());
    let mut context = Vec::with_capacity(mu.len());
    let mut updated = Vec::with_capacity(mu.len());
    for (q, m) in queries.iter().zip(mu) {
        let mut c = vec![T::zero(); d];
        let mut heads = Vec::with_capacity(params.dims.n_heads);
        for h in 0..params.dims.n_heads {
            let span = h * dh..(h + 1) * dh;
            let logits: Vec<T> = keys
                .iter()
                .map(|k| dot(&q[span.clone()], &k[span.clone()]) * scale)
                .collect();
            let a = softmax(&logits)?;
            for (&w, v) in a.iter().zip(&values) {
                for (ci, &vi) in c[span.clone()].iter_mut().zip(&v[span.clone()]) {
                    *ci = *ci + w * vi;
                }
            }
            heads.push(a);
        }
        let o = params.w_o.forward(&c)?;
        updated.push(m.iter().zip(&o).map(|(&x, &y)| x + y).collect());
        alpha.push(heads);
        context.push(c);
    }
    Ok((
        updated,
        AttentionCache {
            queries,
            keys,
            values,
            alpha,
            context,
        },
    ))
}

/// Gradients w.r.t. the means and the auxiliary tokens, given gradients
/// w.r.t. the updated means.
fn cross_attend_backward<T: Real>(
    params: &mut FusionParams<T>,
    mu: &[Vec<T>],
    aux: &[AuxToken<T>],
    cache: &AttentionCache<T>,
    d_updated: &[Vec<T>],
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let n = mu.len();
    let d = params.dims.d_state;
    let dh = d / params.dims.n_heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut d_mu: Vec<Vec<T>> = d_updated.to_vec();
    let mut d_keys = vec![vec![T::zero(); d]; n];
    let mut d_values = vec![vec![T::zero(); d]; n];

    for r in 0..n {
        let d_ctx = params.w_o.backward(&cache.context[r], &d_updated[r])?;
        let mut d_q = vec![T::zero(); d];
        for (h, alpha) in cache.alpha[r].iter().enumerate() {
            let span = h * dh..(h + 1) * dh;
            let d_alpha: Vec<T> = cache
                .values
                .iter()
                .map(|v| dot(&d_ctx[span.clone()], &v[span.clone()]))
                .collect();
            for (dv, &a) in d_values.iter_mut().zip(alpha) {
                for (x, &g) in dv[span.clone()].iter_mut().zip(&d_ctx[span.clone()]) {
                    *x = *x + a * g;
                }
            }
            let d_logits = softmax_backward(alpha, &d_alpha);
            for (j, &gl) in d_logits.iter().enumerate() {
                let g = gl * scale;
                for (x, &kv) in d_q[span.clone()].iter_mut().zip(&cache.keys[j][span.clone()]) {
                    *x = *x + g * kv;
                }
                for (x, &qv) in d_keys[j][span.clone()]
                    .iter_mut()
                    .zip(&cache.queries[r][span.clone()])
                {
                    *x = *x + g * qv;
                }
            }
        }
        let back = params.w_q.backward(&mu[r], &d_q)?;
        for (x, b) in d_mu[r].iter_mut().zip(back) {
            *x = *x + b;
        }
    }

    let mut d_aux = Vec::with_capacity(n);
    for j in 0..n {
        let a = params.w_k.backward(&aux[j].data, &d_keys[j])?;
        let b = params.w_v.backward(&aux[j].data, &d_values[j])?;
        d_aux.push(a.iter().zip(&b).map(|(&x, &y)| x + y).collect());
    }
    Ok((d_mu, d_aux))
}

#[derive(Debug, Clone)]
pub struct PoolCache<T> {
    norms: Vec<T>,
    pooled: Vec<T>,
}

/// `z = W_b Σ_r softmax(-‖σ‖)_r μ̂_r`.
pub fn reliability_pool<T: Real>(
    mu_hat: &[Vec<T>],
    sigma: &[Vec<T>],
    params: &FusionParams<T>,
) -> Result<(TeamBelief<T>, PoolCache<T>)> {
    if mu_hat.is_empty() || mu_hat.len() != sigma.len() {
        return Err(Error::TeamSize {
            n: mu_hat.len(),
            max: params.dims.max_robots,
        });
    }
    let norms: Vec<T> = sigma.iter().map(|s| l2_norm(s)).collect();
    let neg: Vec<T> = norms.iter().map(|&n| -n).collect();
    let weights = softmax(&neg)?;
    let mut pooled = vec![T::zero(); params.dims.d_state];
    for (&w, m) in weights.iter().zip(mu_hat) {
        for (p, &v) in pooled.iter_mut().zip(m) {
            *p = *p + w * v;
        }
    }
    let data = params.w_b.forward(&pooled)?;
    Ok((TeamBelief { data, weights }, PoolCache { norms, pooled }))
}

/// Everything `fuse` keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    roles: Vec<usize>,
    heads: Vec<HeadCache<T>>,
    states: Vec<RobotState<T>>,
    spectral: Vec<SpectralCache<T>>,
    spectral_tokens: Vec<SpectralToken<T>>,
    pose: Vec<(Vec<T>, MlpCache<T>)>,
    aux: Vec<AuxToken<T>>,
    attention: AttentionCache<T>,
    mu_hat: Vec<Vec<T>>,
    pool: PoolCache<T>,
    weights: Vec<T>,
}

impl<T: Real> FusionCache<T> {
    pub fn states(&self) -> &[RobotState<T>] {
        &self.states
    }

    pub fn aux_tokens(&self) -> &[AuxToken<T>] {
        &self.aux
    }

    pub fn updated_means(&self) -> &[Vec<T>] {
        &self.mu_hat
    }

    pub fn spectral_tokens(&self) -> &[SpectralToken<T>] {
        &self.spectral_tokens
    }
}

/// Full fusion forward pass for a team, in input order.
pub fn fuse<T: Real>(
    params: &FusionParams<T>,
    robots: &[RobotObservation<T>],
) -> Result<(TeamBelief<T>, FusionCache<T>)> {
    let n = robots.len();
    if n == 0 || n > params.dims.max_robots {
        return Err(Error::TeamSize {
            n,
            max: params.dims.max_robots,
        });
    }
    let mut heads = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut spectral = Vec::with_capacity(n);
    let mut spectral_tokens = Vec::with_capacity(n);
    let mut pose = Vec::with_capacity(n);
    for obs in robots {
        let (f, fc) = extract_spectral_token(&obs.tokens, params)?;
        let (s, hc) = probabilistic_head(&obs.tokens, params)?;
        pose.push(params.pose_mlp.forward(&obs.pose_summary)?);
        spectral_tokens.push(f);
        spectral.push(fc);
        states.push(s);
        heads.push(hc);
    }
    let roles: Vec<usize> = robots.iter().map(|r| r.role).collect();
    let pose_vecs: Vec<Vec<T>> = pose.iter().map(|(p, _)| p.clone()).collect();
    let aux = build_aux_tokens(&pose_vecs, &spectral_tokens, &roles, params)?;
    let mu: Vec<Vec<T>> = states.iter().map(|s| s.mu.clone()).collect();
    let (mu_hat, attention) = cross_attend(&mu, &aux, params)?;
    let sigma: Vec<Vec<T>> = states.iter().map(|s| s.sigma.clone()).collect();
    let (belief, pool) = reliability_pool(&mu_hat, &sigma, params)?;
    if belief.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "fuse" });
    }
    let cache = FusionCache {
        roles,
        heads,
        states,
        spectral,
        spectral_tokens,
        pose,
        aux,
        attention,
        mu_hat,
        pool,
        weights: belief.weights.clone(),
    };
    Ok((belief, cache))
}

/// Accumulates parameter gradients for an upstream gradient `dz` on the
/// team belief.
pub fn fuse_backward<T: Real>(
    params: &mut FusionParams<T>,
    cache: &FusionCache<T>,
    dz: &[T],
) -> Result<()> {
    let n = cache.states.len();
    let d_pooled = params.w_b.backward(&cache.pool.pooled, dz)?;

    // pooling weights and the spread head
    let d_mu_hat: Vec<Vec<T>> = cache
        .weights
        .iter()
        .map(|&w| d_pooled.iter().map(|&g| w * g).collect())
        .collect();
    let d_weights: Vec<T> = cache.mu_hat.iter().map(|m| dot(&d_pooled, m)).collect();
    let d_neg = softmax_backward(&cache.weights, &d_weights);
    for r in 0..n {
        let d_norm = -d_neg[r];
        let norm = cache.pool.norms[r];
        let d_pre: Vec<T> = cache.states[r]
            .sigma
            .iter()
            .zip(&cache.heads[r].sigma_pre)
            .map(|(&s, &pre)| d_norm * s / norm * sigmoid(pre))
            .collect();
        params
            .sigma_head
            .backward(&cache.heads[r].pooled, &d_pre)?;
    }

    let mu: Vec<Vec<T>> = cache.states.iter().map(|s| s.mu.clone()).collect();
    let (d_mu, d_aux) = cross_attend_backward(params, &mu, &cache.aux, &cache.attention, &d_mu_hat)?;

    for r in 0..n {
        params.mu_head.backward(&cache.heads[r].pooled, &d_mu[r])?;
        let (p, pose_cache) = &cache.pose[r];
        let d_pose = params.w_pose.backward(p, &d_aux[r])?;
        params.pose_mlp.backward(pose_cache, &d_pose)?;
        let d_spec = params
            .w_spectral
            .backward(&cache.spectral_tokens[r].data, &d_aux[r])?;
        spectral_backward(params, &cache.spectral[r], &d_spec)?;
        let role = cache.roles[r];
        for (g, &x) in params.roles.grad.row_mut(role).iter_mut().zip(&d_aux[r]) {
            *g = *g + x;
        }
    }
    Ok(())
}
