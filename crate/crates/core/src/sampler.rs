//! Training-free two-stage frame sampler.
//!
//! Stage one keeps the `M` frames most similar to the query. Stage two scores
//! each candidate by the log band energy of the non-DC temporal spectrum of a
//! short, locally mean-centred window around it, standardizes energy (and,
//! optionally, similarity) within the candidate set, and keeps the `K`
//! best-scoring frames.
//!
//! Ties are always broken toward the smaller timestep, and windows that run
//! past either end of the stream replicate the boundary frame.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numkit::{dot, rfft_mag_sq, Real, Tensor2};
use crate::stream::{FeatureStream, QueryEmbedding, StreamKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Candidate budget.
    pub m: usize,
    /// Window length.
    pub w: usize,
    /// Final budget.
    pub k: usize,
    /// Number of bands the non-DC bins are pooled into.
    pub n_bands: usize,
    pub padding: Padding,
    /// Add the standardized similarity to the ranking score.
    pub use_semantic_refine: bool,
    /// Add the standardized spectral energy to the ranking score. Turning
    /// this off ranks candidates by similarity alone.
    pub use_spectral_energy: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            m: 32,
            w: 4,
            k: 8,
            n_bands: 2,
            padding: Padding::Replicate,
            use_semantic_refine: true,
            use_spectral_energy: true,
        }
    }
}

impl SamplerConfig {
    /// Default configuration with `n_bands` reset to one band per non-DC bin.
    pub fn with_budget(m: usize, w: usize, k: usize) -> Self {
        Self {
            m,
            w,
            k,
            n_bands: w / 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.m {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= K <= M, got K={} M={}",
                self.k, self.m
            )));
        }
        if self.w < 2 {
            return Err(Error::WindowTooShort { len: self.w });
        }
        if self.n_bands == 0 || self.n_bands > self.w / 2 {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= B <= w/2, got B={} w={}",
                self.n_bands, self.w
            )));
        }
        Ok(())
    }
}

/// Per-frame scores for one robot stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores<T> {
    /// Query similarity of every frame.
    pub semantic: Vec<T>,
    /// Candidate timesteps, ascending.
    pub candidates: Vec<usize>,
    /// Spectral energy per candidate (aligned with `candidates`).
    pub energy: Vec<T>,
    pub energy_std: Vec<T>,
    pub semantic_std: Vec<T>,
    pub rho: Vec<T>,
}

impl<T: Real> FrameScores<T> {
    pub fn is_candidate(&self, t: usize) -> bool {
        self.candidates.binary_search(&t).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotSelection {
    pub robot_id: u32,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub per_robot: Vec<RobotSelection>,
}

fn require_clip<T: Real>(stream: &FeatureStream<T>) -> Result<()> {
    if stream.kind != StreamKind::Clip {
        return Err(Error::InvalidConfig(format!(
            "robot {} sampler input is a {:?} stream, expected clip",
            stream.robot_id, stream.kind
        )));
    }
    Ok(())
}

/// `s_t = ⟨z_t, q⟩` for every frame.
pub fn semantic_scores<T: Real>(
    stream: &FeatureStream<T>,
    query: &QueryEmbedding<T>,
) -> Result<Vec<T>> {
    if stream.dim() != query.dim() {
        return Err(Error::ShapeMismatch {
            op: "semantic_scores",
            lhs: (stream.n_frames(), stream.dim()),
            rhs: (query.dim(), 1),
        });
    }
    Ok(stream
        .data()
        .iter_rows()
        .map(|z| dot(z, query.data()))
        .collect())
}

/// Indices of the `k` largest values (ties toward the smaller index), in
/// descending score order.
fn top_k_by_score<T: Real>(idx: &[usize], score: impl Fn(usize) -> T, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..idx.len()).collect();
    order.sort_by(|&a, &b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(idx[a].cmp(&idx[b]))
    });
    order.truncate(k);
    order.into_iter().map(|i| idx[i]).collect()
}

/// The `min(M, T)` most query-similar frames, sorted ascending.
pub fn top_m_candidates<T: Real>(semantic: &[T], m: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..semantic.len()).collect();
    let mut c = top_k_by_score(&all, |i| semantic[i], m);
    c.sort_unstable();
    c
}

/// Timesteps covered by the window around `t`, boundary frames replicated:
/// `t - w/2 ..= t - w/2 + w - 1`, clamped to `[0, len - 1]`.
pub fn window_rows(len: usize, t: usize, w: usize) -> Vec<usize> {
    let start = t as isize - (w / 2) as isize;
    (0..w as isize)
        .map(|j| (start + j).clamp(0, len as isize - 1) as usize)
        .collect()
}

/// Pools the non-DC bins `1..=w/2` into `n_bands` contiguous bands (the last
/// absorbs any remainder) and returns `ln(1 + band_energy / dim)` per band.
pub fn band_log_energies<T: Real>(bins: &[T], n_bands: usize, dim: usize) -> Vec<T> {
    let non_dc = &bins[1..];
    let width = non_dc.len() / n_bands;
    let d = T::lit(dim as f64);
    (0..n_bands)
        .map(|b| {
            let end = if b + 1 == n_bands {
                non_dc.len()
            } else {
                (b + 1) * width
            };
            let energy: T = non_dc[b * width..end].iter().copied().sum();
            (energy / d).ln_1p()
        })
        .collect()
}

/// Spectral energy of the mean-centred window around frame `t`.
pub fn window_fft_energy<T: Real>(
    stream: &FeatureStream<T>,
    t: usize,
    cfg: &SamplerConfig,
) -> Result<T> {
    cfg.validate()?;
    let data = stream.data();
    let rows = window_rows(data.rows(), t, cfg.w);
    let mut window = data.select_rows(&rows);
    let n = T::lit(cfg.w as f64);
    for col in 0..window.cols() {
        let mean = (0..cfg.w).map(|r| window.get(r, col)).sum::<T>() / n;
        for r in 0..cfg.w {
            let v = window.get(r, col) - mean;
            window.set(r, col, v);
        }
    }
    let bins = rfft_mag_sq(&window)?;
    Ok(band_log_energies(&bins, cfg.n_bands, data.cols())
        .into_iter()
        .sum())
}

/// Population z-scores. A set whose spread is within rounding noise of its
/// magnitude (`std <= 4 ε max|v|`) maps to all zeros.
pub fn standardize_within<T: Real>(values: &[T]) -> Vec<T> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = T::lit(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let scale = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if std <= T::lit(4.0) * T::epsilon() * scale || std == T::zero() {
        return values.iter().map(|_| T::zero()).collect();
    }
    values.iter().map(|&v| (v - mean) / std).collect()
}

/// Keeps the `k` highest-`rho` candidates (ties toward the smaller
/// timestep) and returns them ascending.
pub fn select_top<T: Real>(candidates: &[usize], rho: &[T], k: usize) -> Vec<usize> {
    let mut picked = top_k_by_score(candidates, |i| rho[i], k);
    picked.sort_unstable();
    picked
}

/// Fills the standardized scores and `rho` of `scores` and returns the
/// selected timesteps.
pub fn rank_and_select<T: Real>(scores: &mut FrameScores<T>, cfg: &SamplerConfig) -> Vec<usize> {
    let cand_sem: Vec<T> = scores
        .candidates
        .iter()
        .map(|&t| scores.semantic[t])
        .collect();
    scores.energy_std = standardize_within(&scores.energy);
    scores.semantic_std = standardize_within(&cand_sem);
    scores.rho = (0..scores.candidates.len())
        .map(|i| {
            let mut r = T::zero();
            if cfg.use_spectral_energy {
                r = r + scores.energy_std[i];
            }
            if cfg.use_semantic_refine {
                r = r + scores.semantic_std[i];
            }
            r
        })
        .collect();
    select_top(&scores.candidates, &scores.rho, cfg.k)
}

/// Scores one robot stream and returns its scores and selection.
pub fn sample_robot<T: Real>(
    stream: &FeatureStream<T>,
    query: &QueryEmbedding<T>,
    cfg: &SamplerConfig,
) -> Result<(FrameScores<T>, Vec<usize>)> {
    cfg.validate()?;
    require_clip(stream)?;
    let semantic = semantic_scores(stream, query)?;
    let candidates = top_m_candidates(&semantic, cfg.m);
    let energy = if cfg.use_spectral_energy {
        candidates
            .iter()
            .map(|&t| window_fft_energy(stream, t, cfg))
            .collect::<Result<Vec<T>>>()?
    } else {
        alloc::vec![T::zero(); candidates.len()]
    };
    let mut scores = FrameScores {
        semantic,
        candidates,
        energy,
        energy_std: Vec::new(),
        semantic_std: Vec::new(),
        rho: Vec::new(),
    };
    let frames = rank_and_select(&mut scores, cfg);
    Ok((scores, frames))
}

/// Samples every robot independently; output follows input order.
pub fn run_sampler<T: Real>(
    streams: &[&FeatureStream<T>],
    query: &QueryEmbedding<T>,
    cfg: &SamplerConfig,
) -> Result<Selection> {
    cfg.validate()?;
    if let Some(first) = streams.first() {
        if let Some(bad) = streams.iter().find(|s| s.n_frames() != first.n_frames()) {
            return Err(Error::InvalidConfig(format!(
                "robot {} has {} frames, robot {} has {}",
                bad.robot_id,
                bad.n_frames(),
                first.robot_id,
                first.n_frames()
            )));
        }
    }
    let per_robot = streams
        .iter()
        .map(|s| {
            let (_, frames) = sample_robot(s, query, cfg)?;
            Ok(RobotSelection {
                robot_id: s.robot_id,
                frames,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Selection { per_robot })
}

/// Convenience for tests and tools: clip stream from raw rows.
pub fn clip_stream<T: Real>(robot_id: u32, rows: Tensor2<T>) -> Result<FeatureStream<T>> {
    FeatureStream::new(robot_id, StreamKind::Clip, rows)
}
