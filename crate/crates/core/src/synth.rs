//! Seeded synthetic multi-robot episodes with planted events, and naive
//! reference implementations used as test oracles.
//!
//! Each robot's clip stream hovers around a base direction weakly related to
//! the query (cosine 0.3). Every robot also passes a smooth, static
//! *distractor* segment that is strongly query-like (cosine about 0.93) but
//! spectrally quiet. Exactly one robot, the answer, observes the queried
//! event: a segment along a direction with cosine 0.85 to the query plus an
//! alternating-sign burst, which puts its energy in the Nyquist bin. Other
//! events are bursts along directions nearly orthogonal to the query.
//!
//! Semantic ranking alone therefore prefers the distractor; only the
//! spectral term recovers the event.
//!
//! All randomness comes from [`SeededRng`] and all transcendental functions
//! from `libm`, so output is bit-identical across platforms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::sampler::{RobotSelection, SamplerConfig, Selection};
use crate::stream::{wrap_angle, FeatureStream, PoseLog, PoseRow, QueryEmbedding, StreamKind};
use crate::{Error, Result, Tensor2};

/// Seed of the clip-to-token projection shared by every episode.
const TOKEN_PROJECTION_SEED: u64 = 0x70_6b65_6e5f_6d61;
const ALIGNED_COSINE: f64 = 0.85;
const DISTRACTOR_COSINE: f64 = 0.93;
const BASE_COSINE: f64 = 0.3;
const OFF_QUERY_COSINE: f64 = 0.05;
const RAMP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub n_robots: usize,
    pub d_clip: usize,
    pub d_token: usize,
    pub events_per_robot: usize,
    pub event_width: usize,
    pub noise_std: f64,
    /// Amplitude of the alternating-sign component inside events.
    pub burst_amplitude: f64,
    /// Length of the query-like static segment; 0 disables it.
    pub distractor_len: usize,
    pub fps: f64,
    /// Robot holding the queried event; drawn from the seed when unset.
    pub answer_robot: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 256,
            n_robots: 3,
            d_clip: 32,
            d_token: 32,
            events_per_robot: 2,
            event_width: 6,
            noise_std: 0.05,
            burst_amplitude: 0.55,
            distractor_len: 12,
            fps: 10.0,
            answer_robot: None,
        }
    }
}

impl SynthConfig {
    /// Frames each segment keeps clear on both sides so that no length-4
    /// window straddles two segments.
    const GAP: usize = 4;

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if !(1..=8).contains(&self.n_robots) {
            return Err(Error::TeamSize {
                n: self.n_robots,
                max: 8,
            });
        }
        if self.n_frames == 0 || self.d_clip < 2 || self.d_token == 0 {
            return bad("frame count and widths must be positive (clip width at least 2)".into());
        }
        if self.events_per_robot > 0 && self.event_width < 2 {
            return bad(format!("event width {} is below 2", self.event_width));
        }
        if self.d_clip < 6 {
            return bad(format!(
                "clip width {} is too small for the planted directions",
                self.d_clip
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite() && self.fps > 0.0) {
            return bad("noise std must be finite and non-negative, fps positive".into());
        }
        if let Some(r) = self.answer_robot {
            if r >= self.n_robots.min(4) {
                return bad(format!(
                    "answer robot {r} must be below min(N, 4) = {}",
                    self.n_robots.min(4)
                ));
            }
        }
        let need = self.segments_len();
        if need > self.n_frames {
            return bad(format!(
                "events and distractor need {need} frames, episode has {}",
                self.n_frames
            ));
        }
        Ok(())
    }

    fn segments_len(&self) -> usize {
        let mut lens = vec![self.event_width; self.events_per_robot];
        if self.distractor_len > 0 {
            lens.push(self.distractor_len);
        }
        lens.iter().map(|l| l + Self::GAP).sum::<usize>() + if lens.is_empty() { 0 } else { Self::GAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub robot_id: u32,
    pub start: usize,
    pub t_center: usize,
    pub width: usize,
    pub amplitude: f64,
    pub query_aligned: bool,
    /// Cosine between the event's feature direction and the query.
    pub cosine: f64,
}

#[derive(Debug, Clone)]
pub struct SynthRobot {
    pub robot_id: u32,
    pub clip: FeatureStream<f32>,
    pub tokens: FeatureStream<f32>,
    /// Dead-reckoned commanded motion.
    pub controls: PoseLog,
    pub ground_truth: PoseLog,
    /// First frame of the distractor segment, if any.
    pub distractor_start: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthEpisode {
    pub config: SynthConfig,
    pub query: QueryEmbedding<f32>,
    pub robots: Vec<SynthRobot>,
    pub events: Vec<PlantedEvent>,
    pub answer_index: usize,
    pub choices: [u32; 4],
}

impl SynthEpisode {
    pub fn aligned_events(&self) -> impl Iterator<Item = &PlantedEvent> {
        self.events.iter().filter(|e| e.query_aligned)
    }
}

fn normalize(v: &mut [f64]) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian_vec(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

/// Random unit vector orthogonal to every vector in `basis` (assumed
/// orthonormal).
fn orthogonal_unit(rng: &mut SeededRng, d: usize, basis: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        for b in basis {
            let p: f64 = v.iter().zip(*b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(*b).for_each(|(x, y)| *x -= p * y);
        }
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// `c·q + √(1−c²)·u` with `u ⟂ q` drawn at random.
fn direction_with_cosine(rng: &mut SeededRng, q: &[f64], c: f64) -> Vec<f64> {
    let u = orthogonal_unit(rng, q.len(), &[q]);
    let s = libm::sqrt(1.0 - c * c);
    q.iter().zip(&u).map(|(a, b)| c * a + s * b).collect()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Global clip-to-token projection with `N(0, 1/d_clip)` entries.
pub fn token_projection(d_token: usize, d_clip: usize) -> Tensor2<f64> {
    let mut rng = SeededRng::new(TOKEN_PROJECTION_SEED ^ ((d_token as u64) << 32) ^ d_clip as u64);
    let s = 1.0 / libm::sqrt(d_clip as f64);
    let data = (0..d_token * d_clip).map(|_| s * rng.normal()).collect();
    Tensor2::new(d_token, d_clip, data).expect("sized above")
}

/// Non-overlapping segment starts (with gaps) for the given lengths, in
/// input order.
fn place_segments(rng: &mut SeededRng, t: usize, lens: &[usize]) -> Result<Vec<usize>> {
    let gap = SynthConfig::GAP;
    for _ in 0..1000 {
        let starts: Vec<usize> = lens
            .iter()
            .map(|&l| gap + rng.below((t + 1).saturating_sub(l + 2 * gap).max(1)))
            .collect();
        let clash = (0..lens.len()).any(|i| {
            (0..i).any(|j| {
                let (a0, a1) = (starts[i], starts[i] + lens[i]);
                let (b0, b1) = (starts[j], starts[j] + lens[j]);
                a0 < b1 + gap && b0 < a1 + gap
            })
        });
        let fits = starts.iter().zip(lens).all(|(&s, &l)| s + l <= t);
        if !clash && fits {
            return Ok(starts);
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not place {} non-overlapping segments in {t} frames",
        lens.len()
    )))
}

struct RobotPlan {
    events: Vec<PlantedEvent>,
    /// Per event: feature direction and burst direction.
    dirs: Vec<(Vec<f64>, Vec<f64>)>,
    distractor: Option<(usize, Vec<f64>)>,
    base: Vec<f64>,
}

fn plan_robot(
    rng: &mut SeededRng,
    cfg: &SynthConfig,
    q: &[f64],
    robot: usize,
    holds_answer: bool,
) -> Result<RobotPlan> {
    let base = direction_with_cosine(rng, q, BASE_COSINE);
    let mut lens = vec![cfg.event_width; cfg.events_per_robot];
    if cfg.distractor_len > 0 {
        lens.push(cfg.distractor_len);
    }
    let starts = place_segments(rng, cfg.n_frames, &lens)?;
    let mut events = Vec::new();
    let mut dirs = Vec::new();
    for (i, &start) in starts.iter().take(cfg.events_per_robot).enumerate() {
        let aligned = holds_answer && i == 0;
        let cosine = if aligned {
            ALIGNED_COSINE
        } else {
            OFF_QUERY_COSINE
        };
        let dir = direction_with_cosine(rng, q, cosine);
        // burst direction orthogonal to both the query and the event
        // direction, so it does not move the semantic score on average
        let mut u = dir.clone();
        let p: f64 = u.iter().zip(q).map(|(a, b)| a * b).sum();
        u.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        normalize(&mut u);
        let burst = orthogonal_unit(rng, q.len(), &[q, &u]);
        events.push(PlantedEvent {
            robot_id: robot as u32,
            start,
            t_center: start + cfg.event_width / 2,
            width: cfg.event_width,
            amplitude: cfg.burst_amplitude,
            query_aligned: aligned,
            cosine,
        });
        dirs.push((dir, burst));
    }
    let distractor = if cfg.distractor_len > 0 {
        Some((
            starts[cfg.events_per_robot],
            direction_with_cosine(rng, q, DISTRACTOR_COSINE),
        ))
    } else {
        None
    };
    Ok(RobotPlan {
        events,
        dirs,
        distractor,
        base,
    })
}

fn clip_rows(rng: &mut SeededRng, cfg: &SynthConfig, plan: &RobotPlan) -> Vec<Vec<f64>> {
    (0..cfg.n_frames)
        .map(|t| {
            let mut v = plan.base.clone();
            if let Some((start, dir)) = &plan.distractor {
                let len = cfg.distractor_len;
                if t >= *start && t < start + len {
                    let ramp = RAMP.min(len / 2).max(1) as f64;
                    let k = (t - start) as f64;
                    let a = smoothstep((k + 1.0) / ramp).min(smoothstep((len as f64 - k) / ramp));
                    v.iter_mut()
                        .zip(dir)
                        .for_each(|(x, d)| *x = (1.0 - a) * *x + a * d);
                }
            }
            for (e, (dir, burst)) in plan.events.iter().zip(&plan.dirs) {
                if t >= e.start && t < e.start + e.width {
                    let sign = if (t - e.start) % 2 == 0 { 1.0 } else { -1.0 };
                    v.iter_mut()
                        .zip(dir.iter().zip(burst))
                        .for_each(|(x, (d, b))| *x = d + sign * e.amplitude * b);
                }
            }
            normalize(&mut v);
            for x in v.iter_mut() {
                *x += cfg.noise_std * rng.normal();
            }
            normalize(&mut v);
            v
        })
        .collect()
}

fn to_f32_rows(rows: &[Vec<f64>], renormalize: bool) -> Tensor2<f32> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        let mut v: Vec<f32> = r.iter().map(|&x| x as f32).collect();
        if renormalize {
            let n = libm::sqrtf(v.iter().map(|x| x * x).sum::<f32>());
            v.iter_mut().for_each(|x| *x /= n);
        }
        data.extend(v);
    }
    Tensor2::new(rows.len(), cols, data).expect("rectangular")
}

/// Commanded controls with smooth cruising and velocity bumps at events,
/// dead-reckoned; ground truth integrates the same commands plus actuation
/// noise.
fn pose_logs(rng: &mut SeededRng, cfg: &SynthConfig, events: &[PlantedEvent]) -> Result<(PoseLog, PoseLog)> {
    let dt = 1.0 / cfg.fps;
    let phase = rng.uniform_in(0.0, core::f64::consts::TAU);
    let cruise = rng.uniform_in(0.3, 0.5);
    let turn_sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    let start = (
        rng.uniform_in(-2.0, 2.0),
        rng.uniform_in(-2.0, 2.0),
        wrap_angle(rng.uniform_in(-3.0, 3.0)),
    );
    let mut commanded = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let tf = t as f64 * dt;
        let mut v = cruise + 0.1 * libm::sin(0.3 * tf + phase);
        let mut w = 0.15 * libm::sin(0.2 * tf + 2.0 * phase);
        for e in events {
            let half = e.width as f64 / 2.0;
            let x = (t as f64 - e.t_center as f64) / half;
            if x.abs() < 1.0 {
                let bump = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * x));
                v += 0.8 * bump;
                w += turn_sign * 0.6 * bump;
            }
        }
        commanded.push((v, w));
    }

    let integrate = |noise: &mut dyn FnMut() -> (f64, f64)| {
        let (mut x, mut y, mut h) = start;
        let mut rows = Vec::with_capacity(cfg.n_frames);
        for (t, &(v, w)) in commanded.iter().enumerate() {
            let (nv, nw) = noise();
            let (v, w) = (v + nv, w + nw);
            rows.push(PoseRow {
                t,
                x,
                y,
                heading: h,
                v_fwd: v,
                v_ang: w,
            });
            x += v * libm::cos(h) * dt;
            y += v * libm::sin(h) * dt;
            h = wrap_angle(h + w * dt);
        }
        rows
    };
    let controls = integrate(&mut || (0.0, 0.0));
    let truth = integrate(&mut || (0.05 * rng.normal(), 0.03 * rng.normal()));
    Ok((PoseLog::new(controls)?, PoseLog::new(truth)?))
}

/// Builds one episode in memory. Identical configs give identical episodes.
pub fn generate_episode(cfg: &SynthConfig) -> Result<SynthEpisode> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut q = gaussian_vec(&mut rng, cfg.d_clip);
    normalize(&mut q);
    let answer = match cfg.answer_robot {
        Some(r) => r,
        None => rng.below(cfg.n_robots.min(4)),
    };
    let projection = token_projection(cfg.d_token, cfg.d_clip);

    let mut robots = Vec::with_capacity(cfg.n_robots);
    let mut events = Vec::new();
    for r in 0..cfg.n_robots {
        let plan = plan_robot(&mut rng, cfg, &q, r, r == answer)?;
        let rows = clip_rows(&mut rng, cfg, &plan);
        let token_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|c| {
                (0..cfg.d_token)
                    .map(|i| {
                        let dot: f64 = projection.row(i).iter().zip(c).map(|(a, b)| a * b).sum();
                        dot + cfg.noise_std * rng.normal()
                    })
                    .collect()
            })
            .collect();
        let (controls, ground_truth) = pose_logs(&mut rng, cfg, &plan.events)?;
        let id = r as u32;
        robots.push(SynthRobot {
            robot_id: id,
            clip: FeatureStream::new(id, StreamKind::Clip, to_f32_rows(&rows, true))?,
            tokens: FeatureStream::new(id, StreamKind::Token, to_f32_rows(&token_rows, false))?,
            controls,
            ground_truth,
            distractor_start: plan.distractor.as_ref().map(|d| d.0),
        });
        events.extend(plan.events);
    }
    let query = QueryEmbedding::new(to_f32_rows(&[q], true).into_data())?;
    Ok(SynthEpisode {
        config: *cfg,
        query,
        robots,
        events,
        answer_index: answer,
        choices: [0, 1, 2, 3],
    })
}

// ---------------------------------------------------------------------------
// reference oracles

fn reference_standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mut mean = 0.0;
    for &x in v {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for &x in v {
        var += (x - mean) * (x - mean);
    }
    let std = libm::sqrt(var / n);
    let mut scale: f64 = 0.0;
    for &x in v {
        scale = scale.max(x.abs());
    }
    // rounding-level spread counts as no spread
    if std == 0.0 || std <= 4.0 * f64::EPSILON * scale {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| (x - mean) / std).collect()
}

/// Indices ordered by descending score, smaller index first on ties.
fn full_sort(idx: &[usize], score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(&b)));
    v
}

fn reference_energy(data: &Tensor2<f64>, t: usize, cfg: &SamplerConfig) -> f64 {
    let (len, d) = data.shape();
    let w = cfg.w;
    let rows: Vec<usize> = (0..w)
        .map(|j| {
            let i = t as isize - (w / 2) as isize + j as isize;
            i.clamp(0, len as isize - 1) as usize
        })
        .collect();
    let mut bins = vec![0.0; w / 2 + 1];
    for col in 0..d {
        let mut x: Vec<f64> = rows.iter().map(|&r| data.get(r, col)).collect();
        let mean = x.iter().sum::<f64>() / w as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        // non-DC bins ignore constant offsets; removing the first sample
        // makes constant columns exactly zero despite inexact twiddles
        let first = x[0];
        x.iter_mut().for_each(|v| *v -= first);
        for (k, bin) in bins.iter_mut().enumerate().skip(1) {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let ang = -2.0 * core::f64::consts::PI * (k * n) as f64 / w as f64;
                re += v * libm::cos(ang);
                im += v * libm::sin(ang);
            }
            *bin += re * re + im * im;
        }
    }
    let non_dc = &bins[1..];
    let width = non_dc.len() / cfg.n_bands;
    let mut e = 0.0;
    for b in 0..cfg.n_bands {
        let end = if b + 1 == cfg.n_bands {
            non_dc.len()
        } else {
            (b + 1) * width
        };
        let energy: f64 = non_dc[b * width..end].iter().sum();
        e += libm::log1p(energy / d as f64);
    }
    e
}

/// Candidate sets and selection per robot, computed directly with full
/// sorts and a textbook DFT, in 64-bit.
pub fn reference_sampler_detailed(
    clips: &[FeatureStream<f64>],
    query: &[f64],
    cfg: &SamplerConfig,
) -> (Vec<Vec<usize>>, Selection) {
    let mut candidates = Vec::with_capacity(clips.len());
    let mut per_robot = Vec::with_capacity(clips.len());
    for stream in clips {
        let data = stream.data();
        let len = data.rows();
        let s: Vec<f64> = (0..len)
            .map(|t| {
                let mut acc = 0.0;
                for (a, b) in data.row(t).iter().zip(query) {
                    acc += a * b;
                }
                acc
            })
            .collect();
        let all: Vec<usize> = (0..len).collect();
        let mut cand: Vec<usize> = full_sort(&all, |t| s[t])
            .into_iter()
            .take(cfg.m.min(len))
            .collect();
        cand.sort_unstable();

        let e: Vec<f64> = cand.iter().map(|&t| reference_energy(data, t, cfg)).collect();
        let s_c: Vec<f64> = cand.iter().map(|&t| s[t]).collect();
        let (e_std, s_std) = (reference_standardize(&e), reference_standardize(&s_c));
        let rho: Vec<f64> = (0..cand.len())
            .map(|i| {
                let mut r = 0.0;
                if cfg.use_spectral_energy {
                    r += e_std[i];
                }
                if cfg.use_semantic_refine {
                    r += s_std[i];
                }
                r
            })
            .collect();
        let positions: Vec<usize> = (0..cand.len()).collect();
        let mut frames: Vec<usize> = full_sort(&positions, |i| rho[i])
            .into_iter()
            .take(cfg.k.min(cand.len()))
            .map(|i| cand[i])
            .collect();
        frames.sort_unstable();
        per_robot.push(RobotSelection {
            robot_id: stream.robot_id,
            frames,
        });
        candidates.push(cand);
    }
    (candidates, Selection { per_robot })
}

pub fn reference_sampler(clips: &[FeatureStream<f64>], query: &[f64], cfg: &SamplerConfig) -> Selection {
    reference_sampler_detailed(clips, query, cfg).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub expected_candidates: Vec<Vec<usize>>,
    pub expected_selection: Selection,
    pub hits: usize,
    pub aligned_events: usize,
    pub recall: f64,
}

/// Fraction of query-aligned events whose centre lies within `⌊w/2⌋` of a
/// frame selected for that robot. With no aligned events the recall is 1.
pub fn measure_recall(selection: &Selection, events: &[PlantedEvent], w: usize) -> (usize, usize, f64) {
    let radius = w / 2;
    let mut hits = 0;
    let mut total = 0;
    for e in events.iter().filter(|e| e.query_aligned) {
        total += 1;
        let hit = selection
            .per_robot
            .iter()
            .filter(|r| r.robot_id == e.robot_id)
            .flat_map(|r| r.frames.iter())
            .any(|&f| f.abs_diff(e.t_center) <= radius);
        hits += usize::from(hit);
    }
    let recall = if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    };
    (hits, total, recall)
}

/// Reference selections for a generated episode together with their event
/// recall.
pub fn oracle_report(episode: &SynthEpisode, cfg: &SamplerConfig) -> OracleReport {
    let clips: Vec<FeatureStream<f64>> = episode.robots.iter().map(|r| r.clip.cast()).collect();
    let q: Vec<f64> = episode.query.data().iter().map(|&v| v as f64).collect();
    let (expected_candidates, expected_selection) = reference_sampler_detailed(&clips, &q, cfg);
    let (hits, aligned_events, recall) = measure_recall(&expected_selection, &episode.events, cfg.w);
    OracleReport {
        expected_candidates,
        expected_selection,
        hits,
        aligned_events,
        recall,
    }
}
