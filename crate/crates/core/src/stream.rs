//! In-memory feature streams, query embeddings and pose/control logs.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numkit::{l2_norm, Real, Tensor2};
use crate::{Error, Result};

/// Tolerance on the l2 norm of CLIP rows and query embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Clip,
    Token,
    Query,
}

impl StreamKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Clip => 0,
            Self::Token => 1,
            Self::Query => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Clip),
            1 => Some(Self::Token),
            2 => Some(Self::Query),
            _ => None,
        }
    }

    fn unit_rows(self) -> bool {
        matches!(self, Self::Clip | Self::Query)
    }
}

/// Per-robot time series of frame embeddings, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream<T> {
    pub robot_id: u32,
    pub kind: StreamKind,
    data: Tensor2<T>,
}

impl<T: Real> FeatureStream<T> {
    pub fn new(robot_id: u32, kind: StreamKind, data: Tensor2<T>) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::DimensionTooSmall {
                op: "feature stream",
                dim: data.rows().min(data.cols()),
                min: 1,
            });
        }
        if !data.is_finite() {
            return Err(Error::NonFinite { op: "feature stream" });
        }
        if kind.unit_rows() {
            check_unit_rows(&data)?;
        }
        Ok(Self {
            robot_id,
            kind,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Tensor2<T> {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[T] {
        self.data.row(t)
    }

    pub fn cast<U: Real>(&self) -> FeatureStream<U> {
        FeatureStream {
            robot_id: self.robot_id,
            kind: self.kind,
            data: self.data.cast(),
        }
    }
}

fn check_unit_rows<T: Real>(data: &Tensor2<T>) -> Result<()> {
    for (row, r) in data.iter_rows().enumerate() {
        let norm = l2_norm(r).as_f64();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    Ok(())
}

/// Unit-norm query vector in the CLIP space.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding<T> {
    data: Vec<T>,
}

impl<T: Real> QueryEmbedding<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        let t = Tensor2::new(1, data.len(), data)?;
        if t.cols() == 0 {
            return Err(Error::DimensionTooSmall {
                op: "query",
                dim: 0,
                min: 1,
            });
        }
        check_unit_rows(&t)?;
        Ok(Self {
            data: t.into_data(),
        })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn cast<U: Real>(&self) -> QueryEmbedding<U> {
        QueryEmbedding {
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// One timestep of a pose or control log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v_fwd: f64,
    pub v_ang: f64,
}

/// Planar trajectory log; used both for commanded controls and for
/// ground-truth poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseLog {
    rows: Vec<PoseRow>,
}

/// Length of the per-robot pose summary `(x, y, cos θ, sin θ, v_fwd, v_ang)`.
pub const POSE_SUMMARY_DIM: usize = 6;

impl PoseLog {
    pub fn new(rows: Vec<PoseRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.t != i {
                return Err(Error::InvalidConfig(format!(
                    "pose log row {i} carries timestep {}",
                    r.t
                )));
            }
            if !(r.heading > -PI && r.heading <= PI) {
                return Err(Error::InvalidConfig(format!(
                    "heading {} at t={i} outside (-pi, pi]",
                    r.heading
                )));
            }
            let vals = [r.x, r.y, r.v_fwd, r.v_ang];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "pose log" });
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[PoseRow] {
        &self.rows
    }

    /// Mean of `(x, y, cos θ, sin θ, v_fwd, v_ang)` over the given timesteps.
    pub fn summarize(&self, frames: &[usize]) -> Result<[f64; POSE_SUMMARY_DIM]> {
        if frames.is_empty() {
            return Err(Error::InvalidConfig("pose summary over no frames".into()));
        }
        let mut acc = [0.0; POSE_SUMMARY_DIM];
        for &t in frames {
            let r = self.rows.get(t).ok_or(Error::MissingTimestep {
                t,
                len: self.rows.len(),
            })?;
            let (s, c) = libm::sincos(r.heading);
            let v = [r.x, r.y, c, s, r.v_fwd, r.v_ang];
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = frames.len() as f64;
        Ok(acc.map(|a| a / n))
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = libm::remainder(theta, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}
