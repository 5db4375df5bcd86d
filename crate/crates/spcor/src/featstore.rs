//! On-disk feature streams (`.spcr`), pose/control CSV logs and episode
//! manifests.
//!
//! `.spcr` layout, little-endian throughout:
//!
//! ```text
//! 0   magic "SPCR"
//! 4   u32 version = 1
//! 8   u8 kind (0 clip, 1 token, 2 query)
//! 9   u8 dtype (0 = f32)
//! 10  u16 reserved = 0
//! 12  u32 n_frames
//! 16  u32 dim
//! 20  n_frames * dim f32, row-major
//! ..  u32 CRC32 of the payload
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spcor_core::privileged::{AccessTracker, Privileged};
use spcor_core::stream::{FeatureStream, PoseLog, PoseRow, QueryEmbedding, StreamKind};
use spcor_core::Tensor2;

use crate::{SpcorError, SpcorResult};

pub const MAGIC: &[u8; 4] = b"SPCR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const POSE_HEADER: [&str; 6] = ["t", "x", "y", "heading", "v_fwd", "v_ang"];
pub const MAX_ROBOTS: usize = 8;

/// Header fields plus payload of a `.spcr` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub kind: StreamKind,
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

pub fn encode_raw(raw: &RawTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + raw.data.len() * 4 + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(raw.kind.code());
    out.push(0);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(raw.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(raw.dim as u32).to_le_bytes());
    let start = out.len();
    for v in &raw.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> SpcorResult<RawTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(SpcorError::format(path, "missing SPCR magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(SpcorError::corrupt(path, "truncated header"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(SpcorError::format(path, format!("unsupported version {version}")));
    }
    let kind = StreamKind::from_code(bytes[8])
        .ok_or_else(|| SpcorError::format(path, format!("unknown stream kind {}", bytes[8])))?;
    if bytes[9] != 0 {
        return Err(SpcorError::format(path, format!("unsupported dtype {}", bytes[9])));
    }
    if bytes[10] != 0 || bytes[11] != 0 {
        return Err(SpcorError::format(path, "reserved bytes are not zero"));
    }
    let n_frames = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let payload_len = n_frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SpcorError::corrupt(path, "header sizes overflow"))?;
    let expected = HEADER_LEN + payload_len + 4;
    if bytes.len() != expected {
        return Err(SpcorError::corrupt(
            path,
            format!(
                "header declares {n_frames} x {dim} values ({expected} bytes) but file has {} bytes",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32_at(bytes, HEADER_LEN + payload_len);
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(SpcorError::corrupt(
            path,
            format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})"),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(RawTensor {
        kind,
        n_frames,
        dim,
        data,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> SpcorResult<()> {
    fs::write(path, bytes).map_err(|e| SpcorError::io(path, e))
}

fn read_bytes(path: &Path) -> SpcorResult<Vec<u8>> {
    fs::read(path).map_err(|e| SpcorError::io(path, e))
}

pub fn read_raw(path: &Path) -> SpcorResult<RawTensor> {
    decode_raw(&read_bytes(path)?, path)
}

pub fn write_raw(raw: &RawTensor, path: &Path) -> SpcorResult<()> {
    write_bytes(path, &encode_raw(raw))
}

pub fn write_stream(stream: &FeatureStream<f32>, path: &Path) -> SpcorResult<()> {
    write_raw(
        &RawTensor {
            kind: stream.kind,
            n_frames: stream.n_frames(),
            dim: stream.dim(),
            data: stream.data().data().to_vec(),
        },
        path,
    )
}

/// Reads a clip or token stream and checks its invariants.
pub fn read_stream(path: &Path, robot_id: u32) -> SpcorResult<FeatureStream<f32>> {
    let raw = read_raw(path)?;
    if raw.kind == StreamKind::Query {
        return Err(SpcorError::format(path, "expected a clip or token stream, found a query"));
    }
    let data = Tensor2::new(raw.n_frames, raw.dim, raw.data).map_err(|e| SpcorError::data(path, e))?;
    FeatureStream::new(robot_id, raw.kind, data).map_err(|e| SpcorError::data(path, e))
}

pub fn write_query(query: &QueryEmbedding<f32>, path: &Path) -> SpcorResult<()> {
    write_raw(
        &RawTensor {
            kind: StreamKind::Query,
            n_frames: 1,
            dim: query.dim(),
            data: query.data().to_vec(),
        },
        path,
    )
}

pub fn read_query(path: &Path) -> SpcorResult<QueryEmbedding<f32>> {
    let raw = read_raw(path)?;
    if raw.kind != StreamKind::Query || raw.n_frames != 1 {
        return Err(SpcorError::format(path, "expected a single-row query file"));
    }
    QueryEmbedding::new(raw.data).map_err(|e| SpcorError::data(path, e))
}

pub fn write_pose_log(log: &PoseLog, path: &Path) -> SpcorResult<()> {
    let io = |e: csv::Error| SpcorError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in log.rows() {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| SpcorError::io(path, e))
}

pub fn read_pose_log(path: &Path) -> SpcorResult<PoseLog> {
    let io = |e: csv::Error| SpcorError::format(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header: Vec<String> = r.headers().map_err(io)?.iter().map(str::to_owned).collect();
    if header != POSE_HEADER {
        return Err(SpcorError::format(
            path,
            format!("expected header {}, found {}", POSE_HEADER.join(","), header.join(",")),
        ));
    }
    let rows = r
        .deserialize::<PoseRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    PoseLog::new(rows).map_err(|e| SpcorError::data(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotEntry {
    pub robot_id: u32,
    pub clip_path: String,
    pub token_path: String,
    /// Ground-truth pose log; training only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_path: Option<String>,
    /// Commanded controls, dead-reckoned into the pose schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryEntry {
    pub query_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub episode_id: String,
    pub fps: f64,
    pub n_frames: usize,
    pub robots: Vec<RobotEntry>,
    pub queries: Vec<QueryEntry>,
}

pub fn write_manifest(manifest: &ManifestFile, path: &Path) -> SpcorResult<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Ground-truth pose logs are never opened.
    Inference,
    /// Ground-truth pose logs are loaded behind [`Privileged`].
    Training,
}

#[derive(Debug)]
pub struct EpisodeRobot {
    pub robot_id: u32,
    pub clip: FeatureStream<f32>,
    pub tokens: FeatureStream<f32>,
    pub controls: Option<PoseLog>,
    pub ground_truth: Option<Privileged<PoseLog>>,
}

#[derive(Debug)]
pub struct EpisodeQuery {
    /// Path as written in the manifest.
    pub path: String,
    pub embedding: QueryEmbedding<f32>,
    pub answer_index: Option<usize>,
    pub choices: Option<Vec<u32>>,
}

/// A fully validated episode.
#[derive(Debug)]
pub struct Episode {
    pub path: PathBuf,
    pub manifest: ManifestFile,
    pub robots: Vec<EpisodeRobot>,
    pub queries: Vec<EpisodeQuery>,
}

impl Episode {
    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }
}

/// Loads manifests in one mode and counts every ground-truth file it opens
/// and every later read of the loaded ground truth.
#[derive(Debug, Clone)]
pub struct EpisodeLoader {
    mode: LoadMode,
    ground_truth_opens: AccessTracker,
    privileged_reads: AccessTracker,
}

impl EpisodeLoader {
    pub fn new(mode: LoadMode) -> Self {
        Self {
            mode,
            ground_truth_opens: AccessTracker::new(),
            privileged_reads: AccessTracker::new(),
        }
    }

    pub fn mode(&self) -> LoadMode {
        self.mode
    }

    pub fn ground_truth_opens(&self) -> usize {
        self.ground_truth_opens.reads()
    }

    /// Tracker shared by every privileged value this loader produced.
    pub fn privileged_tracker(&self) -> &AccessTracker {
        &self.privileged_reads
    }

    /// Parses and validates `path` and everything it references. Either the
    /// whole episode loads or an error is returned.
    pub fn load(&self, path: &Path) -> SpcorResult<Episode> {
        let text = fs::read_to_string(path).map_err(|e| SpcorError::io(path, e))?;
        let manifest: ManifestFile =
            serde_json::from_str(&text).map_err(|e| SpcorError::manifest(path, e.to_string()))?;
        let bad = |msg: String| SpcorError::manifest(path, msg);
        let n = manifest.robots.len();
        if !(1..=MAX_ROBOTS).contains(&n) {
            return Err(bad(format!("team size {n} is outside [1, {MAX_ROBOTS}]")));
        }
        if manifest.n_frames == 0 {
            return Err(bad("n_frames must be positive".into()));
        }
        if !(manifest.fps.is_finite() && manifest.fps > 0.0) {
            return Err(bad(format!("fps {} must be positive", manifest.fps)));
        }
        if manifest.queries.is_empty() {
            return Err(bad("no queries".into()));
        }
        let mut ids: Vec<u32> = manifest.robots.iter().map(|r| r.robot_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(bad("duplicate robot_id".into()));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= MAX_ROBOTS) {
            return Err(bad(format!("robot_id {id} exceeds the role table (max {})", MAX_ROBOTS - 1)));
        }

        let dir = path.parent().unwrap_or(Path::new("."));
        let t = manifest.n_frames;
        let mut robots = Vec::with_capacity(n);
        for entry in &manifest.robots {
            let clip = read_stream(&dir.join(&entry.clip_path), entry.robot_id)?;
            let tokens = read_stream(&dir.join(&entry.token_path), entry.robot_id)?;
            if clip.kind != StreamKind::Clip || tokens.kind != StreamKind::Token {
                return Err(bad(format!(
                    "robot {}: clip_path must hold a clip stream and token_path a token stream",
                    entry.robot_id
                )));
            }
            for (what, frames) in [("clip", clip.n_frames()), ("token", tokens.n_frames())] {
                if frames != t {
                    return Err(bad(format!(
                        "robot {} {what} stream has {frames} frames, manifest says {t}",
                        entry.robot_id
                    )));
                }
            }
            let controls = match &entry.controls_path {
                Some(p) => {
                    let log = read_pose_log(&dir.join(p))?;
                    if log.len() != t {
                        return Err(bad(format!(
                            "robot {} controls log has {} rows, manifest says {t}",
                            entry.robot_id,
                            log.len()
                        )));
                    }
                    Some(log)
                }
                None => None,
            };
            let ground_truth = match (&entry.pose_path, self.mode) {
                (Some(p), LoadMode::Training) => {
                    self.ground_truth_opens.record();
                    let log = read_pose_log(&dir.join(p))?;
                    if log.len() != t {
                        return Err(bad(format!(
                            "robot {} pose log has {} rows, manifest says {t}",
                            entry.robot_id,
                            log.len()
                        )));
                    }
                    Some(Privileged::new(log, self.privileged_reads.clone()))
                }
                _ => None,
            };
            robots.push(EpisodeRobot {
                robot_id: entry.robot_id,
                clip,
                tokens,
                controls,
                ground_truth,
            });
        }
        let (d_clip, d_tok) = (robots[0].clip.dim(), robots[0].tokens.dim());
        if let Some(r) = robots
            .iter()
            .find(|r| r.clip.dim() != d_clip || r.tokens.dim() != d_tok)
        {
            return Err(bad(format!("robot {} stream widths differ from robot {}", r.robot_id, robots[0].robot_id)));
        }

        let mut queries = Vec::with_capacity(manifest.queries.len());
        for q in &manifest.queries {
            let embedding = read_query(&dir.join(&q.query_path))?;
            if embedding.dim() != d_clip {
                return Err(bad(format!(
                    "query {} has width {}, clip streams have {d_clip}",
                    q.query_path,
                    embedding.dim()
                )));
            }
            if let Some(a) = q.answer_index {
                if a > 3 {
                    return Err(bad(format!("answer_index {a} is outside 0..=3")));
                }
            }
            if let Some(c) = &q.choices {
                if c.len() != 4 {
                    return Err(bad(format!("expected 4 choices, found {}", c.len())));
                }
            }
            queries.push(EpisodeQuery {
                path: q.query_path.clone(),
                embedding,
                answer_index: q.answer_index,
                choices: q.choices.clone(),
            });
        }
        Ok(Episode {
            path: path.to_path_buf(),
            manifest,
            robots,
            queries,
        })
    }
}

/// Validating load that never opens ground-truth pose logs.
pub fn load_manifest(path: &Path) -> SpcorResult<Episode> {
    EpisodeLoader::new(LoadMode::Inference).load(path)
}
