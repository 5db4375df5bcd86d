//! Selection files written by `spcor sample`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spcor_core::sampler::{RobotSelection, SamplerConfig, Selection};

use crate::{SpcorError, SpcorResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionFile {
    pub episode_id: String,
    pub query_path: String,
    pub per_robot: Vec<RobotSelection>,
    pub config: SamplerConfig,
}

impl SelectionFile {
    pub fn selection(&self) -> Selection {
        Selection {
            per_robot: self.per_robot.clone(),
        }
    }

    pub fn frames_for(&self, robot_id: u32) -> Option<&[usize]> {
        self.per_robot
            .iter()
            .find(|r| r.robot_id == robot_id)
            .map(|r| r.frames.as_slice())
    }
}

pub fn write_selection(sel: &SelectionFile, path: &Path) -> SpcorResult<()> {
    let mut text = serde_json::to_string_pretty(sel).expect("selection serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| SpcorError::io(path, e))
}

pub fn read_selection(path: &Path) -> SpcorResult<SelectionFile> {
    let text = fs::read_to_string(path).map_err(|e| SpcorError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SpcorError::format(path, e.to_string()))
}
