//! Detection ingestion, clip sampling and synthetic scenes.

mod parse;
mod sample;
mod synth;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;

pub use parse::{group_by_video, parse_detections, serialize_detections, IngestError};
pub use sample::{sample_clip, sample_clip_from, ClipSpec, GapPolicy, SampleError};
pub use synth::{
    synth_corpus, synth_scene, CorpusConfig, Lead, ObjectSpec, SynthError, SyntheticSceneConfig, VideoTruth,
};

/// One subject observation in a frame: location plus appearance and action text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "bbox")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u64,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

impl FrameRecord {
    pub fn empty(video_id: &str, frame_index: u64, width: u32, height: u32) -> Self {
        Self {
            video_id: video_id.to_string(),
            frame_index,
            width,
            height,
            detections: Vec::new(),
        }
    }
}

/// A sampled clip together with the frame size its boxes refer to.
/// One line of the clips file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub spec: ClipSpec,
}

impl ClipRecord {
    pub fn video_id(&self) -> &str {
        &self.spec.video_id
    }

    pub fn frame_indices(&self) -> &[u64] {
        &self.spec.frame_indices
    }

    /// Number of frames in the clip.
    pub fn len(&self) -> u32 {
        self.spec.frame_indices.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.spec.frame_indices.is_empty()
    }

    /// 1-based clip position of a raw frame index.
    pub fn position_of(&self, frame_index: u64) -> Option<u32> {
        self.spec
            .frame_indices
            .binary_search(&frame_index)
            .ok()
            .map(|i| i as u32 + 1)
    }

    /// Raw frame index at a 1-based clip position.
    pub fn frame_at(&self, position: u32) -> Option<u64> {
        position
            .checked_sub(1)
            .and_then(|i| self.spec.frame_indices.get(i as usize).copied())
    }
}
