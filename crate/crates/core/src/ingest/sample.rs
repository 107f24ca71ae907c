use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng_from;

/// How consecutive sampled frames are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GapPolicy {
    Fixed { gap: u64 },
    /// Each successive gap is drawn uniformly from `[min, max]`.
    Random { min: u64, max: u64 },
}

impl GapPolicy {
    pub fn max_gap(&self) -> u64 {
        match *self {
            GapPolicy::Fixed { gap } => gap,
            GapPolicy::Random { max, .. } => max,
        }
    }

    /// Smallest video length that every draw of this policy fits into.
    pub fn required_frames(&self, count: usize) -> u64 {
        1 + (count.saturating_sub(1) as u64) * self.max_gap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub video_id: String,
    pub frame_indices: Vec<u64>,
    pub count: usize,
    pub gap: GapPolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("clip of {count} frames with max gap {max_gap} requires >= {required} frames, video has {total}")]
    TooShort {
        total: u64,
        count: usize,
        max_gap: u64,
        required: u64,
    },
    #[error("clip frame count must be positive")]
    ZeroCount,
    #[error("invalid gap policy {0:?}: gaps must be >= 1 and min <= max")]
    InvalidGap(GapPolicy),
    #[error("forced start {start} leaves no room for the clip in {total} frames")]
    StartOutOfRange { start: u64, total: u64 },
}

fn check(total_frames: u64, count: usize, gap: GapPolicy) -> Result<(), SampleError> {
    if count == 0 {
        return Err(SampleError::ZeroCount);
    }
    let valid = match gap {
        GapPolicy::Fixed { gap } => gap >= 1,
        GapPolicy::Random { min, max } => min >= 1 && min <= max,
    };
    if !valid {
        return Err(SampleError::InvalidGap(gap));
    }
    let required = gap.required_frames(count);
    if total_frames < required {
        return Err(SampleError::TooShort {
            total: total_frames,
            count,
            max_gap: gap.max_gap(),
            required,
        });
    }
    Ok(())
}

fn draw_gaps<R: Rng>(rng: &mut R, count: usize, gap: GapPolicy) -> Vec<u64> {
    (1..count)
        .map(|_| match gap {
            GapPolicy::Fixed { gap } => gap,
            GapPolicy::Random { min, max } => rng.gen_range(min..=max),
        })
        .collect()
}

fn build(video_id: &str, start: u64, gaps: &[u64], count: usize, gap: GapPolicy, seed: u64) -> ClipSpec {
    let mut frame_indices = Vec::with_capacity(count);
    let mut at = start;
    frame_indices.push(at);
    for g in gaps {
        at += g;
        frame_indices.push(at);
    }
    ClipSpec {
        video_id: video_id.to_string(),
        frame_indices,
        count,
        gap,
        seed,
    }
}

/// Sample `count` frame indices from a video of `total_frames` frames.
///
/// Gaps are drawn first, then the start is drawn uniformly from every
/// position that keeps the whole clip inside the video.
pub fn sample_clip(
    video_id: &str,
    total_frames: u64,
    count: usize,
    gap: GapPolicy,
    seed: u64,
) -> Result<ClipSpec, SampleError> {
    check(total_frames, count, gap)?;
    let mut rng = rng_from(seed);
    let gaps = draw_gaps(&mut rng, count, gap);
    let span: u64 = gaps.iter().sum();
    let start = rng.gen_range(0..=total_frames - 1 - span);
    Ok(build(video_id, start, &gaps, count, gap, seed))
}

/// Like [`sample_clip`] with the start index forced; random gaps still come from `seed`.
pub fn sample_clip_from(
    video_id: &str,
    total_frames: u64,
    count: usize,
    gap: GapPolicy,
    start: u64,
    seed: u64,
) -> Result<ClipSpec, SampleError> {
    check(total_frames, count, gap)?;
    let mut rng = rng_from(seed);
    let gaps = draw_gaps(&mut rng, count, gap);
    let span: u64 = gaps.iter().sum();
    if start + span > total_frames - 1 {
        return Err(SampleError::StartOutOfRange {
            start,
            total: total_frames,
        });
    }
    Ok(build(video_id, start, &gaps, count, gap, seed))
}
