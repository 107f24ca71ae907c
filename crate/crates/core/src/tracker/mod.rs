//! Two-stage, confidence-gated IoU association of detections into trajectories.
//!
//! Each frame is processed in order. Stage one pairs the live trajectories
//! (active and recently lost) with confident detections; stage two gives the
//! trajectories still unmatched a chance to claim low-confidence detections.
//! Both stages solve an optimal assignment on `1 - IoU(predicted, detection)`.

mod assignment;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::ingest::{Detection, FrameRecord};

pub use assignment::{assign, Assignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Active,
    Lost,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame_index: u64,
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub action: String,
}

impl TrackEntry {
    pub fn from_detection(frame_index: u64, det: &Detection) -> Self {
        Self {
            frame_index,
            bbox: det.bbox,
            score: det.score,
            caption: det.caption.clone(),
            action: det.action.clone(),
        }
    }
}

/// One subject followed across a clip. Entries are sorted by frame index and
/// all share the trajectory's category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrajectory {
    pub subject_id: u32,
    pub category: String,
    pub entries: Vec<TrackEntry>,
    pub state: TrackState,
}

impl SubjectTrajectory {
    pub fn entry_at(&self, frame_index: u64) -> Option<&TrackEntry> {
        self.entries
            .binary_search_by_key(&frame_index, |e| e.frame_index)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn mean_score(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.score).sum::<f64>() / self.entries.len() as f64
    }
}

/// A line of the tracks file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub video_id: String,
    pub clip_id: String,
    #[serde(flatten)]
    pub trajectory: SubjectTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    Static,
    ConstantVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub high_score_threshold: f64,
    pub low_score_threshold: f64,
    pub iou_match_threshold_stage1: f64,
    pub iou_match_threshold_stage2: f64,
    pub max_lost_frames: u32,
    pub motion: Motion,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            high_score_threshold: 0.6,
            low_score_threshold: 0.1,
            iou_match_threshold_stage1: 0.5,
            iou_match_threshold_stage2: 0.5,
            max_lost_frames: 2,
            motion: Motion::ConstantVelocity,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("tracker.{name} = {v} is outside [0, 1]"))
            }
        };
        unit("high_score_threshold", self.high_score_threshold)?;
        unit("low_score_threshold", self.low_score_threshold)?;
        unit("iou_match_threshold_stage1", self.iou_match_threshold_stage1)?;
        unit("iou_match_threshold_stage2", self.iou_match_threshold_stage2)?;
        if self.low_score_threshold > self.high_score_threshold {
            return Err("tracker.low_score_threshold exceeds high_score_threshold".into());
        }
        Ok(())
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Extrapolate a trajectory's box to `to_frame`.
///
/// Constant-velocity mode estimates a per-frame displacement from the last
/// two entries, scaled by their raw frame-index gap. A single entry, or
/// static mode, returns the last box. The result is not clamped to the image.
pub fn predict(trajectory: &SubjectTrajectory, to_frame: u64, motion: Motion) -> BoundingBox {
    let last = trajectory.entries.last().expect("trajectory has at least one entry");
    let n = trajectory.entries.len();
    if motion == Motion::Static || n < 2 {
        return last.bbox;
    }
    let prev = &trajectory.entries[n - 2];
    let dt = (last.frame_index - prev.frame_index) as f64;
    let ahead = to_frame as f64 - last.frame_index as f64;
    let (l, p) = (last.bbox, prev.bbox);
    let vx1 = (l.x1() - p.x1()) / dt;
    let vy1 = (l.y1() - p.y1()) / dt;
    let vx2 = (l.x2() - p.x2()) / dt;
    let vy2 = (l.y2() - p.y2()) / dt;
    if vx1 == vx2 && vy1 == vy2 {
        return l.translated(vx1 * ahead, vy1 * ahead);
    }
    // size change: extrapolate corners independently, keeping a valid extent
    let x1 = l.x1() + vx1 * ahead;
    let y1 = l.y1() + vy1 * ahead;
    let x2 = (l.x2() + vx2 * ahead).max(x1 + f64::EPSILON);
    let y2 = (l.y2() + vy2 * ahead).max(y1 + f64::EPSILON);
    l.translated(x1 - l.x1(), y1 - l.y1())
        .resized(x2 - x1, y2 - y1)
}

struct Live {
    missed: u32,
}

fn match_stage(
    trajectories: &[SubjectTrajectory],
    pool: &[usize],
    frame: &FrameRecord,
    candidates: &[usize],
    iou_threshold: f64,
    motion: Motion,
) -> Vec<(usize, usize)> {
    if pool.is_empty() || candidates.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = pool
        .iter()
        .map(|&t| {
            let traj = &trajectories[t];
            let predicted = predict(traj, frame.frame_index, motion);
            candidates
                .iter()
                .map(|&d| {
                    let det = &frame.detections[d];
                    if det.category != traj.category {
                        // above every admissible threshold
                        2.0
                    } else {
                        1.0 - iou(&predicted, &det.bbox)
                    }
                })
                .collect()
        })
        .collect();
    assign(&cost, Some(1.0 - iou_threshold))
        .pairs
        .into_iter()
        .map(|(r, c)| (pool[r], candidates[c]))
        .collect()
}

/// Associate the frames of one clip into subject trajectories.
///
/// `frames` must be sorted by strictly increasing `frame_index`. Subject ids
/// start at 1 in order of creation; within a frame, new trajectories are
/// created in detection order.
pub fn associate(frames: &[FrameRecord], params: &TrackerParams) -> Vec<SubjectTrajectory> {
    debug_assert!(frames.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    let mut trajectories: Vec<SubjectTrajectory> = Vec::new();
    let mut live: Vec<Live> = Vec::new();

    for frame in frames {
        let mut high = Vec::new();
        let mut low = Vec::new();
        for (i, det) in frame.detections.iter().enumerate() {
            if det.score >= params.high_score_threshold {
                high.push(i);
            } else if det.score >= params.low_score_threshold {
                low.push(i);
            }
        }

        let pool: Vec<usize> = (0..trajectories.len())
            .filter(|&t| trajectories[t].state != TrackState::Finished)
            .collect();
        let mut matched_track = vec![false; trajectories.len()];
        let mut matched_det = vec![false; frame.detections.len()];

        let first = match_stage(
            &trajectories,
            &pool,
            frame,
            &high,
            params.iou_match_threshold_stage1,
            params.motion,
        );
        for &(t, d) in &first {
            matched_track[t] = true;
            matched_det[d] = true;
        }
        let remaining: Vec<usize> = pool.iter().copied().filter(|&t| !matched_track[t]).collect();
        let second = match_stage(
            &trajectories,
            &remaining,
            frame,
            &low,
            params.iou_match_threshold_stage2,
            params.motion,
        );
        for &(t, d) in &second {
            matched_track[t] = true;
            matched_det[d] = true;
        }

        for (t, d) in first.into_iter().chain(second) {
            let traj = &mut trajectories[t];
            traj.entries
                .push(TrackEntry::from_detection(frame.frame_index, &frame.detections[d]));
            traj.state = TrackState::Active;
            live[t].missed = 0;
        }
        for &t in &pool {
            if matched_track[t] {
                continue;
            }
            live[t].missed += 1;
            trajectories[t].state = if live[t].missed > params.max_lost_frames {
                TrackState::Finished
            } else {
                TrackState::Lost
            };
        }

        for &d in &high {
            if matched_det[d] {
                continue;
            }
            let det = &frame.detections[d];
            trajectories.push(SubjectTrajectory {
                subject_id: trajectories.len() as u32 + 1,
                category: det.category.clone(),
                entries: vec![TrackEntry::from_detection(frame.frame_index, det)],
                state: TrackState::Active,
            });
            live.push(Live { missed: 0 });
        }
    }
    trajectories
}
