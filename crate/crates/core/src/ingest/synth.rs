use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Detection, FrameRecord};
use crate::bbox::BoundingBox;
use crate::seed::{derive_seed, rng_from};
use crate::tracker::{SubjectTrajectory, TrackEntry, TrackState};

const CATEGORIES: &[(&str, &[&str])] = &[
    ("person", &["walking", "running", "standing", "waving"]),
    ("car", &["driving", "turning", "parked"]),
    ("dog", &["running", "sitting", "sniffing the ground"]),
    ("bicycle", &["riding", "leaning on a wall"]),
    ("horse", &["galloping", "grazing", "trotting"]),
];
const COLORS: &[&str] = &["red", "blue", "green", "white", "black", "yellow", "grey"];

/// Explicit motion for one synthetic object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category: String,
    pub caption: String,
    /// Action labels, each held for an equal share of the visible span.
    pub actions: Vec<String>,
    /// Box at frame 0, before jitter.
    pub start: BoundingBox,
    /// Pixels per frame along x and y.
    pub velocity: [f64; 2],
    /// Inclusive frame range in which the object is emitted; `None` means all frames.
    pub visible: Option<[u32; 2]>,
    pub score_range: [f64; 2],
    /// Confident opening stretch before scores drop to `score_range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead: Option<Lead>,
    /// Probability of a missed detection on any visible frame but the first.
    pub dropout: f64,
}

/// The first `frames` visible frames are emitted with `score`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lead {
    pub frames: u32,
    pub score: f64,
}

impl ObjectSpec {
    fn visible_range(&self, num_frames: u32) -> (u32, u32) {
        match self.visible {
            Some([a, b]) => (a, b.min(num_frames.saturating_sub(1))),
            None => (0, num_frames.saturating_sub(1)),
        }
    }

    fn base_box(&self, frame: u32) -> BoundingBox {
        let f = frame as f64;
        self.start.translated(self.velocity[0] * f, self.velocity[1] * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub num_frames: u32,
    pub num_objects: usize,
    /// Uniform per-coordinate noise amplitude in pixels.
    pub jitter: f64,
    /// Upper bound on generated per-frame speed along each axis.
    pub max_speed: f64,
    pub score_range: [f64; 2],
    /// Explicit objects. When empty, `num_objects` objects are generated in
    /// disjoint vertical lanes, so no two objects ever overlap.
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub seed: u64,
}

impl SyntheticSceneConfig {
    pub fn lanes(video_id: &str, width: u32, height: u32, num_frames: u32, num_objects: usize, seed: u64) -> Self {
        Self {
            video_id: video_id.to_string(),
            width,
            height,
            num_frames,
            num_objects,
            jitter: 0.0,
            max_speed: 3.0,
            score_range: [0.7, 1.0],
            objects: Vec::new(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    Invalid(String),
    #[error("object {object} leaves the {width}x{height} frame at frame {frame}")]
    ExitsFrame {
        object: usize,
        frame: u32,
        width: u32,
        height: u32,
    },
    #[error("{lanes} lanes do not fit in width {width} with jitter {jitter}")]
    LaneTooNarrow { lanes: usize, width: u32, jitter: f64 },
}

fn validate(config: &SyntheticSceneConfig) -> Result<(), SynthError> {
    let invalid = |m: &str| Err(SynthError::Invalid(m.to_string()));
    if config.width == 0 || config.height == 0 {
        return invalid("image dimensions must be positive");
    }
    if config.num_frames == 0 {
        return invalid("num_frames must be positive");
    }
    if config.num_objects == 0 {
        return invalid("num_objects must be positive");
    }
    if !(config.jitter >= 0.0 && config.jitter.is_finite()) {
        return invalid("jitter must be a non-negative number");
    }
    if !(config.max_speed >= 0.0 && config.max_speed.is_finite()) {
        return invalid("max_speed must be a non-negative number");
    }
    let [lo, hi] = config.score_range;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return invalid("score_range must satisfy 0 <= lo <= hi <= 1");
    }
    if !config.objects.is_empty() && config.objects.len() != config.num_objects {
        return invalid("num_objects must match the number of explicit objects");
    }
    Ok(())
}

fn check_motion(idx: usize, obj: &ObjectSpec, config: &SyntheticSceneConfig) -> Result<(), SynthError> {
    let (w, h) = (config.width as f64, config.height as f64);
    let j = config.jitter;
    // rounding to 1/100 px needs a little room on top of the jitter
    let slack = 0.02;
    if obj.start.width() <= 2.0 * j + slack || obj.start.height() <= 2.0 * j + slack {
        return Err(SynthError::Invalid(format!(
            "object {idx} is too small for jitter {j}"
        )));
    }
    let [lo, hi] = obj.score_range;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(SynthError::Invalid(format!("object {idx} has an invalid score range")));
    }
    if obj.lead.is_some_and(|l| !(0.0..=1.0).contains(&l.score)) || !(0.0..=1.0).contains(&obj.dropout) {
        return Err(SynthError::Invalid(format!("object {idx} has an invalid score or dropout")));
    }
    if obj.category.is_empty() {
        return Err(SynthError::Invalid(format!("object {idx} has an empty category")));
    }
    let (first, last) = obj.visible_range(config.num_frames);
    if first > last {
        return Err(SynthError::Invalid(format!("object {idx} is never visible")));
    }
    // motion is linear, so checking the endpoints of the visible span suffices
    for frame in [first, last] {
        let b = obj.base_box(frame);
        if b.x1() - j < 0.0 || b.y1() - j < 0.0 || b.x2() + j > w || b.y2() + j > h {
            return Err(SynthError::ExitsFrame {
                object: idx,
                frame,
                width: config.width,
                height: config.height,
            });
        }
    }
    Ok(())
}

/// Objects confined to equal-width vertical lanes, with velocities small
/// enough that no object leaves its lane over `num_frames`.
pub fn lane_objects(config: &SyntheticSceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<ObjectSpec>, SynthError> {
    let n = config.num_objects;
    let (w, h) = (config.width as f64, config.height as f64);
    let margin = config.jitter + 1.0;
    let lane_w = w / n as f64;
    let inner_w = lane_w - 2.0 * margin;
    let inner_h = h - 2.0 * margin;
    if inner_w < 8.0 || inner_h < 8.0 {
        return Err(SynthError::LaneTooNarrow {
            lanes: n,
            width: config.width,
            jitter: config.jitter,
        });
    }
    let span = config.num_frames.saturating_sub(1).max(1) as f64;

    let mut objects = Vec::with_capacity(n);
    for lane in 0..n {
        let (category, actions) = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let color = COLORS[rng.gen_range(0..COLORS.len())];
        let bw = rng.gen_range(0.5..0.9) * inner_w;
        let bh = (rng.gen_range(0.25..0.5) * h).min(inner_h);
        let free_x = inner_w - bw;
        let free_y = inner_h - bh;
        let vx_max = config.max_speed.min(free_x / span);
        let vy_max = config.max_speed.min(free_y / span);
        let vx = if vx_max > 0.0 { rng.gen_range(-vx_max..=vx_max) } else { 0.0 };
        let vy = if vy_max > 0.0 { rng.gen_range(-vy_max..=vy_max) } else { 0.0 };

        let lane_x0 = lane as f64 * lane_w + margin;
        let (dx, dy) = (vx * span, vy * span);
        let x_lo = lane_x0 - dx.min(0.0);
        let x_hi = lane_x0 + free_x - dx.max(0.0);
        let y_lo = margin - dy.min(0.0);
        let y_hi = margin + free_y - dy.max(0.0);
        let x0 = if x_hi > x_lo { rng.gen_range(x_lo..=x_hi) } else { x_lo };
        let y0 = if y_hi > y_lo { rng.gen_range(y_lo..=y_hi) } else { y_lo };

        let n_actions = rng.gen_range(1..=2);
        let acts: Vec<String> = actions
            .choose_multiple(rng, n_actions)
            .map(|a| a.to_string())
            .collect();

        objects.push(ObjectSpec {
            category: category.to_string(),
            caption: format!("a {color} {category}"),
            actions: acts,
            start: BoundingBox::new(x0, y0, x0 + bw, y0 + bh)
                .map_err(|e| SynthError::Invalid(e.to_string()))?,
            velocity: [vx, vy],
            visible: None,
            score_range: config.score_range,
            lead: None,
            dropout: 0.0,
        });
    }
    Ok(objects)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Generate every frame of a scene together with its ground-truth trajectories.
///
/// Detection order inside each frame is shuffled. Subject ids follow object
/// order starting at 1.
pub fn synth_scene(config: &SyntheticSceneConfig) -> Result<(Vec<FrameRecord>, Vec<SubjectTrajectory>), SynthError> {
    validate(config)?;
    let mut rng = rng_from(config.seed);
    let objects = if config.objects.is_empty() {
        lane_objects(config, &mut rng)?
    } else {
        config.objects.clone()
    };
    for (idx, obj) in objects.iter().enumerate() {
        check_motion(idx, obj, config)?;
    }

    let (w, h) = (config.width as f64, config.height as f64);
    let j = config.jitter;
    let mut truth: Vec<SubjectTrajectory> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| SubjectTrajectory {
            subject_id: i as u32 + 1,
            category: o.category.clone(),
            entries: Vec::new(),
            state: TrackState::Active,
        })
        .collect();

    let mut frames = Vec::with_capacity(config.num_frames as usize);
    for frame in 0..config.num_frames {
        let mut detections = Vec::new();
        for (idx, obj) in objects.iter().enumerate() {
            let (first, last) = obj.visible_range(config.num_frames);
            if frame < first || frame > last {
                continue;
            }
            if frame > first && obj.dropout > 0.0 && rng.gen_bool(obj.dropout) {
                continue;
            }
            let base = obj.base_box(frame);
            let mut c = base.corners();
            if j > 0.0 {
                for v in c.iter_mut() {
                    *v += rng.gen_range(-j..=j);
                }
            }
            let c = [
                round2(c[0]).clamp(0.0, w),
                round2(c[1]).clamp(0.0, h),
                round2(c[2]).clamp(0.0, w),
                round2(c[3]).clamp(0.0, h),
            ];
            let bbox = BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| SynthError::Invalid(e.to_string()))?;
            let score = match obj.lead {
                Some(l) if frame < first + l.frames => l.score,
                _ => {
                    let [lo, hi] = obj.score_range;
                    round3(if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                }
            };
            let action = if obj.actions.is_empty() {
                String::new()
            } else {
                let len = (last - first + 1) as usize;
                let seg = (frame - first) as usize * obj.actions.len() / len;
                obj.actions[seg].clone()
            };
            let det = Detection {
                bbox,
                score,
                category: obj.category.clone(),
                caption: obj.caption.clone(),
                action,
            };
            truth[idx].entries.push(TrackEntry::from_detection(frame as u64, &det));
            detections.push(det);
        }
        detections.shuffle(&mut rng);
        frames.push(FrameRecord {
            video_id: config.video_id.clone(),
            frame_index: frame as u64,
            width: config.width,
            height: config.height,
            detections,
        });
    }
    Ok((frames, truth))
}

/// Knobs for a multi-video synthetic corpus used by the bundled fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub videos: usize,
    pub width: u32,
    pub height: u32,
    pub frames: [u32; 2],
    pub objects: [usize; 2],
    pub jitter: f64,
    pub max_speed: f64,
    pub score_range: [f64; 2],
    /// Chance that an object is shrunk well below the small-object cutoff.
    pub small_prob: f64,
    /// Chance that an object is confident for a while and then fades to low scores.
    pub fading_prob: f64,
    /// Chance that an object is visible only briefly.
    pub brief_prob: f64,
    pub dropout: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            videos: 20,
            width: 640,
            height: 360,
            frames: [160, 240],
            objects: [2, 4],
            jitter: 1.5,
            max_speed: 2.0,
            score_range: [0.65, 0.98],
            small_prob: 0.1,
            fading_prob: 0.1,
            brief_prob: 0.1,
            dropout: 0.03,
        }
    }
}

/// Ground-truth trajectories of one video.
pub type VideoTruth = (String, Vec<SubjectTrajectory>);

/// Generate a corpus of independent scenes, one per video, ids `vid000`, `vid001`, ...
pub fn synth_corpus(config: &CorpusConfig, seed: u64) -> Result<(Vec<FrameRecord>, Vec<VideoTruth>), SynthError> {
    if config.frames[0] > config.frames[1] || config.objects[0] > config.objects[1] || config.objects[0] == 0 {
        return Err(SynthError::Invalid("corpus ranges must be non-empty".into()));
    }
    let mut all_frames = Vec::new();
    let mut truths = Vec::new();
    for v in 0..config.videos {
        let video_id = format!("vid{v:03}");
        let vseed = derive_seed(seed, "synth_video", &video_id);
        let mut rng = rng_from(vseed);
        let num_frames = rng.gen_range(config.frames[0]..=config.frames[1]);
        let num_objects = rng.gen_range(config.objects[0]..=config.objects[1]);
        let mut scene = SyntheticSceneConfig {
            video_id: video_id.clone(),
            width: config.width,
            height: config.height,
            num_frames,
            num_objects,
            jitter: config.jitter,
            max_speed: config.max_speed,
            score_range: config.score_range,
            objects: Vec::new(),
            seed: rng.gen(),
        };
        let mut objects = lane_objects(&scene, &mut rng)?;
        let small_side = ((config.width as f64 * config.height as f64) / 128.0).sqrt();
        for obj in objects.iter_mut() {
            obj.dropout = config.dropout;
            if rng.gen_bool(config.small_prob) {
                let side_w = small_side.min(obj.start.width());
                let side_h = small_side.min(obj.start.height());
                obj.start = BoundingBox::new(obj.start.x1(), obj.start.y1(), obj.start.x1() + side_w, obj.start.y1() + side_h)
                    .map_err(|e| SynthError::Invalid(e.to_string()))?;
            }
            if rng.gen_bool(config.fading_prob) {
                obj.lead = Some(Lead {
                    frames: rng.gen_range(0..=num_frames / 3),
                    score: config.score_range[1],
                });
                obj.score_range = [0.15, 0.4];
            }
            if rng.gen_bool(config.brief_prob) {
                let len = (num_frames / 30).max(2);
                let first = rng.gen_range(0..num_frames - len);
                obj.visible = Some([first, first + len - 1]);
            }
        }
        scene.objects = objects;
        let (frames, truth) = synth_scene(&scene)?;
        all_frames.extend(frames);
        truths.push((video_id, truth));
    }
    Ok((all_frames, truths))
}
