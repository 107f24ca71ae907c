//! Stage functions on in-memory data. The pipeline and the per-stage
//! subcommands both go through these, so their outputs match byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{SamplerConfig, TplConfig};
use super::PipelineError;
use crate::filter::{apply_filters, FilterParams, RemovalRecord};
use crate::ingest::{parse_detections, sample_clip, ClipRecord, FrameRecord};
use crate::seed::{derive_seed, derived_rng};
use crate::taskgen::{answer_density, answer_projection, generate_for_clip, parse_answer, ConversationRecord, TaskGenConfig, TaskReport};
use crate::tpl::{
    build_scoring_job, bucketize, oracle_nll, pair_and_score, ContextMode, NllRecord, PairingIssue, ScoringJob,
    TplScore,
};
use crate::tracker::{associate, SubjectTrajectory, TrackRecord, TrackerParams};

fn stage_err(stage: &'static str, item: impl Into<String>, e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> PipelineError {
    PipelineError::Stage {
        stage,
        item: item.into(),
        source: e.into(),
    }
}

/// Expand directories to the `.jsonl` files they contain, sorted by name.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for p in inputs {
        let missing = |e: std::io::Error| PipelineError::Input {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let meta = fs::metadata(p).map_err(missing)?;
        if meta.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(missing)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(PipelineError::Input {
                    path: p.display().to_string(),
                    message: "directory holds no .jsonl files".into(),
                });
            }
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Parse and merge detection files into canonical (video, frame) order.
pub fn ingest_files(paths: &[PathBuf]) -> Result<Vec<FrameRecord>, PipelineError> {
    let mut frames = Vec::new();
    for p in paths {
        let file = fs::File::open(p).map_err(|e| PipelineError::Input {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        let parsed = parse_detections(BufReader::new(file)).map_err(|e| stage_err("ingest", p.display().to_string(), e))?;
        frames.extend(parsed);
    }
    frames.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
    for w in frames.windows(2) {
        if w[0].video_id == w[1].video_id && w[0].frame_index == w[1].frame_index {
            return Err(stage_err(
                "ingest",
                format!("{}:{}", w[1].video_id, w[1].frame_index),
                "frame appears in more than one input",
            ));
        }
        if w[0].video_id == w[1].video_id && (w[0].width, w[0].height) != (w[1].width, w[1].height) {
            return Err(stage_err(
                "ingest",
                format!("{}:{}", w[1].video_id, w[1].frame_index),
                format!(
                    "frame size {}x{} differs from {}x{} earlier in the video",
                    w[1].width, w[1].height, w[0].width, w[0].height
                ),
            ));
        }
    }
    Ok(frames)
}

/// A video that yielded no clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub video_id: String,
    pub reason: String,
    pub total_frames: u64,
    pub required_frames: u64,
}

/// Cut clips from every video. Videos too short for every configured
/// length/gap pair are skipped and reported.
pub fn sample_clips(
    frames: &[FrameRecord],
    config: &SamplerConfig,
    run_seed: u64,
) -> Result<(Vec<ClipRecord>, Vec<SkipRecord>), PipelineError> {
    let mut videos: BTreeMap<&str, (u64, u32, u32)> = BTreeMap::new();
    for f in frames {
        let e = videos.entry(&f.video_id).or_insert((0, f.width, f.height));
        e.0 = e.0.max(f.frame_index + 1);
    }
    let mut clips = Vec::new();
    let mut skipped = Vec::new();
    for (video_id, (total, width, height)) in videos {
        let shapes: Vec<_> = config
            .counts
            .iter()
            .flat_map(|&c| config.gaps.iter().map(move |&g| (c, g)))
            .filter(|(c, g)| g.required_frames(*c) <= total)
            .collect();
        if shapes.is_empty() {
            let required = config
                .counts
                .iter()
                .flat_map(|&c| config.gaps.iter().map(move |g| g.required_frames(c)))
                .min()
                .unwrap_or(0);
            skipped.push(SkipRecord {
                video_id: video_id.to_string(),
                reason: "too_short".into(),
                total_frames: total,
                required_frames: required,
            });
            continue;
        }
        for c in 0..config.clips_per_video {
            let clip_id = format!("{video_id}-c{c}");
            let mut rng = derived_rng(run_seed, "clip_shape", &clip_id);
            let (count, gap) = shapes[rng.gen_range(0..shapes.len())];
            let seed = derive_seed(run_seed, "sample_clip", &clip_id);
            let spec = sample_clip(video_id, total, count, gap, seed).map_err(|e| stage_err("ingest", &clip_id, e))?;
            clips.push(ClipRecord {
                clip_id,
                width,
                height,
                spec,
            });
        }
    }
    Ok((clips, skipped))
}

/// Run the tracker on every clip. Frames without a record count as empty.
pub fn track_clips(
    frames: &[FrameRecord],
    clips: &[ClipRecord],
    params: &TrackerParams,
) -> Result<Vec<TrackRecord>, PipelineError> {
    params
        .validate()
        .map_err(|m| PipelineError::Config(format!("tracker: {m}")))?;
    let index: HashMap<(&str, u64), &FrameRecord> =
        frames.iter().map(|f| ((f.video_id.as_str(), f.frame_index), f)).collect();
    let per_clip: Vec<Vec<TrackRecord>> = clips
        .par_iter()
        .map(|clip| {
            let clip_frames: Vec<FrameRecord> = clip
                .frame_indices()
                .iter()
                .map(|&i| match index.get(&(clip.video_id(), i)) {
                    Some(f) => (*f).clone(),
                    None => FrameRecord::empty(clip.video_id(), i, clip.width, clip.height),
                })
                .collect();
            associate(&clip_frames, params)
                .into_iter()
                .map(|trajectory| TrackRecord {
                    video_id: clip.video_id().to_string(),
                    clip_id: clip.clip_id.clone(),
                    trajectory,
                })
                .collect()
        })
        .collect();
    Ok(per_clip.into_iter().flatten().collect())
}

/// Trajectories of each clip, in file order.
pub fn group_tracks(
    tracks: &[TrackRecord],
    clips: &[ClipRecord],
    stage: &'static str,
) -> Result<BTreeMap<String, Vec<SubjectTrajectory>>, PipelineError> {
    let mut groups: BTreeMap<String, Vec<SubjectTrajectory>> =
        clips.iter().map(|c| (c.clip_id.clone(), Vec::new())).collect();
    for t in tracks {
        groups
            .get_mut(&t.clip_id)
            .ok_or_else(|| stage_err(stage, &t.clip_id, "trajectory refers to an unknown clip"))?
            .push(t.trajectory.clone());
    }
    Ok(groups)
}

/// A line of the filter report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReportLine {
    pub video_id: String,
    pub clip_id: String,
    #[serde(flatten)]
    pub removal: RemovalRecord,
}

pub fn filter_tracks(
    tracks: &[TrackRecord],
    clips: &[ClipRecord],
    params: &FilterParams,
) -> Result<(Vec<TrackRecord>, Vec<FilterReportLine>), PipelineError> {
    params
        .validate()
        .map_err(|m| PipelineError::Config(format!("filter: {m}")))?;
    let mut groups = group_tracks(tracks, clips, "filter")?;
    let mut kept = Vec::new();
    let mut report = Vec::new();
    for clip in clips {
        let list = groups.remove(&clip.clip_id).unwrap_or_default();
        let (survivors, removed) = apply_filters(list, clip.width, clip.height, params);
        kept.extend(survivors.into_iter().map(|trajectory| TrackRecord {
            video_id: clip.video_id().to_string(),
            clip_id: clip.clip_id.clone(),
            trajectory,
        }));
        report.extend(removed.into_iter().map(|removal| FilterReportLine {
            video_id: clip.video_id().to_string(),
            clip_id: clip.clip_id.clone(),
            removal,
        }));
    }
    Ok((kept, report))
}

pub fn generate_tasks(
    tracks: &[TrackRecord],
    clips: &[ClipRecord],
    config: &TaskGenConfig,
    run_seed: u64,
) -> Result<(Vec<ConversationRecord>, Vec<TaskReport>), PipelineError> {
    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let groups = group_tracks(tracks, clips, "gen-tasks")?;
    let results: Vec<_> = clips
        .par_iter()
        .map(|clip| {
            generate_for_clip(&groups[&clip.clip_id], clip, config, run_seed)
                .map_err(|e| stage_err("gen-tasks", &clip.clip_id, e))
        })
        .collect::<Result<_, _>>()?;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    for (r, report) in results {
        for conv in &r {
            check_round_trip(conv, &groups, clips)?;
        }
        records.extend(r);
        reports.extend(report);
    }
    Ok((records, reports))
}

fn check_round_trip(
    conv: &ConversationRecord,
    groups: &BTreeMap<String, Vec<SubjectTrajectory>>,
    clips: &[ClipRecord],
) -> Result<(), PipelineError> {
    let clip = clips
        .iter()
        .find(|c| c.clip_id == conv.query.clip_id)
        .ok_or_else(|| stage_err("gen-tasks", &conv.id, "conversation refers to an unknown clip"))?;
    let parsed = parse_answer(&conv.answer).map_err(|e| stage_err("gen-tasks", &conv.id, e))?;
    let expected = answer_projection(&groups[&clip.clip_id], clip, &conv.query).map_err(|e| stage_err("gen-tasks", &conv.id, e))?;
    if parsed.subjects != expected {
        return Err(stage_err("gen-tasks", &conv.id, "answer does not parse back to the queried trajectories"));
    }
    Ok(())
}

fn clip_of<'a>(
    clips: &'a HashMap<&str, &ClipRecord>,
    conversation: &ConversationRecord,
    stage: &'static str,
) -> Result<&'a ClipRecord, PipelineError> {
    clips
        .get(conversation.query.clip_id.as_str())
        .copied()
        .ok_or_else(|| stage_err(stage, &conversation.id, "conversation refers to an unknown clip"))
}

pub fn scoring_jobs(
    conversations: &[ConversationRecord],
    tracks: &[TrackRecord],
    clips: &[ClipRecord],
    config: &TplConfig,
) -> Result<Vec<ScoringJob>, PipelineError> {
    let groups = group_tracks(tracks, clips, "gen-tasks")?;
    let by_id: HashMap<&str, &ClipRecord> = clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    conversations
        .iter()
        .map(|conv| {
            let clip = clip_of(&by_id, conv, "gen-tasks")?;
            Ok(build_scoring_job(conv, &groups[&clip.clip_id], clip, config.keyframe))
        })
        .collect()
}

/// NLL records from the synthetic scorer: one full and one single-frame
/// record per conversation, density taken from the answer.
pub fn oracle_records(
    conversations: &[ConversationRecord],
    config: &TplConfig,
) -> Result<Vec<NllRecord>, PipelineError> {
    let mut out = Vec::with_capacity(conversations.len() * 2);
    for conv in conversations {
        let clip_len = conv.clip_frames.len() as u32;
        let density = answer_density(conv).map_err(|e| stage_err("tpl", &conv.id, e))?;
        let keyframe = config.keyframe.position(&conv.id, clip_len);
        let token_count = conv.answer.split_whitespace().count().max(1) as u64;
        for context in [ContextMode::Full, ContextMode::Single(keyframe)] {
            let mean_nll =
                oracle_nll(density, context, clip_len, &config.oracle).map_err(|e| stage_err("tpl", &conv.id, e))?;
            out.push(NllRecord {
                sample_id: conv.id.clone(),
                context,
                mean_nll,
                token_count,
                scorer_id: "oracle".into(),
            });
        }
    }
    Ok(out)
}

/// Pair, score and bucket. Scores come out in rank order.
pub fn score_records(records: &[NllRecord], config: &TplConfig) -> Result<(Vec<TplScore>, Vec<PairingIssue>), PipelineError> {
    let (scores, issues) = pair_and_score(records, config.keyframe).map_err(|e| stage_err("tpl", "nll records", e))?;
    let scores = bucketize(scores).map_err(|e| stage_err("tpl", "scores", e))?;
    Ok((scores, issues))
}

pub fn read_nll(path: &Path) -> Result<Vec<NllRecord>, PipelineError> {
    crate::jsonl::read_jsonl(path).map_err(|e| PipelineError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
