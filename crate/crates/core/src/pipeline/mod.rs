//! End-to-end runs: ingest, clip sampling, tracking, filtering, task
//! generation and, optionally, temporal perplexity scoring.
//!
//! Every stage is computed in memory first. Files are written only once all
//! stages succeed, each through an atomic rename; if a write fails, files
//! already written by this run are removed.

mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::{file_digest, sha256_hex, to_jsonl, write_atomic, JsonlError};
use crate::tpl::Bucket;

pub use config::{apply_override, load_config, LoadedConfig, NllSource, PipelineConfig, SamplerConfig, TplConfig};
pub use stages::{FilterReportLine, SkipRecord};

/// Output file names, shared by `run` and the stage subcommands.
pub mod files {
    pub const FRAMES: &str = "frames.jsonl";
    pub const CLIPS: &str = "clips.jsonl";
    pub const INGEST_REPORT: &str = "ingest_report.jsonl";
    pub const TRACKS: &str = "tracks.jsonl";
    pub const TRACKS_FILTERED: &str = "tracks.filtered.jsonl";
    pub const FILTER_REPORT: &str = "filter_report.jsonl";
    pub const CONVERSATIONS: &str = "conversations.jsonl";
    pub const TASKGEN_REPORT: &str = "taskgen_report.jsonl";
    pub const JOBS: &str = "jobs.jsonl";
    pub const NLL: &str = "nll.jsonl";
    pub const TPL: &str = "tpl.jsonl";
    pub const TPL_REPORT: &str = "tpl_report.jsonl";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("input {path}: {message}")]
    Input { path: String, message: String },
    #[error("stage {stage} failed on {item}: {source}")]
    Stage {
        stage: &'static str,
        item: String,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Output(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub videos: usize,
    pub videos_skipped: usize,
    pub frames: usize,
    pub clips: usize,
    pub trajectories: usize,
    pub trajectories_kept: usize,
    /// Removed trajectories per reason.
    pub removed: BTreeMap<String, usize>,
    pub conversations: usize,
    pub clips_without_conversations: usize,
    pub jobs: usize,
    pub nll_records: usize,
    pub scores: usize,
    /// Scores per bucket.
    pub buckets: BTreeMap<String, usize>,
    pub pairing_issues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    /// Every output file except the manifest itself, in write order.
    pub outputs: Vec<FileDigest>,
    pub counts: RunCounts,
}

impl RunManifest {
    pub fn output_digest(&self, name: &str) -> Option<&str> {
        self.outputs.iter().find(|d| d.path == name).map(|d| d.sha256.as_str())
    }
}

/// Write files into `dir`. On failure, files written so far are removed.
pub fn write_outputs(dir: &Path, outputs: &[(&str, Vec<u8>)]) -> Result<(), PipelineError> {
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, bytes) in outputs {
        let path = dir.join(name);
        if let Err(e) = write_atomic(&path, bytes) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(())
}

fn bucket_name(b: Option<Bucket>) -> &'static str {
    match b {
        Some(Bucket::High) => "high",
        Some(Bucket::Medium) => "medium",
        Some(Bucket::Low) => "low",
        None => "unbucketed",
    }
}

/// Run every stage on `inputs` (detection files or directories of them) and
/// write all outputs plus `manifest.json` to `out`.
pub fn run_pipeline(loaded: &LoadedConfig, inputs: &[PathBuf], out: &Path) -> Result<RunManifest, PipelineError> {
    let config = &loaded.config;
    config.validate()?;
    let seed = config.seed;
    let input_files = stages::expand_inputs(inputs)?;
    let mut input_digests = Vec::new();
    for p in &input_files {
        input_digests.push(FileDigest {
            path: p.display().to_string(),
            sha256: file_digest(p).map_err(|e| PipelineError::Input {
                path: p.display().to_string(),
                message: e.to_string(),
            })?,
        });
    }

    let frames = stages::ingest_files(&input_files)?;
    let (clips, skipped) = stages::sample_clips(&frames, &config.sampler, seed)?;
    let tracks = stages::track_clips(&frames, &clips, &config.tracker)?;
    let (kept, removed) = stages::filter_tracks(&tracks, &clips, &config.filter)?;
    let (conversations, task_reports) = stages::generate_tasks(&kept, &clips, &config.taskgen, seed)?;
    let jobs = stages::scoring_jobs(&conversations, &kept, &clips, &config.tpl)?;

    let mut counts = RunCounts {
        videos: frames
            .iter()
            .map(|f| f.video_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        videos_skipped: skipped.len(),
        frames: frames.len(),
        clips: clips.len(),
        trajectories: tracks.len(),
        trajectories_kept: kept.len(),
        conversations: conversations.len(),
        clips_without_conversations: task_reports.len(),
        jobs: jobs.len(),
        ..RunCounts::default()
    };
    for r in &removed {
        let key = serde_json::to_value(r.removal.reason)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *counts.removed.entry(key).or_default() += 1;
    }

    let mut outputs: Vec<(&str, Vec<u8>)> = vec![
        (files::FRAMES, to_jsonl(&frames).into_bytes()),
        (files::CLIPS, to_jsonl(&clips).into_bytes()),
        (files::INGEST_REPORT, to_jsonl(&skipped).into_bytes()),
        (files::TRACKS, to_jsonl(&tracks).into_bytes()),
        (files::TRACKS_FILTERED, to_jsonl(&kept).into_bytes()),
        (files::FILTER_REPORT, to_jsonl(&removed).into_bytes()),
        (files::CONVERSATIONS, to_jsonl(&conversations).into_bytes()),
        (files::TASKGEN_REPORT, to_jsonl(&task_reports).into_bytes()),
        (files::JOBS, to_jsonl(&jobs).into_bytes()),
    ];

    let nll = match config.tpl.source {
        NllSource::None => None,
        NllSource::Oracle => {
            let records = stages::oracle_records(&conversations, &config.tpl)?;
            outputs.push((files::NLL, to_jsonl(&records).into_bytes()));
            Some(records)
        }
        NllSource::File => {
            let path = PathBuf::from(config.tpl.nll_path.as_deref().unwrap_or_default());
            let records = stages::read_nll(&path)?;
            input_digests.push(FileDigest {
                path: path.display().to_string(),
                sha256: file_digest(&path)?,
            });
            Some(records)
        }
    };
    if let Some(records) = nll {
        let (scores, issues) = stages::score_records(&records, &config.tpl)?;
        counts.nll_records = records.len();
        counts.scores = scores.len();
        counts.pairing_issues = issues.len();
        for s in &scores {
            *counts.buckets.entry(bucket_name(s.bucket).to_string()).or_default() += 1;
        }
        outputs.push((files::TPL, to_jsonl(&scores).into_bytes()));
        outputs.push((files::TPL_REPORT, to_jsonl(&issues).into_bytes()));
    }

    let mut inputs_all = loaded.sources.clone();
    inputs_all.extend(input_digests);
    let manifest = RunManifest {
        tool: "trajquery".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config: config.clone(),
        inputs: inputs_all,
        outputs: outputs
            .iter()
            .map(|(name, bytes)| FileDigest {
                path: name.to_string(),
                sha256: sha256_hex(bytes),
            })
            .collect(),
        counts,
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
    manifest_bytes.push(b'\n');
    outputs.push((files::MANIFEST, manifest_bytes));
    write_outputs(out, &outputs)?;
    Ok(manifest)
}
