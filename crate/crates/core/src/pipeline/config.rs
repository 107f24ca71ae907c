use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FileDigest, PipelineError, RunManifest};
use crate::filter::FilterParams;
use crate::ingest::GapPolicy;
use crate::jsonl::{read_to_string, sha256_hex};
use crate::rewardgap::SweepConfig;
use crate::taskgen::{TaskGenConfig, Templates};
use crate::tpl::{KeyframePolicy, OracleScorerConfig};
use crate::tracker::TrackerParams;

/// How each video is cut into clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Clip lengths to choose from.
    pub counts: Vec<usize>,
    /// Gap policies to choose from.
    pub gaps: Vec<GapPolicy>,
    pub clips_per_video: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            counts: vec![16, 24, 32],
            gaps: vec![
                GapPolicy::Fixed { gap: 3 },
                GapPolicy::Fixed { gap: 4 },
                GapPolicy::Fixed { gap: 5 },
            ],
            clips_per_video: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllSource {
    /// Stop after writing scoring jobs.
    None,
    /// Score with the synthetic density model.
    Oracle,
    /// Read records produced by an external scorer from `nll_path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TplConfig {
    pub source: NllSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll_path: Option<String>,
    pub keyframe: KeyframePolicy,
    pub oracle: OracleScorerConfig,
}

impl Default for TplConfig {
    fn default() -> Self {
        Self {
            source: NllSource::Oracle,
            nll_path: None,
            keyframe: KeyframePolicy::Last,
            oracle: OracleScorerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Question templates kept in a separate file, relative to the config
    /// file. Resolved into `taskgen.templates` on load.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_file: Option<String>,
    pub sampler: SamplerConfig,
    pub tracker: TrackerParams,
    pub filter: FilterParams,
    pub taskgen: TaskGenConfig,
    pub tpl: TplConfig,
    pub rewardgap: SweepConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        if self.sampler.counts.is_empty() || self.sampler.counts.contains(&0) {
            return Err(cfg("sampler.counts must be non-empty and positive".into()));
        }
        if self.sampler.gaps.is_empty() {
            return Err(cfg("sampler.gaps must be non-empty".into()));
        }
        for g in &self.sampler.gaps {
            match *g {
                GapPolicy::Fixed { gap: 0 } => return Err(cfg("sampler gap must be positive".into())),
                GapPolicy::Random { min, max } if min == 0 || min > max => {
                    return Err(cfg(format!("sampler random gap [{min}, {max}] is invalid")))
                }
                _ => {}
            }
        }
        self.tracker.validate().map_err(|m| cfg(format!("tracker: {m}")))?;
        self.filter.validate().map_err(|m| cfg(format!("filter: {m}")))?;
        self.taskgen.validate().map_err(|e| cfg(e.to_string()))?;
        if self.tpl.source == NllSource::File && self.tpl.nll_path.is_none() {
            return Err(cfg("tpl.source = \"file\" needs tpl.nll_path".into()));
        }
        Ok(())
    }
}

/// A resolved config plus digests of the files it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub sources: Vec<FileDigest>,
}

fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `stage.key=value` (any depth) to a config tree. Values are read as
/// TOML literals, falling back to a bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), PipelineError> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return Err(PipelineError::Config(format!("override `{assignment}` is not key=value")));
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(PipelineError::Config(format!("override `{assignment}` has an empty key")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("override `{assignment}`: `{key}` is not a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| PipelineError::Config(format!("override `{assignment}`: parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

fn with_overrides(config: PipelineConfig, overrides: &[String]) -> Result<PipelineConfig, PipelineError> {
    if overrides.is_empty() {
        return Ok(config);
    }
    // TOML integers are signed; keep the seed out of the round trip
    let seed = config.seed;
    let mut tree = toml::Value::try_from(PipelineConfig { seed: 0, ..config })
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let seed_overridden = overrides.iter().any(|o| o.trim_start().starts_with("seed"));
    let mut out: PipelineConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
    if !seed_overridden {
        out.seed = seed;
    }
    Ok(out)
}

/// Load a config from a TOML file, or from the `config` of a run manifest
/// (`.json`), then apply overrides. Without a path the built-in defaults are
/// used.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, PipelineError> {
    let mut sources = Vec::new();
    let base_dir: PathBuf;
    let config = match path {
        None => {
            base_dir = PathBuf::from(".");
            PipelineConfig::default()
        }
        Some(p) => {
            let text = read_to_string(p).map_err(|e| PipelineError::Input {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
            sources.push(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
            });
            base_dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            if p.extension().is_some_and(|e| e == "json") {
                let manifest: RunManifest = serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                manifest.config
            } else {
                toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
        }
    };
    let mut config = with_overrides(config, overrides)?;
    if let Some(file) = config.templates_file.take() {
        let tpath = base_dir.join(&file);
        let text = read_to_string(&tpath).map_err(|e| PipelineError::Input {
            path: tpath.display().to_string(),
            message: e.to_string(),
        })?;
        config.taskgen.templates = toml::from_str::<Templates>(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", tpath.display())))?;
        sources.push(FileDigest {
            path: tpath.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    config.validate()?;
    Ok(LoadedConfig { config, sources })
}
