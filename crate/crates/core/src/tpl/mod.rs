//! Temporal perplexity: how much a caption's mean NLL drops when the scorer
//! sees the whole clip instead of a single keyframe.
//!
//! `tpl = mean_nll(single) - mean_nll(full)`. Positive values mean the full
//! clip genuinely informs the text; values at or below zero mark samples a
//! model could describe from one frame. Scores are only comparable within
//! one scorer, so every record carries a scorer id and mixing is rejected.

mod jobs;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::seed::derived_rng;

pub use jobs::{build_scoring_job, frame_context, ScoringJob};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TplError {
    #[error("duplicate nll record for sample `{sample_id}` context `{context}`")]
    DuplicateRecord { sample_id: String, context: ContextMode },
    #[error("nll records mix scorers `{first}` and `{second}`")]
    MixedScorers { first: String, second: String },
    #[error("sample `{sample_id}`: mean_nll {value} must be finite and non-negative")]
    InvalidNll { sample_id: String, value: f64 },
    #[error("sample `{sample_id}`: token_count must be positive")]
    ZeroTokens { sample_id: String },
    #[error("need at least {groups} scores to form {groups} buckets, got {count}")]
    TooFewScores { count: usize, groups: usize },
    #[error("scored sample `{0}` has no subset tag")]
    Untagged(String),
    #[error("invalid oracle scorer config: {0}")]
    InvalidOracle(String),
    #[error("invalid context `{0}`: expected `full` or `single:<position>`")]
    BadContext(String),
}

/// Which frames the scorer saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextMode {
    Full,
    /// One frame at a 1-based clip position.
    Single(u32),
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMode::Full => f.write_str("full"),
            ContextMode::Single(p) => write!(f, "single:{p}"),
        }
    }
}

impl FromStr for ContextMode {
    type Err = TplError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(ContextMode::Full);
        }
        s.strip_prefix("single:")
            .and_then(|p| p.parse::<u32>().ok())
            .filter(|p| *p >= 1)
            .map(ContextMode::Single)
            .ok_or_else(|| TplError::BadContext(s.to_string()))
    }
}

impl Serialize for ContextMode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContextMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A line of the nll file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllRecord {
    pub sample_id: String,
    pub context: ContextMode,
    /// Mean per-token negative log-likelihood, natural log.
    pub mean_nll: f64,
    pub token_count: u64,
    pub scorer_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    High,
    Medium,
    Low,
}

impl Bucket {
    /// 3 for high, 2 for medium, 1 for low.
    pub fn level(self) -> u8 {
        match self {
            Bucket::High => 3,
            Bucket::Medium => 2,
            Bucket::Low => 1,
        }
    }
}

/// A line of the tpl file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TplScore {
    pub sample_id: String,
    pub tpl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<Bucket>,
    pub scorer_id: String,
}

/// Single-context NLL minus full-context NLL.
pub fn tpl_score(nll_full: f64, nll_single: f64) -> f64 {
    nll_single - nll_full
}

/// Synthetic scorer: the full clip lowers the NLL in proportion to the
/// sample's frame information density, a single frame by `1/T` of that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleScorerConfig {
    pub base_nll: f64,
    pub alpha: f64,
}

impl Default for OracleScorerConfig {
    fn default() -> Self {
        Self {
            base_nll: 3.0,
            alpha: 0.1,
        }
    }
}

/// `base_nll - alpha * coverage * density`, coverage 1 for the full clip and
/// `1 / clip_len` for a single frame.
pub fn oracle_nll(density: f64, mode: ContextMode, clip_len: u32, config: &OracleScorerConfig) -> Result<f64, TplError> {
    if !(config.base_nll > 0.0 && config.alpha > 0.0) {
        return Err(TplError::InvalidOracle("base_nll and alpha must be positive".into()));
    }
    if clip_len == 0 {
        return Err(TplError::InvalidOracle("clip length must be positive".into()));
    }
    if !(density >= 0.0 && density.is_finite()) {
        return Err(TplError::InvalidOracle(format!("density {density} must be non-negative")));
    }
    if config.base_nll - config.alpha * density < 0.0 {
        return Err(TplError::InvalidOracle(format!(
            "density {density} drives the NLL below zero (base {} alpha {})",
            config.base_nll, config.alpha
        )));
    }
    let coverage = match mode {
        ContextMode::Full => 1.0,
        ContextMode::Single(_) => 1.0 / clip_len as f64,
    };
    Ok(config.base_nll - config.alpha * coverage * density)
}

/// Which single-frame record pairs with the full record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum KeyframePolicy {
    /// The highest clip position present.
    Last,
    /// A position drawn per sample from the run seed.
    Random { seed: u64 },
}

impl KeyframePolicy {
    /// Keyframe position for a clip of `clip_len` frames.
    pub fn position(&self, sample_id: &str, clip_len: u32) -> u32 {
        match *self {
            KeyframePolicy::Last => clip_len,
            KeyframePolicy::Random { seed } => derived_rng(seed, "keyframe", sample_id).gen_range(1..=clip_len),
        }
    }

    fn pick(&self, sample_id: &str, positions: &[u32]) -> u32 {
        match *self {
            KeyframePolicy::Last => *positions.iter().max().expect("non-empty"),
            KeyframePolicy::Random { seed } => {
                let i = derived_rng(seed, "keyframe", sample_id).gen_range(0..positions.len());
                positions[i]
            }
        }
    }
}

/// A sample that could not be scored, or a record left unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingIssue {
    pub sample_id: String,
    pub issue: PairingProblem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingProblem {
    MissingFull,
    MissingSingle,
    UnusedSingle,
}

pub fn validate_record(r: &NllRecord) -> Result<(), TplError> {
    if !(r.mean_nll >= 0.0 && r.mean_nll.is_finite()) {
        return Err(TplError::InvalidNll {
            sample_id: r.sample_id.clone(),
            value: r.mean_nll,
        });
    }
    if r.token_count == 0 {
        return Err(TplError::ZeroTokens {
            sample_id: r.sample_id.clone(),
        });
    }
    Ok(())
}

/// Pair each sample's full and single records and score them.
///
/// Scores come out sorted by sample id, unbucketed.
pub fn pair_and_score(records: &[NllRecord], policy: KeyframePolicy) -> Result<(Vec<TplScore>, Vec<PairingIssue>), TplError> {
    let mut scorer: Option<&str> = None;
    let mut by_sample: BTreeMap<&str, (Option<&NllRecord>, BTreeMap<u32, &NllRecord>)> = BTreeMap::new();
    for r in records {
        validate_record(r)?;
        match scorer {
            None => scorer = Some(&r.scorer_id),
            Some(s) if s != r.scorer_id => {
                return Err(TplError::MixedScorers {
                    first: s.to_string(),
                    second: r.scorer_id.clone(),
                })
            }
            _ => {}
        }
        let slot = by_sample.entry(&r.sample_id).or_default();
        let dup = match r.context {
            ContextMode::Full => slot.0.replace(r).is_some(),
            ContextMode::Single(p) => slot.1.insert(p, r).is_some(),
        };
        if dup {
            return Err(TplError::DuplicateRecord {
                sample_id: r.sample_id.clone(),
                context: r.context,
            });
        }
    }

    let mut scores = Vec::new();
    let mut issues = Vec::new();
    for (sample_id, (full, singles)) in by_sample {
        let issue = |problem, position| PairingIssue {
            sample_id: sample_id.to_string(),
            issue: problem,
            position,
        };
        let Some(full) = full else {
            issues.push(issue(PairingProblem::MissingFull, None));
            continue;
        };
        if singles.is_empty() {
            issues.push(issue(PairingProblem::MissingSingle, None));
            continue;
        }
        let positions: Vec<u32> = singles.keys().copied().collect();
        let chosen = policy.pick(sample_id, &positions);
        for &p in &positions {
            if p != chosen {
                issues.push(issue(PairingProblem::UnusedSingle, Some(p)));
            }
        }
        scores.push(TplScore {
            sample_id: sample_id.to_string(),
            tpl: tpl_score(full.mean_nll, singles[&chosen].mean_nll),
            bucket: None,
            scorer_id: full.scorer_id.clone(),
        });
    }
    Ok((scores, issues))
}

/// Sizes of `groups` contiguous parts of `n` items, earlier parts taking the remainder.
pub fn partition_sizes(n: usize, groups: usize) -> Vec<usize> {
    let base = n / groups;
    let extra = n % groups;
    (0..groups).map(|g| base + usize::from(g < extra)).collect()
}

/// Sort by descending TPL (ties by ascending sample id) and label the three
/// contiguous parts high, medium and low.
pub fn bucketize(mut scores: Vec<TplScore>) -> Result<Vec<TplScore>, TplError> {
    const GROUPS: usize = 3;
    if scores.len() < GROUPS {
        return Err(TplError::TooFewScores {
            count: scores.len(),
            groups: GROUPS,
        });
    }
    scores.sort_by(|a, b| b.tpl.total_cmp(&a.tpl).then_with(|| a.sample_id.cmp(&b.sample_id)));
    let labels = [Bucket::High, Bucket::Medium, Bucket::Low];
    let mut at = 0;
    for (size, label) in partition_sizes(scores.len(), GROUPS).into_iter().zip(labels) {
        for s in &mut scores[at..at + size] {
            s.bucket = Some(label);
        }
        at += size;
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub subset: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single score.
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
}

fn stats_of(subset: String, values: &[f64]) -> SubsetStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stdev = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    SubsetStats {
        subset,
        count: n,
        mean,
        stdev,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn sorted_stats(groups: BTreeMap<String, Vec<f64>>) -> Vec<SubsetStats> {
    let mut out: Vec<SubsetStats> = groups.into_iter().map(|(k, v)| stats_of(k, &v)).collect();
    out.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.subset.cmp(&b.subset)));
    out
}

/// Per-subset statistics, ordered by descending mean (ties by name).
pub fn subset_stats(scores: &[TplScore], tags: &BTreeMap<String, String>) -> Result<Vec<SubsetStats>, TplError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in scores {
        let tag = tags
            .get(&s.sample_id)
            .ok_or_else(|| TplError::Untagged(s.sample_id.clone()))?;
        groups.entry(tag.clone()).or_default().push(s.tpl);
    }
    Ok(sorted_stats(groups))
}

/// Statistics grouped by bucket label; unbucketed scores go under `unbucketed`.
pub fn bucket_stats(scores: &[TplScore]) -> Vec<SubsetStats> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in scores {
        let name = match s.bucket {
            Some(Bucket::High) => "high",
            Some(Bucket::Medium) => "medium",
            Some(Bucket::Low) => "low",
            None => "unbucketed",
        };
        groups.entry(name.to_string()).or_default().push(s.tpl);
    }
    sorted_stats(groups)
}
