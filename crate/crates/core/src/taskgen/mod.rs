//! Query sampling and conversation rendering.
//!
//! A query picks one or more subjects, a few clip positions where all of them
//! are visible, and which of their attributes to reveal. The question shows
//! those attributes; the answer gives the complete trajectory of every
//! queried subject in the grammar described in [`grammar`].

mod grammar;
mod templates;

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::ClipRecord;
use crate::seed::{derive_seed, derived_rng, rng_from};
use crate::tracker::SubjectTrajectory;

pub use grammar::{
    normalize_box, parse_answer, render_blocks, serialize_box, valid_category, GrammarError,
    NormBox, ParsedAnswer, ParsedSubject,
};
pub use templates::{fill, TemplateError, Templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Location,
    Appearance,
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Subject attributes are given; the model locates them over time.
    SpatialToTemporal,
    /// Frames are named first; the model recovers who is there and where they go.
    TemporalToSpatial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub clip_id: String,
    /// Ascending.
    pub subject_ids: Vec<u32>,
    /// Ascending 1-based clip positions.
    pub query_frames: Vec<u32>,
    /// Ascending, non-empty.
    pub attribute_kinds: Vec<AttributeKind>,
    pub direction: Direction,
    pub seed: u64,
}

impl QuerySpec {
    fn describes_attributes(&self) -> bool {
        self.attribute_kinds
            .iter()
            .any(|k| matches!(k, AttributeKind::Appearance | AttributeKind::Action))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    pub video_id: String,
    /// Raw frame indices of the clip, in clip order.
    pub clip_frames: Vec<u64>,
    pub system: String,
    pub question: String,
    pub answer: String,
    pub query: QuerySpec,
    pub seed: u64,
}

/// Inclusion probability of each attribute kind in a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindWeights {
    pub location: f64,
    pub appearance: f64,
    pub action: f64,
}

impl Default for KindWeights {
    fn default() -> Self {
        KindWeights {
            location: 1.0,
            appearance: 0.5,
            action: 0.5,
        }
    }
}

impl KindWeights {
    fn weight(&self, kind: AttributeKind) -> f64 {
        match kind {
            AttributeKind::Location => self.location,
            AttributeKind::Appearance => self.appearance,
            AttributeKind::Action => self.action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskGenConfig {
    pub queries_per_clip: u32,
    pub max_subjects: u32,
    pub max_query_frames: u32,
    pub temporal_to_spatial_prob: f64,
    pub kind_weights: KindWeights,
    pub system_prompt: String,
    pub templates: Templates,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        TaskGenConfig {
            queries_per_clip: 2,
            max_subjects: 3,
            max_query_frames: 3,
            temporal_to_spatial_prob: 0.5,
            kind_weights: KindWeights::default(),
            system_prompt: "You are a video assistant. Boxes are [x1,y1,x2,y2] scaled to 0-1000; \
                            frames are numbered from 1 within the clip."
                .to_string(),
            templates: Templates::default(),
        }
    }
}

impl TaskGenConfig {
    pub fn validate(&self) -> Result<(), TaskGenError> {
        let bad = |m: &str| Err(TaskGenError::InvalidConfig(m.to_string()));
        if self.max_subjects == 0 {
            return bad("max_subjects must be at least 1");
        }
        if self.max_query_frames == 0 {
            return bad("max_query_frames must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.temporal_to_spatial_prob) {
            return bad("temporal_to_spatial_prob must lie in [0, 1]");
        }
        let w = &self.kind_weights;
        for (name, v) in [("location", w.location), ("appearance", w.appearance), ("action", w.action)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("kind_weights.{name} must lie in [0, 1]"));
            }
        }
        self.templates.validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskGenError {
    #[error("clip {clip_id}: no trajectories to query")]
    NoTrajectories { clip_id: String },
    #[error("clip {clip_id}: queried subject {subject_id} is not in the tracks")]
    MissingSubject { clip_id: String, subject_id: u32 },
    #[error("clip {clip_id}: subject {subject_id} has frame {frame_index} outside the clip")]
    EntryOutsideClip {
        clip_id: String,
        subject_id: u32,
        frame_index: u64,
    },
    #[error("subject {subject_id}: category `{category}` cannot be written in the answer grammar")]
    InvalidCategory { subject_id: u32, category: String },
    #[error("answer sentence `{0}` contains `<` or `>`")]
    InvalidSentence(String),
    #[error("invalid taskgen config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Why a clip produced no conversations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskReport {
    pub clip_id: String,
    pub reason: String,
}

fn positions(
    track: &SubjectTrajectory,
    clip: &ClipRecord,
) -> Result<BTreeSet<u32>, TaskGenError> {
    track
        .entries
        .iter()
        .map(|e| {
            clip.position_of(e.frame_index)
                .ok_or_else(|| TaskGenError::EntryOutsideClip {
                    clip_id: clip.clip_id.clone(),
                    subject_id: track.subject_id,
                    frame_index: e.frame_index,
                })
        })
        .collect()
}

fn find<'a>(
    tracks: &'a [SubjectTrajectory],
    clip: &ClipRecord,
    subject_id: u32,
) -> Result<&'a SubjectTrajectory, TaskGenError> {
    tracks
        .iter()
        .find(|t| t.subject_id == subject_id)
        .ok_or_else(|| TaskGenError::MissingSubject {
            clip_id: clip.clip_id.clone(),
            subject_id,
        })
}

fn kind_present(
    kind: AttributeKind,
    chosen: &[&SubjectTrajectory],
    clip: &ClipRecord,
    frames: &[u32],
) -> bool {
    let field = |e: &crate::tracker::TrackEntry| match kind {
        AttributeKind::Location => true,
        AttributeKind::Appearance => !e.caption.is_empty(),
        AttributeKind::Action => !e.action.is_empty(),
    };
    chosen.iter().all(|t| {
        frames.iter().all(|&p| {
            clip.frame_at(p)
                .and_then(|f| t.entry_at(f))
                .is_some_and(field)
        })
    })
}

/// Draw a query for one clip. Fully determined by `seed`.
pub fn sample_query(
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    config: &TaskGenConfig,
    seed: u64,
) -> Result<QuerySpec, TaskGenError> {
    let mut ordered: Vec<&SubjectTrajectory> =
        tracks.iter().filter(|t| !t.entries.is_empty()).collect();
    if ordered.is_empty() {
        return Err(TaskGenError::NoTrajectories {
            clip_id: clip.clip_id.clone(),
        });
    }
    ordered.sort_by_key(|t| t.subject_id);
    let mut rng = rng_from(seed);

    let n_max = (config.max_subjects as usize).min(ordered.len());
    let n = rng.gen_range(1..=n_max);
    let mut chosen: Vec<&SubjectTrajectory> = index::sample(&mut rng, ordered.len(), n)
        .into_iter()
        .map(|i| ordered[i])
        .collect();
    let covered: Vec<BTreeSet<u32>> = chosen
        .iter()
        .map(|t| positions(t, clip))
        .collect::<Result<_, _>>()?;
    // drop subjects in reverse draw order until some frame shows all of them
    let mut common: Vec<u32>;
    loop {
        let k = chosen.len();
        common = covered[0]
            .iter()
            .copied()
            .filter(|p| covered[1..k].iter().all(|c| c.contains(p)))
            .collect();
        if !common.is_empty() || k == 1 {
            break;
        }
        chosen.pop();
    }

    let m_max = (config.max_query_frames as usize).min(common.len());
    let m = rng.gen_range(1..=m_max);
    let mut query_frames: Vec<u32> = index::sample(&mut rng, common.len(), m)
        .into_iter()
        .map(|i| common[i])
        .collect();
    query_frames.sort_unstable();

    let direction = if rng.gen_bool(config.temporal_to_spatial_prob) {
        Direction::TemporalToSpatial
    } else {
        Direction::SpatialToTemporal
    };

    let available: Vec<AttributeKind> = [
        AttributeKind::Location,
        AttributeKind::Appearance,
        AttributeKind::Action,
    ]
    .into_iter()
    .filter(|&k| kind_present(k, &chosen, clip, &query_frames))
    .collect();
    let mut kinds: Vec<AttributeKind> = available
        .iter()
        .copied()
        .filter(|&k| rng.gen_bool(config.kind_weights.weight(k)))
        .collect();
    if kinds.is_empty() {
        kinds.push(weighted_pick(&available, &config.kind_weights, &mut rng));
    }

    let mut subject_ids: Vec<u32> = chosen.iter().map(|t| t.subject_id).collect();
    subject_ids.sort_unstable();
    Ok(QuerySpec {
        clip_id: clip.clip_id.clone(),
        subject_ids,
        query_frames,
        attribute_kinds: kinds,
        direction,
        seed,
    })
}

fn weighted_pick(available: &[AttributeKind], weights: &KindWeights, rng: &mut ChaCha8Rng) -> AttributeKind {
    let total: f64 = available.iter().map(|&k| weights.weight(k)).sum();
    if total <= 0.0 {
        return AttributeKind::Location;
    }
    let mut x = rng.gen_range(0.0..total);
    for &k in available {
        let w = weights.weight(k);
        if x < w {
            return k;
        }
        x -= w;
    }
    *available.last().expect("location is always available")
}

/// The full trajectories of the queried subjects, in answer order.
pub fn answer_projection(
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    query: &QuerySpec,
) -> Result<Vec<ParsedSubject>, TaskGenError> {
    let mut ids = query.subject_ids.clone();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|&sid| {
            let t = find(tracks, clip, sid)?;
            if !valid_category(&t.category) {
                return Err(TaskGenError::InvalidCategory {
                    subject_id: sid,
                    category: t.category.clone(),
                });
            }
            let mut frames = Vec::with_capacity(t.entries.len());
            for e in &t.entries {
                let p = clip.position_of(e.frame_index).ok_or_else(|| {
                    TaskGenError::EntryOutsideClip {
                        clip_id: clip.clip_id.clone(),
                        subject_id: sid,
                        frame_index: e.frame_index,
                    }
                })?;
                frames.push((p, normalize_box(&e.bbox, clip.width, clip.height)));
            }
            frames.sort_by_key(|(p, _)| *p);
            Ok(ParsedSubject {
                subject_id: sid,
                category: t.category.clone(),
                frames,
            })
        })
        .collect()
}

fn pick<'a>(pool: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
    &pool[rng.gen_range(0..pool.len())]
}

fn join_natural(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Render the answer string for `query`.
pub fn render_answer(
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    query: &QuerySpec,
    templates: &Templates,
) -> Result<String, TaskGenError> {
    let subjects = answer_projection(tracks, clip, query)?;
    let sentence = if query.describes_attributes() {
        let mut rng = derived_rng(query.seed, "answer_sentence", &query.clip_id);
        let names: Vec<String> = subjects
            .iter()
            .map(|s| format!("{} id{}", s.category, s.subject_id))
            .collect();
        let s = fill(
            pick(&templates.answer_sentence, &mut rng),
            &[("subjects", &join_natural(&names))],
        )?;
        if s.contains(['<', '>']) {
            return Err(TaskGenError::InvalidSentence(s));
        }
        Some(s)
    } else {
        None
    };
    Ok(render_blocks(sentence.as_deref(), &subjects))
}

fn render_question(
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    query: &QuerySpec,
    templates: &Templates,
) -> Result<String, TaskGenError> {
    let mut rng = derived_rng(query.seed, "question", &query.clip_id);
    let kind_templates: Vec<(AttributeKind, &str)> = query
        .attribute_kinds
        .iter()
        .map(|&k| {
            let pool = match k {
                AttributeKind::Location => &templates.location,
                AttributeKind::Appearance => &templates.appearance,
                AttributeKind::Action => &templates.action,
            };
            (k, pick(pool, &mut rng))
        })
        .collect();

    let clue = |t: &SubjectTrajectory, p: u32| -> Result<Vec<String>, TaskGenError> {
        let frame_index = clip.frame_at(p).unwrap_or(u64::MAX);
        let e = t.entry_at(frame_index).ok_or_else(|| TaskGenError::MissingSubject {
            clip_id: clip.clip_id.clone(),
            subject_id: t.subject_id,
        })?;
        let b = serialize_box(&e.bbox, clip.width, clip.height);
        let frame = p.to_string();
        kind_templates
            .iter()
            .map(|(kind, tpl)| {
                let value: (&str, &str) = match kind {
                    AttributeKind::Location => ("box", &b),
                    AttributeKind::Appearance => ("caption", &e.caption),
                    AttributeKind::Action => ("action", &e.action),
                };
                Ok(fill(tpl, &[("category", &t.category), ("frame", &frame), value])?)
            })
            .collect()
    };

    let chosen: Vec<&SubjectTrajectory> = query
        .subject_ids
        .iter()
        .map(|&sid| find(tracks, clip, sid))
        .collect::<Result<_, _>>()?;
    let question = match query.direction {
        Direction::SpatialToTemporal => {
            let mut groups = Vec::new();
            for t in &chosen {
                let mut parts = Vec::new();
                for &p in &query.query_frames {
                    parts.extend(clue(t, p)?);
                }
                groups.push(parts.join(", "));
            }
            let tpl = pick(&templates.spatial_to_temporal, &mut rng);
            fill(tpl, &[("clues", &groups.join("; "))])?
        }
        Direction::TemporalToSpatial => {
            let mut groups = Vec::new();
            for &p in &query.query_frames {
                let mut parts = Vec::new();
                for t in &chosen {
                    parts.extend(clue(t, p)?);
                }
                groups.push(format!("Frame{p}: {}", parts.join(", ")));
            }
            let frames: Vec<String> = query.query_frames.iter().map(|p| format!("Frame{p}")).collect();
            let tpl = pick(&templates.temporal_to_spatial, &mut rng);
            fill(
                tpl,
                &[("frames", &join_natural(&frames)), ("clues", &groups.join("; "))],
            )?
        }
    };
    Ok(question)
}

pub fn build_conversation(
    id: &str,
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    query: &QuerySpec,
    config: &TaskGenConfig,
) -> Result<ConversationRecord, TaskGenError> {
    let answer = render_answer(tracks, clip, query, &config.templates)?;
    let question = render_question(tracks, clip, query, &config.templates)?;
    Ok(ConversationRecord {
        id: id.to_string(),
        video_id: clip.video_id().to_string(),
        clip_frames: clip.frame_indices().to_vec(),
        system: config.system_prompt.clone(),
        question,
        answer,
        query: query.clone(),
        seed: query.seed,
    })
}

/// All conversations for one clip. A clip without trajectories yields a
/// report line instead.
pub fn generate_for_clip(
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    config: &TaskGenConfig,
    run_seed: u64,
) -> Result<(Vec<ConversationRecord>, Option<TaskReport>), TaskGenError> {
    let mut out = Vec::with_capacity(config.queries_per_clip as usize);
    for q in 0..config.queries_per_clip {
        let id = format!("{}-q{q}", clip.clip_id);
        let seed = derive_seed(run_seed, "taskgen", &id);
        let query = match sample_query(tracks, clip, config, seed) {
            Ok(query) => query,
            Err(TaskGenError::NoTrajectories { clip_id }) => {
                return Ok((
                    Vec::new(),
                    Some(TaskReport {
                        clip_id,
                        reason: "no_trajectories".into(),
                    }),
                ))
            }
            Err(e) => return Err(e),
        };
        out.push(build_conversation(&id, tracks, clip, &query, config)?);
    }
    Ok((out, None))
}

/// Boxes in the answer per clip frame.
pub fn answer_density(record: &ConversationRecord) -> Result<f64, GrammarError> {
    let parsed = parse_answer(&record.answer)?;
    let boxes: usize = parsed.subjects.iter().map(|s| s.frames.len()).sum();
    Ok(boxes as f64 / record.clip_frames.len().max(1) as f64)
}
