use serde::{Deserialize, Serialize};

use super::KeyframePolicy;
use crate::ingest::ClipRecord;
use crate::taskgen::ConversationRecord;
use crate::tracker::SubjectTrajectory;

/// A line of the scoring jobs file consumed by an external language-model scorer.
///
/// `keyframe` is the clip position whose text forms `context_single`; the
/// scorer writes it back as `single:<keyframe>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringJob {
    pub sample_id: String,
    pub target: String,
    pub context_full: String,
    pub context_single: String,
    pub keyframe: u32,
}

/// Text describing every subject visible at one clip position, in subject order.
pub fn frame_context(tracks: &[SubjectTrajectory], clip: &ClipRecord, position: u32) -> String {
    let Some(frame_index) = clip.frame_at(position) else {
        return String::new();
    };
    let mut subjects: Vec<&SubjectTrajectory> = tracks.iter().collect();
    subjects.sort_by_key(|t| t.subject_id);
    let parts: Vec<String> = subjects
        .iter()
        .filter_map(|t| {
            let e = t.entry_at(frame_index)?;
            let mut desc = t.category.clone();
            let details: Vec<&str> = [e.caption.as_str(), e.action.as_str()]
                .into_iter()
                .filter(|s| !s.is_empty())
                .collect();
            if !details.is_empty() {
                desc.push_str(&format!(" ({})", details.join(", ")));
            }
            Some(desc)
        })
        .collect();
    format!("Frame{position}: {}", parts.join("; "))
}

pub fn build_scoring_job(
    conversation: &ConversationRecord,
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    policy: KeyframePolicy,
) -> ScoringJob {
    let keyframe = policy.position(&conversation.id, clip.len());
    let context_full = (1..=clip.len())
        .map(|p| frame_context(tracks, clip, p))
        .collect::<Vec<_>>()
        .join("\n");
    ScoringJob {
        sample_id: conversation.id.clone(),
        target: conversation.answer.clone(),
        context_full,
        context_single: frame_context(tracks, clip, keyframe),
        keyframe,
    }
}
