//! Trajectory quality gates applied before task generation.
//!
//! Every gate is an independent keep/remove predicate over a whole
//! trajectory: comparisons keep on `>=` and remove on `<`. Survivors are
//! passed through untouched.

use serde::{Deserialize, Serialize};

use crate::tracker::SubjectTrajectory;

/// How an entry is judged "small" against the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMode {
    /// box area < fraction * frame area
    Area,
    /// box width < fraction * frame width, or box height < fraction * frame height
    Side,
}

/// How many small entries it takes to drop a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallRule {
    Any,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub min_area_fraction: f64,
    pub size_mode: SizeMode,
    pub small_rule: SmallRule,
    pub min_length: usize,
    pub min_mean_score: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            min_area_fraction: 1.0 / 32.0,
            size_mode: SizeMode::Area,
            small_rule: SmallRule::Any,
            min_length: 3,
            min_mean_score: 0.5,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_area_fraction > 0.0 && self.min_area_fraction < 1.0) {
            return Err(format!(
                "filter.min_area_fraction = {} must lie strictly between 0 and 1",
                self.min_area_fraction
            ));
        }
        if self.min_length == 0 {
            return Err("filter.min_length must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_mean_score) {
            return Err(format!("filter.min_mean_score = {} is outside [0, 1]", self.min_mean_score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    Small,
    Short,
    LowConf,
}

/// A line of the filter sidecar report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub subject_id: u32,
    pub reason: RemovalReason,
    /// The measurement that failed: smallest area (or side ratio), length, or mean score.
    pub value: f64,
}

/// Per-entry size measurement and its cutoff under `mode`.
fn entry_smallness(t: &SubjectTrajectory, width: u32, height: u32, fraction: f64, mode: SizeMode) -> Vec<(f64, bool)> {
    let (w, h) = (width as f64, height as f64);
    t.entries
        .iter()
        .map(|e| match mode {
            SizeMode::Area => {
                let area = e.bbox.area();
                (area, area < fraction * w * h)
            }
            SizeMode::Side => {
                let ratio = (e.bbox.width() / w).min(e.bbox.height() / h);
                (ratio, e.bbox.width() < fraction * w || e.bbox.height() < fraction * h)
            }
        })
        .collect()
}

/// `Some(measurement)` when the trajectory fails the small-object gate.
pub fn small_violation(t: &SubjectTrajectory, width: u32, height: u32, params: &FilterParams) -> Option<f64> {
    let sizes = entry_smallness(t, width, height, params.min_area_fraction, params.size_mode);
    let small = match params.small_rule {
        SmallRule::Any => sizes.iter().any(|s| s.1),
        SmallRule::All => !sizes.is_empty() && sizes.iter().all(|s| s.1),
    };
    small.then(|| sizes.iter().map(|s| s.0).fold(f64::INFINITY, f64::min))
}

pub fn filter_small(tracks: Vec<SubjectTrajectory>, width: u32, height: u32, params: &FilterParams) -> Vec<SubjectTrajectory> {
    tracks
        .into_iter()
        .filter(|t| small_violation(t, width, height, params).is_none())
        .collect()
}

pub fn filter_short(tracks: Vec<SubjectTrajectory>, min_length: usize) -> Vec<SubjectTrajectory> {
    tracks.into_iter().filter(|t| t.entries.len() >= min_length).collect()
}

pub fn filter_low_conf(tracks: Vec<SubjectTrajectory>, min_mean_score: f64) -> Vec<SubjectTrajectory> {
    tracks
        .into_iter()
        .filter(|t| t.mean_score() >= min_mean_score)
        .collect()
}

/// Apply all three gates. Each removed trajectory is reported once, under the
/// first failing gate in the order small, short, low_conf.
pub fn apply_filters(
    tracks: Vec<SubjectTrajectory>,
    width: u32,
    height: u32,
    params: &FilterParams,
) -> (Vec<SubjectTrajectory>, Vec<RemovalRecord>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in tracks {
        let failure = if let Some(v) = small_violation(&t, width, height, params) {
            Some((RemovalReason::Small, v))
        } else if t.entries.len() < params.min_length {
            Some((RemovalReason::Short, t.entries.len() as f64))
        } else if t.mean_score() < params.min_mean_score {
            Some((RemovalReason::LowConf, t.mean_score()))
        } else {
            None
        };
        match failure {
            Some((reason, value)) => removed.push(RemovalRecord {
                subject_id: t.subject_id,
                reason,
                value,
            }),
            None => kept.push(t),
        }
    }
    (kept, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BoundingBox;
    use crate::tracker::{TrackEntry, TrackState};
    use proptest::prelude::*;

    fn traj(id: u32, boxes: &[(f64, f64)], scores: &[f64]) -> SubjectTrajectory {
        SubjectTrajectory {
            subject_id: id,
            category: "a".into(),
            entries: boxes
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (&(w, h), &s))| TrackEntry {
                    frame_index: i as u64,
                    bbox: BoundingBox::new(0.0, 0.0, w, h).unwrap(),
                    score: s,
                    caption: String::new(),
                    action: String::new(),
                })
                .collect(),
            state: TrackState::Active,
        }
    }

    #[test]
    fn small_cutoff_on_32x32() {
        let p = FilterParams::default();
        // cutoff area 32
        let small = traj(1, &[(5.0, 6.0)], &[1.0]);
        let fine = traj(2, &[(3.0, 11.0)], &[1.0]);
        let kept = filter_small(vec![small, fine], 32, 32, &p);
        assert_eq!(kept.iter().map(|t| t.subject_id).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn any_entry_small_removes_whole_trajectory() {
        let p = FilterParams::default();
        let mixed = traj(1, &[(10.0, 10.0), (4.0, 5.0)], &[1.0, 1.0]);
        assert!(filter_small(vec![mixed.clone()], 32, 32, &p).is_empty());
        let all = FilterParams { small_rule: SmallRule::All, ..p };
        assert_eq!(filter_small(vec![mixed], 32, 32, &all).len(), 1);
    }

    #[test]
    fn side_mode() {
        let p = FilterParams { size_mode: SizeMode::Side, ..Default::default() };
        // 1/32 of 320 is 10 px per side
        let thin = traj(1, &[(9.0, 300.0)], &[1.0]);
        let ok = traj(2, &[(10.0, 10.0)], &[1.0]);
        let kept = filter_small(vec![thin, ok], 320, 320, &p);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].subject_id, 2);
    }

    #[test]
    fn short_and_low_conf() {
        let one = traj(1, &[(1.0, 1.0)], &[1.0]);
        let two = traj(2, &[(1.0, 1.0); 2], &[1.0, 1.0]);
        assert_eq!(filter_short(vec![one, two.clone()], 2), vec![two]);
        assert!(filter_short(vec![], 2).is_empty());

        let high = traj(1, &[(1.0, 1.0); 2], &[0.9, 0.9]);
        let low = traj(2, &[(1.0, 1.0); 2], &[0.2, 0.2]);
        let edge = traj(3, &[(1.0, 1.0); 2], &[1.0, 0.0]);
        let kept = filter_low_conf(vec![high.clone(), low.clone(), edge.clone()], 0.5);
        assert_eq!(kept, vec![high.clone(), edge]);
        assert_eq!(filter_low_conf(vec![high.clone()], 0.8), vec![high]);
        assert!(filter_low_conf(vec![low], 0.5).is_empty());
    }

    #[test]
    fn report_uses_first_failing_gate() {
        let p = FilterParams { min_length: 2, ..Default::default() };
        let tracks = vec![
            traj(1, &[(1.0, 1.0)], &[0.1]),
            traj(2, &[(10.0, 10.0)], &[0.1]),
            traj(3, &[(10.0, 10.0); 2], &[0.1, 0.2]),
            traj(4, &[(10.0, 10.0); 2], &[0.9, 0.9]),
        ];
        let (kept, removed) = apply_filters(tracks, 32, 32, &p);
        assert_eq!(kept.len(), 1);
        let reasons: Vec<_> = removed.iter().map(|r| (r.subject_id, r.reason)).collect();
        assert_eq!(
            reasons,
            vec![(1, RemovalReason::Small), (2, RemovalReason::Short), (3, RemovalReason::LowConf)]
        );
        assert_eq!(removed[0].value, 1.0);
        assert!((removed[2].value - 0.15).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(FilterParams::default().validate().is_ok());
        assert!(FilterParams { min_area_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(FilterParams { min_length: 0, ..Default::default() }.validate().is_err());
    }

    fn arb_tracks() -> impl Strategy<Value = Vec<SubjectTrajectory>> {
        prop::collection::vec(prop::collection::vec((1.0..30.0f64, 1.0..30.0f64, 0.0..=1.0f64), 1..6), 0..10).prop_map(|ts| {
            ts.into_iter()
                .enumerate()
                .map(|(i, es)| {
                    let boxes: Vec<_> = es.iter().map(|e| (e.0, e.1)).collect();
                    let scores: Vec<_> = es.iter().map(|e| e.2).collect();
                    traj(i as u32 + 1, &boxes, &scores)
                })
                .collect()
        })
    }

    fn ids(ts: &[SubjectTrajectory]) -> Vec<u32> {
        ts.iter().map(|t| t.subject_id).collect()
    }

    proptest! {
        #[test]
        fn composite_is_intersection_and_order_free(tracks in arb_tracks(), len in 1usize..5, score in 0.0..1.0f64) {
            let p = FilterParams { min_length: len, min_mean_score: score, ..Default::default() };
            let (kept, removed) = apply_filters(tracks.clone(), 32, 32, &p);
            let a = filter_low_conf(filter_short(filter_small(tracks.clone(), 32, 32, &p), len), score);
            let b = filter_small(filter_short(filter_low_conf(tracks.clone(), score), len), 32, 32, &p);
            prop_assert_eq!(&kept, &a);
            prop_assert_eq!(&kept, &b);
            prop_assert_eq!(kept.len() + removed.len(), tracks.len());
            // survivors are untouched
            for t in &kept {
                let original = tracks.iter().find(|o| o.subject_id == t.subject_id).unwrap();
                prop_assert_eq!(serde_json::to_string(t).unwrap(), serde_json::to_string(original).unwrap());
            }
        }

        #[test]
        fn raising_thresholds_never_adds(tracks in arb_tracks(), f1 in 0.001..0.5f64, df in 0.0..0.4f64, l1 in 1usize..4, dl in 0usize..3, s1 in 0.0..0.8f64, ds in 0.0..0.2f64) {
            let lo = FilterParams { min_area_fraction: f1, ..Default::default() };
            let hi = FilterParams { min_area_fraction: f1 + df, ..Default::default() };
            let small_lo = ids(&filter_small(tracks.clone(), 32, 32, &lo));
            let small_hi = ids(&filter_small(tracks.clone(), 32, 32, &hi));
            prop_assert!(small_hi.iter().all(|i| small_lo.contains(i)));
            let short_lo = ids(&filter_short(tracks.clone(), l1));
            let short_hi = ids(&filter_short(tracks.clone(), l1 + dl));
            prop_assert!(short_hi.iter().all(|i| short_lo.contains(i)));
            let conf_lo = ids(&filter_low_conf(tracks.clone(), s1));
            let conf_hi = ids(&filter_low_conf(tracks.clone(), s1 + ds));
            prop_assert!(conf_hi.iter().all(|i| conf_lo.contains(i)));
        }

        #[test]
        fn filters_are_idempotent(tracks in arb_tracks(), len in 1usize..5, score in 0.0..1.0f64) {
            let p = FilterParams::default();
            let once = filter_small(tracks.clone(), 32, 32, &p);
            prop_assert_eq!(filter_small(once.clone(), 32, 32, &p), once);
            let once = filter_short(tracks.clone(), len);
            prop_assert_eq!(filter_short(once.clone(), len), once);
            let once = filter_low_conf(tracks, score);
            prop_assert_eq!(filter_low_conf(once.clone(), score), once);
        }
    }
}
