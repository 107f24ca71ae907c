//! Discounted true and proxy objectives over frame-subset schedules, and the
//! reward gap between them.
//!
//! A policy is represented only by its k-schedule: at step `t` it conditions
//! on frames `k_t..=t`. `k_t = 1` is the full prefix, `k_t = t` a single
//! frame. Discounting uses `gamma^t` with `t` starting at 1.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardGapError {
    #[error("gamma = {0} is outside [0, 1]")]
    InvalidGamma(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("schedule gives k = {k} at t = {t}; need 1 <= k <= t")]
    InvalidSchedule { t: u32, k: u32 },
    #[error("explicit schedule has {len} entries, horizon is {horizon}")]
    ScheduleTooShort { len: usize, horizon: u32 },
    #[error("reward table has no finite value for (a = {a}, t = {t})")]
    MissingReward { a: u32, t: u32 },
}

/// Reward for conditioning the step-`t` token on frames `a..=t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardModel {
    /// Number of conditioned frames, `t - a + 1`.
    Coverage,
    Table(Vec<TableEntry>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub a: u32,
    pub t: u32,
    pub reward: f64,
}

impl RewardModel {
    pub fn reward(&self, a: u32, t: u32) -> Result<f64, RewardGapError> {
        match self {
            RewardModel::Coverage => Ok((t - a + 1) as f64),
            RewardModel::Table(entries) => entries
                .iter()
                .find(|e| e.a == a && e.t == t)
                .map(|e| e.reward)
                .filter(|r| r.is_finite())
                .ok_or(RewardGapError::MissingReward { a, t }),
        }
    }

    /// True when, for every `t <= horizon`, conditioning on a longer suffix
    /// never lowers the reward. Entries absent from a table are skipped.
    pub fn is_prefix_monotone(&self, horizon: u32) -> bool {
        match self {
            RewardModel::Coverage => true,
            RewardModel::Table(entries) => {
                let mut by_t: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
                for e in entries.iter().filter(|e| e.t <= horizon) {
                    by_t.entry(e.t).or_default().push((e.a, e.reward));
                }
                by_t.values_mut().all(|row| {
                    row.sort_by_key(|(a, _)| *a);
                    // smaller a = longer conditioned span = reward must not drop
                    row.windows(2).all(|w| w[0].1 >= w[1].1)
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSchedule {
    /// `k_t = 1`
    Full,
    /// `k_t = ceil(t / 2)`
    Half,
    /// `k_t = t`
    Single,
    /// `k_t` listed for `t = 1, 2, ...`
    Explicit(Vec<u32>),
}

impl KSchedule {
    pub fn k(&self, t: u32) -> Result<u32, RewardGapError> {
        let k = match self {
            KSchedule::Full => 1,
            KSchedule::Half => t.div_ceil(2),
            KSchedule::Single => t,
            KSchedule::Explicit(ks) => *ks.get(t as usize - 1).ok_or(RewardGapError::ScheduleTooShort {
                len: ks.len(),
                horizon: t,
            })?,
        };
        if k < 1 || k > t {
            return Err(RewardGapError::InvalidSchedule { t, k });
        }
        Ok(k)
    }

    pub fn name(&self) -> String {
        match self {
            KSchedule::Full => "k=1".into(),
            KSchedule::Half => "k=ceil(t/2)".into(),
            KSchedule::Single => "k=t".into(),
            KSchedule::Explicit(ks) => format!(
                "k=[{}]",
                ks.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

impl fmt::Display for KSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGapSpec {
    pub horizon: u32,
    pub gamma: f64,
    pub schedule: KSchedule,
    pub reward: RewardModel,
}

impl RewardGapSpec {
    pub fn coverage(horizon: u32, gamma: f64, schedule: KSchedule) -> Self {
        Self {
            horizon,
            gamma,
            schedule,
            reward: RewardModel::Coverage,
        }
    }

    pub fn validate(&self) -> Result<(), RewardGapError> {
        if self.horizon == 0 {
            return Err(RewardGapError::ZeroHorizon);
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RewardGapError::InvalidGamma(self.gamma));
        }
        for t in 1..=self.horizon {
            let k = self.schedule.k(t)?;
            self.reward.reward(1, t)?;
            self.reward.reward(k, t)?;
        }
        Ok(())
    }

    fn discounted_sum(&self, start: impl Fn(u32) -> Result<u32, RewardGapError>) -> Result<f64, RewardGapError> {
        self.validate()?;
        let mut total = 0.0;
        for t in 1..=self.horizon {
            total += self.gamma.powi(t as i32) * self.reward.reward(start(t)?, t)?;
        }
        Ok(total)
    }
}

/// Objective with every step conditioned on the full prefix.
pub fn objective_true(spec: &RewardGapSpec) -> Result<f64, RewardGapError> {
    spec.discounted_sum(|_| Ok(1))
}

/// Objective with step `t` conditioned on frames `k_t..=t`.
pub fn objective_proxy(spec: &RewardGapSpec) -> Result<f64, RewardGapError> {
    spec.discounted_sum(|t| spec.schedule.k(t))
}

/// The gap computed two ways: as a difference of objectives and as a sum of
/// discounted per-step differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardGap {
    pub difference: f64,
    pub termwise: f64,
}

impl RewardGap {
    pub fn value(&self) -> f64 {
        self.termwise
    }

    pub fn routes_agree(&self, tolerance: f64) -> bool {
        (self.difference - self.termwise).abs() <= tolerance
    }
}

pub fn reward_gap(spec: &RewardGapSpec) -> Result<RewardGap, RewardGapError> {
    let difference = objective_true(spec)? - objective_proxy(spec)?;
    let mut termwise = 0.0;
    for t in 1..=spec.horizon {
        let k = spec.schedule.k(t)?;
        termwise += spec.gamma.powi(t as i32) * (spec.reward.reward(1, t)? - spec.reward.reward(k, t)?);
    }
    Ok(RewardGap { difference, termwise })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub horizon: u32,
    pub gamma: f64,
    pub policy_name: String,
    pub delta_r: f64,
    /// Difference-of-objectives value, kept for the cross-check.
    pub delta_r_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub horizons: Vec<u32>,
    pub gammas: Vec<f64>,
    pub policies: Vec<KSchedule>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self::monotonicity_grid()
    }
}

impl SweepConfig {
    /// `T = 1..=10`, `gamma in {0.5, 0.9, 1.0}`, `k_t in {1, ceil(t/2), t}`.
    pub fn monotonicity_grid() -> Self {
        Self {
            horizons: (1..=10).collect(),
            gammas: vec![0.5, 0.9, 1.0],
            policies: vec![KSchedule::Full, KSchedule::Half, KSchedule::Single],
        }
    }
}

/// Rows ordered by horizon, then gamma, then policy, each in input order.
pub fn sweep(config: &SweepConfig, reward: &RewardModel) -> Result<Vec<SweepRow>, RewardGapError> {
    let mut rows = Vec::new();
    for &horizon in &config.horizons {
        for &gamma in &config.gammas {
            for policy in &config.policies {
                let spec = RewardGapSpec {
                    horizon,
                    gamma,
                    schedule: policy.clone(),
                    reward: reward.clone(),
                };
                let gap = reward_gap(&spec)?;
                rows.push(SweepRow {
                    horizon,
                    gamma,
                    policy_name: policy.name(),
                    delta_r: gap.termwise,
                    delta_r_difference: gap.difference,
                });
            }
        }
    }
    Ok(rows)
}

/// Check a sweep against the monotonicity claims for prefix-monotone rewards.
///
/// Returns one message per violation: a negative gap, a gap shrinking as
/// `T` grows (same gamma and policy), a gap shrinking as the policy list
/// moves towards later start frames (same `T` and gamma), or disagreeing
/// routes. Policies are assumed to be listed in pointwise non-decreasing
/// `k_t` order.
pub fn sweep_violations(rows: &[SweepRow], config: &SweepConfig, tolerance: f64) -> Vec<String> {
    let mut out = Vec::new();
    let key = |r: &SweepRow| (r.horizon, r.gamma.to_bits(), r.policy_name.clone());
    let index: BTreeMap<_, &SweepRow> = rows.iter().map(|r| (key(r), r)).collect();
    for r in rows {
        if r.delta_r < 0.0 {
            out.push(format!("negative gap {} at T={} gamma={} {}", r.delta_r, r.horizon, r.gamma, r.policy_name));
        }
        if (r.delta_r - r.delta_r_difference).abs() > tolerance {
            out.push(format!(
                "routes disagree at T={} gamma={} {}: {} vs {}",
                r.horizon, r.gamma, r.policy_name, r.delta_r, r.delta_r_difference
            ));
        }
    }
    let mut horizons = config.horizons.clone();
    horizons.sort_unstable();
    for &gamma in &config.gammas {
        for policy in &config.policies {
            for w in horizons.windows(2) {
                let (a, b) = (
                    index.get(&(w[0], gamma.to_bits(), policy.name())),
                    index.get(&(w[1], gamma.to_bits(), policy.name())),
                );
                if let (Some(a), Some(b)) = (a, b) {
                    if b.delta_r < a.delta_r {
                        out.push(format!("gap shrinks from T={} to T={} at gamma={} {}", w[0], w[1], gamma, policy));
                    }
                }
            }
        }
        for &h in &horizons {
            for w in config.policies.windows(2) {
                let (a, b) = (
                    index.get(&(h, gamma.to_bits(), w[0].name())),
                    index.get(&(h, gamma.to_bits(), w[1].name())),
                );
                if let (Some(a), Some(b)) = (a, b) {
                    if b.delta_r < a.delta_r {
                        out.push(format!("gap shrinks from {} to {} at T={} gamma={}", w[0], w[1], h, gamma));
                    }
                }
            }
        }
    }
    out
}
