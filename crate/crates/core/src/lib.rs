//! Build trajectory-grounded question/answer data from per-frame detections,
//! and measure how much a video-text corpus actually depends on its frames.
//!
//! The crate is organised as a sequence of stages that can run on their own
//! or be chained by [`pipeline::run_pipeline`]:
//!
//! * [`ingest`]: parse detection files, sample frame clips, synthesize scenes.
//! * [`tracker`]: associate detections into subject trajectories.
//! * [`filter`]: drop small, short and low-confidence trajectories.
//! * [`taskgen`]: sample queries and render conversations in the box grammar.
//! * [`tpl`]: temporal perplexity scoring, bucketing and subset statistics.
//! * [`rewardgap`]: discounted true/proxy objectives and their gap.

pub mod bbox;
pub mod filter;
pub mod ingest;
pub mod jsonl;
pub mod pipeline;
pub mod rewardgap;
pub mod seed;
pub mod taskgen;
pub mod tpl;
pub mod tracker;

pub use bbox::BoundingBox;
