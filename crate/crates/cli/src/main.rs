use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use trajquery::ingest::{synth_corpus, ClipRecord, CorpusConfig};
use trajquery::jsonl::{read_jsonl, read_to_string, to_jsonl, write_atomic};
use trajquery::pipeline::{
    files, load_config, run_pipeline, stages, write_outputs, LoadedConfig, NllSource,
};
use trajquery::rewardgap::{sweep, sweep_violations, RewardModel, SweepConfig};
use trajquery::tpl::{bucket_stats, subset_stats, SubsetStats, TplScore};
use trajquery::tracker::{SubjectTrajectory, TrackRecord};

#[derive(Parser)]
#[command(name = "trajquery", version, about = "Trajectory-grounded video QA data and temporal perplexity tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (TOML), or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input files or directories. Stage inputs are found by file name.
    #[arg(long = "input", num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Config override, `stage.key=value`. Repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse detection files and sample clips.
    Ingest(Common),
    /// Associate detections into trajectories (needs frames.jsonl, clips.jsonl).
    Track(Common),
    /// Drop small, short and low-confidence trajectories (needs tracks.jsonl, clips.jsonl).
    Filter(Common),
    /// Generate conversations and scoring jobs (needs tracks.filtered.jsonl, clips.jsonl).
    GenTasks(Common),
    /// Score temporal perplexity from the oracle or an nll file.
    Tpl(Common),
    /// Per-subset TPL statistics from a tpl file.
    Stats {
        #[command(flatten)]
        common: Common,
        /// JSONL of {"sample_id", "subset"}; without it scores group by bucket.
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Reward-gap sweep table.
    RewardGap {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Write a synthetic detections corpus with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Corpus settings (TOML); defaults otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run every stage and write a manifest.
    Run(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// T = 1..10, gamma in {0.5, 0.9, 1.0}, k in {1, ceil(t/2), t}.
    #[value(name = "paper-monotonicity")]
    Monotonicity,
}

fn config(common: &Common) -> Result<LoadedConfig> {
    let mut loaded = load_config(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        loaded.config.seed = seed;
    }
    Ok(loaded)
}

fn out_dir(common: &Common) -> Result<&Path> {
    common.out.as_deref().context("--out is required")
}

/// Find a stage artifact among the inputs: a file with that name, or a
/// directory containing it.
fn resolve(inputs: &[PathBuf], name: &str) -> Result<PathBuf> {
    for p in inputs {
        if p.is_dir() {
            let candidate = p.join(name);
            if candidate.is_file() {
                return Ok(candidate);
            }
        } else if p.file_name().is_some_and(|f| f == name) {
            if !p.is_file() {
                bail!("input {} does not exist", p.display());
            }
            return Ok(p.clone());
        }
    }
    bail!("no {name} among the inputs")
}

fn clips(inputs: &[PathBuf]) -> Result<Vec<ClipRecord>> {
    Ok(read_jsonl(&resolve(inputs, files::CLIPS)?)?)
}

fn tracks(inputs: &[PathBuf], name: &str) -> Result<Vec<TrackRecord>> {
    Ok(read_jsonl(&resolve(inputs, name)?)?)
}

fn jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    to_jsonl(records).into_bytes()
}

fn ingest(common: &Common) -> Result<()> {
    let cfg = config(common)?.config;
    if common.inputs.is_empty() {
        bail!("ingest needs --input");
    }
    let paths = stages::expand_inputs(&common.inputs)?;
    let frames = stages::ingest_files(&paths)?;
    let (clips, skipped) = stages::sample_clips(&frames, &cfg.sampler, cfg.seed)?;
    write_outputs(
        out_dir(common)?,
        &[
            (files::FRAMES, jsonl(&frames)),
            (files::CLIPS, jsonl(&clips)),
            (files::INGEST_REPORT, jsonl(&skipped)),
        ],
    )?;
    eprintln!("{} frames, {} clips, {} videos skipped", frames.len(), clips.len(), skipped.len());
    Ok(())
}

fn track(common: &Common) -> Result<()> {
    let cfg = config(common)?.config;
    let frames = stages::ingest_files(&[resolve(&common.inputs, files::FRAMES)?])?;
    let clips = clips(&common.inputs)?;
    let tracks = stages::track_clips(&frames, &clips, &cfg.tracker)?;
    write_outputs(out_dir(common)?, &[(files::TRACKS, jsonl(&tracks))])?;
    eprintln!("{} trajectories over {} clips", tracks.len(), clips.len());
    Ok(())
}

fn filter(common: &Common) -> Result<()> {
    let cfg = config(common)?.config;
    let tracks = tracks(&common.inputs, files::TRACKS)?;
    let clips = clips(&common.inputs)?;
    let (kept, removed) = stages::filter_tracks(&tracks, &clips, &cfg.filter)?;
    write_outputs(
        out_dir(common)?,
        &[(files::TRACKS_FILTERED, jsonl(&kept)), (files::FILTER_REPORT, jsonl(&removed))],
    )?;
    eprintln!("kept {}, removed {}", kept.len(), removed.len());
    Ok(())
}

fn gen_tasks(common: &Common) -> Result<()> {
    let cfg = config(common)?.config;
    let tracks = tracks(&common.inputs, files::TRACKS_FILTERED)?;
    let clips = clips(&common.inputs)?;
    let (conversations, reports) = stages::generate_tasks(&tracks, &clips, &cfg.taskgen, cfg.seed)?;
    let jobs = stages::scoring_jobs(&conversations, &tracks, &clips, &cfg.tpl)?;
    write_outputs(
        out_dir(common)?,
        &[
            (files::CONVERSATIONS, jsonl(&conversations)),
            (files::TASKGEN_REPORT, jsonl(&reports)),
            (files::JOBS, jsonl(&jobs)),
        ],
    )?;
    eprintln!("{} conversations, {} clips without any", conversations.len(), reports.len());
    Ok(())
}

fn tpl(common: &Common) -> Result<()> {
    let cfg = config(common)?.config;
    let mut outputs = Vec::new();
    let records = match cfg.tpl.source {
        NllSource::None => bail!("tpl.source is \"none\"; set it to \"oracle\" or \"file\""),
        NllSource::Oracle => {
            let conversations = read_jsonl(&resolve(&common.inputs, files::CONVERSATIONS)?)?;
            let records = stages::oracle_records(&conversations, &cfg.tpl)?;
            outputs.push((files::NLL, jsonl(&records)));
            records
        }
        NllSource::File => {
            let path = match resolve(&common.inputs, files::NLL) {
                Ok(p) => p,
                Err(_) => PathBuf::from(cfg.tpl.nll_path.as_deref().unwrap_or_default()),
            };
            stages::read_nll(&path)?
        }
    };
    let (scores, issues) = stages::score_records(&records, &cfg.tpl)?;
    outputs.push((files::TPL, jsonl(&scores)));
    outputs.push((files::TPL_REPORT, jsonl(&issues)));
    write_outputs(out_dir(common)?, &outputs)?;
    eprintln!("{} scores, {} pairing issues", scores.len(), issues.len());
    Ok(())
}

#[derive(Deserialize)]
struct Tag {
    sample_id: String,
    subset: String,
}

fn stats(common: &Common, tags: Option<&Path>, format: Format) -> Result<()> {
    let scores: Vec<TplScore> = read_jsonl(&resolve(&common.inputs, files::TPL)?)?;
    let table = match tags {
        Some(path) => {
            let tags: Vec<Tag> = read_jsonl(path)?;
            let map: BTreeMap<String, String> = tags.into_iter().map(|t| (t.sample_id, t.subset)).collect();
            subset_stats(&scores, &map)?
        }
        None => bucket_stats(&scores),
    };
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Json => stdout.write_all(to_jsonl(&table).as_bytes())?,
        Format::Table => write_table(&mut stdout, &table)?,
    }
    Ok(())
}

fn write_table(w: &mut impl Write, rows: &[SubsetStats]) -> std::io::Result<()> {
    let width = rows.iter().map(|r| r.subset.len()).max().unwrap_or(0).max(6);
    writeln!(w, "{:<width$}  {:>6}  {:>10}  {:>10}  {:>10}  {:>10}", "subset", "count", "mean", "stdev", "min", "max")?;
    for r in rows {
        writeln!(
            w,
            "{:<width$}  {:>6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}",
            r.subset, r.count, r.mean, r.stdev, r.min, r.max
        )?;
    }
    Ok(())
}

fn reward_gap(common: &Common, preset: Option<Preset>) -> Result<bool> {
    let sweep_config = match preset {
        Some(Preset::Monotonicity) => SweepConfig::monotonicity_grid(),
        None => config(common)?.config.rewardgap,
    };
    let rows = sweep(&sweep_config, &RewardModel::Coverage)?;
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        csv_out.serialize(row)?;
    }
    let csv_bytes = csv_out.into_inner().context("flushing csv")?;
    match &common.out {
        Some(dir) => write_outputs(dir, &[("reward_gap.csv", csv_bytes), ("reward_gap.jsonl", jsonl(&rows))])?,
        None => std::io::stdout().write_all(&csv_bytes)?,
    }
    let violations = sweep_violations(&rows, &sweep_config, 1e-12);
    for v in &violations {
        eprintln!("violation: {v}");
    }
    Ok(violations.is_empty())
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    video_id: &'a str,
    #[serde(flatten)]
    trajectory: &'a SubjectTrajectory,
}

fn synth(common: &Common, corpus: Option<&Path>) -> Result<()> {
    let corpus_config: CorpusConfig = match corpus {
        Some(p) => toml::from_str(&read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => CorpusConfig::default(),
    };
    let seed = match common.seed {
        Some(s) => s,
        None => config(common)?.config.seed,
    };
    let (frames, truths) = synth_corpus(&corpus_config, seed)?;
    let truth: Vec<TruthRecord> = truths
        .iter()
        .flat_map(|(video_id, list)| list.iter().map(move |t| TruthRecord { video_id, trajectory: t }))
        .collect();
    let dir = out_dir(common)?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("detections.jsonl"), &jsonl(&frames))?;
    write_atomic(&dir.join("truth.jsonl"), &jsonl(&truth))?;
    eprintln!("{} frames over {} videos", frames.len(), truths.len());
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let loaded = config(common)?;
    if common.inputs.is_empty() {
        bail!("run needs --input");
    }
    let manifest = run_pipeline(&loaded, &common.inputs, out_dir(common)?)?;
    eprintln!("{}", serde_json::to_string(&manifest.counts)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(c) => ingest(c).map(|_| true),
        Command::Track(c) => track(c).map(|_| true),
        Command::Filter(c) => filter(c).map(|_| true),
        Command::GenTasks(c) => gen_tasks(c).map(|_| true),
        Command::Tpl(c) => tpl(c).map(|_| true),
        Command::Stats { common, tags, format } => stats(common, tags.as_deref(), *format).map(|_| true),
        Command::RewardGap { common, preset } => reward_gap(common, *preset),
        Command::Synth { common, corpus } => synth(common, corpus.as_deref()).map(|_| true),
        Command::Run(c) => run(c).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
