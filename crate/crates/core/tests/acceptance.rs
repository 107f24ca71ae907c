//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every oracle here is computed from
//! scratch rather than through the library.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajquery::bbox::BoundingBox;
use trajquery::filter::{filter_low_conf, filter_short, filter_small, FilterParams, SizeMode, SmallRule};
use trajquery::ingest::{synth_scene, ClipRecord, ClipSpec, GapPolicy, SyntheticSceneConfig};
use trajquery::pipeline::{load_config, run_pipeline, RunCounts};
use trajquery::rewardgap::{sweep, RewardModel, SweepConfig, SweepRow};
use trajquery::taskgen::{generate_for_clip, parse_answer, TaskGenConfig};
use trajquery::tpl::{bucketize, oracle_nll, subset_stats, tpl_score, Bucket, ContextMode, OracleScorerConfig, TplScore};
use trajquery::tracker::{assign, associate, SubjectTrajectory, TrackEntry, TrackState, TrackerParams};

const ROUTE_TOLERANCE: f64 = 1e-12;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed > limit {
        Err(format!("took {elapsed:?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

// 1 ------------------------------------------------------------------------

/// Independent closed form: with reward t - a + 1, the per-step gap is
/// gamma^t * (k_t - 1).
fn expected_gap(horizon: u32, gamma: f64, k: impl Fn(u32) -> u32) -> f64 {
    (1..=horizon).map(|t| gamma.powi(t as i32) * (k(t) as f64 - 1.0)).sum()
}

fn reward_gap_monotonicity() -> Outcome {
    let start = Instant::now();
    let config = SweepConfig::monotonicity_grid();
    let rows = sweep(&config, &RewardModel::Coverage).map_err(|e| e.to_string())?;
    let horizons: Vec<u32> = (1..=10).collect();
    let gammas = [0.5, 0.9, 1.0];
    let policies: [(&str, fn(u32) -> u32); 3] = [("k=1", |_| 1), ("k=ceil(t/2)", |t| t.div_ceil(2)), ("k=t", |t| t)];
    ensure!(rows.len() == horizons.len() * gammas.len() * policies.len(), "expected 90 rows, got {}", rows.len());
    let mut table: HashMap<(u32, u64, &str), &SweepRow> = HashMap::new();
    for r in &rows {
        table.insert((r.horizon, r.gamma.to_bits(), r.policy_name.as_str()), r);
    }
    let get = |t: u32, g: f64, p: &str| -> Result<&SweepRow, String> {
        table.get(&(t, g.to_bits(), p)).copied().ok_or(format!("missing row T={t} gamma={g} {p}"))
    };
    for &g in &gammas {
        for (name, k) in policies {
            let mut prev = f64::NEG_INFINITY;
            for &t in &horizons {
                let row = get(t, g, name)?;
                ensure!(row.delta_r >= 0.0, "negative gap at T={t} gamma={g} {name}: {}", row.delta_r);
                ensure!(row.delta_r >= prev, "gap shrinks at T={t} gamma={g} {name}");
                ensure!(
                    (row.delta_r - row.delta_r_difference).abs() <= ROUTE_TOLERANCE,
                    "routes disagree at T={t} gamma={g} {name}: {} vs {}",
                    row.delta_r,
                    row.delta_r_difference
                );
                let oracle = expected_gap(t, g, k);
                ensure!(
                    (row.delta_r - oracle).abs() <= ROUTE_TOLERANCE,
                    "T={t} gamma={g} {name}: {} vs oracle {oracle}",
                    row.delta_r
                );
                prev = row.delta_r;
            }
        }
        for &t in &horizons {
            let a = get(t, g, "k=1")?.delta_r;
            let b = get(t, g, "k=ceil(t/2)")?.delta_r;
            let c = get(t, g, "k=t")?.delta_r;
            ensure!(a <= b && b <= c, "policy order broken at T={t} gamma={g}: {a} {b} {c}");
        }
    }
    for &t in &horizons {
        let exact = (t * (t - 1) / 2) as f64;
        let got = get(t, 1.0, "k=t")?.delta_r;
        ensure!(got == exact, "T={t} gamma=1 k=t: {got} != {exact}");
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("90 rows, routes within {ROUTE_TOLERANCE:e}, {:?}", start.elapsed()))
}

// 2 ------------------------------------------------------------------------

/// Minimum total cost over all maximum-cardinality matchings, by enumeration.
fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(row: usize, cost: &[Vec<f64>], used: &mut Vec<bool>, need: usize, taken: usize, acc: f64, best: &mut f64) {
        let n = cost.len();
        if taken + (n - row) < need {
            return;
        }
        if row == n {
            if taken == need && acc < *best {
                *best = acc;
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(row + 1, cost, used, need, taken + 1, acc + cost[row][c], best);
                used[c] = false;
            }
        }
        go(row + 1, cost, used, need, taken, acc, best);
    }
    let m = cost[0].len();
    let need = cost.len().min(m);
    let mut best = f64::INFINITY;
    go(0, cost, &mut vec![false; m], need, 0, 0.0, &mut best);
    best
}

fn assignment_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=6);
        // multiples of 1/64 keep every sum exact
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(0..=64) as f64 / 64.0).collect())
            .collect();
        let got = assign(&cost, None);
        ensure!(got.pairs.len() == n.min(m), "case {case}: {} pairs for {n}x{m}", got.pairs.len());
        let rows: BTreeSet<usize> = got.pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<usize> = got.pairs.iter().map(|p| p.1).collect();
        ensure!(rows.len() == got.pairs.len() && cols.len() == got.pairs.len(), "case {case}: not a matching");
        let total: f64 = got.pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        ensure!(total == got.total, "case {case}: reported total {} != sum {total}", got.total);
        let best = brute_force_min(&cost);
        ensure!(total == best, "case {case}: {total} != exhaustive {best} for {cost:?}");
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 matrices up to 6x6 match exhaustive search, {:?}", start.elapsed()))
}

// 3 ------------------------------------------------------------------------

fn box_key(b: &BoundingBox) -> [u64; 4] {
    [b.x1().to_bits(), b.y1().to_bits(), b.x2().to_bits(), b.y2().to_bits()]
}

fn tracker_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = TrackerParams::default();
    let mut total_entries = 0usize;
    for scene in 0..200u64 {
        let objects = rng.gen_range(2..=4);
        let frames = rng.gen_range(8..=32);
        let mut config = SyntheticSceneConfig::lanes(&format!("s{scene}"), 640, 360, frames, objects, rng.gen());
        config.jitter = rng.gen_range(0.0..=2.0);
        let (records, truth) = synth_scene(&config).map_err(|e| format!("scene {scene}: {e}"))?;
        let mut owner: HashMap<(u64, [u64; 4]), u32> = HashMap::new();
        for t in &truth {
            for e in &t.entries {
                owner.insert((e.frame_index, box_key(&e.bbox)), t.subject_id);
            }
        }
        let tracks = associate(&records, &params);
        // every track must carry a single ground-truth identity
        let mut track_to_gt: BTreeMap<u32, u32> = BTreeMap::new();
        let mut idtp = 0usize;
        for t in &tracks {
            let ids: BTreeSet<u32> = t
                .entries
                .iter()
                .map(|e| owner.get(&(e.frame_index, box_key(&e.bbox))).copied().unwrap_or(0))
                .collect();
            ensure!(ids.len() == 1 && !ids.contains(&0), "scene {scene}: track {} mixes identities {ids:?}", t.subject_id);
            track_to_gt.insert(t.subject_id, *ids.iter().next().unwrap());
            idtp += t.entries.len();
        }
        let gt_ids: BTreeSet<u32> = truth.iter().map(|t| t.subject_id).collect();
        let mapped: BTreeSet<u32> = track_to_gt.values().copied().collect();
        ensure!(
            mapped == gt_ids && track_to_gt.len() == gt_ids.len(),
            "scene {scene}: {} tracks for {} objects",
            tracks.len(),
            gt_ids.len()
        );
        let gt_total: usize = truth.iter().map(|t| t.entries.len()).sum();
        let pred_total: usize = tracks.iter().map(|t| t.entries.len()).sum();
        let idf1 = 2.0 * idtp as f64 / (gt_total + pred_total) as f64;
        ensure!(idf1 == 1.0, "scene {scene}: identity F1 {idf1}");
        total_entries += gt_total;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("200 scenes, {total_entries} detections, identity F1 = 1.0, {:?}", start.elapsed()))
}

// 4 ------------------------------------------------------------------------

/// Round half up of `q / 4 * 1000 / dim` in integers; boxes use quarter pixels.
fn norm_quarter(q: i64, dim: u32) -> u32 {
    let num = 2 * q * 1000 + 4 * dim as i64;
    let den = 8 * dim as i64;
    num.div_euclid(den).clamp(0, 1000) as u32
}

type Projection = Vec<(u32, String, Vec<(u32, [u32; 4])>)>;

fn fuzz_scene(rng: &mut ChaCha8Rng, case: usize) -> (Vec<SubjectTrajectory>, ClipRecord, Vec<Vec<(u64, [i64; 4])>>) {
    const CATS: [&str; 4] = ["person", "traffic light", "dog", "car"];
    let (w, h) = (rng.gen_range(64..2000u32), rng.gen_range(64..2000u32));
    let len = rng.gen_range(2..=16usize);
    let gap = rng.gen_range(1..=5u64);
    let frames: Vec<u64> = (0..len as u64).map(|i| 7 + i * gap).collect();
    let clip = ClipRecord {
        clip_id: format!("f{case}-c0"),
        width: w,
        height: h,
        spec: ClipSpec {
            video_id: format!("f{case}"),
            frame_indices: frames.clone(),
            count: len,
            gap: GapPolicy::Fixed { gap },
            seed: 0,
        },
    };
    let n = rng.gen_range(1..=5usize);
    let mut raw = Vec::new();
    let mut tracks = Vec::new();
    for s in 0..n {
        let mut entries = Vec::new();
        let mut quarters = Vec::new();
        let captioned = rng.gen_bool(0.5);
        for &f in &frames {
            if rng.gen_bool(0.3) && !(entries.is_empty() && f == *frames.last().unwrap()) {
                continue;
            }
            let x1 = rng.gen_range(0..(w as i64 - 8) * 4);
            let y1 = rng.gen_range(0..(h as i64 - 8) * 4);
            let x2 = rng.gen_range(x1 + 1..=w as i64 * 4);
            let y2 = rng.gen_range(y1 + 1..=h as i64 * 4);
            let q = [x1, y1, x2, y2];
            entries.push(TrackEntry {
                frame_index: f,
                bbox: BoundingBox::new(x1 as f64 / 4.0, y1 as f64 / 4.0, x2 as f64 / 4.0, y2 as f64 / 4.0).unwrap(),
                score: 0.9,
                caption: if captioned { format!("subject {s}") } else { String::new() },
                action: if rng.gen_bool(0.5) { "running".into() } else { String::new() },
            });
            quarters.push((f, q));
        }
        tracks.push(SubjectTrajectory {
            subject_id: s as u32 + 1,
            category: CATS[rng.gen_range(0..CATS.len())].to_string(),
            entries,
            state: TrackState::Active,
        });
        raw.push(quarters);
    }
    (tracks, clip, raw)
}

fn expected_projection(
    tracks: &[SubjectTrajectory],
    clip: &ClipRecord,
    raw: &[Vec<(u64, [i64; 4])>],
    ids: &[u32],
) -> Projection {
    let mut ids = ids.to_vec();
    ids.sort();
    ids.iter()
        .map(|&id| {
            let i = (id - 1) as usize;
            let frames = raw[i]
                .iter()
                .map(|(f, q)| {
                    let p = clip.frame_indices().iter().position(|x| x == f).unwrap() as u32 + 1;
                    (
                        p,
                        [
                            norm_quarter(q[0], clip.width),
                            norm_quarter(q[1], clip.height),
                            norm_quarter(q[2], clip.width),
                            norm_quarter(q[3], clip.height),
                        ],
                    )
                })
                .collect();
            (id, tracks[i].category.clone(), frames)
        })
        .collect()
}

/// Byte offsets that lie inside `<...>` tags.
fn tag_bytes(answer: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut inside = false;
    for (i, b) in answer.bytes().enumerate() {
        if b == b'<' {
            inside = true;
        }
        if inside {
            out.push(i);
        }
        if b == b'>' {
            inside = false;
        }
    }
    out
}

fn grammar_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = TaskGenConfig {
        queries_per_clip: 1,
        ..TaskGenConfig::default()
    };
    let mut conversations = 0;
    let mut mutations = 0;
    let mut case = 0;
    while conversations < 1000 {
        let (tracks, clip, raw) = fuzz_scene(&mut rng, case);
        case += 1;
        let (records, _) = generate_for_clip(&tracks, &clip, &config, rng.gen()).map_err(|e| e.to_string())?;
        for r in records {
            conversations += 1;
            let parsed = parse_answer(&r.answer).map_err(|e| format!("{}: {e}", r.id))?;
            let got: Projection = parsed
                .subjects
                .iter()
                .map(|s| (s.subject_id, s.category.clone(), s.frames.iter().map(|(p, b)| (*p, b.0)).collect()))
                .collect();
            let want = expected_projection(&tracks, &clip, &raw, &r.query.subject_ids);
            ensure!(got == want, "{}: parsed {got:?} expected {want:?}", r.id);

            let positions = tag_bytes(&r.answer);
            let mut bytes = r.answer.clone().into_bytes();
            for _ in 0..20 {
                let at = positions[rng.gen_range(0..positions.len())];
                let original = bytes[at];
                let mut replacement = rng.gen_range(0x20u8..0x7f);
                while replacement == original {
                    replacement = rng.gen_range(0x20u8..0x7f);
                }
                bytes[at] = replacement;
                let mutated = std::str::from_utf8(&bytes).unwrap();
                ensure!(
                    parse_answer(mutated).is_err(),
                    "mutating byte {at} ({:?} -> {:?}) still parses: {mutated}",
                    original as char,
                    replacement as char
                );
                bytes[at] = original;
                mutations += 1;
            }
        }
    }
    Ok(format!("{conversations} conversations round-trip, {mutations} tag mutations rejected, {:?}", start.elapsed()))
}

// 5 ------------------------------------------------------------------------

fn tpl_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // multiples of 2^-10 below 2^6 add and subtract exactly
    let dyadic = |rng: &mut ChaCha8Rng| rng.gen_range(0..(1 << 16)) as f64 / 1024.0;
    for i in 0..10_000 {
        let (a, b, c) = (dyadic(&mut rng), dyadic(&mut rng), dyadic(&mut rng));
        ensure!(tpl_score(a, b) == -tpl_score(b, a), "pair {i}: antisymmetry fails for {a}, {b}");
        ensure!(tpl_score(a + c, b + c) == tpl_score(a, b), "pair {i}: shift by {c} changes tpl({a}, {b})");
        ensure!(tpl_score(a, b) == b - a, "pair {i}: sign convention");
    }

    let cfg = OracleScorerConfig::default();
    let clip_len = 16;
    let densities: Vec<f64> = (0..=25).map(|i| i as f64 * 0.1).collect();
    let tpl_at = |d: f64| -> Result<f64, String> {
        let full = oracle_nll(d, ContextMode::Full, clip_len, &cfg).map_err(|e| e.to_string())?;
        let single = oracle_nll(d, ContextMode::Single(clip_len), clip_len, &cfg).map_err(|e| e.to_string())?;
        Ok(tpl_score(full, single))
    };
    let mut prev = f64::NEG_INFINITY;
    for &d in &densities {
        let t = tpl_at(d)?;
        ensure!(t > prev, "tpl not strictly increasing at density {d}: {t} <= {prev}");
        let oracle = cfg.alpha * d * (1.0 - 1.0 / clip_len as f64);
        ensure!((t - oracle).abs() <= 1e-12, "density {d}: tpl {t} vs {oracle}");
        prev = t;
    }

    // subsets with distinct density levels; samples jitter density within a subset
    let levels = [("sparse", 0.2), ("medium", 0.9), ("dense", 1.8), ("packed", 2.6)];
    let mut scores = Vec::new();
    let mut tags = BTreeMap::new();
    for (name, base) in levels {
        for j in 0..25 {
            let d = base + rng.gen_range(-0.1..0.1);
            let id = format!("{name}-{j}");
            scores.push(TplScore {
                sample_id: id.clone(),
                tpl: tpl_at(d)?,
                bucket: None,
                scorer_id: "oracle".into(),
            });
            tags.insert(id, name.to_string());
        }
    }
    let stats = subset_stats(&scores, &tags).map_err(|e| e.to_string())?;
    let order: Vec<&str> = stats.iter().map(|s| s.subset.as_str()).collect();
    ensure!(order == ["packed", "dense", "medium", "sparse"], "subset order {order:?}");
    Ok("10000 pairs exact; oracle strictly increasing; subset order follows density".into())
}

// 6 ------------------------------------------------------------------------

fn tercile_bucketing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, sizes) in [(9usize, [3usize, 3, 3]), (10, [4, 3, 3]), (100, [34, 33, 33])] {
        for round in 0..20 {
            // coarse values force ties across bucket boundaries
            let scores: Vec<TplScore> = (0..n)
                .map(|i| TplScore {
                    sample_id: format!("s{:03}", (i * 37 + round) % n),
                    tpl: rng.gen_range(0..5) as f64 * 0.25,
                    bucket: None,
                    scorer_id: "x".into(),
                })
                .collect();
            let ids: BTreeSet<String> = scores.iter().map(|s| s.sample_id.clone()).collect();
            let out = bucketize(scores.clone()).map_err(|e| e.to_string())?;
            let out_ids: BTreeSet<String> = out.iter().map(|s| s.sample_id.clone()).collect();
            ensure!(out.len() == n && out_ids == ids, "n={n}: buckets are not a partition");
            let mut groups: BTreeMap<u8, Vec<&TplScore>> = BTreeMap::new();
            for s in &out {
                let b = s.bucket.ok_or("unbucketed score")?;
                groups.entry(b.level()).or_default().push(s);
            }
            let got = [
                groups.get(&3).map_or(0, Vec::len),
                groups.get(&2).map_or(0, Vec::len),
                groups.get(&1).map_or(0, Vec::len),
            ];
            ensure!(got == sizes, "n={n}: sizes {got:?} expected {sizes:?}");
            // reference order: tpl descending, then sample id ascending
            let mut reference = scores.clone();
            reference.sort_by(|a, b| b.tpl.partial_cmp(&a.tpl).unwrap().then(a.sample_id.cmp(&b.sample_id)));
            let labels = [Bucket::High, Bucket::Medium, Bucket::Low];
            let mut at = 0;
            for (size, label) in sizes.iter().zip(labels) {
                for r in &reference[at..at + size] {
                    let s = out.iter().find(|s| s.sample_id == r.sample_id).unwrap();
                    ensure!(s.bucket == Some(label), "n={n}: {} in {:?}, expected {label:?}", r.sample_id, s.bucket);
                }
                at += size;
            }
            let min_of = |l: u8| groups[&l].iter().map(|s| s.tpl).fold(f64::INFINITY, f64::min);
            let max_of = |l: u8| groups[&l].iter().map(|s| s.tpl).fold(f64::NEG_INFINITY, f64::max);
            ensure!(min_of(3) >= max_of(2) && min_of(2) >= max_of(1), "n={n}: boundary order broken");
        }
    }
    Ok("sizes 3/3/3, 4/3/3, 34/33/33; partition; ties broken by sample id".into())
}

// 7 ------------------------------------------------------------------------

fn track_of(id: u32, boxes: &[(f64, f64, f64, f64)], scores: &[f64]) -> SubjectTrajectory {
    SubjectTrajectory {
        subject_id: id,
        category: "thing".into(),
        entries: boxes
            .iter()
            .zip(scores)
            .enumerate()
            .map(|(i, (&(x1, y1, x2, y2), &score))| TrackEntry {
                frame_index: i as u64,
                bbox: BoundingBox::new(x1, y1, x2, y2).unwrap(),
                score,
                caption: String::new(),
                action: String::new(),
            })
            .collect(),
        state: TrackState::Active,
    }
}

fn ids(tracks: &[SubjectTrajectory]) -> Vec<u32> {
    tracks.iter().map(|t| t.subject_id).collect()
}

fn filter_rules() -> Outcome {
    let params = FilterParams {
        min_area_fraction: 1.0 / 32.0,
        size_mode: SizeMode::Area,
        small_rule: SmallRule::Any,
        ..FilterParams::default()
    };
    // 32x32 frame: the cutoff is an area of 32 square pixels
    let area30 = track_of(1, &[(0.0, 0.0, 5.0, 6.0), (1.0, 1.0, 6.0, 7.0), (2.0, 2.0, 7.0, 8.0)], &[0.9; 3]);
    let area33 = track_of(2, &[(0.0, 0.0, 3.0, 11.0), (1.0, 1.0, 4.0, 12.0), (2.0, 2.0, 5.0, 13.0)], &[0.9; 3]);
    let kept = filter_small(vec![area30, area33], 32, 32, &params);
    ensure!(ids(&kept) == [2], "area-30 removal / area-33 survival failed: kept {:?}", ids(&kept));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..300 {
        let n = rng.gen_range(0..8);
        let tracks: Vec<SubjectTrajectory> = (0..n)
            .map(|i| {
                let len = rng.gen_range(1..8);
                let boxes: Vec<_> = (0..len)
                    .map(|_| {
                        let (x, y) = (rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0));
                        (x, y, x + rng.gen_range(0.5..12.0), y + rng.gen_range(0.5..12.0))
                    })
                    .collect();
                let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
                track_of(i + 1, &boxes, &scores)
            })
            .collect();
        let mode = if rng.gen_bool(0.5) { SizeMode::Area } else { SizeMode::Side };
        let rule = if rng.gen_bool(0.5) { SmallRule::Any } else { SmallRule::All };
        let (f1, f2) = {
            let a: f64 = rng.gen_range(0.0..0.3);
            let b: f64 = rng.gen_range(0.0..0.3);
            (a.min(b), a.max(b))
        };
        let small = |f: f64| FilterParams {
            min_area_fraction: f,
            size_mode: mode,
            small_rule: rule,
            ..FilterParams::default()
        };
        let once = filter_small(tracks.clone(), 32, 32, &small(f1));
        ensure!(filter_small(once.clone(), 32, 32, &small(f1)) == once, "round {round}: small filter not idempotent");
        let strict = filter_small(tracks.clone(), 32, 32, &small(f2));
        ensure!(ids(&strict).iter().all(|i| ids(&once).contains(i)), "round {round}: small filter not monotone");

        let (l1, l2) = (rng.gen_range(0..5), rng.gen_range(5..9));
        let once = filter_short(tracks.clone(), l1);
        ensure!(filter_short(once.clone(), l1) == once, "round {round}: short filter not idempotent");
        let strict = filter_short(tracks.clone(), l2);
        ensure!(ids(&strict).iter().all(|i| ids(&once).contains(i)), "round {round}: short filter not monotone");

        let (s1, s2) = (rng.gen_range(0.0..0.5), rng.gen_range(0.5..1.0));
        let once = filter_low_conf(tracks.clone(), s1);
        ensure!(filter_low_conf(once.clone(), s1) == once, "round {round}: low_conf filter not idempotent");
        let strict = filter_low_conf(tracks.clone(), s2);
        ensure!(ids(&strict).iter().all(|i| ids(&once).contains(i)), "round {round}: low_conf filter not monotone");
    }
    Ok("1/32 area cutoff on 32x32; 300 randomized rounds idempotent and monotone".into())
}

// 8 ------------------------------------------------------------------------

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn end_to_end_determinism() -> Outcome {
    let start = Instant::now();
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.toml");
    let loaded = load_config(Some(&config_path), &[]).map_err(|e| e.to_string())?;
    let input = vec![fixtures().join("detections.jsonl")];
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(&loaded, &input, a.path()).map_err(|e| e.to_string())?;
    let second = run_pipeline(&loaded, &input, b.path()).map_err(|e| e.to_string())?;
    ensure!(first.outputs == second.outputs, "output digests differ between runs");
    for d in &first.outputs {
        let on_disk = std::fs::read(a.path().join(&d.path)).map_err(|e| e.to_string())?;
        ensure!(
            trajquery::jsonl::sha256_hex(&on_disk) == d.sha256,
            "{} on disk does not match its manifest digest",
            d.path
        );
    }
    let golden: RunCounts = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("golden_counts.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(first.counts == golden, "counts {:?} differ from golden {golden:?}", first.counts);
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{} outputs identical across runs, counts match golden, {:?}", first.outputs.len(), start.elapsed()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 reward-gap monotonicity", reward_gap_monotonicity),
        ("2 assignment optimality", assignment_optimality),
        ("3 tracker identity fidelity", tracker_identity),
        ("4 answer grammar round-trip", grammar_round_trip),
        ("5 temporal perplexity contract", tpl_contract),
        ("6 tercile bucketing", tercile_bucketing),
        ("7 filter rules", filter_rules),
        ("8 end-to-end determinism", end_to_end_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())));
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
