use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use serde_json::{Map, Value};

use super::{Detection, FrameRecord};
use crate::bbox::BoundingBox;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: frame {frame_index} of `{video_id}`: detection {detection} box {bbox} lies outside the {width}x{height} frame")]
    BoxOutsideFrame {
        line: usize,
        video_id: String,
        frame_index: u64,
        detection: usize,
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("line {line}: duplicate frame {frame_index} for video `{video_id}`")]
    DuplicateFrame {
        line: usize,
        video_id: String,
        frame_index: u64,
    },
    #[error("reading line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(line: usize, field: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn get<'a>(obj: &'a Map<String, Value>, line: usize, key: &str, path: &str) -> Result<&'a Value, IngestError> {
    obj.get(key).ok_or_else(|| malformed(line, path, "missing"))
}

fn as_str(v: &Value, line: usize, path: &str) -> Result<String, IngestError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed(line, path, format!("expected string, found {v}")))
}

fn as_u64(v: &Value, line: usize, path: &str) -> Result<u64, IngestError> {
    v.as_u64()
        .ok_or_else(|| malformed(line, path, format!("expected non-negative integer, found {v}")))
}

fn as_f64(v: &Value, line: usize, path: &str) -> Result<f64, IngestError> {
    v.as_f64()
        .ok_or_else(|| malformed(line, path, format!("expected number, found {v}")))
}

fn optional_str(obj: &Map<String, Value>, line: usize, key: &str, path: &str) -> Result<String, IngestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(v) => as_str(v, line, path),
    }
}

fn parse_detection(v: &Value, line: usize, idx: usize) -> Result<Detection, IngestError> {
    let prefix = format!("detections[{idx}]");
    let obj = v
        .as_object()
        .ok_or_else(|| malformed(line, &prefix, "expected object"))?;

    let bbox_path = format!("{prefix}.bbox");
    let coords = get(obj, line, "bbox", &bbox_path)?
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| malformed(line, &bbox_path, "expected [x1,y1,x2,y2]"))?;
    let mut c = [0.0; 4];
    for (i, (slot, name)) in c.iter_mut().zip(["x1", "y1", "x2", "y2"]).enumerate() {
        *slot = as_f64(&coords[i], line, &format!("{bbox_path}.{name}"))?;
    }
    let bbox = BoundingBox::new(c[0], c[1], c[2], c[3])
        .map_err(|e| malformed(line, format!("{bbox_path}.{}", e.field()), e.to_string()))?;

    let score_path = format!("{prefix}.score");
    let score = as_f64(get(obj, line, "score", &score_path)?, line, &score_path)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(malformed(line, score_path, format!("{score} outside [0, 1]")));
    }

    let category_path = format!("{prefix}.category");
    let category = as_str(get(obj, line, "category", &category_path)?, line, &category_path)?;
    if category.is_empty() {
        return Err(malformed(line, category_path, "must not be empty"));
    }

    Ok(Detection {
        bbox,
        score,
        category,
        caption: optional_str(obj, line, "caption", &format!("{prefix}.caption"))?,
        action: optional_str(obj, line, "action", &format!("{prefix}.action"))?,
    })
}

fn parse_line(text: &str, line: usize) -> Result<FrameRecord, IngestError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| malformed(line, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line, "<record>", "expected object"))?;

    let video_id = as_str(get(obj, line, "video_id", "video_id")?, line, "video_id")?;
    let frame_index = as_u64(get(obj, line, "frame_index", "frame_index")?, line, "frame_index")?;
    let mut dims = [0u32; 2];
    for (slot, key) in dims.iter_mut().zip(["width", "height"]) {
        let raw = as_u64(get(obj, line, key, key)?, line, key)?;
        *slot = u32::try_from(raw)
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| malformed(line, key, format!("expected positive pixel count, found {raw}")))?;
    }
    let [width, height] = dims;

    let raw_dets = get(obj, line, "detections", "detections")?
        .as_array()
        .ok_or_else(|| malformed(line, "detections", "expected array"))?;
    let mut detections = Vec::with_capacity(raw_dets.len());
    for (idx, raw) in raw_dets.iter().enumerate() {
        let det = parse_detection(raw, line, idx)?;
        if !det.bbox.within(width as f64, height as f64) {
            return Err(IngestError::BoxOutsideFrame {
                line,
                video_id,
                frame_index,
                detection: idx,
                bbox: det.bbox,
                width,
                height,
            });
        }
        detections.push(det);
    }

    Ok(FrameRecord {
        video_id,
        frame_index,
        width,
        height,
        detections,
    })
}

/// Parse a detections stream into frame records sorted by `(video_id, frame_index)`.
///
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<FrameRecord>, IngestError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let text = line.map_err(|source| IngestError::Io { line: lineno, source })?;
        if text.trim().is_empty() {
            continue;
        }
        let record = parse_line(&text, lineno)?;
        if !seen.insert((record.video_id.clone(), record.frame_index)) {
            return Err(IngestError::DuplicateFrame {
                line: lineno,
                video_id: record.video_id,
                frame_index: record.frame_index,
            });
        }
        records.push(record);
    }
    // stable sort keeps the detection order of each record untouched
    records.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.frame_index.cmp(&b.frame_index))
    });
    Ok(records)
}

/// Inverse of [`parse_detections`]: one JSON object per line.
pub fn serialize_detections(records: &[FrameRecord]) -> String {
    crate::jsonl::to_jsonl(records)
}

pub fn group_by_video(records: Vec<FrameRecord>) -> BTreeMap<String, Vec<FrameRecord>> {
    let mut groups: BTreeMap<String, Vec<FrameRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.video_id.clone()).or_default().push(r);
    }
    for frames in groups.values_mut() {
        frames.sort_by_key(|f| f.frame_index);
    }
    groups
}
