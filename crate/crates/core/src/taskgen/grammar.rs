//! The answer grammar.
//!
//! ```text
//! answer   := [sentence ", "] block (", " block)*
//! block    := category "<id" N ">" frame (";" frame)* "</id" N ">"
//! frame    := "Frame" P ":<box>" payload "</box>"
//! payload  := "[" C "," C "," C "," C "]"
//! ```
//!
//! `N` is the subject id (ascending across blocks), `P` the 1-based clip
//! position (ascending within a block), and each `C` a coordinate
//! normalised to `0..=1000`. Integers carry no leading zeros. Categories
//! may not contain `<`, `>`, `,`, `;`, `:`, `[` or `]`, nor start or end
//! with whitespace; the sentence may not contain `<` or `>`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;

const RESERVED: &[char] = &['<', '>', ',', ';', ':', '[', ']'];

/// Box corners normalised to integers in `0..=1000`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NormBox(pub [u32; 4]);

impl fmt::Display for NormBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "[{a},{b},{c},{d}]")
    }
}

fn normalize(v: f64, dim: f64) -> u32 {
    // round half up
    let scaled = (v * 1000.0 / dim + 0.5).floor();
    scaled.clamp(0.0, 1000.0) as u32
}

pub fn normalize_box(b: &BoundingBox, width: u32, height: u32) -> NormBox {
    let (w, h) = (width as f64, height as f64);
    NormBox([
        normalize(b.x1(), w),
        normalize(b.y1(), h),
        normalize(b.x2(), w),
        normalize(b.y2(), h),
    ])
}

/// `"[x1,y1,x2,y2]"` with x scaled by width and y by height to `0..=1000`.
pub fn serialize_box(b: &BoundingBox, width: u32, height: u32) -> String {
    normalize_box(b, width, height).to_string()
}

pub fn valid_category(category: &str) -> bool {
    !category.is_empty()
        && !category.contains(RESERVED)
        && category.trim() == category
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSubject {
    pub subject_id: u32,
    pub category: String,
    /// `(clip position, box)` in ascending position order.
    pub frames: Vec<(u32, NormBox)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub sentence: Option<String>,
    pub subjects: Vec<ParsedSubject>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("answer grammar error at byte {offset}: {message}")]
pub struct GrammarError {
    pub offset: usize,
    pub message: String,
}

/// Render subject blocks, optionally preceded by a sentence.
pub fn render_blocks(sentence: Option<&str>, subjects: &[ParsedSubject]) -> String {
    let blocks: Vec<String> = subjects
        .iter()
        .map(|s| {
            let frames: Vec<String> = s
                .frames
                .iter()
                .map(|(p, b)| format!("Frame{p}:<box>{b}</box>"))
                .collect();
            format!(
                "{cat}<id{id}>{frames}</id{id}>",
                cat = s.category,
                id = s.subject_id,
                frames = frames.join(";")
            )
        })
        .collect();
    match sentence {
        Some(s) => format!("{s}, {}", blocks.join(", ")),
        None => blocks.join(", "),
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, GrammarError> {
        Err(GrammarError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn expect(&mut self, literal: &str) -> Result<(), GrammarError> {
        if self.rest().starts_with(literal) {
            self.pos += literal.len();
            Ok(())
        } else {
            self.err(format!("expected `{literal}`"))
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, GrammarError> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return self.err(format!("expected {what}"));
        }
        let s = &self.rest()[..digits];
        if digits > 1 && s.starts_with('0') {
            return self.err(format!("{what} has a leading zero"));
        }
        let Ok(v) = s.parse::<u32>() else {
            return self.err(format!("{what} out of range"));
        };
        self.pos += digits;
        Ok(v)
    }

    fn payload(&mut self) -> Result<NormBox, GrammarError> {
        self.expect("[")?;
        let mut c = [0u32; 4];
        for (i, slot) in c.iter_mut().enumerate() {
            if i > 0 {
                self.expect(",")?;
            }
            let at = self.pos;
            *slot = self.number("coordinate")?;
            if *slot > 1000 {
                return Err(GrammarError {
                    offset: at,
                    message: format!("coordinate {slot} exceeds 1000"),
                });
            }
        }
        self.expect("]")?;
        Ok(NormBox(c))
    }

    fn block(&mut self) -> Result<ParsedSubject, GrammarError> {
        let start = self.pos;
        let Some(lt) = self.rest().find('<') else {
            return self.err("expected a subject block");
        };
        let category = &self.rest()[..lt];
        if !valid_category(category) {
            return self.err(format!("invalid category `{category}`"));
        }
        self.pos += lt;
        self.expect("<id")?;
        let id_at = self.pos;
        let subject_id = self.number("subject id")?;
        if subject_id == 0 {
            return Err(GrammarError {
                offset: id_at,
                message: "subject id must be positive".into(),
            });
        }
        self.expect(">")?;
        if self.rest().starts_with("</id") {
            return self.err("empty trajectory");
        }
        let mut frames: Vec<(u32, NormBox)> = Vec::new();
        loop {
            self.expect("Frame")?;
            let p_at = self.pos;
            let position = self.number("frame position")?;
            if position == 0 {
                return Err(GrammarError {
                    offset: p_at,
                    message: "frame positions start at 1".into(),
                });
            }
            if let Some((prev, _)) = frames.last() {
                if position <= *prev {
                    return Err(GrammarError {
                        offset: p_at,
                        message: format!("frame {position} does not follow frame {prev}"),
                    });
                }
            }
            self.expect(":<box>")?;
            let b = self.payload()?;
            self.expect("</box>")?;
            frames.push((position, b));
            if self.rest().starts_with(';') {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect("</id")?;
        let close_at = self.pos;
        let close = self.number("closing subject id")?;
        if close != subject_id {
            return Err(GrammarError {
                offset: close_at,
                message: format!("closing tag id{close} does not match id{subject_id} opened at byte {start}"),
            });
        }
        self.expect(">")?;
        Ok(ParsedSubject {
            subject_id,
            category: category.to_string(),
            frames,
        })
    }
}

/// Strict parser for the answer grammar; no recovery.
pub fn parse_answer(answer: &str) -> Result<ParsedAnswer, GrammarError> {
    let Some(first_tag) = answer.find('<') else {
        return Err(GrammarError {
            offset: answer.len(),
            message: "no subject block".into(),
        });
    };
    let (sentence, start) = match answer[..first_tag].rfind(", ") {
        Some(i) => (Some(answer[..i].to_string()), i + 2),
        None => (None, 0),
    };
    if let Some(s) = &sentence {
        if let Some(i) = s.find('>') {
            return Err(GrammarError {
                offset: i,
                message: "`>` outside a tag".into(),
            });
        }
    }
    let mut cur = Cursor { text: answer, pos: start };
    let mut subjects: Vec<ParsedSubject> = Vec::new();
    loop {
        let at = cur.pos;
        let block = cur.block()?;
        if let Some(prev) = subjects.last() {
            if block.subject_id == prev.subject_id {
                return Err(GrammarError {
                    offset: at,
                    message: format!("duplicate subject id{}", block.subject_id),
                });
            }
            if block.subject_id < prev.subject_id {
                return Err(GrammarError {
                    offset: at,
                    message: format!("subject id{} follows id{}", block.subject_id, prev.subject_id),
                });
            }
        }
        subjects.push(block);
        if cur.pos == answer.len() {
            break;
        }
        cur.expect(", ")?;
    }
    Ok(ParsedAnswer { sentence, subjects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn box_serialization() {
        let (w, h) = (640.0, 480.0);
        assert_eq!(serialize_box(&bx(0.1 * w, 0.2 * h, 0.5 * w, 0.6 * h), 640, 480), "[100,200,500,600]");
        assert_eq!(serialize_box(&bx(0.0, 0.0, 640.0, 480.0), 640, 480), "[0,0,1000,1000]");
        // 960/1920, 540/1080, 1440/1920, 810/1080
        assert_eq!(serialize_box(&bx(960.0, 540.0, 1440.0, 810.0), 1920, 1080), "[500,500,750,750]");
        // 0.5 rounds up: 1/2000 of the width is 0.5 units
        assert_eq!(serialize_box(&bx(1.0, 0.0, 2.0, 1.0), 2000, 1000), "[1,0,1,1]");
    }

    #[test]
    fn parses_single_block() {
        let a = "person<id1>Frame1:<box>[1,2,3,4]</box>;Frame2:<box>[5,6,7,8]</box></id1>";
        let p = parse_answer(a).unwrap();
        assert_eq!(p.sentence, None);
        assert_eq!(p.subjects.len(), 1);
        assert_eq!(p.subjects[0].category, "person");
        assert_eq!(p.subjects[0].frames, vec![(1, NormBox([1, 2, 3, 4])), (2, NormBox([5, 6, 7, 8]))]);
        assert_eq!(render_blocks(None, &p.subjects), a);
    }

    #[test]
    fn sentence_prefix_and_multiple_blocks() {
        let a = "It is the traffic light id2, and more, traffic light<id2>Frame3:<box>[0,0,1,1]</box></id2>, car<id7>Frame1:<box>[0,0,1000,1000]</box></id7>";
        let p = parse_answer(a).unwrap();
        assert_eq!(p.sentence.as_deref(), Some("It is the traffic light id2, and more"));
        assert_eq!(p.subjects[0].category, "traffic light");
        assert_eq!(p.subjects[1].subject_id, 7);
        assert_eq!(render_blocks(p.sentence.as_deref(), &p.subjects), a);
    }

    #[test]
    fn rejects_malformed() {
        let bad = [
            ("person<id1></id1>", "empty trajectory"),
            ("person<id1>Frame1:<box>[1,2,3,4]</box></id1> trailing", "expected `, `"),
            ("person<id1>Frame1:<box>[1,2,3,4]</box></id2>", "does not match"),
            ("person<id1>Frame2:<box>[1,2,3,4]</box>;Frame2:<box>[1,2,3,4]</box></id1>", "does not follow"),
            ("a<id1>Frame1:<box>[1,2,3,4]</box></id1>, b<id1>Frame1:<box>[1,2,3,4]</box></id1>", "duplicate"),
            ("a<id2>Frame1:<box>[1,2,3,4]</box></id2>, b<id1>Frame1:<box>[1,2,3,4]</box></id1>", "follows"),
            ("a<id01>Frame1:<box>[1,2,3,4]</box></id01>", "leading zero"),
            ("a<id1>Frame1:<box>[1,2,3,1001]</box></id1>", "exceeds 1000"),
            ("a<id1>Frame0:<box>[1,2,3,4]</box></id1>", "start at 1"),
            ("no blocks here", "no subject block"),
            ("<id1>Frame1:<box>[1,2,3,4]</box></id1>", "invalid category"),
        ];
        for (text, needle) in bad {
            let err = parse_answer(text).unwrap_err();
            assert!(err.message.contains(needle), "{text}: {err}");
        }
        let err = parse_answer("person<id1>Frame1:<box>[1,2,3,4]</box></id1> trailing").unwrap_err();
        assert_eq!(err.offset, 44);
    }

    #[test]
    fn category_rules() {
        assert!(valid_category("traffic light"));
        assert!(!valid_category(""));
        assert!(!valid_category("a,b"));
        assert!(!valid_category(" person"));
        assert!(!valid_category("x<y"));
    }
}
