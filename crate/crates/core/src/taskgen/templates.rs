//! Question templates with `{name}` placeholders.
//!
//! `{{` and `}}` produce literal braces. Every placeholder in a template must
//! be supplied by the caller; anything left over is an error.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template placeholder `{{{placeholder}}}` is not filled in `{template}`")]
    Unfilled { placeholder: String, template: String },
    #[error("unbalanced brace at byte {offset} in `{template}`")]
    Unbalanced { offset: usize, template: String },
    #[error("template pool `{pool}` is empty")]
    EmptyPool { pool: &'static str },
}

/// Template pools for question text.
///
/// Clue templates describe one subject at one frame and see `{category}`,
/// `{frame}` and one of `{box}`, `{caption}`, `{action}`. Question templates
/// see `{clues}`, plus `{frames}` for frame-led questions. The answer
/// sentence sees `{subjects}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub spatial_to_temporal: Vec<String>,
    pub temporal_to_spatial: Vec<String>,
    pub location: Vec<String>,
    pub appearance: Vec<String>,
    pub action: Vec<String>,
    pub answer_sentence: Vec<String>,
}

impl Default for Templates {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Templates {
            spatial_to_temporal: v(&[
                "Track {clues} through the whole video and give the location of each subject in every frame.",
                "Find {clues}. Report the complete trajectory with a box for each frame it appears in.",
            ]),
            temporal_to_spatial: v(&[
                "Look at {frames}: {clues}. Give the full trajectory of each of these subjects.",
                "In {frames} we see {clues}. Where are these subjects in every frame of the video?",
            ]),
            location: v(&[
                "the {category} at <box>{box}</box> in Frame{frame}",
                "the {category} located at <box>{box}</box> in Frame{frame}",
            ]),
            appearance: v(&["the {category} described as \"{caption}\" in Frame{frame}"]),
            action: v(&["the {category} that is {action} in Frame{frame}"]),
            answer_sentence: v(&["The query refers to {subjects}"]),
        }
    }
}

impl Templates {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let pools: [(&'static str, &Vec<String>); 6] = [
            ("spatial_to_temporal", &self.spatial_to_temporal),
            ("temporal_to_spatial", &self.temporal_to_spatial),
            ("location", &self.location),
            ("appearance", &self.appearance),
            ("action", &self.action),
            ("answer_sentence", &self.answer_sentence),
        ];
        for (pool, items) in pools {
            if items.is_empty() {
                return Err(TemplateError::EmptyPool { pool });
            }
        }
        Ok(())
    }
}

/// Substitute `{name}` placeholders from `values`.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push('}');
                i += 2;
            }
            b'{' => {
                let Some(len) = template[i + 1..].find('}') else {
                    return Err(TemplateError::Unbalanced {
                        offset: i,
                        template: template.to_string(),
                    });
                };
                let name = &template[i + 1..i + 1 + len];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        return Err(TemplateError::Unfilled {
                            placeholder: name.to_string(),
                            template: template.to_string(),
                        })
                    }
                }
                i += len + 2;
            }
            b'}' => {
                return Err(TemplateError::Unbalanced {
                    offset: i,
                    template: template.to_string(),
                })
            }
            _ => {
                let ch = template[i..].chars().next().expect("in bounds");
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    Ok(out)
}
