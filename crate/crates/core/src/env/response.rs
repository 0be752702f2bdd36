//! Serialized policy responses and their parser.
//!
//! A full response has four tagged sections:
//!
//! ```text
//! <think>...</think>
//! <diversity>0.4</diversity>
//! <describe>3 7 1 12</describe>
//! <answer>5</answer>
//! ```
//!
//! The original GRPO format only carries `<think>` and `<answer>`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseFormat {
    /// Reasoning and answer only.
    Original,
    /// Reasoning, predicted diversity, description and answer.
    Synthesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSchema {
    pub format: ResponseFormat,
    pub anchors: usize,
    pub description_len: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub reasoning: String,
    pub diversity: Option<f64>,
    pub description: Option<Vec<u32>>,
    /// Anchor index.
    pub answer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Think,
    Diversity,
    Describe,
    Answer,
}

impl Section {
    pub fn tag(self) -> &'static str {
        match self {
            Section::Think => "think",
            Section::Diversity => "diversity",
            Section::Describe => "describe",
            Section::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SectionProblem {
    Missing(Section),
    Duplicated(Section),
    Malformed(Section, String),
    OutOfRange(Section, String),
}

impl SectionProblem {
    pub fn section(&self) -> Section {
        match self {
            SectionProblem::Missing(s)
            | SectionProblem::Duplicated(s)
            | SectionProblem::Malformed(s, _)
            | SectionProblem::OutOfRange(s, _) => *s,
        }
    }
}

/// Every section that was missing or invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("unparseable response: {problems:?}")]
pub struct ParseError {
    pub problems: Vec<SectionProblem>,
}

impl ParseError {
    pub fn has(&self, section: Section) -> bool {
        self.problems.iter().any(|p| p.section() == section)
    }
}

fn extract(text: &str, section: Section) -> Result<Option<&str>, SectionProblem> {
    let open = format!("<{}>", section.tag());
    let close = format!("</{}>", section.tag());
    let Some(start) = text.find(&open) else {
        return Ok(None);
    };
    let body_start = start + open.len();
    let Some(len) = text[body_start..].find(&close) else {
        return Err(SectionProblem::Malformed(section, "unterminated section".into()));
    };
    if text[body_start + len + close.len()..].contains(&open) {
        return Err(SectionProblem::Duplicated(section));
    }
    Ok(Some(&text[body_start..body_start + len]))
}

/// Parses a serialized response. Never panics; every problem found is
/// reported.
pub fn parse_response(text: &str, schema: &ResponseSchema) -> Result<ParsedResponse, ParseError> {
    let mut problems = Vec::new();
    let required: &[Section] = match schema.format {
        ResponseFormat::Original => &[Section::Think, Section::Answer],
        ResponseFormat::Synthesis => &[Section::Think, Section::Diversity, Section::Describe, Section::Answer],
    };
    let mut get = |section: Section| -> Option<&str> {
        match extract(text, section) {
            Ok(Some(body)) => Some(body),
            Ok(None) => {
                if required.contains(&section) {
                    problems.push(SectionProblem::Missing(section));
                }
                None
            }
            Err(p) => {
                problems.push(p);
                None
            }
        }
    };
    let think = get(Section::Think);
    let diversity = get(Section::Diversity);
    let describe = get(Section::Describe);
    let answer = get(Section::Answer);

    let reasoning = match think {
        Some(t) if t.trim().is_empty() => {
            problems.push(SectionProblem::Malformed(Section::Think, "empty reasoning".into()));
            None
        }
        other => other.map(|t| t.to_string()),
    };

    let diversity = diversity.and_then(|d| match d.trim().parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Some(v),
        Ok(v) => {
            problems.push(SectionProblem::OutOfRange(Section::Diversity, format!("{v} not in [0,1]")));
            None
        }
        Err(e) => {
            problems.push(SectionProblem::Malformed(Section::Diversity, e.to_string()));
            None
        }
    });

    let description = describe.and_then(|d| {
        let tokens: Result<Vec<u32>, _> = d.split_whitespace().map(str::parse::<u32>).collect();
        match tokens {
            Err(e) => {
                problems.push(SectionProblem::Malformed(Section::Describe, e.to_string()));
                None
            }
            Ok(t) if t.len() != schema.description_len => {
                problems.push(SectionProblem::Malformed(
                    Section::Describe,
                    format!("{} tokens, expected {}", t.len(), schema.description_len),
                ));
                None
            }
            Ok(t) if t.iter().any(|&x| x as usize >= schema.vocab) => {
                problems.push(SectionProblem::OutOfRange(Section::Describe, "token outside vocabulary".into()));
                None
            }
            Ok(t) => Some(t),
        }
    });

    let answer = answer.and_then(|a| match a.trim().parse::<usize>() {
        Ok(i) if i < schema.anchors => Some(i),
        Ok(i) => {
            problems.push(SectionProblem::OutOfRange(Section::Answer, format!("anchor {i} >= {}", schema.anchors)));
            None
        }
        Err(e) => {
            problems.push(SectionProblem::Malformed(Section::Answer, e.to_string()));
            None
        }
    });

    match (problems.is_empty(), reasoning, answer) {
        (true, Some(reasoning), Some(answer)) => Ok(ParsedResponse { reasoning, diversity, description, answer }),
        _ => Err(ParseError { problems }),
    }
}

pub fn serialize_response(r: &ParsedResponse) -> String {
    let mut out = format!("<think>{}</think>\n", r.reasoning);
    if let Some(v) = r.diversity {
        out.push_str(&format!("<diversity>{v}</diversity>\n"));
    }
    if let Some(d) = &r.description {
        let toks: Vec<String> = d.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("<describe>{}</describe>\n", toks.join(" ")));
    }
    out.push_str(&format!("<answer>{}</answer>", r.answer));
    out
}
