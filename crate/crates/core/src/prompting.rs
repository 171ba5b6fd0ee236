//! Interest specs and the summarization prompts compiled from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder substituted by [`render_prompt`].
pub const TAG_COUNT_PLACEHOLDER: &str = "{tag_count}";

pub const DEFAULT_BASE_TASK: &str = "Summarize the data point with {tag_count} tags";

pub const DEFAULT_TAG_COUNT: usize = 3;

const FOCUS_CLAUSE: &str = ", focus on ";
const FACET_JOINER: &str = " and ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("interest text is empty")]
    EmptyInterest,
    #[error("tag count must be at least 1, got {0}")]
    InvalidTagCount(usize),
    #[error("invalid interest spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestSpec {
    pub base_task: String,
    pub facets: Vec<String>,
    pub version: u32,
}

impl InterestSpec {
    pub fn new(base_task: impl Into<String>, facets: Vec<String>) -> Result<Self, PromptError> {
        let spec = Self {
            base_task: base_task.into(),
            facets,
            version: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.base_task.trim().is_empty() {
            return Err(PromptError::InvalidSpec("base task is empty".into()));
        }
        if self.facets.iter().any(|f| f.trim().is_empty()) {
            return Err(PromptError::InvalidSpec("empty facet".into()));
        }
        if self.version == 0 {
            return Err(PromptError::InvalidSpec("version starts at 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub interest_version: u32,
    pub tag_count: usize,
}

/// Splits free text into normalized facets: commas and the standalone word
/// "and" separate facets; each facet is lowercased with whitespace collapsed.
/// Duplicates keep their first occurrence.
fn split_facets(raw: &str) -> Vec<String> {
    let lowered = raw.to_lowercase();
    let mut facets: Vec<String> = Vec::new();
    for piece in lowered.split(',') {
        let mut current: Vec<&str> = Vec::new();
        let mut flush = |words: &mut Vec<&str>| {
            if !words.is_empty() {
                let facet = words.join(" ");
                if !facets.contains(&facet) {
                    facets.push(facet);
                }
                words.clear();
            }
        };
        for word in piece.split_whitespace() {
            if word == "and" {
                flush(&mut current);
            } else {
                current.push(word);
            }
        }
        flush(&mut current);
    }
    facets
}

pub fn parse_interest(raw: &str) -> Result<InterestSpec, PromptError> {
    if raw.trim().is_empty() {
        return Err(PromptError::EmptyInterest);
    }
    let facets = split_facets(raw);
    if facets.is_empty() {
        return Err(PromptError::EmptyInterest);
    }
    Ok(InterestSpec {
        base_task: DEFAULT_BASE_TASK.to_owned(),
        facets,
        version: 1,
    })
}

pub fn render_prompt(spec: &InterestSpec, tag_count: usize) -> Result<RenderedPrompt, PromptError> {
    if tag_count == 0 {
        return Err(PromptError::InvalidTagCount(tag_count));
    }
    spec.validate()?;
    let mut text = spec
        .base_task
        .replace(TAG_COUNT_PLACEHOLDER, &tag_count.to_string());
    if !spec.facets.is_empty() {
        text.push_str(FOCUS_CLAUSE);
        text.push_str(&spec.facets.join(FACET_JOINER));
    }
    Ok(RenderedPrompt {
        text,
        interest_version: spec.version,
        tag_count,
    })
}

/// The text after the focus marker of a rendered prompt, if any.
pub fn facet_clause(prompt_text: &str) -> Option<&str> {
    prompt_text
        .find(FOCUS_CLAUSE)
        .map(|i| &prompt_text[i + FOCUS_CLAUSE.len()..])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    Add,
    Replace,
}

pub fn refine_interest(
    spec: &InterestSpec,
    user_edit: &str,
    mode: RefineMode,
) -> Result<InterestSpec, PromptError> {
    let version = spec.version + 1;
    match mode {
        RefineMode::Add => {
            if user_edit.trim().is_empty() {
                return Err(PromptError::EmptyInterest);
            }
            let mut facets = spec.facets.clone();
            for f in split_facets(user_edit) {
                if !facets.contains(&f) {
                    facets.push(f);
                }
            }
            Ok(InterestSpec {
                base_task: spec.base_task.clone(),
                facets,
                version,
            })
        }
        RefineMode::Replace => {
            let fresh = parse_interest(user_edit)?;
            Ok(InterestSpec {
                base_task: spec.base_task.clone(),
                facets: fresh.facets,
                version,
            })
        }
    }
}
