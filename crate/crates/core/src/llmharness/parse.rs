use serde::{Deserialize, Serialize};

use super::prompt::option_label;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Correct,
    Incorrect,
    Incomplete,
    /// No rule matched; needs a human to map it.
    Unparseable,
}

impl Grade {
    pub fn label(self) -> Option<Label> {
        match self {
            Grade::Correct => Some(Label::Correct),
            Grade::Incorrect => Some(Label::Incorrect),
            Grade::Incomplete => Some(Label::Incomplete),
            Grade::Unparseable => None,
        }
    }

    pub fn from_label(label: Label) -> Grade {
        match label {
            Label::Correct => Grade::Correct,
            Label::Incomplete => Grade::Incomplete,
            Label::Incorrect => Grade::Incorrect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeParse {
    pub raw: String,
    pub parsed: Grade,
}

fn leading_option(text: &str) -> Option<Label> {
    let t = text.trim_start().trim_start_matches(['(', '*', '"']);
    let mut chars = t.chars();
    let letter = chars.next()?;
    if !letter.is_ascii_uppercase() {
        return None;
    }
    let label = option_label(letter)?;
    let rest = chars.as_str();
    match rest.chars().next() {
        None => Some(label),
        Some('.' | ')' | ':' | ',' | '*' | '"') => Some(label),
        Some(c) if c.is_whitespace() => {
            // "A Correct" or a bare "A" followed only by whitespace; a
            // sentence such as "A student ..." is not an option letter.
            let next = rest.trim_start();
            if next.is_empty() || label_words(next).first() == Some(&label) {
                Some(label)
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Whole-word label mentions in order of appearance.
fn label_words(text: &str) -> Vec<Label> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter_map(|w| match w.to_ascii_lowercase().as_str() {
            "correct" => Some(Label::Correct),
            "incomplete" => Some(Label::Incomplete),
            "incorrect" => Some(Label::Incorrect),
            _ => None,
        })
        .collect()
}

/// Maps a completion to a grade: a leading option letter wins, then a
/// single distinct label word, otherwise the completion is unparseable.
pub fn parse_grade(completion: &str) -> GradeParse {
    let parsed = leading_option(completion)
        .or_else(|| {
            let words = label_words(completion);
            let first = *words.first()?;
            words.iter().all(|&l| l == first).then_some(first)
        })
        .map_or(Grade::Unparseable, Grade::from_label);
    GradeParse {
        raw: completion.to_string(),
        parsed,
    }
}
