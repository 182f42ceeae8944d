use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::corpus::{Label, ResponseRecord};

/// System message sent with every grading request.
pub const ROOT_PROMPT: &str = "You are a fair and knowledgeable instructor whose task is to evaluate the student\u{2019}s assignments in accordance with the correct answers to each of the questions that are presented in the section that follows.\nThe student does not need to share every information from the model answer category as long as they convey the right idea.";

const QUESTION_STEM: &str = "Question:\n\
The following DNA sequence occurs near the middle of the coding region of a gene.\n\
DNA 5' A A T G A A T G G* G A G C C T G A A G G A 3\u{2019}\n\
There is a G to A base change at the position marked with an asterisk. Consequently, a codon normally encoding an amino acid becomes a stop codon.\n";

pub const QUESTION_TYPES: [&str; 3] = ["replication", "transcription", "translation"];

/// Multiple-choice options in prompt order. This is the only place the
/// A/B/C letters are tied to labels.
pub const OPTIONS: [(char, Label); 3] = [
    ('A', Label::Correct),
    ('B', Label::Incorrect),
    ('C', Label::Incomplete),
];

pub fn option_letter(label: Label) -> char {
    OPTIONS
        .iter()
        .find(|(_, l)| *l == label)
        .map(|(c, _)| *c)
        .expect("every label has an option")
}

pub fn option_label(letter: char) -> Option<Label> {
    let up = letter.to_ascii_uppercase();
    OPTIONS.iter().find(|(c, _)| *c == up).map(|(_, l)| *l)
}

/// The full option line, e.g. `B. Incorrect`.
pub fn option_line(label: Label) -> String {
    format!("{}. {}", option_letter(label), label.title())
}

/// Reference answers shown to the model for one question type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Samples {
    pub correct: String,
    pub incomplete: String,
    pub incorrect: String,
}

impl Samples {
    /// The sample answers used in the original experiments.
    pub fn published(question_type: &str) -> Option<Samples> {
        let (c, p, x) = match question_type {
            "replication" => (
                "It will not have any effect on the replication process.",
                "This would be an example of a nonsense mutation.",
                "The DNA will stop replicating when it reaches the stop codon.",
            ),
            "transcription" => (
                "It will not have any effect on transcription.",
                "This will cause a mutation in the transcription process.",
                "In the process of transcribing DNA into RNA, the newly added stop codon will inhibit the rest of the chain from being transcribed into RNA.",
            ),
            "translation" => (
                "This will influence translation because the stop codon will cause the amino acid sequence to end before it should. This will create a different polypeptide or protein that will either not function or function differently than it should have.",
                "The code will be translated with a different base and will be read differently. This will result in a different protein being built.",
                "This will have no influence on translation.",
            ),
            _ => return None,
        };
        Some(Samples {
            correct: c.into(),
            incomplete: p.into(),
            incorrect: x.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub question_type: String,
    pub samples: Samples,
    pub student_answer: String,
}

pub fn build_prompt(
    question_type: &str,
    samples: &Samples,
    student_answer: &str,
) -> Result<PromptBundle, LlmError> {
    if !QUESTION_TYPES.contains(&question_type) {
        return Err(LlmError::UnknownQuestionType(question_type.to_string()));
    }
    if [&samples.correct, &samples.incomplete, &samples.incorrect]
        .iter()
        .any(|s| s.trim().is_empty())
    {
        return Err(LlmError::EmptySamples);
    }
    if student_answer.trim().is_empty() {
        return Err(LlmError::EmptyAnswer);
    }
    let mut user = String::from(QUESTION_STEM);
    user.push_str(&format!(
        "How will this alteration influence DNA {question_type}?\n"
    ));
    user.push_str("Model Answer:\n");
    user.push_str(&format!("1. Correct: {}\n", samples.correct));
    user.push_str(&format!(
        "2. Incomplete/Irrelevant: {}\n",
        samples.incomplete
    ));
    user.push_str(&format!("3. Incorrect: {}.\n", samples.incorrect));
    user.push_str("Student Answer:\n");
    user.push_str(&format!("1. {student_answer}\n"));
    user.push_str("Which of the following categories does the student response fall in?\n");
    let options: Vec<String> = OPTIONS.iter().map(|(_, l)| option_line(*l)).collect();
    user.push_str(&options.join("\n"));
    Ok(PromptBundle {
        system: ROOT_PROMPT.to_string(),
        user,
        question_type: question_type.to_string(),
        samples: samples.clone(),
        student_answer: student_answer.to_string(),
    })
}

/// Prompt for a corpus record using the published samples for its question type.
pub fn prompt_for_record(record: &ResponseRecord) -> Result<PromptBundle, LlmError> {
    let qt = record.question.question_type.as_str();
    let samples =
        Samples::published(qt).ok_or_else(|| LlmError::UnknownQuestionType(qt.to_string()))?;
    build_prompt(qt, &samples, &record.text)
}
