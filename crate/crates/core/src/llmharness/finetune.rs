use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::client::ChatMessage;
use super::parse::parse_grade;
use super::prompt::{option_line, prompt_for_record};
use super::LlmError;
use crate::corpus::{Label, ResponseRecord};

/// One training conversation: system, user and the expected answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneExample {
    pub messages: Vec<ChatMessage>,
}

impl FinetuneExample {
    pub fn label(&self) -> Option<Label> {
        let last = self.messages.iter().rev().find(|m| m.role == "assistant")?;
        parse_grade(&last.content).parsed.label()
    }
}

pub fn finetune_example(record: &ResponseRecord) -> Result<FinetuneExample, LlmError> {
    let b = prompt_for_record(record)?;
    Ok(FinetuneExample {
        messages: vec![
            ChatMessage::new("system", b.system),
            ChatMessage::new("user", b.user),
            ChatMessage::new("assistant", option_line(record.label)),
        ],
    })
}

/// Writes one JSON conversation per line.
pub fn export_finetune_dataset<W: Write>(
    records: &[ResponseRecord],
    mut out: W,
) -> Result<usize, LlmError> {
    for r in records {
        let line = serde_json::to_string(&finetune_example(r)?).expect("example serializes");
        writeln!(out, "{line}")?;
    }
    Ok(records.len())
}

pub fn import_finetune_dataset<R: BufRead>(input: R) -> Result<Vec<FinetuneExample>, LlmError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: FinetuneExample =
            serde_json::from_str(&line).map_err(|e| LlmError::MalformedDataset {
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::QuestionId;

    #[test]
    fn export_round_trip() {
        let recs: Vec<ResponseRecord> = Label::ALL
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                ResponseRecord::new(format!("s{i}"), QuestionId::q3(), format!("answer {i}"), l)
            })
            .collect();
        let mut buf = Vec::new();
        assert_eq!(export_finetune_dataset(&recs, &mut buf).unwrap(), 3);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"content\":\"A. Correct\""));
        let back = import_finetune_dataset(&buf[..]).unwrap();
        assert_eq!(back[0], finetune_example(&recs[0]).unwrap());
        let labels: Vec<Label> = back.iter().map(|e| e.label().unwrap()).collect();
        assert_eq!(labels, Label::ALL.to_vec());
    }
}
