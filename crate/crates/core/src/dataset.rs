//! Multiple-choice datasets and their expansion into labeled pairs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capture::{load_qa_pairs, QaPair};
use crate::error::{Error, Result};

/// A multiple-choice question. `correct[0]` is the designated best answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McQuestion {
    pub id: String,
    pub question: String,
    pub correct: Vec<String>,
    pub incorrect: Vec<String>,
}

impl McQuestion {
    pub fn best_correct(&self) -> &str {
        &self.correct[0]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.question.is_empty() {
            return Err("question is empty".into());
        }
        if self.correct.is_empty() {
            return Err("`correct` must list at least one answer".into());
        }
        if self.incorrect.is_empty() {
            return Err("`incorrect` must list at least one answer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McFormat {
    /// The public TruthfulQA `mc_task.json` layout.
    TruthfulqaJson,
    /// One `{id, question, correct, incorrect}` object per line.
    #[default]
    GenericMcJsonl,
}

impl std::str::FromStr for McFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truthfulqa_json" => Ok(McFormat::TruthfulqaJson),
            "generic_mc_jsonl" => Ok(McFormat::GenericMcJsonl),
            other => Err(Error::InvalidConfig(format!("unknown dataset format `{other}`"))),
        }
    }
}

pub fn load_mc_dataset(path: &Path, format: McFormat) -> Result<Vec<McQuestion>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        McFormat::GenericMcJsonl => parse_generic_jsonl(path, &text),
        McFormat::TruthfulqaJson => parse_truthfulqa(path, &text),
    }
}

fn parse_generic_jsonl(path: &Path, text: &str) -> Result<Vec<McQuestion>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let q: McQuestion = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        q.validate().map_err(schema)?;
        out.push(q);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TruthfulQaEntry {
    question: String,
    mc1_targets: serde_json::Map<String, serde_json::Value>,
    mc2_targets: serde_json::Map<String, serde_json::Value>,
}

fn split_targets(targets: &serde_json::Map<String, serde_json::Value>) -> std::result::Result<(Vec<String>, Vec<String>), String> {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (answer, label) in targets {
        match label.as_i64() {
            Some(1) => correct.push(answer.clone()),
            Some(0) => incorrect.push(answer.clone()),
            _ => return Err(format!("target {answer:?} has label {label}, expected 0 or 1")),
        }
    }
    Ok((correct, incorrect))
}

fn push_unique(list: &mut Vec<String>, items: Vec<String>) {
    for item in items {
        if !list.contains(&item) {
            list.push(item);
        }
    }
}

/// Line on which the `n`-th (0-based) `"question"` key starts; 0 if not found.
fn entry_line(text: &str, n: usize) -> usize {
    text.match_indices("\"question\"")
        .nth(n)
        .map(|(pos, _)| text[..pos].matches('\n').count() + 1)
        .unwrap_or(0)
}

fn parse_truthfulqa(path: &Path, text: &str) -> Result<Vec<McQuestion>> {
    let entries: Vec<TruthfulQaEntry> = serde_json::from_str(text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let schema = |message: String| Error::Schema {
                path: path.to_path_buf(),
                line: entry_line(text, i),
                message: format!("entry {i}: {message}"),
            };
            let (mc1_true, mc1_false) = split_targets(&e.mc1_targets).map_err(schema)?;
            if mc1_true.len() != 1 {
                return Err(schema(format!(
                    "mc1_targets must mark exactly one correct answer, found {}",
                    mc1_true.len()
                )));
            }
            let (mc2_true, mc2_false) = split_targets(&e.mc2_targets).map_err(schema)?;
            let mut correct = mc1_true;
            push_unique(&mut correct, mc2_true);
            let mut incorrect = mc1_false;
            push_unique(&mut incorrect, mc2_false);
            let q = McQuestion {
                id: format!("tqa-{i}"),
                question: e.question,
                correct,
                incorrect,
            };
            q.validate().map_err(schema)?;
            Ok(q)
        })
        .collect()
}

pub fn write_mc_jsonl(path: &Path, questions: &[McQuestion]) -> Result<()> {
    let mut text = String::new();
    for q in questions {
        text.push_str(&serde_json::to_string(q)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One labeled pair per answer: correct answers are truthful.
pub fn qa_pairs_from_questions(questions: &[McQuestion]) -> Vec<QaPair> {
    let mut out = Vec::new();
    for q in questions {
        for (i, a) in q.correct.iter().enumerate() {
            out.push(QaPair {
                id: format!("{}:c{i}", q.id),
                question: q.question.clone(),
                answer: a.clone(),
                label: true,
            });
        }
        for (i, a) in q.incorrect.iter().enumerate() {
            out.push(QaPair {
                id: format!("{}:i{i}", q.id),
                question: q.question.clone(),
                answer: a.clone(),
                label: false,
            });
        }
    }
    out
}

/// Source formats accepted for the probe-training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairFormat {
    /// One `{id, question, answer, label}` object per line.
    #[default]
    QaJsonl,
    TruthfulqaJson,
    GenericMcJsonl,
}

impl std::str::FromStr for PairFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa_jsonl" => Ok(PairFormat::QaJsonl),
            "truthfulqa_json" => Ok(PairFormat::TruthfulqaJson),
            "generic_mc_jsonl" => Ok(PairFormat::GenericMcJsonl),
            other => Err(Error::InvalidConfig(format!("unknown pair format `{other}`"))),
        }
    }
}

pub fn load_pairs(path: &Path, format: PairFormat) -> Result<Vec<QaPair>> {
    match format {
        PairFormat::QaJsonl => load_qa_pairs(path),
        PairFormat::TruthfulqaJson => Ok(qa_pairs_from_questions(&load_mc_dataset(path, McFormat::TruthfulqaJson)?)),
        PairFormat::GenericMcJsonl => Ok(qa_pairs_from_questions(&load_mc_dataset(path, McFormat::GenericMcJsonl)?)),
    }
}
