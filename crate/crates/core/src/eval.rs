//! Multiple-choice scoring and next-token drift.
//!
//! An answer's score is the sum of its tokens' next-token log-probabilities
//! (natural log), conditioned on the rendered prompt. MC1 asks whether the
//! designated best answer strictly beats every incorrect answer; MC2 is the
//! normalized probability mass on the correct set. Drift compares an
//! intervened model's next-token distributions against the baseline's on a
//! reference corpus: KL(base || intervened) and the intervened cross-entropy,
//! both in nats per position.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{render, CaptureConfig};
use crate::dataset::McQuestion;
use crate::error::{Error, Result};
use crate::intervention::InterventionPlan;
use crate::math::log_softmax;
use crate::model::Model;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Sum of token log-probabilities.
    #[default]
    Sum,
    /// Sum divided by the answer's token count.
    MeanPerToken,
}

/// Everything needed to score answers: model, tokenizer and prompt format.
#[derive(Clone, Copy)]
pub struct Scorer<'a> {
    pub model: &'a Model,
    pub tokenizer: &'a dyn Tokenizer,
    pub prompt: &'a CaptureConfig,
    pub mode: ScoreMode,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model, tokenizer: &'a dyn Tokenizer, prompt: &'a CaptureConfig) -> Self {
        Self {
            model,
            tokenizer,
            prompt,
            mode: ScoreMode::Sum,
        }
    }

    pub fn with_mode(mut self, mode: ScoreMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn score_answer(&self, plan: Option<&InterventionPlan>, question: &str, answer: &str) -> Result<f64> {
        let rendered = render(
            self.tokenizer,
            self.prompt,
            question,
            answer,
            self.model.config().max_seq_len,
        )?;
        let (start, end) = (rendered.answer_start, rendered.answer_end);
        if end == start {
            return Err(Error::EmptyAnswer);
        }
        if start == 0 {
            return Err(Error::Template(
                "the first answer token needs at least one preceding token".into(),
            ));
        }
        let out = self.model.forward(&rendered.tokens[..end], plan, None)?;
        let mut total = 0.0;
        for p in start..end {
            let lp = log_softmax(out.logits.row(p - 1));
            total += lp[rendered.tokens[p] as usize];
        }
        Ok(match self.mode {
            ScoreMode::Sum => total,
            ScoreMode::MeanPerToken => total / (end - start) as f64,
        })
    }

    pub fn score_question(&self, plan: Option<&InterventionPlan>, q: &McQuestion) -> Result<QuestionDetail> {
        let score = |a: &String| self.score_answer(plan, &q.question, a);
        let correct_scores = q.correct.iter().map(score).collect::<Result<Vec<_>>>()?;
        let incorrect_scores = q.incorrect.iter().map(score).collect::<Result<Vec<_>>>()?;
        Ok(QuestionDetail {
            id: q.id.clone(),
            mc1_verdict: mc1_verdict(&correct_scores, &incorrect_scores),
            mc2_score: mc2_score(&correct_scores, &incorrect_scores),
            correct_scores,
            incorrect_scores,
        })
    }

    /// Scores every question; questions run in parallel, output keeps input order.
    pub fn score_questions(&self, plan: Option<&InterventionPlan>, questions: &[McQuestion]) -> Result<Vec<QuestionDetail>> {
        questions
            .par_iter()
            .map(|q| {
                self.score_question(plan, q).map_err(|e| Error::Pair {
                    pair_id: q.id.clone(),
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Log-likelihood of `answer` given the rendered prompt, summed over answer tokens.
pub fn score_answer(
    model: &Model,
    tokenizer: &dyn Tokenizer,
    plan: Option<&InterventionPlan>,
    question: &str,
    answer: &str,
    config: &CaptureConfig,
) -> Result<f64> {
    Scorer::new(model, tokenizer, config).score_answer(plan, question, answer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDetail {
    pub id: String,
    pub correct_scores: Vec<f64>,
    pub incorrect_scores: Vec<f64>,
    pub mc1_verdict: bool,
    pub mc2_score: f64,
}

/// True iff the first correct score strictly exceeds every incorrect score.
pub fn mc1_verdict(correct: &[f64], incorrect: &[f64]) -> bool {
    let Some(&best) = correct.first() else {
        return false;
    };
    incorrect.iter().all(|&s| best > s)
}

/// Probability mass of the correct answers relative to all listed answers.
pub fn mc2_score(correct: &[f64], incorrect: &[f64]) -> f64 {
    let max = correct
        .iter()
        .chain(incorrect)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let mass = |s: &[f64]| s.iter().map(|v| (v - max).exp()).sum::<f64>();
    let c = mass(correct);
    c / (c + mass(incorrect))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

pub fn mc1(scorer: &Scorer<'_>, plan: Option<&InterventionPlan>, questions: &[McQuestion]) -> Result<f64> {
    let details = scorer.score_questions(plan, questions)?;
    Ok(mean(details.iter().map(|d| if d.mc1_verdict { 1.0 } else { 0.0 })))
}

pub fn mc2(scorer: &Scorer<'_>, plan: Option<&InterventionPlan>, questions: &[McQuestion]) -> Result<f64> {
    let details = scorer.score_questions(plan, questions)?;
    Ok(mean(details.iter().map(|d| d.mc2_score)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub kl: f64,
    pub ce: f64,
}

/// Baseline next-token log-probabilities on a corpus, reusable across plans.
#[derive(Debug, Clone)]
pub struct DriftBaseline {
    sequences: Vec<Vec<u32>>,
    log_probs: Vec<Array2<f64>>,
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let ls = log_softmax(row.view());
        row.assign(&ls);
    }
    out
}

impl DriftBaseline {
    pub fn new(model: &Model, corpus: &[Vec<u32>], positions_per_seq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus("no sequences".into()));
        }
        if positions_per_seq == 0 {
            return Err(Error::InvalidConfig("positions_per_seq must be at least 1".into()));
        }
        let limit = (positions_per_seq + 1).min(model.config().max_seq_len);
        let mut sequences = Vec::new();
        for (i, seq) in corpus.iter().enumerate() {
            if seq.len() < 2 {
                log::warn!("corpus sequence {i} has fewer than 2 tokens; skipping");
                continue;
            }
            sequences.push(seq[..seq.len().min(limit)].to_vec());
        }
        if sequences.is_empty() {
            return Err(Error::EmptyCorpus("every sequence is shorter than 2 tokens".into()));
        }
        let log_probs = sequences
            .par_iter()
            .map(|s| model.forward(s, None, None).map(|o| log_softmax_rows(&o.logits)))
            .collect::<Result<_>>()?;
        Ok(Self { sequences, log_probs })
    }

    pub fn measure(&self, model: &Model, plan: Option<&InterventionPlan>) -> Result<Drift> {
        let per_seq: Vec<(f64, f64, usize)> = self
            .sequences
            .par_iter()
            .zip(&self.log_probs)
            .map(|(seq, base)| -> Result<(f64, f64, usize)> {
                let steered = match plan {
                    Some(_) => log_softmax_rows(&model.forward(seq, plan, None)?.logits),
                    None => base.clone(),
                };
                let mut kl = 0.0;
                let mut ce = 0.0;
                for p in 0..seq.len() - 1 {
                    let (b, s) = (base.row(p), steered.row(p));
                    kl += b
                        .iter()
                        .zip(s.iter())
                        .map(|(&lb, &ls)| if lb == f64::NEG_INFINITY { 0.0 } else { lb.exp() * (lb - ls) })
                        .sum::<f64>();
                    ce -= s[seq[p + 1] as usize];
                }
                Ok((kl, ce, seq.len() - 1))
            })
            .collect::<Result<_>>()?;
        let positions: usize = per_seq.iter().map(|t| t.2).sum();
        let kl: f64 = per_seq.iter().map(|t| t.0).sum();
        let ce: f64 = per_seq.iter().map(|t| t.1).sum();
        Ok(Drift {
            kl: kl / positions as f64,
            ce: ce / positions as f64,
        })
    }
}

/// KL(base || intervened) and intervened cross-entropy, averaged over the
/// first `positions_per_seq` next-token positions of each sequence.
pub fn drift(model: &Model, plan: Option<&InterventionPlan>, corpus: &[Vec<u32>], positions_per_seq: usize) -> Result<Drift> {
    DriftBaseline::new(model, corpus, positions_per_seq)?.measure(model, plan)
}

/// Splits text into up to `max_chunks` token sequences of `chunk_len`
/// tokens each (the tokenizer's BOS, when present, counts toward the length).
pub fn chunk_corpus(text: &str, tokenizer: &dyn Tokenizer, chunk_len: usize, max_chunks: usize) -> Vec<Vec<u32>> {
    let bos: Vec<u32> = tokenizer.bos().into_iter().collect();
    let body = chunk_len.saturating_sub(bos.len()).max(1);
    tokenizer
        .encode(text)
        .chunks(body)
        .take(max_chunks)
        .map(|c| bos.iter().chain(c).copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mc1: f64,
    pub mc2: f64,
    pub ce: f64,
    pub kl: f64,
    pub per_question: Vec<QuestionDetail>,
}

impl EvalReport {
    pub fn from_details(per_question: Vec<QuestionDetail>, drift: Drift) -> Self {
        Self {
            mc1: mean(per_question.iter().map(|d| if d.mc1_verdict { 1.0 } else { 0.0 })),
            mc2: mean(per_question.iter().map(|d| d.mc2_score)),
            ce: drift.ce,
            kl: drift.kl,
            per_question,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary {
            mc1: f64,
            mc2: f64,
            ce: f64,
            kl: f64,
            questions: usize,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            summary: Summary,
            per_question: &'a [QuestionDetail],
        }
        Ok(serde_json::to_string_pretty(&Doc {
            summary: Summary {
                mc1: self.mc1,
                mc2: self.mc2,
                ce: self.ce,
                kl: self.kl,
                questions: self.per_question.len(),
            },
            per_question: &self.per_question,
        })?)
    }
}

pub const SUMMARY_HEADER: &str = "dataset,mc1,mc2,ce,kl";

pub fn summary_csv<'a>(reports: impl IntoIterator<Item = (&'a str, &'a EvalReport)>) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (name, r) in reports {
        writeln!(out, "{name},{:.6},{:.6},{:.6},{:.6}", r.mc1, r.mc2, r.ce, r.kl).unwrap();
    }
    out
}

/// Scores `questions` and measures drift against `baseline`.
pub fn evaluate(
    scorer: &Scorer<'_>,
    plan: Option<&InterventionPlan>,
    questions: &[McQuestion],
    baseline: &DriftBaseline,
) -> Result<EvalReport> {
    let details = scorer.score_questions(plan, questions)?;
    let drift = baseline.measure(scorer.model, plan)?;
    Ok(EvalReport::from_details(details, drift))
}
