//! Prompt rendering and per-head activation datasets.
//!
//! Each question/answer pair is rendered into one token sequence, run through
//! the model once with every head captured, and reduced to one row per head:
//! the mean of the head's activation over the final `window` positions of the
//! sequence (clamped to the sequence length).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{TensorContainer, TensorEntry};
use crate::error::{Error, Result};
use crate::model::{HeadId, Model};
use crate::tokenizer::Tokenizer;

pub const QUESTION_SLOT: &str = "{q}";
pub const ANSWER_SLOT: &str = "{a}";
pub const DEFAULT_TEMPLATE: &str = "Q: {q}\nA: {a}";

/// Five-shot preamble used when no prefix is configured.
pub const DEFAULT_FEW_SHOT_PREFIX: &str = include_str!("../../../data/fewshot_prefix.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureConfig {
    /// Positions averaged for probe training data.
    pub tau: usize,
    /// Positions averaged for direction estimation.
    pub rho: usize,
    pub prompt_prefix: String,
    pub template: String,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            tau: 4,
            rho: 6,
            prompt_prefix: String::new(),
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.rho == 0 {
            return Err(Error::InvalidConfig("tau and rho must be at least 1".into()));
        }
        if !self.template.contains(QUESTION_SLOT) || !self.template.contains(ANSWER_SLOT) {
            return Err(Error::Template(format!(
                "template {:?} must contain both {QUESTION_SLOT} and {ANSWER_SLOT}",
                self.template
            )));
        }
        Ok(())
    }
}

/// A rendered prompt: the full token sequence plus the span holding the answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub tokens: Vec<u32>,
    pub answer_start: usize,
    pub answer_end: usize,
}

/// Renders `prefix + template(question, answer)` and locates the answer tokens.
pub fn render(
    tokenizer: &dyn Tokenizer,
    config: &CaptureConfig,
    question: &str,
    answer: &str,
    max_seq_len: usize,
) -> Result<RenderedPrompt> {
    config.validate()?;
    let (before, after) = config
        .template
        .split_once(ANSWER_SLOT)
        .expect("validated template has an answer slot");
    let context = format!(
        "{}{}",
        config.prompt_prefix,
        before.replace(QUESTION_SLOT, question)
    );
    let with_answer = format!("{context}{answer}");
    let full = format!("{with_answer}{}", after.replace(QUESTION_SLOT, question));

    let bos: Vec<u32> = tokenizer.bos().into_iter().collect();
    let encode = |text: &str| -> Vec<u32> {
        let mut t = bos.clone();
        t.extend(tokenizer.encode(text));
        t
    };
    let context_tokens = encode(&context);
    let answer_tokens = encode(&with_answer);
    let tokens = encode(&full);
    if !answer_tokens.starts_with(&context_tokens) || !tokens.starts_with(&answer_tokens) {
        return Err(Error::Template(
            "tokenizer is not prefix-stable across the answer boundary".into(),
        ));
    }
    if tokens.len() > max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: max_seq_len,
        });
    }
    Ok(RenderedPrompt {
        answer_start: context_tokens.len(),
        answer_end: answer_tokens.len(),
        tokens,
    })
}

pub fn render_pair(
    tokenizer: &dyn Tokenizer,
    pair: &QaPair,
    config: &CaptureConfig,
    max_seq_len: usize,
) -> Result<Vec<u32>> {
    render(tokenizer, config, &pair.question, &pair.answer, max_seq_len)
        .map(|r| r.tokens)
        .map_err(|e| e.in_pair(&pair.id))
}

/// Window-averaged activations for every head over a set of labeled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadActivationSet {
    window: usize,
    pair_ids: Vec<String>,
    labels: Vec<bool>,
    heads: BTreeMap<HeadId, Array2<f64>>,
}

impl HeadActivationSet {
    pub fn new(
        window: usize,
        pair_ids: Vec<String>,
        labels: Vec<bool>,
        heads: BTreeMap<HeadId, Array2<f64>>,
    ) -> Result<Self> {
        if pair_ids.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: pair_ids.len(),
            });
        }
        for rows in heads.values() {
            if rows.nrows() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    found: rows.nrows(),
                });
            }
        }
        Ok(Self {
            window,
            pair_ids,
            labels,
            heads,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn pair_ids(&self) -> &[String] {
        &self.pair_ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        self.heads.keys().copied()
    }

    pub fn head(&self, id: HeadId) -> Option<ArrayView2<'_, f64>> {
        self.heads.get(&id).map(|a| a.view())
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new(serde_json::json!({
            "kind": "head_activations",
            "window": self.window,
            "pair_ids": self.pair_ids,
            "labels": self.labels,
        }));
        for (id, rows) in &self.heads {
            c.push(TensorEntry::new(
                format!("head.{}.{}", id.layer, id.head),
                vec![rows.nrows(), rows.ncols()],
                rows.iter().map(|&v| v as f32).collect(),
            ));
        }
        c
    }

    /// Reads a set written by [`save`](Self::save). Values come back at f32
    /// precision.
    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            window: usize,
            pair_ids: Vec<String>,
            labels: Vec<bool>,
        }
        let meta: Meta = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::MalformedHeader(format!("activation metadata: {e}")))?;
        let mut heads = BTreeMap::new();
        for t in &c.tensors {
            let id = t
                .name
                .strip_prefix("head.")
                .and_then(|rest| rest.split_once('.'))
                .and_then(|(l, h)| Some(HeadId::new(l.parse().ok()?, h.parse().ok()?)))
                .ok_or_else(|| Error::MalformedHeader(format!("unexpected tensor `{}`", t.name)))?;
            let [rows, cols] = t.shape[..] else {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    expected: vec![meta.labels.len(), 0],
                    found: t.shape.clone(),
                });
            };
            let data = t.data.iter().map(|&v| f64::from(v)).collect();
            heads.insert(id, Array2::from_shape_vec((rows, cols), data).expect("shape from header"));
        }
        Self::new(meta.window, meta.pair_ids, meta.labels, heads)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&TensorContainer::read(path)?)
    }
}

/// Mean of the last `min(window, rows)` rows.
pub fn window_mean(positions: ArrayView2<f64>, window: usize) -> Array1<f64> {
    let n = positions.nrows();
    let w = window.min(n).max(1);
    positions
        .slice(s![n - w.., ..])
        .mean_axis(Axis(0))
        .expect("at least one row")
}

pub fn capture_dataset(
    model: &Model,
    tokenizer: &dyn Tokenizer,
    pairs: &[QaPair],
    config: &CaptureConfig,
    window: usize,
) -> Result<HeadActivationSet> {
    let mut sets = capture_windows(model, tokenizer, pairs, config, &[window])?;
    Ok(sets.remove(0))
}

/// One forward pass per pair, reduced under each requested window. Pairs run
/// in parallel; results are assembled in input order.
pub fn capture_windows(
    model: &Model,
    tokenizer: &dyn Tokenizer,
    pairs: &[QaPair],
    config: &CaptureConfig,
    windows: &[usize],
) -> Result<Vec<HeadActivationSet>> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples("no pairs to capture".into()));
    }
    if windows.contains(&0) {
        return Err(Error::InvalidConfig("capture window must be at least 1".into()));
    }
    let heads = model.config().heads();
    let max_window = windows.iter().copied().max().unwrap_or(1);

    let per_pair: Vec<Vec<Vec<Array1<f64>>>> = pairs
        .par_iter()
        .map(|pair| -> Result<Vec<Vec<Array1<f64>>>> {
            let tokens = render_pair(tokenizer, pair, config, model.config().max_seq_len)?;
            if max_window > tokens.len() {
                log::warn!(
                    "pair `{}`: window {max_window} exceeds sequence length {}; clamping",
                    pair.id,
                    tokens.len()
                );
            }
            let out = model
                .forward(&tokens, None, Some(&heads))
                .map_err(|e| e.in_pair(&pair.id))?;
            let captured = out.captured.expect("capture requested");
            Ok(windows
                .iter()
                .map(|&w| {
                    heads
                        .iter()
                        .map(|id| window_mean(captured.get(*id).expect("captured").view(), w))
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let pair_ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    let head_dim = model.config().head_dim;
    windows
        .iter()
        .enumerate()
        .map(|(wi, &w)| {
            let mut map = BTreeMap::new();
            for (hi, id) in heads.iter().enumerate() {
                let mut rows = Array2::zeros((pairs.len(), head_dim));
                for (pi, per_window) in per_pair.iter().enumerate() {
                    rows.row_mut(pi).assign(&per_window[wi][hi]);
                }
                map.insert(*id, rows);
            }
            HeadActivationSet::new(w, pair_ids.clone(), labels.clone(), map)
        })
        .collect()
}

pub fn load_qa_pairs(path: &Path) -> Result<Vec<QaPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
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
        let pair: QaPair = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        if pair.question.is_empty() || pair.answer.is_empty() {
            return Err(schema("question and answer must be non-empty".into()));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_qa_pairs(path: &Path, pairs: &[QaPair]) -> Result<()> {
    let mut text = String::new();
    for p in pairs {
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
