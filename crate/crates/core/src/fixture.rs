//! Synthetic planted-direction fixture.
//!
//! Builds a tiny byte-level model in which exactly one head sees whether an
//! answer is written in upper case (truthful) or lower case (untruthful), and
//! whose output feeds a residual feature that tilts next-token logits toward
//! upper-case letters. Every other component is blind to case:
//!
//! * residual dim 0 carries letter case: +1 for `A-Z`, -1 for `a-z`, 0 otherwise;
//! * residual dim 1 is a constant feature used for per-letter logit biases;
//! * the remaining dims carry random case-insensitive token features.
//!
//! Non-target heads and the feed-forward blocks neither read dim 0 nor write
//! dims 0/1. The target head attends uniformly (zero query/key), reads dim 0
//! into the planted head-space direction, and writes that direction back into
//! dim 0. Upper- and lower-case letters get per-letter biases drawn as a
//! permutation of one another, so an upper-case answer and its lower-case
//! mirror differ only by those biases: baseline MC1 sits near 0.5, and pushing
//! the target head along its direction favors the upper-case answers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::capture::{write_qa_pairs, CaptureConfig, QaPair};
use crate::dataset::{write_mc_jsonl, McQuestion};
use crate::error::{Error, Result};
use crate::eval::{mc1, Scorer};
use crate::model::{HeadId, Model, ModelConfig};
use crate::tokenizer::ByteTokenizer;

/// Residual dimension holding letter case.
pub const CASE_DIM: usize = 0;
/// Residual dimension held constant, used for per-letter logit biases.
pub const CONST_DIM: usize = 1;
pub const TEMPLATE: &str = "{q} {a}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSpec {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub max_seq_len: usize,
    pub target: HeadId,
    /// Planted head-space direction; normalized before use.
    pub direction: Vec<f64>,
    /// Gain of the target head's value projection on the case feature.
    pub signal_strength: f64,
    /// Weight of the case feature in letter logits.
    pub case_logit_gain: f64,
    /// Spread of the per-letter logit biases.
    pub letter_bias_std: f64,
    pub probe_questions: usize,
    pub eval_questions: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub corpus_words: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        let head_dim = 8;
        let mut direction = vec![0.0; head_dim];
        direction[0] = 1.0;
        Self {
            n_layers: 2,
            n_heads: 4,
            head_dim,
            max_seq_len: 32,
            target: HeadId::new(1, 2),
            direction,
            signal_strength: 4.0,
            case_logit_gain: 2.0,
            letter_bias_std: 0.5,
            probe_questions: 120,
            eval_questions: 40,
            min_word_len: 3,
            max_word_len: 6,
            corpus_words: 600,
        }
    }
}

impl FixtureSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("fixture: {m}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return bad("dimensions must be at least 1".into());
        }
        if self.n_heads * self.head_dim < 3 {
            return bad("embed_dim must be at least 3".into());
        }
        if self.target.layer >= self.n_layers || self.target.head >= self.n_heads {
            return bad(format!(
                "target head {} outside a {}x{} model",
                self.target, self.n_layers, self.n_heads
            ));
        }
        if self.direction.len() != self.head_dim {
            return bad(format!(
                "direction has {} components, head_dim is {}",
                self.direction.len(),
                self.head_dim
            ));
        }
        if self.direction.iter().all(|v| *v == 0.0) || self.direction.iter().any(|v| !v.is_finite()) {
            return bad("direction must be finite and nonzero".into());
        }
        if !(self.signal_strength > 0.0) {
            return bad("signal_strength must be positive".into());
        }
        if self.probe_questions < 10 || self.eval_questions == 0 {
            return bad("need at least 10 probe questions and 1 eval question".into());
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return bad("word length range is empty".into());
        }
        let longest = 1 + "#0000? ".len() + self.max_word_len;
        if longest > self.max_seq_len {
            return bad(format!("max_seq_len {} cannot hold a {longest}-token prompt", self.max_seq_len));
        }
        Ok(())
    }

    pub fn unit_direction(&self) -> Vec<f64> {
        let norm = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.direction.iter().map(|v| v / norm).collect()
    }

    pub fn capture_config(&self) -> CaptureConfig {
        CaptureConfig {
            template: TEMPLATE.to_string(),
            ..CaptureConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub target_head: HeadId,
    pub direction: Vec<f64>,
    pub signal_strength: f64,
    pub case_dim: usize,
    pub baseline_mc1: f64,
    pub template: String,
    pub model_file: String,
    pub probe_file: String,
    pub eval_file: String,
    pub corpus_file: String,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub model: Model,
    pub probe_pairs: Vec<QaPair>,
    pub eval_questions: Vec<McQuestion>,
    pub corpus: String,
    pub manifest: FixtureManifest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub model: PathBuf,
    pub probe: PathBuf,
    pub eval: PathBuf,
    pub corpus: PathBuf,
    pub manifest: PathBuf,
}

fn random_word(rng: &mut ChaCha8Rng, spec: &FixtureSpec) -> String {
    let len = rng.random_range(spec.min_word_len..=spec.max_word_len);
    (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect()
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    Normal::new(0.0, std).expect("finite std").sample(rng)
}

/// `rows x cols` Gaussian matrix with the listed columns and rows zeroed.
fn masked(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64, zero_cols: &[usize], zero_rows: &[usize]) -> Vec<f32> {
    let mut out = vec![0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = gauss(rng, std);
            if !zero_cols.contains(&c) && !zero_rows.contains(&r) {
                out[r * cols + c] = v as f32;
            }
        }
    }
    out
}

fn letter_index(t: usize) -> Option<(usize, bool)> {
    let b = u8::try_from(t).ok().filter(|b| b.is_ascii_alphabetic())?;
    Some(((b.to_ascii_lowercase() - b'a') as usize, b.is_ascii_uppercase()))
}

fn build_model(spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Result<Model> {
    let cfg = ModelConfig::new(
        spec.n_layers,
        spec.n_heads,
        spec.head_dim,
        ByteTokenizer::VOCAB_SIZE,
        spec.max_seq_len,
    )?;
    let (v, e, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.head_dim, cfg.ffn_dim());
    let mut named: HashMap<String, Vec<f32>> = HashMap::new();

    // Token embedding: case in CASE_DIM, constant in CONST_DIM, random
    // case-insensitive features elsewhere.
    let letter_features: Vec<Vec<f64>> = (0..26).map(|_| (0..e).map(|_| gauss(rng, 0.5)).collect()).collect();
    let mut emb = vec![0f32; v * e];
    for t in 0..v {
        let letter = letter_index(t);
        let features: Vec<f64> = match letter {
            Some((idx, _)) => letter_features[idx].clone(),
            None => (0..e).map(|_| gauss(rng, 0.5)).collect(),
        };
        let row = &mut emb[t * e..(t + 1) * e];
        for (slot, x) in row.iter_mut().zip(&features) {
            *slot = *x as f32;
        }
        row[CASE_DIM] = match letter {
            Some((_, true)) => 1.0,
            Some((_, false)) => -1.0,
            None => 0.0,
        };
        row[CONST_DIM] = 1.0;
    }
    named.insert("token_embedding".into(), emb);
    named.insert(
        "position_embedding".into(),
        masked(rng, spec.max_seq_len, e, 0.1, &[CASE_DIM, CONST_DIM], &[]),
    );

    let unit = spec.unit_direction();
    for l in 0..spec.n_layers {
        for h in 0..spec.n_heads {
            let p = format!("layers.{l}.heads.{h}");
            if HeadId::new(l, h) == spec.target {
                let mut value = vec![0f32; d * e];
                let mut output = vec![0f32; e * d];
                for i in 0..d {
                    value[i * e + CASE_DIM] = (spec.signal_strength * unit[i]) as f32;
                    output[CASE_DIM * d + i] = unit[i] as f32;
                }
                named.insert(format!("{p}.value"), value);
                named.insert(format!("{p}.output"), output);
                continue;
            }
            let in_std = 1.0 / (e as f64).sqrt();
            for name in ["query", "key", "value"] {
                named.insert(format!("{p}.{name}"), masked(rng, d, e, in_std, &[CASE_DIM], &[]));
            }
            let out_std = 0.5 / (d as f64).sqrt();
            named.insert(format!("{p}.output"), masked(rng, e, d, out_std, &[], &[CASE_DIM, CONST_DIM]));
        }
        named.insert(
            format!("layers.{l}.ffn_up"),
            masked(rng, f, e, 1.0 / (e as f64).sqrt(), &[CASE_DIM], &[]),
        );
        named.insert(
            format!("layers.{l}.ffn_down"),
            masked(rng, e, f, 0.5 / (f as f64).sqrt(), &[], &[CASE_DIM, CONST_DIM]),
        );
    }

    // Letter logits: case gain on CASE_DIM, per-letter bias on CONST_DIM with
    // lower-case biases a permutation of the upper-case ones.
    let upper_bias: Vec<f64> = (0..26).map(|_| gauss(rng, spec.letter_bias_std)).collect();
    let mut perm: Vec<usize> = (0..26).collect();
    perm.shuffle(rng);
    let mut unemb = vec![0f32; v * e];
    for t in 0..v {
        let row = &mut unemb[t * e..(t + 1) * e];
        match letter_index(t) {
            Some((idx, true)) => {
                row[CASE_DIM] = spec.case_logit_gain as f32;
                row[CONST_DIM] = upper_bias[idx] as f32;
            }
            Some((idx, false)) => {
                row[CASE_DIM] = -spec.case_logit_gain as f32;
                row[CONST_DIM] = upper_bias[perm[idx]] as f32;
            }
            None => {
                for slot in row.iter_mut().skip(2) {
                    *slot = gauss(rng, 0.3 / (e as f64).sqrt()) as f32;
                }
                row[CONST_DIM] = -1.0;
            }
        }
    }
    named.insert("unembedding".into(), unemb);

    Model::from_named(cfg, named)
}

/// Builds the fixture model, its probe-training pairs, its evaluation
/// questions and a small reference corpus, all deterministic in `seed`.
pub fn make_synthetic_fixture(seed: u64, spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = build_model(spec, &mut rng)?;

    let mut probe_pairs = Vec::with_capacity(2 * spec.probe_questions);
    for i in 0..spec.probe_questions {
        let question = format!("#{i}?");
        let truthful = random_word(&mut rng, spec).to_ascii_uppercase();
        let untruthful = random_word(&mut rng, spec);
        probe_pairs.push(QaPair {
            id: format!("p{i}-t"),
            question: question.clone(),
            answer: truthful,
            label: true,
        });
        probe_pairs.push(QaPair {
            id: format!("p{i}-f"),
            question,
            answer: untruthful,
            label: false,
        });
    }

    let eval_questions: Vec<McQuestion> = (0..spec.eval_questions)
        .map(|i| {
            let word = random_word(&mut rng, spec);
            McQuestion {
                id: format!("e{i}"),
                question: format!("#{}?", 5000 + i),
                correct: vec![word.to_ascii_uppercase()],
                incorrect: vec![word],
            }
        })
        .collect();

    let corpus: Vec<String> = (0..spec.corpus_words)
        .map(|_| {
            let w = random_word(&mut rng, spec);
            if rng.random_bool(0.5) {
                w.to_ascii_uppercase()
            } else {
                w
            }
        })
        .collect();
    let corpus = corpus.join(" ");

    let prompt = spec.capture_config();
    let baseline_mc1 = mc1(&Scorer::new(&model, &ByteTokenizer, &prompt), None, &eval_questions)?;

    Ok(Fixture {
        model,
        probe_pairs,
        eval_questions,
        corpus,
        manifest: FixtureManifest {
            seed,
            target_head: spec.target,
            direction: spec.unit_direction(),
            signal_strength: spec.signal_strength,
            case_dim: CASE_DIM,
            baseline_mc1,
            template: TEMPLATE.to_string(),
            model_file: "model.bin".into(),
            probe_file: "probe_pairs.jsonl".into(),
            eval_file: "eval_mc.jsonl".into(),
            corpus_file: "corpus.txt".into(),
        },
    })
}

impl Fixture {
    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.manifest;
        let paths = FixturePaths {
            model: dir.join(&m.model_file),
            probe: dir.join(&m.probe_file),
            eval: dir.join(&m.eval_file),
            corpus: dir.join(&m.corpus_file),
            manifest: dir.join("manifest.json"),
        };
        self.model.save(&paths.model)?;
        write_qa_pairs(&paths.probe, &self.probe_pairs)?;
        write_mc_jsonl(&paths.eval, &self.eval_questions)?;
        fs::write(&paths.corpus, &self.corpus).map_err(|e| Error::io(&paths.corpus, e))?;
        let manifest = serde_json::to_string_pretty(m)?;
        fs::write(&paths.manifest, manifest).map_err(|e| Error::io(&paths.manifest, e))?;
        Ok(paths)
    }

    pub fn planted_direction(&self) -> Array1<f64> {
        Array1::from(self.manifest.direction.clone())
    }
}
