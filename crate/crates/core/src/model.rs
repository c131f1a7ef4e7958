//! Miniature decoder-only transformer with per-head hook points.
//!
//! Each layer is pre-normalized (RMSNorm), followed by multi-head causal
//! attention whose heads are kept as separate projection matrices, then a
//! GELU feed-forward block of width `4 * embed_dim`. Positions use a learned
//! absolute embedding table.
//!
//! For every head the attention output `z` (the weighted sum of values, in
//! head space) is the hook point: it is what capture records, and it is
//! where an [`InterventionPlan`] adds `alpha * sigma * direction` before the
//! head's output projection maps it back into the residual stream.
//!
//! Parameters are held as `f64` but are always exactly representable in
//! `f32`, so the on-disk container round-trips bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::{TensorContainer, TensorEntry};
use crate::error::{Error, Result};
use crate::intervention::{InterventionPlan, InterventionScope};
use crate::math::{gelu, rms_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn new(
        n_layers: usize,
        n_heads: usize,
        head_dim: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Result<Self> {
        let cfg = Self {
            n_layers,
            n_heads,
            head_dim,
            embed_dim: n_heads * head_dim,
            vocab_size,
            max_seq_len,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("embed_dim", self.embed_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.embed_dim != self.head_dim * self.n_heads {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} != head_dim {} * n_heads {}",
                self.embed_dim, self.head_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// All heads in (layer, head) order.
    pub fn heads(&self) -> Vec<HeadId> {
        (0..self.n_layers)
            .flat_map(|layer| (0..self.n_heads).map(move |head| HeadId { layer, head }))
            .collect()
    }

    pub fn contains(&self, id: HeadId) -> bool {
        id.layer < self.n_layers && id.head < self.n_heads
    }

    /// Canonical tensor manifest: names and shapes, in container order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (v, e, d, f) = (self.vocab_size, self.embed_dim, self.head_dim, self.ffn_dim());
        let mut out = vec![
            ("token_embedding".to_string(), vec![v, e]),
            ("position_embedding".to_string(), vec![self.max_seq_len, e]),
        ];
        for l in 0..self.n_layers {
            out.push((format!("layers.{l}.attn_norm"), vec![e]));
            for h in 0..self.n_heads {
                for proj in ["query", "key", "value"] {
                    out.push((format!("layers.{l}.heads.{h}.{proj}"), vec![d, e]));
                }
                out.push((format!("layers.{l}.heads.{h}.output"), vec![e, d]));
            }
            out.push((format!("layers.{l}.attn_output_bias"), vec![e]));
            out.push((format!("layers.{l}.ffn_norm"), vec![e]));
            out.push((format!("layers.{l}.ffn_up"), vec![f, e]));
            out.push((format!("layers.{l}.ffn_up_bias"), vec![f]));
            out.push((format!("layers.{l}.ffn_down"), vec![e, f]));
            out.push((format!("layers.{l}.ffn_down_bias"), vec![e]));
        }
        out.push(("final_norm".to_string(), vec![e]));
        out.push(("unembedding".to_string(), vec![v, e]));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.layer, self.head)
    }
}

/// Head-space activations per head, one row per token position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapturedActivations {
    heads: BTreeMap<HeadId, Array2<f64>>,
}

impl CapturedActivations {
    pub fn get(&self, id: HeadId) -> Option<&Array2<f64>> {
        self.heads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HeadId, &Array2<f64>)> {
        self.heads.iter()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn into_inner(self) -> BTreeMap<HeadId, Array2<f64>> {
        self.heads
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Pre-softmax logits, `seq_len x vocab_size`.
    pub logits: Array2<f64>,
    /// Pre-intervention head activations, when capture was requested.
    pub captured: Option<CapturedActivations>,
    /// Head activations after the intervention offset was added; only
    /// filled by [`Model::forward_traced`].
    pub injected: Option<CapturedActivations>,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadWeights {
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerWeights {
    attn_norm: Array1<f64>,
    heads: Vec<HeadWeights>,
    attn_output_bias: Array1<f64>,
    ffn_norm: Array1<f64>,
    ffn_up: Array2<f64>,
    ffn_up_bias: Array1<f64>,
    ffn_down: Array2<f64>,
    ffn_down_bias: Array1<f64>,
}

/// Inference-only transformer. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    token_embedding: Array2<f64>,
    position_embedding: Array2<f64>,
    layers: Vec<LayerWeights>,
    final_norm: Array1<f64>,
    unembedding: Array2<f64>,
}

pub fn load_model(path: &Path) -> Result<Model> {
    Model::from_container(&TensorContainer::read(path)?)
}

fn matrix(c: &TensorContainer, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let t = c.expect(name, &[rows, cols])?;
    Ok(Array2::from_shape_vec((rows, cols), t.data.iter().map(|&v| f64::from(v)).collect())
        .expect("shape checked"))
}

fn vector(c: &TensorContainer, name: &str, len: usize) -> Result<Array1<f64>> {
    let t = c.expect(name, &[len])?;
    Ok(t.data.iter().map(|&v| f64::from(v)).collect())
}

fn entry<'a, I>(name: String, shape: Vec<usize>, values: I) -> TensorEntry
where
    I: IntoIterator<Item = &'a f64>,
{
    TensorEntry::new(name, shape, values.into_iter().map(|&v| v as f32).collect())
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            c.metadata
                .get("config")
                .cloned()
                .ok_or_else(|| Error::MalformedHeader("metadata has no `config` entry".into()))?,
        )
        .map_err(|e| Error::MalformedHeader(format!("model config: {e}")))?;
        config.validate()?;
        let (v, e, d, f) = (config.vocab_size, config.embed_dim, config.head_dim, config.ffn_dim());
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut heads = Vec::with_capacity(config.n_heads);
            for h in 0..config.n_heads {
                let p = format!("layers.{l}.heads.{h}");
                heads.push(HeadWeights {
                    query: matrix(c, &format!("{p}.query"), d, e)?,
                    key: matrix(c, &format!("{p}.key"), d, e)?,
                    value: matrix(c, &format!("{p}.value"), d, e)?,
                    output: matrix(c, &format!("{p}.output"), e, d)?,
                });
            }
            layers.push(LayerWeights {
                attn_norm: vector(c, &format!("layers.{l}.attn_norm"), e)?,
                heads,
                attn_output_bias: vector(c, &format!("layers.{l}.attn_output_bias"), e)?,
                ffn_norm: vector(c, &format!("layers.{l}.ffn_norm"), e)?,
                ffn_up: matrix(c, &format!("layers.{l}.ffn_up"), f, e)?,
                ffn_up_bias: vector(c, &format!("layers.{l}.ffn_up_bias"), f)?,
                ffn_down: matrix(c, &format!("layers.{l}.ffn_down"), e, f)?,
                ffn_down_bias: vector(c, &format!("layers.{l}.ffn_down_bias"), e)?,
            });
        }
        Ok(Self {
            config,
            token_embedding: matrix(c, "token_embedding", v, e)?,
            position_embedding: matrix(c, "position_embedding", config.max_seq_len, e)?,
            layers,
            final_norm: vector(c, "final_norm", e)?,
            unembedding: matrix(c, "unembedding", v, e)?,
        })
    }

    pub fn to_container(&self) -> TensorContainer {
        let cfg = &self.config;
        let (v, e, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.head_dim, cfg.ffn_dim());
        let mut c = TensorContainer::new(serde_json::json!({
            "kind": "model",
            "config": cfg,
        }));
        c.push(entry("token_embedding".into(), vec![v, e], &self.token_embedding));
        c.push(entry("position_embedding".into(), vec![cfg.max_seq_len, e], &self.position_embedding));
        for (l, layer) in self.layers.iter().enumerate() {
            c.push(entry(format!("layers.{l}.attn_norm"), vec![e], &layer.attn_norm));
            for (h, hw) in layer.heads.iter().enumerate() {
                let p = format!("layers.{l}.heads.{h}");
                c.push(entry(format!("{p}.query"), vec![d, e], &hw.query));
                c.push(entry(format!("{p}.key"), vec![d, e], &hw.key));
                c.push(entry(format!("{p}.value"), vec![d, e], &hw.value));
                c.push(entry(format!("{p}.output"), vec![e, d], &hw.output));
            }
            c.push(entry(format!("layers.{l}.attn_output_bias"), vec![e], &layer.attn_output_bias));
            c.push(entry(format!("layers.{l}.ffn_norm"), vec![e], &layer.ffn_norm));
            c.push(entry(format!("layers.{l}.ffn_up"), vec![f, e], &layer.ffn_up));
            c.push(entry(format!("layers.{l}.ffn_up_bias"), vec![f], &layer.ffn_up_bias));
            c.push(entry(format!("layers.{l}.ffn_down"), vec![e, f], &layer.ffn_down));
            c.push(entry(format!("layers.{l}.ffn_down_bias"), vec![e], &layer.ffn_down_bias));
        }
        c.push(entry("final_norm".into(), vec![e], &self.final_norm));
        c.push(entry("unembedding".into(), vec![v, e], &self.unembedding));
        c
    }

    /// Builds a model from named tensors; any tensor not supplied is zero,
    /// except the normalization gains, which default to one.
    pub fn from_named(config: ModelConfig, tensors: HashMap<String, Vec<f32>>) -> Result<Self> {
        config.validate()?;
        let mut tensors = tensors;
        let mut c = TensorContainer::new(serde_json::json!({ "kind": "model", "config": config }));
        for (name, shape) in config.tensor_layout() {
            let count: usize = shape.iter().product();
            let data = match tensors.remove(&name) {
                Some(data) => {
                    if data.len() != count {
                        return Err(Error::ShapeMismatch {
                            name,
                            expected: shape,
                            found: vec![data.len()],
                        });
                    }
                    data
                }
                None if name.ends_with("norm") => vec![1.0; count],
                None => vec![0.0; count],
            };
            c.push(TensorEntry::new(name, shape, data));
        }
        if let Some(name) = tensors.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown tensor `{name}`")));
        }
        Self::from_container(&c)
    }

    /// Randomly initialized weights, deterministic in `seed`.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut named = HashMap::new();
        for (name, shape) in config.tensor_layout() {
            let count: usize = shape.iter().product();
            let fan_in = *shape.last().expect("non-empty shape") as f64;
            let std = if name.contains("embedding") {
                0.5
            } else if name.ends_with("norm") || name.ends_with("bias") {
                0.05
            } else {
                1.0 / fan_in.sqrt()
            };
            let dist = Normal::new(0.0, std).expect("finite std");
            let offset = if name.ends_with("norm") { 1.0 } else { 0.0 };
            let data = (0..count)
                .map(|_| (offset + dist.sample(&mut rng)) as f32)
                .collect();
            named.insert(name, data);
        }
        Self::from_named(config, named)
    }

    pub fn forward(
        &self,
        tokens: &[u32],
        plan: Option<&InterventionPlan>,
        capture: Option<&[HeadId]>,
    ) -> Result<ForwardOutput> {
        self.run(tokens, plan, capture, false)
    }

    /// Like [`forward`](Self::forward), additionally recording every captured
    /// head's activation after the intervention offset is applied.
    pub fn forward_traced(
        &self,
        tokens: &[u32],
        plan: Option<&InterventionPlan>,
        capture: &[HeadId],
    ) -> Result<ForwardOutput> {
        self.run(tokens, plan, Some(capture), true)
    }

    fn validate_input(&self, tokens: &[u32], plan: Option<&InterventionPlan>, capture: Option<&[HeadId]>) -> Result<()> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: cfg.max_seq_len,
            });
        }
        if let Some((position, &token)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &t)| t as usize >= cfg.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                token,
                position,
                vocab_size: cfg.vocab_size,
            });
        }
        if let Some(plan) = plan {
            for e in plan.entries() {
                if !cfg.contains(e.head) {
                    return Err(Error::HeadOutOfBounds(e.head));
                }
                if e.direction.len() != cfg.head_dim {
                    return Err(Error::DimensionMismatch {
                        expected: cfg.head_dim,
                        found: e.direction.len(),
                    });
                }
            }
        }
        for &id in capture.unwrap_or(&[]) {
            if !cfg.contains(id) {
                return Err(Error::HeadOutOfBounds(id));
            }
        }
        Ok(())
    }

    fn run(
        &self,
        tokens: &[u32],
        plan: Option<&InterventionPlan>,
        capture: Option<&[HeadId]>,
        trace_injected: bool,
    ) -> Result<ForwardOutput> {
        self.validate_input(tokens, plan, capture)?;
        let cfg = &self.config;
        let seq = tokens.len();

        // alpha == 0 skips injection entirely so the result stays bit-identical
        // to the baseline pass (adding +0.0 would flip the sign of -0.0).
        let mut offsets: HashMap<HeadId, Array1<f64>> = HashMap::new();
        let mut scope = InterventionScope::AllPositions;
        if let Some(plan) = plan.filter(|p| p.alpha() != 0.0) {
            scope = plan.scope();
            for e in plan.entries() {
                offsets.insert(e.head, e.offset(plan.alpha()));
            }
        }
        let first_injected = match scope {
            InterventionScope::AllPositions => 0,
            InterventionScope::LastPosition => seq - 1,
        };

        let capture_set: Vec<HeadId> = capture.map(<[HeadId]>::to_vec).unwrap_or_default();
        let mut captured = BTreeMap::new();
        let mut injected = BTreeMap::new();

        let mut x = Array2::<f64>::zeros((seq, cfg.embed_dim));
        for (p, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(p);
            row += &self.token_embedding.row(t as usize);
            row += &self.position_embedding.row(p);
        }

        let scale = 1.0 / (cfg.head_dim as f64).sqrt();
        for (l, layer) in self.layers.iter().enumerate() {
            let normed = rms_norm(x.view(), layer.attn_norm.view());
            let mut attn_out = Array2::<f64>::zeros((seq, cfg.embed_dim));
            for (h, hw) in layer.heads.iter().enumerate() {
                let id = HeadId::new(l, h);
                let mut z = attend(normed.view(), hw, scale);
                if capture_set.contains(&id) {
                    captured.insert(id, z.clone());
                }
                if let Some(offset) = offsets.get(&id) {
                    for mut row in z.slice_mut(s![first_injected.., ..]).axis_iter_mut(Axis(0)) {
                        row += offset;
                    }
                }
                if trace_injected && capture_set.contains(&id) {
                    injected.insert(id, z.clone());
                }
                attn_out += &z.dot(&hw.output.t());
            }
            attn_out += &layer.attn_output_bias;
            x += &attn_out;

            let normed = rms_norm(x.view(), layer.ffn_norm.view());
            let mut hidden = normed.dot(&layer.ffn_up.t());
            hidden += &layer.ffn_up_bias;
            hidden.mapv_inplace(gelu);
            let mut ffn_out = hidden.dot(&layer.ffn_down.t());
            ffn_out += &layer.ffn_down_bias;
            x += &ffn_out;
        }

        let normed = rms_norm(x.view(), self.final_norm.view());
        let logits = normed.dot(&self.unembedding.t());
        Ok(ForwardOutput {
            logits,
            captured: capture.map(|_| CapturedActivations { heads: captured }),
            injected: trace_injected.then_some(CapturedActivations { heads: injected }),
        })
    }
}

/// Causal softmax attention for one head; returns `seq x head_dim`.
fn attend(normed: ArrayView2<f64>, hw: &HeadWeights, scale: f64) -> Array2<f64> {
    let q = normed.dot(&hw.query.t());
    let k = normed.dot(&hw.key.t());
    let v = normed.dot(&hw.value.t());
    let seq = normed.nrows();
    let mut weights = q.dot(&k.t());
    for i in 0..seq {
        let mut row = weights.row_mut(i);
        let max = row
            .iter()
            .take(i + 1)
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
        let mut total = 0.0;
        for (j, w) in row.iter_mut().enumerate() {
            if j <= i {
                *w = (*w * scale - max).exp();
                total += *w;
            } else {
                *w = 0.0;
            }
        }
        row.mapv_inplace(|w| w / total);
    }
    weights.dot(&v)
}
