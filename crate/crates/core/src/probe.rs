//! Per-head truthfulness probes.
//!
//! Two probe families: logistic regression on the raw head activation, and a
//! one-hidden-layer network (tanh hidden units, logistic output). Both are
//! trained by full-batch gradient descent on mean binary cross-entropy with
//! an optional L2 penalty on the weight matrices, and keep the parameters with
//! the best held-out accuracy.
//!
//! Training runs on features standardized with train-split statistics; the
//! returned parameters have the standardization folded back in, so they apply
//! to raw activations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::HeadActivationSet;
use crate::container::{TensorContainer, TensorEntry};
use crate::error::{Error, Result};
use crate::math::{logistic, softplus};
use crate::model::HeadId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Linear => "linear",
            ProbeKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown probe kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeParams {
    Linear {
        weights: Array1<f64>,
        bias: f64,
    },
    Mlp {
        /// `hidden_dim x input_dim`.
        hidden_weights: Array2<f64>,
        hidden_bias: Array1<f64>,
        output_weights: Array1<f64>,
        output_bias: f64,
    },
}

impl ProbeParams {
    pub fn zeros(kind: ProbeKind, input_dim: usize, hidden_dim: usize) -> Self {
        match kind {
            ProbeKind::Linear => ProbeParams::Linear {
                weights: Array1::zeros(input_dim),
                bias: 0.0,
            },
            ProbeKind::Mlp => ProbeParams::Mlp {
                hidden_weights: Array2::zeros((hidden_dim, input_dim)),
                hidden_bias: Array1::zeros(hidden_dim),
                output_weights: Array1::zeros(hidden_dim),
                output_bias: 0.0,
            },
        }
    }

    pub fn kind(&self) -> ProbeKind {
        match self {
            ProbeParams::Linear { .. } => ProbeKind::Linear,
            ProbeParams::Mlp { .. } => ProbeKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ProbeParams::Linear { weights, .. } => weights.len(),
            ProbeParams::Mlp { hidden_weights, .. } => hidden_weights.ncols(),
        }
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        match self {
            ProbeParams::Linear { .. } => None,
            ProbeParams::Mlp { hidden_weights, .. } => Some(hidden_weights.nrows()),
        }
    }

    /// All parameters in a fixed order: weights, then biases, layer by layer.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ProbeParams::Linear { weights, bias } => {
                weights.iter().copied().chain(std::iter::once(*bias)).collect()
            }
            ProbeParams::Mlp {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            } => hidden_weights
                .iter()
                .chain(hidden_bias.iter())
                .chain(output_weights.iter())
                .chain(std::iter::once(output_bias))
                .copied()
                .collect(),
        }
    }

    /// Inverse of [`to_flat`](Self::to_flat), taking shapes from `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let expected = self.to_flat().len();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: flat.len(),
            });
        }
        Ok(match self {
            ProbeParams::Linear { weights, .. } => {
                let d = weights.len();
                ProbeParams::Linear {
                    weights: Array1::from(flat[..d].to_vec()),
                    bias: flat[d],
                }
            }
            ProbeParams::Mlp { hidden_weights, .. } => {
                let (h, d) = hidden_weights.dim();
                let mut it = flat.iter().copied();
                let hw = Array2::from_shape_vec((h, d), it.by_ref().take(h * d).collect())
                    .expect("length checked");
                let hb: Array1<f64> = it.by_ref().take(h).collect();
                let ow: Array1<f64> = it.by_ref().take(h).collect();
                ProbeParams::Mlp {
                    hidden_weights: hw,
                    hidden_bias: hb,
                    output_weights: ow,
                    output_bias: it.next().expect("length checked"),
                }
            }
        })
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        let expected = self.input_dim();
        if expected != found {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }

    /// Pre-sigmoid score for one input.
    pub fn logit(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(match self {
            ProbeParams::Linear { weights, bias } => weights.dot(&x) + bias,
            ProbeParams::Mlp {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            } => {
                let hidden = (hidden_weights.dot(&x) + hidden_bias).mapv(f64::tanh);
                output_weights.dot(&hidden) + output_bias
            }
        })
    }

    /// Pre-sigmoid scores for a batch of rows.
    pub fn logits(&self, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_dim(xs.ncols())?;
        Ok(match self {
            ProbeParams::Linear { weights, bias } => xs.dot(weights) + *bias,
            ProbeParams::Mlp {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            } => {
                let hidden = (xs.dot(&hidden_weights.t()) + hidden_bias).mapv(f64::tanh);
                hidden.dot(output_weights) + *output_bias
            }
        })
    }
}

pub fn probe_predict(params: &ProbeParams, x: ArrayView1<f64>) -> Result<f64> {
    params.logit(x).map(logistic)
}

fn check_batch(params: &ProbeParams, xs: ArrayView2<f64>, ys: &[bool]) -> Result<()> {
    if xs.nrows() == 0 {
        return Err(Error::InsufficientSamples("empty batch".into()));
    }
    if xs.nrows() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.nrows(),
            found: ys.len(),
        });
    }
    params.check_dim(xs.ncols())
}

/// Mean binary cross-entropy plus `l2 / 2 * ||weights||^2`, and its gradient.
pub fn loss_and_gradient(
    params: &ProbeParams,
    xs: ArrayView2<f64>,
    ys: &[bool],
    l2: f64,
) -> Result<(f64, ProbeParams)> {
    check_batch(params, xs, ys)?;
    let n = xs.nrows() as f64;
    let targets: Array1<f64> = ys.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    Ok(match params {
        ProbeParams::Linear { weights, bias } => {
            let z = xs.dot(weights) + *bias;
            let loss = bce(&z, &targets) + 0.5 * l2 * weights.dot(weights);
            let dz = (z.mapv(logistic) - &targets) / n;
            let grad = ProbeParams::Linear {
                weights: xs.t().dot(&dz) + &(weights * l2),
                bias: dz.sum(),
            };
            (loss, grad)
        }
        ProbeParams::Mlp {
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        } => {
            let hidden = (xs.dot(&hidden_weights.t()) + hidden_bias).mapv(f64::tanh);
            let z = hidden.dot(output_weights) + *output_bias;
            let penalty = hidden_weights.iter().map(|w| w * w).sum::<f64>() + output_weights.dot(output_weights);
            let loss = bce(&z, &targets) + 0.5 * l2 * penalty;
            let dz = (z.mapv(logistic) - &targets) / n;
            let g_out = hidden.t().dot(&dz) + &(output_weights * l2);
            // d loss / d pre-activation, N x H
            let mut dpre = dz
                .view()
                .insert_axis(Axis(1))
                .dot(&output_weights.view().insert_axis(Axis(0)));
            dpre.zip_mut_with(&hidden, |d, h| *d *= 1.0 - h * h);
            let grad = ProbeParams::Mlp {
                hidden_weights: dpre.t().dot(&xs) + &(hidden_weights * l2),
                hidden_bias: dpre.sum_axis(Axis(0)),
                output_weights: g_out,
                output_bias: dz.sum(),
            };
            (loss, grad)
        }
    })
}

fn bce(z: &Array1<f64>, targets: &Array1<f64>) -> f64 {
    z.iter()
        .zip(targets)
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum::<f64>()
        / z.len() as f64
}

/// Analytic gradient of the mean binary cross-entropy (no penalty).
pub fn probe_gradient(params: &ProbeParams, xs: ArrayView2<f64>, ys: &[bool]) -> Result<ProbeParams> {
    loss_and_gradient(params, xs, ys, 0.0).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeTrainConfig {
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping;
    /// zero disables early stopping.
    pub early_stop_patience: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    /// Hidden width of the MLP probe; defaults to the input dimension.
    pub hidden_dim: Option<usize>,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            learning_rate: 0.5,
            max_epochs: 1000,
            early_stop_patience: 200,
            l2_penalty: 1e-4,
            seed: 0,
            hidden_dim: None,
        }
    }
}

impl ProbeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::InvalidConfig("l2_penalty must be non-negative".into()));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::InvalidConfig("hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadScore {
    pub head: HeadId,
    pub val_accuracy: f64,
    pub probe: ProbeParams,
}

fn accuracy(params: &ProbeParams, xs: ArrayView2<f64>, ys: &[bool]) -> Result<f64> {
    let z = params.logits(xs)?;
    let hits = z.iter().zip(ys).filter(|(&z, &y)| (z >= 0.0) == y).count();
    Ok(hits as f64 / ys.len() as f64)
}

fn rng_for(seed: u64, head: HeadId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((head.layer as u64) << 32) | head.head as u64);
    rng
}

struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    fn fit(xs: ArrayView2<f64>) -> Self {
        let mean = xs.mean_axis(Axis(0)).expect("non-empty");
        let scale = xs
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 && s.is_finite() { s } else { 1.0 });
        Self { mean, scale }
    }

    fn apply(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        (&xs - &self.mean) / &self.scale
    }

    /// Rewrites parameters trained on standardized inputs to act on raw inputs.
    fn fold(&self, params: &ProbeParams) -> ProbeParams {
        match params {
            ProbeParams::Linear { weights, bias } => {
                let w = weights / &self.scale;
                ProbeParams::Linear {
                    bias: bias - w.dot(&self.mean),
                    weights: w,
                }
            }
            ProbeParams::Mlp {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            } => {
                let hw = hidden_weights / &self.scale;
                ProbeParams::Mlp {
                    hidden_bias: hidden_bias - &hw.dot(&self.mean),
                    hidden_weights: hw,
                    output_weights: output_weights.clone(),
                    output_bias: *output_bias,
                }
            }
        }
    }
}

fn gather(xs: ArrayView2<f64>, ys: &[bool], idx: &[usize]) -> (Array2<f64>, Vec<bool>) {
    (xs.select(Axis(0), idx), idx.iter().map(|&i| ys[i]).collect())
}

fn class_counts(ys: &[bool]) -> (usize, usize) {
    let t = ys.iter().filter(|&&y| y).count();
    (t, ys.len() - t)
}

fn initial_params(kind: ProbeKind, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> ProbeParams {
    match kind {
        ProbeKind::Linear => ProbeParams::zeros(kind, input_dim, hidden_dim),
        ProbeKind::Mlp => {
            let hidden = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("finite");
            let out = Normal::new(0.0, 1.0 / (hidden_dim as f64).sqrt()).expect("finite");
            ProbeParams::Mlp {
                hidden_weights: Array2::from_shape_fn((hidden_dim, input_dim), |_| hidden.sample(rng)),
                hidden_bias: Array1::zeros(hidden_dim),
                output_weights: Array1::from_shape_fn(hidden_dim, |_| out.sample(rng)),
                output_bias: 0.0,
            }
        }
    }
}

/// Gradient descent on `train`, early-stopped on accuracy over `val`.
/// Returns raw-input parameters and their accuracy on `val`.
fn fit(
    xs: ArrayView2<f64>,
    ys: &[bool],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &ProbeTrainConfig,
    kind: ProbeKind,
    rng: &mut ChaCha8Rng,
) -> Result<(ProbeParams, f64)> {
    let (train_x, train_y) = gather(xs, ys, train_idx);
    let (val_x, val_y) = gather(xs, ys, val_idx);
    let (t, f) = class_counts(&train_y);
    if t < 2 || f < 2 {
        return Err(Error::InsufficientSamples(format!(
            "training split needs at least 2 samples per class, has {t} true / {f} false"
        )));
    }
    let standardizer = Standardizer::fit(train_x.view());
    let train_x = standardizer.apply(train_x.view());
    let val_std = standardizer.apply(val_x.view());

    let input_dim = xs.ncols();
    let hidden_dim = cfg.hidden_dim.unwrap_or(input_dim);
    let mut params = initial_params(kind, input_dim, hidden_dim, rng);
    let mut flat = params.to_flat();
    let mut best = (params.clone(), accuracy(&params, val_std.view(), &val_y)?);
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let (loss, grad) = loss_and_gradient(&params, train_x.view(), &train_y, cfg.l2_penalty)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        for (p, g) in flat.iter_mut().zip(grad.to_flat()) {
            *p -= cfg.learning_rate * g;
        }
        params = params.with_flat(&flat)?;
        let acc = accuracy(&params, val_std.view(), &val_y)?;
        if acc > best.1 {
            best = (params.clone(), acc);
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let folded = standardizer.fold(&best.0);
    let acc = accuracy(&folded, val_x.view(), &val_y)?;
    Ok((folded, acc))
}

fn check_samples(xs: ArrayView2<f64>, ys: &[bool]) -> Result<()> {
    if xs.nrows() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: ys.len(),
            found: xs.nrows(),
        });
    }
    match class_counts(ys) {
        (0, 0) => Err(Error::InsufficientSamples("no samples".into())),
        (0, _) => Err(Error::SingleClass(false)),
        (_, 0) => Err(Error::SingleClass(true)),
        _ => Ok(()),
    }
}

/// Trains one head's probe on a seeded train/validation split.
pub fn train_probe(
    head: HeadId,
    xs: ArrayView2<f64>,
    ys: &[bool],
    cfg: &ProbeTrainConfig,
    kind: ProbeKind,
) -> Result<HeadScore> {
    cfg.validate()?;
    check_samples(xs, ys)?;
    let n = ys.len();
    let mut rng = rng_for(cfg.seed, head);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n_train >= n {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples leave no validation split"
        )));
    }
    let (train_idx, val_idx) = order.split_at(n_train);
    let (probe, val_accuracy) = fit(xs, ys, train_idx, val_idx, cfg, kind, &mut rng)?;
    Ok(HeadScore {
        head,
        val_accuracy,
        probe,
    })
}

/// Validation accuracy of each of `folds` seeded folds.
pub fn cross_validate(
    head: HeadId,
    xs: ArrayView2<f64>,
    ys: &[bool],
    cfg: &ProbeTrainConfig,
    kind: ProbeKind,
    folds: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_samples(xs, ys)?;
    let n = ys.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidConfig(format!("folds must lie in 2..={n}, got {folds}")));
    }
    let mut rng = rng_for(cfg.seed, head);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (0..folds)
        .map(|f| {
            let lo = f * n / folds;
            let hi = (f + 1) * n / folds;
            let val_idx = &order[lo..hi];
            let train_idx: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            fit(xs, ys, &train_idx, val_idx, cfg, kind, &mut rng).map(|(_, acc)| acc)
        })
        .collect()
}

/// Trains a probe for every head in the set, in parallel. Each head draws
/// from its own RNG stream, so the result does not depend on scheduling.
pub fn train_all_heads(set: &HeadActivationSet, cfg: &ProbeTrainConfig, kind: ProbeKind) -> Result<Vec<HeadScore>> {
    let heads: Vec<HeadId> = set.heads().collect();
    heads
        .par_iter()
        .map(|&id| {
            let rows = set.head(id).expect("head listed by the set");
            train_probe(id, rows, set.labels(), cfg, kind)
        })
        .collect()
}

/// Top-`k` heads by validation accuracy; ties go to the lower (layer, head).
pub fn rank_heads(scores: &[HeadScore], k: usize) -> Result<Vec<HeadId>> {
    let pairs: Vec<(HeadId, f64)> = scores.iter().map(|s| (s.head, s.val_accuracy)).collect();
    rank_by_accuracy(&pairs, k)
}

/// [`rank_heads`] over bare (head, accuracy) pairs.
pub fn rank_by_accuracy(scores: &[(HeadId, f64)], k: usize) -> Result<Vec<HeadId>> {
    if k == 0 || k > scores.len() {
        return Err(Error::KOutOfRange { k, max: scores.len() });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(sorted.into_iter().take(k).map(|s| s.0).collect())
}

/// `n_layers x n_heads` accuracy grid as CSV: one row per layer, one column
/// per head, four decimals.
pub fn export_head_heatmap(scores: &[HeadScore], n_layers: usize, n_heads: usize) -> Result<String> {
    let by_head: BTreeMap<HeadId, f64> = scores.iter().map(|s| (s.head, s.val_accuracy)).collect();
    let mut out = String::from("layer");
    for h in 0..n_heads {
        write!(out, ",head_{h}").unwrap();
    }
    out.push('\n');
    for l in 0..n_layers {
        write!(out, "{l}").unwrap();
        for h in 0..n_heads {
            let id = HeadId::new(l, h);
            let acc = by_head.get(&id).ok_or(Error::MissingHead(id))?;
            write!(out, ",{acc:.4}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn head_scores_csv(scores: &[HeadScore]) -> String {
    let mut out = String::from("layer,head,kind,val_accuracy\n");
    for s in scores {
        writeln!(
            out,
            "{},{},{},{}",
            s.head.layer,
            s.head.head,
            s.probe.kind().as_str(),
            s.val_accuracy
        )
        .unwrap();
    }
    out
}

/// Parses the table written by [`head_scores_csv`] into (head, kind, accuracy).
pub fn parse_head_scores_csv(text: &str) -> Result<Vec<(HeadId, ProbeKind, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidConfig(format!("head score table line {}: {line:?}", i + 1));
        let [layer, head, kind, acc] = fields[..] else {
            return Err(bad());
        };
        out.push((
            HeadId::new(layer.parse().map_err(|_| bad())?, head.parse().map_err(|_| bad())?),
            kind.parse()?,
            acc.parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

/// Serializes trained probes into the tensor container format.
pub fn probes_to_container(scores: &[HeadScore]) -> TensorContainer {
    let entries: Vec<serde_json::Value> = scores
        .iter()
        .map(|s| {
            serde_json::json!({
                "layer": s.head.layer,
                "head": s.head.head,
                "kind": s.probe.kind(),
                "val_accuracy": s.val_accuracy,
            })
        })
        .collect();
    let mut c = TensorContainer::new(serde_json::json!({ "kind": "probes", "entries": entries }));
    let f32s = |it: &mut dyn Iterator<Item = &f64>| it.map(|&v| v as f32).collect::<Vec<_>>();
    for s in scores {
        let p = format!("probe.{}.{}", s.head.layer, s.head.head);
        match &s.probe {
            ProbeParams::Linear { weights, bias } => {
                c.push(TensorEntry::new(format!("{p}.weights"), vec![weights.len()], f32s(&mut weights.iter())));
                c.push(TensorEntry::new(format!("{p}.bias"), vec![1], vec![*bias as f32]));
            }
            ProbeParams::Mlp {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            } => {
                let (h, d) = hidden_weights.dim();
                c.push(TensorEntry::new(format!("{p}.hidden_weights"), vec![h, d], f32s(&mut hidden_weights.iter())));
                c.push(TensorEntry::new(format!("{p}.hidden_bias"), vec![h], f32s(&mut hidden_bias.iter())));
                c.push(TensorEntry::new(format!("{p}.output_weights"), vec![h], f32s(&mut output_weights.iter())));
                c.push(TensorEntry::new(format!("{p}.output_bias"), vec![1], vec![*output_bias as f32]));
            }
        }
    }
    c
}
