//! Deterministic inputs shared by the oracle tests and the acceptance suite.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use steerprobe_core::{DirectionSpec, HeadId, InterventionPlan, McQuestion, Model, ModelConfig};

/// One layer, one head, head_dim 2, every weight exactly representable.
pub fn hand_model() -> Model {
    let cfg = ModelConfig::new(1, 1, 2, 4, 4).unwrap();
    let mut t: HashMap<String, Vec<f32>> = HashMap::new();
    t.insert("token_embedding".into(), vec![1.0, 0.0, 0.0, 1.0, 0.5, -0.5, -1.0, 0.25]);
    t.insert("position_embedding".into(), vec![0.0, 0.0, 0.125, 0.0, 0.0, 0.125, -0.125, 0.0]);
    t.insert("layers.0.attn_norm".into(), vec![1.0, 1.0]);
    t.insert("layers.0.heads.0.query".into(), vec![1.0, 0.5, -0.5, 1.0]);
    t.insert("layers.0.heads.0.key".into(), vec![0.5, 0.0, 0.0, 2.0]);
    t.insert("layers.0.heads.0.value".into(), vec![1.0, -1.0, 0.25, 0.75]);
    t.insert("layers.0.heads.0.output".into(), vec![0.5, 0.25, -0.25, 1.0]);
    t.insert("layers.0.attn_output_bias".into(), vec![0.0625, -0.0625]);
    t.insert("layers.0.ffn_norm".into(), vec![1.0, 0.5]);
    t.insert("layers.0.ffn_up".into(), (0..16).map(|i| (i as f32 - 8.0) / 8.0).collect());
    t.insert("layers.0.ffn_up_bias".into(), (0..8).map(|i| i as f32 / 16.0).collect());
    t.insert("layers.0.ffn_down".into(), (0..16).map(|i| ((i * 5) % 7) as f32 / 8.0 - 0.375).collect());
    t.insert("layers.0.ffn_down_bias".into(), vec![0.0, 0.125]);
    t.insert("final_norm".into(), vec![1.0, 1.0]);
    t.insert("unembedding".into(), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5]);
    Model::from_named(cfg, t).unwrap()
}

/// theta = (1, 0), sigma = 1, alpha = 2 on the hand model's only head.
pub fn hand_plan() -> InterventionPlan {
    InterventionPlan::new(
        vec![DirectionSpec::new(HeadId::new(0, 0), Array1::from(vec![1.0, 0.0]), 1.0).unwrap()],
        2.0,
    )
    .unwrap()
}

pub fn random_plan(rng: &mut ChaCha8Rng, cfg: &ModelConfig, alpha: f64) -> InterventionPlan {
    let mut heads = cfg.heads();
    let k = rng.random_range(1..=heads.len());
    let mut entries = Vec::new();
    for _ in 0..k {
        let head = heads.remove(rng.random_range(0..heads.len()));
        let raw: Vec<f64> = (0..cfg.head_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir = Array1::from(raw.iter().map(|v| v / norm).collect::<Vec<_>>());
        entries.push(DirectionSpec::new(head, dir, rng.random_range(0.1..2.0)).unwrap());
    }
    InterventionPlan::new(entries, alpha).unwrap()
}

/// A random tiny model, a random prompt for it, and the RNG for further draws.
pub fn random_case(seed: u64) -> (Model, Vec<u32>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::new(
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(5..=12),
        10,
    )
    .unwrap();
    let model = Model::random(cfg, seed).unwrap();
    let len = rng.random_range(1..=10);
    let tokens = (0..len).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect();
    (model, tokens, rng)
}

pub fn toy_questions() -> Vec<McQuestion> {
    let answers = ["yes", "no", "maybe", "4", "blue", "never", "always", "x", "ok", "cold"];
    (0..10)
        .map(|i| McQuestion {
            id: format!("q{i}"),
            question: format!("question {i}?"),
            correct: vec![answers[i].into(), answers[(i + 3) % 10].into()],
            incorrect: (1..=1 + i % 3).map(|j| answers[(i + 4 + j) % 10].to_string()).collect(),
        })
        .collect()
}

/// Two well-separated Gaussian classes along the first of four dims.
pub fn separable(seed: u64, n: usize) -> (Array2<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let y = i % 2 == 0;
        rows.push(if y { 3.0 } else { -3.0 } + noise.sample(&mut rng));
        for _ in 0..3 {
            rows.push(noise.sample(&mut rng));
        }
        ys.push(y);
    }
    (Array2::from_shape_vec((n, 4), rows).unwrap(), ys)
}

/// Four balanced clusters at (+-1, +-1); the label is the sign of x*y.
pub fn xor(seed: u64, per_cluster: usize) -> (Vec<[f64; 2]>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..per_cluster {
        for (cx, cy) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            xs.push([cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)]);
            ys.push(cx * cy > 0.0);
        }
    }
    (xs, ys)
}

pub fn points_to_array(pts: &[[f64; 2]]) -> Array2<f64> {
    Array2::from_shape_vec((pts.len(), 2), pts.iter().flatten().copied().collect()).unwrap()
}
