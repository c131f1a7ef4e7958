mod common;

use common::inputs::*;
use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use steerprobe_core::probe::{probe_gradient, train_probe, ProbeKind, ProbeParams, ProbeTrainConfig};
use steerprobe_core::HeadId;

/// Oracle logit from the parameter fields, with plain loops.
fn oracle_logit(p: &ProbeParams, x: &[f64]) -> f64 {
    match p {
        ProbeParams::Linear { weights, bias } => dot(weights.as_slice().unwrap(), x) + bias,
        ProbeParams::Mlp {
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        } => {
            let mut z = *output_bias;
            for j in 0..hidden_bias.len() {
                let pre: f64 = (0..x.len()).map(|i| hidden_weights[[j, i]] * x[i]).sum::<f64>() + hidden_bias[j];
                z += output_weights[j] * pre.tanh();
            }
            z
        }
    }
}

fn oracle_loss(p: &ProbeParams, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    let logits: Vec<f64> = xs.iter().map(|x| oracle_logit(p, x)).collect();
    bce(&logits, ys)
}

fn random_instance(rng: &mut ChaCha8Rng, kind: ProbeKind) -> (ProbeParams, Vec<Vec<f64>>, Vec<bool>) {
    let d = rng.random_range(1..=5);
    let hidden = rng.random_range(1..=4);
    let n = rng.random_range(2..=12);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let zeros = ProbeParams::zeros(kind, d, hidden);
    let flat: Vec<f64> = zeros.to_flat().iter().map(|_| normal.sample(rng)).collect();
    let params = zeros.with_flat(&flat).unwrap();
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal.sample(rng)).collect()).collect();
    let mut ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    ys[0] = true;
    ys[1] = false;
    (params, xs, ys)
}

fn to_array(xs: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_vec((xs.len(), xs[0].len()), xs.iter().flatten().copied().collect()).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..50 {
        let kind = if i % 2 == 0 { ProbeKind::Linear } else { ProbeKind::Mlp };
        let (params, xs, ys) = random_instance(&mut rng, kind);
        let analytic = probe_gradient(&params, to_array(&xs).view(), &ys).unwrap().to_flat();
        let base = params.to_flat();
        let h = 1e-5;
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += h;
            let mut minus = base.clone();
            minus[j] -= h;
            let fd = (oracle_loss(&params.with_flat(&plus).unwrap(), &xs, &ys)
                - oracle_loss(&params.with_flat(&minus).unwrap(), &xs, &ys))
                / (2.0 * h);
            let err = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-4, "instance {i} param {j}: {} vs {fd}", analytic[j]);
        }
    }
}

#[test]
fn linear_probe_separates_the_separable_fixture() {
    let (xs, ys) = separable(1, 200);
    let s = train_probe(HeadId::new(0, 0), xs.view(), &ys, &ProbeTrainConfig::default(), ProbeKind::Linear).unwrap();
    assert_eq!(s.val_accuracy, 1.0);
}

#[test]
fn xor_needs_the_nonlinear_probe() {
    let (pts, ys) = xor(2, 50);
    assert!(best_linear_accuracy_2d(&pts, &ys, 360) <= 0.76);
    let xs = points_to_array(&pts);
    let cfg = ProbeTrainConfig {
        hidden_dim: Some(8),
        max_epochs: 3000,
        ..ProbeTrainConfig::default()
    };
    let mlp = train_probe(HeadId::new(0, 0), xs.view(), &ys, &cfg, ProbeKind::Mlp).unwrap();
    let linear = train_probe(HeadId::new(0, 0), xs.view(), &ys, &cfg, ProbeKind::Linear).unwrap();
    assert!(mlp.val_accuracy >= 0.95, "mlp {}", mlp.val_accuracy);
    assert!(linear.val_accuracy <= 0.6, "linear {}", linear.val_accuracy);
}

#[test]
fn training_is_seed_deterministic() {
    let (xs, ys) = separable(3, 60);
    let cfg = ProbeTrainConfig {
        seed: 9,
        ..ProbeTrainConfig::default()
    };
    let a = train_probe(HeadId::new(1, 2), xs.view(), &ys, &cfg, ProbeKind::Mlp).unwrap();
    let b = train_probe(HeadId::new(1, 2), xs.view(), &ys, &cfg, ProbeKind::Mlp).unwrap();
    assert_eq!(a, b);
}
