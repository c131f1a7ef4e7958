mod common;

use common::inputs::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use steerprobe_core::eval::drift;
use steerprobe_core::{HeadId, InterventionScope};

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn hand_model_matches_dense_oracle() {
    let model = hand_model();
    let c = model.to_container();
    let tokens = [0u32, 2, 1, 3];
    let plan = hand_plan();
    let ref_plan = RefPlan {
        offsets: vec![((0, 0), vec![2.0, 0.0])],
        last_only: false,
    };
    let base = model.forward(&tokens, None, None).unwrap();
    let steered = model.forward(&tokens, Some(&plan), None).unwrap();
    let oracle_base = reference_forward(&c, &tokens, None);
    let oracle_steered = reference_forward(&c, &tokens, Some(&ref_plan));
    let got: Vec<f64> = base.logits.iter().copied().collect();
    assert!(max_rel_err(&got, &flat(&oracle_base.logits), 1e-12) < 1e-10);
    let got: Vec<f64> = steered.logits.iter().copied().collect();
    assert!(max_rel_err(&got, &flat(&oracle_steered.logits), 1e-12) < 1e-10);
    assert!(max_rel_err(&flat(&oracle_base.logits), &flat(&oracle_steered.logits), 1e-12) > 1e-3);
}

#[test]
fn random_models_match_dense_oracle() {
    for seed in 0..12 {
        let (model, tokens, mut rng) = random_case(seed);
        let cfg = *model.config();
        let alpha = rng.random_range(0.5..3.0);
        let plan = random_plan(&mut rng, &cfg, alpha);
        let plan = if seed % 2 == 0 {
            plan
        } else {
            plan.with_scope(InterventionScope::LastPosition)
        };
        let c = model.to_container();
        let heads: Vec<HeadId> = cfg.heads();
        let out = model.forward(&tokens, Some(&plan), Some(&heads)).unwrap();
        let oracle = reference_forward(&c, &tokens, Some(&ref_plan_from(&plan)));
        let got: Vec<f64> = out.logits.iter().copied().collect();
        let err = max_rel_err(&got, &flat(&oracle.logits), 1e-6);
        assert!(err < 1e-10, "seed {seed}: {err}");
        let captured = out.captured.unwrap();
        for ((l, h), z) in &oracle.heads {
            let mine: Vec<f64> = captured.get(HeadId::new(*l, *h)).unwrap().iter().copied().collect();
            assert!(max_rel_err(&mine, &flat(z), 1e-6) < 1e-10);
        }
    }
}

#[test]
fn alpha_zero_is_bit_identical_and_driftless() {
    for seed in 0..20 {
        let (model, tokens, mut rng) = random_case(100 + seed);
        let plan = random_plan(&mut rng, &model.config().clone(), 0.0);
        let base = model.forward(&tokens, None, None).unwrap();
        let zero = model.forward(&tokens, Some(&plan), None).unwrap();
        assert!(base.logits.iter().zip(zero.logits.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        if tokens.len() >= 2 {
            let d = drift(&model, Some(&plan), std::slice::from_ref(&tokens), tokens.len() - 1).unwrap();
            assert!(d.kl.abs() <= 1e-12);
        }
    }
}

#[test]
fn capture_does_not_change_logits() {
    let (model, tokens, mut rng) = random_case(7);
    let cfg = *model.config();
    let plan = random_plan(&mut rng, &cfg, 1.5);
    let heads: Vec<HeadId> = cfg.heads();
    let plain = model.forward(&tokens, Some(&plan), None).unwrap();
    let captured = model.forward(&tokens, Some(&plan), Some(&heads)).unwrap();
    assert_eq!(plain.logits, captured.logits);
}

#[test]
fn save_and_load_give_identical_logits() {
    let (model, tokens, _) = random_case(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let loaded = steerprobe_core::load_model(&path).unwrap();
    assert_eq!(loaded, model);
    let a = model.forward(&tokens, None, None).unwrap().logits;
    let b = loaded.forward(&tokens, None, None).unwrap().logits;
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn injected_offset_is_alpha_sigma_theta(seed in 0u64..1000, alpha in 0.01f64..5.0) {
        let (model, tokens, mut rng) = random_case(seed);
        let cfg = *model.config();
        let plan = random_plan(&mut rng, &cfg, alpha);
        let heads: Vec<HeadId> = cfg.heads();
        let out = model.forward_traced(&tokens, Some(&plan), &heads).unwrap();
        let (pre, post) = (out.captured.unwrap(), out.injected.unwrap());
        for id in &heads {
            let diff = post.get(*id).unwrap() - pre.get(*id).unwrap();
            let expected = plan.entries().iter().find(|e| e.head == *id)
                .map(|e| e.direction.mapv(|d| alpha * e.sigma * d));
            for row in diff.rows() {
                match &expected {
                    Some(off) => for (a, b) in row.iter().zip(off.iter()) {
                        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                    },
                    None => prop_assert!(row.iter().all(|v| *v == 0.0)),
                }
            }
        }
    }

    #[test]
    fn captured_activations_ignore_the_plan_at_the_first_layer(seed in 0u64..1000, alpha in 0.1f64..5.0) {
        let (model, tokens, mut rng) = random_case(seed);
        let cfg = *model.config();
        let plan = random_plan(&mut rng, &cfg, alpha);
        let first: Vec<HeadId> = (0..cfg.n_heads).map(|h| HeadId::new(0, h)).collect();
        let with = model.forward(&tokens, Some(&plan), Some(&first)).unwrap().captured.unwrap();
        let without = model.forward(&tokens, None, Some(&first)).unwrap().captured.unwrap();
        prop_assert_eq!(with, without);
    }
}
