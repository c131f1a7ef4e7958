mod common;

use std::collections::HashMap;
use std::path::Path;

use common::inputs::*;
use common::*;
use ndarray::Array1;
use steerprobe_core::eval::{drift, mc1, mc2, Scorer};
use steerprobe_core::{
    load_mc_dataset, ByteTokenizer, CaptureConfig, DirectionSpec, HeadId, InterventionPlan, McFormat, McQuestion,
    Model, ModelConfig,
};

fn toy_model() -> Model {
    Model::random(ModelConfig::new(2, 2, 4, 258, 64).unwrap(), 17).unwrap()
}

#[test]
fn mc_scores_match_brute_force() {
    let model = toy_model();
    let c = model.to_container();
    let cfg = CaptureConfig::default();
    let scorer = Scorer::new(&model, &ByteTokenizer, &cfg);
    let plan = InterventionPlan::new(
        vec![DirectionSpec::new(HeadId::new(1, 0), Array1::from(vec![0.5, 0.5, 0.5, 0.5]), 0.8).unwrap()],
        1.5,
    )
    .unwrap();
    let qs = toy_questions();
    for p in [None, Some(&plan)] {
        let rp = p.map(ref_plan_from);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for q in &qs {
            let s = |a: &String| oracle_score(&c, "", &cfg.template, &q.question, a, rp.as_ref());
            let cs: Vec<f64> = q.correct.iter().map(s).collect();
            let is: Vec<f64> = q.incorrect.iter().map(s).collect();
            m1 += brute_mc1(&cs, &is);
            m2 += brute_mc2(&cs, &is);
        }
        let (m1, m2) = (m1 / 10.0, m2 / 10.0);
        assert_eq!(mc1(&scorer, p, &qs).unwrap(), m1);
        assert!((mc2(&scorer, p, &qs).unwrap() - m2).abs() <= 1e-12);
    }
}

#[test]
fn tied_answers_lose_mc1() {
    let model = toy_model();
    let cfg = CaptureConfig::default();
    let scorer = Scorer::new(&model, &ByteTokenizer, &cfg);
    let q = McQuestion {
        id: "t".into(),
        question: "same?".into(),
        correct: vec!["same".into()],
        incorrect: vec!["same".into()],
    };
    assert_eq!(mc1(&scorer, None, std::slice::from_ref(&q)).unwrap(), 0.0);
    assert!((mc2(&scorer, None, &[q]).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn uniform_logits_give_log_vocab_cross_entropy() {
    let cfg = ModelConfig::new(1, 1, 2, 11, 16).unwrap();
    let model = Model::from_named(cfg, HashMap::new()).unwrap();
    let corpus = vec![vec![0u32, 3, 5, 7, 9, 10], vec![1, 2, 3]];
    let d = drift(&model, None, &corpus, 15).unwrap();
    assert!((d.ce - (11f64).ln()).abs() <= 1e-9);
    assert_eq!(d.kl, 0.0);
}

#[test]
fn drift_matches_oracle() {
    let model = Model::random(ModelConfig::new(2, 2, 3, 9, 12).unwrap(), 3).unwrap();
    let c = model.to_container();
    let plan = InterventionPlan::new(
        vec![DirectionSpec::new(HeadId::new(0, 1), Array1::from(vec![0.6, 0.0, 0.8]), 1.3).unwrap()],
        2.0,
    )
    .unwrap();
    let corpus = vec![vec![0u32, 4, 2, 8, 1, 1, 3], vec![5, 6, 7, 0]];
    let rp = ref_plan_from(&plan);
    let (mut kl, mut ce, mut n) = (0.0, 0.0, 0.0);
    for seq in &corpus {
        let b = reference_forward(&c, seq, None).logits;
        let s = reference_forward(&c, seq, Some(&rp)).logits;
        for t in 0..seq.len() - 1 {
            let (lb, ls) = (log_softmax(&b[t]), log_softmax(&s[t]));
            kl += lb.iter().zip(&ls).map(|(x, y)| x.exp() * (x - y)).sum::<f64>();
            ce -= ls[seq[t + 1] as usize];
            n += 1.0;
        }
    }
    let d = drift(&model, Some(&plan), &corpus, 11).unwrap();
    assert!((d.kl - kl / n).abs() <= 1e-10 * (kl / n).abs().max(1e-12));
    assert!((d.ce - ce / n).abs() <= 1e-10 * (ce / n));
}

#[test]
fn truthfulqa_sample_loads_and_scores() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/truthfulqa_sample.json");
    let qs = load_mc_dataset(&path, McFormat::TruthfulqaJson).unwrap();
    assert_eq!(qs.len(), 3);
    assert_eq!(qs[0].best_correct(), "It passes through your digestive system.");
    assert_eq!(qs[0].correct.len(), 2);
    assert_eq!(qs[0].incorrect.len(), 2);
    assert_eq!(qs[1].incorrect, vec!["Yes, easily.", "Yes, from the Moon."]);
    let model = Model::random(ModelConfig::new(1, 2, 4, 258, 96).unwrap(), 1).unwrap();
    let cfg = CaptureConfig::default();
    let scorer = Scorer::new(&model, &ByteTokenizer, &cfg);
    let v = mc2(&scorer, None, &qs).unwrap();
    assert!((0.0..=1.0).contains(&v));
}
