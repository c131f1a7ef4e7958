mod common;

use common::*;
use steerprobe_core::capture::{capture_windows, render_pair};
use steerprobe_core::{ByteTokenizer, CaptureConfig, HeadId, Model, ModelConfig, QaPair};

fn setup() -> (Model, Vec<QaPair>, CaptureConfig) {
    let model = Model::random(ModelConfig::new(2, 2, 3, 258, 64).unwrap(), 5).unwrap();
    let pairs = vec![
        QaPair {
            id: "a".into(),
            question: "Is ice cold?".into(),
            answer: "Yes.".into(),
            label: true,
        },
        QaPair {
            id: "b".into(),
            question: "Is fire cold?".into(),
            answer: "Yes, very.".into(),
            label: false,
        },
        QaPair {
            id: "c".into(),
            question: "2+2?".into(),
            answer: "4".into(),
            label: true,
        },
    ];
    (model, pairs, CaptureConfig::default())
}

#[test]
fn window_one_is_the_last_token() {
    let (model, pairs, cfg) = setup();
    let heads = model.config().heads();
    let set = &capture_windows(&model, &ByteTokenizer, &pairs, &cfg, &[1]).unwrap()[0];
    for (i, pair) in pairs.iter().enumerate() {
        let tokens = render_pair(&ByteTokenizer, pair, &cfg, 64).unwrap();
        let out = model.forward(&tokens, None, Some(&heads)).unwrap().captured.unwrap();
        for &id in &heads {
            let z = out.get(id).unwrap();
            let last = z.row(z.nrows() - 1);
            assert_eq!(set.head(id).unwrap().row(i), last);
        }
    }
}

#[test]
fn windows_match_direct_mean_and_clamp() {
    let (model, pairs, cfg) = setup();
    let c = model.to_container();
    let windows = [2, 3, 500];
    let sets = capture_windows(&model, &ByteTokenizer, &pairs, &cfg, &windows).unwrap();
    for (i, pair) in pairs.iter().enumerate() {
        let (tokens, _, _) = render_bytes("", &cfg.template, &pair.question, &pair.answer);
        let oracle = reference_forward(&c, &tokens, None);
        for ((l, h), z) in &oracle.heads {
            for (set, &w) in sets.iter().zip(&windows) {
                let expected = window_mean(z, w);
                let got: Vec<f64> = set.head(HeadId::new(*l, *h)).unwrap().row(i).to_vec();
                assert!(max_rel_err(&got, &expected, 1e-9) < 1e-12, "window {w}");
            }
        }
    }
    assert_eq!(sets[2].window(), 500);
}

#[test]
fn activation_sets_round_trip() {
    let (model, pairs, cfg) = setup();
    let set = capture_windows(&model, &ByteTokenizer, &pairs, &cfg, &[4]).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acts.bin");
    set.save(&path).unwrap();
    let back = steerprobe_core::HeadActivationSet::load(&path).unwrap();
    assert_eq!(back.labels(), set.labels());
    assert_eq!(back.pair_ids(), set.pair_ids());
    for id in set.heads() {
        let a = set.head(id).unwrap();
        let b = back.head(id).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + x.abs())));
    }
}

#[test]
fn over_long_pair_is_named() {
    let (model, mut pairs, cfg) = setup();
    pairs[1].answer = "x".repeat(80);
    let err = capture_windows(&model, &ByteTokenizer, &pairs, &cfg, &[1]).unwrap_err();
    assert!(err.to_string().contains('b'), "{err}");
}
