use hierstream::detector::{run_stream, DetectorConfig};
use hierstream::metrics::hungarian_f1;
use hierstream::model::{AnnotationSet, HierarchyLevel};
use hierstream::scoring::{frame_targets, infer_scores, train_scorer, FeatureSequence, ScorerConfig, ScorerModel};
use hierstream::simulator::{gen_annotations, gen_features, SimConfig};

fn data(seed: u64, videos: usize) -> (Vec<AnnotationSet>, Vec<FeatureSequence>) {
    let cfg = SimConfig { seed, videos, duration_range: (40.0, 60.0), steps_range: (1, 2), fps: 5.0, ..Default::default() };
    let anns = gen_annotations(&cfg).unwrap();
    let feats = anns.iter().enumerate().map(|(i, a)| gen_features(a, &cfg, i).unwrap()).collect();
    (anns, feats)
}

fn mean_loss(model: &ScorerModel, anns: &[AnnotationSet], feats: &[FeatureSequence], cfg: &ScorerConfig) -> f64 {
    let (mut total, mut n) = (0.0, 0);
    for (a, f) in anns.iter().zip(feats) {
        let t = frame_targets(&f.timestamps, a, &cfg.histogram);
        total += model.loss(&f.rows, &t, &model.initial_hidden(), &cfg.loss_weights).unwrap();
        n += f.rows.len();
    }
    total / n as f64
}

fn mean_f1(model: &ScorerModel, anns: &[AnnotationSet], feats: &[FeatureSequence]) -> f64 {
    let mut total = 0.0;
    for (a, f) in anns.iter().zip(feats) {
        let em = run_stream(&infer_scores(model, f).unwrap(), &DetectorConfig::default()).unwrap();
        for level in [HierarchyLevel::Substep, HierarchyLevel::Step] {
            let pred: Vec<_> = em.iter().filter(|e| e.instance.level == level).map(|e| e.instance.interval).collect();
            total += hungarian_f1(&a.intervals(level), &pred, 0.5).0 / 2.0;
        }
    }
    total / anns.len() as f64
}

#[test]
fn trained_scorer_beats_untrained() {
    let cfg = ScorerConfig {
        hidden_dim: 16,
        recurrent_layers: 1,
        learning_rate: 1e-2,
        epochs: 150,
        batch_size: 4,
        bptt_window: 32,
        ..Default::default()
    };
    let (train_a, train_f) = data(1, 8);
    let (test_a, test_f) = data(2, 4);
    let out = train_scorer(&train_f, &train_a, &cfg, 0).unwrap();
    assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0], "{:?}", out.loss_trace);

    let untrained = ScorerModel::random(cfg.dims(), cfg.histogram, 0).unwrap();
    let (lt, lu) = (mean_loss(&out.model, &test_a, &test_f, &cfg), mean_loss(&untrained, &test_a, &test_f, &cfg));
    assert!(lt < 0.8 * lu, "held-out loss {lt} vs untrained {lu}");
    let (ft, fu) = (mean_f1(&out.model, &test_a, &test_f), mean_f1(&untrained, &test_a, &test_f));
    assert!(ft > fu, "held-out F1 {ft} vs untrained {fu}");
}

#[test]
fn training_is_deterministic() {
    let cfg = ScorerConfig { hidden_dim: 4, recurrent_layers: 2, epochs: 2, ..Default::default() };
    let (a, f) = data(3, 3);
    let x = train_scorer(&f, &a, &cfg, 9).unwrap();
    let y = train_scorer(&f, &a, &cfg, 9).unwrap();
    assert_eq!(x.model, y.model);
    assert_eq!(x.loss_trace, y.loss_trace);
}

#[test]
fn saved_model_round_trips_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    assert_eq!(hierstream::cli::run(["hierstream", "simulate", "--out", &p("sim"), "--videos", "2", "--fps", "2"]), 0);
    let code = hierstream::cli::run([
        "hierstream",
        "train",
        "--annotations",
        &p("sim/annotations.jsonl"),
        "--features",
        &p("sim/features"),
        "--out",
        &p("model.json"),
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 0);
    let code = hierstream::cli::run([
        "hierstream",
        "detect",
        "--model",
        &p("model.json"),
        "--features",
        &p("sim/features"),
        "--out",
        &p("em.jsonl"),
    ]);
    assert_eq!(code, 0);

    // a model whose parameter vector was truncated is rejected as data
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("model.json")).unwrap()).unwrap();
    v["model"]["params"].as_array_mut().unwrap().pop();
    std::fs::write(p("broken.json"), v.to_string()).unwrap();
    let code = hierstream::cli::run([
        "hierstream",
        "detect",
        "--model",
        &p("broken.json"),
        "--features",
        &p("sim/features"),
        "--out",
        &p("em2.jsonl"),
    ]);
    assert_eq!(code, 2);
}
