use dladan::corpus::{generate_synthetic, SynthConfig};
use dladan::error::Error;
use dladan::model::{encode_dataset, Ablation, ModelState, Phase};
use dladan::parallel::Parallelism;
use dladan::pipeline::{prepare, train_model, PreparedData};
use dladan::prior_graph::build_partition;
use dladan::training::checkpoint::read_tensors;
use dladan::training::{train, Checkpoint, StepEvent, TrainConfig, TrainOptions};

fn small(epochs: usize, ablation: &str) -> (PreparedData, TrainConfig) {
    let raw = generate_synthetic(&SynthConfig {
        num_communities: 2,
        articles_per_community: 2,
        cases_per_head_article: 20,
        rng_seed: 4,
        ..Default::default()
    });
    let mut cfg = TrainConfig::default();
    cfg.apply_overrides(&[
        "d_w=6".to_string(),
        "d_s=6".into(),
        "d_l=6".into(),
        "d_f=6".into(),
        "embedding_dim=6".into(),
        "min_label_count=1".into(),
        "batch_size=8".into(),
        format!("epochs={epochs}"),
        format!("ablation={ablation}"),
    ])
    .unwrap();
    let data = prepare(&raw, &cfg).unwrap();
    (data, cfg)
}

fn fresh_state(data: &PreparedData, cfg: &TrainConfig) -> ModelState {
    let part = build_partition(&data.train.articles, cfg.ablation.threshold(cfg.theta)).unwrap();
    ModelState::new(cfg.model_config(&data.vocab, &data.train), &data.vocab, &data.train.articles, part).unwrap()
}

fn run(
    data: &PreparedData,
    cfg: &TrainConfig,
    state: ModelState,
    mode: Parallelism,
) -> (dladan::Result<dladan::training::TrainOutcome>, Vec<StepEvent>) {
    let train_ex = encode_dataset(&data.train, &data.vocab);
    let val_ex = encode_dataset(&data.validation, &data.vocab);
    let mut events = Vec::new();
    let opts = TrainOptions {
        mode,
        ..Default::default()
    };
    let out = train(state, cfg, &train_ex, &val_ex, &opts, &mut |e: &StepEvent| events.push(e.clone()), &mut |_| {});
    (out, events)
}

#[test]
fn step_order_is_forward_optimizer_momentum() {
    let (data, cfg) = small(2, "full");
    let (out, events) = run(&data, &cfg, fresh_state(&data, &cfg), Parallelism::Sequential);
    let out = out.unwrap();
    let n_mem = out.best.memories.len();
    assert_eq!(n_mem, 2);

    let init_at = events
        .iter()
        .position(|e| matches!(e, StepEvent::MemoryInit { .. }))
        .unwrap();
    // Warm-up: forward then optimizer, never momentum.
    for pair in events[..init_at].chunks(2) {
        match pair {
            [StepEvent::Forward { step: a, phase: Phase::Warmup }, StepEvent::OptimizerStep { step: b }] => {
                assert_eq!(a, b)
            }
            other => panic!("unexpected warm-up events {other:?}"),
        }
    }
    let main = &events[init_at + n_mem..];
    assert!(!main.is_empty());
    for unit in main.chunks(2 + n_mem) {
        let StepEvent::Forward { step, phase: Phase::Main } = unit[0] else {
            panic!("expected forward, got {:?}", unit[0]);
        };
        assert_eq!(unit[1], StepEvent::OptimizerStep { step });
        for e in &unit[2..] {
            assert!(matches!(e, StepEvent::MomentumUpdate { step: s, .. } if *s == step));
        }
    }
    assert_eq!(out.steps, events.iter().filter(|e| matches!(e, StepEvent::OptimizerStep { .. })).count());
}

#[test]
fn zero_epochs_returns_warmup_state_with_initialized_memory() {
    let (data, cfg) = small(0, "full");
    let (out, _) = run(&data, &cfg, fresh_state(&data, &cfg), Parallelism::Sequential);
    let out = out.unwrap();
    assert_eq!(out.best_epoch, None);
    for m in &out.best.memories {
        assert!(m.initialized);
        let w = out.best.store.get(out.best.classifier_for(m.task).w);
        assert_eq!(m.rows.max_abs_diff(&w.transpose()), 0.0);
    }
}

#[test]
fn overflowing_logits_report_divergence() {
    let (data, cfg) = small(1, "full");
    let mut state = fresh_state(&data, &cfg);
    // exp(1000) overflows the temperature, so the logits become infinite.
    let t = state.params.classifiers[2].log_tau;
    state.store.get_mut(t).data_mut()[0] = 1000.0;
    let (out, _) = run(&data, &cfg, state, Parallelism::Sequential);
    match out {
        Err(Error::Diverged { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.steps)),
    }
}

#[test]
fn training_is_deterministic_across_modes() {
    let (data, cfg) = small(2, "full");
    let (a, _) = run(&data, &cfg, fresh_state(&data, &cfg), Parallelism::Sequential);
    let (b, _) = run(&data, &cfg, fresh_state(&data, &cfg), Parallelism::Parallel);
    let (a, b) = (a.unwrap(), b.unwrap());
    assert_eq!(a.best.named_tensors(), b.best.named_tensors());
    assert_eq!(a.best_metric, b.best_metric);
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let (data, cfg) = small(1, "full");
    let ck = train_model(&data, &cfg, &TrainOptions::default(), &mut |_| {}).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let loaded = Checkpoint::load(dir.path()).unwrap();
    let facts: Vec<_> = encode_dataset(&data.test, &data.vocab).into_iter().map(|e| e.fact).collect();
    let p0 = ck.state.predict(&facts, Parallelism::Sequential).unwrap();
    let p1 = loaded.state.predict(&facts, Parallelism::Sequential).unwrap();
    assert_eq!(p0, p1);
    assert_eq!(loaded.manifest(), ck.manifest());
}

#[test]
fn no_all_checkpoint_has_no_memory_tensors() {
    let (data, cfg) = small(1, "no_All");
    assert_eq!(cfg.ablation, Ablation::NoAll);
    let ck = train_model(&data, &cfg, &TrainOptions::default(), &mut |_| {}).unwrap().checkpoint;
    assert!(ck.state.memories.is_empty());
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let names: Vec<String> = read_tensors(&dir.path().join("tensors.bin"))
        .unwrap()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    assert!(names.iter().all(|n| !n.starts_with("memory.")), "{names:?}");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("no_All"), "{manifest}");
    let loaded = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.config.ablation, Ablation::NoAll);
}
