use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dladan::corpus::{generate_synthetic, SynthConfig};
use dladan::model::{encode_dataset, Example, ModelState, Phase};
use dladan::parallel::Parallelism;
use dladan::pipeline::prepare;
use dladan::prior_graph::{build_partition, Threshold};
use dladan::training::{batch_gradients, warmup_init, LossWeights, TrainConfig};

fn setup(dim: usize) -> (ModelState, Vec<Example>) {
    let raw = generate_synthetic(&SynthConfig {
        cases_per_head_article: 40,
        rng_seed: 9,
        ..Default::default()
    });
    let mut cfg = TrainConfig::default();
    let d = dim.to_string();
    cfg.apply_overrides(&[
        format!("d_w={d}"),
        format!("d_s={d}"),
        format!("d_l={d}"),
        format!("d_f={d}"),
        format!("embedding_dim={d}"),
        "min_label_count=1".into(),
    ])
    .unwrap();
    let data = prepare(&raw, &cfg).unwrap();
    let partition = build_partition(&data.train.articles, Threshold::Value(cfg.theta)).unwrap();
    let mut state = ModelState::new(
        cfg.model_config(&data.vocab, &data.train),
        &data.vocab,
        &data.train.articles,
        partition,
    )
    .unwrap();
    for k in 0..state.memories.len() {
        let w = state.store.get(state.classifier_for(state.memories[k].task).w).clone();
        warmup_init(&mut state.memories[k], &w, 0, 0).unwrap();
    }
    let examples = encode_dataset(&data.train, &data.vocab);
    (state, examples)
}

fn bench(c: &mut Criterion) {
    dladan::parallel::init_threads_from_env();
    let weights = LossWeights {
        lambda_c: 0.1,
        lambda_m: 0.1,
    };
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for dim in [16, 64] {
        let (state, examples) = setup(dim);
        let batch: Vec<Example> = examples.iter().take(32).cloned().collect();
        for (label, mode) in [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, dim), &batch, |b, batch| {
                b.iter(|| batch_gradients(&state, batch, Phase::Main, weights, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
