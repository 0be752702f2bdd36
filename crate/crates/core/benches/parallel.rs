use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syngrpo_core::env::dataset::{sample_split, Split};
use syngrpo_core::env::{policy_rollout, scene_features, EnvConfig, ResponseFormat};
use syngrpo_core::grpo::{grpo_loss_and_grad, group_advantages, GroupSample, LossConfig};
use syngrpo_core::metrics::{coco_thresholds, mean_average_precision_with, DetectionSet, ImageDetections, ScoredBox};
use syngrpo_core::policy::PolicyParams;
use syngrpo_core::{BBox, ClassId, Exec, LabeledBox};

fn batch(n: usize) -> (PolicyParams, Vec<GroupSample>) {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = cfg.policy_shape();
    let data = (0..shape.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let params = PolicyParams::from_vec(shape, data).unwrap();
    let schema = cfg.schema(ResponseFormat::Synthesis);
    let samples = sample_split(&cfg, Split::Train, 0, n)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let obs = scene_features(s);
            let r = policy_rollout(&params, &params, &obs, &schema, 6, i as u64, i).unwrap();
            let rewards: Vec<f64> = (0..6).map(|_| rng.random()).collect();
            let advantages = group_advantages(&rewards).unwrap().advantages;
            GroupSample { obs, responses: r.records, advantages }
        })
        .collect();
    (params, samples)
}

fn detections(images: usize) -> DetectionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rand_box = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
        BBox::new(x, y, x + rng.random_range(0.05..0.3), y + rng.random_range(0.05..0.3)).unwrap()
    };
    let imgs = (0..images)
        .map(|i| {
            let gts: Vec<LabeledBox> =
                (0..5).map(|_| LabeledBox { bbox: rand_box(&mut rng), label: ClassId(rng.random_range(0..3)) }).collect();
            let preds = (0..8)
                .map(|_| ScoredBox {
                    det: LabeledBox { bbox: rand_box(&mut rng), label: ClassId(rng.random_range(0..3)) },
                    score: rng.random(),
                })
                .collect();
            ImageDetections { image_id: format!("img{i}"), preds, gts }
        })
        .collect();
    DetectionSet::new(imgs).unwrap()
}

fn bench_loss(c: &mut Criterion) {
    let (params, samples) = batch(20);
    let mut group = c.benchmark_group("grpo_loss_and_grad");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| grpo_loss_and_grad(&params, &params, &samples, LossConfig::default(), exec).unwrap())
        });
    }
    group.finish();
}

fn bench_map(c: &mut Criterion) {
    let ds = detections(200);
    let thresholds = coco_thresholds();
    let mut group = c.benchmark_group("map_50_95");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| mean_average_precision_with(&ds, &thresholds, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_loss, bench_map);
criterion_main!(benches);
