use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, criterion_group, criterion_main};
use seatwatch_bench::room;
use seatwatch_core::detect::oracle::{ClassifierNoise, DetectorNoise, OracleClassifier, OracleDetector};
use seatwatch_core::detect::{BoundingBox, Detection, ObjectLabel, nms};
use seatwatch_core::imaging::preprocess;
use seatwatch_core::metrics::{FlaggedDetection, average_precision, pr_curve};
use seatwatch_core::pipeline::{ClassifyPolicy, FrameMeta, PipelineConfig, run_frame};

fn bench_preprocess(c: &mut Criterion) {
    let mut group = c.benchmark_group("preprocess");
    for size in [256u32, 640] {
        let (_, img) = room(8, size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &img, |b, img| b.iter(|| preprocess(black_box(img))));
    }
    group.finish();
}

fn bench_frame(c: &mut Criterion) {
    let mut group = c.benchmark_group("frame");
    let cfg = PipelineConfig::default();
    let meta = FrameMeta::new("bench", 0.0);
    for persons in [0u32, 8, 16] {
        let (spec, img) = room(persons, 320);
        let d = OracleDetector::new(&spec, 320, 320, DetectorNoise { confidence_sigma: 0.05, ..Default::default() }).unwrap();
        let cls = OracleClassifier::new(&spec, 320, 320, ClassifierNoise::default()).unwrap();
        for (name, policy) in [("serial", ClassifyPolicy::PersonFreeOnly), ("full", ClassifyPolicy::AllInService)] {
            group.bench_function(BenchmarkId::new(name, persons), |b| {
                b.iter(|| run_frame(&img, &spec.layout, &d, &cls, &cfg, &meta, policy).unwrap())
            });
        }
    }
    group.finish();
}

fn synthetic_detections(n: usize) -> Vec<Detection> {
    (0..n)
        .map(|i| {
            let x = (i % 20) as f64 * 0.045;
            let y = (i / 20 % 20) as f64 * 0.045;
            Detection {
                bbox: BoundingBox::new(x, y, 0.08, 0.08).unwrap(),
                label: ObjectLabel::Person,
                confidence: 1.0 - (i as f64 * 0.618).fract() * 0.9,
            }
        })
        .collect()
}

fn bench_nms(c: &mut Criterion) {
    let mut group = c.benchmark_group("nms");
    for n in [50usize, 400] {
        let dets = synthetic_detections(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, d| b.iter(|| nms(black_box(d), 0.5)));
    }
    group.finish();
}

fn bench_ap(c: &mut Criterion) {
    let flagged: Vec<FlaggedDetection> = (0..10_000)
        .map(|i| FlaggedDetection { confidence: (i as f64 * 0.618).fract(), true_positive: i % 3 != 0 })
        .collect();
    c.bench_function("average_precision/10000", |b| b.iter(|| average_precision(&pr_curve(black_box(&flagged), 8000))));
}

criterion_group!(benches, bench_preprocess, bench_frame, bench_nms, bench_ap);
criterion_main!(benches);
