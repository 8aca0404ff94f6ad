use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use segrefine_cli::phantom::generate_phantom;
use segrefine_core::explainer::{fit_surrogate, kernel_weight, sample_presence_vectors, PerturbationSample};
use segrefine_core::maskgen::{canny_edges, otsu_threshold};
use segrefine_core::{
    brain_mask, explain, quickshift_segment, DetectorKind, EdgeDetector, ExplainerParams, FillMode, Prediction,
    PredictorHandle, QuickShiftParams,
};

fn segmentation(c: &mut Criterion) {
    let img = generate_phantom(224, 0, 0).image;
    let params = QuickShiftParams::default();
    c.bench_function("quickshift_224", |b| b.iter(|| quickshift_segment(black_box(&img), &params).unwrap()));
}

fn masks(c: &mut Criterion) {
    let img = generate_phantom(224, 0, 1).image;
    let det = EdgeDetector::default();
    c.bench_function("canny_224", |b| b.iter(|| canny_edges(black_box(&img), &det)));
    c.bench_function("otsu_224", |b| b.iter(|| otsu_threshold(black_box(&img)).unwrap()));
    for kind in DetectorKind::ALL {
        let det = EdgeDetector::new(kind);
        c.bench_function(&format!("brain_mask_{kind}_224"), |b| b.iter(|| brain_mask(black_box(&img), &det)));
    }
}

fn surrogate(c: &mut Criterion) {
    let params = ExplainerParams::default();
    let d = 150;
    let samples: Vec<PerturbationSample> = sample_presence_vectors(d, &params)
        .unwrap()
        .into_iter()
        .map(|z| {
            let on = z.iter().take(10).filter(|b| **b).count() as f64;
            PerturbationSample {
                prediction: Prediction::from_tumor_probability(on / 10.0),
                kernel_weight: kernel_weight(&z, params.kernel_width),
                presence: z,
            }
        })
        .collect();
    c.bench_function("fit_surrogate_d150_n1000", |b| {
        b.iter(|| fit_surrogate(black_box(&samples), 1, params.ridge_lambda).unwrap())
    });
}

fn end_to_end(c: &mut Criterion) {
    let img = generate_phantom(224, 0, 2).image;
    let seg = quickshift_segment(&img, &QuickShiftParams::default()).unwrap();
    let predictor = PredictorHandle::builtin();
    let params = ExplainerParams {
        fill_mode: FillMode::Constant(0.0),
        ..ExplainerParams::default()
    };
    let mut group = c.benchmark_group("explain");
    group.sample_size(10);
    group.bench_function("builtin_224_1000_samples", |b| {
        b.iter(|| explain(black_box(&img), &seg, &predictor, &params).unwrap())
    });
    group.finish();
}

criterion_group!(benches, segmentation, masks, surrogate, end_to_end);
criterion_main!(benches);
