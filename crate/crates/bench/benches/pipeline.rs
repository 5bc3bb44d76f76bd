use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermoscope::dataset::{preprocess, window, ProcessedSequence};
use thermoscope::detector::{compute_residuals, contour_regions, frame_score, scaled_top_k};
use thermoscope::model::{Architecture, Batch, ModelParameters, ModelVariant, Sampling};
use thermoscope::simulator::{render_sequence, ArrayConfig, FaultSpec, Label, RenderSettings};
use thermoscope::trainer::{train_step, Adam};
use thermoscope::{Frame, Grid};

fn sequence() -> ProcessedSequence {
    let config = ArrayConfig::from_pairs([[255, 0], [185, 45], [235, 90], [160, 180]]).unwrap();
    let raw = render_sequence(&config, &FaultSpec::healthy(), &RenderSettings::default(), 3).unwrap();
    preprocess(&raw, "bench", Label::Normal).unwrap()
}

fn residual(grid: Grid, seed: u64) -> Frame<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..grid.pixels())
        .map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    Frame::from_vec(grid, data).unwrap()
}

fn detector(c: &mut Criterion) {
    let grid = Grid::new(32, 32);
    let r = residual(grid, 1);
    let k = scaled_top_k(grid);
    c.bench_function("frame_score 32x32", |b| b.iter(|| frame_score(black_box(&r), k)));
    let mask = r.map(|v| v > 0.0);
    c.bench_function("contour_regions 32x32", |b| b.iter(|| contour_regions(black_box(&mask))));
    let big = residual(Grid::new(480, 640), 2);
    c.bench_function("frame_score 640x480", |b| {
        b.iter(|| frame_score(black_box(&big), scaled_top_k(big.grid)))
    });
    let seq = sequence();
    let recon = vec![0.5f32; grid.pixels()];
    c.bench_function("compute_residuals 32x32", |b| {
        b.iter(|| compute_residuals(black_box(&seq.frames[10]), &recon, 1e-3).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let seq = sequence();
    let windows = window(&seq, 10, 5).unwrap();
    let batch = Batch::<f32>::from_windows(&windows[..8]).unwrap();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    for variant in ModelVariant::all() {
        let params = ModelParameters::<f32>::new(variant, Architecture::default(), 1).unwrap();
        group.bench_function(format!("forward 8x10 {variant}"), |b| {
            b.iter(|| params.forward(black_box(&batch), Sampling::Mean).unwrap())
        });
        let mut trained = params.clone();
        let mut opt = Adam::new(&trained, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        group.bench_function(format!("train_step 8x10 {variant}"), |b| {
            b.iter(|| train_step(&mut trained, &mut opt, black_box(&batch), &mut rng, 5.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, detector, model);
criterion_main!(benches);
