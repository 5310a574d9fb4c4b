use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diamond_core::degrade::add_awgn;
use diamond_core::nnexec::{
    build_generator, layer_forward, GeneratorConfig, LayerSpec, WeightInit, Weights4,
};
use diamond_core::tvprox::{fft_quad_solve, tv_prox};
use diamond_core::{run_diamond, DegradationOp, DiterParams, Image, Prior, Tensor, TvParams};

fn test_image(n: usize) -> Image {
    let clean = Image::from_fn(n, n, |r, c| {
        let (y, x) = (r as f32 / n as f32, c as f32 / n as f32);
        if (0.25..0.6).contains(&y) && (0.3..0.7).contains(&x) {
            0.8
        } else {
            0.2 + 0.1 * x
        }
    });
    add_awgn(&clean, 15.0, 1).unwrap().0
}

fn bench_tv_prox(c: &mut Criterion) {
    let mut g = c.benchmark_group("tv_prox");
    for n in [32, 64, 128] {
        let v = test_image(n);
        let params = TvParams::new(0.05, 0.05);
        g.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| {
            b.iter(|| tv_prox(black_box(v), &params).unwrap())
        });
    }
    g.finish();
}

fn bench_fft_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft_quad_solve");
    for n in [64, 256] {
        let rhs = test_image(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &rhs, |b, rhs| {
            b.iter(|| fft_quad_solve(black_box(rhs), 1.0).unwrap())
        });
    }
    g.finish();
}

fn bench_conv(c: &mut Criterion) {
    let (cin, cout, n) = (32, 32, 64);
    let data: Vec<f32> = (0..cin * n * n)
        .map(|i| ((i * 7919) % 1000) as f32 / 1000.0)
        .collect();
    let x = Tensor::new(cin, n, n, data).unwrap();
    let wdata: Vec<f32> = (0..cout * cin * 9)
        .map(|i| ((i * 104_729) % 200) as f32 / 1000.0 - 0.1)
        .collect();
    let layer = LayerSpec::Conv {
        weight: Weights4::new(cout, cin, 3, 3, wdata).unwrap(),
        bias: vec![0.01; cout],
        stride: 1,
    };
    c.bench_function("conv3x3_32x32ch_64px", |b| {
        b.iter(|| layer_forward(0, &layer, &[black_box(&x)]).unwrap())
    });
}

fn bench_generator(c: &mut Criterion) {
    let cfg = GeneratorConfig {
        depth: 2,
        res_counts: vec![1, 1],
        widths: vec![16, 32],
        ..GeneratorConfig::default()
    };
    let graph = build_generator(&cfg, WeightInit::Random { seed: 3 }).unwrap();
    let img = test_image(64);
    c.bench_function("generator_depth2_64px", |b| {
        b.iter(|| diamond_core::generator_forward(&graph, black_box(&img)).unwrap())
    });
}

fn bench_diamond(c: &mut Criterion) {
    let noisy = test_image(64);
    let params = DiterParams {
        step: 0.5,
        epsilon_tv: 0.01,
        outer_iters: 5,
        ..DiterParams::default()
    };
    let prior = Prior::GaussianSmooth { sigma: 1.0 };
    let mut g = c.benchmark_group("run_diamond");
    g.sample_size(10);
    g.bench_function("denoise_64px_k5", |b| {
        b.iter(|| {
            run_diamond(
                black_box(&noisy),
                &DegradationOp::identity(),
                &prior,
                &params,
                None,
            )
            .unwrap()
        })
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_tv_prox,
    bench_fft_solve,
    bench_conv,
    bench_generator,
    bench_diamond
);
criterion_main!(benches);
