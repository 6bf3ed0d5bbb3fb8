use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cvit::ccffn::{CcFfn, CcFfnConfig};
use cvit::cga::CViTBlock;
use cvit::kernels::ConvGeom;
use cvit::nn::{ConvBn, Layer};
use cvit::train::{cross_entropy, AdamW, OptimConfig};
use cvit::{CViTModel, ModelConfig, RngState};
use cvit_bench::{eval, infer, input};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv");
    let mut rng = RngState::new(0).generator();
    for (name, geom, hw) in [
        ("dense3x3_64_28", ConvGeom::new(64, 64, 3, 1, 1, 1).unwrap(), 28),
        (
            "depthwise3x3_128_14",
            ConvGeom::new(128, 128, 3, 1, 1, 128).unwrap(),
            14,
        ),
        ("pointwise_192_7", ConvGeom::new(192, 384, 1, 1, 0, 1).unwrap(), 7),
    ] {
        let layer = ConvBn::<f32>::new(geom, &mut rng);
        eval(&layer);
        let x = input(&[1, geom.in_channels, hw, hw], 1);
        g.bench_function(BenchmarkId::new("unfused", name), |b| {
            b.iter(|| infer(&layer, black_box(&x)))
        });
        layer.fuse().unwrap();
        g.bench_function(BenchmarkId::new("fused", name), |b| {
            b.iter(|| infer(&layer, black_box(&x)))
        });
    }
    g.finish();
}

fn ccffn(c: &mut Criterion) {
    let mut g = c.benchmark_group("ccffn");
    for chunks in [1, 2, 4] {
        let cfg = CcFfnConfig::new(128).with_chunks(chunks);
        let ffn = CcFfn::<f32>::new(cfg, &mut RngState::new(0).generator()).unwrap();
        eval(&ffn);
        let x = input(&[1, 128, 14, 14], 1);
        g.bench_with_input(BenchmarkId::new("c128_14x14", chunks), &x, |b, x| {
            b.iter(|| infer(&ffn, black_box(x)))
        });
    }
    g.finish();
}

fn block(c: &mut Criterion) {
    let cfg = ModelConfig::preset("S").unwrap();
    let mut g = c.benchmark_group("block");
    for (s, hw) in [(0, 14), (1, 7), (2, 4)] {
        let blk =
            CViTBlock::<f32>::new(cfg.heads[s], cfg.ffn(s), cfg.ffn(s), &mut RngState::new(0).generator()).unwrap();
        eval(&blk);
        let x = input(&[1, cfg.dims[s], hw, hw], 1);
        g.bench_function(BenchmarkId::new("S", format!("stage{s}")), |b| {
            b.iter(|| infer(&blk, black_box(&x)))
        });
    }
    g.finish();
}

fn model(c: &mut Criterion) {
    let mut g = c.benchmark_group("model");
    g.sample_size(10);
    for name in ["tiny-S", "tiny-XL", "S"] {
        let cfg = ModelConfig::preset(name).unwrap();
        let m = CViTModel::<f32>::build(&cfg, RngState::new(0)).unwrap();
        eval(&m);
        let x = input(&[1, 3, cfg.image_size, cfg.image_size], 1);
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| infer(&m, black_box(&x)))
        });
    }
    let cfg = ModelConfig::preset("tiny-S").unwrap();
    let m = CViTModel::<f32>::build(&cfg, RngState::new(0)).unwrap();
    let x = input(&[8, 3, cfg.image_size, cfg.image_size], 1);
    let labels: Vec<usize> = (0..8).map(|i| i % cfg.num_classes).collect();
    let params = m.parameters();
    let mut opt = AdamW::new(OptimConfig::default());
    g.bench_function("train_step/tiny-S_b8", |b| {
        b.iter(|| {
            m.zero_grad();
            let loss = cross_entropy(&m.forward(&x).unwrap(), &labels).unwrap();
            loss.backward().unwrap();
            opt.step(&params, 1e-3);
        })
    });
    g.finish();
}

criterion_group!(benches, conv, ccffn, block, model);
criterion_main!(benches);
