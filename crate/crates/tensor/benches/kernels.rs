use cgap2_tensor::kernels::{conv3d_backward, conv3d_forward, ConvGeometry};
use cgap2_tensor::{exec, Graph, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn values(len: usize) -> Vec<f32> {
    (0..len).map(|i| ((i as f32) * 0.618).sin()).collect()
}

struct Shape {
    name: &'static str,
    input: [usize; 5],
    weight: [usize; 5],
    padding: [usize; 3],
}

// The temporal-module convolutions at desk scale, batch 32.
const SHAPES: [Shape; 3] = [
    Shape { name: "bottleneck_1x1x1", input: [32, 64, 5, 4, 4], weight: [16, 64, 1, 1, 1], padding: [0, 0, 0] },
    Shape { name: "temporal_3x3x3", input: [32, 16, 5, 4, 4], weight: [16, 16, 3, 3, 3], padding: [1, 1, 1] },
    Shape { name: "encoder_stem_3x3", input: [32, 3, 1, 64, 64], weight: [8, 3, 1, 3, 3], padding: [0, 1, 1] },
];

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", false), ("parallel", true)]
}

fn conv_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3d_forward");
    for s in &SHAPES {
        let geo = ConvGeometry::new(&s.input, &s.weight, [1, 1, 1], s.padding).unwrap();
        let x = values(s.input.iter().product());
        let w = values(s.weight.iter().product());
        let b = values(s.weight[0]);
        for (mode, par) in modes() {
            exec::set_parallel(par);
            group.bench_function(BenchmarkId::new(mode, s.name), |bench| {
                bench.iter(|| conv3d_forward(&geo, &x, &w, &b))
            });
        }
    }
    exec::set_parallel(true);
    group.finish();
}

fn conv_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3d_backward");
    for s in &SHAPES {
        let geo = ConvGeometry::new(&s.input, &s.weight, [1, 1, 1], s.padding).unwrap();
        let x = values(s.input.iter().product());
        let w = values(s.weight.iter().product());
        let gout = values(geo.output_shape().iter().product());
        for (mode, par) in modes() {
            exec::set_parallel(par);
            group.bench_function(BenchmarkId::new(mode, s.name), |bench| {
                bench.iter(|| conv3d_backward(&geo, &x, &w, &gout, [true, true, true]))
            });
        }
    }
    exec::set_parallel(true);
    group.finish();
}

fn conv_relu_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv_relu_train_step");
    let s = &SHAPES[1];
    let x = Tensor::new(s.input.to_vec(), values(s.input.iter().product())).unwrap();
    let w = Tensor::new(s.weight.to_vec(), values(s.weight.iter().product())).unwrap();
    for (mode, par) in modes() {
        exec::set_parallel(par);
        group.bench_function(mode, |bench| {
            bench.iter(|| {
                let g = Graph::<f32>::new();
                let xv = g.constant(x.clone());
                let wv = g.leaf(w.clone().with_requires_grad(true));
                let bv = g.leaf(Tensor::<f32>::zeros([16]).with_requires_grad(true));
                let y = xv.conv3d(wv, bv, [1, 1, 1], s.padding).unwrap().relu();
                g.backward(y.sum()).unwrap();
                wv.grad()
            })
        });
    }
    exec::set_parallel(true);
    group.finish();
}

criterion_group!(benches, conv_forward, conv_backward, conv_relu_step);
criterion_main!(benches);
