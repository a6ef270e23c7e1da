use cgap2_tensor::{exec, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight seven-loop cross-correlation: accumulate over (ci, kd, kh, kw)
/// from zero, skip padded taps, add the bias last.
#[allow(clippy::too_many_arguments)]
fn naive_conv3d(
    x: &[f64],
    xs: [usize; 5],
    w: &[f64],
    ws: [usize; 5],
    b: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, ci, d, h, wd] = xs;
    let [co, _, kd, kh, kw] = ws;
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * co * od * oh * ow];
    for s in 0..n {
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for e in 0..kw {
                                        let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let iy = (y * stride[1] + bb) as isize - pad[1] as isize;
                                        let ix = (xx * stride[2] + e) as isize - pad[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        if iz >= d || iy >= h || ix >= wd {
                                            continue;
                                        }
                                        let xv = x[(((s * ci + c) * d + iz) * h + iy) * wd + ix];
                                        let wv = w[(((o * ci + c) * kd + a) * kh + bb) * kw + e];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[(((s * co + o) * od + z) * oh + y) * ow + xx] = acc + b[o];
                    }
                }
            }
        }
    }
    (out, [n, co, od, oh, ow])
}

fn random(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

struct Case {
    xs: [usize; 5],
    ws: [usize; 5],
    stride: [usize; 3],
    pad: [usize; 3],
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    loop {
        let xs = [
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=5),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
        ];
        let ws = [
            rng.random_range(1..=4),
            xs[1],
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let stride = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3)];
        let pad = [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=2)];
        if (0..3).all(|i| xs[i + 2] + 2 * pad[i] >= ws[i + 2]) {
            return Case { xs, ws, stride, pad };
        }
    }
}

fn run_conv3d(case: &Case, x: &[f64], w: &[f64], b: &[f64]) -> Tensor<f64> {
    let g = Graph::<f64>::new();
    let xv = g.constant(Tensor::new(case.xs.to_vec(), x.to_vec()).unwrap());
    let wv = g.constant(Tensor::new(case.ws.to_vec(), w.to_vec()).unwrap());
    let bv = g.constant(Tensor::new([case.ws[0]], b.to_vec()).unwrap());
    xv.conv3d(wv, bv, case.stride, case.pad).unwrap().to_tensor()
}

#[test]
fn spec_shaped_case_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let case = Case {
        xs: [2, 3, 4, 5, 5],
        ws: [4, 3, 3, 3, 3],
        stride: [1, 1, 1],
        pad: [1, 1, 1],
    };
    let x = random(&mut rng, 2 * 3 * 4 * 5 * 5);
    let w = random(&mut rng, 4 * 3 * 27);
    let b = random(&mut rng, 4);
    let (want, shape) = naive_conv3d(&x, case.xs, &w, case.ws, &b, case.stride, case.pad);
    let got = run_conv3d(&case, &x, &w, &b);
    assert_eq!(got.shape(), shape);
    assert_eq!(got.data(), &want[..]);
}

#[test]
fn sixty_random_cases_match_naive_loops_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..60 {
        let case = random_case(&mut rng);
        let x = random(&mut rng, case.xs.iter().product());
        let w = random(&mut rng, case.ws.iter().product());
        let b = random(&mut rng, case.ws[0]);
        let (want, shape) = naive_conv3d(&x, case.xs, &w, case.ws, &b, case.stride, case.pad);
        let got = run_conv3d(&case, &x, &w, &b);
        assert_eq!(got.shape(), shape, "{:?} {:?}", case.xs, case.ws);
        assert_eq!(got.data(), &want[..], "{:?} {:?}", case.xs, case.ws);
    }
}

#[test]
fn conv2d_equals_conv3d_with_unit_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (n, ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let stride = [rng.random_range(1..=2), rng.random_range(1..=2)];
        let pad = [rng.random_range(0..=1), rng.random_range(0..=1)];
        let x = random(&mut rng, n * ci * h * w);
        let wt = random(&mut rng, co * ci * kh * kw);
        let b = random(&mut rng, co);

        let g = Graph::<f64>::new();
        let y2 = g
            .constant(Tensor::new([n, ci, h, w], x.clone()).unwrap())
            .conv2d(
                g.constant(Tensor::new([co, ci, kh, kw], wt.clone()).unwrap()),
                g.constant(Tensor::new([co], b.clone()).unwrap()),
                stride,
                pad,
            )
            .unwrap()
            .to_tensor();
        let case = Case {
            xs: [n, ci, 1, h, w],
            ws: [co, ci, 1, kh, kw],
            stride: [1, stride[0], stride[1]],
            pad: [0, pad[0], pad[1]],
        };
        let y3 = run_conv3d(&case, &x, &wt, &b);
        assert_eq!(y2.data(), y3.data());
        let (naive, _) = naive_conv3d(&x, case.xs, &wt, case.ws, &b, case.stride, case.pad);
        assert_eq!(y2.data(), &naive[..]);
    }
}

/// Gradients checked against loops that scatter each output gradient back
/// through the same taps.
#[test]
fn backward_matches_scatter_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..15 {
        let case = random_case(&mut rng);
        let x = random(&mut rng, case.xs.iter().product());
        let w = random(&mut rng, case.ws.iter().product());
        let b = random(&mut rng, case.ws[0]);
        let (out, os) = naive_conv3d(&x, case.xs, &w, case.ws, &b, case.stride, case.pad);
        let gout = random(&mut rng, out.len());

        let [n, ci, d, h, wd] = case.xs;
        let [co, _, kd, kh, kw] = case.ws;
        let (mut gx, mut gw, mut gb) = (vec![0.0; x.len()], vec![0.0; w.len()], vec![0.0; co]);
        for s in 0..n {
            for o in 0..co {
                for z in 0..os[2] {
                    for y in 0..os[3] {
                        for xx in 0..os[4] {
                            let go = gout[(((s * co + o) * os[2] + z) * os[3] + y) * os[4] + xx];
                            gb[o] += go;
                            for c in 0..ci {
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for e in 0..kw {
                                            let iz = (z * case.stride[0] + a) as isize - case.pad[0] as isize;
                                            let iy = (y * case.stride[1] + bb) as isize - case.pad[1] as isize;
                                            let ix = (xx * case.stride[2] + e) as isize - case.pad[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                                continue;
                                            }
                                            let xi = (((s * ci + c) * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                            let wi = (((o * ci + c) * kd + a) * kh + bb) * kw + e;
                                            gx[xi] += go * w[wi];
                                            gw[wi] += go * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let g = Graph::<f64>::new();
        let xv = g.leaf(Tensor::new(case.xs.to_vec(), x.clone()).unwrap().with_requires_grad(true));
        let wv = g.leaf(Tensor::new(case.ws.to_vec(), w.clone()).unwrap().with_requires_grad(true));
        let bv = g.leaf(Tensor::new([co], b.clone()).unwrap().with_requires_grad(true));
        let y = xv.conv3d(wv, bv, case.stride, case.pad).unwrap();
        let weights = g.constant(Tensor::new(os.to_vec(), gout).unwrap());
        g.backward(y.mul(weights).unwrap().sum()).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        assert!(close(&xv.grad().unwrap(), &gx));
        assert!(close(&wv.grad().unwrap(), &gw));
        assert!(close(&bv.grad().unwrap(), &gb));
    }
}

#[test]
fn parallel_and_sequential_paths_agree_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let case = Case {
        xs: [4, 3, 3, 6, 6],
        ws: [5, 3, 3, 3, 3],
        stride: [1, 1, 1],
        pad: [1, 1, 1],
    };
    let x = random(&mut rng, case.xs.iter().product());
    let w = random(&mut rng, case.ws.iter().product());
    let b = random(&mut rng, 5);
    let run = || {
        let g = Graph::<f64>::new();
        let xv = g.leaf(Tensor::new(case.xs.to_vec(), x.clone()).unwrap().with_requires_grad(true));
        let wv = g.leaf(Tensor::new(case.ws.to_vec(), w.clone()).unwrap().with_requires_grad(true));
        let bv = g.leaf(Tensor::new([5], b.clone()).unwrap().with_requires_grad(true));
        let y = xv.conv3d(wv, bv, case.stride, case.pad).unwrap().relu();
        g.backward(y.sum()).unwrap();
        (y.data(), xv.grad().unwrap(), wv.grad().unwrap(), bv.grad().unwrap())
    };
    exec::set_parallel(false);
    let seq = run();
    exec::set_parallel(true);
    let par = run();
    assert_eq!(seq, par);
}
