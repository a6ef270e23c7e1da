//! Layer definitions shared by parameter allocation and parameter counting.

use cgap2_tensor::{Graph, NormMode, ParamId, ParamKind, ParamStore, Result, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;

/// Receives every parameter the architecture declares, in order.
pub trait Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize) -> ParamId;
}

/// Allocates He-initialised weights (zero biases, unit batch-norm scales).
pub struct Allocator<T: Scalar> {
    pub store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Allocator<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<T: Scalar> Builder for Allocator<T> {
    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".running_var") || name.ends_with(".gamma") {
            vec![T::one(); n]
        } else if fan_in == 0 {
            vec![T::zero(); n]
        } else {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| T::lit(normal.sample(&mut self.rng))).collect()
        };
        self.store
            .add(name, Tensor::new(shape, data).expect("shape matches data"), kind)
    }
}

/// Tallies sizes without allocating anything.
#[derive(Default)]
pub struct Counter {
    pub entries: Vec<(String, usize, ParamKind)>,
}

impl Builder for Counter {
    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, _fan_in: usize) -> ParamId {
        self.entries.push((name, shape.iter().product(), kind));
        ParamId(self.entries.len() - 1)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// 2D layers keep 4D weights and run over `[N, C, H, W]`.
    pub planar: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn declare(b: &mut impl Builder, name: &str, cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3], planar: bool) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let shape = if planar {
            vec![cout, cin, kernel[1], kernel[2]]
        } else {
            vec![cout, cin, kernel[0], kernel[1], kernel[2]]
        };
        Self {
            weight: b.param(format!("{name}.weight"), shape, ParamKind::Trainable, fan_in),
            bias: b.param(format!("{name}.bias"), vec![cout], ParamKind::Trainable, 0),
            stride,
            padding,
            planar,
        }
    }

    pub fn conv3(b: &mut impl Builder, name: &str, cin: usize, cout: usize, kernel: [usize; 3], padding: [usize; 3]) -> Self {
        Self::declare(b, name, cin, cout, kernel, [1; 3], padding, false)
    }

    pub fn conv2(b: &mut impl Builder, name: &str, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self::declare(b, name, cin, cout, [1, k, k], [1, stride, stride], [0, padding, padding], true)
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        if self.planar {
            x.conv2d(w, b, [self.stride[1], self.stride[2]], [self.padding[1], self.padding[2]])
        } else {
            x.conv3d(w, b, self.stride, self.padding)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn declare(b: &mut impl Builder, name: &str, fin: usize, fout: usize) -> Self {
        Self {
            weight: b.param(format!("{name}.weight"), vec![fout, fin], ParamKind::Trainable, fin),
            bias: b.param(format!("{name}.bias"), vec![fout], ParamKind::Trainable, 0),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.linear(g.param(store, self.weight), g.param(store, self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn declare(b: &mut impl Builder, name: &str, channels: usize) -> Self {
        Self {
            gamma: b.param(format!("{name}.gamma"), vec![channels], ParamKind::Trainable, 0),
            beta: b.param(format!("{name}.beta"), vec![channels], ParamKind::Trainable, 0),
            running_mean: b.param(format!("{name}.running_mean"), vec![channels], ParamKind::Buffer, 0),
            running_var: b.param(format!("{name}.running_var"), vec![channels], ParamKind::Buffer, 0),
        }
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mode: NormMode,
        cfg: &ModelConfig,
    ) -> Result<Var<'g, T>> {
        x.batchnorm3d_tracked(
            g.param(store, self.gamma),
            g.param(store, self.beta),
            store,
            self.running_mean,
            self.running_var,
            mode,
            T::lit(cfg.bn_eps),
            T::lit(cfg.bn_momentum),
        )
    }
}

/// Stride-2 residual stage:
/// `relu(bn(conv(relu(bn(conv_s2(x))))) + proj_s2(x))`.
#[derive(Debug, Clone)]
pub struct ResStage {
    pub down: Conv,
    pub down_bn: BatchNorm,
    pub conv: Conv,
    pub conv_bn: BatchNorm,
    pub skip: Conv,
}

/// Upsampling stage: `relu(bn(conv(upsample2(x))))`.
#[derive(Debug, Clone)]
pub struct UpStage {
    pub conv: Conv,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct Layers {
    pub encoder: Vec<ResStage>,
    pub temporal_bottleneck: Conv,
    pub temporal_pre: Vec<Conv>,
    pub temporal_bn: Option<BatchNorm>,
    pub temporal_post: Vec<Conv>,
    pub temporal_expand: Conv,
    pub temporal_reduce: Conv,
    pub decoder: Vec<UpStage>,
    pub decoder_out: Conv,
    pub classifier_conv: Conv,
    pub classifier_bn: BatchNorm,
    pub classifier_fc: [Linear; 3],
    pub volume_origin: ParamId,
    pub volume_step: ParamId,
}

/// Declares the whole architecture. Parameter names start with the stage
/// (`encoder.`, `temporal.`, `decoder.`, `classifier.`, `volume.`).
pub fn declare(cfg: &ModelConfig, b: &mut impl Builder) -> Layers {
    let mut encoder = Vec::new();
    let mut cin = 3;
    for (i, &c) in cfg.encoder_channels().iter().enumerate() {
        encoder.push(ResStage {
            down: Conv::conv2(b, &format!("encoder.stage{i}.down"), cin, c, 3, 2, 1),
            down_bn: BatchNorm::declare(b, &format!("encoder.stage{i}.down_bn"), c),
            conv: Conv::conv2(b, &format!("encoder.stage{i}.conv"), c, c, 3, 1, 1),
            conv_bn: BatchNorm::declare(b, &format!("encoder.stage{i}.conv_bn"), c),
            skip: Conv::conv2(b, &format!("encoder.stage{i}.skip"), cin, c, 1, 2, 0),
        });
        cin = c;
    }

    let (f, bn) = (cfg.feature_channels, cfg.bottleneck_channels);
    let temporal_bottleneck = Conv::conv3(b, "temporal.bottleneck", f, bn, [1; 3], [0; 3]);
    let pre = cfg.conv_blocks.div_ceil(2);
    let temporal_pre = (0..pre)
        .map(|i| Conv::conv3(b, &format!("temporal.conv{i}"), bn, bn, [3; 3], [1; 3]))
        .collect();
    let temporal_bn = cfg.temporal_has_pool().then(|| BatchNorm::declare(b, "temporal.bn", bn));
    let temporal_post = (pre..cfg.conv_blocks)
        .map(|i| Conv::conv3(b, &format!("temporal.conv{i}"), bn, bn, [3; 3], [1; 3]))
        .collect();
    let temporal_expand = Conv::conv3(b, "temporal.expand", bn, f, [1; 3], [0; 3]);
    let depth = cfg.context_n - cfg.k_value + 1;
    let temporal_reduce = Conv::conv3(b, "temporal.reduce", f, f, [depth, 1, 1], [0; 3]);

    let mut decoder = Vec::new();
    let mut cin = f;
    for (i, &c) in cfg.decoder_channels().iter().enumerate() {
        decoder.push(UpStage {
            conv: Conv::conv2(b, &format!("decoder.up{i}"), cin, c, 3, 1, 1),
            bn: BatchNorm::declare(b, &format!("decoder.up{i}_bn"), c),
        });
        cin = c;
    }
    let decoder_out = Conv::conv2(b, "decoder.out", cin, cfg.num_joints * cfg.heatmap_size, 1, 1, 0);

    let cc = cfg.classifier_conv_channels;
    let classifier_conv = Conv::conv3(b, "classifier.conv", f, cc, [3; 3], [1; 3]);
    let classifier_bn = BatchNorm::declare(b, "classifier.conv_bn", cc);
    let flat = cc * (cfg.context_n + cfg.k_value) * cfg.feature_spatial * cfg.feature_spatial;
    let classifier_fc = [
        Linear::declare(b, "classifier.fc0", flat, cfg.fc_dims[0]),
        Linear::declare(b, "classifier.fc1", cfg.fc_dims[0], cfg.fc_dims[1]),
        Linear::declare(b, "classifier.out", cfg.fc_dims[1], cfg.num_classes),
    ];

    let volume_origin = b.param("volume.origin".into(), vec![3], ParamKind::Buffer, 0);
    let volume_step = b.param("volume.step".into(), vec![3], ParamKind::Buffer, 0);

    Layers {
        encoder,
        temporal_bottleneck,
        temporal_pre,
        temporal_bn,
        temporal_post,
        temporal_expand,
        temporal_reduce,
        decoder,
        decoder_out,
        classifier_conv,
        classifier_bn,
        classifier_fc,
        volume_origin,
        volume_step,
    }
}
