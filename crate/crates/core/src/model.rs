//! Feature extractor with unit-norm output, temperature-scaled classifier,
//! and the 4-way rotation head.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::nn::{
    l2_normalize_backward, l2_normalize_rows, max_pool2, max_pool2_backward, relu_backward_in_place,
    relu_in_place, Conv2d, ConvCache, GradMode, GroupNorm, GroupNormCache, Linear, Param, PoolCache,
};
use crate::rng::RngStream;
use crate::tensor::{FeatureMap, Matrix, Real};

/// Inference batches are split into chunks of this many samples.
const INFER_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneArch {
    /// `channels.len()` blocks of conv-norm-relu-pool, then a projection.
    Conv {
        in_channels: usize,
        image_size: usize,
        channels: Vec<usize>,
        norm_groups: usize,
        feature_dim: usize,
    },
    /// Fully connected layers with ReLU between them; used for toy models.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        feature_dim: usize,
    },
}

impl BackboneArch {
    /// The desk-scale convolutional backbone.
    pub fn desk(image_size: usize) -> Self {
        BackboneArch::Conv {
            in_channels: 3,
            image_size,
            channels: vec![16, 32, 64],
            norm_groups: 4,
            feature_dim: 64,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneArch::Conv { feature_dim, .. } | BackboneArch::Mlp { feature_dim, .. } => {
                *feature_dim
            }
        }
    }

    /// Expected `(channels, height, width)` of one input sample.
    pub fn input_geometry(&self) -> (usize, usize, usize) {
        match self {
            BackboneArch::Conv {
                in_channels,
                image_size,
                ..
            } => (*in_channels, *image_size, *image_size),
            BackboneArch::Mlp { input_dim, .. } => (*input_dim, 1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub feature_dim: usize,
    /// Width of the hidden layer of a 2-layer head; `None` for a single affine map.
    pub hidden: Option<usize>,
    pub num_classes: usize,
    pub temperature: f64,
}

impl ClassifierArch {
    pub const DEFAULT_TEMPERATURE: f64 = 0.05;

    pub fn single(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            hidden: None,
            num_classes,
            temperature: Self::DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub backbone: BackboneArch,
    pub classifier: ClassifierArch,
}

#[derive(Clone, Debug)]
enum Body<R> {
    Conv {
        blocks: Vec<(Conv2d<R>, GroupNorm<R>)>,
        proj: Linear<R>,
    },
    Mlp {
        layers: Vec<Linear<R>>,
    },
}

/// Feature extractor `F`; its output rows have unit L2 norm.
#[derive(Clone, Debug)]
pub struct Backbone<R = f32> {
    arch: BackboneArch,
    body: Body<R>,
}

struct BlockCache<R> {
    conv: ConvCache<R>,
    norm: GroupNormCache<R>,
    relu_out: FeatureMap<R>,
    pool: PoolCache,
    pooled_shape: (usize, usize, usize),
}

enum BodyCache<R> {
    Conv {
        blocks: Vec<BlockCache<R>>,
        proj_in: Matrix<R>,
        in_shape: (usize, usize, usize, usize),
    },
    Mlp {
        /// Input of each layer; entries after the first are ReLU outputs.
        inputs: Vec<Matrix<R>>,
    },
}

pub struct BackboneCache<R> {
    body: BodyCache<R>,
    features: Matrix<R>,
    norms: Vec<R>,
}

impl<R: Real> BackboneCache<R> {
    pub fn features(&self) -> &Matrix<R> {
        &self.features
    }
}

impl<R: Real> Backbone<R> {
    pub fn new(arch: BackboneArch, rng: &mut impl Rng) -> Result<Self> {
        let body = match &arch {
            BackboneArch::Conv {
                in_channels,
                image_size,
                channels,
                norm_groups,
                feature_dim,
            } => {
                if channels.is_empty() {
                    return Err(Error::Validation("conv backbone needs at least one block".into()));
                }
                let mut blocks = Vec::with_capacity(channels.len());
                let mut c_in = *in_channels;
                let mut size = *image_size;
                for &c_out in channels {
                    let groups = (*norm_groups).min(c_out);
                    blocks.push((Conv2d::new(c_in, c_out, rng), GroupNorm::new(c_out, groups)?));
                    c_in = c_out;
                    size /= 2;
                }
                if size == 0 {
                    return Err(Error::Validation(format!(
                        "image size {image_size} too small for {} pooling stages",
                        channels.len()
                    )));
                }
                let flat = c_in * size * size;
                Body::Conv {
                    blocks,
                    proj: Linear::new(flat, *feature_dim, 3f64.sqrt(), rng),
                }
            }
            BackboneArch::Mlp {
                input_dim,
                hidden,
                feature_dim,
            } => {
                let mut dims = vec![*input_dim];
                dims.extend(hidden);
                dims.push(*feature_dim);
                let layers = dims
                    .windows(2)
                    .map(|w| Linear::new(w[0], w[1], 6f64.sqrt(), rng))
                    .collect();
                Body::Mlp { layers }
            }
        };
        Ok(Self { arch, body })
    }

    pub fn arch(&self) -> &BackboneArch {
        &self.arch
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    fn check_input(&self, x: &FeatureMap<R>) -> Result<()> {
        let (c, h, w) = self.arch.input_geometry();
        let ok = match self.arch {
            BackboneArch::Conv { .. } => x.c == c && x.h == h && x.w == w,
            BackboneArch::Mlp { .. } => x.sample_len() == c,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "backbone expects samples of {c}x{h}x{w}, got {}x{}x{}",
                x.c, x.h, x.w
            )))
        }
    }

    pub fn forward(&self, x: &FeatureMap<R>) -> Result<(Matrix<R>, BackboneCache<R>)> {
        self.check_input(x)?;
        let (pre, body) = match &self.body {
            Body::Conv { blocks, proj } => {
                let mut caches = Vec::with_capacity(blocks.len());
                let mut cur = x.clone();
                for (conv, norm) in blocks {
                    let (y, conv_cache) = conv.forward(&cur)?;
                    let (mut z, norm_cache) = norm.forward(&y);
                    relu_in_place(&mut z.data);
                    let (p, pool) = max_pool2(&z);
                    caches.push(BlockCache {
                        conv: conv_cache,
                        norm: norm_cache,
                        relu_out: z,
                        pool,
                        pooled_shape: (p.c, p.h, p.w),
                    });
                    cur = p;
                }
                let proj_in = Matrix::from_vec(cur.n, cur.sample_len(), cur.data)?;
                let v = proj.forward(&proj_in)?;
                (
                    v,
                    BodyCache::Conv {
                        blocks: caches,
                        proj_in,
                        in_shape: (x.n, x.c, x.h, x.w),
                    },
                )
            }
            Body::Mlp { layers } => {
                let mut inputs = Vec::with_capacity(layers.len());
                let mut cur = Matrix::from_vec(x.n, x.sample_len(), x.data.clone())?;
                for (li, layer) in layers.iter().enumerate() {
                    let mut y = layer.forward(&cur)?;
                    if li + 1 < layers.len() {
                        relu_in_place(&mut y.data);
                    }
                    inputs.push(std::mem::replace(&mut cur, y));
                }
                (cur, BodyCache::Mlp { inputs })
            }
        };
        let (features, norms) = l2_normalize_rows(&pre);
        Ok((
            features.clone(),
            BackboneCache {
                body,
                features,
                norms,
            },
        ))
    }

    /// Inference-only features, computed in bounded chunks.
    pub fn features(&self, x: &FeatureMap<R>) -> Result<Matrix<R>> {
        let mut parts = Vec::new();
        let mut start = 0;
        while start < x.n {
            let end = (start + INFER_CHUNK).min(x.n);
            let idx: Vec<usize> = (start..end).collect();
            parts.push(self.forward(&x.select(&idx))?.0);
            start = end;
        }
        if parts.is_empty() {
            return Ok(Matrix::zeros(0, self.feature_dim()));
        }
        Matrix::vstack(&parts.iter().collect::<Vec<_>>())
    }

    pub fn backward(
        &mut self,
        cache: &BackboneCache<R>,
        dfeatures: &Matrix<R>,
        mode: GradMode,
    ) -> Option<FeatureMap<R>> {
        let dpre = l2_normalize_backward(&cache.features, &cache.norms, dfeatures);
        match (&mut self.body, &cache.body) {
            (
                Body::Conv { blocks, proj },
                BodyCache::Conv {
                    blocks: bcaches,
                    proj_in,
                    in_shape,
                },
            ) => {
                if mode.params {
                    proj.accumulate_grads(proj_in, &dpre);
                }
                let dflat = proj.input_grad(&dpre);
                let (c, h, w) = bcaches.last().expect("nonempty").pooled_shape;
                let mut grad = FeatureMap {
                    n: dflat.rows,
                    c,
                    h,
                    w,
                    data: dflat.data,
                };
                let nblocks = blocks.len();
                for (bi, ((conv, norm), bc)) in
                    blocks.iter_mut().zip(bcaches).enumerate().rev()
                {
                    let mut dz = max_pool2_backward(&bc.pool, &grad);
                    relu_backward_in_place(&bc.relu_out.data, &mut dz.data);
                    let dy = norm.backward(&bc.norm, &dz, mode);
                    let need_input = bi > 0 || mode.input;
                    let sub = GradMode {
                        params: mode.params,
                        input: need_input,
                    };
                    match conv.backward(&bc.conv, &dy, sub) {
                        Some(dx) => grad = dx,
                        None => {
                            debug_assert!(bi == 0 && nblocks > 0);
                            return None;
                        }
                    }
                }
                debug_assert_eq!((grad.n, grad.c, grad.h, grad.w), *in_shape);
                Some(grad)
            }
            (Body::Mlp { layers }, BodyCache::Mlp { inputs }) => {
                let mut grad = dpre;
                let n = layers.len();
                for (li, layer) in layers.iter_mut().enumerate().rev() {
                    if li + 1 < n {
                        // inputs[li + 1] is this layer's ReLU output.
                        relu_backward_in_place(&inputs[li + 1].data, &mut grad.data);
                    }
                    if mode.params {
                        layer.accumulate_grads(&inputs[li], &grad);
                    }
                    if li > 0 || mode.input {
                        grad = layer.input_grad(&grad);
                    } else {
                        return None;
                    }
                }
                let (c, h, w) = (grad.cols, 1, 1);
                Some(FeatureMap {
                    n: grad.rows,
                    c,
                    h,
                    w,
                    data: grad.data,
                })
            }
            _ => unreachable!("cache produced by a different backbone"),
        }
    }

    pub fn params(&self) -> Vec<&Param<R>> {
        match &self.body {
            Body::Conv { blocks, proj } => {
                let mut out = Vec::new();
                for (c, n) in blocks {
                    out.extend([&c.weight, &c.bias, &n.gamma, &n.beta]);
                }
                out.extend([&proj.weight, &proj.bias]);
                out
            }
            Body::Mlp { layers } => layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        match &mut self.body {
            Body::Conv { blocks, proj } => {
                let mut out = Vec::new();
                for (c, n) in blocks {
                    out.extend(c.params_mut());
                    out.extend(n.params_mut());
                }
                out.extend(proj.params_mut());
                out
            }
            Body::Mlp { layers } => layers.iter_mut().flat_map(|l| l.params_mut()).collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

/// A stack of affine layers with ReLU between them. Shared by the
/// classifier and the rotation head.
#[derive(Clone, Debug, PartialEq)]
struct AffineStack<R> {
    layers: Vec<Linear<R>>,
}

struct AffineCache<R> {
    inputs: Vec<Matrix<R>>,
}

impl<R: Real> AffineStack<R> {
    fn forward(&self, x: &Matrix<R>) -> Result<(Matrix<R>, AffineCache<R>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&cur)?;
            if li + 1 < self.layers.len() {
                relu_in_place(&mut y.data);
            }
            inputs.push(std::mem::replace(&mut cur, y));
        }
        Ok((cur, AffineCache { inputs }))
    }

    /// Backpropagate `dy`; parameter gradients are accumulated only when
    /// `accumulate` is set. Returns the gradient w.r.t. the stack input.
    fn backward(&mut self, cache: &AffineCache<R>, dy: &Matrix<R>, accumulate: bool) -> Matrix<R> {
        let mut grad = dy.clone();
        let n = self.layers.len();
        for (li, layer) in self.layers.iter_mut().enumerate().rev() {
            if li + 1 < n {
                relu_backward_in_place(&cache.inputs[li + 1].data, &mut grad.data);
            }
            if accumulate {
                layer.accumulate_grads(&cache.inputs[li], &grad);
            }
            grad = layer.input_grad(&grad);
        }
        grad
    }
}

pub struct HeadCache<R> {
    inner: AffineCache<R>,
}

/// Classifier `C`: affine map(s) whose output is divided by the temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<R = f32> {
    arch: ClassifierArch,
    stack: AffineStack<R>,
}

impl<R: Real> ClassifierHead<R> {
    pub fn new(arch: ClassifierArch, rng: &mut impl Rng) -> Result<Self> {
        if !(arch.temperature > 0.0) {
            return Err(Error::Validation("temperature must be > 0".into()));
        }
        if arch.num_classes < 2 {
            return Err(Error::Validation("classifier needs at least 2 classes".into()));
        }
        let layers = match arch.hidden {
            None => vec![Linear::new(arch.feature_dim, arch.num_classes, 1.0, rng)],
            Some(h) => vec![
                Linear::new(arch.feature_dim, h, 6f64.sqrt(), rng),
                Linear::new(h, arch.num_classes, 1.0, rng),
            ],
        };
        Ok(Self {
            arch,
            stack: AffineStack { layers },
        })
    }

    /// Head with all weights zero: every input maps to the uniform distribution.
    pub fn zeros(arch: ClassifierArch) -> Self {
        let layers = match arch.hidden {
            None => vec![Linear::zeros(arch.feature_dim, arch.num_classes)],
            Some(h) => vec![
                Linear::zeros(arch.feature_dim, h),
                Linear::zeros(h, arch.num_classes),
            ],
        };
        Self {
            arch,
            stack: AffineStack { layers },
        }
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// The pre-temperature affine output.
    pub fn affine(&self, features: &Matrix<R>) -> Result<Matrix<R>> {
        Ok(self.stack.forward(features)?.0)
    }

    /// `affine(features) / T`.
    pub fn class_scores(&self, features: &Matrix<R>) -> Result<(Matrix<R>, HeadCache<R>)> {
        if features.cols != self.arch.feature_dim {
            return Err(Error::Shape(format!(
                "classifier expects {}-d features, got {}",
                self.arch.feature_dim, features.cols
            )));
        }
        let (mut out, inner) = self.stack.forward(features)?;
        let inv_t = R::from_f64_lossy(1.0 / self.arch.temperature);
        out.data.iter_mut().for_each(|v| *v *= inv_t);
        Ok((out, HeadCache { inner }))
    }

    pub fn backward(&mut self, cache: &HeadCache<R>, dlogits: &Matrix<R>, accumulate: bool) -> Matrix<R> {
        let inv_t = R::from_f64_lossy(1.0 / self.arch.temperature);
        let daffine = dlogits.map(|v| v * inv_t);
        self.stack.backward(&cache.inner, &daffine, accumulate)
    }

    pub fn params(&self) -> Vec<&Param<R>> {
        self.stack.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        self.stack.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

/// 4-way rotation classifier on backbone features (no temperature).
#[derive(Clone, Debug, PartialEq)]
pub struct RotationHead<R = f32> {
    linear: Linear<R>,
}

impl<R: Real> RotationHead<R> {
    pub const OUTPUTS: usize = 4;

    pub fn new(feature_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(feature_dim, Self::OUTPUTS, 1.0, rng),
        }
    }

    pub fn logits(&self, features: &Matrix<R>) -> Result<Matrix<R>> {
        self.linear.forward(features)
    }

    pub fn backward(&mut self, features: &Matrix<R>, dlogits: &Matrix<R>) -> Matrix<R> {
        self.linear.accumulate_grads(features, dlogits);
        self.linear.input_grad(dlogits)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        self.linear.params_mut().into_iter().collect()
    }
}

/// Rotation logits for a batch of images.
pub fn rotation_logits<R: Real>(
    backbone: &Backbone<R>,
    head: &RotationHead<R>,
    images: &FeatureMap<R>,
) -> Result<Matrix<R>> {
    let f = backbone.features(images)?;
    head.logits(&f)
}

/// The composed classifier `C o F`.
#[derive(Clone, Debug)]
pub struct Network<R = f32> {
    pub backbone: Backbone<R>,
    pub classifier: ClassifierHead<R>,
}

pub struct NetCache<R> {
    pub backbone: BackboneCache<R>,
    pub head: HeadCache<R>,
}

impl<R: Real> Network<R> {
    pub fn new(arch: &NetworkArch, rng: &mut impl Rng) -> Result<Self> {
        if arch.backbone.feature_dim() != arch.classifier.feature_dim {
            return Err(Error::Validation("classifier/backbone feature_dim mismatch".into()));
        }
        Ok(Self {
            backbone: Backbone::new(arch.backbone.clone(), rng)?,
            classifier: ClassifierHead::new(arch.classifier.clone(), rng)?,
        })
    }

    pub fn arch(&self) -> NetworkArch {
        NetworkArch {
            backbone: self.backbone.arch().clone(),
            classifier: self.classifier.arch().clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn forward(&self, x: &FeatureMap<R>) -> Result<(Matrix<R>, NetCache<R>)> {
        let (f, bcache) = self.backbone.forward(x)?;
        let (logits, hcache) = self.classifier.class_scores(&f)?;
        Ok((
            logits,
            NetCache {
                backbone: bcache,
                head: hcache,
            },
        ))
    }

    /// Inference-only logits, chunked.
    pub fn logits(&self, x: &FeatureMap<R>) -> Result<Matrix<R>> {
        let f = self.backbone.features(x)?;
        Ok(self.classifier.class_scores(&f)?.0)
    }

    pub fn backward(&mut self, cache: &NetCache<R>, dlogits: &Matrix<R>, mode: GradMode) -> Option<FeatureMap<R>> {
        let dfeat = self.classifier.backward(&cache.head, dlogits, mode.params);
        self.backbone.backward(&cache.backbone, &dfeat, mode)
    }

    /// Backward pass where the classifier's parameters receive the gradient
    /// of `dlogits_classifier` while the backbone receives the gradient of
    /// `dlogits_backbone`. Both are linear in the upstream gradient, so this
    /// realises a gradient-reversal boundary between `F` and `C`.
    pub fn backward_split(
        &mut self,
        cache: &NetCache<R>,
        dlogits_classifier: &Matrix<R>,
        dlogits_backbone: &Matrix<R>,
    ) {
        self.classifier.backward(&cache.head, dlogits_classifier, true);
        let dfeat = self.classifier.backward(&cache.head, dlogits_backbone, false);
        self.backbone.backward(&cache.backbone, &dfeat, GradMode::PARAMS);
    }

    pub fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.classifier.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<R>> {
        let mut v = self.backbone.params_mut();
        v.extend(self.classifier.params_mut());
        v
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<R: Real>(logits: &Matrix<R>) -> Matrix<R> {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(R::neg_infinity(), R::max);
        let mut sum = R::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

pub fn argmax(row: &[impl Real]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// A K-way class distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SIMPLEX_TOL: f64 = 1e-6;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > Self::SIMPLEX_TOL {
            return Err(Error::Validation(format!("not a probability vector: {p:?}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, y: usize) -> Result<Self> {
        if y >= k {
            return Err(Error::Validation(format!("label {y} out of range for {k} classes")));
        }
        let mut v = vec![0.0; k];
        v[y] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What initialised the backbone before supervised training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainTag {
    None,
    Rotation,
    Moco,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    arch: NetworkArch,
    step: u64,
    pretrain: PretrainTag,
    rng_states: BTreeMap<String, RngStream>,
    param_lens: Vec<usize>,
}

/// Everything needed to resume or evaluate a network.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub step: u64,
    pub pretrain: PretrainTag,
    pub rng_states: BTreeMap<String, RngStream>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "paclab.checkpoint.v1";

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut net = self.network.clone();
        let params = net.params_mut();
        let header = CheckpointHeader {
            format: Self::FORMAT.to_string(),
            arch: self.network.arch(),
            step: self.step,
            pretrain: self.pretrain,
            rng_states: self.rng_states.clone(),
            param_lens: params.iter().map(|p| p.len()).collect(),
        };
        let payload: Vec<f32> = params.iter().flat_map(|p| p.value.iter().copied()).collect();
        write_container(path.as_ref(), &header, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, payload): (CheckpointHeader, Vec<f32>) = read_container(path.as_ref())?;
        if header.format != Self::FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {}", header.format)));
        }
        // Parameters are overwritten below; the init stream is irrelevant.
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut network = Network::new(&header.arch, &mut rng)?;
        {
            let mut params = network.params_mut();
            let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
            if lens != header.param_lens || lens.iter().sum::<usize>() != payload.len() {
                return Err(Error::Format("checkpoint parameter layout mismatch".into()));
            }
            let mut offset = 0;
            for p in params.iter_mut() {
                let n = p.len();
                p.value.copy_from_slice(&payload[offset..offset + n]);
                offset += n;
            }
        }
        Ok(Self {
            network,
            step: header.step,
            pretrain: header.pretrain,
            rng_states: header.rng_states,
        })
    }
}
