//! Layers with explicit forward caches and hand-written backward passes,
//! plus the momentum SGD optimizer.
//!
//! Forward takes `&self` and returns a cache; backward takes the cache and
//! accumulates parameter gradients into the layer. Every layer treats batch
//! samples independently, so splitting or concatenating a batch never
//! changes per-sample results.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Matrix, Real};

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<R = f32> {
    pub value: Vec<R>,
    pub grad: Vec<R>,
}

impl<R: Real> Param<R> {
    pub fn new(value: Vec<R>) -> Self {
        let grad = vec![R::zero(); value.len()];
        Self { value, grad }
    }

    pub fn uniform(len: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let value = (0..len)
            .map(|_| R::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        Self::new(value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = R::zero());
    }
}

/// Selects which gradients a backward pass produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradMode {
    pub params: bool,
    pub input: bool,
}

impl GradMode {
    pub const PARAMS: GradMode = GradMode {
        params: true,
        input: false,
    };
    pub const INPUT: GradMode = GradMode {
        params: false,
        input: true,
    };
    pub const BOTH: GradMode = GradMode {
        params: true,
        input: true,
    };
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<R = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out_channels, in_channels * 9]`
    pub weight: Param<R>,
    pub bias: Param<R>,
}

pub struct ConvCache<R> {
    cols: Vec<R>,
    n: usize,
    h: usize,
    w: usize,
}

impl<R: Real> Conv2d<R> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * 9;
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            weight: Param::uniform(out_channels * fan_in, bound, rng),
            bias: Param::new(vec![R::zero(); out_channels]),
        }
    }

    pub fn forward(&self, x: &FeatureMap<R>) -> Result<(FeatureMap<R>, ConvCache<R>)> {
        if x.c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {}",
                self.in_channels, x.c
            )));
        }
        let (n, h, w) = (x.n, x.h, x.w);
        let hw = h * w;
        let k = self.in_channels * 9;
        let total = n * hw;
        let mut cols = vec![R::zero(); k * total];
        for i in 0..n {
            let img = x.sample(i);
            for ci in 0..self.in_channels {
                let plane = &img[ci * hw..(ci + 1) * hw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let row = ci * 9 + ky * 3 + kx;
                        let dst = &mut cols[row * total + i * hw..row * total + (i + 1) * hw];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                            let dst_row = &mut dst[y * w..(y + 1) * w];
                            // dst[x] = src[x + kx - 1]
                            match kx {
                                0 => dst_row[1..].copy_from_slice(&src_row[..w - 1]),
                                1 => dst_row.copy_from_slice(src_row),
                                _ => dst_row[..w - 1].copy_from_slice(&src_row[1..]),
                            }
                        }
                    }
                }
            }
        }
        let mut out_all = vec![R::zero(); self.out_channels * total];
        R::gemm(
            self.out_channels,
            k,
            total,
            &self.weight.value,
            false,
            &cols,
            false,
            R::zero(),
            &mut out_all,
        );
        let mut out = FeatureMap::zeros(n, self.out_channels, h, w);
        for i in 0..n {
            let dst = out.sample_mut(i);
            for co in 0..self.out_channels {
                let b = self.bias.value[co];
                let src = &out_all[co * total + i * hw..co * total + (i + 1) * hw];
                for (d, &s) in dst[co * hw..(co + 1) * hw].iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
        Ok((out, ConvCache { cols, n, h, w }))
    }

    pub fn backward(
        &mut self,
        cache: &ConvCache<R>,
        dout: &FeatureMap<R>,
        mode: GradMode,
    ) -> Option<FeatureMap<R>> {
        let (n, h, w) = (cache.n, cache.h, cache.w);
        let hw = h * w;
        let total = n * hw;
        let k = self.in_channels * 9;
        let mut dout_all = vec![R::zero(); self.out_channels * total];
        for i in 0..n {
            let src = dout.sample(i);
            for co in 0..self.out_channels {
                dout_all[co * total + i * hw..co * total + (i + 1) * hw]
                    .copy_from_slice(&src[co * hw..(co + 1) * hw]);
            }
        }
        if mode.params {
            R::gemm(
                self.out_channels,
                total,
                k,
                &dout_all,
                false,
                &cache.cols,
                true,
                R::one(),
                &mut self.weight.grad,
            );
            for co in 0..self.out_channels {
                let s: R = dout_all[co * total..(co + 1) * total].iter().copied().sum();
                self.bias.grad[co] += s;
            }
        }
        if !mode.input {
            return None;
        }
        let mut dcols = vec![R::zero(); k * total];
        R::gemm(
            k,
            self.out_channels,
            total,
            &self.weight.value,
            true,
            &dout_all,
            false,
            R::zero(),
            &mut dcols,
        );
        let mut dx = FeatureMap::zeros(n, self.in_channels, h, w);
        for i in 0..n {
            let img = dx.sample_mut(i);
            for ci in 0..self.in_channels {
                let plane = &mut img[ci * hw..(ci + 1) * hw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let row = ci * 9 + ky * 3 + kx;
                        let src = &dcols[row * total + i * hw..row * total + (i + 1) * hw];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                            let src_row = &src[y * w..(y + 1) * w];
                            match kx {
                                0 => dst_row[..w - 1]
                                    .iter_mut()
                                    .zip(&src_row[1..])
                                    .for_each(|(d, &s)| *d += s),
                                1 => dst_row
                                    .iter_mut()
                                    .zip(src_row)
                                    .for_each(|(d, &s)| *d += s),
                                _ => dst_row[1..]
                                    .iter_mut()
                                    .zip(&src_row[..w - 1])
                                    .for_each(|(d, &s)| *d += s),
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param<R>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Per-sample group normalization with a per-channel affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm<R = f32> {
    pub groups: usize,
    pub gamma: Param<R>,
    pub beta: Param<R>,
}

pub struct GroupNormCache<R> {
    xhat: FeatureMap<R>,
    inv_std: Vec<R>,
}

impl<R: Real> GroupNorm<R> {
    const EPS: f64 = 1e-5;

    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Validation(format!(
                "{channels} channels cannot be split into {groups} groups"
            )));
        }
        Ok(Self {
            groups,
            gamma: Param::new(vec![R::one(); channels]),
            beta: Param::new(vec![R::zero(); channels]),
        })
    }

    pub fn forward(&self, x: &FeatureMap<R>) -> (FeatureMap<R>, GroupNormCache<R>) {
        let hw = x.h * x.w;
        let per_group = x.c / self.groups;
        let m = R::from_f64_lossy((per_group * hw) as f64);
        let eps = R::from_f64_lossy(Self::EPS);
        let mut xhat = FeatureMap::zeros(x.n, x.c, x.h, x.w);
        let mut out = FeatureMap::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std = Vec::with_capacity(x.n * self.groups);
        for i in 0..x.n {
            let src = x.sample(i);
            let xh = xhat.sample_mut(i);
            for g in 0..self.groups {
                let range = g * per_group * hw..(g + 1) * per_group * hw;
                let vals = &src[range.clone()];
                let mean = vals.iter().copied().sum::<R>() / m;
                let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / m;
                let inv = R::one() / (var + eps).sqrt();
                inv_std.push(inv);
                for (d, &v) in xh[range].iter_mut().zip(vals) {
                    *d = (v - mean) * inv;
                }
            }
            let o = out.sample_mut(i);
            for c in 0..x.c {
                let (ga, be) = (self.gamma.value[c], self.beta.value[c]);
                for p in c * hw..(c + 1) * hw {
                    o[p] = ga * xh[p] + be;
                }
            }
        }
        (out, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(
        &mut self,
        cache: &GroupNormCache<R>,
        dout: &FeatureMap<R>,
        mode: GradMode,
    ) -> FeatureMap<R> {
        let xhat = &cache.xhat;
        let (c, hw) = (xhat.c, xhat.h * xhat.w);
        let per_group = c / self.groups;
        let m = R::from_f64_lossy((per_group * hw) as f64);
        let mut dx = FeatureMap::zeros(xhat.n, c, xhat.h, xhat.w);
        let mut dxhat = vec![R::zero(); c * hw];
        for i in 0..xhat.n {
            let dy = dout.sample(i);
            let xh = xhat.sample(i);
            for ch in 0..c {
                let ga = self.gamma.value[ch];
                let range = ch * hw..(ch + 1) * hw;
                if mode.params {
                    let mut sg = R::zero();
                    let mut sb = R::zero();
                    for p in range.clone() {
                        sg += dy[p] * xh[p];
                        sb += dy[p];
                    }
                    self.gamma.grad[ch] += sg;
                    self.beta.grad[ch] += sb;
                }
                for p in range {
                    dxhat[p] = dy[p] * ga;
                }
            }
            let dxi = dx.sample_mut(i);
            for g in 0..self.groups {
                let range = g * per_group * hw..(g + 1) * per_group * hw;
                let inv = cache.inv_std[i * self.groups + g];
                let mean_d = dxhat[range.clone()].iter().copied().sum::<R>() / m;
                let mean_dx = dxhat[range.clone()]
                    .iter()
                    .zip(&xh[range.clone()])
                    .map(|(&a, &b)| a * b)
                    .sum::<R>()
                    / m;
                for p in range {
                    dxi[p] = inv * (dxhat[p] - mean_d - xh[p] * mean_dx);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<R>; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

pub fn relu_in_place<R: Real>(data: &mut [R]) {
    for v in data {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

/// Zero `grad` wherever the ReLU output was not positive.
pub fn relu_backward_in_place<R: Real>(output: &[R], grad: &mut [R]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= R::zero() {
            *g = R::zero();
        }
    }
}

pub struct PoolCache {
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
pub fn max_pool2<R: Real>(x: &FeatureMap<R>) -> (FeatureMap<R>, PoolCache) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = FeatureMap::zeros(x.n, x.c, oh, ow);
    let mut argmax = Vec::with_capacity(x.n * x.c * oh * ow);
    for i in 0..x.n {
        let src = x.sample(i);
        let dst = out.sample_mut(i);
        for c in 0..x.c {
            let base = c * x.h * x.w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * x.w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * x.w + 2 * xx + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[c * oh * ow + y * ow + xx] = src[best];
                    argmax.push(best);
                }
            }
        }
    }
    let in_shape = (x.n, x.c, x.h, x.w);
    (out, PoolCache { argmax, in_shape })
}

pub fn max_pool2_backward<R: Real>(cache: &PoolCache, dout: &FeatureMap<R>) -> FeatureMap<R> {
    let (n, c, h, w) = cache.in_shape;
    let mut dx = FeatureMap::zeros(n, c, h, w);
    let per_out = dout.sample_len();
    for i in 0..n {
        let g = dout.sample(i);
        let d = dx.sample_mut(i);
        for (j, &gv) in g.iter().enumerate() {
            d[cache.argmax[i * per_out + j]] += gv;
        }
    }
    dx
}

/// Affine map `y = x W^T + b` with `W` of shape `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<R = f32> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<R>,
    pub bias: Param<R>,
}

impl<R: Real> Linear<R> {
    /// Uniform init with bound `gain / sqrt(fan_in)`.
    pub fn new(in_dim: usize, out_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: Param::uniform(in_dim * out_dim, bound, rng),
            bias: Param::new(vec![R::zero(); out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::new(vec![R::zero(); in_dim * out_dim]),
            bias: Param::new(vec![R::zero(); out_dim]),
        }
    }

    pub fn forward(&self, x: &Matrix<R>) -> Result<Matrix<R>> {
        if x.cols != self.in_dim {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim, x.cols
            )));
        }
        let mut y = Matrix::zeros(x.rows, self.out_dim);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        R::gemm(
            x.rows,
            self.in_dim,
            self.out_dim,
            &x.data,
            false,
            &self.weight.value,
            true,
            R::one(),
            &mut y.data,
        );
        Ok(y)
    }

    pub fn accumulate_grads(&mut self, x: &Matrix<R>, dy: &Matrix<R>) {
        R::gemm(
            self.out_dim,
            x.rows,
            self.in_dim,
            &dy.data,
            true,
            &x.data,
            false,
            R::one(),
            &mut self.weight.grad,
        );
        for row in dy.rows_iter() {
            for (g, &v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
    }

    pub fn input_grad(&self, dy: &Matrix<R>) -> Matrix<R> {
        let mut dx = Matrix::zeros(dy.rows, self.in_dim);
        R::gemm(
            dy.rows,
            self.out_dim,
            self.in_dim,
            &dy.data,
            false,
            &self.weight.value,
            false,
            R::zero(),
            &mut dx.data,
        );
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<R>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Guard added to the norm in the denominator of [`l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Row-wise `v / (||v|| + eps)`; returns the normalized rows and the norms.
pub fn l2_normalize_rows<R: Real>(v: &Matrix<R>) -> (Matrix<R>, Vec<R>) {
    let eps = R::from_f64_lossy(NORM_EPS);
    let mut out = v.clone();
    let mut norms = Vec::with_capacity(v.rows);
    for r in 0..v.rows {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&x| x * x).sum::<R>().sqrt();
        let denom = norm + eps;
        row.iter_mut().for_each(|x| *x = *x / denom);
        norms.push(norm);
    }
    (out, norms)
}

pub fn l2_normalize_backward<R: Real>(
    normalized: &Matrix<R>,
    norms: &[R],
    dout: &Matrix<R>,
) -> Matrix<R> {
    let eps = R::from_f64_lossy(NORM_EPS);
    let mut dv = Matrix::zeros(dout.rows, dout.cols);
    for r in 0..dout.rows {
        let f = normalized.row(r);
        let g = dout.row(r);
        let n = norms[r];
        let denom = n + eps;
        let dot: R = f.iter().zip(g).map(|(&a, &b)| a * b).sum();
        // d/dv of v/(n+eps) applied to g: g/(n+eps) - v (v.g) / (n (n+eps)^2)
        let scale = if n > R::zero() { denom / n } else { R::zero() };
        for (d, (&fi, &gi)) in dv.row_mut(r).iter_mut().zip(f.iter().zip(g)) {
            *d = (gi - fi * dot * scale) / denom;
        }
    }
    dv
}

/// SGD with heavy-ball momentum and decoupled-in-gradient L2 weight decay:
/// `d = g + wd * w; v = mu * v + d; w -= lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<R = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<R>>,
}

impl<R: Real> Sgd<R> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<R>], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![R::zero(); p.len()]).collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "parameter set changed");
        let mu = R::from_f64_lossy(self.momentum);
        let wd = R::from_f64_lossy(self.weight_decay);
        let lr = R::from_f64_lossy(lr);
        for (p, vel) in params.iter_mut().zip(self.velocity.iter_mut()) {
            for ((w, &g), v) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                let d = g + wd * *w;
                *v = mu * *v + d;
                *w -= lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamId};

    fn rng() -> RngStream {
        RngStream::new(11, StreamId::Init)
    }

    fn random_map(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureMap<f64> {
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::from_vec(n, c, h, w, data).unwrap()
    }

    /// Central finite difference of `f` w.r.t. `x[i]`.
    fn fd(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut r = rng();
        let conv = Conv2d::<f64>::new(2, 3, &mut r);
        let x = random_map(2, 2, 5, 4, &mut r);
        let (y, _) = conv.forward(&x).unwrap();
        for i in 0..2 {
            for co in 0..3 {
                for yy in 0..5 {
                    for xx in 0..4 {
                        let mut acc = conv.bias.value[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sy >= 5 || sx < 0 || sx >= 4 {
                                        continue;
                                    }
                                    let wv = conv.weight.value[co * 18 + ci * 9 + ky * 3 + kx];
                                    acc += wv * x.sample(i)[ci * 20 + sy as usize * 4 + sx as usize];
                                }
                            }
                        }
                        assert!(close(acc, y.sample(i)[co * 20 + yy * 4 + xx]));
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut r = rng();
        let conv = Conv2d::<f64>::new(2, 2, &mut r);
        let x = random_map(2, 2, 4, 4, &mut r);
        let upstream = random_map(2, 2, 4, 4, &mut r);
        let loss = |c: &Conv2d<f64>, x: &FeatureMap<f64>| -> f64 {
            let (y, _) = c.forward(x).unwrap();
            y.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let mut c = conv.clone();
        let (_, cache) = c.forward(&x).unwrap();
        let dx = c.backward(&cache, &upstream, GradMode::BOTH).unwrap();
        for i in (0..c.weight.len()).step_by(5) {
            let mut f = |w: &[f64]| {
                let mut cc = conv.clone();
                cc.weight.value = w.to_vec();
                loss(&cc, &x)
            };
            assert!(close(fd(&mut f, &conv.weight.value, i), c.weight.grad[i]));
        }
        for i in (0..x.data.len()).step_by(3) {
            let mut f = |d: &[f64]| {
                let xx = FeatureMap::from_vec(2, 2, 4, 4, d.to_vec()).unwrap();
                loss(&conv, &xx)
            };
            assert!(close(fd(&mut f, &x.data, i), dx.data[i]));
        }
    }

    #[test]
    fn group_norm_gradients_match_finite_differences() {
        let mut r = rng();
        let mut gn = GroupNorm::<f64>::new(4, 2).unwrap();
        gn.gamma.value = vec![0.5, 1.5, -1.0, 2.0];
        gn.beta.value = vec![0.1, 0.0, -0.2, 0.3];
        let x = random_map(2, 4, 3, 3, &mut r);
        let upstream = random_map(2, 4, 3, 3, &mut r);
        let base = gn.clone();
        let loss = |g: &GroupNorm<f64>, x: &FeatureMap<f64>| -> f64 {
            let (y, _) = g.forward(x);
            y.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = gn.forward(&x);
        let dx = gn.backward(&cache, &upstream, GradMode::BOTH);
        for i in 0..x.data.len() {
            let mut f = |d: &[f64]| {
                let xx = FeatureMap::from_vec(2, 4, 3, 3, d.to_vec()).unwrap();
                loss(&base, &xx)
            };
            assert!(close(fd(&mut f, &x.data, i), dx.data[i]));
        }
        for i in 0..4 {
            let mut f = |g: &[f64]| {
                let mut b = base.clone();
                b.gamma.value = g.to_vec();
                loss(&b, &x)
            };
            assert!(close(fd(&mut f, &base.gamma.value, i), gn.gamma.grad[i]));
        }
    }

    #[test]
    fn pool_routes_gradient_to_max() {
        let x = FeatureMap::from_vec(1, 1, 2, 2, vec![1.0f64, 4.0, 3.0, 2.0]).unwrap();
        let (y, cache) = max_pool2(&x);
        assert_eq!(y.data, vec![4.0]);
        let dy = FeatureMap::from_vec(1, 1, 1, 1, vec![2.0]).unwrap();
        assert_eq!(max_pool2_backward(&cache, &dy).data, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_and_normalize_gradients() {
        let mut r = rng();
        let lin = Linear::<f64>::new(3, 4, 1.0, &mut r);
        let x = Matrix::from_vec(2, 3, (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let up = Matrix::from_vec(2, 4, (0..8).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let loss = |l: &Linear<f64>, x: &Matrix<f64>| -> f64 {
            let (f, _) = l2_normalize_rows(&l.forward(x).unwrap());
            f.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
        };
        let mut l = lin.clone();
        let v = l.forward(&x).unwrap();
        let (f, norms) = l2_normalize_rows(&v);
        let dv = l2_normalize_backward(&f, &norms, &up);
        l.accumulate_grads(&x, &dv);
        let dx = l.input_grad(&dv);
        for i in 0..12 {
            let mut g = |w: &[f64]| {
                let mut ll = lin.clone();
                ll.weight.value = w.to_vec();
                loss(&ll, &x)
            };
            assert!(close(fd(&mut g, &lin.weight.value, i), l.weight.grad[i]));
        }
        for i in 0..6 {
            let mut g = |d: &[f64]| loss(&lin, &Matrix::from_vec(2, 3, d.to_vec()).unwrap());
            assert!(close(fd(&mut g, &x.data, i), dx.data[i]));
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let v = Matrix::from_vec(1, 3, vec![3.0f32, 4.0, 0.0]).unwrap();
        let (f, _) = l2_normalize_rows(&v);
        assert!((f.data[0] - 0.6).abs() < 1e-7 && (f.data[1] - 0.8).abs() < 1e-7);
        assert_eq!(f.data[2], 0.0);
    }

    #[test]
    fn sgd_matches_reference_update() {
        let mut p = Param::new(vec![1.0f64, -2.0]);
        p.grad = vec![0.5, 0.25];
        let mut opt = Sgd::new(0.9, 0.1);
        opt.step(&mut [&mut p], 0.1);
        // d = g + 0.1 w = (0.6, 0.05); v = d; w -= 0.1 v
        assert!(close(p.value[0], 0.94) && close(p.value[1], -2.005));
        opt.step(&mut [&mut p], 0.1);
        // d = (0.5 + 0.094, 0.25 - 0.2005); v = 0.9*(0.6, 0.05) + d
        let v0 = 0.9 * 0.6 + 0.594;
        let v1 = 0.9 * 0.05 + 0.0495;
        assert!(close(p.value[0], 0.94 - 0.1 * v0) && close(p.value[1], -2.005 - 0.1 * v1));
    }
}
