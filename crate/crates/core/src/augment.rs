//! Image perturbations: RandAugment, color jitter, their composition, and
//! lossless 90 degree rotations for the rotation pretext task.
//!
//! Every operation clips its output to `[0, 1]` and preserves shape.
//! Geometric operations fill uncovered pixels with the per-channel mean.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

/// Upper end of the integer magnitude scale.
pub const MAX_MAGNITUDE: u32 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterStrengths {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl Default for JitterStrengths {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
        }
    }
}

impl JitterStrengths {
    pub const ZERO: JitterStrengths = JitterStrengths {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub use_randaugment: bool,
    pub randaugment_n: usize,
    pub randaugment_magnitude: u32,
    pub use_color_jitter: bool,
    pub jitter: JitterStrengths,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            use_randaugment: true,
            randaugment_n: 2,
            randaugment_magnitude: 10,
            use_color_jitter: true,
            jitter: JitterStrengths::default(),
        }
    }
}

impl PerturbationSpec {
    /// Both stages disabled: `perturb` is the identity.
    pub fn identity() -> Self {
        Self {
            use_randaugment: false,
            use_color_jitter: false,
            ..Self::default()
        }
    }

    pub fn randaugment_only() -> Self {
        Self {
            use_color_jitter: false,
            ..Self::default()
        }
    }

    pub fn jitter_only() -> Self {
        Self {
            use_randaugment: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.randaugment_n < 1 {
            return Err(Error::Validation("randaugment_n must be >= 1".into()));
        }
        if self.randaugment_magnitude > MAX_MAGNITUDE {
            return Err(Error::Validation(format!(
                "randaugment_magnitude must be <= {MAX_MAGNITUDE}"
            )));
        }
        let j = &self.jitter;
        if [j.brightness, j.contrast, j.saturation, j.hue].iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Validation("jitter strengths must be >= 0".into()));
        }
        if j.hue > 0.5 {
            return Err(Error::Validation("hue jitter strength must be <= 0.5".into()));
        }
        Ok(())
    }
}

/// The RandAugment registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugOp {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl AugOp {
    pub const ALL: [AugOp; 14] = [
        AugOp::Identity,
        AugOp::AutoContrast,
        AugOp::Equalize,
        AugOp::Rotate,
        AugOp::Solarize,
        AugOp::Color,
        AugOp::Posterize,
        AugOp::Contrast,
        AugOp::Brightness,
        AugOp::Sharpness,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
    ];
}

fn channel_means(img: &Image) -> Vec<f32> {
    let n = (img.height * img.width) as f32;
    (0..img.channels)
        .map(|c| img.plane(c).iter().sum::<f32>() / n)
        .collect()
}

fn gray_at(img: &Image, p: usize) -> f32 {
    if img.channels < 3 {
        return img.plane(0)[p];
    }
    0.299 * img.plane(0)[p] + 0.587 * img.plane(1)[p] + 0.114 * img.plane(2)[p]
}

fn blend(a: &Image, b: &Image, t: f32) -> Image {
    let mut out = a.clone();
    for (o, &bv) in out.data.iter_mut().zip(&b.data) {
        *o += t * (bv - *o);
    }
    out
}

fn map_pixels(img: &Image, f: impl Fn(f32) -> f32) -> Image {
    let mut out = img.clone();
    out.data.iter_mut().for_each(|v| *v = f(*v));
    out
}

/// Resample through the inverse map `dst (x, y) -> src (x, y)` in pixel
/// coordinates, bilinearly, with the channel mean outside the image.
fn warp(img: &Image, inverse: impl Fn(f32, f32) -> (f32, f32)) -> Image {
    let (h, w) = (img.height, img.width);
    let fill = channel_means(img);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f32, y as f32);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..img.channels {
                let plane = img.plane(c);
                let at = |xx: isize, yy: isize| -> f32 {
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        fill[c]
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                    + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
                out.plane_mut(c)[y * w + x] = v;
            }
        }
    }
    out
}

fn auto_contrast(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        let plane = out.plane_mut(c);
        let (lo, hi) = plane
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi > lo {
            plane.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        }
    }
    out
}

fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    let n = (img.height * img.width) as f32;
    for c in 0..img.channels {
        let plane = out.plane_mut(c);
        let bin = |v: f32| ((v.clamp(0.0, 1.0) * 255.0).round() as usize).min(255);
        let mut hist = [0u32; 256];
        plane.iter().for_each(|&v| hist[bin(v)] += 1);
        let mut cdf = [0f32; 256];
        let mut acc = 0u32;
        for (b, count) in hist.iter().enumerate() {
            acc += count;
            cdf[b] = acc as f32 / n;
        }
        plane.iter_mut().for_each(|v| *v = cdf[bin(*v)]);
    }
    out
}

fn smooth(img: &Image) -> Image {
    let (h, w) = (img.height, img.width);
    let mut out = img.clone();
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 4.0 * src[y * w + x];
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += src[(y + dy - 1) * w + x + dx - 1];
                    }
                }
                dst[y * w + x] = acc / 13.0;
            }
        }
    }
    out
}

/// Apply one registry op at `level` in `[0, 1]`; `negate` flips the
/// direction of signed ops. Level 0 is the identity for every op.
pub fn apply_op(img: &Image, op: AugOp, level: f32, negate: bool) -> Image {
    if level <= 0.0 || op == AugOp::Identity {
        return img.clone();
    }
    let sign = if negate { -1.0 } else { 1.0 };
    let factor = 1.0 + sign * 0.9 * level;
    let (cx, cy) = ((img.width as f32 - 1.0) / 2.0, (img.height as f32 - 1.0) / 2.0);
    let mut out = match op {
        AugOp::Identity => unreachable!(),
        AugOp::AutoContrast => blend(img, &auto_contrast(img), level),
        AugOp::Equalize => blend(img, &equalize(img), level),
        AugOp::Rotate => {
            let (s, c) = (sign * 30f32.to_radians() * level).sin_cos();
            warp(img, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (c * dx + s * dy + cx, -s * dx + c * dy + cy)
            })
        }
        AugOp::Solarize => {
            let threshold = 1.0 - level;
            map_pixels(img, |v| if v > threshold { 1.0 - v } else { v })
        }
        AugOp::Color => {
            let mut out = img.clone();
            if img.channels >= 3 {
                let n = img.height * img.width;
                for p in 0..n {
                    let g = gray_at(img, p);
                    for c in 0..img.channels {
                        let v = &mut out.plane_mut(c)[p];
                        *v = g + factor * (*v - g);
                    }
                }
            }
            out
        }
        AugOp::Posterize => {
            let bits = 8 - (4.0 * level).round() as u32;
            if bits >= 8 {
                return img.clone();
            }
            let q = f32::from(1u16 << (8 - bits));
            map_pixels(img, |v| ((v * 255.0) / q).floor() * q / 255.0)
        }
        AugOp::Contrast => {
            let n = img.height * img.width;
            let mean = (0..n).map(|p| gray_at(img, p)).sum::<f32>() / n as f32;
            map_pixels(img, |v| mean + factor * (v - mean))
        }
        AugOp::Brightness => map_pixels(img, |v| v * factor),
        AugOp::Sharpness => {
            let blurred = smooth(img);
            let mut out = blurred.clone();
            for (o, &v) in out.data.iter_mut().zip(&img.data) {
                *o += factor * (v - *o);
            }
            out
        }
        AugOp::ShearX => {
            let sh = sign * 0.3 * level;
            warp(img, |x, y| (x - sh * (y - cy), y))
        }
        AugOp::ShearY => {
            let sh = sign * 0.3 * level;
            warp(img, |x, y| (x, y - sh * (x - cx)))
        }
        AugOp::TranslateX => {
            let t = sign * 0.3 * level * img.width as f32;
            warp(img, |x, y| (x - t, y))
        }
        AugOp::TranslateY => {
            let t = sign * 0.3 * level * img.height as f32;
            warp(img, |x, y| (x, y - t))
        }
    };
    out.clamp_unit();
    out
}

/// RandAugment returning the ops that were drawn.
pub fn randaugment_traced(
    img: &Image,
    spec: &PerturbationSpec,
    rng: &mut impl Rng,
) -> (Image, Vec<AugOp>) {
    let level = spec.randaugment_magnitude as f32 / MAX_MAGNITUDE as f32;
    let mut out = img.clone();
    let mut ops = Vec::with_capacity(spec.randaugment_n);
    for _ in 0..spec.randaugment_n {
        let op = AugOp::ALL[rng.gen_range(0..AugOp::ALL.len())];
        let negate = rng.gen::<bool>();
        out = apply_op(&out, op, level, negate);
        ops.push(op);
    }
    out.clamp_unit();
    (out, ops)
}

/// `randaugment_n` ops drawn uniformly with replacement at a fixed magnitude.
pub fn randaugment(img: &Image, spec: &PerturbationSpec, rng: &mut impl Rng) -> Image {
    randaugment_traced(img, spec, rng).0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JitterKind {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

/// Concrete jitter factors; a factor of 1 (or hue shift of 0) skips that stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl JitterFactors {
    pub const NEUTRAL: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };
}

pub fn sample_jitter(strengths: &JitterStrengths, rng: &mut impl Rng) -> (JitterFactors, [JitterKind; 4]) {
    let mut factor = |s: f32| {
        if s > 0.0 {
            rng.gen_range((1.0 - s).max(0.0)..=1.0 + s)
        } else {
            1.0
        }
    };
    let brightness = factor(strengths.brightness);
    let contrast = factor(strengths.contrast);
    let saturation = factor(strengths.saturation);
    let hue = if strengths.hue > 0.0 {
        rng.gen_range(-strengths.hue..=strengths.hue)
    } else {
        0.0
    };
    let mut order = [
        JitterKind::Brightness,
        JitterKind::Contrast,
        JitterKind::Saturation,
        JitterKind::Hue,
    ];
    order.shuffle(rng);
    (
        JitterFactors {
            brightness,
            contrast,
            saturation,
            hue,
        },
        order,
    )
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn apply_jitter(img: &Image, factors: &JitterFactors, order: &[JitterKind; 4]) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::Shape(format!(
            "color jitter needs 3 channels, got {}",
            img.channels
        )));
    }
    let n = img.height * img.width;
    let mut out = img.clone();
    for kind in order {
        match kind {
            JitterKind::Brightness if factors.brightness != 1.0 => {
                let f = factors.brightness;
                out.data.iter_mut().for_each(|v| *v *= f);
            }
            JitterKind::Contrast if factors.contrast != 1.0 => {
                let f = factors.contrast;
                let mean = (0..n).map(|p| gray_at(&out, p)).sum::<f32>() / n as f32;
                out.data.iter_mut().for_each(|v| *v = f * *v + (1.0 - f) * mean);
            }
            JitterKind::Saturation if factors.saturation != 1.0 => {
                let f = factors.saturation;
                for p in 0..n {
                    let g = gray_at(&out, p);
                    for c in 0..3 {
                        let v = &mut out.plane_mut(c)[p];
                        *v = f * *v + (1.0 - f) * g;
                    }
                }
            }
            JitterKind::Hue if factors.hue != 0.0 => {
                for p in 0..n {
                    let (h, s, v) = rgb_to_hsv(out.plane(0)[p], out.plane(1)[p], out.plane(2)[p]);
                    let (r, g, b) = hsv_to_rgb(h + factors.hue, s, v);
                    out.plane_mut(0)[p] = r;
                    out.plane_mut(1)[p] = g;
                    out.plane_mut(2)[p] = b;
                }
            }
            _ => {}
        }
        out.clamp_unit();
    }
    Ok(out)
}

/// Brightness, contrast, saturation and hue jitter in a random order.
pub fn color_jitter(img: &Image, spec: &PerturbationSpec, rng: &mut impl Rng) -> Result<Image> {
    let (factors, order) = sample_jitter(&spec.jitter, rng);
    apply_jitter(img, &factors, &order)
}

/// The perturbation used for both consistency and supervised branches:
/// RandAugment followed by color jitter, each when enabled.
pub fn perturb(img: &Image, spec: &PerturbationSpec, rng: &mut impl Rng) -> Result<Image> {
    let mut out = if spec.use_randaugment {
        randaugment(img, spec, rng)
    } else {
        img.clone()
    };
    if spec.use_color_jitter {
        out = color_jitter(&out, spec, rng)?;
    }
    Ok(out)
}

/// Number of counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RotationLabel(u8);

impl RotationLabel {
    pub const ALL: [RotationLabel; 4] = [
        RotationLabel(0),
        RotationLabel(1),
        RotationLabel(2),
        RotationLabel(3),
    ];

    pub fn new(r: u8) -> Result<Self> {
        if r < 4 {
            Ok(Self(r))
        } else {
            Err(Error::Validation(format!("rotation label must be in 0..4, got {r}")))
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn inverse(self) -> Self {
        Self((4 - self.0) % 4)
    }
}

/// Rotate a square image by `90 * r` degrees counter-clockwise.
pub fn rotate90(img: &Image, r: RotationLabel) -> Result<Image> {
    if img.height != img.width {
        return Err(Error::Shape(format!(
            "rotate90 needs a square image, got {}x{}",
            img.height, img.width
        )));
    }
    let n = img.width;
    let mut out = img.clone();
    if r.0 == 0 {
        return Ok(out);
    }
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = match r.0 {
                    1 => (x, n - 1 - y),
                    2 => (n - 1 - y, n - 1 - x),
                    _ => (n - 1 - x, y),
                };
                dst[y * n + x] = src[sy * n + sx];
            }
        }
    }
    Ok(out)
}

/// Write `<i>_before.png` / `<i>_after.png` pairs for inspection.
pub fn dump_augmented(
    images: &[&Image],
    spec: &PerturbationSpec,
    rng: &mut impl Rng,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        let after = perturb(img, spec, rng)?;
        for (tag, im) in [("before", *img), ("after", &after)] {
            let path = dir.join(format!("{i:04}_{tag}.png"));
            im.to_rgb8()
                .save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamId};

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = RngStream::new(seed, StreamId::Synthesis);
        Image::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()
    }

    #[test]
    fn rotate_two_by_two_ccw() {
        let img = Image::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(); // [[a,b],[c,d]]
        let r1 = rotate90(&img, RotationLabel::new(1).unwrap()).unwrap();
        assert_eq!(r1.data, vec![2.0, 4.0, 1.0, 3.0]); // [[b,d],[a,c]]
    }

    #[test]
    fn rotate_inverse_and_errors() {
        let img = random_image(3, 5, 5, 1);
        for r in RotationLabel::ALL {
            let back = rotate90(&rotate90(&img, r).unwrap(), r.inverse()).unwrap();
            assert_eq!(back, img);
        }
        assert!(rotate90(&random_image(3, 4, 5, 1), RotationLabel::new(1).unwrap()).is_err());
        assert!(RotationLabel::new(4).is_err());
    }

    #[test]
    fn every_op_is_identity_at_zero_level() {
        let img = random_image(3, 8, 8, 2);
        for op in AugOp::ALL {
            assert_eq!(apply_op(&img, op, 0.0, false), img, "{op:?}");
        }
    }

    #[test]
    fn every_op_keeps_range_at_full_level() {
        let img = random_image(3, 9, 9, 3);
        for op in AugOp::ALL {
            for negate in [false, true] {
                let out = apply_op(&img, op, 1.0, negate);
                assert!(out.same_shape(&img));
                let (lo, hi) = out.min_max();
                assert!(lo >= 0.0 && hi <= 1.0, "{op:?}");
            }
        }
    }

    #[test]
    fn randaugment_draws_n_ops() {
        let img = random_image(3, 8, 8, 4);
        let spec = PerturbationSpec::default();
        let mut rng = RngStream::new(0, StreamId::Augmentation);
        for _ in 0..20 {
            let (_, ops) = randaugment_traced(&img, &spec, &mut rng);
            assert_eq!(ops.len(), 2);
        }
    }

    #[test]
    fn jitter_neutral_factors_and_zero_strengths() {
        let img = random_image(3, 6, 6, 5);
        let order = [
            JitterKind::Hue,
            JitterKind::Brightness,
            JitterKind::Saturation,
            JitterKind::Contrast,
        ];
        assert_eq!(apply_jitter(&img, &JitterFactors::NEUTRAL, &order).unwrap(), img);
        let spec = PerturbationSpec {
            jitter: JitterStrengths::ZERO,
            ..PerturbationSpec::jitter_only()
        };
        let mut rng = RngStream::new(0, StreamId::Augmentation);
        assert_eq!(color_jitter(&img, &spec, &mut rng).unwrap(), img);
    }

    #[test]
    fn brightness_factor_one_is_identity() {
        let img = random_image(3, 6, 6, 6);
        let factors = JitterFactors {
            brightness: 1.0,
            ..JitterFactors::NEUTRAL
        };
        let order = [
            JitterKind::Brightness,
            JitterKind::Contrast,
            JitterKind::Saturation,
            JitterKind::Hue,
        ];
        assert_eq!(apply_jitter(&img, &factors, &order).unwrap(), img);
    }

    #[test]
    fn saturation_leaves_gray_constant_image() {
        let img = Image::filled(3, 4, 4, 0.37);
        let spec = PerturbationSpec {
            jitter: JitterStrengths {
                saturation: 0.9,
                ..JitterStrengths::ZERO
            },
            ..PerturbationSpec::jitter_only()
        };
        let mut rng = RngStream::new(8, StreamId::Augmentation);
        let out = color_jitter(&img, &spec, &mut rng).unwrap();
        // In HSV the pixel has S = 0, so scaling saturation cannot move it.
        let (h, s, v) = rgb_to_hsv(0.37, 0.37, 0.37);
        let (r, g, b) = hsv_to_rgb(h, s * 1.9, v);
        for (i, &x) in out.data.iter().enumerate() {
            let expected = [r, g, b][i / 16];
            assert!((x - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [(0.2, 0.4, 0.9), (1.0, 0.0, 0.0), (0.5, 0.5, 0.1), (0.0, 0.0, 0.0)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn jitter_requires_color() {
        let img = random_image(1, 4, 4, 9);
        let mut rng = RngStream::new(0, StreamId::Augmentation);
        assert!(color_jitter(&img, &PerturbationSpec::default(), &mut rng).is_err());
    }

    #[test]
    fn perturb_identity_and_determinism() {
        let img = random_image(3, 8, 8, 10);
        let mut rng = RngStream::new(0, StreamId::Augmentation);
        assert_eq!(perturb(&img, &PerturbationSpec::identity(), &mut rng).unwrap(), img);
        let spec = PerturbationSpec::default();
        let a = perturb(&img, &spec, &mut RngStream::new(4, StreamId::Augmentation)).unwrap();
        let b = perturb(&img, &spec, &mut RngStream::new(4, StreamId::Augmentation)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_validation() {
        let mut spec = PerturbationSpec::default();
        spec.validate().unwrap();
        spec.jitter.hue = 0.6;
        assert!(spec.validate().is_err());
        spec = PerturbationSpec {
            randaugment_n: 0,
            ..PerturbationSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
