//! Procedurally drawn glyph classes rendered in a clean source style and a
//! shifted target style.
//!
//! No glyph is invariant under a 90 degree rotation and no glyph is a
//! rotation of another, so the rotation of an image is recoverable while
//! rotating never turns one class into another.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::{Dataset, Domain, ImageExample};
use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamId};

type Pt = (f32, f32);

/// Glyph strokes as polylines in `[-1, 1]^2`, y pointing down.
const GLYPHS: &[(&str, &[&[Pt]])] = &[
    ("ell", &[&[(-0.45, -0.75), (-0.45, 0.7), (0.5, 0.7)]]),
    (
        "eff",
        &[
            &[(-0.4, 0.75), (-0.4, -0.7), (0.5, -0.7)],
            &[(-0.4, 0.0), (0.3, 0.0)],
        ],
    ),
    (
        "pee",
        &[&[(-0.4, 0.75), (-0.4, -0.7), (0.4, -0.7), (0.4, 0.0), (-0.4, 0.0)]],
    ),
    ("tee", &[&[(-0.6, -0.7), (0.6, -0.7)], &[(0.0, -0.7), (0.0, 0.75)]]),
    (
        "arrow",
        &[&[(0.0, 0.75), (0.0, -0.7)], &[(-0.45, -0.25), (0.0, -0.7), (0.45, -0.25)]],
    ),
    (
        "flag",
        &[&[(-0.45, 0.75), (-0.45, -0.7)], &[(-0.45, -0.7), (0.55, -0.35), (-0.45, 0.0)]],
    ),
    (
        "chair",
        &[&[(-0.5, -0.75), (-0.5, 0.7)], &[(-0.5, 0.0), (0.45, 0.0), (0.45, 0.7)]],
    ),
    (
        "hook",
        &[&[(0.35, -0.75), (0.35, 0.45), (0.05, 0.72), (-0.3, 0.7), (-0.5, 0.4)]],
    ),
    (
        "ee",
        &[
            &[(0.5, -0.7), (-0.4, -0.7), (-0.4, 0.7), (0.5, 0.7)],
            &[(-0.4, 0.0), (0.3, 0.0)],
        ],
    ),
    (
        "wye",
        &[&[(-0.5, -0.7), (0.0, 0.0), (0.5, -0.7)], &[(0.0, 0.0), (0.0, 0.75)]],
    ),
    ("check", &[&[(-0.6, 0.0), (-0.15, 0.55), (0.6, -0.6)]]),
    (
        "bolt",
        &[&[(0.2, -0.75), (-0.35, 0.05), (0.3, 0.05), (-0.2, 0.75)]],
    ),
];

/// Number of distinct glyph classes the generator can draw.
pub fn glyph_count() -> usize {
    GLYPHS.len()
}

/// Rendering differences of the target domain relative to the source.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainShift {
    /// Render as `1 - x` (light glyph on dark background).
    pub invert: bool,
    /// Standard deviation of additive per-pixel texture noise.
    pub noise: f64,
    /// Added to the stroke width (in units of the `[-1, 1]` canvas).
    pub stroke_delta: f64,
}

impl DomainShift {
    pub fn is_null(&self) -> bool {
        !self.invert && self.noise == 0.0 && self.stroke_delta == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub num_classes: usize,
    pub n_per_class_per_domain: usize,
    pub image_size: usize,
    pub shift: DomainShift,
    pub seed: u64,
}

impl SyntheticDomainSpec {
    /// The 8-class benchmark used for desk-scale runs.
    pub fn desk(seed: u64) -> Self {
        Self {
            num_classes: 8,
            n_per_class_per_domain: 200,
            image_size: 32,
            shift: DomainShift {
                invert: true,
                noise: 0.5,
                stroke_delta: 0.1,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation("synthetic spec needs at least 2 classes".into()));
        }
        if self.num_classes > glyph_count() {
            return Err(Error::Validation(format!(
                "synthetic spec asks for {} classes but only {} distinct glyphs exist",
                self.num_classes,
                glyph_count()
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Validation("image_size must be >= 16".into()));
        }
        if !(self.shift.noise >= 0.0) {
            return Err(Error::Validation("noise level must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-example nuisance parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphLatent {
    pub class: usize,
    pub scale: f32,
    pub angle: f32,
    pub shift: (f32, f32),
    pub stroke: f32,
    pub foreground: [f32; 3],
    pub background: [f32; 3],
    /// Seed for the texture noise field.
    pub noise_seed: u64,
}

impl GlyphLatent {
    pub fn sample(class: usize, rng: &mut impl Rng) -> Self {
        let deg = std::f32::consts::PI / 180.0;
        Self {
            class,
            scale: rng.gen_range(0.55..0.8),
            angle: rng.gen_range(-15.0..15.0) * deg,
            shift: (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)),
            stroke: rng.gen_range(0.12..0.18),
            foreground: [
                rng.gen_range(0.0..0.35),
                rng.gen_range(0.0..0.35),
                rng.gen_range(0.0..0.35),
            ],
            background: [
                rng.gen_range(0.65..1.0),
                rng.gen_range(0.65..1.0),
                rng.gen_range(0.65..1.0),
            ],
            noise_seed: rng.gen(),
        }
    }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Draw one glyph; `shift` describes the target-style rendering.
pub fn render_glyph(latent: &GlyphLatent, shift: &DomainShift, size: usize) -> Image {
    let strokes = GLYPHS[latent.class].1;
    let (sin, cos) = latent.angle.sin_cos();
    let place = |(x, y): Pt| -> Pt {
        let (x, y) = (x * latent.scale, y * latent.scale);
        (
            cos * x - sin * y + latent.shift.0,
            sin * x + cos * y + latent.shift.1,
        )
    };
    let segments: Vec<(Pt, Pt)> = strokes
        .iter()
        .flat_map(|line| line.windows(2).map(|w| (place(w[0]), place(w[1]))))
        .collect();
    let half_width = 0.5 * (latent.stroke + shift.stroke_delta as f32).max(0.02);
    let pixel = 2.0 / size as f32;
    let mut img = Image::filled(3, size, size, 0.0);
    let mut noise_rng = RngStream::new(latent.noise_seed, StreamId::Synthesis);
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let p = (
                (x as f32 + 0.5) * pixel - 1.0,
                (y as f32 + 0.5) * pixel - 1.0,
            );
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f32::INFINITY, f32::min);
            let coverage = (0.5 + (half_width - d) / pixel).clamp(0.0, 1.0);
            for c in 0..3 {
                let mut v = latent.background[c] * (1.0 - coverage) + latent.foreground[c] * coverage;
                if shift.invert {
                    v = 1.0 - v;
                }
                img.data[c * plane + y * size + x] = v;
            }
        }
    }
    if shift.noise > 0.0 {
        let sigma = shift.noise as f32;
        for v in &mut img.data {
            // Irwin-Hall approximation of a unit normal.
            let z: f32 = (0..4).map(|_| noise_rng.gen_range(-1.0f32..1.0)).sum::<f32>() * 0.866;
            *v = (*v + sigma * z).clamp(0.0, 1.0);
        }
    }
    img
}

fn render_domain(spec: &SyntheticDomainSpec, domain: Domain) -> Result<Dataset> {
    let style = match domain {
        Domain::Source => DomainShift::default(),
        Domain::Target => spec.shift.clone(),
    };
    let n = spec.num_classes * spec.n_per_class_per_domain;
    let domain_index = match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    };
    let examples = (0..n)
        .map(|i| {
            let class = i % spec.num_classes;
            let mut rng = RngStream::with_index(spec.seed, StreamId::Synthesis, (2 * i + domain_index) as u32);
            let latent = GlyphLatent::sample(class, &mut rng);
            ImageExample {
                pixels: render_glyph(&latent, &style, spec.image_size),
                label: Some(class),
                domain,
                id: domain.id_base() + i as u64,
            }
        })
        .collect();
    let names = GLYPHS[..spec.num_classes]
        .iter()
        .map(|(n, _)| (*n).to_string())
        .collect();
    Dataset::new(format!("synthetic-{}", domain.as_str()), domain, names, examples)
}

/// Render the source and target datasets described by `spec`.
pub fn make_synthetic_domain_pair(spec: &SyntheticDomainSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    Ok((render_domain(spec, Domain::Source)?, render_domain(spec, Domain::Target)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{rotate90, RotationLabel};

    fn small(shift: DomainShift) -> SyntheticDomainSpec {
        SyntheticDomainSpec {
            num_classes: 8,
            n_per_class_per_domain: 20,
            image_size: 16,
            shift,
            seed: 3,
        }
    }

    #[test]
    fn deterministic() {
        let spec = small(DomainShift {
            invert: true,
            noise: 0.1,
            stroke_delta: 0.05,
        });
        let (a_s, a_t) = make_synthetic_domain_pair(&spec).unwrap();
        let (b_s, b_t) = make_synthetic_domain_pair(&spec).unwrap();
        assert_eq!(a_s.content_hash(), b_s.content_hash());
        assert_eq!(a_t.content_hash(), b_t.content_hash());
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut spec = small(DomainShift::default());
        spec.num_classes = glyph_count() + 1;
        assert!(make_synthetic_domain_pair(&spec).is_err());
        spec.num_classes = 4;
        spec.image_size = 8;
        assert!(make_synthetic_domain_pair(&spec).is_err());
    }

    #[test]
    fn null_shift_renders_like_source() {
        let mut rng = RngStream::new(1, StreamId::Synthesis);
        for class in 0..glyph_count() {
            let latent = GlyphLatent::sample(class, &mut rng);
            assert_eq!(
                render_glyph(&latent, &DomainShift::default(), 24),
                render_glyph(&latent, &small(DomainShift::default()).shift, 24)
            );
        }
    }

    #[test]
    fn pixels_in_unit_range() {
        let (s, t) = make_synthetic_domain_pair(&small(DomainShift {
            invert: true,
            noise: 0.5,
            stroke_delta: 0.1,
        }))
        .unwrap();
        for e in s.examples().iter().chain(t.examples()) {
            let (lo, hi) = e.pixels.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
    }

    /// A canonical (unjittered) glyph differs from each of its own rotations
    /// and from every rotation of every other glyph.
    #[test]
    fn glyphs_are_rotation_distinct() {
        let canonical = |class| GlyphLatent {
            class,
            scale: 0.8,
            angle: 0.0,
            shift: (0.0, 0.0),
            stroke: 0.15,
            foreground: [0.0; 3],
            background: [1.0; 3],
            noise_seed: 0,
        };
        let size = 24;
        let imgs: Vec<Image> = (0..glyph_count())
            .map(|c| render_glyph(&canonical(c), &DomainShift::default(), size))
            .collect();
        let dist = |a: &Image, b: &Image| -> f32 {
            a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f32>() / a.data.len() as f32
        };
        for (i, a) in imgs.iter().enumerate() {
            for r in 1..4 {
                let rot = rotate90(a, RotationLabel::new(r).unwrap()).unwrap();
                assert!(dist(a, &rot) > 0.02, "glyph {i} symmetric under rotation {r}");
            }
            for (j, b) in imgs.iter().enumerate().skip(i + 1) {
                for r in 0..4 {
                    let rot = rotate90(b, RotationLabel::new(r).unwrap()).unwrap();
                    assert!(dist(a, &rot) > 0.02, "glyph {i} matches glyph {j} rotated {r}");
                }
            }
        }
    }

    #[test]
    fn inversion_defeats_source_centroids() {
        let spec = SyntheticDomainSpec {
            num_classes: 8,
            n_per_class_per_domain: 40,
            image_size: 24,
            shift: DomainShift {
                invert: true,
                ..Default::default()
            },
            seed: 11,
        };
        let (s, t) = make_synthetic_domain_pair(&spec).unwrap();
        let dim = s.get(0).pixels.data.len();
        let mut centroids = vec![vec![0.0f64; dim]; 8];
        let mut counts = [0usize; 8];
        for e in s.examples() {
            let y = e.label.unwrap();
            counts[y] += 1;
            for (c, &v) in centroids[y].iter_mut().zip(&e.pixels.data) {
                *c += f64::from(v);
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let nearest = |img: &Image| {
            (0..8)
                .min_by(|&a, &b| {
                    let d = |k: usize| -> f64 {
                        centroids[k].iter().zip(&img.data).map(|(c, &v)| (c - f64::from(v)).powi(2)).sum()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap()
        };
        let src_hits = s.examples().iter().filter(|e| nearest(&e.pixels) == e.label.unwrap()).count();
        let tgt_hits = t.examples().iter().filter(|e| nearest(&e.pixels) == e.label.unwrap()).count();
        let src_acc = src_hits as f64 / s.len() as f64;
        let tgt_acc = tgt_hits as f64 / t.len() as f64;
        assert!(src_acc > 0.5, "source accuracy {src_acc}");
        assert!(tgt_acc < 1.0 / 8.0 + 0.1, "target accuracy {tgt_acc}");
    }
}
