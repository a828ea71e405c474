use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Real};

/// A planar (CHW) image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Stack images into an NCHW batch.
    pub fn batch<'a, R: Real>(images: impl IntoIterator<Item = &'a Image>) -> Result<FeatureMap<R>> {
        let mut data = Vec::new();
        let mut n = 0;
        let mut geom = None;
        for img in images {
            let g = (img.channels, img.height, img.width);
            if *geom.get_or_insert(g) != g {
                return Err(Error::Shape("images in a batch must share a shape".into()));
            }
            data.extend(img.data.iter().map(|&v| R::from_f64_lossy(f64::from(v))));
            n += 1;
        }
        let (c, h, w) = geom.unwrap_or((0, 0, 0));
        FeatureMap::from_vec(n, c, h, w, data)
    }

    /// Convert to 8-bit interleaved RGB (or gray) for export.
    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let mut out = ::image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = |c: usize| {
                    let c = c.min(self.channels - 1);
                    (self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8
                };
                out.put_pixel(x as u32, y as u32, ::image::Rgb([px(0), px(1), px(2)]));
            }
        }
        out
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = f32::from(p[c]) / 255.0;
            }
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }
}
