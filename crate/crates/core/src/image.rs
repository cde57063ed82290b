//! Grayscale image container and labeled corpora.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image, rejecting wrong lengths and out-of-range or
    /// non-finite intensities.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0,1]"
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image, clamping every intensity into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer length");
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_clamped(width, height, vec![value; width * height])
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// 8-bit quantization used when writing files.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Clamp-to-edge access with signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Stable 64-bit hash of the exact pixel values, used to derive
    /// per-image noise seeds that do not depend on corpus order.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::seed::mix64((self.width as u64) << 32 | self.height as u64);
        for p in &self.pixels {
            h = crate::seed::mix64(h ^ p.to_bits());
        }
        h
    }
}

fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// BT.601 luma of an RGB triple; channels are clamped into `[0, 1]` first.
pub fn to_grayscale(r: f64, g: f64, b: f64) -> f64 {
    let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((299.0 * c(r) + 587.0 * c(g) + 114.0 * c(b)) / 1000.0).clamp(0.0, 1.0)
}

/// Snaps every intensity to the 1/255 grid, as writing to an 8-bit file would.
pub fn quantize_roundtrip(img: &Image) -> Image {
    Image {
        width: img.width,
        height: img.height,
        pixels: img
            .pixels
            .iter()
            .map(|&p| f64::from(quantize(p)) / 255.0)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Attack { name: String, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub image: Image,
    pub label: usize,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn clean(image: Image, label: usize) -> Self {
        LabeledSample {
            image,
            label,
            provenance: Provenance::Clean,
        }
    }
}

/// Ordered set of equally sized labeled images.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    num_classes: usize,
    samples: Vec<LabeledSample>,
}

impl Corpus {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig(
                "corpus needs at least one class".into(),
            ));
        }
        if let Some(first) = samples.first() {
            let dims = first.image.dims();
            for (i, s) in samples.iter().enumerate() {
                if s.image.dims() != dims {
                    return Err(Error::MixedDimensions {
                        expected: dims,
                        found: s.image.dims(),
                        file: format!("sample {i}"),
                    });
                }
                if s.label >= num_classes {
                    return Err(Error::InvalidConfig(format!(
                        "sample {i} has label {} but corpus has {num_classes} classes",
                        s.label
                    )));
                }
            }
        }
        Ok(Corpus {
            name: name.into(),
            num_classes,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dimensions shared by all images, `None` for an empty corpus.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.image.dims())
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.samples.iter().map(|s| &s.image)
    }

    /// Sub-corpus made of the given sample indices, in the given order.
    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> Corpus {
        Corpus {
            name: name.into(),
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn map_images(&self, f: impl Fn(&Image) -> Image) -> Corpus {
        Corpus {
            name: self.name.clone(),
            num_classes: self.num_classes,
            samples: self
                .samples
                .iter()
                .map(|s| LabeledSample {
                    image: f(&s.image),
                    ..s.clone()
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn grayscale_weights() {
        assert_eq!(to_grayscale(1.0, 1.0, 1.0), 1.0);
        assert_eq!(to_grayscale(0.0, 0.0, 0.0), 0.0);
        assert!((to_grayscale(1.0, 0.0, 0.0) - 0.299).abs() < 1e-15);
        assert_eq!(to_grayscale(2.0, -1.0, 0.0), to_grayscale(1.0, 0.0, 0.0));
    }

    #[test]
    fn quantize_fixed_point_and_rounding() {
        let grid = Image::from_bytes(2, 2, &[0, 17, 128, 255]).unwrap();
        assert_eq!(quantize_roundtrip(&grid), grid);

        let img = Image::new(1, 1, vec![0.5001]).unwrap();
        assert_eq!(quantize_roundtrip(&img).pixels()[0], 128.0 / 255.0);
    }

    #[test]
    fn sub_quantum_perturbation_vanishes() {
        let clean = Image::from_bytes(3, 1, &[10, 128, 200]).unwrap();
        let eps = 1.0 / 510.0 - 1e-6;
        let signs = [1.0, -1.0, 1.0];
        let adv = Image::from_clamped(
            3,
            1,
            clean
                .pixels()
                .iter()
                .zip(signs)
                .map(|(p, s)| p + s * eps)
                .collect(),
        );
        assert_ne!(adv, clean);
        assert_eq!(quantize_roundtrip(&adv), clean);
    }

    #[test]
    fn rejects_bad_images() {
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn corpus_requires_uniform_dims() {
        let a = LabeledSample::clean(Image::filled(2, 2, 0.0), 0);
        let b = LabeledSample::clean(Image::filled(3, 2, 0.0), 0);
        assert!(matches!(
            Corpus::new("x", 1, vec![a, b]),
            Err(Error::MixedDimensions { .. })
        ));
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(px in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let n = px.len();
            let img = Image::new(n, 1, px).unwrap();
            let once = quantize_roundtrip(&img);
            prop_assert_eq!(quantize_roundtrip(&once), once);
        }

        #[test]
        fn grayscale_monotone_and_bounded(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..=1.0) {
            let y = to_grayscale(r, g, b);
            prop_assert!((0.0..=1.0).contains(&y));
            prop_assert!(to_grayscale((r + d).min(1.0), g, b) >= y);
            prop_assert!(to_grayscale(r, (g + d).min(1.0), b) >= y);
            prop_assert!(to_grayscale(r, g, (b + d).min(1.0)) >= y);
        }
    }
}
