//! Image-processing techniques (IPTs) and their sequential application.
//!
//! All filters operate on grayscale intensities, keep the image dimensions
//! and clamp outputs into `[0, 1]`. Convolutions use clamp-to-edge borders.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IptKind {
    DoNothing,
    AdaptiveSmooth,
    BilateralSmooth,
    AdditiveNoise,
    Thinning,
    Pixellate,
    Blur,
    Sharpen,
    /// Grayscale dilation; not part of either built-in codec.
    Thickening,
}

impl IptKind {
    pub const ALL: [IptKind; 9] = [
        IptKind::DoNothing,
        IptKind::AdaptiveSmooth,
        IptKind::BilateralSmooth,
        IptKind::AdditiveNoise,
        IptKind::Thinning,
        IptKind::Pixellate,
        IptKind::Blur,
        IptKind::Sharpen,
        IptKind::Thickening,
    ];

    pub fn is_stochastic(self) -> bool {
        self == IptKind::AdditiveNoise
    }

    pub fn short_name(self) -> &'static str {
        match self {
            IptKind::DoNothing => "none",
            IptKind::AdaptiveSmooth => "AS",
            IptKind::BilateralSmooth => "BS",
            IptKind::AdditiveNoise => "AN",
            IptKind::Thinning => "thin",
            IptKind::Pixellate => "pixellate",
            IptKind::Blur => "blur",
            IptKind::Sharpen => "sharpen",
            IptKind::Thickening => "thicken",
        }
    }
}

/// Per-kind filter parameters. Serialized with every run so genome
/// evaluations can be replayed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IptParams {
    pub blur_sigma: f64,
    pub sharpen_sigma: f64,
    pub sharpen_amount: f64,
    pub bilateral_sigma_space: f64,
    pub bilateral_sigma_range: f64,
    pub bilateral_radius: usize,
    /// Difference floor for the gradient-inverse weights, on the `[0,1]` scale.
    pub adaptive_min_gradient: f64,
    pub adaptive_iterations: usize,
    pub noise_sigma: f64,
    /// Block edge for images narrower than 32 pixels.
    pub pixellate_block_small: usize,
    /// Block edge for images 32 pixels wide or more.
    pub pixellate_block_large: usize,
    pub thinning_threshold: f64,
}

impl Default for IptParams {
    fn default() -> Self {
        IptParams {
            blur_sigma: 1.0,
            sharpen_sigma: 1.0,
            sharpen_amount: 1.0,
            bilateral_sigma_space: 2.0,
            bilateral_sigma_range: 0.1,
            bilateral_radius: 2,
            adaptive_min_gradient: 0.5 / 255.0,
            adaptive_iterations: 1,
            noise_sigma: 0.05,
            pixellate_block_small: 2,
            pixellate_block_large: 4,
            thinning_threshold: 0.5,
        }
    }
}

impl IptParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("blur_sigma", self.blur_sigma),
            ("sharpen_sigma", self.sharpen_sigma),
            ("bilateral_sigma_space", self.bilateral_sigma_space),
            ("bilateral_sigma_range", self.bilateral_sigma_range),
            ("adaptive_min_gradient", self.adaptive_min_gradient),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_sigma must be non-negative".into(),
            ));
        }
        if !(self.sharpen_amount.is_finite() && self.sharpen_amount >= 0.0) {
            return Err(Error::InvalidConfig(
                "sharpen_amount must be non-negative".into(),
            ));
        }
        if self.pixellate_block_small == 0 || self.pixellate_block_large == 0 {
            return Err(Error::InvalidConfig(
                "pixellate blocks must be non-empty".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.thinning_threshold) {
            return Err(Error::InvalidConfig(
                "thinning_threshold must lie in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered list of IPTs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IptSequence(Vec<IptKind>);

impl IptSequence {
    pub fn new(ops: Vec<IptKind>, max_len: usize) -> Result<Self> {
        if ops.is_empty() || ops.len() > max_len {
            return Err(Error::InvalidConfig(format!(
                "sequence length {} outside 1..={max_len}",
                ops.len()
            )));
        }
        Ok(IptSequence(ops))
    }

    pub(crate) fn from_vec_unchecked(ops: Vec<IptKind>) -> Self {
        IptSequence(ops)
    }

    pub fn ops(&self) -> &[IptKind] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_stochastic(&self) -> bool {
        self.0.iter().any(|k| k.is_stochastic())
    }

    /// Human-readable form, e.g. `sharpen -> sharpen -> blur -> BS`.
    pub fn describe(&self) -> String {
        self.0
            .iter()
            .map(|k| k.short_name())
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

pub fn apply_op(img: &Image, op: IptKind, params: &IptParams, seed: u64) -> Image {
    match op {
        IptKind::DoNothing => img.clone(),
        IptKind::AdaptiveSmooth => {
            let mut out = img.clone();
            for _ in 0..params.adaptive_iterations {
                out = adaptive_smooth(&out, params.adaptive_min_gradient);
            }
            out
        }
        IptKind::BilateralSmooth => bilateral(
            img,
            params.bilateral_radius,
            params.bilateral_sigma_space,
            params.bilateral_sigma_range,
        ),
        IptKind::AdditiveNoise => additive_noise(img, params.noise_sigma, seed),
        IptKind::Thinning => crate::thinning::thin_image(img, params.thinning_threshold),
        IptKind::Pixellate => {
            let block = if img.width() >= 32 {
                params.pixellate_block_large
            } else {
                params.pixellate_block_small
            };
            pixellate(img, block)
        }
        IptKind::Blur => gaussian_blur3(img, params.blur_sigma),
        IptKind::Sharpen => unsharp_mask(img, params.sharpen_sigma, params.sharpen_amount),
        IptKind::Thickening => dilate_cross(img),
    }
}

/// Applies `seq` left to right; the op at position `p` gets the sub-seed
/// `derive(seed, p)`.
pub fn apply_sequence(img: &Image, seq: &IptSequence, params: &IptParams, seed: u64) -> Image {
    let mut cur: Option<Image> = None;
    for (pos, &op) in seq.ops().iter().enumerate() {
        if op == IptKind::DoNothing {
            continue;
        }
        let src = cur.as_ref().unwrap_or(img);
        cur = Some(apply_op(src, op, params, seed::derive(seed, pos as u64)));
    }
    cur.unwrap_or_else(|| img.clone())
}

fn map_pixels(img: &Image, f: impl Fn(usize, usize) -> f64) -> Image {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(f(x, y));
        }
    }
    Image::from_clamped(w, h, out)
}

fn gaussian_kernel3(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut sum = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (x, y) = (dx as f64 - 1.0, dy as f64 - 1.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= sum;
        }
    }
    k
}

fn convolve3(img: &Image, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, kv) in row.iter().enumerate() {
                    acc += kv * img.get_clamped(x + dx as isize - 1, y + dy as isize - 1);
                }
            }
            out.push(acc);
        }
    }
    out
}

fn gaussian_blur3(img: &Image, sigma: f64) -> Image {
    let (w, h) = img.dims();
    Image::from_clamped(w, h, convolve3(img, &gaussian_kernel3(sigma)))
}

fn unsharp_mask(img: &Image, sigma: f64, amount: f64) -> Image {
    let (w, h) = img.dims();
    let blurred = convolve3(img, &gaussian_kernel3(sigma));
    let out = img
        .pixels()
        .iter()
        .zip(blurred)
        .map(|(&p, b)| p + amount * (p - b))
        .collect();
    Image::from_clamped(w, h, out)
}

fn bilateral(img: &Image, radius: usize, sigma_space: f64, sigma_range: f64) -> Image {
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mut spatial = vec![0.0; side * side];
    for dy in -r..=r {
        for dx in -r..=r {
            let idx = ((dy + r) as usize) * side + (dx + r) as usize;
            spatial[idx] =
                (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_space * sigma_space)).exp();
        }
    }
    let range_den = 2.0 * sigma_range * sigma_range;
    map_pixels(img, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let center = img.get_clamped(x, y);
        let (mut num, mut den) = (0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let v = img.get_clamped(x + dx, y + dy);
                let d = v - center;
                let wgt = spatial[((dy + r) as usize) * side + (dx + r) as usize]
                    * (-(d * d) / range_den).exp();
                num += wgt * v;
                den += wgt;
            }
        }
        num / den
    })
}

/// Gradient-inverse weighted smoothing over the 8-neighbourhood: the centre
/// keeps half the weight, neighbours share the other half in proportion to
/// `1 / max(|I_n - I_c|, floor)`.
fn adaptive_smooth(img: &Image, floor: f64) -> Image {
    map_pixels(img, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let c = img.get_clamped(x, y);
        let (mut num, mut den) = (0.0, 0.0);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let v = img.get_clamped(x + dx, y + dy);
                let wgt = 1.0 / (v - c).abs().max(floor);
                num += wgt * v;
                den += wgt;
            }
        }
        0.5 * c + 0.5 * num / den
    })
}

fn additive_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    let (w, h) = img.dims();
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = seed::rng(seed);
    let out = img
        .pixels()
        .iter()
        .map(|&p| p + normal.sample(&mut rng))
        .collect();
    Image::from_clamped(w, h, out)
}

fn pixellate(img: &Image, block: usize) -> Image {
    let (w, h) = img.dims();
    let mut out = vec![0.0; w * h];
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (ex, ey) = ((bx + block).min(w), (by + block).min(h));
            let mut sum = 0.0;
            for y in by..ey {
                for x in bx..ex {
                    sum += img.get(x, y);
                }
            }
            let mean = sum / ((ex - bx) * (ey - by)) as f64;
            for y in by..ey {
                for x in bx..ex {
                    out[y * w + x] = mean;
                }
            }
        }
    }
    Image::from_clamped(w, h, out)
}

fn dilate_cross(img: &Image) -> Image {
    map_pixels(img, |x, y| {
        let (x, y) = (x as isize, y as isize);
        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .map(|&(dx, dy)| img.get_clamped(x + dx, y + dy))
            .fold(0.0, f64::max)
    })
}

/// Draws a uniformly random op sequence; handy for property tests and benches.
pub fn random_sequence(rng: &mut impl Rng, kinds: &[IptKind], max_len: usize) -> IptSequence {
    let len = rng.random_range(1..=max_len);
    IptSequence(
        (0..len)
            .map(|_| kinds[rng.random_range(0..kinds.len())])
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn digit_like() -> Image {
        let mut px = vec![0.0; 28 * 28];
        for y in 6..22 {
            for x in 12..16 {
                px[y * 28 + x] = 0.9;
            }
        }
        for x in 8..20 {
            px[20 * 28 + x] = 1.0;
        }
        Image::new(28, 28, px).unwrap()
    }

    fn total_variation_rows(img: &Image) -> f64 {
        (0..img.height())
            .map(|y| {
                (1..img.width())
                    .map(|x| (img.get(x, y) - img.get(x - 1, y)).abs())
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn do_nothing_is_identity() {
        let img = digit_like();
        assert_eq!(
            apply_op(&img, IptKind::DoNothing, &IptParams::default(), 3),
            img
        );
        let seq = IptSequence::new(vec![IptKind::DoNothing; 3], 3).unwrap();
        assert_eq!(apply_sequence(&img, &seq, &IptParams::default(), 3), img);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let p = IptParams::default();
        let img = Image::filled(28, 28, 0.37);
        for op in [
            IptKind::Blur,
            IptKind::Sharpen,
            IptKind::BilateralSmooth,
            IptKind::AdaptiveSmooth,
            IptKind::Pixellate,
            IptKind::Thickening,
        ] {
            let out = apply_op(&img, op, &p, 0);
            for &v in out.pixels() {
                assert!(
                    (v - 0.37).abs() < 1e-12,
                    "{op:?} changed a constant image: {v}"
                );
            }
        }
    }

    #[test]
    fn sequence_matches_manual_chain() {
        let p = IptParams::default();
        let img = digit_like();
        let ops = vec![
            IptKind::Sharpen,
            IptKind::Sharpen,
            IptKind::Blur,
            IptKind::BilateralSmooth,
        ];
        let seq = IptSequence::new(ops.clone(), 4).unwrap();
        let mut manual = img.clone();
        for (i, op) in ops.iter().enumerate() {
            manual = apply_op(&manual, *op, &p, seed::derive(11, i as u64));
        }
        assert_eq!(apply_sequence(&img, &seq, &p, 11), manual);
    }

    #[test]
    fn noise_is_seeded() {
        let p = IptParams::default();
        let img = Image::filled(28, 28, 0.5);
        let seq =
            IptSequence::new(vec![IptKind::AdditiveNoise, IptKind::AdditiveNoise], 2).unwrap();
        let a = apply_sequence(&img, &seq, &p, 5);
        assert_eq!(a, apply_sequence(&img, &seq, &p, 5));
        assert_ne!(a, apply_sequence(&img, &seq, &p, 6));
        // the two positions draw different noise
        let once = apply_op(&img, IptKind::AdditiveNoise, &p, seed::derive(5, 0));
        assert_ne!(
            apply_op(&once, IptKind::AdditiveNoise, &p, seed::derive(5, 0)),
            a
        );
    }

    #[test]
    fn pixellate_block_depends_on_width() {
        let p = IptParams::default();
        let mut px = vec![0.0; 32 * 32];
        px[0] = 1.0;
        let big = Image::new(32, 32, px).unwrap();
        let out = apply_op(&big, IptKind::Pixellate, &p, 0);
        assert!((out.get(3, 3) - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(out.get(4, 4), 0.0);

        let mut px = vec![0.0; 28 * 28];
        px[0] = 1.0;
        let small = Image::new(28, 28, px).unwrap();
        let out = apply_op(&small, IptKind::Pixellate, &p, 0);
        assert!((out.get(1, 1) - 0.25).abs() < 1e-15);
        assert_eq!(out.get(2, 2), 0.0);
    }

    #[test]
    fn smoothing_does_not_increase_row_variation_of_steps() {
        let p = IptParams::default();
        for step in [0.2, 0.5, 1.0] {
            let px: Vec<f64> = (0..16 * 8)
                .map(|i| if i % 16 < 8 { 0.0 } else { step })
                .collect();
            let img = Image::new(16, 8, px).unwrap();
            let tv = total_variation_rows(&img);
            for op in [IptKind::Blur, IptKind::BilateralSmooth] {
                let out = apply_op(&img, op, &p, 0);
                assert!(
                    total_variation_rows(&out) <= tv + 1e-12,
                    "{op:?} step {step}"
                );
            }
        }
    }

    #[test]
    fn bilateral_preserves_edges_better_than_blur() {
        let p = IptParams::default();
        let px: Vec<f64> = (0..16 * 8)
            .map(|i| if i % 16 < 8 { 0.0 } else { 1.0 })
            .collect();
        let img = Image::new(16, 8, px).unwrap();
        let bs = apply_op(&img, IptKind::BilateralSmooth, &p, 0);
        let bl = apply_op(&img, IptKind::Blur, &p, 0);
        assert!(bs.get(7, 4) < bl.get(7, 4));
    }

    fn any_kind() -> impl Strategy<Value = IptKind> {
        proptest::sample::select(IptKind::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn ops_preserve_dims_and_range(
            w in 1usize..12, h in 1usize..12,
            seed in any::<u64>(),
            kinds in proptest::collection::vec(any_kind(), 1..5),
            px_seed in any::<u64>(),
        ) {
            let mut rng = seed::rng(px_seed);
            let img = Image::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap();
            let n = kinds.len();
            let seq = IptSequence::new(kinds, n).unwrap();
            let out = apply_sequence(&img, &seq, &IptParams::default(), seed);
            prop_assert_eq!(out.dims(), img.dims());
            prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(&out, &apply_sequence(&img, &seq, &IptParams::default(), seed));
        }
    }
}
