//! Synthetic fixtures shared by the benchmarks.

use ipts_core::attack::{self, Classifier, TrainConfig};
use ipts_core::{seed, Corpus, Image, LabeledSample};
use rand::Rng;

/// A 28×28 stroke image: a bright bar at a seed-dependent column with noise.
pub fn stroke(seed: u64) -> Image {
    let mut rng = seed::rng(seed);
    let col: usize = rng.random_range(6..22);
    let px = (0..28 * 28)
        .map(|i| {
            let x: usize = i % 28;
            let base: f64 = if x.abs_diff(col) <= 2 { 0.9 } else { 0.05 };
            (base + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(28, 28, px).unwrap()
}

/// `n` clean strokes labelled by which half the bar falls in.
pub fn corpus(name: &str, n: usize, offset: u64) -> Corpus {
    let samples = (0..n as u64)
        .map(|i| {
            let img = stroke(offset + i);
            let label = usize::from(
                img.pixels()[..14].iter().sum::<f64>() < img.pixels()[14..28].iter().sum::<f64>(),
            );
            LabeledSample::clean(img, label)
        })
        .collect();
    Corpus::new(name, 2, samples).unwrap()
}

/// `n` strokes with sign-pattern perturbations of size `eps`.
pub fn perturbed(name: &str, n: usize, offset: u64, eps: f64) -> Corpus {
    let samples = corpus(name, n, offset)
        .into_samples()
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = seed::rng(seed::derive(offset, i as u64));
            let px = s
                .image
                .pixels()
                .iter()
                .map(|p| p + if rng.random_bool(0.5) { eps } else { -eps })
                .collect();
            LabeledSample::clean(Image::from_clamped(28, 28, px), s.label)
        })
        .collect();
    Corpus::new(name, 2, samples).unwrap()
}

/// Softmax classifier trained briefly on [`corpus`].
pub fn model() -> Classifier {
    let cfg = TrainConfig {
        epochs: 2,
        seed: 1,
        ..Default::default()
    };
    attack::train(&corpus("train", 200, 10_000), None, &cfg)
        .unwrap()
        .0
}
