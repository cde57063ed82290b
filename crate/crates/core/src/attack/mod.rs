//! Native adversarial corpus generation against a small victim classifier.

pub mod gradient_sign;
pub mod model;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gradient_sign::{attack, AttackKind, AttackSpec};
pub use model::{
    gradient_check, train, Architecture, Classifier, GradientCheck, TrainConfig, TrainReport,
};

use crate::error::{Error, Result};
use crate::image::{quantize_roundtrip, Corpus, Image, LabeledSample, Provenance};
use crate::seed;

/// Fraction of successful adversarial examples that `transform` turns back
/// into correct classifications. Only pairs whose clean image is classified
/// correctly and whose adversarial image is not are counted; an empty count
/// gives 0.
pub fn destruction_rate(
    model: &Classifier,
    clean: &[LabeledSample],
    adv: &[Image],
    transform: impl Fn(&Image) -> Image,
) -> f64 {
    let (mut base, mut destroyed) = (0usize, 0usize);
    for (s, a) in clean.iter().zip(adv) {
        if model.predict(&s.image) == s.label && model.predict(a) != s.label {
            base += 1;
            if model.predict(&transform(a)) == s.label {
                destroyed += 1;
            }
        }
    }
    if base == 0 {
        0.0
    } else {
        destroyed as f64 / base as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub spec: AttackSpec,
    pub source_count: usize,
    pub correctly_classified: usize,
    /// Misclassified straight after the attack.
    pub fooled: usize,
    /// Fooled, but correct again after 8-bit quantization.
    pub destroyed: usize,
    /// Outside the ε budget (never expected; kept as a guard).
    pub discarded_budget: usize,
    pub survivors: usize,
    pub destruction_rate: f64,
}

#[derive(Debug, Clone)]
pub struct AttackCorpus {
    pub corpus: Corpus,
    pub stats: AttackStats,
    /// Index into the source corpus of every survivor.
    pub source_indices: Vec<usize>,
}

pub fn linf(a: &Image, b: &Image) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Attacks every correctly classified source sample and keeps those that
/// are misclassified, stay misclassified after quantization and respect the
/// ε budget. Sample `i` uses the noise stream `derive(seed, i)`.
pub fn build_attack_corpus(
    model: &Classifier,
    source: &Corpus,
    spec: &AttackSpec,
    min_count: usize,
    seed: u64,
) -> Result<AttackCorpus> {
    spec.validate()?;
    enum Fate {
        Misclassified,
        NotFooled,
        Destroyed,
        OverBudget,
        Survivor(Image),
    }
    let fates: Vec<Fate> = source
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if model.predict(&s.image) != s.label {
                return Fate::Misclassified;
            }
            let adv = attack(model, s, spec, &mut seed::rng(seed::derive(seed, i as u64)));
            if model.predict(&adv) == s.label {
                Fate::NotFooled
            } else if model.predict(&quantize_roundtrip(&adv)) == s.label {
                Fate::Destroyed
            } else if linf(&adv, &s.image) > spec.epsilon {
                Fate::OverBudget
            } else {
                Fate::Survivor(adv)
            }
        })
        .collect();

    let provenance = Provenance::Attack {
        name: spec.label(),
        epsilon: spec.epsilon,
    };
    let mut stats = AttackStats {
        spec: *spec,
        source_count: source.len(),
        correctly_classified: 0,
        fooled: 0,
        destroyed: 0,
        discarded_budget: 0,
        survivors: 0,
        destruction_rate: 0.0,
    };
    let mut samples = Vec::new();
    let mut source_indices = Vec::new();
    for (i, fate) in fates.into_iter().enumerate() {
        if !matches!(fate, Fate::Misclassified) {
            stats.correctly_classified += 1;
        }
        match fate {
            Fate::Misclassified | Fate::NotFooled => {}
            Fate::Destroyed => {
                stats.fooled += 1;
                stats.destroyed += 1;
            }
            Fate::OverBudget => {
                stats.fooled += 1;
                stats.discarded_budget += 1;
            }
            Fate::Survivor(image) => {
                stats.fooled += 1;
                samples.push(LabeledSample {
                    image,
                    label: source.samples()[i].label,
                    provenance: provenance.clone(),
                });
                source_indices.push(i);
            }
        }
    }
    stats.survivors = samples.len();
    stats.destruction_rate = if stats.fooled == 0 {
        0.0
    } else {
        stats.destroyed as f64 / stats.fooled as f64
    };
    if samples.len() < min_count {
        return Err(Error::InsufficientSamples {
            found: samples.len(),
            required: min_count,
        });
    }
    let corpus = Corpus::new(
        format!("{}-{}-eps{}", source.name(), spec.label(), spec.epsilon),
        source.num_classes(),
        samples,
    )?;
    Ok(AttackCorpus {
        corpus,
        stats,
        source_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2-class model over 2-pixel images: class 1 iff p0 > p1.
    fn two_pixel_model() -> Classifier {
        Classifier::from_params(
            Architecture::Softmax,
            2,
            2,
            vec![-10.0, 10.0, 10.0, -10.0, 0.0, 0.0],
        )
        .unwrap()
    }

    fn img(a: f64, b: f64) -> Image {
        Image::new(2, 1, vec![a, b]).unwrap()
    }

    #[test]
    fn identity_transform_destroys_nothing() {
        let m = two_pixel_model();
        let clean = vec![
            LabeledSample::clean(img(0.2, 0.8), 0),
            LabeledSample::clean(img(0.9, 0.1), 1),
        ];
        let adv = vec![img(0.8, 0.2), img(0.1, 0.9)];
        assert_eq!(destruction_rate(&m, &clean, &adv, |i| i.clone()), 0.0);
        // restore-everything transform
        assert_eq!(destruction_rate(&m, &clean, &adv, |_| img(0.5, 0.5)), 0.5);
        let rev = |i: &Image| img(i.pixels()[1], i.pixels()[0]);
        assert_eq!(destruction_rate(&m, &clean, &adv, rev), 1.0);
    }

    #[test]
    fn zero_budget_yields_no_survivors() {
        let m = two_pixel_model();
        let source = Corpus::new("s", 2, vec![LabeledSample::clean(img(0.2, 0.8), 0); 4]).unwrap();
        let r = build_attack_corpus(&m, &source, &AttackSpec::new(AttackKind::Fgsm, 0.0), 1, 0);
        assert!(matches!(
            r,
            Err(Error::InsufficientSamples {
                found: 0,
                required: 1
            })
        ));
    }

    #[test]
    fn survivors_respect_filters() {
        let m = two_pixel_model();
        let source = Corpus::new(
            "s",
            2,
            vec![
                LabeledSample::clean(img(0.2, 0.8), 0),
                LabeledSample::clean(img(0.45, 0.55), 0),
                LabeledSample::clean(img(0.9, 0.1), 0), // misclassified at source
            ],
        )
        .unwrap();
        let spec = AttackSpec::new(AttackKind::Fgsm, 0.35);
        let out = build_attack_corpus(&m, &source, &spec, 1, 0).unwrap();
        assert_eq!(out.stats.correctly_classified, 2);
        assert_eq!(out.source_indices, vec![0, 1]);
        for (s, &i) in out.corpus.samples().iter().zip(&out.source_indices) {
            assert!(linf(&s.image, &source.samples()[i].image) <= spec.epsilon);
            assert_ne!(m.predict(&quantize_roundtrip(&s.image)), s.label);
            assert!(matches!(s.provenance, Provenance::Attack { .. }));
        }
    }
}
