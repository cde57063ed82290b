//! Untargeted L∞ gradient-sign attacks: FGSM, BIM, momentum BIM and PGD.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::Classifier;
use crate::error::{Error, Result};
use crate::image::{Image, LabeledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Mbim,
    Pgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Mbim,
        AttackKind::Pgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Mbim => "mbim",
            AttackKind::Pgd => "pgd",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            "mbim" | "mim" => Ok(AttackKind::Mbim),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::InvalidConfig(format!(
                "unknown attack kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub momentum_decay: f64,
    pub random_start: bool,
}

impl AttackSpec {
    /// Defaults: step `ε/4`, 10 iterations, momentum decay 1.0, random start
    /// for PGD only.
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        let iterative = kind != AttackKind::Fgsm;
        AttackSpec {
            kind,
            epsilon,
            step_size: if iterative { epsilon / 4.0 } else { epsilon },
            iterations: if iterative { 10 } else { 1 },
            momentum_decay: 1.0,
            random_start: kind == AttackKind::Pgd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside [0,1]",
                self.epsilon
            )));
        }
        if self.kind != AttackKind::Fgsm
            && (self.iterations == 0 || self.step_size.is_nan() || self.step_size < 0.0)
        {
            return Err(Error::InvalidConfig(
                "iterative attacks need iterations >= 1 and a step size".into(),
            ));
        }
        if !self.momentum_decay.is_finite() {
            return Err(Error::InvalidConfig("momentum_decay must be finite".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.kind.name().to_string()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn step_down(v: f64) -> f64 {
    if v > 0.0 {
        f64::from_bits(v.to_bits() - 1)
    } else if v == 0.0 {
        -f64::from_bits(1)
    } else {
        -f64::from_bits((-v).to_bits() + 1)
    }
}

fn step_up(v: f64) -> f64 {
    -step_down(-v)
}

/// Projects `v` onto `[x-ε, x+ε] ∩ [0, 1]` such that `|v - x| <= ε` holds
/// exactly in floating point.
fn project(v: f64, x: f64, eps: f64) -> f64 {
    let mut p = v.clamp((x - eps).max(0.0), (x + eps).min(1.0));
    while p - x > eps {
        p = step_down(p);
    }
    while x - p > eps {
        p = step_up(p);
    }
    p.clamp(0.0, 1.0)
}

fn signed_step(
    model: &Classifier,
    cur: &[f64],
    origin: &[f64],
    label: usize,
    spec: &AttackSpec,
    momentum: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let (_, grad) = model.input_gradient(cur, label);
    let direction: Vec<f64> = match momentum {
        Some(m) => {
            let l1: f64 = grad.iter().map(|g| g.abs()).sum::<f64>().max(1e-12);
            for (mi, gi) in m.iter_mut().zip(&grad) {
                *mi = spec.momentum_decay * *mi + gi / l1;
            }
            m.clone()
        }
        None => grad,
    };
    cur.iter()
        .zip(&direction)
        .zip(origin)
        .map(|((&c, &d), &x)| project(c + spec.step_size * sign(d), x, spec.epsilon))
        .collect()
}

/// Perturbs `sample` to increase the loss of its true label. The result
/// always lies in the ε-ball around the input intersected with `[0, 1]`.
pub fn attack(
    model: &Classifier,
    sample: &LabeledSample,
    spec: &AttackSpec,
    rng: &mut impl Rng,
) -> Image {
    let origin = sample.image.pixels();
    let (w, h) = sample.image.dims();
    if spec.epsilon == 0.0 {
        return sample.image.clone();
    }
    let out = match spec.kind {
        AttackKind::Fgsm => {
            let (_, grad) = model.input_gradient(origin, sample.label);
            origin
                .iter()
                .zip(&grad)
                .map(|(&x, &g)| project(x + spec.epsilon * sign(g), x, spec.epsilon))
                .collect()
        }
        AttackKind::Bim | AttackKind::Pgd | AttackKind::Mbim => {
            let mut cur: Vec<f64> = if spec.kind == AttackKind::Pgd && spec.random_start {
                origin
                    .iter()
                    .map(|&x| {
                        project(
                            x + rng.random_range(-spec.epsilon..=spec.epsilon),
                            x,
                            spec.epsilon,
                        )
                    })
                    .collect()
            } else {
                origin.to_vec()
            };
            let mut momentum = (spec.kind == AttackKind::Mbim).then(|| vec![0.0; origin.len()]);
            for _ in 0..spec.iterations {
                cur = signed_step(model, &cur, origin, sample.label, spec, momentum.as_mut());
            }
            cur
        }
    };
    Image::from_clamped(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::model::Architecture;
    use crate::seed;

    fn model() -> Classifier {
        let mut m = Classifier::initialized(Architecture::Mlp { hidden: 5 }, 9, 3, 2);
        m.params_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, p)| *p += (i % 7) as f64 * 0.01);
        m
    }

    fn sample() -> LabeledSample {
        LabeledSample::clean(
            Image::from_bytes(3, 3, &[0, 30, 60, 90, 120, 150, 180, 210, 255]).unwrap(),
            1,
        )
    }

    #[test]
    fn zero_budget_is_identity() {
        for kind in AttackKind::ALL {
            let out = attack(
                &model(),
                &sample(),
                &AttackSpec::new(kind, 0.0),
                &mut seed::rng(0),
            );
            assert_eq!(out, sample().image);
        }
    }

    #[test]
    fn projection_is_exact() {
        for (v, x, e) in [
            (0.7, 0.4, 0.3),
            (0.1, 0.4, 0.3),
            (1.3, 0.9, 0.3),
            (0.6000000000000001, 0.3, 0.3),
        ] {
            let p = project(v, x, e);
            assert!((p - x).abs() <= e, "{v} {x} {e} -> {p}");
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn fgsm_equals_single_step_bim() {
        let m = model();
        let s = sample();
        let fgsm = attack(
            &m,
            &s,
            &AttackSpec::new(AttackKind::Fgsm, 0.3),
            &mut seed::rng(0),
        );
        let bim = AttackSpec {
            iterations: 1,
            step_size: 0.3,
            ..AttackSpec::new(AttackKind::Bim, 0.3)
        };
        assert_eq!(fgsm, attack(&m, &s, &bim, &mut seed::rng(0)));
    }

    #[test]
    fn pgd_without_random_start_is_bim() {
        let m = model();
        let s = sample();
        let bim = AttackSpec::new(AttackKind::Bim, 0.2);
        let pgd = AttackSpec {
            random_start: false,
            ..AttackSpec::new(AttackKind::Pgd, 0.2)
        };
        assert_eq!(
            attack(&m, &s, &bim, &mut seed::rng(1)),
            attack(&m, &s, &pgd, &mut seed::rng(2))
        );
    }

    #[test]
    fn iterative_attacks_raise_loss() {
        let m = model();
        let s = sample();
        let before = m.loss(s.image.pixels(), s.label);
        for kind in AttackKind::ALL {
            let out = attack(&m, &s, &AttackSpec::new(kind, 0.1), &mut seed::rng(4));
            assert!(m.loss(out.pixels(), s.label) > before, "{kind:?}");
        }
    }
}
