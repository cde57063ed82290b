//! Small differentiable victim classifiers: softmax regression and a
//! one-hidden-layer ReLU network, trained with minibatch SGD.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Corpus, Image};
use crate::seed;

pub const MODEL_SCHEMA: &str = "ipts-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Softmax,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::Softmax,
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.1,
            l2: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub final_train_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// A trained classifier over flattened grayscale images.
///
/// Parameters are stored flat: softmax `[W (C×D), b (C)]`, MLP
/// `[W1 (H×D), b1 (H), W2 (C×H), b2 (C)]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
    params: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    schema: String,
    architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
    param_count: usize,
}

fn softmax_inplace(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

struct Forward {
    /// hidden pre-activations (MLP only)
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl Classifier {
    pub fn zeros(architecture: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let n = Self::param_count(architecture, input_dim, num_classes);
        Classifier {
            architecture,
            input_dim,
            num_classes,
            seed: 0,
            params: vec![0.0; n],
        }
    }

    /// MLP weights drawn He-normal from `seed`; softmax starts at zero.
    pub fn initialized(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        let mut m = Self::zeros(architecture, input_dim, num_classes);
        m.seed = seed;
        if let Architecture::Mlp { hidden } = architecture {
            let mut rng = seed::rng(seed::substream(seed, "init"));
            let n1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).unwrap();
            let n2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).unwrap();
            let (w1, _, w2, _) = m.mlp_offsets();
            for v in &mut m.params[w1..w1 + hidden * input_dim] {
                *v = n1.sample(&mut rng);
            }
            for v in &mut m.params[w2..w2 + num_classes * hidden] {
                *v = n2.sample(&mut rng);
            }
        }
        m
    }

    pub fn from_params(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let n = Self::param_count(architecture, input_dim, num_classes);
        if params.len() != n {
            return Err(Error::BadModel(format!(
                "expected {n} parameters, got {}",
                params.len()
            )));
        }
        Ok(Classifier {
            architecture,
            input_dim,
            num_classes,
            seed: 0,
            params,
        })
    }

    fn param_count(architecture: Architecture, d: usize, c: usize) -> usize {
        match architecture {
            Architecture::Softmax => c * d + c,
            Architecture::Mlp { hidden } => hidden * d + hidden + c * hidden + c,
        }
    }

    fn mlp_offsets(&self) -> (usize, usize, usize, usize) {
        let Architecture::Mlp { hidden } = self.architecture else {
            unreachable!("mlp_offsets on softmax model")
        };
        let w1 = 0;
        let b1 = hidden * self.input_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + self.num_classes * hidden;
        (w1, b1, w2, b2)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let (d, c) = (self.input_dim, self.num_classes);
        assert_eq!(x.len(), d, "input dimension");
        match self.architecture {
            Architecture::Softmax => {
                let (w, b) = self.params.split_at(c * d);
                let mut z: Vec<f64> = (0..c)
                    .map(|k| b[k] + dot(&w[k * d..(k + 1) * d], x))
                    .collect();
                softmax_inplace(&mut z);
                Forward {
                    pre: Vec::new(),
                    hidden: Vec::new(),
                    probs: z,
                }
            }
            Architecture::Mlp { hidden } => {
                let (w1, b1, w2, b2) = self.mlp_offsets();
                let p = &self.params;
                let pre: Vec<f64> = (0..hidden)
                    .map(|j| p[b1 + j] + dot(&p[w1 + j * d..w1 + (j + 1) * d], x))
                    .collect();
                let h: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
                let mut z: Vec<f64> = (0..c)
                    .map(|k| p[b2 + k] + dot(&p[w2 + k * hidden..w2 + (k + 1) * hidden], &h))
                    .collect();
                softmax_inplace(&mut z);
                Forward {
                    pre,
                    hidden: h,
                    probs: z,
                }
            }
        }
    }

    pub fn probabilities(&self, img: &Image) -> Vec<f64> {
        self.forward(img.pixels()).probs
    }

    pub fn predict(&self, img: &Image) -> usize {
        argmax(&self.probabilities(img))
    }

    /// Cross-entropy loss of `label` at `x`.
    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        -self.forward(x).probs[label].max(1e-300).ln()
    }

    /// Loss and its gradient with respect to the input pixels.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> (f64, Vec<f64>) {
        let (d, c) = (self.input_dim, self.num_classes);
        let f = self.forward(x);
        let loss = -f.probs[label].max(1e-300).ln();
        let mut delta = f.probs;
        delta[label] -= 1.0;
        let mut g = vec![0.0; d];
        match self.architecture {
            Architecture::Softmax => {
                for (k, &dk) in delta.iter().enumerate() {
                    axpy(dk, &self.params[k * d..(k + 1) * d], &mut g);
                }
            }
            Architecture::Mlp { hidden } => {
                let (w1, _, w2, _) = self.mlp_offsets();
                let p = &self.params;
                let mut da = vec![0.0; hidden];
                for (j, daj) in da.iter_mut().enumerate() {
                    if f.pre[j] > 0.0 {
                        *daj = (0..c).map(|k| delta[k] * p[w2 + k * hidden + j]).sum();
                    }
                }
                for (j, &daj) in da.iter().enumerate() {
                    if daj != 0.0 {
                        axpy(daj, &p[w1 + j * d..w1 + (j + 1) * d], &mut g);
                    }
                }
            }
        }
        (loss, g)
    }

    /// Adds the parameter gradient of the loss at `(x, label)` into `grad`.
    fn accumulate_param_gradient(&self, x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let (d, c) = (self.input_dim, self.num_classes);
        let f = self.forward(x);
        let loss = -f.probs[label].max(1e-300).ln();
        let mut delta = f.probs;
        delta[label] -= 1.0;
        match self.architecture {
            Architecture::Softmax => {
                for (k, &dk) in delta.iter().enumerate() {
                    axpy(dk, x, &mut grad[k * d..(k + 1) * d]);
                    grad[c * d + k] += dk;
                }
            }
            Architecture::Mlp { hidden } => {
                let (w1, b1, w2, b2) = self.mlp_offsets();
                for (k, &dk) in delta.iter().enumerate() {
                    axpy(
                        dk,
                        &f.hidden,
                        &mut grad[w2 + k * hidden..w2 + (k + 1) * hidden],
                    );
                    grad[b2 + k] += dk;
                }
                for j in 0..hidden {
                    if f.pre[j] <= 0.0 {
                        continue;
                    }
                    let daj: f64 = (0..c)
                        .map(|k| delta[k] * self.params[w2 + k * hidden + j])
                        .sum();
                    axpy(daj, x, &mut grad[w1 + j * d..w1 + (j + 1) * d]);
                    grad[b1 + j] += daj;
                }
            }
        }
        loss
    }

    /// Smallest |pre-activation| of the hidden layer at `x` (infinite for
    /// softmax models), used to avoid ReLU kinks in finite differences.
    pub fn kink_distance(&self, x: &[f64]) -> f64 {
        self.forward(x)
            .pre
            .iter()
            .map(|a| a.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn accuracy(&self, corpus: &Corpus) -> f64 {
        if corpus.is_empty() {
            return 0.0;
        }
        let correct = corpus
            .samples()
            .iter()
            .filter(|s| self.predict(&s.image) == s.label)
            .count();
        correct as f64 / corpus.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// JSON header line followed by little-endian `f64` parameters.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            schema: MODEL_SCHEMA.into(),
            architecture: self.architecture,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            seed: self.seed,
            param_count: self.params.len(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for p in &self.params {
            out.write_all(&p.to_le_bytes()).expect("write to Vec");
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::BadModel("missing header".into()))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.schema != MODEL_SCHEMA {
            return Err(Error::SchemaMismatch {
                expected: MODEL_SCHEMA.into(),
                found: header.schema,
            });
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.param_count * 8 {
            return Err(Error::BadModel(format!(
                "expected {} parameter bytes, found {}",
                header.param_count * 8,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut m = Self::from_params(
            header.architecture,
            header.input_dim,
            header.num_classes,
            params,
        )?;
        m.seed = header.seed;
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Minibatch SGD on mean cross-entropy (plus optional L2 on weights).
pub fn train(
    corpus: &Corpus,
    validation: Option<&Corpus>,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    let (w, h) = corpus.dims().ok_or(Error::EmptyCorpus)?;
    if cfg.batch_size == 0
        || cfg.epochs == 0
        || cfg.learning_rate.is_nan()
        || cfg.learning_rate <= 0.0
    {
        return Err(Error::InvalidConfig(
            "epochs, batch_size and learning_rate must be positive".into(),
        ));
    }
    if let Architecture::Mlp { hidden: 0 } = cfg.architecture {
        return Err(Error::InvalidConfig("hidden width must be positive".into()));
    }
    let mut model =
        Classifier::initialized(cfg.architecture, w * h, corpus.num_classes(), cfg.seed);
    let mut rng = seed::rng(seed::substream(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let s = &corpus.samples()[i];
                total += model.accumulate_param_gradient(s.image.pixels(), s.label, &mut grad);
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= scale * g + cfg.learning_rate * cfg.l2 * *p;
            }
        }
        epoch_losses.push(total / corpus.len() as f64);
    }
    let report = TrainReport {
        train_accuracy: model.accuracy(corpus),
        validation_accuracy: validation.map(|v| model.accuracy(v)),
        final_train_loss: *epoch_losses.last().unwrap(),
        epoch_losses,
    };
    Ok((model, report))
}

/// Outcome of comparing analytic input gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-6)`.
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// True when a perturbation of size `h` could cross a ReLU kink.
    pub near_kink: bool,
}

pub fn gradient_check(model: &Classifier, x: &Image, label: usize) -> GradientCheck {
    const H: f64 = 1e-4;
    let base = x.pixels();
    let (_, analytic) = model.input_gradient(base, label);
    let mut probe = base.to_vec();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for i in 0..base.len() {
        probe[i] = base[i] + H;
        let up = model.loss(&probe, label);
        probe[i] = base[i] - H;
        let down = model.loss(&probe, label);
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * H);
        let err = (analytic[i] - numeric).abs();
        max_abs = max_abs.max(err);
        max_rel = max_rel.max(err / analytic[i].abs().max(numeric.abs()).max(1e-6));
    }
    let near_kink = match model.architecture {
        Architecture::Softmax => false,
        Architecture::Mlp { hidden } => {
            let d = model.input_dim;
            let w_max = model.params[..hidden * d]
                .iter()
                .fold(0.0f64, |m, w| m.max(w.abs()));
            model.kink_distance(base) <= H * w_max
        }
    };
    GradientCheck {
        max_relative_error: max_rel,
        max_abs_error: max_abs,
        near_kink,
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::image::LabeledSample;

    fn separable() -> Corpus {
        let mut rng = seed::rng(4);
        let samples = (0..60)
            .map(|i| {
                let label = i % 2;
                let px: Vec<f64> = (0..16)
                    .map(|j| {
                        let on = if label == 0 { j < 8 } else { j >= 8 };
                        if on {
                            0.8 + 0.2 * rng.random::<f64>()
                        } else {
                            0.2 * rng.random::<f64>()
                        }
                    })
                    .collect();
                LabeledSample::clean(Image::new(4, 4, px).unwrap(), label)
            })
            .collect();
        Corpus::new("toy", 2, samples).unwrap()
    }

    #[test]
    fn separable_set_is_learned() {
        let c = separable();
        for arch in [Architecture::Softmax, Architecture::Mlp { hidden: 8 }] {
            let cfg = TrainConfig {
                architecture: arch,
                epochs: 30,
                batch_size: 8,
                ..TrainConfig::default()
            };
            let (_, rep) = train(&c, None, &cfg).unwrap();
            assert_eq!(rep.train_accuracy, 1.0, "{arch:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let c = separable();
        let cfg = TrainConfig {
            architecture: Architecture::Mlp { hidden: 5 },
            seed: 12,
            ..TrainConfig::default()
        };
        let (a, _) = train(&c, None, &cfg).unwrap();
        let (b, _) = train(&c, None, &cfg).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let c = separable();
        let (m, _) = train(
            &c,
            None,
            &TrainConfig {
                architecture: Architecture::Mlp { hidden: 4 },
                ..Default::default()
            },
        )
        .unwrap();
        for s in c.samples() {
            let p = m.probabilities(&s.image);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_model_gradient_has_closed_form() {
        // uniform softmax: dL/dz = 1/C - onehot, and W = 0 so dL/dx = 0
        let m = Classifier::zeros(Architecture::Softmax, 9, 3);
        let x = Image::filled(3, 3, 0.0);
        let (loss, g) = m.input_gradient(x.pixels(), 1);
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        assert!(g.iter().all(|&v| v == 0.0));

        // with a single non-zero weight row the gradient is (p_k - y_k) W_k
        let mut m = m;
        m.params_mut()[0] = 2.0; // W[0][0]
        let (_, g) = m.input_gradient(x.pixels(), 1);
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(gradient_check(&m, &x, 1).max_relative_error < 1e-5);
    }

    #[test]
    fn gradient_check_passes() {
        let c = separable();
        for arch in [Architecture::Softmax, Architecture::Mlp { hidden: 6 }] {
            let (m, _) = train(
                &c,
                None,
                &TrainConfig {
                    architecture: arch,
                    ..Default::default()
                },
            )
            .unwrap();
            let mut checked = 0;
            for s in c.samples().iter().take(20) {
                let gc = gradient_check(&m, &s.image, 1 - s.label);
                if gc.near_kink {
                    continue;
                }
                let tol = if arch == Architecture::Softmax {
                    1e-5
                } else {
                    1e-4
                };
                assert!(gc.max_relative_error <= tol, "{arch:?}: {gc:?}");
                checked += 1;
            }
            assert!(checked > 10);
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let m = Classifier::initialized(Architecture::Mlp { hidden: 3 }, 4, 2, 8);
        let back = Classifier::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut bytes = m.to_bytes().unwrap();
        bytes.pop();
        assert!(Classifier::from_bytes(&bytes).is_err());
    }
}
