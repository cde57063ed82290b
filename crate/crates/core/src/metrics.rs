//! Difference images, DI histograms and the five fitness components.
//!
//! For a candidate sequence, every image of a set is processed, its
//! difference image (DI) against the original is taken, and the per-image
//! mean DI intensity on a 0–255 scale (`h_avg`) and normalized 256-bin DI
//! histogram are aggregated. Fitness compares an adversarial set against a
//! clean set:
//!
//! * `F_H  = (|H_a - H_c|)^2` on the set means of `h_avg`
//! * `F_CE = Σ p(i) ln(1/q(i))` between the mean DI histograms
//! * `F_ED = ||p - q||_2`
//! * `F_CE_PD`, cross-entropy of moment-matched Gaussians evaluated on the bins
//! * `F_L`, binary log-loss of per-image `h_avg/255` scores (adversarial = 1)
//!
//! The components are min-max normalized against a basis, `1/F_L` takes the
//! place of the loss, and the normalized components `c` are combined with
//! weights `W_k = c_k / Σ_{j≠k} c_j` into `F_V = Σ W_k c_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Corpus, Image};
use crate::ipt::{apply_sequence, IptParams, IptSequence};
use crate::seed;

pub const BINS: usize = 256;
pub const PROB_FLOOR: f64 = 1e-12;
pub const DENOM_FLOOR: f64 = 1e-9;
pub const SIGMA_FLOOR: f64 = 0.5;
pub const SCORE_CLAMP: f64 = 1e-6;

pub fn difference_image(original: &Image, processed: &Image) -> Result<Image> {
    if original.dims() != processed.dims() {
        return Err(Error::DimensionMismatch {
            left: original.dims(),
            right: processed.dims(),
        });
    }
    let (w, h) = original.dims();
    let px = original
        .pixels()
        .iter()
        .zip(processed.pixels())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(Image::from_clamped(w, h, px))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    bins: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.bins.iter().map(|&c| c as f64 / t).collect()
    }
}

#[inline]
fn bin_of(i: f64) -> usize {
    ((i * BINS as f64).floor() as usize).min(BINS - 1)
}

pub fn histogram(img: &Image) -> Histogram {
    let mut bins = vec![0u64; BINS];
    for &p in img.pixels() {
        bins[bin_of(p)] += 1;
    }
    Histogram {
        bins,
        total: img.pixels().len() as u64,
    }
}

/// Mean DI intensity on the 0–255 scale.
pub fn h_avg(di: &Image) -> f64 {
    di.mean() * 255.0
}

/// Aggregated DI statistics of one image set under one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub count: usize,
    pub h_avg_mean: f64,
    /// Population standard deviation of the per-image `h_avg`.
    pub h_avg_std: f64,
    pub mean_histogram: Vec<f64>,
}

/// [`MetricStats`] plus the per-image `h_avg` values it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMeasurement {
    pub stats: MetricStats,
    pub h_avgs: Vec<f64>,
}

/// Per-image noise seed: independent of the image's position in its corpus,
/// so calibration and test time see the same noise for the same pixels.
pub fn image_seed(noise_seed: u64, img: &Image) -> u64 {
    seed::derive(noise_seed, img.fingerprint())
}

/// DI of one image under `seq`.
pub fn image_di(img: &Image, seq: &IptSequence, params: &IptParams, noise_seed: u64) -> Image {
    let processed = apply_sequence(img, seq, params, image_seed(noise_seed, img));
    difference_image(img, &processed).expect("filters preserve dimensions")
}

pub fn stats_from_parts(h_avgs: &[f64], hists: &[Vec<f64>]) -> Result<MetricStats> {
    if h_avgs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = h_avgs.len() as f64;
    let mean = h_avgs.iter().sum::<f64>() / n;
    let var = h_avgs.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
    let mut mean_histogram = vec![0.0; BINS];
    for hist in hists {
        for (m, v) in mean_histogram.iter_mut().zip(hist) {
            *m += v;
        }
    }
    for m in &mut mean_histogram {
        *m /= n;
    }
    Ok(MetricStats {
        count: h_avgs.len(),
        h_avg_mean: mean,
        h_avg_std: var.sqrt(),
        mean_histogram,
    })
}

/// Applies `seq` to every image (in parallel) and aggregates in corpus order.
pub fn measure_set(
    corpus: &Corpus,
    seq: &IptSequence,
    params: &IptParams,
    noise_seed: u64,
) -> Result<SetMeasurement> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let per_image: Vec<(f64, Vec<f64>)> = corpus
        .samples()
        .par_iter()
        .map(|s| {
            let di = image_di(&s.image, seq, params, noise_seed);
            (h_avg(&di), histogram(&di).normalized())
        })
        .collect();
    let (h_avgs, hists): (Vec<f64>, Vec<Vec<f64>>) = per_image.into_iter().unzip();
    Ok(SetMeasurement {
        stats: stats_from_parts(&h_avgs, &hists)?,
        h_avgs,
    })
}

pub fn set_stats(
    corpus: &Corpus,
    seq: &IptSequence,
    params: &IptParams,
    noise_seed: u64,
) -> Result<MetricStats> {
    measure_set(corpus, seq, params, noise_seed).map(|m| m.stats)
}

pub fn fitness_h(adv: &MetricStats, clean: &MetricStats) -> f64 {
    let d = (adv.h_avg_mean - clean.h_avg_mean).abs();
    d * d
}

/// `Σ p(i) ln(1/q(i))` with `q` floored at [`PROB_FLOOR`].
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| -pi * qi.max(PROB_FLOOR).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn fitness_ce(adv_hist: &[f64], clean_hist: &[f64]) -> f64 {
    cross_entropy(adv_hist, clean_hist)
}

/// Moment-matched Gaussian over bin indices, `σ` floored at [`SIGMA_FLOOR`].
pub fn gaussian_fit(hist: &[f64]) -> (f64, f64) {
    let mass: f64 = hist.iter().sum();
    if mass <= 0.0 {
        return (0.0, SIGMA_FLOOR);
    }
    let mu = hist
        .iter()
        .enumerate()
        .map(|(i, &p)| i as f64 * p)
        .sum::<f64>()
        / mass;
    let var = hist
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as f64 - mu).powi(2) * p)
        .sum::<f64>()
        / mass;
    (mu, var.sqrt().max(SIGMA_FLOOR))
}

/// Gaussian density evaluated at bins `0..BINS`, renormalized to sum 1.
pub fn gaussian_grid(mu: f64, sigma: f64) -> Vec<f64> {
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let pd: Vec<f64> = (0..BINS)
        .map(|i| {
            let z = (i as f64 - mu) / sigma;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    let sum: f64 = pd.iter().sum();
    pd.into_iter().map(|v| v / sum.max(DENOM_FLOOR)).collect()
}

pub fn fitness_ce_pd(adv_hist: &[f64], clean_hist: &[f64]) -> f64 {
    let (ma, sa) = gaussian_fit(adv_hist);
    let (mc, sc) = gaussian_fit(clean_hist);
    cross_entropy(&gaussian_grid(ma, sa), &gaussian_grid(mc, sc))
}

pub fn fitness_ed(adv: &MetricStats, clean: &MetricStats) -> f64 {
    adv.mean_histogram
        .iter()
        .zip(&clean.mean_histogram)
        .map(|(a, c)| (a - c) * (a - c))
        .sum::<f64>()
        .sqrt()
}

fn score(h_avg: f64) -> f64 {
    (h_avg / 255.0).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// Binary log-loss with `Y = 1` for adversarial scores and `Y = 0` for clean.
pub fn fitness_l(adv_h_avgs: &[f64], clean_h_avgs: &[f64]) -> f64 {
    let adv: f64 = adv_h_avgs.iter().map(|&h| -score(h).ln()).sum();
    let clean: f64 = clean_h_avgs.iter().map(|&h| -(1.0 - score(h)).ln()).sum();
    adv + clean
}

/// Raw (un-normalized) fitness components of one genome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawComponents {
    pub f_h: f64,
    pub f_ce: f64,
    pub f_ed: f64,
    pub f_ce_pd: f64,
    pub f_l: f64,
}

impl RawComponents {
    pub fn measure(adv: &SetMeasurement, clean: &SetMeasurement) -> Self {
        RawComponents {
            f_h: fitness_h(&adv.stats, &clean.stats),
            f_ce: fitness_ce(&adv.stats.mean_histogram, &clean.stats.mean_histogram),
            f_ed: fitness_ed(&adv.stats, &clean.stats),
            f_ce_pd: fitness_ce_pd(&adv.stats.mean_histogram, &clean.stats.mean_histogram),
            f_l: fitness_l(&adv.h_avgs, &clean.h_avgs),
        }
    }

    /// The five maximized terms: `F_H, F_CE, F_ED, F_CE_PD, 1/F_L`.
    pub fn terms(&self) -> [f64; 5] {
        [
            self.f_h,
            self.f_ce,
            self.f_ed,
            self.f_ce_pd,
            1.0 / self.f_l.max(DENOM_FLOOR),
        ]
    }
}

/// Per-term min/max used for normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBasis {
    pub min: [f64; 5],
    pub max: [f64; 5],
}

impl NormalizationBasis {
    pub fn from_generation(raw: &[RawComponents]) -> Self {
        let mut min = [f64::INFINITY; 5];
        let mut max = [f64::NEG_INFINITY; 5];
        for r in raw {
            for (k, t) in r.terms().into_iter().enumerate() {
                min[k] = min[k].min(t);
                max[k] = max[k].max(t);
            }
        }
        if raw.is_empty() {
            min = [0.0; 5];
            max = [0.0; 5];
        }
        NormalizationBasis { min, max }
    }

    /// Normalized terms, clamped into `[0, 1]` for values outside the basis.
    pub fn normalize(&self, raw: &RawComponents) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (k, t) in raw.terms().into_iter().enumerate() {
            let span = (self.max[k] - self.min[k]).max(DENOM_FLOOR);
            out[k] = ((t - self.min[k]) / span).clamp(0.0, 1.0);
        }
        out
    }
}

/// `W_k = c_k / max(Σ_{j≠k} c_j, 1e-9)`.
pub fn weights_for(c: &[f64; 5]) -> [f64; 5] {
    let total: f64 = c.iter().sum();
    let mut w = [0.0; 5];
    for k in 0..5 {
        w[k] = c[k] / (total - c[k]).max(DENOM_FLOOR);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Weights follow each individual's normalized components.
    #[default]
    PerGeneration,
    /// Weights fixed from the mean normalized components of a reference
    /// generation.
    Frozen,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-generation" => Ok(WeightMode::PerGeneration),
            "frozen" => Ok(WeightMode::Frozen),
            other => Err(Error::InvalidConfig(format!(
                "unknown weight mode {other:?}"
            ))),
        }
    }
}

/// Weights shared by every individual under [`WeightMode::Frozen`].
pub fn frozen_weights(raw: &[RawComponents], basis: &NormalizationBasis) -> [f64; 5] {
    let mut mean = [0.0; 5];
    for r in raw {
        for (m, c) in mean.iter_mut().zip(basis.normalize(r)) {
            *m += c;
        }
    }
    for m in &mut mean {
        *m /= raw.len().max(1) as f64;
    }
    weights_for(&mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub f_h: f64,
    pub f_ce: f64,
    pub f_ed: f64,
    pub f_ce_pd: f64,
    pub f_l: f64,
    /// Normalized `F_H, F_CE, F_ED, F_CE_PD, 1/F_L`.
    pub normalized: [f64; 5],
    pub weights: [f64; 5],
    pub f_v: f64,
}

pub fn score_individual(
    raw: &RawComponents,
    basis: &NormalizationBasis,
    frozen: Option<&[f64; 5]>,
) -> FitnessReport {
    let c = basis.normalize(raw);
    let w = frozen.copied().unwrap_or_else(|| weights_for(&c));
    let f_v = c.iter().zip(&w).map(|(c, w)| c * w).sum();
    FitnessReport {
        f_h: raw.f_h,
        f_ce: raw.f_ce,
        f_ed: raw.f_ed,
        f_ce_pd: raw.f_ce_pd,
        f_l: raw.f_l,
        normalized: c,
        weights: w,
        f_v,
    }
}

/// Scores a whole generation against its own min-max basis.
pub fn combine(raw: &[RawComponents], mode: WeightMode) -> Vec<FitnessReport> {
    let basis = NormalizationBasis::from_generation(raw);
    let frozen = match mode {
        WeightMode::PerGeneration => None,
        WeightMode::Frozen => Some(frozen_weights(raw, &basis)),
    };
    raw.iter()
        .map(|r| score_individual(r, &basis, frozen.as_ref()))
        .collect()
}
