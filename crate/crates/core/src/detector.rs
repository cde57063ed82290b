//! Detector profiles, randomized profile pools and detection metrics.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{Codec, Genome};
use crate::image::{Corpus, Image};
use crate::ipt::{IptParams, IptSequence};
use crate::metrics::{self, MetricStats};

pub const PROFILE_SCHEMA: &str = "ipts-profile/1";
pub const POOL_SCHEMA: &str = "ipts-pool/1";
pub const DEFAULT_K: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    /// Adversarial if either sub-rule fires.
    #[default]
    Either,
    RangeOnly,
    NearestOnly,
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "either" | "or" => Ok(DecisionRule::Either),
            "range" | "range-only" => Ok(DecisionRule::RangeOnly),
            "nearest" | "nearest-only" => Ok(DecisionRule::NearestOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown decision rule {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub params: IptParams,
    /// Half-width of the range in adversarial standard deviations.
    pub k: f64,
    pub noise_seed: u64,
    pub rule: DecisionRule,
    pub attack_tag: String,
    pub dataset_tag: String,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            params: IptParams::default(),
            k: DEFAULT_K,
            noise_seed: 0,
            rule: DecisionRule::Either,
            attack_tag: "unknown".into(),
            dataset_tag: "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub schema: String,
    pub id: String,
    pub genome: Genome,
    pub codec: Codec,
    pub sequence: String,
    pub params: IptParams,
    pub attack_tag: String,
    pub dataset_tag: String,
    pub dims: (usize, usize),
    pub k: f64,
    /// `[lo, hi]` on the 0–255 scale.
    pub h_avg_range: [f64; 2],
    pub reference_adv: MetricStats,
    pub reference_clean: MetricStats,
    pub noise_seed: u64,
    pub rule: DecisionRule,
    /// Set when the adversarial and clean references are indistinguishable.
    pub zero_separation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Adversarial,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleFired {
    Range,
    NearestReference,
    Both,
    Neither,
}

impl RuleFired {
    fn from_flags(range: bool, nearest: bool) -> Self {
        match (range, nearest) {
            (true, true) => RuleFired::Both,
            (true, false) => RuleFired::Range,
            (false, true) => RuleFired::NearestReference,
            (false, false) => RuleFired::Neither,
        }
    }

    pub fn range(self) -> bool {
        matches!(self, RuleFired::Range | RuleFired::Both)
    }

    pub fn nearest(self) -> bool {
        matches!(self, RuleFired::NearestReference | RuleFired::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub label: Label,
    pub profile_used: String,
    pub profile_index: usize,
    pub h_avg_observed: f64,
    pub rule_fired: RuleFired,
    /// L2 distance of the image's DI histogram to the adversarial reference.
    pub ed_to_adv: f64,
    /// L2 distance of the image's DI histogram to the clean reference.
    pub ed_to_clean: f64,
}

fn io_write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn io_read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_schema(value: &serde_json::Value, expected: &str) -> Result<()> {
    let found = value
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or("<missing>");
    if found != expected {
        return Err(Error::SchemaMismatch {
            expected: expected.into(),
            found: found.into(),
        });
    }
    Ok(())
}

impl DetectorProfile {
    /// Builds a profile from precomputed reference statistics.
    pub fn from_stats(
        genome: Genome,
        codec: Codec,
        dims: (usize, usize),
        reference_adv: MetricStats,
        reference_clean: MetricStats,
        cfg: &CalibrationConfig,
    ) -> Result<Self> {
        let seq = codec.decode(&genome)?;
        if cfg.k.is_nan() || cfg.k < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "k must be non-negative, got {}",
                cfg.k
            )));
        }
        let m = reference_adv.h_avg_mean;
        let s = reference_adv.h_avg_std;
        let lo = (m - cfg.k * s).clamp(0.0, 255.0);
        let hi = (m + cfg.k * s).clamp(0.0, 255.0);
        let zero_separation = metrics::fitness_h(&reference_adv, &reference_clean) == 0.0
            && metrics::fitness_ed(&reference_adv, &reference_clean) == 0.0;
        if zero_separation {
            log::warn!("profile for genome {genome} has zero separation between adversarial and clean references");
        }
        Ok(DetectorProfile {
            schema: PROFILE_SCHEMA.into(),
            id: format!("{}/{}/{}", cfg.dataset_tag, cfg.attack_tag, genome),
            sequence: seq.describe(),
            genome,
            codec,
            params: cfg.params.clone(),
            attack_tag: cfg.attack_tag.clone(),
            dataset_tag: cfg.dataset_tag.clone(),
            dims,
            k: cfg.k,
            h_avg_range: [lo, hi],
            reference_adv,
            reference_clean,
            noise_seed: cfg.noise_seed,
            rule: cfg.rule,
            zero_separation,
        })
    }

    pub fn sequence(&self) -> Result<IptSequence> {
        self.codec.decode(&self.genome)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&value, PROFILE_SCHEMA)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io_write(path, self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io_read(path)?)
    }
}

/// Measures both training corpora under the genome's sequence and derives
/// the detection range from the adversarial statistics.
pub fn calibrate(
    genome: &Genome,
    codec: &Codec,
    adv_train: &Corpus,
    clean_train: &Corpus,
    cfg: &CalibrationConfig,
) -> Result<DetectorProfile> {
    if adv_train.is_empty() || clean_train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dims = adv_train.dims().ok_or(Error::EmptyCorpus)?;
    let clean_dims = clean_train.dims().ok_or(Error::EmptyCorpus)?;
    if dims != clean_dims {
        return Err(Error::DimensionMismatch {
            left: dims,
            right: clean_dims,
        });
    }
    let seq = codec.decode(genome)?;
    let adv = metrics::set_stats(adv_train, &seq, &cfg.params, cfg.noise_seed)?;
    let clean = metrics::set_stats(clean_train, &seq, &cfg.params, cfg.noise_seed)?;
    DetectorProfile::from_stats(genome.clone(), codec.clone(), dims, adv, clean, cfg)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Applies the decision rule to an observed `h_avg`.
pub fn decide(profile: &DetectorProfile, k_i: f64) -> (Label, RuleFired) {
    let [lo, hi] = profile.h_avg_range;
    let in_range = k_i >= lo && k_i <= hi;
    let nearer_adv = (profile.reference_clean.h_avg_mean - k_i).abs()
        > (profile.reference_adv.h_avg_mean - k_i).abs();
    let fired = RuleFired::from_flags(in_range, nearer_adv);
    let adversarial = match profile.rule {
        DecisionRule::Either => in_range || nearer_adv,
        DecisionRule::RangeOnly => in_range,
        DecisionRule::NearestOnly => nearer_adv,
    };
    let label = if adversarial {
        Label::Adversarial
    } else {
        Label::Clean
    };
    (label, fired)
}

pub fn classify(img: &Image, profile: &DetectorProfile) -> Result<DetectionVerdict> {
    classify_indexed(img, profile, 0)
}

fn classify_indexed(
    img: &Image,
    profile: &DetectorProfile,
    index: usize,
) -> Result<DetectionVerdict> {
    if img.dims() != profile.dims {
        return Err(Error::DimensionMismatch {
            left: img.dims(),
            right: profile.dims,
        });
    }
    let seq = profile.sequence()?;
    let di = metrics::image_di(img, &seq, &profile.params, profile.noise_seed);
    let k_i = metrics::h_avg(&di);
    let hist = metrics::histogram(&di).normalized();
    let (label, rule_fired) = decide(profile, k_i);
    Ok(DetectionVerdict {
        label,
        profile_used: profile.id.clone(),
        profile_index: index,
        h_avg_observed: k_i,
        rule_fired,
        ed_to_adv: l2(&hist, &profile.reference_adv.mean_histogram),
        ed_to_clean: l2(&hist, &profile.reference_clean.mean_histogram),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SipsPool {
    pub schema: String,
    pub profiles: Vec<DetectorProfile>,
    pub selection_seed: u64,
}

impl SipsPool {
    pub fn new(profiles: Vec<DetectorProfile>, selection_seed: u64) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::EmptyPool);
        }
        if let Some(p) = profiles.iter().find(|p| p.dims != profiles[0].dims) {
            return Err(Error::DimensionMismatch {
                left: profiles[0].dims,
                right: p.dims,
            });
        }
        Ok(SipsPool {
            schema: POOL_SCHEMA.into(),
            profiles,
            selection_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&value, POOL_SCHEMA)?;
        let pool: SipsPool = serde_json::from_value(value)?;
        for p in &pool.profiles {
            if p.schema != PROFILE_SCHEMA {
                return Err(Error::SchemaMismatch {
                    expected: PROFILE_SCHEMA.into(),
                    found: p.schema.clone(),
                });
            }
        }
        SipsPool::new(pool.profiles, pool.selection_seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io_write(path, self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io_read(path)?)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(0..self.profiles.len())
    }
}

/// Classifies with one uniformly drawn profile of the pool.
pub fn classify_pooled(
    img: &Image,
    pool: &SipsPool,
    rng: &mut impl Rng,
) -> Result<DetectionVerdict> {
    let i = pool.draw(rng);
    classify_indexed(img, &pool.profiles[i], i)
}

/// Either a single profile or a pool.
#[derive(Debug, Clone, Copy)]
pub enum Detector<'a> {
    Profile(&'a DetectorProfile),
    Pool(&'a SipsPool),
}

impl Detector<'_> {
    fn profiles(&self) -> &[DetectorProfile] {
        match self {
            Detector::Profile(p) => std::slice::from_ref(*p),
            Detector::Pool(pool) => &pool.profiles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl DetectionMetrics {
    /// Adversarial is the positive class. Undefined ratios are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        DetectionMetrics {
            tp,
            fp,
            tn,
            r#fn: fn_,
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub set: String,
    pub index: usize,
    pub truth: Label,
    pub verdict: DetectionVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: DetectionMetrics,
    pub verdicts: Vec<VerdictRecord>,
}

/// Classifies every adversarial then every clean sample. Profile choices are
/// drawn sequentially from `rng` in that order, so the verdict stream only
/// depends on the stream's state.
pub fn evaluate(
    detector: Detector<'_>,
    adv_test: &Corpus,
    clean_test: &Corpus,
    rng: &mut impl Rng,
) -> Result<Evaluation> {
    if adv_test.is_empty() || clean_test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let profiles = detector.profiles();
    let jobs: Vec<(&str, usize, Label, &Image)> = adv_test
        .images()
        .enumerate()
        .map(|(i, img)| ("adversarial", i, Label::Adversarial, img))
        .chain(
            clean_test
                .images()
                .enumerate()
                .map(|(i, img)| ("clean", i, Label::Clean, img)),
        )
        .collect();
    let choices: Vec<usize> = match detector {
        Detector::Profile(_) => vec![0; jobs.len()],
        Detector::Pool(pool) => jobs.iter().map(|_| pool.draw(rng)).collect(),
    };
    let verdicts = jobs
        .par_iter()
        .zip(&choices)
        .map(|(&(set, index, truth, img), &c)| {
            Ok(VerdictRecord {
                set: set.into(),
                index,
                truth,
                verdict: classify_indexed(img, &profiles[c], c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for r in &verdicts {
        match (r.truth, r.verdict.label) {
            (Label::Adversarial, Label::Adversarial) => tp += 1,
            (Label::Adversarial, Label::Clean) => fn_ += 1,
            (Label::Clean, Label::Adversarial) => fp += 1,
            (Label::Clean, Label::Clean) => tn += 1,
        }
    }
    Ok(Evaluation {
        metrics: DetectionMetrics::from_counts(tp, fp, tn, fn_),
        verdicts,
    })
}
