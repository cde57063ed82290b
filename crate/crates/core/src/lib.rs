//! Image-processing-sequence adversarial detection: filters, bit-string
//! genomes, difference-image metrics, a steady-state genetic search, native
//! gradient-sign attacks and the resulting detector profiles.

pub mod attack;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod ga;
pub mod genome;
pub mod image;
pub mod ipt;
pub mod metrics;
pub mod seed;
pub mod thinning;

pub use detector::{DetectionVerdict, DetectorProfile, SipsPool};
pub use error::{Error, Result};
pub use ga::{GaConfig, GaRunReport};
pub use genome::{Codec, Genome};
pub use image::{Corpus, Image, LabeledSample, Provenance};
pub use ipt::{IptKind, IptParams, IptSequence};
pub use metrics::{FitnessReport, MetricStats, RawComponents, WeightMode};
