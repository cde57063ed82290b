//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use ipts_core::attack::{self, Architecture, AttackKind, AttackSpec, Classifier, TrainConfig};
use ipts_core::dataset;
use ipts_core::detector::{
    self, CalibrationConfig, DecisionRule, Detector, DetectorProfile, SipsPool,
};
use ipts_core::ga::{self, GaConfig, GaRunReport};
use ipts_core::image::Corpus;
use ipts_core::metrics::WeightMode;
use ipts_core::seed;
use ipts_core::{Codec, Genome, IptParams};

use crate::config;
use crate::{Global, UsageError};

pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const GA_REPORT_FILE: &str = "ga_report.json";
pub const BEST_GENOME_FILE: &str = "best_genome.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const SPLIT_DIR: &str = "split";
pub const PROFILE_FILE: &str = "profile.json";
pub const POOL_FILE: &str = "pool.json";
pub const VERDICTS_JSON: &str = "verdicts.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const VERDICTS_CSV: &str = "verdicts.csv";
pub const FITNESS_TRACE_FILE: &str = "fitness_trace.csv";

#[derive(Serialize)]
struct Doc<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, schema: &str, body: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Doc { schema, body })? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let found = value
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or("<missing>");
    if found != schema {
        bail!(ipts_core::Error::SchemaMismatch {
            expected: schema.into(),
            found: found.into(),
        });
    }
    Ok(serde_json::from_value(value)?)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!(UsageError(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn prepare_out(g: &Global, command: &str, args: &impl Serialize) -> Result<PathBuf> {
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    config::write_echo(&g.out, &config::echo(command, g, args)?)?;
    log::info!("{command}: writing outputs to {}", g.out.display());
    Ok(g.out.clone())
}

fn load_idx_pair(images: &Path, labels: &Path) -> Result<Corpus> {
    require(images, "image file")?;
    require(labels, "label file")?;
    dataset::load_idx(images, labels).with_context(|| format!("loading {}", images.display()))
}

fn load_dir(dir: &Path, what: &str) -> Result<Corpus> {
    require(dir, what)?;
    dataset::load_image_dir(dir).with_context(|| format!("loading {what} {}", dir.display()))
}

fn window(corpus: &Corpus, offset: usize, limit: Option<usize>) -> Corpus {
    let end = limit.map_or(corpus.len(), |l| (offset + l).min(corpus.len()));
    let idx: Vec<usize> = (offset.min(end)..end).collect();
    corpus.select(corpus.name().to_string(), &idx)
}

fn parse_arg<T: std::str::FromStr>(value: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("invalid {what} {value:?}: {e}")))
}

fn codec_named(name: &str) -> Result<Codec> {
    Codec::by_name(name).ok_or_else(|| usage(format!("unknown codec {name:?}; use 2bit or 3bit")))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// IDX image file (optionally gzipped).
    #[arg(long)]
    pub train_images: PathBuf,
    #[arg(long)]
    pub train_labels: PathBuf,
    /// Held-out IDX images; without them a fraction of train is held out.
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// Use only the first N training samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// softmax or mlp.
    #[arg(long, default_value = "softmax")]
    pub arch: String,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    architecture: Architecture,
    train_count: usize,
    heldout_count: usize,
    train_accuracy: f64,
    heldout_accuracy: f64,
    report: &'a attack::TrainReport,
    config: &'a TrainConfig,
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let architecture = match a.arch.as_str() {
        "softmax" => Architecture::Softmax,
        "mlp" => Architecture::Mlp { hidden: a.hidden },
        other => return Err(usage(format!("unknown architecture {other:?}"))),
    };
    let full = load_idx_pair(&a.train_images, &a.train_labels)?;
    let full = window(&full, 0, a.limit);
    let (train_set, heldout) = match (&a.test_images, &a.test_labels) {
        (Some(i), Some(l)) => (full, load_idx_pair(i, l)?),
        (None, None) => {
            if !(0.0..1.0).contains(&a.holdout) {
                return Err(usage("holdout must lie in [0,1)"));
            }
            let mut idx: Vec<usize> = (0..full.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut seed::rng(seed::substream(g.seed, "split")));
            let n_hold = ((full.len() as f64) * a.holdout).round() as usize;
            let (hold, rest) = idx.split_at(n_hold);
            (full.select("train", rest), full.select("heldout", hold))
        }
        _ => return Err(usage("--test-images and --test-labels go together")),
    };
    let out = prepare_out(g, "train", a)?;
    let cfg = TrainConfig {
        architecture,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        l2: a.l2,
        seed: seed::substream(g.seed, "train"),
    };
    let validation = (!heldout.is_empty()).then_some(&heldout);
    let (model, report) = attack::train(&train_set, validation, &cfg)?;
    model.save(&out.join(MODEL_FILE))?;
    let heldout_accuracy = report.validation_accuracy.unwrap_or(0.0);
    write_json(
        &out.join(TRAIN_REPORT_FILE),
        "ipts-train-report/1",
        &TrainOutput {
            architecture,
            train_count: train_set.len(),
            heldout_count: heldout.len(),
            train_accuracy: report.train_accuracy,
            heldout_accuracy,
            report: &report,
            config: &cfg,
        },
    )?;
    println!(
        "trained {} on {} samples: train accuracy {:.4}, held-out accuracy {:.4}",
        a.arch,
        train_set.len(),
        report.train_accuracy,
        heldout_accuracy
    );
    Ok(())
}

// ---------------------------------------------------------------- attack-gen

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackGenArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Source IDX images.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Source image directory (instead of IDX files).
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    #[arg(long)]
    pub limit: Option<usize>,
    /// fgsm, bim, mbim or pgd.
    #[arg(long, default_value = "fgsm")]
    pub kind: String,
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub momentum: f64,
    #[arg(long)]
    pub random_start: Option<bool>,
    /// Fail unless at least this many survivors are produced.
    #[arg(long, default_value_t = 250)]
    pub min_count: usize,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct AttackProvenance {
    pub source: String,
    pub offset: usize,
    pub source_count: usize,
    pub stats: attack::AttackStats,
    pub source_indices: Vec<usize>,
}

fn load_source(
    images: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    dir: &Option<PathBuf>,
) -> Result<(Corpus, String)> {
    match (images, labels, dir) {
        (Some(i), Some(l), None) => Ok((load_idx_pair(i, l)?, i.display().to_string())),
        (None, None, Some(d)) => Ok((load_dir(d, "input directory")?, d.display().to_string())),
        _ => Err(usage("give either --images with --labels, or --input-dir")),
    }
}

pub fn attack_gen(g: &Global, a: &AttackGenArgs) -> Result<()> {
    require(&a.model, "model file")?;
    let kind: AttackKind = parse_arg(&a.kind, "attack kind")?;
    let (source, source_name) = load_source(&a.images, &a.labels, &a.input_dir)?;
    let source = window(&source, a.offset, a.limit);
    let model = Classifier::load(&a.model)?;
    let mut spec = AttackSpec::new(kind, a.epsilon);
    if let Some(s) = a.step_size {
        spec.step_size = s;
    }
    if let Some(n) = a.iterations {
        spec.iterations = n;
    }
    if let Some(r) = a.random_start {
        spec.random_start = r;
    }
    spec.momentum_decay = a.momentum;
    spec.validate().map_err(|e| usage(e.to_string()))?;

    let out = prepare_out(g, "attack-gen", a)?;
    let result = attack::build_attack_corpus(
        &model,
        &source,
        &spec,
        a.min_count,
        seed::substream(g.seed, "attack"),
    )?;
    dataset::write_image_dir(&result.corpus, &out)?;
    write_json(
        &out.join(PROVENANCE_FILE),
        "ipts-attack-provenance/1",
        &AttackProvenance {
            source: source_name,
            offset: a.offset,
            source_count: source.len(),
            stats: result.stats.clone(),
            source_indices: result.source_indices.clone(),
        },
    )?;
    let s = &result.stats;
    println!(
        "{} eps={}: {} survivors of {} attacked ({} fooled, destruction rate {:.4})",
        spec.label(),
        spec.epsilon,
        s.survivors,
        s.correctly_classified,
        s.fooled,
        s.destruction_rate
    );
    Ok(())
}

// ---------------------------------------------------------------- evolve

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvolveArgs {
    /// Adversarial image directory (output of attack-gen).
    #[arg(long)]
    pub adv: PathBuf,
    /// Clean image directory.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Clean IDX images (instead of a directory).
    #[arg(long)]
    pub clean_images: Option<PathBuf>,
    #[arg(long)]
    pub clean_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub clean_offset: usize,
    #[arg(long)]
    pub clean_limit: Option<usize>,
    /// 2bit or 3bit.
    #[arg(long, default_value = "2bit")]
    pub codec: String,
    #[arg(long, default_value_t = 36)]
    pub pop: usize,
    #[arg(long, default_value_t = 30)]
    pub generations: usize,
    /// Maximum genes per genome (default 3 for 2bit, 4 for 3bit).
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub mutation_rate: f64,
    #[arg(long, default_value_t = 2)]
    pub elites: usize,
    #[arg(long)]
    pub patience: Option<usize>,
    /// per-generation or frozen.
    #[arg(long, default_value = "per-generation")]
    pub weight_mode: String,
    /// homogeneous, none, or a comma-separated list of bit strings.
    #[arg(long, default_value = "homogeneous")]
    pub heuristic_seeds: String,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct SplitSummary {
    pub adv_train: usize,
    pub adv_test: usize,
    pub clean_train: usize,
    pub clean_test: usize,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct EvolveOutput {
    pub split: SplitSummary,
    pub report: GaRunReport,
}

/// Seeded split: the adversarial set is divided by `train_fraction`, and a
/// disjoint clean sample of matching size is drawn for each side.
fn split_corpora(
    adv: &Corpus,
    clean: &Corpus,
    fraction: f64,
    split_seed: u64,
) -> Result<[Corpus; 4]> {
    use rand::seq::SliceRandom;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(usage("train-fraction must lie in (0,1)"));
    }
    let n = adv.len();
    let n_train = ((n as f64) * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(usage(format!(
            "{n} adversarial samples are too few to split"
        )));
    }
    if clean.len() < n {
        bail!(ipts_core::Error::InsufficientSamples {
            found: clean.len(),
            required: n,
        });
    }
    let mut a_idx: Vec<usize> = (0..n).collect();
    a_idx.shuffle(&mut seed::rng(seed::derive(split_seed, 0)));
    let mut c_idx: Vec<usize> = (0..clean.len()).collect();
    c_idx.shuffle(&mut seed::rng(seed::derive(split_seed, 1)));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok([
        adv.select("adv-train", &sorted(&a_idx[..n_train])),
        adv.select("adv-test", &sorted(&a_idx[n_train..])),
        clean.select("clean-train", &sorted(&c_idx[..n_train])),
        clean.select("clean-test", &sorted(&c_idx[n_train..n])),
    ])
}

pub fn split_dir(out: &Path, part: &str) -> PathBuf {
    out.join(SPLIT_DIR).join(part)
}

pub fn evolve(g: &Global, a: &EvolveArgs) -> Result<()> {
    let codec = codec_named(&a.codec)?;
    let adv = load_dir(&a.adv, "adversarial directory")?;
    let clean = match (&a.clean, &a.clean_images, &a.clean_labels) {
        (Some(d), None, None) => load_dir(d, "clean directory")?,
        (None, Some(i), Some(l)) => load_idx_pair(i, l)?,
        _ => {
            return Err(usage(
                "give either --clean or --clean-images with --clean-labels",
            ))
        }
    };
    let clean = window(&clean, a.clean_offset, a.clean_limit);
    let weight_mode: WeightMode = parse_arg(&a.weight_mode, "weight mode")?;
    let mut cfg = GaConfig::for_codec(&codec);
    if let Some(m) = a.max_len {
        cfg = cfg.with_max_len(&codec, m);
    }
    cfg.heuristic_seeds = match a.heuristic_seeds.as_str() {
        "homogeneous" => cfg.heuristic_seeds,
        "none" | "" => Vec::new(),
        list => list
            .split(',')
            .map(|s| parse_arg::<Genome>(s.trim(), "genome"))
            .collect::<Result<_>>()?,
    };
    cfg.population_size = a.pop;
    cfg.max_generations = a.generations;
    cfg.mutation_rate = a.mutation_rate;
    cfg.elite_count = a.elites;
    cfg.patience = a.patience;
    cfg.weight_mode = weight_mode;
    cfg.seed = seed::substream(g.seed, "ga");
    cfg.noise_seed = seed::substream(g.seed, "noise");
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let [adv_train, adv_test, clean_train, clean_test] = split_corpora(
        &adv,
        &clean,
        a.train_fraction,
        seed::substream(g.seed, "split"),
    )?;
    let out = prepare_out(g, "evolve", a)?;
    for (part, corpus) in [
        ("adv-train", &adv_train),
        ("adv-test", &adv_test),
        ("clean-train", &clean_train),
        ("clean-test", &clean_test),
    ] {
        let dir = split_dir(&out, part);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        dataset::write_image_dir(corpus, &dir)?;
    }

    let report = ga::run(
        &cfg,
        &codec,
        &IptParams::default(),
        &adv_train,
        &clean_train,
    )?;
    let best = &report.best;
    fs::write(out.join(BEST_GENOME_FILE), format!("{}\n", best.genome))?;
    write_trace(&out.join(TRACE_FILE), &report)?;
    write_json(
        &out.join(TIMING_FILE),
        "ipts-timing/1",
        &serde_json::json!({ "wall_clock_secs": report.wall_clock.as_secs_f64() }),
    )?;
    let summary = SplitSummary {
        adv_train: adv_train.len(),
        adv_test: adv_test.len(),
        clean_train: clean_train.len(),
        clean_test: clean_test.len(),
    };
    let doc = EvolveOutput {
        split: summary,
        report,
    };
    write_json(&out.join(GA_REPORT_FILE), "ipts-ga-report/1", &doc)?;
    println!(
        "best genome {} ({}) F_V {:.6} after {} generations, {} evaluations",
        doc.report.best.genome,
        codec.decode(&doc.report.best.genome)?.describe(),
        doc.report.best.fitness.f_v,
        doc.report.generations.len(),
        doc.report.evaluations
    );
    Ok(())
}

fn write_trace(path: &Path, report: &GaRunReport) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "generation",
        "best_fv",
        "mean_fv",
        "best_genome",
        "distinct_genomes",
    ])?;
    for t in std::iter::once(&report.initial).chain(&report.generations) {
        w.write_record([
            t.generation.to_string(),
            t.best_fv.to_string(),
            t.mean_fv.to_string(),
            t.best_genome.to_string(),
            t.distinct_genomes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_evolve_output(dir: &Path) -> Result<EvolveOutput> {
    let path = dir.join(GA_REPORT_FILE);
    require(&path, "GA report")?;
    read_json(&path, "ipts-ga-report/1")
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    /// Output directory of `evolve`; supplies genome, codec and the training split.
    #[arg(long)]
    pub evolve_dir: Option<PathBuf>,
    /// Genome bit string (overrides the evolved one).
    #[arg(long)]
    pub genome: Option<String>,
    #[arg(long)]
    pub codec: Option<String>,
    /// Adversarial training directory.
    #[arg(long)]
    pub adv: Option<PathBuf>,
    /// Clean training directory.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Range half-width in standard deviations.
    #[arg(long, default_value_t = detector::DEFAULT_K)]
    pub k: f64,
    /// either, range or nearest.
    #[arg(long, default_value = "either")]
    pub rule: String,
    #[arg(long, default_value = "unknown")]
    pub attack_tag: String,
    #[arg(long, default_value = "unknown")]
    pub dataset_tag: String,
}

pub fn calibrate(g: &Global, a: &CalibrateArgs) -> Result<()> {
    let evolved = a
        .evolve_dir
        .as_deref()
        .map(load_evolve_output)
        .transpose()?;
    let codec = match (&a.codec, &evolved) {
        (Some(name), _) => codec_named(name)?,
        (None, Some(e)) => e.report.codec.clone(),
        (None, None) => Codec::two_bit(),
    };
    let genome: Genome = match (&a.genome, &evolved) {
        (Some(s), _) => parse_arg(s, "genome")?,
        (None, Some(e)) => e.report.best.genome.clone(),
        (None, None) => return Err(usage("give --genome or --evolve-dir")),
    };
    codec
        .check(&genome, usize::MAX)
        .map_err(|e| usage(e.to_string()))?;
    let pick = |explicit: &Option<PathBuf>, part: &str| -> Result<PathBuf> {
        match (explicit, &a.evolve_dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(split_dir(d, part)),
            (None, None) => Err(usage(format!(
                "give --{} or --evolve-dir",
                part.split('-').next().unwrap()
            ))),
        }
    };
    let adv = load_dir(&pick(&a.adv, "adv-train")?, "adversarial directory")?;
    let clean = load_dir(&pick(&a.clean, "clean-train")?, "clean directory")?;
    let rule: DecisionRule = parse_arg(&a.rule, "decision rule")?;
    let params = evolved
        .as_ref()
        .map(|e| e.report.params.clone())
        .unwrap_or_default();
    let cfg = CalibrationConfig {
        params,
        k: a.k,
        noise_seed: seed::substream(g.seed, "noise"),
        rule,
        attack_tag: a.attack_tag.clone(),
        dataset_tag: a.dataset_tag.clone(),
    };
    let out = prepare_out(g, "calibrate", a)?;
    let profile = detector::calibrate(&genome, &codec, &adv, &clean, &cfg)?;
    profile.save(&out.join(PROFILE_FILE))?;
    println!(
        "profile {}: h_avg range [{:.3}, {:.3}], adversarial mean {:.3}, clean mean {:.3}{}",
        profile.id,
        profile.h_avg_range[0],
        profile.h_avg_range[1],
        profile.reference_adv.h_avg_mean,
        profile.reference_clean.h_avg_mean,
        if profile.zero_separation {
            " (zero separation)"
        } else {
            ""
        }
    );
    Ok(())
}

// ---------------------------------------------------------------- pool

#[derive(Debug, Clone, Args, Serialize)]
pub struct PoolArgs {
    /// Profile files, comma separated or repeated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub profiles: Vec<PathBuf>,
}

pub fn pool(g: &Global, a: &PoolArgs) -> Result<()> {
    for p in &a.profiles {
        require(p, "profile")?;
    }
    let profiles = a
        .profiles
        .iter()
        .map(|p| DetectorProfile::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let pool = SipsPool::new(profiles, seed::substream(g.seed, "selection"))?;
    let out = prepare_out(g, "pool", a)?;
    pool.save(&out.join(POOL_FILE))?;
    println!("pool of {} profiles", pool.len());
    Ok(())
}

// ---------------------------------------------------------------- detect / eval

enum Loaded {
    Profile(Box<DetectorProfile>),
    Pool(SipsPool),
}

impl Loaded {
    fn load(profile: &Option<PathBuf>, pool: &Option<PathBuf>) -> Result<Self> {
        match (profile, pool) {
            (Some(p), None) => {
                require(p, "profile")?;
                Ok(Loaded::Profile(Box::new(DetectorProfile::load(p)?)))
            }
            (None, Some(p)) => {
                require(p, "pool")?;
                Ok(Loaded::Pool(SipsPool::load(p)?))
            }
            _ => Err(usage("give exactly one of --profile or --pool")),
        }
    }

    fn detector(&self) -> Detector<'_> {
        match self {
            Loaded::Profile(p) => Detector::Profile(p),
            Loaded::Pool(p) => Detector::Pool(p),
        }
    }

    fn selection_rng(&self, g: &Global) -> rand_chacha::ChaCha8Rng {
        let base = match self {
            Loaded::Profile(_) => 0,
            Loaded::Pool(p) => p.selection_seed,
        };
        seed::rng(seed::derive(base, seed::substream(g.seed, "selection")))
    }

    fn ids(&self) -> Vec<String> {
        match self {
            Loaded::Profile(p) => vec![p.id.clone()],
            Loaded::Pool(p) => p.profiles.iter().map(|p| p.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Image files or directories, comma separated or repeated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FileVerdict {
    file: String,
    verdict: detector::DetectionVerdict,
}

fn image_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        require(input, "input")?;
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(input)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|p| {
                matches!(
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(str::to_ascii_lowercase)
                        .as_deref(),
                    Some("pgm" | "png")
                )
            });
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn read_image(path: &Path) -> Result<ipts_core::Image> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    Ok(match ext.as_deref() {
        Some("png") => dataset::read_png(path)?,
        _ => dataset::read_pgm(path)?,
    })
}

pub fn detect(g: &Global, a: &DetectArgs) -> Result<()> {
    let loaded = Loaded::load(&a.profile, &a.pool)?;
    let files = image_files(&a.input)?;
    let mut rng = loaded.selection_rng(g);
    let mut verdicts = Vec::with_capacity(files.len());
    for f in &files {
        let img = read_image(f).with_context(|| format!("reading {}", f.display()))?;
        let verdict = match &loaded {
            Loaded::Profile(p) => detector::classify(&img, p)?,
            Loaded::Pool(p) => detector::classify_pooled(&img, p, &mut rng)?,
        };
        println!(
            "{}\t{:?}\t{:.4}\t{:?}",
            f.display(),
            verdict.label,
            verdict.h_avg_observed,
            verdict.rule_fired
        );
        verdicts.push(FileVerdict {
            file: f.display().to_string(),
            verdict,
        });
    }
    let out = prepare_out(g, "detect", a)?;
    write_json(
        &out.join(VERDICTS_JSON),
        "ipts-verdicts/1",
        &serde_json::json!({ "verdicts": verdicts }),
    )
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Output directory of `evolve`; supplies the held-out split and trace.
    #[arg(long)]
    pub evolve_dir: Option<PathBuf>,
    /// Held-out adversarial directory.
    #[arg(long)]
    pub adv: Option<PathBuf>,
    /// Held-out clean directory.
    #[arg(long)]
    pub clean: Option<PathBuf>,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct EvalOutput {
    pub detector: Vec<String>,
    pub adv_count: usize,
    pub clean_count: usize,
    pub metrics: detector::DetectionMetrics,
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let loaded = Loaded::load(&a.profile, &a.pool)?;
    let pick = |explicit: &Option<PathBuf>, part: &str, flag: &str| -> Result<PathBuf> {
        match (explicit, &a.evolve_dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(split_dir(d, part)),
            (None, None) => Err(usage(format!("give --{flag} or --evolve-dir"))),
        }
    };
    let adv = load_dir(&pick(&a.adv, "adv-test", "adv")?, "adversarial directory")?;
    let clean = load_dir(&pick(&a.clean, "clean-test", "clean")?, "clean directory")?;
    let evolved = match &a.evolve_dir {
        Some(d) if d.join(GA_REPORT_FILE).exists() => Some(load_evolve_output(d)?),
        _ => None,
    };
    let evaluation = detector::evaluate(
        loaded.detector(),
        &adv,
        &clean,
        &mut loaded.selection_rng(g),
    )?;
    let out = prepare_out(g, "eval", a)?;

    let mut w = csv::Writer::from_path(out.join(VERDICTS_CSV))?;
    w.write_record([
        "set",
        "index",
        "truth",
        "label",
        "profile",
        "h_avg",
        "rule",
        "ed_to_adv",
        "ed_to_clean",
    ])?;
    for r in &evaluation.verdicts {
        let v = &r.verdict;
        w.write_record([
            r.set.clone(),
            r.index.to_string(),
            format!("{:?}", r.truth),
            format!("{:?}", v.label),
            v.profile_used.clone(),
            v.h_avg_observed.to_string(),
            format!("{:?}", v.rule_fired),
            v.ed_to_adv.to_string(),
            v.ed_to_clean.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(e) = &evolved {
        write_trace(&out.join(FITNESS_TRACE_FILE), &e.report)?;
    }
    let m = evaluation.metrics;
    write_json(
        &out.join(METRICS_FILE),
        "ipts-metrics/1",
        &EvalOutput {
            detector: loaded.ids(),
            adv_count: adv.len(),
            clean_count: clean.len(),
            metrics: m,
        },
    )?;
    println!(
        "TP {} FP {} TN {} FN {}: precision {:.4} recall {:.4} F1 {:.4} accuracy {:.4}",
        m.tp, m.fp, m.tn, m.r#fn, m.precision, m.recall, m.f1, m.accuracy
    );
    Ok(())
}
