//! Steady-state genetic algorithm over IPT genomes.
//!
//! Each generation is sorted by `F_V` (descending, ties by bit string), the
//! top `elite_count` genomes are copied verbatim, the rest of the top half
//! survives with mutation, and the bottom half is refilled with mutated
//! offspring of gene-aligned two-point crossover between parents drawn from
//! the top half.
//!
//! `F_V` is scored against a normalization basis fixed from the evaluated
//! initial population, so a genome keeps the same fitness for the whole run
//! and elitism makes the best fitness non-decreasing.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{Codec, Genome};
use crate::image::Corpus;
use crate::ipt::IptParams;
use crate::metrics::{
    frozen_weights, measure_set, score_individual, FitnessReport, NormalizationBasis,
    RawComponents, WeightMode,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_len: usize,
    pub mutation_rate: f64,
    pub elite_count: usize,
    pub max_generations: usize,
    /// Stop once the best `F_V` has not changed for this many generations.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Seed for stochastic filters during evaluation.
    pub noise_seed: u64,
    pub heuristic_seeds: Vec<Genome>,
    pub weight_mode: WeightMode,
}

impl GaConfig {
    /// Defaults for a codec: 3 genes for 2-bit, 4 for 3-bit, and one
    /// homogeneous full-length heuristic seed per filter.
    pub fn for_codec(codec: &Codec) -> Self {
        let max_len = if codec.bits_per_gene() == 2 { 3 } else { 4 };
        GaConfig {
            population_size: 36,
            max_len,
            mutation_rate: 0.05,
            elite_count: 2,
            max_generations: 30,
            patience: None,
            seed: 0,
            noise_seed: 0,
            heuristic_seeds: codec.homogeneous(max_len),
            weight_mode: WeightMode::PerGeneration,
        }
    }

    /// Changes `max_len` and regenerates the homogeneous seeds to match.
    pub fn with_max_len(mut self, codec: &Codec, max_len: usize) -> Self {
        self.max_len = max_len;
        self.heuristic_seeds = codec.homogeneous(max_len);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 || self.population_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "population_size must be even and at least 2, got {}",
                self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::InvalidConfig(
                "mutation_rate must lie in [0,1]".into(),
            ));
        }
        if self.elite_count == 0 || self.elite_count > self.population_size {
            return Err(Error::InvalidConfig(format!(
                "elite_count must lie in 1..={}, got {}",
                self.population_size, self.elite_count
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: FitnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub generation: usize,
    pub best_fv: f64,
    pub mean_fv: f64,
    pub best_genome: Genome,
    pub distinct_genomes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaRunReport {
    pub config: GaConfig,
    pub codec: Codec,
    pub params: IptParams,
    pub basis: NormalizationBasis,
    pub frozen_weights: Option<[f64; 5]>,
    pub initial: GenerationTrace,
    pub generations: Vec<GenerationTrace>,
    /// Final population, sorted best first.
    pub final_population: Vec<Individual>,
    pub best: Individual,
    pub evaluations: usize,
    /// Not serialized: reports must be byte-identical across replays.
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Evaluates genomes against a fixed pair of corpora, caching raw
/// components per genome.
pub struct Evaluator<'a> {
    codec: &'a Codec,
    params: &'a IptParams,
    adv: &'a Corpus,
    clean: &'a Corpus,
    noise_seed: u64,
    cache: HashMap<Genome, RawComponents>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        codec: &'a Codec,
        params: &'a IptParams,
        adv: &'a Corpus,
        clean: &'a Corpus,
        noise_seed: u64,
    ) -> Result<Self> {
        if adv.is_empty() || clean.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if adv.dims() != clean.dims() {
            return Err(Error::DimensionMismatch {
                left: adv.dims().unwrap_or_default(),
                right: clean.dims().unwrap_or_default(),
            });
        }
        params.validate()?;
        Ok(Evaluator {
            codec,
            params,
            adv,
            clean,
            noise_seed,
            cache: HashMap::new(),
        })
    }

    pub fn raw_components(&mut self, genome: &Genome) -> Result<RawComponents> {
        self.raw_batch(std::slice::from_ref(genome)).map(|v| v[0])
    }

    /// Raw components for each genome, evaluating unseen ones in parallel.
    pub fn raw_batch(&mut self, genomes: &[Genome]) -> Result<Vec<RawComponents>> {
        let mut todo: Vec<&Genome> = genomes
            .iter()
            .filter(|g| !self.cache.contains_key(g))
            .collect();
        todo.sort();
        todo.dedup();
        let (codec, params, adv, clean, noise) = (
            self.codec,
            self.params,
            self.adv,
            self.clean,
            self.noise_seed,
        );
        let fresh: Vec<(Genome, RawComponents)> = todo
            .into_par_iter()
            .map(|g| {
                let seq = codec.decode(g)?;
                let a = measure_set(adv, &seq, params, noise)?;
                let c = measure_set(clean, &seq, params, noise)?;
                Ok((g.clone(), RawComponents::measure(&a, &c)))
            })
            .collect::<Result<_>>()?;
        self.cache.extend(fresh);
        Ok(genomes.iter().map(|g| self.cache[g]).collect())
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }
}

pub fn init_population(cfg: &GaConfig, codec: &Codec, rng: &mut ChaCha8Rng) -> Result<Vec<Genome>> {
    cfg.validate()?;
    if cfg.heuristic_seeds.len() > cfg.population_size {
        return Err(Error::TooManySeeds {
            seeds: cfg.heuristic_seeds.len(),
            population: cfg.population_size,
        });
    }
    for g in &cfg.heuristic_seeds {
        codec.check(g, cfg.max_len)?;
    }
    let mut pop = cfg.heuristic_seeds.clone();
    while pop.len() < cfg.population_size {
        pop.push(codec.random_genome(cfg.max_len, rng));
    }
    Ok(pop)
}

/// Fixed scoring rule for a run: basis (and optionally weights) taken from a
/// reference generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    pub basis: NormalizationBasis,
    pub frozen_weights: Option<[f64; 5]>,
}

impl Scoring {
    pub fn from_reference(raw: &[RawComponents], mode: WeightMode) -> Self {
        let basis = NormalizationBasis::from_generation(raw);
        let frozen_weights = match mode {
            WeightMode::PerGeneration => None,
            WeightMode::Frozen => Some(frozen_weights(raw, &basis)),
        };
        Scoring {
            basis,
            frozen_weights,
        }
    }

    pub fn score(&self, raw: &RawComponents) -> FitnessReport {
        score_individual(raw, &self.basis, self.frozen_weights.as_ref())
    }
}

pub fn evaluate(
    population: &[Genome],
    evaluator: &mut Evaluator<'_>,
    scoring: &Scoring,
) -> Result<Vec<Individual>> {
    let raw = evaluator.raw_batch(population)?;
    Ok(population
        .iter()
        .zip(raw)
        .map(|(g, r)| Individual {
            genome: g.clone(),
            fitness: scoring.score(&r),
        })
        .collect())
}

/// Descending `F_V`, ties broken by ascending bit string.
pub fn sort_population(pop: &mut [Individual]) {
    pop.sort_by(|a, b| {
        b.fitness
            .f_v
            .total_cmp(&a.fitness.f_v)
            .then_with(|| a.genome.cmp(&b.genome))
    });
}

/// Gene-aligned two-point crossover. Points `a < b` are drawn in
/// `0..=min(len)` genes; genes `a..b` are swapped, so each child keeps its
/// first parent's length.
pub fn crossover(
    p1: &Genome,
    p2: &Genome,
    bits_per_gene: usize,
    rng: &mut impl Rng,
) -> (Genome, Genome) {
    let genes = p1.len().min(p2.len()) / bits_per_gene;
    let a = rng.random_range(0..genes);
    let b = rng.random_range(a + 1..=genes);
    let (mut c1, mut c2) = (p1.clone(), p2.clone());
    let range = a * bits_per_gene..b * bits_per_gene;
    c1.bits_mut()[range.clone()].copy_from_slice(&p2.bits()[range.clone()]);
    c2.bits_mut()[range.clone()].copy_from_slice(&p1.bits()[range]);
    (c1, c2)
}

pub fn mutate(genome: &mut Genome, rate: f64, rng: &mut impl Rng) {
    if rate <= 0.0 {
        return;
    }
    for bit in genome.bits_mut() {
        if rng.random_bool(rate) {
            *bit ^= 1;
        }
    }
}

/// One generation of selection, crossover and mutation.
pub fn step(
    evaluated: &[Individual],
    cfg: &GaConfig,
    codec: &Codec,
    rng: &mut ChaCha8Rng,
) -> Vec<Genome> {
    let mut sorted = evaluated.to_vec();
    sort_population(&mut sorted);
    let n = sorted.len();
    let half = n / 2;
    let keep = cfg.elite_count.max(half).min(n);
    let mut next: Vec<Genome> = Vec::with_capacity(n);
    for (i, ind) in sorted.iter().take(keep).enumerate() {
        let mut g = ind.genome.clone();
        if i >= cfg.elite_count {
            mutate(&mut g, cfg.mutation_rate, rng);
        }
        next.push(g);
    }
    let parents = &sorted[..half.max(1)];
    while next.len() < n {
        let p1 = &parents[rng.random_range(0..parents.len())].genome;
        let p2 = &parents[rng.random_range(0..parents.len())].genome;
        let (mut c1, mut c2) = crossover(p1, p2, codec.bits_per_gene(), rng);
        mutate(&mut c1, cfg.mutation_rate, rng);
        next.push(c1);
        if next.len() < n {
            mutate(&mut c2, cfg.mutation_rate, rng);
            next.push(c2);
        }
    }
    next
}

fn trace(generation: usize, pop: &[Individual]) -> GenerationTrace {
    // pop is sorted
    let mean = pop.iter().map(|i| i.fitness.f_v).sum::<f64>() / pop.len() as f64;
    let mut distinct: Vec<&Genome> = pop.iter().map(|i| &i.genome).collect();
    distinct.sort();
    distinct.dedup();
    GenerationTrace {
        generation,
        best_fv: pop[0].fitness.f_v,
        mean_fv: mean,
        best_genome: pop[0].genome.clone(),
        distinct_genomes: distinct.len(),
    }
}

pub fn run(
    cfg: &GaConfig,
    codec: &Codec,
    params: &IptParams,
    adv: &Corpus,
    clean: &Corpus,
) -> Result<GaRunReport> {
    let started = Instant::now();
    cfg.validate()?;
    let mut evaluator = Evaluator::new(codec, params, adv, clean, cfg.noise_seed)?;
    let mut rng = seed::rng(cfg.seed);
    let initial = init_population(cfg, codec, &mut rng)?;

    let raw0 = evaluator.raw_batch(&initial)?;
    let scoring = Scoring::from_reference(&raw0, cfg.weight_mode);
    let mut pop = evaluate(&initial, &mut evaluator, &scoring)?;
    sort_population(&mut pop);
    let initial_trace = trace(0, &pop);

    let mut generations = Vec::with_capacity(cfg.max_generations);
    let mut stale = 0usize;
    for g in 1..=cfg.max_generations {
        let next = step(&pop, cfg, codec, &mut rng);
        let prev_best = pop[0].fitness.f_v;
        pop = evaluate(&next, &mut evaluator, &scoring)?;
        sort_population(&mut pop);
        let t = trace(g, &pop);
        log::debug!(
            "generation {g}: best {:.6} ({}) mean {:.6}",
            t.best_fv,
            t.best_genome,
            t.mean_fv
        );
        stale = if t.best_fv == prev_best { stale + 1 } else { 0 };
        generations.push(t);
        if cfg.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }

    Ok(GaRunReport {
        config: cfg.clone(),
        codec: codec.clone(),
        params: params.clone(),
        basis: scoring.basis.clone(),
        frozen_weights: scoring.frozen_weights,
        initial: initial_trace,
        generations,
        best: pop[0].clone(),
        final_population: pop,
        evaluations: evaluator.evaluations(),
        wall_clock: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Image, LabeledSample};

    fn g(s: &str) -> Genome {
        s.parse().unwrap()
    }

    fn toy_corpora() -> (Corpus, Corpus) {
        let mut rng = seed::rng(77);
        let mk = |rng: &mut ChaCha8Rng, noisy: bool| {
            let px: Vec<f64> = (0..64)
                .map(|i| {
                    let base = if (i % 8) > 2 && (i % 8) < 6 {
                        0.9
                    } else {
                        0.05
                    };
                    if noisy {
                        (base + rng.random_range(-0.3..0.3f64)).clamp(0.0, 1.0)
                    } else {
                        base
                    }
                })
                .collect();
            LabeledSample::clean(Image::new(8, 8, px).unwrap(), 0)
        };
        let adv = (0..6).map(|_| mk(&mut rng, true)).collect();
        let clean = (0..6).map(|_| mk(&mut rng, false)).collect();
        (
            Corpus::new("adv", 1, adv).unwrap(),
            Corpus::new("clean", 1, clean).unwrap(),
        )
    }

    fn small_cfg() -> GaConfig {
        GaConfig {
            population_size: 8,
            max_len: 2,
            max_generations: 5,
            seed: 3,
            heuristic_seeds: Vec::new(),
            ..GaConfig::for_codec(&Codec::two_bit())
        }
    }

    #[test]
    fn init_counts_and_seeds() {
        let codec = Codec::two_bit();
        let mut cfg = GaConfig::for_codec(&codec);
        cfg.heuristic_seeds = vec![g("111100"), g("01")];
        let pop = init_population(&cfg, &codec, &mut seed::rng(1)).unwrap();
        assert_eq!(pop.len(), 36);
        assert_eq!(&pop[..2], &cfg.heuristic_seeds[..]);
        assert!(pop.iter().all(|p| codec.check(p, cfg.max_len).is_ok()));
        assert_eq!(
            pop,
            init_population(&cfg, &codec, &mut seed::rng(1)).unwrap()
        );

        cfg.heuristic_seeds = vec![g("00"); 37];
        assert!(matches!(
            init_population(&cfg, &codec, &mut seed::rng(1)),
            Err(Error::TooManySeeds { .. })
        ));
    }

    #[test]
    fn crossover_preserves_lengths() {
        let mut rng = seed::rng(5);
        let a = g("000000000");
        let b = g("111111111111");
        for _ in 0..100 {
            let (c1, c2) = crossover(&a, &b, 3, &mut rng);
            assert_eq!((c1.len(), c2.len()), (9, 12));
            // swapped material stays gene aligned
            for gene in c1.bits().chunks(3) {
                assert!(gene.iter().all(|&x| x == gene[0]));
            }
            assert_eq!(&c2.bits()[9..], &[1, 1, 1]);
        }
    }

    #[test]
    fn no_op_step() {
        let codec = Codec::two_bit();
        let (adv, clean) = toy_corpora();
        let params = IptParams::default();
        let mut cfg = small_cfg();
        cfg.mutation_rate = 0.0;
        cfg.elite_count = cfg.population_size;
        let pop = init_population(&cfg, &codec, &mut seed::rng(9)).unwrap();
        let mut ev = Evaluator::new(&codec, &params, &adv, &clean, 0).unwrap();
        let scoring = Scoring::from_reference(&ev.raw_batch(&pop).unwrap(), cfg.weight_mode);
        let evaluated = evaluate(&pop, &mut ev, &scoring).unwrap();
        let mut next = step(&evaluated, &cfg, &codec, &mut seed::rng(1));
        let mut before = pop.clone();
        next.sort();
        before.sort();
        assert_eq!(next, before);
    }

    #[test]
    fn elites_survive_unchanged() {
        let codec = Codec::two_bit();
        let (adv, clean) = toy_corpora();
        let params = IptParams::default();
        let mut cfg = small_cfg();
        cfg.mutation_rate = 1.0;
        let pop = init_population(&cfg, &codec, &mut seed::rng(9)).unwrap();
        let mut ev = Evaluator::new(&codec, &params, &adv, &clean, 0).unwrap();
        let scoring = Scoring::from_reference(&ev.raw_batch(&pop).unwrap(), cfg.weight_mode);
        let mut evaluated = evaluate(&pop, &mut ev, &scoring).unwrap();
        let next = step(&evaluated, &cfg, &codec, &mut seed::rng(1));
        sort_population(&mut evaluated);
        assert_eq!(next[0], evaluated[0].genome);
        assert_eq!(next[1], evaluated[1].genome);
        // with rate 1 every other survivor is fully inverted
        let inverted: Vec<u8> = evaluated[2].genome.bits().iter().map(|b| b ^ 1).collect();
        assert_eq!(next[2].bits(), &inverted[..]);
        assert!(next.iter().all(|g| codec.check(g, cfg.max_len).is_ok()));
    }

    #[test]
    fn identical_genomes_get_identical_fitness() {
        let codec = Codec::two_bit();
        let (adv, clean) = toy_corpora();
        let params = IptParams::default();
        let pop = vec![g("1101"); 4];
        let mut ev = Evaluator::new(&codec, &params, &adv, &clean, 0).unwrap();
        let scoring =
            Scoring::from_reference(&ev.raw_batch(&pop).unwrap(), WeightMode::PerGeneration);
        let out = evaluate(&pop, &mut ev, &scoring).unwrap();
        assert!(out.windows(2).all(|w| w[0].fitness == w[1].fitness));

        let raw = ev.raw_components(&g("0000")).unwrap();
        assert_eq!(raw.f_h, 0.0);
    }

    #[test]
    fn zero_generations_returns_initial_best() {
        let codec = Codec::two_bit();
        let (adv, clean) = toy_corpora();
        let mut cfg = small_cfg();
        cfg.max_generations = 0;
        let rep = run(&cfg, &codec, &IptParams::default(), &adv, &clean).unwrap();
        assert!(rep.generations.is_empty());
        assert_eq!(rep.best.genome, rep.initial.best_genome);
        assert_eq!(rep.best.fitness.f_v, rep.initial.best_fv);
    }

    #[test]
    fn run_is_deterministic_and_monotone() {
        let codec = Codec::two_bit();
        let (adv, clean) = toy_corpora();
        let cfg = small_cfg();
        let a = run(&cfg, &codec, &IptParams::default(), &adv, &clean).unwrap();
        let b = run(&cfg, &codec, &IptParams::default(), &adv, &clean).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let mut prev = a.initial.best_fv;
        for t in &a.generations {
            assert!(t.best_fv >= prev);
            prev = t.best_fv;
        }
        assert_eq!(a.final_population.len(), cfg.population_size);
    }

    #[test]
    fn patience_stops_early() {
        let codec = Codec::two_bit();
        let (adv, clean) = toy_corpora();
        let mut cfg = small_cfg();
        cfg.max_generations = 50;
        cfg.patience = Some(2);
        let rep = run(&cfg, &codec, &IptParams::default(), &adv, &clean).unwrap();
        assert!(rep.generations.len() < 50);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.population_size = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.mutation_rate = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.elite_count = 0;
        assert!(cfg.validate().is_err());
    }
}
