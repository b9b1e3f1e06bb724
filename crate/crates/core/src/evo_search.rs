//! Evolutionary multi-objective search.
//!
//! Individuals are ranked by the scalarized fitness
//! `(t - 1) * accuracy + t * latency` (lower is better), or by accuracy
//! under a hard latency bound. Each generation keeps the top parents and
//! refills the population with crossover children, some of which mutate.
//! All randomness is keyed by (seed, generation, slot), so results do not
//! depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy_model::AccuracyPredictor;
use crate::error::{Error, Result};
use crate::pareto::{pareto_front, LatencySource, ParetoSet, ScoredArch};
use crate::rng::{derive_seed, mix64, rng_for};
use crate::search_space::{Genotype, SearchSpaceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Scalarized { t: f64 },
    Constrained { max_latency_ms: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoConfig {
    pub population: usize,
    pub parent_ratio: f64,
    pub mutation_prob: f64,
    pub mutation_ratio: f64,
    pub generations: usize,
    pub mode: SearchMode,
    /// Divide latency by the initial population's largest latency.
    pub normalize_latency: bool,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 1000,
            parent_ratio: 0.25,
            mutation_prob: 0.1,
            mutation_ratio: 0.25,
            generations: 50,
            mode: SearchMode::Scalarized { t: 0.5 },
            normalize_latency: false,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn check(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.population < 2 {
            return Err(Error::InvalidConfig("population must be at least 2".into()));
        }
        if !(self.parent_ratio > 0.0 && self.parent_ratio < 1.0) {
            return Err(Error::InvalidConfig("parent_ratio must lie in (0, 1)".into()));
        }
        if !unit(self.mutation_prob) || !unit(self.mutation_ratio) {
            return Err(Error::InvalidConfig("mutation probability and ratio must lie in [0, 1]".into()));
        }
        match self.mode {
            SearchMode::Scalarized { t } if !unit(t) => Err(Error::InvalidConfig(format!("t = {t} outside [0, 1]"))),
            SearchMode::Constrained { max_latency_ms } if !(max_latency_ms > 0.0) => {
                Err(Error::InvalidConfig("latency bound must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn parent_count(&self) -> usize {
        ((self.population as f64 * self.parent_ratio).ceil() as usize).clamp(1, self.population - 1)
    }
}

/// Scalarized fitness; lower is better.
pub fn fitness(accuracy: f64, latency_ms: f64, t: f64, normalize_scale: Option<f64>) -> f64 {
    let lat = match normalize_scale {
        Some(s) => latency_ms / s,
        None => latency_ms,
    };
    (t - 1.0) * accuracy + t * lat
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genotype: Genotype,
    pub predicted_accuracy: f64,
    pub predicted_latency_ms: f64,
    pub fitness: f64,
}

impl Individual {
    pub fn feasible(&self) -> bool {
        self.fitness.is_finite()
    }

    pub fn scored(&self, source: LatencySource) -> Result<ScoredArch> {
        ScoredArch::new(
            self.genotype.clone(),
            self.predicted_accuracy,
            self.predicted_latency_ms,
            source,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_genotype: Genotype,
    pub population_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionResult {
    /// Final population, best first.
    pub population: Vec<Individual>,
    pub best: Individual,
    pub log: Vec<GenerationLog>,
}

/// Each gene comes from `p1` or `p2` with equal probability.
pub fn crossover(p1: &Genotype, p2: &Genotype, seed: u64) -> Result<Genotype> {
    let mut rng = rng_for(seed, &[0xC0]);
    let mut pick = |a: &[u32], b: &[u32]| -> Result<Vec<u32>> {
        if a.len() != b.len() {
            return Err(Error::SpaceMismatch);
        }
        Ok(a.iter().zip(b).map(|(x, y)| if rng.gen::<bool>() { *x } else { *y }).collect())
    };
    match (p1, p2) {
        (
            Genotype::MbV2 {
                kernel_size: k1,
                expansion_ratio: e1,
                depth: d1,
            },
            Genotype::MbV2 {
                kernel_size: k2,
                expansion_ratio: e2,
                depth: d2,
            },
        ) => Ok(Genotype::MbV2 {
            kernel_size: pick(k1, k2)?,
            expansion_ratio: pick(e1, e2)?,
            depth: pick(d1, d2)?,
        }),
        (Genotype::FbNet { block_choice: a }, Genotype::FbNet { block_choice: b }) => {
            Ok(Genotype::FbNet { block_choice: pick(a, b)? })
        }
        (Genotype::Cell { edge_op: a }, Genotype::Cell { edge_op: b }) => Ok(Genotype::Cell { edge_op: pick(a, b)? }),
        _ => Err(Error::SpaceMismatch),
    }
}

/// Full resample: every gene is drawn afresh from its candidate list.
pub fn mutate(g: &Genotype, space: &SearchSpaceSpec, seed: u64) -> Result<Genotype> {
    space.validate(g)?;
    Ok(space.sample_with(&mut rng_for(seed, &[0x3A7])))
}

const INIT_STREAM: u64 = u64::MAX;

struct Evaluator<'a, F> {
    space: &'a SearchSpaceSpec,
    acc: &'a AccuracyPredictor,
    lat: &'a F,
    mode: SearchMode,
    scale: Option<f64>,
}

impl<F> Evaluator<'_, F>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    fn raw(&self, genotypes: Vec<Genotype>) -> Result<Vec<(Genotype, f64, f64)>> {
        genotypes
            .into_par_iter()
            .map(|g| {
                let a = self.acc.predict_accuracy(&g, self.space)?;
                let l = (self.lat)(&g)?;
                Ok((g, a, l))
            })
            .collect()
    }

    fn score(&self, (genotype, a, l): (Genotype, f64, f64)) -> Individual {
        let fitness = match self.mode {
            SearchMode::Scalarized { t } => fitness(a, l, t, self.scale),
            SearchMode::Constrained { max_latency_ms } if l <= max_latency_ms => -a,
            SearchMode::Constrained { .. } => f64::INFINITY,
        };
        Individual {
            genotype,
            predicted_accuracy: a,
            predicted_latency_ms: l,
            fitness,
        }
    }
}

fn rank(pop: &mut [Individual]) {
    pop.sort_by(|a, b| {
        a.fitness
            .total_cmp(&b.fitness)
            .then(b.predicted_accuracy.total_cmp(&a.predicted_accuracy))
            .then(a.predicted_latency_ms.total_cmp(&b.predicted_latency_ms))
    });
}

fn population_hash(pop: &[Individual]) -> String {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for ind in pop {
        for g in ind.genotype.genes() {
            h = mix64(h ^ u64::from(g));
        }
        h = mix64(h ^ ind.fitness.to_bits());
    }
    format!("{h:016x}")
}

fn log_entry(generation: usize, pop: &[Individual]) -> GenerationLog {
    GenerationLog {
        generation,
        best_fitness: pop[0].fitness,
        best_genotype: pop[0].genotype.clone(),
        population_hash: population_hash(pop),
    }
}

fn initial_population<F>(
    space: &SearchSpaceSpec,
    eval: &mut Evaluator<'_, F>,
    cfg: &EvoConfig,
) -> Result<Vec<Individual>>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    let p = cfg.population;
    let draw = |batch: usize| -> Vec<Genotype> {
        (0..p)
            .map(|i| space.sample_with(&mut rng_for(cfg.seed, &[INIT_STREAM, (batch * p + i) as u64])))
            .collect()
    };
    let first = eval.raw(draw(0))?;
    if cfg.normalize_latency {
        let max = first.iter().map(|r| r.2).fold(0.0, f64::max);
        eval.scale = Some(max);
    }
    let mut pop: Vec<Individual> = first.into_iter().map(|r| eval.score(r)).collect();
    if let SearchMode::Constrained { max_latency_ms } = cfg.mode {
        let mut batch = 1;
        while !pop.iter().any(Individual::feasible) {
            if batch == 10 {
                return Err(Error::InfeasibleConstraint(max_latency_ms));
            }
            let found: Vec<Individual> = eval
                .raw(draw(batch))?
                .into_iter()
                .map(|r| eval.score(r))
                .filter(Individual::feasible)
                .collect();
            let n = found.len();
            pop.splice(0..n, found);
            batch += 1;
        }
    }
    rank(&mut pop);
    Ok(pop)
}

/// Runs the evolutionary search with latencies from `lat_fn`.
pub fn run_evolution<F>(
    space: &SearchSpaceSpec,
    acc_pred: &AccuracyPredictor,
    lat_fn: &F,
    cfg: &EvoConfig,
) -> Result<EvolutionResult>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    cfg.check()?;
    let mut eval = Evaluator {
        space,
        acc: acc_pred,
        lat: lat_fn,
        mode: cfg.mode,
        scale: None,
    };
    let mut pop = initial_population(space, &mut eval, cfg)?;
    let mut log = vec![log_entry(0, &pop)];
    let n_parents = cfg.parent_count();
    let n_children = cfg.population - n_parents;
    let n_mutants = (n_children as f64 * cfg.mutation_ratio).round() as usize;

    for gen in 1..=cfg.generations {
        let feasible = pop.iter().filter(|i| i.feasible()).count();
        let pool = if feasible > 0 { n_parents.min(feasible) } else { n_parents };
        pop.truncate(pool);
        let parents = &pop;
        let children: Vec<Genotype> = (0..n_children)
            .into_par_iter()
            .map(|slot| {
                let mut rng = rng_for(cfg.seed, &[gen as u64, slot as u64]);
                let i = rng.gen_range(0..pool);
                let j = if pool >= 2 {
                    let j = rng.gen_range(0..pool - 1);
                    if j >= i {
                        j + 1
                    } else {
                        j
                    }
                } else {
                    i
                };
                let child = crossover(&parents[i].genotype, &parents[j].genotype, rng.gen())?;
                if slot < n_mutants && rng.gen::<f64>() < cfg.mutation_prob {
                    mutate(&child, space, rng.gen())
                } else {
                    Ok(child)
                }
            })
            .collect::<Result<_>>()?;
        let scored: Vec<Individual> = eval.raw(children)?.into_iter().map(|r| eval.score(r)).collect();
        pop.extend(scored);
        rank(&mut pop);
        log.push(log_entry(gen, &pop));
    }
    Ok(EvolutionResult {
        best: pop[0].clone(),
        population: pop,
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeoffGrid {
    T(Vec<f64>),
    LatencyBounds(Vec<f64>),
    /// `points` latency bounds spaced evenly between the smallest and
    /// largest latency seen on `probe` architectures (the whole space when
    /// it has at most `probe` members). Bounds no individual can meet are
    /// skipped.
    LatencySpan { points: usize, probe: usize },
}

impl TradeoffGrid {
    /// `n` evenly spaced values of `t` in `[0, 1]`.
    pub fn even_t(n: usize) -> Self {
        if n == 1 {
            return Self::T(vec![0.0]);
        }
        Self::T((0..n).map(|i| i as f64 / (n - 1) as f64).collect())
    }

    pub fn latency_span(points: usize) -> Self {
        Self::LatencySpan { points, probe: 1000 }
    }

    fn modes<F>(&self, space: &SearchSpaceSpec, lat_fn: &F, seed: u64) -> Result<Vec<SearchMode>>
    where
        F: Fn(&Genotype) -> Result<f64> + Sync,
    {
        let bounds = |ls: &[f64]| -> Vec<SearchMode> {
            ls.iter()
                .map(|&l| SearchMode::Constrained { max_latency_ms: l })
                .collect()
        };
        Ok(match self {
            Self::T(ts) => ts.iter().map(|&t| SearchMode::Scalarized { t }).collect(),
            Self::LatencyBounds(ls) => bounds(ls),
            Self::LatencySpan { points, probe } => {
                if *points == 0 {
                    return Ok(Vec::new());
                }
                let probes: Vec<Genotype> = if space.space_size() <= *probe as u128 {
                    space.enumerate()?
                } else {
                    (0..*probe as u64)
                        .map(|i| space.sample_with(&mut rng_for(seed, &[0x9809E, i])))
                        .collect()
                };
                let lats: Vec<f64> = probes.par_iter().map(lat_fn).collect::<Result<_>>()?;
                let lo = lats.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = lats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if *points == 1 {
                    return Ok(bounds(&[hi]));
                }
                bounds(
                    &(0..*points)
                        .map(|i| lo + (hi - lo) * i as f64 / (*points - 1) as f64)
                        .collect::<Vec<_>>(),
                )
            }
        })
    }
}

/// Best individual for each grid point, reduced to its non-dominated subset.
pub fn sweep_tradeoff<F>(
    space: &SearchSpaceSpec,
    acc_pred: &AccuracyPredictor,
    lat_fn: &F,
    cfg: &EvoConfig,
    grid: &TradeoffGrid,
) -> Result<ParetoSet>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    let modes = grid.modes(space, lat_fn, cfg.seed)?;
    let skip_infeasible = matches!(grid, TradeoffGrid::LatencySpan { .. });
    let mut best = Vec::with_capacity(modes.len());
    for (i, mode) in modes.into_iter().enumerate() {
        let run = EvoConfig {
            mode,
            seed: derive_seed(cfg.seed, &[0x5EE9, i as u64]),
            ..cfg.clone()
        };
        let result = match run_evolution(space, acc_pred, lat_fn, &run) {
            Err(Error::InfeasibleConstraint(_)) if skip_infeasible => continue,
            r => r?,
        };
        if !best.iter().any(|b: &ScoredArch| b.genotype == result.best.genotype) {
            best.push(result.best.scored(LatencySource::Predicted)?);
        }
    }
    if best.is_empty() {
        return Err(Error::EmptyInput);
    }
    pareto_front(&best)
}

/// Scores every genotype of an enumerable space; order follows enumeration.
pub fn score_all<F>(space: &SearchSpaceSpec, acc_pred: &AccuracyPredictor, lat_fn: &F) -> Result<Vec<ScoredArch>>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    space
        .enumerate()?
        .into_par_iter()
        .map(|g| {
            let a = acc_pred.predict_accuracy(&g, space)?;
            let l = lat_fn(&g)?;
            ScoredArch::new(g, a, l, LatencySource::Predicted)
        })
        .collect()
}

/// Exact Pareto front over the whole space.
pub fn exhaustive_search<F>(space: &SearchSpaceSpec, acc_pred: &AccuracyPredictor, lat_fn: &F) -> Result<ParetoSet>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    pareto_front(&score_all(space, acc_pred, lat_fn)?)
}
