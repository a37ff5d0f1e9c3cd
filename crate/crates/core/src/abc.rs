//! Artificial Bee Colony search over box-bounded real vectors.
//!
//! A cycle is an employed phase (one neighbour candidate per food source),
//! an onlooker phase (N fitness-proportional selections, each producing one
//! candidate) and a scout phase (the worst source whose failure count
//! exceeds the limit is re-drawn). Candidates within a phase are generated
//! from the population as it stood when the phase began, evaluated
//! (possibly in parallel), then applied greedily in index order. The
//! fitness budget is exact: evaluation stops as soon as `max_evaluations`
//! calls have been made.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::EmbeddedPair;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::numerics::Rng;
use crate::trainer::fitness;

/// A fitness function to maximize. Implemented for closures, so other
/// population-based optimizers can share it.
pub trait Objective: Sync {
    fn evaluate(&self, position: &[f64]) -> Result<f64>;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn evaluate(&self, position: &[f64]) -> Result<f64> {
        self(position)
    }
}

/// Common surface for metaheuristics that seed the network.
pub trait Optimizer {
    fn name(&self) -> &'static str;

    fn optimize(
        &mut self,
        objective: &dyn Objective,
        sink: &mut dyn FnMut(&CycleRecord),
    ) -> Result<SearchOutcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoodSource {
    pub position: Vec<f64>,
    pub fitness: f64,
    /// Consecutive failed improvement attempts.
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcConfig {
    pub population_size: usize,
    pub dimension: usize,
    pub lower: f64,
    pub upper: f64,
    /// Failure count after which a source is abandoned; `None` means
    /// `population_size × dimension`.
    pub limit: Option<usize>,
    pub max_evaluations: usize,
    pub seed: u64,
}

impl AbcConfig {
    pub fn new(population_size: usize, dimension: usize, max_evaluations: usize, seed: u64) -> Self {
        AbcConfig {
            population_size,
            dimension,
            lower: -1.0,
            upper: 1.0,
            limit: None,
            max_evaluations,
            seed,
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
            .unwrap_or(self.population_size.saturating_mul(self.dimension))
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::argument("population size must be at least 2"));
        }
        if self.dimension == 0 {
            return Err(Error::argument("dimension must be positive"));
        }
        if !(self.lower < self.upper) {
            return Err(Error::argument(format!(
                "bounds must satisfy lo < hi (lo={}, hi={})",
                self.lower, self.upper
            )));
        }
        if self.max_evaluations < self.population_size {
            return Err(Error::argument(format!(
                "evaluation budget {} is smaller than the population {}",
                self.max_evaluations, self.population_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    /// 0 for the initial population.
    pub cycle: usize,
    pub best_fitness: f64,
    pub evaluations_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: FoodSource,
    pub history: Vec<CycleRecord>,
    pub evaluations: usize,
}

/// `p_i = fit_i / Σ fit`
pub fn onlooker_probabilities(population: &[FoodSource]) -> Vec<f64> {
    let total: f64 = population.iter().map(|s| s.fitness).sum();
    if !(total > 0.0) {
        return vec![1.0 / population.len() as f64; population.len()];
    }
    population.iter().map(|s| s.fitness / total).collect()
}

/// Roulette-wheel draw over `probabilities`.
pub fn roulette(probabilities: &[f64], rng: &mut Rng) -> usize {
    let r = rng.next_f64();
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probabilities.len() - 1
}

/// `v = x_i` except `v_j = x_i^j + φ (x_i^j − x_k^j)`, clamped to the bounds.
pub fn neighbour(
    population: &[FoodSource],
    i: usize,
    j: usize,
    k: usize,
    phi: f64,
    lower: f64,
    upper: f64,
) -> Vec<f64> {
    let mut v = population[i].position.clone();
    let xi = v[j];
    v[j] = (xi + phi * (xi - population[k].position[j])).clamp(lower, upper);
    v
}

/// A colony mid-search: population, archived best, budget and random stream.
pub struct Colony<'a> {
    cfg: AbcConfig,
    objective: &'a dyn Objective,
    rng: Rng,
    sources: Vec<FoodSource>,
    best: FoodSource,
    evaluations: usize,
}

impl<'a> Colony<'a> {
    /// Draws N uniform positions in the bounds and evaluates each once.
    pub fn init_population(cfg: &AbcConfig, objective: &'a dyn Objective) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let positions: Vec<Vec<f64>> = (0..cfg.population_size)
            .map(|_| random_position(cfg, &mut rng))
            .collect::<Result<_>>()?;
        let fitness = evaluate_all(objective, &positions)?;
        let sources: Vec<FoodSource> = positions
            .into_iter()
            .zip(fitness)
            .map(|(position, fitness)| FoodSource {
                position,
                fitness,
                trials: 0,
            })
            .collect();
        let best = best_of(&sources).clone();
        Ok(Colony {
            cfg: cfg.clone(),
            objective,
            rng,
            evaluations: sources.len(),
            sources,
            best,
        })
    }

    pub fn population(&self) -> &[FoodSource] {
        &self.sources
    }

    pub fn best(&self) -> &FoodSource {
        &self.best
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn remaining(&self) -> usize {
        self.cfg.max_evaluations.saturating_sub(self.evaluations)
    }

    /// Neighbour of source `i` in one random dimension with a random partner `k ≠ i`.
    pub fn mutate(&mut self, i: usize) -> Vec<f64> {
        let j = self.rng.below(self.cfg.dimension);
        let mut k = self.rng.below(self.sources.len() - 1);
        if k >= i {
            k += 1;
        }
        let phi = 2.0 * self.rng.next_f64() - 1.0;
        neighbour(&self.sources, i, j, k, phi, self.cfg.lower, self.cfg.upper)
    }

    /// Evaluates candidates for `targets` and applies greedy replacement in order.
    fn exploit(&mut self, targets: &[usize]) -> Result<()> {
        let targets = &targets[..targets.len().min(self.remaining())];
        let candidates: Vec<Vec<f64>> = targets.iter().map(|&i| self.mutate(i)).collect();
        let fitness = evaluate_all(self.objective, &candidates)?;
        self.evaluations += candidates.len();
        for ((&i, position), fit) in targets.iter().zip(candidates).zip(fitness) {
            let source = &mut self.sources[i];
            if fit > source.fitness {
                *source = FoodSource {
                    position,
                    fitness: fit,
                    trials: 0,
                };
                if fit > self.best.fitness {
                    self.best = source.clone();
                }
            } else {
                source.trials += 1;
            }
        }
        Ok(())
    }

    pub fn employed_phase(&mut self) -> Result<()> {
        let targets: Vec<usize> = (0..self.sources.len()).collect();
        self.exploit(&targets)
    }

    pub fn onlooker_phase(&mut self) -> Result<()> {
        let probs = onlooker_probabilities(&self.sources);
        let targets: Vec<usize> = (0..self.sources.len())
            .map(|_| roulette(&probs, &mut self.rng))
            .collect();
        self.exploit(&targets)
    }

    /// Replaces the worst source whose trials exceed the limit, if any.
    pub fn scout_phase(&mut self) -> Result<()> {
        if self.remaining() == 0 {
            return Ok(());
        }
        let limit = self.cfg.limit();
        let Some(worst) = (0..self.sources.len())
            .filter(|&i| self.sources[i].trials > limit)
            .min_by(|&a, &b| self.sources[a].fitness.total_cmp(&self.sources[b].fitness))
        else {
            return Ok(());
        };
        let position = random_position(&self.cfg, &mut self.rng)?;
        let fitness = self.objective.evaluate(&position)?;
        self.evaluations += 1;
        self.sources[worst] = FoodSource {
            position,
            fitness,
            trials: 0,
        };
        if fitness > self.best.fitness {
            self.best = self.sources[worst].clone();
        }
        Ok(())
    }

    #[cfg(test)]
    fn sources_mut(&mut self) -> &mut Vec<FoodSource> {
        &mut self.sources
    }
}

fn random_position(cfg: &AbcConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    (0..cfg.dimension)
        .map(|_| rng.uniform(cfg.lower, cfg.upper))
        .collect()
}

fn evaluate_all(objective: &dyn Objective, positions: &[Vec<f64>]) -> Result<Vec<f64>> {
    positions
        .par_iter()
        .map(|p| objective.evaluate(p))
        .collect()
}

fn best_of(sources: &[FoodSource]) -> &FoodSource {
    sources
        .iter()
        .reduce(|a, b| if b.fitness > a.fitness { b } else { a })
        .expect("population is non-empty")
}

/// Runs cycles until the evaluation budget is spent.
pub fn run_abc(
    cfg: &AbcConfig,
    objective: &dyn Objective,
    sink: &mut dyn FnMut(&CycleRecord),
) -> Result<SearchOutcome> {
    let wrap = |cycle: usize| move |e: Error| Error::Cycle {
        cycle,
        source: Box::new(e),
    };
    let mut colony = Colony::init_population(cfg, objective).map_err(wrap(0))?;
    let record = |c: &Colony, cycle| CycleRecord {
        cycle,
        best_fitness: c.best.fitness,
        evaluations_used: c.evaluations,
    };
    let mut history = vec![record(&colony, 0)];
    sink(&history[0]);
    let mut cycle = 0;
    while colony.remaining() > 0 {
        cycle += 1;
        colony.employed_phase().map_err(wrap(cycle))?;
        colony.onlooker_phase().map_err(wrap(cycle))?;
        colony.scout_phase().map_err(wrap(cycle))?;
        history.push(record(&colony, cycle));
        sink(history.last().expect("just pushed"));
    }
    Ok(SearchOutcome {
        best: colony.best.clone(),
        evaluations: colony.evaluations,
        history,
    })
}

/// [`run_abc`] behind the [`Optimizer`] interface.
#[derive(Debug, Clone)]
pub struct BeeColony {
    pub config: AbcConfig,
}

impl Optimizer for BeeColony {
    fn name(&self) -> &'static str {
        "abc"
    }

    fn optimize(
        &mut self,
        objective: &dyn Objective,
        sink: &mut dyn FnMut(&CycleRecord),
    ) -> Result<SearchOutcome> {
        run_abc(&self.config, objective, sink)
    }
}

/// Searches the flattened parameter space of `arch` for the vector with the
/// best fitness on `data` and returns it as a model.
pub fn seed_model(
    cfg: &AbcConfig,
    arch: &Architecture,
    data: &[EmbeddedPair],
    sink: &mut dyn FnMut(&CycleRecord),
) -> Result<(ModelParams, SearchOutcome)> {
    if cfg.dimension != arch.param_count() {
        return Err(Error::dimension(format!(
            "optimizer dimension {} differs from the parameter count {}",
            cfg.dimension,
            arch.param_count()
        )));
    }
    if data.is_empty() {
        return Err(Error::argument("fitness set is empty"));
    }
    let objective = |x: &[f64]| fitness(x, data, arch);
    let outcome = run_abc(cfg, &objective, sink)?;
    let model = ModelParams::unflatten(&outcome.best.position, arch)?;
    Ok((model, outcome))
}

/// `cycle<TAB>bestFitness<TAB>evaluationsUsed` lines after `#` comment lines.
pub fn format_search_history(history: &[CycleRecord], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for r in history {
        let _ = writeln!(out, "{}\t{}\t{}", r.cycle, r.best_fitness, r.evaluations_used);
    }
    out
}

pub fn save_search_history(
    history: &[CycleRecord],
    path: impl AsRef<Path>,
    comments: &[String],
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_search_history(history, comments)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sphere(x: &[f64]) -> Result<f64> {
        Ok(1.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>()))
    }

    fn source(position: Vec<f64>, fitness: f64) -> FoodSource {
        FoodSource {
            position,
            fitness,
            trials: 0,
        }
    }

    #[test]
    fn init_population_contract() {
        let counter = AtomicUsize::new(0);
        let f = |x: &[f64]| {
            counter.fetch_add(1, Ordering::SeqCst);
            sphere(x)
        };
        let cfg = AbcConfig::new(5, 4, 100, 1);
        let colony = Colony::init_population(&cfg, &f).unwrap();
        assert_eq!(counter.load(Ordering::SeqCst), 5);
        assert_eq!(colony.evaluations(), 5);
        assert!(colony
            .population()
            .iter()
            .all(|s| s.position.iter().all(|x| (-1.0..=1.0).contains(x))));
        let again = Colony::init_population(&cfg, &f).unwrap();
        assert_eq!(again.population(), colony.population());
    }

    #[test]
    fn neighbour_contract() {
        let pop = vec![source(vec![0.5, -0.2, 0.1], 0.1), source(vec![0.1, 0.3, 0.1], 0.2)];
        assert_eq!(neighbour(&pop, 0, 1, 1, 0.0, -1.0, 1.0), pop[0].position);
        // identical coordinates: unchanged whatever φ
        assert_eq!(neighbour(&pop, 0, 2, 1, 0.9, -1.0, 1.0), pop[0].position);
        let v = neighbour(&pop, 0, 0, 1, 1.0, -1.0, 1.0);
        assert!((v[0] - 0.9).abs() < 1e-15);
        assert_eq!(v[1..], pop[0].position[1..]);
        let clamped = neighbour(&pop, 0, 0, 1, 1.0, -1.0, 0.7);
        assert_eq!(clamped[0], 0.7);
    }

    #[test]
    fn mutation_changes_at_most_one_coordinate() {
        let cfg = AbcConfig::new(6, 8, 1000, 3);
        let mut colony = Colony::init_population(&cfg, &sphere).unwrap();
        for _ in 0..200 {
            let i = 2;
            let before = colony.population()[i].position.clone();
            let after = colony.mutate(i);
            let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
            assert!(changed <= 1);
        }
    }

    #[test]
    fn employed_phase_with_constant_fitness() {
        let constant = |_: &[f64]| Ok(0.5);
        let cfg = AbcConfig::new(4, 3, 100, 2);
        let mut colony = Colony::init_population(&cfg, &constant).unwrap();
        let before = colony.population().to_vec();
        colony.employed_phase().unwrap();
        assert_eq!(colony.evaluations(), 8);
        for (a, b) in before.iter().zip(colony.population()) {
            assert_eq!(a.position, b.position);
            assert_eq!(b.trials, a.trials + 1);
        }
    }

    #[test]
    fn phases_never_lose_fitness() {
        let cfg = AbcConfig::new(6, 5, 1000, 4);
        let mut colony = Colony::init_population(&cfg, &sphere).unwrap();
        for _ in 0..10 {
            let before: Vec<f64> = colony.population().iter().map(|s| s.fitness).collect();
            let evals = colony.evaluations();
            colony.employed_phase().unwrap();
            assert_eq!(colony.evaluations(), evals + 6);
            colony.onlooker_phase().unwrap();
            assert_eq!(colony.evaluations(), evals + 12);
            for (b, s) in before.iter().zip(colony.population()) {
                assert!(s.fitness >= *b);
            }
        }
    }

    #[test]
    fn probability_cases() {
        let p = onlooker_probabilities(&[
            source(vec![0.0], 1.0),
            source(vec![0.0], 1.0),
            source(vec![0.0], 2.0),
        ]);
        assert_eq!(p, vec![0.25, 0.25, 0.5]);
        let uniform = onlooker_probabilities(&vec![source(vec![0.0], 0.3); 4]);
        assert!(uniform.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mut rng = Rng::new(5);
        let random: Vec<FoodSource> = (0..17)
            .map(|_| source(vec![0.0], rng.uniform(1e-3, 1.0).unwrap()))
            .collect();
        assert!((onlooker_probabilities(&random).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn roulette_follows_probabilities() {
        let pop = vec![source(vec![0.0], 0.8), source(vec![0.0], 0.2)];
        let probs = onlooker_probabilities(&pop);
        let mut rng = Rng::new(6);
        let hits = (0..10_000).filter(|_| roulette(&probs, &mut rng) == 0).count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.8).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn scout_replaces_only_over_limit_sources() {
        let mut cfg = AbcConfig::new(4, 3, 100, 7);
        cfg.limit = Some(5);
        let mut colony = Colony::init_population(&cfg, &sphere).unwrap();
        let before = colony.population().to_vec();
        colony.scout_phase().unwrap();
        assert_eq!(colony.population(), &before[..]);
        assert_eq!(colony.evaluations(), 4);

        colony.sources_mut()[2].trials = 6;
        colony.scout_phase().unwrap();
        assert_eq!(colony.evaluations(), 5);
        let replaced = &colony.population()[2];
        assert_eq!(replaced.trials, 0);
        assert_ne!(replaced.position, before[2].position);
        assert!(replaced.position.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(colony.population()[0], before[0]);
    }

    #[test]
    fn scouting_never_discards_the_global_best() {
        let mut cfg = AbcConfig::new(3, 2, 100, 8);
        cfg.limit = Some(0);
        let mut colony = Colony::init_population(&cfg, &sphere).unwrap();
        let best = colony.best().fitness;
        for s in colony.sources_mut() {
            s.trials = 1;
        }
        for _ in 0..3 {
            colony.scout_phase().unwrap();
        }
        assert!(colony.best().fitness >= best);
    }

    #[test]
    fn budget_is_exact_and_history_monotone() {
        for max in [10, 37, 200] {
            let counter = AtomicUsize::new(0);
            let f = |x: &[f64]| {
                counter.fetch_add(1, Ordering::SeqCst);
                sphere(x)
            };
            let cfg = AbcConfig::new(10, 3, max, 9);
            let mut seen = Vec::new();
            let out = run_abc(&cfg, &f, &mut |r| seen.push(*r)).unwrap();
            assert_eq!(counter.load(Ordering::SeqCst), max);
            assert_eq!(out.evaluations, max);
            assert_eq!(seen, out.history);
            assert!(out.history.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
            assert_eq!(out.history.last().unwrap().best_fitness, out.best.fitness);
        }
    }

    #[test]
    fn initial_budget_only_returns_best_initial_source() {
        let cfg = AbcConfig::new(7, 3, 7, 10);
        let out = run_abc(&cfg, &sphere, &mut |_| {}).unwrap();
        let colony = Colony::init_population(&cfg, &sphere).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best, *best_of(colony.population()));
    }

    #[test]
    fn failures_carry_the_cycle() {
        let counter = AtomicUsize::new(0);
        let f = |_: &[f64]| {
            if counter.fetch_add(1, Ordering::SeqCst) >= 12 {
                Err(Error::argument("boom"))
            } else {
                Ok(0.1)
            }
        };
        let err = run_abc(&AbcConfig::new(4, 2, 100, 1), &f, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::Cycle { cycle: 2, .. }), "{err}");
    }

    #[test]
    fn invalid_configs() {
        assert!(AbcConfig::new(1, 3, 10, 0).validate().is_err());
        assert!(AbcConfig::new(5, 3, 4, 0).validate().is_err());
        let mut cfg = AbcConfig::new(5, 3, 10, 0);
        cfg.lower = 1.0;
        assert!(cfg.validate().is_err());
        assert_eq!(AbcConfig::new(50, 10, 20_000, 0).limit(), 500);
    }

    #[test]
    fn optimizer_trait_wraps_run() {
        let mut opt = BeeColony {
            config: AbcConfig::new(5, 2, 50, 11),
        };
        let out = opt.optimize(&sphere, &mut |_| {}).unwrap();
        assert_eq!(out, run_abc(&opt.config, &sphere, &mut |_| {}).unwrap());
        assert_eq!(opt.name(), "abc");
    }
}
