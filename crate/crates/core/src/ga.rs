//! Real-valued genetic algorithm over box-bounded chromosomes.
//!
//! Selection, crossover and mutation draw from a single seeded stream in a
//! fixed order; fitness calls for a generation run in parallel and are joined
//! back in population order, so results do not depend on thread scheduling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn clip(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

pub type Chromosome = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub mutation_sigma_fraction: f64,
    pub tournament_k: usize,
    pub elitism_count: usize,
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub seeded_chromosomes: Vec<Chromosome>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            generations: 30,
            crossover_prob: 0.7,
            mutation_prob: 0.1,
            mutation_sigma_fraction: 0.1,
            tournament_k: 3,
            elitism_count: 1,
            seed: 0,
            seeded_chromosomes: Vec::new(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return fail(format!(
                "population_size must be even and >= 4, got {}",
                self.population_size
            ));
        }
        if self.generations == 0 {
            return fail("generations must be >= 1".into());
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.mutation_sigma_fraction > 0.0 && self.mutation_sigma_fraction.is_finite()) {
            return fail(format!(
                "mutation_sigma_fraction must be > 0, got {}",
                self.mutation_sigma_fraction
            ));
        }
        if self.tournament_k < 2 || self.tournament_k > self.population_size {
            return fail(format!(
                "tournament_k must be in [2, population_size], got {}",
                self.tournament_k
            ));
        }
        if self.elitism_count > self.population_size {
            return fail(format!(
                "elitism_count must be <= population_size, got {}",
                self.elitism_count
            ));
        }
        if self.seeded_chromosomes.len() > self.population_size {
            return fail(format!(
                "{} seeded chromosomes exceed population_size {}",
                self.seeded_chromosomes.len(),
                self.population_size
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Chromosome,
    pub best_fitness: f64,
    /// Generation 0 is the initial population.
    pub history: Vec<GenerationStats>,
    /// Every chromosome of every generation, in population order.
    pub populations: Vec<Vec<Chromosome>>,
    pub evaluations: usize,
    pub cache_hits: usize,
}

impl GaOutcome {
    /// `generation,best_fitness,mean_fitness` rows with a header.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,best_fitness,mean_fitness\n");
        for h in &self.history {
            out.push_str(&format!("{},{:?},{:?}\n", h.generation, h.best_fitness, h.mean_fitness));
        }
        out
    }
}

fn key(c: &[f64]) -> Vec<u64> {
    c.iter().map(|x| x.to_bits()).collect()
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

struct Evaluator<'a, F> {
    fitness: &'a F,
    cache: HashMap<Vec<u64>, f64>,
    evaluations: usize,
    cache_hits: usize,
}

impl<F> Evaluator<'_, F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn evaluate(&mut self, batch: &[Chromosome]) -> Vec<f64> {
        let mut fresh: Vec<usize> = Vec::new();
        let mut pending: HashMap<Vec<u64>, usize> = HashMap::new();
        for (i, c) in batch.iter().enumerate() {
            let k = key(c);
            if self.cache.contains_key(&k) || pending.contains_key(&k) {
                self.cache_hits += 1;
            } else {
                pending.insert(k, i);
                fresh.push(i);
            }
        }
        let fitness = self.fitness;
        let values: Vec<f64> = fresh.par_iter().map(|&i| sanitize(fitness(&batch[i]))).collect();
        self.evaluations += fresh.len();
        for (&i, v) in fresh.iter().zip(values) {
            self.cache.insert(key(&batch[i]), v);
        }
        batch.iter().map(|c| self.cache[&key(c)]).collect()
    }
}

fn tournament(rng: &mut ChaCha8Rng, fitness: &[f64], k: usize) -> usize {
    let mut best = rng.gen_range(0..fitness.len());
    for _ in 1..k {
        let challenger = rng.gen_range(0..fitness.len());
        if fitness[challenger] > fitness[best] || (fitness[challenger] == fitness[best] && challenger < best) {
            best = challenger;
        }
    }
    best
}

fn stats(generation: usize, fitness: &[f64]) -> GenerationStats {
    let best_fitness = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let finite: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
    let mean_fitness = if finite.is_empty() {
        f64::NEG_INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    GenerationStats {
        generation,
        best_fitness,
        mean_fitness,
    }
}

/// Maximizes `fitness` over the box `bounds`.
///
/// NaN fitness counts as `-inf`. Elites keep their cached fitness, and any
/// chromosome seen before is looked up rather than re-evaluated, so
/// `evaluations + cache_hits == population_size * (generations + 1) - elitism_count * generations`.
pub fn run_ga<F>(fitness: &F, bounds: &[Bound], cfg: &GaConfig) -> Result<GaOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() {
        return Err(Error::invalid("at least one gene bound is required"));
    }
    for (i, b) in bounds.iter().enumerate() {
        if !(b.lo <= b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
            return Err(Error::invalid(format!(
                "gene {i}: malformed bound [{}, {}]",
                b.lo, b.hi
            )));
        }
    }
    for (i, c) in cfg.seeded_chromosomes.iter().enumerate() {
        if c.len() != bounds.len() {
            return Err(Error::invalid(format!(
                "seeded chromosome {i} has {} genes, expected {}",
                c.len(),
                bounds.len()
            )));
        }
        if c.iter().zip(bounds).any(|(g, b)| !(b.lo <= *g && *g <= b.hi)) {
            return Err(Error::invalid(format!("seeded chromosome {i} is out of bounds: {c:?}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population: Vec<Chromosome> = cfg.seeded_chromosomes.clone();
    while population.len() < cfg.population_size {
        population.push(bounds.iter().map(|b| b.lo + rng.gen::<f64>() * b.width()).collect());
    }

    let mut evaluator = Evaluator {
        fitness,
        cache: HashMap::new(),
        evaluations: 0,
        cache_hits: 0,
    };
    let mut scores = evaluator.evaluate(&population);
    let mut history = vec![stats(0, &scores)];
    let mut populations = vec![population.clone()];

    let pick_best = |pop: &[Chromosome], fit: &[f64], best: &mut Option<(Chromosome, f64)>| {
        for (c, &f) in pop.iter().zip(fit) {
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                *best = Some((c.clone(), f));
            }
        }
    };
    let mut best: Option<(Chromosome, f64)> = None;
    pick_best(&population, &scores, &mut best);

    let normals: Vec<Normal<f64>> = bounds
        .iter()
        .map(|b| Normal::new(0.0, (cfg.mutation_sigma_fraction * b.width()).max(f64::MIN_POSITIVE)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(e.to_string()))?;

    for generation in 1..=cfg.generations {
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let elites: Vec<usize> = ranked[..cfg.elitism_count].to_vec();

        let n_children = cfg.population_size - cfg.elitism_count;
        let mut children: Vec<Chromosome> = Vec::with_capacity(n_children + 1);
        while children.len() < n_children {
            let a = &population[tournament(&mut rng, &scores, cfg.tournament_k)];
            let b = &population[tournament(&mut rng, &scores, cfg.tournament_k)];
            let (mut c1, mut c2) = if rng.gen::<f64>() < cfg.crossover_prob {
                let lambda: f64 = rng.gen();
                let blend = |x: &[f64], y: &[f64]| -> Chromosome {
                    x.iter().zip(y).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect()
                };
                (blend(a, b), blend(b, a))
            } else {
                (a.clone(), b.clone())
            };
            for child in [&mut c1, &mut c2] {
                for ((g, bound), normal) in child.iter_mut().zip(bounds).zip(&normals) {
                    if rng.gen::<f64>() < cfg.mutation_prob {
                        *g += normal.sample(&mut rng);
                    }
                    *g = bound.clip(*g);
                }
            }
            children.push(c1);
            if children.len() < n_children {
                children.push(c2);
            }
        }

        let child_scores = evaluator.evaluate(&children);
        let mut next_pop: Vec<Chromosome> = elites.iter().map(|&i| population[i].clone()).collect();
        let mut next_scores: Vec<f64> = elites.iter().map(|&i| scores[i]).collect();
        next_pop.extend(children);
        next_scores.extend(child_scores);
        population = next_pop;
        scores = next_scores;

        pick_best(&population, &scores, &mut best);
        history.push(stats(generation, &scores));
        populations.push(population.clone());
    }

    let (best, best_fitness) = best.expect("population is never empty");
    Ok(GaOutcome {
        best,
        best_fitness,
        history,
        populations,
        evaluations: evaluator.evaluations,
        cache_hits: evaluator.cache_hits,
    })
}
