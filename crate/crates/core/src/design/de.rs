//! Differential evolution, DE/rand/1/bin with greedy selection.
//!
//! Mutation and crossover draws for a generation are made sequentially from
//! one seeded stream; only objective evaluations may run in parallel, so the
//! trajectory does not depend on scheduling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeParams {
    /// Population size; 0 means 15 × dimension (at least 4).
    pub population_size: usize,
    /// Differential weight F.
    pub weight: f64,
    /// Crossover rate CR.
    pub crossover: f64,
    pub max_generations: usize,
    /// Stop early once the spread of objective values in the population is
    /// at most this. 0 disables early stopping.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DeParams {
    fn default() -> Self {
        DeParams { population_size: 0, weight: 0.5, crossover: 0.9, max_generations: 300, tolerance: 0.0, seed: 0 }
    }
}

impl DeParams {
    pub fn population_for(&self, dim: usize) -> usize {
        if self.population_size > 0 {
            self.population_size
        } else {
            (15 * dim).max(4)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.weight) {
            return Err(format!("DE weight {} outside [0, 2]", self.weight));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(format!("DE crossover rate {} outside [0, 1]", self.crossover));
        }
        if self.population_size != 0 && self.population_size < 4 {
            return Err(format!("DE population {} is below 4", self.population_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub generations: usize,
}

fn evaluate_all<F>(f: &F, points: &[Vec<f64>]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(|x| f(x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter().map(|x| f(x)).collect()
    }
}

/// Minimizes `f` over the box `bounds`. Mutants are clamped to the box.
pub fn differential_evolution<F>(f: F, bounds: &[(f64, f64)], params: &DeParams) -> DeOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    if dim == 0 {
        return DeOutcome { best: Vec::new(), best_value: f(&[]), generations: 0 };
    }
    let np = params.population_for(dim);
    let mut rng = rng_from_seed(params.seed);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect())
        .collect();
    let mut values = evaluate_all(&f, &pop);
    let mut generations = 0;

    for _ in 0..params.max_generations {
        if params.tolerance > 0.0 {
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if hi - lo <= params.tolerance {
                break;
            }
        }
        generations += 1;
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|j| {
                let pick = |rng: &mut crate::rng::SimRng, avoid: &[usize]| loop {
                    let k = rng.random_range(0..np);
                    if !avoid.contains(&k) {
                        return k;
                    }
                };
                let a = pick(&mut rng, &[j]);
                let b = pick(&mut rng, &[j, a]);
                let c = pick(&mut rng, &[j, a, b]);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|k| {
                        if k == forced || rng.random::<f64>() < params.crossover {
                            let v = pop[a][k] + params.weight * (pop[b][k] - pop[c][k]);
                            v.clamp(bounds[k].0, bounds[k].1)
                        } else {
                            pop[j][k]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_values = evaluate_all(&f, &trials);
        for (j, (t, v)) in trials.into_iter().zip(trial_values).enumerate() {
            if v <= values[j] {
                pop[j] = t;
                values[j] = v;
            }
        }
    }

    let best = (0..np).fold(0, |b, j| if values[j] < values[b] { j } else { b });
    DeOutcome { best: pop[best].clone(), best_value: values[best], generations }
}
