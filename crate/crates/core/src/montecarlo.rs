//! Monte-Carlo particle sampling of the stochastic Euler flows.
//!
//! Each particle owns a ChaCha8 stream selected by its index, and consumes it in a fixed
//! order (start, then per step: partner, label). Results are therefore independent of how
//! rayon schedules particles.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::step_count;
use crate::fields::{LocalField, NoiseSpace, PvfSpec};
use crate::measure::{check_finite, DiscreteMeasure, Point};
use crate::paths::{PathEnsemble, PiecewisePath, Provenance};

/// How labels are drawn across particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Every particle draws its own label each step; the particle law follows the scheme.
    #[default]
    Independent,
    /// One label per step shared by the whole population.
    Shared,
}

fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn label(noise: &NoiseSpace, own: &mut ChaCha8Rng, shared: Option<usize>) -> f64 {
    let k = shared.unwrap_or_else(|| categorical(own, noise.weights()));
    noise.labels()[k]
}

/// Samples `m` particle trajectories of the flow associated with `spec`.
///
/// Interaction partners are drawn uniformly, with replacement, from the current population
/// (self-pairing allowed). Nonlocal fields are evaluated at the empirical law of the population.
pub fn sample_paths_monte_carlo(
    spec: &PvfSpec,
    mu0: &DiscreteMeasure,
    tau: f64,
    horizon: f64,
    m: usize,
    seed: u64,
    mode: NoiseMode,
) -> Result<PathEnsemble> {
    if m == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    if !(tau > 0.0 && tau.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::input("tau and T must be positive and finite"));
    }
    let d = mu0.dim();
    let steps = step_count(tau, horizon);
    let clipped = steps as f64 * tau > horizon * (1.0 + 1e-12);
    let mut rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|p| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(p as u64);
            r
        })
        .collect();
    let mut shared_rng = ChaCha8Rng::seed_from_u64(seed);
    shared_rng.set_stream(u64::MAX);

    let mut traj: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|r| {
            let mut t = Vec::with_capacity((steps + 1) * d);
            t.extend_from_slice(mu0.atom(categorical(r, mu0.weights())));
            t
        })
        .collect();

    for n in 0..steps {
        let pos: Vec<f64> = traj
            .iter()
            .flat_map(|t| t[n * d..(n + 1) * d].to_vec())
            .collect();
        let shared = match (mode, spec) {
            (NoiseMode::Shared, PvfSpec::Sampled { noise, .. })
            | (NoiseMode::Shared, PvfSpec::NonlocalSampled { noise, .. })
            | (NoiseMode::Shared, PvfSpec::StochasticInteraction { noise, .. }) => {
                Some(categorical(&mut shared_rng, noise.weights()))
            }
            (NoiseMode::Shared, PvfSpec::GradientSum { gradients }) => {
                Some(shared_rng.random_range(0..gradients.len()))
            }
            _ => None,
        };
        let local: Option<LocalField> = match spec {
            PvfSpec::NonlocalSampled { g, .. } => {
                let emp = DiscreteMeasure::from_parts(d, pos.clone(), vec![1.0 / m as f64; m])
                    .coalesce(0.0);
                Some(g(&emp))
            }
            _ => None,
        };
        let pos = Arc::new(pos);
        let results: Vec<Result<()>> = traj
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .with_min_len(64)
            .map(|(t, rng)| {
                let x: Point = t[n * d..(n + 1) * d].iter().copied().collect();
                let partner = |rng: &mut ChaCha8Rng| {
                    let j = rng.random_range(0..m);
                    &pos[j * d..(j + 1) * d]
                };
                let v: Point = match spec {
                    PvfSpec::Sampled { g, noise } => g(&x, label(noise, rng, shared)),
                    PvfSpec::NonlocalSampled { noise, .. } => {
                        let u = label(noise, rng, shared);
                        local.as_ref().expect("nonlocal field specialised")(&x, u)
                    }
                    PvfSpec::Interaction { f } => f(&x, partner(rng)),
                    PvfSpec::StochasticInteraction { h, noise } => {
                        let y = partner(rng);
                        h(&x, y, label(noise, rng, shared))
                    }
                    PvfSpec::GradientSum { gradients } => {
                        let k = shared.unwrap_or_else(|| rng.random_range(0..gradients.len()));
                        gradients[k](&x).into_iter().map(|c| -c).collect()
                    }
                };
                check_finite("particle velocity", &v)?;
                // Clip the final node at T when the last step overshoots.
                let dt = if n + 1 == steps && clipped {
                    horizon - n as f64 * tau
                } else {
                    tau
                };
                t.extend(x.iter().zip(&v).map(|(a, b)| a + dt * b));
                Ok(())
            })
            .collect();
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }

    let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * tau).collect();
    grid.push(horizon);
    let times: Arc<[f64]> = Arc::from(grid);
    let paths = traj
        .into_iter()
        .map(|t| PiecewisePath::from_parts(d, times.clone(), t))
        .collect();
    Ok(PathEnsemble::from_parts(
        paths,
        vec![1.0 / m as f64; m],
        Provenance::MonteCarlo { seed, samples: m },
    ))
}
