//! Built-in scenarios with their declared constants.
//!
//! | name | d | field | lambda | a | growth L |
//! |---|---|---|---|---|---|
//! | `sdf-linear` | 1 | `g(x, u) = -x + u`, `u = ±1` | -1 | `(√2 - 1)/2` | 1 |
//! | `gradient-sum` | 2 | `H_k = ½|x - c_k|²`, three centres with mean 0 | -1 | `(√3 - 1)/2` | 4/3 |
//! | `idf-attract` | 1 | `f(x, y) = y - x` | 0 | - | - |
//! | `nonlocal-cylinder` | 2 | `-x + ½ tanh(∫ sin y₁ dμ) (cos x₂, sin x₁) + u (0, ½)` | 0.25 | `a(1 + √2/2)` | - |
//! | `stochastic-idf` | 1 | `h(x, y, u) = y - x + u/2` | 0 | - | - |
//!
//! Growth constants follow from `<v, x> <= c|x| - |x|^2`, which gives
//! `a(c) = (√(1 + c²) - 1)/2`. For the cylinder field the nonlocal factor depends
//! continuously on `μ` along equi-bounded converging sequences; this is asserted, not checked.

use std::sync::Arc;

use smallvec::smallvec;

use super::{LocalField, NoiseSpace, PvfSpec};
use crate::measure::DiscreteMeasure;

/// `rho_R` as a function of `R`.
pub type RhoFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A named field together with a default initial measure and declared constants.
#[derive(Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub dim: usize,
    pub spec: PvfSpec,
    pub mu0: DiscreteMeasure,
    /// Declared dissipativity modulus.
    pub lambda: f64,
    /// Growth constant `a` in `<v, x> <= a (1 + |x|^2)`, when uniform in the measure.
    pub growth_a: Option<f64>,
    /// Support radius bound `rho_R`, when uniform in the measure.
    pub rho: Option<RhoFn>,
    /// `L_g` in `int |g(x, u)|^2 dU <= L_g (1 + |x|^2)`, when the field is sampled.
    pub growth_l: Option<f64>,
    /// Default stability bound for runs from `mu0`.
    pub default_l: f64,
    /// Barycentric field when it does not depend on the measure.
    pub barycenter: Option<Arc<dyn Fn(&[f64]) -> crate::measure::Point + Send + Sync>>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lambda", &self.lambda)
            .field("growth_a", &self.growth_a)
            .field("default_l", &self.default_l)
            .finish()
    }
}

/// `(√(1 + c²) - 1)/2`.
pub fn growth_constant(c: f64) -> f64 {
    ((1.0 + c * c).sqrt() - 1.0) / 2.0
}

pub fn scenario_names() -> &'static [&'static str] {
    &[
        "sdf-linear",
        "gradient-sum",
        "idf-attract",
        "nonlocal-cylinder",
        "stochastic-idf",
    ]
}

const CENTRES: [[f64; 2]; 3] = [[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]];
const CYLINDER_C: f64 = 0.5 + std::f64::consts::FRAC_1_SQRT_2;

/// Looks up a built-in scenario by name.
pub fn scenario(name: &str) -> Option<Scenario> {
    let pm = || NoiseSpace::uniform(vec![1.0, -1.0]);
    let s = match name {
        "sdf-linear" => Scenario {
            name: "sdf-linear",
            dim: 1,
            spec: PvfSpec::sampled(pm(), |x, u| smallvec![-x[0] + u]),
            mu0: DiscreteMeasure::dirac(&[0.0]).expect("valid"),
            lambda: -1.0,
            growth_a: Some(growth_constant(1.0)),
            rho: Some(Arc::new(|r| (r * r + (r + 1.0) * (r + 1.0)).sqrt())),
            growth_l: Some(1.0),
            default_l: 2.0,
            barycenter: Some(Arc::new(|x| smallvec![-x[0]])),
        },
        "gradient-sum" => Scenario {
            name: "gradient-sum",
            dim: 2,
            spec: PvfSpec::gradient_sum(
                CENTRES
                    .iter()
                    .map(|c| {
                        let c = *c;
                        Arc::new(move |x: &[f64]| smallvec![x[0] - c[0], x[1] - c[1]])
                            as super::GradientFn
                    })
                    .collect(),
            ),
            mu0: DiscreteMeasure::dirac(&[0.5, 0.5]).expect("valid"),
            lambda: -1.0,
            growth_a: Some(growth_constant(2f64.sqrt())),
            rho: Some(Arc::new(|r| {
                (r * r + (r + 2f64.sqrt()) * (r + 2f64.sqrt())).sqrt()
            })),
            growth_l: Some(4.0 / 3.0),
            default_l: 2.0,
            barycenter: Some(Arc::new(|x| smallvec![-x[0], -x[1]])),
        },
        "idf-attract" => Scenario {
            name: "idf-attract",
            dim: 1,
            spec: PvfSpec::interaction(|x, y| smallvec![y[0] - x[0]]),
            mu0: DiscreteMeasure::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).expect("valid"),
            lambda: 0.0,
            growth_a: None,
            rho: Some(Arc::new(|r| 5f64.sqrt() * r)),
            growth_l: None,
            default_l: 2.0,
            barycenter: None,
        },
        "nonlocal-cylinder" => Scenario {
            name: "nonlocal-cylinder",
            dim: 2,
            spec: PvfSpec::nonlocal(pm(), |mu: &DiscreteMeasure| {
                let m: f64 = mu
                    .atoms()
                    .zip(mu.weights())
                    .map(|(y, w)| w * y[0].sin())
                    .sum();
                let k = 0.5 * m.tanh();
                Arc::new(move |x: &[f64], u: f64| {
                    smallvec![-x[0] + k * x[1].cos(), -x[1] + k * x[0].sin() + 0.5 * u]
                }) as LocalField
            }),
            mu0: DiscreteMeasure::new(2, vec![-0.5, 0.5, 1.0, 0.0], vec![0.5, 0.5]).expect("valid"),
            lambda: 0.25,
            growth_a: Some(growth_constant(CYLINDER_C)),
            rho: Some(Arc::new(|r| {
                (r * r + (r + CYLINDER_C) * (r + CYLINDER_C)).sqrt()
            })),
            growth_l: None,
            default_l: 3.0,
            barycenter: None,
        },
        "stochastic-idf" => Scenario {
            name: "stochastic-idf",
            dim: 1,
            spec: PvfSpec::stochastic_interaction(pm(), |x, y, u| smallvec![y[0] - x[0] + 0.5 * u]),
            mu0: DiscreteMeasure::dirac(&[0.0]).expect("valid"),
            lambda: 0.0,
            growth_a: None,
            rho: None,
            growth_l: None,
            default_l: 2.0,
            barycenter: None,
        },
        _ => return None,
    };
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{check_growth, evaluate_pvf, support_bound};

    #[test]
    fn every_name_resolves() {
        for n in scenario_names() {
            let s = scenario(n).unwrap();
            assert_eq!(s.name, *n);
            assert_eq!(s.mu0.dim(), s.dim);
        }
        assert!(scenario("nope").is_none());
    }

    #[test]
    fn declared_growth_constants_hold() {
        let probes: Vec<DiscreteMeasure> = (-8..=8)
            .flat_map(|i| {
                let r = i as f64 * 0.4;
                [
                    DiscreteMeasure::dirac(&[r]).unwrap(),
                    DiscreteMeasure::dirac(&[r, 0.3 * r]).unwrap(),
                    DiscreteMeasure::dirac(&[-0.7 * r, r]).unwrap(),
                ]
            })
            .collect();
        for n in scenario_names() {
            let s = scenario(n).unwrap();
            let Some(a) = s.growth_a else { continue };
            let mus: Vec<_> = probes
                .iter()
                .filter(|m| m.dim() == s.dim)
                .cloned()
                .collect();
            let rep = check_growth(&s.spec, &mus, a).unwrap();
            assert!(rep.passed, "{n}: {:?}", rep.violations.first());
        }
    }

    #[test]
    fn declared_rho_dominates_probes() {
        for n in scenario_names() {
            let s = scenario(n).unwrap();
            let Some(rho) = &s.rho else { continue };
            for r in [0.5, 1.0, 2.0] {
                let est = support_bound(&s.spec, s.dim, r, 64, 11).unwrap();
                assert!(est <= rho(r) + 1e-12, "{n} at R={r}: {est} > {}", rho(r));
            }
        }
    }

    #[test]
    fn declared_l_bounds_velocity_moment() {
        for n in scenario_names() {
            let s = scenario(n).unwrap();
            let Some(l) = s.growth_l else { continue };
            for scale in [0.0, 0.5, 1.0, 3.0] {
                let pts: Vec<Vec<f64>> = (0..3)
                    .map(|k| (0..s.dim).map(|j| scale * ((k + j) as f64 - 1.0)).collect())
                    .collect();
                let mu = DiscreteMeasure::uniform(&pts).unwrap();
                let phi = evaluate_pvf(&s.spec, &mu).unwrap();
                let m2 = mu.second_moment();
                assert!(phi.velocity_moment().powi(2) <= l * (1.0 + m2 * m2) + 1e-12);
            }
        }
    }
}
