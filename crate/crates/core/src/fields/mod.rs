//! Probability vector fields: declarative specifications and their evaluation `F[mu]`.
//!
//! A [`PvfSpec`] yields exactly one tangent measure per base measure, which is the section
//! the explicit Euler scheme selects at each step.

mod dissipativity;
pub mod dsl;
pub mod scenarios;

use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

pub use dissipativity::{
    check_growth, check_one_sided_lipschitz, check_pair_dissipativity, check_total_dissipativity,
    product_disintegration_coupling, support_bound, DissipativityReport, TangentCoupling,
    Violation, CHECK_SLACK,
};
pub use scenarios::{scenario, scenario_names, Scenario};

use crate::error::{Error, Result};
use crate::measure::{check_finite, DiscreteMeasure, Point, TangentMeasure};

/// A finite probability space of scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpace {
    labels: Vec<f64>,
    weights: Vec<f64>,
}

impl NoiseSpace {
    pub fn new(labels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || labels.len() != weights.len() {
            return Err(Error::input("noise space needs one weight per label"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::input("noise weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("noise weights sum to {total}")));
        }
        Ok(Self { labels, weights })
    }

    /// Uniform law on the given labels.
    pub fn uniform(labels: Vec<f64>) -> Self {
        let w = 1.0 / labels.len() as f64;
        let weights = vec![w; labels.len()];
        Self { labels, weights }
    }

    /// A single label `0`, for deterministic fields.
    pub fn trivial() -> Self {
        Self::uniform(vec![0.0])
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.labels
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

/// `g(x, u)`.
pub type SampledFn = Arc<dyn Fn(&[f64], f64) -> Point + Send + Sync>;
/// `f(x, y)`.
pub type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> Point + Send + Sync>;
/// `h(x, y, u)`.
pub type StochasticKernelFn = Arc<dyn Fn(&[f64], &[f64], f64) -> Point + Send + Sync>;
/// `x, u -> g(x, mu, u)` for a frozen `mu`.
pub type LocalField = Arc<dyn Fn(&[f64], f64) -> Point + Send + Sync>;
/// `mu -> g(., mu, .)`.
pub type NonlocalFn = Arc<dyn Fn(&DiscreteMeasure) -> LocalField + Send + Sync>;
/// `grad H_u`.
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Point + Send + Sync>;

/// A probability vector field.
#[derive(Clone)]
pub enum PvfSpec {
    /// `F[mu] = (x, g(x, u))_# (mu ⊗ U)`.
    Sampled { g: SampledFn, noise: NoiseSpace },
    /// `F[mu] = (x, f(x, y))_# (mu ⊗ mu)`.
    Interaction { f: KernelFn },
    /// `F[mu] = (x, h(x, y, u))_# (mu ⊗ mu ⊗ U)`.
    StochasticInteraction {
        h: StochasticKernelFn,
        noise: NoiseSpace,
    },
    /// `F[mu] = (x, g(x, mu, u))_# (mu ⊗ U)`.
    NonlocalSampled { g: NonlocalFn, noise: NoiseSpace },
    /// Sampled field `g(x, k) = -grad H_k(x)` with uniform label law.
    GradientSum { gradients: Vec<GradientFn> },
}

impl fmt::Debug for PvfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PvfSpec::Sampled { noise, .. } => write!(f, "Sampled({} labels)", noise.len()),
            PvfSpec::Interaction { .. } => write!(f, "Interaction"),
            PvfSpec::StochasticInteraction { noise, .. } => {
                write!(f, "StochasticInteraction({} labels)", noise.len())
            }
            PvfSpec::NonlocalSampled { noise, .. } => {
                write!(f, "NonlocalSampled({} labels)", noise.len())
            }
            PvfSpec::GradientSum { gradients } => write!(f, "GradientSum({})", gradients.len()),
        }
    }
}

impl PvfSpec {
    pub fn sampled<F>(noise: NoiseSpace, g: F) -> Self
    where
        F: Fn(&[f64], f64) -> Point + Send + Sync + 'static,
    {
        PvfSpec::Sampled {
            g: Arc::new(g),
            noise,
        }
    }

    /// A deterministic field `x -> b(x)` (one label).
    pub fn deterministic<F>(b: F) -> Self
    where
        F: Fn(&[f64]) -> Point + Send + Sync + 'static,
    {
        Self::sampled(NoiseSpace::trivial(), move |x, _| b(x))
    }

    pub fn interaction<F>(f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Point + Send + Sync + 'static,
    {
        PvfSpec::Interaction { f: Arc::new(f) }
    }

    pub fn stochastic_interaction<F>(noise: NoiseSpace, h: F) -> Self
    where
        F: Fn(&[f64], &[f64], f64) -> Point + Send + Sync + 'static,
    {
        PvfSpec::StochasticInteraction {
            h: Arc::new(h),
            noise,
        }
    }

    /// Nonlocal field given in curried form: `mu` is frozen once per evaluation.
    pub fn nonlocal<F>(noise: NoiseSpace, g: F) -> Self
    where
        F: Fn(&DiscreteMeasure) -> LocalField + Send + Sync + 'static,
    {
        PvfSpec::NonlocalSampled {
            g: Arc::new(g),
            noise,
        }
    }

    /// Nonlocal field given as `g(x, mu, u)`.
    pub fn nonlocal_uncurried<F>(noise: NoiseSpace, g: F) -> Self
    where
        F: Fn(&[f64], &DiscreteMeasure, f64) -> Point + Send + Sync + 'static,
    {
        let g = Arc::new(g);
        Self::nonlocal(noise, move |mu: &DiscreteMeasure| {
            let (g, mu) = (g.clone(), mu.clone());
            Arc::new(move |x: &[f64], u: f64| g(x, &mu, u)) as LocalField
        })
    }

    pub fn gradient_sum(gradients: Vec<GradientFn>) -> Self {
        PvfSpec::GradientSum { gradients }
    }

    /// Number of velocities attached to each atom of `mu` before merging.
    pub fn branching(&self, mu_len: usize) -> usize {
        match self {
            PvfSpec::Sampled { noise, .. } | PvfSpec::NonlocalSampled { noise, .. } => noise.len(),
            PvfSpec::Interaction { .. } => mu_len,
            PvfSpec::StochasticInteraction { noise, .. } => mu_len * noise.len(),
            PvfSpec::GradientSum { gradients } => gradients.len(),
        }
    }

    pub fn is_interaction(&self) -> bool {
        matches!(
            self,
            PvfSpec::Interaction { .. } | PvfSpec::StochasticInteraction { .. }
        )
    }
}

fn finite_or_witness(v: Point, x: &[f64]) -> Result<Point> {
    check_finite("field value", &v).map_err(|_| Error::NumericDomain {
        context: "field value".into(),
        witness: format!("atom {x:?} -> {v:?}"),
    })?;
    Ok(v)
}

/// `F[mu]` as a tangent measure; identical `(x, v)` atoms are merged.
pub fn evaluate_pvf(spec: &PvfSpec, mu: &DiscreteMeasure) -> Result<TangentMeasure> {
    let d = mu.dim();
    let cap = mu.len() * spec.branching(mu.len());
    let mut xs = Vec::with_capacity(cap * d);
    let mut vs = Vec::with_capacity(cap * d);
    let mut ws = Vec::with_capacity(cap);
    let mut push = |x: &[f64], v: Point, w: f64| -> Result<()> {
        if v.len() != d {
            return Err(Error::input(format!(
                "field returned a {}-vector in dimension {d}",
                v.len()
            )));
        }
        let v = finite_or_witness(v, x)?;
        xs.extend_from_slice(x);
        vs.extend_from_slice(&v);
        ws.push(w);
        Ok(())
    };
    match spec {
        PvfSpec::Sampled { g, noise } => {
            for (x, w) in mu.atoms().zip(mu.weights()) {
                for (u, p) in noise.iter() {
                    push(x, g(x, u), w * p)?;
                }
            }
        }
        PvfSpec::Interaction { f } => {
            for (x, w) in mu.atoms().zip(mu.weights()) {
                for (y, p) in mu.atoms().zip(mu.weights()) {
                    push(x, f(x, y), w * p)?;
                }
            }
        }
        PvfSpec::StochasticInteraction { h, noise } => {
            for (x, w) in mu.atoms().zip(mu.weights()) {
                for (y, p) in mu.atoms().zip(mu.weights()) {
                    for (u, q) in noise.iter() {
                        push(x, h(x, y, u), w * p * q)?;
                    }
                }
            }
        }
        PvfSpec::NonlocalSampled { g, noise } => {
            let local = g(mu);
            for (x, w) in mu.atoms().zip(mu.weights()) {
                for (u, p) in noise.iter() {
                    push(x, local(x, u), w * p)?;
                }
            }
        }
        PvfSpec::GradientSum { gradients } => {
            let p = 1.0 / gradients.len() as f64;
            for (x, w) in mu.atoms().zip(mu.weights()) {
                for grad in gradients {
                    let v: Point = grad(x).into_iter().map(|c| -c).collect();
                    push(x, v, w * p)?;
                }
            }
        }
    }
    Ok(TangentMeasure::from_parts(d, xs, vs, ws).coalesce(0.0))
}

fn accumulate(acc: &mut Point, v: &[f64], w: f64) {
    for (a, c) in acc.iter_mut().zip(v) {
        *a += w * c;
    }
}

/// The barycentric field `b(x, mu)`: the mean of the velocities attached to `x`.
pub fn barycenter_field(spec: &PvfSpec, x: &[f64], mu: &DiscreteMeasure) -> Result<Point> {
    let mut acc: Point = SmallVec::from_elem(0.0, x.len());
    match spec {
        PvfSpec::Sampled { g, noise } => {
            for (u, p) in noise.iter() {
                accumulate(&mut acc, &finite_or_witness(g(x, u), x)?, p);
            }
        }
        PvfSpec::Interaction { f } => {
            for (y, p) in mu.atoms().zip(mu.weights()) {
                accumulate(&mut acc, &finite_or_witness(f(x, y), x)?, *p);
            }
        }
        PvfSpec::StochasticInteraction { h, noise } => {
            for (y, p) in mu.atoms().zip(mu.weights()) {
                for (u, q) in noise.iter() {
                    accumulate(&mut acc, &finite_or_witness(h(x, y, u), x)?, p * q);
                }
            }
        }
        PvfSpec::NonlocalSampled { g, noise } => {
            let local = g(mu);
            for (u, p) in noise.iter() {
                accumulate(&mut acc, &finite_or_witness(local(x, u), x)?, p);
            }
        }
        PvfSpec::GradientSum { gradients } => {
            let p = 1.0 / gradients.len() as f64;
            for grad in gradients {
                accumulate(&mut acc, &finite_or_witness(grad(x), x)?, -p);
            }
        }
    }
    Ok(acc)
}

/// `b(., mu)` at every atom of `mu`, with `mu` frozen once (nonlocal fields are
/// specialised a single time).
pub fn barycenter_at_atoms(spec: &PvfSpec, mu: &DiscreteMeasure) -> Result<Vec<Point>> {
    match spec {
        PvfSpec::NonlocalSampled { g, noise } => {
            let local = g(mu);
            mu.atoms()
                .map(|x| {
                    let mut acc: Point = SmallVec::from_elem(0.0, x.len());
                    for (u, p) in noise.iter() {
                        accumulate(&mut acc, &finite_or_witness(local(x, u), x)?, p);
                    }
                    Ok(acc)
                })
                .collect()
        }
        _ => mu.atoms().map(|x| barycenter_field(spec, x, mu)).collect(),
    }
}
