//! Sample-based certifiers for dissipativity, growth and support conditions.
//!
//! These are not proofs: each check evaluates the inequality on the supplied samples and
//! reports every violating sample as a witness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{evaluate_pvf, PvfSpec};
use crate::error::{Error, Result};
use crate::measure::{
    dist2, dot, norm2, tangent_mismatch, Coupling, DiscreteMeasure, Point, TangentMeasure,
    WEIGHT_TOL,
};
use crate::transport::optimal_coupling;

/// Additive slack on every tested inequality.
pub const CHECK_SLACK: f64 = 1e-10;

/// A sample on which the tested inequality fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// The sample: points of the tested pair or tuple.
    pub sample: Vec<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of a certifier run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub kind: String,
    /// Declared constant under test.
    pub declared: f64,
    /// Smallest constant compatible with all samples.
    pub lambda_hat: f64,
    pub samples: usize,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

impl DissipativityReport {
    fn new(kind: &str, declared: f64) -> Self {
        Self {
            kind: kind.to_string(),
            declared,
            lambda_hat: f64::NEG_INFINITY,
            samples: 0,
            violations: Vec::new(),
            passed: true,
        }
    }

    fn record(&mut self, sample: impl FnOnce() -> Vec<Vec<f64>>, lhs: f64, rhs: f64) {
        self.samples += 1;
        if lhs > rhs + CHECK_SLACK {
            self.violations.push(Violation {
                sample: sample(),
                lhs,
                rhs,
            });
            self.passed = false;
        }
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Tests `<b(x1) - b(x0), x1 - x0> <= lambda |x1 - x0|^2` on each pair.
pub fn check_one_sided_lipschitz<P, B>(b: B, samples: &[(P, P)], lambda: f64) -> DissipativityReport
where
    P: AsRef<[f64]>,
    B: Fn(&[f64]) -> Point,
{
    let mut rep = DissipativityReport::new("one-sided-lipschitz", lambda);
    for (x0, x1) in samples {
        let (x0, x1) = (x0.as_ref(), x1.as_ref());
        let dx = sub(x1, x0);
        let lhs = dot(&sub(&b(x1), &b(x0)), &dx);
        let d2 = norm2(&dx);
        if d2 > 0.0 {
            rep.lambda_hat = rep.lambda_hat.max(lhs / d2);
        }
        rep.record(|| vec![x0.to_vec(), x1.to_vec()], lhs, lambda * d2);
    }
    rep
}

/// Tests `lambda`-dissipativity of `(x, y) -> (f(x, y), f(y, x))` on `X x X`.
pub fn check_pair_dissipativity<P, F>(
    f: F,
    samples: &[((P, P), (P, P))],
    lambda: f64,
) -> DissipativityReport
where
    P: AsRef<[f64]>,
    F: Fn(&[f64], &[f64]) -> Point,
{
    let mut rep = DissipativityReport::new("pair-dissipativity", lambda);
    for ((x0, y0), (x1, y1)) in samples {
        let (x0, y0, x1, y1) = (x0.as_ref(), y0.as_ref(), x1.as_ref(), y1.as_ref());
        let (dx, dy) = (sub(x1, x0), sub(y1, y0));
        let lhs = dot(&sub(&f(x1, y1), &f(x0, y0)), &dx) + dot(&sub(&f(y1, x1), &f(y0, x0)), &dy);
        let d2 = norm2(&dx) + norm2(&dy);
        if d2 > 0.0 {
            rep.lambda_hat = rep.lambda_hat.max(lhs / d2);
        }
        rep.record(
            || vec![x0.to_vec(), y0.to_vec(), x1.to_vec(), y1.to_vec()],
            lhs,
            lambda * d2,
        );
    }
    rep
}

/// A coupling of two tangent measures: weighted quadruples `(x0, v0, x1, v1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentCoupling {
    dim: usize,
    rows: Vec<f64>,
    weights: Vec<f64>,
}

impl TangentCoupling {
    /// `rows` holds `weights.len()` quadruples `(x0, v0, x1, v1)` of `dim`-vectors.
    pub fn new(dim: usize, rows: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows.len() != 4 * dim * weights.len() || weights.is_empty() {
            return Err(Error::input(
                "tangent coupling buffers have inconsistent sizes",
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::input("coupling weights must be positive"));
        }
        Ok(Self { dim, rows, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(x0, v0, x1, v1)` of atom `i`.
    pub fn atom(&self, i: usize) -> [&[f64]; 4] {
        let d = self.dim;
        let r = &self.rows[4 * d * i..4 * d * (i + 1)];
        [&r[..d], &r[d..2 * d], &r[2 * d..3 * d], &r[3 * d..]]
    }

    fn marginal(&self, second: bool) -> TangentMeasure {
        let d = self.dim;
        let (mut xs, mut vs) = (Vec::new(), Vec::new());
        for i in 0..self.len() {
            let a = self.atom(i);
            let (x, v) = if second { (a[2], a[3]) } else { (a[0], a[1]) };
            xs.extend_from_slice(x);
            vs.extend_from_slice(v);
        }
        TangentMeasure::from_parts(d, xs, vs, self.weights.clone())
    }

    /// Checks that the marginals are `phi0` and `phi1`.
    pub fn validate(&self, phi0: &TangentMeasure, phi1: &TangentMeasure) -> Result<()> {
        if let Some(w) = tangent_mismatch(&self.marginal(false), phi0, 0.0, WEIGHT_TOL) {
            return Err(Error::input(format!(
                "first tangent marginal mismatch: {w}"
            )));
        }
        if let Some(w) = tangent_mismatch(&self.marginal(true), phi1, 0.0, WEIGHT_TOL) {
            return Err(Error::input(format!(
                "second tangent marginal mismatch: {w}"
            )));
        }
        Ok(())
    }
}

/// Glues the conditional velocity laws of `phi0` and `phi1` independently along `gamma`.
///
/// `gamma` must couple the position marginals of `phi0` and `phi1`.
pub fn product_disintegration_coupling(
    phi0: &TangentMeasure,
    phi1: &TangentMeasure,
    gamma: &Coupling,
) -> Result<TangentCoupling> {
    let d = phi0.dim();
    if phi1.dim() != d || gamma.dim() != d {
        return Err(Error::input(
            "coupling arguments live in different dimensions",
        ));
    }
    let (base0, base1) = (phi0.x_marginal(), phi1.x_marginal());
    let (g0, g1) = gamma.computed_marginals();
    if crate::measure::measure_mismatch(&g0, &base0, 0.0, WEIGHT_TOL).is_some()
        || crate::measure::measure_mismatch(&g1, &base1, 0.0, WEIGHT_TOL).is_some()
    {
        return Err(Error::input(
            "gamma does not couple the position marginals of the tangent measures",
        ));
    }
    let fiber = |phi: &TangentMeasure, x: &[f64]| -> Vec<(Vec<f64>, f64)> {
        let atoms: Vec<(Vec<f64>, f64)> = (0..phi.len())
            .filter(|&i| phi.x(i) == x)
            .map(|i| (phi.v(i).to_vec(), phi.weights()[i]))
            .collect();
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        atoms.into_iter().map(|(v, w)| (v, w / mass)).collect()
    };
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for k in 0..gamma.len() {
        let (x0, x1, w) = (gamma.x(k), gamma.y(k), gamma.weights()[k]);
        for (v0, p0) in fiber(phi0, x0) {
            for (v1, p1) in fiber(phi1, x1) {
                rows.extend_from_slice(x0);
                rows.extend_from_slice(&v0);
                rows.extend_from_slice(x1);
                rows.extend_from_slice(&v1);
                weights.push(w * p0 * p1);
            }
        }
    }
    TangentCoupling::new(d, rows, weights)
}

/// Tests `int <v1 - v0, x1 - x0> d theta <= lambda int |x1 - x0|^2 d theta` for every supplied
/// coupling, and for the product-of-disintegrations coupling built on `gamma` (an optimal
/// plan between the position marginals when `gamma` is `None`).
pub fn check_total_dissipativity(
    phi0: &TangentMeasure,
    phi1: &TangentMeasure,
    couplings: &[TangentCoupling],
    gamma: Option<&Coupling>,
    lambda: f64,
) -> Result<DissipativityReport> {
    let canonical = match gamma {
        Some(g) => product_disintegration_coupling(phi0, phi1, g)?,
        None => {
            let g = optimal_coupling(&phi0.x_marginal(), &phi1.x_marginal())?.coupling;
            product_disintegration_coupling(phi0, phi1, &g)?
        }
    };
    let mut rep = DissipativityReport::new("total-dissipativity", lambda);
    for theta in couplings.iter().chain(std::iter::once(&canonical)) {
        theta.validate(phi0, phi1)?;
        let (mut lhs, mut d2) = (0.0, 0.0);
        for i in 0..theta.len() {
            let [x0, v0, x1, v1] = theta.atom(i);
            let w = theta.weights()[i];
            lhs += w * dot(&sub(v1, v0), &sub(x1, x0));
            d2 += w * dist2(x1, x0);
        }
        if d2 > 0.0 {
            rep.lambda_hat = rep.lambda_hat.max(lhs / d2);
        }
        let summary = || {
            (0..theta.len())
                .flat_map(|i| theta.atom(i).map(|a| a.to_vec()))
                .collect()
        };
        rep.record(summary, lhs, lambda * d2);
    }
    Ok(rep)
}

/// Tests `<v, x> <= a (1 + |x|^2)` on every atom of `F[mu]` for the supplied measures.
pub fn check_growth(
    spec: &PvfSpec,
    mus: &[DiscreteMeasure],
    a: f64,
) -> Result<DissipativityReport> {
    let mut rep = DissipativityReport::new("growth", a);
    for mu in mus {
        let phi = evaluate_pvf(spec, mu)?;
        for i in 0..phi.len() {
            let (x, v) = (phi.x(i), phi.v(i));
            let lhs = dot(v, x);
            let scale = 1.0 + norm2(x);
            rep.lambda_hat = rep.lambda_hat.max(lhs / scale);
            rep.record(|| vec![x.to_vec(), v.to_vec()], lhs, a * scale);
        }
    }
    Ok(rep)
}

fn ball_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64, on_sphere: bool) -> Vec<f64> {
    if radius == 0.0 {
        return vec![0.0; dim];
    }
    loop {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = norm2(&p).sqrt();
        if n > 1e-3 && n <= 1.0 {
            let s = if on_sphere { radius / n } else { radius };
            return p.iter().map(|c| c * s).collect();
        }
    }
}

/// Estimates `rho_R = sup |(x, v)|` over atoms of `F[mu]` with `supp mu` in the closed ball
/// `B_R(0)`, by deterministic random probing.
///
/// Half of the probes put every atom on the sphere `|x| = R`.
pub fn support_bound(
    spec: &PvfSpec,
    dim: usize,
    radius: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::input("support_bound needs at least one probe"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for k in 0..probes {
        let atoms = 1 + (k % 4);
        let pts: Vec<Vec<f64>> = (0..atoms)
            .map(|_| ball_point(&mut rng, dim, radius, k % 2 == 0))
            .collect();
        let mu = DiscreteMeasure::uniform(&pts)?;
        best = best.max(evaluate_pvf(spec, &mu)?.max_atom_norm());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::NoiseSpace;
    use smallvec::smallvec;

    fn pairs_1d(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<([f64; 1], [f64; 1])> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| ([rng.random_range(lo..hi)], [rng.random_range(lo..hi)]))
            .collect()
    }

    #[test]
    fn one_sided_lipschitz_examples() {
        let s = pairs_1d(200, -3.0, 3.0, 1);
        let r = check_one_sided_lipschitz(|x| smallvec![-x[0]], &s, 0.0);
        assert!(r.passed);
        assert!((r.lambda_hat + 1.0).abs() < 1e-12);

        let r = check_one_sided_lipschitz(|x| smallvec![x[0]], &[([0.0], [1.0])], 0.0);
        assert!(!r.passed);
        assert_eq!(r.violations[0].sample, vec![vec![0.0], vec![1.0]]);
        assert_eq!(r.lambda_hat, 1.0);

        let s = pairs_1d(500, -2.0, 2.0, 2);
        assert!(check_one_sided_lipschitz(|x| smallvec![-x[0].powi(3)], &s, 0.0).passed);
    }

    #[test]
    fn pair_dissipativity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = || [rng.random_range(-2.0..2.0)];
        let s: Vec<_> = (0..300).map(|_| ((r(), r()), (r(), r()))).collect();
        let rep = check_pair_dissipativity(|x, y| smallvec![y[0] - x[0]], &s, 0.0);
        assert!(rep.passed);
        // lhs = -|dx - dy|^2 exactly.
        let ((x0, y0), (x1, y1)) = s[0];
        let expect = -((x1[0] - x0[0]) - (y1[0] - y0[0])).powi(2);
        let one = check_pair_dissipativity(|x, y| smallvec![y[0] - x[0]], &s[..1], -10.0);
        assert!((one.violations[0].lhs - expect).abs() < 1e-12);

        let rep = check_pair_dissipativity(|x, _| smallvec![x[0]], &s, 0.0);
        assert!(!rep.passed);
        assert!(check_pair_dissipativity(|_, _| smallvec![0.0], &s, 0.0).passed);
    }

    #[test]
    fn total_dissipativity_examples() {
        let t = |x: f64, v: f64| TangentMeasure::from_pairs(&[([x], [v])], vec![1.0]).unwrap();
        let r = check_total_dissipativity(&t(0.0, 0.0), &t(1.0, -1.0), &[], None, 0.0).unwrap();
        assert!(r.passed);
        let r = check_total_dissipativity(&t(0.0, 0.0), &t(1.0, 1.0), &[], None, 0.0).unwrap();
        assert!(!r.passed);
        let r = check_total_dissipativity(&t(0.0, 0.0), &t(1.0, 1.0), &[], None, 1.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.lambda_hat, 1.0);
    }

    #[test]
    fn total_dissipativity_validates_couplings() {
        let t = |x: f64, v: f64| TangentMeasure::from_pairs(&[([x], [v])], vec![1.0]).unwrap();
        let wrong = TangentCoupling::new(1, vec![0.0, 0.0, 2.0, 0.0], vec![1.0]).unwrap();
        assert!(
            check_total_dissipativity(&t(0.0, 0.0), &t(1.0, 0.0), &[wrong], None, 0.0).is_err()
        );
    }

    #[test]
    fn growth_examples() {
        let mus: Vec<DiscreteMeasure> = [-2.0, -0.5, 0.0, 1.0, 3.0]
            .iter()
            .map(|x| DiscreteMeasure::dirac(&[*x]).unwrap())
            .collect();
        let two = NoiseSpace::uniform(vec![1.0, -1.0]);
        let contract = PvfSpec::sampled(two.clone(), |x, _| smallvec![-x[0]]);
        assert!(check_growth(&contract, &mus, 0.0).unwrap().passed);
        let expand = PvfSpec::sampled(two.clone(), |x, _| smallvec![x[0]]);
        let r = check_growth(&expand, &mus[3..4], 0.0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.violations[0].lhs, 1.0);
        let unit = PvfSpec::sampled(two, |_, u| smallvec![u]);
        assert!(check_growth(&unit, &mus, 1.0).unwrap().passed);
    }

    #[test]
    fn support_bound_examples() {
        let contract = PvfSpec::deterministic(|x| smallvec![-x[0]]);
        let rho = support_bound(&contract, 1, 1.0, 64, 7).unwrap();
        assert!((rho - 2f64.sqrt()).abs() < 1e-12);
        let zero = PvfSpec::interaction(|_, _| smallvec![0.0]);
        assert!((support_bound(&zero, 1, 5.0, 16, 7).unwrap() - 5.0).abs() < 1e-12);
        let constant = PvfSpec::deterministic(|_| smallvec![2.0]);
        assert_eq!(support_bound(&constant, 1, 0.0, 4, 7).unwrap(), 2.0);
    }
}
