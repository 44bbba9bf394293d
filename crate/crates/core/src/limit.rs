//! Sticky-particle limit flow for finitely supported initial data.
//!
//! Atoms follow the barycentric field of the current measure. Atoms that come within
//! `merge_tol` of each other merge at their weighted mean and move as one from then on;
//! the Lagrangian path of every initial atom keeps its own record and aliases the merged
//! trajectory afterwards, so the ensemble is the law of the initial atom's trajectory.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::step_count;
use crate::fields::{barycenter_at_atoms, PvfSpec};
use crate::measure::{dist2, measure_mismatch, DiscreteMeasure, TangentMeasure};
use crate::paths::{PathEnsemble, PiecewisePath, Provenance};
use crate::transport::{bram_pairing, wasserstein2};

/// One-step method used between merge checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    ExplicitEulerFine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StickyFlowConfig {
    /// Micro-step.
    pub dt: f64,
    /// Collision radius.
    pub merge_tol: f64,
    pub integrator: Integrator,
    /// Declared integration error is `tol_constant * dt`.
    pub tol_constant: f64,
}

impl Default for StickyFlowConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            merge_tol: 1e-9,
            integrator: Integrator::Rk4,
            tol_constant: 10.0,
        }
    }
}

impl StickyFlowConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    /// Tolerance granted to comparisons against exact flows.
    pub fn integration_tol(&self) -> f64 {
        self.tol_constant * self.dt
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::input("dt must be positive"));
        }
        if !(self.merge_tol >= 0.0 && self.merge_tol.is_finite()) {
            return Err(Error::input("merge_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Two groups of initial atoms collided.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeEvent {
    pub time: f64,
    /// Smallest initial-atom id of the merged group.
    pub survivor: usize,
    /// Initial-atom ids of the group that joined it.
    pub absorbed: Vec<usize>,
    pub position: Vec<f64>,
}

/// Output of [`sticky_flow`]. Path `i` starts at atom `i` of the coalesced initial measure.
#[derive(Debug, Clone)]
pub struct LimitFlow {
    pub ensemble: PathEnsemble,
    pub merge_events: Vec<MergeEvent>,
    /// Number of live atoms at each grid time.
    pub support_sizes: Vec<usize>,
    pub config: StickyFlowConfig,
}

impl LimitFlow {
    /// `mu_t`, read off the Lagrangian paths.
    pub fn measure_at(&self, t: f64) -> DiscreteMeasure {
        self.ensemble.eval_at(t)
    }

    pub fn horizon(&self) -> f64 {
        self.ensemble.horizon()
    }

    pub fn merge_log_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.merge_events).expect("merge events serialize")
    }
}

struct Live {
    dim: usize,
    pos: Vec<f64>,
    weights: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl Live {
    fn velocity(&self, spec: &PvfSpec, pos: &[f64], t: f64) -> Result<Vec<f64>> {
        let mu = DiscreteMeasure::from_parts(self.dim, pos.to_vec(), self.weights.clone());
        let v = barycenter_at_atoms(spec, &mu).map_err(|e| match e {
            Error::NumericDomain { context, witness } => Error::NumericDomain {
                context: format!("{context} at t = {t}"),
                witness,
            },
            other => other,
        })?;
        let out: Vec<f64> = v.into_iter().flatten().collect();
        if let Some(k) = out.iter().position(|c| !c.is_finite()) {
            return Err(Error::NumericDomain {
                context: format!("limit velocity at t = {t}"),
                witness: format!("{:?}", &pos[(k / self.dim) * self.dim..][..self.dim]),
            });
        }
        Ok(out)
    }

    fn advance(&mut self, spec: &PvfSpec, integrator: Integrator, t: f64, h: f64) -> Result<()> {
        let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
            x.iter().zip(k).map(|(a, b)| a + s * b).collect()
        };
        let x = self.pos.clone();
        let next = match integrator {
            Integrator::ExplicitEulerFine => axpy(&x, &self.velocity(spec, &x, t)?, h),
            Integrator::Rk4 => {
                let k1 = self.velocity(spec, &x, t)?;
                let k2 = self.velocity(spec, &axpy(&x, &k1, h / 2.0), t + h / 2.0)?;
                let k3 = self.velocity(spec, &axpy(&x, &k2, h / 2.0), t + h / 2.0)?;
                let k4 = self.velocity(spec, &axpy(&x, &k3, h), t + h)?;
                (0..x.len())
                    .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        if let Some(k) = next.iter().position(|c| !c.is_finite()) {
            return Err(Error::NumericDomain {
                context: format!("limit flow state at t = {}", t + h),
                witness: format!("atom {}", k / self.dim),
            });
        }
        self.pos = next;
        Ok(())
    }

    fn atom(&self, i: usize) -> &[f64] {
        &self.pos[i * self.dim..(i + 1) * self.dim]
    }

    /// Merges the closest colliding pair until no pair is within `tol`.
    fn merge(&mut self, tol: f64, t: f64, events: &mut Vec<MergeEvent>) {
        let d = self.dim;
        loop {
            let n = self.weights.len();
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..n {
                for j in i + 1..n {
                    let r = dist2(self.atom(i), self.atom(j));
                    if r <= tol * tol && best.is_none_or(|b| r < b.2) {
                        best = Some((i, j, r));
                    }
                }
            }
            let Some((i, j, _)) = best else { return };
            let (wi, wj) = (self.weights[i], self.weights[j]);
            let w = wi + wj;
            let merged: Vec<f64> = (0..d)
                .map(|k| (wi * self.pos[i * d + k] + wj * self.pos[j * d + k]) / w)
                .collect();
            let (keep, drop) = if self.members[i][0] < self.members[j][0] {
                (i, j)
            } else {
                (j, i)
            };
            let absorbed = self.members[drop].clone();
            self.pos[keep * d..(keep + 1) * d].copy_from_slice(&merged);
            self.weights[keep] = w;
            self.members[keep].extend_from_slice(&absorbed);
            self.members[keep].sort_unstable();
            events.push(MergeEvent {
                time: t,
                survivor: self.members[keep][0],
                absorbed,
                position: merged,
            });
            self.pos.drain(drop * d..(drop + 1) * d);
            self.weights.remove(drop);
            self.members.remove(drop);
        }
    }
}

/// Integrates the sticky-particle flow of the barycentric field from `mu0` up to `horizon`.
///
/// The grid is `{0, dt, .., (K-1) dt, T}`; collisions are detected after every micro-step,
/// so event times carry `dt` resolution.
pub fn sticky_flow(
    spec: &PvfSpec,
    mu0: &DiscreteMeasure,
    horizon: f64,
    config: StickyFlowConfig,
) -> Result<LimitFlow> {
    config.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::input("horizon must be positive"));
    }
    let mu0 = mu0.coalesce(0.0);
    let d = mu0.dim();
    let n0 = mu0.len();
    let mut live = Live {
        dim: d,
        pos: mu0.coords().to_vec(),
        weights: mu0.weights().to_vec(),
        members: (0..n0).map(|i| vec![i]).collect(),
    };
    let mut events = Vec::new();
    live.merge(config.merge_tol, 0.0, &mut events);

    let steps = step_count(config.dt, horizon);
    let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * config.dt).collect();
    grid.push(horizon);
    let mut nodes: Vec<Vec<f64>> = (0..n0)
        .map(|_| Vec::with_capacity((steps + 1) * d))
        .collect();
    let record = |live: &Live, nodes: &mut Vec<Vec<f64>>| {
        for (slot, group) in live.members.iter().enumerate() {
            for &m in group {
                nodes[m].extend_from_slice(live.atom(slot));
            }
        }
    };
    record(&live, &mut nodes);
    let mut sizes = vec![live.weights.len()];
    for k in 0..steps {
        let (t0, t1) = (grid[k], grid[k + 1]);
        live.advance(spec, config.integrator, t0, t1 - t0)?;
        live.merge(config.merge_tol, t1, &mut events);
        record(&live, &mut nodes);
        sizes.push(live.weights.len());
    }

    let times: Arc<[f64]> = Arc::from(grid);
    let paths = nodes
        .into_iter()
        .map(|v| PiecewisePath::from_parts(d, times.clone(), v))
        .collect();
    Ok(LimitFlow {
        ensemble: PathEnsemble::from_parts(paths, mu0.weights().to_vec(), Provenance::LimitFlow),
        merge_events: events,
        support_sizes: sizes,
        config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionRow {
    pub t: f64,
    pub distance: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub lambda: f64,
    pub initial_distance: f64,
    pub tol: f64,
    pub rows: Vec<ContractionRow>,
    pub passed: bool,
}

/// Checks `W2(mu_t^a, mu_t^b) <= e^{lambda t} W2(mu_0^a, mu_0^b) + tol_constant * dt`.
pub fn contraction_check(
    spec: &PvfSpec,
    mu0a: &DiscreteMeasure,
    mu0b: &DiscreteMeasure,
    lambda: f64,
    times: &[f64],
    config: StickyFlowConfig,
) -> Result<ContractionReport> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    if horizon <= 0.0 {
        return Err(Error::input("contraction_check needs a positive time"));
    }
    let (fa, fb) = rayon::join(
        || sticky_flow(spec, mu0a, horizon, config),
        || sticky_flow(spec, mu0b, horizon, config),
    );
    let (fa, fb) = (fa?, fb?);
    let w0 = wasserstein2(mu0a, mu0b)?;
    let tol = config.integration_tol();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let distance = wasserstein2(&fa.measure_at(t), &fb.measure_at(t))?;
        let bound = (lambda * t).exp() * w0 + tol;
        rows.push(ContractionRow {
            t,
            distance,
            bound,
            passed: distance <= bound,
        });
    }
    Ok(ContractionReport {
        lambda,
        initial_distance: w0,
        tol,
        passed: rows.iter().all(|r| r.passed),
        rows,
    })
}

/// EVI residuals
/// `[W2²(mu_{t+h}, nu) - W2²(mu_t, nu)] / 2h - lambda W2²(mu_t, nu) + [phi, mu_t]`
/// with `nu` the position marginal of `phi`. The inequality predicts values `<= O(h) + O(dt)`.
pub fn evi_residual(
    flow: &LimitFlow,
    phi: &TangentMeasure,
    times: &[f64],
    h: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::input("h must be positive"));
    }
    let nu = phi.x_marginal();
    times
        .iter()
        .map(|&t| {
            if t < 0.0 || t + h > flow.horizon() * (1.0 + 1e-12) {
                return Err(Error::input(format!(
                    "t + h = {} exceeds the horizon",
                    t + h
                )));
            }
            let mu = flow.measure_at(t);
            let w_now = wasserstein2(&mu, &nu)?.powi(2);
            let w_next = wasserstein2(&flow.measure_at(t + h), &nu)?.powi(2);
            let pairing = bram_pairing(phi, &mu)?.value;
            Ok((w_next - w_now) / (2.0 * h) - lambda * w_now + pairing)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StickyReport {
    pub distinct_paths: bool,
    pub initial_law: bool,
    pub sticky: bool,
    pub passed: bool,
    /// First violation found, if any.
    pub witness: Option<String>,
}

/// Checks the sticky-particle properties on the union grid of `ensemble`:
/// distinct paths, initial law equal to `mu0` (when given), and paths that meet within
/// `tol` staying together afterwards.
pub fn sticky_property_check(
    ensemble: &PathEnsemble,
    tol: f64,
    mu0: Option<&DiscreteMeasure>,
) -> StickyReport {
    use rayon::prelude::*;
    let grid = ensemble.grid_times();
    let n = ensemble.len();
    let evals: Vec<Vec<f64>> = ensemble
        .paths()
        .par_iter()
        .map(|p| grid.iter().flat_map(|&t| p.eval(t)).collect())
        .collect();
    let d = ensemble.dim();
    let at = |i: usize, k: usize| &evals[i][k * d..(k + 1) * d];
    let tol2 = tol * tol;

    let mut witness = None;
    let pair_witness: Option<(bool, String)> = (0..n).into_par_iter().find_map_first(|i| {
        for j in i + 1..n {
            let mut met: Option<usize> = None;
            let mut identical = true;
            for k in 0..grid.len() {
                let close = dist2(at(i, k), at(j, k)) <= tol2;
                identical &= close;
                match (met, close) {
                    (None, true) => met = Some(k),
                    (Some(k0), false) => {
                        return Some((
                            false,
                            format!(
                                "paths {i} and {j} meet at t = {} and separate at t = {}",
                                grid[k0], grid[k]
                            ),
                        ))
                    }
                    _ => {}
                }
            }
            if identical {
                return Some((
                    true,
                    format!("paths {i} and {j} coincide on the whole grid"),
                ));
            }
        }
        None
    });
    let (mut distinct, mut sticky) = (true, true);
    if let Some((dup, w)) = pair_witness {
        if dup {
            distinct = false;
        } else {
            sticky = false;
        }
        witness = Some(w);
    }
    let mut initial_law = true;
    if let Some(mu0) = mu0 {
        if let Some(w) = measure_mismatch(&ensemble.eval_at(0.0), mu0, tol, 1e-12) {
            initial_law = false;
            witness.get_or_insert(format!("initial law: {w}"));
        }
    }
    StickyReport {
        distinct_paths: distinct,
        initial_law,
        sticky,
        passed: distinct && initial_law && sticky,
        witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::scenario;
    use smallvec::smallvec;

    fn m1(atoms: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, atoms.to_vec(), weights.to_vec()).unwrap()
    }

    fn decay() -> PvfSpec {
        PvfSpec::deterministic(|x| smallvec![-x[0]])
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let flow = sticky_flow(
            &decay(),
            &m1(&[1.0], &[1.0]),
            1.0,
            StickyFlowConfig::with_dt(1e-4),
        )
        .unwrap();
        let x1 = flow.ensemble.path(0).eval(1.0)[0];
        assert!((x1 - (-1f64).exp()).abs() <= 1e-6);
        assert!(flow.merge_events.is_empty());
    }

    #[test]
    fn attraction_preserves_mean() {
        let s = scenario("idf-attract").unwrap();
        let flow = sticky_flow(&s.spec, &s.mu0, 1.0, StickyFlowConfig::with_dt(1e-3)).unwrap();
        for t in [0.25, 0.5, 1.0] {
            let mu = flow.measure_at(t);
            assert!(mu.mean()[0].abs() < 1e-12);
            assert!((mu.atom(1)[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_field_is_static() {
        let zero = PvfSpec::interaction(|_, _| smallvec![0.0]);
        let mu0 = m1(&[-1.0, 3.0], &[0.25, 0.75]);
        let flow = sticky_flow(&zero, &mu0, 2.0, StickyFlowConfig::default()).unwrap();
        assert!(flow.merge_events.is_empty());
        assert_eq!(flow.measure_at(1.7), mu0);
    }

    #[test]
    fn merging_flow_is_sticky() {
        let s = scenario("idf-attract").unwrap();
        let mu0 = m1(&[-1.0, 0.2, 1.0], &[0.3, 0.3, 0.4]);
        let flow = sticky_flow(&s.spec, &mu0, 25.0, StickyFlowConfig::with_dt(1e-2)).unwrap();
        assert_eq!(flow.merge_events.len(), 2);
        assert!(flow.support_sizes.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*flow.support_sizes.last().unwrap(), 1);
        let rep = sticky_property_check(&flow.ensemble, 1e-8, Some(&mu0));
        assert!(rep.passed, "{:?}", rep.witness);
        let end = flow.measure_at(25.0);
        assert!((end.total_mass() - 1.0).abs() <= 1e-15);
        assert!((end.atom(0)[0] - 0.16).abs() < 1e-8);
    }

    #[test]
    fn non_finite_field_reports_time() {
        let bad = PvfSpec::deterministic(|x| smallvec![if x[0] > 0.5 { f64::NAN } else { 1.0 }]);
        match sticky_flow(
            &bad,
            &m1(&[0.0], &[1.0]),
            1.0,
            StickyFlowConfig::with_dt(0.1),
        ) {
            Err(Error::NumericDomain { context, .. }) => assert!(context.contains("t = 0.")),
            other => panic!("{:?}", other.map(|f| f.merge_events)),
        }
    }

    #[test]
    fn contraction_examples() {
        let cfg = StickyFlowConfig::with_dt(1e-3);
        let same = m1(&[0.5], &[1.0]);
        let rep = contraction_check(&decay(), &same, &same, -1.0, &[0.5, 1.0], cfg).unwrap();
        assert!(rep.passed && rep.rows.iter().all(|r| r.distance == 0.0));

        let rep = contraction_check(
            &decay(),
            &m1(&[0.0], &[1.0]),
            &m1(&[1.0], &[1.0]),
            -1.0,
            &[1.0],
            cfg,
        )
        .unwrap();
        assert!(rep.passed);
        assert!((rep.rows[0].distance - (-1f64).exp()).abs() < 1e-10);

        let zero = PvfSpec::interaction(|_, _| smallvec![0.0]);
        let rep = contraction_check(
            &zero,
            &m1(&[0.0, 1.0], &[0.5, 0.5]),
            &m1(&[2.0], &[1.0]),
            0.0,
            &[0.3, 0.9],
            cfg,
        )
        .unwrap();
        assert!(rep
            .rows
            .iter()
            .all(|r| (r.distance - rep.initial_distance).abs() < 1e-14));
    }

    #[test]
    fn evi_examples() {
        let flow = sticky_flow(
            &decay(),
            &m1(&[1.0], &[1.0]),
            2.0,
            StickyFlowConfig::with_dt(1e-4),
        )
        .unwrap();
        let phi = TangentMeasure::from_pairs(&[([0.0], [0.0])], vec![1.0]).unwrap();
        let h = 1e-3;
        for r in evi_residual(&flow, &phi, &[0.0, 0.5, 1.0], h, -1.0).unwrap() {
            assert!(r <= 2.0 * h, "{r}");
        }

        let zero = PvfSpec::interaction(|_, _| smallvec![0.0]);
        let flow =
            sticky_flow(&zero, &m1(&[0.0], &[1.0]), 1.0, StickyFlowConfig::default()).unwrap();
        let phi = TangentMeasure::from_pairs(&[([1.0], [0.0])], vec![1.0]).unwrap();
        let r = evi_residual(&flow, &phi, &[0.2], 0.1, 0.0).unwrap();
        assert_eq!(r, vec![0.0]);
        assert!(evi_residual(&flow, &phi, &[0.95], 0.1, 0.0).is_err());
    }

    #[test]
    fn sticky_checker_examples() {
        let p = |a: f64, b: f64, c: f64| {
            PiecewisePath::new(1, Arc::from(vec![0.0, 0.5, 1.0]), vec![a, b, c]).unwrap()
        };
        let two = PathEnsemble::new(
            vec![p(0.0, 0.0, 0.0), p(1.0, 1.0, 1.0)],
            vec![0.5, 0.5],
            Provenance::Custom,
        )
        .unwrap();
        assert!(sticky_property_check(&two, 1e-9, Some(&m1(&[0.0, 1.0], &[0.5, 0.5]))).passed);

        let crossing = PathEnsemble::new(
            vec![p(0.0, 0.5, 1.0), p(1.0, 0.5, 0.0)],
            vec![0.5, 0.5],
            Provenance::Custom,
        )
        .unwrap();
        let rep = sticky_property_check(&crossing, 1e-9, None);
        assert!(!rep.sticky && !rep.passed);
        assert!(rep.witness.unwrap().contains("t = 0.5"));

        let dup = PathEnsemble::new(
            vec![p(0.0, 1.0, 2.0), p(0.0, 1.0, 2.0)],
            vec![0.5, 0.5],
            Provenance::Custom,
        )
        .unwrap();
        assert!(!sticky_property_check(&dup, 1e-9, None).distinct_paths);
    }

    #[test]
    fn single_quadratic_gradient_converges_at_rate() {
        let spec = PvfSpec::gradient_sum(vec![Arc::new(|x: &[f64]| smallvec![x[0] - 2.0])]);
        let flow = sticky_flow(
            &spec,
            &m1(&[-1.0, 0.0, 5.0], &[0.2, 0.3, 0.5]),
            3.0,
            StickyFlowConfig::with_dt(1e-3),
        )
        .unwrap();
        for t in [1.0, 2.0, 3.0] {
            let mu = flow.measure_at(t);
            for (x, x0) in mu.atoms().zip([-1.0, 0.0, 5.0]) {
                let want = (x0 - 2.0) * (-t).exp();
                assert!(((x[0] - 2.0) - want).abs() < 1e-10);
            }
        }
    }
}
