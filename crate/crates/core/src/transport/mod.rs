//! Exact quadratic optimal transport between discrete measures and between path ensembles.

mod brute;
mod simplex;

use rayon::prelude::*;
use serde::Serialize;

pub use brute::{brute_force_w2, BRUTE_FORCE_CELL_CAP};
pub use simplex::{solve_transport, TransportSolution};

use crate::error::{Error, Result};
use crate::measure::{dist2, dot, Coupling, DiscreteMeasure, TangentMeasure};
use crate::paths::{PathEnsemble, PiecewisePath};

/// An optimal coupling with its squared cost and distance.
#[derive(Debug, Clone)]
pub struct TransportResult {
    pub coupling: Coupling,
    /// `sum w_ij |x_i - y_j|^2`.
    pub cost: f64,
    pub distance: f64,
    /// Another optimal basis exists; the returned plan may not be the only optimum.
    pub multiple_optima: bool,
}

impl TransportResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "cost": self.cost,
            "distance": self.distance,
            "multiple_optima": self.multiple_optima,
            "coupling": serde_json::from_str::<serde_json::Value>(&self.coupling.to_json())
                .expect("coupling json"),
        })
    }
}

fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<f64> {
    mu.atoms()
        .flat_map(|x| nu.atoms().map(move |y| dist2(x, y)))
        .collect()
}

fn optimal_with_rows(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<(TransportResult, Vec<(usize, usize, f64)>)> {
    if mu.dim() != nu.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    // Coalesced measures are sorted, so in one dimension the north-west corner start is
    // already the monotone (optimal) plan.
    let cost = cost_matrix(mu, nu);
    let sol = solve_transport(mu.weights(), nu.weights(), &cost);
    let d = mu.dim();
    let mut xs = Vec::with_capacity(sol.flows.len() * d);
    let mut ys = Vec::with_capacity(sol.flows.len() * d);
    let mut ws = Vec::with_capacity(sol.flows.len());
    for &(i, j, f) in &sol.flows {
        xs.extend_from_slice(mu.atom(i));
        ys.extend_from_slice(nu.atom(j));
        ws.push(f);
    }
    let coupling = Coupling::from_parts(xs, ys, ws, mu.clone(), nu.clone());
    let result = TransportResult {
        coupling,
        cost: sol.cost,
        distance: sol.cost.sqrt(),
        multiple_optima: sol.multiple_optima,
    };
    Ok((result, sol.flows))
}

/// An optimal coupling for the quadratic cost, found by the transportation simplex.
pub fn optimal_coupling(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportResult> {
    optimal_with_rows(mu, nu).map(|(r, _)| r)
}

/// `W2(mu, nu)`.
pub fn wasserstein2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    optimal_coupling(mu, nu).map(|r| r.distance)
}

/// `sup_t |p1(t) - p2(t)|`, exact for piecewise-affine paths.
///
/// The difference is affine between consecutive points of the union grid, so the supremum
/// is attained at one of them.
pub fn path_sup_distance(p1: &PiecewisePath, p2: &PiecewisePath) -> Result<f64> {
    if p1.dim() != p2.dim() {
        return Err(Error::input("paths live in different dimensions"));
    }
    let (h1, h2) = (p1.horizon(), p2.horizon());
    if (h1 - h2).abs() > 1e-12 * h1.max(1.0) {
        return Err(Error::input(format!("path horizons differ: {h1} vs {h2}")));
    }
    Ok(path_sup_distance_sq(p1, p2).sqrt())
}

fn path_sup_distance_sq(p1: &PiecewisePath, p2: &PiecewisePath) -> f64 {
    if p1.times() == p2.times() {
        return (0..p1.node_count())
            .map(|k| dist2(p1.node(k), p2.node(k)))
            .fold(0.0, f64::max);
    }
    let (t1, t2) = (p1.times(), p2.times());
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < t1.len() || j < t2.len() {
        let t = match (t1.get(i), t2.get(j)) {
            (Some(&a), Some(&b)) if a == b => {
                i += 1;
                j += 1;
                a
            }
            (Some(&a), Some(&b)) if a < b => {
                i += 1;
                a
            }
            (Some(&a), None) => {
                i += 1;
                a
            }
            (_, Some(&b)) => {
                j += 1;
                b
            }
            (None, None) => unreachable!(),
        };
        best = best.max(dist2(&p1.eval(t), &p2.eval(t)));
    }
    best
}

/// `W2` on path space with the uniform ground metric.
pub fn wasserstein2_sup(e1: &PathEnsemble, e2: &PathEnsemble) -> Result<f64> {
    if e1.dim() != e2.dim() {
        return Err(Error::input("ensembles live in different dimensions"));
    }
    let (h1, h2) = (e1.horizon(), e2.horizon());
    if (h1 - h2).abs() > 1e-12 * h1.max(1.0) {
        return Err(Error::input(format!(
            "ensemble horizons differ: {h1} vs {h2}"
        )));
    }
    let n = e2.len();
    let cost: Vec<f64> = (0..e1.len() * n)
        .into_par_iter()
        .with_min_len(256)
        .map(|k| path_sup_distance_sq(e1.path(k / n), e2.path(k % n)))
        .collect();
    let sol = solve_transport(e1.weights(), e2.weights(), &cost);
    Ok(sol.cost.sqrt())
}

/// Value of the metric-duality pairing together with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pairing {
    pub value: f64,
    /// The optimal plan used is not unique; the value is that of one deterministic plan.
    pub degenerate: bool,
}

/// `int <v(x0), x0 - x1> d gamma` for the barycentric projection `v` of `phi` and an optimal
/// plan `gamma` between the position marginal of `phi` and `nu`.
pub fn bram_pairing(phi: &TangentMeasure, nu: &DiscreteMeasure) -> Result<Pairing> {
    if phi.dim() != nu.dim() {
        return Err(Error::input(
            "pairing arguments live in different dimensions",
        ));
    }
    let bary = phi.barycentric_projection();
    let base = DiscreteMeasure::from_parts(
        bary.dim(),
        (0..bary.len()).flat_map(|i| bary.x(i).to_vec()).collect(),
        bary.weights().to_vec(),
    );
    let (res, flows) = optimal_with_rows(&base, nu)?;
    let value = flows
        .iter()
        .map(|&(i, j, f)| {
            let diff: Vec<f64> = bary
                .x(i)
                .iter()
                .zip(nu.atom(j))
                .map(|(a, b)| a - b)
                .collect();
            f * dot(bary.v(i), &diff)
        })
        .sum();
    Ok(Pairing {
        value,
        degenerate: res.multiple_optima,
    })
}
