//! Piecewise-affine paths and weighted path ensembles.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{check_finite, DiscreteMeasure, Point};

/// A continuous path on `[0, T]`, affine between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePath {
    dim: usize,
    times: Arc<[f64]>,
    nodes: Vec<f64>,
}

impl PiecewisePath {
    /// `times` must start at 0 and be strictly increasing; `nodes` holds one point per time.
    pub fn new(dim: usize, times: Arc<[f64]>, nodes: Vec<f64>) -> Result<Self> {
        if dim == 0 || times.is_empty() || nodes.len() != dim * times.len() {
            return Err(Error::input("path grid and nodes have inconsistent sizes"));
        }
        if times[0] != 0.0 {
            return Err(Error::input("path grids start at t = 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("path grid must be strictly increasing"));
        }
        check_finite("path nodes", &nodes)?;
        Ok(Self { dim, times, nodes })
    }

    pub(crate) fn from_parts(dim: usize, times: Arc<[f64]>, nodes: Vec<f64>) -> Self {
        Self { dim, times, nodes }
    }

    /// The constant path at `x` on `[0, horizon]`.
    pub fn constant(x: &[f64], horizon: f64) -> Self {
        let times: Arc<[f64]> = Arc::from(vec![0.0, horizon]);
        let nodes = x.iter().chain(x).copied().collect();
        Self::from_parts(x.len(), times, nodes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub(crate) fn shared_times(&self) -> &Arc<[f64]> {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    /// Evaluates the path at `t`, clamped to `[0, T]`. Grid times return the stored node.
    pub fn eval(&self, t: f64) -> Point {
        let ts = &self.times;
        if t <= 0.0 {
            return self.node(0).iter().copied().collect();
        }
        if t >= self.horizon() {
            return self.node(ts.len() - 1).iter().copied().collect();
        }
        match ts.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => self.node(k).iter().copied().collect(),
            Err(k) => {
                let (t0, t1) = (ts[k - 1], ts[k]);
                let s = (t - t0) / (t1 - t0);
                let (a, b) = (self.node(k - 1), self.node(k));
                a.iter().zip(b).map(|(a, b)| a + s * (b - a)).collect()
            }
        }
    }

    /// Iterates `(t_k, t_{k+1}, slope_k)` over segments.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, Point)> + '_ {
        (0..self.times.len().saturating_sub(1)).map(move |k| {
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            let slope = self
                .node(k)
                .iter()
                .zip(self.node(k + 1))
                .map(|(a, b)| (b - a) / (t1 - t0))
                .collect();
            (t0, t1, slope)
        })
    }
}

/// Origin of a path ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Affine interpolation of the exact multi-step plan.
    ExactTree,
    /// Uniform-weight sample of particle trajectories.
    MonteCarlo { seed: u64, samples: usize },
    /// Lagrangian paths of the sticky limit flow.
    LimitFlow,
    /// Built by hand.
    Custom,
}

/// A probability measure on paths sharing a common horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    dim: usize,
    paths: Vec<PiecewisePath>,
    weights: Vec<f64>,
    provenance: Provenance,
}

impl PathEnsemble {
    pub fn new(
        paths: Vec<PiecewisePath>,
        weights: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if paths.is_empty() || paths.len() != weights.len() {
            return Err(Error::input("ensemble needs one weight per path"));
        }
        let dim = paths[0].dim();
        let horizon = paths[0].horizon();
        if paths.iter().any(|p| p.dim() != dim) {
            return Err(Error::input("paths have different dimensions"));
        }
        if paths
            .iter()
            .any(|p| (p.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0))
        {
            return Err(Error::input("paths have different horizons"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::input("path weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("path weights sum to {total}")));
        }
        Ok(Self::from_parts(paths, weights, provenance))
    }

    pub(crate) fn from_parts(
        paths: Vec<PiecewisePath>,
        weights: Vec<f64>,
        provenance: Provenance,
    ) -> Self {
        Self {
            dim: paths[0].dim(),
            paths,
            weights,
            provenance,
        }
    }

    /// Dirac mass on a single path.
    pub fn dirac(path: PiecewisePath) -> Self {
        Self::from_parts(vec![path], vec![1.0], Provenance::Custom)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PiecewisePath] {
        &self.paths
    }

    pub fn path(&self, i: usize) -> &PiecewisePath {
        &self.paths[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn horizon(&self) -> f64 {
        self.paths[0].horizon()
    }

    /// Law of the evaluation `e_t`, with identical positions merged.
    pub fn eval_at(&self, t: f64) -> DiscreteMeasure {
        let coords = self.paths.iter().flat_map(|p| p.eval(t)).collect();
        DiscreteMeasure::from_parts(self.dim, coords, self.weights.clone()).coalesce(0.0)
    }

    /// Union of all path grids, sorted.
    pub fn grid_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = Vec::new();
        let mut last: Option<*const [f64]> = None;
        for p in &self.paths {
            let ptr = Arc::as_ptr(p.shared_times());
            if last != Some(ptr) {
                ts.extend_from_slice(p.times());
                last = Some(ptr);
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Copy with one node shifted by `delta`; used to exercise the verifiers.
    pub fn perturb_node(&self, path: usize, node: usize, delta: &[f64]) -> Self {
        let mut out = self.clone();
        let p = &mut out.paths[path];
        let d = p.dim;
        for (c, dc) in p.nodes[node * d..(node + 1) * d].iter_mut().zip(delta) {
            *c += dc;
        }
        out
    }

    /// CSV with columns `path_id,time,x0,..,x{d-1},weight`, one row per path node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path_id,time");
        for k in 0..self.dim {
            let _ = write!(out, ",x{k}");
        }
        out.push_str(",weight\n");
        for (i, (p, w)) in self.paths.iter().zip(&self.weights).enumerate() {
            for k in 0..p.node_count() {
                let _ = write!(out, "{i},{}", p.times()[k]);
                for c in p.node(k) {
                    let _ = write!(out, ",{c}");
                }
                let _ = writeln!(out, ",{w}");
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "dim": self.dim,
            "provenance": self.provenance,
            "paths": self.paths.iter().map(|p| serde_json::json!({
                "times": p.times(),
                "nodes": (0..p.node_count()).map(|k| p.node(k).to_vec()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "weights": self.weights,
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(times: &[f64], nodes: &[f64]) -> PiecewisePath {
        PiecewisePath::new(1, Arc::from(times.to_vec()), nodes.to_vec()).unwrap()
    }

    #[test]
    fn eval_hits_nodes_and_interpolates() {
        let p = path(&[0.0, 0.5, 1.0], &[0.0, 1.0, 0.0]);
        assert_eq!(p.eval(0.5)[0], 1.0);
        assert_eq!(p.eval(0.25)[0], 0.5);
        assert_eq!(p.eval(0.75)[0], 0.5);
        assert_eq!(p.eval(2.0)[0], 0.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(PiecewisePath::new(1, Arc::from(vec![0.0, 0.0]), vec![0.0, 0.0]).is_err());
        assert!(PiecewisePath::new(1, Arc::from(vec![0.1, 1.0]), vec![0.0, 0.0]).is_err());
        assert!(PiecewisePath::new(1, Arc::from(vec![0.0, 1.0]), vec![0.0]).is_err());
    }

    #[test]
    fn ensemble_marginals_and_csv() {
        let e = PathEnsemble::new(
            vec![
                path(&[0.0, 1.0], &[0.0, 1.0]),
                path(&[0.0, 1.0], &[0.0, -1.0]),
            ],
            vec![0.5, 0.5],
            Provenance::Custom,
        )
        .unwrap();
        assert_eq!(e.eval_at(0.0).len(), 1);
        assert_eq!(e.eval_at(0.5).coords(), &[-0.5, 0.5]);
        let csv = e.to_csv();
        assert!(csv.starts_with("path_id,time,x0,weight\n0,0,0,0.5\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn ensemble_rejects_mixed_horizons() {
        let r = PathEnsemble::new(
            vec![
                path(&[0.0, 1.0], &[0.0, 1.0]),
                path(&[0.0, 2.0], &[0.0, 1.0]),
            ],
            vec![0.5, 0.5],
            Provenance::Custom,
        );
        assert!(r.is_err());
    }
}
