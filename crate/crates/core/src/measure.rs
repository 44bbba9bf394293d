//! Finitely supported probability measures on `R^d`, on the tangent bundle `R^d x R^d`,
//! couplings on products and multi-step tuple plans.
//!
//! All measure types store coordinates in flat row-major buffers. Atoms produced by
//! push-forwards are coalesced (identical images merged) and returned in lexicographic order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A point of `R^d`. Stack-allocated for `d <= 4`.
pub type Point = SmallVec<[f64; 4]>;

/// Tolerance on total mass and on weight comparisons.
pub const WEIGHT_TOL: f64 = 1e-12;

/// Grouping tolerance used by the barycentric projection.
pub const GROUPING_TOL: f64 = 1e-12;

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

pub(crate) fn check_finite(context: &str, coords: &[f64]) -> Result<()> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain {
            context: context.to_string(),
            witness: format!("{coords:?}"),
        })
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::input("measure needs at least one atom"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::input(format!(
            "weights must be positive and finite, got {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::input(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Merges rows of width `width` that lie within `tol` (Euclidean) of each other.
///
/// Greedy clustering in lexicographic order, repeated until no two surviving rows are
/// within `tol`, so the operation is idempotent. Merged rows are weight-weighted means.
/// Returns `(rows, weights, assignment)` with `assignment[i]` the output index of input row `i`.
pub(crate) fn coalesce_rows(
    width: usize,
    rows: &[f64],
    weights: &[f64],
    tol: f64,
) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = weights.len();
    let mut cur: Vec<f64> = rows.iter().map(|c| c + 0.0).collect();
    let mut cur_w = weights.to_vec();
    let mut assign: Vec<usize> = (0..n).collect();
    loop {
        let m = cur_w.len();
        let row = |i: usize| &cur[i * width..(i + 1) * width];
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| lex_cmp(row(a), row(b)));

        let mut cluster_of = vec![usize::MAX; m];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        if tol == 0.0 {
            for (pos, &i) in order.iter().enumerate() {
                if pos > 0 && lex_cmp(row(order[pos - 1]), row(i)) == Ordering::Equal {
                    let c = cluster_of[order[pos - 1]];
                    cluster_of[i] = c;
                    clusters[c].push(i);
                } else {
                    cluster_of[i] = clusters.len();
                    clusters.push(vec![i]);
                }
            }
        } else {
            let tol2 = tol * tol;
            for (pos, &i) in order.iter().enumerate() {
                if cluster_of[i] != usize::MAX {
                    continue;
                }
                let c = clusters.len();
                cluster_of[i] = c;
                let mut members = vec![i];
                let lead = row(i)[0];
                for &j in &order[pos + 1..] {
                    if row(j)[0] - lead > tol {
                        break;
                    }
                    if cluster_of[j] == usize::MAX && dist2(row(i), row(j)) <= tol2 {
                        cluster_of[j] = c;
                        members.push(j);
                    }
                }
                clusters.push(members);
            }
        }

        let changed = clusters.len() != m;
        let mut next = Vec::with_capacity(clusters.len() * width);
        let mut next_w = Vec::with_capacity(clusters.len());
        for members in &clusters {
            let seed = row(members[0]);
            let w: f64 = members.iter().map(|&j| cur_w[j]).sum();
            if members.len() == 1 {
                next.extend_from_slice(seed);
            } else {
                for k in 0..width {
                    let shift: f64 = members
                        .iter()
                        .map(|&j| cur_w[j] * (cur[j * width + k] - seed[k]))
                        .sum();
                    next.push(seed[k] + shift / w + 0.0);
                }
            }
            next_w.push(w);
        }
        for a in assign.iter_mut() {
            *a = cluster_of[*a];
        }
        cur = next;
        cur_w = next_w;
        if !changed || tol == 0.0 {
            break;
        }
    }
    (cur, cur_w, assign)
}

/// A finitely supported probability measure on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from flat coordinates, validating finiteness and weights.
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be at least 1"));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::input(format!(
                "{} coordinates do not describe {} atoms in dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        check_finite("measure atoms", &coords)?;
        check_weights(&weights)?;
        Ok(Self::from_parts(dim, coords, weights))
    }

    pub(crate) fn from_parts(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Self {
        Self {
            dim,
            coords,
            weights,
        }
    }

    /// Builds a measure from a list of atoms.
    pub fn from_atoms<P: AsRef<[f64]>>(atoms: &[P], weights: Vec<f64>) -> Result<Self> {
        let dim = atoms.first().map(|a| a.as_ref().len()).unwrap_or(0);
        if atoms.iter().any(|a| a.as_ref().len() != dim) {
            return Err(Error::input("atoms have inconsistent dimensions"));
        }
        let coords = atoms
            .iter()
            .flat_map(|a| a.as_ref().iter().copied())
            .collect();
        Self::new(dim, coords, weights)
    }

    /// The Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), vec![1.0])
    }

    /// Uniform measure on the given atoms (repeated atoms are merged).
    pub fn uniform<P: AsRef<[f64]>>(atoms: &[P]) -> Result<Self> {
        let n = atoms.len().max(1);
        Ok(Self::from_atoms(atoms, vec![1.0 / n as f64; atoms.len()])?.coalesce(0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(sum_i w_i |x_i|^2)^(1/2)`.
    pub fn second_moment(&self) -> f64 {
        self.atoms()
            .zip(&self.weights)
            .map(|(x, w)| w * norm2(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean(&self) -> Point {
        let mut m: Point = SmallVec::from_elem(0.0, self.dim);
        for (x, w) in self.atoms().zip(&self.weights) {
            for k in 0..self.dim {
                m[k] += w * x[k];
            }
        }
        m
    }

    /// Largest atom norm.
    pub fn max_norm(&self) -> f64 {
        self.atoms().map(|x| norm2(x).sqrt()).fold(0.0, f64::max)
    }

    /// Image measure under `map`; identical images are merged.
    pub fn push_forward<F>(&self, map: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Point,
    {
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut dim = None;
        for x in self.atoms() {
            let y = map(x);
            check_finite("push-forward image", &y)?;
            match dim {
                None => dim = Some(y.len()),
                Some(d) if d != y.len() => {
                    return Err(Error::input("map returns points of varying dimension"))
                }
                _ => {}
            }
            coords.extend_from_slice(&y);
        }
        let dim = dim.unwrap_or(self.dim);
        Ok(Self::from_parts(dim, coords, self.weights.clone()).coalesce(0.0))
    }

    /// Merges atoms within distance `tol`; the result is sorted lexicographically.
    pub fn coalesce(&self, tol: f64) -> Self {
        let (coords, weights, _) = coalesce_rows(self.dim, &self.coords, &self.weights, tol);
        Self::from_parts(self.dim, coords, weights)
    }

    /// Weight of the atoms lying exactly at `x`.
    pub fn mass_at(&self, x: &[f64], tol: f64) -> f64 {
        self.atoms()
            .zip(&self.weights)
            .filter(|(a, _)| dist2(a, x) <= tol * tol)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("measure serialization")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::input(format!("measure json: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr {
            dim: self.dim,
            atoms: self.atoms().map(|a| a.to_vec()).collect(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MeasureRepr::deserialize(d)?;
        if r.atoms.iter().any(|a| a.len() != r.dim) {
            return Err(serde::de::Error::custom("atom dimension differs from dim"));
        }
        let coords = r.atoms.into_iter().flatten().collect();
        DiscreteMeasure::new(r.dim, coords, r.weights).map_err(serde::de::Error::custom)
    }
}

/// A finitely supported probability measure on position-velocity pairs `(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentMeasure {
    dim: usize,
    xs: Vec<f64>,
    vs: Vec<f64>,
    weights: Vec<f64>,
}

impl TangentMeasure {
    pub fn new(dim: usize, xs: Vec<f64>, vs: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || xs.len() != dim * weights.len() || vs.len() != xs.len() {
            return Err(Error::input(
                "tangent measure buffers have inconsistent sizes",
            ));
        }
        check_finite("tangent positions", &xs)?;
        check_finite("tangent velocities", &vs)?;
        check_weights(&weights)?;
        Ok(Self::from_parts(dim, xs, vs, weights))
    }

    pub(crate) fn from_parts(dim: usize, xs: Vec<f64>, vs: Vec<f64>, weights: Vec<f64>) -> Self {
        Self {
            dim,
            xs,
            vs,
            weights,
        }
    }

    /// Builds a tangent measure from `(x, v)` pairs.
    pub fn from_pairs<P: AsRef<[f64]>>(pairs: &[(P, P)], weights: Vec<f64>) -> Result<Self> {
        let dim = pairs.first().map(|p| p.0.as_ref().len()).unwrap_or(0);
        if pairs
            .iter()
            .any(|(x, v)| x.as_ref().len() != dim || v.as_ref().len() != dim)
        {
            return Err(Error::input("tangent atoms have inconsistent dimensions"));
        }
        let xs = pairs
            .iter()
            .flat_map(|p| p.0.as_ref().iter().copied())
            .collect();
        let vs = pairs
            .iter()
            .flat_map(|p| p.1.as_ref().iter().copied())
            .collect();
        Self::new(dim, xs, vs, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.vs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(sum_i w_i |v_i|^2)^(1/2)`, the quantity tested against the stability bound.
    pub fn velocity_moment(&self) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * norm2(self.v(i)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.len())
            .map(|i| norm2(self.v(i)).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest norm `|(x, v)|` over atoms.
    pub fn max_atom_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| (norm2(self.x(i)) + norm2(self.v(i))).sqrt())
            .fold(0.0, f64::max)
    }

    /// Push-forward under the position projection.
    pub fn x_marginal(&self) -> DiscreteMeasure {
        DiscreteMeasure::from_parts(self.dim, self.xs.clone(), self.weights.clone()).coalesce(0.0)
    }

    /// Push-forward under `exp^tau(x, v) = x + tau v`.
    pub fn exp(&self, tau: f64) -> DiscreteMeasure {
        let coords = self
            .xs
            .iter()
            .zip(&self.vs)
            .map(|(x, v)| x + tau * v)
            .collect();
        DiscreteMeasure::from_parts(self.dim, coords, self.weights.clone()).coalesce(0.0)
    }

    /// Push-forward under a map of the tangent bundle into itself.
    pub fn push_forward<F>(&self, map: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> (Point, Point),
    {
        let mut xs = Vec::with_capacity(self.xs.len());
        let mut vs = Vec::with_capacity(self.vs.len());
        for i in 0..self.len() {
            let (x, v) = map(self.x(i), self.v(i));
            check_finite("tangent push-forward image", &x)?;
            check_finite("tangent push-forward image", &v)?;
            if x.len() != self.dim || v.len() != self.dim {
                return Err(Error::input("tangent map changes dimension"));
            }
            xs.extend_from_slice(&x);
            vs.extend_from_slice(&v);
        }
        Ok(Self::from_parts(self.dim, xs, vs, self.weights.clone()).coalesce(0.0))
    }

    fn rows(&self) -> Vec<f64> {
        let mut rows = Vec::with_capacity(2 * self.xs.len());
        for i in 0..self.len() {
            rows.extend_from_slice(self.x(i));
            rows.extend_from_slice(self.v(i));
        }
        rows
    }

    fn from_rows(dim: usize, rows: &[f64], weights: Vec<f64>) -> Self {
        let mut xs = Vec::with_capacity(rows.len() / 2);
        let mut vs = Vec::with_capacity(rows.len() / 2);
        for r in rows.chunks_exact(2 * dim) {
            xs.extend_from_slice(&r[..dim]);
            vs.extend_from_slice(&r[dim..]);
        }
        Self::from_parts(dim, xs, vs, weights)
    }

    /// Merges `(x, v)` atoms within distance `tol` in the product metric.
    pub fn coalesce(&self, tol: f64) -> Self {
        let (rows, weights, _) = coalesce_rows(2 * self.dim, &self.rows(), &self.weights, tol);
        Self::from_rows(self.dim, &rows, weights)
    }

    /// Replaces the velocities over each position by their weighted mean.
    ///
    /// Positions are grouped after coalescing them at [`GROUPING_TOL`].
    pub fn barycentric_projection(&self) -> Self {
        let (xs, weights, assign) = coalesce_rows(self.dim, &self.xs, &self.weights, GROUPING_TOL);
        let mut vs = vec![0.0; xs.len()];
        for (i, &g) in assign.iter().enumerate() {
            for k in 0..self.dim {
                vs[g * self.dim + k] += self.weights[i] * self.vs[i * self.dim + k];
            }
        }
        for (g, w) in weights.iter().enumerate() {
            for k in 0..self.dim {
                vs[g * self.dim + k] /= w;
            }
        }
        Self::from_parts(self.dim, xs, vs, weights)
    }

    /// Mean velocity at the position closest to `x` (within `tol`), if any.
    pub fn velocity_at(&self, x: &[f64], tol: f64) -> Option<Point> {
        let mut acc: Point = SmallVec::from_elem(0.0, self.dim);
        let mut w = 0.0;
        for i in 0..self.len() {
            if dist2(self.x(i), x) <= tol * tol {
                w += self.weights[i];
                for k in 0..self.dim {
                    acc[k] += self.weights[i] * self.v(i)[k];
                }
            }
        }
        (w > 0.0).then(|| acc.into_iter().map(|a| a / w).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tangent measure serialization")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::input(format!("tangent measure json: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct TangentRepr {
    dim: usize,
    atoms: Vec<[Vec<f64>; 2]>,
    weights: Vec<f64>,
}

impl Serialize for TangentMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TangentRepr {
            dim: self.dim,
            atoms: (0..self.len())
                .map(|i| [self.x(i).to_vec(), self.v(i).to_vec()])
                .collect(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TangentMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TangentRepr::deserialize(d)?;
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for [x, v] in r.atoms {
            if x.len() != r.dim || v.len() != r.dim {
                return Err(serde::de::Error::custom("atom dimension differs from dim"));
            }
            xs.extend(x);
            vs.extend(v);
        }
        TangentMeasure::new(r.dim, xs, vs, r.weights).map_err(serde::de::Error::custom)
    }
}

/// A coupling of two discrete measures: weighted pairs `(x, y)` with declared marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Vec<f64>,
    first: DiscreteMeasure,
    second: DiscreteMeasure,
}

impl Coupling {
    /// Builds a coupling and checks that its marginals match the declared ones.
    pub fn new(
        xs: Vec<f64>,
        ys: Vec<f64>,
        weights: Vec<f64>,
        first: DiscreteMeasure,
        second: DiscreteMeasure,
    ) -> Result<Self> {
        let dim = first.dim();
        if second.dim() != dim {
            return Err(Error::input("coupling marginals have different dimensions"));
        }
        if xs.len() != dim * weights.len() || ys.len() != xs.len() {
            return Err(Error::input("coupling buffers have inconsistent sizes"));
        }
        check_finite("coupling atoms", &xs)?;
        check_finite("coupling atoms", &ys)?;
        check_weights(&weights)?;
        let c = Self::from_parts(xs, ys, weights, first, second);
        let (a, b) = c.computed_marginals();
        if let Some(w) = measure_mismatch(&a, &c.first, 0.0, WEIGHT_TOL) {
            return Err(Error::input(format!("first marginal mismatch: {w}")));
        }
        if let Some(w) = measure_mismatch(&b, &c.second, 0.0, WEIGHT_TOL) {
            return Err(Error::input(format!("second marginal mismatch: {w}")));
        }
        Ok(c)
    }

    pub(crate) fn from_parts(
        xs: Vec<f64>,
        ys: Vec<f64>,
        weights: Vec<f64>,
        first: DiscreteMeasure,
        second: DiscreteMeasure,
    ) -> Self {
        Self {
            dim: first.dim(),
            xs,
            ys,
            weights,
            first,
            second,
        }
    }

    /// The product coupling `mu ⊗ nu`.
    pub fn product(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        let mut xs = Vec::with_capacity(mu.len() * nu.len() * mu.dim());
        let mut ys = Vec::with_capacity(mu.len() * nu.len() * nu.dim());
        let mut weights = Vec::with_capacity(mu.len() * nu.len());
        for (x, wx) in mu.atoms().zip(mu.weights()) {
            for (y, wy) in nu.atoms().zip(nu.weights()) {
                xs.extend_from_slice(x);
                ys.extend_from_slice(y);
                weights.push(wx * wy);
            }
        }
        Self {
            dim: mu.dim(),
            xs,
            ys,
            weights,
            first: mu.clone(),
            second: nu.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn first(&self) -> &DiscreteMeasure {
        &self.first
    }

    pub fn second(&self) -> &DiscreteMeasure {
        &self.second
    }

    /// Marginals recomputed from the atoms.
    pub fn computed_marginals(&self) -> (DiscreteMeasure, DiscreteMeasure) {
        (
            DiscreteMeasure::from_parts(self.dim, self.xs.clone(), self.weights.clone())
                .coalesce(0.0),
            DiscreteMeasure::from_parts(self.dim, self.ys.clone(), self.weights.clone())
                .coalesce(0.0),
        )
    }

    /// `sum w |x - y|^2`.
    pub fn cost(&self) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * dist2(self.x(i), self.y(i)))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "dim": self.dim,
            "pairs": (0..self.len()).map(|i| [self.x(i).to_vec(), self.y(i).to_vec()]).collect::<Vec<_>>(),
            "weights": self.weights,
        })
        .to_string()
    }
}

/// Joint law of discrete trajectories `(x_0, ..., x_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuplePlan {
    dim: usize,
    len: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl TuplePlan {
    /// `coords` holds `weights.len()` tuples of `len` points each.
    pub fn new(dim: usize, len: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || len == 0 || coords.len() != dim * len * weights.len() {
            return Err(Error::input("tuple plan buffers have inconsistent sizes"));
        }
        check_finite("tuple plan", &coords)?;
        check_weights(&weights)?;
        Ok(Self::from_parts(dim, len, coords, weights))
    }

    pub(crate) fn from_parts(dim: usize, len: usize, coords: Vec<f64>, weights: Vec<f64>) -> Self {
        Self {
            dim,
            len,
            coords,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `n`; tuples have `n + 1` entries.
    pub fn steps(&self) -> usize {
        self.len - 1
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

    pub fn tuple(&self, i: usize) -> &[f64] {
        let w = self.len * self.dim;
        &self.coords[i * w..(i + 1) * w]
    }

    pub fn point(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * self.len + k) * self.dim;
        &self.coords[start..start + self.dim]
    }

    /// Law of the `k`-th coordinate.
    pub fn marginal(&self, k: usize) -> DiscreteMeasure {
        let coords = (0..self.len())
            .flat_map(|i| self.point(i, k).iter().copied())
            .collect();
        DiscreteMeasure::from_parts(self.dim, coords, self.weights.clone()).coalesce(0.0)
    }

    /// Projection onto the first `k + 1` coordinates, with identical tuples merged.
    pub fn restrict(&self, k: usize) -> TuplePlan {
        let k = k.min(self.steps());
        let width = (k + 1) * self.dim;
        let coords: Vec<f64> = (0..self.len())
            .flat_map(|i| self.tuple(i)[..width].iter().copied())
            .collect();
        let (coords, weights, _) = coalesce_rows(width, &coords, &self.weights, 0.0);
        Self::from_parts(self.dim, k + 1, coords, weights)
    }

    /// Joint law of coordinates `(k, k + 1)`.
    pub fn pair_marginal(&self, k: usize) -> Coupling {
        let mut xs = Vec::with_capacity(self.len() * self.dim);
        let mut ys = Vec::with_capacity(self.len() * self.dim);
        for i in 0..self.len() {
            xs.extend_from_slice(self.point(i, k));
            ys.extend_from_slice(self.point(i, k + 1));
        }
        let w = 2 * self.dim;
        let rows: Vec<f64> = (0..self.len())
            .flat_map(|i| {
                xs[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .chain(&ys[i * self.dim..(i + 1) * self.dim])
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();
        let (rows, weights, _) = coalesce_rows(w, &rows, &self.weights, 0.0);
        let (mut cx, mut cy) = (Vec::new(), Vec::new());
        for r in rows.chunks_exact(w) {
            cx.extend_from_slice(&r[..self.dim]);
            cy.extend_from_slice(&r[self.dim..]);
        }
        Coupling::from_parts(cx, cy, weights, self.marginal(k), self.marginal(k + 1))
    }

    /// Merges identical tuples.
    pub fn coalesce(&self, tol: f64) -> Self {
        let (coords, weights, _) =
            coalesce_rows(self.len * self.dim, &self.coords, &self.weights, tol);
        Self::from_parts(self.dim, self.len, coords, weights)
    }

    /// Push-forward under a map on tuples.
    pub fn push_forward<F>(&self, map: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut coords = Vec::with_capacity(self.coords.len());
        for i in 0..self.len() {
            let y = map(self.tuple(i));
            check_finite("tuple push-forward image", &y)?;
            if y.len() != self.len * self.dim {
                return Err(Error::input("tuple map changes shape"));
            }
            coords.extend(y);
        }
        Ok(Self::from_parts(self.dim, self.len, coords, self.weights.clone()).coalesce(0.0))
    }
}

/// Compares two measures atom-by-atom after coalescing at `coord_tol`.
///
/// Returns a description of the first mismatch, or `None` when every atom of one has a
/// partner in the other within `coord_tol` carrying the same weight within `weight_tol`.
pub fn measure_mismatch(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    coord_tol: f64,
    weight_tol: f64,
) -> Option<String> {
    if a.dim() != b.dim() {
        return Some(format!("dimensions {} vs {}", a.dim(), b.dim()));
    }
    rows_mismatch(
        a.dim(),
        a.coords(),
        a.weights(),
        b.coords(),
        b.weights(),
        coord_tol,
        weight_tol,
    )
}

/// Same as [`measure_mismatch`] for tangent measures, comparing `(x, v)` atoms.
pub fn tangent_mismatch(
    a: &TangentMeasure,
    b: &TangentMeasure,
    coord_tol: f64,
    weight_tol: f64,
) -> Option<String> {
    if a.dim() != b.dim() {
        return Some(format!("dimensions {} vs {}", a.dim(), b.dim()));
    }
    rows_mismatch(
        2 * a.dim(),
        &a.rows(),
        a.weights(),
        &b.rows(),
        b.weights(),
        coord_tol,
        weight_tol,
    )
}

/// Same as [`measure_mismatch`] for tuple plans, comparing whole tuples.
pub fn plan_mismatch(
    a: &TuplePlan,
    b: &TuplePlan,
    coord_tol: f64,
    weight_tol: f64,
) -> Option<String> {
    if a.dim != b.dim || a.len != b.len {
        return Some(format!("shapes {}x{} vs {}x{}", a.len, a.dim, b.len, b.dim));
    }
    rows_mismatch(
        a.dim * a.len,
        &a.coords,
        &a.weights,
        &b.coords,
        &b.weights,
        coord_tol,
        weight_tol,
    )
}

pub(crate) fn rows_mismatch(
    width: usize,
    ra: &[f64],
    wa: &[f64],
    rb: &[f64],
    wb: &[f64],
    coord_tol: f64,
    weight_tol: f64,
) -> Option<String> {
    let (ra, wa, _) = coalesce_rows(width, ra, wa, coord_tol);
    let (rb, wb, _) = coalesce_rows(width, rb, wb, coord_tol);
    if wa.len() != wb.len() {
        return Some(format!("{} atoms vs {} atoms", wa.len(), wb.len()));
    }
    let tol2 = coord_tol * coord_tol;
    let mut used = vec![false; wb.len()];
    for i in 0..wa.len() {
        let x = &ra[i * width..(i + 1) * width];
        // Both sides are sorted; search a window around the same rank.
        let lo = i.saturating_sub(4);
        let hi = (i + 5).min(wb.len());
        let found = (lo..hi)
            .chain(0..wb.len())
            .find(|&j| !used[j] && dist2(x, &rb[j * width..(j + 1) * width]) <= tol2);
        match found {
            None => return Some(format!("atom {x:?} (weight {}) has no partner", wa[i])),
            Some(j) => {
                used[j] = true;
                if (wa[i] - wb[j]).abs() > weight_tol {
                    return Some(format!("atom {x:?}: weight {} vs {}", wa[i], wb[j]));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    fn m1(atoms: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, atoms.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(DiscreteMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(2, vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn push_forward_translation_and_merge() {
        let d = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let t = d.push_forward(|x| smallvec![x[0] + 1.0]).unwrap();
        assert_eq!(t.coords(), &[1.0]);

        let m = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let sq = m.push_forward(|x| smallvec![x[0] * x[0]]).unwrap();
        assert_eq!(sq.len(), 1);
        assert_eq!(sq.coords(), &[1.0]);
        assert_eq!(sq.weights(), &[1.0]);

        let bad = m.push_forward(|x| smallvec![1.0 / (x[0] - 1.0)]);
        assert!(matches!(bad, Err(Error::NumericDomain { .. })));
    }

    #[test]
    fn exp_pushes_paired_velocities() {
        let phi =
            TangentMeasure::from_pairs(&[([0.0], [1.0]), ([2.0], [1.0])], vec![0.5, 0.5]).unwrap();
        let m = phi.exp(0.5);
        assert_eq!(m.coords(), &[0.5, 2.5]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn product_weights() {
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = m1(&[2.0, 3.0], &[1.0 / 3.0, 2.0 / 3.0]);
        let p = Coupling::product(&a, &b);
        assert_eq!(p.len(), 2);
        assert_eq!(p.y(1), &[3.0]);
        assert_eq!(p.weights(), &[1.0 / 3.0, 2.0 / 3.0]);
        let h = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let q = Coupling::product(&h, &h);
        assert_eq!(q.weights(), &[0.25; 4]);
        let (f, s) = q.computed_marginals();
        assert_eq!(f, h);
        assert_eq!(s, h);
    }

    #[test]
    fn moments() {
        assert_eq!(DiscreteMeasure::dirac(&[3.0]).unwrap().second_moment(), 3.0);
        assert!((m1(&[0.0, 2.0], &[0.5, 0.5]).second_moment() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            DiscreteMeasure::dirac(&[3.0, 4.0]).unwrap().second_moment(),
            5.0
        );

        let t = |pairs: &[([f64; 1], [f64; 1])], w: Vec<f64>| {
            TangentMeasure::from_pairs(pairs, w)
                .unwrap()
                .velocity_moment()
        };
        assert_eq!(t(&[([0.0], [2.0])], vec![1.0]), 2.0);
        assert_eq!(t(&[([0.0], [1.0]), ([0.0], [-1.0])], vec![0.5, 0.5]), 1.0);
        assert!((t(&[([0.0], [0.0]), ([0.0], [2.0])], vec![0.5, 0.5]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn barycentric_projection_groups_by_position() {
        let phi =
            TangentMeasure::from_pairs(&[([0.0], [1.0]), ([0.0], [-1.0])], vec![0.5, 0.5]).unwrap();
        let b = phi.barycentric_projection();
        assert_eq!(b.len(), 1);
        assert_eq!(b.v(0), &[0.0]);

        let phi = TangentMeasure::from_pairs(
            &[([0.0], [2.0]), ([0.0], [4.0]), ([1.0], [0.0])],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        let b = phi.barycentric_projection();
        assert_eq!(b.len(), 2);
        assert_eq!(
            (b.x(0), b.v(0), b.weights()[0]),
            (&[0.0][..], &[3.0][..], 0.5)
        );
        assert_eq!(
            (b.x(1), b.v(1), b.weights()[1]),
            (&[1.0][..], &[0.0][..], 0.5)
        );

        let single = TangentMeasure::from_pairs(&[([1.0], [5.0])], vec![1.0]).unwrap();
        assert_eq!(single.barycentric_projection(), single);
    }

    #[test]
    fn coalesce_examples() {
        let m = DiscreteMeasure::from_parts(1, vec![0.0, 0.0], vec![0.5, 0.5]).coalesce(0.0);
        assert_eq!((m.coords(), m.weights()), (&[0.0][..], &[1.0][..]));

        let m = m1(&[0.0, 1e-9], &[0.5, 0.5]).coalesce(1e-6);
        assert_eq!(m.len(), 1);
        assert!((m.coords()[0] - 5e-10).abs() < 1e-24);

        let m = m1(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(m.coalesce(1e-6), m);
    }

    #[test]
    fn coalesce_reaches_fixpoint() {
        // {0, 0.6} merge to 0.3, which stays 0.9 away from 1.2.
        let m = m1(&[0.0, 0.6, 1.2], &[0.25, 0.25, 0.5]).coalesce(0.7);
        assert_eq!(m.len(), 2);
        assert_eq!(m.coalesce(0.7), m);
        // The merged mean 0.25 lands within tol of 0.8 in a second pass.
        let m = m1(&[0.0, 0.5, 0.8], &[0.1, 0.1, 0.8]).coalesce(0.6);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn negative_zero_is_normalized() {
        let m = DiscreteMeasure::from_parts(1, vec![-0.0, 0.0], vec![0.5, 0.5]).coalesce(0.0);
        assert_eq!(m.len(), 1);
        assert!(m.coords()[0].is_sign_positive());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m =
            DiscreteMeasure::new(2, vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0], vec![0.3, 0.7]).unwrap();
        let back = DiscreteMeasure::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let phi = TangentMeasure::from_pairs(&[([0.1, 0.2], [1.0 / 7.0, 3.0])], vec![1.0]).unwrap();
        let s = phi.to_json();
        assert!(s.contains("[[0.1,0.2],["));
        assert_eq!(TangentMeasure::from_json(&s).unwrap(), phi);
    }

    #[test]
    fn coupling_validates_marginals() {
        let mu = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let ok = Coupling::new(
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            mu.clone(),
            mu.clone(),
        );
        assert!(ok.is_ok());
        let nu = m1(&[0.0, 1.0], &[0.25, 0.75]);
        let bad = Coupling::new(vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5], mu, nu);
        assert!(bad.is_err());
    }

    #[test]
    fn tuple_plan_restrict_and_marginals() {
        let plan = TuplePlan::new(
            1,
            3,
            vec![
                0.0, 0.5, 0.75, 0.0, 0.5, -0.25, 0.0, -0.5, 0.25, 0.0, -0.5, -0.75,
            ],
            vec![0.25; 4],
        )
        .unwrap();
        let r = plan.restrict(1);
        assert_eq!(r.len(), 2);
        assert_eq!(r.weights(), &[0.5, 0.5]);
        assert_eq!(plan.marginal(2).len(), 4);
        let pm = plan.pair_marginal(0);
        assert_eq!(pm.len(), 2);
        assert_eq!(pm.second(), &plan.marginal(1));
    }

    #[test]
    fn mismatch_reports_witness() {
        let a = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let b = m1(&[0.0, 1.0 + 1e-3], &[0.5, 0.5]);
        assert!(measure_mismatch(&a, &a, 1e-12, 1e-12).is_none());
        assert!(measure_mismatch(&a, &b, 1e-12, 1e-12).is_some());
        assert!(measure_mismatch(&a, &b, 1e-2, 1e-12).is_none());
    }
}
