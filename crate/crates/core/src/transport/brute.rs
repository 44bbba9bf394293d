//! Exhaustive transport oracle for small instances.

use crate::error::{Error, Result};
use crate::measure::{dist2, DiscreteMeasure};

/// Largest number of cells `|mu| * |nu|` the oracle accepts.
pub const BRUTE_FORCE_CELL_CAP: usize = 64;

/// Largest spanning-tree count `m^(n-1) n^(m-1)` enumerated by the vertex search.
pub const BRUTE_FORCE_TREE_CAP: f64 = 2e6;

/// Exact `W2(mu, nu)` by enumerating all vertices of the transport polytope.
///
/// Equal uniform weights with `|mu| = |nu|` enumerate permutations instead (the polytope is
/// then the Birkhoff polytope).
pub fn brute_force_w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::input("measures live in different dimensions"));
    }
    let (m, n) = (mu.len(), nu.len());
    if m * n > BRUTE_FORCE_CELL_CAP {
        return Err(Error::Refused(format!(
            "oracle handles at most {BRUTE_FORCE_CELL_CAP} cells, got {m}x{n}"
        )));
    }
    let cost: Vec<f64> = mu
        .atoms()
        .flat_map(|x| nu.atoms().map(move |y| dist2(x, y)))
        .collect();

    let uniform = m == n
        && mu.weights().iter().all(|w| *w == mu.weights()[0])
        && nu.weights().iter().all(|w| *w == mu.weights()[0]);
    if uniform {
        let best = best_permutation(n, &cost);
        return Ok((best / n as f64).max(0.0).sqrt());
    }

    let trees = (m as f64).powi(n as i32 - 1) * (n as f64).powi(m as i32 - 1);
    if trees > BRUTE_FORCE_TREE_CAP {
        return Err(Error::Refused(format!(
            "{m}x{n} instance has {trees:.0} spanning-tree bases"
        )));
    }
    let mut search = VertexSearch {
        m,
        n,
        a: mu.weights(),
        b: nu.weights(),
        cost: &cost,
        chosen: Vec::with_capacity(m + n - 1),
        best: f64::INFINITY,
    };
    let mut uf: Vec<usize> = (0..m + n).collect();
    search.recurse(0, &mut uf);
    Ok(search.best.max(0.0).sqrt())
}

fn best_permutation(n: usize, cost: &[f64]) -> f64 {
    fn go(k: usize, n: usize, used: &mut [bool], acc: f64, cost: &[f64], best: &mut f64) {
        if k == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(k + 1, n, used, acc + cost[k * n + j], cost, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, n, &mut vec![false; n], 0.0, cost, &mut best);
    best
}

struct VertexSearch<'a> {
    m: usize,
    n: usize,
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a [f64],
    chosen: Vec<usize>,
    best: f64,
}

fn find(uf: &[usize], mut x: usize) -> usize {
    while uf[x] != x {
        x = uf[x];
    }
    x
}

impl VertexSearch<'_> {
    fn recurse(&mut self, cell: usize, uf: &mut Vec<usize>) {
        let need = self.m + self.n - 1;
        if self.chosen.len() == need {
            if let Some(c) = self.tree_cost() {
                self.best = self.best.min(c);
            }
            return;
        }
        let total = self.m * self.n;
        if cell == total || need - self.chosen.len() > total - cell {
            return;
        }
        let (i, j) = (cell / self.n, cell % self.n);
        let (ri, rj) = (find(uf, i), find(uf, self.m + j));
        if ri != rj {
            let saved = uf.clone();
            uf[ri] = rj;
            self.chosen.push(cell);
            self.recurse(cell + 1, uf);
            self.chosen.pop();
            *uf = saved;
        }
        self.recurse(cell + 1, uf);
    }

    /// Unique flow on the chosen spanning tree, or `None` if infeasible.
    fn tree_cost(&self) -> Option<f64> {
        let (m, n) = (self.m, self.n);
        let mut rem: Vec<f64> = self.a.iter().chain(self.b).copied().collect();
        let mut degree = vec![0usize; m + n];
        for &c in &self.chosen {
            degree[c / n] += 1;
            degree[m + c % n] += 1;
        }
        let mut alive = vec![true; self.chosen.len()];
        let mut total = 0.0;
        for _ in 0..self.chosen.len() {
            // Peel a leaf: its only edge carries the leaf's remaining mass.
            let (k, leaf_is_row) = self.chosen.iter().enumerate().find_map(|(k, &c)| {
                if !alive[k] {
                    None
                } else if degree[c / n] == 1 {
                    Some((k, true))
                } else if degree[m + c % n] == 1 {
                    Some((k, false))
                } else {
                    None
                }
            })?;
            let c = self.chosen[k];
            let (r, col) = (c / n, m + c % n);
            let (leaf, other) = if leaf_is_row { (r, col) } else { (col, r) };
            let f = rem[leaf];
            if f < -1e-13 {
                return None;
            }
            rem[other] -= f;
            rem[leaf] = 0.0;
            degree[r] -= 1;
            degree[col] -= 1;
            alive[k] = false;
            total += f * self.cost[c];
        }
        Some(total)
    }
}
