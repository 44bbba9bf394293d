//! Transportation simplex on a dense `m x n` cost matrix.
//!
//! North-west-corner start, potentials by tree traversal, Dantzig pricing with a switch to
//! Bland's rule after a run of degenerate pivots. Ties are broken lexicographically on
//! `(row, col)`, so results are deterministic.

use std::collections::VecDeque;

/// Optimal basic solution of a transportation problem.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Basic cells `(row, col, flow)` with positive flow, sorted by `(row, col)`.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
    /// A nonbasic cell has zero reduced cost at the optimum, so other optimal plans may exist.
    pub multiple_optima: bool,
    pub pivots: usize,
}

const DEGENERATE_RUN_BEFORE_BLAND: usize = 64;

struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    fn north_west(a: &[f64], b: &[f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        let (mut i, mut j) = (0, 0);
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        while cells.len() < m + n - 1 {
            let f = sa[i].min(sb[j]).max(0.0);
            cells.push((i, j));
            flow.push(f);
            sa[i] -= f;
            sb[j] -= f;
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || sa[i] <= sb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Basis { m, n, cells, flow }
    }

    /// Tree adjacency; node `r < m` is row `r`, node `m + c` is column `c`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }
}

/// Solves `min sum c_ij x_ij` subject to row sums `a` and column sums `b`.
///
/// `cost` is row-major `m x n`. Supplies and demands must be positive with equal totals
/// (up to rounding).
pub fn solve_transport(a: &[f64], b: &[f64], cost: &[f64]) -> TransportSolution {
    let (m, n) = (a.len(), b.len());
    assert!(
        m > 0 && n > 0 && cost.len() == m * n,
        "transport problem shape"
    );
    let c = |i: usize, j: usize| cost[i * n + j];
    let scale = cost.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let eps = 1e-12 * scale;

    let mut basis = Basis::north_west(a, b);
    let mut pivots = 0;
    let mut degenerate_run = 0;
    let mut bland = false;
    let nodes = m + n;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut parent = vec![(usize::MAX, usize::MAX); nodes];
    let mut depth = vec![0usize; nodes];

    loop {
        // Potentials and parent pointers by BFS from row 0.
        let adj = basis.adjacency();
        let mut seen = vec![false; nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        u[0] = 0.0;
        parent[0] = (usize::MAX, usize::MAX);
        depth[0] = 0;
        while let Some(node) = queue.pop_front() {
            for &(next, k) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                parent[next] = (node, k);
                depth[next] = depth[node] + 1;
                let (i, j) = basis.cells[k];
                if next >= m {
                    v[j] = c(i, j) - u[i];
                } else {
                    u[i] = c(i, j) - v[j];
                }
                queue.push_back(next);
            }
        }
        debug_assert!(seen.iter().all(|s| *s), "basis is a spanning tree");

        let mut in_basis = vec![false; m * n];
        for &(i, j) in &basis.cells {
            in_basis[i * n + j] = true;
        }
        let mut entering = None;
        let mut best = -eps;
        'pricing: for i in 0..m {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let r = c(i, j) - u[i] - v[j];
                if r < best {
                    best = r;
                    entering = Some((i, j));
                    if bland {
                        break 'pricing;
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let multiple_optima = (0..m).any(|i| {
                (0..n).any(|j| !in_basis[i * n + j] && (c(i, j) - u[i] - v[j]).abs() <= eps)
            });
            let mut flows: Vec<(usize, usize, f64)> = basis
                .cells
                .iter()
                .zip(&basis.flow)
                .filter(|(_, f)| **f > 0.0)
                .map(|(&(i, j), &f)| (i, j, f))
                .collect();
            flows.sort_by_key(|&(i, j, _)| (i, j));
            let total = flows.iter().map(|&(i, j, f)| f * c(i, j)).sum::<f64>();
            return TransportSolution {
                flows,
                cost: total.max(0.0),
                multiple_optima,
                pivots,
            };
        };

        // Tree path between row ei and column ej, as basis edge indices.
        let (mut x, mut y) = (ei, m + ej);
        let mut from_row = Vec::new();
        let mut from_col = Vec::new();
        while depth[x] > depth[y] {
            from_row.push(parent[x].1);
            x = parent[x].0;
        }
        while depth[y] > depth[x] {
            from_col.push(parent[y].1);
            y = parent[y].0;
        }
        while x != y {
            from_row.push(parent[x].1);
            x = parent[x].0;
            from_col.push(parent[y].1);
            y = parent[y].0;
        }
        // Walk from column ej to row ei; signs alternate starting with minus.
        let path: Vec<usize> = from_col
            .iter()
            .copied()
            .chain(from_row.iter().rev().copied())
            .collect();
        let minus: Vec<usize> = path.iter().copied().step_by(2).collect();
        let plus: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();

        let theta = minus
            .iter()
            .map(|&k| basis.flow[k])
            .fold(f64::INFINITY, f64::min);
        let leaving = *minus
            .iter()
            .filter(|&&k| basis.flow[k] == theta)
            .min_by_key(|&&k| basis.cells[k])
            .expect("cycle has a minus cell");

        for &k in &minus {
            basis.flow[k] -= theta;
        }
        for &k in &plus {
            basis.flow[k] += theta;
        }
        basis.cells[leaving] = (ei, ej);
        basis.flow[leaving] = theta;

        pivots += 1;
        if theta == 0.0 {
            degenerate_run += 1;
            if degenerate_run > DEGENERATE_RUN_BEFORE_BLAND {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_two_by_two() {
        // Points 0,4 vs 1,3: identity pairing costs 1 each, crossing costs 9 each.
        let cost = [1.0, 9.0, 9.0, 1.0];
        let s = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &cost);
        assert_eq!(s.cost, 1.0);
        assert_eq!(s.flows, vec![(0, 0, 0.5), (1, 1, 0.5)]);
    }

    #[test]
    fn north_west_start_is_improved() {
        // Anti-monotone ordering makes the north-west corner plan the worst one.
        let cost = [9.0, 1.0, 1.0, 9.0];
        let s = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &cost);
        assert_eq!(s.cost, 1.0);
        assert!(s.pivots >= 1);
    }

    #[test]
    fn flags_ties() {
        let s = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &[0.0; 4]);
        assert_eq!(s.cost, 0.0);
        assert!(s.multiple_optima);
    }

    #[test]
    fn degenerate_square_instance() {
        // Uniform 3x3 with a cost matrix whose optimal plan is a permutation.
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let w = [1.0 / 3.0; 3];
        let s = solve_transport(&w, &w, &cost);
        assert!((s.cost - 5.0 / 3.0).abs() < 1e-12);
    }
}
