//! The measure-level explicit Euler scheme, its step plans, interpolants and the exact lift
//! to a law on piecewise-affine paths.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{evaluate_pvf, PvfSpec};
use crate::measure::{
    coalesce_rows, lex_cmp, measure_mismatch, tangent_mismatch, Coupling, DiscreteMeasure,
    TangentMeasure, TuplePlan,
};
use crate::paths::{PathEnsemble, PiecewisePath, Provenance};

/// Default cap on atoms per measure or section.
pub const DEFAULT_ATOM_CAP: usize = 200_000;
/// Default cap on tuples of a multi-step plan.
pub const DEFAULT_TUPLE_CAP: usize = 1_000_000;
/// Slack on the stability test `|Phi^n|_2 <= L`.
pub const STABILITY_SLACK: f64 = 1e-10;
/// Coordinate tolerance when comparing lifted laws with the scheme.
pub const VERIFY_COORD_TOL: f64 = 1e-10;
/// Weight tolerance when comparing lifted laws with the scheme.
pub const VERIFY_WEIGHT_TOL: f64 = 1e-12;

/// Number of steps `ceil(T / tau)`, robust to `T / tau` being an integer up to rounding.
pub fn step_count(tau: f64, horizon: f64) -> usize {
    ((horizon / tau) - 1e-9).ceil().max(1.0) as usize
}

/// Options of [`run_explicit_euler`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EulerOptions {
    /// Atoms closer than this are merged after each step; `0` keeps the scheme exact.
    pub coalesce_tol: f64,
    pub atom_cap: usize,
}

impl Default for EulerOptions {
    fn default() -> Self {
        Self {
            coalesce_tol: 0.0,
            atom_cap: DEFAULT_ATOM_CAP,
        }
    }
}

/// Index links of one step: section atom `k` sits over `M^n` atom `src[k]` and is pushed to
/// `M^{n+1}` atom `dst[k]`.
#[derive(Debug, Clone, PartialEq)]
struct StepLinks {
    src: Vec<u32>,
    dst: Vec<u32>,
}

/// A solution of the explicit Euler scheme `M^{n+1} = (exp^tau)_# Phi^n`, `Phi^n in F[M^n]`.
#[derive(Debug, Clone)]
pub struct EulerRun {
    pub tau: f64,
    pub horizon: f64,
    pub l_bound: f64,
    pub steps: usize,
    /// `M^0, .., M^N`.
    pub measures: Vec<DiscreteMeasure>,
    /// `Phi^0, .., Phi^{N-1}`.
    pub sections: Vec<TangentMeasure>,
    pub options: EulerOptions,
    links: Vec<StepLinks>,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::input(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Iterates the explicit Euler scheme up to `N = ceil(T / tau)` steps.
///
/// Fails with [`Error::Stability`] when `|Phi^n|_2 > L` and with [`Error::Resource`] when a
/// section would exceed the atom cap.
pub fn run_explicit_euler(
    spec: &PvfSpec,
    mu0: &DiscreteMeasure,
    tau: f64,
    horizon: f64,
    l_bound: f64,
    options: EulerOptions,
) -> Result<EulerRun> {
    check_positive("tau", tau)?;
    check_positive("T", horizon)?;
    check_positive("L", l_bound)?;
    if !(options.coalesce_tol >= 0.0) {
        return Err(Error::input("coalesce_tol must be non-negative"));
    }
    let steps = step_count(tau, horizon);
    let d = mu0.dim();
    let mut measures = vec![mu0.coalesce(0.0)];
    let mut sections = Vec::with_capacity(steps);
    let mut links = Vec::with_capacity(steps);
    for n in 0..steps {
        let m = &measures[n];
        let predicted = (m.len() as u128) * (spec.branching(m.len()) as u128);
        if predicted > options.atom_cap as u128 {
            return Err(Error::Resource {
                what: format!("section Phi^{n}"),
                predicted,
                cap: options.atom_cap,
            });
        }
        let phi = evaluate_pvf(spec, m)?;
        let norm = phi.velocity_moment();
        if norm > l_bound + STABILITY_SLACK {
            return Err(Error::Stability {
                step: n,
                norm,
                bound: l_bound,
            });
        }

        // Sections are sorted by (x, v) and measures by x, so a merge walk links them.
        let mut src = Vec::with_capacity(phi.len());
        let mut i = 0;
        for k in 0..phi.len() {
            while i < m.len() && lex_cmp(m.atom(i), phi.x(k)).is_lt() {
                i += 1;
            }
            debug_assert!(i < m.len() && m.atom(i) == phi.x(k));
            src.push(i as u32);
        }

        let pushed: Vec<f64> = (0..phi.len())
            .flat_map(|k| {
                phi.x(k)
                    .iter()
                    .zip(phi.v(k))
                    .map(|(x, v)| x + tau * v)
                    .collect::<Vec<_>>()
            })
            .collect();
        let (mut coords, mut weights, mut dst) = coalesce_rows(d, &pushed, phi.weights(), 0.0);
        if options.coalesce_tol > 0.0 {
            let (c2, w2, a2) = coalesce_rows(d, &coords, &weights, options.coalesce_tol);
            dst = dst.into_iter().map(|j| a2[j]).collect();
            coords = c2;
            weights = w2;
        }
        if weights.len() > options.atom_cap {
            return Err(Error::Resource {
                what: format!("measure M^{}", n + 1),
                predicted: weights.len() as u128,
                cap: options.atom_cap,
            });
        }
        links.push(StepLinks {
            src,
            dst: dst.into_iter().map(|j| j as u32).collect(),
        });
        sections.push(phi);
        measures.push(DiscreteMeasure::from_parts(d, coords, weights));
    }
    Ok(EulerRun {
        tau,
        horizon,
        l_bound,
        steps,
        measures,
        sections,
        options,
        links,
    })
}

/// `(x, exp^tau)_# Phi`.
pub fn single_step_plan(phi: &TangentMeasure, tau: f64) -> Result<Coupling> {
    check_positive("tau", tau)?;
    let d = phi.dim();
    let mut rows = Vec::with_capacity(2 * d * phi.len());
    for k in 0..phi.len() {
        rows.extend_from_slice(phi.x(k));
        rows.extend(phi.x(k).iter().zip(phi.v(k)).map(|(x, v)| x + tau * v));
    }
    let (rows, weights, _) = coalesce_rows(2 * d, &rows, phi.weights(), 0.0);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in rows.chunks_exact(2 * d) {
        xs.extend_from_slice(&r[..d]);
        ys.extend_from_slice(&r[d..]);
    }
    Ok(Coupling::from_parts(
        xs,
        ys,
        weights,
        phi.x_marginal(),
        phi.exp(tau),
    ))
}

impl EulerRun {
    /// Whether the last step overshoots the horizon and paths are clipped at `T`.
    pub fn clipped(&self) -> bool {
        self.steps as f64 * self.tau > self.horizon * (1.0 + 1e-12)
    }

    /// Grid `{0, tau, .., (N-1) tau, T}`.
    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = (0..self.steps).map(|k| k as f64 * self.tau).collect();
        g.push(self.horizon);
        g
    }

    /// Number of tuples of the `N`-step plan, computed without building it.
    pub fn predicted_tuples(&self) -> u128 {
        let mut count: Vec<u128> = vec![1; self.measures[0].len()];
        for (n, l) in self.links.iter().enumerate() {
            let mut next = vec![0u128; self.measures[n + 1].len()];
            for (s, t) in l.src.iter().zip(&l.dst) {
                next[*t as usize] = next[*t as usize].saturating_add(count[*s as usize]);
            }
            count = next;
        }
        count.iter().fold(0u128, |a, b| a.saturating_add(*b))
    }

    /// Multi-step plan as index paths `(atom of M^0, .., atom of M^N)` with weights.
    fn index_plan(&self, cap: usize) -> Result<(Vec<u32>, Vec<f64>)> {
        let predicted = self.predicted_tuples();
        if predicted > cap as u128 {
            return Err(Error::Resource {
                what: format!("multi-step plan over {} steps", self.steps),
                predicted,
                cap,
            });
        }
        let m0 = &self.measures[0];
        let mut paths: Vec<u32> = (0..m0.len() as u32).collect();
        let mut weights: Vec<f64> = m0.weights().to_vec();
        for (n, l) in self.links.iter().enumerate() {
            let width = n + 1;
            let phi = &self.sections[n];
            let base = &self.measures[n];
            // Section atoms over each base atom form a contiguous range.
            let mut start = vec![0usize; base.len() + 1];
            for s in &l.src {
                start[*s as usize + 1] += 1;
            }
            for i in 0..base.len() {
                start[i + 1] += start[i];
            }
            let total: usize = (0..weights.len())
                .map(|p| {
                    let last = paths[p * width + width - 1] as usize;
                    start[last + 1] - start[last]
                })
                .sum();
            let mut next_paths = Vec::with_capacity(total * (width + 1));
            let mut next_weights = Vec::with_capacity(total);
            for p in 0..weights.len() {
                let prefix = &paths[p * width..(p + 1) * width];
                let last = prefix[width - 1] as usize;
                let wx = base.weights()[last];
                for k in start[last]..start[last + 1] {
                    next_paths.extend_from_slice(prefix);
                    next_paths.push(l.dst[k]);
                    next_weights.push(weights[p] * (phi.weights()[k] / wx));
                }
            }
            paths = next_paths;
            weights = next_weights;
        }
        Ok((paths, weights))
    }

    /// Position of the last node on the grid `{0, .., (N-1) tau, T}` for the index path.
    fn coords_of(&self, idx: &[u32], out: &mut Vec<f64>, clip: bool) {
        let n = self.steps;
        for (k, &a) in idx.iter().enumerate() {
            if clip && k == n {
                let prev = self.measures[n - 1].atom(idx[n - 1] as usize);
                let next = self.measures[n].atom(a as usize);
                let s = self.horizon - (n - 1) as f64 * self.tau;
                out.extend(
                    prev.iter()
                        .zip(next)
                        .map(|(p, q)| p + s * ((q - p) / self.tau)),
                );
            } else {
                out.extend_from_slice(self.measures[k].atom(a as usize));
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let parse = |s: String| serde_json::from_str::<serde_json::Value>(&s).expect("json");
        serde_json::json!({
            "tau": self.tau,
            "horizon": self.horizon,
            "l_bound": self.l_bound,
            "steps": self.steps,
            "options": self.options,
            "measures": self.measures.iter().map(|m| parse(m.to_json())).collect::<Vec<_>>(),
            "sections": self.sections.iter().map(|p| parse(p.to_json())).collect::<Vec<_>>(),
        })
    }
}

/// The `N`-step plan `alpha^N` built by the disintegration recursion.
pub fn multi_step_plan(run: &EulerRun, cap: usize) -> Result<TuplePlan> {
    let (paths, weights) = run.index_plan(cap)?;
    let len = run.steps + 1;
    let d = run.measures[0].dim();
    let mut coords = Vec::with_capacity(weights.len() * len * d);
    for idx in paths.chunks_exact(len) {
        run.coords_of(idx, &mut coords, false);
    }
    let plan = TuplePlan::from_parts(d, len, coords, weights);
    Ok(if run.options.coalesce_tol > 0.0 {
        plan.coalesce(0.0)
    } else {
        plan
    })
}

fn check_time(run: &EulerRun, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= run.horizon * (1.0 + 1e-12)) {
        return Err(Error::input(format!(
            "time {t} outside [0, {}]",
            run.horizon
        )));
    }
    Ok(())
}

/// `M_tau(t) = (exp^{t - n tau})_# Phi^n` with `n = floor(t / tau)`; grid times return `M^n`.
pub fn interpolate_measure(run: &EulerRun, t: f64) -> Result<DiscreteMeasure> {
    check_time(run, t)?;
    let r = t / run.tau;
    let k = r.round();
    if (r - k).abs() <= 1e-9 && (k as usize) < run.steps {
        return Ok(run.measures[k as usize].clone());
    }
    if (r - k).abs() <= 1e-9 && k as usize == run.steps && !run.clipped() {
        return Ok(run.measures[run.steps].clone());
    }
    let n = (r.floor() as usize).min(run.steps - 1);
    Ok(run.sections[n].exp(t - n as f64 * run.tau))
}

/// `F_tau(t) = Phi^{floor(t / tau)}` for `t` in `[0, T)`.
pub fn piecewise_velocity(run: &EulerRun, t: f64) -> Result<TangentMeasure> {
    if !(t >= 0.0 && t < run.horizon) {
        return Err(Error::input(format!(
            "time {t} outside [0, {})",
            run.horizon
        )));
    }
    let n = ((t / run.tau).floor() as usize).min(run.steps - 1);
    Ok(run.sections[n].clone())
}

/// The exact lifted law `eta_tau`: one affine interpolation per tuple of the multi-step plan,
/// on the grid `{0, tau, .., (N-1) tau, T}`.
pub fn build_path_ensemble(run: &EulerRun, cap: usize) -> Result<PathEnsemble> {
    let (paths, weights) = run.index_plan(cap)?;
    let len = run.steps + 1;
    let d = run.measures[0].dim();
    let times: Arc<[f64]> = Arc::from(run.grid());
    let clip = run.clipped();
    let mut out = Vec::with_capacity(weights.len());
    let mut out_w = Vec::with_capacity(weights.len());
    if run.options.coalesce_tol > 0.0 {
        // Coalesced runs can produce repeated index paths; merge them.
        let mut seen: HashMap<&[u32], usize> = HashMap::new();
        for (p, idx) in paths.chunks_exact(len).enumerate() {
            if let Some(&j) = seen.get(idx) {
                out_w[j] += weights[p];
                continue;
            }
            seen.insert(idx, out.len());
            let mut nodes = Vec::with_capacity(len * d);
            run.coords_of(idx, &mut nodes, clip);
            out.push(PiecewisePath::from_parts(d, times.clone(), nodes));
            out_w.push(weights[p]);
        }
    } else {
        for (p, idx) in paths.chunks_exact(len).enumerate() {
            let mut nodes = Vec::with_capacity(len * d);
            run.coords_of(idx, &mut nodes, clip);
            out.push(PiecewisePath::from_parts(d, times.clone(), nodes));
            out_w.push(weights[p]);
        }
    }
    Ok(PathEnsemble::from_parts(out, out_w, Provenance::ExactTree))
}

/// A coupling of the multi-step plans of two runs on the same grid, built step by step as the
/// product of the conditional step laws over an optimal plan of the initial measures.
///
/// Its tuple marginals are the two multi-step plans, and each step satisfies the discrete
/// dissipativity inequality whenever the barycentric fields do.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPlan {
    pub dim: usize,
    pub steps: usize,
    pub tau: f64,
    pub horizon: f64,
    clipped: bool,
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Vec<f64>,
}

impl CoupledPlan {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn point<'a>(&self, rows: &'a [f64], i: usize, k: usize) -> &'a [f64] {
        let w = (self.steps + 1) * self.dim;
        &rows[i * w + k * self.dim..i * w + (k + 1) * self.dim]
    }

    /// Marginal tuple plans of the two runs.
    pub fn marginals(&self) -> (TuplePlan, TuplePlan) {
        let mk = |rows: &[f64]| {
            TuplePlan::from_parts(
                self.dim,
                self.steps + 1,
                rows.to_vec(),
                self.weights.clone(),
            )
        };
        (mk(&self.xs), mk(&self.ys))
    }

    /// Per step `k`: `(int <x_k - y_k, (x_{k+1} - x_k)/tau - (y_{k+1} - y_k)/tau>, int |x_k - y_k|^2)`.
    pub fn step_terms(&self) -> Vec<(f64, f64)> {
        (0..self.steps)
            .map(|k| {
                let (mut lhs, mut d2) = (0.0, 0.0);
                for (i, w) in self.weights.iter().enumerate() {
                    let (x0, x1) = (self.point(&self.xs, i, k), self.point(&self.xs, i, k + 1));
                    let (y0, y1) = (self.point(&self.ys, i, k), self.point(&self.ys, i, k + 1));
                    for c in 0..self.dim {
                        let diff = x0[c] - y0[c];
                        lhs += w * diff * ((x1[c] - x0[c]) - (y1[c] - y0[c])) / self.tau;
                        d2 += w * diff * diff;
                    }
                }
                (lhs, d2)
            })
            .collect()
    }

    fn path_node(&self, rows: &[f64], i: usize, k: usize) -> Vec<f64> {
        if self.clipped && k == self.steps {
            let s = self.horizon - (k - 1) as f64 * self.tau;
            let (p, q) = (self.point(rows, i, k - 1), self.point(rows, i, k));
            p.iter()
                .zip(q)
                .map(|(p, q)| p + s * ((q - p) / self.tau))
                .collect()
        } else {
            self.point(rows, i, k).to_vec()
        }
    }

    /// `sigma(t_k) = (int |gamma(t_k) - gamma~(t_k)|^2)^{1/2}` at the grid nodes.
    pub fn sigma_at_nodes(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| {
                (0..self.len())
                    .map(|i| {
                        let (a, b) = (
                            self.path_node(&self.xs, i, k),
                            self.path_node(&self.ys, i, k),
                        );
                        self.weights[i]
                            * a.iter()
                                .zip(&b)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Transport cost of the induced path coupling for the uniform metric: an upper bound on
    /// `W_{2,inf}` between the two lifted laws.
    pub fn sup_cost(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let worst = (0..=self.steps)
                    .map(|k| {
                        let (a, b) = (
                            self.path_node(&self.xs, i, k),
                            self.path_node(&self.ys, i, k),
                        );
                        a.iter()
                            .zip(&b)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max);
                self.weights[i] * worst
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl EulerRun {
    /// Conditional step laws: for each atom of `M^n`, its successors in `M^{n+1}` with weights.
    fn children(&self, n: usize) -> Vec<Vec<(u32, f64)>> {
        let base = &self.measures[n];
        let phi = &self.sections[n];
        let l = &self.links[n];
        let mut out = vec![Vec::new(); base.len()];
        for (k, (s, t)) in l.src.iter().zip(&l.dst).enumerate() {
            out[*s as usize].push((*t, phi.weights()[k] / base.weights()[*s as usize]));
        }
        out
    }
}

/// Builds the coupled plan of two runs sharing `tau` and `T`, starting from an optimal plan
/// between their initial measures.
pub fn coupled_multi_step_plan(a: &EulerRun, b: &EulerRun, cap: usize) -> Result<CoupledPlan> {
    if a.steps != b.steps || a.tau != b.tau || a.horizon != b.horizon {
        return Err(Error::input("coupled runs must share tau and T"));
    }
    let (ma, mb) = (&a.measures[0], &b.measures[0]);
    if ma.dim() != mb.dim() {
        return Err(Error::input("coupled runs live in different dimensions"));
    }
    let cost: Vec<f64> = ma
        .atoms()
        .flat_map(|x| mb.atoms().map(move |y| crate::measure::dist2(x, y)))
        .collect();
    let sol = crate::transport::solve_transport(ma.weights(), mb.weights(), &cost);
    let mut width = 1;
    let mut ia: Vec<u32> = sol.flows.iter().map(|f| f.0 as u32).collect();
    let mut ib: Vec<u32> = sol.flows.iter().map(|f| f.1 as u32).collect();
    let mut w: Vec<f64> = sol.flows.iter().map(|f| f.2).collect();
    for n in 0..a.steps {
        let (ca, cb) = (a.children(n), b.children(n));
        let predicted: u128 = (0..w.len())
            .map(|p| {
                let (la, lb) = (ia[p * width + width - 1], ib[p * width + width - 1]);
                (ca[la as usize].len() * cb[lb as usize].len()) as u128
            })
            .sum();
        if predicted > cap as u128 {
            return Err(Error::Resource {
                what: format!("coupled plan at step {}", n + 1),
                predicted,
                cap,
            });
        }
        let (mut na, mut nb, mut nw) = (Vec::new(), Vec::new(), Vec::new());
        for p in 0..w.len() {
            let (pa, pb) = (
                &ia[p * width..(p + 1) * width],
                &ib[p * width..(p + 1) * width],
            );
            for &(sa, wa) in &ca[pa[width - 1] as usize] {
                for &(sb, wb) in &cb[pb[width - 1] as usize] {
                    na.extend_from_slice(pa);
                    na.push(sa);
                    nb.extend_from_slice(pb);
                    nb.push(sb);
                    nw.push(w[p] * wa * wb);
                }
            }
        }
        ia = na;
        ib = nb;
        w = nw;
        width += 1;
    }
    let mut xs = Vec::with_capacity(w.len() * width * ma.dim());
    let mut ys = Vec::with_capacity(w.len() * width * ma.dim());
    for idx in ia.chunks_exact(width) {
        a.coords_of(idx, &mut xs, false);
    }
    for idx in ib.chunks_exact(width) {
        b.coords_of(idx, &mut ys, false);
    }
    Ok(CoupledPlan {
        dim: ma.dim(),
        steps: a.steps,
        tau: a.tau,
        horizon: a.horizon,
        clipped: a.clipped(),
        xs,
        ys,
        weights: w,
    })
}

/// Result of a verification against the scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub check: String,
    pub passed: bool,
    /// Number of individual comparisons performed.
    pub compared: usize,
    /// First mismatch, when any.
    pub witness: Option<String>,
}

fn require_exact(ensemble: &PathEnsemble) -> Result<()> {
    if *ensemble.provenance() != Provenance::ExactTree {
        return Err(Error::Refused(format!(
            "exact verification needs an exact-tree ensemble, got {:?}; compare Monte-Carlo \
             ensembles statistically",
            ensemble.provenance()
        )));
    }
    Ok(())
}

/// Checks that `(e_{n tau}, (e_{(n+1) tau} - e_{n tau}) / tau)_# eta = Phi^n`.
pub fn verify_joint_law(ensemble: &PathEnsemble, run: &EulerRun, n: usize) -> Result<VerifyReport> {
    require_exact(ensemble)?;
    let last = if run.clipped() {
        run.steps.saturating_sub(2)
    } else {
        run.steps - 1
    };
    if run.steps < 2 && run.clipped() || n > last {
        return Err(Error::input(format!(
            "joint law is checked for n <= {last}, got {n}"
        )));
    }
    let d = ensemble.dim();
    let (mut xs, mut vs) = (Vec::new(), Vec::new());
    for p in ensemble.paths() {
        let (a, b) = (p.node(n), p.node(n + 1));
        xs.extend_from_slice(a);
        vs.extend(a.iter().zip(b).map(|(a, b)| (b - a) / run.tau));
    }
    let lifted = TangentMeasure::from_parts(d, xs, vs, ensemble.weights().to_vec());
    let witness = tangent_mismatch(
        &lifted,
        &run.sections[n],
        VERIFY_COORD_TOL,
        VERIFY_WEIGHT_TOL,
    );
    Ok(VerifyReport {
        check: format!("joint-law n={n}"),
        passed: witness.is_none(),
        compared: run.sections[n].len(),
        witness,
    })
}

/// Checks `(e_t)_# eta = M_tau(t)` at each requested time.
pub fn verify_marginals(
    ensemble: &PathEnsemble,
    run: &EulerRun,
    times: &[f64],
) -> Result<VerifyReport> {
    require_exact(ensemble)?;
    let mut compared = 0;
    for &t in times {
        let want = interpolate_measure(run, t)?;
        let got = ensemble.eval_at(t);
        compared += want.len();
        if let Some(w) = measure_mismatch(&got, &want, VERIFY_COORD_TOL, VERIFY_WEIGHT_TOL) {
            return Ok(VerifyReport {
                check: "marginals".into(),
                passed: false,
                compared,
                witness: Some(format!("t={t}: {w}")),
            });
        }
    }
    Ok(VerifyReport {
        check: "marginals".into(),
        passed: true,
        compared,
        witness: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::scenario;
    use smallvec::smallvec;

    fn sdf(tau: f64, horizon: f64) -> EulerRun {
        let s = scenario("sdf-linear").unwrap();
        run_explicit_euler(
            &s.spec,
            &s.mu0,
            tau,
            horizon,
            s.default_l,
            EulerOptions::default(),
        )
        .unwrap()
    }

    fn contraction() -> PvfSpec {
        PvfSpec::deterministic(|x| smallvec![-x[0]])
    }

    #[test]
    fn sdf_linear_first_step() {
        let run = sdf(0.5, 0.5);
        assert_eq!(run.steps, 1);
        assert_eq!(run.measures[1].coords(), &[-0.5, 0.5]);
        assert_eq!(run.measures[1].weights(), &[0.5, 0.5]);
    }

    #[test]
    fn deterministic_contraction() {
        let mu0 = DiscreteMeasure::dirac(&[1.0]).unwrap();
        let run = run_explicit_euler(&contraction(), &mu0, 0.5, 1.0, 2.0, EulerOptions::default())
            .unwrap();
        assert_eq!(run.measures[2].coords(), &[0.25]);
        let plan = multi_step_plan(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.tuple(0), &[1.0, 0.5, 0.25]);
        // x(t) = 1 - t on the first step.
        assert_eq!(interpolate_measure(&run, 0.25).unwrap().coords(), &[0.75]);
        let e = build_path_ensemble(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.path(0).eval(1.0)[0], 0.25);
    }

    #[test]
    fn zero_field_is_stationary() {
        let zero = PvfSpec::interaction(|_, _| smallvec![0.0]);
        let mu0 = DiscreteMeasure::new(1, vec![-1.0, 2.0], vec![0.3, 0.7]).unwrap();
        let run = run_explicit_euler(&zero, &mu0, 0.25, 1.0, 1.0, EulerOptions::default()).unwrap();
        assert!(run.measures.iter().all(|m| *m == mu0));
        assert_eq!(interpolate_measure(&run, 0.6).unwrap(), mu0);
        let e = build_path_ensemble(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert_eq!(e.eval_at(0.9), mu0);
    }

    #[test]
    fn stability_violation_names_the_step() {
        let s = scenario("sdf-linear").unwrap();
        let far = DiscreteMeasure::dirac(&[3.0]).unwrap();
        match run_explicit_euler(&s.spec, &far, 0.1, 1.0, 2.0, EulerOptions::default()) {
            Err(Error::Stability { step, norm, bound }) => {
                assert_eq!(step, 0);
                assert!((norm - 10f64.sqrt()).abs() < 1e-12);
                assert_eq!(bound, 2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn atom_cap_is_enforced() {
        let s = scenario("idf-attract").unwrap();
        let mu0 = DiscreteMeasure::uniform(&[[-1.0], [-0.5], [0.0], [0.5], [1.0]]).unwrap();
        let r = run_explicit_euler(&s.spec, &mu0, 0.1, 1.0, 10.0, EulerOptions::default());
        assert!(matches!(r, Err(Error::Resource { .. })));
    }

    #[test]
    fn single_step_plan_examples() {
        let t = |x: f64, v: f64| TangentMeasure::from_pairs(&[([x], [v])], vec![1.0]).unwrap();
        let p = single_step_plan(&t(0.0, 1.0), 0.5).unwrap();
        assert_eq!((p.x(0), p.y(0)), (&[0.0][..], &[0.5][..]));
        let p = single_step_plan(&t(2.0, 0.0), 0.3).unwrap();
        assert_eq!((p.x(0), p.y(0)), (&[2.0][..], &[2.0][..]));
        let phi =
            TangentMeasure::from_pairs(&[([0.0], [1.0]), ([0.0], [-1.0])], vec![0.5, 0.5]).unwrap();
        let p = single_step_plan(&phi, 1.0).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p.y(0), p.y(1)), (&[-1.0][..], &[1.0][..]));
    }

    #[test]
    fn sdf_linear_tree() {
        let run = sdf(0.5, 1.0);
        let plan = multi_step_plan(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert_eq!(plan.len(), 4);
        assert!(plan.weights().iter().all(|w| *w == 0.25));
        let mut last: Vec<f64> = (0..4).map(|i| plan.point(i, 2)[0]).collect();
        last.sort_by(f64::total_cmp);
        assert_eq!(last, vec![-0.75, -0.25, 0.25, 0.75]);
        let one = multi_step_plan(&sdf(0.5, 0.5), DEFAULT_TUPLE_CAP).unwrap();
        assert_eq!(plan.restrict(1), one);
        let ssp = single_step_plan(&sdf(0.5, 0.5).sections[0], 0.5).unwrap();
        assert_eq!(one.pair_marginal(0).weights(), ssp.weights());
    }

    #[test]
    fn tuple_cap_is_enforced() {
        let run = sdf(0.1, 1.0);
        assert_eq!(run.predicted_tuples(), 1024);
        assert!(matches!(
            multi_step_plan(&run, 1000),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn piecewise_velocity_floor() {
        let run = sdf(0.25, 1.0);
        assert_eq!(piecewise_velocity(&run, 0.0).unwrap(), run.sections[0]);
        assert_eq!(piecewise_velocity(&run, 0.25).unwrap(), run.sections[1]);
        assert_eq!(
            piecewise_velocity(&run, 0.25 - 1e-12).unwrap(),
            run.sections[0]
        );
        assert!(piecewise_velocity(&run, 1.0).is_err());
        assert!(interpolate_measure(&run, 1.5).is_err());
    }

    #[test]
    fn clipped_final_step() {
        let run = sdf(0.4, 1.0);
        assert_eq!(run.steps, 3);
        assert!(run.clipped());
        assert_eq!(run.grid(), vec![0.0, 0.4, 0.8, 1.0]);
        let e = build_path_ensemble(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert_eq!(e.horizon(), 1.0);
        let r = verify_marginals(&e, &run, &[0.0, 0.4, 0.8, 0.9, 1.0]).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(verify_joint_law(&e, &run, 1).unwrap().passed);
        assert!(verify_joint_law(&e, &run, 2).is_err());
    }

    #[test]
    fn verification_detects_corruption() {
        let run = sdf(0.25, 0.75);
        let e = build_path_ensemble(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert!(verify_joint_law(&e, &run, 0).unwrap().passed);
        assert!(verify_joint_law(&e, &run, 1).unwrap().passed);
        assert!(
            verify_marginals(&e, &run, &[0.125, 0.5, 0.75])
                .unwrap()
                .passed
        );
        let bad = e.perturb_node(2, 2, &[1e-3]);
        let r = verify_joint_law(&bad, &run, 1).unwrap();
        assert!(!r.passed && r.witness.is_some());
        assert!(!verify_marginals(&bad, &run, &[0.5]).unwrap().passed);
    }

    #[test]
    fn monte_carlo_ensembles_are_refused() {
        let run = sdf(0.5, 1.0);
        let e = build_path_ensemble(&run, DEFAULT_TUPLE_CAP).unwrap();
        let mc = PathEnsemble::from_parts(
            e.paths().to_vec(),
            e.weights().to_vec(),
            Provenance::MonteCarlo {
                seed: 1,
                samples: 4,
            },
        );
        assert!(matches!(
            verify_joint_law(&mc, &run, 0),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn coalescing_merges_close_atoms() {
        let s = scenario("idf-attract").unwrap();
        let opts = EulerOptions {
            coalesce_tol: 1e-3,
            ..EulerOptions::default()
        };
        let run = run_explicit_euler(&s.spec, &s.mu0, 0.5, 1.5, 2.0, opts).unwrap();
        // With tau = 0.5 the two atoms meet at the mean after one step.
        assert_eq!(run.measures[1].len(), 3);
        let e = build_path_ensemble(&run, DEFAULT_TUPLE_CAP).unwrap();
        assert!((e.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coupled_plan_has_the_right_marginals_and_is_dissipative() {
        let s = scenario("sdf-linear").unwrap();
        let other = DiscreteMeasure::dirac(&[0.5]).unwrap();
        for (tau, t) in [(0.25, 1.0), (0.4, 1.0)] {
            let a =
                run_explicit_euler(&s.spec, &s.mu0, tau, t, 2.0, EulerOptions::default()).unwrap();
            let b =
                run_explicit_euler(&s.spec, &other, tau, t, 2.0, EulerOptions::default()).unwrap();
            let c = coupled_multi_step_plan(&a, &b, DEFAULT_TUPLE_CAP).unwrap();
            let (pa, pb) = c.marginals();
            let want_a = multi_step_plan(&a, DEFAULT_TUPLE_CAP).unwrap();
            let want_b = multi_step_plan(&b, DEFAULT_TUPLE_CAP).unwrap();
            assert!(crate::measure::plan_mismatch(&pa, &want_a, 1e-12, 1e-12).is_none());
            assert!(crate::measure::plan_mismatch(&pb, &want_b, 1e-12, 1e-12).is_none());
            for (lhs, d2) in c.step_terms() {
                assert!(lhs <= -d2 + 1e-12, "{lhs} > {}", -d2);
            }
            let ea = build_path_ensemble(&a, DEFAULT_TUPLE_CAP).unwrap();
            let eb = build_path_ensemble(&b, DEFAULT_TUPLE_CAP).unwrap();
            let w = crate::transport::wasserstein2_sup(&ea, &eb).unwrap();
            assert!(w <= c.sup_cost() + 1e-12);
            assert!((c.sigma_at_nodes()[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn coupled_plan_respects_cap() {
        let a = sdf(0.125, 1.0);
        let r = coupled_multi_step_plan(&a, &a, 1000);
        assert!(matches!(r, Err(Error::Resource { .. })));
    }
}
