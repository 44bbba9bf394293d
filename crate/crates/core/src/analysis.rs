//! Action functionals, explicit a-priori bounds, convergence sweeps and rate fits.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euler::{
    build_path_ensemble, run_explicit_euler, step_count, EulerOptions, DEFAULT_TUPLE_CAP,
};
use crate::fields::PvfSpec;
use crate::measure::DiscreteMeasure;
use crate::montecarlo::{sample_paths_monte_carlo, NoiseMode};
use crate::paths::{PathEnsemble, PiecewisePath};
use crate::transport::wasserstein2_sup;

/// `sum_k (t_{k+1} - t_k) |slope_k|^p`, exact for piecewise-affine paths.
pub fn action_p(path: &PiecewisePath, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::input("the action exponent must be at least 1"));
    }
    Ok(path
        .segments()
        .map(|(t0, t1, slope)| {
            let speed = slope.iter().map(|c| c * c).sum::<f64>().sqrt();
            (t1 - t0) * speed.powf(p)
        })
        .sum())
}

/// Mean action over the ensemble.
pub fn ensemble_action(e: &PathEnsemble, p: f64) -> Result<f64> {
    e.paths()
        .iter()
        .zip(e.weights())
        .map(|(path, w)| Ok(w * action_p(path, p)?))
        .sum()
}

/// Upper bound `L^2 (T + tau)` on the 2-action of a lifted scheme with stability bound `L`.
pub fn action_bound(l: f64, horizon: f64, tau: f64) -> f64 {
    l * l * (horizon + tau)
}

/// `sigma0 e^{lambda_+ T} + 8 L sqrt(T tau) (1 + |lambda| sqrt(T tau)) e^{lambda_+ T}`.
pub fn gronwall_envelope(sigma0: f64, lambda: f64, l: f64, horizon: f64, tau: f64) -> f64 {
    let growth = (lambda.max(0.0) * horizon).exp();
    let s = (horizon * tau).sqrt();
    sigma0 * growth + 8.0 * l * s * (1.0 + lambda.abs() * s) * growth
}

/// Value of `C (w2^{1/2} + tau^{1/4})` and whether `w2 < 1`, `tau < 1` hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityBound {
    pub value: f64,
    pub hypotheses_hold: bool,
}

pub fn stability_rhs(w2_init: f64, tau: f64, c: f64) -> StabilityBound {
    StabilityBound {
        value: c * (w2_init.sqrt() + tau.powf(0.25)),
        hypotheses_hold: w2_init < 1.0 && tau < 1.0,
    }
}

/// Radii guaranteeing that the scheme stays solvable up to `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub r: f64,
    pub a: f64,
    pub horizon: f64,
    pub r_prime: f64,
    pub l: f64,
    pub tau_bar: f64,
    pub tau: Option<f64>,
    /// `R_{n,tau}` for `n = 0..=N(T, tau)`.
    pub radii: Vec<f64>,
    /// Every radius stays below `R'`.
    pub within: bool,
}

/// `R' = e^{aT} (R^2 + T (1 + 2a))^{1/2} + 1`, `L = rho(R')`, `tau_bar = min(L^{-2}, T)` and,
/// for a given `tau < tau_bar`, `R_{n+1}^2 = R_n^2 (1 + 2 a tau) + tau^2 L^2 + 2 a tau`.
pub fn solvability_bounds(
    r: f64,
    a: f64,
    horizon: f64,
    rho: &dyn Fn(f64) -> f64,
    tau: Option<f64>,
) -> Result<BoundsReport> {
    if !(r >= 0.0 && a >= 0.0 && horizon > 0.0) {
        return Err(Error::input("need R >= 0, a >= 0 and T > 0"));
    }
    let r_prime = (a * horizon).exp() * (r * r + horizon * (1.0 + 2.0 * a)).sqrt() + 1.0;
    let l = rho(r_prime);
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::input(format!("rho(R') = {l} is not a valid bound")));
    }
    let tau_bar = if l > 0.0 {
        (1.0 / (l * l)).min(horizon)
    } else {
        horizon
    };
    let mut radii = Vec::new();
    if let Some(tau) = tau {
        if !(tau > 0.0 && tau < tau_bar) && !(l == 0.0 && tau > 0.0 && tau <= horizon) {
            return Err(Error::input(format!(
                "tau = {tau} must lie in (0, {tau_bar})"
            )));
        }
        let n = step_count(tau, horizon);
        let mut sq = r * r;
        radii.push(r);
        for _ in 0..n {
            sq = sq * (1.0 + 2.0 * a * tau) + tau * tau * l * l + 2.0 * a * tau;
            radii.push(sq.sqrt());
        }
    }
    let within = radii.iter().all(|&x| x < r_prime);
    Ok(BoundsReport {
        r,
        a,
        horizon,
        r_prime,
        l,
        tau_bar,
        tau,
        radii,
        within,
    })
}

/// Least-squares power law `err ~ constant * tau^slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub constant: f64,
    pub used: usize,
}

/// Fits `log err = slope log tau + log constant`; rows with `err <= 0` are dropped.
pub fn rate_fit(rows: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(t, e)| *t > 0.0 && *e > 0.0)
        .map(|(t, e)| (t.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Refused("insufficient data for a rate fit".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Refused(
            "rate fit needs at least two distinct step sizes".into(),
        ));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        constant: (my - slope * mx).exp(),
        used: pts.len(),
    })
}

/// How each sweep row builds its lifted law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepMode {
    Exact,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
    /// Exact when the tree fits the caps, Monte-Carlo otherwise.
    ExactOrMonteCarlo {
        samples: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub horizon: f64,
    pub l_bound: f64,
    pub euler: EulerOptions,
    pub tuple_cap: usize,
    pub noise: NoiseMode,
    /// Record wall times; off by default so artifacts are reproducible byte for byte.
    pub record_timings: bool,
}

impl SweepOptions {
    pub fn new(horizon: f64, l_bound: f64) -> Self {
        Self {
            horizon,
            l_bound,
            euler: EulerOptions::default(),
            tuple_cap: DEFAULT_TUPLE_CAP,
            noise: NoiseMode::Independent,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub w2sup: f64,
    pub wall_ms: u64,
    /// `exact` or `monte-carlo`.
    pub source: String,
    pub paths: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub fitted_rate: Option<f64>,
    pub fitted_constant: Option<f64>,
    /// Why no rate was fitted, if so.
    pub note: Option<String>,
}

/// Distances below this count as zero in rate fits.
pub const ZERO_ERROR: f64 = 1e-12;

impl SweepResult {
    /// Slope between consecutive rows, `NaN` when undefined.
    pub fn running_rates(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN];
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            out.push(if a.w2sup > ZERO_ERROR && b.w2sup > ZERO_ERROR {
                (a.w2sup / b.w2sup).ln() / (a.tau / b.tau).ln()
            } else {
                f64::NAN
            });
        }
        out
    }

    /// CSV `tau,w2sup,rate_running,wall_ms`; undefined running rates are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,w2sup,rate_running,wall_ms\n");
        for (r, rate) in self.rows.iter().zip(self.running_rates()) {
            let rate = if rate.is_finite() {
                rate.to_string()
            } else {
                String::new()
            };
            let _ = writeln!(s, "{},{},{},{}", r.tau, r.w2sup, rate, r.wall_ms);
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("sweep result serializes")
    }
}

fn lifted_law(
    spec: &PvfSpec,
    mu0: &DiscreteMeasure,
    tau: f64,
    opts: &SweepOptions,
    mode: SweepMode,
    row: usize,
) -> Result<(PathEnsemble, &'static str, Option<u64>)> {
    let exact = || -> Result<PathEnsemble> {
        let run = run_explicit_euler(spec, mu0, tau, opts.horizon, opts.l_bound, opts.euler)?;
        build_path_ensemble(&run, opts.tuple_cap)
    };
    let mc = |samples: usize, seed: u64| -> Result<(PathEnsemble, &'static str, Option<u64>)> {
        let seed = seed.wrapping_add(row as u64);
        let e = sample_paths_monte_carlo(spec, mu0, tau, opts.horizon, samples, seed, opts.noise)?;
        Ok((e, "monte-carlo", Some(seed)))
    };
    match mode {
        SweepMode::Exact => Ok((exact()?, "exact", None)),
        SweepMode::MonteCarlo { samples, seed } => mc(samples, seed),
        SweepMode::ExactOrMonteCarlo { samples, seed } => match exact() {
            Ok(e) => Ok((e, "exact", None)),
            Err(Error::Resource { .. }) => mc(samples, seed),
            Err(e) => Err(e),
        },
    }
}

/// Distances `W_{2,inf}(eta_tau, reference)` along a decreasing list of step sizes, with a
/// log-log rate fit.
///
/// The fit uses rows with distance above [`ZERO_ERROR`] and needs at least three of them
/// spanning a factor of four in `tau`; otherwise `fitted_rate` is `None` and `note` says why.
pub fn convergence_sweep(
    spec: &PvfSpec,
    mu0: &DiscreteMeasure,
    taus: &[f64],
    reference: &PathEnsemble,
    mode: SweepMode,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if taus.is_empty() || taus.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::input(
            "taus must be non-empty and strictly decreasing",
        ));
    }
    if (reference.horizon() - opts.horizon).abs() > 1e-12 * opts.horizon.max(1.0) {
        return Err(Error::input(
            "reference horizon differs from the sweep horizon",
        ));
    }
    let mut rows = Vec::with_capacity(taus.len());
    for (k, &tau) in taus.iter().enumerate() {
        let start = Instant::now();
        let (eta, source, seed) = lifted_law(spec, mu0, tau, opts, mode, k)?;
        let w2sup = wasserstein2_sup(&eta, reference)?;
        let wall_ms = if opts.record_timings {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        rows.push(SweepRow {
            tau,
            w2sup,
            wall_ms,
            source: source.to_string(),
            paths: eta.len(),
            seed,
        });
    }
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.w2sup > ZERO_ERROR)
        .map(|r| (r.tau, r.w2sup))
        .collect();
    let span = usable
        .first()
        .zip(usable.last())
        .map_or(1.0, |(a, b)| a.0 / b.0);
    let (fitted_rate, fitted_constant, note) = if usable.len() < 3 || span < 4.0 * (1.0 - 1e-12) {
        let why = if usable.is_empty() {
            "all distances vanish; rate undefined"
        } else {
            "fewer than three nonzero rows spanning two octaves; rate undefined"
        };
        (None, None, Some(why.to_string()))
    } else {
        let fit = rate_fit(&usable)?;
        (Some(fit.slope), Some(fit.constant), None)
    };
    Ok(SweepResult {
        rows,
        fitted_rate,
        fitted_constant,
        note,
    })
}

/// Constant path ensemble `delta_gamma` with `gamma(t) = x` on `[0, T]`.
pub fn constant_reference(x: &[f64], horizon: f64) -> PathEnsemble {
    PathEnsemble::dirac(PiecewisePath::constant(x, horizon))
}

/// Auto-derived stability bound: `rho(R')` with `R` the largest atom norm of `mu0`.
pub fn auto_l_bound(
    mu0: &DiscreteMeasure,
    a: f64,
    horizon: f64,
    rho: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    Ok(solvability_bounds(mu0.max_norm(), a, horizon, rho, None)?.l)
}

/// Powers `2^{-k}` for `k` in `lo..=hi`.
pub fn dyadic_taus(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|k| 0.5f64.powi(k as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::scenario;
    use crate::limit::{sticky_flow, StickyFlowConfig};
    use crate::paths::Provenance;
    use smallvec::smallvec;
    use std::sync::Arc;

    fn path(times: &[f64], nodes: &[f64]) -> PiecewisePath {
        PiecewisePath::new(1, Arc::from(times.to_vec()), nodes.to_vec()).unwrap()
    }

    #[test]
    fn action_examples() {
        assert_eq!(action_p(&path(&[0.0, 1.0], &[0.0, 1.0]), 2.0).unwrap(), 1.0);
        assert_eq!(
            action_p(&PiecewisePath::constant(&[3.0], 2.0), 1.5).unwrap(),
            0.0
        );
        let tent = path(&[0.0, 0.5, 1.0], &[0.0, 1.0, 0.0]);
        assert_eq!(action_p(&tent, 2.0).unwrap(), 4.0);
        assert!(action_p(&tent, 0.5).is_err());

        let mix = PathEnsemble::new(
            vec![PiecewisePath::constant(&[0.0], 1.0), tent],
            vec![0.5, 0.5],
            Provenance::Custom,
        )
        .unwrap();
        assert_eq!(ensemble_action(&mix, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn sdf_linear_action_respects_bound() {
        let s = scenario("sdf-linear").unwrap();
        // |Phi^1|_2 = sqrt(5)/2 > 1, so the run needs L > 1.
        assert!(
            run_explicit_euler(&s.spec, &s.mu0, 0.5, 1.0, 1.0, EulerOptions::default()).is_err()
        );
        let run =
            run_explicit_euler(&s.spec, &s.mu0, 0.5, 1.0, 1.2, EulerOptions::default()).unwrap();
        let e = build_path_ensemble(&run, 100).unwrap();
        assert_eq!(e.len(), 4);
        // Closed form: 0.5 * 1 + 0.5 * (0.25 + 2.25) / 2.
        let action = ensemble_action(&e, 2.0).unwrap();
        assert!((action - 1.125).abs() < 1e-12);
        assert!(action <= action_bound(1.0, 1.0, 0.5));
        assert!(action <= action_bound(1.2, 1.0, 0.5));
    }

    #[test]
    fn envelope_examples() {
        assert!((gronwall_envelope(0.0, 0.0, 1.0, 1.0, 0.01) - 0.8).abs() < 1e-15);
        assert_eq!(gronwall_envelope(1.0, 0.0, 0.0, 1.0, 0.01), 1.0);
        let want = 6.0 * std::f64::consts::E;
        assert!((gronwall_envelope(0.0, 1.0, 1.0, 1.0, 0.25) - want).abs() < 1e-12);
    }

    #[test]
    fn stability_rhs_examples() {
        assert_eq!(stability_rhs(0.0, 1.0 / 16.0, 1.0).value, 0.5);
        assert!((stability_rhs(0.25, 1e-300, 2.0).value - 1.0).abs() < 1e-70);
        assert_eq!(stability_rhs(0.0, 0.0, 7.0).value, 0.0);
        assert!(!stability_rhs(1.5, 0.1, 1.0).hypotheses_hold);
    }

    #[test]
    fn solvability_examples() {
        let b = solvability_bounds(1.0, 0.0, 1.0, &|r| r, None).unwrap();
        assert!((b.r_prime - (2f64.sqrt() + 1.0)).abs() < 1e-12);
        assert_eq!(b.l, b.r_prime);
        assert!((b.tau_bar - 0.171_572_875_253_809_9).abs() < 1e-12);

        let b = solvability_bounds(1.0, 0.0, 1.0, &|r| r, Some(0.01)).unwrap();
        assert_eq!(b.radii.len(), 101);
        assert!(b.within && b.radii.windows(2).all(|w| w[1] > w[0]));
        assert!(solvability_bounds(1.0, 0.0, 1.0, &|r| r, Some(0.2)).is_err());

        let z = solvability_bounds(2.0, 0.0, 1.0, &|_| 0.0, Some(0.25)).unwrap();
        assert_eq!(z.l, 0.0);
        assert_eq!(z.tau_bar, 1.0);
        assert!(z.radii.iter().all(|&r| r == 2.0));
    }

    #[test]
    fn rate_fit_recovers_power_laws() {
        let taus = dyadic_taus(1, 8);
        let exact: Vec<_> = taus.iter().map(|&t| (t, t)).collect();
        assert!((rate_fit(&exact).unwrap().slope - 1.0).abs() < 1e-12);
        let half: Vec<_> = taus.iter().map(|&t| (t, 3.0 * t.sqrt())).collect();
        let f = rate_fit(&half).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12 && (f.constant - 3.0).abs() < 1e-12);
        let flat: Vec<_> = taus.iter().map(|&t| (t, 2.0)).collect();
        assert!(rate_fit(&flat).unwrap().slope.abs() < 1e-12);
        assert!(matches!(
            rate_fit(&[(0.5, 1.0), (0.25, 0.0)]),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn deterministic_decay_converges_at_first_order() {
        let spec = PvfSpec::deterministic(|x| smallvec![-x[0]]);
        let mu0 = DiscreteMeasure::dirac(&[1.0]).unwrap();
        let flow = sticky_flow(&spec, &mu0, 1.0, StickyFlowConfig::with_dt(1e-4)).unwrap();
        let res = convergence_sweep(
            &spec,
            &mu0,
            &dyadic_taus(2, 8),
            &flow.ensemble,
            SweepMode::Exact,
            &SweepOptions::new(1.0, 2.0),
        )
        .unwrap();
        let rate = res.fitted_rate.unwrap();
        assert!((rate - 1.0).abs() <= 0.15, "{rate}");
        assert!(res
            .to_csv()
            .starts_with("tau,w2sup,rate_running,wall_ms\n0.25,"));
    }

    #[test]
    fn zero_field_sweep_has_no_rate() {
        let zero = PvfSpec::interaction(|_, _| smallvec![0.0]);
        let mu0 = DiscreteMeasure::dirac(&[1.0]).unwrap();
        let res = convergence_sweep(
            &zero,
            &mu0,
            &dyadic_taus(1, 4),
            &constant_reference(&[1.0], 1.0),
            SweepMode::Exact,
            &SweepOptions::new(1.0, 1.0),
        )
        .unwrap();
        assert!(res.rows.iter().all(|r| r.w2sup == 0.0));
        assert!(res.fitted_rate.is_none() && res.note.is_some());
    }

    #[test]
    fn sweep_falls_back_to_sampling() {
        let s = scenario("sdf-linear").unwrap();
        let mut opts = SweepOptions::new(1.0, 2.0);
        opts.tuple_cap = 64;
        let res = convergence_sweep(
            &s.spec,
            &s.mu0,
            &dyadic_taus(1, 4),
            &constant_reference(&[0.0], 1.0),
            SweepMode::ExactOrMonteCarlo {
                samples: 200,
                seed: 3,
            },
            &opts,
        )
        .unwrap();
        let sources: Vec<&str> = res.rows.iter().map(|r| r.source.as_str()).collect();
        assert_eq!(sources, ["exact", "exact", "monte-carlo", "monte-carlo"]);
        assert_eq!(res.rows[3].seed, Some(6));
    }
}
