//! Batch front-end: `run | sweep | verify | bounds`.
//!
//! Exit codes: 0 success, 1 a verification failed, 2 configuration or input error,
//! 3 stability violation, 4 resource cap exceeded, 5 any other failure.
//! The output directory is `--out`, else `$EULER_LIFT_OUT`, else the config's `output`,
//! else `euler-lift-out`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    action_bound, convergence_sweep, ensemble_action, solvability_bounds, SweepOptions,
};
use crate::config::{Resolved, RunConfig, RunMode, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::euler::{
    build_path_ensemble, run_explicit_euler, verify_joint_law, verify_marginals, STABILITY_SLACK,
    VERIFY_COORD_TOL, VERIFY_WEIGHT_TOL,
};
use crate::fields::{check_total_dissipativity, CHECK_SLACK};
use crate::limit::{sticky_flow, sticky_property_check};
use crate::measure::{GROUPING_TOL, WEIGHT_TOL};
use crate::montecarlo::sample_paths_monte_carlo;

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "EULER_LIFT_OUT";
const DEFAULT_OUT: &str = "euler-lift-out";

#[derive(Debug, Parser)]
#[command(
    name = "euler-lift",
    version,
    about = "Stochastic explicit Euler schemes in Wasserstein space"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate the scheme and write measures, the lifted ensemble and a manifest.
    Run(CommonArgs),
    /// Convergence sweep against the sticky limit flow.
    Sweep(CommonArgs),
    /// Check the lifting identities, the action bound, stickiness and dissipativity.
    Verify(CommonArgs),
    /// Solvability radii and step-size threshold.
    Bounds(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Result of a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: Vec<String>,
    pub out_dir: PathBuf,
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) => 2,
        Error::Stability { .. } => 3,
        Error::Resource { .. } => 4,
        _ => 5,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn tolerances(r: &Resolved) -> Value {
    json!({
        "coalesce_tol": r.config.coalesce_tol,
        "verify_coord_tol": VERIFY_COORD_TOL,
        "verify_weight_tol": VERIFY_WEIGHT_TOL,
        "stability_slack": STABILITY_SLACK,
        "weight_tol": WEIGHT_TOL,
        "grouping_tol": GROUPING_TOL,
        "check_slack": CHECK_SLACK,
        "reference_dt": r.config.reference_dt,
        "merge_tol": r.config.merge_tol,
    })
}

struct Artifacts<'a> {
    dir: PathBuf,
    resolved: &'a Resolved,
    written: Vec<(String, String)>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &Path, resolved: &'a Resolved) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            resolved,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.written.push((name.to_string(), sha256_hex(body)));
        Ok(())
    }

    /// JSON artifact stamped with the config hash and tolerances.
    fn json(&mut self, name: &str, payload: Value) -> Result<()> {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "config_sha256": self.resolved.hash,
            "tolerances": tolerances(self.resolved),
            "data": payload,
        });
        let mut body = serde_json::to_string_pretty(&doc).expect("json");
        body.push('\n');
        self.write(name, body.as_bytes())
    }

    fn finish(self, command: &str, extra: Value) -> Result<()> {
        let r = self.resolved;
        let manifest = json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "scenario": r.name,
            "config_sha256": r.hash,
            "config": r.config,
            "l_bound": r.l_bound,
            "seed": r.config.seed,
            "tolerances": tolerances(r),
            "artifacts": self.written.iter().map(|(n, h)| json!({"name": n, "sha256": h})).collect::<Vec<_>>(),
            "summary": extra,
        });
        let mut body = serde_json::to_string_pretty(&manifest).expect("json");
        body.push('\n');
        fs::write(self.dir.join("manifest.json"), body)?;
        Ok(())
    }
}

fn require_tau(r: &Resolved) -> Result<f64> {
    r.config
        .tau
        .ok_or_else(|| Error::Config("this command needs tau".into()))
}

/// Propagates the scheme; exact mode also writes the lifted ensemble.
pub fn cmd_run(r: &Resolved, out: &Path) -> Result<Outcome> {
    let tau = require_tau(r)?;
    let c = &r.config;
    let mut summary = Vec::new();
    let exact = || -> Result<_> {
        let run = run_explicit_euler(
            &r.spec,
            &r.mu0,
            tau,
            c.horizon,
            r.l_bound,
            c.euler_options(),
        )?;
        let eta = build_path_ensemble(&run, c.tuple_cap)?;
        Ok((run, eta))
    };
    let result = match c.mode {
        RunMode::Exact => Some(exact()?),
        RunMode::MonteCarlo => None,
        RunMode::ExactOrMonteCarlo => match exact() {
            Ok(v) => Some(v),
            Err(Error::Resource { .. }) => None,
            Err(e) => return Err(e),
        },
    };
    let mut art = Artifacts::new(out, r)?;
    let extra = match result {
        Some((run, eta)) => {
            art.json("run.json", run.to_json())?;
            art.write("ensemble.csv", eta.to_csv().as_bytes())?;
            art.json(
                "ensemble.json",
                serde_json::from_str(&eta.to_json()).expect("json"),
            )?;
            summary.push(format!(
                "exact run: {} steps, {} atoms at T, {} paths",
                run.steps,
                run.measures.last().map_or(0, |m| m.len()),
                eta.len()
            ));
            json!({"source": "exact", "steps": run.steps, "paths": eta.len()})
        }
        None => {
            let eta = sample_paths_monte_carlo(
                &r.spec,
                &r.mu0,
                tau,
                c.horizon,
                c.samples,
                c.seed,
                c.noise_mode,
            )?;
            let marginal = eta.eval_at(c.horizon);
            art.write("ensemble.csv", eta.to_csv().as_bytes())?;
            art.json(
                "ensemble.json",
                serde_json::from_str(&eta.to_json()).expect("json"),
            )?;
            art.json(
                "marginal_T.json",
                serde_json::to_value(&marginal).expect("json"),
            )?;
            summary.push(format!(
                "monte-carlo run: {} samples, {} distinct positions at T",
                c.samples,
                marginal.len()
            ));
            json!({"source": "monte-carlo", "samples": c.samples, "seed": c.seed})
        }
    };
    art.finish("run", extra)?;
    Ok(Outcome {
        passed: true,
        summary,
        out_dir: out.to_path_buf(),
    })
}

/// Convergence sweep against the sticky flow from `mu0`.
pub fn cmd_sweep(r: &Resolved, out: &Path) -> Result<Outcome> {
    let c = &r.config;
    let taus = c.sweep_taus()?;
    let flow = sticky_flow(&r.spec, &r.mu0, c.horizon, c.sticky_config())?;
    let mut opts = SweepOptions::new(c.horizon, r.l_bound);
    opts.euler = c.euler_options();
    opts.tuple_cap = c.tuple_cap;
    opts.noise = c.noise_mode;
    opts.record_timings = c.record_timings;
    let res = convergence_sweep(
        &r.spec,
        &r.mu0,
        &taus,
        &flow.ensemble,
        c.sweep_mode(),
        &opts,
    )?;
    let mut art = Artifacts::new(out, r)?;
    art.write("sweep.csv", res.to_csv().as_bytes())?;
    art.json("sweep.json", res.to_json())?;
    art.json("reference_merges.json", flow.merge_log_json())?;
    let rate = match res.fitted_rate {
        Some(s) => format!("fitted rate {s:.4}"),
        None => res.note.clone().unwrap_or_default(),
    };
    let summary = vec![format!("sweep over {} step sizes: {rate}", res.rows.len())];
    art.finish(
        "sweep",
        json!({"fitted_rate": res.fitted_rate, "rows": res.rows.len()}),
    )?;
    Ok(Outcome {
        passed: true,
        summary,
        out_dir: out.to_path_buf(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct Check {
    check: String,
    passed: bool,
    detail: String,
}

/// Sections compared pairwise by the dissipativity certifier.
const VERIFY_SECTION_PAIRS: usize = 8;

/// Lifting identities, action bound, stickiness of the limit flow and dissipativity of the
/// barycentric sections along the run.
pub fn cmd_verify(r: &Resolved, out: &Path) -> Result<Outcome> {
    let tau = require_tau(r)?;
    let c = &r.config;
    let run = run_explicit_euler(
        &r.spec,
        &r.mu0,
        tau,
        c.horizon,
        r.l_bound,
        c.euler_options(),
    )?;
    let eta = build_path_ensemble(&run, c.tuple_cap)?;
    let mut checks = Vec::new();

    let grid = run.grid();
    let mut times = grid.clone();
    times.extend(grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let m = verify_marginals(&eta, &run, &times)?;
    checks.push(Check {
        check: "marginals".into(),
        passed: m.passed,
        detail: m
            .witness
            .unwrap_or_else(|| format!("{} times, {} comparisons", times.len(), m.compared)),
    });

    let last = if run.clipped() {
        run.steps.saturating_sub(2)
    } else {
        run.steps - 1
    };
    if !(run.clipped() && run.steps < 2) {
        for n in 0..=last {
            let j = verify_joint_law(&eta, &run, n)?;
            checks.push(Check {
                check: format!("joint-law n={n}"),
                passed: j.passed,
                detail: j
                    .witness
                    .unwrap_or_else(|| format!("{} comparisons", j.compared)),
            });
        }
    }

    let action = ensemble_action(&eta, 2.0)?;
    let bound = action_bound(r.l_bound, c.horizon, tau);
    checks.push(Check {
        check: "action-bound".into(),
        passed: action <= bound,
        detail: format!("A2 = {action} vs L^2 (T + tau) = {bound}"),
    });

    let flow = sticky_flow(&r.spec, &r.mu0, c.horizon, c.sticky_config())?;
    let sticky = sticky_property_check(&flow.ensemble, 1e-8, Some(&r.mu0));
    checks.push(Check {
        check: "sticky-limit".into(),
        passed: sticky.passed,
        detail: sticky
            .witness
            .unwrap_or_else(|| format!("{} merge events", flow.merge_events.len())),
    });

    if let Some(lambda) = r.lambda {
        let bary: Vec<_> = run
            .sections
            .iter()
            .map(|p| p.barycentric_projection())
            .collect();
        let mut pairs = 0;
        let (mut passed, mut worst) = (true, f64::NEG_INFINITY);
        'outer: for i in 0..bary.len() {
            for j in i + 1..bary.len() {
                if pairs == VERIFY_SECTION_PAIRS {
                    break 'outer;
                }
                let rep = check_total_dissipativity(&bary[i], &bary[j], &[], None, lambda)?;
                passed &= rep.passed;
                worst = worst.max(rep.lambda_hat);
                pairs += 1;
            }
        }
        checks.push(Check {
            check: "barycentric-dissipativity".into(),
            passed,
            detail: format!("{pairs} section pairs, declared {lambda}, largest observed {worst}"),
        });
    }

    let passed = checks.iter().all(|c| c.passed);
    let mut art = Artifacts::new(out, r)?;
    art.json("verify.json", json!({"passed": passed, "checks": checks}))?;
    let summary = checks
        .iter()
        .map(|c| {
            format!(
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.check,
                c.detail
            )
        })
        .collect();
    art.finish("verify", json!({"passed": passed, "checks": checks.len()}))?;
    Ok(Outcome {
        passed,
        summary,
        out_dir: out.to_path_buf(),
    })
}

/// Solvability radii. `R` defaults to the largest atom norm of `mu0`, `a` and `rho` to the
/// scenario's declared constants, `tau` to half the threshold.
pub fn cmd_bounds(r: &Resolved, out: &Path) -> Result<Outcome> {
    let c = &r.config;
    let sc = r
        .builtin
        .as_ref()
        .ok_or_else(|| Error::Config("bounds need a built-in scenario with declared rho".into()))?;
    let rho = sc
        .rho
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} declares no support bound rho", sc.name)))?;
    let a = c
        .bounds
        .a
        .or(sc.growth_a)
        .ok_or_else(|| Error::Config(format!("{} declares no growth constant a", sc.name)))?;
    let radius = c.bounds.r.unwrap_or_else(|| r.mu0.max_norm());
    let base = solvability_bounds(radius, a, c.horizon, rho.as_ref(), None)?;
    let tau = c.bounds.tau.unwrap_or(base.tau_bar / 2.0);
    let rep = solvability_bounds(radius, a, c.horizon, rho.as_ref(), Some(tau))?;
    let mut art = Artifacts::new(out, r)?;
    art.json("bounds.json", serde_json::to_value(&rep).expect("json"))?;
    let summary = vec![format!(
        "R' = {}, L = {}, tau_bar = {}, {} radii at tau = {tau}, all below R': {}",
        rep.r_prime,
        rep.l,
        rep.tau_bar,
        rep.radii.len(),
        rep.within
    )];
    art.finish("bounds", json!({"within": rep.within}))?;
    Ok(Outcome {
        passed: rep.within,
        summary,
        out_dir: out.to_path_buf(),
    })
}

fn out_dir(args: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(o) = std::env::var_os(OUT_ENV) {
        return PathBuf::from(o);
    }
    cfg.output.as_deref().unwrap_or(DEFAULT_OUT).into()
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    let (args, f): (&CommonArgs, fn(&Resolved, &Path) -> Result<Outcome>) = match cmd {
        Command::Run(a) => (a, cmd_run),
        Command::Sweep(a) => (a, cmd_sweep),
        Command::Verify(a) => (a, cmd_verify),
        Command::Bounds(a) => (a, cmd_bounds),
    };
    let src = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::from_json(&src)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = out_dir(args, &cfg);
    let resolved = cfg.resolve()?;
    let jobs = args.jobs.unwrap_or(0);
    if args.jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| f(&resolved, &out))
}

/// Parses `args`, runs the command, prints a summary and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            println!("artifacts: {}", o.out_dir.display());
            if o.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
