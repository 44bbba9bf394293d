//! Seeded Monte-Carlo particles, compared against the exact Euler marginal.

use euler_lift::euler::{run_explicit_euler, EulerOptions};
use euler_lift::fields::scenario;
use euler_lift::transport::wasserstein2;
use euler_lift::{sample_paths_monte_carlo, NoiseMode};

fn main() -> euler_lift::Result<()> {
    let s = scenario("sdf-linear").expect("built-in scenario");
    let (tau, horizon) = (0.125, 1.0);
    let exact = run_explicit_euler(
        &s.spec,
        &s.mu0,
        tau,
        horizon,
        s.default_l,
        EulerOptions::default(),
    )?;
    let target = exact.measures.last().unwrap();
    for m in [100, 1_000, 10_000] {
        let mc =
            sample_paths_monte_carlo(&s.spec, &s.mu0, tau, horizon, m, 42, NoiseMode::Independent)?;
        let emp = mc.eval_at(horizon).coalesce(0.0);
        println!(
            "M = {m:>5}: W2(empirical, exact) = {:.4}",
            wasserstein2(&emp, target)?
        );
    }
    let shared =
        sample_paths_monte_carlo(&s.spec, &s.mu0, tau, horizon, 1_000, 42, NoiseMode::Shared)?;
    println!(
        "shared noise leaves {} atom(s) at T",
        shared.eval_at(horizon).coalesce(0.0).len()
    );
    Ok(())
}
