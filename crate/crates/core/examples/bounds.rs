//! A priori radii and step-size limits guaranteeing solvability of the scheme.

use euler_lift::analysis::solvability_bounds;
use euler_lift::fields::scenario;

fn main() -> euler_lift::Result<()> {
    let s = scenario("sdf-linear").expect("built-in scenario");
    let a = s.growth_a.expect("declared growth constant");
    let rho = s.rho.expect("declared support bound");
    let r = s.mu0.max_norm();
    let probe = solvability_bounds(r, a, 1.0, &*rho, None)?;
    println!(
        "R = {r}, a = {a:.4}: R' = {:.4}, L = {:.4}, tau_bar = {:.4}",
        probe.r_prime, probe.l, probe.tau_bar
    );

    let rep = solvability_bounds(r, a, 1.0, &*rho, Some(probe.tau_bar / 2.0))?;
    println!(
        "{} radii at tau = {:.4}, last {:.4}",
        rep.radii.len(),
        rep.tau.unwrap(),
        rep.radii.last().unwrap()
    );
    println!("all within R': {}", rep.within);
    Ok(())
}
