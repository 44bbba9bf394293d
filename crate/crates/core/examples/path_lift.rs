//! Lifting an Euler run to a weighted ensemble of piecewise linear paths, then checking
//! that its marginals and joint law reproduce the scheme.

use euler_lift::euler::{
    build_path_ensemble, run_explicit_euler, verify_joint_law, verify_marginals, EulerOptions,
    DEFAULT_TUPLE_CAP,
};
use euler_lift::fields::scenario;

fn main() -> euler_lift::Result<()> {
    let s = scenario("stochastic-idf").expect("built-in scenario");
    let run = run_explicit_euler(
        &s.spec,
        &s.mu0,
        0.25,
        0.75,
        s.default_l,
        EulerOptions::default(),
    )?;
    let lift = build_path_ensemble(&run, DEFAULT_TUPLE_CAP)?;
    println!("{} paths over grid {:?}", lift.len(), run.grid());

    let times: Vec<f64> = vec![0.0, 0.1, 0.25, 0.6, 0.75];
    let m = verify_marginals(&lift, &run, &times)?;
    println!(
        "marginals: passed = {} ({} comparisons)",
        m.passed, m.compared
    );
    for n in 0..run.steps {
        let j = verify_joint_law(&lift, &run, n)?;
        println!("joint law up to step {n}: passed = {}", j.passed);
    }
    print!(
        "{}",
        lift.to_csv().lines().take(6).collect::<Vec<_>>().join("\n")
    );
    println!("\n...");
    Ok(())
}
