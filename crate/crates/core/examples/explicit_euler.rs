//! The stochastic explicit Euler scheme on the branching linear field `x -> ±1`.

use euler_lift::euler::{run_explicit_euler, EulerOptions};
use euler_lift::fields::scenario;

fn main() -> euler_lift::Result<()> {
    let s = scenario("sdf-linear").expect("built-in scenario");
    let run = run_explicit_euler(
        &s.spec,
        &s.mu0,
        0.25,
        1.0,
        s.default_l,
        EulerOptions::default(),
    )?;
    for (t, m) in run.grid().iter().zip(&run.measures) {
        let atoms: Vec<String> = m
            .atoms()
            .zip(m.weights())
            .map(|(x, w)| format!("{:+.2}@{w:.4}", x[0]))
            .collect();
        println!("t = {t:.2}: {}", atoms.join(" "));
    }
    println!(
        "final second moment {:.6}",
        run.measures.last().unwrap().second_moment()
    );
    Ok(())
}
