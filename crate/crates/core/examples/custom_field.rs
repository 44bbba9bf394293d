//! Fields written in the expression language and run through the scheme.

use euler_lift::euler::{run_explicit_euler, EulerOptions};
use euler_lift::fields::dsl::{compile_field, FieldKind};
use euler_lift::{DiscreteMeasure, NoiseSpace};

fn main() -> euler_lift::Result<()> {
    let mu0 = DiscreteMeasure::uniform(&[[-1.0, 0.0], [1.0, 0.5]])?;

    // Noisy rotation with damping.
    let sampled = compile_field(
        FieldKind::Sampled,
        "vec(-x[1], x[0]) * u - 0.5 * x",
        2,
        NoiseSpace::new(vec![0.5, 1.5], vec![0.5, 0.5])?,
    )?;
    let run = run_explicit_euler(&sampled, &mu0, 0.1, 0.3, 10.0, EulerOptions::default())?;
    println!(
        "sampled: {} atoms at T, mean {:?}",
        run.measures.last().unwrap().len(),
        run.measures.last().unwrap().mean()
    );

    // Pull towards the mean of the current law.
    let nonlocal = compile_field(FieldKind::Nonlocal, "mean(y) - x", 2, NoiseSpace::trivial())?;
    let run = run_explicit_euler(&nonlocal, &mu0, 0.25, 1.0, 10.0, EulerOptions::default())?;
    let end = run.measures.last().unwrap();
    println!("nonlocal: atoms at T {:?}", end.coords());
    Ok(())
}
