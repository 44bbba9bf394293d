//! Optimal transport between two discrete measures, cross-checked by brute force.

use euler_lift::transport::{brute_force_w2, optimal_coupling};
use euler_lift::DiscreteMeasure;

fn main() -> euler_lift::Result<()> {
    let mu =
        DiscreteMeasure::from_atoms(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], vec![0.5, 0.25, 0.25])?;
    let nu = DiscreteMeasure::from_atoms(&[[1.0, 1.0], [-1.0, 0.0]], vec![0.5, 0.5])?;

    let ot = optimal_coupling(&mu, &nu)?;
    println!("W2 = {:.12}  (cost {:.12})", ot.distance, ot.cost);
    for i in 0..ot.coupling.len() {
        println!(
            "  {:?} -> {:?}  mass {}",
            ot.coupling.x(i),
            ot.coupling.y(i),
            ot.coupling.weights()[i]
        );
    }
    println!("brute force W2 = {:.12}", brute_force_w2(&mu, &nu)?);
    if ot.multiple_optima {
        println!("note: the optimal plan is not unique");
    }
    Ok(())
}
