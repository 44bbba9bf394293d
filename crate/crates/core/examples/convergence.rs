//! Convergence of the path lifts to the limit flow as the step size shrinks.

use euler_lift::analysis::{convergence_sweep, dyadic_taus, SweepMode, SweepOptions};
use euler_lift::{sticky_flow, DiscreteMeasure, PvfSpec, StickyFlowConfig};
use smallvec::smallvec;

fn main() -> euler_lift::Result<()> {
    let spec = PvfSpec::deterministic(|x| smallvec![-x[0]]);
    let mu0 = DiscreteMeasure::new(1, vec![-1.0, 2.0], vec![0.5, 0.5])?;
    let reference = sticky_flow(&spec, &mu0, 1.0, StickyFlowConfig::with_dt(1e-4))?;
    let res = convergence_sweep(
        &spec,
        &mu0,
        &dyadic_taus(2, 8),
        &reference.ensemble,
        SweepMode::Exact,
        &SweepOptions::new(1.0, 3.0),
    )?;
    print!("{}", res.to_csv());
    match res.fitted_rate {
        Some(r) => println!("fitted rate {r:.3}"),
        None => println!("no rate: {}", res.note.unwrap_or_default()),
    }
    Ok(())
}
