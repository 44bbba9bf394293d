//! The sticky-particle limit flow of an attractive interaction: atoms travel, collide and
//! move on together.

use euler_lift::fields::scenario;
use euler_lift::limit::sticky_property_check;
use euler_lift::{sticky_flow, DiscreteMeasure, StickyFlowConfig};

fn main() -> euler_lift::Result<()> {
    let s = scenario("idf-attract").expect("built-in scenario");
    let mu0 = DiscreteMeasure::new(1, vec![-1.0, 0.2, 1.0], vec![0.3, 0.3, 0.4])?;
    let flow = sticky_flow(&s.spec, &mu0, 25.0, StickyFlowConfig::with_dt(1e-2))?;

    for e in &flow.merge_events {
        println!(
            "t = {:.4}: atom {} absorbs {:?} at {:?}",
            e.time, e.survivor, e.absorbed, e.position
        );
    }
    for t in [0.0, 1.0, 5.0, 25.0] {
        let m = flow.measure_at(t);
        println!("mu_{t}: {:?} with weights {:?}", m.coords(), m.weights());
    }
    let rep = sticky_property_check(&flow.ensemble, 1e-8, Some(&mu0));
    println!("sticky: {}", rep.passed);
    Ok(())
}
