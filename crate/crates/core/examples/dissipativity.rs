//! Sampling certifiers for one-sided Lipschitz fields and dissipative interactions,
//! including a field that violates the declared modulus.

use euler_lift::fields::{check_one_sided_lipschitz, check_pair_dissipativity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::smallvec;

type Pair = ([f64; 1], [f64; 1]);

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut draw = || -> [f64; 1] { [rng.random_range(-3.0..3.0)] };
    let pairs: Vec<([f64; 1], [f64; 1])> = (0..1000).map(|_| (draw(), draw())).collect();
    let quads: Vec<(Pair, Pair)> = (0..1000)
        .map(|_| ((draw(), draw()), (draw(), draw())))
        .collect();

    let contracting =
        check_one_sided_lipschitz(|x: &[f64]| smallvec![-x[0] - x[0].powi(3)], &pairs, -1.0);
    println!(
        "b = -x - x^3 at lambda = -1: passed {} (lambda_hat {:.4})",
        contracting.passed, contracting.lambda_hat
    );

    let expanding = check_one_sided_lipschitz(|x: &[f64]| smallvec![x[0]], &pairs, 0.0);
    println!(
        "b = x at lambda = 0: passed {} with {} violations, first {:?}",
        expanding.passed,
        expanding.violations.len(),
        expanding.violations.first().map(|v| &v.sample)
    );

    let attract =
        check_pair_dissipativity(|x: &[f64], y: &[f64]| smallvec![y[0] - x[0]], &quads, 0.0);
    println!("f(x, y) = y - x at lambda = 0: passed {}", attract.passed);
}
