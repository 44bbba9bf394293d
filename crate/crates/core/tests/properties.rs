use euler_lift::euler::{
    build_path_ensemble, interpolate_measure, multi_step_plan, run_explicit_euler, EulerOptions,
};
use euler_lift::fields::{barycenter_at_atoms, evaluate_pvf, scenario};
use euler_lift::measure::measure_mismatch;
use euler_lift::transport::{brute_force_w2, optimal_coupling, wasserstein2};
use euler_lift::{sample_paths_monte_carlo, DiscreteMeasure, NoiseMode};
use proptest::prelude::*;

fn measure(dim: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    (1..=max_atoms).prop_flat_map(move |n| {
        (
            prop::collection::vec(-3.0..3.0f64, n * dim),
            prop::collection::vec(0.05..1.0f64, n),
        )
            .prop_map(move |(c, w)| {
                let s: f64 = w.iter().sum();
                DiscreteMeasure::new(dim, c, w.iter().map(|x| x / s).collect()).unwrap()
            })
    })
}

fn pair(max_atoms: usize) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    (1..=3usize).prop_flat_map(move |d| (measure(d, max_atoms), measure(d, max_atoms)))
}

fn triple() -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure, DiscreteMeasure)> {
    (1..=3usize).prop_flat_map(|d| (measure(d, 4), measure(d, 4), measure(d, 4)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn simplex_matches_brute_force((mu, nu) in pair(4)) {
        let ot = optimal_coupling(&mu, &nu).unwrap();
        let bf = brute_force_w2(&mu, &nu).unwrap();
        let rel = (ot.cost - bf * bf).abs() / (bf * bf).max(1e-300);
        prop_assert!(rel <= 1e-9 || (ot.cost - bf * bf).abs() <= 1e-12, "{} vs {}", ot.cost, bf * bf);
        let (a, b) = ot.coupling.computed_marginals();
        prop_assert!(measure_mismatch(&a, &mu.coalesce(0.0), 1e-12, 1e-12).is_none());
        prop_assert!(measure_mismatch(&b, &nu.coalesce(0.0), 1e-12, 1e-12).is_none());
    }

    #[test]
    fn w2_is_a_metric((a, b, c) in triple()) {
        let ab = wasserstein2(&a, &b).unwrap();
        prop_assert!(wasserstein2(&a, &a).unwrap() <= 1e-9);
        prop_assert!((ab - wasserstein2(&b, &a).unwrap()).abs() <= 1e-9);
        let via = wasserstein2(&a, &c).unwrap() + wasserstein2(&c, &b).unwrap();
        prop_assert!(ab <= via + 1e-9);
    }

    #[test]
    fn coalesce_is_idempotent(mu in (1..=3usize).prop_flat_map(|d| measure(d, 12)), tol in 0.0..0.5f64) {
        let once = mu.coalesce(tol);
        prop_assert_eq!(once.coalesce(tol), once.clone());
        prop_assert!((once.total_mass() - mu.total_mass()).abs() <= 1e-12);
    }

    #[test]
    fn barycentric_projection_lowers_the_velocity_moment(
        mu in measure(1, 4),
        name in prop::sample::select(vec!["sdf-linear", "idf-attract", "stochastic-idf"]),
    ) {
        let s = scenario(name).unwrap();
        let phi = evaluate_pvf(&s.spec, &mu).unwrap();
        let bary = phi.barycentric_projection();
        prop_assert!(bary.velocity_moment() <= phi.velocity_moment() + 1e-12);
        prop_assert!(measure_mismatch(&phi.x_marginal(), &mu.coalesce(0.0), 1e-12, 1e-12).is_none());
        let direct = barycenter_at_atoms(&s.spec, &mu.coalesce(0.0)).unwrap();
        let base = mu.coalesce(0.0);
        for (i, x) in base.atoms().enumerate() {
            let v = bary.velocity_at(x, 1e-12).unwrap();
            prop_assert!((v[0] - direct[i][0]).abs() <= 1e-10);
        }
    }

    #[test]
    fn gradient_sum_x_marginal_is_the_input(mu in measure(2, 5)) {
        let s = scenario("gradient-sum").unwrap();
        let phi = evaluate_pvf(&s.spec, &mu).unwrap();
        prop_assert!(measure_mismatch(&phi.x_marginal(), &mu.coalesce(0.0), 1e-12, 1e-12).is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_restrict_to_shorter_runs(mu in measure(1, 3), k in 1usize..4) {
        let s = scenario("sdf-linear").unwrap();
        let tau = 0.25;
        let long = run_explicit_euler(&s.spec, &mu, tau, 4.0 * tau, 100.0, EulerOptions::default()).unwrap();
        let short = run_explicit_euler(&s.spec, &mu, tau, k as f64 * tau, 100.0, EulerOptions::default()).unwrap();
        let restricted = multi_step_plan(&long, 1 << 20).unwrap().restrict(k).coalesce(0.0);
        let direct = multi_step_plan(&short, 1 << 20).unwrap().coalesce(0.0);
        prop_assert!(euler_lift::measure::plan_mismatch(&restricted, &direct, 1e-12, 1e-12).is_none());
    }

    #[test]
    fn lift_marginals_are_the_scheme(mu in measure(1, 3), tau in 0.1..0.6f64) {
        let s = scenario("stochastic-idf").unwrap();
        let run = run_explicit_euler(&s.spec, &mu, tau, 1.0, 100.0, EulerOptions::default());
        prop_assume!(run.is_ok());
        let run = run.unwrap();
        let lift = build_path_ensemble(&run, 1 << 20);
        prop_assume!(lift.is_ok());
        let lift = lift.unwrap();
        for t in run.grid() {
            let m = interpolate_measure(&run, t).unwrap().coalesce(0.0);
            prop_assert!(measure_mismatch(&lift.eval_at(t).coalesce(0.0), &m, 1e-10, 1e-12).is_none());
        }
    }

    #[test]
    fn monte_carlo_particles_stay_on_the_exact_support(mu in measure(1, 3), seed in any::<u64>()) {
        let s = scenario("sdf-linear").unwrap();
        let run = run_explicit_euler(&s.spec, &mu, 0.25, 1.0, 100.0, EulerOptions::default()).unwrap();
        let mc = sample_paths_monte_carlo(&s.spec, &mu, 0.25, 1.0, 64, seed, NoiseMode::Independent).unwrap();
        for (t, m) in run.grid().iter().zip(&run.measures) {
            for x in mc.eval_at(*t).atoms() {
                prop_assert!(m.mass_at(x, 1e-12) > 0.0, "particle at {x:?} off the support at t = {t}");
            }
        }
    }
}
