#[path = "common/invariants.rs"]
mod invariants;

#[test]
fn belief_outcomes_are_binary() {
    invariants::belief_outcomes_are_binary().unwrap();
}

#[test]
fn exercise_outcomes_are_binary() {
    invariants::exercise_outcomes_are_binary().unwrap();
}

#[test]
fn datacenter_utilization_is_a_fraction() {
    invariants::datacenter_utilization_is_a_fraction().unwrap();
}

#[test]
fn auction_prices_rise_within_rounds() {
    invariants::auction_prices_rise_within_rounds().unwrap();
}

#[test]
fn paired_runs_are_bit_identical() {
    invariants::paired_runs_are_bit_identical().unwrap();
}

/// Population means follow the scalar recursion up to O(1/sqrt(N)) when the
/// treatment is drawn independently of the past.
#[test]
fn gaussian_means_follow_the_scalar_recursion() {
    use netcf::envs::{Affine, GaussianSpec, GaussianWorld};
    use netcf::{rng, TreatmentMatrix};
    use rand::Rng;

    let n = 2000;
    let horizon = 4;
    let spec = GaussianSpec {
        mu: 0.3,
        sigma: 0.5,
        sigma_t: 0.0,
        noise_sd: 0.1,
        g: Affine::new(0.2, 0.5, 1.0, 0.0),
        h: Affine::new(1.0, 0.3, -1.2, 0.4),
        init_mean: 1.0,
        init_sd: 0.5,
    };
    let [r0, r1, r2, r3] = spec.mean_recursion();
    let tol = 5.0 / (n as f64).sqrt();
    for seed in 0..50 {
        let mut r = rng::stream(seed, "mean_dynamics_treatment", &[]);
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..=horizon).map(|t| u8::from(t > 0 && r.random_bool(0.5))).collect())
            .collect();
        let w = TreatmentMatrix::from_rows(&rows).unwrap();
        let panel = GaussianWorld::new(&spec, n, horizon, seed, 0).unwrap().run(&w).unwrap();
        let (y, p) = (panel.column_means(), w.column_means());
        for t in 0..horizon {
            let want = r0 + r1 * y[t] + r2 * p[t + 1] + r3 * y[t] * p[t + 1];
            assert!((y[t + 1] - want).abs() < tol, "seed {seed} t {t}: {} vs {want}", y[t + 1]);
        }
    }
}
