//! Randomized environment invariant suites shared by the integration tests
//! and the acceptance target. Each returns a description of the first
//! minimal failing case, if any.

use netcf::envs::{
    ground_truth_pair, AuctionSpec, AuctionWorld, BeliefSpec, BeliefWorld, DataCenterSpec, DataCenterWorld,
    EnvConfig, EnvKind, ExerciseSpec, ExerciseWorld, GaussianSpec, GraphGenerator, GraphSpec, LimSpec,
};
use netcf::synthetic::ExactSe;
use netcf::TreatmentMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRunner};

pub const CASES: u32 = 1000;

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

/// Random treatment matrix with an all-control column 0.
pub fn treatment(n: usize, horizon: usize) -> impl Strategy<Value = TreatmentMatrix> {
    prop::collection::vec(any::<bool>(), n * (horizon + 1)).prop_map(move |bits| {
        let entries = bits
            .iter()
            .enumerate()
            .map(|(k, &b)| u8::from(b && k % (horizon + 1) != 0))
            .collect();
        TreatmentMatrix::new(n, horizon, entries).expect("valid shape")
    })
}

fn sized() -> impl Strategy<Value = (usize, usize)> {
    (5usize..30, 1usize..6)
}

fn graph(n: usize) -> impl Strategy<Value = GraphSpec> {
    let max = (n - 1).min(6) as f64;
    (prop_oneof![Just(GraphGenerator::PreferentialAttachment), Just(GraphGenerator::ConfigurationModel)], 1.0..max)
        .prop_map(|(generator, mean_degree)| GraphSpec { generator, mean_degree })
}

fn check<T: std::fmt::Debug>(result: Result<(), TestError<T>>) -> Result<u32, String> {
    result.map(|_| CASES).map_err(|e| e.to_string())
}

pub fn belief_outcomes_are_binary() -> Result<u32, String> {
    let mut r = runner();
    let strat = sized().prop_flat_map(|(n, h)| {
        (Just(n), Just(h), treatment(n, h), graph(n), 0.0..3.0f64, 0.0..1.0f64, any::<u64>())
    });
    let res = r.run(&strat, |(n, h, w, g, beta, share, seed)| {
        let spec = BeliefSpec {
            graph: g,
            beta,
            initial_share: share,
            ..BeliefSpec::default()
        };
        let panel = BeliefWorld::new(&spec, n, h, seed, 0)
            .and_then(|world| world.run(&w))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(panel.entries().iter().all(|&v| v == 0.0 || v == 1.0));
        Ok(())
    });
    check(res)
}

pub fn exercise_outcomes_are_binary() -> Result<u32, String> {
    let mut r = runner();
    let strat = sized().prop_flat_map(|(n, h)| (Just(n), Just(h), treatment(n, h), graph(n), -3.0..3.0f64, any::<u64>()));
    let res = r.run(&strat, |(n, h, w, g, level, seed)| {
        let spec = ExerciseSpec {
            graph: g,
            base_level: level,
            ..ExerciseSpec::default()
        };
        let panel = ExerciseWorld::new(&spec, n, h, seed, 0)
            .and_then(|world| world.run(&w))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(panel.entries().iter().all(|&v| v == 0.0 || v == 1.0));
        Ok(())
    });
    check(res)
}

pub fn datacenter_utilization_is_a_fraction() -> Result<u32, String> {
    let mut r = runner();
    let strat = (2usize..10, 1usize..4).prop_flat_map(|(n, h)| {
        (Just(n), Just(h), treatment(n, h), 0.05..2.0f64, 0.1..1.0f64, 1usize..4, 0.2..3.0f64, any::<u64>())
    });
    let res = r.run(&strat, |(n, h, w, load, cap, d, mult, seed)| {
        let spec = DataCenterSpec {
            load,
            capability_prob: cap,
            sample_size: d,
            treatment_multiplier: mult,
            interval: 4.0,
            ..DataCenterSpec::default()
        };
        let panel = DataCenterWorld::new(&spec, n, h, seed, 0)
            .and_then(|world| world.run(&w))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(panel.entries().iter().all(|&v| (0.0..=1.0).contains(&v)), "{:?}", panel.entries());
        Ok(())
    });
    check(res)
}

pub fn auction_prices_rise_within_rounds() -> Result<u32, String> {
    let mut r = runner();
    let strat = (1usize..7, 1usize..4).prop_flat_map(|(n, h)| {
        (Just(n), Just(h), treatment(n, h), 0.0..0.5f64, 0.05..2.0f64, 0.0..0.95f64, any::<u64>())
    });
    let res = r.run(&strat, |(n, h, w, tau, eps, carry, seed)| {
        let spec = AuctionSpec {
            tau,
            epsilon: eps,
            carry,
            ..AuctionSpec::default()
        };
        let (panel, openings) = AuctionWorld::new(&spec, n, h, seed, 0)
            .and_then(|world| world.run_with_openings(&w))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (t, open) in openings.iter().enumerate() {
            for (i, &p) in open.iter().enumerate() {
                prop_assert!(panel.get(i, t) >= p, "object {i} period {t}: {} < {p}", panel.get(i, t));
            }
        }
        Ok(())
    });
    check(res)
}

fn any_kind(n: usize) -> impl Strategy<Value = EnvKind> {
    prop_oneof![
        (-0.3..0.3f64, 0.0..1.0f64).prop_map(|(mu, sigma)| EnvKind::Gaussian(GaussianSpec {
            sigma_t: 0.2,
            ..GaussianSpec::direct_effect(mu, sigma)
        })),
        graph(n).prop_map(|graph| EnvKind::Belief(BeliefSpec { graph, ..BeliefSpec::default() })),
        graph(n).prop_map(|graph| EnvKind::LinearInMeans(LimSpec { graph, ..LimSpec::default() })),
        graph(n).prop_map(|graph| EnvKind::Exercise(ExerciseSpec { graph, ..ExerciseSpec::default() })),
        Just(EnvKind::DataCenter(DataCenterSpec { interval: 4.0, ..DataCenterSpec::default() })),
        Just(EnvKind::Auction(AuctionSpec::default())),
        (0.0..0.5f64).prop_map(|noise_sd| EnvKind::ExactSe(ExactSe { noise_sd, ..ExactSe::lag1_example() })),
    ]
}

pub fn paired_runs_are_bit_identical() -> Result<u32, String> {
    let mut r = runner();
    let strat = (5usize..16, 2usize..5)
        .prop_flat_map(|(n, h)| (Just(n), Just(h), treatment(n, h), any_kind(n), any::<u64>()));
    let res = r.run(&strat, |(n, h, w, kind, seed)| {
        let config = EnvConfig::new(kind, n, h, seed);
        let (a, b) = ground_truth_pair(&config, &w, &w).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let same = a.entries().iter().zip(b.entries()).all(|(x, y)| x.to_bits() == y.to_bits());
        prop_assert!(same, "{} produced different panels", config.kind.name());
        Ok(())
    });
    check(res)
}

/// All suites with their names.
#[allow(dead_code)]
pub fn suites() -> Vec<(&'static str, fn() -> Result<u32, String>)> {
    vec![
        ("belief outcomes in {0,1}", belief_outcomes_are_binary),
        ("exercise outcomes in {0,1}", exercise_outcomes_are_binary),
        ("data-center utilization in [0,1]", datacenter_utilization_is_a_fraction),
        ("auction prices nondecreasing per round", auction_prices_rise_within_rounds),
        ("paired runs bit-identical", paired_runs_are_bit_identical),
    ]
}
