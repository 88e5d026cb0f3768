use netcf::envs::{EnvConfig, EnvKind, GaussianSpec};
use netcf::harness::{dm_sweep, run_benchmark, BenchmarkConfig, BlockSpec, CcvSetup, Format, SweepConfig, SweepParam};
use netcf::ExperimentDesign;
use sha2::{Digest, Sha256};
use std::path::Path;

fn bench() -> BenchmarkConfig {
    BenchmarkConfig {
        env: EnvConfig::new(EnvKind::Gaussian(GaussianSpec::direct_effect(0.1, 0.5)), 150, 6, 3),
        design: ExperimentDesign::new(vec![2, 2, 2], vec![0.2, 0.5, 0.8]).unwrap(),
        runs: 3,
        ccv: CcvSetup {
            validation_batches: 4,
            blocks: BlockSpec::Count(2),
            candidates: Vec::new(),
        },
        window: None,
        raw_runs: true,
        out: None,
    }
}

fn sweep(worlds: usize, resamples: usize) -> SweepConfig {
    SweepConfig {
        worlds,
        resamples,
        bootstrap: 200,
        n_units: 60,
        ..SweepConfig::new(SweepParam::Sigma, 0.04, vec![0.1, 0.4, 1.6])
    }
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

/// SHA-256 of every file in `dir`, sorted by name.
fn digest(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let hash = Sha256::digest(std::fs::read(&p).unwrap());
            let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
            (p.file_name().unwrap().to_string_lossy().into_owned(), hex)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn benchmark_exports_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    for format in [Format::Csv, Format::Json] {
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        run_benchmark(&bench()).unwrap().write(&a, format, true).unwrap();
        run_benchmark(&bench()).unwrap().write(&b, format, true).unwrap();
        let (da, db) = (digest(&a), digest(&b));
        assert!(da.len() >= 3, "{da:?}");
        assert_eq!(da, db);
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let serial = pool(1).install(|| run_benchmark(&bench()).unwrap());
    let parallel = pool(4).install(|| run_benchmark(&bench()).unwrap());
    assert_eq!(serial, parallel);

    let config = sweep(3, 4);
    let serial = pool(1).install(|| dm_sweep(&config).unwrap());
    let parallel = pool(4).install(|| dm_sweep(&config).unwrap());
    assert_eq!(serial, parallel);
    let dir = tempfile::tempdir().unwrap();
    serial.write(&dir.path().join("s"), Format::Json).unwrap();
    parallel.write(&dir.path().join("p"), Format::Json).unwrap();
    assert_eq!(digest(&dir.path().join("s")), digest(&dir.path().join("p")));
}

#[test]
fn different_seeds_give_different_benchmarks() {
    let mut other = bench();
    other.env.seed += 1;
    assert_ne!(run_benchmark(&bench()).unwrap().runs, run_benchmark(&other).unwrap().runs);
}

/// Band widths follow the number of independent draws behind them, so
/// doubling both nesting levels should shrink them by about 1/sqrt(2).
#[test]
fn doubling_worlds_and_resamples_shrinks_the_bands() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let at = |worlds, resamples| dm_sweep(&SweepConfig { seed, ..sweep(worlds, resamples) }).unwrap();
        let (small, large) = (at(20, 50), at(40, 100));
        for (s, l) in small.rows.iter().zip(&large.rows) {
            ratios.extend([l.mse_se / s.mse_se, l.variance_se / s.variance_se, l.bias2_se / s.bias2_se]);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!((0.6..=0.85).contains(&median), "median SE ratio {median:.3} from {ratios:?}");
}
