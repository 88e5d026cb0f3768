//! Distribution-preserving network bootstrap: training batches with varied
//! treatment exposure, and exposure-ranked validation batches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Batch, TreatmentMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchParams {
    /// Target average batch size `s`.
    pub batch_size: usize,
    /// Number of batches `m`.
    pub batch_count: usize,
}

impl BatchParams {
    pub fn new(batch_size: usize, batch_count: usize) -> Self {
        BatchParams {
            batch_size,
            batch_count,
        }
    }

    pub fn validate(&self, n_units: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_count == 0 {
            return Err(Error::Config(format!(
                "batch size and count must be positive, got s={} m={}",
                self.batch_size, self.batch_count
            )));
        }
        if self.batch_size > n_units {
            return Err(Error::Config(format!(
                "batch size {} exceeds population {n_units}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Unit ids sorted by treatment duration, ties by unit id.
pub fn duration_order(w: &TreatmentMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.n_units()).collect();
    order.sort_by_key(|&i| w.duration(i));
    order
}

/// Start of the `i`-th systematic block among `m` over `n` sorted units.
fn systematic_start(i: usize, n: usize, s: usize, m: usize) -> usize {
    let span = n - s;
    (i * span / (m.max(2) - 1)).min(span)
}

/// Draws `m` training batches. Each pools a systematic and a uniformly placed
/// block of `s` duration-sorted units and keeps every pooled unit with
/// probability `min(1, s / |pool|)`.
pub fn create_training_batches<R: Rng + ?Sized>(
    w: &TreatmentMatrix,
    params: &BatchParams,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    let n = w.n_units();
    params.validate(n)?;
    let s = params.batch_size;
    let m = params.batch_count;
    let order = duration_order(w);
    let mut in_pool = vec![false; n];
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let sys = systematic_start(i, n, s, m);
        let mut chosen = Vec::new();
        for attempt in 0..2 {
            let rand_start = rng.random_range(0..=n - s);
            let mut pool: Vec<usize> = order[sys..sys + s].to_vec();
            for &u in &pool {
                in_pool[u] = true;
            }
            for &u in &order[rand_start..rand_start + s] {
                if !in_pool[u] {
                    pool.push(u);
                }
            }
            for &u in &pool {
                in_pool[u] = false;
            }
            let prob = (s as f64 / pool.len() as f64).min(1.0);
            chosen = pool.into_iter().filter(|_| rng.random::<f64>() < prob).collect();
            if !chosen.is_empty() {
                break;
            }
            log::debug!("training batch {i} came out empty on attempt {attempt}");
        }
        if chosen.is_empty() {
            return Err(Error::Estimator(format!(
                "training batch {i} was empty twice; increase the batch size"
            )));
        }
        out.push(Batch::new(chosen, n)?);
    }
    Ok(out)
}

/// Ranks units by exposure (descending, ties by id) and cuts the ranking into
/// `b_v` contiguous groups; earlier groups absorb the remainder.
pub fn create_validation_batches(w: &TreatmentMatrix, b_v: usize) -> Result<Vec<Batch>> {
    let n = w.n_units();
    if b_v == 0 || b_v > n {
        return Err(Error::Config(format!(
            "validation batch count {b_v} outside 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w.duration(b).cmp(&w.duration(a)).then(a.cmp(&b)));
    let base = n / b_v;
    let rem = n % b_v;
    let mut out = Vec::with_capacity(b_v);
    let mut start = 0;
    for j in 0..b_v {
        let len = base + usize::from(j < rem);
        out.push(Batch::new(order[start..start + len].to_vec(), n)?);
        start += len;
    }
    Ok(out)
}

/// JSON list of unit-id lists, for audit.
pub fn batches_to_json(batches: &[Batch]) -> String {
    let lists: Vec<&[usize]> = batches.iter().map(Batch::indices).collect();
    serde_json::to_string(&lists).expect("index lists serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{generate_staggered_design, ExperimentDesign};
    use crate::rng;
    use proptest::prelude::*;

    fn w_with_durations(durations: &[usize], horizon: usize) -> TreatmentMatrix {
        let rows: Vec<Vec<u8>> = durations
            .iter()
            .map(|&d| (0..=horizon).map(|t| u8::from(t >= 1 && t <= d)).collect())
            .collect();
        TreatmentMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn full_size_single_batch_is_population() {
        let w = w_with_durations(&[1, 3, 0, 2, 2], 4);
        let mut r = rng::stream(1, "test", &[]);
        let b = create_training_batches(&w, &BatchParams::new(5, 1), &mut r).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].indices(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn expected_batch_size_matches_target() {
        let w = w_with_durations(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], 9);
        let mut r = rng::stream(2, "test", &[]);
        let params = BatchParams::new(4, 2);
        let mut sizes = Vec::new();
        for _ in 0..10_000 {
            for b in create_training_batches(&w, &params, &mut r).unwrap() {
                sizes.push(b.len() as f64);
            }
        }
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        assert!((mean - 4.0).abs() < 0.1, "mean size {mean}");
        let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (sizes.len() - 1) as f64;
        let se = (var / sizes.len() as f64).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * se + 1e-9, "mean {mean}, se {se}");
    }

    #[test]
    fn training_batches_span_exposures() {
        let design = ExperimentDesign::new(vec![3, 3, 3], vec![0.1, 0.5, 0.9]).unwrap();
        let w = generate_staggered_design(1000, &design, 7).unwrap();
        let mut r = rng::stream(7, "test", &[]);
        let batches = create_training_batches(&w, &BatchParams::new(100, 100), &mut r).unwrap();
        let exposures: Vec<f64> = batches.iter().map(|b| b.mean_exposure(&w).unwrap()).collect();
        let lo = exposures.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = exposures.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo >= 0.2, "spread {}", hi - lo);
    }

    #[test]
    fn training_batches_are_reproducible() {
        let w = w_with_durations(&[3, 1, 4, 1, 5, 9, 2, 6], 9);
        let params = BatchParams::new(3, 4);
        let a = create_training_batches(&w, &params, &mut rng::stream(5, "t", &[])).unwrap();
        let b = create_training_batches(&w, &params, &mut rng::stream(5, "t", &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversize_batches_are_rejected() {
        let w = w_with_durations(&[1, 2], 3);
        let mut r = rng::stream(1, "t", &[]);
        assert!(matches!(
            create_training_batches(&w, &BatchParams::new(3, 1), &mut r),
            Err(Error::Config(_))
        ));
        assert!(create_validation_batches(&w, 3).is_err());
    }

    #[test]
    fn validation_examples() {
        let w = w_with_durations(&[9, 1, 5, 5], 10);
        let v = create_validation_batches(&w, 2).unwrap();
        assert_eq!(v[0].indices(), &[0, 2]);
        assert_eq!(v[1].indices(), &[1, 3]);
        let one = create_validation_batches(&w, 1).unwrap();
        assert_eq!(one[0].indices(), &[0, 1, 2, 3]);
        let flat = w_with_durations(&[2, 2, 2, 2, 2], 4);
        let v = create_validation_batches(&flat, 2).unwrap();
        assert_eq!(v[0].indices(), &[0, 1, 2]);
        assert_eq!(v[1].indices(), &[3, 4]);
    }

    #[test]
    fn json_export_lists_ids() {
        let w = w_with_durations(&[9, 1, 5, 5], 10);
        let v = create_validation_batches(&w, 2).unwrap();
        assert_eq!(batches_to_json(&v), "[[0,2],[1,3]]");
    }

    proptest! {
        #[test]
        fn validation_batches_partition_population(
            durations in proptest::collection::vec(0usize..=8, 1..60),
            b_v in 1usize..6,
        ) {
            prop_assume!(b_v <= durations.len());
            let w = w_with_durations(&durations, 8);
            let v = create_validation_batches(&w, b_v).unwrap();
            let mut all: Vec<usize> = v.iter().flat_map(|b| b.indices().to_vec()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..durations.len()).collect::<Vec<_>>());
            let sizes: Vec<usize> = v.iter().map(Batch::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let first = v[0].mean_exposure(&w).unwrap();
            let last = v[b_v - 1].mean_exposure(&w).unwrap();
            prop_assert!(first >= last);
        }

        #[test]
        fn training_batches_are_valid(
            durations in proptest::collection::vec(0usize..=6, 2..40),
            s_frac in 0.05f64..1.0,
            m in 1usize..6,
            seed in any::<u64>(),
        ) {
            let n = durations.len();
            let s = ((n as f64 * s_frac).ceil() as usize).clamp(1, n);
            let w = w_with_durations(&durations, 6);
            let mut r = rng::stream(seed, "t", &[]);
            match create_training_batches(&w, &BatchParams::new(s, m), &mut r) {
                Ok(bs) => {
                    prop_assert_eq!(bs.len(), m);
                    for b in bs {
                        prop_assert!(b.indices().iter().all(|&i| i < n));
                    }
                }
                Err(e) => prop_assert!(matches!(e, Error::Estimator(_)), "{e}"),
            }
        }
    }
}
