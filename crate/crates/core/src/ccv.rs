//! Counterfactual cross-validation: hold out one time block at a time, train
//! each candidate on the remaining periods, predict the held-out batch means
//! under the observed allocation and score the assembled series.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpnb::{create_training_batches, BatchParams};
use crate::error::{Error, Result};
use crate::estimators::{masked_batch_estimates, EstimatorId};
use crate::panel::{Batch, ExperimentDesign, OutcomePanel, TreatmentMatrix};
use crate::rng;

/// Ordered half-open period intervals covering `0..=T`, stored as the
/// boundary list `[0, b_1, ..., T + 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TimeBlocks {
    bounds: Vec<usize>,
}

impl TimeBlocks {
    pub fn from_bounds(bounds: Vec<usize>) -> Result<Self> {
        if bounds.len() < 2 || bounds[0] != 0 {
            return Err(Error::Config(format!(
                "time block bounds must start at 0 and define at least one block, got {bounds:?}"
            )));
        }
        if bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "time block bounds must be strictly increasing, got {bounds:?}"
            )));
        }
        Ok(TimeBlocks { bounds })
    }

    /// `k` nearly equal blocks over `0..=horizon`; earlier blocks take the remainder.
    pub fn equal(k: usize, horizon: usize) -> Result<Self> {
        let periods = horizon + 1;
        if k == 0 || k > periods {
            return Err(Error::Config(format!("cannot cut {periods} periods into {k} blocks")));
        }
        let mut bounds = vec![0];
        for j in 0..k {
            let len = periods / k + usize::from(j < periods % k);
            bounds.push(bounds[j] + len);
        }
        Self::from_bounds(bounds)
    }

    /// One block per design stage; the first also holds period 0.
    pub fn aligned_to_stages(design: &ExperimentDesign) -> Result<Self> {
        design.validate()?;
        let mut bounds = vec![0];
        let mut end = 1;
        for &len in &design.stage_lengths {
            end += len;
            bounds.push(end);
        }
        Self::from_bounds(bounds)
    }

    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Half-open period range of block `k`.
    pub fn block(&self, k: usize) -> (usize, usize) {
        (self.bounds[k], self.bounds[k + 1])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bounds.windows(2).map(|w| (w[0], w[1]))
    }

    /// Number of periods covered.
    pub fn periods(&self) -> usize {
        *self.bounds.last().expect("nonempty bounds")
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }
}

impl TryFrom<Vec<usize>> for TimeBlocks {
    type Error = Error;

    fn try_from(bounds: Vec<usize>) -> Result<Self> {
        Self::from_bounds(bounds)
    }
}

impl From<TimeBlocks> for Vec<usize> {
    fn from(b: TimeBlocks) -> Self {
        b.bounds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    pub estimator: EstimatorId,
    #[serde(default = "one")]
    pub l: usize,
    #[serde(flatten)]
    pub batches: BatchParams,
    #[serde(default)]
    pub alpha: f64,
}

fn one() -> usize {
    1
}

impl CandidateConfig {
    pub fn new(estimator: EstimatorId, l: usize, batch_size: usize, batch_count: usize, alpha: f64) -> Self {
        CandidateConfig {
            estimator,
            l,
            batches: BatchParams::new(batch_size, batch_count),
            alpha,
        }
    }

    pub fn validate(&self, n_units: usize, horizon: usize) -> Result<()> {
        let l = self.estimator.effective_lag(self.l);
        if l == 0 || l > horizon {
            return Err(Error::Config(format!("lag {} outside 1..={horizon}", self.l)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("ridge penalty must be finite and nonnegative, got {}", self.alpha)));
        }
        if self.estimator.uses_batches() {
            self.batches.validate(n_units)?;
        }
        Ok(())
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        format!(
            "{}(l={}, s={}, m={}, alpha={})",
            self.estimator, self.l, self.batches.batch_size, self.batches.batch_count, self.alpha
        )
    }
}

/// Loss between a reference table and an estimate table, both `b_v × (T+1)`.
pub type LossFn = fn(&[Vec<f64>], &[Vec<f64>]) -> Result<f64>;

/// Observed mean series of each validation batch.
pub fn reference_truth(panel: &OutcomePanel, validation: &[Batch]) -> Result<Vec<Vec<f64>>> {
    validation.iter().map(|b| b.outcome_series(panel)).collect()
}

pub fn mse_loss(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != est.len() || truth.iter().zip(est).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Contract("loss tables differ in shape".into()));
    }
    let count: usize = truth.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(Error::Contract("loss tables are empty".into()));
    }
    let sum: f64 = truth
        .iter()
        .zip(est)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
        .sum();
    Ok(sum / count as f64)
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLoss {
    pub candidate: CandidateConfig,
    /// `+inf` (serialized as null) when some fold failed.
    #[serde(with = "inf_as_null")]
    pub loss: f64,
    pub diagnostic: Option<String>,
}

/// Held-out estimates of one candidate on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEstimate {
    pub candidate: usize,
    pub fold: usize,
    pub start: usize,
    pub end: usize,
    /// `series[j][k]` is validation batch `j` at period `start + k`.
    pub series: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CCVResult {
    pub losses: Vec<CandidateLoss>,
    pub selected: usize,
    pub blocks: TimeBlocks,
    pub folds: Vec<FoldEstimate>,
}

impl CCVResult {
    pub fn selected_config(&self) -> &CandidateConfig {
        &self.losses[self.selected].candidate
    }

    pub fn selected_loss(&self) -> f64 {
        self.losses[self.selected].loss
    }

    /// Full-horizon `b_v × (T+1)` series of `candidate`, concatenated from its
    /// held-out segments. `None` when the candidate failed.
    pub fn assembled(&self, candidate: usize) -> Option<Vec<Vec<f64>>> {
        if !self.losses[candidate].loss.is_finite() {
            return None;
        }
        let segments: Vec<&FoldEstimate> = self.folds.iter().filter(|f| f.candidate == candidate).collect();
        let b_v = segments.first()?.series.len();
        let mut out = vec![Vec::with_capacity(self.blocks.periods()); b_v];
        for seg in segments {
            for (row, part) in out.iter_mut().zip(&seg.series) {
                row.extend_from_slice(part);
            }
        }
        Some(out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Contract(format!("serializing CCV result: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("CCV result", e))
    }

    /// Long-format per-fold estimates.
    pub fn write_fold_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Contract(format!("writing CSV: {e}"));
        wr.write_record(["candidate", "estimator", "fold", "batch", "t", "estimate"])
            .map_err(io)?;
        for f in &self.folds {
            let name = self.losses[f.candidate].candidate.estimator.name();
            for (j, s) in f.series.iter().enumerate() {
                for (k, v) in s.iter().enumerate() {
                    wr.write_record([
                        f.candidate.to_string(),
                        name.to_string(),
                        f.fold.to_string(),
                        j.to_string(),
                        (f.start + k).to_string(),
                        format!("{v:.12e}"),
                    ])
                    .map_err(io)?;
                }
            }
        }
        wr.flush().map_err(|e| Error::Contract(format!("writing CSV: {e}")))
    }

    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("ccv.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("ccv_folds.csv");
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_fold_csv(std::io::BufWriter::new(file))
    }
}

/// Trains `candidate` with `block` withheld and predicts the validation batch
/// means inside the block.
#[allow(clippy::too_many_arguments)]
fn run_fold(
    panel: &OutcomePanel,
    w: &TreatmentMatrix,
    candidate: &CandidateConfig,
    block: (usize, usize),
    validation: &[Batch],
    seed: u64,
    c: usize,
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    candidate.validate(panel.n_units(), panel.horizon())?;
    let train = if candidate.estimator.uses_batches() {
        let mut r = rng::stream(seed, "ccv_batches", &[c as u64, k as u64]);
        create_training_batches(w, &candidate.batches, &mut r)?
    } else {
        Vec::new()
    };
    let available: Vec<bool> = (0..panel.periods()).map(|t| t < block.0 || t >= block.1).collect();
    let est = masked_batch_estimates(
        candidate.estimator,
        panel,
        w,
        &train,
        validation,
        candidate.l,
        candidate.alpha,
        &available,
    )?;
    let segment: Vec<Vec<f64>> = est.into_iter().map(|s| s[block.0..block.1].to_vec()).collect();
    if segment.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Estimator("non-finite held-out estimate".into()));
    }
    Ok(segment)
}

/// Leave-one-block-out selection over `candidates`. The candidate × fold grid
/// runs in parallel and merges in grid order, so the thread count never
/// affects the result.
pub fn run_ccv(
    panel: &OutcomePanel,
    w: &TreatmentMatrix,
    candidates: &[CandidateConfig],
    blocks: &TimeBlocks,
    validation: &[Batch],
    loss: LossFn,
    seed: u64,
) -> Result<CCVResult> {
    if !panel.matches(w) {
        return Err(Error::Contract("panel and treatment matrix differ in shape".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Config("no CCV candidates".into()));
    }
    if blocks.len() < 2 {
        return Err(Error::Config("CCV needs at least two time blocks".into()));
    }
    if blocks.periods() != panel.periods() {
        return Err(Error::Config(format!(
            "time blocks cover {} periods but the panel has {}",
            blocks.periods(),
            panel.periods()
        )));
    }
    if validation.is_empty() {
        return Err(Error::Config("no validation batches".into()));
    }
    let truth = reference_truth(panel, validation)?;
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..blocks.len()).map(move |k| (c, k)))
        .collect();
    let outcomes: Vec<Result<Vec<Vec<f64>>>> = jobs
        .par_iter()
        .map(|&(c, k)| run_fold(panel, w, &candidates[c], blocks.block(k), validation, seed, c, k))
        .collect();

    let mut losses = Vec::with_capacity(candidates.len());
    let mut folds = Vec::new();
    let mut outcomes = outcomes.into_iter();
    for (c, candidate) in candidates.iter().enumerate() {
        let mut assembled = vec![Vec::with_capacity(panel.periods()); validation.len()];
        let mut failure = None;
        let mut own = Vec::with_capacity(blocks.len());
        for (k, (start, end)) in blocks.iter().enumerate() {
            match outcomes.next().expect("one outcome per job") {
                Ok(series) => {
                    for (row, part) in assembled.iter_mut().zip(&series) {
                        row.extend_from_slice(part);
                    }
                    own.push(FoldEstimate {
                        candidate: c,
                        fold: k,
                        start,
                        end,
                        series,
                    });
                }
                Err(e) => {
                    failure.get_or_insert_with(|| format!("fold {k} [{start}, {end}): {e}"));
                }
            }
        }
        let entry = match failure {
            None => match loss(&truth, &assembled) {
                Ok(v) if !v.is_nan() => {
                    folds.extend(own);
                    CandidateLoss {
                        candidate: *candidate,
                        loss: v,
                        diagnostic: None,
                    }
                }
                Ok(_) => failed(candidate, "loss is NaN".into()),
                Err(e) => failed(candidate, format!("loss: {e}")),
            },
            Some(msg) => failed(candidate, msg),
        };
        losses.push(entry);
    }

    // First strict minimum in grid order.
    let selected = losses
        .iter()
        .enumerate()
        .filter(|(_, l)| l.loss.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, l)| match best {
            Some((_, b)) if b <= l.loss => best,
            _ => Some((i, l.loss)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| {
            let why: Vec<String> = losses
                .iter()
                .map(|l| format!("{}: {}", l.candidate.label(), l.diagnostic.as_deref().unwrap_or("?")))
                .collect();
            Error::Estimator(format!("every CCV candidate failed ({})", why.join("; ")))
        })?;
    Ok(CCVResult {
        losses,
        selected,
        blocks: blocks.clone(),
        folds,
    })
}

fn failed(candidate: &CandidateConfig, msg: String) -> CandidateLoss {
    log::warn!("CCV candidate {} failed: {msg}", candidate.label());
    CandidateLoss {
        candidate: *candidate,
        loss: f64::INFINITY,
        diagnostic: Some(msg),
    }
}
