//! Panel data model: treatment matrices, outcome panels, experimental
//! designs, unit batches and the estimands built on them.
//!
//! All matrices are stored unit-major: entry `(i, t)` lives at
//! `i * (horizon + 1) + t`. Column 0 is the all-control initialization period.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Binary treatment assignments for `n_units` over periods `0..=horizon`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr<u8>", into = "MatrixRepr<u8>")]
pub struct TreatmentMatrix {
    n_units: usize,
    horizon: usize,
    entries: Vec<u8>,
}

/// Real outcomes aligned to a [`TreatmentMatrix`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr<f64>", into = "MatrixRepr<f64>")]
pub struct OutcomePanel {
    n_units: usize,
    horizon: usize,
    entries: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MatrixRepr<T> {
    n_units: usize,
    horizon: usize,
    rows: Vec<Vec<T>>,
}

fn check_shape(n_units: usize, horizon: usize, len: usize) -> Result<()> {
    if n_units == 0 || horizon == 0 {
        return Err(Error::Contract(format!(
            "panel needs n_units >= 1 and horizon >= 1, got ({n_units}, {horizon})"
        )));
    }
    if len != n_units * (horizon + 1) {
        return Err(Error::Contract(format!(
            "expected {} entries for shape ({n_units}, {}), got {len}",
            n_units * (horizon + 1),
            horizon + 1
        )));
    }
    Ok(())
}

fn rows_to_flat<T: Copy>(rows: &[Vec<T>], width: usize) -> Result<Vec<T>> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Contract(format!(
                "row {i} has {} columns, expected {width}",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    Ok(flat)
}

impl TreatmentMatrix {
    pub fn new(n_units: usize, horizon: usize, entries: Vec<u8>) -> Result<Self> {
        check_shape(n_units, horizon, entries.len())?;
        if let Some(pos) = entries.iter().position(|&e| e > 1) {
            return Err(Error::Contract(format!(
                "treatment entry at flat index {pos} is {}, expected 0 or 1",
                entries[pos]
            )));
        }
        let w = TreatmentMatrix {
            n_units,
            horizon,
            entries,
        };
        if let Some(i) = (0..n_units).find(|&i| w.get(i, 0)) {
            return Err(Error::Contract(format!(
                "column 0 must be all control, unit {i} is treated"
            )));
        }
        Ok(w)
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let flat = rows_to_flat(rows, width)?;
        Self::new(rows.len(), width.saturating_sub(1), flat)
    }

    pub fn zeros(n_units: usize, horizon: usize) -> Self {
        TreatmentMatrix {
            n_units,
            horizon,
            entries: vec![0; n_units * (horizon + 1)],
        }
    }

    /// Every unit treated in periods `1..=horizon`.
    pub fn all_treated(n_units: usize, horizon: usize) -> Self {
        let mut w = Self::zeros(n_units, horizon);
        for i in 0..n_units {
            for t in 1..=horizon {
                w.entries[i * (horizon + 1) + t] = 1;
            }
        }
        w
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn periods(&self) -> usize {
        self.horizon + 1
    }

    #[inline]
    pub fn get(&self, unit: usize, t: usize) -> bool {
        self.entries[unit * (self.horizon + 1) + t] == 1
    }

    #[inline]
    pub fn value(&self, unit: usize, t: usize) -> f64 {
        f64::from(self.entries[unit * (self.horizon + 1) + t])
    }

    /// Sets an entry. Column 0 cannot be set to treated.
    pub fn set(&mut self, unit: usize, t: usize, treated: bool) -> Result<()> {
        if unit >= self.n_units {
            return Err(Error::Index {
                what: "unit",
                index: unit,
                limit: self.n_units,
            });
        }
        if t > self.horizon {
            return Err(Error::Index {
                what: "period",
                index: t,
                limit: self.horizon + 1,
            });
        }
        if t == 0 && treated {
            return Err(Error::Contract("column 0 must stay all control".into()));
        }
        self.entries[unit * (self.horizon + 1) + t] = u8::from(treated);
        Ok(())
    }

    pub fn row(&self, unit: usize) -> &[u8] {
        let w = self.horizon + 1;
        &self.entries[unit * w..(unit + 1) * w]
    }

    /// Fraction of units treated at period `t`.
    pub fn column_mean(&self, t: usize) -> f64 {
        let treated = (0..self.n_units).filter(|&i| self.get(i, t)).count();
        treated as f64 / self.n_units as f64
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..=self.horizon).map(|t| self.column_mean(t)).collect()
    }

    /// Number of periods the unit spends under treatment.
    pub fn duration(&self, unit: usize) -> usize {
        self.row(unit).iter().filter(|&&e| e == 1).count()
    }

    pub fn same_shape(&self, other: &TreatmentMatrix) -> bool {
        self.n_units == other.n_units && self.horizon == other.horizon
    }

    /// Copies the listed columns, in order, into a new matrix (the first
    /// listed column must be control for every unit).
    pub fn select_columns(&self, columns: &[usize]) -> Result<TreatmentMatrix> {
        let mut entries = Vec::with_capacity(self.n_units * columns.len());
        for i in 0..self.n_units {
            for &t in columns {
                entries.push(self.row(i)[t]);
            }
        }
        TreatmentMatrix::new(self.n_units, columns.len().saturating_sub(1), entries)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n_units).map(|i| self.row(i).to_vec()).collect()
    }

    /// Copy of `self` with every unit set to `treated` from period `from` on.
    pub fn override_from(&self, from: usize, treated: bool) -> TreatmentMatrix {
        let mut w = self.clone();
        let width = self.horizon + 1;
        for i in 0..self.n_units {
            for t in from.max(1)..width {
                w.entries[i * width + t] = u8::from(treated);
            }
        }
        w
    }
}

impl TryFrom<MatrixRepr<u8>> for TreatmentMatrix {
    type Error = Error;

    fn try_from(repr: MatrixRepr<u8>) -> Result<Self> {
        let flat = rows_to_flat(&repr.rows, repr.horizon + 1)?;
        TreatmentMatrix::new(repr.n_units, repr.horizon, flat)
    }
}

impl From<TreatmentMatrix> for MatrixRepr<u8> {
    fn from(w: TreatmentMatrix) -> Self {
        MatrixRepr {
            n_units: w.n_units,
            horizon: w.horizon,
            rows: w.to_rows(),
        }
    }
}

impl OutcomePanel {
    pub fn new(n_units: usize, horizon: usize, entries: Vec<f64>) -> Result<Self> {
        check_shape(n_units, horizon, entries.len())?;
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "outcome at unit {}, period {} is not finite",
                pos / (horizon + 1),
                pos % (horizon + 1)
            )));
        }
        Ok(OutcomePanel {
            n_units,
            horizon,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let flat = rows_to_flat(rows, width)?;
        Self::new(rows.len(), width.saturating_sub(1), flat)
    }

    /// Builds a panel from per-period columns (each of length `n_units`).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let periods = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let mut entries = vec![0.0; n * periods];
        for (t, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Contract(format!(
                    "column {t} has {} units, expected {n}",
                    col.len()
                )));
            }
            for (i, &v) in col.iter().enumerate() {
                entries[i * periods + t] = v;
            }
        }
        Self::new(n, periods.saturating_sub(1), entries)
    }

    pub fn constant(n_units: usize, horizon: usize, value: f64) -> Result<Self> {
        Self::new(n_units, horizon, vec![value; n_units * (horizon + 1)])
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn periods(&self) -> usize {
        self.horizon + 1
    }

    #[inline]
    pub fn get(&self, unit: usize, t: usize) -> f64 {
        self.entries[unit * (self.horizon + 1) + t]
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        let w = self.horizon + 1;
        &self.entries[unit * w..(unit + 1) * w]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.n_units).map(|i| self.get(i, t)).collect()
    }

    pub fn column_mean(&self, t: usize) -> f64 {
        (0..self.n_units).map(|i| self.get(i, t)).sum::<f64>() / self.n_units as f64
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..=self.horizon).map(|t| self.column_mean(t)).collect()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn matches(&self, w: &TreatmentMatrix) -> bool {
        self.n_units == w.n_units && self.horizon == w.horizon
    }

    pub fn same_shape(&self, other: &OutcomePanel) -> bool {
        self.n_units == other.n_units && self.horizon == other.horizon
    }

    /// Applies `f(unit, t, value)` to every entry.
    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<OutcomePanel> {
        let w = self.horizon + 1;
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k / w, k % w, v))
            .collect();
        OutcomePanel::new(self.n_units, self.horizon, entries)
    }

    pub fn select_columns(&self, columns: &[usize]) -> Result<OutcomePanel> {
        let mut entries = Vec::with_capacity(self.n_units * columns.len());
        for i in 0..self.n_units {
            for &t in columns {
                entries.push(self.row(i)[t]);
            }
        }
        OutcomePanel::new(self.n_units, columns.len().saturating_sub(1), entries)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_units).map(|i| self.row(i).to_vec()).collect()
    }
}

impl TryFrom<MatrixRepr<f64>> for OutcomePanel {
    type Error = Error;

    fn try_from(repr: MatrixRepr<f64>) -> Result<Self> {
        let flat = rows_to_flat(&repr.rows, repr.horizon + 1)?;
        OutcomePanel::new(repr.n_units, repr.horizon, flat)
    }
}

impl From<OutcomePanel> for MatrixRepr<f64> {
    fn from(p: OutcomePanel) -> Self {
        MatrixRepr {
            n_units: p.n_units,
            horizon: p.horizon,
            rows: p.to_rows(),
        }
    }
}

/// Staged treatment design: stage `k` lasts `stage_lengths[k]` periods and
/// treats each unit with marginal probability `stage_probs[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub stage_lengths: Vec<usize>,
    pub stage_probs: Vec<f64>,
    /// Staggered adoption: once treated, a unit stays treated.
    #[serde(default)]
    pub monotone: bool,
}

impl ExperimentDesign {
    pub fn new(stage_lengths: Vec<usize>, stage_probs: Vec<f64>) -> Result<Self> {
        let d = ExperimentDesign {
            stage_lengths,
            stage_probs,
            monotone: false,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn monotone(mut self) -> Result<Self> {
        self.monotone = true;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_lengths.is_empty() {
            return Err(Error::Config("design has no stages".into()));
        }
        if self.stage_lengths.len() != self.stage_probs.len() {
            return Err(Error::Config(format!(
                "design has {} stage lengths but {} stage probabilities",
                self.stage_lengths.len(),
                self.stage_probs.len()
            )));
        }
        if let Some(k) = self.stage_lengths.iter().position(|&l| l == 0) {
            return Err(Error::Config(format!("stage {k} has zero length")));
        }
        if let Some(k) = self
            .stage_probs
            .iter()
            .position(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config(format!(
                "stage {k} probability {} outside [0, 1]",
                self.stage_probs[k]
            )));
        }
        if self.monotone && self.stage_probs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(
                "monotone rollout needs nondecreasing stage probabilities".into(),
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.stage_lengths.iter().sum()
    }

    /// Stage index of period `t >= 1`.
    pub fn stage_of(&self, t: usize) -> Option<usize> {
        if t == 0 {
            return None;
        }
        let mut end = 0;
        for (k, &len) in self.stage_lengths.iter().enumerate() {
            end += len;
            if t <= end {
                return Some(k);
            }
        }
        None
    }

    /// Marginal treatment probability at period `t` (0 at `t = 0`).
    pub fn prob_at(&self, t: usize) -> f64 {
        self.stage_of(t).map_or(0.0, |k| self.stage_probs[k])
    }

    pub fn probs_per_period(&self) -> Vec<f64> {
        (0..=self.horizon()).map(|t| self.prob_at(t)).collect()
    }

    /// Length of the final stage.
    pub fn last_stage_len(&self) -> usize {
        *self.stage_lengths.last().unwrap_or(&0)
    }
}

/// Draws a treatment matrix from `design` using the `treatment` stream of `seed`.
pub fn generate_staggered_design(
    n_units: usize,
    design: &ExperimentDesign,
    seed: u64,
) -> Result<TreatmentMatrix> {
    design.validate()?;
    if n_units == 0 {
        return Err(Error::Config("n_units must be positive".into()));
    }
    let horizon = design.horizon();
    let mut w = TreatmentMatrix::zeros(n_units, horizon);
    let mut rng = rng::stream(seed, rng::TREATMENT, &[]);
    let width = horizon + 1;
    if design.monotone {
        // Untreated units adopt at the start of each stage so that the
        // marginal treated fraction in stage k is stage_probs[k].
        let mut treated = vec![false; n_units];
        let mut prev = 0.0;
        let mut t = 1;
        for (&len, &p) in design.stage_lengths.iter().zip(&design.stage_probs) {
            let adopt = if prev >= 1.0 { 0.0 } else { (p - prev) / (1.0 - prev) };
            for flag in treated.iter_mut() {
                if !*flag && rng.random::<f64>() < adopt {
                    *flag = true;
                }
            }
            for s in t..t + len {
                for (i, &flag) in treated.iter().enumerate() {
                    w.entries[i * width + s] = u8::from(flag);
                }
            }
            t += len;
            prev = p;
        }
    } else {
        for t in 1..=horizon {
            let p = design.prob_at(t);
            for i in 0..n_units {
                w.entries[i * width + t] = u8::from(rng.random::<f64>() < p);
            }
        }
    }
    Ok(w)
}

/// A nonempty, sorted, duplicate-free subset of unit indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(mut indices: Vec<usize>, n_units: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Contract("batch must be nonempty".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("batch has duplicate unit ids".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n_units {
                return Err(Error::Index {
                    what: "batch unit",
                    index: last,
                    limit: n_units,
                });
            }
        }
        Ok(Batch { indices })
    }

    pub fn full(n_units: usize) -> Self {
        Batch {
            indices: (0..n_units).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn check_units(&self, n_units: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last >= n_units => Err(Error::Index {
                what: "batch unit",
                index: last,
                limit: n_units,
            }),
            _ => Ok(()),
        }
    }

    /// Per-period mean treatment over the batch.
    pub fn exposure_series(&self, w: &TreatmentMatrix) -> Result<Vec<f64>> {
        self.check_units(w.n_units())?;
        let n = self.len() as f64;
        Ok((0..=w.horizon())
            .map(|t| self.indices.iter().filter(|&&i| w.get(i, t)).count() as f64 / n)
            .collect())
    }

    /// Per-period mean outcome over the batch.
    pub fn outcome_series(&self, panel: &OutcomePanel) -> Result<Vec<f64>> {
        self.check_units(panel.n_units())?;
        let n = self.len() as f64;
        Ok((0..=panel.horizon())
            .map(|t| self.indices.iter().map(|&i| panel.get(i, t)).sum::<f64>() / n)
            .collect())
    }

    /// Mean of the units' treatment exposures.
    pub fn mean_exposure(&self, w: &TreatmentMatrix) -> Result<f64> {
        self.check_units(w.n_units())?;
        let total: f64 = self
            .indices
            .iter()
            .map(|&i| w.duration(i) as f64 / w.horizon() as f64)
            .sum();
        Ok(total / self.len() as f64)
    }
}

/// Mean outcome over the batch at period `t`.
pub fn batch_mean(panel: &OutcomePanel, batch: &Batch, t: usize) -> Result<f64> {
    if t > panel.horizon() {
        return Err(Error::Index {
            what: "period",
            index: t,
            limit: panel.periods(),
        });
    }
    batch.check_units(panel.n_units())?;
    let sum: f64 = batch.indices.iter().map(|&i| panel.get(i, t)).sum();
    Ok(sum / batch.len() as f64)
}

/// Average total treatment effect over the last `window` periods.
pub fn compute_tte(
    all_treat: &OutcomePanel,
    all_control: &OutcomePanel,
    window: usize,
) -> Result<f64> {
    if !all_treat.same_shape(all_control) {
        return Err(Error::Contract(format!(
            "panel shapes differ: ({}, {}) vs ({}, {})",
            all_treat.n_units(),
            all_treat.periods(),
            all_control.n_units(),
            all_control.periods()
        )));
    }
    let horizon = all_treat.horizon();
    if window == 0 || window > horizon {
        return Err(Error::Contract(format!(
            "TTE window {window} outside 1..={horizon}"
        )));
    }
    let mut total = 0.0;
    for t in horizon + 1 - window..=horizon {
        for i in 0..all_treat.n_units() {
            total += all_treat.get(i, t) - all_control.get(i, t);
        }
    }
    Ok(total / (window * all_treat.n_units()) as f64)
}

/// Fraction of periods `1..=T` in which `unit` is treated.
pub fn treatment_exposure(w: &TreatmentMatrix, unit: usize) -> Result<f64> {
    if unit >= w.n_units() {
        return Err(Error::Index {
            what: "unit",
            index: unit,
            limit: w.n_units(),
        });
    }
    Ok(w.duration(unit) as f64 / w.horizon() as f64)
}

fn csv_header(periods: usize) -> String {
    (0..periods)
        .map(|t| format!("t{t}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_csv_rows<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(what, e))?.clone();
    for (t, h) in headers.iter().enumerate() {
        if h.trim() != format!("t{t}") {
            return Err(Error::parse(
                what,
                format!("header column {t} is {h:?}, expected \"t{t}\""),
            ));
        }
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(what, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(t, field)| {
                field.trim().parse::<T>().map_err(|e| {
                    Error::parse(what, format!("row {}, column t{t}: {e}", line + 1))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

impl TreatmentMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.periods());
        out.push('\n');
        for i in 0..self.n_units {
            let row: Vec<String> = self.row(i).iter().map(u8::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<u8>> = parse_csv_rows(text, "treatment csv")?;
        Self::from_rows(&rows)
    }
}

impl OutcomePanel {
    /// CSV with one row per unit and shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.periods());
        out.push('\n');
        for i in 0..self.n_units {
            for (t, v) in self.row(i).iter().enumerate() {
                if t > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = parse_csv_rows(text, "panel csv")?;
        Self::from_rows(&rows)
    }
}

/// JSON envelope for a panel or treatment matrix with provenance metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: String,
    pub n_units: usize,
    pub periods: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<ExperimentDesign>,
    pub data: T,
}

impl Envelope<TreatmentMatrix> {
    pub fn treatment(w: TreatmentMatrix, seed: Option<u64>, design: Option<ExperimentDesign>) -> Self {
        Envelope {
            kind: "treatment_matrix".into(),
            n_units: w.n_units(),
            periods: w.periods(),
            seed,
            design,
            data: w,
        }
    }
}

impl Envelope<OutcomePanel> {
    pub fn outcomes(p: OutcomePanel, seed: Option<u64>, design: Option<ExperimentDesign>) -> Self {
        Envelope {
            kind: "outcome_panel".into(),
            n_units: p.n_units(),
            periods: p.periods(),
            seed,
            design,
            data: p,
        }
    }
}

/// Reads a treatment matrix from `.csv` or a JSON envelope.
pub fn read_treatment(path: &Path) -> Result<TreatmentMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_csv(path) {
        TreatmentMatrix::from_csv(&text)
    } else {
        let env: Envelope<TreatmentMatrix> =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        Ok(env.data)
    }
}

/// Reads an outcome panel from `.csv` or a JSON envelope.
pub fn read_panel(path: &Path) -> Result<OutcomePanel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_csv(path) {
        OutcomePanel::from_csv(&text)
    } else {
        let env: Envelope<OutcomePanel> =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        Ok(env.data)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(lengths: &[usize], probs: &[f64]) -> ExperimentDesign {
        ExperimentDesign::new(lengths.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn zero_probability_gives_all_control() {
        let w = generate_staggered_design(4, &design(&[3], &[0.0]), 1).unwrap();
        assert_eq!(w, TreatmentMatrix::zeros(4, 3));
    }

    #[test]
    fn unit_probability_treats_every_post_baseline_period() {
        let w = generate_staggered_design(4, &design(&[3], &[1.0]), 1).unwrap();
        for i in 0..4 {
            assert_eq!(w.row(i), &[0, 1, 1, 1]);
        }
    }

    #[test]
    fn stage_means_follow_probabilities() {
        let d = design(&[2, 2, 2], &[0.1, 0.2, 0.5]);
        let w = generate_staggered_design(10_000, &d, 42).unwrap();
        for (k, &p) in d.stage_probs.iter().enumerate() {
            for t in 1 + 2 * k..=2 + 2 * k {
                let m = w.column_mean(t);
                assert!((m - p).abs() < 0.02, "stage {k} period {t}: {m} vs {p}");
            }
        }
    }

    #[test]
    fn design_generation_is_deterministic() {
        let d = design(&[2, 3], &[0.3, 0.6]);
        assert_eq!(
            generate_staggered_design(50, &d, 9).unwrap(),
            generate_staggered_design(50, &d, 9).unwrap()
        );
        assert_ne!(
            generate_staggered_design(50, &d, 9).unwrap(),
            generate_staggered_design(50, &d, 10).unwrap()
        );
    }

    #[test]
    fn monotone_rollout_keeps_units_treated() {
        let d = design(&[3, 3, 3], &[0.2, 0.5, 0.8]).monotone().unwrap();
        let w = generate_staggered_design(5_000, &d, 3).unwrap();
        for i in 0..w.n_units() {
            let row = w.row(i);
            assert!(row.windows(2).skip(1).all(|p| p[1] >= p[0]), "unit {i}: {row:?}");
        }
        for (k, &p) in d.stage_probs.iter().enumerate() {
            let m = w.column_mean(1 + 3 * k);
            assert!((m - p).abs() < 0.03, "stage {k}: {m} vs {p}");
        }
    }

    #[test]
    fn invalid_designs_are_rejected() {
        assert!(matches!(
            ExperimentDesign::new(vec![], vec![]),
            Err(Error::Config(_))
        ));
        assert!(ExperimentDesign::new(vec![2], vec![0.1, 0.2]).is_err());
        assert!(ExperimentDesign::new(vec![2], vec![1.5]).is_err());
        assert!(design(&[1, 1], &[0.5, 0.2]).monotone().is_err());
    }

    #[test]
    fn batch_mean_examples() {
        let panel = OutcomePanel::constant(5, 3, 3.0).unwrap();
        let b = Batch::new(vec![1, 4], 5).unwrap();
        for t in 0..=3 {
            assert_eq!(batch_mean(&panel, &b, t).unwrap(), 3.0);
        }
        let panel =
            OutcomePanel::from_rows(&[vec![0.0, 1.0], vec![0.0, 2.0], vec![0.0, 3.0], vec![0.0, 4.0]])
                .unwrap();
        let b = Batch::new(vec![2, 0], 4).unwrap();
        assert_eq!(batch_mean(&panel, &b, 1).unwrap(), 2.0);
        assert_eq!(
            batch_mean(&panel, &Batch::full(4), 1).unwrap(),
            panel.column_mean(1)
        );
        assert!(matches!(
            batch_mean(&panel, &b, 2),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn batch_validation() {
        assert!(Batch::new(vec![], 3).is_err());
        assert!(Batch::new(vec![1, 1], 3).is_err());
        assert!(Batch::new(vec![3], 3).is_err());
        assert_eq!(Batch::new(vec![2, 0, 1], 3).unwrap().indices(), &[0, 1, 2]);
    }

    #[test]
    fn tte_examples() {
        let base = OutcomePanel::from_rows(&[vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(compute_tte(&base, &base, 2).unwrap(), 0.0);
        let shifted = base.map(|_, _, v| v + 1.0).unwrap();
        assert_eq!(compute_tte(&shifted, &base, 1).unwrap(), 1.0);
        assert_eq!(compute_tte(&shifted, &base, 2).unwrap(), 1.0);
        let treated = OutcomePanel::from_rows(&[vec![0.0, 2.0, 4.0], vec![0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(compute_tte(&treated, &base, 2).unwrap(), 1.0);
        let other = OutcomePanel::constant(3, 2, 0.0).unwrap();
        assert!(matches!(compute_tte(&treated, &other, 1), Err(Error::Contract(_))));
        assert!(compute_tte(&treated, &base, 3).is_err());
    }

    #[test]
    fn exposure_examples() {
        let mut w = TreatmentMatrix::zeros(2, 10);
        assert_eq!(treatment_exposure(&w, 0).unwrap(), 0.0);
        for t in 1..=10 {
            w.set(1, t, true).unwrap();
        }
        assert_eq!(treatment_exposure(&w, 1).unwrap(), 1.0);
        for t in 1..=10 {
            w.set(0, t, t <= 6).unwrap();
        }
        assert!((treatment_exposure(&w, 0).unwrap() - 0.6).abs() < 1e-15);
        assert!(treatment_exposure(&w, 2).is_err());
    }

    #[test]
    fn column_zero_is_enforced() {
        assert!(TreatmentMatrix::from_rows(&[vec![1, 0]]).is_err());
        let mut w = TreatmentMatrix::zeros(1, 2);
        assert!(w.set(0, 0, true).is_err());
    }

    #[test]
    fn non_finite_outcomes_are_rejected() {
        assert!(OutcomePanel::from_rows(&[vec![0.0, f64::NAN]]).is_err());
        assert!(OutcomePanel::from_rows(&[vec![0.0, f64::INFINITY]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = design(&[2, 2], &[0.3, 0.7]);
        let w = generate_staggered_design(6, &d, 5).unwrap();
        let text = w.to_csv();
        assert!(text.starts_with("t0,t1,t2,t3,t4\n"));
        assert_eq!(TreatmentMatrix::from_csv(&text).unwrap(), w);
        let panel = OutcomePanel::from_rows(&[vec![0.1, -2.5e-7], vec![1.0 / 3.0, 7.0]]).unwrap();
        assert_eq!(OutcomePanel::from_csv(&panel.to_csv()).unwrap(), panel);
        assert!(OutcomePanel::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn json_envelope_round_trip() {
        let d = design(&[2], &[0.5]);
        let w = generate_staggered_design(3, &d, 11).unwrap();
        let env = Envelope::treatment(w.clone(), Some(11), Some(d));
        let text = serde_json::to_string(&env).unwrap();
        let back: Envelope<TreatmentMatrix> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, env);
        let bad = text.replace("\"rows\":[[0", "\"rows\":[[1");
        assert!(serde_json::from_str::<Envelope<TreatmentMatrix>>(&bad).is_err());
    }
}
