//! Shared domain types: survival datasets, block layouts and block vectors,
//! plus CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw observation before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub features: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

/// Validation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Min-max rescale every feature column to `[0, 1]`.
    pub rescale: bool,
}

/// Right-censored survival data: `n` subjects, `p` raw features, the observed
/// times `Z = min(T, C)` and event indicators `Δ = 1(T <= C)`.
///
/// Features are stored column-major since every consumer walks one feature
/// at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    all_censored: bool,
}

impl SurvivalDataset {
    /// Builds a dataset from feature columns, checking every invariant.
    pub fn new(columns: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        let names = (0..columns.len()).map(|j| format!("x{j}")).collect();
        Self::with_names(columns, names, times, events)
    }

    pub fn with_names(
        columns: Vec<Vec<f64>>,
        names: Vec<String>,
        times: Vec<f64>,
        events: Vec<bool>,
    ) -> Result<Self> {
        let n = times.len();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if columns.is_empty() {
            return Err(Error::InvalidDataset("need at least one feature column".into()));
        }
        if names.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if events.len() != n {
            return Err(Error::ShapeMismatch(format!("{} events for {n} times", events.len())));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "feature column {j} has {} rows, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "feature", row: i, column: j });
            }
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFinite { what: "time", row: i, column: columns.len() });
            }
            if t < 0.0 {
                return Err(Error::NegativeTime(i));
            }
        }
        let all_censored = !events.iter().any(|&e| e);
        if all_censored {
            log::warn!("every subject is censored; fits on this dataset are degenerate");
        }
        Ok(Self { columns, names, times, events, all_censored })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    /// Warning flag: no event observed, the partial likelihood is undefined.
    pub fn all_censored(&self) -> bool {
        self.all_censored
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.n() as f64
    }

    /// Row subset in the given order. Any non-empty selection is allowed, a
    /// single held-out row included.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidDataset("empty row subset".into()));
        }
        if let Some(&i) = rows.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidArgument(format!("row {i} out of range for n = {}", self.n())));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let times = rows.iter().map(|&i| self.times[i]).collect();
        let events: Vec<bool> = rows.iter().map(|&i| self.events[i]).collect();
        let all_censored = !events.iter().any(|&e| e);
        Ok(Self { columns, names: self.names.clone(), times, events, all_censored })
    }

    /// Min-max rescales every column to `[0, 1]`; constant columns map to 0.
    pub fn rescaled(&self) -> Self {
        let columns = self.columns.iter().map(|c| rescale_column(c)).collect();
        Self { columns, ..self.clone() }
    }

    /// Reads the CSV format: a header row with `time`, `event` (0/1) and any
    /// number of feature columns.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let time_col = headers
            .iter()
            .position(|h| h.trim() == "time")
            .ok_or_else(|| Error::InvalidDataset("missing `time` column".into()))?;
        let event_col = headers
            .iter()
            .position(|h| h.trim() == "event")
            .ok_or_else(|| Error::InvalidDataset("missing `event` column".into()))?;
        let feature_cols: Vec<usize> =
            (0..headers.len()).filter(|&c| c != time_col && c != event_col).collect();
        let names = feature_cols.iter().map(|&c| headers[c].trim().to_string()).collect();

        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<f64> {
                record[c].trim().parse::<f64>().map_err(|_| {
                    Error::InvalidDataset(format!("row {i}, column {c}: cannot parse {:?}", &record[c]))
                })
            };
            let event = match record[event_col].trim() {
                "1" | "1.0" | "true" => true,
                "0" | "0.0" | "false" => false,
                other => {
                    return Err(Error::InvalidDataset(format!(
                        "row {i}: event must be 0 or 1, got {other:?}"
                    )))
                }
            };
            let features = feature_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
            rows.push(RawRow { features, time: parse(time_col)?, event });
        }
        let ds = validate_dataset(&rows, ValidateOptions::default())?;
        Ok(Self { names, ..ds })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Writes `time,event,<features...>` with shortest round-trip float formatting.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "event".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(self.p() + 2);
            rec.push(self.times[i].to_string());
            rec.push(if self.events[i] { "1" } else { "0" }.to_string());
            rec.extend(self.columns.iter().map(|c| c[i].to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}

fn rescale_column(c: &[f64]) -> Vec<f64> {
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        c.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; c.len()]
    }
}

/// Validates raw rows into a [`SurvivalDataset`].
pub fn validate_dataset(rows: &[RawRow], options: ValidateOptions) -> Result<SurvivalDataset> {
    let first = rows.first().ok_or_else(|| Error::InvalidDataset("no rows".into()))?;
    let p = first.features.len();
    let mut columns = vec![Vec::with_capacity(rows.len()); p];
    for (i, row) in rows.iter().enumerate() {
        if row.features.len() != p {
            return Err(Error::InvalidDataset(format!(
                "row {i} has {} features, expected {p}",
                row.features.len()
            )));
        }
        for (col, &v) in columns.iter_mut().zip(&row.features) {
            col.push(v);
        }
    }
    let times = rows.iter().map(|r| r.time).collect();
    let events = rows.iter().map(|r| r.event).collect();
    let ds = SurvivalDataset::new(columns, times, events)?;
    Ok(if options.rescale { ds.rescaled() } else { ds })
}

/// Block structure of a flat coefficient vector: block `j` holds the
/// `d_j + 1` coefficients of feature `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    /// Every block needs at least one entry. Size-one blocks only arise for
    /// constant features, whose coefficient the constraint pins to zero.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("block sizes must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total length `p + d`.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Start index of block `j`.
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    /// Index range of block `j` in the flat vector.
    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn check_block(&self, j: usize) -> Result<()> {
        if j < self.n_blocks() {
            Ok(())
        } else {
            Err(Error::BlockOutOfRange { index: j, blocks: self.n_blocks() })
        }
    }
}

/// A flat `p + d` coefficient vector with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    values: Vec<f64>,
    layout: BlockLayout,
}

impl BlockVector {
    pub fn new(values: Vec<f64>, layout: BlockLayout) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a layout of total size {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: BlockLayout) -> Self {
        Self { values: vec![0.0; layout.total()], layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block(&self, j: usize) -> Result<&[f64]> {
        block_slice(self, j)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.layout.n_blocks()).map(move |j| &self.values[self.layout.range(j)])
    }
}

/// Contiguous view of block `j`.
pub fn block_slice(v: &BlockVector, j: usize) -> Result<&[f64]> {
    v.layout.check_block(j)?;
    Ok(&v.values[v.layout.range(j)])
}
