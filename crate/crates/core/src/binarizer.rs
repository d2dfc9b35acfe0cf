//! Quantile one-hot encoding of continuous features.
//!
//! Feature `j` is cut at interior boundaries `μ_{j,1} < … < μ_{j,d_j}` into
//! `d_j + 1` right-closed intervals `(μ_{j,l-1}, μ_{j,l}]`, with the outer
//! intervals open-ended. Each row activates exactly one column per block.

use serde::{Deserialize, Serialize};

use crate::data::{BlockLayout, SurvivalDataset};
use crate::error::{Error, Result};

/// Default number of intervals per feature.
pub const DEFAULT_BINS: usize = 50;

/// Empirical quantile of order `alpha`: the value at 1-based position
/// `ceil(alpha * n)` of the sorted sample (position 1 for `alpha = 0`).
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let pos = (alpha * n as f64).ceil() as usize;
    sorted[pos.clamp(1, n) - 1]
}

/// Same convention as [`empirical_quantile`] for the rational order `num / den`,
/// computed in integer arithmetic so that `l / (d + 1)` grids are exact.
pub fn rational_quantile(sorted: &[f64], num: usize, den: usize) -> f64 {
    let n = sorted.len();
    let pos = (num * n).div_ceil(den);
    sorted[pos.clamp(1, n) - 1]
}

/// Bins of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub feature_index: usize,
    pub boundaries: Vec<f64>,
    pub counts: Vec<usize>,
    /// False for constant features, which carry a single bin and cannot
    /// hold a cut-point.
    #[serde(default = "default_true")]
    pub usable: bool,
}

fn default_true() -> bool {
    true
}

impl FeatureBins {
    pub fn n_bins(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Interval index of `x`; values beyond the outer boundaries clamp to the
    /// edge bins.
    pub fn bin_of(&self, x: f64) -> usize {
        bin_index(&self.boundaries, x)
    }
}

/// Index of the right-closed interval of `boundaries` containing `x`.
pub fn bin_index(boundaries: &[f64], x: f64) -> usize {
    boundaries.partition_point(|&b| b < x)
}

/// Per-feature quantile boundaries and the resulting block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningScheme {
    features: Vec<FeatureBins>,
    layout: BlockLayout,
}

impl BinningScheme {
    pub fn from_features(features: Vec<FeatureBins>) -> Result<Self> {
        for f in &features {
            if f.counts.len() != f.n_bins() {
                return Err(Error::ShapeMismatch(format!(
                    "feature {}: {} counts for {} bins",
                    f.feature_index,
                    f.counts.len(),
                    f.n_bins()
                )));
            }
            if f.boundaries.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "feature {}: boundaries must be strictly increasing",
                    f.feature_index
                )));
            }
        }
        let layout = BlockLayout::new(features.iter().map(FeatureBins::n_bins).collect())?;
        Ok(Self { features, layout })
    }

    pub fn features(&self) -> &[FeatureBins] {
        &self.features
    }

    pub fn feature(&self, j: usize) -> &FeatureBins {
        &self.features[j]
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn p(&self) -> usize {
        self.features.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.features)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_features(serde_json::from_str(text)?)
    }
}

/// Fits quantile bins with the same requested count for every feature.
pub fn fit_bins(ds: &SurvivalDataset, bins: usize) -> Result<BinningScheme> {
    fit_bins_per_feature(ds, &vec![bins; ds.p()])
}

/// Fits quantile bins with `bins[j]` requested intervals for feature `j`.
///
/// Boundaries sit at the quantiles of order `l / bins[j]`. Tied quantiles are
/// merged, and a boundary equal to the column maximum is dropped since it
/// would leave the last interval empty, so the effective count can be lower
/// than requested.
pub fn fit_bins_per_feature(ds: &SurvivalDataset, bins: &[usize]) -> Result<BinningScheme> {
    if bins.len() != ds.p() {
        return Err(Error::ShapeMismatch(format!("{} bin counts for {} features", bins.len(), ds.p())));
    }
    if let Some(&b) = bins.iter().find(|&&b| b < 2) {
        return Err(Error::InvalidArgument(format!("at least 2 bins required, got {b}")));
    }
    let features = ds
        .columns()
        .iter()
        .zip(bins)
        .enumerate()
        .map(|(j, (col, &b))| fit_feature(j, col, b))
        .collect();
    BinningScheme::from_features(features)
}

fn fit_feature(feature_index: usize, column: &[f64], bins: usize) -> FeatureBins {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().unwrap();
    let mut boundaries: Vec<f64> = Vec::with_capacity(bins - 1);
    for l in 1..bins {
        let q = rational_quantile(&sorted, l, bins);
        if q < max && boundaries.last().is_none_or(|&last| q > last) {
            boundaries.push(q);
        }
    }
    let mut counts = vec![0usize; boundaries.len() + 1];
    for &x in column {
        counts[bin_index(&boundaries, x)] += 1;
    }
    let usable = !boundaries.is_empty();
    if !usable {
        log::warn!("feature {feature_index} is constant; it gets a single bin");
    }
    FeatureBins { feature_index, boundaries, counts, usable }
}

/// Sparse one-hot design: row `i` activates flat column `index(j, i)` in block
/// `j`. Indices are stored block-major and already include block offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedDesign {
    n: usize,
    layout: BlockLayout,
    indices: Vec<u32>,
    feature_of_block: Vec<usize>,
}

impl BinarizedDesign {
    /// Builds a design from per-block local bin indices (`bins[j][i]`).
    pub fn from_bins(layout: BlockLayout, bins: &[Vec<usize>], feature_of_block: Vec<usize>) -> Result<Self> {
        if bins.len() != layout.n_blocks() || feature_of_block.len() != layout.n_blocks() {
            return Err(Error::ShapeMismatch(format!(
                "{} bin columns for {} blocks",
                bins.len(),
                layout.n_blocks()
            )));
        }
        let n = bins.first().map_or(0, Vec::len);
        let mut indices = Vec::with_capacity(n * bins.len());
        for (j, col) in bins.iter().enumerate() {
            if col.len() != n {
                return Err(Error::ShapeMismatch("ragged bin columns".into()));
            }
            let size = layout.sizes()[j];
            let off = layout.offset(j);
            for &b in col {
                if b >= size {
                    return Err(Error::ShapeMismatch(format!("bin {b} out of range for block {j}")));
                }
                indices.push((off + b) as u32);
            }
        }
        Ok(Self { n, layout, indices, feature_of_block })
    }

    /// Design with no columns for `n` rows (the null model).
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            layout: BlockLayout::new(Vec::new()).unwrap(),
            indices: Vec::new(),
            feature_of_block: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_blocks(&self) -> usize {
        self.layout.n_blocks()
    }

    pub fn n_columns(&self) -> usize {
        self.layout.total()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Raw feature index behind each block.
    pub fn feature_of_block(&self) -> &[usize] {
        &self.feature_of_block
    }

    /// Flat active column of every row in block `j`.
    pub fn block_indices(&self, j: usize) -> &[u32] {
        &self.indices[j * self.n..(j + 1) * self.n]
    }

    /// Local (within-block) bin of row `i` in block `j`.
    pub fn bin(&self, i: usize, j: usize) -> usize {
        self.indices[j * self.n + i] as usize - self.layout.offset(j)
    }

    /// Number of rows falling in every column, i.e. the `n_{j,l}`.
    pub fn column_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_columns()];
        for &c in &self.indices {
            counts[c as usize] += 1.0;
        }
        counts
    }

    /// Restriction to a subset of rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * self.n_blocks());
        for j in 0..self.n_blocks() {
            let col = self.block_indices(j);
            indices.extend(rows.iter().map(|&i| col[i]));
        }
        Self {
            n: rows.len(),
            layout: self.layout.clone(),
            indices,
            feature_of_block: self.feature_of_block.clone(),
        }
    }

    /// Dense 0/1 expansion, row-major `n × (p + d)`. Test and debugging aid.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_columns()]; self.n];
        for j in 0..self.n_blocks() {
            for (i, &c) in self.block_indices(j).iter().enumerate() {
                dense[i][c as usize] = 1.0;
            }
        }
        dense
    }
}

/// Encodes `ds` with a fitted scheme. Values outside the training range clamp
/// to the edge bins.
pub fn transform(ds: &SurvivalDataset, scheme: &BinningScheme) -> Result<BinarizedDesign> {
    if ds.p() != scheme.p() {
        return Err(Error::ShapeMismatch(format!(
            "scheme has {} features, dataset has {}",
            scheme.p(),
            ds.p()
        )));
    }
    let bins: Vec<Vec<usize>> = scheme
        .features()
        .iter()
        .zip(ds.columns())
        .map(|(f, col)| col.iter().map(|&x| f.bin_of(x)).collect())
        .collect();
    BinarizedDesign::from_bins(scheme.layout().clone(), &bins, (0..ds.p()).collect())
}

/// Encodes `ds` at user-supplied cut-points. Features without cut-points
/// contribute no block.
pub fn binarize_at_cutpoints(ds: &SurvivalDataset, cutpoints: &[Vec<f64>]) -> Result<BinarizedDesign> {
    if cutpoints.len() != ds.p() {
        return Err(Error::ShapeMismatch(format!(
            "{} cut-point sets for {} features",
            cutpoints.len(),
            ds.p()
        )));
    }
    let mut sizes = Vec::new();
    let mut bins = Vec::new();
    let mut features = Vec::new();
    for (j, cuts) in cutpoints.iter().enumerate() {
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!("cut-points of feature {j} are not increasing")));
        }
        if cuts.is_empty() {
            continue;
        }
        sizes.push(cuts.len() + 1);
        bins.push(ds.column(j).iter().map(|&x| bin_index(cuts, x)).collect());
        features.push(j);
    }
    let layout = BlockLayout::new(sizes)?;
    if features.is_empty() {
        return Ok(BinarizedDesign::empty(ds.n()));
    }
    BinarizedDesign::from_bins(layout, &bins, features)
}
