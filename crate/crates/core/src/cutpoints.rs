//! From `β̂` to cut-points: active sets, de-noising of adjacent jumps, and
//! the mapping of jump positions to boundary values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binarizer::BinningScheme;
use crate::data::BlockVector;
use crate::error::{Error, Result};

/// Relative jump tolerance used by [`extract_cutpoints`] by default.
pub const DEFAULT_JUMP_TOLERANCE: f64 = 1e-8;

/// A jump between positions `index - 1` and `index` of a block (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub index: usize,
    pub amplitude: f64,
}

/// Positions `l >= 1` where `|β_l - β_{l-1}| > tolerance`.
pub fn active_set(block: &[f64], tolerance: f64) -> Vec<Jump> {
    (1..block.len())
        .filter_map(|l| {
            let amplitude = block[l] - block[l - 1];
            (amplitude.abs() > tolerance).then_some(Jump { index: l, amplitude })
        })
        .collect()
}

/// Keeps only the largest jump of every run of consecutive jump positions;
/// ties go to the smallest position.
pub fn denoise(jumps: &[Jump]) -> Vec<Jump> {
    let mut kept = Vec::new();
    let mut i = 0;
    while i < jumps.len() {
        let mut best = jumps[i];
        let mut k = i + 1;
        while k < jumps.len() && jumps[k].index == jumps[k - 1].index + 1 {
            if jumps[k].amplitude.abs() > best.amplitude.abs() {
                best = jumps[k];
            }
            k += 1;
        }
        kept.push(best);
        i = k;
    }
    kept
}

/// Detected cut-points of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCutPoints {
    pub name: String,
    pub cutpoints: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub k_hat: usize,
    /// Constrained refit levels on the cut-point intervals (`k_hat + 1`
    /// values), when a refit was run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refit: Vec<f64>,
}

/// Per-feature cut-point estimates; the exchange format shared by every
/// detection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPointModel {
    pub method: String,
    pub features: Vec<FeatureCutPoints>,
}

impl CutPointModel {
    pub fn cutpoints(&self) -> Vec<Vec<f64>> {
        self.features.iter().map(|f| f.cutpoints.clone()).collect()
    }

    pub fn k_hat(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.k_hat).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        for f in &model.features {
            if f.k_hat != f.cutpoints.len() || f.amplitudes.len() != f.cutpoints.len() {
                return Err(Error::InvalidArgument(format!("feature {}: inconsistent k_hat", f.name)));
            }
            if f.cutpoints.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("feature {}: cut-points not increasing", f.name)));
            }
        }
        Ok(model)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Attaches refit levels, block by block, to the features that carry
    /// cut-points (in feature order).
    pub fn attach_refit(&mut self, refit: &BlockVector) {
        let mut blocks = refit.blocks();
        for f in self.features.iter_mut().filter(|f| f.k_hat > 0) {
            if let Some(b) = blocks.next() {
                f.refit = b.to_vec();
            }
        }
    }
}

/// Cut-points of every feature: active set with tolerance relative to the
/// block's sup-norm (floored at one, so rounding noise in a near-zero block
/// is not read as jumps), de-noising, then jump position `l` maps to boundary
/// `l - 1`, the value at which the fitted step function changes level.
pub fn extract_cutpoints(
    beta: &BlockVector,
    scheme: &BinningScheme,
    names: &[String],
    jump_tolerance: f64,
) -> Result<CutPointModel> {
    if beta.layout() != scheme.layout() {
        return Err(Error::ShapeMismatch("coefficients do not match the binning scheme".into()));
    }
    if names.len() != scheme.p() {
        return Err(Error::ShapeMismatch(format!("{} names for {} features", names.len(), scheme.p())));
    }
    let features = beta
        .blocks()
        .zip(scheme.features())
        .zip(names)
        .map(|((block, bins), name)| {
            let sup = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let jumps = if bins.usable && sup > 0.0 { denoise(&active_set(block, jump_tolerance * sup.max(1.0))) } else { Vec::new() };
            FeatureCutPoints {
                name: name.clone(),
                cutpoints: jumps.iter().map(|j| bins.boundaries[j.index - 1]).collect(),
                amplitudes: jumps.iter().map(|j| j.amplitude).collect(),
                k_hat: jumps.len(),
                refit: Vec::new(),
            }
        })
        .collect();
    Ok(CutPointModel { method: "binacox".into(), features })
}
