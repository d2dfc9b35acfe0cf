//! End-to-end procedures: the full cut-point fit, screening, and the two
//! risk predictors compared on held-out data.

use crate::binarizer::{binarize_at_cutpoints, fit_bins, transform, BinningScheme, DEFAULT_BINS};
use crate::cox_loss::{DenseDesign, Design};
use crate::cutpoints::{extract_cutpoints, CutPointModel, DEFAULT_JUMP_TOLERANCE};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::prox::WeightVector;
use crate::selection::{
    cross_validate, gamma_grid, screen_features, CvConfig, CvMode, CvReport, ScreenedFeature,
};
use crate::solver::{fit, fit_continuous, refit_constrained, FitResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinacoxOptions {
    pub bins: usize,
    /// Fixed penalty; `None` selects it by cross-validation.
    pub gamma: Option<f64>,
    pub grid_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub jump_tolerance: f64,
}

impl Default for BinacoxOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            gamma: None,
            grid_size: 30,
            folds: 10,
            seed: 0,
            solver: SolverConfig::default(),
            jump_tolerance: DEFAULT_JUMP_TOLERANCE,
        }
    }
}

impl BinacoxOptions {
    fn cv_config(&self, mode: CvMode) -> CvConfig {
        CvConfig {
            folds: self.folds,
            seed: self.seed,
            solver: SolverConfig { record_trace: false, ..self.solver },
            jump_tolerance: self.jump_tolerance,
            mode,
        }
    }
}

/// A fitted model: penalized fit, extracted cut-points with their
/// constrained refit, and the CV report when the penalty was selected.
#[derive(Debug, Clone)]
pub struct BinacoxModel {
    pub scheme: BinningScheme,
    pub gamma: f64,
    pub fit: FitResult,
    pub cutpoints: CutPointModel,
    pub cv: Option<CvReport>,
}

/// Bins, selects γ (unless fixed), fits, extracts cut-points and refits on
/// the detected intervals.
pub fn fit_binacox(ds: &SurvivalDataset, opts: &BinacoxOptions) -> Result<BinacoxModel> {
    let scheme = fit_bins(ds, opts.bins)?;
    let design = transform(ds, &scheme)?;
    let (gamma, cv) = match opts.gamma {
        Some(g) if g >= 0.0 && g.is_finite() => (g, None),
        Some(g) => return Err(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {g}"))),
        None => {
            let grid = gamma_grid(&design, ds.times(), ds.events(), opts.grid_size)?;
            let report = cross_validate(ds, &scheme, &grid, &opts.cv_config(CvMode::Joint))?;
            (report.chosen_gamma(), Some(report))
        }
    };
    let weights = WeightVector::uniform(design.layout(), gamma)?;
    let result = fit(&design, ds.times(), ds.events(), &weights, &design.column_counts(), &opts.solver)?;
    let mut cutpoints = extract_cutpoints(&result.beta, &scheme, ds.names(), opts.jump_tolerance)?;
    let refit_design = binarize_at_cutpoints(ds, &cutpoints.cutpoints())?;
    let refit = refit_constrained(&refit_design, ds.times(), ds.events(), &opts.solver)?;
    cutpoints.attach_refit(&refit.beta);
    Ok(BinacoxModel { scheme, gamma, fit: result, cutpoints, cv })
}

/// Screening outcome: the shared γ and the ranked features.
#[derive(Debug, Clone)]
pub struct Screening {
    pub gamma: f64,
    pub cv: Option<CvReport>,
    pub ranked: Vec<ScreenedFeature>,
}

/// Ranks features by the total variation of their univariate fits. Without
/// a fixed γ, one is chosen by cross-validation on the pooled univariate
/// problems and shared by every feature.
pub fn screen(ds: &SurvivalDataset, opts: &BinacoxOptions, top_p: usize) -> Result<Screening> {
    let scheme = fit_bins(ds, opts.bins)?;
    let (gamma, cv) = match opts.gamma {
        Some(g) => (g, None),
        None => {
            // At β = 0 the joint gradient restricted to a block is the
            // univariate one, so the joint threshold covers every feature.
            let design = transform(ds, &scheme)?;
            let grid = gamma_grid(&design, ds.times(), ds.events(), opts.grid_size)?;
            let report = cross_validate(ds, &scheme, &grid, &opts.cv_config(CvMode::Univariate))?;
            (report.chosen_gamma(), Some(report))
        }
    };
    let ranked = screen_features(ds, &scheme, gamma, top_p, &opts.solver)?;
    Ok(Screening { gamma, cv, ranked })
}

/// Predicted log-risks on `test` of the constrained refit on `train` at the
/// given cut-points.
pub fn binarized_risk(
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    cutpoints: &[Vec<f64>],
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    let d_train = binarize_at_cutpoints(train, cutpoints)?;
    let d_test = binarize_at_cutpoints(test, cutpoints)?;
    let refit = refit_constrained(&d_train, train.times(), train.events(), solver)?;
    let mut f = vec![0.0; test.n()];
    d_test.linear_predictor_into(refit.beta.values(), &mut f);
    Ok(f)
}

/// Predicted log-risks on `test` of an unpenalized Cox model on the raw
/// features, standardized with the training means and deviations.
pub fn continuous_risk(train: &SurvivalDataset, test: &SurvivalDataset, solver: &SolverConfig) -> Result<Vec<f64>> {
    let mut tr_cols: Vec<Vec<f64>> = Vec::with_capacity(train.p());
    let mut te_cols: Vec<Vec<f64>> = Vec::with_capacity(train.p());
    for j in 0..train.p() {
        let c = train.column(j);
        let n = c.len() as f64;
        let mean = c.iter().sum::<f64>() / n;
        let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 0.0 };
        tr_cols.push(c.iter().map(|v| (v - mean) * scale).collect());
        te_cols.push(test.column(j).iter().map(|v| (v - mean) * scale).collect());
    }
    let sol = fit_continuous(&DenseDesign::new(tr_cols)?, train.times(), train.events(), solver)?;
    let mut f = vec![0.0; test.n()];
    for (col, b) in te_cols.iter().zip(&sol.beta) {
        for (fi, x) in f.iter_mut().zip(col) {
            *fi += b * x;
        }
    }
    Ok(f)
}

/// Seeded `train`/`test` row split with a `train_fraction` share of rows in
/// the training part.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n_train = ((n as f64) * train_fraction).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::InvalidArgument(format!("split of {n} rows leaves an empty or tiny part")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::c_index;
    use crate::simulation::{simulate, SimConfig};

    #[test]
    fn huge_gamma_gives_no_cutpoints() {
        let sim = simulate(&SimConfig { n: 300, p: 3, seed: 1, ..Default::default() }).unwrap();
        let opts = BinacoxOptions { gamma: Some(1e6), bins: 10, ..Default::default() };
        let m = fit_binacox(&sim.dataset, &opts).unwrap();
        assert!(m.cutpoints.k_hat().iter().all(|&k| k == 0));
        assert!(m.cv.is_none());
    }

    #[test]
    fn refit_levels_are_attached() {
        let sim = simulate(&SimConfig { n: 500, p: 2, sparse_fraction: 0.0, seed: 2, ..Default::default() }).unwrap();
        let opts = BinacoxOptions { gamma: Some(1e-3), bins: 10, ..Default::default() };
        let m = fit_binacox(&sim.dataset, &opts).unwrap();
        for f in &m.cutpoints.features {
            if f.k_hat > 0 {
                assert_eq!(f.refit.len(), f.k_hat + 1);
            }
        }
    }

    #[test]
    fn split_is_a_partition() {
        let (a, b) = train_test_split(10, 0.7, 3).unwrap();
        assert_eq!(a.len(), 7);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(train_test_split(10, 1.0, 3).is_err());
    }

    #[test]
    fn true_cutpoints_predict_well() {
        let sim = simulate(&SimConfig { n: 600, p: 3, sparse_fraction: 0.0, seed: 4, ..Default::default() }).unwrap();
        let (tr, te) = train_test_split(600, 0.7, 4).unwrap();
        let train = sim.dataset.subset(&tr).unwrap();
        let test = sim.dataset.subset(&te).unwrap();
        let f = binarized_risk(&train, &test, &sim.truth.mu_star, &SolverConfig::default()).unwrap();
        let c = c_index(&f, test.times(), test.events(), None).unwrap().c_index;
        assert!(c > 0.7, "{c}");
        let g = continuous_risk(&train, &test, &SolverConfig::default()).unwrap();
        assert!(c_index(&g, test.times(), test.events(), None).unwrap().c_index.is_finite());
    }
}
