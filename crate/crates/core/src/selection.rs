//! Penalty-strength selection: the γ path, V-fold cross-validation scored by
//! the held-out partial likelihood of a constrained refit, the
//! one-standard-error rule, and univariate total-variation screening.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binarizer::{binarize_at_cutpoints, transform, BinarizedDesign, BinningScheme};
use crate::cox_loss::CoxLoss;
use crate::cutpoints::{extract_cutpoints, DEFAULT_JUMP_TOLERANCE};
use crate::data::{BlockVector, SurvivalDataset};
use crate::error::{Error, Result};
use crate::prox::WeightVector;
use crate::solver::{fit_from, refit_constrained, SolverConfig};

/// Ratio between the last and first γ of the default path.
pub const GRID_DEPTH: f64 = 1e-3;

/// Smallest uniform γ for which `β = 0` solves the penalized problem.
///
/// `0` is optimal iff `-∇ℓ_n(0) - λ n_j` lies in the subdifferential of the
/// TV term for some `λ`, which holds exactly when every partial sum of
/// `g_j + λ n_j` (with `λ` making the full sum vanish) is bounded by `γ`.
pub fn gamma_max(design: &BinarizedDesign, times: &[f64], events: &[bool]) -> Result<f64> {
    let loss = CoxLoss::new(design, times, events)?;
    let g = loss.gradient(&vec![0.0; design.n_columns()]);
    let counts = design.column_counts();
    let layout = design.layout();
    let mut best = 0.0f64;
    for j in 0..layout.n_blocks() {
        let r = layout.range(j);
        let (gj, nj) = (&g[r.clone()], &counts[r]);
        let lam = -gj.iter().sum::<f64>() / nj.iter().sum::<f64>();
        let mut run = 0.0;
        for l in 0..gj.len().saturating_sub(1) {
            run += gj[l] + lam * nj[l];
            best = best.max(run.abs());
        }
    }
    Ok(best)
}

/// Log-spaced decreasing path from `γ_max` down to `γ_max · 1e-3`.
pub fn gamma_grid(design: &BinarizedDesign, times: &[f64], events: &[bool], size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {size}")));
    }
    let top = gamma_max(design, times, events)?;
    if !(top > 0.0) {
        return Err(Error::InvalidArgument("γ_max is zero: no feature carries a usable split".into()));
    }
    Ok(log_grid(top, size))
}

fn log_grid(top: f64, size: usize) -> Vec<f64> {
    let step = GRID_DEPTH.ln() / (size - 1) as f64;
    (0..size)
        .map(|k| if k == size - 1 { top * GRID_DEPTH } else { top * (step * k as f64).exp() })
        .collect()
}

/// Seeded fold labels in `0..folds`: a uniform shuffle of the rows, dealt
/// round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        labels[i] = k % folds;
    }
    labels
}

/// Index of the best mean score and of the largest γ (earliest grid entry)
/// whose mean lies within one standard error of it.
pub fn one_standard_error(means: &[f64], std_errors: &[f64]) -> Option<(usize, usize)> {
    let best = (0..means.len())
        .filter(|&k| means[k].is_finite())
        .min_by(|&a, &b| means[a].total_cmp(&means[b]))?;
    let threshold = means[best] + std_errors[best];
    let chosen = (0..=best).find(|&k| means[k] <= threshold).unwrap_or(best);
    Some((best, chosen))
}

/// Joint multivariate fits, or one fit per feature with scores summed over
/// features (used to pick the screening γ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CvMode {
    #[default]
    Joint,
    Univariate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub jump_tolerance: f64,
    pub mode: CvMode,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            solver: SolverConfig { record_trace: false, ..SolverConfig::default() },
            jump_tolerance: DEFAULT_JUMP_TOLERANCE,
            mode: CvMode::Joint,
        }
    }
}

/// Cross-validation curve and the selected penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub gammas: Vec<f64>,
    pub mean_scores: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `fold_scores[v][k]`: held-out score of fold `v` at `gammas[k]`;
    /// `None` for skipped folds.
    pub fold_scores: Vec<Option<Vec<f64>>>,
    pub best: usize,
    pub chosen: usize,
}

impl CvReport {
    pub fn chosen_gamma(&self) -> f64 {
        self.gammas[self.chosen]
    }

    pub fn skipped_folds(&self) -> usize {
        self.fold_scores.iter().filter(|s| s.is_none()).count()
    }

    /// CSV with columns `gamma,mean_score,std_error,chosen`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["gamma", "mean_score", "std_error", "chosen"])?;
        for k in 0..self.gammas.len() {
            w.write_record([
                self.gammas[k].to_string(),
                self.mean_scores[k].to_string(),
                self.std_errors[k].to_string(),
                u8::from(k == self.chosen).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format per-fold curve: `fold,gamma,score`.
    pub fn write_fold_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fold", "gamma", "score"])?;
        for (v, scores) in self.fold_scores.iter().enumerate() {
            if let Some(scores) = scores {
                for (g, s) in self.gammas.iter().zip(scores) {
                    w.write_record([v.to_string(), g.to_string(), s.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Held-out partial likelihood of the constrained refit at `cutpoints`.
fn refit_score(
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    cutpoints: &[Vec<f64>],
    solver: &SolverConfig,
) -> Result<f64> {
    let d_train = binarize_at_cutpoints(train, cutpoints)?;
    let d_test = binarize_at_cutpoints(test, cutpoints)?;
    let refit = refit_constrained(&d_train, train.times(), train.events(), solver)?;
    Ok(CoxLoss::new(&d_test, test.times(), test.events())?.value(refit.beta.values()))
}

/// Scores one training/test split along the whole path, warm-starting each
/// γ from the previous solution.
fn path_scores(
    design: &BinarizedDesign,
    scheme: &BinningScheme,
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    grid: &[f64],
    config: &CvConfig,
) -> Result<Vec<f64>> {
    let counts = design.column_counts();
    let names: Vec<String> = (0..scheme.p()).map(|j| j.to_string()).collect();
    let mut beta = BlockVector::zeros(design.layout().clone());
    let mut last: Option<(Vec<Vec<f64>>, f64)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let w = WeightVector::uniform(design.layout(), gamma)?;
        let res = fit_from(design, train.times(), train.events(), &w, &counts, Some(&beta), &config.solver)?;
        beta = res.beta;
        let cuts = extract_cutpoints(&beta, scheme, &names, config.jump_tolerance)?.cutpoints();
        let score = match &last {
            Some((prev, s)) if *prev == cuts => *s,
            _ => refit_score(train, test, &cuts, &config.solver)?,
        };
        last = Some((cuts, score));
        scores.push(score);
    }
    Ok(scores)
}

/// Restricts a scheme and a design to feature `j`.
fn single_feature(
    ds: &SurvivalDataset,
    scheme: &BinningScheme,
    j: usize,
) -> Result<(SurvivalDataset, BinningScheme)> {
    let sub = SurvivalDataset::with_names(
        vec![ds.column(j).to_vec()],
        vec![ds.names()[j].clone()],
        ds.times().to_vec(),
        ds.events().to_vec(),
    )?;
    let mut f = scheme.feature(j).clone();
    f.feature_index = 0;
    Ok((sub, BinningScheme::from_features(vec![f])?))
}

fn fold_scores(
    ds: &SurvivalDataset,
    scheme: &BinningScheme,
    labels: &[usize],
    fold: usize,
    grid: &[f64],
    config: &CvConfig,
) -> Result<Option<Vec<f64>>> {
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| labels[i] != fold);
    let train = ds.subset(&train_rows)?;
    let test = ds.subset(&test_rows)?;
    if train.n_events() == 0 || test.n_events() == 0 {
        log::warn!("fold {fold} skipped: no events in the training or held-out part");
        return Ok(None);
    }
    match config.mode {
        CvMode::Joint => {
            let design = transform(&train, scheme)?;
            path_scores(&design, scheme, &train, &test, grid, config).map(Some)
        }
        CvMode::Univariate => {
            let mut total = vec![0.0; grid.len()];
            for j in 0..ds.p() {
                if !scheme.feature(j).usable {
                    continue;
                }
                let (tr, sj) = single_feature(&train, scheme, j)?;
                let (te, _) = single_feature(&test, scheme, j)?;
                let design = transform(&tr, &sj)?;
                let s = path_scores(&design, &sj, &tr, &te, grid, config)?;
                total.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            }
            Ok(Some(total))
        }
    }
}

/// V-fold cross-validation over `grid` (decreasing γ). Each fold fits the
/// path on its training part, extracts cut-points, refits with the
/// constraint only, and scores the refit by the held-out `ℓ_n`. The chosen γ
/// follows the one-standard-error rule.
pub fn cross_validate(
    ds: &SurvivalDataset,
    scheme: &BinningScheme,
    grid: &[f64],
    config: &CvConfig,
) -> Result<CvReport> {
    let folds = config.folds;
    if folds < 2 || folds > ds.n() {
        return Err(Error::InvalidArgument(format!("need 2 <= folds <= n, got {folds}")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument("γ grid must be non-empty and strictly decreasing".into()));
    }
    let labels = fold_assignment(ds.n(), folds, config.seed);
    let fold_scores: Vec<Option<Vec<f64>>> = (0..folds)
        .into_par_iter()
        .map(|v| fold_scores(ds, scheme, &labels, v, grid, config))
        .collect::<Result<_>>()?;
    let used: Vec<&Vec<f64>> = fold_scores.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::AllFoldsSkipped);
    }
    let k = used.len() as f64;
    let mut mean_scores = Vec::with_capacity(grid.len());
    let mut std_errors = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let mean = used.iter().map(|s| s[g]).sum::<f64>() / k;
        let var = if used.len() > 1 {
            used.iter().map(|s| (s[g] - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        mean_scores.push(mean);
        std_errors.push((var / k).sqrt());
    }
    let (best, chosen) = one_standard_error(&mean_scores, &std_errors)
        .ok_or_else(|| Error::InvalidArgument("cross-validation produced no finite score".into()))?;
    Ok(CvReport { gammas: grid.to_vec(), mean_scores, std_errors, fold_scores, best, chosen })
}

/// A screened feature and its total-variation score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenedFeature {
    pub feature: usize,
    pub score: f64,
}

/// Fits every feature on its own at penalty `gamma` and ranks features by
/// `‖β̂_{j,•}‖_TV`, returning the `top_p` best.
pub fn screen_features(
    ds: &SurvivalDataset,
    scheme: &BinningScheme,
    gamma: f64,
    top_p: usize,
    solver: &SolverConfig,
) -> Result<Vec<ScreenedFeature>> {
    if top_p > ds.p() {
        return Err(Error::InvalidArgument(format!("top_p = {top_p} exceeds p = {}", ds.p())));
    }
    let mut scored: Vec<ScreenedFeature> = (0..ds.p())
        .into_par_iter()
        .map(|j| -> Result<ScreenedFeature> {
            if !scheme.feature(j).usable {
                return Ok(ScreenedFeature { feature: j, score: 0.0 });
            }
            let (sub, sj) = single_feature(ds, scheme, j)?;
            let design = transform(&sub, &sj)?;
            let w = WeightVector::uniform(design.layout(), gamma)?;
            let res = fit_from(&design, sub.times(), sub.events(), &w, &design.column_counts(), None, solver)?;
            let b = res.beta.values();
            let score = b.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            Ok(ScreenedFeature { feature: j, score })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.feature.cmp(&b.feature)));
    scored.truncate(top_p);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binarizer::fit_bins;
    use crate::solver::fit;
    use rand::{Rng, SeedableRng};

    fn toy(seed: u64, n: usize, p: usize, effect: f64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let times = (0..n)
            .map(|i| {
                let eta = if cols[0][i] > 0.5 { effect } else { -effect };
                -rng.random::<f64>().ln() * (-eta).exp()
            })
            .collect();
        let events = (0..n).map(|_| rng.random_bool(0.8)).collect();
        SurvivalDataset::new(cols, times, events).unwrap()
    }

    #[test]
    fn grid_shape() {
        let ds = toy(1, 200, 2, 1.0);
        let design = transform(&ds, &fit_bins(&ds, 10).unwrap()).unwrap();
        let g = gamma_grid(&design, ds.times(), ds.events(), 30).unwrap();
        assert_eq!(g.len(), 30);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        let two = gamma_grid(&design, ds.times(), ds.events(), 2).unwrap();
        assert_eq!(two[0], g[0]);
        assert!((two[1] - g[0] / 1000.0).abs() < 1e-15 * g[0]);
        assert!(gamma_grid(&design, ds.times(), ds.events(), 1).is_err());
    }

    #[test]
    fn gamma_max_is_the_zero_threshold() {
        let ds = toy(2, 300, 3, 0.8);
        let scheme = fit_bins(&ds, 12).unwrap();
        let design = transform(&ds, &scheme).unwrap();
        let top = gamma_max(&design, ds.times(), ds.events()).unwrap();
        let counts = design.column_counts();
        let names: Vec<String> = (0..3).map(|j| j.to_string()).collect();
        let config = SolverConfig::default();
        let at = fit(&design, ds.times(), ds.events(), &WeightVector::uniform(design.layout(), top).unwrap(), &counts, &config)
            .unwrap();
        let model = extract_cutpoints(&at.beta, &scheme, &names, DEFAULT_JUMP_TOLERANCE).unwrap();
        assert!(model.k_hat().iter().all(|&k| k == 0));
        // Bisection oracle: just below the threshold something moves.
        let (mut lo, mut hi) = (0.0, 2.0 * top);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let w = WeightVector::uniform(design.layout(), mid).unwrap();
            let r = fit(&design, ds.times(), ds.events(), &w, &counts, &config).unwrap();
            let zero = r.beta.values().iter().all(|v| v.abs() < 1e-10);
            if zero {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((hi - top).abs() <= 0.01 * top, "bisection {hi} vs closed form {top}");
    }

    #[test]
    fn one_se_rule() {
        let means = [3.0, 2.0, 1.5, 1.0, 1.2];
        let ses = [0.1, 0.1, 0.6, 0.2, 0.1];
        assert_eq!(one_standard_error(&means, &ses), Some((3, 3)));
        let ses = [0.1, 0.1, 0.1, 0.6, 0.1];
        assert_eq!(one_standard_error(&means, &ses), Some((3, 2)));
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(103, 10, 4);
        assert_eq!(a, fold_assignment(103, 10, 4));
        assert_ne!(a, fold_assignment(103, 10, 5));
        for v in 0..10 {
            let c = a.iter().filter(|&&l| l == v).count();
            assert!(c == 10 || c == 11);
        }
    }

    #[test]
    fn cv_on_a_strong_split() {
        let ds = toy(3, 400, 2, 1.0);
        let scheme = fit_bins(&ds, 10).unwrap();
        let design = transform(&ds, &scheme).unwrap();
        let grid = gamma_grid(&design, ds.times(), ds.events(), 12).unwrap();
        let config = CvConfig { folds: 5, seed: 1, ..Default::default() };
        let rep = cross_validate(&ds, &scheme, &grid, &config).unwrap();
        assert!(rep.chosen <= rep.best);
        assert!(rep.mean_scores.iter().all(|s| s.is_finite()));
        // Far above every fold's threshold the refit is the null model.
        let mut tall = vec![50.0 * grid[0]];
        tall.extend_from_slice(&grid[..3]);
        let high = cross_validate(&ds, &scheme, &tall, &config).unwrap();
        let labels = fold_assignment(ds.n(), 5, 1);
        for (v, scores) in high.fold_scores.iter().enumerate() {
            let test_rows: Vec<usize> = (0..ds.n()).filter(|&i| labels[i] == v).collect();
            let test = ds.subset(&test_rows).unwrap();
            let null = CoxLoss::new(&BinarizedDesign::empty(test.n()), test.times(), test.events()).unwrap().value(&[]);
            assert!((scores.as_ref().unwrap()[0] - null).abs() < 1e-12);
        }
        // Reproducible.
        assert_eq!(cross_validate(&ds, &scheme, &grid, &config).unwrap(), rep);
        let mut out = Vec::new();
        rep.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 13);
    }

    #[test]
    fn leave_one_out_runs() {
        let ds = toy(4, 24, 1, 1.0);
        let scheme = fit_bins(&ds, 4).unwrap();
        let design = transform(&ds, &scheme).unwrap();
        let grid = gamma_grid(&design, ds.times(), ds.events(), 4).unwrap();
        let config = CvConfig { folds: 24, ..Default::default() };
        let rep = cross_validate(&ds, &scheme, &grid, &config).unwrap();
        assert!(rep.skipped_folds() > 0, "censored held-out singletons are skipped");
        assert!(rep.mean_scores.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn all_censored_folds_are_an_error() {
        let mut ds = toy(5, 20, 1, 1.0);
        let events: Vec<bool> = (0..20).map(|i| i == 0).collect();
        ds = SurvivalDataset::new(ds.columns().to_vec(), ds.times().to_vec(), events).unwrap();
        let scheme = fit_bins(&ds, 4).unwrap();
        let config = CvConfig { folds: 20, ..Default::default() };
        let err = cross_validate(&ds, &scheme, &[1.0, 0.5], &config).unwrap_err();
        assert!(matches!(err, Error::AllFoldsSkipped));
    }

    #[test]
    fn screening_ranks_signal_first_and_duplicates_tie() {
        let base = toy(6, 300, 3, 1.0);
        let mut cols = base.columns().to_vec();
        cols.push(cols[0].clone());
        let ds = SurvivalDataset::new(cols, base.times().to_vec(), base.events().to_vec()).unwrap();
        let scheme = fit_bins(&ds, 10).unwrap();
        let design = transform(&ds, &scheme).unwrap();
        let gamma = 0.2 * gamma_max(&design, ds.times(), ds.events()).unwrap();
        let ranked = screen_features(&ds, &scheme, gamma, 4, &SolverConfig::default()).unwrap();
        assert_eq!(ranked[0].feature, 0);
        assert_eq!(ranked[1].feature, 3);
        assert_eq!(ranked[0].score, ranked[1].score);
        assert!(screen_features(&ds, &scheme, gamma, 5, &SolverConfig::default()).is_err());
    }
}
