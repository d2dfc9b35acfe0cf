//! Synthetic survival data with known cut-points: Toeplitz-correlated
//! Gaussian features, decile cut-points, centered step-function effects,
//! Weibull event times and geometric censoring tuned to a target rate.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binarizer::rational_quantile;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Bisection steps used to tune the censoring parameter.
pub const TUNING_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Toeplitz correlation `ρ^{|a-b|}`.
    pub rho: f64,
    /// Cut-points per signal feature.
    pub k_star: usize,
    /// Weibull scale.
    pub nu: f64,
    /// Weibull shape.
    pub shape: f64,
    pub censoring_rate: f64,
    pub sparse_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            p: 50,
            rho: 0.5,
            k_star: 2,
            nu: 2.0,
            shape: 0.1,
            censoring_rate: 0.3,
            sparse_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 2 || self.p < 1 {
            return bad(format!("need n >= 2 and p >= 1, got n = {}, p = {}", self.n, self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.nu > 0.0) || !(self.shape > 0.0) {
            return bad("Weibull scale and shape must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.censoring_rate) || !(0.0..=1.0).contains(&self.sparse_fraction) {
            return bad("censoring rate and sparse fraction must lie in [0, 1]".into());
        }
        if self.k_star > 9 {
            return bad(format!("at most 9 decile cut-points are available, got k_star = {}", self.k_star));
        }
        Ok(())
    }

    /// Same design with the seed of replicate `r`, derived from
    /// `(seed, r)` through its own generator stream.
    pub fn for_replicate(&self, r: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 << 32 | r);
        Self { seed: rng.next_u64(), ..*self }
    }

    fn stream(&self, which: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(which);
        rng
    }
}

const FEATURE_STREAM: u64 = 1;
const TRUTH_STREAM: u64 = 2;
const TIME_STREAM: u64 = 3;
const CENSOR_STREAM: u64 = 4;

/// True cut-points and coefficients. Features in `sparse_set` carry no
/// cut-point and a single zero coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mu_star: Vec<Vec<f64>>,
    pub beta_star: Vec<Vec<f64>>,
    pub sparse_set: Vec<usize>,
}

impl GroundTruth {
    pub fn p(&self) -> usize {
        self.mu_star.len()
    }

    /// `f(x_i) = Σ_j β*_{j, interval of x_ij}` with right-closed intervals.
    pub fn predictor(&self, columns: &[Vec<f64>]) -> Vec<f64> {
        let n = columns.first().map_or(0, Vec::len);
        let mut eta = vec![0.0; n];
        for ((col, mu), beta) in columns.iter().zip(&self.mu_star).zip(&self.beta_star) {
            for (e, &x) in eta.iter_mut().zip(col) {
                *e += beta[mu.partition_point(|&m| m < x)];
            }
        }
        eta
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        if t.beta_star.len() != t.mu_star.len() {
            return Err(Error::ShapeMismatch("mu_star and beta_star lengths differ".into()));
        }
        for (j, (mu, beta)) in t.mu_star.iter().zip(&t.beta_star).enumerate() {
            if beta.len() != mu.len() + 1 {
                return Err(Error::ShapeMismatch(format!("feature {j}: need one more coefficient than cut-points")));
            }
        }
        if t.sparse_set.iter().any(|&j| j >= t.mu_star.len()) {
            return Err(Error::ShapeMismatch("sparse_set index out of range".into()));
        }
        Ok(t)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `n × p` Gaussian features (column-major) with Toeplitz covariance.
pub fn gen_features(config: &SimConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let p = config.p;
    let sigma = DMatrix::from_fn(p, p, |a, b| config.rho.powi(a.abs_diff(b) as i32));
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("Toeplitz covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = config.stream(FEATURE_STREAM);
    let mut cols = vec![vec![0.0; config.n]; p];
    let mut z = vec![0.0; p];
    for i in 0..config.n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for (a, col) in cols.iter_mut().enumerate() {
            col[i] = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
        }
    }
    Ok(cols)
}

/// Cut-points drawn without replacement among the deciles of each column,
/// alternating-sign coefficients centered per block, and a sparse subset of
/// `round(r_s p)` features zeroed out.
pub fn gen_truth(columns: &[Vec<f64>], config: &SimConfig) -> Result<GroundTruth> {
    config.validate()?;
    if columns.len() != config.p {
        return Err(Error::ShapeMismatch(format!("{} columns for p = {}", columns.len(), config.p)));
    }
    let mut rng = config.stream(TRUTH_STREAM);
    let folded: Normal<f64> = Normal::new(1.0, 0.5).expect("valid normal");
    let mut mu_star = Vec::with_capacity(config.p);
    let mut beta_star = Vec::with_capacity(config.p);
    for col in columns {
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let mut deciles: Vec<f64> = (1..10).map(|u| rational_quantile(&sorted, u, 10)).collect();
        let (chosen, _) = deciles.partial_shuffle(&mut rng, config.k_star);
        let mut mu = chosen.to_vec();
        mu.sort_by(f64::total_cmp);
        mu.dedup();
        let c: Vec<f64> = (1..=mu.len() + 1)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * folded.sample(&mut rng).abs()
            })
            .collect();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        mu_star.push(mu);
        beta_star.push(c.iter().map(|v| v - mean).collect());
    }
    let n_sparse = (config.sparse_fraction * config.p as f64).round() as usize;
    let mut idx: Vec<usize> = (0..config.p).collect();
    let (picked, _) = idx.partial_shuffle(&mut rng, n_sparse);
    let mut sparse_set = picked.to_vec();
    sparse_set.sort_unstable();
    for &j in &sparse_set {
        mu_star[j].clear();
        beta_star[j] = vec![0.0];
    }
    Ok(GroundTruth { mu_star, beta_star, sparse_set })
}

/// Geometric censoring times on `{0, 1, 2, …}`: `⌊ln V / ln(1 - α)⌋`.
fn geometric(v: &[f64], alpha: f64) -> Vec<f64> {
    if alpha >= 1.0 {
        return vec![0.0; v.len()];
    }
    if alpha <= 0.0 {
        return vec![f64::INFINITY; v.len()];
    }
    let d = (-alpha).ln_1p();
    // `+ 0.0` maps -0 to 0.
    v.iter().map(|&u| (u.ln() / d).floor() + 0.0).collect()
}

fn censored_fraction(t: &[f64], c: &[f64]) -> f64 {
    t.iter().zip(c).filter(|(t, c)| c < t).count() as f64 / t.len() as f64
}

/// Survival outcome of a simulated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSurvival {
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    /// Tuned geometric parameter (0 when censoring is disabled).
    pub alpha: f64,
    pub censoring_rate: f64,
}

/// Weibull times `ν⁻¹ [-ln U exp(-η)]^{1/ς}` and geometric censoring whose
/// parameter is tuned by bisection on the drawn sample.
pub fn gen_survival(columns: &[Vec<f64>], truth: &GroundTruth, config: &SimConfig) -> Result<SimulatedSurvival> {
    config.validate()?;
    if columns.len() != truth.p() {
        return Err(Error::ShapeMismatch("features and truth disagree on p".into()));
    }
    let eta = truth.predictor(columns);
    let mut rng = config.stream(TIME_STREAM);
    let t: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let u = 1.0 - rng.random::<f64>();
            (-u.ln() * (-e).exp()).powf(1.0 / config.shape) / config.nu
        })
        .collect();
    if config.censoring_rate == 0.0 {
        return Ok(SimulatedSurvival { times: t, events: vec![true; eta.len()], alpha: 0.0, censoring_rate: 0.0 });
    }
    let mut rng = config.stream(CENSOR_STREAM);
    let v: Vec<f64> = (0..t.len()).map(|_| 1.0 - rng.random::<f64>()).collect();
    // The censored fraction is non-decreasing in α. Weibull times span many
    // orders of magnitude, so the search runs on ln α.
    let target = config.censoring_rate;
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), 0.0);
    let (mut best_alpha, mut best_gap) = (1.0, f64::INFINITY);
    for _ in 0..TUNING_STEPS {
        let mid = 0.5 * (lo + hi);
        let alpha = mid.exp();
        let rate = censored_fraction(&t, &geometric(&v, alpha));
        let gap = (rate - target).abs();
        if gap < best_gap {
            (best_alpha, best_gap) = (alpha, gap);
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best_gap > 0.02 {
        log::warn!("censoring tuner missed the target rate {target} by {best_gap:.3}");
    }
    let c = geometric(&v, best_alpha);
    let events: Vec<bool> = t.iter().zip(&c).map(|(t, c)| t <= c).collect();
    let times = t.iter().zip(&c).map(|(t, c)| t.min(*c)).collect();
    let censoring_rate = censored_fraction(&t, &c);
    Ok(SimulatedSurvival { times, events, alpha: best_alpha, censoring_rate })
}

/// A full simulated cohort.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: SurvivalDataset,
    pub truth: GroundTruth,
    pub alpha: f64,
}

pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let columns = gen_features(config)?;
    let truth = gen_truth(&columns, config)?;
    let surv = gen_survival(&columns, &truth, config)?;
    let dataset = SurvivalDataset::new(columns, surv.times, surv.events)?;
    Ok(Simulation { dataset, truth, alpha: surv.alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn feature_moments() {
        let cfg = SimConfig { n: 5000, p: 4, seed: 3, ..Default::default() };
        let x = gen_features(&cfg).unwrap();
        for j in 0..3 {
            assert!((corr(&x[j], &x[j + 1]) - 0.5).abs() < 0.05);
        }
        for col in &x {
            let m = col.iter().sum::<f64>() / 5000.0;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4999.0;
            assert!((v - 1.0).abs() < 0.05, "variance {v}");
        }
        let ind = gen_features(&SimConfig { rho: 0.0, ..cfg }).unwrap();
        assert!(corr(&ind[0], &ind[2]).abs() < 0.05);
    }

    #[test]
    fn truth_construction() {
        let cfg = SimConfig { n: 300, p: 40, k_star: 3, seed: 9, ..Default::default() };
        let x = gen_features(&cfg).unwrap();
        let truth = gen_truth(&x, &cfg).unwrap();
        assert_eq!(truth.sparse_set.len(), 8);
        for j in 0..cfg.p {
            let b = &truth.beta_star[j];
            assert!(b.iter().sum::<f64>().abs() < 1e-12);
            if truth.sparse_set.contains(&j) {
                assert!(truth.mu_star[j].is_empty());
                continue;
            }
            let mu = &truth.mu_star[j];
            assert_eq!(mu.len(), 3);
            assert!(mu.windows(2).all(|w| w[0] < w[1]));
            assert!(b.windows(2).all(|w| w[0] != w[1]));
        }
        assert!(gen_truth(&x, &SimConfig { k_star: 10, ..cfg }).is_err());
    }

    #[test]
    fn exponential_times_without_effects() {
        let cfg = SimConfig { n: 10_000, p: 1, nu: 1.0, shape: 1.0, censoring_rate: 0.0, sparse_fraction: 1.0, seed: 1, ..Default::default() };
        let x = gen_features(&cfg).unwrap();
        let truth = gen_truth(&x, &cfg).unwrap();
        let s = gen_survival(&x, &truth, &cfg).unwrap();
        let mean = s.times.iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!(s.events.iter().all(|&e| e));
    }

    #[test]
    fn censoring_is_tuned() {
        for seed in 0..5 {
            let cfg = SimConfig { n: 2000, seed, ..Default::default() };
            let sim = simulate(&cfg).unwrap();
            assert!((sim.dataset.censoring_rate() - 0.3).abs() <= 0.02, "seed {seed}");
        }
    }

    #[test]
    fn determinism_and_replicates() {
        let cfg = SimConfig { n: 200, p: 5, seed: 4, ..Default::default() };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.dataset.times(), b.dataset.times());
        assert_eq!(a.truth, b.truth);
        assert_ne!(cfg.for_replicate(0).seed, cfg.for_replicate(1).seed);
        assert_eq!(cfg.for_replicate(3).seed, cfg.for_replicate(3).seed);
    }

    #[test]
    fn truth_json_round_trip() {
        let cfg = SimConfig { n: 100, p: 6, seed: 2, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        assert_eq!(GroundTruth::from_json(&sim.truth.to_json().unwrap()).unwrap(), sim.truth);
        assert!(GroundTruth::from_json(r#"{"mu_star":[[0.1]],"beta_star":[[0.0]],"sparse_set":[]}"#).is_err());
    }

    #[test]
    fn higher_predictor_means_shorter_times() {
        let truth = GroundTruth { mu_star: vec![vec![0.0]], beta_star: vec![vec![-1.0, 1.0]], sparse_set: vec![] };
        let cfg = SimConfig { n: 5000, p: 1, shape: 1.0, censoring_rate: 0.0, seed: 5, ..Default::default() };
        let x = gen_features(&cfg).unwrap();
        let s = gen_survival(&x, &truth, &cfg).unwrap();
        let (mut hi, mut lo) = (Vec::new(), Vec::new());
        for (v, t) in x[0].iter().zip(&s.times) {
            if *v > 0.0 { hi.push(*t) } else { lo.push(*t) }
        }
        let med = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(med(&mut hi) < med(&mut lo));
    }
}
