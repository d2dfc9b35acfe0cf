//! Univariate multiple-testing cut-point selection: a log-rank test at every
//! candidate threshold of a feature, minimal p-value selection, and
//! Bonferroni or Lausen–Schumacher correction. Detects at most one
//! cut-point per feature.

use std::io::Write;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::binarizer::{empirical_quantile, BinningScheme};
use crate::cutpoints::{CutPointModel, FeatureCutPoints};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Quantile band holding the candidate thresholds.
pub const BAND: (f64, f64) = (0.1, 0.9);

/// Two-sample log-rank test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRank {
    /// `U² / V`.
    pub statistic: f64,
    /// `U / sqrt(V)`, positive when group 1 has excess events.
    pub z: f64,
    pub p_value: f64,
    /// Zero variance: every event fell in a single risk configuration.
    pub degenerate: bool,
}

/// Subjects sorted by time, with tie groups, shared by every test run on the
/// same outcome.
#[derive(Debug, Clone)]
pub struct LogRankContext {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order`, ascending time.
    groups: Vec<(usize, usize)>,
    events: Vec<bool>,
}

impl LogRankContext {
    pub fn new(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::ShapeMismatch(format!("{} events for {} times", events.len(), times.len())));
        }
        if !events.iter().any(|&e| e) {
            return Err(Error::NoEvents);
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && times[order[end]] == times[order[start]] {
                end += 1;
            }
            groups.push((start, end));
            start = end;
        }
        Ok(Self { order, groups, events: events.to_vec() })
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Log-rank test of `group` (true = group 1) against its complement.
    pub fn test(&self, group: &[bool]) -> Result<LogRank> {
        if group.len() != self.n() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} subjects", group.len(), self.n())));
        }
        let n1 = group.iter().filter(|&&g| g).count();
        if n1 == 0 || n1 == self.n() {
            return Err(Error::EmptySet("log-rank group"));
        }
        let mut at_risk = self.n() as f64;
        let mut at_risk1 = n1 as f64;
        let (mut u, mut v) = (0.0, 0.0);
        for &(start, end) in &self.groups {
            let (mut d, mut d1, mut r1) = (0.0, 0.0, 0.0);
            for &i in &self.order[start..end] {
                if group[i] {
                    r1 += 1.0;
                }
                if self.events[i] {
                    d += 1.0;
                    if group[i] {
                        d1 += 1.0;
                    }
                }
            }
            if d > 0.0 {
                let frac = at_risk1 / at_risk;
                u += d1 - d * frac;
                if at_risk > 1.0 {
                    v += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
                }
            }
            at_risk -= (end - start) as f64;
            at_risk1 -= r1;
        }
        if !(v > 0.0) {
            return Ok(LogRank { statistic: 0.0, z: 0.0, p_value: 1.0, degenerate: true });
        }
        let statistic = u * u / v;
        Ok(LogRank { statistic, z: u / v.sqrt(), p_value: chi2_1_upper(statistic), degenerate: false })
    }
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_upper(x: f64) -> f64 {
    erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

/// Two-sample log-rank test of `group` against its complement.
pub fn logrank_statistic(times: &[f64], events: &[bool], group: &[bool]) -> Result<LogRank> {
    LogRankContext::new(times, events)?.test(group)
}

/// Where candidate thresholds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanGrid {
    /// Every observed value inside the quantile band.
    All,
    /// The binning-scheme boundaries inside the band.
    Scheme,
}

impl std::str::FromStr for ScanGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "scheme" => Ok(Self::Scheme),
            _ => Err(Error::InvalidArgument(format!("unknown grid `{s}` (expected all or scheme)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub cutpoint: f64,
    pub test: LogRank,
}

/// Candidate thresholds of one feature with their tests. `empty_band` flags
/// a band without a usable threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub candidates: Vec<Candidate>,
    pub empty_band: bool,
}

/// Tests `{x <= g}` against `{x > g}` for every candidate `g` of the band.
/// `boundaries` is required for [`ScanGrid::Scheme`].
pub fn mt_scan(
    column: &[f64],
    ctx: &LogRankContext,
    grid: ScanGrid,
    boundaries: Option<&[f64]>,
) -> Result<Scan> {
    if column.len() != ctx.n() {
        return Err(Error::ShapeMismatch(format!("{} values for {} subjects", column.len(), ctx.n())));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (empirical_quantile(&sorted, BAND.0), empirical_quantile(&sorted, BAND.1));
    let max = *sorted.last().expect("non-empty column");
    let mut cands: Vec<f64> = match grid {
        ScanGrid::All => sorted,
        ScanGrid::Scheme => boundaries
            .ok_or_else(|| Error::InvalidArgument("scheme grid needs bin boundaries".into()))?
            .to_vec(),
    };
    cands.retain(|&g| g >= lo && g <= hi && g < max);
    cands.dedup();
    let mut group = vec![false; column.len()];
    let mut candidates = Vec::with_capacity(cands.len());
    for g in cands {
        for (b, &x) in group.iter_mut().zip(column) {
            *b = x <= g;
        }
        candidates.push(Candidate { cutpoint: g, test: ctx.test(&group)? });
    }
    let empty_band = candidates.is_empty();
    if empty_band {
        log::debug!("empty candidate band");
    }
    Ok(Scan { candidates, empty_band })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    None,
    Bonferroni,
    LausenSchumacher,
}

impl std::str::FromStr for Correction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "bonferroni" | "mt-b" => Ok(Self::Bonferroni),
            "lausen-schumacher" | "ls" | "mt-ls" => Ok(Self::LausenSchumacher),
            _ => Err(Error::InvalidArgument(format!("unknown correction `{s}`"))),
        }
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Lausen–Schumacher approximation to the p-value of the maximally selected
/// standardized statistic `b` over the band `(ε, ε') = (0.1, 0.9)`, clipped
/// to `[0, 1]`. For `b <= 1` only the `4φ(b)/b` term is kept; the flag is
/// then set.
pub fn lausen_schumacher(b: f64) -> (f64, bool) {
    let b = b.abs();
    let (e, e2) = BAND;
    let log_ratio = ((1.0 - e) * e2 / (e * (1.0 - e2))).ln();
    let phi = std_normal_pdf(b);
    let tail = 4.0 * phi / b;
    if b <= 1.0 {
        return (tail.clamp(0.0, 1.0), true);
    }
    ((phi * (b - 1.0 / b) * log_ratio + tail).clamp(0.0, 1.0), false)
}

fn corrected(p: f64, z: f64, kappa: usize, correction: Correction) -> (f64, bool) {
    match correction {
        Correction::None => (p, false),
        Correction::Bonferroni => ((kappa as f64 * p).min(1.0), false),
        Correction::LausenSchumacher => lausen_schumacher(z),
    }
}

/// Outcome of the minimal-p selection on one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Index of the minimal raw p-value in the scan.
    pub best: usize,
    pub raw_p: f64,
    pub corrected_p: f64,
    /// Reported only when `corrected_p <= alpha`.
    pub cutpoint: Option<f64>,
    /// Lausen–Schumacher was evaluated with `b <= 1`.
    pub clipped: bool,
}

/// Keeps the minimal raw p-value candidate (first on ties) and reports it
/// when its corrected p-value is at most `alpha`.
pub fn mt_select(scan: &Scan, correction: Correction, alpha: f64) -> Result<Selection> {
    let best = (0..scan.candidates.len())
        .min_by(|&a, &b| scan.candidates[a].test.p_value.total_cmp(&scan.candidates[b].test.p_value))
        .ok_or(Error::EmptySet("scan"))?;
    let c = scan.candidates[best];
    let (corrected_p, clipped) = corrected(c.test.p_value, c.test.z, scan.candidates.len(), correction);
    Ok(Selection {
        best,
        raw_p: c.test.p_value,
        corrected_p,
        cutpoint: (corrected_p <= alpha).then_some(c.cutpoint),
        clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtConfig {
    pub grid: ScanGrid,
    pub correction: Correction,
    pub alpha: f64,
}

/// Per-feature scans and the selected cut-points.
#[derive(Debug, Clone)]
pub struct MtResult {
    pub config: MtConfig,
    pub scans: Vec<Scan>,
    pub selections: Vec<Option<Selection>>,
    pub model: CutPointModel,
}

impl MtResult {
    /// CSV with columns `feature,candidate,raw_p,corrected_p,selected`.
    pub fn write_scan_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "candidate", "raw_p", "corrected_p", "selected"])?;
        for ((scan, sel), f) in self.scans.iter().zip(&self.selections).zip(&self.model.features) {
            let kappa = scan.candidates.len();
            for (k, c) in scan.candidates.iter().enumerate() {
                let (cp, _) = corrected(c.test.p_value, c.test.z, kappa, self.config.correction);
                let chosen = sel.is_some_and(|s| s.best == k && s.cutpoint.is_some());
                w.write_record([
                    f.name.clone(),
                    c.cutpoint.to_string(),
                    c.test.p_value.to_string(),
                    cp.to_string(),
                    u8::from(chosen).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn method_name(config: &MtConfig) -> String {
    let c = match config.correction {
        Correction::None => "mt",
        Correction::Bonferroni => "mt-b",
        Correction::LausenSchumacher => "mt-ls",
    };
    let g = match config.grid {
        ScanGrid::All => "all",
        ScanGrid::Scheme => "grid",
    };
    format!("{c}-{g}")
}

/// Runs the scan and selection on every feature, in parallel. `scheme` is
/// required for [`ScanGrid::Scheme`].
pub fn mt_detect(ds: &SurvivalDataset, scheme: Option<&BinningScheme>, config: MtConfig) -> Result<MtResult> {
    if !(config.alpha > 0.0 && config.alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {}", config.alpha)));
    }
    if let Some(s) = scheme {
        if s.p() != ds.p() {
            return Err(Error::ShapeMismatch("scheme and dataset disagree on p".into()));
        }
    }
    let ctx = LogRankContext::new(ds.times(), ds.events())?;
    let per_feature: Vec<(Scan, Option<Selection>)> = (0..ds.p())
        .into_par_iter()
        .map(|j| {
            let bounds = scheme.map(|s| s.feature(j).boundaries.as_slice());
            let scan = mt_scan(ds.column(j), &ctx, config.grid, bounds)?;
            let sel = if scan.empty_band { None } else { Some(mt_select(&scan, config.correction, config.alpha)?) };
            Ok((scan, sel))
        })
        .collect::<Result<_>>()?;
    let mut scans = Vec::with_capacity(ds.p());
    let mut selections = Vec::with_capacity(ds.p());
    let mut features = Vec::with_capacity(ds.p());
    for ((scan, sel), name) in per_feature.into_iter().zip(ds.names()) {
        let (cutpoints, amplitudes) = match sel.and_then(|s| s.cutpoint.map(|c| (c, scan.candidates[s.best].test.z))) {
            Some((c, z)) => (vec![c], vec![z]),
            None => (Vec::new(), Vec::new()),
        };
        features.push(FeatureCutPoints { name: name.clone(), k_hat: cutpoints.len(), cutpoints, amplitudes, refit: Vec::new() });
        scans.push(scan);
        selections.push(sel);
    }
    Ok(MtResult { config, scans, selections, model: CutPointModel { method: method_name(&config), features } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_event_by_hand() {
        let r = logrank_statistic(&[1.0, 2.0], &[true, false], &[true, false]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-15);
        assert!((r.z - 1.0).abs() < 1e-15);
        assert!((r.p_value - 0.31731050786291415).abs() < 1e-9);
    }

    #[test]
    fn duplicated_subjects_give_zero() {
        let times = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let events = [true, false, true, true, false, true];
        let group = [true, true, true, false, false, false];
        let r = logrank_statistic(&times, &events, &group).unwrap();
        assert!(r.statistic.abs() < 1e-15);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn errors_and_degenerate_cases() {
        assert!(logrank_statistic(&[1.0, 2.0], &[true, true], &[true, true]).is_err());
        assert!(matches!(logrank_statistic(&[1.0, 2.0], &[false, false], &[true, false]), Err(Error::NoEvents)));
        // One event with a single subject at risk carries no variance.
        let r = logrank_statistic(&[1.0, 2.0], &[false, true], &[true, false]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    /// O(n²) oracle straight from the definition.
    fn naive(times: &[f64], events: &[bool], group: &[bool]) -> f64 {
        let mut ts: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let (mut u, mut v) = (0.0, 0.0);
        for t in ts {
            let r = times.iter().filter(|&&s| s >= t).count() as f64;
            let r1 = times.iter().zip(group).filter(|(&s, &g)| s >= t && g).count() as f64;
            let d = times.iter().zip(events).filter(|(&s, &e)| s == t && e).count() as f64;
            let d1 = (0..times.len()).filter(|&i| times[i] == t && events[i] && group[i]).count() as f64;
            u += d1 - d * r1 / r;
            if r > 1.0 {
                v += d * (r1 / r) * (1.0 - r1 / r) * (r - d) / (r - 1.0);
            }
        }
        u * u / v
    }

    #[test]
    fn matches_definition_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = 30;
            let times: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
            let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
            let mut group: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            group[0] = true;
            group[1] = false;
            let fast = logrank_statistic(&times, &events, &group).unwrap().statistic;
            assert!((fast - naive(&times, &events, &group)).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_null_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 60;
        let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let ctx = LogRankContext::new(&times, &events).unwrap();
        let mut group: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
        let mut ps: Vec<f64> = (0..2000)
            .map(|_| {
                group.shuffle(&mut rng);
                ctx.test(&group).unwrap().p_value
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| ((i + 1) as f64 / 2000.0 - p).abs().max((p - i as f64 / 2000.0).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS distance {ks}");
    }

    #[test]
    fn constant_feature_scans_nothing() {
        let times = [1.0, 2.0, 3.0, 4.0];
        let ctx = LogRankContext::new(&times, &[true; 4]).unwrap();
        let scan = mt_scan(&[5.0; 4], &ctx, ScanGrid::All, None).unwrap();
        assert!(scan.empty_band);
        assert!(mt_select(&scan, Correction::Bonferroni, 0.05).is_err());
    }

    #[test]
    fn bonferroni_and_ls_formulas() {
        let cands = (0..20)
            .map(|k| Candidate {
                cutpoint: f64::from(k),
                test: LogRank { statistic: 0.0, z: 0.0, p_value: if k == 7 { 0.01 } else { 0.5 }, degenerate: false },
            })
            .collect();
        let scan = Scan { candidates: cands, empty_band: false };
        let s = mt_select(&scan, Correction::Bonferroni, 0.05).unwrap();
        assert_eq!(s.best, 7);
        assert!((s.corrected_p - 0.2).abs() < 1e-15);
        assert!(s.cutpoint.is_none());
        let phi = (-0.5f64 * 3.5 * 3.5).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let direct = phi * (3.5 - 1.0 / 3.5) * 81f64.ln() + 4.0 * phi / 3.5;
        assert!((lausen_schumacher(3.5).0 - direct).abs() < 1e-15);
        assert!((lausen_schumacher(-3.5).0 - direct).abs() < 1e-15);
        let (p, flag) = lausen_schumacher(0.8);
        assert!(flag && (0.0..=1.0).contains(&p));
        assert_eq!(lausen_schumacher(0.0).0, 1.0);
    }

    #[test]
    fn threshold_at_the_median_is_found() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 400;
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let times: Vec<f64> =
                x.iter().map(|&v| -(1.0 - rng.random::<f64>()).ln() * if v > 0.5 { 0.3 } else { 1.0 }).collect();
            let ctx = LogRankContext::new(&times, &vec![true; n]).unwrap();
            let grid: Vec<f64> = (1..20).map(|k| f64::from(k) / 20.0).collect();
            let scan = mt_scan(&x, &ctx, ScanGrid::Scheme, Some(&grid)).unwrap();
            let s = mt_select(&scan, Correction::None, 1.0).unwrap();
            if (scan.candidates[s.best].cutpoint - 0.5).abs() <= 0.05 + 1e-12 {
                hits += 1;
            }
        }
        assert!(hits >= 16, "{hits}/20");
    }

    #[test]
    fn scheme_candidates_induce_all_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let times: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let ctx = LogRankContext::new(&times, &[true; 100]).unwrap();
        let all = mt_scan(&x, &ctx, ScanGrid::All, None).unwrap();
        let bounds: Vec<f64> = (1..10).map(|k| f64::from(k) / 10.0).collect();
        let grid = mt_scan(&x, &ctx, ScanGrid::Scheme, Some(&bounds)).unwrap();
        let part = |g: f64| x.iter().map(|&v| v <= g).collect::<Vec<bool>>();
        for c in &grid.candidates {
            assert!(all.candidates.iter().any(|a| part(a.cutpoint) == part(c.cutpoint)));
        }
    }
}
