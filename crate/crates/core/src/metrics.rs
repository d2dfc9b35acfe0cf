//! Detection and prediction metrics: Hausdorff-based cut-point error, false
//! detections on null features, the Kaplan–Meier estimator and the
//! censoring-weighted concordance index.

use std::io::Write;

use crate::error::{Error, Result};

/// Censoring-weight floor below which a subject's comparable pairs are
/// dropped.
pub const MIN_WEIGHT: f64 = 1e-8;

/// `sup_{b∈B} inf_{a∈A} |a - b|`.
fn directed(a: &[f64], b: &[f64]) -> f64 {
    b.iter()
        .map(|y| a.iter().map(|x| (x - y).abs()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Hausdorff distance between two finite non-empty sets.
pub fn hausdorff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("Hausdorff operand"));
    }
    Ok(directed(a, b).max(directed(b, a)))
}

/// Mean Hausdorff distance over the features with at least one true and one
/// detected cut-point; `None` when there is no such feature.
pub fn m1(truth: &[Vec<f64>], detected: &[Vec<f64>]) -> Result<Option<f64>> {
    if truth.len() != detected.len() {
        return Err(Error::ShapeMismatch(format!("{} true vs {} detected features", truth.len(), detected.len())));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (t, d) in truth.iter().zip(detected) {
        if !t.is_empty() && !d.is_empty() {
            sum += hausdorff(t, d)?;
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Mean number of detected cut-points over the truly null features.
pub fn m2(k_hat: &[usize], sparse_set: &[usize]) -> Result<f64> {
    if sparse_set.is_empty() {
        return Err(Error::EmptySet("sparse set"));
    }
    let mut total = 0usize;
    for &j in sparse_set {
        total += *k_hat
            .get(j)
            .ok_or_else(|| Error::ShapeMismatch(format!("sparse index {j} out of range")))?;
    }
    Ok(total as f64 / sparse_set.len() as f64)
}

/// Right-continuous product-limit estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeier {
    /// Distinct times with at least one counted event, ascending.
    pub times: Vec<f64>,
    /// Survival just after each of `times`.
    pub survival: Vec<f64>,
}

impl KaplanMeier {
    /// `counted[i]` marks the subjects whose time is an occurrence of the
    /// estimated event; the others are treated as censored.
    pub fn fit(times: &[f64], counted: &[bool]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptySet("Kaplan-Meier sample"));
        }
        if times.len() != counted.len() {
            return Err(Error::ShapeMismatch(format!("{} indicators for {} times", counted.len(), times.len())));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut at_risk = times.len() as f64;
        let mut s = 1.0;
        let (mut out_t, mut out_s) = (Vec::new(), Vec::new());
        let mut k = 0;
        while k < order.len() {
            let t = times[order[k]];
            let (mut d, mut m) = (0.0, 0.0);
            while k < order.len() && times[order[k]] == t {
                if counted[order[k]] {
                    d += 1.0;
                }
                m += 1.0;
                k += 1;
            }
            if d > 0.0 {
                s *= 1.0 - d / at_risk;
                out_t.push(t);
                out_s.push(s);
            }
            at_risk -= m;
        }
        Ok(Self { times: out_t, survival: out_s })
    }

    /// Value at the last jump `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }

    /// Left limit: value at the last jump `< t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u < t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// Concordance index with inverse-probability-of-censoring weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concordance {
    pub c_index: f64,
    pub comparable_pairs: usize,
    /// Pairs dropped because `Ĝ(Z_i⁻) < MIN_WEIGHT`.
    pub dropped_pairs: usize,
}

/// `P[R_i > R_j | Z_i < Z_j, Z_i < τ]` estimated over pairs with `Δ_i = 1`,
/// each weighted by `Ĝ(Z_i⁻)⁻²` where `Ĝ` is the Kaplan–Meier estimate of
/// the censoring survival. Risk ties count one half. `tau` defaults to the
/// largest event time.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool], tau: Option<f64>) -> Result<Concordance> {
    let n = times.len();
    if risks.len() != n || events.len() != n {
        return Err(Error::ShapeMismatch("risks, times and events differ in length".into()));
    }
    if let Some(i) = risks.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite { what: "risk", row: i, column: 0 });
    }
    let censored: Vec<bool> = events.iter().map(|e| !e).collect();
    let g = KaplanMeier::fit(times, &censored)?;
    let tau = tau.unwrap_or_else(|| {
        times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).fold(f64::NEG_INFINITY, f64::max)
    });
    let (mut num, mut den) = (0.0, 0.0);
    let (mut comparable, mut dropped) = (0usize, 0usize);
    for i in 0..n {
        if !events[i] || !(times[i] < tau) {
            continue;
        }
        let gi = g.eval_left(times[i]);
        let (mut conc, mut count) = (0.0, 0usize);
        for j in 0..n {
            if times[i] < times[j] {
                count += 1;
                if risks[i] > risks[j] {
                    conc += 1.0;
                } else if risks[i] == risks[j] {
                    conc += 0.5;
                }
            }
        }
        if gi < MIN_WEIGHT {
            dropped += count;
            continue;
        }
        let w = 1.0 / (gi * gi);
        num += w * conc;
        den += w * count as f64;
        comparable += count;
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(Concordance { c_index: num / den, comparable_pairs: comparable, dropped_pairs: dropped })
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub c_index: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with columns `method,m1,m2,c_index`; missing values are empty.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "m1", "m2", "c_index"])?;
    for r in rows {
        w.write_record([r.method.clone(), cell(r.m1), cell(r.m2), cell(r.c_index)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&[0.5], &[0.5]).unwrap(), 0.0);
        assert!((hausdorff(&[0.2, 0.8], &[0.3]).unwrap() - 0.5).abs() < 1e-15);
        assert!((hausdorff(&[0.3], &[0.2, 0.8]).unwrap() - 0.5).abs() < 1e-15);
        assert!(hausdorff(&[], &[0.1]).is_err());
    }

    #[test]
    fn m1_m2_examples() {
        let truth = vec![vec![0.5], vec![], vec![0.1, 0.9]];
        assert_eq!(m1(&truth, &truth).unwrap(), Some(0.0));
        assert!((m1(&[vec![0.5]], &[vec![0.4]]).unwrap().unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(m1(&truth, &[vec![], vec![], vec![]]).unwrap(), None);
        assert_eq!(m2(&[0; 10], &(0..10).collect::<Vec<_>>()).unwrap(), 0.0);
        assert_eq!(m2(&[1; 10], &(0..10).collect::<Vec<_>>()).unwrap(), 1.0);
        assert_eq!(m2(&[2, 0, 5], &[0, 1]).unwrap(), 1.0);
        assert!(m2(&[1], &[]).is_err());
    }

    #[test]
    fn m1_improves_with_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random(), rng.random::<f64>() + 1.0]).collect();
        let det: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random::<f64>() * 2.0]).collect();
        assert!(m1(&truth, &truth).unwrap().unwrap() <= m1(&truth, &det).unwrap().unwrap());
    }

    #[test]
    fn kaplan_meier_examples() {
        let km = KaplanMeier::fit(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert_eq!(km.eval(10.0), 1.0);
        let km = KaplanMeier::fit(&[1.0], &[true]).unwrap();
        assert_eq!(km.eval(0.999), 1.0);
        assert_eq!(km.eval(1.0), 0.0);
        assert_eq!(km.eval_left(1.0), 1.0);
        // Hand product-limit: at-risk 4, 3 (one censored at 1.5), 1.
        let km = KaplanMeier::fit(&[1.0, 1.5, 2.0, 2.0, 3.0], &[true, false, true, true, true]).unwrap();
        assert!((km.eval(1.0) - 0.8).abs() < 1e-15);
        assert!((km.eval(2.0) - 0.8 / 3.0).abs() < 1e-15);
        assert_eq!(km.eval(3.0), 0.0);
        assert!(km.survival.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn concordance_examples() {
        let times = [1.0, 2.0, 3.0, 4.0, 5.0];
        let events = [true; 5];
        let risks = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(c_index(&risks, &times, &events, None).unwrap().c_index, 1.0);
        assert_eq!(c_index(&[1.0; 5], &times, &events, None).unwrap().c_index, 0.5);
        assert!(matches!(c_index(&risks, &times, &[false; 5], None), Err(Error::NoComparablePairs) | Err(_)));
        let t = [1.0, 1.0];
        assert!(matches!(c_index(&[1.0, 2.0], &t, &[true, true], Some(5.0)), Err(Error::NoComparablePairs)));
    }

    fn harrell(risks: &[f64], times: &[f64], events: &[bool], tau: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..times.len() {
            for j in 0..times.len() {
                if events[i] && times[i] < times[j] && times[i] < tau {
                    den += 1.0;
                    num += if risks[i] > risks[j] { 1.0 } else if risks[i] == risks[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn uncensored_reduces_to_harrell() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 50;
            let times: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..30u8))).collect();
            let risks: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..10u8))).collect();
            let events = vec![true; n];
            let tau = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let c = c_index(&risks, &times, &events, None).unwrap().c_index;
            assert!((c - harrell(&risks, &times, &events, tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_risks_are_near_half_and_monotone_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c = c_index(&risks, &times, &events, None).unwrap().c_index;
        assert!((c - 0.5).abs() < 0.03, "{c}");
        let mapped: Vec<f64> = risks.iter().map(|r| (3.0 * r).exp() - 7.0).collect();
        assert_eq!(c_index(&mapped, &times, &events, None).unwrap().c_index, c);
    }
}
