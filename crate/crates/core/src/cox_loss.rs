//! Scaled negative Cox partial log-likelihood with Breslow ties.
//!
//! For predictors `f_i` the loss is
//! `ℓ_n = -(1/n) Σ_{i: Δ_i = 1} [ f_i - log Σ_{i': Z_i' >= Z_i} exp(f_i') ]`.
//! Its gradient is `Xᵀ a` with the per-row coefficient
//! `a_i = (1/n) [ exp(f_i) H_i - Δ_i ]`, where `H_i` accumulates
//! `1 / S0(Z_k)` over events `k` with `Z_k <= Z_i`. Both are computed in
//! linear time from a single descending-time ordering.

use crate::binarizer::BinarizedDesign;
use crate::data::BlockVector;
use crate::error::{Error, Result};

/// Linear design seen by the loss: predictors `Xβ` and products `Xᵀa`.
pub trait Design: Sync {
    fn n_rows(&self) -> usize;
    fn n_coef(&self) -> usize;
    fn linear_predictor_into(&self, beta: &[f64], out: &mut [f64]);
    fn transpose_mul_into(&self, a: &[f64], out: &mut [f64]);
}

impl Design for BinarizedDesign {
    fn n_rows(&self) -> usize {
        BinarizedDesign::n_rows(self)
    }

    fn n_coef(&self) -> usize {
        self.n_columns()
    }

    fn linear_predictor_into(&self, beta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for j in 0..self.n_blocks() {
            for (o, &c) in out.iter_mut().zip(self.block_indices(j)) {
                *o += beta[c as usize];
            }
        }
    }

    fn transpose_mul_into(&self, a: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for j in 0..self.n_blocks() {
            for (&ai, &c) in a.iter().zip(self.block_indices(j)) {
                out[c as usize] += ai;
            }
        }
    }
}

/// Dense real-valued design, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDesign {
    n: usize,
    columns: Vec<Vec<f64>>,
}

impl DenseDesign {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch("ragged dense design".into()));
        }
        Ok(Self { n, columns })
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }
}

impl Design for DenseDesign {
    fn n_rows(&self) -> usize {
        self.n
    }

    fn n_coef(&self) -> usize {
        self.columns.len()
    }

    fn linear_predictor_into(&self, beta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (col, &b) in self.columns.iter().zip(beta) {
            for (o, &x) in out.iter_mut().zip(col) {
                *o += b * x;
            }
        }
    }

    fn transpose_mul_into(&self, a: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(&self.columns) {
            *o = col.iter().zip(a).map(|(x, y)| x * y).sum();
        }
    }
}

/// Descending-time ordering with tied times grouped together.
#[derive(Debug, Clone)]
pub struct RiskSetIndex {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order`, one per distinct time, descending.
    groups: Vec<(usize, usize)>,
    /// Events per group.
    group_events: Vec<usize>,
}

impl RiskSetIndex {
    pub fn new(times: &[f64], events: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        // Descending time; events ahead of censorings within a tie. Breslow
        // sums do not depend on the within-tie order.
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(events[b].cmp(&events[a])));
        let mut groups = Vec::new();
        let mut group_events = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let t = times[order[start]];
            let mut end = start;
            let mut d = 0;
            while end < order.len() && times[order[end]] == t {
                d += usize::from(events[order[end]]);
                end += 1;
            }
            groups.push((start, end));
            group_events.push(d);
            start = end;
        }
        Self { order, groups, group_events }
    }

    /// Row permutation sorting times in non-increasing order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

/// The Cox loss bound to a design and to the survival outcome.
#[derive(Debug, Clone)]
pub struct CoxLoss<'a, D: Design> {
    design: &'a D,
    events: Vec<bool>,
    risk: RiskSetIndex,
    n_events: usize,
}

impl<'a, D: Design> CoxLoss<'a, D> {
    pub fn new(design: &'a D, times: &[f64], events: &[bool]) -> Result<Self> {
        let n = design.n_rows();
        if times.len() != n || events.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "design has {n} rows, outcome has {} times and {} events",
                times.len(),
                events.len()
            )));
        }
        let n_events = events.iter().filter(|&&e| e).count();
        if n_events == 0 {
            return Err(Error::NoEvents);
        }
        Ok(Self { design, events: events.to_vec(), risk: RiskSetIndex::new(times, events), n_events })
    }

    pub fn design(&self) -> &D {
        self.design
    }

    pub fn n_rows(&self) -> usize {
        self.events.len()
    }

    pub fn n_coef(&self) -> usize {
        self.design.n_coef()
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_rows()];
        self.design.linear_predictor_into(beta, &mut f);
        f
    }

    /// `log S0` of every risk set (descending time order), accumulated as a
    /// running log-sum-exp so that no risk set underflows.
    fn log_risk_sums(&self, f: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let (mut m, mut s) = (f64::NEG_INFINITY, 0.0);
        for &(start, end) in &self.risk.groups {
            for &i in &self.risk.order[start..end] {
                if f[i] > m {
                    s = s * (m - f[i]).exp() + 1.0;
                    m = f[i];
                } else {
                    s += (f[i] - m).exp();
                }
            }
            out.push(m + s.ln());
        }
    }

    fn loss_from_log_sums(&self, f: &[f64], log_s0: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (g, &(start, end)) in self.risk.groups.iter().enumerate() {
            if self.risk.group_events[g] > 0 {
                for &i in &self.risk.order[start..end] {
                    if self.events[i] {
                        acc += f[i] - log_s0[g];
                    }
                }
            }
        }
        -acc / self.n_rows() as f64
    }

    /// Loss at the predictors `f`.
    pub fn value_at_predictor(&self, f: &[f64]) -> f64 {
        let mut log_s0 = Vec::with_capacity(self.risk.groups.len());
        self.log_risk_sums(f, &mut log_s0);
        self.loss_from_log_sums(f, &log_s0)
    }

    pub fn value(&self, beta: &[f64]) -> f64 {
        self.value_at_predictor(&self.linear_predictor(beta))
    }

    /// Loss and per-row gradient coefficients `a` such that `∇ℓ = Xᵀa`.
    pub fn value_and_row_coefficients(&self, f: &[f64], a: &mut [f64]) -> f64 {
        let n = self.n_rows() as f64;
        let mut log_s0 = Vec::with_capacity(self.risk.groups.len());
        self.log_risk_sums(f, &mut log_s0);
        // Ascending pass: the cumulative hazard Σ d_g / S0_g is carried as
        // h · exp(-cur), cur being the latest log S0; every row lies in the
        // risk set of `cur`, so exp(f_i - cur) <= 1.
        let (mut h, mut cur) = (0.0, 0.0);
        for (g, &(start, end)) in self.risk.groups.iter().enumerate().rev() {
            let d = self.risk.group_events[g];
            if d > 0 {
                h = if h > 0.0 { h * (log_s0[g] - cur).exp() } else { 0.0 } + d as f64;
                cur = log_s0[g];
            }
            for &i in &self.risk.order[start..end] {
                let e = if h > 0.0 { h * (f[i] - cur).exp() } else { 0.0 };
                a[i] = (e - f64::from(u8::from(self.events[i]))) / n;
            }
        }
        self.loss_from_log_sums(f, &log_s0)
    }

    /// Loss and gradient at `beta`.
    pub fn value_and_gradient(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        let f = self.linear_predictor(beta);
        let mut a = vec![0.0; f.len()];
        let v = self.value_and_row_coefficients(&f, &mut a);
        self.design.transpose_mul_into(&a, grad);
        v
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_coef()];
        self.value_and_gradient(beta, &mut g);
        g
    }
}

/// `f_β(X_i) = Σ_j β_{j, bin(i, j)}`.
pub fn linear_predictor(design: &BinarizedDesign, beta: &BlockVector) -> Result<Vec<f64>> {
    if beta.layout() != design.layout() {
        return Err(Error::ShapeMismatch("coefficient layout differs from design layout".into()));
    }
    let mut f = vec![0.0; design.n_rows()];
    design.linear_predictor_into(beta.values(), &mut f);
    Ok(f)
}

/// Scaled negative partial log-likelihood `ℓ_n(f_β)`.
pub fn neg_partial_loglik(
    design: &BinarizedDesign,
    times: &[f64],
    events: &[bool],
    beta: &BlockVector,
) -> Result<f64> {
    let f = linear_predictor(design, beta)?;
    Ok(CoxLoss::new(design, times, events)?.value_at_predictor(&f))
}

/// Gradient of [`neg_partial_loglik`] with respect to β.
pub fn gradient(
    design: &BinarizedDesign,
    times: &[f64],
    events: &[bool],
    beta: &BlockVector,
) -> Result<BlockVector> {
    if beta.layout() != design.layout() {
        return Err(Error::ShapeMismatch("coefficient layout differs from design layout".into()));
    }
    let g = CoxLoss::new(design, times, events)?.gradient(beta.values());
    BlockVector::new(g, beta.layout().clone())
}
