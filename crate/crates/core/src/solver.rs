//! Accelerated proximal gradient for `ℓ_n(f_β) + bina(β)`.
//!
//! FISTA with backtracking on the quadratic upper model and function-value
//! restart: a candidate that raises the objective is discarded and the
//! momentum reset, so the recorded objective never increases.

use serde::{Deserialize, Serialize};

use crate::binarizer::BinarizedDesign;
use crate::cox_loss::{CoxLoss, DenseDesign, Design};
use crate::data::BlockVector;
use crate::error::{Error, Result};
use crate::prox::{BinarsityProx, ProxRule, TvWorkspace, WeightVector};

/// Smallest step accepted by the backtracking search.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once `|ΔF| <= tolerance * max(|F|, 1)` between accepted iterates.
    pub tolerance: f64,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    /// Multiplier tried on the previous step before each backtracking search.
    pub step_growth: f64,
    pub restart: bool,
    pub record_trace: bool,
    #[serde(skip)]
    pub prox_rule: ProxRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-8,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            step_growth: 1.25,
            restart: true,
            record_trace: true,
            prox_rule: ProxRule::Exact,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidArgument("backtracking factor must lie in (0, 1)".into()));
        }
        if !(self.initial_step > 0.0) || !(self.step_growth >= 1.0) {
            return Err(Error::InvalidArgument("initial step must be positive and growth >= 1".into()));
        }
        Ok(())
    }
}

/// Non-smooth part handled through its prox.
pub trait Penalty {
    fn apply(&self, v: &mut [f64], step: f64, ws: &mut TvWorkspace);
    fn value(&self, v: &[f64]) -> f64;
}

impl Penalty for BinarsityProx {
    fn apply(&self, v: &mut [f64], step: f64, ws: &mut TvWorkspace) {
        BinarsityProx::apply(self, v, step, ws)
    }

    fn value(&self, v: &[f64]) -> f64 {
        BinarsityProx::value(self, v)
    }
}

/// Plain gradient steps (continuous-feature Cox model).
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPenalty;

impl Penalty for NoPenalty {
    fn apply(&self, _: &mut [f64], _: f64, _: &mut TvWorkspace) {}

    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
}

/// Raw solver output on a flat coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
}

/// Outcome of one backtracking search.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub beta: Vec<f64>,
    pub step: f64,
    /// Smooth loss at the accepted point.
    pub loss: f64,
    /// Number of step reductions performed.
    pub shrinks: usize,
}

/// Proximal step from `beta` along `-grad`, shrinking the step until the
/// quadratic upper model at `beta` dominates the loss at the candidate.
#[allow(clippy::too_many_arguments)]
pub fn backtracking_step<D: Design, P: Penalty>(
    loss: &CoxLoss<'_, D>,
    penalty: &P,
    beta: &[f64],
    grad: &[f64],
    loss_at_beta: f64,
    step: f64,
    backtrack_factor: f64,
    ws: &mut TvWorkspace,
) -> Result<StepOutcome> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut s = step;
    let mut shrinks = 0;
    let mut cand = vec![0.0; beta.len()];
    let slack = 1e-13 * (1.0 + loss_at_beta.abs());
    loop {
        for ((c, &b), &g) in cand.iter_mut().zip(beta).zip(grad) {
            *c = b - s * g;
        }
        penalty.apply(&mut cand, s, ws);
        let l = loss.value(&cand);
        let mut lin = 0.0;
        let mut sq = 0.0;
        for ((&c, &b), &g) in cand.iter().zip(beta).zip(grad) {
            let d = c - b;
            lin += g * d;
            sq += d * d;
        }
        if l <= loss_at_beta + lin + sq / (2.0 * s) + slack {
            return Ok(StepOutcome { beta: cand, step: s, loss: l, shrinks });
        }
        s *= backtrack_factor;
        shrinks += 1;
        if s < MIN_STEP {
            return Err(Error::StepUnderflow(s));
        }
    }
}

/// Barzilai–Borwein step `sᵀs / sᵀy` from a trial gradient step of length
/// `fallback`; `fallback` when the curvature along `-grad` is not positive.
fn initial_step<D: Design>(loss: &CoxLoss<'_, D>, x: &[f64], grad: &mut [f64], fallback: f64) -> f64 {
    loss.value_and_gradient(x, grad);
    let trial: Vec<f64> = x.iter().zip(grad.iter()).map(|(a, g)| a - fallback * g).collect();
    let mut g1 = vec![0.0; x.len()];
    loss.value_and_gradient(&trial, &mut g1);
    let (mut ss, mut sy) = (0.0, 0.0);
    for ((a, b), (g0, g1)) in trial.iter().zip(x).zip(grad.iter().zip(&g1)) {
        let d = a - b;
        ss += d * d;
        sy += d * (g1 - g0);
    }
    let bb = ss / sy;
    if sy > 0.0 && bb.is_finite() {
        bb
    } else {
        fallback
    }
}

/// Minimizes `loss + penalty` from a feasible `init`.
pub fn minimize<D: Design, P: Penalty>(
    loss: &CoxLoss<'_, D>,
    penalty: &P,
    init: &[f64],
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    if init.len() != loss.n_coef() {
        return Err(Error::ShapeMismatch(format!(
            "initial point has {} entries, design has {} columns",
            init.len(),
            loss.n_coef()
        )));
    }
    let mut ws = TvWorkspace::default();
    let mut x = init.to_vec();
    let mut obj = loss.value(&x) + penalty.value(&x);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(obj);
    }
    if x.is_empty() {
        return Ok(Solution { beta: x, objective: obj, objective_trace: trace, iterations: 0, converged: true, step: config.initial_step });
    }
    let mut z = x.clone();
    let mut momentum = false;
    let mut t: f64 = 1.0;
    let mut grad = vec![0.0; x.len()];
    let mut step = initial_step(loss, &x, &mut grad, config.initial_step) / config.step_growth;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let fz = loss.value_and_gradient(&z, &mut grad);
        let out = backtracking_step(
            loss,
            penalty,
            &z,
            &grad,
            fz,
            step * config.step_growth,
            config.backtrack_factor,
            &mut ws,
        )?;
        step = out.step;
        let cand_obj = out.loss + penalty.value(&out.beta);
        if config.restart && cand_obj > obj {
            if !momentum {
                // A plain proximal step could not decrease the objective:
                // rounding noise at the optimum.
                converged = true;
                break;
            }
            z.copy_from_slice(&x);
            t = 1.0;
            momentum = false;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta_mom = (t - 1.0) / t_next;
        for ((zi, &ci), &xi) in z.iter_mut().zip(&out.beta).zip(&x) {
            *zi = ci + beta_mom * (ci - xi);
        }
        momentum = beta_mom > 0.0;
        t = t_next;
        x = out.beta;
        let change = (obj - cand_obj).abs();
        let scale = obj.abs().max(1.0);
        obj = cand_obj;
        if config.record_trace {
            trace.push(obj);
        }
        if change <= config.tolerance * scale {
            converged = true;
            break;
        }
    }
    Ok(Solution { beta: x, objective: obj, objective_trace: trace, iterations, converged, step })
}

/// Fitted binarsity-penalized Cox model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: BlockVector,
    /// Largest weight, i.e. the penalty strength for uniform weights.
    pub gamma: f64,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last accepted step, a good starting step for warm restarts.
    pub step: f64,
}

/// Fits `β̂ ∈ argmin ℓ_n(f_β) + bina(β)` from `β = 0`.
pub fn fit(
    design: &BinarizedDesign,
    times: &[f64],
    events: &[bool],
    weights: &WeightVector,
    counts: &[f64],
    config: &SolverConfig,
) -> Result<FitResult> {
    fit_from(design, times, events, weights, counts, None, config)
}

/// [`fit`] started from `init` (which must satisfy the block constraints).
pub fn fit_from(
    design: &BinarizedDesign,
    times: &[f64],
    events: &[bool],
    weights: &WeightVector,
    counts: &[f64],
    init: Option<&BlockVector>,
    config: &SolverConfig,
) -> Result<FitResult> {
    if weights.layout() != design.layout() {
        return Err(Error::ShapeMismatch("weights layout differs from design layout".into()));
    }
    let loss = CoxLoss::new(design, times, events)?;
    let penalty = BinarsityProx::new(weights, counts.to_vec(), config.prox_rule)?;
    let zeros;
    let start = match init {
        Some(b) => {
            if b.layout() != design.layout() {
                return Err(Error::ShapeMismatch("initial point layout differs".into()));
            }
            b.values()
        }
        None => {
            zeros = vec![0.0; design.n_columns()];
            &zeros
        }
    };
    let sol = minimize(&loss, &penalty, start, config)?;
    if !sol.converged {
        log::debug!("solver stopped after {} iterations without converging", sol.iterations);
    }
    Ok(FitResult {
        beta: BlockVector::new(sol.beta, design.layout().clone())?,
        gamma: weights.max(),
        objective: sol.objective,
        objective_trace: sol.objective_trace,
        iterations: sol.iterations,
        converged: sol.converged,
        step: sol.step,
    })
}

/// Refit with the per-block constraint only (no TV term). An empty design is
/// the null model.
pub fn refit_constrained(
    design: &BinarizedDesign,
    times: &[f64],
    events: &[bool],
    config: &SolverConfig,
) -> Result<FitResult> {
    let weights = WeightVector::zeros(design.layout());
    let counts = design.column_counts();
    fit(design, times, events, &weights, &counts, config)
}

/// Unpenalized Cox fit on real-valued features.
pub fn fit_continuous(design: &DenseDesign, times: &[f64], events: &[bool], config: &SolverConfig) -> Result<Solution> {
    let loss = CoxLoss::new(design, times, events)?;
    minimize(&loss, &NoPenalty, &vec![0.0; design.n_coef()], config)
}

/// Norm of the gradient projected, block by block, onto the tangent space of
/// the constraints `n_jᵀ β_j = 0`: the stationarity residual of a
/// constrained-only fit.
pub fn projected_gradient_norm(grad: &[f64], counts: &[f64], layout: &crate::data::BlockLayout) -> f64 {
    let mut acc = 0.0;
    for j in 0..layout.n_blocks() {
        let r = layout.range(j);
        let (g, n) = (&grad[r.clone()], &counts[r]);
        let dot: f64 = g.iter().zip(n).map(|(a, b)| a * b).sum();
        let nn: f64 = n.iter().map(|v| v * v).sum();
        let k = if nn > 0.0 { dot / nn } else { 0.0 };
        acc += g.iter().zip(n).map(|(a, b)| (a - k * b).powi(2)).sum::<f64>();
    }
    acc.sqrt()
}
