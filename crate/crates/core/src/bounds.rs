//! Closed-form convergence bounds and numerical audits of the inequalities
//! behind them.
//!
//! Per-realization inequalities (the one-step consensus contractions and the
//! auxiliary step-size lemma) are checked deterministically. Inequalities in
//! expectation are checked against Monte-Carlo means with a 2-sigma slack.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::algorithms::{
    check_step_conditions, ratio_cap, ratio_constant, row_average, ConditionReport, RatioAnchor, StepSchedule,
    Theorem, WorldState,
};
use crate::error::{Error, Result};
use crate::metrics::{weighted_grad_sum, DebugTrace, EnsembleSummary, Trajectory, Z95};
use crate::objectives::{ball_point, ObjectiveSuite, SmoothnessConstants};
use crate::rng::{substream, Purpose};
use crate::topology::{spectral_gap, MixingMatrix};

/// Relative slack for per-realization inequalities.
pub const DETERMINISTIC_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Second,
    Fourth,
}

impl Order {
    pub fn power(self) -> i32 {
        match self {
            Order::Second => 2,
            Order::Fourth => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inapplicable,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inapplicable => "INAPPLICABLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhsEval {
    pub total: f64,
    pub terms: Vec<Term>,
}

impl RhsEval {
    fn from_terms(terms: Vec<Term>) -> Self {
        let total = terms.iter().map(|t| t.value).sum();
        Self { total, terms }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// `4D + (2 L sigma^2 / n) sum gamma^2 + (32 L^2 (varsigma^2 + sigma^2) / rho^2) sum gamma^3`.
pub fn thm1_rhs(c: &SmoothnessConstants, rho: f64, n: usize, schedule: &StepSchedule, iterations: usize) -> RhsEval {
    let n = n as f64;
    RhsEval::from_terms(vec![
        Term { name: "initial_gap", value: 4.0 * c.d },
        Term { name: "variance", value: 2.0 * c.l * c.sigma.powi(2) / n * schedule.power_sum(2, iterations) },
        Term {
            name: "network",
            value: 32.0 * c.l.powi(2) * (c.varsigma.powi(2) + c.sigma.powi(2)) / rho.powi(2)
                * schedule.power_sum(3, iterations),
        },
    ])
}

fn thm2_terms(
    c: &SmoothnessConstants,
    rho: f64,
    n: usize,
    schedule: &StepSchedule,
    iterations: usize,
    high_order_coef: f64,
) -> RhsEval {
    let nf = n as f64;
    RhsEval::from_terms(vec![
        Term { name: "initial_gap", value: 4.0 * c.d },
        Term { name: "variance", value: 2.0 * c.l * c.sigma.powi(2) / nf * schedule.power_sum(2, iterations) },
        Term { name: "high_order", value: high_order_coef * schedule.power_sum(5, iterations) },
        Term {
            name: "hessian_heterogeneity",
            value: 32.0 * c.varsigma_h.powi(2) * (c.sigma.powi(2) + c.varsigma.powi(2)) / rho.powi(2)
                * schedule.power_sum(3, iterations),
        },
    ])
}

/// Improved bound with the fourth-order consensus term
/// `432 n L_H^2 (sigma^4 + 4 varsigma^4) / rho^4 sum gamma^5`.
pub fn thm2_rhs(c: &SmoothnessConstants, rho: f64, n: usize, schedule: &StepSchedule, iterations: usize) -> RhsEval {
    let coef = 432.0 * n as f64 * c.l_h.powi(2) * (c.sigma.powi(4) + 4.0 * c.varsigma.powi(4)) / rho.powi(4);
    thm2_terms(c, rho, n, schedule, iterations, coef)
}

/// Same bound with the third term as printed in the theorem statement:
/// `432 L_H^2 (sigma^4 + 4 varsigma^2) / rho^4 sum gamma^5`.
pub fn thm2_rhs_literal(
    c: &SmoothnessConstants,
    rho: f64,
    n: usize,
    schedule: &StepSchedule,
    iterations: usize,
) -> RhsEval {
    let coef = 432.0 * c.l_h.powi(2) * (c.sigma.powi(4) + 4.0 * c.varsigma.powi(2)) / rho.powi(4);
    thm2_terms(c, rho, n, schedule, iterations, coef)
}

pub fn theorem_rhs(
    theorem: Theorem,
    c: &SmoothnessConstants,
    rho: f64,
    n: usize,
    schedule: &StepSchedule,
    iterations: usize,
) -> RhsEval {
    match theorem {
        Theorem::Basic => thm1_rhs(c, rho, n, schedule, iterations),
        Theorem::Improved => thm2_rhs(c, rho, n, schedule, iterations),
    }
}

/// Bound on `E ||grad f(bar theta^T')||^2` for `T'` uniform on `0..T` under
/// `gamma = 1/sqrt(T)`: the theorem RHS divided by `sum gamma = sqrt(T)`.
pub fn corollary_rate(theorem: Theorem, c: &SmoothnessConstants, rho: f64, n: usize, iterations: usize) -> Result<RhsEval> {
    let schedule = StepSchedule::inv_sqrt_t(iterations)?;
    let rhs = theorem_rhs(theorem, c, rho, n, &schedule, iterations);
    let scale = (iterations as f64).sqrt();
    Ok(RhsEval::from_terms(
        rhs.terms.into_iter().map(|t| Term { name: t.name, value: t.value / scale }).collect(),
    ))
}

/// Order-level transient times with every hidden constant set to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientPrediction {
    pub thm1_full: f64,
    pub thm1_simplified: f64,
    pub thm2_full: f64,
    pub thm2_simplified: f64,
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn transient_predict(c: &SmoothnessConstants, rho: f64, n: usize) -> TransientPrediction {
    let nf = n as f64;
    let base = c.d + c.l * c.sigma.powi(2) / nf;
    TransientPrediction {
        thm1_full: ratio_or_inf(
            c.l.powi(4) * (c.varsigma.powi(4) + c.sigma.powi(4)),
            rho.powi(4) * base.powi(2),
        ),
        thm1_simplified: nf.powi(2) / rho.powi(4),
        thm2_full: ratio_or_inf(
            c.l_h.powf(4.0 / 3.0) * (c.sigma.powf(8.0 / 3.0) + c.varsigma.powf(8.0 / 3.0)) * nf.powf(2.0 / 3.0),
            rho.powf(8.0 / 3.0) * base.powf(2.0 / 3.0),
        ),
        thm2_simplified: nf.powf(4.0 / 3.0) / rho.powf(8.0 / 3.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub t: usize,
    pub lhs_mean: f64,
    pub lhs_ci: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub id: String,
    pub rhs: RhsEval,
    /// Theorem 2 only: the statement-literal variant of the RHS.
    pub rhs_literal: Option<f64>,
    pub lhs_mean: f64,
    pub lhs_ci: f64,
    pub margin: f64,
    pub pass: bool,
    pub conditions: Option<ConditionReport>,
    pub rows: Vec<BoundRow>,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn verdict(&self) -> Verdict {
        if self.pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "id = {}", self.id);
        let _ = writeln!(out, "rhs = {:.10e}", self.rhs.total);
        for t in &self.rhs.terms {
            let _ = writeln!(out, "rhs.{} = {:.10e}", t.name, t.value);
        }
        if let Some(v) = self.rhs_literal {
            let _ = writeln!(out, "rhs_literal = {v:.10e}");
        }
        let _ = writeln!(out, "lhs_mean = {:.10e}", self.lhs_mean);
        let _ = writeln!(out, "lhs_ci = {:.10e}", self.lhs_ci);
        let _ = writeln!(out, "margin = {:.10e}", self.margin);
        let _ = writeln!(out, "verdict = {}", self.verdict().label());
        if let Some(c) = &self.conditions {
            let _ = writeln!(out, "step_conditions.b = {:.10e}", c.b);
            for (k, cond) in c.conditions.iter().chain(c.lemma_variant.iter()).enumerate() {
                let _ = writeln!(
                    out,
                    "step_conditions.{k} = {} | lhs {:.6e} rhs {:.6e} margin {:.6e} {}",
                    cond.name,
                    cond.lhs,
                    cond.rhs,
                    cond.margin,
                    if cond.pass { "ok" } else { "VIOLATED" }
                );
            }
        }
        if !self.rows.is_empty() {
            let _ = writeln!(out, "rows = {}", self.rows.len());
            let _ = writeln!(out, "rows_failed = {}", self.rows.iter().filter(|r| !r.pass).count());
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning = {w}");
        }
        out
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("t,lhs_mean,lhs_ci,rhs,margin,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.t, r.lhs_mean, r.lhs_ci, r.rhs, r.margin, r.pass
            );
        }
        out
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Ensemble mean of `sum_t gamma_{t+1} ||grad f(bar theta^t)||^2` against the
/// theorem RHS; passes iff `mean <= RHS + 2 stderr`.
pub fn theorem_report(
    theorem: Theorem,
    runs: &[Trajectory],
    c: &SmoothnessConstants,
    rho: f64,
    n: usize,
    schedule: &StepSchedule,
    iterations: usize,
) -> Result<BoundReport> {
    if runs.is_empty() {
        return Err(Error::ShapeMismatch("no runs to audit".into()));
    }
    if let Some(bad) = runs.iter().find(|r| r.stride != 1 || r.records.len() != iterations) {
        return Err(Error::ShapeMismatch(format!(
            "run {} has {} records at stride {}; the audit needs all {iterations} iterations",
            bad.run,
            bad.records.len(),
            bad.stride
        )));
    }
    let sums: Vec<f64> = runs.iter().map(weighted_grad_sum).collect();
    let (lhs_mean, stderr) = mean_and_stderr(&sums);
    let rhs = theorem_rhs(theorem, c, rho, n, schedule, iterations);
    let conditions = check_step_conditions(schedule, c, rho, theorem);
    let mut warnings = Vec::new();
    if !conditions.pass {
        warnings.push(format!("step-size conditions of theorem {} do not hold", theorem.id()));
    }
    if runs.len() < 2 {
        warnings.push("single run: no Monte-Carlo slack".into());
    }
    let margin = rhs.total + 2.0 * stderr - lhs_mean;
    Ok(BoundReport {
        id: format!("theorem-{}", theorem.id()),
        rhs_literal: matches!(theorem, Theorem::Improved).then(|| thm2_rhs_literal(c, rho, n, schedule, iterations).total),
        rhs,
        lhs_mean,
        lhs_ci: Z95 * stderr,
        margin,
        pass: margin >= 0.0,
        conditions: Some(conditions),
        rows: Vec::new(),
        warnings,
    })
}

/// Right-hand side of the consensus bound of the given order at step size `gamma`.
pub fn consensus_rhs(c: &SmoothnessConstants, rho: f64, n: usize, gamma: f64, order: Order) -> f64 {
    let n = n as f64;
    match order {
        Order::Second => 8.0 * n * gamma.powi(2) * (c.varsigma.powi(2) + c.sigma.powi(2)) / rho.powi(2),
        Order::Fourth => {
            216.0 * (c.sigma.powi(4) + 4.0 * c.varsigma.powi(4)) * n * n * gamma.powi(4) / rho.powi(4)
        }
    }
}

/// Ensemble means of `||Q^t||_F^2` or `||Q^t||_F^4` against the consensus
/// bounds at every recorded `t >= 1`; a row passes iff `mean + 2 CI <= RHS`.
pub fn verify_consensus_bounds(
    summary: &EnsembleSummary,
    c: &SmoothnessConstants,
    rho: f64,
    n: usize,
    schedule: &StepSchedule,
    order: Order,
    equal_init: bool,
) -> BoundReport {
    let series = match order {
        Order::Second => &summary.consensus_sq,
        Order::Fourth => &summary.consensus_quart,
    };
    let mut warnings = Vec::new();
    if !equal_init {
        warnings.push("runs did not start from a common point; the lemma hypothesis is violated".into());
    }
    let (cap, cap_name) = match order {
        Order::Second => (rho / (4.0 * c.l), "rho/(4L)"),
        Order::Fourth => (rho / (9.0 * c.l), "rho/(9L)"),
    };
    if schedule.sup() > cap {
        warnings.push(format!("sup gamma = {:.6e} exceeds {cap_name} = {cap:.6e}", schedule.sup()));
    }
    let p = order.power();
    let b = ratio_constant(schedule, p, p, RatioAnchor::Next);
    if schedule.sup() > ratio_cap(rho, b, p as f64) {
        warnings.push(format!("sup gamma exceeds the ratio cap for b = {b:.6e}"));
    }
    let rows: Vec<BoundRow> = summary
        .t
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= 1)
        .map(|(k, &t)| {
            let rhs = consensus_rhs(c, rho, n, schedule.gamma(t - 1), order);
            let (lhs_mean, lhs_ci) = (series.mean[k], series.ci[k]);
            let margin = rhs - (lhs_mean + 2.0 * lhs_ci);
            BoundRow { t, lhs_mean, lhs_ci, rhs, margin, pass: margin >= 0.0 }
        })
        .collect();
    let worst = rows.iter().min_by(|a, b| a.margin.total_cmp(&b.margin));
    let (lhs_mean, lhs_ci, rhs, margin) = worst.map_or((0.0, 0.0, 0.0, 0.0), |r| (r.lhs_mean, r.lhs_ci, r.rhs, r.margin));
    BoundReport {
        id: match order {
            Order::Second => "lemma-2".into(),
            Order::Fourth => "lemma-4".into(),
        },
        rhs: RhsEval::from_terms(vec![Term { name: "at_worst_t", value: rhs }]),
        rhs_literal: None,
        lhs_mean,
        lhs_ci,
        margin,
        pass: rows.iter().all(|r| r.pass),
        conditions: None,
        rows,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionAudit {
    pub order: Order,
    pub steps: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
    /// Largest `lhs / rhs` over steps with a positive RHS.
    pub worst_ratio: f64,
    pub pass: bool,
}

fn projected_norm(m: &DMatrix<f64>) -> f64 {
    let avg = row_average(m);
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        for (k, a) in avg.iter().enumerate() {
            acc += (m[(i, k)] - a).powi(2);
        }
    }
    acc.sqrt()
}

/// One-step consensus contraction at every recorded step:
/// `||Q^{t+1}||^p <= (1-rho) ||Q^t||^p + gamma^p / rho^(p-1) ||(I - 11^T/n) G^t||^p`.
pub fn contraction_audit(trace: &DebugTrace, rho: f64, order: Order) -> ContractionAudit {
    let p = order.power();
    let steps = trace.stochastic_grads.len();
    let mut violations = 0;
    let mut first_violation = None;
    let mut worst_ratio = 0.0f64;
    let mut q_prev = projected_norm(&trace.states[0]);
    for t in 0..steps {
        let q_next = projected_norm(&trace.states[t + 1]);
        let g = projected_norm(&trace.stochastic_grads[t]);
        let gamma = trace.step_sizes[t];
        let lhs = q_next.powi(p);
        let rhs = (1.0 - rho) * q_prev.powi(p) + gamma.powi(p) / rho.powi(p - 1) * g.powi(p);
        let floor = (1e-12 * (1.0 + trace.states[t + 1].norm())).powi(p);
        if lhs > rhs * (1.0 + DETERMINISTIC_SLACK) + floor {
            violations += 1;
            first_violation.get_or_insert(t);
        }
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(lhs / rhs);
        }
        q_prev = q_next;
    }
    ContractionAudit { order, steps, violations, first_violation, worst_ratio, pass: violations == 0 }
}

/// [`contraction_audit`] with `rho` taken from a validated mixing matrix.
pub fn verify_contraction_step(trajectory: &Trajectory, w: &MixingMatrix, order: Order) -> Result<ContractionAudit> {
    let trace = trajectory.debug.as_ref().ok_or(Error::MissingDebugData)?;
    let rho = spectral_gap(w)?.rho;
    Ok(contraction_audit(trace, rho, order))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxVerdict {
    pub order: Order,
    pub b: f64,
    pub cap: f64,
    pub sup_gamma: f64,
    pub checked: usize,
    /// Largest `lhs / ((4/rho) gamma_{t+1}^p)` over the horizon.
    pub worst_ratio: f64,
    pub verdict: Verdict,
}

/// `sum_{i<=t+1} gamma_i^p (1 - rho/2)^{t+1-i} <= (4/rho) gamma_{t+1}^p` at
/// every `t` of the schedule horizon, via the running recursion.
pub fn verify_aux_lemma(schedule: &StepSchedule, rho: f64, order: Order) -> AuxVerdict {
    let p = order.power();
    let b = ratio_constant(schedule, p, p, RatioAnchor::Next);
    let cap = ratio_cap(rho, b, p as f64);
    let sup_gamma = schedule.sup();
    let mut s = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
    for t in 0..schedule.horizon {
        let gp = schedule.gamma(t).powi(p);
        s = (1.0 - rho / 2.0) * s + gp;
        let rhs = 4.0 / rho * gp;
        if s > rhs * (1.0 + 1e-12) {
            ok = false;
        }
        if rhs > 0.0 {
            worst_ratio = worst_ratio.max(s / rhs);
        }
    }
    let verdict = if sup_gamma > cap {
        Verdict::Inapplicable
    } else if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    AuxVerdict { order, b, cap, sup_gamma, checked: schedule.horizon, worst_ratio, verdict }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentLemma {
    Basic,
    Improved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentVerdict {
    pub lemma: DescentLemma,
    pub gamma: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub rhs: f64,
    /// `rhs - (estimate - 2 stderr)`.
    pub margin: f64,
    pub pass: bool,
}

/// Monte-Carlo estimate of `E_t[f(bar theta^{t+1})]` from `resamples`
/// independent one-step draws at the frozen state, against the descent bound.
pub fn verify_descent(
    state: &WorldState,
    suite: &ObjectiveSuite,
    gamma: f64,
    c: &SmoothnessConstants,
    resamples: usize,
    lemma: DescentLemma,
    seed: u64,
) -> Result<DescentVerdict> {
    if !(gamma <= 1.0 / (4.0 * c.l)) {
        return Err(Error::Inapplicable(format!("step {gamma:e} exceeds 1/(4L) = {:e}", 1.0 / (4.0 * c.l))));
    }
    if resamples < 2 {
        return Err(Error::InvalidRun("descent check needs at least 2 resamples".into()));
    }
    let (n, d) = (state.n(), state.d());
    if n != suite.n() || d != suite.d() {
        return Err(Error::DimensionError { expected: suite.n() * suite.d(), got: n * d });
    }
    let avg = state.average();
    let draws: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut row = vec![0.0; d];
            let mut g = vec![0.0; d];
            let mut mean_g = vec![0.0; d];
            for i in 0..n {
                for k in 0..d {
                    row[k] = state.iterates[(i, k)];
                }
                let mut rng = substream(seed, r, i, state.t, Purpose::Resample);
                suite.stochastic_gradient(i, &row, &mut rng, &mut g);
                for k in 0..d {
                    mean_g[k] += g[k] / n as f64;
                }
            }
            let next: Vec<f64> = avg.iter().zip(&mean_g).map(|(a, g)| a - gamma * g).collect();
            suite.value(&next)
        })
        .collect::<Result<Vec<_>>>()?;
    let (estimate, stderr) = mean_and_stderr(&draws);

    let (f, grad) = suite.value_and_gradient(&avg)?;
    let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
    let q_sq = state
        .iterates
        .row_iter()
        .map(|r| r.iter().zip(&avg).map(|(x, a)| (x - a).powi(2)).sum::<f64>())
        .sum::<f64>();
    let nf = n as f64;
    let core = f - gamma / 4.0 * grad_sq + gamma * gamma * c.l * c.sigma.powi(2) / (2.0 * nf);
    let rhs = match lemma {
        DescentLemma::Basic => core + gamma * c.l.powi(2) / nf * q_sq,
        DescentLemma::Improved => {
            core + gamma / (2.0 * nf) * (c.l_h.powi(2) * q_sq + 2.0 * c.varsigma_h.powi(2)) * q_sq
        }
    };
    let margin = rhs - (estimate - 2.0 * stderr);
    Ok(DescentVerdict { lemma, gamma, estimate, stderr, rhs, margin, pass: margin >= 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationVerdict {
    pub pairs: usize,
    /// Largest `||E_i|| - (L_H/2) ||theta' - theta||^2` over pairs and agents.
    pub worst_excess: f64,
    pub pass: bool,
}

/// `||grad f_i(theta') - grad f_i(theta) - H_i(theta)(theta' - theta)|| <=
/// (L_H/2) ||theta' - theta||^2` at random pairs in a ball.
pub fn verify_linearization(
    suite: &ObjectiveSuite,
    l_h: f64,
    pairs: usize,
    center: &[f64],
    radius: f64,
    seed: u64,
) -> Result<LinearizationVerdict> {
    if center.len() != suite.d() {
        return Err(Error::DimensionError { expected: suite.d(), got: center.len() });
    }
    let mut rng = substream(seed, 0, 0, 0, Purpose::Estimate);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let a = ball_point(&mut rng, center, radius);
        let b = ball_point(&mut rng, center, radius);
        let diff: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let dist_sq: f64 = diff.iter().map(|v| v * v).sum();
        for &(agent, _) in suite.distinct_agents() {
            let ga = suite.agent_gradient(agent, &a)?;
            let gb = suite.agent_gradient(agent, &b)?;
            let h = suite.agent_hessian(agent, &a)?;
            let mut res_sq = 0.0;
            for r in 0..diff.len() {
                let hv: f64 = (0..diff.len()).map(|k| h[(r, k)] * diff[k]).sum();
                res_sq += (gb[r] - ga[r] - hv).powi(2);
            }
            worst_excess = worst_excess.max(res_sq.sqrt() - l_h / 2.0 * dist_sq);
        }
    }
    Ok(LinearizationVerdict { pairs, worst_excess, pass: pairs == 0 || worst_excess <= 1e-9 })
}
