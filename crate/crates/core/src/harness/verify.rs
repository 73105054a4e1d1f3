//! The `verify` suite: every per-realization and in-expectation check on
//! ensembles built from a config.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::config::{ExperimentConfig, ScheduleSpec};
use super::experiment::{build_schedule, Setup};
use crate::algorithms::{
    check_step_conditions, par_map_runs, row_average, run_csgd, run_dsgd, Init, RunConfig, StepSchedule, Theorem,
    WorldState,
};
use crate::bounds::{
    contraction_audit, verify_aux_lemma, verify_consensus_bounds, verify_descent, verify_linearization, BoundReport,
    ContractionAudit, DescentLemma, Order, Verdict,
};
use crate::error::Result;
use crate::metrics::{ensemble_summary, Trajectory};
use crate::objectives::{estimate_constants, make_quadratic_suite, EstimateOptions, QuadraticSpec};
use crate::topology::validate_mixing;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub checks: Vec<CheckLine>,
    pub lemma2: BoundReport,
    pub lemma4: BoundReport,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(out, "{:<12} {:<40} {}", c.verdict.label(), c.name, c.detail);
        }
        let failed = self.checks.iter().filter(|c| c.verdict == Verdict::Fail).count();
        let _ = writeln!(out, "{} checks, {failed} failed", self.checks.len());
        out
    }
}

fn line(name: &str, pass: bool, detail: String) -> CheckLine {
    CheckLine { name: name.into(), verdict: if pass { Verdict::Pass } else { Verdict::Fail }, detail }
}

struct RunAudit {
    trajectory: Trajectory,
    order2: ContractionAudit,
    order4: ContractionAudit,
    identity_error: f64,
    mid: Option<WorldState>,
}

/// Largest deviation from `bar theta^{t+1} = bar theta^t - gamma (1/n) sum_i g_i`.
fn average_identity_error(trajectory: &Trajectory) -> f64 {
    let Some(trace) = &trajectory.debug else { return f64::NAN };
    let mut worst = 0.0f64;
    for t in 0..trace.stochastic_grads.len() {
        let before = row_average(&trace.states[t]);
        let after = row_average(&trace.states[t + 1]);
        let g = row_average(&trace.stochastic_grads[t]);
        for k in 0..before.len() {
            let expect = before[k] - trace.step_sizes[t] * g[k];
            worst = worst.max((after[k] - expect).abs() / (1.0 + expect.abs()));
        }
    }
    worst
}

/// Max relative deviation between DSGD's average iterate and CSGD under
/// shared noise on a quadratic suite over the configured network.
pub fn quadratic_equivalence(setup: &Setup, steps: usize, seed: u64) -> Result<f64> {
    let suite = make_quadratic_suite(QuadraticSpec::random(5, 0.5, 2.0, 0.1, seed)?, setup.n())?;
    let schedule = StepSchedule::constant(0.1, steps)?;
    let mut cfg = RunConfig::new(&setup.mixing, &suite, &schedule, steps, Init::Equal(vec![1.0; 5]), seed);
    cfg.shared_noise = true;
    cfg.debug = true;
    let a = run_dsgd(&cfg)?.debug.expect("debug run");
    let b = run_csgd(&cfg)?.debug.expect("debug run");
    let mut worst = 0.0f64;
    for (x, y) in a.states.iter().zip(&b.states) {
        let avg = DVector::from_vec(row_average(x));
        let c = DVector::from_column_slice(y.as_slice());
        worst = worst.max((avg - &c).norm() / c.norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

pub fn run_verify(cfg: &ExperimentConfig, quiet: bool) -> Result<VerifyOutcome> {
    let say = |m: &str| {
        if !quiet {
            eprintln!("{m}");
        }
    };
    let setup = Setup::build(cfg)?;
    let mut checks = Vec::new();

    let report = validate_mixing(&setup.mixing)?;
    checks.push(line(
        "mixing matrix",
        true,
        format!("row/col residuals {:.1e}/{:.1e}, asymmetry {:.1e}", report.row_sum_residual, report.col_sum_residual, report.asymmetry),
    ));
    let rho = setup.rho()?;
    checks.push(line("spectral gap", rho > 0.0, format!("rho = {rho:.10e}")));

    let suite = setup.configured();
    let (n, d) = (suite.n(), suite.d());
    let spec = &cfg.verify;
    let l = suite.lipschitz();
    let gamma = spec.gamma_scale * rho / (9.0 * l);
    let schedule = StepSchedule::constant(gamma, spec.iterations)?;

    say("estimating constants");
    let mut opts = EstimateOptions::new(vec![0.0; d], cfg.master_seed);
    opts.probe_count = cfg.estimate.probes;
    opts.draw_count = cfg.estimate.draws;
    opts.radius = cfg.estimate.radius;
    let est = estimate_constants(suite, &opts)?;
    let c = est.bound;

    let conds = check_step_conditions(&schedule, &c, rho, Theorem::Improved);
    checks.push(line(
        "step conditions (gamma = s rho/9L)",
        conds.pass,
        format!("gamma = {gamma:.6e}, smallest margin {:.3e}", conds.conditions.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min)),
    ));

    say(&format!("running {} audited DSGD runs x {} steps", spec.runs, spec.iterations));
    let mid_t = spec.iterations / 2;
    let audits = par_map_runs(spec.runs, |run| {
        let mut rc = RunConfig::new(&setup.mixing, suite, &schedule, spec.iterations, Init::Equal(vec![0.0; d]), cfg.master_seed);
        rc.run = run;
        rc.debug = true;
        let mut trajectory = run_dsgd(&rc)?;
        let trace = trajectory.debug.as_ref().expect("debug run");
        let order2 = contraction_audit(trace, rho, Order::Second);
        let order4 = contraction_audit(trace, rho, Order::Fourth);
        let identity_error = average_identity_error(&trajectory);
        let mid = (run == 0).then(|| WorldState { iterates: trace.states[mid_t].clone(), t: mid_t });
        trajectory.debug = None;
        Ok(RunAudit { trajectory, order2, order4, identity_error, mid })
    })?;

    for (name, pick) in [
        ("contraction order 2", (|a: &RunAudit| &a.order2) as fn(&RunAudit) -> &ContractionAudit),
        ("contraction order 4", |a: &RunAudit| &a.order4),
    ] {
        let steps: usize = audits.iter().map(|a| pick(a).steps).sum();
        let violations: usize = audits.iter().map(|a| pick(a).violations).sum();
        let worst = audits.iter().map(|a| pick(a).worst_ratio).fold(0.0, f64::max);
        checks.push(line(name, violations == 0, format!("{steps} steps, {violations} violations, max lhs/rhs {worst:.6}")));
    }
    let identity = audits.iter().map(|a| a.identity_error).fold(0.0, f64::max);
    checks.push(line("average-iterate identity", identity <= 1e-12, format!("max deviation {identity:.2e}")));

    let trajectories: Vec<Trajectory> = audits.iter().map(|a| a.trajectory.clone()).collect();
    let summary = ensemble_summary(&trajectories)?;
    let lemma2 = verify_consensus_bounds(&summary, &c, rho, n, &schedule, Order::Second, true);
    let lemma4 = verify_consensus_bounds(&summary, &c, rho, n, &schedule, Order::Fourth, true);
    for r in [&lemma2, &lemma4] {
        checks.push(line(
            &format!("{} consensus bound", r.id),
            r.pass,
            format!(
                "{} rows, worst mean+2CI {:.3e} vs rhs {:.3e}",
                r.rows.len(),
                r.lhs_mean + 2.0 * r.lhs_ci,
                r.rhs.total
            ),
        ));
    }

    say(&format!("resampling one step {} times", spec.resamples));
    let mid = audits[0].mid.clone().expect("run 0 keeps its midpoint");
    for (name, lemma) in [("lemma-1 descent", DescentLemma::Basic), ("lemma-3 descent", DescentLemma::Improved)] {
        let v = verify_descent(&mid, suite, gamma, &c, spec.resamples, lemma, cfg.master_seed)?;
        checks.push(line(
            name,
            v.pass,
            format!("E f(next) ~ {:.8e} +- {:.1e} vs rhs {:.8e}", v.estimate, v.stderr, v.rhs),
        ));
    }

    let aux_schedules = [
        ("configured", build_schedule(&cfg.schedule, &setup, spec.aux_horizon)?),
        ("constant", StepSchedule::constant(gamma, spec.aux_horizon)?),
        ("inv-sqrt-t", StepSchedule::inv_sqrt_t(spec.aux_horizon)?),
    ];
    for (label, sched) in &aux_schedules {
        if *label == "configured" && matches!(cfg.schedule, ScheduleSpec::Constant(_) | ScheduleSpec::InvSqrtT) {
            continue;
        }
        for order in [Order::Second, Order::Fourth] {
            let v = verify_aux_lemma(sched, rho, order);
            checks.push(CheckLine {
                name: format!("aux lemma p={} ({label})", order.power()),
                verdict: v.verdict,
                detail: format!("b = {:.3e}, cap {:.3e}, sup gamma {:.3e}, max ratio {:.4}", v.b, v.cap, v.sup_gamma, v.worst_ratio),
            });
        }
    }

    let lin = verify_linearization(suite, c.l_h, spec.pairs, &vec![0.0; d], cfg.estimate.radius, cfg.master_seed)?;
    checks.push(line(
        "linearization residual",
        lin.pass,
        format!("{} pairs, max excess over L_H/2 |dtheta|^2 {:.3e}", lin.pairs, lin.worst_excess),
    ));

    if !setup.homo.is_quadratic() {
        let homo = estimate_constants(&setup.homo, &opts)?;
        let ok = homo.sampled_varsigma <= 1e-12 && homo.sampled_varsigma_h <= 1e-12;
        checks.push(line(
            "homogeneous heterogeneity",
            ok,
            format!("varsigma {:.1e}, varsigma_H {:.1e}", homo.sampled_varsigma, homo.sampled_varsigma_h),
        ));
    }

    let dev = quadratic_equivalence(&setup, spec.equivalence_steps, cfg.master_seed)?;
    checks.push(line(
        "quadratic DSGD/CSGD equivalence",
        dev <= 1e-9,
        format!("{} steps, max relative deviation {dev:.2e}", spec.equivalence_steps),
    ));

    Ok(VerifyOutcome { checks, lemma2, lemma4 })
}
