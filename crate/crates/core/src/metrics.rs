//! Per-iteration diagnostics, Monte-Carlo ensemble summaries and empirical
//! transient-time detection.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::algorithms::WorldState;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveSuite;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Metrics at state `t`, taken before the `t`-th update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: usize,
    /// `gamma_{t+1}`, the step about to be applied (0 for the final state).
    pub step_size: f64,
    pub f_avg: f64,
    pub grad_norm_sq: f64,
    pub consensus_sq: f64,
    pub consensus_quart: f64,
}

/// Full per-step data retained in debug mode.
#[derive(Debug, Clone, Default)]
pub struct DebugTrace {
    /// `Theta^t` for `t = 0..=T`, stored `n x d` (row `i` is agent `i`).
    pub states: Vec<DMatrix<f64>>,
    /// Stochastic gradients applied at step `t`, same layout.
    pub stochastic_grads: Vec<DMatrix<f64>>,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub run: usize,
    pub seed: u64,
    pub stride: usize,
    pub records: Vec<Record>,
    pub final_record: Record,
    pub debug: Option<DebugTrace>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub const CSV_HEADER: &'static str = "run,t,step_size,f_avg,grad_norm_sq,consensus_sq,consensus_quart";

    /// Rows without header, 17 significant digits.
    pub fn csv_rows(&self, out: &mut String) {
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.run, r.t, r.step_size, r.f_avg, r.grad_norm_sq, r.consensus_sq, r.consensus_quart
            );
        }
    }
}

pub fn trajectories_csv(runs: &[Trajectory]) -> String {
    let mut out = format!("{}\n", Trajectory::CSV_HEADER);
    for tr in runs {
        tr.csv_rows(&mut out);
    }
    out
}

/// Metrics of the state: objective and squared gradient norm at the average
/// iterate, plus second and fourth Frobenius moments of the consensus error.
pub fn record_metrics(state: &WorldState, suite: &ObjectiveSuite, step_size: f64) -> Result<Record> {
    let theta = &state.iterates;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDivergence { t: state.t, run: None });
    }
    let mean = state.average();
    let mut consensus_sq = 0.0;
    for i in 0..theta.nrows() {
        for (k, m) in mean.iter().enumerate() {
            consensus_sq += (theta[(i, k)] - m).powi(2);
        }
    }
    let (f_avg, grad) = suite.value_and_gradient(&mean)?;
    let grad_norm_sq: f64 = grad.iter().map(|g| g * g).sum();
    if !f_avg.is_finite() || !grad_norm_sq.is_finite() {
        return Err(Error::NumericalDivergence { t: state.t, run: None });
    }
    Ok(Record {
        t: state.t,
        step_size,
        f_avg,
        grad_norm_sq,
        consensus_sq,
        consensus_quart: consensus_sq * consensus_sq,
    })
}

/// `sum_t gamma_{t+1} ||grad f(avg theta^t)||^2` over the recorded
/// iterations; exact when every iteration was recorded.
pub fn weighted_grad_sum(trajectory: &Trajectory) -> f64 {
    trajectory.records.iter().map(|r| r.step_size * r.grad_norm_sq).sum()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSeries {
    pub mean: Vec<f64>,
    /// 95% half-width, `1.96 * std / sqrt(R)`.
    pub ci: Vec<f64>,
}

impl MetricSeries {
    /// Standard error of the mean at index `k`.
    pub fn stderr(&self, k: usize) -> f64 {
        self.ci[k] / Z95
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub t: Vec<usize>,
    pub step_size: Vec<f64>,
    pub f_avg: MetricSeries,
    pub grad_norm_sq: MetricSeries,
    pub consensus_sq: MetricSeries,
    pub consensus_quart: MetricSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    FAvg,
    GradNormSq,
    ConsensusSq,
    ConsensusQuart,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::FAvg, Metric::GradNormSq, Metric::ConsensusSq, Metric::ConsensusQuart];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FAvg => "f_avg",
            Metric::GradNormSq => "grad_norm_sq",
            Metric::ConsensusSq => "consensus_sq",
            Metric::ConsensusQuart => "consensus_quart",
        }
    }

    fn of(self, r: &Record) -> f64 {
        match self {
            Metric::FAvg => r.f_avg,
            Metric::GradNormSq => r.grad_norm_sq,
            Metric::ConsensusSq => r.consensus_sq,
            Metric::ConsensusQuart => r.consensus_quart,
        }
    }
}

impl EnsembleSummary {
    pub fn series(&self, m: Metric) -> &MetricSeries {
        match m {
            Metric::FAvg => &self.f_avg,
            Metric::GradNormSq => &self.grad_norm_sq,
            Metric::ConsensusSq => &self.consensus_sq,
            Metric::ConsensusQuart => &self.consensus_quart,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,step_size");
        for m in Metric::ALL {
            let _ = write!(out, ",{0}_mean,{0}_ci", m.name());
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{},{:.16e}", self.t[k], self.step_size[k]);
            for m in Metric::ALL {
                let s = self.series(m);
                let _ = write!(out, ",{:.16e},{:.16e}", s.mean[k], s.ci[k]);
            }
            out.push('\n');
        }
        out
    }

    /// Reads [`to_csv`](Self::to_csv) output. The run count is not stored in
    /// the file and must be supplied.
    pub fn parse_csv(text: &str, runs: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("summary CSV is empty".into()))?;
        let expected = {
            let mut h = String::from("t,step_size");
            for m in Metric::ALL {
                let _ = write!(h, ",{0}_mean,{0}_ci", m.name());
            }
            h
        };
        if header.trim() != expected {
            return Err(Error::Parse(format!("unexpected summary header `{header}`")));
        }
        let mut s = EnsembleSummary {
            runs,
            t: Vec::new(),
            step_size: Vec::new(),
            f_avg: MetricSeries::default(),
            grad_norm_sq: MetricSeries::default(),
            consensus_sq: MetricSeries::default(),
            consensus_quart: MetricSeries::default(),
        };
        for line in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 10 {
                return Err(Error::Parse(format!("summary row has {} columns", cells.len())));
            }
            let num = |c: &str| c.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{c}`")));
            s.t.push(cells[0].parse().map_err(|_| Error::Parse(format!("bad t `{}`", cells[0])))?);
            s.step_size.push(num(cells[1])?);
            let series = [&mut s.f_avg, &mut s.grad_norm_sq, &mut s.consensus_sq, &mut s.consensus_quart];
            for (k, ser) in series.into_iter().enumerate() {
                ser.mean.push(num(cells[2 + 2 * k])?);
                ser.ci.push(num(cells[3 + 2 * k])?);
            }
        }
        Ok(s)
    }
}

fn mean_ci(values: impl Iterator<Item = f64> + Clone, r: usize) -> (f64, f64) {
    let rf = r as f64;
    let mean = values.clone().sum::<f64>() / rf;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (rf - 1.0);
    (mean, Z95 * var.sqrt() / rf.sqrt())
}

/// Per-iteration sample mean and normal-approximation 95% half-width.
pub fn ensemble_summary(runs: &[Trajectory]) -> Result<EnsembleSummary> {
    if runs.len() < 2 {
        return Err(Error::ShapeMismatch(format!("need at least 2 runs, got {}", runs.len())));
    }
    let t = runs[0].times();
    if let Some(bad) = runs.iter().find(|r| r.times() != t) {
        return Err(Error::ShapeMismatch(format!(
            "run {} records {} iterations, run {} records {}",
            bad.run,
            bad.records.len(),
            runs[0].run,
            t.len()
        )));
    }
    let r = runs.len();
    let mut out = EnsembleSummary {
        runs: r,
        step_size: runs[0].records.iter().map(|x| x.step_size).collect(),
        t,
        f_avg: MetricSeries::default(),
        grad_norm_sq: MetricSeries::default(),
        consensus_sq: MetricSeries::default(),
        consensus_quart: MetricSeries::default(),
    };
    for m in Metric::ALL {
        let mut series = MetricSeries::default();
        for k in 0..out.t.len() {
            let (mean, ci) = mean_ci(runs.iter().map(|tr| m.of(&tr.records[k])), r);
            series.mean.push(mean);
            series.ci.push(ci);
        }
        match m {
            Metric::FAvg => out.f_avg = series,
            Metric::GradNormSq => out.grad_norm_sq = series,
            Metric::ConsensusSq => out.consensus_sq = series,
            Metric::ConsensusQuart => out.consensus_quart = series,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientEstimate {
    pub t_star: Option<usize>,
    pub delta: f64,
    pub window: usize,
}

/// Centered moving average of width `window`, shrinking at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let back = (w - 1) / 2;
    let ahead = w / 2;
    let len = values.len();
    let mut prefix = vec![0.0; len + 1];
    for (k, v) in values.iter().enumerate() {
        prefix[k + 1] = prefix[k] + v;
    }
    (0..len)
        .map(|k| {
            let lo = k.saturating_sub(back);
            let hi = (k + ahead).min(len - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Smallest recorded `t` from which the smoothed mean `grad_norm_sq` of
/// `test` stays within `(1 + delta)` times that of `reference` for good.
pub fn transient_time(
    test: &EnsembleSummary,
    reference: &EnsembleSummary,
    delta: f64,
    window: usize,
) -> Result<TransientEstimate> {
    if test.t != reference.t {
        return Err(Error::ShapeMismatch("summaries are recorded on different grids".into()));
    }
    let a = moving_average(&test.grad_norm_sq.mean, window);
    let b = moving_average(&reference.grad_norm_sq.mean, window);
    let mut first_ok = None;
    for k in (0..a.len()).rev() {
        if a[k] <= (1.0 + delta) * b[k] {
            first_ok = Some(k);
        } else {
            break;
        }
    }
    Ok(TransientEstimate { t_star: first_ok.map(|k| test.t[k]), delta, window })
}
