//! DSGD and minibatch CSGD under configurable step-size schedules.
//!
//! Iterates are stored as an `n x d` matrix whose row `i` is agent `i`.
//! Every stochastic draw comes from a substream keyed by
//! `(master_seed, run, agent, iteration)`, so a run is reproducible no matter
//! how an ensemble is scheduled across threads.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{record_metrics, DebugTrace, Record, Trajectory};
use crate::objectives::{ObjectiveSuite, SmoothnessConstants};
use crate::rng::{substream, Purpose};
use crate::topology::MixingMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Constant(f64),
    /// `1 / sqrt(horizon)` at every step.
    InvSqrtT,
    /// `gamma_{t+1} = sqrt(a0 / (a1 + t))`.
    SqrtDecay { a0: f64, a1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub horizon: usize,
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidSchedule("horizon must be at least 1".into()));
        }
        match kind {
            ScheduleKind::Constant(g) if !(g >= 0.0 && g.is_finite()) => {
                return Err(Error::InvalidSchedule(format!("constant step {g} must be finite and >= 0")));
            }
            ScheduleKind::SqrtDecay { a0, a1 } if !(a0 > 0.0 && a1 > 0.0 && a0.is_finite() && a1.is_finite()) => {
                return Err(Error::InvalidSchedule(format!("sqrt_decay needs a0, a1 > 0 (got {a0}, {a1})")));
            }
            _ => {}
        }
        Ok(Self { kind, horizon })
    }

    pub fn constant(gamma: f64, horizon: usize) -> Result<Self> {
        Self::new(ScheduleKind::Constant(gamma), horizon)
    }

    pub fn inv_sqrt_t(horizon: usize) -> Result<Self> {
        Self::new(ScheduleKind::InvSqrtT, horizon)
    }

    pub fn sqrt_decay(a0: f64, a1: f64, horizon: usize) -> Result<Self> {
        Self::new(ScheduleKind::SqrtDecay { a0, a1 }, horizon)
    }

    /// `a0 = 1/beta`, `a1 = 8 L^2 / beta^2`.
    pub fn sqrt_decay_from(beta: f64, l: f64, horizon: usize) -> Result<Self> {
        Self::sqrt_decay(1.0 / beta, 8.0 * l * l / (beta * beta), horizon)
    }

    /// `gamma_{t+1}` without the horizon check.
    pub fn gamma(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant(g) => g,
            ScheduleKind::InvSqrtT => 1.0 / (self.horizon as f64).sqrt(),
            ScheduleKind::SqrtDecay { a0, a1 } => (a0 / (a1 + t as f64)).sqrt(),
        }
    }

    pub fn eval(&self, t: usize) -> Result<f64> {
        if t >= self.horizon {
            return Err(Error::HorizonExceeded { t, horizon: self.horizon });
        }
        Ok(self.gamma(t))
    }

    /// `sup_{t >= 1} gamma_t`; every kind is nonincreasing.
    pub fn sup(&self) -> f64 {
        self.gamma(0)
    }

    /// `sum_{t=0}^{T-1} gamma_{t+1}^p`.
    pub fn power_sum(&self, p: i32, iterations: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant(_) | ScheduleKind::InvSqrtT => self.gamma(0).powi(p) * iterations as f64,
            ScheduleKind::SqrtDecay { .. } => (0..iterations).map(|t| self.gamma(t).powi(p)).sum(),
        }
    }
}

pub fn eval_schedule(schedule: &StepSchedule, t: usize) -> Result<f64> {
    schedule.eval(t)
}

/// Which step of the pair `(gamma_t, gamma_{t+1})` multiplies `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioAnchor {
    Next,
    Current,
}

/// Smallest `b >= 0` with `(gamma_t / gamma_{t+1})^p <= 1 + b * gamma_anchor^q`
/// over consecutive pairs of the horizon.
pub fn ratio_constant(schedule: &StepSchedule, p: i32, q: i32, anchor: RatioAnchor) -> f64 {
    if matches!(schedule.kind, ScheduleKind::Constant(_) | ScheduleKind::InvSqrtT) {
        return 0.0;
    }
    let mut b = 0.0f64;
    for t in 0..schedule.horizon.saturating_sub(1) {
        let (cur, next) = (schedule.gamma(t), schedule.gamma(t + 1));
        let base = match anchor {
            RatioAnchor::Next => next,
            RatioAnchor::Current => cur,
        };
        b = b.max(((cur / next).powi(p) - 1.0) / base.powi(q));
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioOrder {
    /// `gamma_t / gamma_{t+1} <= 1 + b gamma_{t+1}`.
    Second,
    /// `gamma_t^4 / gamma_{t+1}^4 <= 1 + b gamma_{t+1}^4`.
    Fourth,
}

pub fn min_ratio_constant(schedule: &StepSchedule, order: RatioOrder) -> f64 {
    match order {
        RatioOrder::Second => ratio_constant(schedule, 1, 1, RatioAnchor::Next),
        RatioOrder::Fourth => ratio_constant(schedule, 4, 4, RatioAnchor::Next),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    Basic,
    Improved,
}

impl Theorem {
    pub fn id(self) -> u8 {
        match self {
            Theorem::Basic => 1,
            Theorem::Improved => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; the condition holds iff the margin is `>= 0`.
    pub margin: f64,
    pub pass: bool,
}

impl Condition {
    fn le(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, margin: rhs - lhs, pass: lhs <= rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub theorem: Theorem,
    pub b: f64,
    pub conditions: Vec<Condition>,
    /// Margin of the ratio condition anchored at `gamma_t` instead of `gamma_{t+1}`.
    pub lemma_variant: Option<Condition>,
    pub pass: bool,
}

/// `((rho/4) / (b (1 - rho/2)))^(1/root)`, infinite when `b = 0`.
pub fn ratio_cap(rho: f64, b: f64, root: f64) -> f64 {
    if b <= 0.0 {
        return f64::INFINITY;
    }
    ((rho / 4.0) / (b * (1.0 - rho / 2.0))).powf(1.0 / root)
}

/// Largest violation of `(gamma_t/gamma_{t+1})^p <= 1 + b gamma_anchor^q`, as a
/// condition whose margin is the smallest slack over the horizon.
fn ratio_condition(schedule: &StepSchedule, name: &str, p: i32, b: f64, anchor: RatioAnchor) -> Condition {
    let mut worst = Condition::le(name, 1.0, 1.0);
    if matches!(schedule.kind, ScheduleKind::Constant(_) | ScheduleKind::InvSqrtT) {
        return worst;
    }
    for t in 0..schedule.horizon.saturating_sub(1) {
        let (cur, next) = (schedule.gamma(t), schedule.gamma(t + 1));
        let base = match anchor {
            RatioAnchor::Next => next,
            RatioAnchor::Current => cur,
        };
        let mut c = Condition::le(name, (cur / next).powi(p), 1.0 + b * base.powi(p));
        // b is itself computed from these ratios
        c.pass = c.lhs <= c.rhs * (1.0 + 1e-12);
        if c.margin < worst.margin {
            worst = c;
        }
    }
    worst
}

pub fn check_step_conditions(
    schedule: &StepSchedule,
    constants: &SmoothnessConstants,
    rho: f64,
    theorem: Theorem,
) -> ConditionReport {
    let sup = schedule.sup();
    let l = constants.l;
    let (b, conditions, lemma_variant) = match theorem {
        Theorem::Basic => {
            let b = min_ratio_constant(schedule, RatioOrder::Second);
            let conds = vec![
                Condition::le("sup_gamma <= rho/(4L)", sup, rho / (4.0 * l)),
                Condition::le("sup_gamma <= sqrt((rho/(4b))/(1-rho/2))", sup, ratio_cap(rho, b, 2.0)),
                ratio_condition(schedule, "gamma_t/gamma_{t+1} <= 1 + b gamma_{t+1}", 1, b, RatioAnchor::Next),
            ];
            (b, conds, None)
        }
        Theorem::Improved => {
            let b = min_ratio_constant(schedule, RatioOrder::Fourth);
            let conds = vec![
                Condition::le("sup_gamma <= rho/(9L)", sup, rho / (9.0 * l)),
                Condition::le("sup_gamma <= sqrt((rho/(4b))/(1-rho/2))", sup, ratio_cap(rho, b, 2.0)),
                Condition::le("sup_gamma <= ((rho/(4b))/(1-rho/2))^(1/4)", sup, ratio_cap(rho, b, 4.0)),
                ratio_condition(schedule, "gamma_t^4/gamma_{t+1}^4 <= 1 + b gamma_{t+1}^4", 4, b, RatioAnchor::Next),
            ];
            let variant =
                ratio_condition(schedule, "gamma_t^4/gamma_{t+1}^4 <= 1 + b gamma_t^4", 4, b, RatioAnchor::Current);
            (b, conds, Some(variant))
        }
    };
    let pass = conditions.iter().all(|c| c.pass);
    ConditionReport { theorem, b, conditions, lemma_variant, pass }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Every agent starts at the same point.
    Equal(Vec<f64>),
    /// Independent `N(mean, std^2)` coordinates per agent.
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsgdSampling {
    /// One draw from each agent's distribution.
    #[default]
    PerAgent,
    /// `n` draws from the union of all agents' samples.
    Pooled,
}

#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub mixing: &'a MixingMatrix,
    pub suite: &'a ObjectiveSuite,
    pub schedule: &'a StepSchedule,
    pub iterations: usize,
    pub init: Init,
    pub master_seed: u64,
    pub run: usize,
    /// CSGD reuses the DSGD agent streams. Quadratic suites only.
    pub shared_noise: bool,
    pub stride: usize,
    /// Retain every state and gradient matrix.
    pub debug: bool,
    pub sampling: CsgdSampling,
}

impl<'a> RunConfig<'a> {
    pub fn new(
        mixing: &'a MixingMatrix,
        suite: &'a ObjectiveSuite,
        schedule: &'a StepSchedule,
        iterations: usize,
        init: Init,
        master_seed: u64,
    ) -> Self {
        Self {
            mixing,
            suite,
            schedule,
            iterations,
            init,
            master_seed,
            run: 0,
            shared_noise: false,
            stride: 1,
            debug: false,
            sampling: CsgdSampling::PerAgent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.suite.n();
        if self.mixing.n() != n {
            return Err(Error::InvalidRun(format!("mixing matrix is {0}x{0} but the suite has {n} agents", self.mixing.n())));
        }
        if self.schedule.horizon < self.iterations {
            return Err(Error::InvalidRun(format!(
                "schedule horizon {} is shorter than T = {}",
                self.schedule.horizon, self.iterations
            )));
        }
        if let Init::Equal(v) = &self.init {
            if v.len() != self.suite.d() {
                return Err(Error::DimensionError { expected: self.suite.d(), got: v.len() });
            }
        }
        if let Init::Gaussian { mean, std } = self.init {
            if !(mean.is_finite() && std >= 0.0 && std.is_finite()) {
                return Err(Error::InvalidRun(format!("gaussian init needs finite mean and std >= 0 (got {mean}, {std})")));
            }
        }
        if self.shared_noise && !self.suite.is_quadratic() {
            return Err(Error::InvalidRun("shared_noise is only defined for the quadratic family".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidRun("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// `Theta^0`, one row per agent.
    pub fn initial_state(&self) -> DMatrix<f64> {
        let (n, d) = (self.suite.n(), self.suite.d());
        match &self.init {
            Init::Equal(v) => DMatrix::from_fn(n, d, |_, k| v[k]),
            Init::Gaussian { mean, std } => {
                let normal = Normal::new(*mean, *std).expect("validated");
                let mut theta = DMatrix::zeros(n, d);
                for i in 0..n {
                    let mut rng = substream(self.master_seed, self.run, i, 0, Purpose::Init);
                    for k in 0..d {
                        theta[(i, k)] = normal.sample(&mut rng);
                    }
                }
                theta
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub iterates: DMatrix<f64>,
    pub t: usize,
}

impl WorldState {
    pub fn n(&self) -> usize {
        self.iterates.nrows()
    }

    pub fn d(&self) -> usize {
        self.iterates.ncols()
    }

    /// `bar theta = (1/n) sum_i theta_i`.
    pub fn average(&self) -> Vec<f64> {
        row_average(&self.iterates)
    }
}

pub(crate) fn row_average(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    (0..m.ncols()).map(|k| m.column(k).iter().sum::<f64>() / n).collect()
}

fn divergence(t: usize, run: usize) -> Error {
    Error::NumericalDivergence { t, run: Some(run) }
}

fn record(state: &WorldState, suite: &ObjectiveSuite, gamma: f64, run: usize) -> Result<Record> {
    record_metrics(state, suite, gamma).map_err(|e| match e {
        Error::NumericalDivergence { t, .. } => divergence(t, run),
        other => other,
    })
}

/// Stochastic gradients of every agent at its own iterate, step `t`.
pub fn dsgd_gradients(
    suite: &ObjectiveSuite,
    theta: &DMatrix<f64>,
    master_seed: u64,
    run: usize,
    t: usize,
    out: &mut DMatrix<f64>,
) {
    let d = suite.d();
    let mut row = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..suite.n() {
        for k in 0..d {
            row[k] = theta[(i, k)];
        }
        let mut rng = substream(master_seed, run, i, t, Purpose::Dsgd);
        suite.stochastic_gradient(i, &row, &mut rng, &mut g);
        for k in 0..d {
            out[(i, k)] = g[k];
        }
    }
}

/// Average of the `n` minibatch gradients CSGD uses at step `t`.
pub fn minibatch_gradient(cfg: &RunConfig<'_>, theta: &[f64], t: usize, out: &mut [f64]) {
    let suite = cfg.suite;
    let purpose = if cfg.shared_noise { Purpose::Dsgd } else { Purpose::Csgd };
    let mut g = vec![0.0; theta.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..suite.n() {
        let mut rng = substream(cfg.master_seed, cfg.run, j, t, purpose);
        match cfg.sampling {
            CsgdSampling::PerAgent => suite.stochastic_gradient(j, theta, &mut rng, &mut g),
            CsgdSampling::Pooled => suite.pooled_stochastic_gradient(theta, &mut rng, &mut g),
        }
        for (o, v) in out.iter_mut().zip(&g) {
            *o += v;
        }
    }
    let n = suite.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
}

/// `theta_i^{t+1} = sum_j W_ij theta_j^t - gamma_{t+1} g_i^t`.
pub fn run_dsgd(cfg: &RunConfig<'_>) -> Result<Trajectory> {
    cfg.validate()?;
    let (n, d) = (cfg.suite.n(), cfg.suite.d());
    let w = cfg.mixing.weights();
    let mut state = WorldState { iterates: cfg.initial_state(), t: 0 };
    let mut next = DMatrix::zeros(n, d);
    let mut grads = DMatrix::zeros(n, d);
    let mut records = Vec::with_capacity(cfg.iterations / cfg.stride + 1);
    let mut debug = cfg.debug.then(|| DebugTrace { states: vec![state.iterates.clone()], ..Default::default() });

    for t in 0..cfg.iterations {
        let gamma = cfg.schedule.eval(t)?;
        if t % cfg.stride == 0 {
            records.push(record(&state, cfg.suite, gamma, cfg.run)?);
        }
        dsgd_gradients(cfg.suite, &state.iterates, cfg.master_seed, cfg.run, t, &mut grads);
        next.gemm(1.0, w, &state.iterates, 0.0);
        for (x, g) in next.iter_mut().zip(grads.iter()) {
            *x -= gamma * g;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(divergence(t + 1, cfg.run));
        }
        std::mem::swap(&mut state.iterates, &mut next);
        state.t = t + 1;
        if let Some(trace) = debug.as_mut() {
            trace.states.push(state.iterates.clone());
            trace.stochastic_grads.push(grads.clone());
            trace.step_sizes.push(gamma);
        }
    }
    let final_record = record(&state, cfg.suite, 0.0, cfg.run)?;
    Ok(Trajectory { run: cfg.run, seed: cfg.master_seed, stride: cfg.stride, records, final_record, debug })
}

/// `bar theta^{t+1} = bar theta^t - gamma_{t+1} (1/n) sum_j g_j`, started from
/// the average of the agents' initial points.
pub fn run_csgd(cfg: &RunConfig<'_>) -> Result<Trajectory> {
    cfg.validate()?;
    let d = cfg.suite.d();
    let start = row_average(&cfg.initial_state());
    let mut state = WorldState { iterates: DMatrix::from_row_slice(1, d, &start), t: 0 };
    let mut theta = start;
    let mut g = vec![0.0; d];
    let mut records = Vec::with_capacity(cfg.iterations / cfg.stride + 1);
    let mut debug = cfg.debug.then(|| DebugTrace { states: vec![state.iterates.clone()], ..Default::default() });

    for t in 0..cfg.iterations {
        let gamma = cfg.schedule.eval(t)?;
        if t % cfg.stride == 0 {
            records.push(record(&state, cfg.suite, gamma, cfg.run)?);
        }
        minibatch_gradient(cfg, &theta, t, &mut g);
        for (x, v) in theta.iter_mut().zip(&g) {
            *x -= gamma * v;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(divergence(t + 1, cfg.run));
        }
        state.iterates.copy_from_slice(&theta);
        state.t = t + 1;
        if let Some(trace) = debug.as_mut() {
            trace.states.push(state.iterates.clone());
            trace.stochastic_grads.push(DMatrix::from_row_slice(1, d, &g));
            trace.step_sizes.push(gamma);
        }
    }
    let final_record = record(&state, cfg.suite, 0.0, cfg.run)?;
    Ok(Trajectory { run: cfg.run, seed: cfg.master_seed, stride: cfg.stride, records, final_record, debug })
}

/// Worker count from `CSL_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("CSL_THREADS").ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Maps `job` over `0..runs` in parallel, results ordered by run index.
pub fn par_map_runs<T, F>(runs: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let go = || (0..runs).into_par_iter().map(&job).collect::<Result<Vec<_>>>();
    match thread_cap() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidRun(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}

pub fn run_ensemble<F>(runs: usize, job: F) -> Result<Vec<Trajectory>>
where
    F: Fn(usize) -> Result<Trajectory> + Sync + Send,
{
    par_map_runs(runs, job)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{
        gen_hetero_classification, make_quadratic_suite, make_sigmoid_suite, AgentSamples, ClassificationDataset, DataMode,
        QuadraticSpec,
    };
    use crate::topology::{build_complete, build_ring, spectral_gap};
    use nalgebra::DVector;

    fn quad_suite(n: usize, noise: f64) -> ObjectiveSuite {
        make_quadratic_suite(QuadraticSpec::random(3, 0.5, 2.0, noise, 11).unwrap(), n).unwrap()
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(StepSchedule::constant(0.1, 5).unwrap().eval(3).unwrap(), 0.1);
        assert_eq!(StepSchedule::inv_sqrt_t(100).unwrap().eval(42).unwrap(), 0.1);
        let (beta, l) = (0.01, 0.7);
        let s = StepSchedule::sqrt_decay_from(beta, l, 10).unwrap();
        assert!((s.eval(0).unwrap() - (beta / (8.0 * l * l)).sqrt()).abs() < 1e-15);
        assert!(matches!(s.eval(10), Err(Error::HorizonExceeded { t: 10, horizon: 10 })));
        assert!(StepSchedule::constant(-1.0, 5).is_err());
        assert!(StepSchedule::sqrt_decay(0.0, 1.0, 5).is_err());
    }

    #[test]
    fn ratio_constants() {
        let c = StepSchedule::constant(0.3, 50).unwrap();
        assert_eq!(min_ratio_constant(&c, RatioOrder::Second), 0.0);
        assert_eq!(min_ratio_constant(&c, RatioOrder::Fourth), 0.0);
        assert_eq!(min_ratio_constant(&StepSchedule::inv_sqrt_t(50).unwrap(), RatioOrder::Second), 0.0);

        let (a0, a1) = (2.0, 5.0);
        let s = StepSchedule::sqrt_decay(a0, a1, 200).unwrap();
        let at = |t: f64| (((a1 + t + 1.0) / (a1 + t)).sqrt() - 1.0) * ((a1 + t + 1.0) / a0).sqrt();
        let b = min_ratio_constant(&s, RatioOrder::Second);
        assert!((b - at(0.0)).abs() < 1e-14 * b);
        assert!((1..199).all(|t| at(t as f64) <= at(0.0)));
        // quartic: ((a1+t+1)/(a1+t))^2 - 1 over a0^2/(a1+t+1)^2
        let q = |t: f64| (((a1 + t + 1.0) / (a1 + t)).powi(2) - 1.0) * (a1 + t + 1.0).powi(2) / (a0 * a0);
        let b4 = min_ratio_constant(&s, RatioOrder::Fourth);
        let expect = (0..199).map(|t| q(t as f64)).fold(0.0, f64::max);
        assert!((b4 - expect).abs() < 1e-12 * expect);
    }

    fn consts(l: f64) -> SmoothnessConstants {
        SmoothnessConstants { l, l_h: 0.0, sigma: 0.0, varsigma: 0.0, varsigma_h: 0.0, f_star: 0.0, d: 0.0 }
    }

    #[test]
    fn step_condition_examples() {
        let (rho, l) = (0.2, 1.5);
        let ok = StepSchedule::constant(rho / (8.0 * l), 100).unwrap();
        let r = check_step_conditions(&ok, &consts(l), rho, Theorem::Basic);
        assert!(r.pass);
        assert_eq!(r.b, 0.0);

        let bad = StepSchedule::constant(rho / (2.0 * l), 100).unwrap();
        let r = check_step_conditions(&bad, &consts(l), rho, Theorem::Basic);
        assert!(!r.pass);
        assert!(!r.conditions[0].pass);
        assert!(r.conditions[1..].iter().all(|c| c.pass));

        let edge = StepSchedule::constant(rho / (9.0 * l), 100).unwrap();
        let r = check_step_conditions(&edge, &consts(l), rho, Theorem::Improved);
        assert!(r.pass);
        assert_eq!(r.conditions[0].margin, 0.0);
        assert!(r.lemma_variant.unwrap().pass);
    }

    #[test]
    fn zero_step_is_pure_consensus() {
        let suite = quad_suite(6, 0.5);
        let w = build_ring(6, 0.5).unwrap();
        let sched = StepSchedule::constant(0.0, 20).unwrap();
        let cfg = RunConfig::new(&w, &suite, &sched, 20, Init::Equal(vec![0.4, -1.0, 2.0]), 3);
        let tr = run_dsgd(&cfg).unwrap();
        assert!(tr.records.iter().all(|r| r.consensus_sq < 1e-28));
        assert!((tr.records[0].f_avg - tr.final_record.f_avg).abs() < 1e-14);

        let mut cfg = cfg;
        cfg.init = Init::Gaussian { mean: 0.0, std: 1.0 };
        cfg.debug = true;
        let tr = run_dsgd(&cfg).unwrap();
        let states = &tr.debug.unwrap().states;
        let rho = spectral_gap(&w).unwrap().rho;
        let mut expect = states[0].clone();
        for (t, s) in states.iter().enumerate() {
            assert!((s - &expect).norm() < 1e-12, "t = {t}");
            expect = w.weights() * expect;
        }
        let q = |m: &DMatrix<f64>| {
            let avg = row_average(m);
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| m[(i, k)] - avg[k]).norm()
        };
        for pair in states.windows(2) {
            assert!(q(&pair[1]) <= (1.0 - rho) * q(&pair[0]) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn single_agent_is_sgd() {
        let suite = quad_suite(1, 0.3);
        let w = MixingMatrix::identity(1);
        let sched = StepSchedule::constant(0.1, 30).unwrap();
        let cfg = RunConfig::new(&w, &suite, &sched, 30, Init::Equal(vec![1.0, 1.0, 1.0]), 9);
        let tr = run_dsgd(&cfg).unwrap();
        let mut theta = vec![1.0; 3];
        let mut g = vec![0.0; 3];
        for t in 0..30 {
            let mut rng = substream(9, 0, 0, t, Purpose::Dsgd);
            suite.stochastic_gradient(0, &theta, &mut rng, &mut g);
            for k in 0..3 {
                theta[k] -= 0.1 * g[k];
            }
        }
        assert!((tr.final_record.f_avg - suite.value(&theta).unwrap()).abs() < 1e-13);
        assert!(tr.records.iter().all(|r| r.consensus_sq == 0.0));
    }

    #[test]
    fn average_iterate_identity() {
        let data = gen_hetero_classification(6, 3, 20, 5).unwrap();
        let suite = make_sigmoid_suite(data);
        let w = build_ring(6, 0.6).unwrap();
        let sched = StepSchedule::constant(0.2, 50).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &sched, 50, Init::Gaussian { mean: 1.0, std: 0.8 }, 21);
        cfg.debug = true;
        let trace = run_dsgd(&cfg).unwrap().debug.unwrap();
        for t in 0..50 {
            let before = row_average(&trace.states[t]);
            let after = row_average(&trace.states[t + 1]);
            let g = row_average(&trace.stochastic_grads[t]);
            for k in 0..3 {
                assert!((after[k] - (before[k] - 0.2 * g[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_noise_quadratic_equivalence() {
        let suite = quad_suite(5, 0.2);
        let w = build_ring(5, 0.4).unwrap();
        let sched = StepSchedule::constant(0.05, 300).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &sched, 300, Init::Equal(vec![2.0, -1.0, 0.5]), 77);
        cfg.shared_noise = true;
        cfg.debug = true;
        let a = run_dsgd(&cfg).unwrap().debug.unwrap();
        let b = run_csgd(&cfg).unwrap().debug.unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            let avg = DVector::from_vec(row_average(x));
            let c = DVector::from_column_slice(y.as_slice());
            assert!((avg - &c).norm() <= 1e-9 * c.norm().max(1e-300));
        }
    }

    #[test]
    fn shared_noise_rejected_for_sigmoid() {
        let suite = make_sigmoid_suite(gen_hetero_classification(3, 2, 4, 1).unwrap());
        let w = build_complete(3).unwrap();
        let sched = StepSchedule::constant(0.1, 5).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &sched, 5, Init::Equal(vec![0.0; 2]), 0);
        cfg.shared_noise = true;
        assert!(matches!(run_csgd(&cfg), Err(Error::InvalidRun(_))));
    }

    #[test]
    fn config_validation() {
        let suite = quad_suite(4, 0.1);
        let w = build_ring(5, 0.5).unwrap();
        let sched = StepSchedule::constant(0.1, 5).unwrap();
        let cfg = RunConfig::new(&w, &suite, &sched, 5, Init::Equal(vec![0.0; 3]), 0);
        assert!(matches!(run_dsgd(&cfg), Err(Error::InvalidRun(_))));
        let w = build_ring(4, 0.5).unwrap();
        let cfg = RunConfig::new(&w, &suite, &sched, 6, Init::Equal(vec![0.0; 3]), 0);
        assert!(matches!(run_dsgd(&cfg), Err(Error::InvalidRun(_))));
        let cfg = RunConfig::new(&w, &suite, &sched, 5, Init::Equal(vec![0.0; 2]), 0);
        assert!(matches!(run_dsgd(&cfg), Err(Error::DimensionError { .. })));
    }

    #[test]
    fn csgd_zero_variance_is_gradient_descent() {
        let sample = std::sync::Arc::new(AgentSamples::new(2, vec![0.8, -0.5], vec![1.0]).unwrap());
        let data = ClassificationDataset::new(0.05, DataMode::Homogeneous, vec![sample; 4]).unwrap();
        let suite = make_sigmoid_suite(data);
        assert!(suite.is_homogeneous());
        let w = build_complete(4).unwrap();
        let sched = StepSchedule::constant(0.5, 40).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &sched, 40, Init::Equal(vec![0.3, -0.2]), 5);
        cfg.debug = true;
        let tr = run_csgd(&cfg).unwrap();
        let mut theta = vec![0.3, -0.2];
        let trace = tr.debug.unwrap();
        for t in 0..40 {
            let g = suite.gradient(&theta).unwrap();
            for k in 0..2 {
                theta[k] -= 0.5 * g[k];
            }
            assert!((trace.states[t + 1][(0, 0)] - theta[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn csgd_zero_step_and_minibatch_variance() {
        let noise = 0.4;
        let suite = quad_suite(8, noise);
        let w = build_ring(8, 0.5).unwrap();
        let sched = StepSchedule::constant(0.0, 10_000).unwrap();
        let cfg = RunConfig::new(&w, &suite, &sched, 10_000, Init::Equal(vec![0.1, 0.2, 0.3]), 12);
        let tr = run_csgd(&cfg).unwrap();
        assert_eq!(tr.records[0].f_avg, tr.final_record.f_avg);

        let theta = [0.1, 0.2, 0.3];
        let exact = suite.gradient(&theta).unwrap();
        let mut g = vec![0.0; 3];
        let mut acc = 0.0;
        for t in 0..10_000 {
            minibatch_gradient(&cfg, &theta, t, &mut g);
            acc += g.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let measured = acc / 10_000.0;
        let sigma_sq = 3.0 * noise * noise;
        assert!((measured / (sigma_sq / 8.0) - 1.0).abs() < 0.05, "{measured}");
    }

    #[test]
    fn divergence_is_reported() {
        let suite = make_quadratic_suite(QuadraticSpec::new(DMatrix::identity(1, 1) * 4.0, DVector::zeros(1), 0.0).unwrap(), 2)
            .unwrap();
        let w = build_complete(2).unwrap();
        let sched = StepSchedule::constant(1e3, 500).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &sched, 500, Init::Equal(vec![1.0]), 0);
        cfg.run = 3;
        match run_dsgd(&cfg) {
            Err(Error::NumericalDivergence { t, run }) => {
                assert!(t > 0 && t <= 500);
                assert_eq!(run, Some(3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stride_and_determinism() {
        let suite = make_sigmoid_suite(gen_hetero_classification(4, 2, 10, 2).unwrap());
        let w = build_ring(4, 0.5).unwrap();
        let sched = StepSchedule::constant(0.1, 25).unwrap();
        let mut cfg = RunConfig::new(&w, &suite, &sched, 25, Init::Gaussian { mean: 1.0, std: 0.8 }, 4);
        cfg.stride = 10;
        let a = run_dsgd(&cfg).unwrap();
        assert_eq!(a.times(), vec![0, 10, 20]);
        let runs = run_ensemble(4, |r| {
            let mut c = cfg.clone();
            c.run = r;
            run_dsgd(&c)
        })
        .unwrap();
        assert_eq!(runs[0].records, a.records);
        assert_ne!(runs[1].records, a.records);
        let again = run_ensemble(4, |r| {
            let mut c = cfg.clone();
            c.run = r;
            run_dsgd(&c)
        })
        .unwrap();
        for (x, y) in runs.iter().zip(&again) {
            assert_eq!(x.records, y.records);
        }
    }
}
