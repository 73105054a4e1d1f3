//! Builds the objects a config describes and runs seeded ensembles.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{AlgorithmKind, ExperimentConfig, InitSpec, ObjectiveSpec, ScheduleSpec, TopologySpec};
use super::plot::{emit_plot, PlotStyle};
use crate::algorithms::{run_csgd, run_dsgd, run_ensemble, CsgdSampling, Init, RunConfig, StepSchedule};
use crate::error::{Error, Result};
use crate::metrics::{ensemble_summary, trajectories_csv, transient_time, EnsembleSummary, TransientEstimate, Trajectory};
use crate::objectives::{
    estimate_constants, gen_hetero_classification, gen_homo_from, make_quadratic_suite, make_sigmoid_suite,
    ClassificationDataset, ConstantsEstimate, DataMode, EstimateOptions, ObjectiveSuite, QuadraticSpec,
};
use crate::topology::{
    build_complete, build_metropolis_hastings, build_ring, build_torus_2d, spectral_gap, Graph, MixingMatrix,
};

pub fn build_mixing(cfg: &ExperimentConfig) -> Result<MixingMatrix> {
    match &cfg.topology {
        TopologySpec::Ring { n, self_weight } => build_ring(*n, *self_weight),
        TopologySpec::Torus { rows, cols, self_weight } => build_torus_2d(*rows, *cols, *self_weight),
        TopologySpec::Complete { n } => build_complete(*n),
        TopologySpec::EdgeList { path } => build_metropolis_hastings(&Graph::read_edge_list(path)?),
        TopologySpec::Matrix { path } => MixingMatrix::parse_csv(&fs::read_to_string(path)?),
    }
}

/// The heterogeneous dataset of a sigmoid config, generated or imported.
pub fn build_dataset(cfg: &ExperimentConfig, n: usize) -> Result<Option<ClassificationDataset>> {
    let ObjectiveSpec::Sigmoid { d, per_agent, seed, data, beta, .. } = &cfg.objective else {
        return Ok(None);
    };
    let mut ds = match data {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let provisional = ClassificationDataset::parse_csv(&text, 0.0)?;
            let beta = 10.0 / provisional.total_samples() as f64;
            provisional.with_beta(beta)?
        }
        None => gen_hetero_classification(n, *d, *per_agent, *seed)?,
    };
    if ds.n() != n {
        return Err(Error::ConfigInvalid {
            field: "objective.data".into(),
            reason: format!("dataset has {} agents but the topology has {n}", ds.n()),
        });
    }
    if let Some(b) = beta {
        ds = ds.with_beta(*b)?;
    }
    Ok(Some(ds))
}

/// Mixing matrix plus the homogeneous and heterogeneous variants of the
/// configured objective. Quadratic suites are homogeneous, so both coincide.
#[derive(Debug, Clone)]
pub struct Setup {
    pub mixing: MixingMatrix,
    pub hetero: ObjectiveSuite,
    pub homo: ObjectiveSuite,
    pub mode: DataMode,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let mixing = build_mixing(cfg)?;
        let n = mixing.n();
        match &cfg.objective {
            ObjectiveSpec::Quadratic { d, mu, l, noise_std, seed } => {
                let suite = make_quadratic_suite(QuadraticSpec::random(*d, *mu, *l, *noise_std, *seed)?, n)?;
                Ok(Self { mixing, hetero: suite.clone(), homo: suite, mode: DataMode::Homogeneous })
            }
            ObjectiveSpec::Sigmoid { mode, .. } => {
                let ds = build_dataset(cfg, n)?.expect("sigmoid config");
                let homo = make_sigmoid_suite(gen_homo_from(&ds));
                Ok(Self { mixing, hetero: make_sigmoid_suite(ds), homo, mode: *mode })
            }
        }
    }

    pub fn n(&self) -> usize {
        self.mixing.n()
    }

    /// The suite selected by `objective.mode`.
    pub fn configured(&self) -> &ObjectiveSuite {
        match self.mode {
            DataMode::Homogeneous => &self.homo,
            DataMode::Heterogeneous => &self.hetero,
        }
    }

    pub fn suite_for(&self, kind: AlgorithmKind) -> &ObjectiveSuite {
        match kind {
            AlgorithmKind::HomoDsgd => &self.homo,
            AlgorithmKind::HeteDsgd => &self.hetero,
            AlgorithmKind::Dsgd | AlgorithmKind::Csgd | AlgorithmKind::CsgdAgent => self.configured(),
        }
    }

    pub fn rho(&self) -> Result<f64> {
        Ok(spectral_gap(&self.mixing)?.rho)
    }
}

/// Resolves a schedule spec over `horizon` steps.
pub fn build_schedule(spec: &ScheduleSpec, setup: &Setup, horizon: usize) -> Result<StepSchedule> {
    let l = setup.configured().lipschitz();
    match *spec {
        ScheduleSpec::Constant(g) => StepSchedule::constant(g, horizon),
        ScheduleSpec::InvSqrtT => StepSchedule::inv_sqrt_t(horizon),
        ScheduleSpec::RhoOverNineL { scale } => StepSchedule::constant(scale * setup.rho()? / (9.0 * l), horizon),
        ScheduleSpec::SqrtDecay { a0, a1 } => {
            let beta = match setup.configured().family() {
                crate::objectives::Family::Sigmoid(ds) => Some(ds.beta()),
                crate::objectives::Family::Quadratic(_) => None,
            };
            let a0 = match (a0, beta) {
                (Some(v), _) => v,
                (None, Some(b)) if b > 0.0 => 1.0 / b,
                _ => {
                    return Err(Error::ConfigInvalid {
                        field: "schedule.a0".into(),
                        reason: "required when there is no regularization weight".into(),
                    })
                }
            };
            let a1 = match (a1, beta) {
                (Some(v), _) => v,
                (None, Some(b)) if b > 0.0 => 8.0 * l * l / (b * b),
                _ => {
                    return Err(Error::ConfigInvalid {
                        field: "schedule.a1".into(),
                        reason: "required when there is no regularization weight".into(),
                    })
                }
            };
            StepSchedule::sqrt_decay(a0, a1, horizon)
        }
    }
}

pub fn build_init(spec: &InitSpec, d: usize) -> Init {
    match *spec {
        InitSpec::Equal(v) => Init::Equal(vec![v; d]),
        InitSpec::Gaussian { mean, std } => Init::Gaussian { mean, std },
    }
}

/// Constants estimate of `suite` around the mean initial point.
pub fn estimate_for(cfg: &ExperimentConfig, suite: &ObjectiveSuite) -> Result<ConstantsEstimate> {
    let mut opts = EstimateOptions::new(cfg.init_center(suite.d()), cfg.master_seed);
    opts.probe_count = cfg.estimate.probes;
    opts.draw_count = cfg.estimate.draws;
    opts.radius = cfg.estimate.radius;
    estimate_constants(suite, &opts)
}

/// Knobs shared by one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleSpec<'a> {
    pub kind: AlgorithmKind,
    pub schedule: &'a StepSchedule,
    pub iterations: usize,
    pub runs: usize,
    pub init: Init,
    pub master_seed: u64,
    pub stride: usize,
    pub sampling: CsgdSampling,
    pub debug: bool,
}

pub fn run_algorithm(setup: &Setup, spec: &EnsembleSpec<'_>) -> Result<Vec<Trajectory>> {
    let suite = setup.suite_for(spec.kind);
    let mut base = RunConfig::new(&setup.mixing, suite, spec.schedule, spec.iterations, spec.init.clone(), spec.master_seed);
    base.stride = spec.stride;
    base.debug = spec.debug;
    base.sampling = match spec.kind {
        AlgorithmKind::CsgdAgent => CsgdSampling::PerAgent,
        _ => spec.sampling,
    };
    let dsgd = spec.kind.is_dsgd();
    run_ensemble(spec.runs, |run| {
        let mut c = base.clone();
        c.run = run;
        if dsgd {
            run_dsgd(&c)
        } else {
            run_csgd(&c)
        }
    })
}

#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub kind: AlgorithmKind,
    pub runs: Vec<Trajectory>,
    pub summary: Option<EnsembleSummary>,
}

impl AlgorithmResult {
    pub fn label(&self) -> &'static str {
        self.kind.label()
    }
}

#[derive(Debug, Clone)]
pub struct TransientRow {
    pub algorithm: &'static str,
    pub reference: &'static str,
    pub estimate: TransientEstimate,
    /// Final-quarter mean `grad_norm_sq` of the algorithm over the reference's.
    pub final_quarter_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub rho: f64,
    pub results: Vec<AlgorithmResult>,
    pub transients: Vec<TransientRow>,
    pub constants: ConstantsEstimate,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutput {
    pub fn result(&self, kind: AlgorithmKind) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.kind == kind)
    }

    pub fn transient(&self, kind: AlgorithmKind) -> Option<&TransientRow> {
        self.transients.iter().find(|r| r.algorithm == kind.label())
    }

    pub fn transient_table(&self) -> String {
        let mut out = String::from("algorithm,reference,t_star,delta,window,final_quarter_ratio\n");
        for r in &self.transients {
            let t = r.estimate.t_star.map_or("none".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6}",
                r.algorithm, r.reference, t, r.estimate.delta, r.estimate.window, r.final_quarter_ratio
            );
        }
        out
    }
}

/// Mean of the last quarter of the recorded mean curve.
pub fn final_quarter_mean(summary: &EnsembleSummary) -> f64 {
    let v = &summary.grad_norm_sq.mean;
    let start = v.len() - (v.len() / 4).max(1);
    v[start..].iter().sum::<f64>() / (v.len() - start) as f64
}

fn progress(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

fn write(files: &mut Vec<PathBuf>, path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

fn manifest(cfg: &ExperimentConfig, setup: &Setup, rho: f64, schedule: &StepSchedule, est: &ConstantsEstimate) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "name = {}", cfg.name);
    let _ = writeln!(m, "config_sha256 = {}", cfg.hash());
    let _ = writeln!(m, "master_seed = {}", cfg.master_seed);
    let _ = writeln!(m, "runs = {}", cfg.runs);
    let _ = writeln!(m, "run_seeds = substreams of master_seed for runs 0..{}", cfg.runs);
    let _ = writeln!(m, "T = {}", cfg.iterations);
    let _ = writeln!(m, "stride = {}", cfg.stride);
    let labels: Vec<&str> = cfg.algorithms.iter().map(|a| a.label()).collect();
    let _ = writeln!(m, "algorithms = {}", labels.join(", "));
    let _ = writeln!(m, "n = {}", setup.n());
    let _ = writeln!(m, "d = {}", setup.configured().d());
    let _ = writeln!(m, "rho = {rho:.16e}");
    let _ = writeln!(m, "schedule = {:?}", schedule.kind);
    let _ = writeln!(m, "gamma_1 = {:.16e}", schedule.gamma(0));
    for line in est.bound.to_kv().lines() {
        let _ = writeln!(m, "constants.{line}");
    }
    let _ = writeln!(m, "constants.sampled_sigma = {:.16e}", est.sampled_sigma);
    let _ = writeln!(m, "constants.sampled_varsigma = {:.16e}", est.sampled_varsigma);
    let _ = writeln!(m, "constants.sampled_varsigma_H = {:.16e}", est.sampled_varsigma_h);
    m.push_str("# config\n");
    for line in cfg.source.lines() {
        let _ = writeln!(m, "config| {line}");
    }
    m
}

/// Runs every configured algorithm, writing trajectories, summaries,
/// transient estimates, a plot and a manifest to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, quiet: bool) -> Result<ExperimentOutput> {
    let setup = Setup::build(cfg)?;
    let rho = setup.rho()?;
    let schedule = build_schedule(&cfg.schedule, &setup, cfg.iterations)?;
    let init = build_init(&cfg.init, setup.configured().d());
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    progress(quiet, "estimating constants");
    let constants = estimate_for(cfg, setup.configured())?;

    let mut results = Vec::new();
    for &kind in &cfg.algorithms {
        progress(quiet, &format!("running {} ({} runs x {} steps)", kind.label(), cfg.runs, cfg.iterations));
        let spec = EnsembleSpec {
            kind,
            schedule: &schedule,
            iterations: cfg.iterations,
            runs: cfg.runs,
            init: init.clone(),
            master_seed: cfg.master_seed,
            stride: cfg.stride,
            sampling: cfg.sampling,
            debug: false,
        };
        let runs = run_algorithm(&setup, &spec)?;
        write(&mut files, out_dir.join(format!("{}.trajectories.csv", kind.label())), &trajectories_csv(&runs))?;
        let summary = if runs.len() >= 2 { Some(ensemble_summary(&runs)?) } else { None };
        if let Some(s) = &summary {
            write(&mut files, out_dir.join(format!("{}.summary.csv", kind.label())), &s.to_csv())?;
        }
        results.push(AlgorithmResult { kind, runs, summary });
    }

    let reference = results
        .iter()
        .find(|r| r.kind == AlgorithmKind::Csgd)
        .or_else(|| results.iter().find(|r| r.kind == AlgorithmKind::CsgdAgent))
        .and_then(|r| r.summary.as_ref().map(|s| (r.kind.label(), s)));
    let mut transients = Vec::new();
    if let Some((ref_label, ref_summary)) = reference {
        for r in results.iter().filter(|r| r.kind.is_dsgd()) {
            if let Some(s) = &r.summary {
                transients.push(TransientRow {
                    algorithm: r.kind.label(),
                    reference: ref_label,
                    estimate: transient_time(s, ref_summary, cfg.transient_delta, cfg.transient_window)?,
                    final_quarter_ratio: final_quarter_mean(s) / final_quarter_mean(ref_summary),
                });
            }
        }
    }

    let out = ExperimentOutput { out_dir: out_dir.to_path_buf(), rho, results, transients, constants, files };
    let mut files = out.files.clone();
    if !out.transients.is_empty() {
        write(&mut files, out_dir.join("transients.csv"), &out.transient_table())?;
    }
    let plotted: Vec<(String, EnsembleSummary)> = out
        .results
        .iter()
        .filter_map(|r| r.summary.clone().map(|s| (r.label().to_string(), s)))
        .collect();
    if !plotted.is_empty() {
        let path = out_dir.join("grad_norm.svg");
        emit_plot(&plotted, &PlotStyle::titled(&cfg.name), &path)?;
        files.push(path);
    }
    write(&mut files, out_dir.join("manifest.txt"), &manifest(cfg, &setup, rho, &schedule, &out.constants))?;
    Ok(ExperimentOutput { files, ..out })
}
