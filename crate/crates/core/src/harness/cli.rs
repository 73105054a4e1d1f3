//! Command-line front end. Exit status: 0 on success, 1 on a failed check
//! or runtime error, 2 on a usage or config error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::{load_config, AlgorithmKind, ExperimentConfig, ObjectiveSpec};
use super::experiment::{build_dataset, build_mixing, estimate_for, run_algorithm, run_experiment, EnsembleSpec, Setup};
use super::plot::{emit_plot, PlotStyle};
use super::verify::run_verify;
use crate::algorithms::{Init, StepSchedule, Theorem};
use crate::bounds::{theorem_report, transient_predict};
use crate::error::{Error, Result};
use crate::metrics::EnsembleSummary;
use crate::objectives::{gen_homo_from, DataMode};
use crate::topology::validate_mixing;

#[derive(Debug, Parser)]
#[command(name = "csl", version, about = "Decentralized SGD laboratory")]
pub struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (or SVG file for `plot`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `runs` (and `verify.runs` when at least 2).
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the mixing matrix and print its spectral report.
    Topology,
    /// Write the heterogeneous and homogeneous datasets as CSV.
    GenData,
    /// Estimate the smoothness and noise constants.
    Estimate,
    /// Run every configured algorithm.
    Run,
    /// Run homo-DSGD, hete-DSGD and CSGD and print the transient table.
    Compare,
    /// Run the full verification suite.
    Verify,
    /// Audit the theorem bounds and compare transient predictions.
    Bounds,
    /// Plot ensemble summary CSVs.
    Plot {
        /// Summary CSV files; legend labels come from the file stems.
        summaries: Vec<PathBuf>,
        #[arg(long, default_value = "squared gradient norm")]
        title: String,
    },
}

enum Failure {
    Usage(String),
    Checks,
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigSyntax { .. } | Error::ConfigInvalid { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Checks) => 1,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn config(cli: &Cli) -> std::result::Result<ExperimentConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("this subcommand needs --config PATH".into()))?;
    let mut cfg = load_config(path).map_err(|e| match e {
        Error::Io(io) => Failure::Usage(format!("cannot read {}: {io}", path.display())),
        other => Failure::from(other),
    })?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(runs) = cli.runs {
        if runs == 0 {
            return Err(Failure::Usage("--runs must be at least 1".into()));
        }
        cfg.runs = runs;
        if runs >= 2 {
            cfg.verify.runs = runs;
        }
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

fn save(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Topology => topology(cli),
        Command::GenData => gen_data(cli),
        Command::Estimate => estimate(cli),
        Command::Run => run(cli, false),
        Command::Compare => run(cli, true),
        Command::Verify => verify(cli),
        Command::Bounds => bounds(cli),
        Command::Plot { summaries, title } => plot(cli, summaries, title),
    }
}

fn topology(cli: &Cli) -> Outcome {
    let cfg = config(cli)?;
    let w = build_mixing(&cfg)?;
    let r = validate_mixing(&w)?;
    println!("n = {}", w.n());
    println!("rho = {:.16e}", r.rho);
    println!("second_modulus = {:.16e}", r.second_modulus);
    println!("row_sum_residual = {:.3e}", r.row_sum_residual);
    println!("col_sum_residual = {:.3e}", r.col_sum_residual);
    println!("asymmetry = {:.3e}", r.asymmetry);
    println!("negativity = {:.3e}", r.negativity);
    if let Some(dir) = &cli.out {
        let path = save(dir, "mixing.csv", &w.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gen_data(cli: &Cli) -> Outcome {
    let cfg = config(cli)?;
    if !matches!(cfg.objective, ObjectiveSpec::Sigmoid { .. }) {
        return Err(Failure::Usage("gen-data needs a sigmoid objective".into()));
    }
    let n = build_mixing(&cfg)?.n();
    let hetero = build_dataset(&cfg, n)?.expect("sigmoid config");
    let dir = out_dir(cli, &cfg);
    for (name, ds) in [("hetero.csv", &hetero), ("homo.csv", &gen_homo_from(&hetero))] {
        let path = save(&dir, name, &ds.to_csv())?;
        println!("wrote {} ({} agents, {} samples)", path.display(), ds.n(), ds.total_samples());
    }
    Ok(())
}

fn estimate(cli: &Cli) -> Outcome {
    let cfg = config(cli)?;
    let setup = Setup::build(&cfg)?;
    let est = estimate_for(&cfg, setup.configured())?;
    let mut report = est.bound.to_kv();
    let _ = writeln!(report, "sampled_sigma = {:.10e}", est.sampled_sigma);
    let _ = writeln!(report, "sampled_varsigma = {:.10e}", est.sampled_varsigma);
    let _ = writeln!(report, "sampled_varsigma_H = {:.10e}", est.sampled_varsigma_h);
    let _ = writeln!(report, "cap_sigma = {:.10e}", est.cap_sigma);
    let _ = writeln!(report, "cap_varsigma = {:.10e}", est.cap_varsigma);
    let _ = writeln!(report, "cap_varsigma_H = {:.10e}", est.cap_varsigma_h);
    let _ = writeln!(report, "f_star_grad_norm = {:.3e}", est.f_star.final_grad_norm);
    print!("{report}");
    if let Some(dir) = &cli.out {
        save(dir, "constants.txt", &report)?;
    }
    Ok(())
}

fn run(cli: &Cli, compare: bool) -> Outcome {
    let mut cfg = config(cli)?;
    if compare {
        if !matches!(cfg.objective, ObjectiveSpec::Sigmoid { .. }) {
            return Err(Failure::Usage("compare needs a sigmoid objective".into()));
        }
        cfg.algorithms = vec![AlgorithmKind::HomoDsgd, AlgorithmKind::HeteDsgd, AlgorithmKind::Csgd];
        if cfg.runs < 2 {
            return Err(Failure::Usage("compare needs runs >= 2".into()));
        }
    }
    let dir = out_dir(cli, &cfg);
    let out = run_experiment(&cfg, &dir, cli.quiet)?;
    if compare || !out.transients.is_empty() {
        print!("{}", out.transient_table());
    }
    if !cli.quiet {
        for f in &out.files {
            eprintln!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn verify(cli: &Cli) -> Outcome {
    let cfg = config(cli)?;
    let outcome = run_verify(&cfg, cli.quiet)?;
    print!("{}", outcome.render());
    if let Some(dir) = &cli.out {
        save(dir, "verify.txt", &outcome.render())?;
        save(dir, "lemma2.csv", &outcome.lemma2.rows_csv())?;
        save(dir, "lemma4.csv", &outcome.lemma4.rows_csv())?;
    }
    if outcome.passed() {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn bounds(cli: &Cli) -> Outcome {
    let cfg = config(cli)?;
    let setup = Setup::build(&cfg)?;
    let rho = setup.rho()?;
    let suite = setup.configured();
    let n = suite.n();
    let est = estimate_for(&cfg, suite)?;
    let c = est.bound;
    let gamma = cfg.verify.gamma_scale * rho / (9.0 * suite.lipschitz());
    let schedule = StepSchedule::constant(gamma, cfg.iterations)?;
    let center = cfg.init_center(suite.d());
    if !cli.quiet {
        eprintln!("auditing theorems: {} runs x {} steps at gamma = {gamma:.4e}", cfg.runs, cfg.iterations);
    }
    let kind = match setup.mode {
        DataMode::Homogeneous => AlgorithmKind::HomoDsgd,
        DataMode::Heterogeneous => AlgorithmKind::HeteDsgd,
    };
    let runs = run_algorithm(
        &setup,
        &EnsembleSpec {
            kind,
            schedule: &schedule,
            iterations: cfg.iterations,
            runs: cfg.runs,
            init: Init::Equal(center),
            master_seed: cfg.master_seed,
            stride: 1,
            sampling: cfg.sampling,
            debug: false,
        },
    )?;
    let mut report = String::new();
    let _ = writeln!(report, "rho = {rho:.10e}");
    let _ = writeln!(report, "gamma = {gamma:.10e}");
    for line in c.to_kv().lines() {
        let _ = writeln!(report, "constants.{line}");
    }
    let mut pass = true;
    for theorem in [Theorem::Basic, Theorem::Improved] {
        let r = theorem_report(theorem, &runs, &c, rho, n, &schedule, cfg.iterations)?;
        pass &= r.pass;
        for line in r.to_kv().lines() {
            let _ = writeln!(report, "theorem{}.{line}", theorem.id());
        }
    }
    let p = transient_predict(&c, rho, n);
    let _ = writeln!(report, "transient.thm1_full = {:.6e}", p.thm1_full);
    let _ = writeln!(report, "transient.thm1_simplified = {:.6e}", p.thm1_simplified);
    let _ = writeln!(report, "transient.thm2_full = {:.6e}", p.thm2_full);
    let _ = writeln!(report, "transient.thm2_simplified = {:.6e}", p.thm2_simplified);

    let has_reference = cfg.algorithms.iter().any(|a| !a.is_dsgd());
    if has_reference && cfg.runs >= 2 {
        let dir = out_dir(cli, &cfg).join("empirical");
        let out = run_experiment(&cfg, &dir, cli.quiet)?;
        for t in &out.transients {
            let ts = t.estimate.t_star.map_or("none".to_string(), |v| v.to_string());
            let _ = writeln!(report, "transient.empirical.{} = {ts}", t.algorithm);
        }
    }
    print!("{report}");
    if let Some(dir) = &cli.out {
        save(dir, "bounds.txt", &report)?;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn plot(cli: &Cli, summaries: &[PathBuf], title: &str) -> Outcome {
    if summaries.is_empty() {
        return Err(Failure::Usage("plot needs at least one summary CSV".into()));
    }
    let runs = cli.runs.unwrap_or(2);
    let mut series = Vec::new();
    for path in summaries {
        let text = fs::read_to_string(path).map_err(Error::from)?;
        let label = path
            .file_name()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches(".csv").trim_end_matches(".summary").to_string())
            .unwrap_or_default();
        series.push((label, EnsembleSummary::parse_csv(&text, runs)?));
    }
    let target = cli.out.clone().unwrap_or_else(|| PathBuf::from("grad_norm.svg"));
    let target = if target.extension().is_some_and(|e| e == "svg") { target } else { target.join("grad_norm.svg") };
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    emit_plot(&series, &PlotStyle::titled(title), &target)?;
    if !cli.quiet {
        eprintln!("wrote {}", target.display());
    }
    Ok(())
}
