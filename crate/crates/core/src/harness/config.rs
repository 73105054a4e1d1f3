//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::algorithms::CsgdSampling;
use crate::error::{Error, Result};
use crate::objectives::DataMode;

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Ring { n: usize, self_weight: f64 },
    Torus { rows: usize, cols: usize, self_weight: f64 },
    Complete { n: usize },
    /// Metropolis-Hastings weights on a graph read from an edge list.
    EdgeList { path: PathBuf },
    /// Explicit weight matrix read from CSV.
    Matrix { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Sigmoid {
        d: usize,
        per_agent: usize,
        seed: u64,
        mode: DataMode,
        /// Heterogeneous dataset to import instead of generating one.
        data: Option<PathBuf>,
        beta: Option<f64>,
    },
    Quadratic { d: usize, mu: f64, l: f64, noise_std: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Constant(f64),
    InvSqrtT,
    /// `sqrt(a0 / (a1 + t))`, defaulting to `a0 = 1/beta`, `a1 = 8 L^2 / beta^2`.
    SqrtDecay { a0: Option<f64>, a1: Option<f64> },
    /// Constant `scale * rho / (9 L)`.
    RhoOverNineL { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Equal(f64),
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmKind {
    /// DSGD on the configured data mode.
    Dsgd,
    HomoDsgd,
    HeteDsgd,
    /// CSGD with the configured sampling.
    Csgd,
    CsgdAgent,
}

impl AlgorithmKind {
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmKind::Dsgd => "dsgd",
            AlgorithmKind::HomoDsgd => "homo-dsgd",
            AlgorithmKind::HeteDsgd => "hete-dsgd",
            AlgorithmKind::Csgd => "csgd",
            AlgorithmKind::CsgdAgent => "csgd-agent",
        }
    }

    pub fn is_dsgd(self) -> bool {
        matches!(self, AlgorithmKind::Dsgd | AlgorithmKind::HomoDsgd | AlgorithmKind::HeteDsgd)
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "dsgd" => AlgorithmKind::Dsgd,
            "homo-dsgd" => AlgorithmKind::HomoDsgd,
            "hete-dsgd" => AlgorithmKind::HeteDsgd,
            "csgd" => AlgorithmKind::Csgd,
            "csgd-agent" => AlgorithmKind::CsgdAgent,
            other => return Err(format!("unknown algorithm `{other}`")),
        })
    }
}

/// Settings of the `verify` suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySpec {
    pub runs: usize,
    pub iterations: usize,
    pub gamma_scale: f64,
    pub resamples: usize,
    pub pairs: usize,
    pub aux_horizon: usize,
    pub equivalence_steps: usize,
}

/// Settings of the constants estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSpec {
    pub probes: usize,
    pub draws: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: TopologySpec,
    pub objective: ObjectiveSpec,
    pub algorithms: Vec<AlgorithmKind>,
    pub schedule: ScheduleSpec,
    pub iterations: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub stride: usize,
    pub init: InitSpec,
    pub sampling: CsgdSampling,
    pub transient_delta: f64,
    pub transient_window: usize,
    pub out_dir: Option<PathBuf>,
    pub verify: VerifySpec,
    pub estimate: EstimateSpec,
    /// Verbatim config text.
    pub source: String,
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        match &self.topology {
            TopologySpec::Ring { n, .. } | TopologySpec::Complete { n } => *n,
            TopologySpec::Torus { rows, cols, .. } => rows * cols,
            TopologySpec::EdgeList { .. } | TopologySpec::Matrix { .. } => 0,
        }
    }

    /// SHA-256 of the config text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    /// Mean of the initial iterates.
    pub fn init_center(&self, d: usize) -> Vec<f64> {
        match self.init {
            InitSpec::Equal(v) => vec![v; d],
            InitSpec::Gaussian { mean, .. } => vec![mean; d],
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.to_string(), reason: reason.into() }
}

struct Entries {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Entries {
    fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigSyntax { line: k + 1, message: format!("expected `key = value`, got `{line}`") })?;
            let key = key.trim();
            let valid = !key.is_empty()
                && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
                && !key.starts_with('.')
                && !key.ends_with('.');
            if !valid {
                return Err(Error::ConfigSyntax { line: k + 1, message: format!("malformed key `{key}`") });
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::ConfigSyntax { line: k + 1, message: format!("duplicate key `{key}`") });
            }
        }
        Ok(Self { map, base: base.to_path_buf() })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.take(key).ok_or_else(|| invalid(key, "missing"))?;
        raw.parse().map_err(|_| invalid(key, format!("cannot parse `{raw}`")))
    }

    fn optional<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| invalid(key, format!("cannot parse `{raw}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.optional(key)?.unwrap_or(default))
    }

    fn path(&mut self, key: &str) -> Result<PathBuf> {
        let raw: String = self.required(key)?;
        let p = self.base.join(raw);
        if !p.is_file() {
            return Err(invalid(key, format!("file {} does not exist", p.display())));
        }
        Ok(p)
    }
}

fn positive(field: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(invalid(field, "must be at least 1"));
    }
    Ok(v)
}

fn finite_positive(field: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(field, format!("{v} must be positive and finite")));
    }
    Ok(v)
}

fn topology(e: &mut Entries) -> Result<TopologySpec> {
    let kind: String = e.or("topology.kind", "ring".to_string())?;
    let self_weight = |e: &mut Entries| -> Result<f64> {
        let s: f64 = e.required("topology.self_weight")?;
        if !(s > 0.0 && s < 1.0) {
            return Err(invalid("topology.self_weight", format!("{s} must lie in (0, 1)")));
        }
        Ok(s)
    };
    Ok(match kind.as_str() {
        "ring" => {
            let n = e.required("topology.n")?;
            if n < 3 {
                return Err(invalid("topology.n", "a ring needs at least 3 agents"));
            }
            TopologySpec::Ring { n, self_weight: self_weight(e)? }
        }
        "torus" => TopologySpec::Torus {
            rows: positive("topology.rows", e.required("topology.rows")?)?,
            cols: positive("topology.cols", e.required("topology.cols")?)?,
            self_weight: self_weight(e)?,
        },
        "complete" => TopologySpec::Complete { n: positive("topology.n", e.required("topology.n")?)? },
        "edge-list" => TopologySpec::EdgeList { path: e.path("topology.path")? },
        "matrix" => TopologySpec::Matrix { path: e.path("topology.path")? },
        other => return Err(invalid("topology.kind", format!("unknown kind `{other}`"))),
    })
}

fn objective(e: &mut Entries) -> Result<ObjectiveSpec> {
    let family: String = e.or("objective.family", "sigmoid".to_string())?;
    Ok(match family.as_str() {
        "sigmoid" => {
            let data = match e.map.contains_key("objective.data") {
                true => Some(e.path("objective.data")?),
                false => None,
            };
            let mode = match e.or("objective.mode", "hetero".to_string())?.as_str() {
                "hetero" => DataMode::Heterogeneous,
                "homo" => DataMode::Homogeneous,
                other => return Err(invalid("objective.mode", format!("expected homo or hetero, got `{other}`"))),
            };
            let beta = e.optional("objective.beta")?;
            if let Some(b) = beta {
                finite_positive("objective.beta", b)?;
            }
            ObjectiveSpec::Sigmoid {
                d: positive("objective.d", e.or("objective.d", 5)?)?,
                per_agent: positive("objective.per_agent", e.or("objective.per_agent", 200)?)?,
                seed: e.or("objective.seed", 1)?,
                mode,
                data,
                beta,
            }
        }
        "quadratic" => {
            let mu = finite_positive("objective.mu", e.or("objective.mu", 0.5)?)?;
            let l = finite_positive("objective.l", e.or("objective.l", 2.0)?)?;
            if l < mu {
                return Err(invalid("objective.l", "must be at least objective.mu"));
            }
            let noise_std: f64 = e.or("objective.noise_std", 0.1)?;
            if !(noise_std >= 0.0 && noise_std.is_finite()) {
                return Err(invalid("objective.noise_std", "must be finite and >= 0"));
            }
            ObjectiveSpec::Quadratic {
                d: positive("objective.d", e.or("objective.d", 5)?)?,
                mu,
                l,
                noise_std,
                seed: e.or("objective.seed", 1)?,
            }
        }
        other => return Err(invalid("objective.family", format!("unknown family `{other}`"))),
    })
}

fn schedule(e: &mut Entries) -> Result<ScheduleSpec> {
    let kind: String = e.or("schedule.kind", "sqrt-decay".to_string())?;
    Ok(match kind.as_str() {
        "constant" => {
            let g: f64 = e.required("schedule.gamma")?;
            if !(g >= 0.0 && g.is_finite()) {
                return Err(invalid("schedule.gamma", "must be finite and >= 0"));
            }
            ScheduleSpec::Constant(g)
        }
        "inv-sqrt-t" => ScheduleSpec::InvSqrtT,
        "sqrt-decay" => {
            let a0 = e.optional("schedule.a0")?;
            let a1 = e.optional("schedule.a1")?;
            if let Some(v) = a0 {
                finite_positive("schedule.a0", v)?;
            }
            if let Some(v) = a1 {
                finite_positive("schedule.a1", v)?;
            }
            ScheduleSpec::SqrtDecay { a0, a1 }
        }
        "rho-over-9l" => ScheduleSpec::RhoOverNineL {
            scale: finite_positive("schedule.scale", e.or("schedule.scale", 1.0)?)?,
        },
        other => return Err(invalid("schedule.kind", format!("unknown kind `{other}`"))),
    })
}

fn init(e: &mut Entries) -> Result<InitSpec> {
    let kind: String = e.or("init.kind", "equal".to_string())?;
    Ok(match kind.as_str() {
        "equal" => InitSpec::Equal(e.or("init.value", 0.0)?),
        "gaussian" => {
            let std: f64 = e.or("init.std", 0.8)?;
            if !(std >= 0.0 && std.is_finite()) {
                return Err(invalid("init.std", "must be finite and >= 0"));
            }
            InitSpec::Gaussian { mean: e.or("init.mean", 1.0)?, std }
        }
        other => return Err(invalid("init.kind", format!("unknown kind `{other}`"))),
    })
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut e = Entries::parse(text, base)?;
    let name = e.or("name", "experiment".to_string())?;
    let runs = positive("runs", e.required("runs")?)?;
    let iterations = positive("T", e.required("T")?)?;
    let master_seed = e.or("master_seed", 0u64)?;
    let stride = positive("stride", e.or("stride", 1)?)?;
    let algorithms = match e.take("algorithms") {
        None => vec![AlgorithmKind::Dsgd, AlgorithmKind::Csgd],
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<AlgorithmKind>().map_err(|m| invalid("algorithms", m)))
            .collect::<Result<Vec<_>>>()?,
    };
    if algorithms.is_empty() {
        return Err(invalid("algorithms", "list is empty"));
    }
    let topology = topology(&mut e)?;
    let objective = objective(&mut e)?;
    let schedule = schedule(&mut e)?;
    let init = init(&mut e)?;
    let sampling = match e.or("csgd.sampling", "pooled".to_string())?.as_str() {
        "pooled" => CsgdSampling::Pooled,
        "per-agent" => CsgdSampling::PerAgent,
        other => return Err(invalid("csgd.sampling", format!("expected pooled or per-agent, got `{other}`"))),
    };
    let transient_delta: f64 = e.or("transient.delta", 0.25)?;
    if !(transient_delta >= 0.0 && transient_delta.is_finite()) {
        return Err(invalid("transient.delta", "must be finite and >= 0"));
    }
    let transient_window = positive("transient.window", e.or("transient.window", 25)?)?;
    let out_dir = e.take("output.dir").map(|p| base.join(p));
    let verify = VerifySpec {
        runs: positive("verify.runs", e.or("verify.runs", runs.max(2))?)?,
        iterations: positive("verify.T", e.or("verify.T", iterations.min(2000))?)?,
        gamma_scale: finite_positive("verify.gamma_scale", e.or("verify.gamma_scale", 1.0)?)?,
        resamples: positive("verify.resamples", e.or("verify.resamples", 4096)?)?,
        pairs: positive("verify.pairs", e.or("verify.pairs", 200)?)?,
        aux_horizon: positive("verify.aux_horizon", e.or("verify.aux_horizon", 10_000)?)?,
        equivalence_steps: positive("verify.equivalence_steps", e.or("verify.equivalence_steps", 1000)?)?,
    };
    if verify.runs < 2 {
        return Err(invalid("verify.runs", "ensemble checks need at least 2 runs"));
    }
    let estimate = EstimateSpec {
        probes: positive("estimate.probes", e.or("estimate.probes", 64)?)?,
        draws: positive("estimate.draws", e.or("estimate.draws", 2048)?)?,
        radius: finite_positive("estimate.radius", e.or("estimate.radius", 3.0)?)?,
    };
    if let Some(key) = e.map.keys().next() {
        return Err(invalid(key, "unknown key"));
    }
    Ok(ExperimentConfig {
        name,
        topology,
        objective,
        algorithms,
        schedule,
        iterations,
        runs,
        master_seed,
        stride,
        init,
        sampling,
        transient_delta,
        transient_window,
        out_dir,
        verify,
        estimate,
        source: text.to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}
