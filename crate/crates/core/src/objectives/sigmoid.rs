//! Non-convex sigmoid classification loss and its synthetic datasets.
//!
//! The per-sample loss is `s(y <x, theta>) + (beta/2) ||theta||^2` with
//! `s(u) = 1 / (1 + e^u)`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// `sup_u |s''(u)| = 1/(6 sqrt 3)`, attained at `u = ±ln(2 + sqrt 3)`.
pub const LINK_D2_SUP: f64 = 0.096_225_044_864_937_63;
/// `sup_u |s'''(u)| = 1/8`, attained at `u = 0`.
pub const LINK_D3_SUP: f64 = 0.125;

/// Returns `(s(u), 1 - s(u))` without cancellation.
#[inline]
fn link_pair(u: f64) -> (f64, f64) {
    if u >= 0.0 {
        let e = (-u).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = u.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    }
}

#[inline]
pub fn link(u: f64) -> f64 {
    link_pair(u).0
}

#[inline]
pub fn link_d1(u: f64) -> f64 {
    let (s, t) = link_pair(u);
    -s * t
}

#[inline]
pub fn link_d2(u: f64) -> f64 {
    let (s, t) = link_pair(u);
    s * t * (t - s)
}

#[inline]
pub fn link_d3(u: f64) -> f64 {
    let (s, t) = link_pair(u);
    let q = s * t;
    -q * (1.0 - 6.0 * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Homogeneous,
    Heterogeneous,
}

/// Samples held by one agent, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSamples {
    d: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl AgentSamples {
    pub fn new(d: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if d == 0 || features.len() != d * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values do not form {} rows of dimension {d}",
                features.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidSpec("agent sample list is empty".into()));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidSpec(format!("label {y} is not ±1")));
        }
        Ok(Self { d, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, j: usize) -> &[f64] {
        &self.features[j * self.d..(j + 1) * self.d]
    }

    pub fn y(&self, j: usize) -> f64 {
        self.labels[j]
    }

    pub fn max_feature_norm(&self) -> f64 {
        (0..self.len())
            .map(|j| self.x(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    #[inline]
    fn margin(&self, j: usize, theta: &[f64]) -> f64 {
        self.y(j) * dot(self.x(j), theta)
    }

    /// Mean of `s(u_j)` over the samples (regularizer excluded).
    pub fn mean_link(&self, theta: &[f64]) -> f64 {
        (0..self.len()).map(|j| link(self.margin(j, theta))).sum::<f64>() / self.len() as f64
    }

    /// Mean loss value and, into `grad`, the mean data gradient (regularizer excluded).
    pub fn mean_link_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for j in 0..self.len() {
            let y = self.y(j);
            let x = self.x(j);
            let u = y * dot(x, theta);
            let (s, t) = link_pair(u);
            value += s;
            let c = -s * t * y;
            for (g, xv) in grad.iter_mut().zip(x) {
                *g += c * xv;
            }
        }
        let m = self.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        value / m
    }

    /// Mean of `s''(u_j) x_j x_j^T` (regularizer excluded).
    pub fn mean_link_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut h = DMatrix::zeros(d, d);
        for j in 0..self.len() {
            let x = self.x(j);
            let c = link_d2(self.margin(j, theta));
            for a in 0..d {
                for b in 0..=a {
                    h[(a, b)] += c * x[a] * x[b];
                }
            }
        }
        let m = self.len() as f64;
        for a in 0..d {
            for b in 0..=a {
                let v = h[(a, b)] / m;
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        h
    }

    /// Data part of the per-sample gradient `s'(u) y x` for sample `j`.
    pub fn sample_link_grad(&self, j: usize, theta: &[f64], out: &mut [f64]) {
        let x = self.x(j);
        let y = self.y(j);
        let c = link_d1(y * dot(x, theta)) * y;
        for (o, xv) in out.iter_mut().zip(x) {
            *o = c * xv;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-agent empirical distributions plus the regularization weight.
///
/// In homogeneous mode every agent holds the same `Arc` to one pooled list.
#[derive(Debug, Clone)]
pub struct ClassificationDataset {
    d: usize,
    beta: f64,
    mode: DataMode,
    agents: Vec<Arc<AgentSamples>>,
}

impl ClassificationDataset {
    pub fn new(beta: f64, mode: DataMode, agents: Vec<Arc<AgentSamples>>) -> Result<Self> {
        let d = agents
            .first()
            .map(|a| a.d)
            .ok_or_else(|| Error::InvalidSpec("dataset has no agents".into()))?;
        if agents.iter().any(|a| a.d != d) {
            return Err(Error::ShapeMismatch("agents disagree on feature dimension".into()));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidSpec(format!("regularization weight {beta} must be >= 0")));
        }
        Ok(Self { d, beta, mode, agents })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(beta, self.mode, self.agents.clone())
    }

    pub fn agent(&self, i: usize) -> &AgentSamples {
        &self.agents[i]
    }

    pub(crate) fn agent_arc(&self, i: usize) -> &Arc<AgentSamples> {
        &self.agents[i]
    }

    pub fn total_samples(&self) -> usize {
        match self.mode {
            DataMode::Homogeneous => self.agents[0].len(),
            DataMode::Heterogeneous => self.agents.iter().map(|a| a.len()).sum(),
        }
    }

    pub fn max_feature_norm(&self) -> f64 {
        self.agents.iter().map(|a| a.max_feature_norm()).fold(0.0, f64::max)
    }

    /// All samples concatenated in agent order.
    pub fn pooled(&self) -> AgentSamples {
        if self.mode == DataMode::Homogeneous {
            return (*self.agents[0]).clone();
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for a in &self.agents {
            features.extend_from_slice(&a.features);
            labels.extend_from_slice(&a.labels);
        }
        AgentSamples { d: self.d, features, labels }
    }

    /// CSV with header `agent,x1,...,xd,y`; agents are 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent");
        for k in 1..=self.d {
            let _ = write!(out, ",x{k}");
        }
        out.push_str(",y\n");
        for (i, a) in self.agents.iter().enumerate() {
            for j in 0..a.len() {
                let _ = write!(out, "{}", i + 1);
                for v in a.x(j) {
                    let _ = write!(out, ",{v:.16e}");
                }
                let _ = writeln!(out, ",{}", a.y(j));
            }
        }
        out
    }

    /// Reads the CSV written by [`to_csv`](Self::to_csv) as a heterogeneous
    /// dataset; the regularization weight is not part of the file.
    pub fn parse_csv(text: &str, beta: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("dataset CSV is empty".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "agent" || *cols.last().unwrap() != "y" {
            return Err(Error::Parse(format!("unexpected dataset header `{header}`")));
        }
        let d = cols.len() - 2;
        let mut per_agent: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (k, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != d + 2 {
                return Err(Error::Parse(format!("row {} has {} columns", k + 2, cells.len())));
            }
            let num = |c: &str| c.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{c}`")));
            let agent: usize = cells[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad agent index `{}`", cells[0])))?;
            if agent == 0 {
                return Err(Error::Parse("agent indices are 1-based".into()));
            }
            if per_agent.len() < agent {
                per_agent.resize(agent, (Vec::new(), Vec::new()));
            }
            let slot = &mut per_agent[agent - 1];
            for c in &cells[1..=d] {
                slot.0.push(num(c)?);
            }
            slot.1.push(num(cells[d + 1])?);
        }
        let agents = per_agent
            .into_iter()
            .map(|(f, l)| AgentSamples::new(d, f, l).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Self::new(beta, DataMode::Heterogeneous, agents)
    }
}

/// Heterogeneous synthetic data: agent `i` (1-based) labels uniform features
/// in `[-1, 1]^d` with a planted vector drawn from
/// `U[-1 + 2(i-1)/n, -1 + 2i/n]^d`. The regularization weight is `10 / m`.
pub fn gen_hetero_classification(n: usize, d: usize, per_agent: usize, seed: u64) -> Result<ClassificationDataset> {
    if n == 0 || d == 0 || per_agent == 0 {
        return Err(Error::InvalidSpec(format!(
            "need n, d, per_agent >= 1 (got {n}, {d}, {per_agent})"
        )));
    }
    let width = 2.0 / n as f64;
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = substream(seed, 0, i, 0, Purpose::Data);
        let lo = -1.0 + width * i as f64;
        let planted: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=lo + width)).collect();
        let mut features = Vec::with_capacity(per_agent * d);
        let mut labels = Vec::with_capacity(per_agent);
        for _ in 0..per_agent {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            labels.push(if dot(&x, &planted) >= 0.0 { 1.0 } else { -1.0 });
            features.extend(x);
        }
        agents.push(Arc::new(AgentSamples::new(d, features, labels)?));
    }
    let beta = 10.0 / (n * per_agent) as f64;
    ClassificationDataset::new(beta, DataMode::Heterogeneous, agents)
}

/// Every agent receives the empirical distribution of the pooled samples.
pub fn gen_homo_from(hetero: &ClassificationDataset) -> ClassificationDataset {
    let pooled = Arc::new(hetero.pooled());
    ClassificationDataset {
        d: hetero.d,
        beta: hetero.beta,
        mode: DataMode::Homogeneous,
        agents: vec![pooled; hetero.n()],
    }
}

/// Exact value, gradient and Hessian of agent `agent`'s objective.
pub fn sigmoid_oracles(
    data: &ClassificationDataset,
    agent: usize,
    theta: &[f64],
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    if theta.len() != data.d {
        return Err(Error::DimensionError { expected: data.d, got: theta.len() });
    }
    if agent >= data.n() {
        return Err(Error::InvalidSpec(format!("agent {agent} out of range")));
    }
    let a = data.agent(agent);
    let reg = 0.5 * data.beta * dot(theta, theta);
    let mut grad = vec![0.0; data.d];
    let value = a.mean_link_and_grad(theta, &mut grad) + reg;
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += data.beta * t;
    }
    let mut hess = a.mean_link_hessian(theta);
    for k in 0..data.d {
        hess[(k, k)] += data.beta;
    }
    Ok((value, grad, hess))
}
