//! Objective families with exact oracles and stochastic-gradient samplers.
//!
//! An [`ObjectiveSuite`] bundles `n` local objectives `f_i`; the global
//! objective is their uniform average. Agents that share the same data are
//! evaluated once and weighted by multiplicity, so homogeneous suites cost no
//! more than a single agent.

mod constants;
mod quadratic;
pub mod sigmoid;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

pub use constants::{estimate_constants, estimate_f_star, ConstantsEstimate, EstimateOptions, FStar, SmoothnessConstants};
pub(crate) use constants::ball_point;
pub use quadratic::QuadraticSpec;
pub use sigmoid::{
    gen_hetero_classification, gen_homo_from, sigmoid_oracles, AgentSamples, ClassificationDataset, DataMode,
};

#[derive(Debug, Clone)]
pub enum Family {
    Quadratic(QuadraticSpec),
    Sigmoid(ClassificationDataset),
}

#[derive(Debug, Clone)]
pub struct ObjectiveSuite {
    n: usize,
    family: Family,
    /// `(representative agent, multiplicity)` for each distinct local objective.
    groups: Vec<(usize, usize)>,
}

/// `n` agents that all hold the same quadratic.
pub fn make_quadratic_suite(spec: QuadraticSpec, n: usize) -> Result<ObjectiveSuite> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("suite needs at least one agent".into()));
    }
    Ok(ObjectiveSuite { n, family: Family::Quadratic(spec), groups: vec![(0, n)] })
}

pub fn make_sigmoid_suite(data: ClassificationDataset) -> ObjectiveSuite {
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for i in 0..data.n() {
        match groups
            .iter_mut()
            .find(|(rep, _)| Arc::ptr_eq(data.agent_arc(*rep), data.agent_arc(i)))
        {
            Some(g) => g.1 += 1,
            None => groups.push((i, 1)),
        }
    }
    ObjectiveSuite { n: data.n(), family: Family::Sigmoid(data), groups }
}

impl ObjectiveSuite {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        match &self.family {
            Family::Quadratic(q) => q.d(),
            Family::Sigmoid(s) => s.d(),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.family, Family::Quadratic(_))
    }

    /// True when every agent holds the same local objective.
    pub fn is_homogeneous(&self) -> bool {
        self.groups.len() == 1
    }

    /// `(representative agent, multiplicity)` of each distinct local objective.
    pub fn distinct_agents(&self) -> &[(usize, usize)] {
        &self.groups
    }

    fn check(&self, agent: usize, theta: &[f64]) -> Result<()> {
        if theta.len() != self.d() {
            return Err(Error::DimensionError { expected: self.d(), got: theta.len() });
        }
        if agent >= self.n {
            return Err(Error::InvalidSpec(format!("agent {agent} out of range 0..{}", self.n)));
        }
        Ok(())
    }

    /// `f_i(theta)` and `grad f_i(theta)` into `grad`; dimensions are not checked.
    pub(crate) fn agent_value_grad_into(&self, agent: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
        match &self.family {
            Family::Quadratic(q) => {
                q.gradient_into(theta, grad);
                q.value(theta)
            }
            Family::Sigmoid(s) => {
                let v = s.agent(agent).mean_link_and_grad(theta, grad);
                let beta = s.beta();
                for (g, t) in grad.iter_mut().zip(theta) {
                    *g += beta * t;
                }
                v + 0.5 * beta * sigmoid::dot(theta, theta)
            }
        }
    }

    pub fn agent_value(&self, agent: usize, theta: &[f64]) -> Result<f64> {
        self.check(agent, theta)?;
        Ok(match &self.family {
            Family::Quadratic(q) => q.value(theta),
            Family::Sigmoid(s) => s.agent(agent).mean_link(theta) + 0.5 * s.beta() * sigmoid::dot(theta, theta),
        })
    }

    pub fn agent_gradient(&self, agent: usize, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(agent, theta)?;
        let mut g = vec![0.0; self.d()];
        self.agent_value_grad_into(agent, theta, &mut g);
        Ok(g)
    }

    pub fn agent_hessian(&self, agent: usize, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check(agent, theta)?;
        Ok(match &self.family {
            Family::Quadratic(q) => q.a.clone(),
            Family::Sigmoid(s) => {
                let mut h = s.agent(agent).mean_link_hessian(theta);
                for k in 0..s.d() {
                    h[(k, k)] += s.beta();
                }
                h
            }
        })
    }

    /// Global `f(theta)` and `grad f(theta)` in a single pass.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(0, theta)?;
        let d = self.d();
        let mut grad = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut value = 0.0;
        for &(rep, count) in &self.groups {
            let w = count as f64 / self.n as f64;
            value += w * self.agent_value_grad_into(rep, theta, &mut scratch);
            for (g, s) in grad.iter_mut().zip(&scratch) {
                *g += w * s;
            }
        }
        Ok((value, grad))
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.check(0, theta)?;
        let mut value = 0.0;
        for &(rep, count) in &self.groups {
            value += count as f64 / self.n as f64 * self.agent_value(rep, theta)?;
        }
        Ok(value)
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(theta)?.1)
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check(0, theta)?;
        let d = self.d();
        let mut h = DMatrix::zeros(d, d);
        for &(rep, count) in &self.groups {
            h += self.agent_hessian(rep, theta)? * (count as f64 / self.n as f64);
        }
        Ok(h)
    }

    /// One unbiased draw of `grad f_i(theta)`: a uniformly chosen sample of
    /// the agent's empirical distribution, or the quadratic's noisy gradient.
    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, agent: usize, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.d());
        match &self.family {
            Family::Quadratic(q) => q.stochastic_gradient_into(theta, rng, out),
            Family::Sigmoid(s) => {
                let a = s.agent(agent);
                let j = if a.len() == 1 { 0 } else { rng.random_range(0..a.len()) };
                a.sample_link_grad(j, theta, out);
                for (o, t) in out.iter_mut().zip(theta) {
                    *o += s.beta() * t;
                }
            }
        }
    }

    /// One draw from the pooled distribution of all samples held by all agents.
    pub fn pooled_stochastic_gradient<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        match &self.family {
            Family::Quadratic(_) => self.stochastic_gradient(0, theta, rng, out),
            Family::Sigmoid(s) if s.mode() == DataMode::Homogeneous => self.stochastic_gradient(0, theta, rng, out),
            Family::Sigmoid(s) => {
                let mut k = rng.random_range(0..s.total_samples());
                let mut agent = 0;
                while k >= s.agent(agent).len() {
                    k -= s.agent(agent).len();
                    agent += 1;
                }
                s.agent(agent).sample_link_grad(k, theta, out);
                for (o, t) in out.iter_mut().zip(theta) {
                    *o += s.beta() * t;
                }
            }
        }
    }

    /// Analytic gradient-Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match &self.family {
            Family::Quadratic(q) => q.lipschitz(),
            Family::Sigmoid(s) => sigmoid::LINK_D2_SUP * s.max_feature_norm().powi(2) + s.beta(),
        }
    }

    /// Analytic Hessian-Lipschitz constant.
    pub fn hessian_lipschitz(&self) -> f64 {
        match &self.family {
            Family::Quadratic(_) => 0.0,
            Family::Sigmoid(s) => sigmoid::LINK_D3_SUP * s.max_feature_norm().powi(3),
        }
    }
}
