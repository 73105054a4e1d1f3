//! Empirical and analytic estimates of the smoothness, noise and
//! heterogeneity constants that appear in the convergence bounds.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Family, ObjectiveSuite};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    pub l: f64,
    pub l_h: f64,
    pub sigma: f64,
    pub varsigma: f64,
    pub varsigma_h: f64,
    pub f_star: f64,
    /// `f(mean initial iterate) - f_star`.
    pub d: f64,
}

impl SmoothnessConstants {
    const KEYS: [&'static str; 7] = ["L", "L_H", "sigma", "varsigma", "varsigma_H", "f_star", "D"];

    fn values(&self) -> [f64; 7] {
        [self.l, self.l_h, self.sigma, self.varsigma, self.varsigma_h, self.f_star, self.d]
    }

    /// Flat `key = value` report.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k} = {v:.16e}");
        }
        out
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut vals = [f64::NAN; 7];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected `key = value`, got `{line}`")))?;
            let idx = Self::KEYS
                .iter()
                .position(|key| *key == k.trim())
                .ok_or_else(|| Error::Parse(format!("unknown constant `{}`", k.trim())))?;
            vals[idx] = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for `{}`", k.trim())))?;
        }
        if let Some(i) = vals.iter().position(|v| v.is_nan()) {
            return Err(Error::Parse(format!("missing constant `{}`", Self::KEYS[i])));
        }
        let [l, l_h, sigma, varsigma, varsigma_h, f_star, d] = vals;
        Ok(Self { l, l_h, sigma, varsigma, varsigma_h, f_star, d })
    }
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub probe_count: usize,
    pub draw_count: usize,
    pub radius: f64,
    pub seed: u64,
    /// Centre of the probe ball; also the starting point whose gap to
    /// `f_star` defines `D`.
    pub center: Vec<f64>,
    pub f_star_iters: usize,
    pub f_star_tol: f64,
}

impl EstimateOptions {
    pub fn new(center: Vec<f64>, seed: u64) -> Self {
        Self {
            probe_count: 64,
            draw_count: 2048,
            radius: 3.0,
            seed,
            center,
            f_star_iters: 100_000,
            f_star_tol: 1e-8,
        }
    }
}

/// Result of full-batch gradient descent on the global objective.
#[derive(Debug, Clone)]
pub struct FStar {
    pub f_star: f64,
    pub d: f64,
    pub minimizer: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ConstantsEstimate {
    /// Smaller of sampled and analytic values; used to evaluate bounds.
    pub bound: SmoothnessConstants,
    /// Larger of sampled and analytic values.
    pub safety: SmoothnessConstants,
    pub sampled_sigma: f64,
    pub sampled_varsigma: f64,
    pub sampled_varsigma_h: f64,
    pub cap_sigma: f64,
    pub cap_varsigma: f64,
    pub cap_varsigma_h: f64,
    pub f_star: FStar,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn ball_point(rng: &mut impl Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let len = norm(&dir).max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, u)| c + r * u / len).collect()
}

/// Gradient descent with Armijo backtracking (halving, sufficient decrease
/// `1e-4`) from `start` until `||grad f|| <= tol` or `iters` steps.
pub fn estimate_f_star(suite: &ObjectiveSuite, start: &[f64], iters: usize, tol: f64) -> Result<FStar> {
    let f0 = suite.value(start)?;
    if !f0.is_finite() {
        return Err(Error::NumericalDivergence { t: 0, run: None });
    }
    let mut theta = start.to_vec();
    let (mut f, mut g) = suite.value_and_gradient(&theta)?;
    let mut best = f;
    let mut step = 1.0 / suite.lipschitz().max(1e-12);
    let mut trial = vec![0.0; theta.len()];
    let mut k = 0;
    while k < iters {
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg.sqrt() <= tol {
            break;
        }
        step *= 2.0;
        loop {
            for ((t, th), gv) in trial.iter_mut().zip(&theta).zip(&g) {
                *t = th - step * gv;
            }
            let ft = suite.value(&trial)?;
            if !ft.is_finite() {
                return Err(Error::NumericalDivergence { t: k, run: None });
            }
            if ft <= f - 1e-4 * step * gg {
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                // No representable step decreases f: stationary to machine precision.
                return Ok(FStar {
                    f_star: best,
                    d: (f0 - best).max(0.0),
                    minimizer: theta,
                    iterations: k,
                    final_grad_norm: gg.sqrt(),
                });
            }
        }
        std::mem::swap(&mut theta, &mut trial);
        let (fv, gv) = suite.value_and_gradient(&theta)?;
        f = fv;
        g = gv;
        best = best.min(f);
        k += 1;
    }
    Ok(FStar { f_star: best, d: (f0 - best).max(0.0), minimizer: theta, iterations: k, final_grad_norm: norm(&g) })
}

/// Estimates every constant used by the bounds. `L` and `L_H` are analytic;
/// `sigma`, `varsigma` and `varsigma_H` are maxima over probe points sampled
/// uniformly in a ball, reported next to their analytic caps.
pub fn estimate_constants(suite: &ObjectiveSuite, opts: &EstimateOptions) -> Result<ConstantsEstimate> {
    let d = suite.d();
    if opts.center.len() != d {
        return Err(Error::DimensionError { expected: d, got: opts.center.len() });
    }
    if opts.probe_count == 0 || opts.draw_count == 0 {
        return Err(Error::InvalidSpec("probe_count and draw_count must be >= 1".into()));
    }
    let l = suite.lipschitz();
    let l_h = suite.hessian_lipschitz();

    let mut sampled_sigma = 0.0f64;
    let mut sampled_varsigma = 0.0f64;
    let mut sampled_varsigma_h = 0.0f64;
    let mut probe_rng = substream(opts.seed, 0, 0, 0, Purpose::Estimate);
    let mut draw = vec![0.0; d];
    for p in 0..opts.probe_count {
        let theta = ball_point(&mut probe_rng, &opts.center, opts.radius);
        let global_grad = suite.gradient(&theta)?;
        let global_hess = suite.hessian(&theta)?;
        for &(agent, _) in &suite.groups {
            let g = suite.agent_gradient(agent, &theta)?;
            let dev: Vec<f64> = global_grad.iter().zip(&g).map(|(a, b)| a - b).collect();
            sampled_varsigma = sampled_varsigma.max(norm(&dev));
            let h = suite.agent_hessian(agent, &theta)?;
            sampled_varsigma_h = sampled_varsigma_h.max(spectral_norm(&(&global_hess - h)));

            let mut rng = substream(opts.seed, p + 1, agent, 0, Purpose::Estimate);
            let (mut m2, mut m4) = (0.0, 0.0);
            for _ in 0..opts.draw_count {
                suite.stochastic_gradient(agent, &theta, &mut rng, &mut draw);
                let e2: f64 = draw.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum();
                m2 += e2;
                m4 += e2 * e2;
            }
            let m = opts.draw_count as f64;
            sampled_sigma = sampled_sigma.max((m2 / m).sqrt()).max((m4 / m).powf(0.25));
        }
    }

    let (cap_sigma, cap_varsigma, cap_varsigma_h) = match suite.family() {
        Family::Quadratic(q) => (q.noise_moment_scale(), 0.0, 0.0),
        Family::Sigmoid(s) => {
            let r = s.max_feature_norm();
            let sigma = 0.5 * r;
            if suite.is_homogeneous() {
                (sigma, 0.0, 0.0)
            } else {
                (sigma, 0.5 * r, 2.0 * super::sigmoid::LINK_D2_SUP * r * r)
            }
        }
    };

    let f_star = estimate_f_star(suite, &opts.center, opts.f_star_iters, opts.f_star_tol)?;
    let base = SmoothnessConstants {
        l,
        l_h,
        sigma: 0.0,
        varsigma: 0.0,
        varsigma_h: 0.0,
        f_star: f_star.f_star,
        d: f_star.d,
    };
    let bound = SmoothnessConstants {
        // the quadratic noise moments are known exactly
        sigma: if suite.is_quadratic() { cap_sigma } else { sampled_sigma.min(cap_sigma) },
        varsigma: sampled_varsigma.min(cap_varsigma),
        varsigma_h: sampled_varsigma_h.min(cap_varsigma_h),
        ..base
    };
    let safety = SmoothnessConstants {
        sigma: sampled_sigma.max(cap_sigma),
        varsigma: sampled_varsigma.max(cap_varsigma),
        varsigma_h: sampled_varsigma_h.max(cap_varsigma_h),
        ..base
    };
    Ok(ConstantsEstimate {
        bound,
        safety,
        sampled_sigma,
        sampled_varsigma,
        sampled_varsigma_h,
        cap_sigma,
        cap_varsigma,
        cap_varsigma_h,
        f_star,
    })
}
