use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Shared quadratic `f_i(theta) = theta^T A theta / 2 + theta^T b` whose
/// stochastic gradient is `A theta + b + noise`, noise i.i.d. Gaussian with
/// standard deviation `noise_std` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub noise_std: f64,
}

impl QuadraticSpec {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, noise_std: f64) -> Result<Self> {
        let spec = Self { a, b, noise_std };
        spec.validate()?;
        Ok(spec)
    }

    pub fn d(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.b.len();
        if d == 0 || self.a.nrows() != d || self.a.ncols() != d {
            return Err(Error::InvalidSpec(format!(
                "A is {}x{} but b has length {d}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.a != self.a.transpose() {
            return Err(Error::InvalidSpec("A is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(self.a.clone()).eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "A is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        Ok(())
    }

    /// Random instance: `A = Q diag(lambda) Q^T` with eigenvalues spread
    /// evenly over `[mu, l]`, `b` standard normal.
    pub fn random(d: usize, mu: f64, l: f64, noise_std: f64, seed: u64) -> Result<Self> {
        if d == 0 || !(mu > 0.0 && l >= mu) {
            return Err(Error::InvalidSpec(format!("need d >= 1 and 0 < mu <= l (got {d}, {mu}, {l})")));
        }
        let mut rng = substream(seed, 0, 0, 0, Purpose::Data);
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let lambda = DVector::from_fn(d, |k, _| {
            if d == 1 {
                l
            } else {
                mu + (l - mu) * k as f64 / (d - 1) as f64
            }
        });
        let a = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let b = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::new(a, b, noise_std)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        0.5 * t.dot(&(&self.a * &t)) + t.dot(&self.b)
    }

    pub fn gradient_into(&self, theta: &[f64], out: &mut [f64]) {
        let d = self.d();
        for r in 0..d {
            let mut acc = self.b[r];
            for c in 0..d {
                acc += self.a[(r, c)] * theta[c];
            }
            out[r] = acc;
        }
    }

    pub fn stochastic_gradient_into<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R, out: &mut [f64]) {
        self.gradient_into(theta, out);
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o += self.noise_std * z;
        }
    }

    pub fn minimizer(&self) -> DVector<f64> {
        -self.a.clone().cholesky().expect("validated positive definite").solve(&self.b)
    }

    /// `-b^T A^{-1} b / 2`.
    pub fn optimal_value(&self) -> f64 {
        let x = self.minimizer();
        0.5 * self.b.dot(&x)
    }

    /// `||A||_2`.
    pub fn lipschitz(&self) -> f64 {
        SymmetricEigen::new(self.a.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Exact `max(sqrt(E||xi||^2), (E||xi||^4)^(1/4))` for Gaussian noise:
    /// `E||xi||^2 = d s^2` and `E||xi||^4 = (d^2 + 2d) s^4`.
    pub fn noise_moment_scale(&self) -> f64 {
        let d = self.d() as f64;
        self.noise_std * (d * d + 2.0 * d).powf(0.25)
    }
}
