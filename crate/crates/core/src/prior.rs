//! Uniform priors over log10 parameter boxes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("prior bounds have different lengths ({lower} vs {upper})")]
    DimensionMismatch { lower: usize, upper: usize },
    #[error("prior dimension {dim}: lower bound {lower} is not below upper bound {upper}")]
    EmptyInterval { dim: usize, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PriorSpec {
    pub fn new(names: &[&str], lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PriorError> {
        let spec = PriorSpec {
            names: names.iter().map(|s| s.to_string()).collect(),
            lower,
            upper,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// log10 box for (alpha, mu, delta, lambda).
    pub fn zi() -> Self {
        Self::new(
            &["alpha", "mu", "delta", "lambda"],
            vec![2.0, 1.0, -4.0, -2.0],
            vec![3.0, 2.0, -2.0, 0.0],
        )
        .expect("static box")
    }

    /// log10 box for (sigma_n, beta, gamma_m, kappa, beta_hf, gamma_hf).
    pub fn chiarella() -> Self {
        Self::new(
            &["sigma_n", "beta", "gamma_m", "kappa", "beta_hf", "gamma_hf"],
            vec![-2.0, -1.0, -1.0, -1.0, 4.0, -2.0],
            vec![0.0, 1.0, 1.0, 0.0, 6.0, 0.0],
        )
        .expect("static box")
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.lower.len() != self.upper.len() {
            return Err(PriorError::DimensionMismatch {
                lower: self.lower.len(),
                upper: self.upper.len(),
            });
        }
        for (dim, (&lower, &upper)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lower < upper) {
                return Err(PriorError::EmptyInterval { dim, lower, upper });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn width(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    /// Standard deviation of the uniform marginal in each dimension.
    pub fn sd(&self) -> Vec<f64> {
        self.width().iter().map(|w| w / 12f64.sqrt()).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    /// Uniform log density; `-inf` outside the box.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.width().iter().map(|w| w.ln()).sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }

    /// `n` i.i.d. draws as rows.
    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}
