//! Linear-Gaussian test problem with a closed-form posterior:
//! `theta ~ N(0, I)`, `x = theta + N(0, noise_var I)`.

use lobcal_core::rng::{derive_seed, seeded, SimRng};
use lobcal_nn::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::npe::{PosteriorSampler, Samples, ThetaPrior};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    pub dim: usize,
    pub noise_var: f64,
}

impl Default for LinearGaussian {
    fn default() -> Self {
        LinearGaussian {
            dim: 2,
            noise_var: 0.1,
        }
    }
}

impl LinearGaussian {
    pub fn prior(&self) -> ThetaPrior {
        ThetaPrior::Normal {
            names: (0..self.dim).map(|i| format!("theta{i}")).collect(),
            mean: vec![0.0; self.dim],
            sd: vec![1.0; self.dim],
        }
    }

    pub fn simulate<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Vec<f64> {
        let s = self.noise_var.sqrt();
        theta
            .iter()
            .map(|t| t + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Posterior variance per dimension: `1 / (1 + 1/noise_var)`.
    pub fn posterior_var(&self) -> f64 {
        1.0 / (1.0 + 1.0 / self.noise_var)
    }

    pub fn posterior_mean(&self, x: &[f64]) -> Vec<f64> {
        let k = self.posterior_var() / self.noise_var;
        x.iter().map(|v| k * v).collect()
    }

    pub fn posterior(&self, x: &[f64]) -> AnalyticPosterior {
        AnalyticPosterior {
            mean: self.posterior_mean(x),
            sd: self.posterior_var().sqrt(),
        }
    }

    /// `n` prior draws with their simulations; draw `i` uses its own stream.
    pub fn dataset(&self, n: usize, seed: u64) -> Samples {
        let prior = self.prior();
        let mut theta = Vec::with_capacity(n * self.dim);
        let mut x = Vec::with_capacity(n * self.dim);
        for i in 0..n {
            let mut rng = seeded(derive_seed(seed, i as u64));
            let t = prior.sample(&mut rng);
            x.extend(self.simulate(&t, &mut rng));
            theta.extend(t);
        }
        Samples::new(
            Matrix::from_vec(n, self.dim, theta),
            Matrix::from_vec(n, self.dim, x),
        )
    }
}

/// Isotropic Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPosterior {
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl PosteriorSampler for AnalyticPosterior {
    fn sample(&self, n: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                self.mean
                    .iter()
                    .map(|m| m + self.sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_moments() {
        let toy = LinearGaussian::default();
        assert!((toy.posterior_var() - 1.0 / 11.0).abs() < 1e-15);
        let m = toy.posterior_mean(&[1.1, -2.2]);
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_is_reproducible() {
        let toy = LinearGaussian::default();
        assert_eq!(toy.dataset(10, 3), toy.dataset(10, 3));
        assert_ne!(toy.dataset(10, 3), toy.dataset(10, 4));
    }
}
