use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::{standard_normal, FolioRng};

/// How one step of the continuous process is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuScheme {
    /// `x ← μ + (x − μ)e^{−θdt} + σ√((1 − e^{−2θdt})/2θ)·ε`, whose stationary
    /// std is exactly `σ/√(2θ)` for any `dt`.
    Exact,
    /// `x ← x + θ(μ − x)dt + σ√dt·ε`.
    Euler,
}

/// Ornstein-Uhlenbeck process `dx = θ(μ − x)dt + σ dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    x: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub dt: f64,
    pub scheme: OuScheme,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64, mu: f64, dt: f64) -> Self {
        Self { x: vec![mu; dim], theta, sigma, mu, dt, scheme: OuScheme::Exact }
    }

    pub fn with_scheme(mut self, scheme: OuScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn set_state(&mut self, x: &[f64]) {
        self.x.copy_from_slice(x);
    }

    pub fn reset(&mut self) {
        let mu = self.mu;
        self.x.iter_mut().for_each(|v| *v = mu);
    }

    /// Advances one step and returns the new state.
    pub fn sample(&mut self, rng: &mut FolioRng) -> &[f64] {
        let (decay, diffusion) = match self.scheme {
            OuScheme::Exact => {
                let decay = math::exp(-self.theta * self.dt);
                let var = (1.0 - decay * decay) / (2.0 * self.theta);
                (decay, self.sigma * math::sqrt(var))
            }
            OuScheme::Euler => (1.0 - self.theta * self.dt, self.sigma * math::sqrt(self.dt)),
        };
        for v in self.x.iter_mut() {
            *v = self.mu + (*v - self.mu) * decay + diffusion * standard_normal(rng);
        }
        &self.x
    }

    /// `σ/√(2θ)`, the stationary std of the continuous process.
    pub fn stationary_std(&self) -> f64 {
        self.sigma / math::sqrt(2.0 * self.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn deterministic_decay_without_diffusion() {
        let mut rng = seeded(0);
        let mut euler = OuNoise::new(1, 0.2, 0.0, 0.0, 1.0).with_scheme(OuScheme::Euler);
        euler.set_state(&[1.0]);
        assert!((euler.sample(&mut rng)[0] - 0.8).abs() < 1e-15);
        let mut exact = OuNoise::new(1, 0.2, 0.0, 0.0, 1.0);
        exact.set_state(&[1.0]);
        assert!((exact.sample(&mut rng)[0] - (-0.2f64).exp()).abs() < 1e-15);
        for _ in 0..300 {
            euler.sample(&mut rng);
            exact.sample(&mut rng);
        }
        assert!(euler.state()[0].abs() < 1e-25);
        assert!(exact.state()[0].abs() < 1e-25);
    }

    #[test]
    fn euler_stationary_std_is_the_ar1_value() {
        // AR(1) with coefficient 1 − θ: variance σ²/(2θ − θ²) = 0.25
        let mut n = OuNoise::new(1, 0.2, 0.3, 0.0, 1.0).with_scheme(OuScheme::Euler);
        let mut rng = seeded(2);
        let (mut s, mut s2) = (0.0, 0.0);
        let steps = 200_000;
        for _ in 0..steps {
            let x = n.sample(&mut rng)[0];
            s += x;
            s2 += x * x;
        }
        let var = s2 / steps as f64 - (s / steps as f64).powi(2);
        assert!((var.sqrt() - 0.5).abs() < 0.5 * 0.03);
    }

    #[test]
    fn reset_returns_to_mean() {
        let mut n = OuNoise::new(3, 0.2, 0.3, 0.0, 1.0);
        let mut rng = seeded(1);
        n.sample(&mut rng);
        n.reset();
        assert_eq!(n.state(), &[0.0; 3]);
    }
}
