use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const LATENT_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub mean: Vec<f32>,
    pub log_sigma: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Spec,
    Text,
    GanPredicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z: Vec<f32>,
    pub origin: Origin,
}

impl LatentDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `z = μ + τ·ε⊙σ`, ε ~ N(0, I).
    pub fn sample<R: Rng + ?Sized>(&self, tau: f32, origin: Origin, rng: &mut R) -> Result<LatentCode> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(CoreError::Config(format!("temperature must be finite and non-negative, got {tau}")));
        }
        let z = self
            .mean
            .iter()
            .zip(&self.log_sigma)
            .map(|(&m, &ls)| {
                let eps = normal(rng);
                if tau == 0.0 {
                    m
                } else {
                    m + tau * eps * ls.exp()
                }
            })
            .collect();
        Ok(LatentCode { z, origin })
    }

    pub fn mean_code(&self, origin: Origin) -> LatentCode {
        LatentCode {
            z: self.mean.clone(),
            origin,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.log_sigma).all(|v| v.is_finite())
    }
}

impl LatentCode {
    pub fn new(z: Vec<f32>, origin: Origin) -> Self {
        Self { z, origin }
    }
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use echoloop_neural::SessionRng;

    #[test]
    fn zero_temperature_returns_mean() {
        let d = LatentDistribution {
            mean: vec![0.5, -1.0],
            log_sigma: vec![3.0, -2.0],
        };
        let mut rng = SessionRng::new(1);
        assert_eq!(d.sample(0.0, Origin::Spec, &mut rng).unwrap().z, d.mean);
        assert!(d.sample(-1.0, Origin::Spec, &mut rng).is_err());
    }
}
