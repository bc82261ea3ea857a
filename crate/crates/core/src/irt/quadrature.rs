use serde::{Deserialize, Serialize};

use super::IrtError;

/// Equally spaced nodes on `[min, max]` weighted by the standard normal
/// density, renormalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub nodes: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { nodes: 41, min: -5.0, max: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl QuadratureSpec {
    pub fn build(&self) -> Result<Quadrature, IrtError> {
        if self.nodes < 2 || !self.min.is_finite() || !self.max.is_finite() || self.min >= self.max {
            return Err(IrtError::InvalidConfig(format!(
                "quadrature needs >= 2 nodes on a finite ascending range, got {} on [{}, {}]",
                self.nodes, self.min, self.max
            )));
        }
        let span = self.max - self.min;
        let last = self.nodes - 1;
        let nodes: Vec<f64> = (0..self.nodes)
            .map(|k| if k == last { self.max } else { self.min + span * k as f64 / last as f64 })
            .collect();
        let dens: Vec<f64> = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = dens.iter().sum();
        let weights: Vec<f64> = dens.iter().map(|d| d / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Quadrature { nodes, weights, log_weights })
    }
}
