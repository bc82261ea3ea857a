use serde::Serialize;

use super::{IrtError, ItemParameters};

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(z))`.
#[inline]
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Probability of a correct response at ability `theta`.
pub fn icc_prob(a: f64, b: f64, theta: f64) -> f64 {
    sigmoid(a * (theta - b))
}

/// Fisher information `a^2 P (1 - P)`.
pub fn item_information(a: f64, b: f64, theta: f64) -> f64 {
    let p = icc_prob(a, b, theta);
    a * a * p * (1.0 - p)
}

/// Sum of item information, accumulated in item order.
pub fn test_information(items: &[ItemParameters], theta: f64) -> Result<f64, IrtError> {
    if items.is_empty() {
        return Err(IrtError::EmptyItemSet);
    }
    Ok(items.iter().map(|p| item_information(p.a, p.b, theta)).fold(0.0, |acc, x| acc + x))
}

/// Whether an average-ability student (theta = 0) is more likely to fail.
pub fn difficult_at_average(params: &ItemParameters) -> bool {
    icc_prob(params.a, params.b, 0.0) < 0.5
}

/// Evenly spaced ability grid with exact endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for ThetaGrid {
    /// `[-4, 4]` in steps of 0.05.
    fn default() -> Self {
        ThetaGrid { min: -4.0, max: 4.0, points: 161 }
    }
}

impl ThetaGrid {
    /// Grid over `[min, max]` with the given step (rounded to whole points).
    pub fn with_step(min: f64, max: f64, step: f64) -> Self {
        let points = ((max - min) / step).round() as usize + 1;
        ThetaGrid { min, max, points }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.min],
            n => {
                let last = n - 1;
                (0..n)
                    .map(|j| if j == last { self.max } else { self.min + (self.max - self.min) * j as f64 / last as f64 })
                    .collect()
            }
        }
    }
}

/// ICC and IIC values per item and the TIF, one row per grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTable {
    pub item_ids: Vec<String>,
    pub thetas: Vec<f64>,
    /// `prob[row][item]`
    pub prob: Vec<Vec<f64>>,
    /// `info[row][item]`
    pub info: Vec<Vec<f64>>,
    pub tif: Vec<f64>,
}

pub fn sample_curves(params: &[ItemParameters], thetas: &[f64]) -> Result<CurveTable, IrtError> {
    if thetas.is_empty() {
        return Err(IrtError::EmptyGrid);
    }
    if thetas.iter().any(|t| !t.is_finite()) || thetas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IrtError::InvalidGrid("grid must be finite and strictly ascending".into()));
    }
    let mut prob = Vec::with_capacity(thetas.len());
    let mut info = Vec::with_capacity(thetas.len());
    let mut tif = Vec::with_capacity(thetas.len());
    for &t in thetas {
        let p: Vec<f64> = params.iter().map(|q| icc_prob(q.a, q.b, t)).collect();
        let i: Vec<f64> = params.iter().map(|q| item_information(q.a, q.b, t)).collect();
        tif.push(i.iter().fold(0.0, |acc, x| acc + x));
        prob.push(p);
        info.push(i);
    }
    Ok(CurveTable {
        item_ids: params.iter().map(|p| p.item_id.clone()).collect(),
        thetas: thetas.to_vec(),
        prob,
        info,
        tif,
    })
}
