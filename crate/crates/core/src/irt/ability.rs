use serde::{Deserialize, Serialize};

use super::likelihood::{resolve_params, Design, LogTables};
use super::{IrtError, ItemParameters, Quadrature, QuadratureSpec};
use crate::matrix::ResponseMatrix;
use crate::par;

/// Expected a posteriori ability with its posterior standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub student_id: String,
    pub theta: f64,
    pub se_theta: f64,
}

pub fn estimate_abilities(
    matrix: &ResponseMatrix,
    params: &[ItemParameters],
    quadrature: &QuadratureSpec,
) -> Result<Vec<AbilityEstimate>, IrtError> {
    let quad = quadrature.build()?;
    let (design, a, b) = resolve_params(matrix, params)?;
    let tables = LogTables::new(&a, &b, &quad);
    Ok(abilities_from_design(matrix, &design, &tables, &quad))
}

pub(crate) fn abilities_from_design(
    matrix: &ResponseMatrix,
    design: &Design,
    tables: &LogTables,
    quad: &Quadrature,
) -> Vec<AbilityEstimate> {
    let k = quad.nodes.len();
    par::map_range(design.rows.len(), |s| {
        let row = &design.rows[s];
        let (theta, se_theta) = if row.is_empty() {
            (0.0, 1.0)
        } else {
            let mut post = vec![0.0; k];
            tables.posterior(row, quad, &mut post);
            let mean: f64 = quad.nodes.iter().zip(&post).map(|(t, w)| t * w).sum();
            let var: f64 = quad.nodes.iter().zip(&post).map(|(t, w)| w * (t - mean) * (t - mean)).sum();
            (mean, var.sqrt().max(f64::MIN_POSITIVE))
        };
        AbilityEstimate { student_id: matrix.student_ids[s].clone(), theta, se_theta }
    })
}
