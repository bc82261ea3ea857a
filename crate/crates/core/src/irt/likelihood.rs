use std::collections::BTreeMap;

use super::model::log_sigmoid;
use super::{IrtError, ItemParameters, Quadrature, QuadratureSpec};
use crate::matrix::ResponseMatrix;
use crate::par;

/// Observed responses restricted to the calibrated items.
pub(crate) struct Design {
    /// Matrix column of each calibrated item.
    pub columns: Vec<usize>,
    /// Per student: (calibrated item index, response).
    pub rows: Vec<Vec<(u32, bool)>>,
}

impl Design {
    pub fn new(matrix: &ResponseMatrix, columns: Vec<usize>) -> Design {
        let rows = (0..matrix.n_students())
            .map(|s| {
                columns
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &c)| matrix.get(s, c).map(|x| (j as u32, x)))
                    .collect()
            })
            .collect();
        Design { columns, rows }
    }

    pub fn n_items(&self) -> usize {
        self.columns.len()
    }
}

/// `ln P` and `ln (1 - P)` for every (item, node), item-major.
pub(crate) struct LogTables {
    pub n_nodes: usize,
    pub log_p: Vec<f64>,
    pub log_q: Vec<f64>,
}

impl LogTables {
    pub fn new(a: &[f64], b: &[f64], quad: &Quadrature) -> LogTables {
        let k = quad.nodes.len();
        let mut log_p = Vec::with_capacity(a.len() * k);
        let mut log_q = Vec::with_capacity(a.len() * k);
        for (ai, bi) in a.iter().zip(b) {
            for t in &quad.nodes {
                let z = ai * (t - bi);
                log_p.push(log_sigmoid(z));
                log_q.push(log_sigmoid(-z));
            }
        }
        LogTables { n_nodes: k, log_p, log_q }
    }

    /// Writes the normalized posterior over nodes into `post` and returns the
    /// student's marginal log-likelihood.
    pub fn posterior(&self, row: &[(u32, bool)], quad: &Quadrature, post: &mut [f64]) -> f64 {
        let k = self.n_nodes;
        post.copy_from_slice(&quad.log_weights);
        for &(i, x) in row {
            let base = i as usize * k;
            let table = if x { &self.log_p[base..base + k] } else { &self.log_q[base..base + k] };
            for (p, l) in post.iter_mut().zip(table) {
                *p += l;
            }
        }
        let max = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in post.iter_mut() {
            *p /= total;
        }
        max + total.ln()
    }
}

/// Posterior-expected counts per (item, node) plus the marginal log-likelihood.
pub(crate) struct EStep {
    pub loglik: f64,
    /// Expected number of students observed on the item, per node.
    pub n: Vec<f64>,
    /// Expected number of correct responses, per node.
    pub r: Vec<f64>,
}

pub(crate) fn e_step(design: &Design, a: &[f64], b: &[f64], quad: &Quadrature) -> EStep {
    let tables = LogTables::new(a, b, quad);
    let k = quad.nodes.len();
    let size = design.n_items() * k;
    let init = || (EStep { loglik: 0.0, n: vec![0.0; size], r: vec![0.0; size] }, vec![0.0; k]);
    let (acc, _) = par::chunked_fold(
        &design.rows,
        init,
        |(acc, post), _, row| {
            if row.is_empty() {
                return;
            }
            acc.loglik += tables.posterior(row, quad, post);
            for &(i, x) in row {
                let base = i as usize * k;
                for (n, p) in acc.n[base..base + k].iter_mut().zip(post.iter()) {
                    *n += p;
                }
                if x {
                    for (r, p) in acc.r[base..base + k].iter_mut().zip(post.iter()) {
                        *r += p;
                    }
                }
            }
        },
        |(total, _), (part, _)| {
            total.loglik += part.loglik;
            for (t, p) in total.n.iter_mut().zip(&part.n) {
                *t += p;
            }
            for (t, p) in total.r.iter_mut().zip(&part.r) {
                *t += p;
            }
        },
    );
    acc
}

/// Gradient of the marginal log-likelihood in `(a_i, b_i)` from E-step counts.
pub(crate) fn gradient_from_counts(est: &EStep, a: &[f64], b: &[f64], quad: &Quadrature) -> Vec<(f64, f64)> {
    let k = quad.nodes.len();
    (0..a.len())
        .map(|i| {
            let mut ga = 0.0;
            let mut resid = 0.0;
            for (j, t) in quad.nodes.iter().enumerate() {
                let p = super::model::sigmoid(a[i] * (t - b[i]));
                let e = est.r[i * k + j] - est.n[i * k + j] * p;
                ga += e * (t - b[i]);
                resid += e;
            }
            (ga, -a[i] * resid)
        })
        .collect()
}

/// Matches parameters to matrix columns. Items flagged degenerate in `params`
/// are left out; a matrix column without parameters is only allowed when its
/// observed responses are degenerate.
pub(crate) fn resolve_params(
    matrix: &ResponseMatrix,
    params: &[ItemParameters],
) -> Result<(Design, Vec<f64>, Vec<f64>), IrtError> {
    let by_id: BTreeMap<&str, &ItemParameters> = params.iter().map(|p| (p.item_id.as_str(), p)).collect();
    if by_id.len() != params.len() {
        return Err(IrtError::DimensionMismatch("duplicate item ids in parameters".into()));
    }
    for p in params {
        if !matrix.item_ids.contains(&p.item_id) {
            return Err(IrtError::DimensionMismatch(format!("item {} not in matrix", p.item_id)));
        }
    }
    let degenerate = matrix.degenerate_items();
    let mut columns = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (c, id) in matrix.item_ids.iter().enumerate() {
        match by_id.get(id.as_str()) {
            Some(p) if p.degenerate => {}
            Some(p) => {
                columns.push(c);
                a.push(p.a);
                b.push(p.b);
            }
            None if degenerate[c] => {}
            None => return Err(IrtError::DimensionMismatch(format!("no parameters for item {id}"))),
        }
    }
    Ok((Design::new(matrix, columns), a, b))
}

/// Sum over students of `ln sum_k w_k prod_i P^x (1 - P)^(1 - x)`, skipping
/// missing cells.
pub fn marginal_log_likelihood(
    matrix: &ResponseMatrix,
    params: &[ItemParameters],
    quadrature: &QuadratureSpec,
) -> Result<f64, IrtError> {
    let quad = quadrature.build()?;
    let (design, a, b) = resolve_params(matrix, params)?;
    Ok(e_step(&design, &a, &b, &quad).loglik)
}

/// Analytic gradient `(d/da_i, d/db_i)` for each entry of `params`, in order.
/// Degenerate-flagged items get `(0, 0)`.
pub fn marginal_log_likelihood_gradient(
    matrix: &ResponseMatrix,
    params: &[ItemParameters],
    quadrature: &QuadratureSpec,
) -> Result<Vec<(f64, f64)>, IrtError> {
    let quad = quadrature.build()?;
    let (design, a, b) = resolve_params(matrix, params)?;
    let est = e_step(&design, &a, &b, &quad);
    let grads = gradient_from_counts(&est, &a, &b, &quad);
    let by_col: BTreeMap<usize, (f64, f64)> = design.columns.iter().copied().zip(grads).collect();
    Ok(params
        .iter()
        .map(|p| {
            let c = matrix.item_ids.iter().position(|id| *id == p.item_id).expect("resolved above");
            by_col.get(&c).copied().unwrap_or((0.0, 0.0))
        })
        .collect())
}
