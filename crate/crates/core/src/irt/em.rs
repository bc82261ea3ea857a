//! Marginal maximum likelihood by EM.
//!
//! The E-step computes each student's posterior over the quadrature nodes and
//! accumulates expected counts `n_ik` (observed on item i at node k) and
//! `r_ik` (correct on item i at node k). The M-step maximizes, item by item,
//!
//! ```text
//! Q_i(a, b) = sum_k r_ik ln P_ik + (n_ik - r_ik) ln (1 - P_ik)
//! ```
//!
//! with a Levenberg-damped Newton iteration in `(a, b)` and step halving.
//! Only steps that increase `Q_i` are accepted, which keeps the marginal
//! log-likelihood non-decreasing across iterations.

use serde::{Deserialize, Serialize};

use super::ability::{abilities_from_design, AbilityEstimate};
use super::likelihood::{e_step, Design, EStep, LogTables};
use super::model::{log_sigmoid, sigmoid};
use super::{IrtError, ItemParameters, Quadrature, QuadratureSpec};
use crate::matrix::ResponseMatrix;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub quadrature: QuadratureSpec,
    /// Stop when the relative change in log-likelihood falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// `|a|` is kept within this bound.
    pub a_bound: f64,
    /// `|b|` is kept within this bound.
    pub b_bound: f64,
    pub newton_max_steps: usize,
    pub min_students: usize,
    pub min_items: usize,
    /// Recorded with the fit. The estimator itself draws no random numbers.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            quadrature: QuadratureSpec::default(),
            tol: 1e-6,
            max_iter: 500,
            a_bound: 10.0,
            b_bound: 50.0,
            newton_max_steps: 50,
            min_students: 10,
            min_items: 2,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), IrtError> {
        self.quadrature.build()?;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.tol) || !positive(self.a_bound) || !positive(self.b_bound) || self.max_iter == 0 {
            return Err(IrtError::InvalidConfig("tol, bounds and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub group_id: String,
    /// Number of M-steps taken.
    pub n_iterations: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    /// Log-likelihood before each M-step and at the final parameters.
    pub trace: Vec<f64>,
    pub n_students_used: usize,
    pub n_items_used: usize,
    /// Items excluded from calibration because their responses are all equal.
    pub degenerate_items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    /// One entry per matrix item, in matrix order.
    pub items: Vec<ItemParameters>,
    pub abilities: Vec<AbilityEstimate>,
    pub diagnostics: FitDiagnostics,
}

pub fn fit_2pl(matrix: &ResponseMatrix, config: &FitConfig) -> Result<FitResult, IrtError> {
    config.validate()?;
    let quad = config.quadrature.build()?;
    let degenerate = matrix.degenerate_items();
    let columns: Vec<usize> = (0..matrix.n_items()).filter(|&c| !degenerate[c]).collect();
    if columns.len() < config.min_items.max(1) {
        return Err(IrtError::DegenerateMatrix(format!(
            "group {}: {} calibratable items, need {}",
            matrix.group_id,
            columns.len(),
            config.min_items
        )));
    }
    let design = Design::new(matrix, columns);
    let n_students_used = design.rows.iter().filter(|r| !r.is_empty()).count();
    if n_students_used < config.min_students {
        return Err(IrtError::DegenerateMatrix(format!(
            "group {}: {n_students_used} students with responses, need {}",
            matrix.group_id, config.min_students
        )));
    }

    let signs = item_rest_signs(&design);
    let mut a = signs.clone();
    let mut b: Vec<f64> = design
        .columns
        .iter()
        .zip(&signs)
        .map(|(&c, sign)| {
            let (obs, ones) = matrix.item_counts(c);
            let p = ones as f64 / obs as f64;
            (-(p / (1.0 - p)).ln() / sign).clamp(-3.0, 3.0)
        })
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut est: EStep;
    loop {
        est = e_step(&design, &a, &b, &quad);
        if let Some(&prev) = trace.last() {
            let change = (est.loglik - prev) / f64::abs(prev).max(f64::MIN_POSITIVE);
            trace.push(est.loglik);
            if change.abs() < config.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(est.loglik);
        }
        if iterations == config.max_iter {
            break;
        }
        let k = quad.nodes.len();
        let updated = par::map_range(design.n_items(), |i| {
            maximize_item(
                &quad.nodes,
                &est.n[i * k..(i + 1) * k],
                &est.r[i * k..(i + 1) * k],
                (a[i], b[i]),
                config,
            )
        });
        for (i, (ai, bi)) in updated.into_iter().enumerate() {
            a[i] = ai;
            b[i] = bi;
        }
        iterations += 1;
    }

    let blocks = item_hessians(&design, &a, &b, &quad);
    let mut fitted = Vec::with_capacity(matrix.n_items());
    let mut j = 0;
    for (c, id) in matrix.item_ids.iter().enumerate() {
        if degenerate[c] {
            let (obs, ones) = matrix.item_counts(c);
            let b = match (obs, ones) {
                (0, _) => 0.0,
                (_, 0) => config.b_bound,
                _ => -config.b_bound,
            };
            fitted.push(ItemParameters { item_id: id.clone(), a: 0.0, b, se_a: None, se_b: None, degenerate: true });
            continue;
        }
        let at_bound = a[j].abs() >= config.a_bound * (1.0 - 1e-12) || b[j].abs() >= config.b_bound * (1.0 - 1e-12);
        let (se_a, se_b) = standard_errors(blocks[j]);
        fitted.push(ItemParameters { item_id: id.clone(), a: a[j], b: b[j], se_a, se_b, degenerate: at_bound });
        j += 1;
    }
    let tables = LogTables::new(&a, &b, &quad);
    let abilities = abilities_from_design(matrix, &design, &tables, &quad);
    let degenerate_items =
        matrix.item_ids.iter().zip(&degenerate).filter(|(_, d)| **d).map(|(id, _)| id.clone()).collect();
    Ok(FitResult {
        items: fitted,
        abilities,
        diagnostics: FitDiagnostics {
            group_id: matrix.group_id.clone(),
            n_iterations: iterations,
            log_likelihood: est.loglik,
            converged,
            trace,
            n_students_used,
            n_items_used: design.n_items(),
            degenerate_items,
        },
    })
}

/// Sign of each item's correlation with the student's mean score on the other
/// items: `-1.0` when negative, else `1.0`. Starting `a` on the right side of
/// zero keeps the M-step from stalling where `b` is unidentified.
fn item_rest_signs(design: &Design) -> Vec<f64> {
    let n = design.n_items();
    // per item: count, sum x, sum rest, sum x*rest
    let mut acc = vec![[0.0f64; 4]; n];
    for row in &design.rows {
        if row.len() < 2 {
            continue;
        }
        let total = row.iter().filter(|(_, x)| *x).count() as f64;
        let others = (row.len() - 1) as f64;
        for &(i, x) in row {
            let x = f64::from(u8::from(x));
            let rest = (total - x) / others;
            let s = &mut acc[i as usize];
            s[0] += 1.0;
            s[1] += x;
            s[2] += rest;
            s[3] += x * rest;
        }
    }
    acc.iter()
        .map(|s| {
            let cov = s[3] - s[1] * s[2] / s[0].max(1.0);
            if cov < 0.0 { -1.0 } else { 1.0 }
        })
        .collect()
}

/// Expected complete-data log-likelihood for one item.
fn item_objective(nodes: &[f64], n: &[f64], r: &[f64], a: f64, b: f64) -> f64 {
    nodes
        .iter()
        .zip(n.iter().zip(r))
        .map(|(t, (n, r))| {
            let z = a * (t - b);
            r * log_sigmoid(z) + (n - r) * log_sigmoid(-z)
        })
        .sum()
}

/// Damped Newton ascent on one item's M-step objective within the bounds.
fn maximize_item(nodes: &[f64], n: &[f64], r: &[f64], start: (f64, f64), config: &FitConfig) -> (f64, f64) {
    let clamp = |a: f64, b: f64| (a.clamp(-config.a_bound, config.a_bound), b.clamp(-config.b_bound, config.b_bound));
    let (mut a, mut b) = clamp(start.0, start.1);
    let mut q = item_objective(nodes, n, r, a, b);
    for _ in 0..config.newton_max_steps {
        let (mut ga, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0);
        let mut resid = 0.0;
        for (t, (nk, rk)) in nodes.iter().zip(n.iter().zip(r)) {
            let d = t - b;
            let p = sigmoid(a * d);
            let w = nk * p * (1.0 - p);
            let e = rk - nk * p;
            ga += e * d;
            resid += e;
            haa -= w * d * d;
            hab += a * w * d;
            hbb -= a * a * w;
        }
        let gb = -a * resid;
        hab -= resid;
        if ga.abs() + gb.abs() < 1e-12 {
            break;
        }
        // Solve (-H + lambda I) delta = g with lambda raised until positive definite.
        let (n11, n12, n22) = (-haa, -hab, -hbb);
        let scale = n11.abs() + n22.abs() + 1e-12;
        let mut lambda = 0.0;
        let delta = loop {
            let (m11, m22) = (n11 + lambda, n22 + lambda);
            let det = m11 * m22 - n12 * n12;
            if m11 > 0.0 && det > 1e-14 * scale * scale {
                break ((m22 * ga - n12 * gb) / det, (m11 * gb - n12 * ga) / det);
            }
            lambda = if lambda == 0.0 { 1e-6 * scale } else { lambda * 4.0 };
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (ca, cb) = clamp(a + step * delta.0, b + step * delta.1);
            let cq = item_objective(nodes, n, r, ca, cb);
            if cq > q {
                let moved = (ca - a).abs() + (cb - b).abs();
                a = ca;
                b = cb;
                q = cq;
                accepted = moved > 1e-12;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (a, b)
}

/// Per-item 2x2 Hessian blocks of the marginal log-likelihood, by Louis'
/// identity: posterior mean of the complete-data Hessian plus the posterior
/// covariance of the complete-data score. Returned as `(h_aa, h_ab, h_bb)`.
fn item_hessians(design: &Design, a: &[f64], b: &[f64], quad: &Quadrature) -> Vec<(f64, f64, f64)> {
    let tables = LogTables::new(a, b, quad);
    let k = quad.nodes.len();
    let n_items = design.n_items();
    let (blocks, _) = par::chunked_fold(
        &design.rows,
        || (vec![(0.0, 0.0, 0.0); n_items], vec![0.0; k]),
        |(acc, post), _, row| {
            if row.is_empty() {
                return;
            }
            tables.posterior(row, quad, post);
            for &(i, x) in row {
                let i = i as usize;
                let (ai, bi) = (a[i], b[i]);
                let y = f64::from(u8::from(x));
                let (mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0);
                let (mut s1, mut s2) = (0.0, 0.0);
                let (mut ss11, mut ss12, mut ss22) = (0.0, 0.0, 0.0);
                for (t, w) in quad.nodes.iter().zip(post.iter()) {
                    let d = t - bi;
                    let p = sigmoid(ai * d);
                    let v = p * (1.0 - p);
                    let e = y - p;
                    let (g1, g2) = (e * d, -ai * e);
                    h11 += w * (-v * d * d);
                    h12 += w * (ai * v * d - e);
                    h22 += w * (-ai * ai * v);
                    s1 += w * g1;
                    s2 += w * g2;
                    ss11 += w * g1 * g1;
                    ss12 += w * g1 * g2;
                    ss22 += w * g2 * g2;
                }
                let blk = &mut acc[i];
                blk.0 += h11 + ss11 - s1 * s1;
                blk.1 += h12 + ss12 - s1 * s2;
                blk.2 += h22 + ss22 - s2 * s2;
            }
        },
        |(total, _), (part, _)| {
            for (t, p) in total.iter_mut().zip(part) {
                t.0 += p.0;
                t.1 += p.1;
                t.2 += p.2;
            }
        },
    );
    blocks
}

/// Standard errors from the inverse observed information, when it is
/// positive definite.
fn standard_errors((h11, h12, h22): (f64, f64, f64)) -> (Option<f64>, Option<f64>) {
    let (i11, i12, i22) = (-h11, -h12, -h22);
    let det = i11 * i22 - i12 * i12;
    if i11 > 0.0 && i22 > 0.0 && det > 0.0 && det.is_finite() {
        ((i22 / det).sqrt().into(), (i11 / det).sqrt().into())
    } else {
        (None, None)
    }
}

#[cfg(test)]
pub(crate) fn hessian_blocks_for_test(
    matrix: &ResponseMatrix,
    params: &[ItemParameters],
    spec: &QuadratureSpec,
) -> Vec<(f64, f64, f64)> {
    let quad = spec.build().unwrap();
    let (design, a, b) = super::likelihood::resolve_params(matrix, params).unwrap();
    item_hessians(&design, &a, &b, &quad)
}
