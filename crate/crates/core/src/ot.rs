//! Entropic optimal transport from support to query embeddings and the
//! barycentric projection of the supports.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numcore::{pairwise_sq_euclidean, Matrix};

/// Source weights `r` (one per support) and target weights `c` (one per query).
#[derive(Clone, Debug, PartialEq)]
pub struct Simplexes {
    r: Vec<f64>,
    c: Vec<f64>,
}

impl Simplexes {
    pub fn new(r: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        for (name, w) in [("r", &r), ("c", &c)] {
            if w.is_empty() || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonempty and nonnegative")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
            }
        }
        Ok(Self { r, c })
    }

    pub fn uniform(sources: usize, targets: usize) -> Result<Self> {
        if sources == 0 || targets == 0 {
            return Err(Error::InvalidArgument("uniform simplex over zero points".into()));
        }
        Ok(Self { r: vec![1.0 / sources as f64; sources], c: vec![1.0 / targets as f64; targets] })
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, max_iterations: 1000, tolerance: 1e-9 }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub converged: bool,
    pub iterations: usize,
    /// `‖π1 − r‖∞` and `‖πᵀ1 − c‖∞` at exit.
    pub row_residual: f64,
    pub col_residual: f64,
}

impl TransportPlan {
    /// `⟨π, M⟩_F`
    pub fn cost(&self, m: &Matrix) -> Result<f64> {
        self.plan.frobenius_dot(m)
    }
}

pub fn cost_matrix(zs: &Matrix, zq: &Matrix) -> Result<Matrix> {
    pairwise_sq_euclidean(zs, zq)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn-Knopp for `argmin ⟨π, M⟩ − ε H(π)` over couplings with marginals `(r, c)`.
///
/// Alternates exact row and column updates of the dual potentials `f`, `g`;
/// the plan is `π_ij = exp((f_i + g_j − M_ij) / ε)`. Stops once both
/// marginal residuals are within tolerance.
pub fn sinkhorn(m: &Matrix, simplexes: &Simplexes, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    m.ensure_finite("cost matrix")?;
    let (n, k) = m.shape();
    if simplexes.r.len() != n || simplexes.c.len() != k {
        return Err(shape_err!(
            "{n}x{k} cost with marginals of length {} and {}",
            simplexes.r.len(),
            simplexes.c.len()
        ));
    }
    let eps = cfg.epsilon;
    let log_r: Vec<f64> = simplexes.r.iter().map(|x| x.ln()).collect();
    let log_c: Vec<f64> = simplexes.c.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;
    let (mut row_res, mut col_res) = (f64::INFINITY, f64::INFINITY);
    let mut plan = Matrix::zeros(n, k);

    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..n {
            let row = m.row(i);
            f[i] = if log_r[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_r[i] - log_sum_exp((0..k).map(|j| (g[j] - row[j]) / eps)))
            };
        }
        for j in 0..k {
            g[j] = if log_c[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_c[j] - log_sum_exp((0..n).map(|i| (f[i] - m.get(i, j)) / eps)))
            };
        }
        fill_plan(&mut plan, m, &f, &g, eps);
        (row_res, col_res) = residuals(&plan, simplexes);
        if !(row_res.is_finite() && col_res.is_finite()) {
            return Err(Error::NonFinite(format!("Sinkhorn kernel at epsilon {eps}")));
        }
        if row_res <= cfg.tolerance && col_res <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    plan.ensure_finite("transport plan")?;
    Ok(TransportPlan { plan, converged, iterations, row_residual: row_res, col_residual: col_res })
}

fn fill_plan(plan: &mut Matrix, m: &Matrix, f: &[f64], g: &[f64], eps: f64) {
    let k = m.cols();
    for (i, &fi) in f.iter().enumerate() {
        let out = plan.row_mut(i);
        let row = m.row(i);
        for j in 0..k {
            out[j] = ((fi + g[j] - row[j]) / eps).exp();
        }
    }
}

fn residuals(plan: &Matrix, s: &Simplexes) -> (f64, f64) {
    let row = plan.row_sums().iter().zip(&s.r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let col = plan.col_sums().iter().zip(&s.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (row, col)
}

/// Divide every row of the plan by its sum.
pub fn normalize_plan(plan: &TransportPlan) -> Result<Matrix> {
    normalize_rows(&plan.plan)
}

pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for (i, s) in m.row_sums().into_iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("plan row {i} has no mass")));
        }
        for v in out.row_mut(i) {
            *v /= s;
        }
    }
    Ok(out)
}

/// `Ẑs = π̂ · Zq`: each support becomes a convex combination of query embeddings.
pub fn project_supports(plan_normalized: &Matrix, zq: &Matrix) -> Result<Matrix> {
    if plan_normalized.cols() != zq.rows() {
        return Err(shape_err!("plan has {} columns but there are {} queries", plan_normalized.cols(), zq.rows()));
    }
    plan_normalized.matmul(zq)
}

/// Everything [`opt_tune`] computed, for diagnostics.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub cost: Matrix,
    pub plan: TransportPlan,
    pub normalized: Matrix,
    pub projected: Matrix,
}

pub fn opt_tune_detailed(zs: &Matrix, zq: &Matrix, cfg: &SinkhornConfig) -> Result<Alignment> {
    let cost = cost_matrix(zs, zq)?;
    let plan = sinkhorn(&cost, &Simplexes::uniform(zs.rows(), zq.rows())?, cfg)?;
    if !plan.converged {
        log::debug!(
            "Sinkhorn stopped after {} iterations (residuals {:.2e}, {:.2e})",
            plan.iterations,
            plan.row_residual,
            plan.col_residual
        );
    }
    let normalized = normalize_plan(&plan)?;
    let projected = project_supports(&normalized, zq)?;
    Ok(Alignment { cost, plan, normalized, projected })
}

/// Map support embeddings onto the query distribution: cost, transport plan
/// with uniform marginals, row normalization, barycentric projection.
pub fn opt_tune(zs: &Matrix, zq: &Matrix, cfg: &SinkhornConfig) -> Result<Matrix> {
    Ok(opt_tune_detailed(zs, zq, cfg)?.projected)
}
