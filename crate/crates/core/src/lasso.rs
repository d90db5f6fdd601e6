//! ℓ1-penalized least squares by cyclic coordinate descent.
//!
//! The objective is `(1/n') |Y - Xβ|² + λ Σ_j w_j |β_j|` with optional
//! per-coordinate weights `w_j` (all 1 for the plain Lasso). `λ` is reported
//! on this scale everywhere.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    pub design: DMatrix<f64>,
    pub response: Vec<f64>,
    pub lambda: f64,
    /// Per-coordinate penalty weights; `0` leaves a coordinate unpenalized and
    /// `f64::INFINITY` pins it to 0.
    pub weights: Option<Vec<f64>>,
}

impl LassoProblem {
    pub fn new(design: DMatrix<f64>, response: Vec<f64>, lambda: f64) -> Result<Self> {
        let p = LassoProblem {
            design,
            response,
            lambda,
            weights: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.p() == 0 {
            return Err(Error::Argument("design must have at least one row and one column".into()));
        }
        check_dim(self.n(), self.response.len())?;
        if self.design.iter().any(|v| !v.is_finite()) || self.response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("design or response contains non-finite values".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if let Some(w) = &self.weights {
            check_dim(self.p(), w.len())?;
            if w.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::Argument("penalty weights must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, j: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[j])
    }

    /// `(2/n') X_jᵀ r` for every column.
    fn gradients(&self, residual: &[f64]) -> Vec<f64> {
        let scale = 2.0 / self.n() as f64;
        (0..self.p())
            .map(|j| scale * dot(self.design.column(j).as_slice(), residual))
            .collect()
    }

    pub fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.response.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (ri, xij) in r.iter_mut().zip(self.design.column(j).iter()) {
                    *ri -= xij * b;
                }
            }
        }
        r
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        let r = self.residual(beta);
        let fit = dot(&r, &r) / self.n() as f64;
        let pen: f64 = beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, b)| self.weight(j) * b.abs())
            .sum();
        fit + self.lambda * pen
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Smallest `λ` for which every penalized coordinate is 0 at the optimum
/// (unpenalized coordinates are fitted by least squares first).
pub fn lambda_max(problem: &LassoProblem) -> f64 {
    let p = problem.p();
    let free: Vec<usize> = (0..p).filter(|&j| problem.weight(j) == 0.0).collect();
    let residual = if free.is_empty() {
        problem.response.clone()
    } else {
        let sub = LassoProblem {
            design: problem.design.select_columns(&free),
            response: problem.response.clone(),
            lambda: 0.0,
            weights: None,
        };
        let ls = least_squares(&sub, 1e-12);
        let mut beta = vec![0.0; p];
        free.iter().zip(&ls.beta).for_each(|(&j, &b)| beta[j] = b);
        problem.residual(&beta)
    };
    problem
        .gradients(&residual)
        .into_iter()
        .enumerate()
        .map(|(j, g)| {
            let w = problem.weight(j);
            if w.is_infinite() || w == 0.0 {
                0.0
            } else {
                (g / w).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the optimality conditions at `beta`.
pub fn kkt_residual(problem: &LassoProblem, beta: &[f64]) -> f64 {
    let r = problem.residual(beta);
    let g = problem.gradients(&r);
    let mut worst: f64 = 0.0;
    for (j, (&gj, &bj)) in g.iter().zip(beta).enumerate() {
        let w = problem.weight(j);
        let v = if w.is_infinite() {
            if bj == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else if bj == 0.0 {
            (gj.abs() - problem.lambda * w).max(0.0)
        } else {
            (gj - problem.lambda * w * bj.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tolerance: f64,
    /// Maximum number of full sweeps over the coordinates.
    pub max_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Vec<f64>>,
    /// Coordinate visiting order; defaults to `0..p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-8,
            max_iters: 100_000,
            warm_start: None,
            order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LassoSolution {
    pub fn nonzeros(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

/// Cyclic coordinate descent.
///
/// Stops once the largest coordinate move of a sweep is below `tolerance` and
/// the KKT residual is at most `tolerance`.
pub fn fit(problem: &LassoProblem, opts: &FitOptions) -> Result<LassoSolution> {
    problem.validate()?;
    let (n, p) = (problem.n(), problem.p());
    let order: Vec<usize> = match &opts.order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..p).collect::<Vec<_>>() {
                return Err(Error::Argument("coordinate order must be a permutation of 0..p".into()));
            }
            o.clone()
        }
        None => (0..p).collect(),
    };
    let mut beta = match &opts.warm_start {
        Some(w) => {
            check_dim(p, w.len())?;
            w.clone()
        }
        None => vec![0.0; p],
    };
    for j in 0..p {
        if problem.weight(j).is_infinite() {
            beta[j] = 0.0;
        }
    }

    if problem.lambda == 0.0 && (0..p).all(|j| problem.weight(j).is_finite()) {
        return Ok(least_squares(problem, opts.tolerance));
    }

    let scale = 2.0 / n as f64;
    let col_sq: Vec<f64> = (0..p)
        .map(|j| {
            let c = problem.design.column(j);
            scale * dot(c.as_slice(), c.as_slice())
        })
        .collect();

    // A warm start worse than zero is discarded so the result never exceeds either.
    if opts.warm_start.is_some() && problem.objective(&beta) > problem.objective(&vec![0.0; p]) {
        beta = vec![0.0; p];
    }

    let gram = (n > p).then(|| problem.design.tr_mul(&problem.design) * scale);
    let mut r = problem.residual(&beta);
    // with a Gram matrix, `q` tracks the gradient `(2/n)·Xᵀr`
    let mut q: Vec<f64> = match &gram {
        Some(_) => problem.gradients(&r),
        None => Vec::new(),
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut max_move: f64 = 0.0;
        for &j in &order {
            let w = problem.weight(j);
            let old = beta[j];
            let new = if w.is_infinite() || col_sq[j] == 0.0 {
                0.0
            } else {
                let rho = match &gram {
                    Some(_) => q[j] + col_sq[j] * old,
                    None => scale * dot(problem.design.column(j).as_slice(), &r) + col_sq[j] * old,
                };
                soft_threshold(rho, problem.lambda * w) / col_sq[j]
            };
            let delta = new - old;
            if delta != 0.0 {
                match &gram {
                    Some(g) => q.iter_mut().zip(g.column(j).iter()).for_each(|(qk, gk)| *qk -= gk * delta),
                    None => {
                        let col = problem.design.column(j);
                        for (ri, x) in r.iter_mut().zip(col.iter()) {
                            *ri -= x * delta;
                        }
                    }
                }
                beta[j] = new;
                max_move = max_move.max(delta.abs());
            }
        }
        if max_move < opts.tolerance {
            // refresh from scratch to shed accumulated rounding before certifying
            r = problem.residual(&beta);
            if gram.is_some() {
                q = problem.gradients(&r);
            }
            if kkt_residual(problem, &beta) <= opts.tolerance {
                converged = true;
                break;
            }
        }
    }
    Ok(LassoSolution {
        objective: problem.objective(&beta),
        kkt_residual: kkt_residual(problem, &beta),
        beta,
        iterations,
        converged,
    })
}

/// Unpenalized case: minimum-norm least squares through the SVD, which stays
/// accurate on the nearly collinear designs where coordinate descent crawls.
fn least_squares(problem: &LassoProblem, tolerance: f64) -> LassoSolution {
    let y = nalgebra::DVector::from_column_slice(&problem.response);
    let svd = problem.design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12 * problem.n().max(problem.p()) as f64;
    let beta: Vec<f64> = match svd.solve(&y, eps) {
        Ok(b) => b.iter().copied().collect(),
        Err(_) => vec![0.0; problem.p()],
    };
    let kkt = kkt_residual(problem, &beta);
    LassoSolution {
        objective: problem.objective(&beta),
        kkt_residual: kkt,
        beta,
        iterations: 1,
        converged: kkt <= tolerance,
    }
}

/// Log-spaced penalty grid from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count <= 1 {
        return vec![lambda_max];
    }
    let top = lambda_max.max(f64::MIN_POSITIVE);
    let (lo, hi) = ((top * ratio).ln(), top.ln());
    (0..count)
        .map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Solutions along `lambdas`, warm-started in decreasing order of `λ`; the
/// output follows the input order.
pub fn fit_path(
    design: &DMatrix<f64>,
    response: &[f64],
    lambdas: &[f64],
    weights: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<Vec<LassoSolution>> {
    let mut idx: Vec<usize> = (0..lambdas.len()).collect();
    idx.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<LassoSolution>> = vec![None; lambdas.len()];
    let mut warm: Option<Vec<f64>> = opts.warm_start.clone();
    for i in idx {
        let mut problem = LassoProblem::new(design.clone(), response.to_vec(), lambdas[i])?;
        if let Some(w) = weights {
            problem = problem.with_weights(w.to_vec())?;
        }
        let o = FitOptions {
            warm_start: warm.clone(),
            ..opts.clone()
        };
        let sol = fit(&problem, &o)?;
        warm = Some(sol.beta.clone());
        out[i] = Some(sol);
    }
    Ok(out.into_iter().map(|s| s.expect("every index visited")).collect())
}

/// Adaptive Lasso: penalty weights `1 / |pilot_j|^δ`, so `λ_j = μ / |pilot_j|^δ`.
pub fn fit_adaptive(
    design: DMatrix<f64>,
    response: Vec<f64>,
    mu: f64,
    delta: f64,
    pilot_beta: &[f64],
    opts: &FitOptions,
) -> Result<LassoSolution> {
    if !(delta > 0.0) {
        return Err(Error::Argument("delta must be positive".into()));
    }
    check_dim(design.ncols(), pilot_beta.len())?;
    if pilot_beta.iter().all(|b| *b == 0.0) {
        return Err(Error::Degenerate("all pilot coefficients are zero".into()));
    }
    let weights = adaptive_weights(pilot_beta, delta);
    let problem = LassoProblem::new(design, response, mu)?.with_weights(weights)?;
    fit(&problem, opts)
}

pub fn adaptive_weights(pilot_beta: &[f64], delta: f64) -> Vec<f64> {
    pilot_beta
        .iter()
        .map(|b| {
            if *b == 0.0 {
                f64::INFINITY
            } else {
                b.abs().powf(-delta)
            }
        })
        .collect()
}
