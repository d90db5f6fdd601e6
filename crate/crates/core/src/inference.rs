//! Simplifying-assumption Wald test, bootstrap calibration, finite-sample
//! bound evaluation and a restricted-eigenvalue diagnostic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::ckt::{gn_moment, GnBudget};
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelSpec;
use crate::pipeline::{two_step_fit, FitResult};
use crate::sample::Sample;
use crate::simulation::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WaldVariant {
    /// `n hᵖ β̂ᵀ Vₙ β̂`
    #[default]
    AsPrinted,
    /// `n hᵖ β̂ᵀ Vₙ⁺ β̂`, referred to `χ²(rank Vₙ)`.
    Studentized,
}

impl std::str::FromStr for WaldVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "as_printed" | "printed" => Ok(WaldVariant::AsPrinted),
            "studentized" => Ok(WaldVariant::Studentized),
            other => Err(Error::Argument(format!("unknown wald variant `{other}`"))),
        }
    }
}

/// Degrees of freedom for the `as_printed` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DofRule {
    /// Number of design points used.
    #[default]
    DesignPoints,
    /// Number of tested coefficients.
    Coefficients,
}

impl std::str::FromStr for DofRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "design_points" | "n_prime" => Ok(DofRule::DesignPoints),
            "coefficients" | "p_prime" => Ok(DofRule::Coefficients),
            other => Err(Error::Argument(format!("unknown dof rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldOptions {
    pub variant: WaldVariant,
    pub remove_intercept: bool,
    pub dof_rule: DofRule,
    pub gn_budget: GnBudget,
    #[serde(default)]
    pub h_hat: HhatMode,
    pub seed: u64,
    /// Relative eigenvalue threshold for singularity and pseudo-inverse rank.
    pub rank_tol: f64,
}

impl Default for WaldOptions {
    fn default() -> Self {
        WaldOptions {
            variant: WaldVariant::AsPrinted,
            remove_intercept: true,
            dof_rule: DofRule::DesignPoints,
            gn_budget: GnBudget::default(),
            h_hat: HhatMode::Indicator,
            seed: 0,
            rank_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub variant: WaldVariant,
    pub intercept_removed: bool,
    pub h_hat_diag: Vec<f64>,
    /// Design points where `𝒢ₙ - τ̂²` was negative and floored at zero.
    pub floored: usize,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_p_value: Option<f64>,
}

/// Upper tail of `χ²(dof)` at `x`; `dof = 0` puts all mass at zero.
pub fn chi_square_sf(x: f64, dof: usize) -> f64 {
    if dof == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    let d = ChiSquared::new(dof as f64).expect("positive dof");
    d.sf(x).clamp(0.0, 1.0)
}

/// Per-point factors `s_i = 2 Λ'(τ̂_i) √(max(𝒢ₙ(z'_i) - τ̂_i², 0) / f̂(z'_i))`
/// at the used design points, and the number of floored points.
pub fn point_scales(sample: &Sample, fit: &FitResult, budget: GnBudget, seed: u64) -> Result<(Vec<f64>, usize)> {
    let cfg = &fit.config;
    let points: Vec<(usize, &[f64], f64, f64)> = fit
        .first_stage
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.tau_hat.map(|t| (i, p.z.as_slice(), t, p.density)))
        .collect();
    let parts: Vec<(f64, bool)> = points
        .par_iter()
        .map(|&(i, z, tau, dens)| {
            if dens <= 0.0 {
                return Err(Error::Degenerate(format!("zero density estimate at z = {z:?}")));
            }
            let gn = gn_moment(sample, z, &cfg.kernel, cfg.variant, budget, derive_seed(seed, &[i as u64]))?;
            let raw = gn - tau * tau;
            Ok((2.0 * cfg.transform.derivative(tau) * (raw.max(0.0) / dens).sqrt(), raw < 0.0))
        })
        .collect::<Result<_>>()?;
    let floored = parts.iter().filter(|p| p.1).count();
    Ok((parts.into_iter().map(|p| p.0).collect(), floored))
}

/// Cross-point structure of `Ĥ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HhatMode {
    /// `Ĥ_ij ∝ ∫K² 1{z'_i = z'_j}`.
    #[default]
    Indicator,
    /// `Ĥ_ij ∝ ∫K(u) K(u + (z'_i - z'_j)/h) du`, which also covers design
    /// points whose kernel windows overlap.
    KernelOverlap,
}

impl std::str::FromStr for HhatMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "indicator" => Ok(HhatMode::Indicator),
            "kernel_overlap" | "overlap" => Ok(HhatMode::KernelOverlap),
            other => Err(Error::Argument(format!("unknown h-hat mode `{other}`"))),
        }
    }
}

/// `Ĥ_ij = c_ij s_i s_j` with `c_ij` set by `mode`.
pub fn h_hat_matrix(points: &[Vec<f64>], scales: &[f64], kernel: &KernelSpec, mode: HhatMode) -> Result<DMatrix<f64>> {
    check_dim(points.len(), scales.len())?;
    let n = points.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let c = match mode {
            HhatMode::Indicator if points[i] == points[j] => kernel.int_k2(),
            HhatMode::Indicator => 0.0,
            HhatMode::KernelOverlap => kernel.overlap(&points[i], &points[j]),
        };
        c * scales[i] * scales[j]
    }))
}

/// Column-equilibrated QR pieces of the sandwich, with the columns in
/// `front` moved ahead of the others.
struct Sandwich {
    order: Vec<usize>,
    scale: Vec<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
}

fn null_error(vectors: Vec<DVector<f64>>, order: &[usize], scale: &[f64]) -> Error {
    let null_directions = vectors
        .into_iter()
        .map(|v| {
            let mut d = vec![0.0; order.len()];
            for (k, &j) in order.iter().enumerate() {
                d[j] = v[k] / scale[k];
            }
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.iter_mut().for_each(|x| *x /= norm);
            d
        })
        .collect();
    Error::RankDeficient { null_directions }
}

impl Sandwich {
    fn new(psi: &DMatrix<f64>, h: &DMatrix<f64>, front: &[usize], rank_tol: f64) -> Result<Self> {
        check_dim(psi.nrows(), h.nrows())?;
        check_dim(psi.nrows(), h.ncols())?;
        let p = psi.ncols();
        let mut order = front.to_vec();
        order.extend((0..p).filter(|j| !front.contains(j)));
        let mut scaled = psi.select_columns(&order);
        let mut scale = Vec::with_capacity(p);
        for mut col in scaled.column_iter_mut() {
            let norm = col.norm();
            scale.push(if norm > 0.0 { norm } else { 1.0 });
            if norm > 0.0 {
                col /= norm;
            }
        }
        let null: Vec<DVector<f64>> = if psi.nrows() < p {
            let eig = SymmetricEigen::new(scaled.transpose() * &scaled);
            let top = eig.eigenvalues.max();
            (0..p)
                .filter(|&k| eig.eigenvalues[k] <= (p as f64) * f64::EPSILON * top)
                .map(|k| eig.eigenvectors.column(k).into_owned())
                .collect()
        } else {
            let svd = scaled.clone().svd(false, true);
            let top = svd.singular_values.max();
            let vt = svd.v_t.as_ref().expect("requested");
            (0..p)
                .filter(|&k| !(svd.singular_values[k] > rank_tol * top))
                .map(|k| vt.row(k).transpose())
                .collect()
        };
        if !null.is_empty() {
            return Err(null_error(null, &order, &scale));
        }
        let qr = scaled.qr();
        let q = qr.q();
        let g = q.transpose() * h * &q;
        Ok(Sandwich {
            g: (&g + g.transpose()) * 0.5,
            r: qr.r(),
            order,
            scale,
        })
    }

    /// Trailing blocks `(R_kk, G_kk)` past the first `f` reordered columns.
    fn tail(&self, f: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.order.len() - f;
        (
            self.r.view((f, f), (m, m)).into_owned(),
            self.g.view((f, f), (m, m)).into_owned(),
        )
    }

    /// Full `Vₙ` in the original column order.
    fn variance(&self) -> DMatrix<f64> {
        let p = self.order.len();
        let rinv = self
            .r
            .clone()
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("nonsingular after rank check");
        let v = &rinv * &self.g * rinv.transpose();
        let mut out = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                out[(self.order[a], self.order[b])] = v[(a, b)] / (self.scale[a] * self.scale[b]);
            }
        }
        out
    }
}

/// Sandwich `Vₙ = Σ⁻¹ (Σ_ij Ĥ_ij ψ_i ψ_jᵀ) Σ⁻¹` with `Σ = Σ_i ψ_i ψ_iᵀ`.
pub fn sandwich_variance(psi: &DMatrix<f64>, h: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    Ok(Sandwich::new(psi, h, &[], rank_tol)?.variance())
}

/// Moore–Penrose inverse of a symmetric matrix and its numerical rank.
pub fn symmetric_pinv(m: &DMatrix<f64>, rank_tol: f64) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut rank = 0;
    let inv_vals = eig.eigenvalues.map(|l| {
        if top > 0.0 && l.abs() > rank_tol * top {
            rank += 1;
            1.0 / l
        } else {
            0.0
        }
    });
    (
        eig.eigenvectors.clone() * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose(),
        rank,
    )
}

/// Statistic and degrees of freedom from the raw ingredients.
///
/// `keep` lists the coefficients under test; rows of `psi` are design points.
/// The quadratic forms are evaluated through a QR factorization of the
/// column-equilibrated design, so `Vₙ` is never inverted explicitly.
#[allow(clippy::too_many_arguments)]
pub fn wald_statistic(
    psi: &DMatrix<f64>,
    beta: &[f64],
    h: &DMatrix<f64>,
    nhp: f64,
    keep: &[usize],
    variant: WaldVariant,
    dof_rule: DofRule,
    rank_tol: f64,
) -> Result<(f64, usize)> {
    check_dim(psi.ncols(), beta.len())?;
    if keep.iter().any(|&j| j >= beta.len()) {
        return Err(Error::Argument("tested coefficient index out of range".into()));
    }
    let front: Vec<usize> = (0..beta.len()).filter(|j| !keep.contains(j)).collect();
    let sw = Sandwich::new(psi, h, &front, rank_tol)?;
    let f = front.len();
    let (r, g) = sw.tail(f);
    let kept = &sw.order[f..];
    let scale = &sw.scale[f..];
    match variant {
        WaldVariant::AsPrinted => {
            let u = DVector::from_iterator(kept.len(), kept.iter().zip(scale).map(|(&j, s)| beta[j] / s));
            let y = r.tr_solve_upper_triangular(&u).expect("nonsingular after rank check");
            let dof = match dof_rule {
                DofRule::DesignPoints => psi.nrows(),
                DofRule::Coefficients => keep.len(),
            };
            Ok((nhp * (y.transpose() * &g * &y)[(0, 0)], dof))
        }
        WaldVariant::Studentized => {
            let b = DVector::from_iterator(kept.len(), kept.iter().zip(scale).map(|(&j, s)| beta[j] * s));
            let rb = &r * b;
            let (pinv, rank) = symmetric_pinv(&g, rank_tol);
            Ok(((nhp * (rb.transpose() * pinv * &rb)[(0, 0)]).max(0.0), rank))
        }
    }
}

fn tested_coefficients(fit: &FitResult, remove_intercept: bool) -> (Vec<usize>, bool) {
    let c = if remove_intercept {
        fit.config.dictionary.constant_index()
    } else {
        None
    };
    let keep = (0..fit.beta.len()).filter(|&j| Some(j) != c).collect();
    (keep, c.is_some())
}

fn used_design(fit: &FitResult) -> Result<(Vec<Vec<f64>>, DMatrix<f64>)> {
    let pts: Vec<Vec<f64>> = fit.used_points().map(|(z, _, _)| z.to_vec()).collect();
    if pts.is_empty() {
        return Err(Error::EstimationImpossible("no usable design point".into()));
    }
    let psi = fit.config.dictionary.design_matrix(&pts)?;
    Ok((pts, psi))
}

/// `(ψ, Ĥ, floored)` over the used design points.
fn wald_parts(sample: &Sample, fit: &FitResult, opts: &WaldOptions) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let (pts, psi) = used_design(fit)?;
    let (scales, floored) = point_scales(sample, fit, opts.gn_budget, opts.seed)?;
    let h = h_hat_matrix(&pts, &scales, &fit.config.kernel, opts.h_hat)?;
    Ok((psi, h, floored))
}

/// Wald test of `β*_{-0} = 0` (all non-intercept coefficients).
pub fn wald_test(sample: &Sample, fit: &FitResult, opts: &WaldOptions) -> Result<WaldResult> {
    let (psi, h, floored) = wald_parts(sample, fit, opts)?;
    let (keep, removed) = tested_coefficients(fit, opts.remove_intercept);
    let nhp = sample.len() as f64 * fit.config.kernel.volume();
    let (statistic, dof) = wald_statistic(
        &psi,
        &fit.beta,
        &h,
        nhp,
        &keep,
        opts.variant,
        opts.dof_rule,
        opts.rank_tol,
    )?;
    Ok(WaldResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
        variant: opts.variant,
        intercept_removed: removed,
        h_hat_diag: h.diagonal().iter().copied().collect(),
        floored,
        bootstrap_replicates: None,
        bootstrap_p_value: None,
    })
}

/// Resampled statistic centred at `center`, i.e. built from `β̂* - β̂`.
fn recentered_statistic(sample: &Sample, fit: &FitResult, center: &[f64], opts: &WaldOptions) -> Result<f64> {
    let (psi, h, _) = wald_parts(sample, fit, opts)?;
    let (keep, _) = tested_coefficients(fit, opts.remove_intercept);
    let diff: Vec<f64> = fit.beta.iter().zip(center).map(|(a, b)| a - b).collect();
    let nhp = sample.len() as f64 * fit.config.kernel.volume();
    let (s, _) = wald_statistic(
        &psi,
        &diff,
        &h,
        nhp,
        &keep,
        opts.variant,
        opts.dof_rule,
        opts.rank_tol,
    )?;
    Ok(s)
}

/// Row indices of bootstrap replicate `b`, attempt `attempt`.
pub fn bootstrap_indices(n: usize, seed: u64, b: usize, attempt: usize) -> Vec<usize> {
    let mut rng = rng_for(seed, &[b as u64, attempt as u64]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Nonparametric bootstrap p-value `(1 + #{𝒲*_b ≥ 𝒲ₙ}) / (B + 1)`.
///
/// Each replicate refits with the configuration stored in `fit` on a
/// resample drawn with replacement; a replicate whose fit fails is redrawn
/// up to three times and otherwise counted as an exceedance.
pub fn bootstrap_pvalue(sample: &Sample, fit: &FitResult, observed: f64, b: usize, opts: &WaldOptions) -> Result<f64> {
    if b == 0 {
        return Err(Error::Argument("bootstrap needs B >= 1".into()));
    }
    let n = sample.len();
    let exceed: usize = (0..b)
        .into_par_iter()
        .map(|rep| {
            for attempt in 0..3 {
                let idx = bootstrap_indices(n, opts.seed, rep, attempt);
                let Ok(resample) = sample.subset(&idx) else { continue };
                let Ok(refit) = two_step_fit(&resample, &fit.config) else { continue };
                let mut o = *opts;
                o.seed = derive_seed(opts.seed, &[rep as u64, attempt as u64, 1]);
                if let Ok(s) = recentered_statistic(&resample, &refit, &fit.beta, &o) {
                    return usize::from(s >= observed);
                }
            }
            1
        })
        .sum();
    Ok((1 + exceed) as f64 / (b + 1) as f64)
}

/// Constants entering the finite-sample bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub alpha: u32,
    pub p: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub int_k2: f64,
    pub c_k: f64,
    pub c_k_alpha: f64,
    pub c_xz_alpha: f64,
    pub c_psi: f64,
    pub c_lambda_prime: f64,
    pub gamma: f64,
    pub kappa_s3: f64,
    pub s: usize,
}

fn factorial(a: u32) -> f64 {
    (1..=a).map(f64::from).product()
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.f_min,
            self.f_max,
            self.int_k2,
            self.c_k,
            self.c_k_alpha,
            self.c_xz_alpha,
            self.c_psi,
            self.c_lambda_prime,
            self.gamma,
            self.kappa_s3,
        ];
        if self.alpha == 0 || self.p == 0 || self.s == 0 || reals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Argument("theory constants must be finite and strictly positive".into()));
        }
        if self.f_min > self.f_max {
            return Err(Error::Argument("f_min must not exceed f_max".into()));
        }
        if self.gamma < 4.0 {
            return Err(Error::Argument("gamma must be at least 4".into()));
        }
        Ok(())
    }

    fn spread(&self, k: f64) -> f64 {
        self.f_min * self.f_min + k * self.f_max * self.f_max
    }

    pub fn c1(&self) -> f64 {
        self.f_min.powi(2) / (32.0 * self.f_max * self.int_k2 + 8.0 / 3.0 * self.c_k * self.f_min)
    }

    pub fn c2(&self) -> f64 {
        let inner = 16.0 * self.c_psi * self.c_lambda_prime * self.spread(8.0) * self.f_max * self.int_k2;
        inner * inner / self.f_min.powi(8)
    }

    pub fn c3(&self) -> f64 {
        64.0 / 3.0 * self.c_psi * self.c_lambda_prime * self.c_k.powi(2) * self.spread(8.0) / self.f_min.powi(4)
    }

    /// Right-hand side of the bandwidth condition on `h^α`.
    pub fn h_alpha_limit(&self, t: f64) -> f64 {
        let fa = factorial(self.alpha);
        let a = self.f_min * fa / (4.0 * self.c_k_alpha);
        let b = self.f_min.powi(4) * fa * t
            / (8.0 * self.c_psi * self.c_lambda_prime * self.spread(8.0) * self.c_xz_alpha);
        a.min(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub t: f64,
    pub h: f64,
    /// Bound on `‖ℤ'(β̂ - β*)‖_{n'}`.
    pub radius_pred: f64,
    /// May be negative; reported as is.
    pub prob_lower_bound: f64,
    pub h_condition_ok: bool,
    pub gamma: f64,
    pub s: usize,
    pub kappa_s3: f64,
}

impl ErrorBound {
    /// Bound on `|β̂ - β*|_q`, `1 <= q <= 2`.
    pub fn radius_q(&self, q: f64) -> f64 {
        4f64.powf(2.0 / q) * (self.gamma + 1.0) * self.t * (self.s as f64).powf(1.0 / q) / self.kappa_s3.powi(2)
    }
}

pub fn error_bound(c: &TheoryConstants, n: usize, n_prime: usize, t: f64, h: f64) -> Result<ErrorBound> {
    c.validate()?;
    if !(t > 0.0 && h > 0.0) || n < 2 || n_prime == 0 {
        return Err(Error::Argument("error_bound needs t, h > 0, n >= 2 and n' >= 1".into()));
    }
    let (c1, c2, c3) = (c.c1(), c.c2(), c.c3());
    let hp = h.powi(c.p as i32);
    let np = n_prime as f64;
    let first = 2.0 * np * (-(n as f64) * hp * c1).exp();
    let second = 2.0 * np * (-((n - 1) as f64) * hp * hp * t * t / (c2 + c3 * t)).exp();
    Ok(ErrorBound {
        c1,
        c2,
        c3,
        t,
        h,
        radius_pred: 4.0 * (c.gamma + 1.0) * t * (c.s as f64).sqrt() / c.kappa_s3,
        prob_lower_bound: 1.0 - first - second,
        h_condition_ok: h.powi(c.alpha as i32) <= c.h_alpha_limit(t),
        gamma: c.gamma,
        s: c.s,
        kappa_s3: c.kappa_s3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryChoice {
    pub c_h: f64,
    pub t: f64,
    pub h: f64,
    pub lambda: f64,
    pub bound: ErrorBound,
}

/// Rate-optimal `(t, h, λ = 4t)` for `0 < ε < 1`, evaluated with `γ = 4`.
pub fn corollary_choice(c: &TheoryConstants, n: usize, n_prime: usize, epsilon: f64) -> Result<CorollaryChoice> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Argument("epsilon must lie in (0, 1)".into()));
    }
    c.validate()?;
    let a = c.alpha as f64;
    let p = c.p as f64;
    let m = (n.max(2) - 1) as f64;
    let c_h = (c.f_min.powi(4) * factorial(c.alpha)
        / (2.0 * c.c_psi * c.c_lambda_prime * c.spread(16.0) * c.c_xz_alpha))
        .powf(1.0 / a);
    let t = m.powf(-a * (1.0 - epsilon) / (2.0 * a + 2.0 * p));
    let h = c_h * m.powf(-1.0 / (2.0 * a + 2.0 * p));
    let mut k = *c;
    k.gamma = 4.0;
    Ok(CorollaryChoice {
        c_h,
        t,
        h,
        lambda: 4.0 * t,
        bound: error_bound(&k, n, n_prime, t, h)?,
    })
}

/// Deviation bound for the kernel density estimate at one point.
///
/// Returns `(threshold, probability)` with
/// `P(|f̂(z) - f(z)| >= threshold) <= probability`.
pub fn density_deviation_bound(c: &TheoryConstants, n: usize, h: f64, t: f64) -> (f64, f64) {
    let ha = h.powi(c.alpha as i32);
    let hp = h.powi(c.p as i32);
    let bias = c.c_k_alpha * ha / factorial(c.alpha);
    let prob = 2.0 * (-(n as f64) * hp * t * t / (2.0 * c.f_max * c.int_k2 + 2.0 / 3.0 * c.c_k * t)).exp();
    (bias + t, prob.min(1.0))
}

/// Lower bound on `P(f̂(z) > 0)`.
pub fn density_positive_bound(c: &TheoryConstants, n: usize, h: f64) -> f64 {
    let ha = h.powi(c.alpha as i32);
    let hp = h.powi(c.p as i32);
    let gap = c.f_min - c.c_k_alpha * ha / factorial(c.alpha);
    if gap <= 0.0 {
        return 0.0;
    }
    1.0 - 2.0 * (-(n as f64) * hp * gap * gap / (2.0 * c.f_max * c.int_k2 + 2.0 / 3.0 * c.c_k * gap)).exp()
}

/// Deviation bound for the conditional Kendall's tau estimate at a point
/// where the density equals `f_z`, for a pair kernel with constant `c_g`.
///
/// Returns `(threshold, probability)`.
pub fn ckt_deviation_bound(c: &TheoryConstants, c_g: f64, f_z: f64, n: usize, h: f64, t: f64, t_prime: f64) -> (f64, f64) {
    let fa = factorial(c.alpha);
    let ha = h.powi(c.alpha as i32);
    let hp = h.powi(c.p as i32);
    let threshold = c_g
        * (1.0 + 16.0 * c.f_max.powi(2) / c.f_min.powi(3) * (c.c_k_alpha * ha / fa + t))
        * (c.c_xz_alpha * ha / (f_z * f_z * fa) + t_prime);
    let p1 = 2.0 * (-(n as f64) * hp * t * t / (2.0 * c.f_max * c.int_k2 + 2.0 / 3.0 * c.c_k * t)).exp();
    let p2 = 2.0
        * (-((n.max(1) - 1) as f64) * hp * hp * t_prime * t_prime * c.f_min.powi(4)
            / (4.0 * c.f_max.powi(2) * c.int_k2.powi(2) + 8.0 / 3.0 * c.c_k.powi(2) * c.f_min.powi(2) * t_prime))
            .exp();
    (threshold, (p1 + p2).min(1.0))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Random-search estimate of the restricted-eigenvalue constant
/// `κ(s, c₀) = min |ℤ'δ|₂ / (√n' |δ|₂)` over the cones
/// `|δ_{J₀ᶜ}|₁ <= c₀ |δ_{J₀}|₁`, `|J₀| <= s`.
///
/// Sampling can only find feasible directions, so the result is an upper
/// bound on the true constant. Subsets of size `s` are enumerated when there
/// are at most 10⁵ of them and sampled otherwise; smaller subsets are
/// covered because their cones are contained in those of their supersets.
pub fn estimate_re_constant(design: &DMatrix<f64>, s: usize, c0: f64, draws: usize, seed: u64) -> Result<f64> {
    let (n, p) = design.shape();
    if s == 0 || s > p {
        return Err(Error::Argument(format!("sparsity s = {s} must lie in 1..={p}")));
    }
    if !(c0 >= 0.0 && c0.is_finite()) || draws == 0 || n == 0 {
        return Err(Error::Argument("need c0 >= 0, draws >= 1 and a non-empty design".into()));
    }
    let subsets = (binomial(p, s) <= 1e5).then(|| combinations(p, s));
    let mut rng = rng_for(seed, &[]);
    let normal = rand_distr::StandardNormal;
    let mut best = f64::INFINITY;
    let mut delta = vec![0.0; p];
    let mut inside = vec![false; p];
    for d in 0..draws {
        let j0: Vec<usize> = match &subsets {
            Some(all) => all[d % all.len()].clone(),
            None => sample_indices(&mut rng, p, s).into_vec(),
        };
        inside.iter_mut().for_each(|v| *v = false);
        j0.iter().for_each(|&j| inside[j] = true);
        delta.iter_mut().for_each(|v| *v = 0.0);
        let mut l1_in = 0.0;
        for &j in &j0 {
            let v: f64 = rng.sample(normal);
            delta[j] = v;
            l1_in += v.abs();
        }
        let outside: Vec<usize> = (0..p).filter(|&j| !inside[j]).collect();
        if !outside.is_empty() {
            let budget = c0 * l1_in * rng.random::<f64>();
            if d % 2 == 1 {
                let j = outside[rng.random_range(0..outside.len())];
                delta[j] = if rng.random::<bool>() { budget } else { -budget };
            } else {
                let mut l1 = 0.0;
                for &j in &outside {
                    let v: f64 = rng.sample(normal);
                    delta[j] = v;
                    l1 += v.abs();
                }
                if l1 > 0.0 {
                    outside.iter().for_each(|&j| delta[j] *= budget / l1);
                }
            }
        }
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let zd = design * DVector::from_column_slice(&delta);
        best = best.min(zd.norm() / ((n as f64).sqrt() * norm));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> TheoryConstants {
        TheoryConstants {
            alpha: 2,
            p: 1,
            f_min: 0.5,
            f_max: 1.5,
            int_k2: 0.6,
            c_k: 0.75,
            c_k_alpha: 1.0,
            c_xz_alpha: 1.0,
            c_psi: 1.0,
            c_lambda_prime: 1.0,
            gamma: 4.0,
            kappa_s3: 0.5,
            s: 3,
        }
    }

    #[test]
    fn constants_by_hand() {
        let c = consts();
        // f_min² / (32·1.5·0.6 + 8/3·0.75·0.5) = 0.25 / (28.8 + 1)
        assert!((c.c1() - 0.25 / 29.8).abs() < 1e-15);
        // spread = 0.25 + 8·2.25 = 18.25
        let c3 = 64.0 / 3.0 * 0.5625 * 18.25 / 0.0625;
        assert!((c.c3() - c3).abs() < 1e-9 * c3);
        let c2 = (16.0 * 18.25 * 1.5 * 0.6f64).powi(2) / 0.5f64.powi(8);
        assert!((c.c2() - c2).abs() < 1e-9 * c2);
    }

    #[test]
    fn radius_coefficients() {
        let b = error_bound(&consts(), 1000, 50, 1.0, 0.1).unwrap();
        assert_eq!(b.radius_q(2.0) * b.kappa_s3.powi(2) / 3f64.sqrt(), 20.0);
        assert!((b.radius_pred - 20.0 * 3f64.sqrt() / 0.5).abs() < 1e-12);
        let mut c = consts();
        c.kappa_s3 = 1.0;
        let b2 = error_bound(&c, 1000, 50, 1.0, 0.1).unwrap();
        assert!((b.radius_pred / b2.radius_pred - 2.0).abs() < 1e-12);
        assert!((b.radius_q(2.0) / b2.radius_q(2.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn probability_limit_in_t() {
        let c = consts();
        let (n, np, h) = (5000, 20, 0.3);
        let lim = 1.0 - 2.0 * np as f64 * (-(n as f64) * h * c.c1()).exp();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..40 {
            let t = 0.01 * 2f64.powi(k);
            let b = error_bound(&c, n, np, t, h).unwrap();
            assert!(b.prob_lower_bound >= prev);
            assert!(b.prob_lower_bound <= lim + 1e-15);
            prev = b.prob_lower_bound;
        }
        assert!((prev - lim).abs() < 1e-12);
    }

    #[test]
    fn h_condition() {
        let c = consts();
        let lim = c.h_alpha_limit(1.0);
        assert!(error_bound(&c, 100, 10, 1.0, lim.sqrt() * 0.99).unwrap().h_condition_ok);
        assert!(!error_bound(&c, 100, 10, 1.0, lim.sqrt() * 1.01).unwrap().h_condition_ok);
    }

    #[test]
    fn corollary_uses_gamma_four() {
        let mut c = consts();
        c.gamma = 9.0;
        let r = corollary_choice(&c, 10_001, 50, 0.1).unwrap();
        assert_eq!(r.bound.gamma, 4.0);
        assert!((r.lambda - 4.0 * r.t).abs() < 1e-15);
        assert!((r.t - 10_000f64.powf(-2.0 * 0.9 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn constants_are_validated() {
        let mut c = consts();
        c.gamma = 3.0;
        assert!(error_bound(&c, 10, 10, 1.0, 0.1).is_err());
        let mut c = consts();
        c.f_min = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn re_identity_and_duplicate() {
        let id = DMatrix::<f64>::identity(6, 6);
        let k = estimate_re_constant(&id, 2, 3.0, 10_000, 1).unwrap();
        assert!(k > 0.0 && k <= 1.0 / 6f64.sqrt() + 1e-12);
        let mut dup = DMatrix::from_fn(20, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let c0 = dup.column(0).into_owned();
        dup.set_column(1, &c0);
        let few = estimate_re_constant(&dup, 1, 3.0, 200, 3).unwrap();
        let many = estimate_re_constant(&dup, 1, 3.0, 50_000, 3).unwrap();
        assert!(many <= few);
        assert!(many < 0.05 * few.max(1e-300) || many < 1e-2);
        assert_eq!(many, estimate_re_constant(&dup, 1, 3.0, 50_000, 3).unwrap());
        assert!(estimate_re_constant(&dup, 5, 3.0, 10, 0).is_err());
    }

    #[test]
    fn combinations_enumerate() {
        let c = combinations(5, 3);
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], vec![0, 1, 2]);
        assert_eq!(c[9], vec![2, 3, 4]);
        assert_eq!(binomial(12, 3), 220.0);
    }

    fn toy_psi(scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(15, 4, |i, j| {
            let z = i as f64 / 14.0;
            scale * if j == 0 { 1.0 } else { (z - 0.3).powi(j as i32) }
        })
    }

    #[test]
    fn studentized_scale_invariance() {
        let h = DMatrix::from_fn(15, 15, |i, j| {
            let d = (i as f64 - j as f64) / 3.0;
            (0.5 + 0.1 * i as f64) * (0.5 + 0.1 * j as f64) * (-d * d).exp()
        });
        let beta = [0.4, -0.2, 0.7, 0.1];
        let keep = [1, 2, 3];
        let (base, dof) =
            wald_statistic(&toy_psi(1.0), &beta, &h, 30.0, &keep, WaldVariant::Studentized, DofRule::DesignPoints, 1e-12)
                .unwrap();
        assert_eq!(dof, 3);
        for c in [0.5, 2.0] {
            let b: Vec<f64> = beta.iter().map(|v| v / c).collect();
            let (s, _) =
                wald_statistic(&toy_psi(c), &b, &h, 30.0, &keep, WaldVariant::Studentized, DofRule::DesignPoints, 1e-12)
                    .unwrap();
            assert!((s - base).abs() < 1e-6 * base);
        }
    }

    #[test]
    fn studentized_matches_quadratic_form() {
        let psi = toy_psi(1.0);
        let h = DMatrix::identity(15, 15);
        let beta = [0.0, 0.3, -0.1, 0.2];
        let keep = [0, 1, 2, 3];
        let v = sandwich_variance(&psi, &h, 1e-12).unwrap();
        // With Ĥ = I the sandwich collapses to Σ⁻¹ and its inverse to Σ.
        let sigma = psi.transpose() * &psi;
        let inv = sigma.clone().try_inverse().unwrap();
        assert!((&v - &inv).abs().max() < 1e-8 * inv.abs().max());
        let b = DVector::from_column_slice(&beta);
        let want = 2.0 * (b.transpose() * &sigma * &b)[(0, 0)];
        let (s, dof) = wald_statistic(&psi, &beta, &h, 2.0, &keep, WaldVariant::Studentized, DofRule::Coefficients, 1e-12)
            .unwrap();
        assert_eq!(dof, 4);
        assert!((s - want).abs() < 1e-8 * want);
        let (s2, dof2) =
            wald_statistic(&psi, &beta, &h, 2.0, &keep, WaldVariant::AsPrinted, DofRule::DesignPoints, 1e-12).unwrap();
        assert_eq!(dof2, 15);
        assert!((s2 - 2.0 * (b.transpose() * &inv * &b)[(0, 0)]).abs() < 1e-10);
    }

    #[test]
    fn singular_sigma_names_null_direction() {
        let mut psi = toy_psi(1.0);
        let c = psi.column(1).into_owned();
        psi.set_column(3, &(c * 2.0));
        match sandwich_variance(&psi, &DMatrix::identity(15, 15), 1e-12) {
            Err(Error::RankDeficient { null_directions }) => {
                assert_eq!(null_directions.len(), 1);
                let d = &null_directions[0];
                assert!((d[1] / d[3] + 2.0).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn removed_intercept_matches_explicit_subblock() {
        let psi = toy_psi(1.0);
        let h = DMatrix::from_fn(15, 15, |i, j| if i == j { 0.2 + 0.05 * i as f64 } else { 0.0 });
        let beta = [1.5, 0.3, -0.4, 0.25];
        let keep = [1, 2, 3];
        let v = sandwich_variance(&psi, &h, 1e-12).unwrap();
        let sub = v.select_rows(&keep).select_columns(&keep);
        let b = DVector::from_column_slice(&beta[1..]);
        let printed = 7.0 * (b.transpose() * &sub * &b)[(0, 0)];
        let stud = 7.0 * (b.transpose() * sub.clone().try_inverse().unwrap() * &b)[(0, 0)];
        let (a, _) = wald_statistic(&psi, &beta, &h, 7.0, &keep, WaldVariant::AsPrinted, DofRule::Coefficients, 1e-12)
            .unwrap();
        let (c, r) = wald_statistic(&psi, &beta, &h, 7.0, &keep, WaldVariant::Studentized, DofRule::Coefficients, 1e-12)
            .unwrap();
        assert!((a - printed).abs() < 1e-9 * printed);
        assert!((c - stud).abs() < 1e-8 * stud);
        assert_eq!(r, 3);
    }

    #[test]
    fn h_hat_modes() {
        let k = KernelSpec::new(crate::kernel::KernelFamily::Epanechnikov, 0.1, 1).unwrap();
        let pts = vec![vec![0.1], vec![0.15], vec![0.5], vec![0.1]];
        let s = [1.0, 2.0, 3.0, 4.0];
        let ind = h_hat_matrix(&pts, &s, &k, HhatMode::Indicator).unwrap();
        assert_eq!(ind[(0, 0)], 0.6);
        assert_eq!(ind[(0, 1)], 0.0);
        assert_eq!(ind[(0, 3)], 0.6 * 4.0);
        let ov = h_hat_matrix(&pts, &s, &k, HhatMode::KernelOverlap).unwrap();
        assert_eq!(ov[(1, 1)], ind[(1, 1)]);
        assert!(ov[(0, 1)] > 0.0 && ov[(0, 1)] < 0.6 * 2.0);
        assert_eq!(ov[(0, 2)], 0.0);
    }

    #[test]
    fn chi_square_edges() {
        assert_eq!(chi_square_sf(0.0, 5), 1.0);
        assert_eq!(chi_square_sf(0.0, 0), 1.0);
        assert!((chi_square_sf(3.841458820694124, 1) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_indices_deterministic() {
        assert_eq!(bootstrap_indices(50, 3, 7, 0), bootstrap_indices(50, 3, 7, 0));
        assert_ne!(bootstrap_indices(50, 3, 7, 0), bootstrap_indices(50, 3, 7, 1));
        assert!(bootstrap_indices(50, 3, 7, 0).iter().all(|&i| i < 50));
    }
}
