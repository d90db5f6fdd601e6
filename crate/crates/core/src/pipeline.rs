//! Two-step estimation: kernel first stage at design points, then a penalized
//! regression of the transformed estimates on a dictionary.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ckt::{ckt_batch, CktEstimate, CktOptions, ConcordanceVariant};
use crate::dictionary::Dictionary;
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelSpec;
use crate::lasso::{self, FitOptions, LassoProblem, LassoSolution};
use crate::sample::Sample;
use crate::transform::TransformSpec;

/// How the penalty level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaChoice {
    Value(f64),
    /// Cross-validated `λ̂` times `multiplier`.
    Cv { multiplier: f64 },
}

/// Scale in which the cross-validation error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CvScale {
    /// `τ̂ - Λ⁻¹(ψᵀβ)`.
    #[default]
    Tau,
    /// `τ̂ - ψᵀβ`, literally.
    Transformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    /// Candidate penalties; empty means a log-spaced grid below `lambda_max`.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    pub grid_size: usize,
    pub grid_ratio: f64,
    #[serde(default)]
    pub scale: CvScale,
    /// Estimate τ on the complement and fit β on the held-out block instead.
    #[serde(default)]
    pub swap_roles: bool,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            lambda_grid: Vec::new(),
            grid_size: 50,
            grid_ratio: 1e-3,
            scale: CvScale::Tau,
            swap_roles: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kernel: KernelSpec,
    pub transform: TransformSpec,
    pub dictionary: Dictionary,
    pub design_points: Vec<Vec<f64>>,
    /// Optional box `[lo, hi]` per coordinate that must contain every design point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
    pub penalty: LambdaChoice,
    pub variant: ConcordanceVariant,
    pub include_diagonal: bool,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub lasso: FitOptions,
    /// When false the constant term carries no penalty.
    #[serde(default = "default_true")]
    pub penalize_intercept: bool,
    /// Scale each penalty by the standard deviation of its design column.
    #[serde(default)]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl FitConfig {
    /// Identity link, `g₂`, diagonal included, fixed `λ`.
    pub fn new(kernel: KernelSpec, dictionary: Dictionary, design_points: Vec<Vec<f64>>, lambda: f64) -> Self {
        FitConfig {
            kernel,
            transform: TransformSpec::default(),
            dictionary,
            design_points,
            domain: None,
            penalty: LambdaChoice::Value(lambda),
            variant: ConcordanceVariant::G2,
            include_diagonal: true,
            cv: CvConfig::default(),
            lasso: FitOptions::default(),
            penalize_intercept: true,
            standardize: false,
        }
    }

    /// Per-column penalty weights, or `None` when every weight is 1.
    pub fn penalty_weights(&self, design: &nalgebra::DMatrix<f64>) -> Option<Vec<f64>> {
        if self.penalize_intercept && !self.standardize {
            return None;
        }
        let constant = self.dictionary.constant_index();
        let n = design.nrows().max(1) as f64;
        let w = (0..design.ncols())
            .map(|j| {
                if constant == Some(j) && !self.penalize_intercept {
                    return 0.0;
                }
                if !self.standardize {
                    return 1.0;
                }
                let col = design.column(j);
                let mean = col.sum() / n;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Some(w)
    }

    /// Design with every column divided by its penalty scale, the scales, and
    /// the penalty weights of the rescaled problem.
    fn rescaled(&self, design: nalgebra::DMatrix<f64>) -> (nalgebra::DMatrix<f64>, Option<Vec<f64>>, Option<Vec<f64>>) {
        let Some(w) = self.penalty_weights(&design) else {
            return (design, None, None);
        };
        if !self.standardize {
            return (design, None, Some(w));
        }
        let scales: Vec<f64> = w.iter().map(|&v| if v > 0.0 { v } else { 1.0 }).collect();
        let unit = w.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let mut design = design;
        for (j, s) in scales.iter().enumerate() {
            design.column_mut(j).unscale_mut(*s);
        }
        (design, Some(scales), Some(unit))
    }

    fn lasso_problem(&self, design: nalgebra::DMatrix<f64>, y: Vec<f64>, lambda: f64) -> Result<LassoProblem> {
        let w = self.penalty_weights(&design);
        let p = LassoProblem::new(design, y, lambda)?;
        match w {
            Some(w) => p.with_weights(w),
            None => Ok(p),
        }
    }

    pub fn ckt_options(&self) -> CktOptions {
        CktOptions {
            variant: self.variant,
            include_diagonal: self.include_diagonal,
        }
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        if self.design_points.is_empty() {
            return Err(Error::Argument("at least one design point is required".into()));
        }
        check_dim(sample.dim(), self.kernel.dim)?;
        check_dim(sample.dim(), self.dictionary.input_dim())?;
        for z in &self.design_points {
            check_dim(sample.dim(), z.len())?;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("design points must be finite".into()));
            }
        }
        if let Some(dom) = &self.domain {
            check_dim(sample.dim(), dom.len())?;
            for z in &self.design_points {
                if z.iter().zip(dom).any(|(v, [lo, hi])| v < lo || v > hi) {
                    return Err(Error::Argument(format!("design point {z:?} lies outside the domain")));
                }
            }
        }
        match self.penalty {
            LambdaChoice::Value(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::Argument(format!("lambda must be finite and >= 0, got {l}")));
            }
            LambdaChoice::Cv { multiplier } if !(multiplier > 0.0 && multiplier.is_finite()) => {
                return Err(Error::Argument("cv multiplier must be positive".into()));
            }
            LambdaChoice::Cv { .. } if self.cv.folds < 2 => {
                return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// First-stage outcome at one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStagePoint {
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
    pub support: usize,
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FirstStagePoint {
    fn from_result(z: &[f64], r: Result<CktEstimate>) -> Self {
        match r {
            Ok(e) => FirstStagePoint {
                z: e.z,
                tau_hat: Some(e.value),
                raw: Some(e.raw),
                support: e.support,
                density: e.density,
                error: None,
            },
            Err(e) => FirstStagePoint {
                z: z.to_vec(),
                tau_hat: None,
                raw: None,
                support: 0,
                density: 0.0,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub excluded_points: usize,
    pub clipped_points: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub nonzeros: usize,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Runtime {
    pub first_stage_s: f64,
    pub cv_s: f64,
    pub second_stage_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_cv: f64,
    pub lambdas: Vec<f64>,
    /// `Σ_k Err_k(λ)` for each candidate.
    pub errors: Vec<f64>,
    pub skipped_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub lambda: f64,
    #[serde(flatten)]
    pub config: FitConfig,
    pub first_stage: Vec<FirstStagePoint>,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_result: Option<CvResult>,
    #[serde(default)]
    pub runtime: Runtime,
}

impl FitResult {
    /// Design points whose first stage succeeded, with their estimates.
    pub fn used_points(&self) -> impl Iterator<Item = (&[f64], f64, &FirstStagePoint)> {
        self.first_stage
            .iter()
            .filter_map(|p| p.tau_hat.map(|t| (p.z.as_slice(), t, p)))
    }

    pub fn predict(&self, z: &[f64]) -> Result<f64> {
        predict(&self.config.dictionary, &self.config.transform, &self.beta, z)
    }

    pub fn marginal_effect(&self, z: &[f64], coord: usize) -> Result<f64> {
        marginal_effect(&self.config.dictionary, &self.config.transform, &self.beta, z, coord)
    }

    /// `Λ(τ̂_i) - ψ(z'_i)ᵀβ̂` at the used design points.
    pub fn residuals(&self) -> Result<Vec<f64>> {
        self.used_points()
            .map(|(z, t, _)| {
                Ok(self.config.transform.apply(t)? - self.config.dictionary.linear_predictor(z, &self.beta)?)
            })
            .collect()
    }
}

/// `Λ⁻¹(ψ(z)ᵀβ)` clipped to `[-1, 1]`.
pub fn predict(dictionary: &Dictionary, transform: &TransformSpec, beta: &[f64], z: &[f64]) -> Result<f64> {
    Ok(transform.inverse(dictionary.linear_predictor(z, beta)?))
}

/// `∂τ(z)/∂z_coord = (∂ψ(z))ᵀβ · (Λ⁻¹)'(ψ(z)ᵀβ)` (0-based `coord`).
pub fn marginal_effect(
    dictionary: &Dictionary,
    transform: &TransformSpec,
    beta: &[f64],
    z: &[f64],
    coord: usize,
) -> Result<f64> {
    let eta = dictionary.linear_predictor(z, beta)?;
    let inv = transform.inverse(eta);
    if inv.abs() >= 1.0 {
        return Err(Error::Saturated { value: eta });
    }
    let d = dictionary.evaluate_derivative(z, coord)?;
    let slope: f64 = d.iter().zip(beta).map(|(a, b)| a * b).sum();
    Ok(slope * transform.inverse_derivative(eta))
}

/// First stage at every design point, in design-point order.
pub fn first_stage(sample: &Sample, config: &FitConfig) -> Vec<FirstStagePoint> {
    ckt_batch(sample, &config.design_points, &config.kernel, config.ckt_options())
        .into_iter()
        .zip(&config.design_points)
        .map(|(r, z)| FirstStagePoint::from_result(z, r))
        .collect()
}

/// Design matrix and response over the successful first-stage points.
fn regression_data(config: &FitConfig, stage: &[FirstStagePoint]) -> Result<Option<(nalgebra::DMatrix<f64>, Vec<f64>)>> {
    let mut points = Vec::new();
    let mut y = Vec::new();
    for p in stage {
        if let Some(t) = p.tau_hat {
            points.push(p.z.clone());
            y.push(config.transform.apply(t)?);
        }
    }
    if points.is_empty() {
        return Ok(None);
    }
    Ok(Some((config.dictionary.design_matrix(&points)?, y)))
}

/// Two-step estimator.
pub fn two_step_fit(sample: &Sample, config: &FitConfig) -> Result<FitResult> {
    config.validate(sample)?;
    let t0 = Instant::now();
    let stage = first_stage(sample, config);
    let first_stage_s = t0.elapsed().as_secs_f64();

    let (design, y) = regression_data(config, &stage)?.ok_or_else(|| {
        Error::EstimationImpossible("the first stage failed at every design point".into())
    })?;
    let (scaled, scales, weights) = config.rescaled(design.clone());
    let scaled_problem = |lambda: f64| -> Result<LassoProblem> {
        let p = LassoProblem::new(scaled.clone(), y.clone(), lambda)?;
        match &weights {
            Some(w) => p.with_weights(w.clone()),
            None => Ok(p),
        }
    };
    let lmax = lasso::lambda_max(&scaled_problem(0.0)?);

    let t1 = Instant::now();
    let (lambda, cv) = match config.penalty {
        LambdaChoice::Value(l) => (l, None),
        LambdaChoice::Cv { multiplier } => {
            let cv = cross_validate_lambda_with_max(sample, config, lmax)?;
            (multiplier * cv.lambda_cv, Some(cv))
        }
    };
    let cv_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mut sol = lasso::fit(&scaled_problem(lambda)?, &config.lasso)?;
    if let Some(scales) = &scales {
        sol.beta.iter_mut().zip(scales).for_each(|(b, s)| *b /= s);
        let problem = config.lasso_problem(design, y, lambda)?;
        sol.kkt_residual = lasso::kkt_residual(&problem, &sol.beta);
        sol.objective = problem.objective(&sol.beta);
    }
    let second_stage_s = t2.elapsed().as_secs_f64();

    let excluded = stage.iter().filter(|p| p.tau_hat.is_none()).count();
    let clipped = stage
        .iter()
        .filter(|p| matches!((p.tau_hat, p.raw), (Some(a), Some(b)) if a != b))
        .count();
    Ok(FitResult {
        diagnostics: Diagnostics {
            excluded_points: excluded,
            clipped_points: clipped,
            converged: sol.converged,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
            objective: sol.objective,
            nonzeros: sol.nonzeros(),
            lambda_max: lmax,
        },
        beta: sol.beta,
        lambda,
        config: config.clone(),
        first_stage: stage,
        cv_result: cv,
        runtime: Runtime {
            first_stage_s,
            cv_s,
            second_stage_s,
        },
    })
}

/// Row indices of each fold: contiguous blocks of a seeded permutation.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = folds.max(1);
    (0..folds)
        .map(|k| {
            let lo = k * n / folds;
            let hi = (k + 1) * n / folds;
            let mut block = idx[lo..hi].to_vec();
            block.sort_unstable();
            block
        })
        .collect()
}

/// Cross-validated penalty level.
pub fn cross_validate_lambda(sample: &Sample, config: &FitConfig) -> Result<CvResult> {
    config.validate(sample)?;
    let lmax = if config.cv.lambda_grid.is_empty() {
        let stage = first_stage(sample, config);
        let (design, y) = regression_data(config, &stage)?.ok_or_else(|| {
            Error::EstimationImpossible("the first stage failed at every design point".into())
        })?;
        lasso::lambda_max(&config.lasso_problem(design, y, 0.0)?)
    } else {
        0.0
    };
    cross_validate_lambda_with_max(sample, config, lmax)
}

fn cross_validate_lambda_with_max(sample: &Sample, config: &FitConfig, lmax: f64) -> Result<CvResult> {
    let cv = &config.cv;
    if cv.folds < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    let lambdas = if cv.lambda_grid.is_empty() {
        lasso::lambda_grid(lmax, cv.grid_size.max(1), cv.grid_ratio)
    } else {
        if cv.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Argument("cv lambda grid must be finite and >= 0".into()));
        }
        cv.lambda_grid.clone()
    };
    let blocks = fold_partition(sample.len(), cv.folds, cv.seed);
    let all: Vec<usize> = (0..sample.len()).collect();

    let per_fold: Vec<Option<Vec<f64>>> = blocks
        .par_iter()
        .map(|block| fold_errors(sample, config, block, &all, &lambdas))
        .collect::<Result<Vec<_>>>()?;

    let mut errors = vec![0.0; lambdas.len()];
    let mut skipped = 0;
    for f in &per_fold {
        match f {
            Some(e) => errors.iter_mut().zip(e).for_each(|(a, b)| *a += b),
            None => skipped += 1,
        }
    }
    if skipped == per_fold.len() {
        return Err(Error::EstimationImpossible("every cross-validation fold was skipped".into()));
    }
    let best = errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(lambdas[b.0].total_cmp(&lambdas[a.0])))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok(CvResult {
        lambda_cv: lambdas[best],
        lambdas,
        errors,
        skipped_folds: skipped,
    })
}

/// `Err_k(λ)` for one block, or `None` when the fold has no usable design point.
fn fold_errors(
    sample: &Sample,
    config: &FitConfig,
    block: &[usize],
    all: &[usize],
    lambdas: &[f64],
) -> Result<Option<Vec<f64>>> {
    let rest: Vec<usize> = {
        let mut inside = vec![false; all.len()];
        block.iter().for_each(|&i| inside[i] = true);
        all.iter().copied().filter(|&i| !inside[i]).collect()
    };
    let (tau_rows, fit_rows) = if config.cv.swap_roles {
        (&rest, block.to_vec())
    } else {
        (&block.to_vec(), rest)
    };
    if tau_rows.len() < 2 || fit_rows.len() < 2 {
        return Ok(None);
    }
    let tau_sample = sample.subset(tau_rows)?;
    let fit_sample = sample.subset(&fit_rows)?;
    let held = first_stage(&tau_sample, config);
    let train = first_stage(&fit_sample, config);
    let Some((design, y)) = regression_data(config, &train)? else {
        return Ok(None);
    };
    let targets: Vec<(usize, f64)> = held
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.tau_hat.map(|t| (i, t)))
        .collect();
    if targets.is_empty() {
        return Ok(None);
    }
    let (scaled, scales, weights) = config.rescaled(design);
    let mut path = lasso::fit_path(&scaled, &y, lambdas, weights.as_deref(), &config.lasso)?;
    if let Some(scales) = &scales {
        for sol in &mut path {
            sol.beta.iter_mut().zip(scales).for_each(|(b, s)| *b /= s);
        }
    }
    let errs = path
        .iter()
        .map(|sol: &LassoSolution| {
            let mut e = 0.0;
            for &(i, t) in &targets {
                let eta = config.dictionary.linear_predictor(&config.design_points[i], &sol.beta)?;
                let pred = match config.cv.scale {
                    CvScale::Tau => config.transform.inverse(eta),
                    CvScale::Transformed => eta,
                };
                e += (t - pred).powi(2);
            }
            Ok(e)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some(errs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{equispaced_grid, Factor, FactorKind, Term};
    use crate::kernel::KernelFamily;
    use crate::transform::TransformFamily;

    fn linear_dict() -> Dictionary {
        Dictionary::from_terms(
            1,
            vec![
                Term::constant(),
                Term::from_factors(
                    vec![Factor {
                        coord: 0,
                        kind: FactorKind::Power { degree: 1 },
                    }],
                    1,
                ),
            ],
        )
        .unwrap()
    }

    fn toy_sample(n: usize) -> Sample {
        // deterministic pseudo-data with positive association
        let z: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let x1: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 + ((i * 53) % 29) as f64).collect();
        Sample::from_scalar_z(&x1, &x2, &z).unwrap()
    }

    #[test]
    fn predict_examples() {
        let d = linear_dict();
        let id = TransformSpec::default();
        let fisher = TransformSpec::new(TransformFamily::Fisher);
        assert_eq!(predict(&d, &id, &[0.0, 0.0], &[0.3]).unwrap(), 0.0);
        assert_eq!(predict(&d, &fisher, &[0.0, 0.0], &[0.3]).unwrap(), 0.0);
        assert!((predict(&d, &id, &[0.75, -0.5], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!((predict(&d, &id, &[0.75, -0.5], &[3.0]).unwrap() + 0.75).abs() < 1e-15);
        assert_eq!(predict(&d, &id, &[0.75, -0.5], &[-3.0]).unwrap(), 1.0);
        assert!(predict(&d, &id, &[0.75, -0.5], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn marginal_effect_examples() {
        let d = linear_dict();
        let id = TransformSpec::default();
        assert!((marginal_effect(&d, &id, &[0.0, 1.0], &[0.2], 0).unwrap() - 1.0).abs() < 1e-15);
        let fisher = TransformSpec::new(TransformFamily::Fisher);
        // β = 0: Λ⁻¹'(0) = 1/2 times ∂ψᵀβ; with ∂ψ = (0, 1) and β = e₂ the product is 0.5 at η = z
        assert_eq!(marginal_effect(&d, &fisher, &[0.0, 0.0], &[0.4], 0).unwrap(), 0.0);
        assert!((marginal_effect(&d, &fisher, &[0.0, 1.0], &[0.0], 0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            marginal_effect(&d, &id, &[2.0, 0.0], &[0.5], 0),
            Err(Error::Saturated { .. })
        ));
        let fam = Dictionary::family_1d();
        let mut beta = vec![0.0; 12];
        beta[10] = 0.1;
        assert!(matches!(
            marginal_effect(&fam, &id, &beta, &[0.4], 0),
            Err(Error::NonDifferentiable { .. })
        ));
    }

    #[test]
    fn marginal_effect_matches_finite_difference() {
        let d = Dictionary::family_1d();
        let beta = [0.2, 0.3, -0.9, 0.0, 0.5, 0.0, 0.05, -0.04, 0.0, 0.02, 0.1, 0.0];
        for fam in [TransformFamily::Identity, TransformFamily::Fisher, TransformFamily::Loglog] {
            let t = TransformSpec::new(fam);
            for z in [0.13, 0.31, 0.52, 0.77, 0.93] {
                let step = 1e-6;
                let fd = (predict(&d, &t, &beta, &[z + step]).unwrap() - predict(&d, &t, &beta, &[z - step]).unwrap())
                    / (2.0 * step);
                let me = marginal_effect(&d, &t, &beta, &[z], 0).unwrap();
                assert!((fd - me).abs() <= 1e-4 * me.abs().max(1e-3), "{fam:?} {z}: {fd} vs {me}");
            }
        }
    }

    #[test]
    fn zero_beta_above_lambda_max() {
        let s = toy_sample(300);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.15, 1).unwrap();
        let pts = equispaced_grid(0.1, 0.9, 9, 1);
        let mut cfg = FitConfig::new(k, Dictionary::family_1d(), pts, 0.0);
        let lmax = two_step_fit(&s, &cfg).unwrap().diagnostics.lambda_max;
        cfg.penalty = LambdaChoice::Value(lmax * 1.0001);
        let fit = two_step_fit(&s, &cfg).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn standardized_fit_solves_the_weighted_problem() {
        let s = toy_sample(300);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.15, 1).unwrap();
        let pts = equispaced_grid(0.1, 0.9, 15, 1);
        let mut cfg = FitConfig::new(k, Dictionary::family_1d(), pts, 0.002);
        cfg.penalize_intercept = false;
        cfg.standardize = true;
        let fit = two_step_fit(&s, &cfg).unwrap();
        assert!(fit.diagnostics.converged);
        let (design, y) = regression_data(&cfg, &fit.first_stage).unwrap().unwrap();
        let w = cfg.penalty_weights(&design).unwrap();
        assert_eq!(w[0], 0.0);
        let problem = LassoProblem::new(design, y, 0.002).unwrap().with_weights(w).unwrap();
        assert!(lasso::kkt_residual(&problem, &fit.beta) < 1e-7);
        assert!((fit.diagnostics.lambda_max - lasso::lambda_max(&problem)).abs() < 1e-12);
    }

    #[test]
    fn failed_points_are_dropped_and_counted() {
        let s = toy_sample(200);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.05, 1).unwrap();
        let pts = vec![vec![0.5], vec![2.0], vec![0.3]];
        let fit = two_step_fit(&s, &FitConfig::new(k, linear_dict(), pts, 0.0)).unwrap();
        assert_eq!(fit.diagnostics.excluded_points, 1);
        assert_eq!(fit.beta.len(), 2);
        assert!(fit.first_stage[1].error.is_some());

        let none = vec![vec![3.0], vec![-2.0]];
        assert!(matches!(
            two_step_fit(&s, &FitConfig::new(k, linear_dict(), none, 0.0)),
            Err(Error::EstimationImpossible(_))
        ));
    }

    #[test]
    fn fit_is_deterministic_and_roundtrips_through_json() {
        let s = toy_sample(400);
        let k = KernelSpec::new(KernelFamily::Gaussian, 0.1, 1).unwrap();
        let mut cfg = FitConfig::new(k, Dictionary::family_1d(), equispaced_grid(0.05, 0.95, 19, 1), 0.0);
        cfg.penalty = LambdaChoice::Cv { multiplier: 2.0 };
        cfg.cv.seed = 11;
        let a = two_step_fit(&s, &cfg).unwrap();
        let b = two_step_fit(&s, &cfg).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.lambda, 2.0 * a.cv_result.as_ref().unwrap().lambda_cv);
        let json = serde_json::to_string(&a).unwrap();
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.beta, a.beta);
        assert_eq!(back.config, a.config);
        assert_eq!(back.predict(&[0.4]).unwrap(), a.predict(&[0.4]).unwrap());
    }

    #[test]
    fn training_error_is_smallest_without_penalty() {
        let s = toy_sample(500);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.12, 1).unwrap();
        let pts = equispaced_grid(0.05, 0.95, 30, 1);
        let sse = |l: f64| {
            let f = two_step_fit(&s, &FitConfig::new(k, Dictionary::family_1d(), pts.clone(), l)).unwrap();
            f.residuals().unwrap().iter().map(|r| r * r).sum::<f64>()
        };
        let base = sse(0.0);
        for l in [1e-4, 1e-3, 1e-2, 0.1] {
            assert!(base <= sse(l) + 1e-12);
        }
    }

    #[test]
    fn folds_partition_the_sample() {
        let folds = fold_partition(103, 5, 9);
        let mut seen = vec![0; 103];
        for f in &folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|c| *c == 1));
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn singleton_grid_is_returned() {
        let s = toy_sample(300);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.2, 1).unwrap();
        let mut cfg = FitConfig::new(k, linear_dict(), equispaced_grid(0.1, 0.9, 5, 1), 0.0);
        cfg.cv.lambda_grid = vec![0.037];
        let cv = cross_validate_lambda(&s, &cfg).unwrap();
        assert_eq!(cv.lambda_cv, 0.037);
        assert_eq!(cv.errors.len(), 1);
    }
}
