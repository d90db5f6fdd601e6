//! Monte Carlo harness: integrated error metrics of the kernel and two-step
//! estimators, comparison tables and rejection rates of the Wald test.

use std::io::Write;
use std::time::Instant;

use cpu_time::ProcessTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ckt::{ckt_batch, ConcordanceVariant, CktOptions};
use crate::dictionary::{equispaced_grid, Dictionary, DictionaryDescriptor};
use crate::error::{Error, Result};
use crate::inference::{wald_test, WaldOptions};
use crate::kernel::{rule_of_thumb_bandwidth, KernelFamily, KernelSpec};
use crate::lasso::FitOptions;
use crate::pipeline::{two_step_fit, CvConfig, FitConfig, LambdaChoice};
use crate::sample::Sample;
use crate::simulation::{derive_seed, SettingSpec};
use crate::transform::TransformSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Returns the true conditional Kendall's tau.
    Oracle,
    /// First stage evaluated directly on the grid.
    Kernel,
    TwoStep,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Oracle => "oracle",
            Estimator::Kernel => "kernel",
            Estimator::TwoStep => "two_step",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "oracle" => Ok(Estimator::Oracle),
            "kernel" => Ok(Estimator::Kernel),
            "two_step" | "twostep" => Ok(Estimator::TwoStep),
            other => Err(Error::Argument(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Estimation settings shared by every cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub kernel: KernelFamily,
    /// `h = multiplier · σ̂(Z) · n^(-1/(4+p))`, recomputed on every sample.
    pub bandwidth_multiplier: f64,
    pub transform: TransformSpec,
    pub variant: ConcordanceVariant,
    pub include_diagonal: bool,
    /// Design points: `design_per_axis` equispaced values per coordinate on
    /// `design_range`; `None` picks the per-dimension default.
    pub design_range: Option<[f64; 2]>,
    pub design_per_axis: Option<usize>,
    /// `None` picks the univariate family for `p = 1` and
    /// `Family2d { id: 1 }` for `p = 2`.
    pub dictionary: Option<DictionaryDescriptor>,
    pub penalty: LambdaChoice,
    pub cv: CvConfig,
    pub lasso: FitOptions,
    /// Penalty on the constant term; off by default.
    pub penalize_intercept: bool,
    /// Penalties scaled by column standard deviations; on by default.
    pub standardize: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            kernel: KernelFamily::Epanechnikov,
            bandwidth_multiplier: 0.25,
            transform: TransformSpec::default(),
            variant: ConcordanceVariant::G2,
            include_diagonal: true,
            design_range: None,
            design_per_axis: None,
            dictionary: None,
            penalty: LambdaChoice::Cv { multiplier: 2.0 },
            cv: CvConfig::default(),
            lasso: FitOptions::default(),
            penalize_intercept: false,
            standardize: true,
        }
    }
}

impl BenchConfig {
    pub fn design_points(&self, dim: usize) -> Vec<Vec<f64>> {
        let [lo, hi] = self
            .design_range
            .unwrap_or(if dim == 1 { [0.01, 0.99] } else { [0.1, 0.9] });
        let k = self.design_per_axis.unwrap_or(if dim == 1 { 100 } else { 20 });
        equispaced_grid(lo, hi, k, dim)
    }

    pub fn dictionary_for(&self, dim: usize) -> Result<Dictionary> {
        match &self.dictionary {
            Some(d) => Dictionary::from_descriptor(d.clone()),
            None if dim == 1 => Ok(Dictionary::family_1d()),
            None if dim == 2 => Dictionary::build_family_2d(1),
            None => Err(Error::Argument(format!("no default dictionary for dimension {dim}"))),
        }
    }

    pub fn kernel_for(&self, sample: &Sample) -> Result<KernelSpec> {
        let h = rule_of_thumb_bandwidth(sample, self.bandwidth_multiplier)?;
        KernelSpec::new(self.kernel, h, sample.dim())
    }

    /// Two-step configuration for one simulated sample.
    pub fn fit_config(&self, sample: &Sample) -> Result<FitConfig> {
        let dim = sample.dim();
        Ok(FitConfig {
            kernel: self.kernel_for(sample)?,
            transform: self.transform,
            dictionary: self.dictionary_for(dim)?,
            design_points: self.design_points(dim),
            domain: None,
            penalty: self.penalty,
            variant: self.variant,
            include_diagonal: self.include_diagonal,
            cv: self.cv.clone(),
            lasso: self.lasso.clone(),
            penalize_intercept: self.penalize_intercept,
            standardize: self.standardize,
        })
    }

    fn ckt_options(&self) -> CktOptions {
        CktOptions {
            variant: self.variant,
            include_diagonal: self.include_diagonal,
        }
    }
}

/// Evaluation grid: 201 points on `[0, 1]` or a 41×41 lattice on `[0, 1]²`.
pub fn desk_grid(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => equispaced_grid(0.0, 1.0, 201, 1),
        _ => equispaced_grid(0.0, 1.0, 41, dim),
    }
}

/// Integrated metrics in natural units; multiply by 10³ for the usual tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub setting: String,
    pub estimator: Estimator,
    pub n: usize,
    pub replications: usize,
    pub grid_points: usize,
    pub ibias: f64,
    pub ivar: f64,
    pub isd: f64,
    pub imse: f64,
    /// `∫ Bias²`, so that `imse = ibias2 + ivar`.
    pub ibias2: f64,
    /// Fraction of (replication, grid point) pairs with an estimate.
    pub coverage: f64,
    /// Grid points left out of the integrals for lack of two estimates.
    pub excluded_grid_points: usize,
    pub failed_replications: usize,
    pub cpu_seconds: f64,
    pub wall_seconds: f64,
}

/// Sum of values in a fixed (sorted) order so results do not depend on the
/// order of the grid.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Estimates on `grid` for one replication; `None` marks a failed point.
fn replicate(
    setting: &SettingSpec,
    estimator: Estimator,
    n: usize,
    grid: &[Vec<f64>],
    config: &BenchConfig,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    if estimator == Estimator::Oracle {
        return grid.iter().map(|z| setting.true_tau(z).map(Some)).collect();
    }
    let sample = setting.sample(n, seed)?;
    match estimator {
        Estimator::Kernel => {
            let k = config.kernel_for(&sample)?;
            Ok(ckt_batch(&sample, grid, &k, config.ckt_options())
                .into_iter()
                .map(|r| r.ok().map(|e| e.value))
                .collect())
        }
        Estimator::TwoStep => {
            let fit = two_step_fit(&sample, &config.fit_config(&sample)?)?;
            Ok(grid.iter().map(|z| fit.predict(z).ok()).collect())
        }
        Estimator::Oracle => unreachable!(),
    }
}

/// Grid-averaged bias, variance, standard deviation and MSE over `r`
/// replications of `estimator` on fresh samples of `setting`.
///
/// Variances use divisor `R` (the number of estimates at the point), which
/// makes `IMSE = ∫Bias² + IVar` hold exactly. Integrals are grid means times
/// the volume of the unit box.
pub fn integrated_metrics(
    setting: &SettingSpec,
    estimator: Estimator,
    n: usize,
    r: usize,
    grid: &[Vec<f64>],
    config: &BenchConfig,
    seed: u64,
) -> Result<MetricReport> {
    if r < 2 {
        return Err(Error::Argument("integrated metrics need at least 2 replications".into()));
    }
    if grid.is_empty() {
        return Err(Error::Argument("empty evaluation grid".into()));
    }
    let truth: Vec<f64> = grid.iter().map(|z| setting.true_tau(z)).collect::<Result<_>>()?;
    let cpu = ProcessTime::now();
    let wall = Instant::now();
    let reps: Vec<Option<Vec<Option<f64>>>> = (0..r)
        .into_par_iter()
        .map(|k| replicate(setting, estimator, n, grid, config, derive_seed(seed, &[n as u64, k as u64])).ok())
        .collect();
    let failed = reps.iter().filter(|x| x.is_none()).count();

    let mut bias = Vec::new();
    let mut bias2 = Vec::new();
    let mut var = Vec::new();
    let mut sd = Vec::new();
    let mut mse = Vec::new();
    let mut present = 0usize;
    let mut excluded = 0usize;
    for (g, &t) in truth.iter().enumerate() {
        let vals: Vec<f64> = reps.iter().flatten().filter_map(|v| v[g]).collect();
        present += vals.len();
        if vals.len() < 2 {
            excluded += 1;
            continue;
        }
        let m = vals.len() as f64;
        let dev: Vec<f64> = vals.iter().map(|x| x - t).collect();
        let b = ordered_sum(dev.clone()) / m;
        let v = ordered_sum(dev.iter().map(|d| (d - b).powi(2)).collect()) / m;
        bias.push(b);
        bias2.push(b * b);
        var.push(v);
        sd.push(v.sqrt());
        mse.push(ordered_sum(dev.iter().map(|d| d * d).collect()) / m);
    }
    if bias.is_empty() {
        return Err(Error::EstimationImpossible("no grid point has two estimates".into()));
    }
    let used = bias.len() as f64;
    let avg = |v: Vec<f64>| ordered_sum(v) / used;
    Ok(MetricReport {
        setting: setting.name(),
        estimator,
        n,
        replications: r,
        grid_points: grid.len(),
        ibias: avg(bias),
        ivar: avg(var),
        isd: avg(sd),
        imse: avg(mse),
        ibias2: avg(bias2),
        coverage: present as f64 / (r * grid.len()) as f64,
        excluded_grid_points: excluded,
        failed_replications: failed,
        cpu_seconds: cpu.elapsed().as_secs_f64(),
        wall_seconds: wall.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub setting: String,
    pub n: usize,
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub replications: usize,
    pub seed: u64,
    pub config: BenchConfig,
    pub cells: Vec<TableCell>,
}

/// One [`integrated_metrics`] call per (n, setting, estimator); failed cells
/// are kept with their error message. Each setting is evaluated on
/// [`desk_grid`] of its dimension.
pub fn comparison_table(
    settings: &[SettingSpec],
    estimators: &[Estimator],
    n_values: &[usize],
    r: usize,
    config: &BenchConfig,
    seed: u64,
) -> ComparisonTable {
    let mut cells = Vec::new();
    for &n in n_values {
        for s in settings {
            let grid = desk_grid(s.dim());
            for &e in estimators {
                let res = integrated_metrics(s, e, n, r, &grid, config, seed);
                cells.push(TableCell {
                    setting: s.name(),
                    n,
                    estimator: e,
                    error: res.as_ref().err().map(|x| x.to_string()),
                    report: res.ok(),
                });
            }
        }
    }
    ComparisonTable {
        replications: r,
        seed,
        config: config.clone(),
        cells,
    }
}

fn header_comment(w: &mut impl Write, config: &impl Serialize) -> std::io::Result<()> {
    let json = serde_json::to_string(config).map_err(std::io::Error::other)?;
    writeln!(w, "# config: {json}")
}

impl ComparisonTable {
    /// Wide CSV, one row per cell, metrics ×10³.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        header_comment(&mut w, &serde_json::json!({
            "replications": self.replications,
            "seed": self.seed,
            "bench": self.config,
            "scale": 1000,
        }))?;
        writeln!(
            w,
            "setting,n,estimator,ibias,ivar,isd,imse,cpu_seconds,wall_seconds,coverage,status"
        )?;
        for c in &self.cells {
            match &c.report {
                Some(m) => writeln!(
                    w,
                    "{},{},{},{},{},{},{},{:.3},{:.3},{},ok",
                    c.setting,
                    c.n,
                    c.estimator.name(),
                    m.ibias * 1e3,
                    m.ivar * 1e3,
                    m.isd * 1e3,
                    m.imse * 1e3,
                    m.cpu_seconds,
                    m.wall_seconds,
                    m.coverage
                )?,
                None => writeln!(
                    w,
                    "{},{},{},,,,,,,,\"failed: {}\"",
                    c.setting,
                    c.n,
                    c.estimator.name(),
                    c.error.as_deref().unwrap_or("").replace('"', "'")
                )?,
            }
        }
        Ok(())
    }

    /// Long CSV `setting,n,estimator,metric,value` for plotting, metrics ×10³.
    pub fn write_long_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        header_comment(&mut w, &serde_json::json!({
            "replications": self.replications,
            "seed": self.seed,
            "bench": self.config,
            "scale": 1000,
        }))?;
        writeln!(w, "setting,n,estimator,metric,value")?;
        for c in &self.cells {
            if let Some(m) = &c.report {
                for (name, v) in [
                    ("ibias", m.ibias * 1e3),
                    ("ivar", m.ivar * 1e3),
                    ("isd", m.isd * 1e3),
                    ("imse", m.imse * 1e3),
                    ("cpu_seconds", m.cpu_seconds),
                ] {
                    writeln!(w, "{},{},{},{},{}", c.setting, c.n, c.estimator.name(), name, v)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub setting: String,
    pub n: usize,
    pub replications: usize,
    pub rejections: usize,
    /// Replications whose fit or test failed; excluded from the rate.
    pub failures: usize,
    pub rejection_percent: f64,
    pub mean_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub level: f64,
    pub seed: u64,
    pub config: BenchConfig,
    pub wald: WaldOptions,
    pub rows: Vec<PowerRow>,
}

/// Percentage of replications whose Wald p-value is at most `level`.
pub fn test_power_table(
    settings: &[SettingSpec],
    n: usize,
    r: usize,
    level: f64,
    config: &BenchConfig,
    wald: &WaldOptions,
    seed: u64,
) -> Result<PowerTable> {
    if r == 0 || !(0.0..=1.0).contains(&level) {
        return Err(Error::Argument("need R >= 1 and a level in [0, 1]".into()));
    }
    let mut rows = Vec::new();
    for s in settings {
        let pvals: Vec<Option<f64>> = (0..r)
            .into_par_iter()
            .map(|k| {
                let rep_seed = derive_seed(seed, &[n as u64, k as u64]);
                let sample = s.sample(n, rep_seed).ok()?;
                let fit = two_step_fit(&sample, &config.fit_config(&sample).ok()?).ok()?;
                let mut o = *wald;
                o.seed = derive_seed(rep_seed, &[1]);
                wald_test(&sample, &fit, &o).ok().map(|w| w.p_value)
            })
            .collect();
        let ok: Vec<f64> = pvals.iter().flatten().copied().collect();
        if ok.is_empty() {
            return Err(Error::EstimationImpossible(format!("every replication failed for {}", s.name())));
        }
        let rejections = ok.iter().filter(|&&p| p <= level).count();
        rows.push(PowerRow {
            setting: s.name(),
            n,
            replications: r,
            rejections,
            failures: r - ok.len(),
            rejection_percent: 100.0 * rejections as f64 / ok.len() as f64,
            mean_p_value: ok.iter().sum::<f64>() / ok.len() as f64,
        });
    }
    Ok(PowerTable {
        level,
        seed,
        config: config.clone(),
        wald: *wald,
        rows,
    })
}

impl PowerTable {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        header_comment(&mut w, &serde_json::json!({
            "level": self.level,
            "seed": self.seed,
            "bench": self.config,
            "wald": self.wald,
        }))?;
        writeln!(w, "setting,n,replications,rejections,failures,rejection_percent,mean_p_value")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                row.setting, row.n, row.replications, row.rejections, row.failures, row.rejection_percent, row.mean_p_value
            )?;
        }
        Ok(())
    }
}
