mod args;
mod data;
mod error;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Map, Value};

use kendall_reg::bench::{comparison_table, test_power_table, BenchConfig, Estimator};
use kendall_reg::ckt::ConcordanceVariant;
use kendall_reg::dictionary::{equispaced_grid, Dictionary, Rescale};
use kendall_reg::inference::{bootstrap_pvalue, wald_test, DofRule, HhatMode, WaldOptions, WaldVariant};
use kendall_reg::kernel::{rule_of_thumb_bandwidth, KernelFamily, KernelSpec};
use kendall_reg::lasso::FitOptions;
use kendall_reg::pipeline::{cross_validate_lambda, two_step_fit, CvConfig, FitConfig, FitResult, LambdaChoice};
use kendall_reg::sample::Sample;
use kendall_reg::simulation::{SettingId, SettingSpec};
use kendall_reg::transform::{TransformFamily, TransformSpec};

use args::{BenchArgs, Cli, Command, CvArgs, DataArgs, FitArgs, ModelArgs, PredictArgs, SimulateArgs, TestArgs};
use data::{open_input, open_output, read_points, read_sample, write_csv, z_headers};
use error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn usage<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("{what}: `{s}` is not a number")))
}

fn parse_lambda(s: &str) -> Result<LambdaChoice> {
    match s.trim() {
        "cv" => Ok(LambdaChoice::Cv { multiplier: 1.0 }),
        other => match other.strip_prefix("cv:") {
            Some(m) => Ok(LambdaChoice::Cv {
                multiplier: parse_f64(m, "--lambda multiplier")?,
            }),
            None => Ok(LambdaChoice::Value(parse_f64(other, "--lambda")?)),
        },
    }
}

fn parse_dictionary(s: &str, dim: usize) -> Result<Dictionary> {
    let dict = match s {
        "family-1d" => Dictionary::family_1d(),
        "constant" => Dictionary::constant(dim),
        other => match other.strip_prefix("family-2d:") {
            Some(id) => {
                let id = id
                    .parse::<u32>()
                    .map_err(|_| CliError::Usage(format!("--dict: bad family id `{id}`")))?;
                Dictionary::build_family_2d(id)?
            }
            None => {
                let text = std::fs::read_to_string(other)
                    .map_err(|e| CliError::Usage(format!("--dict: `{other}` is not a known family or a readable file: {e}")))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--dict {other}: {e}")))?
            }
        },
    };
    if dict.input_dim() != dim {
        return Err(CliError::Data(format!(
            "dictionary takes {} covariates, the sample has {dim}",
            dict.input_dim()
        )));
    }
    Ok(dict)
}

fn data_range(sample: &Sample) -> Vec<[f64; 2]> {
    (0..sample.dim())
        .map(|k| {
            let col = sample.z_column(k);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            [lo, hi]
        })
        .collect()
}

fn parse_rescale(s: &str, sample: &Sample) -> Result<Option<Vec<Rescale>>> {
    match s {
        "none" => Ok(None),
        "data" => Ok(Some(
            data_range(sample)
                .into_iter()
                .map(|[lo, hi]| Rescale { lo, hi })
                .collect(),
        )),
        other => other
            .split(',')
            .map(|part| {
                let (lo, hi) = part
                    .split_once(':')
                    .ok_or_else(|| CliError::Usage(format!("--rescale: expected lo:hi, got `{part}`")))?;
                Ok(Rescale {
                    lo: parse_f64(lo, "--rescale")?,
                    hi: parse_f64(hi, "--rescale")?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
    }
}

/// Tensor grid with one axis per coordinate, last coordinate varying fastest.
fn axis_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    points
}

/// `k` equispaced points per axis, inset from the observed range by 1% (p = 1,
/// k = 100) or 10% (p > 1, k = 20).
fn default_design(sample: &Sample) -> Vec<Vec<f64>> {
    let (inset, k) = if sample.dim() == 1 { (0.01, 100) } else { (0.1, 20) };
    let axes: Vec<Vec<f64>> = data_range(sample)
        .into_iter()
        .map(|[lo, hi]| {
            let (a, b) = (lo + inset * (hi - lo), hi - inset * (hi - lo));
            (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
        })
        .collect();
    axis_grid(&axes)
}

fn parse_design(spec: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(rest) = spec.strip_prefix("grid:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [a, b, k] = parts[..] else {
            return Err(CliError::Usage(format!("--design-points: expected grid:a:b:k, got `{spec}`")));
        };
        let k = k
            .parse::<usize>()
            .ok()
            .filter(|k| *k >= 1)
            .ok_or_else(|| CliError::Usage(format!("--design-points: bad point count `{k}`")))?;
        let (a, b) = (parse_f64(a, "--design-points")?, parse_f64(b, "--design-points")?);
        if !(a <= b) {
            return Err(CliError::Usage("--design-points: need a <= b".into()));
        }
        return Ok(equispaced_grid(a, b, k, dim));
    }
    read_points(Path::new(spec), dim)
}

fn build_config(m: &ModelArgs, sample: &Sample) -> Result<FitConfig> {
    let dim = sample.dim();
    let mut dictionary = parse_dictionary(&m.dict, dim)?;
    if let Some(r) = parse_rescale(&m.rescale, sample)? {
        dictionary = dictionary.with_rescale(r)?;
    }
    let family: KernelFamily = m.kernel.parse()?;
    let h = match m.bandwidth {
        Some(h) => h,
        None => rule_of_thumb_bandwidth(sample, m.bandwidth_multiplier)?,
    };
    let kernel = KernelSpec::new(family, h, dim)?;
    let transform = TransformSpec::new(m.transform.parse::<TransformFamily>()?);
    let variant: ConcordanceVariant = m.variant.parse()?;
    let design_points = match &m.design_points {
        Some(s) => parse_design(s, dim)?,
        None => default_design(sample),
    };
    let mut config = FitConfig::new(kernel, dictionary, design_points, 0.0);
    config.transform = transform;
    config.variant = variant;
    config.include_diagonal = !m.exclude_diagonal;
    config.penalty = parse_lambda(&m.lambda)?;
    config.cv = CvConfig {
        folds: m.folds,
        grid_size: m.cv_grid_size,
        grid_ratio: m.cv_grid_ratio,
        seed: m.seed,
        ..CvConfig::default()
    };
    config.lasso = FitOptions {
        tolerance: m.tolerance,
        max_iters: m.max_iters,
        ..FitOptions::default()
    };
    config.penalize_intercept = m.penalize_intercept;
    config.standardize = !m.no_standardize;
    config.validate(sample)?;
    Ok(config)
}

fn load_sample(d: &DataArgs) -> Result<Sample> {
    let reader = open_input(d.input.as_deref())?;
    Ok(read_sample(reader, &d.x1, &d.x2, &d.z)?.0)
}

fn fit_sample(sample: &Sample, m: &ModelArgs) -> Result<FitResult> {
    let config = build_config(m, sample)?;
    let fit = two_step_fit(sample, &config)?;
    if !fit.diagnostics.converged && !m.allow_nonconverged {
        return Err(CliError::Numerical(format!(
            "the lasso solver did not converge (kkt residual {:.3e} after {} sweeps); \
             raise --max-iters or pass --allow-nonconverged",
            fit.diagnostics.kkt_residual, fit.diagnostics.iterations
        )));
    }
    Ok(fit)
}

fn load_fit(path: &Path) -> Result<FitResult> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: not a fit result: {e}", path.display())))
}

fn to_object(v: &impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(v).expect("serializable") {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    }
}

/// Output document: `body` fields, the command line echo under `cli`, and
/// every run-dependent quantity under `timing`.
fn emit(mut body: Map<String, Value>, cli: &Cli, started: (f64, Instant), extra_timing: Option<Value>, out: Option<&Path>) -> Result<()> {
    body.insert("cli".into(), serde_json::to_value(cli).expect("serializable"));
    let mut timing = json!({
        "started_unix_s": started.0,
        "elapsed_s": started.1.elapsed().as_secs_f64(),
    });
    if let Some(t) = extra_timing {
        timing["stages"] = t;
    }
    body.insert("timing".into(), timing);
    let mut w = open_output(out)?;
    let text = serde_json::to_string_pretty(&Value::Object(body)).expect("serializable");
    writeln!(w, "{text}").map_err(|e| CliError::Data(format!("write failed: {e}")))
}

fn fit_document(fit: &FitResult) -> (Map<String, Value>, Value) {
    let mut body = to_object(fit);
    let stages = body.remove("runtime").unwrap_or(Value::Null);
    (body, stages)
}

fn run_fit(a: &FitArgs, cli: &Cli, started: (f64, Instant)) -> Result<()> {
    let sample = load_sample(&a.data)?;
    let fit = fit_sample(&sample, &a.model)?;
    if let Some(p) = &a.predictions {
        let dim = sample.dim();
        let mut headers = z_headers(dim);
        headers.extend(["tau_first_stage".to_string(), "tau_fitted".to_string()]);
        let rows = fit
            .first_stage
            .iter()
            .map(|pt| {
                let mut r = pt.z.clone();
                r.push(pt.tau_hat.unwrap_or(f64::NAN));
                r.push(fit.predict(&pt.z)?);
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        write_csv(open_output(Some(p))?, &headers, &rows)?;
    }
    let (body, stages) = fit_document(&fit);
    emit(body, cli, started, Some(stages), a.output.as_deref())
}

fn run_predict(a: &PredictArgs) -> Result<()> {
    let fit = load_fit(&a.fit)?;
    let dim = fit.config.dictionary.input_dim();
    let points = match &a.design_points {
        Some(s) => parse_design(s, dim)?,
        None => fit.config.design_points.clone(),
    };
    let mut headers = z_headers(dim);
    headers.push("tau_hat".into());
    let rows = points
        .into_iter()
        .map(|z| {
            let t = fit.predict(&z)?;
            let mut r = z;
            r.push(t);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(open_output(a.output.as_deref())?, &headers, &rows)
}

fn wald_options(variant: &str, h_hat: &str) -> Result<WaldOptions> {
    Ok(WaldOptions {
        variant: usage(variant.parse::<WaldVariant>())?,
        h_hat: usage(h_hat.parse::<HhatMode>())?,
        ..WaldOptions::default()
    })
}

fn run_test(a: &TestArgs, cli: &Cli, started: (f64, Instant)) -> Result<()> {
    let sample = load_sample(&a.data)?;
    let fit = match &a.fit {
        Some(p) => load_fit(p)?,
        None => fit_sample(&sample, &a.model)?,
    };
    let mut opts = wald_options(&a.wald_variant, &a.h_hat)?;
    opts.dof_rule = usage(a.dof_rule.parse::<DofRule>())?;
    opts.remove_intercept = !a.keep_intercept;
    opts.gn_budget.max_triples = a.gn_budget;
    opts.seed = a.model.seed;
    let mut result = wald_test(&sample, &fit, &opts)?;
    if a.bootstrap > 0 {
        result.bootstrap_replicates = Some(a.bootstrap);
        result.bootstrap_p_value = Some(bootstrap_pvalue(&sample, &fit, result.statistic, a.bootstrap, &opts)?);
    }
    let mut body = to_object(&result);
    body.insert("wald_options".into(), serde_json::to_value(opts).expect("serializable"));
    let (fit_body, stages) = fit_document(&fit);
    body.insert("fit".into(), Value::Object(fit_body));
    emit(body, cli, started, Some(stages), a.output.as_deref())
}

fn run_cv(a: &CvArgs, cli: &Cli, started: (f64, Instant)) -> Result<()> {
    let sample = load_sample(&a.data)?;
    let config = build_config(&a.model, &sample)?;
    let cv = cross_validate_lambda(&sample, &config)?;
    let mut body = to_object(&cv);
    body.insert("config".into(), serde_json::to_value(&config).expect("serializable"));
    emit(body, cli, started, None, a.output.as_deref())
}

fn parse_setting(s: &str) -> Result<SettingId> {
    usage(s.parse::<SettingId>())
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let id = parse_setting(&a.setting)?;
    let sample = SettingSpec::Builtin(id).sample(a.n, a.seed)?;
    let dim = sample.dim();
    let mut headers = vec!["x1".to_string(), "x2".to_string()];
    headers.extend(z_headers(dim));
    let rows: Vec<Vec<f64>> = sample
        .rows()
        .iter()
        .map(|r| {
            let mut v = vec![r.x1, r.x2];
            v.extend(&r.z);
            v
        })
        .collect();
    write_csv(open_output(a.output.as_deref())?, &headers, &rows)?;
    if let Some(p) = &a.output {
        let meta = json!({ "setting": id.name(), "n": a.n, "seed": a.seed });
        let side = p.with_extension("json");
        let mut w = open_output(Some(&side))?;
        writeln!(w, "{}", serde_json::to_string_pretty(&meta).expect("serializable"))
            .map_err(|e| CliError::Data(format!("write failed: {e}")))?;
    }
    Ok(())
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let mut config: BenchConfig = match &a.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("--config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", p.display())))?
        }
        None => BenchConfig::default(),
    };
    if let Some(m) = a.bandwidth_multiplier {
        config.bandwidth_multiplier = m;
    }
    if let Some(l) = &a.lambda {
        config.penalty = parse_lambda(l)?;
    }
    let settings: Vec<SettingSpec> = a
        .settings
        .iter()
        .map(|s| parse_setting(s).map(SettingSpec::Builtin))
        .collect::<Result<_>>()?;
    let write_err = |e: std::io::Error| CliError::Data(format!("write failed: {e}"));
    match a.kind.as_str() {
        "comparison" => {
            let estimators = a
                .estimators
                .iter()
                .map(|e| usage(e.parse::<Estimator>()))
                .collect::<Result<Vec<_>>>()?;
            let table = comparison_table(&settings, &estimators, &a.n, a.reps, &config, a.seed);
            table.write_csv(open_output(a.output.as_deref())?).map_err(write_err)?;
            if let Some(p) = &a.long_output {
                table.write_long_csv(open_output(Some(p))?).map_err(write_err)?;
            }
            Ok(())
        }
        "power" => {
            let wald = wald_options(&a.wald_variant, &a.h_hat)?;
            let n = match a.n[..] {
                [n] => n,
                _ => return Err(CliError::Usage("--kind power takes a single --n".into())),
            };
            let table = test_power_table(&settings, n, a.reps, a.level, &config, &wald, a.seed)?;
            table.write_csv(open_output(a.output.as_deref())?).map_err(write_err)
        }
        other => Err(CliError::Usage(format!("--kind: expected comparison or power, got `{other}`"))),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let started = (
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
        Instant::now(),
    );
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    match &cli.command {
        Command::Fit(a) => run_fit(a, cli, started),
        Command::Predict(a) => run_predict(a),
        Command::TestSa(a) => run_test(a, cli, started),
        Command::Cv(a) => run_cv(a, cli, started),
        Command::Simulate(a) => run_simulate(a),
        Command::Bench(a) => run_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let err = CliError::Usage(first);
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(err.code());
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.code())
        }
    }
}
