use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use kendall_reg::sample::Sample;

use crate::error::CliError;

pub fn open_input(path: Option<&Path>) -> Result<Box<dyn Read>, CliError> {
    match path {
        None => Ok(Box::new(io::stdin())),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(io::stdin())),
        Some(p) => File::open(p)
            .map(|f| Box::new(f) as Box<dyn Read>)
            .map_err(|e| CliError::Data(format!("cannot open {}: {e}", p.display()))),
    }
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        None => Ok(Box::new(io::stdout())),
        Some(p) => File::create(p)
            .map(|f| Box::new(f) as Box<dyn Write>)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", p.display()))),
    }
}

/// Numeric table with a header row.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(reader: impl Read, what: &str) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Data(format!("{what}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Data(format!("{what}: {e}")))?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(k, field)| {
                    field
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| {
                            CliError::Data(format!(
                                "{what}: row {} column `{}` is not a finite number: `{field}`",
                                line + 1,
                                headers.get(k).map(String::as_str).unwrap_or("?")
                            ))
                        })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CliError::Data(format!("{what}: no data rows")));
        }
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("missing column `{name}`")))
    }
}

fn is_z_column(name: &str) -> bool {
    name.strip_prefix('z')
        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
}

/// Reads `(x1, x2, z)` from a CSV sample.
pub fn read_sample(reader: impl Read, x1: &str, x2: &str, z: &[String]) -> Result<(Sample, Vec<String>), CliError> {
    let table = Table::read(reader, "sample")?;
    let z_names: Vec<String> = if z.is_empty() {
        table.headers.iter().filter(|h| is_z_column(h)).cloned().collect()
    } else {
        z.to_vec()
    };
    if z_names.is_empty() {
        return Err(CliError::Data("missing covariate column: no `z<k>` header and no --z".into()));
    }
    let (c1, c2) = (table.column(x1)?, table.column(x2)?);
    let zc = z_names.iter().map(|n| table.column(n)).collect::<Result<Vec<_>, _>>()?;
    let xs1: Vec<f64> = table.rows.iter().map(|r| r[c1]).collect();
    let xs2: Vec<f64> = table.rows.iter().map(|r| r[c2]).collect();
    let zs: Vec<Vec<f64>> = table.rows.iter().map(|r| zc.iter().map(|&c| r[c]).collect()).collect();
    let sample = Sample::from_columns(&xs1, &xs2, &zs).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((sample, z_names))
}

/// Every column of a points CSV, one point per row.
pub fn read_points(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let table = Table::read(open_input(Some(path))?, "design points")?;
    if table.headers.len() != dim {
        return Err(CliError::Data(format!(
            "design points file has {} columns, the covariate has dimension {dim}",
            table.headers.len()
        )));
    }
    Ok(table.rows)
}

pub fn z_headers(dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("z{k}")).collect()
}

pub fn write_csv(w: impl Write, headers: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CliError::Data(format!("write failed: {e}"));
    out.write_record(headers).map_err(io)?;
    for r in rows {
        out.write_record(r.iter().map(|v| v.to_string())).map_err(io)?;
    }
    out.flush().map_err(|e| CliError::Data(format!("write failed: {e}")))
}
