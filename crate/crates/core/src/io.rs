//! File formats: datasets and laws in, reports and result tables out.
//!
//! Datasets are CSV with header `y,x,z1,...,zp`. Laws are TOML:
//!
//! ```toml
//! zeta = [0.5, 0.0, 0.0]   # or zeta_path = "zeta.txt", one value per line
//! sigma2 = 0.75
//! intercept = 0.0          # optional
//! ```
//!
//! Output tables start with a `# cit-rank <version>` comment line.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};
use crate::model::{Dataset, Response, ResponseKind, TestReport};
use crate::samplers::{ConditionalGaussianLaw, MeanLink};

pub const VERSION_LINE: &str = concat!("# cit-rank v", env!("CARGO_PKG_VERSION"));

pub fn parse_dataset<R: Read>(reader: R, kind: Option<ResponseKind>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 2 || names[0] != "y" || names[1] != "x" {
        return Err(invalid("dataset header must start with y,x"));
    }
    for (j, name) in names[2..].iter().enumerate() {
        if *name != format!("z{}", j + 1) {
            return Err(invalid(format!("expected column z{} but found '{name}'", j + 1)));
        }
    }
    let p = names.len() - 2;
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != p + 2 {
            return Err(invalid(format!("row {} has {} fields, expected {}", line + 1, record.len(), p + 2)));
        }
        let v = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("row {}: bad number '{s}'", line + 1))))
            .collect::<Result<Vec<f64>>>()?;
        y.push(v[0]);
        x.push(v[1]);
        z.extend_from_slice(&v[2..]);
    }
    let n = y.len();
    let kind = kind.unwrap_or_else(|| ResponseKind::infer(&y));
    let z = DMatrix::from_row_slice(n, p, &z);
    Dataset::new(Response::new(DVector::from_vec(y), kind)?, z, DVector::from_vec(x))
}

pub fn read_dataset(path: &Path, kind: Option<ResponseKind>) -> Result<Dataset> {
    parse_dataset(fs::File::open(path)?, kind)
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend((1..=data.p()).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.y.values[i].to_string(), data.x[i].to_string()];
        row.extend((0..data.p()).map(|j| data.z[(i, j)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    #[serde(default)]
    pub zeta: Option<Vec<f64>>,
    #[serde(default)]
    pub zeta_path: Option<PathBuf>,
    pub sigma2: f64,
    #[serde(default)]
    pub intercept: f64,
}

impl LawConfig {
    /// Builds the law; a relative `zeta_path` is resolved against `base`.
    pub fn into_law(self, base: Option<&Path>) -> Result<ConditionalGaussianLaw> {
        let zeta = match (self.zeta, self.zeta_path) {
            (Some(z), None) => z,
            (None, Some(path)) => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path,
                };
                fs::read_to_string(&path)?
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|_| config(format!("bad zeta entry '{s}'"))))
                    .collect::<Result<Vec<f64>>>()?
            }
            _ => return Err(config("law needs exactly one of zeta or zeta_path")),
        };
        ConditionalGaussianLaw::with_link(self.intercept, DVector::from_vec(zeta), self.sigma2, MeanLink::Identity)
    }
}

impl From<&ConditionalGaussianLaw> for LawConfig {
    fn from(law: &ConditionalGaussianLaw) -> Self {
        LawConfig { zeta: Some(law.zeta.iter().copied().collect()), zeta_path: None, sigma2: law.sigma2, intercept: law.intercept }
    }
}

pub fn write_law(path: &Path, law: &ConditionalGaussianLaw) -> Result<()> {
    if law.link != MeanLink::Identity {
        return Err(invalid("only laws with an identity mean link can be written"));
    }
    let text = toml::to_string(&LawConfig::from(law)).map_err(|e| invalid(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn parse_law(text: &str, base: Option<&Path>) -> Result<ConditionalGaussianLaw> {
    toml::from_str::<LawConfig>(text)?.into_law(base)
}

pub fn read_law(path: &Path) -> Result<ConditionalGaussianLaw> {
    parse_law(&fs::read_to_string(path)?, path.parent())
}

/// Writes the version comment and then `rows` as CSV with a header.
pub fn write_table<W: Write, T: Serialize>(mut writer: W, rows: &[T]) -> Result<()> {
    writeln!(writer, "{VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportRow<'a> {
    method: &'a str,
    statistic: &'a str,
    n: usize,
    p: usize,
    b: usize,
    alpha: f64,
    p_value_num: usize,
    p_value_den: usize,
    reject: bool,
    seed: u64,
    elapsed_s: f64,
}

pub fn write_reports<W: Write>(writer: W, reports: &[TestReport]) -> Result<()> {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            method: &r.method,
            statistic: &r.statistic,
            n: r.n,
            p: r.p,
            b: r.b,
            alpha: r.alpha,
            p_value_num: r.p_value.numerator(),
            p_value_den: r.p_value.denominator(),
            reject: r.reject,
            seed: r.seed,
            elapsed_s: r.elapsed.as_secs_f64(),
        })
        .collect();
    write_table(writer, &rows)
}
