//! Shared data model, the rank p-value, the CRT p-value and the
//! X-symmetry check.
//!
//! A statistic vector `t = (t[0], ..., t[b])` scores the real column in
//! position 0 and the `b` pseudo columns after it. The rank p-value counts
//! how many entries are at least `t[0]`, position 0 included:
//!
//! ```text
//! p = #{k in 0..=b : t[0] <= t[k]} / (b + 1)
//! ```
//!
//! Ties count against rejection. P-values are kept as exact integer counts.

use std::fmt;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::rng::SeedStream;
use crate::statistics::JointStatistic;

/// How the response is coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    Continuous,
    Binary,
    Categorical(usize),
}

impl ResponseKind {
    /// Picks the narrowest kind consistent with the values: {0,1} is binary,
    /// small non-negative integers are categorical, anything else continuous.
    pub fn infer(values: &[f64]) -> ResponseKind {
        let integral = values.iter().all(|v| v.fract() == 0.0 && *v >= 0.0);
        if !integral {
            return ResponseKind::Continuous;
        }
        let max = values.iter().cloned().fold(0.0, f64::max) as usize;
        match max {
            0 | 1 => ResponseKind::Binary,
            m if m < 10 => ResponseKind::Categorical(m + 1),
            _ => ResponseKind::Continuous,
        }
    }

    pub fn classes(self) -> Option<usize> {
        match self {
            ResponseKind::Continuous => None,
            ResponseKind::Binary => Some(2),
            ResponseKind::Categorical(k) => Some(k),
        }
    }
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseKind::Continuous => write!(f, "continuous"),
            ResponseKind::Binary => write!(f, "binary"),
            ResponseKind::Categorical(k) => write!(f, "categorical({k})"),
        }
    }
}

/// A response vector together with its coding.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub values: DVector<f64>,
    pub kind: ResponseKind,
}

impl Response {
    pub fn new(values: DVector<f64>, kind: ResponseKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("response contains non-finite values"));
        }
        if let Some(k) = kind.classes() {
            if let Some(bad) = values.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v >= k as f64) {
                return Err(invalid(format!("response value {bad} outside {{0,..,{}}}", k - 1)));
            }
        }
        Ok(Response { values, kind })
    }

    pub fn continuous(values: DVector<f64>) -> Self {
        Response { values, kind: ResponseKind::Continuous }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Response {
        Response {
            values: crate::linalg::select_entries(&self.values, rows),
            kind: self.kind,
        }
    }

    /// Class labels, valid only for binary or categorical responses.
    pub fn labels(&self) -> Vec<usize> {
        self.values.iter().map(|v| *v as usize).collect()
    }
}

/// Observed data: response `y`, covariates `z` (n x p) and the focal column `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Response,
    pub z: DMatrix<f64>,
    pub x: DVector<f64>,
}

impl Dataset {
    pub fn new(y: Response, z: DMatrix<f64>, x: DVector<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(invalid("a dataset needs at least two rows"));
        }
        if x.len() != n || z.nrows() != n {
            return Err(invalid(format!(
                "dimension mismatch: y has {n} rows, x {}, z {}",
                x.len(),
                z.nrows()
            )));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("covariates contain non-finite values"));
        }
        Ok(Dataset { y, z, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }
}

/// The real column followed by `b` pseudo columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDesign {
    columns: DMatrix<f64>,
}

impl AugmentedDesign {
    /// Builds `(x, pseudo_1, ..., pseudo_b)`.
    pub fn new(x: &DVector<f64>, pseudo: &DMatrix<f64>) -> Result<Self> {
        if pseudo.ncols() == 0 {
            return Err(invalid("at least one pseudo column is required"));
        }
        if pseudo.nrows() != x.len() {
            return Err(invalid("pseudo columns must have the same length as x"));
        }
        let mut columns = DMatrix::zeros(x.len(), pseudo.ncols() + 1);
        columns.column_mut(0).copy_from(x);
        columns.columns_mut(1, pseudo.ncols()).copy_from(pseudo);
        Ok(AugmentedDesign { columns })
    }

    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        if columns.ncols() < 2 {
            return Err(invalid("an augmented design needs b >= 1 pseudo columns"));
        }
        Ok(AugmentedDesign { columns })
    }

    pub fn b(&self) -> usize {
        self.columns.ncols() - 1
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    /// Column `j` of the result is column `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<AugmentedDesign> {
        check_permutation(perm, self.columns.ncols())?;
        Ok(AugmentedDesign { columns: crate::linalg::select_columns(&self.columns, perm) })
    }
}

fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    if perm.len() != len {
        return Err(invalid(format!("permutation has length {} instead of {len}", perm.len())));
    }
    for &i in perm {
        if i >= len || std::mem::replace(&mut seen[i], true) {
            return Err(invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Scores `(T_0, ..., T_b)`; position 0 belongs to the real column.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticVector(Vec<f64>);

impl StatisticVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid("a statistic vector needs at least two entries"));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidStatistic { index, value });
        }
        Ok(StatisticVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn b(&self) -> usize {
        self.0.len() - 1
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<StatisticVector> {
        check_permutation(perm, self.0.len())?;
        Ok(StatisticVector(perm.iter().map(|&i| self.0[i]).collect()))
    }
}

/// An exact p-value `count / total` with `1 <= count <= total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PValue {
    count: usize,
    total: usize,
}

impl PValue {
    pub fn new(count: usize, total: usize) -> Result<Self> {
        if total == 0 || count == 0 || count > total {
            return Err(invalid(format!("{count}/{total} is not a valid p-value")));
        }
        Ok(PValue { count, total })
    }

    pub fn numerator(self) -> usize {
        self.count
    }

    pub fn denominator(self) -> usize {
        self.total
    }

    pub fn value(self) -> f64 {
        self.count as f64 / self.total as f64
    }

    /// `p <= alpha`, decided on the integer count.
    pub fn rejects(self, alpha: f64) -> bool {
        self.count <= critical_count(alpha, self.total)
    }
}

impl fmt::Display for PValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.count, self.total)
    }
}

/// `floor(alpha * total)`, with a relative slack of 1e-12 so that decimal
/// levels such as 0.05 * 20 land on the intended integer.
pub fn critical_count(alpha: f64, total: usize) -> usize {
    if alpha <= 0.0 {
        return 0;
    }
    let scaled = alpha * total as f64;
    ((scaled * (1.0 + 1e-12)).floor() as usize).min(total)
}

/// Rank p-value: `#{k : t[0] <= t[k]} / (b + 1)`.
pub fn rank_p_value(t: &StatisticVector) -> PValue {
    let v = t.values();
    let count = v.iter().filter(|&&tk| v[0] <= tk).count();
    PValue { count, total: v.len() }
}

/// CRT p-value: `(1 + #{k : pseudo[k] >= t0}) / (1 + b)`.
pub fn crt_p_value(t0: f64, pseudo: &[f64]) -> Result<PValue> {
    if !t0.is_finite() {
        return Err(Error::InvalidStatistic { index: 0, value: t0 });
    }
    if pseudo.is_empty() {
        return Err(invalid("at least one pseudo statistic is required"));
    }
    if let Some((i, &v)) = pseudo.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidStatistic { index: i + 1, value: v });
    }
    let count = 1 + pseudo.iter().filter(|&&v| v >= t0).count();
    Ok(PValue { count, total: pseudo.len() + 1 })
}

/// Outcome of one test run.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub method: String,
    pub statistic: String,
    pub n: usize,
    pub p: usize,
    pub b: usize,
    pub alpha: f64,
    pub p_value: PValue,
    pub reject: bool,
    pub statistics: StatisticVector,
    pub seed: u64,
    pub elapsed: Duration,
}

impl TestReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: impl Into<String>,
        statistic: impl Into<String>,
        data: &Dataset,
        alpha: f64,
        p_value: PValue,
        statistics: StatisticVector,
        seed: u64,
        elapsed: Duration,
    ) -> Self {
        TestReport {
            method: method.into(),
            statistic: statistic.into(),
            n: data.n(),
            p: data.p(),
            b: p_value.denominator() - 1,
            alpha,
            p_value,
            reject: p_value.rejects(alpha),
            statistics,
            seed,
            elapsed,
        }
    }
}

/// Checks `T(y, z, design permuted by perm) == T(y, z, design) permuted by perm`
/// in max norm up to `tolerance`. Both evaluations share `seed`.
pub fn check_x_symmetry(
    statistic: &dyn JointStatistic,
    y: &Response,
    z: &DMatrix<f64>,
    design: &AugmentedDesign,
    perm: &[usize],
    tolerance: f64,
    seed: SeedStream,
) -> Result<bool> {
    let base = statistic.evaluate(y, z, design.matrix(), seed)?;
    let permuted_design = design.permuted(perm)?;
    let lhs = statistic.evaluate(y, z, permuted_design.matrix(), seed)?;
    let rhs = base.permuted(perm)?;
    let gap = lhs
        .values()
        .iter()
        .zip(rhs.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(gap <= tolerance)
}
