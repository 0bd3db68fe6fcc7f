//! Synthetic-data quality: pairwise association matrices, correlation
//! distance and downstream ML utility.

pub mod learners;
pub mod utility;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::table::{ColumnKind, DataTable};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("inputs have lengths {0} and {1}")]
    Length(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("schemas differ: {0}")]
    SchemaMismatch(String),
    #[error("{0}")]
    Task(String),
}

/// A metric value; `degenerate` marks the zero-variance conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assoc {
    pub value: f64,
    pub degenerate: bool,
}

impl Assoc {
    fn new(value: f64) -> Self {
        Assoc { value, degenerate: false }
    }

    fn degenerate(value: f64) -> Self {
        Assoc { value, degenerate: true }
    }
}

fn check_lengths(a: usize, b: usize, needed: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::Length(a, b));
    }
    if a < needed {
        return Err(MetricError::TooFew { needed, got: a });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample correlation; 0 (degenerate) when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Assoc, MetricError> {
    check_lengths(x.len(), y.len(), 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Assoc::degenerate(0.0));
    }
    Ok(Assoc::new((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Theil's U(x|y) = (H(x) - H(x|y)) / H(x), natural logs. Constant `x` gives
/// 1 (degenerate).
pub fn uncertainty_coefficient<X: Ord, Y: Ord>(x: &[X], y: &[Y]) -> Result<Assoc, MetricError> {
    check_lengths(x.len(), y.len(), 1)?;
    let n = x.len() as f64;
    let mut px: BTreeMap<&X, usize> = BTreeMap::new();
    let mut py: BTreeMap<&Y, usize> = BTreeMap::new();
    let mut pxy: BTreeMap<(&Y, &X), usize> = BTreeMap::new();
    for (a, b) in x.iter().zip(y) {
        *px.entry(a).or_default() += 1;
        *py.entry(b).or_default() += 1;
        *pxy.entry((b, a)).or_default() += 1;
    }
    let hx = entropy(px.values().copied(), n);
    if hx == 0.0 {
        return Ok(Assoc::degenerate(1.0));
    }
    let h_x_given_y: f64 = pxy
        .iter()
        .map(|((b, _), &c)| {
            let pj = c as f64 / n;
            -pj * (c as f64 / py[b] as f64).ln()
        })
        .sum();
    Ok(Assoc::new(((hx - h_x_given_y) / hx).clamp(0.0, 1.0)))
}

/// η = sqrt(between-class sum of squares / total sum of squares); 0
/// (degenerate) when `values` has zero variance.
pub fn correlation_ratio<C: Ord>(categories: &[C], values: &[f64]) -> Result<Assoc, MetricError> {
    check_lengths(categories.len(), values.len(), 1)?;
    let m = mean(values);
    let total: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    if total == 0.0 {
        return Ok(Assoc::degenerate(0.0));
    }
    let mut groups: BTreeMap<&C, (usize, f64)> = BTreeMap::new();
    for (c, v) in categories.iter().zip(values) {
        let g = groups.entry(c).or_default();
        g.0 += 1;
        g.1 += v;
    }
    let between: f64 = groups
        .values()
        .map(|&(n, s)| {
            let d = s / n as f64 - m;
            n as f64 * d * d
        })
        .sum();
    Ok(Assoc::new((between / total).sqrt().clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub degenerate: Vec<Vec<bool>>,
}

impl AssociationMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn degenerate_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.degenerate.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                if d {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("column");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.values) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson for continuous pairs, U(i|j) for categorical pairs and η for
/// mixed pairs in either order. Diagonal entries are 1.
pub fn association_matrix(table: &DataTable) -> Result<AssociationMatrix, MetricError> {
    if table.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: table.len() });
    }
    let schema = table.schema();
    let n = schema.len();
    let texts: Vec<Vec<&str>> = (0..n).map(|c| table.column_texts(c).collect()).collect();
    let nums: Vec<Vec<f64>> = (0..n)
        .map(|c| if schema.column(c).kind == ColumnKind::Continuous { table.column_values(c) } else { Vec::new() })
        .collect();
    let mut values = vec![vec![0.0; n]; n];
    let mut degenerate = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            let a = match (schema.column(i).kind, schema.column(j).kind) {
                (ColumnKind::Continuous, ColumnKind::Continuous) => pearson(&nums[i], &nums[j])?,
                (ColumnKind::Categorical, ColumnKind::Categorical) => uncertainty_coefficient(&texts[i], &texts[j])?,
                (ColumnKind::Categorical, ColumnKind::Continuous) => correlation_ratio(&texts[i], &nums[j])?,
                (ColumnKind::Continuous, ColumnKind::Categorical) => correlation_ratio(&texts[j], &nums[i])?,
            };
            let a = if i == j { Assoc { value: 1.0, degenerate: a.degenerate } } else { a };
            values[i][j] = a.value;
            degenerate[i][j] = a.degenerate;
        }
    }
    Ok(AssociationMatrix { names: schema.names().map(str::to_owned).collect(), values, degenerate })
}

/// Mean absolute difference of the off-diagonal entries of the two tables'
/// association matrices.
pub fn correlation_distance(real: &DataTable, synth: &DataTable) -> Result<f64, MetricError> {
    let (rs, ss) = (real.schema(), synth.schema());
    if rs.columns() != ss.columns() {
        return Err(MetricError::SchemaMismatch("column names or kinds differ".into()));
    }
    let a = association_matrix(real)?;
    let b = association_matrix(synth)?;
    Ok(matrix_distance(&a, &b))
}

pub fn matrix_distance(a: &AssociationMatrix, b: &AssociationMatrix) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += (a.values[i][j] - b.values[i][j]).abs();
            }
        }
    }
    total / (n * (n - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pearson_examples() {
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().value, 1.0, 1e-15));
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value, -1.0, 1e-15));
        // Oracle: means 2.5 and 3; deviations (-1.5,-0.5,0.5,1.5) and (-2,0,-1,3);
        // sxy = 3 + 0 - 0.5 + 4.5 = 7, sxx = 5, syy = 14.
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 6.0]).unwrap();
        assert!(close(r.value, 7.0 / (5.0f64 * 14.0).sqrt(), 1e-12));
        assert!(!r.degenerate);
        let d = pearson(&[1.0, 1.0], &[2.0, 3.0]).unwrap();
        assert_eq!(d, Assoc::degenerate(0.0));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let x = ["a", "b", "a", "b"];
        assert!(close(uncertainty_coefficient(&x, &x).unwrap().value, 1.0, 1e-15));
        let x = ["a", "a", "b", "b"];
        let y = ["c", "d", "c", "d"];
        assert!(close(uncertainty_coefficient(&x, &y).unwrap().value, 0.0, 1e-15));
        // Joint counts [[3,1],[1,3]]: H(x) = ln 2, H(x|y) = -(3/4 ln 3/4 + 1/4 ln 1/4).
        let x = ["a", "a", "a", "a", "b", "b", "b", "b"];
        let y = ["p", "p", "p", "q", "p", "q", "q", "q"];
        let hx = 2f64.ln();
        let hxy = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!(close(uncertainty_coefficient(&x, &y).unwrap().value, (hx - hxy) / hx, 1e-12));
        assert_eq!(uncertainty_coefficient(&["a", "a"], &["p", "q"]).unwrap(), Assoc::degenerate(1.0));
    }

    #[test]
    fn correlation_ratio_examples() {
        assert!(close(correlation_ratio(&["a", "a", "b", "b"], &[1.0, 1.0, 5.0, 5.0]).unwrap().value, 1.0, 1e-15));
        assert!(close(correlation_ratio(&["a", "a", "a"], &[1.0, 2.0, 9.0]).unwrap().value, 0.0, 1e-15));
        // a:[1,2] b:[2,4]: mean 2.25, between = 2(1.5-2.25)^2 + 2(3-2.25)^2 = 2.25,
        // total = 1.5625 + 0.0625 + 0.0625 + 3.0625 = 4.75.
        let e = correlation_ratio(&["a", "a", "b", "b"], &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(close(e.value, (2.25f64 / 4.75).sqrt(), 1e-12));
        assert_eq!(correlation_ratio(&["a", "b"], &[3.0, 3.0]).unwrap(), Assoc::degenerate(0.0));
    }
}
