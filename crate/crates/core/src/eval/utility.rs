//! Train-on-one, test-on-real utility scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;

use super::learners::{DecisionTree, Learner, LinearModel, LogisticRegression, Matrix};
use super::{correlation_distance, MetricError};
use crate::table::{ColumnKind, DataTable, Task};

enum Feature {
    Numeric { column: usize, mean: f64, scale: f64 },
    OneHot { column: usize, levels: Vec<String> },
}

/// Feature encoding fitted on a training table: continuous columns are
/// standardized, categorical columns one-hot encoded over the training
/// levels (unseen levels map to all zeros).
pub struct Encoder {
    features: Vec<Feature>,
    width: usize,
}

impl Encoder {
    pub fn fit(train: &DataTable, target: usize) -> Self {
        let schema = train.schema();
        let mut features = Vec::new();
        let mut width = 0;
        for c in (0..schema.len()).filter(|&c| c != target) {
            match schema.column(c).kind {
                ColumnKind::Continuous => {
                    let v = train.column_values(c);
                    let n = v.len().max(1) as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                    features.push(Feature::Numeric { column: c, mean, scale: if sd > 0.0 { sd } else { 1.0 } });
                    width += 1;
                }
                ColumnKind::Categorical => {
                    let mut levels: Vec<String> = train.column_texts(c).map(str::to_owned).collect();
                    levels.sort();
                    levels.dedup();
                    width += levels.len();
                    features.push(Feature::OneHot { column: c, levels });
                }
            }
        }
        Encoder { features, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn transform(&self, table: &DataTable) -> Matrix {
        table
            .rows()
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(self.width);
                for f in &self.features {
                    match f {
                        Feature::Numeric { column, mean, scale } => {
                            out.push((row[*column].value().unwrap_or(*mean) - mean) / scale)
                        }
                        Feature::OneHot { column, levels } => {
                            let t = row[*column].text();
                            out.extend(levels.iter().map(|l| if l == t { 1.0 } else { 0.0 }));
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// F1 of `positive` treated as the positive class.
fn class_f1(truth: &[&str], pred: &[&str], positive: &str) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (t, p) in truth.iter().zip(pred) {
        match (*t == positive, *p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / denom as f64
}

/// The least frequent label in `truth`; ties go to the lexicographically
/// smallest label.
pub fn minority_class<'a>(truth: &[&'a str]) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in truth {
        *counts.entry(t).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (label, n) in counts {
        if best.is_none_or(|(_, b)| n < b) {
            best = Some((label, n));
        }
    }
    best.map(|(l, _)| l)
}

/// Binary: F1 of the test set's minority class. Multiclass: unweighted mean
/// of per-class F1 over every label seen in `truth` or `pred`.
pub fn f1_score(truth: &[&str], pred: &[&str], task: Task) -> Result<f64, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::Length(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    match task {
        Task::BinaryClassification => {
            let positive = minority_class(truth).expect("non-empty");
            Ok(class_f1(truth, pred, positive))
        }
        Task::MulticlassClassification => {
            let mut labels: Vec<&str> = truth.iter().chain(pred).copied().collect();
            labels.sort_unstable();
            labels.dedup();
            Ok(labels.iter().map(|l| class_f1(truth, pred, l)).sum::<f64>() / labels.len() as f64)
        }
        other => Err(MetricError::Task(format!("F1 needs a classification task, got {}", other.as_str()))),
    }
}

/// Mean of |y - ŷ| / |y| over rows with y != 0. Returns the score and the
/// number of excluded rows.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<(f64, usize), MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::Length(truth.len(), pred.len()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (y, p) in truth.iter().zip(pred) {
        if *y == 0.0 {
            continue;
        }
        sum += (y - p).abs() / y.abs();
        used += 1;
    }
    let excluded = truth.len() - used;
    if used == 0 {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    if excluded > 0 {
        warn!("{excluded} rows with a zero target excluded from MAPE");
    }
    Ok((sum / used as f64, excluded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityMetric {
    F1,
    Mape,
}

impl UtilityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            UtilityMetric::F1 => "f1",
            UtilityMetric::Mape => "mape",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityRow {
    pub learner: Learner,
    pub real: Option<f64>,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utility {
    pub metric: UtilityMetric,
    pub rows: Vec<UtilityRow>,
    /// Test rows ignored by MAPE because the target was zero.
    pub excluded: usize,
    /// Test labels never seen in a training table.
    pub unseen_labels: Vec<String>,
}

impl Utility {
    pub fn mean_synthetic(&self) -> f64 {
        self.rows.iter().map(|r| r.synthetic).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_real(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.rows.iter().map(|r| r.real).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn score_one(
    learner: Learner,
    train: &DataTable,
    test: &DataTable,
    target: usize,
    task: Task,
) -> Result<(f64, usize), MetricError> {
    if train.is_empty() {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    let enc = Encoder::fit(train, target);
    let (xtr, xte) = (enc.transform(train), enc.transform(test));
    if task.is_classification() {
        let mut classes: Vec<&str> = train.column_texts(target).collect();
        classes.sort_unstable();
        classes.dedup();
        let ytr: Vec<usize> =
            train.column_texts(target).map(|t| classes.binary_search(&t).expect("collected above")).collect();
        let pred = match learner {
            Learner::DecisionTree => DecisionTree::fit(&xtr, &ytr, classes.len()).predict(&xte),
            Learner::LogisticRegression => LogisticRegression::fit(&xtr, &ytr, classes.len()).predict(&xte),
            other => return Err(MetricError::Task(format!("{other} is not a classifier"))),
        };
        let pred: Vec<&str> = pred.iter().map(|&k| classes[k]).collect();
        let truth: Vec<&str> = test.column_texts(target).collect();
        Ok((f1_score(&truth, &pred, task)?, 0))
    } else {
        let ytr = train.column_values(target);
        let lambda = match learner {
            Learner::LinearRegression => 0.0,
            Learner::Ridge => 1.0,
            other => return Err(MetricError::Task(format!("{other} is not a regressor"))),
        };
        let pred = LinearModel::fit(&xtr, &ytr, lambda).predict(&xte);
        mape(&test.column_values(target), &pred)
    }
}

fn check_schema(a: &DataTable, b: &DataTable, what: &str) -> Result<(), MetricError> {
    if a.schema().columns() != b.schema().columns() {
        return Err(MetricError::SchemaMismatch(format!("{what} columns differ from the test table")));
    }
    Ok(())
}

/// Trains every learner for the test table's task on `synth_train` (and on
/// `real_train` when given) and scores it on `test`.
pub fn ml_utility(
    real_train: Option<&DataTable>,
    synth_train: &DataTable,
    test: &DataTable,
) -> Result<Utility, MetricError> {
    let task = test.schema().task();
    let target = test.schema().target().ok_or_else(|| MetricError::Task("test table has no target column".into()))?;
    check_schema(synth_train, test, "synthetic")?;
    if let Some(r) = real_train {
        check_schema(r, test, "real")?;
    }
    let (metric, learners) = match task {
        Task::BinaryClassification | Task::MulticlassClassification => (UtilityMetric::F1, Learner::CLASSIFIERS),
        Task::Regression => {
            if test.schema().column(target).kind != ColumnKind::Continuous {
                return Err(MetricError::Task("regression target must be continuous".into()));
            }
            (UtilityMetric::Mape, Learner::REGRESSORS)
        }
        Task::None => return Err(MetricError::Task("task is none".into())),
    };
    let mut unseen_labels = Vec::new();
    if task.is_classification() {
        let mut seen: Vec<&str> = synth_train.column_texts(target).collect();
        if let Some(r) = real_train {
            seen.extend(r.column_texts(target));
        }
        let mut labels: Vec<&str> = test.column_texts(target).filter(|l| !seen.contains(l)).collect();
        labels.sort_unstable();
        labels.dedup();
        for l in &labels {
            warn!("test label {l:?} never appears in training data; scored as misclassified");
        }
        unseen_labels = labels.into_iter().map(str::to_owned).collect();
    }
    let mut rows = Vec::new();
    let mut excluded = 0;
    for learner in learners {
        let (synthetic, ex) = score_one(learner, synth_train, test, target, task)?;
        excluded = ex;
        let real = real_train.map(|r| score_one(learner, r, test, target, task).map(|s| s.0)).transpose()?;
        rows.push(UtilityRow { learner, real, synthetic });
    }
    Ok(Utility { metric, rows, excluded, unseen_labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub real: String,
    pub synthetic: String,
    pub test: Option<String>,
    pub seed: u64,
    pub utility: Option<Utility>,
    pub correlation_distance: f64,
    /// Association entries `(table, row column, column)` that fell back to a
    /// zero-variance convention.
    pub degenerate: Vec<(String, String, String)>,
}

pub const CSV_HEADER: &str = "metric,learner,real,synthetic";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EvalReport {
    /// Correlation distance between `real` and `synth`, plus utility scores
    /// when `test` is given and has a target.
    pub fn compute(
        names: (&str, &str, Option<&str>),
        real: &DataTable,
        synth: &DataTable,
        test: Option<&DataTable>,
        seed: u64,
    ) -> Result<Self, MetricError> {
        let correlation_distance = correlation_distance(real, synth)?;
        let mut degenerate = Vec::new();
        for (label, t) in [("real", real), ("synthetic", synth)] {
            let m = super::association_matrix(t)?;
            for (i, j) in m.degenerate_entries() {
                if i != j {
                    degenerate.push((label.to_owned(), m.names[i].clone(), m.names[j].clone()));
                }
            }
        }
        let utility = match test {
            Some(t) if t.schema().target().is_some() && t.schema().task() != Task::None => {
                Some(ml_utility(Some(real), synth, t)?)
            }
            _ => None,
        };
        Ok(EvalReport {
            real: names.0.to_owned(),
            synthetic: names.1.to_owned(),
            test: names.2.map(str::to_owned),
            seed,
            utility,
            correlation_distance,
            degenerate,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        if let Some(u) = &self.utility {
            let m = u.metric.as_str();
            for r in &u.rows {
                let _ = writeln!(out, "{m},{},{},{:.6}", r.learner, fmt_opt(r.real), r.synthetic);
            }
            let _ = writeln!(out, "{m},mean,{},{:.6}", fmt_opt(u.mean_real()), u.mean_synthetic());
        }
        let _ = writeln!(out, "correlation_distance,,,{:.6}", self.correlation_distance);
        out
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![["metric".to_owned(), "learner".into(), "real".into(), "synthetic".into()]];
        if let Some(u) = &self.utility {
            let m = u.metric.as_str();
            for r in &u.rows {
                lines.push([m.into(), r.learner.to_string(), fmt_opt(r.real), format!("{:.6}", r.synthetic)]);
            }
            lines.push([m.into(), "mean".into(), fmt_opt(u.mean_real()), format!("{:.6}", u.mean_synthetic())]);
        }
        lines.push([
            "correlation_distance".into(),
            "-".into(),
            "-".into(),
            format!("{:.6}", self.correlation_distance),
        ]);
        let mut widths = [0usize; 4];
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = format!(
            "real: {}\nsynthetic: {}\ntest: {}\nseed: {}\n\n",
            self.real,
            self.synthetic,
            self.test.as_deref().unwrap_or("-"),
            self.seed
        );
        for l in &lines {
            let _ = writeln!(
                out,
                "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}",
                l[0],
                l[1],
                l[2],
                l[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        }
        if let Some(u) = &self.utility {
            if u.excluded > 0 {
                let _ = writeln!(out, "\nnote: {} zero-target test rows excluded from MAPE", u.excluded);
            }
            for l in &u.unseen_labels {
                let _ = writeln!(out, "note: test label {l:?} absent from training data");
            }
        }
        for (t, a, b) in &self.degenerate {
            let _ = writeln!(out, "degenerate: {t} ({a}, {b}) uses the zero-variance convention");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_example() {
        let (m, ex) = mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap();
        assert!((m - 0.10).abs() < 1e-15);
        assert_eq!(ex, 0);
        let (m, ex) = mape(&[0.0, 50.0], &[3.0, 25.0]).unwrap();
        assert_eq!((m, ex), (0.5, 1));
        assert!(mape(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn f1_binary_uses_the_minority_class() {
        let truth = ["n", "n", "n", "y"];
        assert_eq!(f1_score(&truth, &truth, Task::BinaryClassification).unwrap(), 1.0);
        // positive "y": tp 1, fp 1, fn 0 -> 2/3
        let pred = ["n", "n", "y", "y"];
        assert!((f1_score(&truth, &pred, Task::BinaryClassification).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score(&truth, &["n"; 4], Task::BinaryClassification).unwrap(), 0.0);
    }

    #[test]
    fn f1_macro_averages_every_label() {
        let truth = ["a", "b", "c", "c"];
        let pred = ["a", "c", "c", "d"];
        // a: 1, b: 0, c: tp1 fp1 fn1 -> 0.5, d: 0
        let f = f1_score(&truth, &pred, Task::MulticlassClassification).unwrap();
        assert!((f - 1.5 / 4.0).abs() < 1e-15);
        assert!(f1_score(&truth, &pred, Task::Regression).is_err());
    }

    #[test]
    fn minority_ties_break_by_label() {
        assert_eq!(minority_class(&["b", "a", "b", "a"]), Some("a"));
        assert_eq!(minority_class(&[]), None);
    }
}
