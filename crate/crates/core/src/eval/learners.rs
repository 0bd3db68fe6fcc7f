//! Small self-contained learners for the ML-utility score.

use std::fmt;

/// Row-major design matrix.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Learner {
    DecisionTree,
    LogisticRegression,
    LinearRegression,
    Ridge,
}

impl Learner {
    pub const CLASSIFIERS: [Learner; 2] = [Learner::DecisionTree, Learner::LogisticRegression];
    pub const REGRESSORS: [Learner; 2] = [Learner::LinearRegression, Learner::Ridge];

    pub fn as_str(self) -> &'static str {
        match self {
            Learner::DecisionTree => "decision_tree",
            Learner::LogisticRegression => "logistic_regression",
            Learner::LinearRegression => "linear_regression",
            Learner::Ridge => "ridge",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

/// CART classifier with gini impurity.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    root: Node,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

impl DecisionTree {
    pub const MAX_DEPTH: usize = 8;

    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize) -> Self {
        Self::fit_with_depth(x, y, n_classes, Self::MAX_DEPTH)
    }

    pub fn fit_with_depth(x: &Matrix, y: &[usize], n_classes: usize, max_depth: usize) -> Self {
        let idx: Vec<usize> = (0..y.len()).collect();
        DecisionTree { root: build(x, y, n_classes.max(1), idx, max_depth) }
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(c) => return *c,
                Node::Split { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}

fn build(x: &Matrix, y: &[usize], k: usize, idx: Vec<usize>, depth: usize) -> Node {
    let mut counts = vec![0; k];
    for &i in &idx {
        counts[y[i]] += 1;
    }
    let n = idx.len();
    let parent = gini(&counts, n);
    if depth == 0 || n < 2 || parent == 0.0 {
        return Node::Leaf(majority(&counts));
    }
    let n_features = x.first().map_or(0, Vec::len);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = idx.clone();
    for f in 0..n_features {
        sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left = vec![0; k];
        let mut right = counts.clone();
        for s in 0..n - 1 {
            let c = y[sorted[s]];
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (x[sorted[s]][f], x[sorted[s + 1]][f]);
            if v == next {
                continue;
            }
            let nl = s + 1;
            let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            if best.is_none_or(|(b, _, _)| score < b - 1e-12) {
                best = Some((score, f, v + (next - v) / 2.0));
            }
        }
    }
    match best {
        Some((score, feature, threshold)) if score < parent - 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(build(x, y, k, l, depth - 1)),
                right: Box::new(build(x, y, k, r, depth - 1)),
            }
        }
        _ => Node::Leaf(majority(&counts)),
    }
}

/// Multinomial logistic regression trained by full-batch gradient descent.
/// Expects standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    /// `k × (d + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

impl LogisticRegression {
    pub const ITERATIONS: usize = 300;
    pub const LEARNING_RATE: f64 = 0.5;
    pub const L2: f64 = 1e-4;

    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize) -> Self {
        let k = n_classes.max(1);
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut w = vec![vec![0.0; d + 1]; k];
        let mut grad = vec![vec![0.0; d + 1]; k];
        let mut p = vec![0.0; k];
        for _ in 0..Self::ITERATIONS {
            grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for (row, &label) in x.iter().zip(y) {
                softmax_scores(&w, row, &mut p);
                for c in 0..k {
                    let e = p[c] - if c == label { 1.0 } else { 0.0 };
                    for j in 0..d {
                        grad[c][j] += e * row[j];
                    }
                    grad[c][d] += e;
                }
            }
            for c in 0..k {
                for j in 0..=d {
                    let reg = if j < d { Self::L2 * w[c][j] } else { 0.0 };
                    w[c][j] -= Self::LEARNING_RATE * (grad[c][j] / n + reg);
                }
            }
        }
        LogisticRegression { weights: w }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let mut p = vec![0.0; self.weights.len()];
        x.iter()
            .map(|row| {
                softmax_scores(&self.weights, row, &mut p);
                majority_f(&p)
            })
            .collect()
    }
}

fn majority_f(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

fn softmax_scores(w: &[Vec<f64>], row: &[f64], out: &mut [f64]) {
    let d = row.len();
    for (o, wc) in out.iter_mut().zip(w) {
        *o = wc[d] + row.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>();
    }
    let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Least squares with an unpenalized intercept and L2 penalty `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    /// A tiny ridge keeps ordinary least squares solvable with collinear
    /// one-hot blocks.
    pub const OLS_JITTER: f64 = 1e-8;

    pub fn fit(x: &Matrix, y: &[f64], lambda: f64) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        if x.is_empty() {
            return LinearModel { coef: vec![0.0; d], intercept: 0.0 };
        }
        let xm: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let ym = y.iter().sum::<f64>() / n;
        let mut a = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        for (row, &t) in x.iter().zip(y) {
            for i in 0..d {
                let xi = row[i] - xm[i];
                b[i] += xi * (t - ym);
                for j in i..d {
                    a[i][j] += xi * (row[j] - xm[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                a[i][j] = a[j][i];
            }
            a[i][i] += lambda.max(Self::OLS_JITTER);
        }
        let coef = solve(a, b);
        let intercept = ym - coef.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
        LinearModel { coef, intercept }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter().map(|r| self.intercept + r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()).collect()
    }
}

/// Gaussian elimination with partial pivoting; singular directions get 0.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        a.swap(col, piv);
        b.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            continue;
        }
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        if a[i][i].abs() < 1e-300 {
            continue;
        }
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}
