#![allow(dead_code)]

use tabsynth::eval::{association_matrix, correlation_distance, correlation_ratio, pearson, uncertainty_coefficient};
use tabsynth::table::{Column, ColumnKind, DataTable, TableSchema};

// Oracles below use textbook formulations that differ from the library's:
// raw-sum Pearson, mutual information over the joint table, and η via the
// within-group sum of squares.

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx.abs() < 1e-12 || vy.abs() < 1e-12 {
        return 0.0;
    }
    (n * sxy - sx * sy) / (vx * vy).sqrt()
}

fn levels(v: &[u8]) -> Vec<u8> {
    let mut l = v.to_vec();
    l.sort_unstable();
    l.dedup();
    l
}

pub fn oracle_u(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let p = |pred: &dyn Fn(usize) -> bool| (0..x.len()).filter(|&i| pred(i)).count() as f64 / n;
    let mut hx = 0.0;
    for a in levels(x) {
        let pa = p(&|i| x[i] == a);
        hx -= pa * pa.ln();
    }
    if hx == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for a in levels(x) {
        for b in levels(y) {
            let pab = p(&|i| x[i] == a && y[i] == b);
            if pab > 0.0 {
                mi += pab * (pab / (p(&|i| x[i] == a) * p(&|i| y[i] == b))).ln();
            }
        }
    }
    mi / hx
}

pub fn oracle_eta(c: &[u8], v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sst: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    if sst == 0.0 {
        return 0.0;
    }
    let mut ssw = 0.0;
    for k in levels(c) {
        let g: Vec<f64> = c.iter().zip(v).filter(|(a, _)| **a == k).map(|(_, b)| *b).collect();
        let gm = g.iter().sum::<f64>() / g.len() as f64;
        ssw += g.iter().map(|x| (x - gm).powi(2)).sum::<f64>();
    }
    // sqrt amplifies cancellation noise near zero
    let share = 1.0 - ssw / sst;
    if share < 1e-12 {
        0.0
    } else {
        share.sqrt()
    }
}

pub const TOL: f64 = 1e-9;
const CONT: [f64; 2] = [-1.0, 2.5];
const CAT: [&str; 2] = ["a", "b"];

fn digits(mut code: usize, base: usize, len: usize) -> Vec<u8> {
    (0..len)
        .map(|_| {
            let d = (code % base) as u8;
            code /= base;
            d
        })
        .collect()
}

/// Every vector pair of length 1..=6 over a three-value domain.
pub fn check_vector_pairs() -> usize {
    let mut checked = 0usize;
    let cont3 = [-1.0, 0.5, 2.5];
    for n in 1..=6 {
        for xc in 0..3usize.pow(n as u32) {
            let xd = digits(xc, 3, n);
            let x: Vec<f64> = xd.iter().map(|&d| cont3[d as usize]).collect();
            for yc in 0..3usize.pow(n as u32) {
                let yd = digits(yc, 3, n);
                let y: Vec<f64> = yd.iter().map(|&d| cont3[d as usize]).collect();
                if n >= 2 {
                    let r = pearson(&x, &y).unwrap().value;
                    assert!((r - oracle_pearson(&x, &y)).abs() < TOL, "{x:?} {y:?}");
                }
                let u = uncertainty_coefficient(&xd, &yd).unwrap().value;
                assert!((u - oracle_u(&xd, &yd)).abs() < TOL, "{xd:?} {yd:?}");
                let e = correlation_ratio(&xd, &y).unwrap().value;
                assert!((e - oracle_eta(&xd, &y)).abs() < TOL, "{xd:?} {y:?}");
                checked += 1;
            }
        }
    }
    checked
}

pub fn build(kinds: &[ColumnKind], cells: &[Vec<u8>]) -> DataTable {
    let schema =
        TableSchema::new(kinds.iter().enumerate().map(|(i, k)| Column::new(format!("c{i}"), *k)).collect()).unwrap();
    let rows = cells
        .iter()
        .map(|r| {
            r.iter()
                .zip(kinds)
                .map(|(&d, k)| match k {
                    ColumnKind::Categorical => CAT[d as usize].to_owned(),
                    ColumnKind::Continuous => CONT[d as usize].to_string(),
                })
                .collect()
        })
        .collect();
    DataTable::from_text_rows(schema, rows).unwrap()
}

pub fn oracle_matrix(kinds: &[ColumnKind], cells: &[Vec<u8>]) -> Vec<Vec<f64>> {
    let k = kinds.len();
    let col = |c: usize| cells.iter().map(|r| r[c]).collect::<Vec<u8>>();
    let num = |c: usize| cells.iter().map(|r| CONT[r[c] as usize]).collect::<Vec<f64>>();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            m[i][j] = if i == j {
                1.0
            } else {
                match (kinds[i], kinds[j]) {
                    (ColumnKind::Continuous, ColumnKind::Continuous) => oracle_pearson(&num(i), &num(j)),
                    (ColumnKind::Categorical, ColumnKind::Categorical) => oracle_u(&col(i), &col(j)),
                    (ColumnKind::Categorical, ColumnKind::Continuous) => oracle_eta(&col(i), &num(j)),
                    (ColumnKind::Continuous, ColumnKind::Categorical) => oracle_eta(&col(j), &num(i)),
                }
            };
        }
    }
    m
}

/// Every table of 2..=6 rows and 1..=3 columns with two values per column,
/// compared against a partner table with the last column flipped.
pub fn check_small_tables() -> usize {
    let mut checked = 0usize;
    for n_cols in 1..=3usize {
        for kind_code in 0..(1usize << n_cols) {
            let kinds: Vec<ColumnKind> = (0..n_cols)
                .map(|c| if kind_code >> c & 1 == 1 { ColumnKind::Continuous } else { ColumnKind::Categorical })
                .collect();
            for n_rows in 2..=6usize {
                let cells_n = n_rows * n_cols;
                for code in 0..(1usize << cells_n) {
                    let flat = digits(code, 2, cells_n);
                    let cells: Vec<Vec<u8>> = flat.chunks(n_cols).map(<[u8]>::to_vec).collect();
                    let table = build(&kinds, &cells);
                    let got = association_matrix(&table).unwrap();
                    let want = oracle_matrix(&kinds, &cells);
                    assert_eq!(got.len(), n_cols);
                    for i in 0..n_cols {
                        for j in 0..n_cols {
                            assert!((got.get(i, j) - want[i][j]).abs() < TOL, "{kinds:?} {cells:?} ({i},{j})");
                        }
                    }
                    // Partner table: last cell of every row flipped.
                    let flipped: Vec<Vec<u8>> = cells
                        .iter()
                        .map(|r| {
                            let mut r = r.clone();
                            let l = r.len() - 1;
                            r[l] = 1 - r[l];
                            r
                        })
                        .collect();
                    let other = oracle_matrix(&kinds, &flipped);
                    let mut expect = 0.0;
                    for i in 0..n_cols {
                        for j in 0..n_cols {
                            if i != j {
                                expect += (want[i][j] - other[i][j]).abs();
                            }
                        }
                    }
                    if n_cols > 1 {
                        expect /= (n_cols * (n_cols - 1)) as f64;
                    }
                    let d = correlation_distance(&table, &build(&kinds, &flipped)).unwrap();
                    assert!((d - expect).abs() < TOL, "{kinds:?} {cells:?}");
                    assert!(d >= 0.0);
                    checked += 1;
                }
            }
        }
    }
    checked
}
