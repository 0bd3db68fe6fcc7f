#[path = "support/metric_oracles.rs"]
mod metric_oracles;

use metric_oracles::check_vector_pairs;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabsynth::eval::utility::{ml_utility, EvalReport, UtilityMetric, CSV_HEADER};
use tabsynth::eval::{association_matrix, correlation_distance};
use tabsynth::table::{Column, ColumnKind, DataTable, TableSchema, Task};

#[test]
fn sub_metrics_match_oracles_on_every_small_vector_pair() {
    assert_eq!(check_vector_pairs(), (1..=6u32).map(|n| 9usize.pow(n)).sum::<usize>());
}

#[test]
fn identical_continuous_columns_are_fully_correlated() {
    let t =
        DataTable::infer(vec!["x".into(), "y".into()], (0..5).map(|i| vec![i.to_string(), i.to_string()]).collect())
            .unwrap();
    let m = association_matrix(&t).unwrap();
    assert_eq!(m.get(0, 1), 1.0);
    assert_eq!(m.get(1, 0), 1.0);
    assert!(association_matrix(&t.select(&[0])).is_err());
}

#[test]
fn independent_columns_have_small_association() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rows: Vec<Vec<String>> = (0..10_000)
        .map(|_| vec![["p", "q", "r"][rng.random_range(0..3)].to_owned(), format!("{:.4}", rng.random::<f64>())])
        .collect();
    let t = DataTable::infer(vec!["c".into(), "v".into()], rows).unwrap();
    let m = association_matrix(&t).unwrap();
    assert!(m.get(0, 1).abs() < 0.05, "{}", m.get(0, 1));
    assert!(m.get(1, 0).abs() < 0.05);
}

fn correlated(n: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..10.0);
            let g = if x > 5.0 { "hi" } else { "lo" };
            vec![format!("{x:.3}"), format!("{:.3}", 2.0 * x + rng.random_range(-1.0..1.0)), g.to_owned()]
        })
        .collect();
    DataTable::infer(vec!["x".into(), "y".into(), "g".into()], rows).unwrap()
}

#[test]
fn shuffled_pair_raises_the_distance() {
    let real = correlated(300, 1);
    assert_eq!(correlation_distance(&real, &real).unwrap(), 0.0);
    let mut rows = real.text_rows();
    let mut ys: Vec<String> = rows.iter().map(|r| r[1].clone()).collect();
    ys.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    for (r, y) in rows.iter_mut().zip(ys) {
        r[1] = y;
    }
    let synth = DataTable::from_text_rows(real.schema().clone(), rows).unwrap();
    assert!(correlation_distance(&real, &synth).unwrap() > 0.0);
    let other = DataTable::infer(vec!["a".into()], vec![vec!["1".into()], vec!["2".into()]]).unwrap();
    assert!(correlation_distance(&real, &other).is_err());
}

proptest! {
    #[test]
    fn row_order_does_not_change_metrics(seed in 0u64..1000, n in 3usize..40) {
        let t = correlated(n, seed);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 5));
        let p = t.select(&idx);
        let (a, b) = (association_matrix(&t).unwrap(), association_matrix(&p).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-12);
                prop_assert!(a.get(i, j) >= -1.0 && a.get(i, j) <= 1.0);
            }
        }
        prop_assert!(correlation_distance(&t, &p).unwrap() < 1e-12);
    }
}

fn labeled(n: usize, seed: u64, task: Task) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..10.0);
            let c = ["u", "v"][rng.random_range(0..2)];
            let y = match task {
                Task::Regression => format!("{:.3}", 50.0 + 3.0 * x + if c == "u" { 5.0 } else { 0.0 }),
                _ => (if x > 7.0 { "yes" } else { "no" }).to_owned(),
            };
            vec![format!("{x:.3}"), c.to_owned(), y]
        })
        .collect();
    let kinds = [
        ColumnKind::Continuous,
        ColumnKind::Categorical,
        if task == Task::Regression { ColumnKind::Continuous } else { ColumnKind::Categorical },
    ];
    let schema = TableSchema::new(["x", "c", "y"].iter().zip(kinds).map(|(n, k)| Column::new(*n, k)).collect())
        .unwrap()
        .with_target(Some(2), task)
        .unwrap();
    DataTable::from_text_rows(schema, rows).unwrap()
}

#[test]
fn separable_binary_data_scores_perfect_tree_f1() {
    let (train, test) = (labeled(200, 1, Task::BinaryClassification), labeled(100, 2, Task::BinaryClassification));
    let u = ml_utility(None, &train, &test).unwrap();
    assert_eq!(u.metric, UtilityMetric::F1);
    assert_eq!(u.rows[0].learner.as_str(), "decision_tree");
    assert_eq!(u.rows[0].synthetic, 1.0);
    for r in &u.rows {
        assert!((0.0..=1.0).contains(&r.synthetic));
    }
}

#[test]
fn synthetic_equal_to_real_matches_the_reference_row() {
    for task in [Task::BinaryClassification, Task::Regression] {
        let (train, test) = (labeled(150, 3, task), labeled(60, 4, task));
        let u = ml_utility(Some(&train), &train, &test).unwrap();
        for r in &u.rows {
            assert_eq!(r.real, Some(r.synthetic));
        }
        if task == Task::Regression {
            assert_eq!(u.metric, UtilityMetric::Mape);
            assert!(u.mean_synthetic() >= 0.0 && u.mean_synthetic() < 0.01, "{}", u.mean_synthetic());
        }
    }
}

#[test]
fn report_csv_has_the_documented_header() {
    let (train, test) = (labeled(120, 5, Task::BinaryClassification), labeled(40, 6, Task::BinaryClassification));
    let synth = labeled(120, 7, Task::BinaryClassification);
    let r = EvalReport::compute(("real", "synth", Some("test")), &train, &synth, Some(&test), 9).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines[0], "metric,learner,real,synthetic");
    assert!(lines[1].starts_with("f1,decision_tree,"));
    assert!(lines[2].starts_with("f1,logistic_regression,"));
    assert!(lines[3].starts_with("f1,mean,"));
    assert!(lines[4].starts_with("correlation_distance,,,"));
    assert!(r.to_text().contains("correlation_distance"));
    let same = EvalReport::compute(("real", "real", None), &train, &train, None, 9).unwrap();
    assert_eq!(same.correlation_distance, 0.0);
    assert!(same.utility.is_none());
}

#[test]
fn unseen_test_labels_are_reported() {
    let train = labeled(50, 8, Task::MulticlassClassification);
    let mut rows = train.text_rows();
    rows[0][2] = "maybe".into();
    let test = DataTable::from_text_rows(train.schema().clone(), rows).unwrap();
    let u = ml_utility(None, &train, &test).unwrap();
    assert_eq!(u.unseen_labels, vec!["maybe".to_owned()]);
    assert!(u.mean_synthetic() < 1.0);
}
