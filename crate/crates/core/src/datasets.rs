//! Seeded generators for tables shaped like common benchmark datasets, so
//! benchmarks and smoke runs work offline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::table::{Column, ColumnKind, DataTable, TableError, TableSchema, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// 13 columns: 6 continuous, 7 categorical; binary target `PersonalLoan`.
    Loan,
    /// 15 columns: 6 continuous, 9 categorical; binary target `income`.
    Adult,
    /// 7 columns: 4 continuous, 3 categorical; regression target `charges`.
    Insurance,
    /// 4 columns with a deterministic `Color -> Shape` rule and `X`, `Y`
    /// correlated at ρ = 0.9.
    Planted,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Loan, Shape::Adult, Shape::Insurance, Shape::Planted];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Loan => "loan",
            Shape::Adult => "adult",
            Shape::Insurance => "insurance",
            Shape::Planted => "planted",
        }
    }

    pub fn generate(self, rows: usize, seed: u64) -> Result<DataTable, TableError> {
        match self {
            Shape::Loan => loan(rows, seed),
            Shape::Adult => adult(rows, seed),
            Shape::Insurance => insurance(rows, seed),
            Shape::Planted => planted(rows, seed),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Shape::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown dataset shape {s:?} (loan|adult|insurance|planted)"))
    }
}

fn schema(cols: &[(&str, ColumnKind)], target: &str, task: Task) -> Result<TableSchema, TableError> {
    let s = TableSchema::new(cols.iter().map(|(n, k)| Column::new(*n, *k)).collect())?;
    let t = s.index_of(target);
    s.with_target(t, task)
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut u = rng.random::<f64>() * total;
    for (s, w) in items {
        if u < *w {
            return s;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

fn flag<R: Rng>(rng: &mut R, p: f64) -> String {
    if rng.random_bool(p.clamp(0.0, 1.0)) { "1" } else { "0" }.to_owned()
}

use ColumnKind::{Categorical as Cat, Continuous as Num};

pub const PLANTED_RULE: [(&str, &str); 4] =
    [("red", "circle"), ("green", "square"), ("blue", "star"), ("gray", "circle")];
pub const PLANTED_RHO: f64 = 0.9;

/// `Color` is uniform over four values and determines `Shape`; `X` and `Y`
/// are integer-rounded bivariate normals (mean 50, sd 15) with ρ = 0.9.
pub fn planted(rows: usize, seed: u64) -> Result<DataTable, TableError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).expect("valid normal");
    let s = schema(&[("Color", Cat), ("Shape", Cat), ("X", Num), ("Y", Num)], "Shape", Task::MulticlassClassification)?;
    let data = (0..rows)
        .map(|_| {
            let (color, shape) = PLANTED_RULE[rng.random_range(0..PLANTED_RULE.len())];
            let a: f64 = z.sample(&mut rng);
            let b: f64 = z.sample(&mut rng);
            let y = PLANTED_RHO * a + (1.0 - PLANTED_RHO * PLANTED_RHO).sqrt() * b;
            let x = (50.0 + 15.0 * a).round().clamp(0.0, 99.0);
            let y = (50.0 + 15.0 * y).round().clamp(0.0, 99.0);
            vec![color.to_owned(), shape.to_owned(), x.to_string(), y.to_string()]
        })
        .collect();
    DataTable::from_text_rows(s, data)
}

pub fn loan(rows: usize, seed: u64) -> Result<DataTable, TableError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = schema(
        &[
            ("Age", Num),
            ("Experience", Num),
            ("Income", Num),
            ("ZIPCode", Num),
            ("Family", Cat),
            ("CCAvg", Num),
            ("Education", Cat),
            ("Mortgage", Num),
            ("PersonalLoan", Cat),
            ("SecuritiesAccount", Cat),
            ("CDAccount", Cat),
            ("Online", Cat),
            ("CreditCard", Cat),
        ],
        "PersonalLoan",
        Task::BinaryClassification,
    )?;
    let data = (0..rows)
        .map(|_| {
            let age: u32 = rng.random_range(23..=67);
            let exp = age.saturating_sub(rng.random_range(22..=26));
            let income: u32 = rng.random_range(8..=224);
            let zip: u32 = rng.random_range(90005..=96651);
            let family = pick(&mut rng, &[("1", 0.29), ("2", 0.26), ("3", 0.2), ("4", 0.25)]);
            let ccavg = (income as f64 / 40.0 * rng.random_range(0.2..1.8)).min(10.0);
            let education = pick(&mut rng, &[("1", 0.42), ("2", 0.28), ("3", 0.3)]);
            let mortgage = if rng.random_bool(0.3) { rng.random_range(75..=635) } else { 0 };
            let p_loan = if income > 110 && education != "1" { 0.6 } else { 0.02 };
            let cd = flag(&mut rng, 0.06);
            vec![
                age.to_string(),
                exp.to_string(),
                income.to_string(),
                zip.to_string(),
                family.to_owned(),
                format!("{ccavg:.1}"),
                education.to_owned(),
                mortgage.to_string(),
                flag(&mut rng, p_loan),
                flag(&mut rng, 0.1),
                cd,
                flag(&mut rng, 0.6),
                flag(&mut rng, 0.29),
            ]
        })
        .collect();
    DataTable::from_text_rows(s, data)
}

pub fn adult(rows: usize, seed: u64) -> Result<DataTable, TableError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = schema(
        &[
            ("age", Num),
            ("workclass", Cat),
            ("fnlwgt", Num),
            ("education", Cat),
            ("education-num", Num),
            ("marital-status", Cat),
            ("occupation", Cat),
            ("relationship", Cat),
            ("race", Cat),
            ("sex", Cat),
            ("capital-gain", Num),
            ("capital-loss", Num),
            ("hours-per-week", Num),
            ("native-country", Cat),
            ("income", Cat),
        ],
        "income",
        Task::BinaryClassification,
    )?;
    let educations = [
        ("HS-grad", 9, 0.35),
        ("Some-college", 10, 0.25),
        ("Bachelors", 13, 0.25),
        ("Masters", 14, 0.1),
        ("Doctorate", 16, 0.05),
    ];
    let data = (0..rows)
        .map(|_| {
            let age: u32 = rng.random_range(17..=90);
            let e = pick(&mut rng, &educations.map(|(n, _, w)| (n, w)));
            let num = educations.iter().find(|x| x.0 == e).map_or(9, |x| x.1);
            let married = pick(&mut rng, &[("Married-civ-spouse", 0.46), ("Never-married", 0.33), ("Divorced", 0.21)]);
            let sex = pick(&mut rng, &[("Male", 0.67), ("Female", 0.33)]);
            let relationship = match (married, sex) {
                ("Married-civ-spouse", "Male") => "Husband",
                ("Married-civ-spouse", _) => "Wife",
                ("Never-married", _) => "Own-child",
                _ => "Not-in-family",
            };
            let hours: u32 = rng.random_range(20..=60);
            let p_rich = 0.05 + 0.05 * (num as f64 - 9.0) + if married == "Married-civ-spouse" { 0.2 } else { 0.0 };
            let gain = if rng.random_bool(0.08) { rng.random_range(1000..=20000) } else { 0 };
            let loss = if rng.random_bool(0.05) { rng.random_range(1000..=2500) } else { 0 };
            vec![
                age.to_string(),
                pick(&mut rng, &[("Private", 0.7), ("Self-emp", 0.15), ("Gov", 0.15)]).to_owned(),
                rng.random_range(12285..=1484705u32).to_string(),
                e.to_owned(),
                num.to_string(),
                married.to_owned(),
                pick(
                    &mut rng,
                    &[("Craft-repair", 0.3), ("Prof-specialty", 0.3), ("Sales", 0.2), ("Adm-clerical", 0.2)],
                )
                .to_owned(),
                relationship.to_owned(),
                pick(&mut rng, &[("White", 0.85), ("Black", 0.1), ("Other", 0.05)]).to_owned(),
                sex.to_owned(),
                gain.to_string(),
                loss.to_string(),
                hours.to_string(),
                pick(&mut rng, &[("United-States", 0.9), ("Mexico", 0.05), ("Other", 0.05)]).to_owned(),
                if rng.random_bool(p_rich.clamp(0.0, 1.0)) { ">50K" } else { "<=50K" }.to_owned(),
            ]
        })
        .collect();
    DataTable::from_text_rows(s, data)
}

pub fn insurance(rows: usize, seed: u64) -> Result<DataTable, TableError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 2000.0).expect("valid normal");
    let s = schema(
        &[
            ("age", Num),
            ("sex", Cat),
            ("bmi", Num),
            ("children", Num),
            ("smoker", Cat),
            ("region", Cat),
            ("charges", Num),
        ],
        "charges",
        Task::Regression,
    )?;
    let data = (0..rows)
        .map(|_| {
            let age: u32 = rng.random_range(18..=64);
            let bmi: f64 = rng.random_range(16.0..48.0);
            let children: u32 = rng.random_range(0..=5);
            let smoker = pick(&mut rng, &[("yes", 0.2), ("no", 0.8)]);
            let base = 250.0 * age as f64 + 300.0 * (bmi - 30.0).max(0.0) + 500.0 * children as f64;
            let charges = (base + if smoker == "yes" { 23000.0 } else { 0.0 } + noise.sample(&mut rng)).max(1100.0);
            vec![
                age.to_string(),
                pick(&mut rng, &[("male", 0.5), ("female", 0.5)]).to_owned(),
                format!("{bmi:.2}"),
                children.to_string(),
                smoker.to_owned(),
                pick(&mut rng, &[("northeast", 0.25), ("northwest", 0.25), ("southeast", 0.25), ("southwest", 0.25)])
                    .to_owned(),
                format!("{charges:.2}"),
            ]
        })
        .collect();
    DataTable::from_text_rows(s, data)
}
