use tabsynth::codec::{CodecSettings, PaddingStrategy, ParseErrorKind, SerializationFormat};
use tabsynth::model::train::TrainSettings;
use tabsynth::model::{InitSpec, LmConfig};
use tabsynth::sampler::SamplingSpec;
use tabsynth::store::{train_new, Checkpoint, RunSpec};
use tabsynth::table::DataTable;

fn table(rows: &[[&str; 3]]) -> DataTable {
    DataTable::infer(
        vec!["Age".into(), "Job".into(), "City".into()],
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    )
    .unwrap()
}

fn run(codec: CodecSettings, epochs: usize, lr: f64) -> RunSpec {
    RunSpec {
        codec,
        compression: true,
        lm: LmConfig {
            vocab_size: 0,
            context_length: 40,
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            dropout: 0.0,
            init: InitSpec::Random { seed: 1 },
        },
        train: TrainSettings { epochs, batch_size: 32, lr, seed: 2, ..TrainSettings::default() },
    }
}

fn memorized(codec: CodecSettings) -> Checkpoint {
    let t = table(&vec![["32", "nurse", "Oslo"]; 200]);
    let (ck, report) = train_new(&t, "one", &run(codec, 30, 3e-3)).unwrap();
    assert!(report.final_loss < 0.1, "final loss {}", report.final_loss);
    ck
}

#[test]
fn memorized_row_is_reproduced_in_every_format() {
    for codec in [
        CodecSettings::middle(),
        CodecSettings::new(SerializationFormat::Pairs, PaddingStrategy::Right, false),
        CodecSettings::new(SerializationFormat::Verbose, PaddingStrategy::Left, false),
    ] {
        let ck = memorized(codec);
        let spec = SamplingSpec { n_rows: 5, greedy: true, seed: 3, ..SamplingSpec::default() };
        let (rows, report) = ck.synthesize(&spec).unwrap();
        assert_eq!(report.accepted, 5, "{codec:?}: {report:?}");
        assert_eq!(report.rejected(), 0);
        for r in rows.text_rows() {
            assert_eq!(r, vec!["32", "nurse", "Oslo"]);
        }
    }
}

#[test]
fn middle_sampling_is_seeded() {
    let t = table(&[["32", "nurse", "Oslo"], ["41", "chef", "Rome"], ["5", "clerk", "Oslo"], ["77", "nurse", "Rome"]]);
    let (ck, _) = train_new(&t, "t", &run(CodecSettings::middle(), 2, 1e-3)).unwrap();
    let spec = SamplingSpec { n_rows: 4, seed: 11, ..SamplingSpec::default() };
    let a = ck.synthesize(&spec).unwrap();
    let b = ck.synthesize(&spec).unwrap();
    assert_eq!(a, b);
}

#[test]
fn conditioned_rows_carry_the_condition() {
    let rows: Vec<[&str; 3]> = (0..60)
        .map(|i| match i % 3 {
            0 => ["30", "nurse", "Oslo"],
            1 => ["41", "chef", "Rome"],
            _ => ["52", "clerk", "Oslo"],
        })
        .collect();
    let t = table(&rows);
    let codec = CodecSettings::new(SerializationFormat::Pairs, PaddingStrategy::Right, true);
    let mut spec = run(codec, 60, 3e-3);
    spec.train.batch_size = 16;
    let (ck, _) = train_new(&t, "t", &spec).unwrap();
    let spec = SamplingSpec {
        n_rows: 10,
        condition: vec![("Job".into(), "nurse".into())],
        seed: 4,
        ..SamplingSpec::default()
    };
    let (out, report) = ck.synthesize(&spec).unwrap();
    assert!(report.accepted > 0, "{report:?}");
    for r in out.text_rows() {
        assert_eq!(r[1], "nurse");
    }
}

#[test]
fn fixed_order_checkpoints_only_accept_prefix_conditions() {
    let t = table(&[["32", "nurse", "Oslo"], ["41", "chef", "Rome"]]);
    let (ck, _) = train_new(&t, "t", &run(CodecSettings::middle(), 0, 1e-3)).unwrap();
    let bad = SamplingSpec { n_rows: 1, condition: vec![("City".into(), "Oslo".into())], ..SamplingSpec::default() };
    assert!(ck.synthesize(&bad).is_err());
    let unknown = SamplingSpec { n_rows: 1, condition: vec![("Age".into(), "x".into())], ..SamplingSpec::default() };
    assert!(ck.synthesize(&unknown).is_err());
    let ok = SamplingSpec { n_rows: 2, condition: vec![("Age".into(), "41".into())], ..SamplingSpec::default() };
    let (out, _) = ck.synthesize(&ok).unwrap();
    assert!(out.text_rows().iter().all(|r| r[0] == "41"));
}

#[test]
fn untrained_model_rejections_add_up() {
    let t = table(&[["32", "nurse", "Oslo"], ["41", "chef", "Rome"]]);
    for codec in
        [CodecSettings::middle(), CodecSettings::new(SerializationFormat::Verbose, PaddingStrategy::Right, true)]
    {
        let (ck, _) = train_new(&t, "t", &run(codec, 0, 1e-3)).unwrap();
        let spec = SamplingSpec { n_rows: 20, seed: 9, ..SamplingSpec::default() };
        let (out, report) = ck.synthesize(&spec).unwrap();
        assert_eq!(report.rejected(), report.attempts - report.accepted);
        assert_eq!(out.len(), report.accepted);
        assert!(report.attempts <= 200);
        assert!(report.acceptance_rate() < 0.5, "{report:?}");
        if !report.complete() {
            assert_eq!(report.attempts, 200);
        }
        assert!(report.rejections.keys().all(|k| ParseErrorKind::ALL.contains(k)));
    }
}
