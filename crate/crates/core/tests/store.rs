use tabsynth::codec::{CodecSettings, PaddingStrategy, SerializationFormat};
use tabsynth::model::train::TrainSettings;
use tabsynth::model::{InitSpec, LmConfig};
use tabsynth::store::{
    chain_fine_tune, combined_pretrain, fine_tune, rank_foundations, train_new, ChainStart, ChainTask, Checkpoint,
    ProvenanceEntry, RegistryPolicy, RunSpec, StoreError,
};
use tabsynth::table::DataTable;

fn table(names: &[&str], rows: &[&[&str]]) -> DataTable {
    DataTable::infer(
        names.iter().map(|s| s.to_string()).collect(),
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    )
    .unwrap()
}

fn people() -> DataTable {
    table(&["Age", "Job"], &[&["32", "nurse"], &["57", "clerk"], &["41", "nurse"], &["23", "chef"]])
}

fn cars() -> DataTable {
    table(&["Make", "Price"], &[&["fiat", "9.5"], &["audi", "31"], &["fiat", "12"]])
}

fn spec(codec: CodecSettings, epochs: usize) -> RunSpec {
    RunSpec {
        codec,
        compression: true,
        lm: LmConfig {
            vocab_size: 0,
            context_length: 48,
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            dropout: 0.0,
            init: InitSpec::Random { seed: 3 },
        },
        train: TrainSettings { epochs, batch_size: 2, lr: 1e-3, seed: 5, ..TrainSettings::default() },
    }
}

fn pairs() -> CodecSettings {
    CodecSettings::new(SerializationFormat::Pairs, PaddingStrategy::Right, true)
}

#[test]
fn save_load_save_is_byte_identical() {
    for codec in [pairs(), CodecSettings::middle()] {
        let (ck, _) = train_new(&people(), "people", &spec(codec, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let path2 = dir.path().join("b.ckpt");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        assert!(!dir.path().join("a.ckpt.tmp").exists());
    }
}

#[test]
fn truncated_files_are_corrupt_not_crashes() {
    let (ck, _) = train_new(&people(), "people", &spec(pairs(), 0)).unwrap();
    let bytes = ck.to_bytes();
    for cut in (0..bytes.len()).step_by(7) {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(StoreError::Corrupt(_)) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(StoreError::Corrupt(_))));
}

#[test]
fn foreign_version_is_a_structured_error() {
    let (ck, _) = train_new(&people(), "people", &spec(pairs(), 0)).unwrap();
    let mut bytes = ck.to_bytes();
    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    match Checkpoint::from_bytes(&bytes) {
        Err(StoreError::IncompatibleVersion { found: 7, supported: 1 }) => {}
        other => panic!("{other:?}"),
    }
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(StoreError::Corrupt(_))));
}

#[test]
fn flipped_weight_count_is_rejected() {
    let (ck, _) = train_new(&people(), "people", &spec(pairs(), 0)).unwrap();
    let mut bytes = ck.to_bytes();
    let n = ck.model.num_params() as u64;
    let needle = n.to_le_bytes();
    let at = bytes.windows(8).rposition(|w| w == needle).unwrap();
    bytes[at..at + 8].copy_from_slice(&(n + 1).to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(StoreError::Corrupt(_))));
}

#[test]
fn zero_epoch_fine_tune_keeps_weights_and_adds_rows() {
    let (base, _) = train_new(&people(), "people", &spec(pairs(), 1)).unwrap();
    let (tuned, report) = fine_tune(
        &base,
        "base.ckpt",
        &cars(),
        "cars",
        None,
        pairs(),
        &TrainSettings { epochs: 0, ..spec(pairs(), 0).train },
    )
    .unwrap();
    assert!(tuned.registry.len() > base.registry.len());
    tuned.registry.check_extends(&base.registry).unwrap();
    let old = base.model.weights.wte.len();
    assert_eq!(&tuned.model.weights.wte[..old], &base.model.weights.wte[..]);
    assert_eq!(tuned.model.weights.blocks, base.model.weights.blocks);
    assert_eq!(report.warm_start.as_deref(), Some("base.ckpt"));
    assert_eq!(tuned.provenance, vec![ProvenanceEntry::new("people", 1), ProvenanceEntry::new("cars", 0)]);
}

#[test]
fn remapped_registry_is_refused() {
    let (base, _) = train_new(&people(), "people", &spec(pairs(), 0)).unwrap();
    let other = tabsynth::tokenizer::TokenRegistry::build(&[&cars()], true, None).unwrap();
    let r = fine_tune(&base, "base", &cars(), "cars", Some(other), pairs(), &spec(pairs(), 0).train);
    assert!(matches!(r, Err(StoreError::Registry(_))));
}

#[test]
fn chain_records_provenance_and_saves_intermediates() {
    let dir = tempfile::tempdir().unwrap();
    let (p, c) = (people(), cars());
    let tasks =
        [ChainTask { name: "A".into(), table: &p, epochs: 2 }, ChainTask { name: "B".into(), table: &c, epochs: 1 }];
    let out = chain_fine_tune(ChainStart::Random, &tasks, RegistryPolicy::Shared, &spec(pairs(), 0), Some(dir.path()))
        .unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[1].0.provenance, vec![ProvenanceEntry::new("A", 2), ProvenanceEntry::new("B", 1)]);
    out[1].0.registry.check_extends(&out[0].0.registry).unwrap();
    assert!(dir.path().join("00-A.ckpt").exists());
    assert_eq!(Checkpoint::load(&dir.path().join("01-B.ckpt")).unwrap(), out[1].0);
    assert!(out[1].1.warm_start.as_deref().unwrap().ends_with("00-A.ckpt"));
}

#[test]
fn single_task_chain_equals_plain_training() {
    let p = people();
    let s = spec(pairs(), 3);
    let (plain, plain_report) = train_new(&p, "A", &s).unwrap();
    let tasks = [ChainTask { name: "A".into(), table: &p, epochs: 3 }];
    let chained = chain_fine_tune(ChainStart::Random, &tasks, RegistryPolicy::Shared, &s, None).unwrap();
    assert_eq!(chained[0].0, plain);
    assert_eq!(chained[0].1.final_loss, plain_report.final_loss);
}

#[test]
fn isolated_chain_transfers_only_the_body() {
    let (p, c) = (people(), cars());
    let tasks =
        [ChainTask { name: "A".into(), table: &p, epochs: 1 }, ChainTask { name: "B".into(), table: &c, epochs: 0 }];
    let out = chain_fine_tune(ChainStart::Random, &tasks, RegistryPolicy::Isolated, &spec(pairs(), 0), None).unwrap();
    assert_eq!(out[1].0.model.weights.blocks, out[0].0.model.weights.blocks);
    assert!(out[1].0.registry.id("Age").is_none());
    assert!(out[1].0.registry.id("Make").is_some());
}

#[test]
fn combined_pretraining_covers_every_table() {
    let (p, c) = (people(), cars());
    let s = spec(pairs(), 1);
    let (ck, _) = combined_pretrain(&[("people", &p), ("cars", &c)], &s).unwrap();
    for s in ["Age", "Job", "Make", "Price", "nurse", "clerk", "chef", "fiat", "audi"] {
        assert!(ck.registry.is_single_token(s), "{s}");
    }
    assert_eq!(ck.provenance, vec![ProvenanceEntry::new("combined", 1)]);
    assert!(ck.schema.is_none());
    assert!(matches!(combined_pretrain(&[("p", &p)], &spec(CodecSettings::middle(), 1)), Err(StoreError::Invalid(_))));
}

#[test]
fn combined_over_one_table_matches_plain_training() {
    let p = people();
    let s = spec(pairs(), 2);
    let (plain, _) = train_new(&p, "people", &s).unwrap();
    let (combined, _) = combined_pretrain(&[("people", &p)], &s).unwrap();
    assert_eq!(combined.model, plain.model);
}

#[test]
fn ranking_orders_by_final_loss() {
    let (p, c) = (people(), cars());
    let (a, _) = train_new(&p, "people", &spec(pairs(), 2)).unwrap();
    let (b, _) = train_new(&c, "cars", &spec(pairs(), 2)).unwrap();
    let ranked = rank_foundations(&[("a".into(), a), ("b".into(), b)], &p, "people", &spec(pairs(), 1).train).unwrap();
    assert_eq!(ranked.len(), 2);
    assert!(ranked[0].final_loss <= ranked[1].final_loss);
}
