use super::*;
use crate::error::Error;
use crate::harness::{CurvePoint, EpisodeResult, EpochRecord, InitMode, RunMetrics, TestReport, TrainerState};
use crate::model::{BackboneSpec, ModelSpec, PromptModel, PromptSpec, PromptTemplate, Vocab};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(embed_dim: usize) -> PromptModel {
    let mut vocab = Vocab::new();
    for w in ["the", "w1", "w2"] {
        vocab.insert(w);
    }
    let template = PromptTemplate::parse("[CLS] {x} {soft:2} the [MASK] [SEP]", &vocab).unwrap();
    let spec = ModelSpec {
        vocab_size: vocab.len(),
        soft_tokens: 2,
        backbone: BackboneSpec {
            embed_dim,
            hidden_dim: 3,
            depth: 1,
            max_len: 12,
            ..BackboneSpec::default()
        },
        prompt: PromptSpec {
            lstm_hidden: 2,
            lstm_layers: 1,
            mlp_hidden: 2,
            ..PromptSpec::default()
        },
    };
    PromptModel::new(spec, template).unwrap()
}

fn checkpoint(model: &PromptModel, seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.init_params(seed);
    let mut state = TrainerState::new(&params);
    state.best_params = model.init_params(seed + 1);
    for x in state.optimizer.m.iter_mut().chain(state.optimizer.v.iter_mut()) {
        *x = rng.random_range(-1.0..1.0);
    }
    state.optimizer.step = 7;
    state.epoch = 3;
    state.bad_epochs = 1;
    state.history = (1..=3)
        .map(|epoch| EpochRecord {
            epoch,
            train_loss: rng.random(),
            val_accuracy: rng.random(),
            val_loss: if epoch == 2 { f64::NAN } else { rng.random() },
        })
        .collect();
    Checkpoint {
        spec_hash: spec_hash(model).unwrap(),
        seed,
        state,
    }
}

fn same_bits(a: &Checkpoint, b: &Checkpoint) -> bool {
    let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let hist = |c: &Checkpoint| {
        c.state
            .history
            .iter()
            .map(|h| (h.epoch, h.train_loss.to_bits(), h.val_accuracy.to_bits(), h.val_loss.to_bits()))
            .collect::<Vec<_>>()
    };
    a.spec_hash == b.spec_hash
        && a.seed == b.seed
        && a.state.params == b.state.params
        && a.state.best_params == b.state.best_params
        && a.state.best_val.to_bits() == b.state.best_val.to_bits()
        && bits(&a.state.optimizer.m) == bits(&b.state.optimizer.m)
        && bits(&a.state.optimizer.v) == bits(&b.state.optimizer.v)
        && a.state.optimizer.step == b.state.optimizer.step
        && (a.state.epoch, a.state.bad_epochs, a.state.finished) == (b.state.epoch, b.state.bad_epochs, b.state.finished)
        && hist(a) == hist(b)
}

#[test]
fn round_trip_through_a_file() {
    let m = model(3);
    let ck = checkpoint(&m, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path, &m).unwrap();
    assert!(same_bits(&ck, &back));
    assert_eq!(back.state.best_val, f64::NEG_INFINITY);
    save_checkpoint(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), encode_checkpoint(&ck).unwrap());
}

#[test]
fn truncated_file_is_an_integrity_error() {
    let m = model(3);
    let bytes = encode_checkpoint(&checkpoint(&m, 1)).unwrap();
    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        let r = decode_checkpoint(&bytes[..cut]);
        assert!(matches!(r, Err(Error::CheckpointIntegrity(_))), "cut {cut}: {r:?}");
    }
}

#[test]
fn flipped_byte_fails_the_checksum() {
    let m = model(3);
    let mut bytes = encode_checkpoint(&checkpoint(&m, 1)).unwrap();
    let i = bytes.len() - 100;
    bytes[i] ^= 0x10;
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointIntegrity(_))));
}

#[test]
fn other_version_is_rejected_explicitly() {
    let m = model(3);
    let mut bytes = encode_checkpoint(&checkpoint(&m, 1)).unwrap();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match decode_checkpoint(&bytes) {
        Err(Error::CheckpointVersion { found, expected }) => {
            assert_eq!(found, CHECKPOINT_VERSION + 1);
            assert_eq!(expected, CHECKPOINT_VERSION);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn checkpoint_for_another_spec_is_rejected() {
    let a = model(3);
    let b = model(4);
    assert_ne!(spec_hash(&a).unwrap(), spec_hash(&b).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&checkpoint(&a, 2), &path).unwrap();
    assert!(matches!(load_checkpoint(&path, &b), Err(Error::SpecMismatch { .. })));
    assert!(read_checkpoint(&path).is_ok());
}

#[test]
fn run_dir_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let held = RunDir::open(&root).unwrap();
    assert!(matches!(RunDir::open(&root), Err(Error::Locked(p)) if p == root));
    drop(held);
    let again = RunDir::open(&root).unwrap();
    assert!(again.path(LOCK_FILE).exists());
}

fn metrics() -> RunMetrics {
    RunMetrics {
        config_hash: "abc".into(),
        init: InitMode::Meta,
        train: vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_accuracy: 0.25,
            val_loss: 1.0,
        }],
        test: TestReport {
            episodes: (0..3)
                .map(|index| EpisodeResult {
                    index,
                    accuracy: 0.5,
                    loss: 0.75,
                })
                .collect(),
            curve: vec![
                CurvePoint {
                    step: 0,
                    loss: 1.0,
                    accuracy: 0.25,
                },
                CurvePoint {
                    step: 1,
                    loss: 0.75,
                    accuracy: 0.5,
                },
            ],
            accuracy_mean: 0.5,
            accuracy_std: 0.0,
            loss_mean: 0.75,
        },
    }
}

#[test]
fn metric_files_have_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::open(dir.path()).unwrap();
    write_run_metrics(&run, &metrics()).unwrap();
    let test = std::fs::read_to_string(run.path(TEST_CSV)).unwrap();
    let lines: Vec<&str> = test.lines().collect();
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert_eq!(lines[0], "episode,accuracy,loss");
    assert_eq!(lines[4], "mean,0.5,0.75");
    let curve = std::fs::read_to_string(run.path(CURVE_CSV)).unwrap();
    assert_eq!(curve, "step,loss,accuracy\n0,1,0.25\n1,0.75,0.5\n");
    let train = std::fs::read_to_string(run.path(TRAIN_CSV)).unwrap();
    assert_eq!(train.lines().count(), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.path(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(summary["test_episodes"], 3);
    assert_eq!(summary["best_val_accuracy"], 0.25);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn encode_decode_is_identity(seed in 0u64..10_000) {
        let m = model(3);
        let ck = checkpoint(&m, seed);
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        prop_assert!(same_bits(&ck, &back));
    }
}
