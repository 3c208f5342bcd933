//! Checkpoint layout and round-trip guarantees.

use dtrn_tensor::checkpoint::{load_into, read_entries, save};
use dtrn_tensor::{stream_rng, ParamStore, Tensor, TensorError};

fn sample_store() -> ParamStore<f32> {
    let mut rng = stream_rng(41, 0);
    let mut store = ParamStore::new();
    store
        .add("emb.table", Tensor::uniform(&[5, 3], -0.25, 0.25, &mut rng))
        .unwrap();
    store
        .add("head.w", Tensor::uniform(&[3, 2], -0.5, 0.5, &mut rng))
        .unwrap();
    store.add("head.b", Tensor::zeros(&[2])).unwrap();
    store
}

#[test]
fn golden_single_parameter_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.ckpt");
    let mut store = ParamStore::<f32>::new();
    store
        .add("w", Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    save(&store, &path).unwrap();

    let mut expect = Vec::new();
    expect.extend_from_slice(b"DTRN0001");
    expect.extend_from_slice(&1u64.to_le_bytes()); // count
    expect.extend_from_slice(&1u64.to_le_bytes()); // name length
    expect.extend_from_slice(b"w");
    expect.extend_from_slice(&1u64.to_le_bytes()); // rank
    expect.extend_from_slice(&2u64.to_le_bytes()); // dim
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&2.0f32.to_le_bytes());
    assert_eq!(std::fs::read(&path).unwrap(), expect);
}

#[test]
fn save_load_resave_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    let store = sample_store();
    save(&store, &first).unwrap();

    let mut restored = sample_store();
    // Scrub values so the reload is observable.
    for id in restored.ids().collect::<Vec<_>>() {
        restored.value_mut(id).data_mut().fill(0.0);
    }
    load_into(&mut restored, &first).unwrap();
    save(&restored, &second).unwrap();
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn bad_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"NOTDTRN0rest").unwrap();
    let err = read_entries(&path).unwrap_err();
    assert!(err.to_string().contains("bad magic"), "{err}");
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.ckpt");
    let store = sample_store();
    save(&store, &full).unwrap();
    let bytes = std::fs::read(&full).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let err = read_entries(&cut).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn missing_file_is_an_error() {
    let err = read_entries(std::path::Path::new("/nonexistent/nope.ckpt")).unwrap_err();
    assert!(matches!(err, TensorError::Io(_)));
}

#[test]
fn mismatched_registry_is_rejected_before_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save(&sample_store(), &path).unwrap();

    // Different shape for one entry.
    let mut rng = stream_rng(41, 0);
    let mut other = ParamStore::<f32>::new();
    other
        .add("emb.table", Tensor::uniform(&[5, 3], -0.25, 0.25, &mut rng))
        .unwrap();
    other.add("head.w", Tensor::zeros(&[2, 2])).unwrap();
    other.add("head.b", Tensor::zeros(&[2])).unwrap();
    let before: Vec<f32> = other.value(other.id("head.w").unwrap()).data().to_vec();
    let err = load_into(&mut other, &path).unwrap_err();
    assert!(err.to_string().contains("head.w"), "{err}");
    assert_eq!(
        other.value(other.id("head.w").unwrap()).data(),
        before.as_slice()
    );

    // Missing parameter.
    let mut short = ParamStore::<f32>::new();
    short.add("emb.table", Tensor::zeros(&[5, 3])).unwrap();
    let err = load_into(&mut short, &path).unwrap_err();
    assert!(err.to_string().contains("3 parameters"), "{err}");
}

#[test]
fn trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    save(&sample_store(), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    std::fs::write(&path, &bytes).unwrap();
    let err = read_entries(&path).unwrap_err();
    assert!(err.to_string().contains("trailing"), "{err}");
}
