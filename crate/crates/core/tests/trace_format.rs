use std::path::PathBuf;

use proptest::prelude::*;
use sgks::synth::{synth_dataset, DatasetSpec};
use sgks::trace::{
    decode_trace, read_trace, read_trace_file, write_batch, write_trace, ActivationTrace, Hidden, LayerRecord, Manifest,
};
use sgks::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Hand-built T=4, H=2, two-layer trace with exactly representable values.
fn golden_trace() -> ActivationTrace {
    let layer = |index: u32| {
        let mut attention = Vec::new();
        for h in 0..2 {
            for r in 0..4 {
                for c in 0..4 {
                    attention.push(if (r + c + h) % 2 == 0 { 0.5 } else { 0.0 });
                }
            }
        }
        LayerRecord {
            layer_index: index,
            tokens: 4,
            heads: 2,
            attention,
            signal: vec![1.0, 2.0, 0.5, 0.25 * (index + 1) as f32],
            hidden: None,
        }
    };
    ActivationTrace {
        model_id: String::new(),
        prompt_id: String::new(),
        layers: vec![layer(0), layer(1)],
        label: None,
        tokenization: None,
    }
}

#[test]
fn golden_file_matches_encoder_byte_for_byte() {
    let path = fixture("golden_t4_h2_l2.sgkt");
    let mut bytes = Vec::new();
    let n = write_trace(&golden_trace(), &mut bytes).unwrap();
    if std::env::var_os("SGKS_BLESS").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let on_disk = std::fs::read(&path).expect("golden fixture present (regenerate with SGKS_BLESS=1)");
    assert_eq!(n, 332);
    assert_eq!(on_disk.len(), 332);
    assert_eq!(on_disk, bytes);
    assert_eq!(&on_disk[..4], b"SGKT");
    assert_eq!(u16::from_le_bytes([on_disk[4], on_disk[5]]), 1);
    assert_eq!(u32::from_le_bytes(on_disk[8..12].try_into().unwrap()), 2);

    let back = read_trace_file(&path).unwrap();
    assert_eq!(back.prompt_id, "golden_t4_h2_l2");
    assert_eq!(back.layers, golden_trace().layers);
}

#[test]
fn truncation_anywhere_is_rejected() {
    let bytes = std::fs::read(fixture("golden_t4_h2_l2.sgkt")).unwrap();
    for cut in 0..bytes.len() {
        assert!(decode_trace(&bytes[..cut]).is_err(), "prefix of {cut} bytes accepted");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_trace(&extra), Err(Error::Format(_))));
}

#[test]
fn unknown_flag_and_bad_magic_are_format_errors() {
    let bytes = std::fs::read(fixture("golden_t4_h2_l2.sgkt")).unwrap();
    let mut flagged = bytes.clone();
    flagged[6] |= 0x80;
    assert!(matches!(decode_trace(&flagged), Err(Error::Format(_))));
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(decode_trace(&magic), Err(Error::Format(_))));
}

#[test]
fn batch_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        tokens: 16,
        n_layers: 3,
        ..DatasetSpec::default()
    };
    let traces = synth_dataset(3, &spec).unwrap();
    let manifest = write_batch(dir.path(), "synthetic", &traces).unwrap();
    let reloaded = Manifest::load(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest, reloaded);
    assert_eq!(reloaded.files.len(), 6);
    let back = reloaded.load_traces(dir.path()).unwrap();
    assert_eq!(back, traces);
}

fn softmax_rows(raw: &[f32], t: usize) -> Vec<f32> {
    raw.chunks(t)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f32::MIN, f32::max);
            let e: Vec<f64> = row.iter().map(|v| ((v - m) as f64).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| (v / s) as f32)
        })
        .collect()
}

prop_compose! {
    fn arb_trace()(t in 2usize..7, heads in 1usize..4, n_layers in 1usize..4, dim in 0usize..3)
        (attn in prop::collection::vec(prop::collection::vec(-4.0f32..4.0, heads * t * t), n_layers),
         signal in prop::collection::vec(prop::collection::vec(0.0f32..10.0, t), n_layers),
         hidden in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, t * dim), n_layers),
         label in prop::option::of(any::<bool>()),
         tokens in prop::option::of(prop::collection::vec("[a-zé ]{0,4}", 0..5)),
         t in Just(t), heads in Just(heads), dim in Just(dim))
        -> ActivationTrace
    {
        let layers = attn
            .iter()
            .zip(&signal)
            .zip(&hidden)
            .enumerate()
            .map(|(i, ((a, s), h))| LayerRecord {
                layer_index: (i * 3) as u32,
                tokens: t,
                heads,
                attention: softmax_rows(a, t),
                signal: s.clone(),
                hidden: (dim > 0).then(|| Hidden { dim, data: h.clone() }),
            })
            .collect();
        ActivationTrace {
            model_id: String::new(),
            prompt_id: String::new(),
            layers,
            label,
            tokenization: tokens,
        }
    }
}

proptest! {
    #[test]
    fn write_then_read_is_identity(trace in arb_trace()) {
        let mut bytes = Vec::new();
        let n = write_trace(&trace, &mut bytes).unwrap();
        prop_assert_eq!(n, bytes.len());
        prop_assert_eq!(n, trace.encoded_len());
        let back = read_trace(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, trace);
    }
}
