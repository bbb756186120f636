use proptest::prelude::*;
use scm_core::boxes::{decode_box, encode_box, Anchor, BBox};
use scm_core::checkpoint::Container;
use scm_core::data::{
    generate_split, read_dataset, rle_decode, rle_encode, write_dataset, SceneSpec,
};
use scm_core::mask::BinaryMask;
use scm_core::tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rle_is_identity((w, h, bits) in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(any::<bool>(), w * h)))) {
        let m = BinaryMask::from_bits(w, h, bits).unwrap();
        let runs = rle_encode(&m);
        prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), w * h);
        prop_assert_eq!(rle_decode(w, h, &runs).unwrap(), m);
    }

    #[test]
    fn box_codec_round_trips(
        cx in 0.0..64.0f64, cy in 0.0..64.0f64, aw in 2.0..40.0f64, ah in 2.0..40.0f64,
        x0 in -5.0..60.0f64, y0 in -5.0..60.0f64, bw in 0.5..50.0f64, bh in 0.5..50.0f64,
    ) {
        let a = Anchor::new(cx, cy, aw, ah);
        let b = BBox::new(x0, y0, x0 + bw, y0 + bh);
        let back = decode_box(&a, &encode_box(&a, &b).unwrap());
        for (u, v) in [(back.x0, b.x0), (back.y0, b.y0), (back.x1, b.x1), (back.y1, b.y1)] {
            prop_assert!((u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trips(values in prop::collection::vec(-1e6..1e6f64, 1..40), epoch in 0u32..500) {
        let mut c = Container::new(serde_json::json!({ "epoch": epoch }));
        c.push("w", &Tensor::from_vec(values.clone()).unwrap());
        c.push("s", &Tensor::scalar(values[0]));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        prop_assert_eq!(Container::read_from(&mut buf.as_slice()).unwrap(), c);
    }
}

#[test]
fn dataset_round_trips_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        seed: 21,
        ..Default::default()
    };
    let records = generate_split(&spec, 5, 12).unwrap();
    write_dataset(&records, dir.path()).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), records);

    let empty = tempfile::tempdir().unwrap();
    write_dataset(&[], empty.path()).unwrap();
    assert!(read_dataset(empty.path()).unwrap().is_empty());
}

#[test]
fn corrupt_manifest_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        seed: 2,
        ..Default::default()
    };
    write_dataset(&generate_split(&spec, 0, 3).unwrap(), dir.path()).unwrap();
    let path = dir.path().join(scm_core::data::ANNOTATIONS_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&path, text).unwrap();
    match read_dataset(dir.path()) {
        Err(scm_core::Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
}
