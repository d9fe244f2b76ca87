mod common;

use occlusionbound::learn::ForestModel;
use occlusionbound::media::io::*;
use occlusionbound::media::FlowDirection;
use occlusionbound::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flo_round_trip(seed in any::<u64>()) {
        let f = common::random_flow(&mut common::rng(seed));
        let bytes = encode_flo(&f);
        let back = decode_flo(&bytes, FlowDirection::Forward).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(encode_flo(&back), bytes);
    }

    #[test]
    fn svlm_round_trip(seed in any::<u64>()) {
        let v = common::random_labels(&mut common::rng(seed));
        let bytes = encode_label_video(&v);
        let back = decode_label_video(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(encode_label_video(&back), bytes);
    }

    #[test]
    fn gcm1_round_trip(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let g = common::random_geom(&mut r);
        let bytes = encode_confidence_video(&g);
        prop_assert_eq!(encode_confidence_video(&decode_confidence_video(&bytes).unwrap()), bytes);
        let p = common::random_probabilities(&mut r);
        let bytes = encode_probability_video(&p);
        prop_assert_eq!(encode_probability_video(&decode_probability_video(&bytes).unwrap()), bytes);
    }

    #[test]
    fn model_round_trip(seed in any::<u64>()) {
        let m = common::random_model(&mut common::rng(seed));
        let text = m.to_json();
        let back = ForestModel::from_json(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn truncated_flo_is_rejected(seed in any::<u64>(), cut in 1usize..8) {
        let f = common::random_flow(&mut common::rng(seed));
        let bytes = encode_flo(&f);
        let short = &bytes[..bytes.len() - cut];
        prop_assert!(decode_flo(short, FlowDirection::Forward).is_err());
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(11);
    let f = common::random_flow(&mut r);
    let p = dir.path().join("a.flo");
    write_flo(&f, &p).unwrap();
    assert_eq!(read_flo(&p, FlowDirection::Forward).unwrap(), f);
    let m = common::random_model(&mut r);
    let p = dir.path().join("m.model");
    m.save(&p).unwrap();
    assert_eq!(ForestModel::load(&p).unwrap(), m);
}

#[test]
fn corrupted_inputs() {
    let mut r = common::rng(5);
    let m = common::random_model(&mut r);
    let text = m.to_json();
    assert!(matches!(ForestModel::from_json(&text[..text.len() / 2]), Err(Error::Parse(_))));
    let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
    assert!(matches!(ForestModel::from_json(&bumped), Err(Error::Version { .. })));
    let mut svlm = encode_label_video(&common::random_labels(&mut r));
    svlm[0] = b'X';
    assert!(decode_label_video(&svlm).is_err());
    let mut gcm = encode_probability_video(&common::random_probabilities(&mut r));
    let n = gcm.len();
    gcm[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
    assert!(matches!(decode_probability_video(&gcm), Err(Error::Validation(_))));
}
