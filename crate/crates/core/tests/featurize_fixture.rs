use std::path::Path;

use landscape_core::featurize::{
    build_vocabulary, read_log, split_dataset, split_sizes, win_rate, BinSpec, RawRecord,
    Vocabulary, BIAS_INDEX,
};

fn fixture() -> Vec<RawRecord> {
    read_log(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ipinyou_sample.tsv"))
        .unwrap()
}

fn slot_bins() -> BinSpec {
    BinSpec::parse("SlotWidth=250,500,900;SlotHeight=100,300").unwrap()
}

#[test]
fn fixture_dimension_matches_independent_count() {
    // Counted with a separate script: bias + 6 "other" columns + 18 attributes
    // seen at least 10 times after binning; 86 columns with no trimming.
    let recs = fixture();
    assert_eq!(recs.len(), 100);
    assert_eq!(
        build_vocabulary(&recs, 10, &slot_bins())
            .unwrap()
            .dimension(),
        25
    );
    assert_eq!(
        build_vocabulary(&recs, 0, &slot_bins())
            .unwrap()
            .dimension(),
        86
    );
}

#[test]
fn fixture_win_rate_is_exact_fraction() {
    assert_eq!(win_rate(&fixture()), 93.0 / 100.0);
}

#[test]
fn encoded_fixture_has_bias_and_one_column_per_field() {
    let recs = fixture();
    let v = build_vocabulary(&recs, 10, &slot_bins()).unwrap();
    for (r, o) in recs.iter().zip(v.encode_all(&recs)) {
        assert_eq!(o.x.active[0], BIAS_INDEX);
        assert_eq!(o.x.active.len(), 1 + r.fields.len());
        assert!(o.x.active.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(o.x.dimension, v.dimension());
        assert_eq!(
            (o.won, o.bid_price, o.winning_price),
            (r.won, r.bid_price, r.winning_price)
        );
    }
}

#[test]
fn trimmed_attributes_fall_into_other() {
    let recs = fixture();
    let v = build_vocabulary(&recs, 10, &slot_bins()).unwrap();
    assert_eq!(v.index("City", "2160"), None);
    assert_eq!(v.column("City", "2160"), v.other_index("City"));
    assert!(v.index("Region", "216").is_some());
    // 300 is at least the 250 edge and below 500.
    assert_eq!(v.column("SlotWidth", "300"), v.index("SlotWidth", "bin1"));
}

#[test]
fn vocabulary_file_round_trips() {
    let v = build_vocabulary(&fixture(), 10, &slot_bins()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.tsv");
    std::fs::write(&path, v.to_text()).unwrap();
    let back = Vocabulary::read(&path).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.checksum(), v.checksum());
}

#[test]
fn split_examples() {
    let items: Vec<u32> = (0..10).collect();
    let (a, b, c) = split_dataset(&items, (0.6, 0.2, 0.2), 7).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
    assert_eq!(
        split_dataset(&items, (0.6, 0.2, 0.2), 7).unwrap(),
        (a, b, c)
    );

    let n = 53_289_330usize;
    let (tr, va, te) = split_sizes(n, (0.6, 0.2, 0.2)).unwrap();
    assert_eq!(tr + va + te, n);
    for (got, ratio) in [(tr, 0.6), (va, 0.2), (te, 0.2)] {
        assert!((got as f64 - ratio * n as f64).abs() <= 1.0, "{got}");
    }
    assert!(split_sizes(10, (0.6, 0.2, 0.3)).is_err());
}

#[test]
fn malformed_lines_are_rejected() {
    for bad in [
        "1\t10\t\tCity=A",
        "0\t10\t5\tCity=A",
        "1\t10\t11\tCity=A",
        "1\t10\t5\tCity=A;City=B",
        "2\t10\t\tCity=A",
        "0\t10\tCity=A",
    ] {
        assert!(RawRecord::parse_line(bad, 1).is_err(), "{bad:?}");
    }
}
