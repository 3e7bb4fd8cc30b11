mod common;

use std::fmt::Write as _;

use common::frame_table_csv;
use sssae::data::{
    normalize_per_speaker, prepare_table, scale_to_unit_range, stack_context, CollapseMap, FrameTable, DEFAULT_CONTEXT,
};
use sssae::Error;

/// Utterances whose every feature equals a per-utterance marker.
fn marked_table(lengths: &[usize]) -> FrameTable {
    let mut t = FrameTable::new(39);
    for (u, &len) in lengths.iter().enumerate() {
        for i in 0..len {
            t.push_frame(&format!("u{u}"), "s0", i, &[(u + 1) as f64; 39], Some(0)).unwrap();
        }
    }
    t
}

#[test]
fn stacking_keeps_one_example_per_frame_with_429_inputs() {
    let map = CollapseMap::standard();
    let lengths = [1, 2, 5, 11, 12, 30];
    let table = FrameTable::read_from(frame_table_csv(&lengths).as_bytes(), &map, "fixture").unwrap();
    assert_eq!(table.len(), lengths.iter().sum::<usize>());
    let ds = prepare_table(&table, DEFAULT_CONTEXT, DEFAULT_CONTEXT, "fixture".into());
    assert_eq!(ds.len(), table.len());
    assert_eq!(ds.input_dim(), 11 * 39);
    assert_eq!(ds.input_dim(), 429);
}

#[test]
fn windows_see_only_their_own_utterance() {
    let lengths = [1, 3, 7, 12];
    let ds = stack_context(&marked_table(&lengths), 5, 5);
    let mut row = 0;
    for (u, &len) in lengths.iter().enumerate() {
        for _ in 0..len {
            let marker = (u + 1) as f64;
            assert!(ds.input(row).iter().all(|&v| v == marker), "row {row} leaks across utterances");
            row += 1;
        }
    }
}

#[test]
fn edge_windows_repeat_the_boundary_frame() {
    let mut t = FrameTable::new(39);
    for i in 0..3 {
        t.push_frame("u", "s", i, &[i as f64; 39], None).unwrap();
    }
    let ds = stack_context(&t, 2, 2);
    let centres: Vec<f64> = (0..5).map(|k| ds.input(0)[k * 39]).collect();
    assert_eq!(centres, [0.0, 0.0, 0.0, 1.0, 2.0]);
    let centres: Vec<f64> = (0..5).map(|k| ds.input(2)[k * 39]).collect();
    assert_eq!(centres, [0.0, 1.0, 2.0, 2.0, 2.0]);
}

#[test]
fn collapse_map_must_fold_48_onto_39() {
    let standard = CollapseMap::standard();
    assert_eq!(standard.num_training(), 48);
    assert_eq!(standard.num_evaluation(), 39);

    // every phone to itself: 48 targets
    let mut identity = String::new();
    for p in standard.training_phones() {
        writeln!(identity, "{p} {p}").unwrap();
    }
    let err = CollapseMap::parse(&identity, "identity").unwrap_err();
    assert!(matches!(err, Error::Cardinality { found: 48, expected: 39 }), "{err}");

    // one phone missing
    let short: String = identity.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert!(CollapseMap::parse(&short, "short").is_err());
}

#[test]
fn normalization_is_idempotent_on_the_fixture() {
    let map = CollapseMap::standard();
    let table = FrameTable::read_from(frame_table_csv(&[9, 14, 6, 20]).as_bytes(), &map, "fixture").unwrap();
    let once = normalize_per_speaker(&table);
    let twice = normalize_per_speaker(&once);
    for i in 0..table.len() {
        for (a, b) in once.features(i).iter().zip(twice.features(i)) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
    let scaled = scale_to_unit_range(&once);
    for i in 0..scaled.len() {
        assert!(scaled.features(i).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn labels_survive_the_pipeline_in_order() {
    let map = CollapseMap::standard();
    let table = FrameTable::read_from(frame_table_csv(&[4, 6]).as_bytes(), &map, "fixture").unwrap();
    let ds = prepare_table(&table, 5, 5, "fixture".into());
    for i in 0..table.len() {
        assert_eq!(ds.training_label(i), table.label(i));
    }
}
