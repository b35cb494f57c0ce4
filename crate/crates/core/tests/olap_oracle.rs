//! Randomized cross-checks of the cube builder: both strategies against each
//! other and against a brute-force group-by oracle.

mod common;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ncdw_core::olap::{materialize_cube, CubeInput, MeasureKind, MeasureSpec, Strategy};

#[test]
fn two_hundred_randomized_stores_match_the_oracle() {
    let start = Instant::now();
    for i in 0..200u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(9_000 + i);
        let input = common::random_cube_input(&mut rng);
        if let Err(e) = common::verify_both_strategies(&input) {
            panic!(
                "store {i} ({} rows, {} dims): {e}",
                input.rows,
                input.dims()
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "oracle sweep took {elapsed:?}, budget is two minutes"
    );
}

#[test]
fn zero_row_input_yields_empty_cells_in_every_cuboid() {
    let input = CubeInput::from_rows(
        vec!["a".into(), "b".into()],
        vec![vec![], vec![]],
        vec![MeasureSpec { kind: MeasureKind::Count, field: None }],
        vec![vec![]],
    )
    .unwrap();
    for strategy in [Strategy::Independent, Strategy::SharedScan] {
        let lattice = materialize_cube(&input, strategy).unwrap();
        assert_eq!(lattice.cuboids.len(), 4);
        assert!(lattice.cuboids.iter().all(|c| c.cells.is_empty()));
    }
    common::verify_both_strategies(&input).unwrap();
}

#[test]
fn single_row_and_constant_dimension_inputs_hold_up() {
    let input = CubeInput::from_rows(
        vec!["a".into(), "b".into(), "c".into()],
        vec![
            vec!["only".into()],
            vec!["one".into()],
            vec!["row".into()],
        ],
        vec![
            MeasureSpec { kind: MeasureKind::Sum, field: Some("v".into()) },
            MeasureSpec { kind: MeasureKind::Count, field: None },
        ],
        vec![vec![Some(41.5)], vec![Some(1.0)]],
    )
    .unwrap();
    common::verify_both_strategies(&input).unwrap();

    let n = 500usize;
    let constant = CubeInput::from_rows(
        vec!["fixed".into(), "spread".into()],
        vec![
            vec!["k".to_string(); n],
            (0..n).map(|i| format!("s{}", i % 13)).collect(),
        ],
        vec![MeasureSpec { kind: MeasureKind::Avg, field: Some("v".into()) }],
        vec![(0..n).map(|i| Some(i as f64 * 0.25)).collect()],
    )
    .unwrap();
    common::verify_both_strategies(&constant).unwrap();
}

#[test]
fn all_gap_measure_columns_survive_both_strategies() {
    let n = 64usize;
    let input = CubeInput::from_rows(
        vec!["x".into(), "y".into()],
        vec![
            (0..n).map(|i| format!("x{}", i % 4)).collect(),
            (0..n).map(|i| format!("y{}", i % 3)).collect(),
        ],
        vec![
            MeasureSpec { kind: MeasureKind::Sum, field: Some("gap".into()) },
            MeasureSpec { kind: MeasureKind::PctTrue, field: Some("flag".into()) },
        ],
        vec![
            vec![None; n],
            (0..n).map(|i| Some(if i % 5 == 0 { 1.0 } else { 0.0 })).collect(),
        ],
    )
    .unwrap();
    common::verify_both_strategies(&input).unwrap();

    let lattice = materialize_cube(&input, Strategy::SharedScan).unwrap();
    let apex = &lattice.cuboids[0];
    let accs = apex.cells.get(&Vec::new()).unwrap();
    assert_eq!(accs[0].n, 0);
    assert_eq!(lattice.measures[0].kind.evaluate(&accs[0]), None);
    assert!(lattice.measures[1].kind.evaluate(&accs[1]).is_some());
}
