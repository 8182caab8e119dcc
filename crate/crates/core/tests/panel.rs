mod common;

use proptest::prelude::*;
use rand::Rng;
use twqr::montecarlo::{generate_dgp, MonteCarloConfig};
use twqr::panel::{load_csv, read_csv, validate, write_csv, PanelArray, PanelError, PanelSchema};

fn schema(d: usize) -> PanelSchema {
    let names: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    PanelSchema::new("g", "h", "y", &refs)
}

/// Panel with string labels and a random subset of cells dropped.
fn sparse_panel(seed: u64, g: usize, h: usize, d: usize) -> PanelArray {
    let mut rng = common::rng(seed);
    let mut text = String::from("g,h,y");
    for j in 1..=d {
        text.push_str(&format!(",x{j}"));
    }
    text.push('\n');
    let mut order: Vec<(usize, usize)> = (0..g).flat_map(|a| (0..h).map(move |b| (a, b))).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for (k, (a, b)) in order.into_iter().enumerate() {
        if k > 0 && rng.random::<f64>() < 0.25 {
            continue;
        }
        text.push_str(&format!("state {a},year-{b},{:?}", rng.random_range(-1e6..1e6)));
        for _ in 0..d {
            text.push_str(&format!(",{:?}", rng.random::<f64>() * 10f64.powi(rng.random_range(-20..20))));
        }
        text.push('\n');
    }
    read_csv(text.as_bytes(), &schema(d)).unwrap()
}

#[test]
fn file_round_trip() {
    let p = sparse_panel(41, 7, 5, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    write_csv(&p, &schema(3), std::fs::File::create(&path).unwrap()).unwrap();
    let q = load_csv(&path, &schema(3)).unwrap();
    assert_eq!(p, q);
}

#[test]
fn three_of_four_cells() {
    let text = "g,h,y,x1\na,1,1.0,1\na,2,2.0,1\nb,1,3.0,1\n";
    let p = read_csv(text.as_bytes(), &schema(1)).unwrap();
    assert_eq!((p.g_count(), p.h_count(), p.n(), p.d()), (2, 2, 3, 1));
    let v = validate(&p);
    assert_eq!((v.missing_cell_count, v.duplicate_count, v.rank_estimate), (1, 0, 1));
}

#[test]
fn malformed_files_are_rejected() {
    let cases: [(&str, fn(&PanelError) -> bool); 4] = [
        ("g,h,y,x1\na,1,1,1\na,1,2,1\n", |e| matches!(e, PanelError::DuplicateCell { .. })),
        ("g,h,y,x1\n", |e| matches!(e, PanelError::EmptyFile)),
        ("g,h,y\na,1,1\n", |e| matches!(e, PanelError::MissingColumn(c) if c == "x1")),
        ("g,h,y,x1\na,1,one,1\n", |e| matches!(e, PanelError::ParseFailure { .. })),
    ];
    for (text, check) in cases {
        let err = read_csv(text.as_bytes(), &schema(1)).unwrap_err();
        assert!(check(&err), "{text:?}: {err:?}");
    }
}

#[test]
fn collinear_design_has_reduced_rank() {
    let mut rng = common::rng(42);
    let p = common::random_panel(&mut rng, 6, 6, 3);
    let x: Vec<f64> = p.x().chunks_exact(3).flat_map(|r| [r[0], r[1], 2.0 * r[1]]).collect();
    assert_eq!(validate(&p.with_design(3, x).unwrap()).rank_estimate, 2);
}

#[test]
fn simulated_design_has_full_rank() {
    let mut config = MonteCarloConfig::two_way_default(1, 43);
    config.g = 50;
    config.h = 50;
    let p = generate_dgp(&config, 0);
    assert_eq!(p.d(), 10);
    let v = validate(&p);
    assert_eq!((v.rank_estimate, v.missing_cell_count), (10, 0));
    assert!(v.messages.is_empty(), "{:?}", v.messages);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn write_then_read_is_identity(seed in any::<u64>(), g in 1usize..9, h in 1usize..9, d in 1usize..4) {
        let p = sparse_panel(seed, g, h, d);
        let mut buf = Vec::new();
        write_csv(&p, &schema(d), &mut buf).unwrap();
        let q = read_csv(buf.as_slice(), &schema(d)).unwrap();
        prop_assert_eq!(p.labeled_cells(), q.labeled_cells());
        prop_assert_eq!(p, q);
    }

    #[test]
    fn rank_never_exceeds_width(seed in any::<u64>(), d in 1usize..5) {
        let p = sparse_panel(seed, 4, 4, d);
        prop_assert!(validate(&p).rank_estimate <= d);
    }

    #[test]
    fn relabeling_keeps_the_labeled_cell_set(seed in any::<u64>()) {
        let p = sparse_panel(seed, 5, 6, 2);
        let mut rng = common::rng(seed ^ 1);
        let mut gp: Vec<usize> = (0..p.g_count()).collect();
        let mut hp: Vec<usize> = (0..p.h_count()).collect();
        for i in (1..gp.len()).rev() { gp.swap(i, rng.random_range(0..=i)); }
        for i in (1..hp.len()).rev() { hp.swap(i, rng.random_range(0..=i)); }
        let r = p.relabeled(&gp, &hp).unwrap();
        prop_assert_eq!(p.labeled_cells(), r.labeled_cells());
    }
}
