use std::collections::BTreeMap;

use proptest::prelude::*;
use zenocert_core::hybrid::{HybridSystem, Inequality, SemialgebraicSet};
use zenocert_core::io::{load_system, system_fingerprint, to_system_file, IoError};
use zenocert_core::polynomial::{Polynomial, VariableRegistry};

fn text(file: &str) -> String {
    std::fs::read_to_string(format!("{}/../../systems/{file}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn system(file: &str) -> HybridSystem {
    load_system(&text(file), &BTreeMap::new()).unwrap()
}

const FILES: [&str; 5] = ["example1.json", "example2.json", "bouncing-ball.json", "spiral4.json", "spiral4-slope.json"];

#[test]
fn bundled_systems_validate() {
    for f in FILES {
        let report = system(f).validate();
        assert!(report.is_valid(), "{f}: {:?}", report.violations);
    }
}

#[test]
fn deleting_any_edge_breaks_the_cycle() {
    for f in ["example1.json", "example2.json"] {
        let sys = system(f);
        for k in 0..sys.edges.len() {
            let mut cut = sys.clone();
            cut.edges.remove(k);
            assert!(!cut.validate().is_valid(), "{f} without edge {k}");
        }
    }
}

#[test]
fn cycle_order_visits_each_mode_once_along_edges() {
    for f in FILES {
        let sys = system(f);
        let order = sys.cycle_order().unwrap();
        let mut ids: Vec<usize> = order.clone();
        ids.sort_unstable();
        let mut all: Vec<usize> = sys.modes.iter().map(|m| m.id).collect();
        all.sort_unstable();
        assert_eq!(ids, all, "{f}");
        for (i, &q) in order.iter().enumerate() {
            let next = order[(i + 1) % order.len()];
            assert!(sys.edges.iter().any(|e| e.from == q && e.to == next), "{f}: {q} -> {next}");
        }
    }
}

#[test]
fn anchors_of_the_bundled_examples_sit_on_their_guards() {
    for f in ["example1.json", "example2.json", "spiral4.json"] {
        let sys = system(f);
        let p: Vec<f64> = sys.parameters.sample_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        let report = sys.check_zeno_equilibrium(&sys.anchors(), &p).unwrap();
        assert!(report.is_consistent(), "{f}");
    }
}

#[test]
fn canonical_form_round_trips_with_a_stable_fingerprint() {
    for f in FILES {
        let sys = system(f);
        let canonical = serde_json::to_string(&to_system_file(&sys)).unwrap();
        let back = load_system(&canonical, &BTreeMap::new()).unwrap();
        assert_eq!(system_fingerprint(&back), system_fingerprint(&sys), "{f}");
    }
}

#[test]
fn scalar_overrides_change_the_system() {
    let base = system("example2.json");
    let mut o = BTreeMap::new();
    o.insert("C".to_string(), 3.0);
    let moved = load_system(&text("example2.json"), &o).unwrap();
    assert_ne!(system_fingerprint(&base), system_fingerprint(&moved));
    assert_eq!(moved.parameters.sample_box[0].0, 3.0);
}

#[test]
fn malformed_files_report_positions() {
    match load_system("{\n  \"name\": \"x\",\n  \"variables\": [\"x1\"\n}", &BTreeMap::new()) {
        Err(IoError::Json { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
    let bad_expr = text("spiral4.json").replacen("\"-2\"", "\"-2 +* x1\"", 1);
    assert!(matches!(load_system(&bad_expr, &BTreeMap::new()), Err(IoError::Expression { .. })));
}

proptest! {
    #[test]
    fn strict_membership_implies_closed_membership(
        coeffs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0), 1..4),
        x in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let reg = VariableRegistry::standard(2, 0);
        let ineqs = |strict: bool| -> SemialgebraicSet {
            SemialgebraicSet::new(
                coeffs
                    .iter()
                    .map(|&(a, b, c)| Inequality::new(Polynomial::parse(&reg, &format!("({a:?})*x1 + ({b:?})*x2^2 + ({c:?})")).unwrap(), strict))
                    .collect(),
                vec![],
            )
        };
        if ineqs(true).contains_with_tol(&x, 0.0) {
            prop_assert!(ineqs(false).contains_with_tol(&x, 0.0));
            prop_assert!(ineqs(false).closure_contains(&x, 0.0));
        }
    }
}
