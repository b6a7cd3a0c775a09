use std::sync::Arc;

use proptest::prelude::*;
use zenocert_core::polynomial::{Monomial, Polynomial, PolynomialVector, VariableRegistry};

const NVARS: usize = 3;

fn reg() -> Arc<VariableRegistry> {
    VariableRegistry::standard(2, 1)
}

/// Small-integer coefficients keep every sum and product exact in f64.
fn poly() -> impl Strategy<Value = Vec<(Vec<u16>, i32)>> {
    prop::collection::vec((prop::collection::vec(0u16..3, NVARS), -8i32..=8), 0..6)
}

fn build(reg: &Arc<VariableRegistry>, terms: &[(Vec<u16>, i32)]) -> Polynomial {
    Polynomial::from_terms(reg, terms.iter().map(|(e, c)| (Monomial::from_exponents(e.clone()), *c as f64)))
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, NVARS)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn addition_is_associative_and_commutative(a in poly(), b in poly(), c in poly()) {
        let r = reg();
        let (a, b, c) = (build(&r, &a), build(&r, &b), build(&r, &c));
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&a + &b, &b + &a);
    }

    #[test]
    fn multiplication_is_associative_commutative_and_distributive(a in poly(), b in poly(), c in poly()) {
        let r = reg();
        let (a, b, c) = (build(&r, &a), build(&r, &b), build(&r, &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
    }

    #[test]
    fn evaluation_is_a_ring_homomorphism(a in poly(), b in poly(), x in point()) {
        let r = reg();
        let (a, b) = (build(&r, &a), build(&r, &b));
        let (fa, fb) = (a.evaluate(&x).unwrap(), b.evaluate(&x).unwrap());
        let prod = (&a * &b).evaluate(&x).unwrap();
        prop_assert!((prod - fa * fb).abs() <= 1e-10 * (1.0 + (fa * fb).abs()));
        let sum = (&a + &b).evaluate(&x).unwrap();
        prop_assert!((sum - (fa + fb)).abs() <= 1e-10 * (1.0 + fa.abs() + fb.abs()));
    }

    #[test]
    fn gradient_is_linear(a in poly(), b in poly(), s in -4i32..=4, t in -4i32..=4) {
        let r = reg();
        let (a, b) = (build(&r, &a), build(&r, &b));
        let combo = &a.scale(s as f64) + &b.scale(t as f64);
        let (ga, gb, gc) = (a.gradient(), b.gradient(), combo.gradient());
        for i in 0..r.n_state() {
            let expected = &ga.components()[i].scale(s as f64) + &gb.components()[i].scale(t as f64);
            prop_assert_eq!(&gc.components()[i], &expected);
        }
    }

    #[test]
    fn composition_commutes_with_evaluation(f in poly(), g0 in poly(), g1 in poly(), x in point()) {
        let r = reg();
        let f = build(&r, &f);
        let g = PolynomialVector::new(vec![build(&r, &g0), build(&r, &g1)]).unwrap();
        let inner = g.evaluate(&x).unwrap();
        let mut at = inner.clone();
        at.push(x[2]);
        let direct = f.evaluate(&at).unwrap();
        let composed = f.compose(&g).unwrap().evaluate(&x).unwrap();
        prop_assert!((direct - composed).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn text_round_trips_exactly(a in poly()) {
        let r = reg();
        let a = build(&r, &a);
        prop_assert_eq!(Polynomial::parse(&r, &a.to_text()).unwrap(), a);
    }
}
