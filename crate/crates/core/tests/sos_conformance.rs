use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zenocert_core::polynomial::{monomial_basis, Polynomial, VariableRegistry};
use zenocert_core::sos::{gram_value, AffinePoly, SosError, SosProgram};
use zenocert_sdp::{solve, SolveStatus, SolverConfig};

/// Sum of `k` squares of random polynomials of degree at most `half`.
fn random_sos(reg: &Arc<VariableRegistry>, half: u32, k: usize, rng: &mut ChaCha8Rng) -> Polynomial {
    let vars: Vec<usize> = (0..reg.len()).collect();
    let basis = monomial_basis(reg.len(), &vars, half);
    let mut total = Polynomial::zero(reg);
    for _ in 0..k {
        let q = Polynomial::from_terms(reg, basis.iter().map(|m| (m.clone(), rng.gen_range(-1.0..1.0))));
        total = &total + &(&q * &q);
    }
    total
}

fn solve_sos(p: &Polynomial) -> Result<zenocert_core::sos::Reconstruction, SosError> {
    let mut prog = SosProgram::new(p.registry());
    prog.add_sos("p", AffinePoly::from_poly(p.clone()));
    let lowered = prog.lower()?;
    let sol = solve(&lowered.instance, &SolverConfig::default()).unwrap();
    prog.reconstruct(&lowered, &sol)
}

#[test]
fn random_sums_of_squares_are_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let nvars = 1 + case % 3;
        let half = 1 + (case % 2) as u32;
        let reg = VariableRegistry::standard(nvars, 0);
        let p = random_sos(&reg, half, 1 + case % 4, &mut rng);
        let rec = solve_sos(&p).unwrap_or_else(|e| panic!("case {case}: {e}"));
        let c = &rec.constraints[0];
        assert!(c.min_eigenvalue >= -1e-9, "case {case}: eigenvalue {}", c.min_eigenvalue);
        for _ in 0..200 {
            let x: Vec<f64> = (0..nvars).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let err = (gram_value(&c.basis, &c.gram, &x) - p.eval_unchecked(&x)).abs();
            assert!(err <= 1e-7, "case {case}: Gram identity off by {err:e} at {x:?}");
        }
    }
}

#[test]
fn motzkin_polynomial_is_not_sos() {
    let reg = VariableRegistry::standard(2, 0);
    let m = Polynomial::parse(&reg, "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1").unwrap();
    // Nonnegative everywhere by the AM-GM inequality, yet not a sum of squares.
    let mut prog = SosProgram::new(&reg);
    prog.add_sos("motzkin", AffinePoly::from_poly(m));
    let lowered = prog.lower().unwrap();
    let sol = solve(&lowered.instance, &SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    assert!(matches!(prog.reconstruct(&lowered, &sol), Err(SosError::NotFeasible(_))));
}

#[test]
fn negative_definite_quadratic_is_not_sos() {
    let reg = VariableRegistry::standard(2, 0);
    let p = Polynomial::parse(&reg, "-x1^2 - x2^2").unwrap();
    assert!(matches!(solve_sos(&p), Err(SosError::NotFeasible(_))));
}

#[test]
fn lowering_is_deterministic() {
    let reg = VariableRegistry::standard(2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_sos(&reg, 2, 3, &mut rng);
    let lower = || {
        let mut prog = SosProgram::new(&reg);
        prog.add_sos("p", AffinePoly::from_poly(p.clone()));
        prog.lower().unwrap().instance.to_sparse_text()
    };
    assert_eq!(lower(), lower());
}

#[test]
fn rows_cover_the_support_union() {
    let reg = VariableRegistry::standard(2, 0);
    let p = Polynomial::parse(&reg, "x1^4 + x1^2*x2^2 + 3*x2^2 + 1").unwrap();
    let mut prog = SosProgram::new(&reg);
    prog.add_sos("p", AffinePoly::from_poly(p.clone()));
    let lowered = prog.lower().unwrap();
    let c = &lowered.constraints[0];
    let mut union: std::collections::BTreeSet<_> = p.terms().map(|(m, _)| m.clone()).collect();
    for a in &c.basis {
        for b in &c.basis {
            union.insert(a.mul(b));
        }
    }
    assert_eq!(lowered.instance.n_rows(), union.len());
}
