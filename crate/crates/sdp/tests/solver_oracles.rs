use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zenocert_sdp::{solve, Entry, Functional, SdpInstance, SolveStatus, SolverConfig};

fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(n, n) * 0.3
}

fn random_functional(blocks: &[usize], density: f64, rng: &mut ChaCha8Rng) -> Functional {
    let mut f = Functional::default();
    for (b, &n) in blocks.iter().enumerate() {
        for i in 0..n {
            for j in i..n {
                if rng.gen_bool(density) {
                    f.entries.push(Entry { block: b, i, j, value: rng.gen_range(-1.0..1.0) });
                }
            }
        }
    }
    if f.entries.is_empty() {
        f.entries.push(Entry { block: 0, i: 0, j: 0, value: 1.0 });
    }
    f
}

fn as_matrix(f: &Functional, blocks: &[usize]) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    f.add_matrix_to(1.0, &mut out);
    out
}

/// Instance with a strictly feasible primal point X0 and dual pair (y0, S0).
fn random_feasible(seed: u64) -> SdpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nblocks = rng.gen_range(1..=3);
    let blocks: Vec<usize> = (0..nblocks).map(|_| rng.gen_range(1..=5)).collect();
    let dim: usize = blocks.iter().map(|n| n * (n + 1) / 2).sum();
    let m = rng.gen_range(1..=dim.max(1));
    let x0: Vec<DMatrix<f64>> = blocks.iter().map(|&n| random_pd(n, &mut rng)).collect();
    let s0: Vec<DMatrix<f64>> = blocks.iter().map(|&n| random_pd(n, &mut rng)).collect();
    let mut inst = SdpInstance::new(blocks.clone(), 0);
    let mut c = s0.clone();
    for _ in 0..m {
        let f = random_functional(&blocks, 0.5, &mut rng);
        let rhs = f.eval(&x0, &[]);
        let yi: f64 = rng.gen_range(-1.0..1.0);
        for (cb, ab) in c.iter_mut().zip(as_matrix(&f, &blocks)) {
            *cb += ab * yi;
        }
        inst.add_row(f, rhs);
    }
    for (b, cb) in c.iter().enumerate() {
        for i in 0..cb.nrows() {
            for j in i..cb.ncols() {
                let v = if i == j { cb[(i, i)] } else { 2.0 * cb[(i, j)] };
                inst.objective.entries.push(Entry { block: b, i, j, value: v });
            }
        }
    }
    inst
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn random_feasible_instances_reach_optimality() {
    let cfg = SolverConfig::default();
    for seed in 0..50 {
        let inst = random_feasible(seed);
        let sol = solve(&inst, &cfg).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}: {}", sol.message);
        let bmax = 1.0 + inst.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        assert!(sol.residuals.primal <= 1e-7 * bmax, "seed {seed}: {:?}", sol.residuals);
        assert!(sol.residuals.dual <= 1e-7 * bmax, "seed {seed}: {:?}", sol.residuals);
        let gap = (sol.primal_objective - sol.dual_objective).abs();
        assert!(gap <= 1e-6 * (1.0 + sol.dual_objective.abs()), "seed {seed}: gap {gap}");
        for x in &sol.x {
            let norm = x.norm();
            assert!(min_eig(x) >= -1e-9 * (1.0 + norm), "seed {seed}");
        }
    }
}

fn two_by_two(t: f64) -> SdpInstance {
    let mut inst = SdpInstance::new(vec![2], 0);
    let e = |i, j, v| Entry { block: 0, i, j, value: v };
    inst.add_row(Functional { free: vec![], entries: vec![e(0, 0, 1.0), e(1, 1, 1.0)] }, 1.0);
    inst.add_row(Functional { free: vec![], entries: vec![e(0, 1, 1.0)] }, t);
    inst.objective.entries.extend([e(0, 0, 1.0), e(1, 1, 1.0)]);
    inst
}

#[test]
fn two_by_two_family_matches_determinant_oracle() {
    let cfg = SolverConfig::default();
    for k in 0..20 {
        // Values spread over [-1, 1], skipping a neighborhood of the boundary |t| = 0.5.
        let t = -0.95 + 0.1 * k as f64;
        let feasible = t.abs() <= 0.5;
        let sol = solve(&two_by_two(t), &cfg).unwrap();
        if feasible {
            assert_eq!(sol.status, SolveStatus::Optimal, "t={t}");
            let x = &sol.x[0];
            assert!(x[(0, 0)] * x[(1, 1)] >= x[(0, 1)].powi(2) - 1e-8);
        } else {
            assert_eq!(sol.status, SolveStatus::PrimalInfeasible, "t={t}");
            // The ray certifies: b^T y = 1 and -A^T y is PSD.
            let y = &sol.y;
            let aty = DMatrix::from_row_slice(2, 2, &[y[0], 0.5 * y[1], 0.5 * y[1], y[0]]);
            assert!(min_eig(&(-aty)) >= -1e-7);
            assert!((y[0] + t * y[1] - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn sum_of_squares_feasibility_converges_quickly() {
    // x^2 + 1 = [1 x] Q [1 x]^T: Q00 = 1, 2 Q01 = 0, Q11 = 1.
    let e = |i, j, v| Entry { block: 0, i, j, value: v };
    let mut inst = SdpInstance::new(vec![2], 0);
    inst.add_row(Functional { free: vec![], entries: vec![e(0, 0, 1.0)] }, 1.0);
    inst.add_row(Functional { free: vec![], entries: vec![e(0, 1, 2.0)] }, 0.0);
    inst.add_row(Functional { free: vec![], entries: vec![e(1, 1, 1.0)] }, 1.0);
    inst.objective.entries.extend([e(0, 0, 1e-8), e(1, 1, 1e-8)]);
    let sol = solve(&inst, &SolverConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.iterations < 20, "{} iterations", sol.iterations);
}

#[test]
fn duplicated_rows_do_not_change_the_solution() {
    let inst = random_feasible(7);
    let mut doubled = inst.clone();
    doubled.rows.push(inst.rows[0].clone());
    let cfg = SolverConfig::default();
    let a = solve(&inst, &cfg).unwrap();
    let b = solve(&doubled, &cfg).unwrap();
    assert_eq!(a.status, SolveStatus::Optimal);
    assert_eq!(b.status, SolveStatus::Optimal);
    assert_eq!(b.presolve.as_ref().unwrap().dependent_rows.len(), 1);
    assert!((a.primal_objective - b.primal_objective).abs() < 1e-6 * (1.0 + a.primal_objective.abs()));
}

#[test]
fn complementarity_decreases_monotonically() {
    for seed in 0..10 {
        let sol = solve(&random_feasible(100 + seed), &SolverConfig::default()).unwrap();
        for w in sol.history.windows(2) {
            assert!(w[1].mu <= 1.1 * w[0].mu, "seed {seed}: {} -> {}", w[0].mu, w[1].mu);
        }
    }
}

#[test]
fn infeasible_start_mode_agrees_on_feasible_instances() {
    let cfg = SolverConfig { homogeneous: false, ..SolverConfig::default() };
    for seed in 200..210 {
        let inst = random_feasible(seed);
        let a = solve(&inst, &cfg).unwrap();
        let b = solve(&inst, &SolverConfig::default()).unwrap();
        assert_eq!(a.status, SolveStatus::Optimal, "seed {seed}: {}", a.message);
        assert!((a.primal_objective - b.primal_objective).abs() < 1e-5 * (1.0 + b.primal_objective.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn status_is_invariant_under_row_scaling(seed in 0u64..10_000, t in -1.0f64..1.0) {
        prop_assume!((t.abs() - 0.5).abs() > 0.02);
        let cfg = SolverConfig::default();
        for inst in [random_feasible(seed), two_by_two(t)] {
            let mut scaled = inst.clone();
            for row in &mut scaled.rows {
                row.rhs *= 10.0;
                for e in &mut row.lhs.entries {
                    e.value *= 10.0;
                }
            }
            let a = solve(&inst, &cfg).unwrap();
            let b = solve(&scaled, &cfg).unwrap();
            prop_assert_eq!(a.status, b.status);
        }
    }
}
