//! Simplex correctness against an independent brute-force oracle:
//! enumerate every basic solution (active-set choice) of small random LPs
//! and compare optima.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unpctl_core::lp::{solve_lp, LinearProgram, LpStatus, SolveOptions};

struct RandomLp {
    lp: LinearProgram,
}

/// Feasible-and-bounded by construction: finite box bounds and ub rows
/// passing through a strictly interior point.
fn random_lp(rng: &mut ChaCha8Rng) -> RandomLp {
    let n = rng.gen_range(3..=6);
    let n_ub = rng.gen_range(2..=5);
    let n_eq = rng.gen_range(0..=1);
    let upper = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(0.5..2.0)));
    let lower = DVector::zeros(n);
    let v0 = DVector::from_iterator(n, (0..n).map(|i| rng.gen_range(0.1..0.9) * upper[i]));
    let a_ub = DMatrix::from_fn(n_ub, n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_iterator(n_ub, (0..n_ub).map(|_| rng.gen_range(0.1..1.0)));
    let b_ub = &a_ub * &v0 + slack;
    let a_eq = DMatrix::from_fn(n_eq, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &v0;
    let objective = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
    RandomLp {
        lp: LinearProgram {
            objective,
            a_eq,
            b_eq,
            a_ub,
            b_ub,
            lower,
            upper,
        },
    }
}

/// Enumerate all vertices: every choice of n active constraints from
/// {ub rows, lower bounds, upper bounds} plus the equality rows, solved as a
/// linear system and checked for feasibility.
fn vertex_enumeration_optimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let n_eq = lp.a_eq.nrows();
    let n_ub = lp.a_ub.nrows();
    // constraint pool: (row vector, rhs)
    let mut pool: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..n_ub {
        pool.push((lp.a_ub.row(i).transpose(), lp.b_ub[i]));
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        pool.push((e.clone(), lp.lower[j]));
        pool.push((e, lp.upper[j]));
    }
    let need = n - n_eq;
    let mut best: Option<f64> = None;
    let mut choice: Vec<usize> = (0..need).collect();
    let feas_tol = 1e-9;
    loop {
        // assemble the square system
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for r in 0..n_eq {
            a.set_row(r, &lp.a_eq.row(r));
            b[r] = lp.b_eq[r];
        }
        for (k, &ci) in choice.iter().enumerate() {
            a.set_row(n_eq + k, &pool[ci].0.transpose());
            b[n_eq + k] = pool[ci].1;
        }
        if let Some(v) = a.lu().solve(&b) {
            let feasible = (0..n_ub).all(|i| (lp.a_ub.row(i) * &v)[(0, 0)] <= lp.b_ub[i] + feas_tol)
                && (0..n).all(|j| v[j] >= lp.lower[j] - feas_tol && v[j] <= lp.upper[j] + feas_tol)
                && (0..n_eq).all(|r| ((lp.a_eq.row(r) * &v)[(0, 0)] - lp.b_eq[r]).abs() <= feas_tol);
            if feasible {
                let obj = lp.objective.dot(&v);
                best = Some(match best {
                    None => obj,
                    Some(cur) => cur.min(obj),
                });
            }
        }
        // next combination
        let mut i = need;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] <= pool.len() - (need - i) {
                for k in i + 1..need {
                    choice[k] = choice[k - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn simplex_matches_vertex_enumeration_on_200_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1);
    let mut checked = 0;
    while checked < 200 {
        let RandomLp { lp } = random_lp(&mut rng);
        let oracle = vertex_enumeration_optimum(&lp).expect("feasible by construction");
        let sol = solve_lp(&lp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "lp #{checked}");
        assert!(
            (sol.objective - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
            "lp #{checked}: simplex {} vs oracle {}",
            sol.objective,
            oracle
        );
        assert!(sol.feasibility_residual <= 1e-8);
        assert!(sol.certificate_residual <= 1e-6);
        checked += 1;
    }
}

#[test]
fn simplex_certificates_on_infeasible_and_unbounded_families() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2);
    for _ in 0..25 {
        // infeasible: random row forced to contradict itself
        let n = rng.gen_range(2..=4);
        let row = DMatrix::from_fn(1, n, |_, _| rng.gen_range(0.5..1.5));
        let mut a_ub = DMatrix::zeros(2, n);
        a_ub.view_mut((0, 0), (1, n)).copy_from(&row);
        a_ub.view_mut((1, 0), (1, n)).copy_from(&(-row.clone()));
        let lp = LinearProgram {
            objective: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ub,
            b_ub: DVector::from_row_slice(&[1.0, -2.0]), // row v <= 1 and row v >= 2
            lower: DVector::zeros(n),
            upper: DVector::from_element(n, 10.0),
        };
        let sol = solve_lp(&lp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        assert!(sol.certificate_residual <= 1e-6);
    }
    for _ in 0..25 {
        // unbounded: a free direction with negative cost
        let n = rng.gen_range(2..=4);
        let mut lp = LinearProgram {
            objective: DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(0.1..1.0))),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ub: DMatrix::zeros(0, n),
            b_ub: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        };
        lp.objective[0] = rng.gen_range(0.1..1.0); // minimize +c over free vars: drive to -inf
        let sol = solve_lp(&lp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
        assert!(sol.certificate_residual <= 1e-6);
    }
}
