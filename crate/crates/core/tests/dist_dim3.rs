//! Higher-dimensional solves: full three-output programs with active
//! antipodal symmetry, the reduced two-dimensional path, the worked
//! cross-moment extreme, and the zero-covariance degenerate program.

use nalgebra::{DMatrix, DVector};
use unpctl_core::dist::{
    build_p3, solve_optimal_distribution_for_b1, CovarianceBounds, GridOptions, Monotonicity,
    SphericalGrid,
};
use unpctl_core::lp::{solve_lp, LpStatus, SolveOptions};
use unpctl_core::noise::{sample_theta_full, IntraPieceMode, NoiseSource};

#[test]
fn full_three_output_solve() {
    // B1 = I3 with unequal caps: the grid runs in dimension 3 with both a
    // [0, pi] and a [0, 2 pi] angle, so the mirror and half-turn symmetry
    // rows are all active
    let b1 = DMatrix::identity(3, 3);
    let caps = [0.05, 0.04, 0.03];
    let opts = GridOptions {
        n_angles: vec![3, 4],
        n_radial: 8,
        tail_factor: 5.0,
        monotonicity: Monotonicity::DensityScaled,
        lp: SolveOptions::default(),
    };
    let dist = solve_optimal_distribution_for_b1(&b1, &caps, 0.3, &opts).unwrap();
    assert_eq!(dist.grid.dim, 3);
    dist.validate().unwrap();
    assert!(dist.objective > 0.0 && dist.objective < 1.0);

    // claimed covariance within the caps
    let sig = dist.total_covariance();
    for i in 0..3 {
        assert!(sig[(i, i)] <= caps[i] + 1e-7);
    }

    // sampling: zero mean and piece containment
    let src = NoiseSource::solved(dist.clone(), IntraPieceMode::VolumeUniform, 17).unwrap();
    let mut rng = src.rng();
    let n = 200_000;
    let mut mean = DVector::zeros(3);
    for _ in 0..n {
        let th = sample_theta_full(&src, &mut rng);
        assert!(th.norm() <= dist.grid.n_radial as f64 * dist.grid.delta_r + 1e-12);
        mean += th;
    }
    mean /= n as f64;
    assert!(mean.amax() < 5e-3, "sample mean {mean}");
}

#[test]
fn reduced_two_of_three_outputs() {
    // rank-2 B1 in a 3-output system: the program runs in the rotated
    // 2-dimensional coordinates and reconstructed samples stay on the
    // column plane of B1
    let b1 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let opts = GridOptions {
        n_angles: vec![4],
        n_radial: 10,
        ..GridOptions::default()
    };
    let dist = solve_optimal_distribution_for_b1(&b1, &[0.05, 0.05], 0.3, &opts).unwrap();
    assert_eq!(dist.grid.dim, 2);
    let red = dist.reduction.clone().unwrap();
    assert_eq!(red.rank, 2);
    let t21 = red.t1.rows(2, 1).into_owned();
    let src = NoiseSource::solved(dist, IntraPieceMode::VolumeUniform, 23).unwrap();
    let mut rng = src.rng();
    for _ in 0..500 {
        let th = sample_theta_full(&src, &mut rng);
        assert_eq!(th.len(), 3);
        assert!((&t21 * &th).norm() <= 1e-9 * (1.0 + th.norm()));
        let u_e = unpctl_core::compute_extra_input(&b1, &(&red.t1 * &th), Some(&red)).unwrap();
        assert!((&b1 * u_e - &th).norm() <= 1e-9 * (1.0 + th.norm()));
    }
}

#[test]
fn cross_moment_worked_extreme() {
    // for axes (0, 1) in three dimensions the factor is
    // sin(2 phi_1) cos(phi_2) / 2; the bracket max is r_hi^2 times the
    // factor maximum over the angular box
    let grid = SphericalGrid::build(3, vec![6, 8], 5, 1.0, 0.4).unwrap();
    let idx = [1usize, 1, 3];
    let (.., r_hi) = grid.radial_bounds(idx[2]);
    let (_, hi) = grid.piece_moment_bounds(&idx, 0, 1, 64);
    // brute-force the factor maximum on a fine grid
    let (p1, p2) = (grid.angular_bounds(0, idx[0]), grid.angular_bounds(1, idx[1]));
    let mut factor_max = f64::NEG_INFINITY;
    for a in 0..=2000 {
        let phi1 = p1.0 + (p1.1 - p1.0) * a as f64 / 2000.0;
        for b in 0..=2000 {
            let phi2 = p2.0 + (p2.1 - p2.0) * b as f64 / 2000.0;
            factor_max = factor_max.max(0.5 * (2.0 * phi1).sin() * phi2.cos());
        }
    }
    let want = r_hi * r_hi * factor_max;
    // sampled extremization with Lipschitz slack brackets the true extreme
    assert!(hi >= want - 1e-9);
    assert!(hi <= want + 0.02 * r_hi * r_hi, "hi {hi} vs exact {want}");
}

#[test]
fn zero_covariance_forces_innermost_mass() {
    // Sigma_bar = 0: the radial moment brackets force every outer shell to
    // zero, all mass sits in the innermost piece region, and the ball mass
    // is 1 for any alpha at least delta_r
    let grid = SphericalGrid::build(2, vec![1], 6, 0.6, 0.2).unwrap();
    let bounds = CovarianceBounds {
        lower: DMatrix::zeros(2, 2),
        upper: DMatrix::zeros(2, 2),
    };
    let (lp, layout) = build_p3(&grid, &bounds, Monotonicity::DensityScaled).unwrap();
    let sol = solve_lp(&lp, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-8);
    // every shell with positive inner radius carries no mass
    for k in 1..grid.n_radial {
        assert!(sol.v[layout.p_col(k)].abs() < 1e-8);
    }
}
