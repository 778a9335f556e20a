//! Distribution-solver checks against independent oracles: an exhaustive
//! simplex-grid search on a 3-shell toy program, the continuous
//! uniform-box bound, the center-optimality sweep, and the rank-reduction
//! support property.

use nalgebra::{DMatrix, DVector};
use unpctl_core::dist::{
    build_p3, solve_optimal_distribution, CovarianceBounds, GridOptions, Monotonicity,
    SphericalGrid,
};
use unpctl_core::lp::{solve_lp, LpStatus, SolveOptions};
use unpctl_core::lti::LtiSystem;
use unpctl_core::noise::{sample_theta, IntraPieceMode, NoiseSource};
use unpctl_core::attacker::conf_prob_uniform_box;

/// Toy instance: d = 2, one full-circle angular piece, 3 radial shells of
/// width 0.1. With the full-circle piece the per-pair extremes are exactly
/// cos^2 in [0,1], sin^2 in [0,1], sin(2 phi)/2 in [-1/2, 1/2], so for
/// given shell masses p the covariance claims are feasible iff
///   sum_k r_{k-1}^2 p_k <= 2 s  (minimum achievable claimed trace),
/// with s the per-axis covariance cap; the cross term always admits zero.
/// That reduces the toy program to a search over the probability simplex.
#[test]
fn p3_toy_grid_matches_exhaustive_search() {
    let grid = SphericalGrid::build(2, vec![1], 3, 0.3, 0.2).unwrap();
    assert_eq!(grid.n_radial, 3);
    assert_eq!(grid.k_alpha, 2);
    let s = 0.008;
    let bounds = CovarianceBounds {
        lower: DMatrix::zeros(2, 2),
        upper: DMatrix::from_diagonal(&DVector::from_row_slice(&[s, s])),
    };

    for mono in [Monotonicity::DensityScaled, Monotonicity::ProbabilityLiteral] {
        let (lp, _) = build_p3(&grid, &bounds, mono).unwrap();
        let sol = solve_lp(&lp, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);

        // exhaustive search over the 3-simplex at step 1e-3
        let vols: Vec<f64> = (0..3)
            .map(|k| grid.piece_volume(&grid.piece_index(k)))
            .collect();
        let r_lo2 = [0.0, 0.01, 0.04];
        let step = 1e-3;
        let n_steps = 1000usize;
        let mut best = f64::INFINITY;
        for i in 0..=n_steps {
            for j in 0..=(n_steps - i) {
                let p1 = i as f64 * step;
                let p2 = j as f64 * step;
                let p3 = 1.0 - p1 - p2;
                let p = [p1, p2, p3];
                let mono_ok = match mono {
                    Monotonicity::ProbabilityLiteral => p[1] <= p[0] + 1e-12 && p[2] <= p[1] + 1e-12,
                    Monotonicity::DensityScaled => {
                        p[1] * vols[0] <= p[0] * vols[1] + 1e-12
                            && p[2] * vols[1] <= p[1] * vols[2] + 1e-12
                    }
                };
                if !mono_ok {
                    continue;
                }
                let min_trace: f64 = (0..3).map(|k| r_lo2[k] * p[k]).sum();
                if min_trace > 2.0 * s + 1e-12 {
                    continue;
                }
                best = best.min(p1 + p2);
            }
        }
        assert!(
            (sol.objective - best).abs() <= 1e-3,
            "{mono:?}: lp {} vs exhaustive {}",
            sol.objective,
            best
        );
    }
}

fn demo_solve(alpha: f64) -> unpctl_core::dist::DiscreteDistribution {
    let sys = LtiSystem::double_integrator_2d(1.0);
    solve_optimal_distribution(&sys, &[0.5, 0.5], alpha, &GridOptions::default()).unwrap()
}

/// The continuous uniform box is feasible for the continuous problem, so at
/// small alpha the discretized optimum must not exceed its ball probability
/// by more than the surface-shell discretization slack.
#[test]
fn lp_optimum_bounded_by_uniform_box() {
    let sigma = 0.125f64.sqrt();
    for alpha in [0.1, 0.2, 0.4] {
        assert!(alpha <= 3.0f64.sqrt() * sigma);
        let dist = demo_solve(alpha);
        let box_prob = conf_prob_uniform_box(&[sigma, sigma], alpha);
        // surface pieces: the outermost shell still inside the ball
        let surface_mass: f64 = (0..dist.grid.piece_count())
            .filter(|&f| dist.grid.piece_index(f)[1] + 1 == dist.grid.k_alpha)
            .map(|f| dist.p[f])
            .sum();
        assert!(
            dist.objective <= box_prob + 2.0 * surface_mass + 1e-9,
            "alpha {alpha}: {} vs box {box_prob} + slack {surface_mass}",
            dist.objective
        );
    }
}

/// Center optimality (the monotone-density structure): over a sweep of 100
/// ball centers, the Monte Carlo ball probability is maximal at the origin
/// within four standard errors of each paired difference.
#[test]
fn ball_probability_maximal_at_origin() {
    let alpha = 0.8;
    let dist = demo_solve(alpha);
    let a_half = dist.grid.outer_radius / 2.0;
    let src = NoiseSource::solved(dist, IntraPieceMode::VolumeUniform, 2024).unwrap();
    let mut rng = src.rng();
    let n = 200_000usize;
    let samples: Vec<DVector<f64>> = (0..n).map(|_| sample_theta(&src, &mut rng)).collect();

    let in_ball = |th: &DVector<f64>, cx: f64, cy: f64| {
        let dx = th[0] - cx;
        let dy = th[1] - cy;
        dx * dx + dy * dy <= alpha * alpha
    };

    for k in 0..100 {
        // deterministic spiral of offsets with ||delta|| <= a/2
        let r = a_half * (k as f64 + 1.0) / 100.0;
        let ang = 2.399963229728653 * k as f64; // golden angle
        let (cx, cy) = (r * ang.cos(), r * ang.sin());
        let mut n01 = 0u64; // in center ball only
        let mut n10 = 0u64; // in offset ball only
        for t in &samples {
            let a = in_ball(t, 0.0, 0.0);
            let b = in_ball(t, cx, cy);
            match (a, b) {
                (true, false) => n01 += 1,
                (false, true) => n10 += 1,
                _ => {}
            }
        }
        // count at the offset center = count0 - n01 + n10
        let diff = n01 as f64 - n10 as f64;
        let se = ((n01 + n10) as f64).sqrt();
        assert!(
            diff >= -4.0 * se,
            "offset {k} at ({cx:.3},{cy:.3}): paired deficit {diff} vs 4se {se}"
        );
    }
}

/// For b < m every reconstructed sample satisfies T21 theta = 0.
#[test]
fn reduction_support_constraint() {
    let b1 = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
    let dist = unpctl_core::dist::solve_optimal_distribution_for_b1(
        &b1,
        &[0.4],
        0.3,
        &GridOptions::default(),
    )
    .unwrap();
    let red = dist.reduction.clone().unwrap();
    let t21 = red.t1.rows(red.rank, red.t1.nrows() - red.rank).into_owned();
    let src = NoiseSource::solved(dist, IntraPieceMode::VolumeUniform, 5).unwrap();
    let mut rng = src.rng();
    for _ in 0..1000 {
        let theta = unpctl_core::noise::sample_theta_full(&src, &mut rng);
        assert!((&t21 * &theta).norm() <= 1e-9 * (1.0 + theta.norm()));
    }
}

/// Moment brackets stay valid brackets when the angular boxes shrink: a
/// denser sub-grid only tightens them.
#[test]
fn moment_bounds_tighten_with_subdivision() {
    let grid = SphericalGrid::build(3, vec![4, 4], 5, 1.0, 0.4).unwrap();
    for f in [0usize, 7, 33] {
        let idx = grid.piece_index(f);
        for i in 0..3 {
            for j in i..3 {
                let coarse = grid.piece_moment_bounds(&idx, i, j, 8);
                let fine = grid.piece_moment_bounds(&idx, i, j, 64);
                assert!(fine.0 >= coarse.0 - 1e-12);
                assert!(fine.1 <= coarse.1 + 1e-12);
            }
        }
    }
}
