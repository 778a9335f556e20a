//! Adversary models: exact-state and Kalman-filter estimators, the optimal
//! input-prediction rule, Monte Carlo estimation of the two unpredictability
//! metrics, and closed-form ball-probability oracles for the Gaussian and
//! uniform baselines.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::noise::{extra_input_map, sample_theta_full, NoiseSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackerMode {
    /// Condition C1: the adversary knows the state exactly.
    ExactState,
    /// Condition C2 with a Kalman filter supplying the estimate.
    KalmanFilter,
}

/// The adversary's running estimate. In Kalman mode `p_cov` is the estimate
/// error covariance; in exact-state mode it is held at zero.
#[derive(Debug, Clone)]
pub struct AttackerState {
    pub x_hat: DVector<f64>,
    pub p_cov: DMatrix<f64>,
    pub mode: AttackerMode,
}

#[derive(Debug, Clone)]
pub struct KalmanConfig {
    pub q_proc: DMatrix<f64>,
    pub r_meas: DMatrix<f64>,
}

impl AttackerState {
    pub fn exact(n: usize) -> Self {
        AttackerState {
            x_hat: DVector::zeros(n),
            p_cov: DMatrix::zeros(n, n),
            mode: AttackerMode::ExactState,
        }
    }

    pub fn kalman(x0: DVector<f64>, p0: DMatrix<f64>) -> Self {
        AttackerState {
            x_hat: x0,
            p_cov: p0,
            mode: AttackerMode::KalmanFilter,
        }
    }

    fn check_psd(&self) -> Result<()> {
        let sym = (&self.p_cov + self.p_cov.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        if eig.iter().any(|&l| l < -1e-9) {
            return Err(Error::Numerical(format!(
                "attacker covariance lost positive semidefiniteness (min eig {:.3e})",
                eig.min()
            )));
        }
        Ok(())
    }
}

/// What the adversary sees at one step: exact-state mode receives the true
/// state (simulator privilege modeling C1), Kalman mode a noisy output.
pub enum Observation<'a> {
    TrueState(&'a DVector<f64>),
    Output(&'a DVector<f64>),
}

/// Advance the adversary estimate by one step: Kalman predict with
/// (A, B u_hat) then a measurement update with C and R_meas; exact-state
/// mode copies the true state and zeroes the covariance.
pub fn attacker_step(
    att: &AttackerState,
    sys: &LtiSystem,
    cfg: &KalmanConfig,
    obs: &Observation,
    u_hat: &DVector<f64>,
) -> Result<AttackerState> {
    match (att.mode, obs) {
        (AttackerMode::ExactState, Observation::TrueState(x)) => Ok(AttackerState {
            x_hat: (*x).clone(),
            p_cov: DMatrix::zeros(sys.n(), sys.n()),
            mode: AttackerMode::ExactState,
        }),
        (AttackerMode::ExactState, Observation::Output(_)) => Err(Error::Config(
            "exact-state attacker must be fed the true state".into(),
        )),
        (AttackerMode::KalmanFilter, Observation::Output(y)) => {
            let (n, m) = (sys.n(), sys.m());
            if y.len() != m || att.x_hat.len() != n {
                return Err(Error::shape("attacker_step", "observation size"));
            }
            // predict
            let x_pred = sys.a() * &att.x_hat + sys.b() * u_hat;
            let p_pred = sys.a() * &att.p_cov * sys.a().transpose() + &cfg.q_proc;
            // update
            let s = sys.c() * &p_pred * sys.c().transpose() + &cfg.r_meas;
            let s_sym = (&s + s.transpose()) * 0.5;
            let chol = s_sym.clone().cholesky().ok_or_else(|| {
                let eig = s_sym.symmetric_eigenvalues();
                Error::Numerical(format!(
                    "innovation covariance not positive definite \
                     (eigenvalue range [{:.3e}, {:.3e}])",
                    eig.min(),
                    eig.max()
                ))
            })?;
            // K = P C' S^{-1}  via  S K' = C P'
            let k_t = chol.solve(&(sys.c() * p_pred.transpose()));
            let k = k_t.transpose();
            let innov = *y - sys.c() * &x_pred;
            let x_hat = &x_pred + &k * innov;
            let p_upd = (DMatrix::identity(n, n) - &k * sys.c()) * &p_pred;
            let p_cov = (&p_upd + p_upd.transpose()) * 0.5;
            let next = AttackerState {
                x_hat,
                p_cov,
                mode: AttackerMode::KalmanFilter,
            };
            next.check_psd()?;
            Ok(next)
        }
        (AttackerMode::KalmanFilter, Observation::TrueState(_)) => Err(Error::Config(
            "kalman attacker observes outputs, not states".into(),
        )),
    }
}

/// The defender's worst case: the adversary predicts the nominal input
/// exactly. Mode-independent.
pub fn optimal_input_prediction(u_true: &DVector<f64>) -> DVector<f64> {
    u_true.clone()
}

/// How the adversary guesses the nominal input inside the metric estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputPredictionRule {
    /// u_hat = u (the optimal prediction, default worst case).
    KnownInput,
    /// u_hat = 0 (the attack model's stated ignorance of u).
    Zero,
}

/// Estimator condition for i.i.d.-episode metrics: exact state (C1) or an
/// independent zero-mean Gaussian estimate error with known covariance (C2).
#[derive(Debug, Clone)]
pub enum AttackerSpec {
    ExactState,
    IndependentError { cov: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct UnpredictabilityMetrics {
    /// Empirical mean of ||eps_y||^2.
    pub variance_metric: f64,
    pub variance_std_err: f64,
    /// (alpha, empirical P(||eps_y||^2 <= alpha^2)) in the input order.
    pub conf_prob: Vec<(f64, f64)>,
    pub conf_prob_std_err: Vec<f64>,
    pub sample_count: u64,
}

impl UnpredictabilityMetrics {
    pub fn prob_at(&self, alpha: f64) -> Option<f64> {
        self.conf_prob
            .iter()
            .find(|(a, _)| (*a - alpha).abs() < 1e-12)
            .map(|&(_, p)| p)
    }
}

const SHARDS: u64 = 64;

/// Monte Carlo estimate of the variance and confidence-probability metrics.
///
/// Episodes are i.i.d.: draw theta (and the estimate error under C2), form
/// eps_y through the plant's one-step error with the configured input rule,
/// and accumulate. Episodes are sharded over a fixed number of RNG streams
/// derived from (seed, shard), merged by exact summation in shard order, so
/// the result is deterministic regardless of thread count.
#[allow(clippy::too_many_arguments)]
pub fn estimate_metrics(
    sys: &LtiSystem,
    source: &NoiseSource,
    attacker: &AttackerSpec,
    u_nominal: &DVector<f64>,
    rule: InputPredictionRule,
    alphas: &[f64],
    n_samples: u64,
    seed: u64,
) -> Result<UnpredictabilityMetrics> {
    if n_samples < 1 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    if alphas.is_empty() {
        return Err(Error::Config("alphas must be nonempty".into()));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) || alphas.iter().any(|&a| a <= 0.0) {
        return Err(Error::Config(
            "alphas must be positive and sorted ascending".into(),
        ));
    }
    if u_nominal.len() != sys.p() {
        return Err(Error::shape("estimate_metrics", "u_nominal length"));
    }
    if source.output_dim() != sys.m() {
        return Err(Error::shape(
            "estimate_metrics",
            format!(
                "noise source produces dimension {}, system output is {}",
                source.output_dim(),
                sys.m()
            ),
        ));
    }
    let err_chol = match attacker {
        AttackerSpec::ExactState => None,
        AttackerSpec::IndependentError { cov } => {
            if cov.nrows() != sys.n() || cov.ncols() != sys.n() {
                return Err(Error::shape(
                    "estimate_metrics",
                    "estimate-error covariance must be n x n",
                ));
            }
            let sym = (cov + cov.transpose()) * 0.5;
            // semidefinite factor: eigendecomposition handles rank deficiency
            let eig = sym.symmetric_eigen();
            if eig.eigenvalues.iter().any(|&l| l < -1e-9) {
                return Err(Error::Config("estimate-error covariance not PSD".into()));
            }
            let mut fac = eig.eigenvectors.clone();
            for (j, &l) in eig.eigenvalues.iter().enumerate() {
                let s = l.max(0.0).sqrt();
                for i in 0..fac.nrows() {
                    fac[(i, j)] *= s;
                }
            }
            Some(fac)
        }
    };
    let u_hat = match rule {
        InputPredictionRule::KnownInput => optimal_input_prediction(u_nominal),
        InputPredictionRule::Zero => DVector::zeros(sys.p()),
    };
    let b1 = sys.b1();
    let ue_map = extra_input_map(&b1, source.reduction());
    let alphas2: Vec<f64> = alphas.iter().map(|a| a * a).collect();

    struct ShardAcc {
        sum_s: f64,
        sum_s2: f64,
        counts: Vec<u64>,
    }

    let per_shard: Vec<u64> = (0..SHARDS)
        .map(|s| n_samples / SHARDS + u64::from(s < n_samples % SHARDS))
        .collect();

    let shards: Vec<ShardAcc> = (0..SHARDS as usize)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64 + 1);
            let mut acc = ShardAcc {
                sum_s: 0.0,
                sum_s2: 0.0,
                counts: vec![0; alphas2.len()],
            };
            let x = DVector::zeros(sys.n());
            for _ in 0..per_shard[shard] {
                let theta = sample_theta_full(source, &mut rng);
                let u_e = match source.reduction() {
                    None => &ue_map * &theta,
                    Some(red) => {
                        // map expects the rotated head components
                        let th_plus = &red.t1 * &theta;
                        &ue_map * th_plus.rows(0, red.rank)
                    }
                };
                let x_hat = match &err_chol {
                    None => x.clone(),
                    Some(fac) => {
                        let z = DVector::from_iterator(
                            sys.n(),
                            (0..sys.n()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
                        );
                        // x_hat = x - eps with eps = fac * z
                        -(fac * z)
                    }
                };
                let rec = sys
                    .one_step_error(&x, &x_hat, u_nominal, &u_hat, &u_e)
                    .expect("dimensions validated");
                let s = rec.eps_y.norm_squared();
                acc.sum_s += s;
                acc.sum_s2 += s * s;
                for (i, &a2) in alphas2.iter().enumerate() {
                    if s <= a2 {
                        acc.counts[i] += 1;
                    }
                }
            }
            acc
        })
        .collect();

    let n = n_samples as f64;
    let mut sum_s = 0.0;
    let mut sum_s2 = 0.0;
    let mut counts = vec![0u64; alphas.len()];
    for acc in &shards {
        sum_s += acc.sum_s;
        sum_s2 += acc.sum_s2;
        for (c, &a) in counts.iter_mut().zip(&acc.counts) {
            *c += a;
        }
    }
    let mean = sum_s / n;
    let var_s = (sum_s2 / n - mean * mean).max(0.0);
    let conf_prob: Vec<(f64, f64)> = alphas
        .iter()
        .zip(&counts)
        .map(|(&a, &c)| (a, c as f64 / n))
        .collect();
    let conf_prob_std_err: Vec<f64> = conf_prob
        .iter()
        .map(|&(_, p)| (p * (1.0 - p) / n).sqrt())
        .collect();
    Ok(UnpredictabilityMetrics {
        variance_metric: mean,
        variance_std_err: (var_s / n).sqrt(),
        conf_prob,
        conf_prob_std_err,
        sample_count: n_samples,
    })
}

/// Exact P(||theta||^2 <= alpha^2) for theta with m i.i.d. N(0, sigma2)
/// components: the chi-square ball probability. For m = 2 this equals
/// 1 - exp(-alpha^2 / (2 sigma2)).
pub fn conf_prob_gaussian_isotropic(sigma2: f64, alpha: f64, m: usize) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    let chi2 = ChiSquared::new(m as f64).expect("positive dof");
    chi2.cdf(alpha * alpha / sigma2)
}

/// Exact probability that a point uniform on the box prod [-sqrt(3) s_i,
/// sqrt(3) s_i] falls in the centered ball of radius alpha. Closed-form
/// geometry for m <= 2, adaptive quadrature (rel. tol 1e-8) for m >= 3.
pub fn conf_prob_uniform_box(sigmas: &[f64], alpha: f64) -> f64 {
    assert!(!sigmas.is_empty(), "need at least one axis");
    let hs: Vec<f64> = sigmas.iter().map(|s| 3.0f64.sqrt() * s).collect();
    if alpha <= 0.0 {
        return 0.0;
    }
    let corner2: f64 = hs.iter().map(|h| h * h).sum();
    if alpha * alpha >= corner2 {
        return 1.0;
    }
    box_ball_prob(alpha, &hs)
}

fn box_ball_prob(alpha: f64, hs: &[f64]) -> f64 {
    match hs.len() {
        1 => (alpha / hs[0]).min(1.0),
        2 => {
            let (h1, h2) = (hs[0], hs[1]);
            // area of quarter intersection / (h1 h2), exploiting symmetry
            let x_max = h1.min(alpha);
            let x_break = (alpha * alpha - h2 * h2).max(0.0).sqrt().min(x_max);
            // antiderivative of sqrt(alpha^2 - x^2)
            let f = |x: f64| {
                0.5 * (x * (alpha * alpha - x * x).max(0.0).sqrt()
                    + alpha * alpha * (x / alpha).clamp(-1.0, 1.0).asin())
            };
            let area_q = h2 * x_break + (f(x_max) - f(x_break));
            (area_q / (h1 * h2)).min(1.0)
        }
        _ => {
            let h1 = hs[0];
            let rest = &hs[1..];
            let x_max = h1.min(alpha);
            let g = |x: f64| {
                let rem = alpha * alpha - x * x;
                if rem <= 0.0 {
                    0.0
                } else {
                    box_ball_prob(rem.sqrt(), rest)
                }
            };
            // integrate over one sign of x and normalize by h1
            adaptive_simpson(&g, 0.0, x_max, 1e-8, 24) / h1
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, depth: u32) -> f64 {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol * (1.0 + (left + right).abs()) {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a >= b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    rec(f, a, b, fa, fm, fb, whole, rel_tol, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::LtiSystem;
    use crate::noise::NoiseSource;

    fn scalar_system() -> LtiSystem {
        LtiSystem::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn exact_state_copies_truth() {
        let sys = LtiSystem::double_integrator_2d(1.0);
        let att = AttackerState::exact(4);
        let cfg = KalmanConfig {
            q_proc: DMatrix::zeros(4, 4),
            r_meas: DMatrix::zeros(2, 2),
        };
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let next = attacker_step(&att, &sys, &cfg, &Observation::TrueState(&x), &DVector::zeros(2))
            .unwrap();
        assert_eq!(next.x_hat, x);
        assert_eq!(next.p_cov.amax(), 0.0);
    }

    #[test]
    fn noiseless_observer_matches_measurement() {
        // A = 1, B = 0, C = 1, Q = 0, R = 0: one update pins x_hat = y
        let sys = scalar_system();
        let att = AttackerState::kalman(DVector::zeros(1), DMatrix::identity(1, 1));
        let cfg = KalmanConfig {
            q_proc: DMatrix::zeros(1, 1),
            r_meas: DMatrix::from_element(1, 1, 1e-15),
        };
        let y = DVector::from_row_slice(&[2.5]);
        let next =
            attacker_step(&att, &sys, &cfg, &Observation::Output(&y), &DVector::zeros(1)).unwrap();
        assert!((next.x_hat[0] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn scalar_kalman_recursion() {
        // prior (predicted) P = 1, R = 1: gain 0.5, posterior P = 0.5
        let sys = scalar_system();
        let att = AttackerState::kalman(DVector::zeros(1), DMatrix::identity(1, 1));
        let cfg = KalmanConfig {
            q_proc: DMatrix::zeros(1, 1),
            r_meas: DMatrix::identity(1, 1),
        };
        let y = DVector::from_row_slice(&[1.0]);
        let next =
            attacker_step(&att, &sys, &cfg, &Observation::Output(&y), &DVector::zeros(1)).unwrap();
        assert!((next.p_cov[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((next.x_hat[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_prediction_identity() {
        let u = DVector::from_row_slice(&[1.0, 2.0]);
        assert_eq!(optimal_input_prediction(&u), u);
        let z = DVector::zeros(3);
        assert_eq!(optimal_input_prediction(&z), z);
    }

    #[test]
    fn gaussian_oracle_closed_form() {
        // m = 2: 1 - exp(-alpha^2 / (2 sigma^2))
        let p = conf_prob_gaussian_isotropic(0.125, 0.1, 2);
        assert!((p - (1.0 - (-0.04f64).exp())).abs() < 1e-9);
        assert!((p - 0.039211).abs() < 1e-5);
        let p4 = conf_prob_gaussian_isotropic(0.125, 0.4, 2);
        assert!((p4 - 0.472708).abs() < 1e-5);
        assert!(conf_prob_gaussian_isotropic(0.125, 1e-12, 2) < 1e-9);
    }

    #[test]
    fn uniform_oracle_values() {
        let s = 0.125f64.sqrt();
        let sig = [s, s];
        assert!((conf_prob_uniform_box(&sig, 0.2) - std::f64::consts::PI * 0.04 / 1.5).abs() < 1e-9);
        assert!((conf_prob_uniform_box(&sig, 0.4) - 0.335103).abs() < 1e-5);
        assert!((conf_prob_uniform_box(&sig, 0.8) - 0.988033).abs() < 1e-5);
        // ball containing the box
        assert_eq!(conf_prob_uniform_box(&sig, 2.0), 1.0);
        // m = 1
        assert!((conf_prob_uniform_box(&[1.0], 3.0f64.sqrt() / 2.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_oracle_dim3_matches_mc() {
        let sig = [0.3, 0.4, 0.5];
        let p = conf_prob_uniform_box(&sig, 0.5);
        let src = NoiseSource::uniform_box(sig.to_vec(), 99).unwrap();
        let mut rng = src.rng();
        let n = 400_000;
        let mut hit = 0u64;
        for _ in 0..n {
            let th = crate::noise::sample_theta(&src, &mut rng);
            if th.norm_squared() <= 0.25 {
                hit += 1;
            }
        }
        let emp = hit as f64 / n as f64;
        assert!((p - emp).abs() < 4.0 * (emp * (1.0 - emp) / n as f64).sqrt() + 1e-3);
    }

    #[test]
    fn metrics_zero_noise_exact_attacker() {
        let sys = LtiSystem::double_integrator_2d(1.0);
        let src = NoiseSource::zero(2, 0);
        let m = estimate_metrics(
            &sys,
            &src,
            &AttackerSpec::ExactState,
            &DVector::from_row_slice(&[0.3, -0.4]),
            InputPredictionRule::KnownInput,
            &[0.1, 0.8],
            1000,
            1,
        )
        .unwrap();
        assert_eq!(m.variance_metric, 0.0);
        assert!(m.conf_prob.iter().all(|&(_, p)| p == 1.0));
    }

    #[test]
    fn metrics_gaussian_match_oracle() {
        let sys = LtiSystem::double_integrator_2d(1.0);
        let src = NoiseSource::gaussian_iso(0.125, 2, 7).unwrap();
        let m = estimate_metrics(
            &sys,
            &src,
            &AttackerSpec::ExactState,
            &DVector::zeros(2),
            InputPredictionRule::KnownInput,
            &[0.1, 0.8],
            200_000,
            7,
        )
        .unwrap();
        for (i, &(a, p)) in m.conf_prob.iter().enumerate() {
            let oracle = conf_prob_gaussian_isotropic(0.125, a, 2);
            assert!(
                (p - oracle).abs() <= 4.0 * m.conf_prob_std_err[i] + 1e-4,
                "alpha {a}: {p} vs {oracle}"
            );
        }
        assert!((m.variance_metric - 0.25).abs() <= 4.0 * m.variance_std_err);
    }

    #[test]
    fn metrics_deterministic_for_seed() {
        let sys = LtiSystem::double_integrator_2d(1.0);
        let src = NoiseSource::gaussian_iso(0.125, 2, 7).unwrap();
        let run = || {
            estimate_metrics(
                &sys,
                &src,
                &AttackerSpec::ExactState,
                &DVector::zeros(2),
                InputPredictionRule::KnownInput,
                &[0.2],
                50_000,
                42,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.variance_metric, b.variance_metric);
        assert_eq!(a.conf_prob, b.conf_prob);
    }

    #[test]
    fn worst_case_input_prediction() {
        // for a fixed theta distribution and exact state, u_hat = u minimizes
        // the variance metric over input-prediction offsets
        let sys = LtiSystem::double_integrator_2d(1.0);
        let src = NoiseSource::gaussian_iso(0.125, 2, 3).unwrap();
        let u = DVector::from_row_slice(&[0.5, -0.25]);
        let base = estimate_metrics(
            &sys,
            &src,
            &AttackerSpec::ExactState,
            &u,
            InputPredictionRule::KnownInput,
            &[0.4],
            100_000,
            11,
        )
        .unwrap();
        // a wrong input guess inflates the metric by ||B1 (u - u_hat)||^2
        let off = estimate_metrics(
            &sys,
            &src,
            &AttackerSpec::ExactState,
            &u,
            InputPredictionRule::Zero,
            &[0.4],
            100_000,
            11,
        )
        .unwrap();
        let shift = (sys.b1() * &u).norm_squared();
        assert!(off.variance_metric > base.variance_metric);
        assert!(
            (off.variance_metric - base.variance_metric - shift).abs()
                <= 4.0 * (off.variance_std_err + base.variance_std_err)
        );
    }
}
