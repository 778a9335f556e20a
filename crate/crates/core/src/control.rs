//! Nominal controllers and the performance/unpredictability trade-off:
//! finite-horizon LQR with extra-cost accounting, and multi-agent
//! cooperative control with Lyapunov-based degradation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::LtiSystem;

/// Axis-aligned box with +-infinity allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl AxisBox {
    pub fn unbounded(n: usize) -> Self {
        AxisBox {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::shape("AxisBox", "bound length mismatch"));
        }
        for i in 0..self.lower.len() {
            if self.lower[i] > self.upper[i] {
                return Err(Error::Config(format!("empty box on axis {i}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        (0..v.len()).all(|i| v[i] >= self.lower[i] - tol && v[i] <= self.upper[i] + tol)
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            (0..v.len()).map(|i| v[i].clamp(self.lower[i], self.upper[i])),
        )
    }
}

/// Finite-horizon quadratic cost
/// sum_{k=0}^{horizon} 1/2 x'Qx + q'x + 1/2 u'Ru with boxes on states,
/// inputs, and the extra-input budget.
#[derive(Debug, Clone)]
pub struct LqrCost {
    pub q: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub state_box: AxisBox,
    pub input_box: AxisBox,
    pub ue_box: AxisBox,
}

impl LqrCost {
    pub fn unconstrained(
        q: DMatrix<f64>,
        q_lin: DVector<f64>,
        r: DMatrix<f64>,
        horizon: usize,
    ) -> Self {
        let n = q.nrows();
        let p = r.nrows();
        LqrCost {
            q,
            q_lin,
            r,
            horizon,
            state_box: AxisBox::unbounded(n),
            input_box: AxisBox::unbounded(p),
            ue_box: AxisBox::unbounded(p),
        }
    }

    fn validate(&self, sys: &LtiSystem) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.q.nrows() != sys.n() || self.q.ncols() != sys.n() || self.q_lin.len() != sys.n() {
            return Err(Error::shape("LqrCost", "Q/q dimensions"));
        }
        if self.r.nrows() != sys.p() || self.r.ncols() != sys.p() {
            return Err(Error::shape("LqrCost", "R dimensions"));
        }
        self.state_box.validate()?;
        self.input_box.validate()?;
        self.ue_box.validate()?;
        // Q PSD by eigenvalues, R PD by factorization
        let q_sym = (&self.q + self.q.transpose()) * 0.5;
        if q_sym.symmetric_eigenvalues().iter().any(|&l| l < -1e-9) {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::Config("R must be positive definite".into()));
        }
        Ok(())
    }
}

/// Time-varying affine feedback u_k = -K_k x - d_k.
#[derive(Debug, Clone)]
pub struct LqrGain {
    pub k_gain: DMatrix<f64>,
    pub feedforward: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
    /// Steps where the input box clipped the unconstrained optimum.
    pub clamped_steps: Vec<usize>,
    /// Per-step feedback, usable for closed-loop replay under disturbances.
    pub feedback: Vec<LqrGain>,
}

/// Backward Riccati recursion (with the linear cost term), then a forward
/// pass clamping each input to the box and verifying the state boxes.
pub fn solve_lqr(sys: &LtiSystem, cost: &LqrCost, x0: &DVector<f64>) -> Result<LqrSolution> {
    cost.validate(sys)?;
    if x0.len() != sys.n() {
        return Err(Error::shape("solve_lqr", "x0 length"));
    }
    let (a, b) = (sys.a(), sys.b());
    let horizon = cost.horizon;

    // value function V_k(x) = 1/2 x'P x + s'x + const
    let mut p_mat = cost.q.clone();
    let mut s_vec = cost.q_lin.clone();
    let mut gains: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let g = &cost.r + b.transpose() * &p_mat * b;
        let g_chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("R + B'PB not positive definite".into()))?;
        let f = b.transpose() * &p_mat * a;
        let h = b.transpose() * &s_vec;
        let k_gain = g_chol.solve(&f);
        let d_ff = g_chol.solve(&h);
        let p_next = &cost.q + a.transpose() * &p_mat * a - f.transpose() * &k_gain;
        p_mat = (&p_next + p_next.transpose()) * 0.5;
        s_vec = &cost.q_lin + a.transpose() * &s_vec - f.transpose() * &d_ff;
        gains.push((k_gain, d_ff));
    }
    gains.reverse(); // gains[k] applies at step k

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut clamped = Vec::new();
    let mut x = x0.clone();
    if !cost.state_box.contains(&x, 1e-9) {
        return Err(Error::InfeasibleTrajectory { step: 0 });
    }
    let mut total = 0.0;
    for (k, (k_gain, d_ff)) in gains.iter().enumerate() {
        let u_free = -(k_gain * &x) - d_ff;
        let u = cost.input_box.clamp(&u_free);
        if (&u - &u_free).amax() > 1e-12 {
            clamped.push(k);
        }
        total += 0.5 * (x.transpose() * &cost.q * &x)[(0, 0)]
            + cost.q_lin.dot(&x)
            + 0.5 * (u.transpose() * &cost.r * &u)[(0, 0)];
        let x_next = a * &x + b * &u;
        if !cost.state_box.contains(&x_next, 1e-9) {
            return Err(Error::InfeasibleTrajectory { step: k + 1 });
        }
        states.push(x.clone());
        inputs.push(u);
        x = x_next;
    }
    total += 0.5 * (x.transpose() * &cost.q * &x)[(0, 0)] + cost.q_lin.dot(&x);
    states.push(x);
    Ok(LqrSolution {
        inputs,
        states,
        cost: total,
        clamped_steps: clamped,
        feedback: gains
            .into_iter()
            .map(|(k_gain, feedforward)| LqrGain { k_gain, feedforward })
            .collect(),
    })
}

/// Mean and covariance of the state under stochastic extra input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// One step of mu <- A mu + B u, Sigma_x <- A Sigma_x A' + Sigma.
///
/// `sigma_theta` is the state-space covariance of theta_e = B u_e, i.e.
/// B Sigma_u B' lifted from the input-space covariance of u_e.
pub fn propagate_moments(
    sys: &LtiSystem,
    m0: &StateMoments,
    u: &DVector<f64>,
    sigma_theta: &DMatrix<f64>,
) -> Result<StateMoments> {
    let n = sys.n();
    if m0.mean.len() != n || m0.cov.nrows() != n || sigma_theta.nrows() != n {
        return Err(Error::shape("propagate_moments", "dimension mismatch"));
    }
    if u.len() != sys.p() {
        return Err(Error::shape("propagate_moments", "input length"));
    }
    let mean = sys.a() * &m0.mean + sys.b() * u;
    let cov = sys.a() * &m0.cov * sys.a().transpose() + sigma_theta;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(StateMoments { mean, cov })
}

/// Expected extra quadratic cost J_e = 1/2 tr(Sigma_x Q) + 1/2 tr(Sigma_u R).
pub fn extra_cost(
    sigma_x: &DMatrix<f64>,
    sigma_u_noise: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    0.5 * (sigma_x * q).trace() + 0.5 * (sigma_u_noise * r).trace()
}

/// Which power of sigma_u enters the w1 cost term of the LQR trade-off.
/// The printed objective mixes sigma_i^2 with a linear sigma_{u,i} term;
/// both readings are offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostVarianceTerm {
    LinearSigmaU,
    QuadraticSigmaU,
}

/// Per-input variance levels minimizing
/// -w2 sum_i sigma_i^2(sigma_u) + (w1/2) sum_l (r_ll + q_ll) term(sigma_u_l)
/// over the box 0 <= sigma_u_l <= cap_l. The objective is separable and
/// concave per coordinate, so each coordinate's optimum is at an interval
/// endpoint.
pub fn tradeoff_lqr(
    w1: f64,
    w2: f64,
    r: &DMatrix<f64>,
    q: &DMatrix<f64>,
    sigma_u_caps: &[f64],
    b1: &DMatrix<f64>,
    term: CostVarianceTerm,
) -> Result<Vec<f64>> {
    let p = b1.ncols();
    if sigma_u_caps.len() != p {
        return Err(Error::shape("tradeoff_lqr", "cap count"));
    }
    if w1 < 0.0 || w2 < 0.0 || sigma_u_caps.iter().any(|&c| c < 0.0) {
        return Err(Error::Config("weights and caps must be nonnegative".into()));
    }
    // sum_i sigma_i^2 = sum_l (sum_i b1[i,l]^2) sigma_u_l^2
    let out_coeff: Vec<f64> = (0..p)
        .map(|l| (0..b1.nrows()).map(|i| b1[(i, l)] * b1[(i, l)]).sum())
        .collect();
    let mut best = Vec::with_capacity(p);
    for l in 0..p {
        let rq = r[(l, l)] + q[(l, l)];
        let f = |s: f64| {
            let cost_term = match term {
                CostVarianceTerm::LinearSigmaU => s,
                CostVarianceTerm::QuadraticSigmaU => s * s,
            };
            -w2 * out_coeff[l] * s * s + 0.5 * w1 * rq * cost_term
        };
        let cap = sigma_u_caps[l];
        let (f0, fc) = (f(0.0), f(cap));
        let pick = if fc < f0 {
            cap
        } else if f0 < fc {
            0.0
        } else if w2 > 0.0 {
            cap
        } else {
            0.0
        };
        best.push(pick);
    }
    Ok(best)
}

/// Directed communication topology with per-agent coupling gains, shared
/// feedback matrix, state-space formation offsets, and agent dynamics.
#[derive(Debug, Clone)]
pub struct CoopNetwork {
    pub adjacency: DMatrix<f64>,
    pub gains: Vec<f64>,
    pub k_fb: DMatrix<f64>,
    pub offsets: Vec<DVector<f64>>,
    pub a_sys: DMatrix<f64>,
    pub b_in: DMatrix<f64>,
}

impl CoopNetwork {
    pub fn new(
        adjacency: DMatrix<f64>,
        gains: Vec<f64>,
        k_fb: DMatrix<f64>,
        offsets: Vec<DVector<f64>>,
        a_sys: DMatrix<f64>,
        b_in: DMatrix<f64>,
    ) -> Result<Self> {
        let n_agents = adjacency.nrows();
        if adjacency.ncols() != n_agents {
            return Err(Error::shape("CoopNetwork", "adjacency must be square"));
        }
        if adjacency.iter().any(|&a| a != 0.0 && a != 1.0) {
            return Err(Error::Config("adjacency entries must be 0 or 1".into()));
        }
        if gains.len() != n_agents || offsets.len() != n_agents {
            return Err(Error::shape("CoopNetwork", "per-agent field length"));
        }
        if gains.iter().any(|&g| g <= 0.0) {
            return Err(Error::Config("coupling gains must be positive".into()));
        }
        let n = a_sys.nrows();
        if a_sys.ncols() != n || b_in.nrows() != n {
            return Err(Error::shape("CoopNetwork", "agent dynamics shape"));
        }
        if k_fb.nrows() != b_in.ncols() || k_fb.ncols() != n {
            return Err(Error::shape("CoopNetwork", "feedback matrix shape"));
        }
        if offsets.iter().any(|d| d.len() != n) {
            return Err(Error::shape("CoopNetwork", "offset length"));
        }
        Ok(CoopNetwork {
            adjacency,
            gains,
            k_fb,
            offsets,
            a_sys,
            b_in,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn agent_dim(&self) -> usize {
        self.a_sys.nrows()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_agents())
            .map(|i| self.adjacency.row(i).sum())
            .collect()
    }

    /// L = D - A+ with D the out-degree diagonal.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let d = self.degrees();
        let mut l = -self.adjacency.clone();
        for i in 0..self.n_agents() {
            l[(i, i)] += d[i];
        }
        l
    }

    /// gamma_i = 1 / (2 (1 + d_i)).
    pub fn gains_from_degrees(adjacency: &DMatrix<f64>) -> Vec<f64> {
        (0..adjacency.nrows())
            .map(|i| 1.0 / (2.0 * (1.0 + adjacency.row(i).sum())))
            .collect()
    }

    /// Five-agent directed formation demo: single-integrator planar agents,
    /// identity feedback, degree-derived gains, and the demo formation
    /// offsets. Agent 5 (index 4) has no neighbors and acts as the anchor.
    pub fn formation5() -> Self {
        let adjacency = DMatrix::from_row_slice(
            5,
            5,
            &[
                0.0, 0.0, 0.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 0.0, 1.0, //
                0.0, 1.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let gains = Self::gains_from_degrees(&adjacency);
        let dx = [-2.0, -4.0, -3.0, -1.0, 0.0];
        let dy = [2.0, 0.0, -1.5, -1.5, 0.0];
        let offsets = (0..5)
            .map(|i| DVector::from_row_slice(&[dx[i], dy[i]]))
            .collect();
        CoopNetwork {
            adjacency,
            gains,
            k_fb: DMatrix::identity(2, 2),
            offsets,
            a_sys: DMatrix::identity(2, 2),
            b_in: DMatrix::identity(2, 2),
        }
    }
}

/// Stacked closed-loop dynamics with the block-diagonal noise covariance.
#[derive(Debug, Clone)]
pub struct CollectiveSystem {
    pub a_c: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub spectral_radius: f64,
    pub n_agents: usize,
    pub agent_dim: usize,
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// A_c = (I_N (x) A) - Gamma (L (x) B K) with the per-agent gains applied
/// row-blockwise, plus Lambda = blockdiag(Sigma_i).
pub fn build_collective(
    net: &CoopNetwork,
    per_agent_sigma: &[DMatrix<f64>],
) -> Result<CollectiveSystem> {
    let n_agents = net.n_agents();
    let n = net.agent_dim();
    if per_agent_sigma.len() != n_agents {
        return Err(Error::shape("build_collective", "sigma count"));
    }
    let bk = &net.b_in * &net.k_fb;
    let l = net.laplacian();
    let mut a_c = DMatrix::zeros(n_agents * n, n_agents * n);
    for i in 0..n_agents {
        for j in 0..n_agents {
            let mut block = if i == j { net.a_sys.clone() } else { DMatrix::zeros(n, n) };
            block -= &bk * (net.gains[i] * l[(i, j)]);
            a_c.view_mut((i * n, j * n), (n, n)).copy_from(&block);
        }
    }
    let mut lambda = DMatrix::zeros(n_agents * n, n_agents * n);
    for (i, sig) in per_agent_sigma.iter().enumerate() {
        if sig.nrows() != n || sig.ncols() != n {
            return Err(Error::shape("build_collective", "sigma block shape"));
        }
        lambda.view_mut((i * n, i * n), (n, n)).copy_from(sig);
    }
    let rho = spectral_radius(&a_c);
    Ok(CollectiveSystem {
        a_c,
        lambda,
        spectral_radius: rho,
        n_agents,
        agent_dim: n,
    })
}

/// Leader-anchored formation-error collective: followers' errors
/// e_i = (x_i - Delta_i) - (x_L - Delta_L), with the anchor noise-free so
/// that the error noise stays block-diagonal. Requires the anchor to have
/// no neighbors and the offsets to be equilibria of the agent dynamics.
pub fn anchored_error_system(
    net: &CoopNetwork,
    leader: usize,
    follower_sigma: &[DMatrix<f64>],
) -> Result<CollectiveSystem> {
    let n_agents = net.n_agents();
    let n = net.agent_dim();
    if leader >= n_agents {
        return Err(Error::Config("leader index out of range".into()));
    }
    if net.adjacency.row(leader).sum() != 0.0 {
        return Err(Error::Config(
            "anchored error system needs a leader without neighbors".into(),
        ));
    }
    for i in 0..n_agents {
        let d = &net.offsets[i] - &net.offsets[leader];
        let drift = (&net.a_sys - DMatrix::identity(n, n)) * d;
        if drift.amax() > 1e-9 {
            return Err(Error::Config(
                "formation offsets are not an equilibrium of the agent dynamics".into(),
            ));
        }
    }
    let followers: Vec<usize> = (0..n_agents).filter(|&i| i != leader).collect();
    if follower_sigma.len() != followers.len() {
        return Err(Error::shape("anchored_error_system", "sigma count"));
    }
    let l = net.laplacian();
    let bk = &net.b_in * &net.k_fb;
    let nf = followers.len();
    let mut a_c = DMatrix::zeros(nf * n, nf * n);
    for (bi, &i) in followers.iter().enumerate() {
        for (bj, &j) in followers.iter().enumerate() {
            let mut block = if i == j { net.a_sys.clone() } else { DMatrix::zeros(n, n) };
            block -= &bk * (net.gains[i] * l[(i, j)]);
            a_c.view_mut((bi * n, bj * n), (n, n)).copy_from(&block);
        }
    }
    let mut lambda = DMatrix::zeros(nf * n, nf * n);
    for (bi, sig) in follower_sigma.iter().enumerate() {
        if sig.nrows() != n || sig.ncols() != n {
            return Err(Error::shape("anchored_error_system", "sigma block shape"));
        }
        lambda.view_mut((bi * n, bi * n), (n, n)).copy_from(sig);
    }
    let rho = spectral_radius(&a_c);
    Ok(CollectiveSystem {
        a_c,
        lambda,
        spectral_radius: rho,
        n_agents: nf,
        agent_dim: n,
    })
}

#[derive(Debug, Clone)]
pub enum LyapunovOutcome {
    Solution { sigma: DMatrix<f64>, residual: f64 },
    Divergent { spectral_radius: f64 },
}

/// Solve Sigma = A_c Sigma A_c' + Lambda by the vectorized linear system
/// (I - A_c (x) A_c) vec(Sigma) = vec(Lambda); the residual is verified to
/// 1e-10 (1 + ||Lambda||_F). Spectral radius at or above 1 reports Divergent.
pub fn solve_discrete_lyapunov(a_c: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<LyapunovOutcome> {
    let n = a_c.nrows();
    if a_c.ncols() != n || lambda.nrows() != n || lambda.ncols() != n {
        return Err(Error::shape("solve_discrete_lyapunov", "square inputs"));
    }
    let lam_sym = (lambda + lambda.transpose()) * 0.5;
    if lam_sym.symmetric_eigenvalues().iter().any(|&l| l < -1e-9) {
        return Err(Error::Config("Lambda must be positive semidefinite".into()));
    }
    let rho = spectral_radius(a_c);
    if rho >= 1.0 - 1e-9 {
        return Ok(LyapunovOutcome::Divergent { spectral_radius: rho });
    }
    let kron = a_c.kronecker(a_c);
    let sys = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(lam_sym.as_slice());
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov system singular".into()))?;
    let sigma = DMatrix::from_column_slice(n, n, sol.as_slice());
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let residual = (&sigma - a_c * &sigma * a_c.transpose() - &lam_sym).norm();
    let tol = 1e-10 * (1.0 + lam_sym.norm());
    if residual > tol {
        return Err(Error::Numerical(format!(
            "Lyapunov residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )));
    }
    if sigma.symmetric_eigenvalues().iter().any(|&l| l < -1e-9) {
        return Err(Error::Numerical("Lyapunov solution not PSD".into()));
    }
    Ok(LyapunovOutcome::Solution { sigma, residual })
}

/// Steady-state cooperative degradation 1/2 tr(Sigma*_c Q).
pub fn coop_degradation(sigma_star: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    0.5 * (sigma_star * q).trace()
}

#[derive(Debug, Clone, Copy)]
pub struct CoopWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

/// Per-agent input deviations minimizing
/// (w1/2) tr(Sigma*_c Q) + (w2/2) sum_j tr(Sigma_u^j R) - w3 sum_{j,i} sigma_{u,i}^j
/// over per-agent boxes. tr(Sigma*_c Q) is linear in each Lambda block and
/// Lambda entries are quadratic in sigma_u, so every coordinate restriction
/// is a convex quadratic solved exactly from its endpoints and stationary
/// point; sweeps repeat until the objective change is below 1e-10.
pub fn tradeoff_coop(
    weights: CoopWeights,
    net: &CoopNetwork,
    r: &DMatrix<f64>,
    q: &DMatrix<f64>,
    caps: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n_agents = net.n_agents();
    let p = net.b_in.ncols();
    if caps.len() != n_agents || caps.iter().any(|c| c.len() != p) {
        return Err(Error::shape("tradeoff_coop", "cap shape"));
    }
    if weights.w1 < 0.0 || weights.w2 < 0.0 || weights.w3 < 0.0 {
        return Err(Error::Config("weights must be nonnegative".into()));
    }
    let zero_sigma = vec![DMatrix::zeros(net.agent_dim(), net.agent_dim()); n_agents];
    let coll = build_collective(net, &zero_sigma)?;
    if coll.spectral_radius >= 1.0 - 1e-9 {
        return Err(Error::Config(format!(
            "collective dynamics are not strictly stable (spectral radius {:.6})",
            coll.spectral_radius
        )));
    }

    // Lyapunov response per unit variance on coordinate (agent j, input i):
    // Lambda block = B e_i e_i' B'.
    let mut lyap_coeff = vec![vec![0.0f64; p]; n_agents];
    for j in 0..n_agents {
        for i in 0..p {
            let col = net.b_in.column(i).into_owned();
            let block = &col * col.transpose();
            let mut sigmas = zero_sigma.clone();
            sigmas[j] = block;
            let unit = build_collective(net, &sigmas)?;
            match solve_discrete_lyapunov(&unit.a_c, &unit.lambda)? {
                LyapunovOutcome::Solution { sigma, .. } => {
                    lyap_coeff[j][i] = (sigma * q).trace();
                }
                LyapunovOutcome::Divergent { spectral_radius } => {
                    return Err(Error::Config(format!(
                        "collective dynamics diverge (spectral radius {spectral_radius:.6})"
                    )));
                }
            }
        }
    }

    let coord_obj = |j: usize, i: usize, s: f64| {
        0.5 * weights.w1 * lyap_coeff[j][i] * s * s + 0.5 * weights.w2 * r[(i, i)] * s * s
            - weights.w3 * s
    };
    let mut sigma = vec![vec![0.0f64; p]; n_agents];
    let mut last_obj = f64::INFINITY;
    for _ in 0..64 {
        for j in 0..n_agents {
            for i in 0..p {
                let cap = caps[j][i];
                let quad = 0.5 * weights.w1 * lyap_coeff[j][i] + 0.5 * weights.w2 * r[(i, i)];
                let mut cands = vec![0.0, cap];
                if quad > 0.0 {
                    cands.push((weights.w3 / (2.0 * quad)).clamp(0.0, cap));
                } else if weights.w3 > 0.0 {
                    // objective is -w3 s: the cap wins outright
                    cands = vec![cap];
                }
                let best = cands
                    .into_iter()
                    .min_by(|a, b| {
                        coord_obj(j, i, *a)
                            .partial_cmp(&coord_obj(j, i, *b))
                            .unwrap()
                    })
                    .unwrap();
                sigma[j][i] = best;
            }
        }
        let obj: f64 = (0..n_agents)
            .flat_map(|j| (0..p).map(move |i| (j, i)))
            .map(|(j, i)| coord_obj(j, i, sigma[j][i]))
            .sum();
        if (last_obj - obj).abs() < 1e-10 {
            break;
        }
        last_obj = obj;
    }
    Ok(sigma)
}

/// u_i = gamma_i K sum_j a_ij ((x_j - Delta_j) - (x_i - Delta_i)).
pub fn consensus_input(
    net: &CoopNetwork,
    agent: usize,
    states: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let n_agents = net.n_agents();
    if agent >= n_agents || states.len() != n_agents {
        return Err(Error::shape("consensus_input", "agent/state count"));
    }
    let n = net.agent_dim();
    let mut acc = DVector::<f64>::zeros(n);
    for j in 0..n_agents {
        let a_ij = net.adjacency[(agent, j)];
        if a_ij != 0.0 {
            let ej = &states[j] - &net.offsets[j];
            let ei = &states[agent] - &net.offsets[agent];
            acc += (ej - ei) * a_ij;
        }
    }
    Ok(&net.k_fb * acc * net.gains[agent])
}
