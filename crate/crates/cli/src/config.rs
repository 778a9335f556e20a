//! Scenario configuration: JSON schema, validation with field-level
//! messages, and construction of the core objects it describes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unpctl_core::dist::{GridOptions, Monotonicity};
use unpctl_core::lti::LtiSystem;
use unpctl_core::noise::IntraPieceMode;
use unpctl_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemBlock,
    pub noise: NoiseBlock,
    #[serde(default)]
    pub attacker: AttackerBlock,
    #[serde(default)]
    pub controller: Option<ControllerBlock>,
    #[serde(default)]
    pub run: RunBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum SystemBlock {
    Preset {
        preset: String,
        #[serde(default = "one")]
        ts: f64,
    },
    Matrices {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// solved | gaussian | laplace | uniform | none
    #[serde(default = "default_kind")]
    pub kind: String,
    pub sigma_u2: Vec<f64>,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub grid: GridBlock,
    /// density | literal
    #[serde(default = "default_mono")]
    pub monotonicity: String,
    /// volume | reppoint
    #[serde(default = "default_intra")]
    pub intra_piece: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default = "default_angles")]
    pub n_angles: Vec<usize>,
    #[serde(default = "default_radial")]
    pub n_radial: usize,
    #[serde(default = "default_tail")]
    pub tail_factor: f64,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock {
            n_angles: vec![1],
            n_radial: 26,
            tail_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerBlock {
    /// exact | kalman
    #[serde(default = "default_attacker_mode")]
    pub mode: String,
    /// Diagonal of the filter's process-noise covariance (scalar broadcast).
    #[serde(default = "one")]
    pub q_proc: f64,
    /// Diagonal of the filter's observation-noise covariance.
    #[serde(default = "one")]
    pub r_meas: f64,
    /// Diagonal of the actual measurement-noise covariance.
    #[serde(default = "default_meas_noise")]
    pub meas_noise: Vec<f64>,
    /// known | zero
    #[serde(default = "default_u_rule")]
    pub u_rule: String,
    /// Initial covariance diagonal for the filter.
    #[serde(default = "one")]
    pub init_p: f64,
}

impl Default for AttackerBlock {
    fn default() -> Self {
        AttackerBlock {
            mode: default_attacker_mode(),
            q_proc: 1.0,
            r_meas: 1.0,
            meas_noise: default_meas_noise(),
            u_rule: default_u_rule(),
            init_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind")]
pub enum ControllerBlock {
    #[serde(rename = "lqr")]
    Lqr {
        q_diag: Vec<f64>,
        r_diag: Vec<f64>,
        horizon: usize,
        x0: Vec<f64>,
        x_target: Vec<f64>,
        /// Scale sweep applied to sigma_u2 for the error-vs-covariance series.
        #[serde(default = "default_scales")]
        sigma_scales: Vec<f64>,
    },
    #[serde(rename = "cooperative")]
    Cooperative {
        #[serde(default = "default_coop_preset")]
        preset: String,
        /// Explicit adjacency overriding the preset topology (0/1 entries).
        #[serde(default)]
        adjacency: Option<Vec<Vec<f64>>>,
        /// Explicit planar formation offsets overriding the preset.
        #[serde(default)]
        offsets: Option<Vec<Vec<f64>>>,
        /// Explicit coupling gains; derived from degrees when absent.
        #[serde(default)]
        gains: Option<Vec<f64>>,
        /// Anchor agent index; defaults to the last agent.
        #[serde(default)]
        leader: Option<usize>,
        /// Accepted for completeness; no computation consumes it.
        #[serde(default)]
        weight_matrix: Option<Vec<Vec<f64>>>,
        initial: Vec<Vec<f64>>,
        /// Per-axis input variance for every follower.
        sigma_u2: f64,
        #[serde(default)]
        leader_noise: bool,
        /// Scale sweep for the degradation curve.
        #[serde(default = "default_scales4")]
        degradation_scales: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_samples")]
    pub n_samples: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            n_samples: default_samples(),
            horizon: default_horizon(),
            out_dir: default_out_dir(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_kind() -> String {
    "solved".into()
}
fn default_mono() -> String {
    "density".into()
}
fn default_intra() -> String {
    "volume".into()
}
fn default_seed() -> u64 {
    1
}
fn default_angles() -> Vec<usize> {
    vec![1]
}
fn default_radial() -> usize {
    26
}
fn default_tail() -> f64 {
    5.0
}
fn default_attacker_mode() -> String {
    "exact".into()
}
fn default_meas_noise() -> Vec<f64> {
    vec![0.01, 0.01]
}
fn default_u_rule() -> String {
    "known".into()
}
fn default_coop_preset() -> String {
    "formation5".into()
}
fn default_scales() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_scales4() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}
fn default_samples() -> u64 {
    1_000_000
}
fn default_horizon() -> usize {
    2000
}
fn default_out_dir() -> String {
    "out".into()
}

impl Scenario {
    /// Parse and validate; JSON syntax errors surface with line positions.
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("scenario (line {}, column {}): {e}", e.line(), e.column())))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        self.build_system()?;
        let nb = &self.noise;
        if nb.sigma_u2.is_empty() || nb.sigma_u2.iter().any(|&s| s < 0.0) {
            return Err(Error::Config(
                "noise.sigma_u2 must be nonempty and nonnegative".into(),
            ));
        }
        if nb.alphas.is_empty()
            || nb.alphas.iter().any(|&a| a <= 0.0)
            || nb.alphas.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "noise.alphas must be positive and sorted ascending".into(),
            ));
        }
        match nb.kind.as_str() {
            "solved" | "gaussian" | "laplace" | "uniform" | "none" => {}
            other => {
                return Err(Error::Config(format!(
                    "noise.kind: unknown kind {other:?} (solved|gaussian|laplace|uniform|none)"
                )))
            }
        }
        self.monotonicity()?;
        self.intra_piece()?;
        match self.attacker.mode.as_str() {
            "exact" | "kalman" => {}
            other => {
                return Err(Error::Config(format!(
                    "attacker.mode: unknown mode {other:?} (exact|kalman)"
                )))
            }
        }
        match self.attacker.u_rule.as_str() {
            "known" | "zero" => {}
            other => {
                return Err(Error::Config(format!(
                    "attacker.u_rule: unknown rule {other:?} (known|zero)"
                )))
            }
        }
        if let Some(ctrl) = &self.controller {
            let sys = self.build_system()?;
            match ctrl {
                ControllerBlock::Lqr {
                    q_diag,
                    r_diag,
                    horizon,
                    x0,
                    x_target,
                    sigma_scales,
                } => {
                    if q_diag.len() != sys.n() || x0.len() != sys.n() || x_target.len() != sys.n() {
                        return Err(Error::Config(
                            "controller.q_diag/x0/x_target must have the state dimension".into(),
                        ));
                    }
                    if r_diag.len() != sys.p() {
                        return Err(Error::Config(
                            "controller.r_diag must have the input dimension".into(),
                        ));
                    }
                    if *horizon < 1 {
                        return Err(Error::Config("controller.horizon must be positive".into()));
                    }
                    if sigma_scales.is_empty() || sigma_scales.iter().any(|&s| s <= 0.0) {
                        return Err(Error::Config(
                            "controller.sigma_scales must be positive".into(),
                        ));
                    }
                }
                ControllerBlock::Cooperative {
                    preset,
                    initial,
                    sigma_u2,
                    weight_matrix,
                    ..
                } => {
                    if weight_matrix.is_some() {
                        eprintln!(
                            "warning: controller.weight_matrix is parsed but ignored; \
                             no computation consumes it"
                        );
                    }
                    if preset != "formation5" {
                        return Err(Error::Config(format!(
                            "controller.preset: unknown cooperative preset {preset:?}"
                        )));
                    }
                    let net = self.build_network()?;
                    if initial.len() != net.n_agents() || initial.iter().any(|p| p.len() != 2) {
                        return Err(Error::Config(format!(
                            "controller.initial must list {} planar positions",
                            net.n_agents()
                        )));
                    }
                    if *sigma_u2 < 0.0 {
                        return Err(Error::Config("controller.sigma_u2 must be nonnegative".into()));
                    }
                }
            }
        }
        if self.run.n_samples < 1 {
            return Err(Error::Config("run.n_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<LtiSystem> {
        match &self.system {
            SystemBlock::Preset { preset, ts } => match preset.as_str() {
                "double_integrator_2d" => Ok(LtiSystem::double_integrator_2d(*ts)),
                other => Err(Error::Config(format!(
                    "system.preset: unknown preset {other:?}"
                ))),
            },
            SystemBlock::Matrices { a, b, c } => {
                let to_mat = |name: &str, rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
                    let nr = rows.len();
                    if nr == 0 {
                        return Err(Error::Config(format!("system.{name}: empty matrix")));
                    }
                    let nc = rows[0].len();
                    if rows.iter().any(|r| r.len() != nc) {
                        return Err(Error::Config(format!("system.{name}: ragged rows")));
                    }
                    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
                };
                LtiSystem::new(to_mat("a", a)?, to_mat("b", b)?, to_mat("c", c)?)
            }
        }
    }

    /// The cooperative network: the formation preset with any explicit
    /// adjacency/offsets/gains from the config applied on top. Agents are
    /// planar single integrators with identity feedback.
    pub fn build_network(&self) -> Result<unpctl_core::CoopNetwork> {
        let Some(ControllerBlock::Cooperative {
            adjacency,
            offsets,
            gains,
            ..
        }) = &self.controller
        else {
            return Err(Error::Config("no cooperative controller block".into()));
        };
        let mut net = unpctl_core::CoopNetwork::formation5();
        if let Some(adj) = adjacency {
            let n = adj.len();
            if n == 0 || adj.iter().any(|r| r.len() != n) {
                return Err(Error::Config("controller.adjacency must be square".into()));
            }
            let mat = DMatrix::from_fn(n, n, |i, j| adj[i][j]);
            let g = unpctl_core::CoopNetwork::gains_from_degrees(&mat);
            net = unpctl_core::CoopNetwork::new(
                mat,
                g,
                net.k_fb.clone(),
                vec![DVector::zeros(2); n],
                net.a_sys.clone(),
                net.b_in.clone(),
            )?;
        }
        if let Some(offs) = offsets {
            if offs.len() != net.n_agents() || offs.iter().any(|o| o.len() != 2) {
                return Err(Error::Config(format!(
                    "controller.offsets must list {} planar offsets",
                    net.n_agents()
                )));
            }
            net.offsets = offs.iter().map(|o| dvector(o)).collect();
        }
        if let Some(g) = gains {
            if g.len() != net.n_agents() {
                return Err(Error::Config(format!(
                    "controller.gains must list {} values",
                    net.n_agents()
                )));
            }
            if g.iter().any(|&v| v <= 0.0) {
                return Err(Error::Config("controller.gains must be positive".into()));
            }
            net.gains = g.clone();
        }
        Ok(net)
    }

    /// Anchor agent for the cooperative scenario.
    pub fn leader_index(&self, net: &unpctl_core::CoopNetwork) -> Result<usize> {
        let Some(ControllerBlock::Cooperative { leader, .. }) = &self.controller else {
            return Err(Error::Config("no cooperative controller block".into()));
        };
        let idx = leader.unwrap_or(net.n_agents() - 1);
        if idx >= net.n_agents() {
            return Err(Error::Config("controller.leader out of range".into()));
        }
        Ok(idx)
    }

    pub fn monotonicity(&self) -> Result<Monotonicity> {
        match self.noise.monotonicity.as_str() {
            "density" => Ok(Monotonicity::DensityScaled),
            "literal" => Ok(Monotonicity::ProbabilityLiteral),
            other => Err(Error::Config(format!(
                "noise.monotonicity: unknown mode {other:?} (density|literal)"
            ))),
        }
    }

    pub fn intra_piece(&self) -> Result<IntraPieceMode> {
        match self.noise.intra_piece.as_str() {
            "volume" => Ok(IntraPieceMode::VolumeUniform),
            "reppoint" => Ok(IntraPieceMode::RepresentativePoint),
            other => Err(Error::Config(format!(
                "noise.intra_piece: unknown mode {other:?} (volume|reppoint)"
            ))),
        }
    }

    pub fn grid_options(&self) -> Result<GridOptions> {
        Ok(GridOptions {
            n_angles: self.noise.grid.n_angles.clone(),
            n_radial: self.noise.grid.n_radial,
            tail_factor: self.noise.grid.tail_factor,
            monotonicity: self.monotonicity()?,
            lp: Default::default(),
        })
    }

    /// Per-output-axis variance levels sigma_i^2 = (Sigma_bar)_ii induced by
    /// the input caps; the baselines are calibrated to these.
    pub fn theta_axis_variances(&self) -> Result<Vec<f64>> {
        let sys = self.build_system()?;
        let bounds = unpctl_core::dist::compute_cov_bounds(&sys.b1(), &self.noise.sigma_u2)?;
        Ok((0..sys.m()).map(|i| bounds.upper[(i, i)]).collect())
    }
}

/// First 16 hex chars of the SHA-256 of the raw config bytes; stamped into
/// every emitted table row.
pub fn config_hash(raw: &str) -> String {
    let mut h = Sha256::new();
    h.update(raw.as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}
