//! Noise engine: draw theta from solved or baseline distributions and
//! recover the physical extra input u_e through B1 = C B.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dist::{sin_power_integral, spherical_to_cartesian, DiscreteDistribution, Reduction};
use crate::error::{Error, Result};
use crate::lti::LtiSystem;

/// How a sample is placed inside a selected grid piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntraPieceMode {
    /// Uniform over the piece's Cartesian volume: radial density
    /// proportional to r^{d-1}, angles weighted by the surface element.
    VolumeUniform,
    /// Emit +-sqrt(Sigma_{ii,piece} / p_piece) per axis with independent
    /// random signs, realizing the solved covariance claims exactly.
    RepresentativePoint,
}

#[derive(Debug, Clone)]
pub enum NoiseKind {
    SolvedDiscrete {
        dist: DiscreteDistribution,
        intra: IntraPieceMode,
    },
    GaussianIso {
        sigma2: f64,
        dim: usize,
    },
    LaplaceInd {
        scales: Vec<f64>,
    },
    UniformBox {
        sigmas: Vec<f64>,
    },
    Zero {
        dim: usize,
    },
}

/// A sampleable theta source with its provenance seed. Sampling itself takes
/// an explicit RNG so concurrent callers own independent streams.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    pub kind: NoiseKind,
    pub seed: u64,
    cdf: Vec<f64>,
    rep_abs: Vec<Vec<f64>>,
}

impl NoiseSource {
    pub fn solved(dist: DiscreteDistribution, intra: IntraPieceMode, seed: u64) -> Result<Self> {
        dist.validate()?;
        let n = dist.grid.piece_count();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for f in 0..n {
            if dist.p[f] > 0.0 && dist.grid.piece_volume(&dist.grid.piece_index(f)) <= 0.0 {
                return Err(Error::Config(format!(
                    "piece {f} carries probability {} but has zero volume",
                    dist.p[f]
                )));
            }
            acc += dist.p[f];
            cdf.push(acc);
        }
        let mut rep_abs = Vec::with_capacity(n);
        for f in 0..n {
            let diag = dist.piece_diag(f);
            let reps = if dist.p[f] > 0.0 {
                diag.iter()
                    .map(|&s| (s / dist.p[f]).max(0.0).sqrt())
                    .collect()
            } else {
                vec![0.0; dist.grid.dim]
            };
            rep_abs.push(reps);
        }
        Ok(NoiseSource {
            kind: NoiseKind::SolvedDiscrete { dist, intra },
            seed,
            cdf,
            rep_abs,
        })
    }

    pub fn gaussian_iso(sigma2: f64, dim: usize, seed: u64) -> Result<Self> {
        if sigma2 <= 0.0 {
            return Err(Error::Config("gaussian variance must be positive".into()));
        }
        Ok(NoiseSource {
            kind: NoiseKind::GaussianIso { sigma2, dim },
            seed,
            cdf: Vec::new(),
            rep_abs: Vec::new(),
        })
    }

    /// Per-axis Laplace with scale b_i; variance 2 b_i^2.
    pub fn laplace_ind(scales: Vec<f64>, seed: u64) -> Result<Self> {
        if scales.iter().any(|&b| b <= 0.0) {
            return Err(Error::Config("laplace scales must be positive".into()));
        }
        Ok(NoiseSource {
            kind: NoiseKind::LaplaceInd { scales },
            seed,
            cdf: Vec::new(),
            rep_abs: Vec::new(),
        })
    }

    /// Per-axis uniform on [-sqrt(3) sigma_i, sqrt(3) sigma_i]; variance sigma_i^2.
    pub fn uniform_box(sigmas: Vec<f64>, seed: u64) -> Result<Self> {
        if sigmas.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("uniform sigmas must be positive".into()));
        }
        Ok(NoiseSource {
            kind: NoiseKind::UniformBox { sigmas },
            seed,
            cdf: Vec::new(),
            rep_abs: Vec::new(),
        })
    }

    pub fn zero(dim: usize, seed: u64) -> Self {
        NoiseSource {
            kind: NoiseKind::Zero { dim },
            seed,
            cdf: Vec::new(),
            rep_abs: Vec::new(),
        }
    }

    /// Dimension of raw samples (the solve dimension b for reduced solves).
    pub fn sample_dim(&self) -> usize {
        match &self.kind {
            NoiseKind::SolvedDiscrete { dist, .. } => dist.grid.dim,
            NoiseKind::GaussianIso { dim, .. } | NoiseKind::Zero { dim } => *dim,
            NoiseKind::LaplaceInd { scales } => scales.len(),
            NoiseKind::UniformBox { sigmas } => sigmas.len(),
        }
    }

    /// Dimension of reconstructed theta in output space.
    pub fn output_dim(&self) -> usize {
        match &self.kind {
            NoiseKind::SolvedDiscrete { dist, .. } => match &dist.reduction {
                Some(red) => red.t1.nrows(),
                None => dist.grid.dim,
            },
            _ => self.sample_dim(),
        }
    }

    pub fn reduction(&self) -> Option<&Reduction> {
        match &self.kind {
            NoiseKind::SolvedDiscrete { dist, .. } => dist.reduction.as_ref(),
            _ => None,
        }
    }

    /// A deterministic RNG stream derived from the recorded seed.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Exact covariance of theta in output space. For solved sources this
    /// depends on the intra-piece mode: representative points realize the
    /// claimed covariance, volume-uniform sampling realizes the piecewise
    /// volume moments.
    pub fn exact_covariance(&self) -> DMatrix<f64> {
        match &self.kind {
            NoiseKind::SolvedDiscrete { dist, intra } => {
                let raw = match intra {
                    IntraPieceMode::RepresentativePoint => dist.total_covariance(),
                    IntraPieceMode::VolumeUniform => dist.volume_covariance(),
                };
                match &dist.reduction {
                    None => raw,
                    Some(red) => {
                        let m = red.t1.nrows();
                        let mut full = DMatrix::zeros(m, m);
                        full.view_mut((0, 0), (red.rank, red.rank)).copy_from(&raw);
                        red.t1.transpose() * full * &red.t1
                    }
                }
            }
            NoiseKind::GaussianIso { sigma2, dim } => DMatrix::identity(*dim, *dim) * *sigma2,
            NoiseKind::LaplaceInd { scales } => DMatrix::from_diagonal(&DVector::from_iterator(
                scales.len(),
                scales.iter().map(|&b| 2.0 * b * b),
            )),
            NoiseKind::UniformBox { sigmas } => DMatrix::from_diagonal(&DVector::from_iterator(
                sigmas.len(),
                sigmas.iter().map(|&s| s * s),
            )),
            NoiseKind::Zero { dim } => DMatrix::zeros(*dim, *dim),
        }
    }
}

fn sample_sin_power(k: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    match k {
        0 => lo + u * (hi - lo),
        1 => {
            // cdf proportional to cos(lo) - cos(phi)
            let c = lo.cos() - u * (lo.cos() - hi.cos());
            c.clamp(-1.0, 1.0).acos()
        }
        _ => {
            let total = sin_power_integral(k, lo, hi);
            let target = u * total;
            let (mut a, mut b) = (lo, hi);
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                if sin_power_integral(k, lo, mid) < target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        }
    }
}

/// Draw one theta sample in the source's sample dimension.
pub fn sample_theta(src: &NoiseSource, rng: &mut impl Rng) -> DVector<f64> {
    match &src.kind {
        NoiseKind::SolvedDiscrete { dist, intra } => {
            let u: f64 = rng.gen();
            let piece = src.cdf.partition_point(|&c| c < u).min(src.cdf.len() - 1);
            let grid = &dist.grid;
            let idx = grid.piece_index(piece);
            let d = grid.dim;
            match intra {
                IntraPieceMode::VolumeUniform => {
                    let (r_lo, r_hi) = grid.radial_bounds(idx[d - 1]);
                    let u_r: f64 = rng.gen();
                    let r = (r_lo.powi(d as i32) + u_r * (r_hi.powi(d as i32) - r_lo.powi(d as i32)))
                        .powf(1.0 / d as f64);
                    if d == 1 {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        return DVector::from_row_slice(&[sign * r]);
                    }
                    let angles: Vec<f64> = (0..d - 1)
                        .map(|i| {
                            let (lo, hi) = grid.angular_bounds(i, idx[i]);
                            sample_sin_power(d - 2 - i, lo, hi, rng)
                        })
                        .collect();
                    DVector::from_vec(spherical_to_cartesian(&angles, r))
                }
                IntraPieceMode::RepresentativePoint => {
                    let reps = &src.rep_abs[piece];
                    DVector::from_iterator(
                        d,
                        reps.iter().map(|&a| if rng.gen::<bool>() { a } else { -a }),
                    )
                }
            }
        }
        NoiseKind::GaussianIso { sigma2, dim } => {
            let sd = sigma2.sqrt();
            DVector::from_iterator(
                *dim,
                (0..*dim).map(|_| {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    g * sd
                }),
            )
        }
        NoiseKind::LaplaceInd { scales } => DVector::from_iterator(
            scales.len(),
            scales.iter().map(|&b| {
                let v: f64 = rng.gen::<f64>() - 0.5;
                -b * v.signum() * (1.0 - 2.0 * v.abs()).max(f64::MIN_POSITIVE).ln()
            }),
        ),
        NoiseKind::UniformBox { sigmas } => DVector::from_iterator(
            sigmas.len(),
            sigmas.iter().map(|&s| {
                let h = 3.0f64.sqrt() * s;
                rng.gen_range(-h..=h)
            }),
        ),
        NoiseKind::Zero { dim } => DVector::zeros(*dim),
    }
}

/// Draw theta and lift reduced samples back to the full output space
/// through theta = T1' [theta_plus; 0].
pub fn sample_theta_full(src: &NoiseSource, rng: &mut impl Rng) -> DVector<f64> {
    let raw = sample_theta(src, rng);
    match src.reduction() {
        None => raw,
        Some(red) => {
            let m = red.t1.nrows();
            let mut lifted = DVector::zeros(m);
            lifted.rows_mut(0, red.rank).copy_from(&raw);
            red.t1.transpose() * lifted
        }
    }
}

/// Pseudo-inverse application with a relative singular-value cutoff of 1e-10.
fn pinv(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = mat.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = 1e-10 * smax.max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps).expect("svd computed with u and v")
}

/// The linear map taking a theta sample to u_e, prepared once for hot loops.
/// Full rank: u_e = (B1'B1)^+ B1' theta. Reduced: u_e =
/// ((T11 B1)' T11 B1)^+ (T11 B1)' theta_plus[0..b].
pub fn extra_input_map(b1: &DMatrix<f64>, reduction: Option<&Reduction>) -> DMatrix<f64> {
    match reduction {
        None => {
            let bt_b = b1.transpose() * b1;
            pinv(&bt_b) * b1.transpose()
        }
        Some(red) => {
            let tb = red.t11() * b1;
            let gram = tb.transpose() * &tb;
            pinv(&gram) * tb.transpose()
        }
    }
}

/// Recover u_e from a theta sample. With a reduction, `theta` is the rotated
/// theta_plus whose trailing m-b components must vanish (<= 1e-9).
/// The reconstruction residual ||B1 u_e - theta|| must stay within
/// 1e-9 (1 + ||theta||) or a consistency error is raised.
pub fn compute_extra_input(
    b1: &DMatrix<f64>,
    theta: &DVector<f64>,
    reduction: Option<&Reduction>,
) -> Result<DVector<f64>> {
    let m = b1.nrows();
    if theta.len() != m {
        return Err(Error::shape(
            "compute_extra_input",
            format!("theta must have length {m}, got {}", theta.len()),
        ));
    }
    let map = extra_input_map(b1, reduction);
    let (u_e, target) = match reduction {
        None => (&map * theta, theta.clone()),
        Some(red) => {
            for i in red.rank..m {
                if theta[i].abs() > 1e-9 {
                    return Err(Error::Numerical(format!(
                        "theta_plus component {i} = {} must vanish for the rank-{} reduction",
                        theta[i], red.rank
                    )));
                }
            }
            let head = theta.rows(0, red.rank).into_owned();
            // target in original coordinates: theta = T1' theta_plus
            (&map * head, red.t1.transpose() * theta)
        }
    };
    let residual = (b1 * &u_e - &target).norm();
    if residual > 1e-9 * (1.0 + target.norm()) {
        return Err(Error::Numerical(format!(
            "extra input reconstruction residual {residual:.3e} exceeds tolerance; \
             theta is not in the range of B1"
        )));
    }
    Ok(u_e)
}

/// Algorithm end-to-end: draw theta from the prepared source and convert it
/// to the physical extra input, branching on the recorded rank reduction.
pub fn generate_unpredictable_input(
    sys: &LtiSystem,
    src: &NoiseSource,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let b1 = sys.b1();
    match src.reduction() {
        Some(red) => {
            let raw = sample_theta(src, rng);
            let mut theta_plus = DVector::zeros(b1.nrows());
            theta_plus.rows_mut(0, red.rank).copy_from(&raw);
            compute_extra_input(&b1, &theta_plus, Some(red))
        }
        None => {
            let theta = sample_theta(src, rng);
            compute_extra_input(&b1, &theta, None)
        }
    }
}

/// One theta / u_e pair per row, for external statistical audit.
pub fn write_samples_csv(
    w: &mut impl Write,
    samples: &[(DVector<f64>, DVector<f64>)],
) -> io::Result<()> {
    if let Some((theta, u_e)) = samples.first() {
        let mut head: Vec<String> = (0..theta.len()).map(|i| format!("theta_{i}")).collect();
        head.extend((0..u_e.len()).map(|i| format!("u_e_{i}")));
        writeln!(w, "{}", head.join(","))?;
    }
    for (theta, u_e) in samples {
        let row: Vec<String> = theta
            .iter()
            .chain(u_e.iter())
            .map(|v| format!("{v}"))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
