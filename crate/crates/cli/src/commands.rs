//! The four scenario commands: solve-dist, compare, simulate, formation.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use unpctl_core::attacker::{
    attacker_step, conf_prob_gaussian_isotropic, conf_prob_uniform_box, estimate_metrics,
    AttackerSpec, AttackerState, InputPredictionRule, KalmanConfig, Observation,
};
use unpctl_core::control::{
    anchored_error_system, consensus_input, coop_degradation, solve_discrete_lyapunov, solve_lqr,
    AxisBox, LqrCost, LyapunovOutcome,
};
use unpctl_core::dist::DiscreteDistribution;
use unpctl_core::lti::LtiSystem;
use unpctl_core::noise::{generate_unpredictable_input, IntraPieceMode, NoiseSource};
use unpctl_core::{Error, Result};

use crate::config::{dvector, ControllerBlock, Scenario};
use crate::output::{fmt, write_bytes, CsvTable, Svg};

pub struct RunContext {
    pub scenario: Scenario,
    pub config_hash: String,
    pub out_dir: PathBuf,
}

impl RunContext {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn alpha_tag(alpha: f64) -> String {
    format!("{alpha}").replace('.', "p")
}

fn solve_for_alpha(ctx: &RunContext, sys: &LtiSystem, alpha: f64) -> Result<DiscreteDistribution> {
    let opts = ctx.scenario.grid_options()?;
    unpctl_core::dist::solve_optimal_distribution(sys, &ctx.scenario.noise.sigma_u2, alpha, &opts)
}

/// Baseline source calibrated to the axis variances sigma_i^2 = Sigma_bar_ii.
fn baseline_source(kind: &str, axis_vars: &[f64], seed: u64) -> Result<NoiseSource> {
    match kind {
        "gaussian" => {
            let s0 = axis_vars[0];
            if axis_vars.iter().any(|&s| (s - s0).abs() > 1e-12) {
                return Err(Error::Config(
                    "gaussian baseline is isotropic; axis variances differ".into(),
                ));
            }
            NoiseSource::gaussian_iso(s0, axis_vars.len(), seed)
        }
        "laplace" => NoiseSource::laplace_ind(
            axis_vars.iter().map(|&s| (s / 2.0).sqrt()).collect(),
            seed,
        ),
        "uniform" => NoiseSource::uniform_box(axis_vars.iter().map(|&s| s.sqrt()).collect(), seed),
        "none" => Ok(NoiseSource::zero(axis_vars.len(), seed)),
        other => Err(Error::Config(format!("no baseline named {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// solve-dist
// ---------------------------------------------------------------------------

pub fn cmd_solve_dist(ctx: &RunContext, dump_lp: bool, dump_samples: Option<u64>) -> Result<()> {
    let sys = ctx.scenario.build_system()?;
    let opts = ctx.scenario.grid_options()?;
    for &alpha in &ctx.scenario.noise.alphas {
        let tag = alpha_tag(alpha);
        let problem =
            unpctl_core::dist::prepare_p3(&sys.b1(), &ctx.scenario.noise.sigma_u2, alpha, &opts)?;
        if dump_lp {
            let mut buf = Vec::new();
            unpctl_core::lp::dump_lp(&problem.lp, &mut buf)
                .map_err(|e| Error::Numerical(format!("dump lp: {e}")))?;
            write_bytes(&ctx.path(&format!("p3_alpha_{tag}.lp.txt")), &buf)?;
        }
        let dist = unpctl_core::dist::solve_prepared(problem)?;
        if dist.grid.adjusted {
            eprintln!(
                "note: grid adjusted to n_radial = {} (delta_r = {}) so alpha = {alpha} \
                 lands on a shell boundary",
                dist.grid.n_radial, dist.grid.delta_r
            );
        }
        let json = dist
            .to_json()
            .map_err(|e| Error::Numerical(format!("serialize distribution: {e}")))?;
        write_bytes(&ctx.path(&format!("dist_alpha_{tag}.json")), json.as_bytes())?;
        render_distribution_svg(&dist, &ctx.path(&format!("dist_alpha_{tag}.svg")))?;
        if let Some(n) = dump_samples {
            let src = NoiseSource::solved(
                dist.clone(),
                ctx.scenario.intra_piece()?,
                ctx.scenario.noise.seed,
            )?;
            let mut rng = src.rng();
            let b1 = sys.b1();
            let map = unpctl_core::noise::extra_input_map(&b1, src.reduction());
            let rows: Vec<_> = (0..n)
                .map(|_| {
                    let theta = unpctl_core::noise::sample_theta_full(&src, &mut rng);
                    let u_e = match src.reduction() {
                        None => &map * &theta,
                        Some(red) => {
                            let th_plus = &red.t1 * &theta;
                            &map * th_plus.rows(0, red.rank)
                        }
                    };
                    (theta, u_e)
                })
                .collect();
            let mut buf = Vec::new();
            unpctl_core::write_samples_csv(&mut buf, &rows)
                .map_err(|e| Error::Numerical(format!("dump samples: {e}")))?;
            write_bytes(&ctx.path(&format!("samples_alpha_{tag}.csv")), &buf)?;
        }
        println!(
            "alpha {alpha}: ball mass {} over {} pieces -> dist_alpha_{tag}.json",
            fmt(dist.objective),
            dist.grid.piece_count()
        );
    }
    Ok(())
}

fn render_distribution_svg(dist: &DiscreteDistribution, path: &Path) -> Result<()> {
    let grid = &dist.grid;
    let a = grid.n_radial as f64 * grid.delta_r;
    let mut svg = Svg::new(480.0, 480.0, (-a * 1.05, a * 1.05), (-a * 1.05, a * 1.05));
    if grid.dim == 2 {
        let max_density = (0..grid.piece_count())
            .map(|f| dist.p[f] / grid.piece_volume(&grid.piece_index(f)))
            .fold(0.0f64, f64::max)
            .max(1e-300);
        for f in 0..grid.piece_count() {
            let idx = grid.piece_index(f);
            let (r0, r1) = grid.radial_bounds(idx[1]);
            let (a0, a1) = grid.angular_bounds(0, idx[0]);
            let level = (dist.p[f] / grid.piece_volume(&idx)) / max_density;
            svg.annular_sector(r0, r1, a0, a1, level * 0.9);
        }
        // representative points, sized by visibility only
        for f in 0..grid.piece_count() {
            if dist.p[f] <= 0.0 {
                continue;
            }
            let d = dist.piece_diag(f);
            let (zx, zy) = (
                (d[0] / dist.p[f]).max(0.0).sqrt(),
                (d[1] / dist.p[f]).max(0.0).sqrt(),
            );
            for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                svg.circle(sx * zx, sy * zy, 2.0, "#c03030");
            }
        }
    } else {
        // radial bar chart for non-planar grids
        for f in 0..grid.piece_count() {
            let idx = grid.piece_index(f);
            let (r0, r1) = grid.radial_bounds(idx[grid.dim - 1]);
            svg.polyline(
                &[(r0, dist.p[f]), (r1, dist.p[f])],
                "#3050c0",
                2.0,
            );
        }
    }
    svg.write_to(path)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareRow {
    label: String,
    e_s: f64,
    e_s_se: f64,
    probs: Vec<f64>,
    prob_ses: Vec<f64>,
    oracle: Vec<Option<f64>>,
}

pub fn cmd_compare(ctx: &RunContext) -> Result<()> {
    let sys = ctx.scenario.build_system()?;
    let nb = &ctx.scenario.noise;
    let alphas = nb.alphas.clone();
    let n_samples = ctx.scenario.run.n_samples;
    let seed = nb.seed;
    let axis_vars = ctx.scenario.theta_axis_variances()?;
    let u_rule = match ctx.scenario.attacker.u_rule.as_str() {
        "zero" => InputPredictionRule::Zero,
        _ => InputPredictionRule::KnownInput,
    };
    let u_nominal = DVector::zeros(sys.p());

    let run_source = |src: &NoiseSource, alphas: &[f64], seed: u64| {
        estimate_metrics(
            &sys,
            src,
            &AttackerSpec::ExactState,
            &u_nominal,
            u_rule,
            alphas,
            n_samples,
            seed,
        )
    };

    let mut rows: Vec<CompareRow> = Vec::new();

    // per-alpha re-solves, measured under both intra-piece modes
    for (mode, label) in [
        (IntraPieceMode::VolumeUniform, "optimal_volume"),
        (IntraPieceMode::RepresentativePoint, "optimal_reppoint"),
    ] {
        let mut probs = Vec::new();
        let mut ses = Vec::new();
        let mut e_s = 0.0;
        let mut e_s_se = 0.0;
        for (ai, &alpha) in alphas.iter().enumerate() {
            let dist = solve_for_alpha(ctx, &sys, alpha)?;
            let src = NoiseSource::solved(dist, mode, seed)?;
            let m = run_source(&src, &[alpha], seed.wrapping_add(100 + ai as u64))?;
            probs.push(m.conf_prob[0].1);
            ses.push(m.conf_prob_std_err[0]);
            // the variance column reports the largest-alpha solve
            if ai + 1 == alphas.len() {
                e_s = m.variance_metric;
                e_s_se = m.variance_std_err;
            }
        }
        rows.push(CompareRow {
            label: label.into(),
            e_s,
            e_s_se,
            probs,
            prob_ses: ses,
            oracle: vec![None; alphas.len()],
        });
    }

    for (kind, label) in [
        ("uniform", "uniform"),
        ("gaussian", "gaussian"),
        ("laplace", "laplace"),
        ("none", "no_random"),
    ] {
        let src = baseline_source(kind, &axis_vars, seed)?;
        let m = run_source(&src, &alphas, seed.wrapping_add(200))?;
        let oracle: Vec<Option<f64>> = alphas
            .iter()
            .map(|&a| match kind {
                "gaussian" => Some(conf_prob_gaussian_isotropic(axis_vars[0], a, sys.m())),
                "uniform" => {
                    let sig: Vec<f64> = axis_vars.iter().map(|&s| s.sqrt()).collect();
                    Some(conf_prob_uniform_box(&sig, a))
                }
                _ => None,
            })
            .collect();
        rows.push(CompareRow {
            label: label.into(),
            e_s: m.variance_metric,
            e_s_se: m.variance_std_err,
            probs: m.conf_prob.iter().map(|&(_, p)| p).collect(),
            prob_ses: m.conf_prob_std_err.clone(),
            oracle,
        });
    }

    let mut header: Vec<String> = vec!["distribution".into(), "e_s".into(), "e_s_stderr".into()];
    for &a in &alphas {
        header.push(format!("p_le_{}", alpha_tag(a)));
        header.push(format!("stderr_{}", alpha_tag(a)));
        header.push(format!("oracle_{}", alpha_tag(a)));
    }
    header.extend(["n_samples".into(), "seed".into(), "config_hash".into()]);
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = CsvTable::new(&header_refs);
    for row in &rows {
        let mut cells = vec![row.label.clone(), fmt(row.e_s), fmt(row.e_s_se)];
        for i in 0..alphas.len() {
            cells.push(fmt(row.probs[i]));
            cells.push(fmt(row.prob_ses[i]));
            cells.push(row.oracle[i].map(fmt).unwrap_or_default());
        }
        cells.push(n_samples.to_string());
        cells.push(seed.to_string());
        cells.push(ctx.config_hash.clone());
        table.push(cells);
    }
    let path = ctx.path("compare.csv");
    table.write_to(&path)?;
    println!("wrote {}", path.display());
    for row in &rows {
        println!(
            "  {:18} E(S)={:<22} P={:?}",
            row.label,
            fmt(row.e_s),
            row.probs.iter().map(|p| (p * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct LqrSetup {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    x0: DVector<f64>,
    x_target: DVector<f64>,
    mission_horizon: usize,
    sigma_scales: Vec<f64>,
}

fn lqr_setup(ctx: &RunContext, sys: &LtiSystem) -> Result<LqrSetup> {
    match &ctx.scenario.controller {
        Some(ControllerBlock::Lqr {
            q_diag,
            r_diag,
            horizon,
            x0,
            x_target,
            sigma_scales,
        }) => {
            let _ = sys;
            Ok(LqrSetup {
                q: DMatrix::from_diagonal(&dvector(q_diag)),
                r: DMatrix::from_diagonal(&dvector(r_diag)),
                x0: dvector(x0),
                x_target: dvector(x_target),
                mission_horizon: *horizon,
                sigma_scales: sigma_scales.clone(),
            })
        }
        _ => Err(Error::Config(
            "simulate needs controller.kind = \"lqr\"".into(),
        )),
    }
}

fn scaled_source(ctx: &RunContext, sys: &LtiSystem, scale: f64, seed: u64) -> Result<NoiseSource> {
    let nb = &ctx.scenario.noise;
    let caps: Vec<f64> = nb.sigma_u2.iter().map(|&s| s * scale).collect();
    match nb.kind.as_str() {
        "solved" => {
            let alpha = *nb.alphas.last().expect("validated nonempty");
            let opts = ctx.scenario.grid_options()?;
            let dist = unpctl_core::dist::solve_optimal_distribution(sys, &caps, alpha, &opts)?;
            NoiseSource::solved(dist, ctx.scenario.intra_piece()?, seed)
        }
        kind => {
            let bounds = unpctl_core::dist::compute_cov_bounds(&sys.b1(), &caps)?;
            let axis_vars: Vec<f64> = (0..sys.m()).map(|i| bounds.upper[(i, i)]).collect();
            baseline_source(kind, &axis_vars, seed)
        }
    }
}

pub fn cmd_simulate(ctx: &RunContext) -> Result<()> {
    let sys = ctx.scenario.build_system()?;
    let setup = lqr_setup(ctx, &sys)?;
    let run_horizon = ctx.scenario.run.horizon.max(setup.mission_horizon);

    // regulate z = x - x_target; the target must be an equilibrium
    let drift = sys.a() * &setup.x_target - &setup.x_target;
    if drift.amax() > 1e-9 {
        return Err(Error::Config(
            "x_target is not an equilibrium of the plant (A x_target != x_target)".into(),
        ));
    }
    let cost = LqrCost {
        q: setup.q.clone(),
        q_lin: DVector::zeros(sys.n()),
        r: setup.r.clone(),
        horizon: run_horizon,
        state_box: AxisBox::unbounded(sys.n()),
        input_box: AxisBox::unbounded(sys.p()),
        ue_box: AxisBox::unbounded(sys.p()),
    };
    let z0 = &setup.x0 - &setup.x_target;
    let plan = solve_lqr(&sys, &cost, &z0)?;

    // noiseless trajectory and its reach error at the mission horizon
    let noiseless: Vec<DVector<f64>> = plan.states.iter().map(|z| z + &setup.x_target).collect();
    let reach_error = (&noiseless[setup.mission_horizon.min(run_horizon)] - &setup.x_target).norm();

    let mut summary = CsvTable::new(&[
        "sigma_scale",
        "mean_smoothed_s",
        "mean_s",
        "reach_error_noiseless",
        "steps",
        "n_samples",
        "seed",
        "config_hash",
    ]);

    let mut overlay_paths: Vec<Vec<(f64, f64)>> = Vec::new();
    for (si, &scale) in setup.sigma_scales.iter().enumerate() {
        let seed = ctx.scenario.noise.seed.wrapping_add(si as u64);
        let src = scaled_source(ctx, &sys, scale, seed)?;
        let mut rng = src.rng();

        // attacker setup
        let kalman_mode = ctx.scenario.attacker.mode == "kalman";
        let cfg = KalmanConfig {
            q_proc: DMatrix::identity(sys.n(), sys.n()) * ctx.scenario.attacker.q_proc,
            r_meas: DMatrix::identity(sys.m(), sys.m()) * ctx.scenario.attacker.r_meas,
        };
        let meas_sd: Vec<f64> = ctx
            .scenario
            .attacker
            .meas_noise
            .iter()
            .map(|&v| v.sqrt())
            .collect();
        if meas_sd.len() != sys.m() {
            return Err(Error::Config(
                "attacker.meas_noise must have the output dimension".into(),
            ));
        }

        let mut x = setup.x0.clone();
        let mut att = if kalman_mode {
            // first measurement lifts into positions; velocities start at zero
            let y0 = sys.output(&x)?;
            let mut x_hat0 = DVector::zeros(sys.n());
            for i in 0..sys.m() {
                x_hat0[i] = y0[i];
            }
            AttackerState::kalman(
                x_hat0,
                DMatrix::identity(sys.n(), sys.n()) * ctx.scenario.attacker.init_p,
            )
        } else {
            AttackerState::exact(sys.n())
        };

        let mut s_series: Vec<f64> = Vec::with_capacity(run_horizon);
        let mut traj = CsvTable::new(&[
            "k", "x0", "x1", "x2", "x3", "y0", "y1", "yhat0", "yhat1", "s", "s_smoothed", "seed",
            "config_hash",
        ]);
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut path_pts = Vec::with_capacity(run_horizon);

        for k in 0..run_horizon {
            let z = &x - &setup.x_target;
            let g = &plan.feedback[k];
            let u = -(&g.k_gain * z) - &g.feedforward;
            let u_hat = match ctx.scenario.attacker.u_rule.as_str() {
                "zero" => DVector::zeros(sys.p()),
                _ => u.clone(),
            };
            let y_hat = sys.predict_output(&att.x_hat, &u_hat)?;
            let u_e = generate_unpredictable_input(&sys, &src, &mut rng)?;
            let x_next = sys.step(&x, &u, &u_e)?;
            let y_true = sys.output(&x_next)?;
            let eps = &y_true - &y_hat;
            let s = eps.norm_squared();
            s_series.push(s);

            // attacker observes the new output with measurement noise
            if kalman_mode {
                let noise = DVector::from_iterator(
                    sys.m(),
                    meas_sd
                        .iter()
                        .map(|&sd| sd * rng.sample::<f64, _>(rand_distr::StandardNormal)),
                );
                let y_meas = &y_true + noise;
                att = attacker_step(&att, &sys, &cfg, &Observation::Output(&y_meas), &u_hat)?;
            } else {
                att = attacker_step(&att, &sys, &cfg, &Observation::TrueState(&x_next), &u_hat)?;
            }

            rows.push(vec![
                k.to_string(),
                fmt(x[0]),
                fmt(x[1]),
                fmt(x.get(2).copied().unwrap_or(f64::NAN)),
                fmt(x.get(3).copied().unwrap_or(f64::NAN)),
                fmt(y_true[0]),
                fmt(y_true.get(1).copied().unwrap_or(f64::NAN)),
                fmt(y_hat[0]),
                fmt(y_hat.get(1).copied().unwrap_or(f64::NAN)),
                fmt(s),
                String::new(), // smoothed filled below
                seed.to_string(),
                ctx.config_hash.clone(),
            ]);
            path_pts.push((y_true[0], y_true.get(1).copied().unwrap_or(0.0)));
            x = x_next;
        }

        // 3-point smoothing with edge samples dropped
        let smoothed: Vec<Option<f64>> = (0..s_series.len())
            .map(|k| {
                if k == 0 || k + 1 == s_series.len() {
                    None
                } else {
                    Some((s_series[k - 1] + s_series[k] + s_series[k + 1]) / 3.0)
                }
            })
            .collect();
        for (k, row) in rows.iter_mut().enumerate() {
            if let Some(v) = smoothed[k] {
                row[10] = fmt(v);
            }
        }
        for row in rows {
            traj.push(row);
        }
        let tag = format!("{scale}").replace('.', "p");
        traj.write_to(&ctx.path(&format!("trajectory_scale_{tag}.csv")))?;

        let mean_smoothed = smoothed.iter().flatten().sum::<f64>()
            / smoothed.iter().flatten().count().max(1) as f64;
        let mean_s = s_series.iter().sum::<f64>() / s_series.len().max(1) as f64;
        summary.push(vec![
            fmt(scale),
            fmt(mean_smoothed),
            fmt(mean_s),
            fmt(reach_error),
            run_horizon.to_string(),
            s_series.len().to_string(),
            seed.to_string(),
            ctx.config_hash.clone(),
        ]);
        overlay_paths.push(path_pts);
        println!(
            "scale {scale}: mean smoothed S = {} over {} steps",
            fmt(mean_smoothed),
            run_horizon
        );
    }
    summary.write_to(&ctx.path("simulate_summary.csv"))?;

    // path overlay: noiseless plus the last-scale noisy path
    let outputs: Vec<(f64, f64)> = noiseless
        .iter()
        .map(|x| {
            let y = sys.output(x).expect("dims");
            (y[0], y.get(1).copied().unwrap_or(0.0))
        })
        .collect();
    let all: Vec<&(f64, f64)> = outputs.iter().chain(overlay_paths.iter().flatten()).collect();
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for &&(px, py) in &all {
        lo = (lo.0.min(px), lo.1.min(py));
        hi = (hi.0.max(px), hi.1.max(py));
    }
    let pad = 0.05 * ((hi.0 - lo.0).max(hi.1 - lo.1)).max(1.0);
    let mut svg = Svg::new(520.0, 520.0, (lo.0 - pad, hi.0 + pad), (lo.1 - pad, hi.1 + pad));
    if let Some(noisy) = overlay_paths.last() {
        svg.polyline(noisy, "#c03030", 1.0);
    }
    svg.polyline(&outputs, "#3050c0", 1.5);
    svg.text(outputs[0].0, outputs[0].1, "start");
    let end = outputs[setup.mission_horizon.min(outputs.len() - 1)];
    svg.text(end.0, end.1, "target");
    svg.write_to(&ctx.path("paths.svg"))?;
    println!(
        "noiseless reach error at mission horizon: {}",
        fmt(reach_error)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// formation
// ---------------------------------------------------------------------------

pub struct FormationOutcome {
    pub delta_star: f64,
    pub delta_running: f64,
    pub lyapunov_residual: f64,
}

pub fn cmd_formation(ctx: &RunContext) -> Result<FormationOutcome> {
    let Some(ControllerBlock::Cooperative {
        initial,
        sigma_u2,
        leader_noise,
        degradation_scales,
        ..
    }) = &ctx.scenario.controller
    else {
        return Err(Error::Config(
            "formation needs controller.kind = \"cooperative\"".into(),
        ));
    };
    let net = ctx.scenario.build_network()?;
    let n_agents = net.n_agents();
    let leader = ctx.scenario.leader_index(&net)?;
    let horizon = ctx.scenario.run.horizon;
    let seed = ctx.scenario.noise.seed;

    // analytic degradation reference from the leader-anchored error system;
    // Lambda reflects the exact covariance the configured source realizes,
    // lifted to state space through B (B1^+ theta)
    let proto_sys = LtiSystem::new(
        net.a_sys.clone(),
        net.b_in.clone(),
        DMatrix::identity(2, 2),
    )?;
    let state_noise_cov = |scale: f64| -> Result<DMatrix<f64>> {
        if *sigma_u2 * scale == 0.0 {
            return Ok(DMatrix::zeros(2, 2));
        }
        let src = scaled_coop_source(ctx, &proto_sys, *sigma_u2 * scale, 0)?;
        let theta_cov = src.exact_covariance();
        let map = unpctl_core::noise::extra_input_map(&proto_sys.b1(), src.reduction());
        let ue_cov = &map * theta_cov * map.transpose();
        Ok(&net.b_in * ue_cov * net.b_in.transpose())
    };
    let sigma_block = state_noise_cov(1.0)?;
    let coll = anchored_error_system(&net, leader, &vec![sigma_block.clone(); n_agents - 1])?;
    let (sigma_star, residual) = match solve_discrete_lyapunov(&coll.a_c, &coll.lambda)? {
        LyapunovOutcome::Solution { sigma, residual } => (sigma, residual),
        LyapunovOutcome::Divergent { spectral_radius } => {
            return Err(Error::Numerical(format!(
                "collective error dynamics diverge (spectral radius {spectral_radius})"
            )));
        }
    };
    let q_err = DMatrix::identity(coll.a_c.nrows(), coll.a_c.nrows());
    let delta_star = coop_degradation(&sigma_star, &q_err);

    // per-agent noise sources (leader noise-free unless configured)
    let agent_sys: Vec<LtiSystem> = (0..n_agents)
        .map(|_| {
            LtiSystem::new(
                net.a_sys.clone(),
                net.b_in.clone(),
                DMatrix::identity(2, 2),
            )
            .expect("valid agent plant")
        })
        .collect();
    let sources: Result<Vec<Option<NoiseSource>>> = (0..n_agents)
        .map(|i| {
            if (i == leader && !leader_noise) || *sigma_u2 == 0.0 {
                Ok(None)
            } else {
                scaled_coop_source(ctx, &agent_sys[i], *sigma_u2, seed.wrapping_add(i as u64))
                    .map(Some)
            }
        })
        .collect();
    let sources = sources?;
    let mut rngs: Vec<_> = sources
        .iter()
        .map(|s| s.as_ref().map(|src| src.rng()))
        .collect();

    let j_co = |states: &[DVector<f64>]| -> f64 {
        let anchor = &states[leader] - &net.offsets[leader];
        (0..n_agents)
            .filter(|&i| i != leader)
            .map(|i| {
                let e = (&states[i] - &net.offsets[i]) - &anchor;
                0.5 * e.norm_squared()
            })
            .sum()
    };

    let init: Vec<DVector<f64>> = initial.iter().map(|p| dvector(p)).collect();
    let mut clean = init.clone();
    let mut noisy = init.clone();
    let mut jco_table = CsvTable::new(&[
        "k",
        "j_co_noisy",
        "j_co_noiseless",
        "delta_running",
        "delta_star",
        "seed",
        "config_hash",
    ]);
    let mut clean_paths = vec![Vec::with_capacity(horizon + 1); n_agents];
    let mut noisy_paths = vec![Vec::with_capacity(horizon + 1); n_agents];
    let mut delta_sum = 0.0;
    let mut delta_running = 0.0;
    for k in 0..=horizon {
        for i in 0..n_agents {
            clean_paths[i].push((clean[i][0], clean[i][1]));
            noisy_paths[i].push((noisy[i][0], noisy[i][1]));
        }
        let jn = j_co(&noisy);
        let jc = j_co(&clean);
        if k > 0 {
            delta_sum += jn - jc;
            delta_running = delta_sum / k as f64;
        }
        jco_table.push(vec![
            k.to_string(),
            fmt(jn),
            fmt(jc),
            fmt(delta_running),
            fmt(delta_star),
            seed.to_string(),
            ctx.config_hash.clone(),
        ]);
        if k == horizon {
            break;
        }
        let mut next_clean = Vec::with_capacity(n_agents);
        let mut next_noisy = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let u_c = consensus_input(&net, i, &clean)?;
            next_clean.push(&net.a_sys * &clean[i] + &net.b_in * u_c);
            let u_n = consensus_input(&net, i, &noisy)?;
            let mut xn = &net.a_sys * &noisy[i] + &net.b_in * u_n;
            if let (Some(src), Some(rng)) = (&sources[i], rngs[i].as_mut()) {
                let u_e = generate_unpredictable_input(&agent_sys[i], src, rng)?;
                xn += &net.b_in * u_e;
            }
            next_noisy.push(xn);
        }
        clean = next_clean;
        noisy = next_noisy;
    }
    jco_table.write_to(&ctx.path("jco.csv"))?;

    // per-agent trajectories
    for i in 0..n_agents {
        let mut t = CsvTable::new(&["k", "x", "y", "x_noisy", "y_noisy", "seed", "config_hash"]);
        for k in 0..clean_paths[i].len() {
            t.push(vec![
                k.to_string(),
                fmt(clean_paths[i][k].0),
                fmt(clean_paths[i][k].1),
                fmt(noisy_paths[i][k].0),
                fmt(noisy_paths[i][k].1),
                seed.to_string(),
                ctx.config_hash.clone(),
            ]);
        }
        t.write_to(&ctx.path(&format!("agent_{i}.csv")))?;
    }

    // analytic degradation sweep over covariance scales
    let mut sweep = CsvTable::new(&[
        "scale",
        "trace_lambda",
        "delta_star",
        "seed",
        "config_hash",
    ]);
    for &scale in degradation_scales {
        let block = state_noise_cov(scale)?;
        let c = anchored_error_system(&net, leader, &vec![block; n_agents - 1])?;
        let ds = match solve_discrete_lyapunov(&c.a_c, &c.lambda)? {
            LyapunovOutcome::Solution { sigma, .. } => coop_degradation(&sigma, &q_err),
            LyapunovOutcome::Divergent { .. } => f64::INFINITY,
        };
        sweep.push(vec![
            fmt(scale),
            fmt(c.lambda.trace()),
            fmt(ds),
            seed.to_string(),
            ctx.config_hash.clone(),
        ]);
    }
    sweep.write_to(&ctx.path("degradation_sweep.csv"))?;

    // formation plot
    let pts: Vec<(f64, f64)> = noisy_paths.iter().flatten().cloned().collect();
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for &(px, py) in pts.iter().chain(clean_paths.iter().flatten()) {
        lo = (lo.0.min(px), lo.1.min(py));
        hi = (hi.0.max(px), hi.1.max(py));
    }
    let pad = 0.05 * ((hi.0 - lo.0).max(hi.1 - lo.1)).max(1.0);
    let mut svg = Svg::new(520.0, 520.0, (lo.0 - pad, hi.0 + pad), (lo.1 - pad, hi.1 + pad));
    let colors = ["#3050c0", "#30a050", "#c03030", "#a07020", "#703090"];
    for i in 0..n_agents {
        svg.polyline(&noisy_paths[i], colors[i], 0.8);
        svg.polyline(&clean_paths[i], colors[i], 1.6);
        let last = clean_paths[i].last().unwrap();
        svg.circle(last.0, last.1, 4.0, colors[i]);
    }
    svg.write_to(&ctx.path("formation.svg"))?;

    println!(
        "delta_star = {}, running delta after {horizon} steps = {} (residual {})",
        fmt(delta_star),
        fmt(delta_running),
        fmt(residual)
    );
    Ok(FormationOutcome {
        delta_star,
        delta_running,
        lyapunov_residual: residual,
    })
}

fn scaled_coop_source(
    ctx: &RunContext,
    agent_sys: &LtiSystem,
    sigma_u2: f64,
    seed: u64,
) -> Result<NoiseSource> {
    let caps = vec![sigma_u2; agent_sys.p()];
    match ctx.scenario.noise.kind.as_str() {
        "solved" => {
            let alpha = *ctx.scenario.noise.alphas.last().expect("validated");
            let opts = ctx.scenario.grid_options()?;
            let dist =
                unpctl_core::dist::solve_optimal_distribution(agent_sys, &caps, alpha, &opts)?;
            NoiseSource::solved(dist, ctx.scenario.intra_piece()?, seed)
        }
        kind => {
            let bounds = unpctl_core::dist::compute_cov_bounds(&agent_sys.b1(), &caps)?;
            let axis_vars: Vec<f64> = (0..agent_sys.m()).map(|i| bounds.upper[(i, i)]).collect();
            baseline_source(kind, &axis_vars, seed)
        }
    }
}
