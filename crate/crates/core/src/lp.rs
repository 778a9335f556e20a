//! Dense linear-program solver in general form, used by the distribution
//! solver. Two-phase primal simplex with Bland's rule; no external solver.
//!
//! The problem is
//!   minimize c'v  s.t.  A_eq v = b_eq,  A_ub v <= b_ub,  lower <= v <= upper,
//! with +-infinity allowed in the bounds. Rows and columns are equilibrated
//! (powers of two) before solving; all quoted tolerances apply post-scaling.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub v: DVector<f64>,
    pub objective: f64,
    pub status: LpStatus,
    /// Maximum constraint/bound violation of `v`, measured on the scaled problem.
    pub feasibility_residual: f64,
    /// Residual of the optimality / Farkas / ray certificate, per status.
    pub certificate_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// 0 means the default 50 * (rows + cols).
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 0,
            tol: 1e-9,
        }
    }
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let check = |name: &str, rows: usize, cols: usize, got_r: usize, got_c: usize| {
            if got_r != rows || got_c != cols {
                Err(Error::shape(
                    "LinearProgram",
                    format!("{name}: expected {rows}x{cols}, got {got_r}x{got_c}"),
                ))
            } else {
                Ok(())
            }
        };
        check("a_eq", self.a_eq.nrows(), n, self.a_eq.nrows(), self.a_eq.ncols())?;
        check("a_ub", self.a_ub.nrows(), n, self.a_ub.nrows(), self.a_ub.ncols())?;
        if self.b_eq.len() != self.a_eq.nrows() || self.b_ub.len() != self.a_ub.nrows() {
            return Err(Error::shape("LinearProgram", "rhs length mismatch"));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::shape("LinearProgram", "bounds length mismatch"));
        }
        for m in [&self.a_eq, &self.a_ub] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("non-finite constraint coefficient".into()));
            }
        }
        if self.objective.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite objective coefficient".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(Error::Config(format!(
                    "variable {j} has lower bound {} above upper bound {}",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        Ok(())
    }
}

/// Plain-text dump of the problem, one matrix per section, whitespace-delimited.
pub fn dump_lp(lp: &LinearProgram, w: &mut impl Write) -> io::Result<()> {
    let mat = |w: &mut dyn Write, name: &str, m: &DMatrix<f64>| -> io::Result<()> {
        writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    };
    let vec = |w: &mut dyn Write, name: &str, v: &DVector<f64>| -> io::Result<()> {
        writeln!(w, "{name} {}", v.len())?;
        let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", row.join(" "))?;
        Ok(())
    };
    vec(w, "objective", &lp.objective)?;
    mat(w, "a_eq", &lp.a_eq)?;
    vec(w, "b_eq", &lp.b_eq)?;
    mat(w, "a_ub", &lp.a_ub)?;
    vec(w, "b_ub", &lp.b_ub)?;
    vec(w, "lower", &lp.lower)?;
    vec(w, "upper", &lp.upper)?;
    Ok(())
}

fn pow2_scale(max_abs: f64) -> f64 {
    if max_abs <= 0.0 || !max_abs.is_finite() {
        return 1.0;
    }
    let e = (-max_abs.log2()).round().clamp(-20.0, 20.0);
    e.exp2()
}

/// How one original variable maps into standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// v = lo + x[col]
    Shift { col: usize, lo: f64 },
    /// v = hi - x[col]
    Mirror { col: usize, hi: f64 },
    /// v = x[pos] - x[neg]
    Split { pos: usize, neg: usize },
}

struct Standard {
    a: DMatrix<f64>, // rows x n_cols, b >= 0
    b: DVector<f64>,
    c: DVector<f64>,
    var_map: Vec<VarMap>,
    n_rows: usize,
    n_cols: usize,
}

fn build_standard(lp: &LinearProgram) -> Standard {
    let n = lp.n_vars();
    let m_eq = lp.a_eq.nrows();
    let m_ub = lp.a_ub.nrows();

    // Columns: one or two per variable, then one extra ub row per two-sided
    // bounded variable, then slack per ub row.
    let mut var_map = Vec::with_capacity(n);
    let mut n_cols = 0usize;
    let mut extra_ub = 0usize; // x <= hi - lo rows
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo.is_finite() {
            var_map.push(VarMap::Shift { col: n_cols, lo });
            n_cols += 1;
            if hi.is_finite() && hi > lo {
                extra_ub += 1;
            }
        } else if hi.is_finite() {
            var_map.push(VarMap::Mirror { col: n_cols, hi });
            n_cols += 1;
        } else {
            var_map.push(VarMap::Split {
                pos: n_cols,
                neg: n_cols + 1,
            });
            n_cols += 2;
        }
    }
    let m_rows = m_eq + m_ub + extra_ub;
    let n_slack = m_ub + extra_ub;
    let total_cols = n_cols + n_slack;

    let mut a = DMatrix::<f64>::zeros(m_rows, total_cols);
    let mut b = DVector::<f64>::zeros(m_rows);
    let mut c = DVector::<f64>::zeros(total_cols);

    // objective in standard variables
    for j in 0..n {
        let cj = lp.objective[j];
        match var_map[j] {
            VarMap::Shift { col, .. } => c[col] += cj,
            VarMap::Mirror { col, .. } => c[col] -= cj,
            VarMap::Split { pos, neg } => {
                c[pos] += cj;
                c[neg] -= cj;
            }
        }
    }

    // constraint body: row <- sum_j coeff * (map of v_j)
    let fill_row = |a: &mut DMatrix<f64>, b: &mut DVector<f64>, row: usize, coeffs: &dyn Fn(usize) -> f64, rhs: f64, var_map: &[VarMap]| {
        let mut r = rhs;
        for j in 0..n {
            let w = coeffs(j);
            if w == 0.0 {
                continue;
            }
            match var_map[j] {
                VarMap::Shift { col, lo } => {
                    a[(row, col)] += w;
                    r -= w * lo;
                }
                VarMap::Mirror { col, hi } => {
                    a[(row, col)] -= w;
                    r -= w * hi;
                }
                VarMap::Split { pos, neg } => {
                    a[(row, pos)] += w;
                    a[(row, neg)] -= w;
                }
            }
        }
        b[row] = r;
    };

    for i in 0..m_eq {
        fill_row(&mut a, &mut b, i, &|j| lp.a_eq[(i, j)], lp.b_eq[i], &var_map);
    }
    for i in 0..m_ub {
        fill_row(&mut a, &mut b, m_eq + i, &|j| lp.a_ub[(i, j)], lp.b_ub[i], &var_map);
        a[(m_eq + i, n_cols + i)] = 1.0; // slack
    }
    // two-sided bound rows: x_col <= hi - lo
    let mut k = 0usize;
    for j in 0..n {
        if let VarMap::Shift { col, lo } = var_map[j] {
            let hi = lp.upper[j];
            if hi.is_finite() && hi > lo {
                let row = m_eq + m_ub + k;
                a[(row, col)] = 1.0;
                a[(row, n_cols + m_ub + k)] = 1.0;
                b[row] = hi - lo;
                k += 1;
            }
        }
    }

    // rhs >= 0
    for i in 0..m_rows {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for j in 0..total_cols {
                a[(i, j)] = -a[(i, j)];
            }
        }
    }

    Standard {
        a,
        b,
        c,
        var_map,
        n_rows: m_rows,
        n_cols: total_cols,
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded { entering: usize },
    IterLimit,
}

/// Dense tableau simplex over [A | I_art] with Bland's rule.
struct Simplex {
    orig: DMatrix<f64>, // m x (n + m), untouched copy for refactorization
    t: DMatrix<f64>,    // current B^{-1} [A | I]
    rhs: DVector<f64>,
    basis: Vec<usize>,
    iterations: usize,
    b0: DVector<f64>, // original right-hand side, constant across pivots
}

impl Simplex {
    fn n_total(&self) -> usize {
        self.orig.ncols()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let m = self.t.nrows();
        let n = self.t.ncols();
        let piv = self.t[(row, col)];
        for j in 0..n {
            self.t[(row, j)] /= piv;
        }
        self.rhs[row] /= piv;
        for i in 0..m {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                self.t[(i, j)] -= f * self.t[(row, j)];
            }
            self.rhs[i] -= f * self.rhs[row];
            self.t[(i, col)] = 0.0;
        }
        self.t[(row, col)] = 1.0;
        self.basis[row] = col;
    }

    /// Rebuild the tableau from the original columns of the current basis.
    fn refactorize(&mut self) -> Result<()> {
        let m = self.t.nrows();
        if m == 0 {
            return Ok(());
        }
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (i, &bj) in self.basis.iter().enumerate() {
            bmat.set_column(i, &self.orig.column(bj));
        }
        let lu = bmat.lu();
        let t = lu
            .solve(&self.orig)
            .ok_or_else(|| Error::Numerical("singular simplex basis".into()))?;
        let rhs_mat = lu
            .solve(&DMatrix::from_column_slice(m, 1, self.b0.as_slice()))
            .ok_or_else(|| Error::Numerical("singular simplex basis".into()))?;
        self.t = t;
        self.rhs = DVector::from_column_slice(rhs_mat.as_slice());
        Ok(())
    }
    fn run_phase(
        &mut self,
        cost: &DVector<f64>,
        banned: &dyn Fn(usize) -> bool,
        tol: f64,
        max_iters: usize,
    ) -> PhaseOutcome {
        let n = self.n_total();
        // fresh reduced costs d = cost - cost_B^T T
        let mut d = cost.clone();
        for (i, &bj) in self.basis.iter().enumerate() {
            let cb = cost[bj];
            if cb != 0.0 {
                for j in 0..n {
                    d[j] -= cb * self.t[(i, j)];
                }
            }
        }
        loop {
            if self.iterations >= max_iters {
                return PhaseOutcome::IterLimit;
            }
            // Bland: smallest-index improving column
            let mut entering = None;
            for j in 0..n {
                if !banned(j) && d[j] < -tol {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return PhaseOutcome::Optimal;
            };
            // ratio test, ties broken by smallest basis index (Bland)
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.t.nrows() {
                let a_ij = self.t[(i, j)];
                if a_ij > tol {
                    let ratio = self.rhs[i] / a_ij;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio < lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return PhaseOutcome::Unbounded { entering: j };
            };
            self.pivot(r, j);
            // update reduced costs: d -= d[j] * (pivoted row r)
            let dj = d[j];
            if dj != 0.0 {
                for col in 0..n {
                    d[col] -= dj * self.t[(r, col)];
                }
            }
            d[j] = 0.0;
            self.iterations += 1;
        }
    }
}

pub fn solve_lp(lp: &LinearProgram, opts: &SolveOptions) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.n_vars();
    let tol = opts.tol;

    // --- scaling (powers of two) ---
    let mut scaled = lp.clone();
    let m_eq = scaled.a_eq.nrows();
    let m_ub = scaled.a_ub.nrows();
    let mut row_scale = vec![1.0f64; m_eq + m_ub];
    for i in 0..m_eq + m_ub {
        let max = (0..n)
            .map(|j| {
                if i < m_eq {
                    scaled.a_eq[(i, j)].abs()
                } else {
                    scaled.a_ub[(i - m_eq, j)].abs()
                }
            })
            .fold(0.0f64, f64::max);
        row_scale[i] = pow2_scale(max);
    }
    for i in 0..m_eq {
        for j in 0..n {
            scaled.a_eq[(i, j)] *= row_scale[i];
        }
        scaled.b_eq[i] *= row_scale[i];
    }
    for i in 0..m_ub {
        for j in 0..n {
            scaled.a_ub[(i, j)] *= row_scale[m_eq + i];
        }
        scaled.b_ub[i] *= row_scale[m_eq + i];
    }
    let mut col_scale = vec![1.0f64; n];
    for j in 0..n {
        let mut max = 0.0f64;
        for i in 0..m_eq {
            max = max.max(scaled.a_eq[(i, j)].abs());
        }
        for i in 0..m_ub {
            max = max.max(scaled.a_ub[(i, j)].abs());
        }
        col_scale[j] = pow2_scale(max);
        for i in 0..m_eq {
            scaled.a_eq[(i, j)] *= col_scale[j];
        }
        for i in 0..m_ub {
            scaled.a_ub[(i, j)] *= col_scale[j];
        }
        scaled.objective[j] *= col_scale[j];
        // v = col_scale * w  =>  bounds divide
        scaled.lower[j] = lp.lower[j] / col_scale[j];
        scaled.upper[j] = lp.upper[j] / col_scale[j];
    }

    // --- standard form + two-phase simplex ---
    let std_form = build_standard(&scaled);
    let m = std_form.n_rows;
    let n_std = std_form.n_cols;
    let max_iters = if opts.max_iters == 0 {
        50 * (m + n_std)
    } else {
        opts.max_iters
    };

    let mut sx = Simplex {
        orig: {
            let mut o = DMatrix::<f64>::zeros(m, n_std + m);
            o.view_mut((0, 0), (m, n_std)).copy_from(&std_form.a);
            for i in 0..m {
                o[(i, n_std + i)] = 1.0;
            }
            o
        },
        t: DMatrix::zeros(0, 0),
        rhs: std_form.b.clone(),
        basis: (n_std..n_std + m).collect(),
        iterations: 0,
        b0: std_form.b.clone(),
    };
    sx.t = sx.orig.clone();

    // phase 1: minimize sum of artificials
    let mut c1 = DVector::<f64>::zeros(n_std + m);
    for j in n_std..n_std + m {
        c1[j] = 1.0;
    }
    let out1 = sx.run_phase(&c1, &|_| false, tol, max_iters);
    if matches!(out1, PhaseOutcome::IterLimit) {
        return Ok(iter_limit_solution(n, sx.iterations));
    }
    sx.refactorize()?;
    let phase1_obj: f64 = sx
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &bj)| bj >= n_std)
        .map(|(i, _)| sx.rhs[i])
        .sum();
    let feas_tol = 1e-8 * (1.0 + std_form.b.amax());
    if phase1_obj > feas_tol {
        // Farkas certificate: pi = c1_B^T B^{-1}; B^{-1} is the artificial block
        let mut pi = DVector::<f64>::zeros(m);
        for (i, &bj) in sx.basis.iter().enumerate() {
            if bj >= n_std {
                for r in 0..m {
                    pi[r] += sx.t[(i, n_std + r)];
                }
            }
        }
        let mut resid: f64 = 0.0;
        for j in 0..n_std {
            let mut dot = 0.0;
            for r in 0..m {
                dot += pi[r] * std_form.a[(r, j)];
            }
            resid = resid.max(dot);
        }
        let denom = pi.amax().max(1.0);
        return Ok(LpSolution {
            v: DVector::zeros(n),
            objective: f64::NAN,
            status: LpStatus::Infeasible,
            feasibility_residual: phase1_obj,
            certificate_residual: (resid / denom).max(0.0),
            iterations: sx.iterations,
        });
    }

    // drive artificials out of the basis where possible
    for i in 0..m {
        if sx.basis[i] >= n_std {
            let col = (0..n_std).find(|&j| sx.t[(i, j)].abs() > 1e-7);
            if let Some(j) = col {
                sx.pivot(i, j);
            }
            // else: redundant row, the artificial stays basic at zero
        }
    }

    // phase 2
    let mut c2 = DVector::<f64>::zeros(n_std + m);
    for j in 0..n_std {
        c2[j] = std_form.c[j];
    }
    let out2 = sx.run_phase(&c2, &|j| j >= n_std, tol, max_iters);
    sx.refactorize()?;

    match out2 {
        PhaseOutcome::IterLimit => Ok(iter_limit_solution(n, sx.iterations)),
        PhaseOutcome::Unbounded { entering } => {
            // feasible ray: d[entering] = 1, d_B = -T[:, entering]
            let mut ray = DVector::<f64>::zeros(n_std + m);
            ray[entering] = 1.0;
            for (i, &bj) in sx.basis.iter().enumerate() {
                ray[bj] = -sx.t[(i, entering)];
            }
            let mut a_d = DVector::<f64>::zeros(m);
            for r in 0..m {
                let mut s = 0.0;
                for j in 0..n_std + m {
                    s += sx.orig[(r, j)] * ray[j];
                }
                a_d[r] = s;
            }
            let resid = a_d.amax().max(-ray.min());
            Ok(LpSolution {
                v: DVector::zeros(n),
                objective: f64::NEG_INFINITY,
                status: LpStatus::Unbounded,
                feasibility_residual: 0.0,
                certificate_residual: resid,
                iterations: sx.iterations,
            })
        }
        PhaseOutcome::Optimal => {
            // extract standard solution
            let mut x = DVector::<f64>::zeros(n_std + m);
            for (i, &bj) in sx.basis.iter().enumerate() {
                x[bj] = sx.rhs[i];
            }
            // map back to scaled variables, then unscale
            let mut v = DVector::<f64>::zeros(n);
            for j in 0..n {
                let w = match std_form.var_map[j] {
                    VarMap::Shift { col, lo } => lo + x[col],
                    VarMap::Mirror { col, hi } => hi - x[col],
                    VarMap::Split { pos, neg } => x[pos] - x[neg],
                };
                v[j] = w * col_scale[j];
            }

            // residuals on the scaled problem
            let mut feas: f64 = 0.0;
            let w_scaled = DVector::from_iterator(n, (0..n).map(|j| v[j] / col_scale[j]));
            let eq_res = &scaled.a_eq * &w_scaled - &scaled.b_eq;
            feas = feas.max(eq_res.amax());
            let ub_res = &scaled.a_ub * &w_scaled - &scaled.b_ub;
            for i in 0..m_ub {
                feas = feas.max(ub_res[i]);
            }
            for j in 0..n {
                feas = feas.max(scaled.lower[j] - w_scaled[j]);
                feas = feas.max(w_scaled[j] - scaled.upper[j]);
            }
            feas = feas.max(0.0);

            // optimality certificate: y = c_B^T B^{-1}; reduced costs >= -tol
            let mut y = DVector::<f64>::zeros(m);
            for (i, &bj) in sx.basis.iter().enumerate() {
                let cb = c2[bj];
                if cb != 0.0 {
                    for r in 0..m {
                        y[r] += cb * sx.t[(i, n_std + r)];
                    }
                }
            }
            let mut cert: f64 = 0.0;
            for j in 0..n_std {
                let mut dot = 0.0;
                for r in 0..m {
                    dot += y[r] * std_form.a[(r, j)];
                }
                let red = std_form.c[j] - dot;
                cert = cert.max(-red); // dual feasibility violation
                cert = cert.max((red * x[j]).abs()); // complementary slackness
            }

            let objective = lp.objective.dot(&v);
            if feas > 1e-8 * (1.0 + std_form.b.amax()) {
                return Err(Error::Numerical(format!(
                    "simplex reported optimal with feasibility residual {feas:.3e}"
                )));
            }
            Ok(LpSolution {
                v,
                objective,
                status: LpStatus::Optimal,
                feasibility_residual: feas,
                certificate_residual: cert,
                iterations: sx.iterations,
            })
        }
    }
}

fn iter_limit_solution(n: usize, iterations: usize) -> LpSolution {
    LpSolution {
        v: DVector::zeros(n),
        objective: f64::NAN,
        status: LpStatus::IterLimit,
        feasibility_residual: f64::NAN,
        certificate_residual: f64::NAN,
        iterations,
    }
}
