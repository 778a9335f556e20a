//! Discrete LTI plant: state propagation with and without the stochastic
//! extra input, output maps, and one-step prediction-error bookkeeping.
//!
//! The plant is x(k+1) = A x(k) + B (u(k) + u_e(k)), y(k) = C x(k).
//! The quantity driving everything downstream is B1 = C B: the extra input
//! u_e enters the next output as theta = B1 u_e.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Plant matrices A (n×n), B (n×p), C (m×n).
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

/// State vector plus a time index. The index is carried for logging only;
/// the dynamics are time-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub k: u64,
}

/// True output, attacker prediction, and their difference for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub y: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub eps_y: DVector<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape(
                "LtiSystem::new",
                format!("A must be square, got {}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != n {
            return Err(Error::shape(
                "LtiSystem::new",
                format!("B must have {} rows, got {}", n, b.nrows()),
            ));
        }
        if c.ncols() != n {
            return Err(Error::shape(
                "LtiSystem::new",
                format!("C must have {} columns, got {}", n, c.ncols()),
            ));
        }
        let (m, p) = (c.nrows(), b.ncols());
        if m < 1 || p < 1 || n < m {
            return Err(Error::Config(format!(
                "dimensions must satisfy n >= m >= 1 and p >= 1, got n={n}, m={m}, p={p}"
            )));
        }
        Ok(LtiSystem { a, b, c })
    }

    /// Second-order integrator on the plane with sampling period `ts`:
    /// positions and velocities in the state, accelerations as inputs,
    /// positions as outputs.
    pub fn double_integrator_2d(ts: f64) -> Self {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, ts, 0.0, //
                0.0, 1.0, 0.0, ts, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        let h = 0.5 * ts * ts;
        let b = DMatrix::from_row_slice(4, 2, &[h, 0.0, 0.0, h, ts, 0.0, 0.0, ts]);
        let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        LtiSystem { a, b, c }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// B1 = C B, the map from extra input to the output-space disturbance.
    pub fn b1(&self) -> DMatrix<f64> {
        &self.c * &self.b
    }

    fn check_len(&self, context: &'static str, v: &DVector<f64>, want: usize) -> Result<()> {
        if v.len() != want {
            return Err(Error::shape(
                context,
                format!("expected length {}, got {}", want, v.len()),
            ));
        }
        Ok(())
    }

    /// One step of x(k+1) = A x + B (u + u_e).
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        u_e: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_len("step", x, self.n())?;
        self.check_len("step", u, self.p())?;
        self.check_len("step", u_e, self.p())?;
        Ok(&self.a * x + &self.b * (u + u_e))
    }

    /// y = C x.
    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len("output", x, self.n())?;
        Ok(&self.c * x)
    }

    /// The attacker's one-step output prediction C (A x_hat + B u_hat).
    pub fn predict_output(
        &self,
        x_hat: &DVector<f64>,
        u_hat: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_len("predict_output", x_hat, self.n())?;
        self.check_len("predict_output", u_hat, self.p())?;
        Ok(&self.c * (&self.a * x_hat + &self.b * u_hat))
    }

    /// One-step prediction error, computed by simulating the true step and
    /// subtracting the prediction. Algebraically this equals
    /// C A (x - x_hat) + B1 (u - u_hat) + B1 u_e.
    pub fn one_step_error(
        &self,
        x: &DVector<f64>,
        x_hat: &DVector<f64>,
        u: &DVector<f64>,
        u_hat: &DVector<f64>,
        u_e: &DVector<f64>,
    ) -> Result<PredictionRecord> {
        let x_next = self.step(x, u, u_e)?;
        let y = self.output(&x_next)?;
        let y_hat = self.predict_output(x_hat, u_hat)?;
        let eps_y = &y - &y_hat;
        Ok(PredictionRecord { y, y_hat, eps_y })
    }
}
