//! Gradient-descent dynamics of a linear model in the operator eigenbasis,
//! and the output-rescaled (lazy) loss.
//!
//! For a model linear in fixed features trained from zero on squared loss,
//! the coefficient of eigenfunction `k` evolves as
//!
//! ```text
//! c_k(t) = <f*|e_k> (1 - exp(-r eta rho_k t))
//! ```
//!
//! where `r` is the rate convention: `r = 1` matches the diagonalized
//! statement, `r = 2` the gradient flow of `||f - f*||^2` (whose derivative
//! carries the factor 2).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Largest `dt * r * eta * max(rho)` accepted by the Euler integrator.
pub const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelSpec {
    /// `rho_k >= 0`.
    pub eigenvalues: Vec<f64>,
    /// `<f*|e_k>`.
    pub target_coefficients: Vec<f64>,
    pub learning_rate: f64,
    /// Rate convention `r` multiplying the exponent.
    pub rate_constant: f64,
}

impl LinearModelSpec {
    pub fn new(eigenvalues: Vec<f64>, target_coefficients: Vec<f64>, learning_rate: f64) -> Result<Self> {
        let spec = Self {
            eigenvalues,
            target_coefficients,
            learning_rate,
            rate_constant: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_rate_constant(mut self, r: f64) -> Result<Self> {
        self.rate_constant = r;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.eigenvalues.len() != self.target_coefficients.len() {
            return Err(Error::DimensionMismatch {
                context: "eigenvalues vs target coefficients",
                expected: self.eigenvalues.len(),
                found: self.target_coefficients.len(),
            });
        }
        if let Some(k) = self.eigenvalues.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "eigenvalue {k} must be finite and non-negative, got {}",
                self.eigenvalues[k]
            )));
        }
        if let Some(k) = self.target_coefficients.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { row: k, col: 0 });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.rate_constant > 0.0 && self.rate_constant.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rate constant must be positive, got {}",
                self.rate_constant
            )));
        }
        Ok(())
    }

    fn rate(&self, k: usize) -> f64 {
        self.rate_constant * self.learning_rate * self.eigenvalues[k]
    }

    /// `Σ_k (<f*|e_k> - c_k)^2`, the squared distance to the target in the
    /// eigenbasis.
    pub fn loss(&self, coefficients: &[f64]) -> f64 {
        self.target_coefficients
            .iter()
            .zip(coefficients)
            .map(|(t, c)| (t - c) * (t - c))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    pub coefficients: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    /// Strictly increasing in time.
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainingTrace {
    pub fn final_coefficients(&self) -> Option<&[f64]> {
        self.checkpoints.last().map(|c| c.coefficients.as_slice())
    }

    /// Largest absolute coefficient difference over checkpoints with matching
    /// times.
    pub fn max_deviation(&self, other: &TrainingTrace) -> Result<f64> {
        if self.checkpoints.len() != other.checkpoints.len() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint counts",
                expected: self.checkpoints.len(),
                found: other.checkpoints.len(),
            });
        }
        let mut worst = 0.0_f64;
        for (a, b) in self.checkpoints.iter().zip(&other.checkpoints) {
            if (a.time - b.time).abs() > 1e-9 * a.time.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint times differ: {} vs {}",
                    a.time, b.time
                )));
            }
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }
}

pub fn closed_form_coefficients(spec: &LinearModelSpec, t: f64) -> Vec<f64> {
    (0..spec.eigenvalues.len())
        .map(|k| spec.target_coefficients[k] * -libm::expm1(-spec.rate(k) * t))
        .collect()
}

/// Coefficients at each requested time (non-negative, strictly increasing).
pub fn closed_form_trajectory(spec: &LinearModelSpec, times: &[f64]) -> Result<TrainingTrace> {
    if let Some(&t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidArgument(format!("times must be finite and non-negative, got {t}")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("times must be strictly increasing".into()));
    }
    let checkpoints = times
        .iter()
        .map(|&t| {
            let coefficients = closed_form_coefficients(spec, t);
            Checkpoint {
                time: t,
                loss: spec.loss(&coefficients),
                coefficients,
            }
        })
        .collect();
    Ok(TrainingTrace { checkpoints })
}

/// Number of Euler steps covering `[0, t_end]` with step `dt`.
fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = libm::round(t_end / dt);
    if (steps * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} is not a whole number of steps of {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Explicit Euler integration of the diagonalized flow
/// `dc_k/dt = r eta rho_k (<f*|e_k> - c_k)` from zero, recording every step.
pub fn gradient_flow_numeric(spec: &LinearModelSpec, t_end: f64, dt: f64) -> Result<TrainingTrace> {
    let steps = step_count(t_end, dt)?;
    let max_rate = (0..spec.eigenvalues.len()).map(|k| spec.rate(k)).fold(0.0, f64::max);
    let product = dt * max_rate;
    if product >= STABILITY_LIMIT {
        return Err(Error::UnstableStep {
            product,
            suggested_dt: 0.5 * STABILITY_LIMIT / max_rate,
        });
    }
    let p = spec.eigenvalues.len();
    let mut c = vec![0.0; p];
    let mut checkpoints = Vec::with_capacity(steps + 1);
    checkpoints.push(Checkpoint {
        time: 0.0,
        loss: spec.loss(&c),
        coefficients: c.clone(),
    });
    for step in 1..=steps {
        for (k, ck) in c.iter_mut().enumerate() {
            *ck += dt * spec.rate(k) * (spec.target_coefficients[k] - *ck);
        }
        checkpoints.push(Checkpoint {
            time: step as f64 * dt,
            loss: spec.loss(&c),
            coefficients: c.clone(),
        });
    }
    Ok(TrainingTrace { checkpoints })
}

/// Output-rescaled squared loss `(1/(alpha^2 n)) Σ_j ||alpha h_j - f*_j||^2`
/// for raw model outputs `h` and targets `f*` (`C x n`, one column per
/// point). Equal to the plain loss of `h` against `f* / alpha`, and to the
/// plain loss at `alpha = 1`.
pub fn alpha_rescaled_loss(outputs: &DenseMatrix, targets: &DenseMatrix, alpha: f64) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(Error::DimensionMismatch {
            context: "outputs vs targets",
            expected: targets.rows() * targets.cols(),
            found: outputs.rows() * outputs.cols(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let n = outputs.cols();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = outputs
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(h, y)| {
            let d = alpha * h - y;
            d * d
        })
        .sum();
    Ok(sum / (alpha * alpha * n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_substitution() {
        let spec = LinearModelSpec::new(vec![2.0], vec![1.0], 0.5).unwrap();
        let tr = closed_form_trajectory(&spec, &[0.0, 1.0, 1e3]).unwrap();
        assert_eq!(tr.checkpoints[0].coefficients, vec![0.0]);
        assert!((tr.checkpoints[1].coefficients[0] - (1.0 - libm::exp(-1.0))).abs() < 1e-15);
        assert!((tr.checkpoints[2].coefficients[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rate_constant_doubles_exponent() {
        let spec = LinearModelSpec::new(vec![2.0], vec![1.0], 0.5)
            .unwrap()
            .with_rate_constant(2.0)
            .unwrap();
        let c = closed_form_coefficients(&spec, 1.0)[0];
        assert!((c - (1.0 - libm::exp(-2.0))).abs() < 1e-15);
    }

    #[test]
    fn time_validation() {
        let spec = LinearModelSpec::new(vec![1.0], vec![1.0], 1.0).unwrap();
        assert!(closed_form_trajectory(&spec, &[-1.0]).is_err());
        assert!(closed_form_trajectory(&spec, &[1.0, 1.0]).is_err());
        assert!(LinearModelSpec::new(vec![-1.0], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn zero_eigenvalue_stays_zero() {
        let spec = LinearModelSpec::new(vec![0.0, 1.0], vec![3.0, 1.0], 1.0).unwrap();
        let tr = gradient_flow_numeric(&spec, 1.0, 0.01).unwrap();
        assert!(tr.checkpoints.iter().all(|c| c.coefficients[0] == 0.0));
        assert_eq!(tr.checkpoints.len(), 101);
    }

    #[test]
    fn stability_guard_suggests_step() {
        let spec = LinearModelSpec::new(vec![10.0], vec![1.0], 1.0).unwrap();
        match gradient_flow_numeric(&spec, 1.0, 0.1) {
            Err(Error::UnstableStep { product, suggested_dt }) => {
                assert!((product - 1.0).abs() < 1e-12);
                assert!(suggested_dt * 10.0 < STABILITY_LIMIT);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn euler_is_close_to_closed_form() {
        let spec = LinearModelSpec::new(vec![1.0, 3.0], vec![1.0, -2.0], 0.7).unwrap();
        let num = gradient_flow_numeric(&spec, 2.0, 1e-3).unwrap();
        let times: Vec<f64> = num.checkpoints.iter().map(|c| c.time).collect();
        let exact = closed_form_trajectory(&spec, &times).unwrap();
        assert!(num.max_deviation(&exact).unwrap() < 2e-3);
    }

    #[test]
    fn alpha_loss_cases() {
        let f = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = DenseMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(alpha_rescaled_loss(&f, &g, 1.0).unwrap(), 1.0);
        // alpha h - f* = (2, 2): (1/8)(4 + 4)
        let h = DenseMatrix::from_rows(&[[1.5, 2.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(alpha_rescaled_loss(&h, &y, 2.0).unwrap(), 1.0);
        assert_eq!(alpha_rescaled_loss(&y.scaled(0.25), &y, 4.0).unwrap(), 0.0);
        assert!(alpha_rescaled_loss(&f, &DenseMatrix::zeros(2, 1), 1.0).is_err());
    }
}
