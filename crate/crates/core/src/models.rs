//! Target motion model and sensor models with analytic Jacobians.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranges below this (m) are treated as the range-bearing singularity.
pub const RANGE_FLOOR_M: f64 = 1e-6;

/// Target kinematic state `[ξ, ξ̇, η, η̇]` in some node's frame (m, m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState(pub Vector4<f64>);

impl TargetState {
    pub fn new(xi: f64, xi_dot: f64, eta: f64, eta_dot: f64) -> Self {
        TargetState(Vector4::new(xi, xi_dot, eta, eta_dot))
    }

    pub fn xi(&self) -> f64 {
        self.0[0]
    }
    pub fn xi_dot(&self) -> f64 {
        self.0[1]
    }
    pub fn eta(&self) -> f64 {
        self.0[2]
    }
    pub fn eta_dot(&self) -> f64 {
        self.0[3]
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.0[0], self.0[2])
    }
}

pub type Measurement = Vector2<f64>;

/// Discrete-time motion model `x_{t+1} = f(x_t) + w_t`, `w_t ~ N(0, Q)`.
pub trait MotionModel {
    fn transition(&self, x: &TargetState) -> TargetState;
    fn jacobian(&self, x: &TargetState) -> Matrix4<f64>;
    fn process_cov(&self) -> Matrix4<f64>;
    /// `W = Q⁻¹`
    fn process_info(&self) -> Matrix4<f64>;
    fn step(&self) -> f64;
}

/// Constant-velocity model with `Q = σ_x² I₄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantVelocity {
    pub step_s: f64,
    pub sigma_x_m: f64,
}

impl ConstantVelocity {
    pub fn new(step_s: f64, sigma_x_m: f64) -> Result<Self> {
        if !(step_s > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {step_s}")));
        }
        if !(sigma_x_m >= 0.0) {
            return Err(Error::InvalidInput(format!("sigma_x must be non-negative, got {sigma_x_m}")));
        }
        Ok(ConstantVelocity { step_s, sigma_x_m })
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let t = self.step_s;
        Matrix4::new(
            1.0, t, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, t, //
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

impl MotionModel for ConstantVelocity {
    fn transition(&self, x: &TargetState) -> TargetState {
        cv_transition(x, self.step_s)
    }

    fn jacobian(&self, _x: &TargetState) -> Matrix4<f64> {
        self.matrix()
    }

    fn process_cov(&self) -> Matrix4<f64> {
        Matrix4::identity() * self.sigma_x_m.powi(2)
    }

    fn process_info(&self) -> Matrix4<f64> {
        Matrix4::identity() / self.sigma_x_m.powi(2)
    }

    fn step(&self) -> f64 {
        self.step_s
    }
}

pub fn cv_transition(x: &TargetState, step: f64) -> TargetState {
    TargetState::new(
        x.xi() + step * x.xi_dot(),
        x.xi_dot(),
        x.eta() + step * x.eta_dot(),
        x.eta_dot(),
    )
}

/// Per-node sensor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensorModel {
    /// `y = α [ξ, η] + v`, `R = σ_y² I₂`
    Linear { alpha: f64, sigma_y_m: f64 },
    /// `y = [range, bearing] + v`, `R = diag(σ_r², σ_β²)`; bearing in radians.
    RangeBearing { sigma_r_m: f64, sigma_beta_rad: f64 },
}

impl SensorModel {
    pub fn measure(&self, x: &TargetState) -> Result<Measurement> {
        match *self {
            SensorModel::Linear { alpha, .. } => Ok(linear_measure(x, alpha)),
            SensorModel::RangeBearing { .. } => range_bearing_measure(x),
        }
    }

    pub fn jacobian(&self, x: &TargetState) -> Result<Matrix2x4<f64>> {
        match *self {
            SensorModel::Linear { alpha, .. } => Ok(linear_jacobian(alpha)),
            SensorModel::RangeBearing { .. } => range_bearing_jacobian(x),
        }
    }

    pub fn meas_cov(&self) -> Matrix2<f64> {
        match *self {
            SensorModel::Linear { sigma_y_m, .. } => Matrix2::identity() * sigma_y_m.powi(2),
            SensorModel::RangeBearing { sigma_r_m, sigma_beta_rad } => {
                Matrix2::from_diagonal(&Vector2::new(sigma_r_m.powi(2), sigma_beta_rad.powi(2)))
            }
        }
    }

    /// `V = R⁻¹`
    pub fn meas_info(&self) -> Matrix2<f64> {
        let r = self.meas_cov();
        Matrix2::from_diagonal(&Vector2::new(1.0 / r[(0, 0)], 1.0 / r[(1, 1)]))
    }

    /// Measurement residual `y - ŷ`, with the bearing component wrapped.
    pub fn residual(&self, y: &Measurement, predicted: &Measurement) -> Measurement {
        let mut r = y - predicted;
        if let SensorModel::RangeBearing { .. } = self {
            r[1] = wrap_angle(r[1]);
        }
        r
    }

    /// Position implied by a single measurement, used to seed a filter.
    pub fn invert_position(&self, y: &Measurement) -> Vector2<f64> {
        match *self {
            SensorModel::Linear { alpha, .. } => y / alpha,
            SensorModel::RangeBearing { .. } => Vector2::new(y[0] * y[1].cos(), y[0] * y[1].sin()),
        }
    }
}

pub fn linear_measure(x: &TargetState, alpha: f64) -> Measurement {
    alpha * x.position()
}

pub fn linear_jacobian(alpha: f64) -> Matrix2x4<f64> {
    Matrix2x4::new(
        alpha, 0.0, 0.0, 0.0, //
        0.0, 0.0, alpha, 0.0,
    )
}

pub fn range_bearing_measure(x: &TargetState) -> Result<Measurement> {
    let range = x.xi().hypot(x.eta());
    if range < RANGE_FLOOR_M {
        return Err(Error::Singularity { range });
    }
    Ok(Vector2::new(range, x.eta().atan2(x.xi())))
}

pub fn range_bearing_jacobian(x: &TargetState) -> Result<Matrix2x4<f64>> {
    let (xi, eta) = (x.xi(), x.eta());
    let r2 = xi * xi + eta * eta;
    let r = r2.sqrt();
    if r < RANGE_FLOOR_M {
        return Err(Error::Singularity { range: r });
    }
    Ok(Matrix2x4::new(
        xi / r, 0.0, eta / r, 0.0, //
        -eta / r2, 0.0, xi / r2, 0.0,
    ))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}
