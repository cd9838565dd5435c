//! Mean-flow ODE `d theta / dt = -h(theta)` with `h(theta) = theta (I - H / alpha(theta))`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MASS_MIN: f64 = 1e-9;
const MASS_MAX: f64 = 1e9;

/// Regression function `h(theta)`.
pub fn regression(theta: &[f64], h: &Matrix) -> Vec<f64> {
    let alpha: f64 = theta.iter().sum();
    let th = h.left_mul(theta);
    theta.iter().zip(&th).map(|(t, x)| t - x / alpha).collect()
}

#[derive(Clone, Debug)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OdeTrajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

fn drift(theta: &[f64], h: &Matrix, t: f64) -> Result<Vec<f64>> {
    let mass: f64 = theta.iter().sum();
    if !(MASS_MIN..=MASS_MAX).contains(&mass) || !mass.is_finite() {
        return Err(Error::BlowUp { t, mass });
    }
    Ok(regression(theta, h).into_iter().map(|x| -x).collect())
}

/// Classical fourth-order Runge-Kutta with a fixed step; every step is recorded.
pub fn integrate_mean_ode(theta0: &[f64], h: &Matrix, horizon: f64, dt: f64) -> Result<OdeTrajectory> {
    if theta0.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Precondition("initial state must be componentwise positive".into()));
    }
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(Error::Precondition(format!("step {dt} must lie in (0, 1e-2]")));
    }
    if !(horizon >= 0.0) {
        return Err(Error::Precondition("horizon must be nonnegative".into()));
    }
    let steps = (horizon / dt).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { horizon / steps as f64 };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut theta = theta0.to_vec();
    times.push(0.0);
    states.push(theta.clone());
    let axpy = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    for i in 0..steps {
        let t = i as f64 * dt;
        let k1 = drift(&theta, h, t)?;
        let k2 = drift(&axpy(&theta, &k1, dt / 2.0), h, t + dt / 2.0)?;
        let k3 = drift(&axpy(&theta, &k2, dt / 2.0), h, t + dt / 2.0)?;
        let k4 = drift(&axpy(&theta, &k3, dt), h, t + dt)?;
        for k in 0..theta.len() {
            theta[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        drift(&theta, h, t + dt)?;
        times.push(t + dt);
        states.push(theta.clone());
    }
    Ok(OdeTrajectory { times, states })
}
