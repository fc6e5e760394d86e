//! Single shooting: Newton on the period map of the forced plant. Used as an
//! independent check on harmonic balance.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::continuation::hb::{damped_newton, NewtonOptions};
use crate::error::{check_len, Result};
use crate::integrate::Rk4;
use crate::plant::{Excitation, PlantModel};
use crate::reference::project_samples;

#[derive(Debug, Clone)]
pub struct ShootingOrbit {
    /// State `xi(0)` on the periodic orbit.
    pub initial_state: Vec<f64>,
    /// `xi` at `t_j = j T / steps`, `j = 0..steps`.
    pub samples: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl ShootingOrbit {
    /// Displacement Fourier coefficients (layout as
    /// [`crate::reference::FourierSignal::to_coefficients`]).
    pub fn coefficients(&self, order: usize, dof: usize, h: usize) -> Vec<f64> {
        let off = (order - 1) * dof;
        let x: Vec<Vec<f64>> = self.samples.iter().map(|s| s[off..off + dof].to_vec()).collect();
        project_samples(&x, dof, h)
    }
}

fn period_map(plant: &PlantModel, excitation: &Excitation, x0: &[f64], steps: usize, mut record: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
    let p = plant.dof();
    let dt = 2.0 * PI / excitation.omega / steps as f64;
    let mut f = DMatrix::zeros(p, plant.param_count());
    let mut raw = vec![0.0; excitation.channels()];
    let mut sigma = vec![0.0; p];
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        excitation.eval_into(t, &mut raw);
        plant.map_forcing(&raw, &mut sigma);
        plant.rhs_into(y, &sigma, &mut f, dy);
    };
    let mut rk = Rk4::new(x0.len());
    let mut y = x0.to_vec();
    for i in 0..steps {
        if let Some(r) = record.as_deref_mut() {
            r.push(y.clone());
        }
        rk.step(&mut rhs, i as f64 * dt, &mut y, dt);
    }
    y
}

/// Finds `xi(0)` with `P(xi(0)) = xi(0)`, where `P` integrates one forcing
/// period with `steps` RK4 steps.
pub fn shooting_solve(plant: &PlantModel, excitation: &Excitation, guess: &[f64], steps: usize, opts: NewtonOptions) -> Result<ShootingOrbit> {
    check_len("shooting guess", plant.state_len(), guess.len())?;
    let sol = damped_newton(
        |x| period_map(plant, excitation, x, steps, None).iter().zip(x).map(|(a, b)| a - b).collect(),
        guess,
        opts,
        "shooting",
    )?;
    let mut samples = Vec::with_capacity(steps);
    period_map(plant, excitation, &sol.x, steps, Some(&mut samples));
    Ok(ShootingOrbit {
        initial_state: sol.x,
        samples,
        residual_norm: sol.residual,
        iterations: sol.iterations,
    })
}
