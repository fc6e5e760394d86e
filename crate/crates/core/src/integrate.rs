//! Classic fixed-step fourth-order Runge-Kutta.

/// Reusable stage buffers for a system of dimension `n`.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `y` from `t` to `t + dt` in place. `f(t, y, dydt)` must fill
    /// `dydt` completely.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], dt: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let half = 0.5 * dt;
        f(t, y, &mut self.k1);
        self.stage(y, half, 1);
        f(t + half, &self.tmp, &mut self.k2);
        self.stage(y, half, 2);
        f(t + half, &self.tmp, &mut self.k3);
        self.stage(y, dt, 3);
        f(t + dt, &self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }

    /// Like [`Rk4::step`] but reuses an already computed `f(t, y)`.
    pub fn step_with_slope<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], dt: f64, slope: &[f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        self.k1.copy_from_slice(slope);
        let half = 0.5 * dt;
        self.stage(y, half, 1);
        f(t + half, &self.tmp, &mut self.k2);
        self.stage(y, half, 2);
        f(t + half, &self.tmp, &mut self.k3);
        self.stage(y, dt, 3);
        f(t + dt, &self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }

    fn stage(&mut self, y: &[f64], h: f64, which: u8) {
        let k = match which {
            1 => &self.k1,
            2 => &self.k2,
            _ => &self.k3,
        };
        for ((t, yi), ki) in self.tmp.iter_mut().zip(y).zip(k) {
            *t = yi + h * ki;
        }
    }
}

/// Integrates `steps` fixed steps from `t0` and returns the final state.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], dt: f64, steps: usize) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut y = y0.to_vec();
    let mut rk = Rk4::new(y.len());
    for i in 0..steps {
        rk.step(&mut f, t0 + i as f64 * dt, &mut y, dt);
    }
    y
}
