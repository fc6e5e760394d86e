//! Truncated Fourier series and the reference trajectories built from them.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// One channel: `a0 + sum_k a_k cos(k w t) + b_k sin(k w t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FourierChannel {
    pub a0: f64,
    #[serde(rename = "cos", default)]
    pub cos: Vec<f64>,
    #[serde(rename = "sin", default)]
    pub sin: Vec<f64>,
}

impl FourierChannel {
    pub fn constant(a0: f64) -> Self {
        Self {
            a0,
            ..Self::default()
        }
    }

    pub fn harmonics(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn coeff(v: &[f64], k: usize) -> f64 {
        v.get(k).copied().unwrap_or(0.0)
    }

    /// `d`-th time derivative at `t`.
    pub fn eval_derivative(&self, omega: f64, t: f64, d: usize) -> f64 {
        let mut acc = if d == 0 { self.a0 } else { 0.0 };
        for k in 0..self.harmonics() {
            let kw = (k + 1) as f64 * omega;
            let (mut a, mut b) = (Self::coeff(&self.cos, k), Self::coeff(&self.sin, k));
            for _ in 0..d {
                (a, b) = (kw * b, -kw * a);
            }
            let (s, c) = (kw * t).sin_cos();
            acc += a * c + b * s;
        }
        acc
    }

    /// Exact derivative: `(a_k, b_k) -> (k w b_k, -k w a_k)`.
    pub fn derivative(&self, omega: f64) -> Self {
        let h = self.harmonics();
        let mut out = Self {
            a0: 0.0,
            cos: vec![0.0; h],
            sin: vec![0.0; h],
        };
        for k in 0..h {
            let kw = (k + 1) as f64 * omega;
            out.cos[k] = kw * Self::coeff(&self.sin, k);
            out.sin[k] = -kw * Self::coeff(&self.cos, k);
        }
        out
    }

    fn padded(&self, h: usize) -> Self {
        let pad = |v: &[f64]| (0..h).map(|k| Self::coeff(v, k)).collect();
        Self {
            a0: self.a0,
            cos: pad(&self.cos),
            sin: pad(&self.sin),
        }
    }
}

/// Multi-channel truncated Fourier series at base frequency `omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSignal {
    pub omega: f64,
    pub channels: Vec<FourierChannel>,
}

impl FourierSignal {
    pub fn new(omega: f64, channels: Vec<FourierChannel>) -> Self {
        Self { omega, channels }
    }

    pub fn zero(omega: f64, channels: usize) -> Self {
        Self::new(omega, vec![FourierChannel::default(); channels])
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn harmonics(&self) -> usize {
        self.channels.iter().map(FourierChannel::harmonics).max().unwrap_or(0)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.eval_derivative(t, 0)
    }

    pub fn eval_derivative(&self, t: f64, d: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c.eval_derivative(self.omega, t, d)).collect()
    }

    pub fn derivative(&self) -> Self {
        Self::new(self.omega, self.channels.iter().map(|c| c.derivative(self.omega)).collect())
    }

    /// Same signal with exactly `h` harmonics per channel (zero padded or
    /// truncated).
    pub fn with_harmonics(&self, h: usize) -> Self {
        Self::new(self.omega, self.channels.iter().map(|c| c.padded(h)).collect())
    }

    /// Flattened coefficients, per channel `[a0, a_1..a_h, b_1..b_h]`.
    pub fn to_coefficients(&self, h: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels.len() * (2 * h + 1));
        for c in &self.channels {
            let c = c.padded(h);
            out.push(c.a0);
            out.extend(&c.cos);
            out.extend(&c.sin);
        }
        out
    }

    pub fn from_coefficients(omega: f64, channels: usize, h: usize, coeffs: &[f64]) -> Result<Self> {
        check_len("fourier coefficients", channels * (2 * h + 1), coeffs.len())?;
        let chans = coeffs
            .chunks(2 * h + 1)
            .map(|c| FourierChannel {
                a0: c[0],
                cos: c[1..=h].to_vec(),
                sin: c[h + 1..].to_vec(),
            })
            .collect();
        Ok(Self::new(omega, chans))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sig: Self = serde_json::from_str(s)?;
        if !(sig.omega > 0.0) {
            return Err(Error::Config("reference omega must be positive".into()));
        }
        Ok(sig)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Projects uniformly sampled periodic data onto harmonics `0..=h`.
///
/// `samples[j]` holds one value per channel at `t_j = j T / N`. The rectangle
/// rule used here is the trapezoidal rule for periodic integrands.
pub fn project_samples(samples: &[Vec<f64>], channels: usize, h: usize) -> Vec<f64> {
    let n = samples.len();
    let mut out = vec![0.0; channels * (2 * h + 1)];
    for (j, row) in samples.iter().enumerate() {
        let phase = 2.0 * PI * j as f64 / n as f64;
        for (c, &v) in row.iter().enumerate().take(channels) {
            let base = c * (2 * h + 1);
            out[base] += v;
            for k in 1..=h {
                let (s, co) = (k as f64 * phase).sin_cos();
                out[base + k] += 2.0 * v * co;
                out[base + h + k] += 2.0 * v * s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// A reference `xi_r(t)` of an order-`n` plant built from per-DOF Fourier
/// series; all derivatives are analytic.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    signal: FourierSignal,
    order: usize,
    initial_top: Vec<f64>,
}

impl ReferenceTrajectory {
    pub fn new(signal: FourierSignal, order: usize) -> Self {
        let initial_top = signal.eval_derivative(0.0, order.saturating_sub(1));
        Self {
            signal,
            order,
            initial_top,
        }
    }

    pub fn signal(&self) -> &FourierSignal {
        &self.signal
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dof(&self) -> usize {
        self.signal.channel_count()
    }

    pub fn omega(&self) -> f64 {
        self.signal.omega
    }

    /// `x_r^(n-1)(0)`.
    pub fn initial_top_derivative(&self) -> &[f64] {
        &self.initial_top
    }

    /// `xi_r(t)` ordered `[x_r^(n-1), ..., x_r', x_r]`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let p = self.dof();
        let w = self.signal.omega;
        let trig: Vec<(f64, f64)> = (1..=self.signal.harmonics()).map(|k| (k as f64 * w * t).sin_cos()).collect();
        for (i, ch) in self.signal.channels.iter().enumerate() {
            for d in 0..self.order {
                let mut acc = if d == 0 { ch.a0 } else { 0.0 };
                for (k, &(s, c)) in trig.iter().enumerate().take(ch.harmonics()) {
                    let kw = (k + 1) as f64 * w;
                    let (mut a, mut b) = (FourierChannel::coeff(&ch.cos, k), FourierChannel::coeff(&ch.sin, k));
                    for _ in 0..d {
                        (a, b) = (kw * b, -kw * a);
                    }
                    acc += a * c + b * s;
                }
                out[(self.order - 1 - d) * p + i] = acc;
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.order * self.dof()];
        self.eval_into(t, &mut out);
        out
    }

    /// `x_r^(n)(t)`.
    pub fn top_derivative(&self, t: f64) -> Vec<f64> {
        self.signal.eval_derivative(t, self.order)
    }

    /// Multiplies every coefficient by `1 + delta`, `delta ~ U[-max_rel_dev,
    /// max_rel_dev]`, drawn in a fixed order from a seeded stream.
    pub fn perturb_coefficients(&self, max_rel_dev: f64, seed: u64) -> Result<Self> {
        if !(max_rel_dev >= 0.0 && max_rel_dev.is_finite()) {
            return Err(Error::InvalidScenario(format!("invalid perturbation {max_rel_dev}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |c: f64| c * (1.0 + rng.gen_range(-max_rel_dev..=max_rel_dev));
        let channels = self
            .signal
            .channels
            .iter()
            .map(|ch| FourierChannel {
                a0: draw(ch.a0),
                cos: ch.cos.iter().map(|&c| draw(c)).collect(),
                sin: ch.sin.iter().map(|&c| draw(c)).collect(),
            })
            .collect();
        Ok(Self::new(FourierSignal::new(self.signal.omega, channels), self.order))
    }
}

fn scaled(scale: f64, a0: f64, cos: &[f64], sin: &[f64]) -> FourierChannel {
    FourierChannel {
        a0: scale * a0,
        cos: cos.iter().map(|v| v * scale).collect(),
        sin: sin.iter().map(|v| v * scale).collect(),
    }
}

/// Approximate natural responses of the builtin plants, rounded to 3 or 4
/// significant digits.
pub fn builtin_signal(name: &str) -> Result<FourierSignal> {
    match name {
        "duffing" => Ok(FourierSignal::new(
            2.515,
            vec![FourierChannel {
                a0: 1.271,
                cos: vec![0.244, -0.026, -0.005],
                sin: vec![0.436, 0.045, 0.0],
            }],
        )),
        "cross_beam" => Ok(FourierSignal::new(
            118.814,
            vec![
                scaled(1e-4, 0.0, &[-35.344, 0.0, 0.521, 0.0, 0.002], &[42.08, 0.0, 0.303, 0.0, -0.006]),
                scaled(1e-4, 0.0, &[-10.974, 0.0, 0.132, 0.0, 0.001], &[12.358, 0.0, 0.077, 0.0, -0.002]),
            ],
        )),
        "cantilever" => Ok(FourierSignal::new(
            83.085,
            vec![
                scaled(
                    1e-4,
                    0.0,
                    &[-2.834, 0.0, 0.254, 0.0, -0.0341, 0.0, -0.001],
                    &[-8.241, 0.0, 0.066, 0.0, 0.026, 0.0, -0.007],
                ),
                scaled(
                    1e-4,
                    0.0,
                    &[-0.487, 0.0, -2.6, 0.0, 0.055, 0.0, 0.001],
                    &[-0.469, 0.0, -0.219, 0.0, -0.044, 0.0, 0.009],
                ),
            ],
        )),
        _ => Err(Error::UnknownName {
            kind: "reference",
            name: name.to_string(),
        }),
    }
}

/// Builtin references are all for second-order plants.
pub fn builtin_reference(name: &str) -> Result<ReferenceTrajectory> {
    Ok(ReferenceTrajectory::new(builtin_signal(name)?, 2))
}
