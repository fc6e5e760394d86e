//! Scenario configuration files (TOML or JSON) and their resolution into a
//! validated [`Simulation`].

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continuation::{hb_solve, BranchOptions, CbcOptions, NewtonOptions, PeriodicOrbit};
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::plant::{builtin_plant, Excitation, Monomial, PlantModel, Regressor, RegressorKind};
use crate::reference::{builtin_signal, FourierChannel, FourierSignal, ReferenceTrajectory};
use crate::simulator::{Mode, RecordOptions, Simulation};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// `duffing`, `cross_beam` or `cantilever`.
    pub builtin: Option<String>,
    /// Label for a custom plant.
    pub name: Option<String>,
    pub order: Option<usize>,
    pub dof: Option<usize>,
    /// Monomial columns of a custom polynomial regressor.
    pub columns: Option<Vec<Monomial>>,
    /// True parameters; overrides the builtin values when given.
    pub theta: Option<Vec<f64>>,
    pub forcing_gain: Option<Vec<Vec<f64>>>,
}

impl PlantSpec {
    pub fn build(&self) -> Result<PlantModel> {
        let mut plant = match (&self.builtin, &self.columns) {
            (Some(name), None) => builtin_plant(name)?,
            (None, Some(columns)) => {
                let (order, dof) = match (self.order, self.dof) {
                    (Some(o), Some(d)) => (o, d),
                    _ => return Err(Error::Config("custom plant needs `order` and `dof`".into())),
                };
                let reg = Regressor::new(order, dof, RegressorKind::Polynomial { columns: columns.clone() })?;
                let theta = self.theta.clone().ok_or_else(|| Error::Config("custom plant needs `theta`".into()))?;
                PlantModel::new(self.name.clone().unwrap_or_else(|| "custom".into()), reg, theta)?
            }
            (Some(_), Some(_)) => return Err(Error::Config("give either `builtin` or `columns`, not both".into())),
            (None, None) => return Err(Error::Config("plant needs `builtin` or `columns`".into())),
        };
        if self.builtin.is_some() {
            if let Some(theta) = &self.theta {
                plant = plant.with_theta(theta.clone())?;
            }
        }
        if let Some(g) = &self.forcing_gain {
            plant = plant.with_forcing_gain(g.clone())?;
        }
        Ok(plant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// A stored approximate natural response, optionally refined by
    /// harmonic balance first.
    Builtin {
        name: Option<String>,
        #[serde(default = "yes")]
        refine: bool,
    },
    /// A Fourier signal in the JSON reference format.
    File {
        path: PathBuf,
        #[serde(default)]
        refine: bool,
    },
    /// Every coefficient of the (refined) builtin scaled by `1 + U[-d, d]`.
    Perturbed {
        base: Option<String>,
        max_rel_dev: f64,
        seed: u64,
        #[serde(default = "yes")]
        refine_base: bool,
    },
    Inline {
        omega: f64,
        channels: Vec<FourierChannel>,
        #[serde(default)]
        refine: bool,
    },
    Zero {
        omega: Option<f64>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub k: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda: Vec<f64>,
    /// `S = s_diag * I`.
    pub s_diag: Option<f64>,
    /// Full `S`, row major.
    pub s: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub phi0: f64,
    pub theta_hat0: Option<Vec<f64>>,
}

impl ControllerSpec {
    fn build(&self, m: usize) -> Result<ControllerParams> {
        let s = match (&self.s, self.s_diag) {
            (Some(rows), None) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::Config(format!("S must be {m} x {m}")));
                }
                DMatrix::from_fn(m, m, |i, j| rows[i][j])
            }
            (None, Some(d)) => DMatrix::identity(m, m) * d,
            _ => return Err(Error::Config("controller needs exactly one of `s` and `s_diag`".into())),
        };
        ControllerParams::new(self.k, self.kappa, self.epsilon, self.gamma, s, self.lambda.clone())
    }
}

/// Pass/fail thresholds reported by the command line tool.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub tol_noninv: Option<f64>,
    pub floor_inv: Option<f64>,
    pub error_tol: Option<f64>,
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Noninvasive,
    Invasive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tol_noninv: f64,
    pub floor_inv: f64,
    pub error_tol: f64,
    pub expect: Expectation,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: Option<String>,
    pub plant: PlantSpec,
    pub excitation: Option<Excitation>,
    pub reference: Option<ReferenceSpec>,
    pub controller: Option<ControllerSpec>,
    pub initial_state: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    /// Duration in forcing periods (ignored when `t_end` is given).
    pub periods: Option<f64>,
    /// Step size as a fraction of the forcing period (ignored when `dt` is
    /// given).
    pub steps_per_period: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    pub regressor_mask: Option<Vec<bool>>,
    pub record_every: Option<usize>,
    /// Samples before this many forcing periods are not recorded.
    pub record_from_period: Option<f64>,
    /// Harmonics used for refinement, continuation and the zero-problem.
    pub harmonics: Option<usize>,
    pub thresholds: Option<ThresholdSpec>,
    pub branch: Option<BranchOptions>,
    pub cbc: Option<CbcOptions>,
    /// Directory that relative file paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Per-plant defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defaults {
    pub steps_per_period: usize,
    pub periods: f64,
    pub harmonics: usize,
    pub record_every: usize,
}

pub fn defaults_for(plant: &str) -> Defaults {
    match plant {
        "cross_beam" | "cantilever" => Defaults {
            steps_per_period: 4000,
            periods: 200.0,
            harmonics: 9,
            record_every: 10,
        },
        _ => Defaults {
            steps_per_period: 2000,
            periods: 40.0,
            harmonics: 7,
            record_every: 1,
        },
    }
}

/// Everything a run needs, resolved from a [`Scenario`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub name: String,
    pub sim: Simulation,
    pub harmonics: usize,
    pub thresholds: Thresholds,
    /// The harmonic-balance orbit when the reference was refined.
    pub orbit: Option<PeriodicOrbit>,
}

impl Scenario {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut sc = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        sc.base_dir = path.parent().map(Path::to_path_buf);
        Ok(sc)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the seed of a perturbed reference.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(ReferenceSpec::Perturbed { seed: s, .. }) = &mut self.reference {
            *s = seed;
        }
        self
    }

    fn plant_key(&self) -> String {
        self.plant.builtin.clone().unwrap_or_else(|| "custom".into())
    }

    pub fn defaults(&self) -> Defaults {
        defaults_for(&self.plant_key())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let plant = self.plant.build()?;
        let d = self.defaults();
        let harmonics = self.harmonics.unwrap_or(d.harmonics);
        let excitation = match &self.excitation {
            Some(e) => {
                e.validate()?;
                e.clone()
            }
            None => Excitation::zero(plant.excitation_channels()),
        };
        let (reference, orbit) = self.resolve_reference(&plant, &excitation, harmonics)?;

        let period = if !excitation.is_zero() {
            Some(excitation.period())
        } else {
            reference.as_ref().map(|r| r.signal().period())
        };
        let dt = match (self.dt, period) {
            (Some(dt), _) => dt,
            (None, Some(t)) => t / self.steps_per_period.unwrap_or(d.steps_per_period) as f64,
            (None, None) => return Err(Error::InvalidScenario("`dt` is required without excitation or reference".into())),
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidScenario(format!("dt must be positive, got {dt}")));
        }
        let t_end = match (self.t_end, period) {
            (Some(t), _) => t,
            (None, Some(p)) => self.periods.unwrap_or(d.periods) * p,
            (None, None) => return Err(Error::InvalidScenario("`t_end` is required without excitation or reference".into())),
        };
        if !(t_end >= dt) {
            return Err(Error::InvalidScenario(format!("t_end ({t_end}) must be at least dt ({dt})")));
        }
        let steps = (t_end / dt).round() as usize;

        let controller_regressor = match &self.regressor_mask {
            Some(mask) => plant.regressor().masked(mask)?,
            None => plant.regressor().clone(),
        };
        let m = controller_regressor.param_count();
        let (params, phi0, theta_hat0) = match &self.controller {
            Some(c) => (Some(c.build(m)?), c.phi0, c.theta_hat0.clone().unwrap_or_else(|| vec![0.0; m])),
            None => (None, 0.0, vec![0.0; m]),
        };
        let initial_state = self.initial_state.clone().unwrap_or_else(|| vec![0.0; plant.state_len()]);
        let record = RecordOptions {
            every: self.record_every.unwrap_or(d.record_every),
            from: self.record_from_period.unwrap_or(0.0) * period.unwrap_or(0.0),
        };

        let th = self.thresholds.unwrap_or_default();
        let sigma_max = plant.forcing_amplitude(&excitation).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol_noninv = th.tol_noninv.unwrap_or(1e-3 * sigma_max.max(1e-6));
        let x_max = reference
            .as_ref()
            .map(|r| {
                let sig = r.signal();
                (0..256)
                    .flat_map(|j| sig.eval(sig.period() * j as f64 / 256.0))
                    .fold(0.0f64, |a, v| a.max(v.abs()))
            })
            .unwrap_or(0.0);
        let thresholds = Thresholds {
            tol_noninv,
            floor_inv: th.floor_inv.unwrap_or(10.0 * tol_noninv),
            error_tol: th.error_tol.unwrap_or(1e-3 * x_max.max(1e-6)),
            expect: th.expect.unwrap_or_default(),
        };

        let sim = Simulation {
            plant,
            controller_regressor,
            excitation,
            reference,
            params,
            initial_state,
            phi0,
            theta_hat0,
            dt,
            steps,
            mode: self.mode,
            record,
            hash: self.hash(),
        };
        sim.validate()?;
        Ok(Resolved {
            name: self.name.clone().unwrap_or_else(|| self.plant_key()),
            sim,
            harmonics,
            thresholds,
            orbit,
        })
    }

    fn resolve_reference(&self, plant: &PlantModel, exc: &Excitation, h: usize) -> Result<(Option<ReferenceTrajectory>, Option<PeriodicOrbit>)> {
        let n = plant.order();
        let refine = |sig: FourierSignal| -> Result<(FourierSignal, Option<PeriodicOrbit>)> {
            let omega = if exc.is_zero() { sig.omega } else { exc.omega };
            let orbit = hb_solve(plant, exc, &sig, omega, h, NewtonOptions::default())?;
            Ok((orbit.fourier.clone(), Some(orbit)))
        };
        let maybe_refine = |sig: FourierSignal, r: bool| if r { refine(sig) } else { Ok((sig, None)) };
        let plant_name = self.plant.builtin.clone();
        let named = |name: &Option<String>| -> Result<FourierSignal> {
            match name.as_ref().or(plant_name.as_ref()) {
                Some(n) => builtin_signal(n),
                None => Err(Error::Config("reference needs a builtin `name`".into())),
            }
        };
        let (sig, orbit) = match &self.reference {
            None => return Ok((None, None)),
            Some(ReferenceSpec::Builtin { name, refine }) => maybe_refine(named(name)?, *refine)?,
            Some(ReferenceSpec::File { path, refine }) => {
                let full = match &self.base_dir {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                maybe_refine(FourierSignal::load(&full)?, *refine)?
            }
            Some(ReferenceSpec::Inline { omega, channels, refine }) => {
                if !(*omega > 0.0) {
                    return Err(Error::Config("reference omega must be positive".into()));
                }
                maybe_refine(FourierSignal::new(*omega, channels.clone()), *refine)?
            }
            Some(ReferenceSpec::Perturbed {
                base,
                max_rel_dev,
                seed,
                refine_base,
            }) => {
                let (sig, _) = maybe_refine(named(base)?, *refine_base)?;
                let r = ReferenceTrajectory::new(sig, n).perturb_coefficients(*max_rel_dev, *seed)?;
                (r.signal().clone(), None)
            }
            Some(ReferenceSpec::Zero { omega }) => {
                let w = omega.unwrap_or(if exc.is_zero() { 1.0 } else { exc.omega });
                (FourierSignal::zero(w, plant.dof()), None)
            }
        };
        Ok((Some(ReferenceTrajectory::new(sig, n)), orbit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUFFING: &str = r#"
        name = "duffing"
        initial_state = [0.0, -1.0]
        periods = 2
        [plant]
        builtin = "duffing"
        [excitation]
        omega = 2.515
        amplitude = [0.15]
        [reference]
        kind = "builtin"
        refine = false
        [controller]
        k = 1.0
        kappa = 1.0
        epsilon = 1.0
        gamma = 0.1
        lambda = [1.0]
        s_diag = 2.0
    "#;

    #[test]
    fn resolves_defaults() {
        let r = Scenario::from_toml(DUFFING).unwrap().resolve().unwrap();
        let t = 2.0 * std::f64::consts::PI / 2.515;
        assert!((r.sim.dt - t / 2000.0).abs() < 1e-15);
        assert_eq!(r.sim.steps, 4000);
        assert_eq!(r.harmonics, 7);
        assert!((r.thresholds.tol_noninv - 1.5e-4).abs() < 1e-15);
        assert!((r.thresholds.floor_inv - 1.5e-3).abs() < 1e-15);
        assert_eq!(r.sim.params.as_ref().unwrap().s()[(2, 2)], 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        let mut sc = Scenario::from_toml(DUFFING).unwrap();
        sc.dt = Some(-1.0);
        assert!(matches!(sc.resolve(), Err(Error::InvalidScenario(_))));
        sc.dt = Some(0.1);
        sc.t_end = Some(0.05);
        assert!(matches!(sc.resolve(), Err(Error::InvalidScenario(_))));
        let mut sc = Scenario::from_toml(DUFFING).unwrap();
        sc.regressor_mask = Some(vec![true, false]);
        assert!(matches!(sc.resolve(), Err(Error::Dimension { .. })));
        assert!(Scenario::from_toml("[plant]\nbuiltin = \"duffing\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn hash_tracks_content_and_seed() {
        let sc = Scenario::from_toml(DUFFING).unwrap();
        assert_eq!(sc.hash(), sc.clone().hash());
        assert_eq!(sc.hash().len(), 64);
        let mut other = sc.clone();
        other.periods = Some(3.0);
        assert_ne!(sc.hash(), other.hash());
    }

    #[test]
    fn toml_round_trip() {
        let sc = Scenario::from_toml(DUFFING).unwrap();
        let back = Scenario::from_toml(&sc.to_toml().unwrap()).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn perturbed_reference_uses_seed() {
        let mut sc = Scenario::from_toml(DUFFING).unwrap();
        sc.reference = Some(ReferenceSpec::Perturbed {
            base: None,
            max_rel_dev: 0.3,
            seed: 1,
            refine_base: false,
        });
        let a = sc.resolve().unwrap().sim.reference.unwrap();
        let b = sc.clone().with_seed(2).resolve().unwrap().sim.reference.unwrap();
        let c = sc.resolve().unwrap().sim.reference.unwrap();
        assert_eq!(a, c);
        assert_ne!(a, b);
    }
}
