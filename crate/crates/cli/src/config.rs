//! Experiment configuration: the TOML file and its validated form.

use homlab::funineq::{CoefficientKind, EigenOptions};
use homlab::geometry::{inverse_eps, parse_rational, rational_from_f64};
use homlab::homog::HomMode;
use homlab::micro::{LoadProfile, Loads, StepOptions, TimeGrid};
use homlab::{Face, MaterialBundle, Rational, Rect, UnitCell};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::CliError;

/// A rational written either as a string (`"1/4"`, `"0.25"`) or a TOML number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatValue {
    Text(String),
    Int(i64),
    Float(f64),
}

impl RatValue {
    fn parse(&self) -> Option<Rational> {
        match self {
            RatValue::Text(s) => parse_rational(s),
            RatValue::Int(i) => Some(Rational::from_integer(*i)),
            RatValue::Float(v) => rational_from_f64(*v),
        }
    }

    fn get(&self, field: &str) -> Result<Rational, CliError> {
        self.parse()
            .ok_or_else(|| CliError::config(field, format!("'{}' is not a rational number", self)))
    }
}

impl std::fmt::Display for RatValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatValue::Text(s) => f.write_str(s),
            RatValue::Int(i) => write!(f, "{i}"),
            RatValue::Float(v) => write!(f, "{v}"),
        }
    }
}

fn rat(s: &str) -> RatValue {
    RatValue::Text(s.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: String,
    #[serde(default = "yes")]
    pub deterministic: bool,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub material: MaterialSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub load: LoadSection,
    #[serde(default)]
    pub homogenization: HomogSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub korn: KornSection,
    #[serde(default)]
    pub samples: SampleSection,
}

fn default_output() -> String {
    "homlab-out".into()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// `[x0, y0, x1, y1]` in cell units; omit for an unperforated cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole: Option<[RatValue; 4]>,
    pub m: usize,
    pub eps: Vec<RatValue>,
    pub dirichlet: Vec<String>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            hole: Some([rat("1/4"), rat("1/4"), rat("3/4"), rat("3/4")]),
            m: 8,
            eps: vec![rat("1/2"), rat("1/4"), rat("1/8")],
            dirichlet: vec!["x1=0".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub p: f64,
    pub q: f64,
    pub amplitude: f64,
    pub stress_free_id: bool,
}

impl Default for MaterialSection {
    fn default() -> Self {
        Self {
            p: 4.0,
            q: 4.0,
            amplitude: 0.5,
            stress_free_id: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: RatValue,
    pub tau: RatValue,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            t_final: rat("1/10"),
            tau: rat("1/100"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    pub body_base: [f64; 2],
    pub body_rate: [f64; 2],
    pub traction_base: [f64; 2],
    pub traction_rate: [f64; 2],
}

impl Default for LoadSection {
    fn default() -> Self {
        Self {
            body_base: [0.0; 2],
            body_rate: [0.5, -0.25],
            traction_base: [0.0; 2],
            traction_rate: [0.0; 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogSection {
    pub mode: HomMode,
    /// Elements per side of the macroscopic grid on `(0,1)²`.
    pub macro_n: usize,
}

impl Default for HomogSection {
    fn default() -> Self {
        Self {
            mode: HomMode::Quadratic,
            macro_n: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub det_floor: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub tol_step: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = StepOptions::default();
        Self {
            det_floor: d.det_floor,
            newton_tol: d.newton.tol,
            max_newton: d.newton.max_iters,
            tol_step: d.tol_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KornSection {
    pub fields: Vec<CoefficientKind>,
    pub certification_grid: usize,
    pub eigen_tol: f64,
    pub block: usize,
    pub poincare: bool,
}

impl Default for KornSection {
    fn default() -> Self {
        let e = EigenOptions::default();
        Self {
            fields: vec![
                CoefficientKind::Identity,
                CoefficientKind::Deformation { amplitude: 0.1 },
                CoefficientKind::Rotation { amplitude: 0.5 },
            ],
            certification_grid: 65,
            eigen_tol: e.tol,
            block: e.block,
            poincare: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub extend: usize,
    pub unfold: usize,
    pub cell: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            extend: 50,
            unfold: 50,
            cell: 10,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output(),
            deterministic: true,
            geometry: GeometrySection::default(),
            material: MaterialSection::default(),
            time: TimeSection::default(),
            load: LoadSection::default(),
            homogenization: HomogSection::default(),
            solver: SolverSection::default(),
            korn: KornSection::default(),
            samples: SampleSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            CliError::config(&field, e.to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<Experiment, CliError> {
        let g = &self.geometry;
        let hole = match &g.hole {
            None => None,
            Some(h) => {
                let c: Vec<Rational> = h.iter().map(|v| v.get("geometry.hole")).collect::<Result<_, _>>()?;
                Some(Rect::new(c[0], c[1], c[2], c[3]))
            }
        };
        let cell = UnitCell::build(hole, g.m).map_err(|e| {
            let field = match e {
                homlab::GeometryError::InvalidResolution(_) => "geometry.m",
                _ => "geometry.hole",
            };
            CliError::config(field, e.to_string())
        })?;
        if g.eps.is_empty() {
            return Err(CliError::config("geometry.eps", "at least one value is required".into()));
        }
        let eps = g
            .eps
            .iter()
            .map(|v| {
                let r = v.get("geometry.eps")?;
                inverse_eps(r).map_err(|e| CliError::config("geometry.eps", e.to_string()))?;
                Ok(r)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        if g.dirichlet.is_empty() {
            return Err(CliError::config("geometry.dirichlet", "at least one face is required".into()));
        }
        let dirichlet = g
            .dirichlet
            .iter()
            .map(|s| s.parse::<Face>().map_err(|e| CliError::config("geometry.dirichlet", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;

        let m = &self.material;
        if !(m.p > 1.0) {
            return Err(CliError::config("material.p", format!("p must exceed 1, got {}", m.p)));
        }
        if !(m.q > 0.0) {
            return Err(CliError::config("material.q", format!("q must be positive, got {}", m.q)));
        }
        if !(m.amplitude.abs() < 1.0) {
            return Err(CliError::config("material.amplitude", "coefficients must stay positive: |amplitude| < 1".into()));
        }
        let bundle = MaterialBundle::new(m.amplitude, m.p, m.q, m.stress_free_id);

        let t_final = self.time.t_final.get("time.t_final")?;
        let tau = self.time.tau.get("time.tau")?;
        let grid = TimeGrid::new(t_final, tau).map_err(|e| CliError::config("time.tau", e.to_string()))?;

        let l = &self.load;
        let loads = Loads {
            body: LoadProfile {
                base: l.body_base,
                rate: l.body_rate,
            },
            traction: LoadProfile {
                base: l.traction_base,
                rate: l.traction_rate,
            },
        };
        if !l.body_base.iter().chain(&l.body_rate).chain(&l.traction_base).chain(&l.traction_rate).all(|v| v.is_finite()) {
            return Err(CliError::config("load", "loads must be finite".into()));
        }

        if self.homogenization.macro_n == 0 {
            return Err(CliError::config("homogenization.macro_n", "must be positive".into()));
        }
        let s = &self.solver;
        if !(s.det_floor > 0.0) {
            return Err(CliError::config("solver.det_floor", "must be positive".into()));
        }
        if !(s.newton_tol > 0.0) || s.max_newton == 0 {
            return Err(CliError::config("solver.newton_tol", "tolerance and iteration cap must be positive".into()));
        }
        let mut step = StepOptions {
            det_floor: s.det_floor,
            tol_step: s.tol_step,
            ..StepOptions::default()
        };
        step.newton.tol = s.newton_tol;
        step.newton.max_iters = s.max_newton;

        let k = &self.korn;
        if k.certification_grid < 2 {
            return Err(CliError::config("korn.certification_grid", "need at least 2 points per axis".into()));
        }
        if k.block == 0 || !(k.eigen_tol > 0.0) {
            return Err(CliError::config("korn.block", "block size and tolerance must be positive".into()));
        }
        let eigen = EigenOptions {
            block: k.block,
            tol: k.eigen_tol,
            seed: self.seed,
            ..EigenOptions::default()
        };

        Ok(Experiment {
            cell,
            eps,
            dirichlet,
            bundle,
            grid,
            loads,
            step,
            mode: self.homogenization.mode,
            macro_n: self.homogenization.macro_n,
            fields: k.fields.clone(),
            certification_grid: k.certification_grid,
            eigen,
            poincare: k.poincare,
            samples: self.samples.clone(),
            seed: self.seed,
        })
    }
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cell: UnitCell,
    pub eps: Vec<Rational>,
    pub dirichlet: Vec<Face>,
    pub bundle: MaterialBundle,
    pub grid: TimeGrid,
    pub loads: Loads,
    pub step: StepOptions,
    pub mode: HomMode,
    pub macro_n: usize,
    pub fields: Vec<CoefficientKind>,
    pub certification_grid: usize,
    pub eigen: EigenOptions,
    pub poincare: bool,
    pub samples: SampleSection,
    pub seed: u64,
}
