//! Declarative problem configuration (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Triangulation};
use crate::simulation::{default_horizon, Scenario, Schedule, SimOptions};
use crate::synthesis::{initial_decay_gain, Backend, LmiSettings, SolverOptions, SynthesisSettings};
use crate::systems::{builtin, Policy, PolytopicModel, VertexSystem, CHUA_BOX};

/// Either a builtin model name or explicit vertex matrices (row-major).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// One n×n matrix per vertex.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<Vec<f64>>>>,
    /// One n×m matrix per vertex, or a single shared one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_upper: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

/// Grid description; ranges default to the model's state box.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_per_axis: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_ranges: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPolicy {
    Zero,
    DecayGain {
        #[serde(default = "one")]
        rate: f64,
    },
    /// One linear gain K (m×n, row-major) on every simplex.
    Linear { k: Vec<Vec<f64>> },
    /// One m×(n+1) gain per simplex, row-major.
    Gains { gains: Vec<Vec<Vec<f64>>> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub samples: usize,
    pub tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 10_000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after_goal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_bound: Option<f64>,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelsetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub gamma: f64,
    pub eps_strict: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_policy: Option<InitialPolicy>,
    pub solver: SolverOptions,
    pub synthesis: SynthesisTuning,
    pub verify: VerifyConfig,
    pub simulation: SimulationConfig,
    pub levelsets: LevelsetConfig,
}

/// Policy-iteration knobs beyond γ and ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisTuning {
    pub tol_pi: f64,
    pub accept_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
    /// Clamp the initial policy's vertex inputs into the input box.
    pub saturate_initial: bool,
}

impl Default for SynthesisTuning {
    fn default() -> Self {
        let s = SynthesisSettings::default();
        SynthesisTuning {
            tol_pi: s.tol_pi,
            accept_residual: s.accept_residual,
            f_max: s.lmi.f_max,
            saturate_initial: true,
        }
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let lmi = LmiSettings::default();
        ProblemConfig {
            seed: 0,
            iterations: None,
            gamma: lmi.gamma,
            eps_strict: lmi.eps_strict,
            out: None,
            model: ModelConfig::default(),
            grid: GridConfig::default(),
            initial_policy: None,
            solver: SolverOptions::default(),
            synthesis: SynthesisTuning::default(),
            verify: VerifyConfig::default(),
            simulation: SimulationConfig::default(),
            levelsets: LevelsetConfig::default(),
        }
    }
}

/// Per-builtin settings used when the config leaves them out.
struct BuiltinDefaults {
    points: Vec<usize>,
    iterations: usize,
    initial: InitialPolicy,
    scenarios: Vec<Scenario>,
}

fn builtin_defaults(name: &str) -> Option<BuiltinDefaults> {
    match name {
        "double_tank" => Some(BuiltinDefaults {
            points: vec![15, 15],
            iterations: 7,
            initial: InitialPolicy::Zero,
            scenarios: vec![Scenario {
                x0: vec![-2.2, -2.0],
                schedule: Schedule::Vertex { index: 0 },
            }],
        }),
        "unstable_polytopic" => Some(BuiltinDefaults {
            points: vec![15, 15],
            iterations: 10,
            initial: InitialPolicy::DecayGain { rate: 1.0 },
            scenarios: (0..20)
                .map(|seed| Scenario {
                    x0: vec![4.0, -4.0],
                    schedule: Schedule::Random { seed, period: Some(0.05) },
                })
                .collect(),
        }),
        "chua" => Some(BuiltinDefaults {
            points: vec![11, 5, 5],
            iterations: 18,
            initial: InitialPolicy::Linear {
                k: vec![vec![-38.8017, -31.1041, 25.3298]],
            },
            scenarios: vec![Scenario {
                x0: vec![-2.5, 2.5, 2.5],
                schedule: Schedule::Vertex { index: 0 },
            }],
        }),
        _ => None,
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub gamma: Option<f64>,
    pub solver_tol: Option<f64>,
}

/// Parse a grid size such as `15x15` or `11x5x5`.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split(['x', 'X', ','])
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid size '{s}' (expected e.g. 15x15)")))
        })
        .collect()
}

/// A config with its triangulation and model built.
pub struct Resolved {
    pub config: ProblemConfig,
    pub tri: Arc<Triangulation>,
    pub model: PolytopicModel,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl ProblemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.grid {
            self.grid.points_per_axis = Some(v.clone());
            self.grid.axes = None;
            self.grid.points = None;
        }
        if let Some(v) = o.iterations {
            self.iterations = Some(v);
        }
        if let Some(v) = o.gamma {
            self.gamma = v;
        }
        if let Some(v) = o.solver_tol {
            self.solver.tol = v;
        }
    }

    fn defaults(&self) -> Option<BuiltinDefaults> {
        self.model.builtin.as_deref().and_then(builtin_defaults)
    }

    pub fn effective_iterations(&self) -> usize {
        self.iterations
            .or_else(|| self.defaults().map(|d| d.iterations))
            .unwrap_or(5)
    }

    pub fn effective_initial_policy(&self) -> InitialPolicy {
        self.initial_policy
            .clone()
            .or_else(|| self.defaults().map(|d| d.initial))
            .unwrap_or(InitialPolicy::Zero)
    }

    pub fn effective_scenarios(&self) -> Vec<Scenario> {
        if self.simulation.scenarios.is_empty() {
            self.defaults().map(|d| d.scenarios).unwrap_or_default()
        } else {
            self.simulation.scenarios.clone()
        }
    }

    pub fn model_name(&self) -> String {
        self.model
            .builtin
            .clone()
            .or_else(|| self.model.name.clone())
            .unwrap_or_else(|| "custom".into())
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            horizon: self.simulation.horizon.unwrap_or_else(|| default_horizon(&self.model_name())),
            dt: self.simulation.dt,
            stop_after_goal: self.simulation.stop_after_goal,
            ..Default::default()
        }
    }

    pub fn tol_bound(&self) -> f64 {
        self.simulation.tol_bound.unwrap_or(1e-6)
    }

    pub fn settings(&self) -> SynthesisSettings {
        SynthesisSettings {
            lmi: LmiSettings {
                gamma: self.gamma,
                eps_strict: self.eps_strict,
                f_max: self.synthesis.f_max,
                ..LmiSettings::default()
            },
            solver: self.solver,
            tol_pi: self.synthesis.tol_pi,
            accept_residual: self.synthesis.accept_residual,
        }
    }

    fn validate_scalars(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive and finite")));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma");
        }
        if !(self.eps_strict >= 0.0 && self.eps_strict.is_finite()) {
            return Err(Error::Config("eps_strict must be nonnegative".into()));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(Error::Config("solver.tol must lie in (0, 1)".into()));
        }
        if !(self.solver.static_reg >= 0.0 && self.solver.static_reg < 1.0) {
            return Err(Error::Config("solver.static_reg must lie in [0, 1)".into()));
        }
        if self.effective_iterations() == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if let Some(h) = self.simulation.horizon {
            if !(h > 0.0) {
                return bad("simulation.horizon");
            }
        }
        if let Some(dt) = self.simulation.dt {
            if !(dt > 0.0) {
                return bad("simulation.dt");
            }
        }
        Ok(())
    }

    fn explicit_model(&self) -> Result<PolytopicModel> {
        let m = &self.model;
        let (Some(a), Some(b)) = (&m.a, &m.b) else {
            return Err(Error::Config("model needs either `builtin` or both `a` and `b`".into()));
        };
        let bounds = m
            .bounds
            .clone()
            .ok_or_else(|| Error::Config("explicit model needs `bounds`".into()))?;
        let (Some(lo), Some(hi)) = (&m.u_lower, &m.u_upper) else {
            return Err(Error::Config("explicit model needs `u_lower` and `u_upper`".into()));
        };
        if b.len() != 1 && b.len() != a.len() {
            return Err(Error::Config("`b` must have one matrix or one per vertex".into()));
        }
        let vertices = a
            .iter()
            .enumerate()
            .map(|(k, ak)| {
                Ok(VertexSystem {
                    a: matrix(ak, "a")?,
                    b: matrix(&b[if b.len() == 1 { 0 } else { k }], "b")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PolytopicModel::uniform(
            m.name.as_deref().unwrap_or("custom"),
            vertices,
            DVector::from_vec(lo.clone()),
            DVector::from_vec(hi.clone()),
            bounds,
        )
    }

    fn grid_spec(&self, bounds: &[(f64, f64)]) -> Result<GridSpec> {
        let g = &self.grid;
        if let Some(points) = &g.points {
            return Ok(GridSpec::Points { points: points.clone() });
        }
        if let Some(axes) = &g.axes {
            return Ok(GridSpec::Tensor { axes: axes.clone() });
        }
        let ranges = g.axis_ranges.clone().unwrap_or_else(|| bounds.to_vec());
        let points = g
            .points_per_axis
            .clone()
            .or_else(|| self.defaults().map(|d| d.points))
            .ok_or_else(|| Error::Config("grid.points_per_axis is required for explicit models".into()))?;
        Ok(GridSpec::regular(&ranges, &points))
    }

    /// Validate and build the triangulation and model.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate_scalars()?;
        let model_bounds: Vec<(f64, f64)> = match self.model.builtin.as_deref() {
            Some("double_tank") => crate::systems::double_tank().bounds().to_vec(),
            Some("unstable_polytopic") => crate::systems::unstable_polytopic().bounds().to_vec(),
            Some("chua") => CHUA_BOX.to_vec(),
            Some(other) => return Err(Error::Config(format!("unknown builtin model '{other}'"))),
            None => self
                .model
                .bounds
                .clone()
                .ok_or_else(|| Error::Config("explicit model needs `bounds`".into()))?,
        };
        let spec = self.grid_spec(&model_bounds)?;
        let tri = Arc::new(Triangulation::from_spec(&spec).map_err(|e| Error::Config(format!("grid: {e}")))?);
        let mut model = match self.model.builtin.as_deref() {
            Some(name) => builtin(name, &tri)?,
            None => self.explicit_model()?,
        };
        if self.model.builtin.is_some() && (self.model.u_lower.is_some() || self.model.u_upper.is_some()) {
            let lo = self.model.u_lower.clone().map_or(model.u_lower().clone(), DVector::from_vec);
            let hi = self.model.u_upper.clone().map_or(model.u_upper().clone(), DVector::from_vec);
            model = model.with_input_bounds(lo, hi)?;
        }
        model.check_triangulation(&tri).map_err(|e| Error::Config(e.to_string()))?;
        for sc in self.effective_scenarios() {
            if sc.x0.len() != tri.dim() {
                return Err(Error::Config(format!("scenario x0 {:?} has the wrong dimension", sc.x0)));
            }
        }
        Ok(Resolved {
            config: self.clone(),
            tri,
            model,
        })
    }
}

impl Resolved {
    /// Build the initial policy; the decay-gain variant solves a small SDP.
    pub fn initial_policy(&self, backend: &dyn Backend) -> Result<Policy> {
        let policy = self.raw_initial_policy(backend)?;
        if self.config.synthesis.saturate_initial {
            policy.saturated(&self.tri, self.model.u_lower(), self.model.u_upper())
        } else {
            Ok(policy)
        }
    }

    fn raw_initial_policy(&self, backend: &dyn Backend) -> Result<Policy> {
        let (tri, model) = (&self.tri, &self.model);
        match self.config.effective_initial_policy() {
            InitialPolicy::Zero => Ok(Policy::zero(tri, model.m())),
            InitialPolicy::DecayGain { rate } => {
                let k = initial_decay_gain(model, rate, backend)?;
                Policy::linear(tri, &k)
            }
            InitialPolicy::Linear { k } => {
                let k = matrix(&k, "initial_policy.k")?;
                if k.shape() != (model.m(), model.n()) {
                    return Err(Error::Config(format!(
                        "initial gain is {}×{}, expected {}×{}",
                        k.nrows(),
                        k.ncols(),
                        model.m(),
                        model.n()
                    )));
                }
                Policy::linear(tri, &k)
            }
            InitialPolicy::Gains { gains } => {
                let g = gains
                    .iter()
                    .map(|g| matrix(g, "initial_policy.gains"))
                    .collect::<Result<Vec<_>>>()?;
                Policy::new(tri, g)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_defaults_follow_the_examples() {
        let c = ProblemConfig::from_toml_str("[model]\nbuiltin = \"double_tank\"\n").unwrap();
        assert_eq!(c.effective_iterations(), 7);
        assert_eq!(c.gamma, 1e-3);
        assert_eq!(c.effective_initial_policy(), InitialPolicy::Zero);
        let r = c.resolve().unwrap();
        assert_eq!((r.tri.num_points(), r.tri.num_simplices()), (225, 392));

        let c = ProblemConfig::from_toml_str("[model]\nbuiltin = \"unstable_polytopic\"\n").unwrap();
        assert_eq!(c.effective_iterations(), 10);
        assert_eq!(c.effective_initial_policy(), InitialPolicy::DecayGain { rate: 1.0 });
        assert_eq!(c.effective_scenarios().len(), 20);

        let c = ProblemConfig::from_toml_str("[model]\nbuiltin = \"chua\"\n").unwrap();
        assert_eq!(c.effective_iterations(), 18);
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut c = ProblemConfig::from_toml_str("seed = 4\n[model]\nbuiltin = \"double_tank\"\n").unwrap();
        c.apply(&Overrides {
            grid: Some(parse_grid("9x9").unwrap()),
            iterations: Some(5),
            gamma: Some(2e-3),
            solver_tol: Some(1e-7),
            ..Default::default()
        });
        let text = c.to_toml_string().unwrap();
        let back = ProblemConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.grid.points_per_axis, Some(vec![9, 9]));
        assert_eq!((back.seed, back.effective_iterations(), back.gamma, back.solver.tol), (4, 5, 2e-3, 1e-7));
    }

    #[test]
    fn explicit_model() {
        let text = r#"
            iterations = 2
            [model]
            name = "scalar2"
            a = [[[0.0, 1.0], [-1.0, -1.0]]]
            b = [[[0.0], [1.0]]]
            u_lower = [-1.0]
            u_upper = [1.0]
            bounds = [[-1.0, 1.0], [-1.0, 1.0]]
            [grid]
            points_per_axis = [5, 5]
            [initial_policy]
            kind = "linear"
            k = [[-1.0, -1.0]]
        "#;
        let c = ProblemConfig::from_toml_str(text).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.model.n(), 2);
        assert_eq!(r.tri.num_points(), 25);
    }

    #[test]
    fn malformed_configs_are_config_errors() {
        for text in [
            "[model]\nbuiltin = \"nope\"\n",
            "gamma = -1\n[model]\nbuiltin = \"double_tank\"\n",
            "[model]\nbuiltin = \"double_tank\"\n[grid]\npoints_per_axis = [4, 4]\n",
            "iterations = \"many\"\n",
            "[model]\nbuiltin = \"double_tank\"\nunknown_key = 1\n",
            "[model]\na = [[[1.0]]]\n",
        ] {
            let r = ProblemConfig::from_toml_str(text).and_then(|c| c.resolve().map(|_| ()));
            assert!(matches!(r, Err(Error::Config(_))), "{text}: {r:?}");
        }
        assert!(parse_grid("9by9").is_err());
        assert_eq!(parse_grid("11x5x5").unwrap(), vec![11, 5, 5]);
    }
}
