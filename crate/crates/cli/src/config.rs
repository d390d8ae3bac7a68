//! JSON problem configuration.
//!
//! Matrices are nested arrays, row-major. Physical quantities are SI except
//! where a unit field says otherwise; conversion happens in [`ProblemConfig::to_spec`].

use std::fmt;
use std::path::Path;

use lcvx::dynamics::{station_dynamics, LtiSystem, RankTolerance};
use lcvx::geometry::PointingCone;
use lcvx::presets::{DockingParams, RPM};
use lcvx::problem::{ProblemSpec, TerminalCost, TerminalSpec};
use lcvx::solver::{SolverSettings, VerifyTolerances};
use lcvx::micp::BnbOptions;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub dynamics: DynamicsConfig,
    pub cones: Vec<ConeConfig>,
    /// Lower and upper input norm bounds, m/s^2.
    pub rho1: f64,
    pub rho2: f64,
    /// At most this many inputs on at once.
    pub max_active: usize,
    pub x0: Vec<f64>,
    pub terminal: TerminalConfig,
    /// Number of grid intervals.
    pub steps: usize,
    /// Horizon used by `solve` when neither `--tf` nor `--min-time` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "ToleranceConfig::is_empty")]
    pub tolerances: ToleranceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DynamicsConfig {
    /// `x' = A x + B u + w`.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w: Option<Vec<f64>>,
    },
    /// Relative motion in a frame spinning at `omega`.
    RotatingStation {
        omega: [f64; 3],
        #[serde(default)]
        omega_unit: RateUnit,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateUnit {
    #[default]
    #[serde(rename = "rad/s")]
    RadPerSecond,
    #[serde(rename = "rpm")]
    Rpm,
}

impl RateUnit {
    pub fn to_rad_per_second(self, v: f64) -> f64 {
        match self {
            RateUnit::RadPerSecond => v,
            RateUnit::Rpm => v * RPM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeConfig {
    /// Single direction.
    Ray(Vec<f64>),
    /// Outward facet normals, one per row.
    Facets(Vec<Vec<f64>>),
    /// The whole input space of this dimension.
    Unconstrained(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    /// Target per state component, `null` for free. Empty means fully free.
    #[serde(default)]
    pub target: Vec<Option<f64>>,
    /// Pins `t_f` as part of the terminal manifold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<f64>,
    pub cost: CostConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    MinTime,
    /// `q' x(t_f) + c t_f`.
    Affine { q: Vec<f64>, c: f64 },
    /// `|W (x(t_f) - x_ref)|^2`.
    Quadratic { weight: Vec<Vec<f64>>, x_ref: Vec<f64> },
}

/// Bracket for the minimum-time search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub bracket: [f64; 2],
    pub tol_t: f64,
}

/// Overrides; anything absent keeps its default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Relative singular-value threshold for rank tests. Default is
    /// `max(n, q) eps sigma_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_feas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_off: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_bin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bnb_gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bnb_node_limit: Option<usize>,
}

impl ToleranceConfig {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// A config problem tied to the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = std::result::Result<T, ConfigError>;

pub fn parse_config(text: &str) -> CfgResult<ProblemConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ProblemConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ConfigError::new(path, e.into_inner().to_string())
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::new(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
        ));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CfgResult<ProblemConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> CfgResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ConfigError::new(
                format!("{path}[{r}]"),
                format!("expected {ncols} entries, got {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn vector_of_len(path: &str, v: &[f64], n: usize) -> CfgResult<DVector<f64>> {
    if v.len() != n {
        return Err(ConfigError::new(path, format!("expected {n} entries, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn core_err(path: &str) -> impl Fn(lcvx::Error) -> ConfigError + '_ {
    move |e| ConfigError::new(path, e.to_string())
}

impl DynamicsConfig {
    fn to_system(&self) -> CfgResult<LtiSystem> {
        match self {
            DynamicsConfig::Explicit { a, b, w } => {
                let a = matrix("dynamics.a", a)?;
                let b = matrix("dynamics.b", b)?;
                let w = match w {
                    Some(w) => vector_of_len("dynamics.w", w, a.nrows())?,
                    None => DVector::zeros(a.nrows()),
                };
                LtiSystem::new(a, b, w).map_err(core_err("dynamics"))
            }
            DynamicsConfig::RotatingStation { omega, omega_unit } => {
                Ok(station_dynamics(omega.map(|v| omega_unit.to_rad_per_second(v))))
            }
        }
    }
}

impl ConeConfig {
    fn to_cone(&self, path: &str, m: usize) -> CfgResult<PointingCone> {
        match self {
            ConeConfig::Ray(d) => {
                let p = format!("{path}.ray");
                PointingCone::ray(vector_of_len(&p, d, m)?).map_err(core_err(&p))
            }
            ConeConfig::Facets(rows) => {
                let p = format!("{path}.facets");
                let facets = matrix(&p, rows)?;
                if facets.ncols() != m {
                    return Err(ConfigError::new(p, format!("expected {m} columns, got {}", facets.ncols())));
                }
                PointingCone::polytopic(facets).map_err(core_err(&p))
            }
            ConeConfig::Unconstrained(dim) => {
                let p = format!("{path}.unconstrained");
                if *dim != m {
                    return Err(ConfigError::new(p, format!("expected dimension {m}, got {dim}")));
                }
                PointingCone::unconstrained(m).map_err(core_err(&p))
            }
        }
    }
}

impl CostConfig {
    fn to_cost(&self, n: usize) -> CfgResult<TerminalCost> {
        Ok(match self {
            CostConfig::MinTime => TerminalCost::MinTime,
            CostConfig::Affine { q, c } => TerminalCost::Affine {
                q: vector_of_len("terminal.cost.q", q, n)?,
                c: *c,
            },
            CostConfig::Quadratic { weight, x_ref } => {
                let weight = matrix("terminal.cost.weight", weight)?;
                if weight.ncols() != n {
                    return Err(ConfigError::new(
                        "terminal.cost.weight",
                        format!("expected {n} columns, got {}", weight.ncols()),
                    ));
                }
                TerminalCost::Quadratic {
                    weight,
                    x_ref: vector_of_len("terminal.cost.x_ref", x_ref, n)?,
                }
            }
        })
    }
}

impl TerminalConfig {
    fn to_terminal(&self, n: usize) -> CfgResult<TerminalSpec> {
        let cost = self.cost.to_cost(n)?;
        if !self.target.is_empty() && self.target.len() != n {
            return Err(ConfigError::new(
                "terminal.target",
                format!("expected {n} entries or none, got {}", self.target.len()),
            ));
        }
        let fixed: Vec<(usize, f64)> = self
            .target
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect();
        let mut term = TerminalSpec::fixed_components(n, &fixed, cost).map_err(core_err("terminal.target"))?;
        if let Some(tf) = self.fixed_time {
            if !(tf.is_finite() && tf > 0.0) {
                return Err(ConfigError::new("terminal.fixed_time", "must be positive"));
            }
            term = term.with_fixed_time(tf);
        }
        Ok(term)
    }
}

impl ProblemConfig {
    pub fn to_spec(&self) -> CfgResult<ProblemSpec> {
        let system = self.dynamics.to_system()?;
        let (n, m) = (system.n_states(), system.n_inputs());
        let cones = self
            .cones
            .iter()
            .enumerate()
            .map(|(i, c)| c.to_cone(&format!("cones[{i}]"), m))
            .collect::<CfgResult<Vec<_>>>()?;
        let x0 = vector_of_len("x0", &self.x0, n)?;
        let terminal = self.terminal.to_terminal(n)?;
        if self.steps == 0 {
            return Err(ConfigError::new("steps", "must be positive"));
        }
        if let Some(tf) = self.tf {
            if !(tf.is_finite() && tf > 0.0) {
                return Err(ConfigError::new("tf", "must be positive"));
            }
        }
        if let Some(s) = &self.search {
            let [lo, hi] = s.bracket;
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                return Err(ConfigError::new("search.bracket", "need 0 < lo < hi"));
            }
            if !(s.tol_t.is_finite() && s.tol_t > 0.0) {
                return Err(ConfigError::new("search.tol_t", "must be positive"));
            }
        }
        let spec = ProblemSpec::new(system, cones, self.rho1, self.rho2, self.max_active, x0, terminal)
            .map_err(core_err(""))?;
        match &self.state_scale {
            Some(s) => spec
                .with_state_scale(vector_of_len("state_scale", s, n)?)
                .map_err(core_err("state_scale")),
            None => Ok(spec),
        }
    }

    pub fn rank_tolerance(&self) -> RankTolerance {
        self.tolerances.rank_tol.map_or(RankTolerance::Machine, RankTolerance::Relative)
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        let t = &self.tolerances;
        if let Some(v) = t.tol_feas {
            s.conic.tol_feas = v;
        }
        if let Some(v) = t.tol_gap {
            s.conic.tol_gap = v;
        }
        if let Some(v) = t.max_iters {
            s.conic.max_iters = v;
        }
        s
    }

    pub fn verify_tolerances(&self, spec: &ProblemSpec) -> VerifyTolerances {
        let mut v = VerifyTolerances::for_spec(spec);
        let t = &self.tolerances;
        v.tol_off = t.tol_off.unwrap_or(v.tol_off);
        v.tol_bin = t.tol_bin.unwrap_or(v.tol_bin);
        v.tol_u = t.tol_u.unwrap_or(v.tol_u);
        v
    }

    pub fn bnb_options(&self) -> BnbOptions {
        let mut o = BnbOptions {
            conic: self.solver_settings().conic,
            ..BnbOptions::default()
        };
        if let Some(v) = self.tolerances.bnb_gap_tol {
            o.gap_tol = v;
        }
        if let Some(v) = self.tolerances.bnb_node_limit {
            o.node_limit = v;
        }
        o
    }

    /// The docking scenario with every thruster direction spelled out.
    pub fn docking(p: &DockingParams) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dynamics: DynamicsConfig::RotatingStation {
                omega: p.omega,
                omega_unit: RateUnit::RadPerSecond,
            },
            cones: p
                .directions()
                .iter()
                .map(|d| ConeConfig::Ray(d.iter().copied().collect()))
                .collect(),
            rho1: p.rho1,
            rho2: p.rho2,
            max_active: p.max_active,
            x0: p.initial_state().iter().copied().collect(),
            terminal: TerminalConfig {
                target: p.target_state().iter().map(|&v| Some(v)).collect(),
                fixed_time: None,
                cost: CostConfig::MinTime,
            },
            steps: p.steps,
            tf: None,
            search: Some(SearchConfig {
                bracket: [60.0, 200.0],
                tol_t: 0.05,
            }),
            state_scale: None,
            tolerances: ToleranceConfig::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
  "schema_version": 1,
  "dynamics": {"kind": "explicit", "a": [[0, 1], [0, 0]], "b": [[0], [1]]},
  "cones": [{"ray": [1]}, {"ray": [-1]}],
  "rho1": 0.3, "rho2": 1.0, "max_active": 1,
  "x0": [0, 0],
  "terminal": {"target": [1, 0], "cost": {"kind": "min_time"}},
  "steps": 20
}"#
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(minimal()).unwrap();
        let spec = cfg.to_spec().unwrap();
        assert_eq!(spec.n_states(), 2);
        assert_eq!(spec.n_cones(), 2);
        assert_eq!(spec.terminal.n_rows(), 2);
        assert_eq!(cfg.rank_tolerance(), RankTolerance::Machine);
    }

    #[test]
    fn field_path_in_errors() {
        let bad = minimal().replace(r#""rho1": 0.3"#, r#""rho1": "fast""#);
        assert_eq!(parse_config(&bad).unwrap_err().path, "rho1");
        let bad = minimal().replace(r#"{"ray": [-1]}"#, r#"{"ray": [-1, 0]}"#);
        let err = parse_config(&bad).unwrap().to_spec().unwrap_err();
        assert_eq!(err.path, "cones[1].ray");
        let bad = minimal().replace(r#"[[0, 1], [0, 0]]"#, r#"[[0, 1], [0]]"#);
        assert_eq!(parse_config(&bad).unwrap().to_spec().unwrap_err().path, "dynamics.a[1]");
        let bad = minimal().replace(r#""steps": 20"#, r#""steps": 20, "stepz": 3"#);
        assert!(parse_config(&bad).is_err());
        let bad = minimal().replace(r#""kind": "min_time""#, r#""kind": "fastest""#);
        assert_eq!(parse_config(&bad).unwrap_err().path, "terminal.cost.kind");
        let bad = minimal().replace(r#""schema_version": 1"#, r#""schema_version": 7"#);
        assert_eq!(parse_config(&bad).unwrap_err().path, "schema_version");
    }

    #[test]
    fn rpm_converts_once() {
        let rpm = DynamicsConfig::RotatingStation {
            omega: [0.0, 0.0, 1.0],
            omega_unit: RateUnit::Rpm,
        };
        let rad = DynamicsConfig::RotatingStation {
            omega: [0.0, 0.0, std::f64::consts::PI / 30.0],
            omega_unit: RateUnit::RadPerSecond,
        };
        assert_eq!(rpm.to_system().unwrap(), rad.to_system().unwrap());
        let json = serde_json::to_string(&rpm).unwrap();
        assert!(json.contains(r#""omega_unit":"rpm""#));
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = parse_config(minimal()).unwrap();
        cfg.tolerances.rank_tol = Some(1e-9);
        cfg.tolerances.tol_bin = Some(1e-3);
        cfg.tolerances.bnb_node_limit = Some(7);
        let spec = cfg.to_spec().unwrap();
        assert_eq!(cfg.rank_tolerance(), RankTolerance::Relative(1e-9));
        assert_eq!(cfg.verify_tolerances(&spec).tol_bin, 1e-3);
        assert_eq!(cfg.bnb_options().node_limit, 7);
        let back = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
