//! Run configuration: one strict JSON document.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use crate::asymptote::{self, Trivial};
use crate::discrete::{assemble, DiscreteOperator, Mode};
use crate::model::{self, build_geometry, Coefficients, Field, Geometry, GeometryConfig, GeometryKind};
use crate::state::{self, State};

use super::io;

/// Full run configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryBlock,
    pub coefficients: CoefficientBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Domain and grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryBlock {
    Strip {
        period: f64,
        depth: f64,
        n_y: usize,
        #[serde(default = "default_n_modes")]
        n_modes: usize,
        #[serde(default)]
        n_x: Option<usize>,
    },
    Ball {
        radius: f64,
        n_y: usize,
    },
    Shell {
        inner: f64,
        outer: f64,
        n_y: usize,
    },
}

fn default_n_modes() -> usize {
    4
}

/// One value for every component, or one value per component.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerComponent<T> {
    Each(Vec<T>),
    All(T),
}

/// A constant or transverse samples.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Const(f64),
    Samples(Vec<f64>),
}

/// Membrane and bulk coefficients.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBlock {
    pub mu: PerComponent<f64>,
    pub sigma: PerComponent<f64>,
    pub delta: PerComponent<FieldSpec>,
    pub kappa: PerComponent<FieldSpec>,
    #[serde(default = "one")]
    pub rho0: f64,
    #[serde(default = "one")]
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

/// Initial data.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Smooth random bumps.
    #[default]
    Smooth,
    /// Smooth random bumps with `L1 = 0`.
    SmoothH1,
    /// Uniform random nodal values.
    Random,
    /// Constant potential.
    Constant(f64),
    /// Drifting potential with rate `u1`.
    Drift(f64),
    /// Frozen offsets on the soft components.
    Frozen(Vec<f64>),
    /// Harmonic family with index `i >= 2`.
    Harmonic(usize),
    /// A state file.
    File(PathBuf),
}

/// Time stepping and data.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSpec,
}

fn default_t_end() -> f64 {
    10.0
}
fn default_stride() -> usize {
    64
}
fn default_modes() -> usize {
    16
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            t_end: default_t_end(),
            dt: None,
            stride: default_stride(),
            modes: default_modes(),
            seed: 0,
            data: DataSpec::default(),
        }
    }
}

/// Output location and formats.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into()]
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: None, formats: default_formats() }
    }
}

/// A configuration problem naming the offending field.
#[derive(Debug, Clone)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.check_run()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check_run(&self) -> Result<(), ConfigError> {
        let r = &self.run;
        if !(r.t_end > 0.0 && r.t_end.is_finite()) {
            return Err(ConfigError(format!("run.t_end: {} must be positive", r.t_end)));
        }
        if let Some(dt) = r.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(ConfigError(format!("run.dt: {dt} must be positive")));
            }
        }
        if r.stride == 0 {
            return Err(ConfigError("run.stride: must be at least 1".into()));
        }
        if let Some(f) = self.output.formats.iter().find(|f| f.as_str() != "csv") {
            return Err(ConfigError(format!("output.formats: unsupported format {f:?} (only \"csv\")")));
        }
        Ok(())
    }

    pub fn geometry_config(&self) -> GeometryConfig {
        match self.geometry {
            GeometryBlock::Strip { period, depth, n_y, n_modes, n_x } => {
                let mut g = GeometryConfig::strip(period, depth, n_y, n_modes);
                if let Some(n_x) = n_x {
                    g.n_x = n_x;
                }
                g
            }
            GeometryBlock::Ball { radius, n_y } => GeometryConfig::ball(radius, n_y),
            GeometryBlock::Shell { inner, outer, n_y } => GeometryConfig::shell(inner, outer, n_y),
        }
    }

    pub fn build_geometry(&self) -> Result<Geometry, ConfigError> {
        build_geometry(&self.geometry_config()).map_err(|e| ConfigError(format!("geometry: {e}")))
    }

    /// Coefficients expanded to one entry per component of `geom`.
    pub fn coefficients(&self, geom: &Geometry) -> Result<Coefficients, ConfigError> {
        let n = geom.components.len();
        let b = &self.coefficients;
        let coeff = Coefficients {
            mu: expand(&b.mu, n, "mu")?,
            sigma: expand(&b.sigma, n, "sigma")?,
            delta: expand(&b.delta, n, "delta")?.into_iter().map(FieldSpec::into_field).collect(),
            kappa: expand(&b.kappa, n, "kappa")?.into_iter().map(FieldSpec::into_field).collect(),
            rho0: b.rho0,
            c: b.c,
        };
        let report = model::validate_coefficients(&coeff);
        if let Some(first) = report.failures.first() {
            return Err(ConfigError(format!("coefficients.{}: {}", field_of(first), report.failures.join("; "))));
        }
        coeff.check_against(geom).map_err(|e| ConfigError(format!("coefficients: {e}")))?;
        Ok(coeff)
    }

    /// Geometry, coefficients and the assembled operator.
    pub fn operator(&self) -> Result<DiscreteOperator, ConfigError> {
        let geom = self.build_geometry()?;
        let coeff = self.coefficients(&geom)?;
        assemble(&geom, &coeff, Mode::Full).map_err(|e| ConfigError(format!("operator: {e}")))
    }

    /// Initial state from `run.data` (or `path`, which takes precedence).
    pub fn initial_state(
        &self,
        op: &DiscreteOperator,
        path: Option<&Path>,
        seed: u64,
    ) -> Result<State, ConfigError> {
        if let Some(p) = path {
            return io::read_state(p, op).map(|(s, _)| s).map_err(|e| ConfigError(format!("data: {e}")));
        }
        let c = |x: f64| Complex64::new(x, 0.0);
        let trivial = |kind: Trivial| {
            asymptote::trivial_solution(op, kind)
                .map(|t| t.initial)
                .map_err(|e| ConfigError(format!("run.data: {e}")))
        };
        match &self.run.data {
            DataSpec::Smooth => Ok(state::smooth_random(op, seed, false)),
            DataSpec::SmoothH1 => Ok(state::smooth_random(op, seed, true)),
            DataSpec::Random => {
                let mut rng = state::test_rng(seed);
                Ok(State::random(op, &mut rng).map(|x| c(x.re)))
            }
            DataSpec::Constant(u0) => trivial(Trivial::Constant(c(*u0))),
            DataSpec::Drift(u1) => trivial(Trivial::Drift(c(*u1))),
            DataSpec::Frozen(a) => trivial(Trivial::Frozen(a.iter().map(|&x| c(x)).collect())),
            DataSpec::Harmonic(i) => trivial(Trivial::Harmonic(*i)),
            DataSpec::File(p) => io::read_state(p, op).map(|(s, _)| s).map_err(|e| ConfigError(format!("run.data: {e}"))),
        }
    }

    pub fn geometry_kind(&self) -> GeometryKind {
        self.geometry_config().kind
    }
}

impl FieldSpec {
    fn into_field(self) -> Field {
        match self {
            FieldSpec::Const(v) => Field::Const(v),
            FieldSpec::Samples(s) => Field::Samples(s),
        }
    }
}

fn expand<T: Clone>(p: &PerComponent<T>, n: usize, name: &str) -> Result<Vec<T>, ConfigError> {
    match p {
        PerComponent::All(v) => Ok(vec![v.clone(); n]),
        PerComponent::Each(v) if v.len() == n => Ok(v.clone()),
        PerComponent::Each(v) => Err(ConfigError(format!(
            "coefficients.{name}: {} entries, the geometry has {n} components",
            v.len()
        ))),
    }
}

/// Config key of the coefficient named in a validation failure.
fn field_of(failure: &str) -> &'static str {
    [("μ", "mu"), ("σ", "sigma"), ("ρ₀", "rho0"), ("δ", "delta"), ("κ", "kappa"), ("c >", "c")]
        .iter()
        .find(|(sym, _)| failure.contains(sym))
        .map_or("?", |(_, key)| key)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STRIP: &str = r#"{
        "geometry": {"kind": "strip", "period": 6.283185307179586, "depth": 1.0, "n_y": 12, "n_modes": 3},
        "coefficients": {"mu": 1.0, "sigma": 1.0, "delta": 0.0, "kappa": 1.0}
    }"#;

    #[test]
    fn minimal_strip_config_builds_an_operator() {
        let cfg = RunConfig::from_json(STRIP).unwrap();
        let op = cfg.operator().unwrap();
        assert_eq!(op.n_sec(), 5);
        assert_eq!(cfg.run.stride, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = STRIP.replace("\"n_y\"", "\"ny_typo\": 3, \"n_y\"");
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(err.0.contains("ny_typo"), "{}", err.0);
        let bad = STRIP.replace("\"kappa\": 1.0", "\"kappa\": 1.0, \"gamma\": 2");
        assert!(RunConfig::from_json(&bad).unwrap_err().0.contains("gamma"));
    }

    #[test]
    fn zero_tension_names_the_assumption_and_field() {
        let cfg = RunConfig::from_json(&STRIP.replace("\"sigma\": 1.0", "\"sigma\": 0.0")).unwrap();
        let err = cfg.operator().unwrap_err();
        assert!(err.0.contains("(A1)") && err.0.contains("coefficients.sigma"), "{}", err.0);
    }

    #[test]
    fn per_component_lists_and_samples() {
        let text = r#"{
            "geometry": {"kind": "shell", "inner": 1.0, "outer": 2.0, "n_y": 8},
            "coefficients": {"mu": [1.0, 2.0], "sigma": 1.0, "delta": [0.0, 0.5], "kappa": [0.0, 0.0]}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let op = cfg.operator().unwrap();
        assert_eq!((op.census.n0, op.census.n00), (2, 1));
        let sampled = STRIP.replace("\"delta\": 0.0", "\"delta\": [[0.1, 0.2, 0.3]]");
        let err = RunConfig::from_json(&sampled).unwrap().operator().unwrap_err();
        assert!(err.0.contains("samples"), "{}", err.0);
        let wrong = STRIP.replace("\"mu\": 1.0", "\"mu\": [1.0, 2.0]");
        assert!(RunConfig::from_json(&wrong).unwrap().operator().unwrap_err().0.contains("coefficients.mu"));
    }
}
