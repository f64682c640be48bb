//! Scenario files: TOML with an explicit `schema_version`.
//!
//! ```toml
//! schema_version = 1
//! kind = "op2"                 # op1 | eq1 | op2 | eq2 | op3 | halfline | sweep
//! seed = 7                     # oracle multi-starts
//! output = "runs/op2"          # overridden by --out
//!
//! [params]                     # any of theta0, kappa, ell, rho, alpha, c, rho0
//! alpha = 0.5
//!
//! [profile]                    # light profile I(y)
//! type = "uniform_canopy"      # full_sun | constant | step | mollified_step | uniform_canopy | tabulated
//! rate = 0.8
//! top = 1.0
//!
//! [solver]                     # grid, tol, scan_points, method, damping, max_iter, points, relaxation, max_sweeps, parallel
//! grid = 1024
//! ```
//!
//! Further sections: `[oracle]` (op1, op2), `[example]` (op1), `[field]` (op3),
//! `[halfline]` (halfline) and `[sweep]` (sweep). Unknown keys are rejected.
//! With `[example] nonuniqueness = true` an op1 run reproduces the step-light
//! example; `ell` then defaults to 1.2.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stemlight::lightfield::LightProfile;
use stemlight::{Exec, ModelParams};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Op1,
    Eq1,
    Op2,
    Eq2,
    Op3,
    Halfline,
    Sweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Op1 => "op1",
            Kind::Eq1 => "eq1",
            Kind::Op2 => "op2",
            Kind::Eq2 => "eq2",
            Kind::Op3 => "op3",
            Kind::Halfline => "halfline",
            Kind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub theta0: Option<f64>,
    pub kappa: Option<f64>,
    pub ell: Option<f64>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub rho0: Option<f64>,
}

pub const PARAM_NAMES: [&str; 7] = ["theta0", "kappa", "ell", "rho", "alpha", "c", "rho0"];

pub fn set_param(p: &mut ModelParams, name: &str, v: f64) -> Result<(), CliError> {
    match name {
        "theta0" => p.theta0 = v,
        "kappa" => p.kappa = v,
        "ell" => p.ell = v,
        "rho" => p.rho = v,
        "alpha" => p.alpha = v,
        "c" => p.c = v,
        "rho0" => p.rho0 = v,
        _ => return Err(CliError::validation("sweep.parameter", format!("unknown parameter `{name}`"))),
    }
    Ok(())
}

impl ParamsSpec {
    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "theta0" => self.theta0,
            "kappa" => self.kappa,
            "ell" => self.ell,
            "rho" => self.rho,
            "alpha" => self.alpha,
            "c" => self.c,
            "rho0" => self.rho0,
            _ => None,
        }
    }

    fn build(&self) -> Result<ModelParams, CliError> {
        let mut p = ModelParams::default();
        for name in PARAM_NAMES {
            if let Some(v) = self.get(name) {
                set_param(&mut p, name, v)?;
            }
        }
        check_params(&p)?;
        Ok(p)
    }
}

fn check_params(p: &ModelParams) -> Result<(), CliError> {
    p.validate().map_err(|e| match e {
        stemlight::Error::InvalidParameter { field, reason } => CliError::validation(field, reason),
        other => CliError::validation("params", other.to_string()),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    FullSun,
    Constant { value: f64 },
    Step { at: f64, low: f64 },
    MollifiedStep { at: f64, low: f64, width: f64 },
    UniformCanopy { rate: f64, top: f64 },
    Tabulated {
        ys: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        smooth: bool,
    },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<LightProfile, CliError> {
        let p = match self {
            ProfileSpec::FullSun => Ok(LightProfile::full_sun()),
            ProfileSpec::Constant { value } => LightProfile::constant(*value),
            ProfileSpec::Step { at, low } => LightProfile::step(*at, *low),
            ProfileSpec::MollifiedStep { at, low, width } => LightProfile::mollified_step(*at, *low, *width),
            ProfileSpec::UniformCanopy { rate, top } => LightProfile::uniform_canopy(*rate, *top),
            ProfileSpec::Tabulated { ys, values, smooth } => {
                if *smooth {
                    LightProfile::tabulated_smooth(ys.clone(), values.clone())
                } else {
                    LightProfile::tabulated(ys.clone(), values.clone())
                }
            }
        };
        p.map_err(|e| CliError::validation("profile", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eq2Method {
    Direct,
    FixedPoint,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// Output samples (op1, eq1, op2, eq2), stem nodes (op3) or light grid columns (halfline).
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    pub scan_points: Option<usize>,
    pub method: Option<Eq2Method>,
    pub damping: Option<f64>,
    pub max_iter: Option<usize>,
    pub points: Option<usize>,
    pub relaxation: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub parallel: Option<bool>,
}

impl SolverSpec {
    pub fn exec(&self) -> Exec {
        match self.parallel {
            Some(false) => Exec::Sequential,
            _ => Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub segments: usize,
    /// Angle grid for the op1 oracle.
    pub grid: Option<usize>,
    pub random_starts: Option<usize>,
    /// Force coordinate descent for op1.
    #[serde(default)]
    pub descent: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleSpec {
    /// Reproduce the step-light non-uniqueness example instead of solving under `[profile]`.
    #[serde(default)]
    pub nonuniqueness: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// `I(x, y) = profile(y)`.
    Stratified,
    Uniform,
    /// `I(x, y) = base + slope * x`, clamped to [0, 1].
    LinearX,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub kind: FieldKind,
    pub value: Option<f64>,
    pub base: Option<f64>,
    pub slope: Option<f64>,
    #[serde(default = "default_x")]
    pub x: [f64; 2],
    #[serde(default = "default_y")]
    pub y: [f64; 2],
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_ny")]
    pub ny: usize,
    /// Root position of the stem.
    #[serde(default)]
    pub root: f64,
}

fn default_x() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_y() -> [f64; 2] {
    [-0.2, 1.5]
}
fn default_nx() -> usize {
    65
}
fn default_ny() -> usize {
    1601
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfLineSpec {
    pub b: Option<f64>,
    pub scale: Option<f64>,
    pub xi_max: Option<f64>,
    pub n_xi: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub iterations: Option<usize>,
    pub relaxation: Option<f64>,
    pub tol: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: Kind,
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(rename = "schema_version")]
    _schema_version: u32,
    kind: Kind,
    seed: Option<u64>,
    output: Option<PathBuf>,
    #[serde(default)]
    params: ParamsSpec,
    profile: Option<ProfileSpec>,
    #[serde(default)]
    solver: SolverSpec,
    oracle: Option<OracleSpec>,
    example: Option<ExampleSpec>,
    field: Option<FieldSpec>,
    halfline: Option<HalfLineSpec>,
    sweep: Option<SweepSpec>,
}

#[derive(Deserialize)]
struct VersionOnly {
    schema_version: Option<toml::Value>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: Kind,
    pub params: ModelParams,
    pub params_spec: ParamsSpec,
    pub profile: Option<ProfileSpec>,
    pub light: LightProfile,
    pub solver: SolverSpec,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub oracle: Option<OracleSpec>,
    pub nonuniqueness: bool,
    pub field: Option<FieldSpec>,
    pub halfline: HalfLineSpec,
    pub sweep: Option<SweepSpec>,
    /// SHA-256 of the scenario text.
    pub source_sha256: String,
}

pub const DEFAULT_SEED: u64 = 7;

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let mut sc = parse_scenario_str(&text, &path.display().to_string())?;
    // relative output paths are taken from the scenario's directory
    if let Some(out) = &sc.output {
        if out.is_relative() {
            sc.output = Some(path.parent().unwrap_or(Path::new(".")).join(out));
        }
    }
    Ok(sc)
}

/// Parses scenario text; `origin` names the source in error messages.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<Scenario, CliError> {
    let parse_err = |e: toml::de::Error| CliError::Parse { path: origin.to_string(), message: e.to_string() };
    let version: VersionOnly = toml::from_str(text).map_err(parse_err)?;
    match version.schema_version {
        None => return Err(CliError::validation("schema_version", "missing")),
        Some(toml::Value::Integer(v)) if v == SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(CliError::validation("schema_version", format!("{v} is not supported (expected {SCHEMA_VERSION})")))
        }
    }
    let raw: RawScenario = toml::from_str(text).map_err(parse_err)?;
    validate(raw, &crate::artifacts::sha256_hex(text.as_bytes()))
}

fn only_for(present: bool, section: &str, allowed: &[Kind], kind: Kind) -> Result<(), CliError> {
    if present && !allowed.contains(&kind) {
        return Err(CliError::validation(section, format!("section is not used by kind `{}`", kind.name())));
    }
    Ok(())
}

fn require_param(spec: &ParamsSpec, name: &str, kind: Kind, swept: Option<&str>) -> Result<(), CliError> {
    if spec.get(name).is_none() && swept != Some(name) {
        return Err(CliError::validation(name, format!("required for kind `{}`", kind.name())));
    }
    Ok(())
}

fn positive(field: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::validation(field, format!("{x} must be positive"))),
        _ => Ok(()),
    }
}

fn at_least(field: &str, v: Option<usize>, min: usize) -> Result<(), CliError> {
    match v {
        Some(n) if n < min => Err(CliError::validation(field, format!("{n} is below the minimum {min}"))),
        _ => Ok(()),
    }
}

fn validate(raw: RawScenario, sha: &str) -> Result<Scenario, CliError> {
    let kind = raw.kind;
    let params = raw.params.build()?;

    // the kind whose rules apply to params and profile
    let effective = match (&raw.sweep, kind) {
        (Some(s), Kind::Sweep) => s.kind,
        _ => kind,
    };
    only_for(raw.sweep.is_some(), "sweep", &[Kind::Sweep], kind)?;
    let swept = raw.sweep.as_ref().map(|s| s.parameter.as_str());
    if kind == Kind::Sweep {
        let s = raw.sweep.as_ref().ok_or_else(|| CliError::validation("sweep", "required for kind `sweep`"))?;
        if !matches!(s.kind, Kind::Op1 | Kind::Op2 | Kind::Eq1 | Kind::Eq2) {
            return Err(CliError::validation("sweep.kind", "must be one of op1, op2, eq1, eq2"));
        }
        if !PARAM_NAMES.contains(&s.parameter.as_str()) {
            return Err(CliError::validation("sweep.parameter", format!("unknown parameter `{}`", s.parameter)));
        }
        if s.values.is_empty() {
            return Err(CliError::validation("sweep.values", "empty"));
        }
        for &v in &s.values {
            let mut p = params;
            set_param(&mut p, &s.parameter, v)?;
            check_params(&p)?;
        }
    }
    match effective {
        Kind::Eq1 => require_param(&raw.params, "rho", effective, swept)?,
        Kind::Eq2 => require_param(&raw.params, "rho0", effective, swept)?,
        _ => {}
    }

    let nonuniqueness = raw.example.as_ref().is_some_and(|e| e.nonuniqueness);
    only_for(raw.example.is_some(), "example", &[Kind::Op1], kind)?;
    only_for(raw.oracle.is_some(), "oracle", &[Kind::Op1, Kind::Op2], kind)?;
    only_for(raw.field.is_some(), "field", &[Kind::Op3], kind)?;
    only_for(raw.halfline.is_some(), "halfline", &[Kind::Halfline], kind)?;
    only_for(raw.profile.is_some(), "profile", &[Kind::Op1, Kind::Op2, Kind::Op3], effective)?;
    if nonuniqueness && raw.profile.is_some() {
        return Err(CliError::validation("profile", "the non-uniqueness example fixes its own step profile"));
    }
    if nonuniqueness && raw.oracle.is_some() {
        return Err(CliError::validation("oracle", "not available with the non-uniqueness example"));
    }
    let mut params = params;
    if nonuniqueness && raw.params.ell.is_none() {
        // the example's stem length
        params.ell = 1.2;
    }
    let light = match &raw.profile {
        Some(p) => p.build()?,
        None => LightProfile::full_sun(),
    };

    let sv = &raw.solver;
    at_least("solver.grid", sv.grid, 2)?;
    at_least("solver.scan_points", sv.scan_points, 2)?;
    at_least("solver.points", sv.points, 3)?;
    at_least("solver.max_iter", sv.max_iter, 1)?;
    at_least("solver.max_sweeps", sv.max_sweeps, 1)?;
    positive("solver.tol", sv.tol)?;
    positive("solver.damping", sv.damping)?;
    positive("solver.relaxation", sv.relaxation)?;
    if sv.damping.is_some_and(|d| d > 1.0) {
        return Err(CliError::validation("solver.damping", "must lie in ]0, 1]"));
    }
    if sv.relaxation.is_some_and(|d| d > 1.0) {
        return Err(CliError::validation("solver.relaxation", "must lie in ]0, 1]"));
    }
    if sv.method.is_some() && effective != Kind::Eq2 {
        return Err(CliError::validation("solver.method", "only used by eq2"));
    }

    if let Some(o) = &raw.oracle {
        if o.segments == 0 || o.segments > 64 {
            return Err(CliError::validation("oracle.segments", format!("{} is outside 1..=64", o.segments)));
        }
        at_least("oracle.grid", o.grid, 2)?;
    }

    if kind == Kind::Op3 {
        let f = raw.field.as_ref().ok_or_else(|| CliError::validation("field", "required for kind `op3`"))?;
        match f.kind {
            FieldKind::Uniform if f.value.is_none() => return Err(CliError::validation("field.value", "required for a uniform field")),
            FieldKind::LinearX if f.base.is_none() || f.slope.is_none() => {
                return Err(CliError::validation("field.base", "base and slope are required for a linear_x field"))
            }
            FieldKind::Stratified if raw.profile.is_none() => {
                return Err(CliError::validation("profile", "required for a stratified field"))
            }
            _ => {}
        }
        if !(f.x[1] > f.x[0] && f.y[1] > f.y[0]) {
            return Err(CliError::validation("field.x", "window bounds must be increasing"));
        }
        if f.nx < 2 || f.ny < 2 {
            return Err(CliError::validation("field.nx", "need at least 2 samples per axis"));
        }
    }

    let halfline = raw.halfline.clone().unwrap_or_default();
    positive("halfline.b", halfline.b)?;
    positive("halfline.xi_max", halfline.xi_max)?;
    positive("halfline.tol", halfline.tol)?;
    if halfline.scale.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
        return Err(CliError::validation("halfline.scale", "must be non-negative"));
    }
    at_least("halfline.n_xi", halfline.n_xi, 2)?;
    at_least("halfline.nx", halfline.nx, 2)?;
    at_least("halfline.ny", halfline.ny, 2)?;
    at_least("halfline.points", halfline.points, 3)?;

    Ok(Scenario {
        kind,
        params,
        params_spec: raw.params,
        profile: raw.profile,
        light,
        solver: raw.solver,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        output: raw.output,
        oracle: raw.oracle,
        nonuniqueness,
        field: raw.field,
        halfline,
        sweep: raw.sweep,
        source_sha256: sha.to_string(),
    })
}

impl Scenario {
    /// Applies `--grid`, `--tol` and `--seed`.
    pub fn apply_overrides(&mut self, grid: Option<usize>, tol: Option<f64>, seed: Option<u64>) -> Result<(), CliError> {
        if let Some(g) = grid {
            at_least("--grid", Some(g), 2)?;
            self.solver.grid = Some(g);
        }
        if let Some(t) = tol {
            positive("--tol", Some(t))?;
            self.solver.tol = Some(t);
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario, CliError> {
        parse_scenario_str(text, "test.toml")
    }

    fn field_of(e: CliError) -> String {
        match e {
            CliError::Validation { field, .. } => field,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn minimal_op1() {
        let sc = parse(
            "schema_version = 1\nkind = \"op1\"\n[params]\ntheta0 = 0.7853981633974483\nkappa = 1.0\nell = 1.0\n[profile]\ntype = \"constant\"\nvalue = 1.0\n",
        )
        .unwrap();
        assert_eq!(sc.kind, Kind::Op1);
        assert_eq!(sc.params.kappa, 1.0);
        assert_eq!(sc.light.eval(0.3), 1.0);
        assert_eq!(sc.seed, DEFAULT_SEED);
    }

    #[test]
    fn negative_kappa_is_named() {
        let e = parse("schema_version = 1\nkind = \"op1\"\n[params]\nkappa = -1.0\n").unwrap_err();
        assert_eq!(field_of(e), "kappa");
    }

    #[test]
    fn eq2_requires_rho0() {
        let e = parse("schema_version = 1\nkind = \"eq2\"\n").unwrap_err();
        assert_eq!(field_of(e), "rho0");
        assert!(parse("schema_version = 1\nkind = \"eq2\"\n[params]\nrho0 = 0.01\n").is_ok());
    }

    #[test]
    fn eq1_requires_rho_unless_swept() {
        assert_eq!(field_of(parse("schema_version = 1\nkind = \"eq1\"\n").unwrap_err()), "rho");
        let sc = parse(
            "schema_version = 1\nkind = \"sweep\"\n[sweep]\nkind = \"eq1\"\nparameter = \"rho\"\nvalues = [0.01, 0.1]\n",
        );
        assert!(sc.is_ok());
    }

    #[test]
    fn unknown_key_reports_location() {
        let e = parse("schema_version = 1\nkind = \"op1\"\n[params]\nkapa = 1.0\n").unwrap_err();
        match e {
            CliError::Parse { message, .. } => {
                assert!(message.contains("kapa"), "{message}");
                assert!(message.contains("line 4"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn schema_version_is_checked() {
        assert_eq!(field_of(parse("kind = \"op1\"\n").unwrap_err()), "schema_version");
        assert_eq!(field_of(parse("schema_version = 2\nkind = \"op1\"\n").unwrap_err()), "schema_version");
    }

    #[test]
    fn sections_must_match_kind() {
        let e = parse("schema_version = 1\nkind = \"op1\"\n[halfline]\nscale = 0.1\n").unwrap_err();
        assert_eq!(field_of(e), "halfline");
        let e = parse("schema_version = 1\nkind = \"eq1\"\n[params]\nrho = 0.1\n[profile]\ntype = \"full_sun\"\n").unwrap_err();
        assert_eq!(field_of(e), "profile");
        let e = parse("schema_version = 1\nkind = \"op3\"\n").unwrap_err();
        assert_eq!(field_of(e), "field");
    }

    #[test]
    fn bad_profile_and_sweep_values() {
        let e = parse("schema_version = 1\nkind = \"op1\"\n[profile]\ntype = \"constant\"\nvalue = 2.0\n").unwrap_err();
        assert_eq!(field_of(e), "profile");
        let e = parse(
            "schema_version = 1\nkind = \"sweep\"\n[params]\nrho0 = 0.01\n[sweep]\nkind = \"eq2\"\nparameter = \"alpha\"\nvalues = [0.5, 1.5]\n",
        )
        .unwrap_err();
        assert_eq!(field_of(e), "alpha");
    }

    #[test]
    fn overrides() {
        let mut sc = parse("schema_version = 1\nkind = \"op2\"\n").unwrap();
        sc.apply_overrides(Some(64), Some(1e-9), Some(3)).unwrap();
        assert_eq!(sc.solver.grid, Some(64));
        assert_eq!(sc.solver.tol, Some(1e-9));
        assert_eq!(sc.seed, 3);
        assert!(sc.apply_overrides(Some(1), None, None).is_err());
    }
}
