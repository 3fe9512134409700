//! Run configuration. Parsing is strict: unknown keys are errors.

use std::path::{Path, PathBuf};

use occlp::certificate::Certificate;
use occlp::dynamics::{
    builtin_system_with_controls, Constraint, ControlSignal, ExprSystemDef, SystemSpec,
};
use occlp::idlp::{Perturbation, DEFAULT_DEGREE, DEFAULT_EPS_C, DEFAULT_XI_CAP};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub horizons: HorizonConfig,
    #[serde(default)]
    pub lp: LpConfig,
    pub y0: Vec<Vec<f64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub certificate: CertificateSource,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Builtin {
        name: String,
    },
    Expr {
        state_names: Vec<String>,
        control_name: String,
        f: Vec<String>,
        k: String,
        control_min: f64,
        control_max: f64,
        constraint: Constraint,
        mf: f64,
        mk: f64,
        #[serde(default = "default_delta0")]
        delta0: f64,
        #[serde(default)]
        periodic_axes: Vec<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// State nodes per axis.
    pub nodes: usize,
    pub controls: usize,
    /// Integration and DP time step `h_t`.
    pub step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nodes: 41,
            controls: 11,
            step: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    pub lambda: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig {
            t: vec![5.0, 10.0, 20.0],
            lambda: vec![0.5, 0.1, 0.02],
            delta: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpConfig {
    pub degree: u32,
    pub eps_c: f64,
    pub xi_cap: f64,
    /// Solve the perturbed problem instead of the plain one.
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            degree: DEFAULT_DEGREE,
            eps_c: DEFAULT_EPS_C,
            xi_cap: DEFAULT_XI_CAP,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Defaults to the largest `T`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Defaults to the constant control closest to zero.
    #[serde(default)]
    pub control: Option<ControlSignal>,
}

/// Where `certify` and `feedback` get their certificate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CertificateSource {
    /// Read off the duals of the LP at each `y0`.
    #[default]
    Extracted,
    /// Largest subsolution over the whole grid, then the largest `η`.
    Global,
    /// The known maximizer of `rotation-polar`.
    ClosedForm,
    /// A certificate JSON file, relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    pub horizon: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { horizon: 50.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Sampled trajectories for the Hausdorff trend.
    pub samples: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig { samples: 12 }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_delta0() -> f64 {
    0.1
}

/// A validated config with every default filled in, plus the built system.
pub struct Resolved {
    pub config: RunConfig,
    pub system: SystemSpec,
    /// Directory of the config file, for relative paths inside it.
    pub base: PathBuf,
}

impl Resolved {
    pub fn max_horizon(&self) -> f64 {
        self.config.horizons.t.iter().copied().fold(0.0, f64::max)
    }

    pub fn load_certificate(&self, path: &Path) -> Result<Certificate, CliError> {
        let full = self.base.join(path);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| CliError::Config(format!("certificate {}: {e}", full.display())))?;
        Certificate::from_json(&text)
            .map_err(|e| CliError::Config(format!("certificate {}: {e}", full.display())))
    }
}

pub fn load(path: &Path) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(config, base)
}

/// Parses the JSON text, naming the offending key on failure.
pub fn parse(text: &str) -> Result<RunConfig, String> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            inner.to_string()
        } else {
            format!("at `{path}`: {inner}")
        }
    })
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}` {msg}"))
}

fn check_list(
    key: &str,
    xs: &[f64],
    ok: impl Fn(f64) -> bool,
    range: &str,
) -> Result<(), CliError> {
    if xs.is_empty() {
        return Err(bad(key, "must not be empty"));
    }
    for (i, &x) in xs.iter().enumerate() {
        if !x.is_finite() || !ok(x) {
            return Err(bad(
                &format!("{key}[{i}]"),
                format_args!("= {x} is outside {range}"),
            ));
        }
    }
    Ok(())
}

pub fn resolve(mut config: RunConfig, base: PathBuf) -> Result<Resolved, CliError> {
    let g = &config.grid;
    if !(3..=401).contains(&g.nodes) {
        return Err(bad("grid.nodes", "must be in [3, 401]"));
    }
    if !(1..=101).contains(&g.controls) {
        return Err(bad("grid.controls", "must be in [1, 101]"));
    }
    if !(g.step > 0.0 && g.step <= 1.0) {
        return Err(bad("grid.step", "must be in (0, 1]"));
    }
    let system = build_system(&config.system, g.controls)?;
    let h = &config.horizons;
    check_list("horizons.T", &h.t, |x| x > 0.0 && x <= 1e4, "(0, 1e4]")?;
    check_list(
        "horizons.lambda",
        &h.lambda,
        |x| x > 0.0 && x <= 100.0,
        "(0, 100]",
    )?;
    check_list(
        "horizons.delta",
        &h.delta,
        |x| (0.0..=system.delta0).contains(&x),
        "[0, delta0]",
    )?;
    let lp = &config.lp;
    if !(1..=8).contains(&lp.degree) {
        return Err(bad("lp.degree", "must be in [1, 8]"));
    }
    if !(lp.eps_c > 0.0 && lp.eps_c.is_finite()) {
        return Err(bad("lp.eps_c", "must be positive"));
    }
    if !(lp.xi_cap > 0.0 && lp.xi_cap.is_finite()) {
        return Err(bad("lp.xi_cap", "must be positive"));
    }
    if let Some(p) = lp.perturbation {
        if !(p.epsilon >= 0.0 && p.epsilon < 1.0) {
            return Err(bad("lp.perturbation.epsilon", "must be in [0, 1)"));
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return Err(bad("lp.perturbation.horizon", "must be positive"));
        }
    }
    if config.y0.is_empty() {
        return Err(bad("y0", "must list at least one initial state"));
    }
    for (i, y) in config.y0.iter().enumerate() {
        let key = format!("y0[{i}]");
        if y.len() != system.dim() {
            return Err(bad(
                &key,
                format_args!("has {} entries, the system has {}", y.len(), system.dim()),
            ));
        }
        if y.iter().any(|v| !v.is_finite()) || system.distance(y) > system.tol_viab {
            return Err(bad(&key, "is not a point of Y"));
        }
    }
    if !(config.feedback.horizon > 0.0 && config.feedback.horizon <= 1e4) {
        return Err(bad("feedback.horizon", "must be in (0, 1e4]"));
    }
    if config.diagnose.samples == 0 {
        return Err(bad("diagnose.samples", "must be positive"));
    }
    if config.certificate == CertificateSource::ClosedForm && system.name != "rotation-polar" {
        return Err(bad(
            "certificate",
            "closed_form is only known for rotation-polar",
        ));
    }

    let max_t = h.t.iter().copied().fold(0.0, f64::max);
    let sim = &mut config.simulate;
    let horizon = *sim.horizon.get_or_insert(max_t);
    if !(horizon > 0.0 && horizon <= 1e4) {
        return Err(bad("simulate.horizon", "must be in (0, 1e4]"));
    }
    let rest = system
        .controls
        .iter()
        .copied()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .expect("at least one control");
    let control = sim
        .control
        .get_or_insert_with(|| ControlSignal::constant(rest));
    control
        .validate_for(&system)
        .map_err(|e| bad("simulate.control", e))?;
    if control
        .breakpoints
        .windows(2)
        .any(|w| w[1] - w[0] < config.grid.step)
    {
        return Err(bad("simulate.control", "has pieces shorter than grid.step"));
    }
    Ok(Resolved {
        config,
        system,
        base,
    })
}

fn build_system(cfg: &SystemConfig, controls: usize) -> Result<SystemSpec, CliError> {
    match cfg {
        SystemConfig::Builtin { name } => {
            builtin_system_with_controls(name, controls).map_err(|e| bad("system.name", e))
        }
        SystemConfig::Expr {
            state_names,
            control_name,
            f,
            k,
            control_min,
            control_max,
            constraint,
            mf,
            mk,
            delta0,
            periodic_axes,
        } => SystemSpec::from_exprs(&ExprSystemDef {
            state_names: state_names.clone(),
            control_name: control_name.clone(),
            f: f.clone(),
            k: k.clone(),
            control_min: *control_min,
            control_max: *control_max,
            control_count: controls,
            constraint: constraint.clone(),
            mf: *mf,
            mk: *mk,
            delta0: *delta0,
            periodic_axes: periodic_axes.clone(),
        })
        .map_err(|e| bad("system", e)),
    }
}
