//! Dual certificates `(μ, ψ, η)` and what can be done with them.
//!
//! A certificate is feasible when, for all `(y, u)`,
//!
//! ```text
//! k(y,u) + ψ(y0) - ψ(y) + ∇η(y)·f(y,u) - μ ≥ 0      (value inequality)
//! ∇ψ(y)·f(y,u) ≥ -psi_slack                           (monotonicity)
//! ```
//!
//! and then `μ` is a lower bound on the long-run average cost from `y0`.

use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::dynamics::{integrate_feedback, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};
use crate::values::{Grid, GridSpec};

/// Tolerance for closed-form certificates.
pub const TOL_CERT_CLOSED: f64 = 1e-6;
/// Tolerance for certificates read off an LP solve.
pub const TOL_CERT_EXTRACTED: f64 = 1e-3;
/// Relative tolerance under which feedback candidates count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Serialized form of a scalar field on the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// `Σ coeffs[b] φ_b`.
    Linear {
        basis: Basis,
        coeffs: Vec<f64>,
    },
    /// Expressions in `vars`; the gradient is supplied, not derived.
    Closed {
        vars: Vec<String>,
        value: String,
        gradient: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct Field {
    spec: FieldSpec,
    compiled: Option<(CompiledExpr, Vec<CompiledExpr>)>,
}

impl Field {
    pub fn zero() -> Field {
        Field {
            spec: FieldSpec::Zero,
            compiled: None,
        }
    }

    pub fn linear(basis: Basis, coeffs: Vec<f64>) -> Result<Field> {
        Field::from_spec(FieldSpec::Linear { basis, coeffs })
    }

    pub fn closed(vars: &[&str], value: &str, gradient: &[&str]) -> Result<Field> {
        Field::from_spec(FieldSpec::Closed {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            value: value.to_string(),
            gradient: gradient.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn from_spec(spec: FieldSpec) -> Result<Field> {
        let compiled = match &spec {
            FieldSpec::Zero => None,
            FieldSpec::Linear { basis, coeffs } => {
                if basis.len() != coeffs.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} coefficients for {} basis functions",
                        coeffs.len(),
                        basis.len()
                    )));
                }
                None
            }
            FieldSpec::Closed {
                vars,
                value,
                gradient,
            } => {
                if gradient.len() != vars.len() {
                    return Err(Error::InvalidArgument(format!(
                        "gradient has {} components for {} variables",
                        gradient.len(),
                        vars.len()
                    )));
                }
                let names: Vec<&str> = vars.iter().map(String::as_str).collect();
                let v = Expr::parse(value)?.compile(&names)?;
                let g = gradient
                    .iter()
                    .map(|s| Expr::parse(s)?.compile(&names).map_err(Error::from))
                    .collect::<Result<Vec<_>>>()?;
                Some((v, g))
            }
        };
        Ok(Field { spec, compiled })
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn value(&self, y: &[f64]) -> Result<f64> {
        Ok(match (&self.spec, &self.compiled) {
            (FieldSpec::Linear { basis, coeffs }, _) => {
                basis.values(y).iter().zip(coeffs).map(|(v, c)| v * c).sum()
            }
            (_, Some((v, _))) => v.eval(y)?,
            _ => 0.0,
        })
    }

    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(match (&self.spec, &self.compiled) {
            (FieldSpec::Linear { basis, coeffs }, _) => {
                let mut g = vec![0.0; y.len()];
                for (row, c) in basis.gradients(y).iter().zip(coeffs) {
                    for (gi, ri) in g.iter_mut().zip(row) {
                        *gi += c * ri;
                    }
                }
                g
            }
            (_, Some((_, grad))) => grad.iter().map(|e| e.eval(y)).collect::<Result<_, _>>()?,
            _ => vec![0.0; y.len()],
        })
    }

    pub fn directional(&self, y: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.gradient(y)?.iter().zip(v).map(|(a, b)| a * b).sum())
    }
}

impl Serialize for Field {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.spec.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Field {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = FieldSpec::deserialize(d)?;
        Field::from_spec(spec).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ExtractedFromLp,
    UserSupplied,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub mu: f64,
    pub y0: Vec<f64>,
    pub psi: Field,
    pub eta: Field,
    /// Allowed violation of `∇ψ·f ≥ 0`; the ξ penalty in perturbed solves.
    #[serde(default)]
    pub psi_slack: f64,
    pub provenance: Provenance,
}

impl Certificate {
    pub fn from_json(text: &str) -> Result<Certificate> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn default_tolerance(&self) -> f64 {
        match self.provenance {
            Provenance::ExtractedFromLp => TOL_CERT_EXTRACTED,
            Provenance::UserSupplied => TOL_CERT_CLOSED,
        }
    }

    /// `k + ψ(y0) - ψ(y) + ∇η·f - μ` at one `(y, u)`.
    pub fn value_margin(&self, system: &SystemSpec, y: &[f64], u: f64) -> Result<f64> {
        let psi0 = self.psi.value(&self.y0)?;
        self.value_margin_with(system, y, u, psi0)
    }

    fn value_margin_with(&self, system: &SystemSpec, y: &[f64], u: f64, psi0: f64) -> Result<f64> {
        let mut fy = vec![0.0; y.len()];
        system.f(y, u, &mut fy)?;
        Ok(system.k(y, u)? + psi0 - self.psi.value(y)? + self.eta.directional(y, &fy)? - self.mu)
    }

    /// `∇ψ·f` at one `(y, u)`.
    pub fn psi_margin(&self, system: &SystemSpec, y: &[f64], u: f64) -> Result<f64> {
        let mut fy = vec![0.0; y.len()];
        system.f(y, u, &mut fy)?;
        self.psi.directional(y, &fy)
    }
}

/// The closed-form certificate of the rotation example in polar
/// coordinates: `ψ = (1-r)²`, `η = 2r|θ - sin θ|`, `μ = (1-r0)²`.
pub fn polar_rotation_certificate(y0: &[f64]) -> Result<Certificate> {
    let vars = ["r", "th"];
    Ok(Certificate {
        mu: (1.0 - y0[0]).powi(2),
        y0: y0.to_vec(),
        psi: Field::closed(&vars, "(1 - r)^2", &["-2*(1 - r)", "0"])?,
        eta: Field::closed(
            &vars,
            "2*r*abs(th - sin(th))",
            &["2*abs(th - sin(th))", "2*r*sgn(th)*(1 - cos(th))"],
        )?,
        psi_slack: 0.0,
        provenance: Provenance::UserSupplied,
    })
}

/// Grid nodes inside `Y` (no relaxation).
pub fn nodes_in_y(system: &SystemSpec, grid: &GridSpec) -> Result<(Grid, Vec<Vec<f64>>)> {
    let g = grid.resolve(system, 0.0)?;
    let nodes = (0..g.len())
        .map(|i| g.node(i))
        .filter(|y| system.distance(y) <= system.tol_viab)
        .collect();
    Ok((g, nodes))
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub margin: f64,
    pub y: Vec<f64>,
    pub u: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub mu: f64,
    pub value_margin: Violation,
    pub psi_margin: Violation,
    pub psi_slack: f64,
    pub points: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Minimum of both margins over every node of `grid` inside `Y` and every
/// control of the system.
pub fn verify_certificate(
    cert: &Certificate,
    system: &SystemSpec,
    grid: &GridSpec,
    tol: f64,
) -> Result<CertificateReport> {
    let (_, nodes) = nodes_in_y(system, grid)?;
    let psi0 = cert.psi.value(&cert.y0)?;
    let mut vm = Violation {
        margin: f64::INFINITY,
        y: Vec::new(),
        u: f64::NAN,
    };
    let mut pm = vm.clone();
    let mut fy = vec![0.0; system.dim()];
    for y in &nodes {
        let psi = cert.psi.value(y)?;
        let geta = cert.eta.gradient(y)?;
        let gpsi = cert.psi.gradient(y)?;
        for &u in &system.controls {
            system.f(y, u, &mut fy)?;
            let dot = |g: &[f64]| g.iter().zip(&fy).map(|(a, b)| a * b).sum::<f64>();
            let v = system.k(y, u)? + psi0 - psi + dot(&geta) - cert.mu;
            if v < vm.margin {
                vm = Violation {
                    margin: v,
                    y: y.clone(),
                    u,
                };
            }
            let p = dot(&gpsi) + cert.psi_slack;
            if p < pm.margin {
                pm = Violation {
                    margin: p,
                    y: y.clone(),
                    u,
                };
            }
        }
    }
    let pass = vm.margin >= -tol && pm.margin >= -tol;
    Ok(CertificateReport {
        mu: cert.mu,
        value_margin: vm,
        psi_margin: pm,
        psi_slack: cert.psi_slack,
        points: nodes.len() * system.controls.len(),
        tol,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub at_time: f64,
    pub residuals: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

/// `k + ψ(y0) - ψ(y) + ∇η·f - μ` along a trajectory; identically zero for
/// an optimal process and a maximizing certificate.
pub fn optimality_residual(
    cert: &Certificate,
    traj: &Trajectory,
    system: &SystemSpec,
    tol: f64,
) -> Result<ResidualReport> {
    let psi0 = cert.psi.value(&cert.y0)?;
    let residuals = traj
        .states
        .iter()
        .zip(&traj.controls)
        .map(|(y, &u)| cert.value_margin_with(system, y, u, psi0))
        .collect::<Result<Vec<f64>>>()?;
    let (i, max_abs) =
        residuals
            .iter()
            .map(|r| r.abs())
            .enumerate()
            .fold(
                (0, 0.0),
                |best, (i, r)| if r > best.1 { (i, r) } else { best },
            );
    Ok(ResidualReport {
        max_abs,
        at_time: traj.times.get(i).copied().unwrap_or(0.0),
        residuals,
        tol,
        pass: max_abs <= tol,
    })
}

/// `y ↦ argmin_u {k(y,u) + ∇η(y)·f(y,u)}` over the control grid. Ties go to
/// the control of least magnitude, then to the smallest index, so a tied
/// equilibrium is held rather than left.
#[derive(Debug, Clone)]
pub struct Feedback {
    eta: Field,
    system: SystemSpec,
}

impl Feedback {
    /// Scores of every control at `y`.
    pub fn scores(&self, y: &[f64]) -> Result<Vec<f64>> {
        let g = self.eta.gradient(y)?;
        let mut fy = vec![0.0; y.len()];
        self.system
            .controls
            .iter()
            .map(|&u| {
                self.system.f(y, u, &mut fy)?;
                Ok(self.system.k(y, u)? + g.iter().zip(&fy).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect()
    }

    /// Indices of all controls within the tie tolerance of the minimum.
    pub fn argmin_set(&self, y: &[f64]) -> Result<Vec<usize>> {
        let s = self.scores(y)?;
        let best = s.iter().copied().fold(f64::INFINITY, f64::min);
        let tie = TIE_TOL * (1.0 + best.abs());
        Ok((0..s.len()).filter(|&i| s[i] <= best + tie).collect())
    }

    pub fn control(&self, y: &[f64]) -> Result<f64> {
        let c = &self.system.controls;
        let i = self
            .argmin_set(y)?
            .into_iter()
            .min_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()).then(a.cmp(&b)))
            .expect("control grid is nonempty");
        Ok(c[i])
    }
}

pub fn synthesize_feedback(cert: &Certificate, system: &SystemSpec) -> Feedback {
    Feedback {
        eta: cert.eta.clone(),
        system: system.clone(),
    }
}

/// Closed-loop trajectory under the feedback, re-evaluated every step, and
/// its running-average cost.
pub fn closed_loop_rollout(
    feedback: &Feedback,
    system: &SystemSpec,
    y0: &[f64],
    horizon: f64,
    step: f64,
    delta: f64,
) -> Result<(Trajectory, f64)> {
    let tr = integrate_feedback(system, y0, |y| feedback.control(y), horizon, step, delta)?;
    let avg = tr.time_average(|y, u| system.k(y, u))?;
    Ok((tr, avg))
}

#[derive(Debug, Clone, Serialize)]
pub struct AltMaximizerReport {
    /// `min ∇ψ·f` over the grid.
    pub psi_margin: Violation,
    /// `min {k - ψ + ∇η·f}` over the grid.
    pub min_value: f64,
    /// `V(y0) - ψ(y0)`.
    pub target: f64,
    pub monotone: bool,
    pub attains: bool,
    pub tol: f64,
    pub pass: bool,
}

/// Checks that `ψ` is non-decreasing along trajectories and that
/// `min_{(y,u)} {k - ψ + ∇η·f} = V(y0) - ψ(y0)`, the two conditions that
/// make `(ψ, η)` a maximizer of the dual problem.
pub fn alt_maximizer_check(
    cert: &Certificate,
    system: &SystemSpec,
    value_at_y0: f64,
    grid: &GridSpec,
    tol: f64,
) -> Result<AltMaximizerReport> {
    let (_, nodes) = nodes_in_y(system, grid)?;
    let mut pm = Violation {
        margin: f64::INFINITY,
        y: Vec::new(),
        u: f64::NAN,
    };
    let mut min_value = f64::INFINITY;
    let mut fy = vec![0.0; system.dim()];
    for y in &nodes {
        let psi = cert.psi.value(y)?;
        let gpsi = cert.psi.gradient(y)?;
        let geta = cert.eta.gradient(y)?;
        for &u in &system.controls {
            system.f(y, u, &mut fy)?;
            let dot = |g: &[f64]| g.iter().zip(&fy).map(|(a, b)| a * b).sum::<f64>();
            let p = dot(&gpsi);
            if p < pm.margin {
                pm = Violation {
                    margin: p,
                    y: y.clone(),
                    u,
                };
            }
            min_value = min_value.min(system.k(y, u)? - psi + dot(&geta));
        }
    }
    let target = value_at_y0 - cert.psi.value(&cert.y0)?;
    let monotone = pm.margin >= -tol;
    let attains = (min_value - target).abs() <= tol;
    Ok(AltMaximizerReport {
        psi_margin: pm,
        min_value,
        target,
        monotone,
        attains,
        tol,
        pass: monotone && attains,
    })
}
