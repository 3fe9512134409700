//! Controlled systems `y' = f(y, u)` with a state constraint `y ∈ Y`,
//! fixed-step RK4 integration and the δ-inflated constraint set `Y^δ`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expression, CompiledExpr, Expr};

/// Default slack on the state constraint when checking trajectories.
pub const TOL_VIAB: f64 = 1e-7;
/// Default slack for the rotation invariant `|y|² = const`.
pub const TOL_CONS: f64 = 1e-9;
/// Largest excess beyond `Y^δ` that [`enforce_viability`] will repair.
pub const TOL_PROJ: f64 = 0.25;
/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-2;

/// The constraint set `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Constraint {
    Disk { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Constraint {
    pub fn dim(&self) -> usize {
        match self {
            Constraint::Disk { center, .. } => center.len(),
            Constraint::Box { lo, .. } => lo.len(),
        }
    }

    /// Signed distance to `Y`: non-positive inside, Euclidean distance outside.
    pub fn distance(&self, y: &[f64]) -> f64 {
        match self {
            Constraint::Disk { center, radius } => norm_diff(y, center) - radius,
            Constraint::Box { lo, hi } => {
                let mut outside = 0.0;
                let mut depth = f64::INFINITY;
                for i in 0..y.len() {
                    let below = lo[i] - y[i];
                    let above = y[i] - hi[i];
                    let excess = below.max(above).max(0.0);
                    outside += excess * excess;
                    depth = depth.min(-below).min(-above);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    -depth
                }
            }
        }
    }

    /// Nearest point of `Y + δ·B̄` to `y`.
    pub fn project(&self, y: &[f64], delta: f64) -> Vec<f64> {
        match self {
            Constraint::Disk { center, radius } => {
                let d = norm_diff(y, center);
                let r = radius + delta;
                if d <= r {
                    return y.to_vec();
                }
                y.iter()
                    .zip(center)
                    .map(|(yi, ci)| ci + (yi - ci) * r / d)
                    .collect()
            }
            Constraint::Box { lo, hi } => {
                let p: Vec<f64> = (0..y.len()).map(|i| y[i].clamp(lo[i], hi[i])).collect();
                let d = norm_diff(y, &p);
                if d <= delta {
                    return y.to_vec();
                }
                p.iter()
                    .zip(y)
                    .map(|(pi, yi)| pi + (yi - pi) * delta / d)
                    .collect()
            }
        }
    }

    /// Axis-aligned bounding box of `Y + δ·B̄`.
    pub fn bounding_box(&self, delta: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            Constraint::Disk { center, radius } => (
                center.iter().map(|c| c - radius - delta).collect(),
                center.iter().map(|c| c + radius + delta).collect(),
            ),
            Constraint::Box { lo, hi } => (
                lo.iter().map(|v| v - delta).collect(),
                hi.iter().map(|v| v + delta).collect(),
            ),
        }
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Builtin {
    RotationCartesian,
    RotationPolar,
}

#[derive(Clone)]
enum Model {
    Builtin(Builtin),
    Expr {
        f: Arc<Vec<CompiledExpr>>,
        k: Arc<CompiledExpr>,
        source: Arc<(Vec<Expr>, Expr)>,
    },
}

/// Definition of an expression-backed system.
#[derive(Debug, Clone)]
pub struct ExprSystemDef {
    pub state_names: Vec<String>,
    pub control_name: String,
    pub f: Vec<String>,
    pub k: String,
    pub control_min: f64,
    pub control_max: f64,
    pub control_count: usize,
    pub constraint: Constraint,
    pub mf: f64,
    pub mk: f64,
    pub delta0: f64,
    pub periodic_axes: Vec<usize>,
}

/// A controlled system together with its constraint set and bound constants.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub state_names: Vec<String>,
    pub control_name: String,
    model: Model,
    pub controls: Vec<f64>,
    pub control_range: (f64, f64),
    pub constraint: Constraint,
    /// `|f| ≤ mf` on `Y^δ0 × U`.
    pub mf: f64,
    /// `|k| ≤ mk` on `Y^δ0 × U`.
    pub mk: f64,
    pub delta0: f64,
    /// Angle-like state axes; the IDLP basis adds trigonometric terms on these.
    pub periodic_axes: Vec<usize>,
    pub tol_viab: f64,
    pub tol_proj: f64,
}

impl std::fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("controls", &self.controls)
            .field("constraint", &self.constraint)
            .field("mf", &self.mf)
            .field("mk", &self.mk)
            .field("delta0", &self.delta0)
            .finish()
    }
}

/// `count` evenly spaced points on `[min, max]`.
pub fn control_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.5 * (min + max)],
        _ => (0..count)
            .map(|i| min + (max - min) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Builtin rotation systems, with 11 controls on `[-1, 1]`.
pub fn builtin_system(name: &str) -> Result<SystemSpec> {
    builtin_system_with_controls(name, 11)
}

pub fn builtin_system_with_controls(name: &str, control_count: usize) -> Result<SystemSpec> {
    let delta0 = 0.1;
    // max of (1-y1)^2 + y2^2 over the disk of radius 1 + delta0
    let mk = (2.0 + delta0) * (2.0 + delta0);
    let (kind, names, constraint, mf, periodic) = match name {
        "rotation-cartesian" => (
            Builtin::RotationCartesian,
            vec!["y1".to_string(), "y2".to_string()],
            Constraint::Disk {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            1.0 + delta0,
            vec![],
        ),
        "rotation-polar" => (
            Builtin::RotationPolar,
            vec!["r".to_string(), "th".to_string()],
            Constraint::Box {
                lo: vec![0.0, -PI],
                hi: vec![1.0, PI],
            },
            1.0,
            vec![1],
        ),
        other => return Err(Error::UnknownSystem(other.to_string())),
    };
    let spec = SystemSpec {
        name: name.to_string(),
        state_names: names,
        control_name: "u".into(),
        model: Model::Builtin(kind),
        controls: control_grid(-1.0, 1.0, control_count),
        control_range: (-1.0, 1.0),
        constraint,
        mf,
        mk,
        delta0,
        periodic_axes: periodic,
        tol_viab: TOL_VIAB,
        tol_proj: TOL_PROJ,
    };
    spec.validate()?;
    Ok(spec)
}

impl SystemSpec {
    pub fn from_exprs(def: &ExprSystemDef) -> Result<SystemSpec> {
        let n = def.state_names.len();
        if n == 0 || def.f.len() != n {
            return Err(Error::InvalidSystem(format!(
                "{} state names but {} components of f",
                n,
                def.f.len()
            )));
        }
        if def.constraint.dim() != n {
            return Err(Error::InvalidSystem("constraint dimension mismatch".into()));
        }
        let mut slots: Vec<&str> = def.state_names.iter().map(String::as_str).collect();
        slots.push(def.control_name.as_str());
        let f_src = def
            .f
            .iter()
            .map(|s| parse_expression(s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let k_src = parse_expression(&def.k)?;
        let f = f_src
            .iter()
            .map(|e| e.compile(&slots))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let k = k_src.compile(&slots)?;
        let spec = SystemSpec {
            name: "custom".into(),
            state_names: def.state_names.clone(),
            control_name: def.control_name.clone(),
            model: Model::Expr {
                f: Arc::new(f),
                k: Arc::new(k),
                source: Arc::new((f_src, k_src)),
            },
            controls: control_grid(def.control_min, def.control_max, def.control_count),
            control_range: (def.control_min, def.control_max),
            constraint: def.constraint.clone(),
            mf: def.mf,
            mk: def.mk,
            delta0: def.delta0,
            periodic_axes: def.periodic_axes.clone(),
            tol_viab: TOL_VIAB,
            tol_proj: TOL_PROJ,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.constraint.dim()
    }

    /// The `f` and `k` expressions, when the system is expression-backed.
    pub fn expressions(&self) -> Option<(&[Expr], &Expr)> {
        match &self.model {
            Model::Expr { source, .. } => Some((&source.0, &source.1)),
            Model::Builtin(_) => None,
        }
    }

    /// Checks the structural invariants and that `mf`, `mk` dominate `|f|`,
    /// `|k|` on a sampled grid of `Y^δ0 × U`.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.state_names.len() != n {
            return Err(Error::InvalidSystem("state name count mismatch".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::InvalidSystem("empty control grid".into()));
        }
        let (umin, umax) = self.control_range;
        if self
            .controls
            .iter()
            .any(|u| !u.is_finite() || *u < umin - 1e-12 || *u > umax + 1e-12)
        {
            return Err(Error::InvalidSystem(
                "control outside the control range".into(),
            ));
        }
        if !(self.mf > 0.0 && self.mk > 0.0 && self.delta0 > 0.0) {
            return Err(Error::InvalidSystem(
                "Mf, Mk and delta0 must be positive".into(),
            ));
        }
        if self.periodic_axes.iter().any(|&a| a >= n) {
            return Err(Error::InvalidSystem("periodic axis out of range".into()));
        }
        match &self.constraint {
            Constraint::Disk { radius, .. } if !(*radius > 0.0) => {
                return Err(Error::InvalidSystem("disk radius must be positive".into()))
            }
            Constraint::Box { lo, hi } if lo.iter().zip(hi).any(|(a, b)| !(a < b)) => {
                return Err(Error::InvalidSystem(
                    "box needs lo < hi on every axis".into(),
                ))
            }
            _ => {}
        }
        let (lo, hi) = self.constraint.bounding_box(self.delta0);
        let per_axis = if n <= 2 { 21 } else { 9 };
        let mut fy = vec![0.0; n];
        for y in lattice(&lo, &hi, per_axis) {
            if self.constraint.distance(&y) > self.delta0 + 1e-12 {
                continue;
            }
            for &u in &self.controls {
                self.f(&y, u, &mut fy)?;
                let fnorm = fy.iter().map(|v| v * v).sum::<f64>().sqrt();
                if fnorm > self.mf * (1.0 + 1e-9) {
                    return Err(Error::InvalidSystem(format!(
                        "|f| = {fnorm} exceeds Mf = {} at y = {y:?}, u = {u}",
                        self.mf
                    )));
                }
                let kv = self.k(&y, u)?;
                if kv.abs() > self.mk * (1.0 + 1e-9) {
                    return Err(Error::InvalidSystem(format!(
                        "|k| = {} exceeds Mk = {} at y = {y:?}, u = {u}",
                        kv.abs(),
                        self.mk
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `f(y, u)` into `out`.
    pub fn f(&self, y: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        match &self.model {
            Model::Builtin(Builtin::RotationCartesian) => {
                out[0] = y[1] * u;
                out[1] = -y[0] * u;
            }
            Model::Builtin(Builtin::RotationPolar) => {
                out[0] = 0.0;
                out[1] = u;
            }
            Model::Expr { f, .. } => {
                let vals = with_control(y, u);
                for (o, e) in out.iter_mut().zip(f.iter()) {
                    *o = e.eval(&vals)?;
                }
            }
        }
        Ok(())
    }

    pub fn k(&self, y: &[f64], u: f64) -> Result<f64> {
        Ok(match &self.model {
            Model::Builtin(Builtin::RotationCartesian) => (1.0 - y[0]).powi(2) + y[1] * y[1],
            Model::Builtin(Builtin::RotationPolar) => 1.0 - 2.0 * y[0] * y[1].cos() + y[0] * y[0],
            Model::Expr { k, .. } => k.eval(&with_control(y, u))?,
        })
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        self.constraint.distance(y)
    }

    /// Whether `y ∈ Y^δ`.
    pub fn contains(&self, y: &[f64], delta: f64) -> bool {
        self.constraint.distance(y) <= delta
    }

    /// Index of `u` in the control grid.
    pub fn control_index(&self, u: f64) -> Option<usize> {
        self.controls.iter().position(|c| (c - u).abs() <= 1e-12)
    }

    /// One classic RK4 step with the control held constant.
    pub fn rk4_step(&self, y: &[f64], u: f64, dt: f64) -> Result<Vec<f64>> {
        let n = y.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.f(y, u, &mut k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        self.f(&tmp, u, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        self.f(&tmp, u, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        self.f(&tmp, u, &mut k4)?;
        Ok((0..n)
            .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }
}

fn with_control(y: &[f64], u: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(y.len() + 1);
    v.extend_from_slice(y);
    v.push(u);
    v
}

/// All points of a uniform lattice with `per_axis` nodes per axis.
pub(crate) fn lattice(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|d| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    if per_axis == 1 {
                        0.5 * (lo[d] + hi[d])
                    } else {
                        lo[d] + (hi[d] - lo[d]) * i as f64 / (per_axis - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Piecewise-constant control: `values[i]` on `[breakpoints[i], breakpoints[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSignal {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl ControlSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<ControlSignal> {
        let s = ControlSignal {
            breakpoints,
            values,
        };
        s.check()?;
        Ok(s)
    }

    pub fn constant(u: f64) -> ControlSignal {
        ControlSignal {
            breakpoints: vec![0.0],
            values: vec![u],
        }
    }

    /// Holds `values[i]` for `durations[i]`, the last value thereafter.
    pub fn from_durations(durations: &[f64], values: &[f64]) -> Result<ControlSignal> {
        let mut t = 0.0;
        let mut bps = Vec::with_capacity(values.len());
        for (i, _) in values.iter().enumerate() {
            bps.push(t);
            if i < durations.len() {
                t += durations[i];
            }
        }
        ControlSignal::new(bps, values.to_vec())
    }

    fn check(&self) -> Result<()> {
        if self.breakpoints.is_empty() || self.breakpoints.len() != self.values.len() {
            return Err(Error::InvalidArgument(
                "control signal needs one value per breakpoint".into(),
            ));
        }
        if self.breakpoints[0] != 0.0 {
            return Err(Error::InvalidArgument("first breakpoint must be 0".into()));
        }
        if self.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Checks that every value belongs to the system's control grid.
    pub fn validate_for(&self, system: &SystemSpec) -> Result<()> {
        self.check()?;
        for &u in &self.values {
            if system.control_index(u).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "control value {u} is not on the control grid"
                )));
            }
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t + 1e-12);
        self.values[i.saturating_sub(1)]
    }

    fn min_spacing(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// A sampled trajectory. `controls[i]` is the control applied on
/// `[times[i], times[i+1])`; the final entry repeats the last applied control.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub y0: Vec<f64>,
    pub delta: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least one sample")
    }

    /// Interval lengths `times[i+1] - times[i]`.
    pub fn intervals(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// Trapezoid time average of `q` over the trajectory.
    pub fn time_average<F>(&self, mut q: F) -> Result<f64>
    where
        F: FnMut(&[f64], f64) -> Result<f64>,
    {
        let t = self.duration();
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(
                "trajectory has zero duration".into(),
            ));
        }
        let mut acc = 0.0;
        for i in 0..self.len() - 1 {
            let dt = self.times[i + 1] - self.times[i];
            let u = self.controls[i];
            acc += 0.5 * dt * (q(&self.states[i], u)? + q(&self.states[i + 1], u)?);
        }
        Ok(acc / t)
    }
}

/// Whether states leaving `Y^δ` are projected back or reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    #[default]
    Report,
    Project,
}

/// Integrates under a piecewise-constant control signal with RK4 at step `h`.
pub fn integrate(
    system: &SystemSpec,
    y0: &[f64],
    signal: &ControlSignal,
    horizon: f64,
    h: f64,
    delta: f64,
) -> Result<Trajectory> {
    integrate_with(system, y0, signal, horizon, h, delta, Projection::Report)
}

pub fn integrate_with(
    system: &SystemSpec,
    y0: &[f64],
    signal: &ControlSignal,
    horizon: f64,
    h: f64,
    delta: f64,
    projection: Projection,
) -> Result<Trajectory> {
    signal.check()?;
    let spacing = signal.min_spacing();
    if h > spacing + 1e-12 {
        return Err(Error::StepTooLarge { step: h, spacing });
    }
    run(system, y0, horizon, h, delta, projection, |t, t_next, y| {
        // split the step at interior breakpoints
        let mut pieces = Vec::new();
        let mut s = t;
        for &b in &signal.breakpoints {
            if b > s + 1e-12 && b < t_next - 1e-12 {
                pieces.push((s, b, signal.value_at(s)));
                s = b;
            }
        }
        pieces.push((s, t_next, signal.value_at(s)));
        let mut state = y.to_vec();
        for (a, b, u) in &pieces {
            state = system.rk4_step(&state, *u, b - a)?;
        }
        Ok((signal.value_at(t), state))
    })
}

/// Integrates `y' = f(y, law(y))`, re-evaluating the law at each step start.
pub fn integrate_feedback<L>(
    system: &SystemSpec,
    y0: &[f64],
    mut law: L,
    horizon: f64,
    h: f64,
    delta: f64,
) -> Result<Trajectory>
where
    L: FnMut(&[f64]) -> Result<f64>,
{
    run(
        system,
        y0,
        horizon,
        h,
        delta,
        Projection::Report,
        |t, t_next, y| {
            let u = law(y)?;
            Ok((u, system.rk4_step(y, u, t_next - t)?))
        },
    )
}

fn run<S>(
    system: &SystemSpec,
    y0: &[f64],
    horizon: f64,
    h: f64,
    delta: f64,
    projection: Projection,
    mut step: S,
) -> Result<Trajectory>
where
    S: FnMut(f64, f64, &[f64]) -> Result<(f64, Vec<f64>)>,
{
    if y0.len() != system.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has dimension {}, system has {}",
            y0.len(),
            system.dim()
        )));
    }
    if !(h > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(
            "step and horizon must be positive".into(),
        ));
    }
    let d0 = system.distance(y0);
    if d0 > delta + system.tol_viab {
        return Err(Error::InitialOutside {
            state: y0.to_vec(),
            dist: d0,
            delta,
        });
    }
    let steps = ((horizon / h) - 1e-9).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(y0.to_vec());
    for i in 0..steps {
        let t = i as f64 * h;
        let t_next = if i + 1 == steps {
            horizon
        } else {
            (i + 1) as f64 * h
        };
        let (u, mut y) = step(t, t_next, &states[i])?;
        let dist = system.distance(&y);
        if dist > delta + system.tol_viab {
            match projection {
                Projection::Report => {
                    return Err(Error::ConstraintViolation {
                        t: t_next,
                        dist,
                        delta,
                    })
                }
                Projection::Project => y = enforce_viability(system, &y, delta)?,
            }
        }
        controls.push(u);
        times.push(t_next);
        states.push(y);
    }
    let last = *controls.last().expect("at least one step");
    controls.push(last);
    Ok(Trajectory {
        step: h,
        times,
        states,
        controls,
        y0: y0.to_vec(),
        delta,
    })
}

/// Returns `y` if it lies in `Y^δ`, otherwise its projection onto `Y^δ`.
pub fn enforce_viability(system: &SystemSpec, y: &[f64], delta: f64) -> Result<Vec<f64>> {
    let dist = system.distance(y);
    if dist <= delta {
        return Ok(y.to_vec());
    }
    if dist > delta + system.tol_proj {
        return Err(Error::ProjectionFailed {
            state: y.to_vec(),
            dist,
            limit: delta + system.tol_proj,
        });
    }
    Ok(system.constraint.project(y, delta))
}
