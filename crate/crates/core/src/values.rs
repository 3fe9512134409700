//! Finite-horizon averages `V_T` and discounted values `h_λ` on state grids.
//!
//! Both are semi-Lagrangian schemes: one RK4 step per control from every
//! node, then multilinear interpolation of the next value slice. Nodes
//! outside `Y^δ` are inactive, and a one-step image is admissible only if it
//! stays in `Y^δ` and its interpolation stencil avoids inactive nodes.

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, ControlSignal, SystemSpec};
use crate::error::{Error, Result};

/// Default sup-norm stopping tolerance for discounted value iteration.
pub const TOL_VI: f64 = 1e-9;
/// Default sweep limit for discounted value iteration.
pub const MAX_SWEEPS: usize = 200_000;
/// Default nodes per axis for two-dimensional grids.
pub const DEFAULT_NODES: usize = 41;
/// Largest number of control sequences the brute-force oracle will try.
pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;
/// Default closure tolerance for periodic orbits.
pub const TOL_PER: f64 = 1e-6;
/// Default tolerance of the gradient diagnostic.
pub const TOL_DPP: f64 = 0.1;

// Stencil weights at or below this are treated as exact zeros.
const WEIGHT_EPS: f64 = 1e-12;

/// Requested grid: nodes per axis and an optional box (default: the bounding
/// box of `Y^δ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn uniform(dim: usize, nodes: usize) -> GridSpec {
        GridSpec {
            nodes: vec![nodes; dim],
            lo: None,
            hi: None,
        }
    }

    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> GridSpec {
        self.lo = Some(lo);
        self.hi = Some(hi);
        self
    }

    pub fn resolve(&self, system: &SystemSpec, delta: f64) -> Result<Grid> {
        let n = system.dim();
        let (blo, bhi) = system.constraint.bounding_box(delta);
        let lo = self.lo.clone().unwrap_or(blo);
        let hi = self.hi.clone().unwrap_or(bhi);
        if self.nodes.len() != n || lo.len() != n || hi.len() != n {
            return Err(Error::InvalidArgument(format!(
                "grid has {} axes, system has {n}",
                self.nodes.len()
            )));
        }
        if self.nodes.iter().any(|&c| c < 2) {
            return Err(Error::InvalidArgument(
                "grid needs at least 2 nodes per axis".into(),
            ));
        }
        if (0..n).any(|i| !(hi[i] > lo[i])) {
            return Err(Error::InvalidArgument(format!(
                "empty grid box {lo:?}..{hi:?}"
            )));
        }
        Ok(Grid {
            lo,
            hi,
            nodes: self.nodes.clone(),
        })
    }
}

/// A resolved uniform grid. Node `i` has multi-index digits in axis order,
/// first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|&c| {
                let d = i % c;
                i /= c;
                d
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.nodes)
            .rev()
            .fold(0, |acc, (&d, &c)| acc * c + d)
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .enumerate()
            .map(|(a, &d)| self.lo[a] + d as f64 * self.spacing(a))
            .collect()
    }

    /// Multilinear interpolation stencil at `y`, zero weights dropped.
    /// `None` if `y` is outside the grid box.
    pub fn stencil(&self, y: &[f64]) -> Option<Vec<(usize, f64)>> {
        let n = self.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let h = self.spacing(a);
            let s = (y[a] - self.lo[a]) / h;
            let last = (self.nodes[a] - 1) as f64;
            if !(s >= -1e-9 && s <= last + 1e-9) {
                return None;
            }
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(self.nodes[a] - 2);
            base[a] = i;
            frac[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let mut out = Vec::with_capacity(1 << n);
        let mut idx = vec![0usize; n];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for a in 0..n {
                let up = (corner >> a) & 1 == 1;
                idx[a] = base[a] + up as usize;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            if w > 0.0 {
                out.push((self.flat_index(&idx), w));
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueKind {
    Cesaro { horizon: f64 },
    Abel { lambda: f64, sweeps: usize },
}

/// Values at the nodes of a grid; inactive nodes hold NaN.
#[derive(Debug, Clone, Serialize)]
pub struct ValueTable {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub kind: ValueKind,
    pub delta: f64,
    pub step: f64,
    pub controls: Vec<f64>,
    pub interpolation: &'static str,
}

impl ValueTable {
    pub fn is_active(&self, i: usize) -> bool {
        !self.values[i].is_nan()
    }

    /// Interpolated value; `None` outside the grid or next to inactive nodes.
    pub fn value_at(&self, y: &[f64]) -> Option<f64> {
        let st = self.grid.stencil(y)?;
        let mut sum = 0.0;
        let mut mass = 0.0;
        for (j, w) in st {
            if w <= WEIGHT_EPS {
                continue;
            }
            let v = self.values[j];
            if v.is_nan() {
                return None;
            }
            sum += w * v;
            mass += w;
        }
        Some(sum / mass)
    }

    /// Value at the node nearest to `y`.
    pub fn nearest_node(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let idx: Vec<usize> = (0..self.grid.dim())
            .map(|a| {
                let s = ((y[a] - self.grid.lo[a]) / self.grid.spacing(a)).round();
                (s.max(0.0) as usize).min(self.grid.nodes[a] - 1)
            })
            .collect();
        let i = self.grid.flat_index(&idx);
        (self.grid.node(i), self.values[i])
    }
}

struct Choice {
    cost: f64,
    stencil: Vec<(usize, f64)>,
}

struct Transitions {
    active: Vec<bool>,
    choices: Vec<Vec<Choice>>,
}

fn transitions(system: &SystemSpec, grid: &Grid, delta: f64, dt: f64) -> Result<Transitions> {
    let tol = delta + system.tol_viab;
    let active: Vec<bool> = (0..grid.len())
        .map(|i| system.distance(&grid.node(i)) <= tol)
        .collect();
    let mut choices = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut list = Vec::new();
        if active[i] {
            let y = grid.node(i);
            for &u in &system.controls {
                let next = system.rk4_step(&y, u, dt)?;
                if system.distance(&next) > tol {
                    continue;
                }
                let Some(st) = grid.stencil(&next) else {
                    continue;
                };
                if st.iter().any(|&(j, w)| w > WEIGHT_EPS && !active[j]) {
                    continue;
                }
                let stencil: Vec<(usize, f64)> =
                    st.into_iter().filter(|&(_, w)| w > WEIGHT_EPS).collect();
                list.push(Choice {
                    cost: system.k(&y, u)?,
                    stencil,
                });
            }
            if list.is_empty() {
                return Err(Error::NotViable { node: y });
            }
        }
        choices.push(list);
    }
    Ok(Transitions { active, choices })
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time step {step} must be positive"
        )));
    }
    Ok(())
}

/// `V_T^δ` on the grid by backward induction over `T / step` slices.
///
/// The step is shortened so that a whole number of steps spans `[0, T]`.
pub fn cesaro_value_dp(
    system: &SystemSpec,
    horizon: f64,
    delta: f64,
    grid: &GridSpec,
    step: f64,
) -> Result<ValueTable> {
    check_step(step)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be positive"
        )));
    }
    let grid = grid.resolve(system, delta)?;
    let slices = (horizon / step - 1e-9).ceil().max(1.0) as usize;
    let dt = horizon / slices as f64;
    let tr = transitions(system, &grid, delta, dt)?;
    let mut next: Vec<f64> = tr
        .active
        .iter()
        .map(|&a| if a { 0.0 } else { f64::NAN })
        .collect();
    let mut cur = next.clone();
    for _ in 0..slices {
        for (i, list) in tr.choices.iter().enumerate() {
            if !tr.active[i] {
                continue;
            }
            cur[i] = list
                .iter()
                .map(|c| c.cost * dt + c.stencil.iter().map(|&(j, w)| w * next[j]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let values = next.into_iter().map(|v| v / horizon).collect();
    Ok(ValueTable {
        grid,
        values,
        kind: ValueKind::Cesaro { horizon },
        delta,
        step: dt,
        controls: system.controls.clone(),
        interpolation: "multilinear",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            tol: TOL_VI,
            max_sweeps: MAX_SWEEPS,
        }
    }
}

/// `h_λ^δ` as the fixed point of
/// `v(y) = min_u [(1-β) k(y,u) + β v(step(y,u))]`, `β = e^{-λ·step}`.
///
/// Gauss–Seidel sweeps alternate direction; the self-loop weight of each
/// stencil is solved for exactly, which leaves the fixed point unchanged.
pub fn abel_value_dp(
    system: &SystemSpec,
    lambda: f64,
    delta: f64,
    grid: &GridSpec,
    step: f64,
    opts: &ViOptions,
) -> Result<ValueTable> {
    check_step(step)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "discount rate {lambda} must be positive"
        )));
    }
    let grid = grid.resolve(system, delta)?;
    let tr = transitions(system, &grid, delta, step)?;
    let beta = (-lambda * step).exp();
    let mut v: Vec<f64> = tr
        .choices
        .iter()
        .zip(&tr.active)
        .map(|(list, &a)| {
            if a {
                list.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min)
            } else {
                f64::NAN
            }
        })
        .collect();
    let n = v.len();
    let mut sweeps = 0;
    loop {
        if sweeps >= opts.max_sweeps {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                change: f64::NAN,
            });
        }
        let forward = sweeps % 2 == 0;
        sweeps += 1;
        let mut change: f64 = 0.0;
        for k in 0..n {
            let i = if forward { k } else { n - 1 - k };
            if !tr.active[i] {
                continue;
            }
            let mut best = f64::INFINITY;
            for c in &tr.choices[i] {
                let mut self_w = 0.0;
                let mut rest = 0.0;
                for &(j, w) in &c.stencil {
                    if j == i {
                        self_w += w;
                    } else {
                        rest += w * v[j];
                    }
                }
                let val = ((1.0 - beta) * c.cost + beta * rest) / (1.0 - beta * self_w);
                best = best.min(val);
            }
            change = change.max((best - v[i]).abs());
            v[i] = best;
        }
        if change <= opts.tol {
            break;
        }
        if sweeps == opts.max_sweeps {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                change,
            });
        }
    }
    Ok(ValueTable {
        grid,
        values: v,
        kind: ValueKind::Abel { lambda, sweeps },
        delta,
        step,
        controls: system.controls.clone(),
        interpolation: "multilinear",
    })
}

/// Minimal average cost over all piecewise-constant controls with `slots`
/// equal pieces on `[0, T]`, using the system's control grid and `Y`
/// itself (no relaxation). Sequences that violate the constraint are
/// skipped.
pub fn brute_force_value(
    system: &SystemSpec,
    y0: &[f64],
    horizon: f64,
    step: f64,
    slots: usize,
) -> Result<f64> {
    if slots == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(
            "need a positive horizon and at least one slot".into(),
        ));
    }
    let m = system.controls.len();
    let count = (m as u128).checked_pow(slots as u32).unwrap_or(u128::MAX);
    if count > BRUTE_FORCE_BUDGET {
        return Err(Error::BudgetExceeded {
            count,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let durations = vec![horizon / slots as f64; slots];
    let mut digits = vec![0usize; slots];
    let mut best = f64::INFINITY;
    for _ in 0..count {
        let values: Vec<f64> = digits.iter().map(|&d| system.controls[d]).collect();
        let signal = ControlSignal::from_durations(&durations, &values)?;
        match integrate(system, y0, &signal, horizon, step, 0.0) {
            Ok(tr) => {
                let avg = tr.time_average(|y, u| system.k(y, u))?;
                best = best.min(avg);
            }
            Err(Error::ConstraintViolation { .. }) => {}
            Err(e) => return Err(e),
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < m {
                break;
            }
            *d = 0;
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::NotViable { node: y0.to_vec() })
    }
}

/// How an orbit is reached from the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reach {
    StartsOnOrbit,
    Steer {
        control: ControlSignal,
        duration: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicOrbit {
    pub label: String,
    pub period: f64,
    /// Control on one period `[0, period)`.
    pub control: ControlSignal,
    pub start: Vec<f64>,
    pub reach: Reach,
}

/// Distance between states, measured modulo `2π` on periodic axes.
pub fn state_gap(system: &SystemSpec, a: &[f64], b: &[f64]) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let mut d = (x - y).abs();
            if system.periodic_axes.contains(&i) {
                d = d.rem_euclid(tau);
                d = d.min(tau - d);
            }
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `(1/𝒯) ∫_0^𝒯 k(y, u) dt` over one period of the orbit.
pub fn periodic_orbit_average(
    system: &SystemSpec,
    orbit: &PeriodicOrbit,
    step: f64,
    tol_per: f64,
) -> Result<f64> {
    if !(orbit.period > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "period {} must be positive",
            orbit.period
        )));
    }
    let tr = integrate(
        system,
        &orbit.start,
        &orbit.control,
        orbit.period,
        step,
        0.0,
    )?;
    let gap = state_gap(system, tr.final_state(), &orbit.start);
    if gap > tol_per {
        return Err(Error::OrbitNotClosed { gap });
    }
    tr.time_average(|y, u| system.k(y, u))
}

#[derive(Debug, Clone, Serialize)]
pub struct VperReport {
    /// Smallest orbit average in the family; an upper bound on `V_per(y0)`.
    pub value: f64,
    pub best: String,
    pub averages: Vec<(String, f64)>,
    pub note: &'static str,
}

/// Best periodic-orbit average over a user-supplied family, after checking
/// that each orbit is reachable from `y0`.
pub fn vper_search(
    system: &SystemSpec,
    y0: &[f64],
    family: &[PeriodicOrbit],
    step: f64,
    tol_per: f64,
) -> Result<VperReport> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty orbit family".into()));
    }
    let mut averages = Vec::with_capacity(family.len());
    for orbit in family {
        let end = match &orbit.reach {
            Reach::StartsOnOrbit => y0.to_vec(),
            Reach::Steer { control, duration } => {
                if *duration == 0.0 {
                    y0.to_vec()
                } else {
                    integrate(system, y0, control, *duration, step, 0.0)
                        .map_err(|e| Error::Unreachable(format!("{}: {e}", orbit.label)))?
                        .final_state()
                        .to_vec()
                }
            }
        };
        let gap = state_gap(system, &end, &orbit.start);
        if gap > tol_per {
            return Err(Error::Unreachable(format!(
                "{}: reaching control ends {gap:.3e} away from the orbit start",
                orbit.label
            )));
        }
        averages.push((
            orbit.label.clone(),
            periodic_orbit_average(system, orbit, step, tol_per)?,
        ));
    }
    let (best, value) = averages
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("nonempty family");
    Ok(VperReport {
        value,
        best,
        averages,
        note: "minimum over the supplied family only; an upper bound on the periodic value",
    })
}

/// Equilibrium orbit at `start` under the constant control `u`, reached by
/// `steer` over `duration` (or starting there when `duration` is 0).
pub fn equilibrium_orbit(
    label: &str,
    start: Vec<f64>,
    u: f64,
    steer: Option<(ControlSignal, f64)>,
) -> PeriodicOrbit {
    PeriodicOrbit {
        label: label.to_string(),
        period: 1.0,
        control: ControlSignal::constant(u),
        start,
        reach: match steer {
            Some((control, duration)) => Reach::Steer { control, duration },
            None => Reach::StartsOnOrbit,
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    /// `min ∇V·f + 2 M_k / T` over interior nodes and controls.
    pub min_value: f64,
    pub bound: f64,
    pub worst_node: Vec<f64>,
    pub worst_control: f64,
    pub nodes_checked: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `∇V_T^δ(y)·f(y,u) ≥ -2 M_k / T` with central differences at
/// interior nodes whose neighbours are all active.
pub fn dpp_gradient_diagnostic(
    table: &ValueTable,
    system: &SystemSpec,
    tol: f64,
) -> Result<DppReport> {
    let ValueKind::Cesaro { horizon } = table.kind else {
        return Err(Error::InvalidArgument(
            "gradient diagnostic needs a finite-horizon table".into(),
        ));
    };
    let grid = &table.grid;
    let n = grid.dim();
    let bound = 2.0 * system.mk / horizon;
    let mut report = DppReport {
        min_value: f64::INFINITY,
        bound,
        worst_node: Vec::new(),
        worst_control: f64::NAN,
        nodes_checked: 0,
        tol,
        pass: true,
    };
    let mut fy = vec![0.0; n];
    'nodes: for i in 0..grid.len() {
        let idx = grid.multi_index(i);
        let mut grad = vec![0.0; n];
        for a in 0..n {
            if idx[a] == 0 || idx[a] + 1 == grid.nodes[a] {
                continue 'nodes;
            }
            let mut up = idx.clone();
            let mut down = idx.clone();
            up[a] += 1;
            down[a] -= 1;
            let (vu, vd) = (
                table.values[grid.flat_index(&up)],
                table.values[grid.flat_index(&down)],
            );
            if vu.is_nan() || vd.is_nan() || !table.is_active(i) {
                continue 'nodes;
            }
            grad[a] = (vu - vd) / (2.0 * grid.spacing(a));
        }
        report.nodes_checked += 1;
        let y = grid.node(i);
        for &u in &table.controls {
            system.f(&y, u, &mut fy)?;
            let val = grad.iter().zip(&fy).map(|(g, f)| g * f).sum::<f64>() + bound;
            if val < report.min_value {
                report.min_value = val;
                report.worst_node = y.clone();
                report.worst_control = u;
            }
        }
    }
    report.pass = report.min_value >= -tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        builtin_system, builtin_system_with_controls, Constraint, ExprSystemDef,
    };
    use std::f64::consts::PI;

    fn constant_cost_system() -> SystemSpec {
        SystemSpec::from_exprs(&unit_square_def()).unwrap()
    }

    fn closed_form(r: f64, th: f64, t: f64) -> f64 {
        (1.0 - r).powi(2) + 2.0 * r / t * (th - th.sin()).abs()
    }

    #[test]
    fn constant_cost_gives_constant_values() {
        let sys = constant_cost_system();
        let g = GridSpec::uniform(2, 6);
        let t = cesaro_value_dp(&sys, 1.0, 0.0, &g, 0.1).unwrap();
        assert!(t.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let a = abel_value_dp(&sys, 0.5, 0.0, &g, 0.1, &ViOptions::default()).unwrap();
        assert!(a.values.iter().all(|v| (v - 0.7).abs() < 1e-9));
        assert!(brute_force_value(&sys, &[0.5, 0.5], 1.0, 0.1, 3).unwrap() - 0.7 < 1e-12);
        let rep = dpp_gradient_diagnostic(&t, &sys, TOL_DPP).unwrap();
        assert!(rep.pass && rep.nodes_checked > 0);
    }

    #[test]
    fn polar_finite_horizon_value_matches_closed_form() {
        let sys = builtin_system("rotation-polar").unwrap();
        let t =
            cesaro_value_dp(&sys, 10.0, 0.0, &GridSpec::uniform(2, DEFAULT_NODES), 1e-2).unwrap();
        let v = t.value_at(&[0.5, 1.0]).unwrap();
        let expected = 0.25 + (1.0 - 1f64.sin()) / 10.0;
        assert!((v - expected).abs() < 5e-2, "{v} vs {expected}");
        assert!((expected - closed_form(0.5, 1.0, 10.0)).abs() < 1e-15);
        assert!(t.values.iter().all(|v| v.abs() <= sys.mk));
        let rep = dpp_gradient_diagnostic(&t, &sys, TOL_DPP).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn spiked_table_fails_the_gradient_check() {
        let sys = constant_cost_system();
        let mut t = cesaro_value_dp(&sys, 1.0, 0.0, &GridSpec::uniform(2, 6), 0.1).unwrap();
        let centre = t.grid.flat_index(&[2, 2]);
        t.values[centre] += 5.0;
        assert!(!dpp_gradient_diagnostic(&t, &sys, TOL_DPP).unwrap().pass);
    }

    #[test]
    fn abel_value_at_zero_cost_equilibrium() {
        let sys = builtin_system("rotation-polar").unwrap();
        let g = GridSpec::uniform(2, 21);
        for lambda in [0.5, 0.1] {
            let t = abel_value_dp(&sys, lambda, 0.0, &g, 1e-2, &ViOptions::default()).unwrap();
            assert!(t.value_at(&[1.0, 0.0]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_dp_equals_exhaustive_minimum() {
        let sys = SystemSpec::from_exprs(&ExprSystemDef {
            k: "x + u^2".into(),
            f: vec!["0".into(), "0".into()],
            mk: 3.0,
            ..unit_square_def()
        })
        .unwrap();
        let t = cesaro_value_dp(&sys, 0.5, 0.0, &GridSpec::uniform(2, 3), 0.5).unwrap();
        for i in 0..t.grid.len() {
            let y = t.grid.node(i);
            let exhaustive = sys
                .controls
                .iter()
                .map(|&u| sys.k(&y, u).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!((t.values[i] - exhaustive).abs() < 1e-14);
        }
    }

    fn unit_square_def() -> ExprSystemDef {
        ExprSystemDef {
            state_names: vec!["x".into(), "y".into()],
            control_name: "u".into(),
            f: vec!["u".into(), "0".into()],
            k: "0.7".into(),
            control_min: -1.0,
            control_max: 1.0,
            control_count: 3,
            constraint: Constraint::Box {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
            },
            mf: 1.0,
            mk: 1.0,
            delta0: 0.1,
            periodic_axes: vec![],
        }
    }

    #[test]
    fn brute_force_matches_closed_form_strategy() {
        let sys = builtin_system_with_controls("rotation-polar", 3).unwrap();
        let v = brute_force_value(&sys, &[0.5, 1.0], 2.0, 1e-2, 4).unwrap();
        assert!((v - closed_form(0.5, 1.0, 2.0)).abs() < 1e-3, "{v}");
        assert!(matches!(
            brute_force_value(&sys, &[0.5, 1.0], 2.0, 1e-2, 13),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn orbit_averages_and_search() {
        let sys = builtin_system("rotation-polar").unwrap();
        let rotation = PeriodicOrbit {
            label: "rotation".into(),
            period: 2.0 * PI,
            control: ControlSignal::constant(1.0),
            start: vec![0.5, -PI],
            reach: Reach::StartsOnOrbit,
        };
        let avg = periodic_orbit_average(&sys, &rotation, 1e-2, TOL_PER).unwrap();
        // the last step is shortened to land on 2π, so trapezoid is not exact
        assert!((avg - 1.25).abs() < 1e-7, "{avg}");
        let eq = equilibrium_orbit("rest", vec![0.5, 0.0], 0.0, None);
        assert!((periodic_orbit_average(&sys, &eq, 1e-2, TOL_PER).unwrap() - 0.25).abs() < 1e-15);

        let steered = equilibrium_orbit(
            "rest",
            vec![0.5, 0.0],
            0.0,
            Some((ControlSignal::constant(-1.0), 1.0)),
        );
        let rep = vper_search(
            &sys,
            &[0.5, 1.0],
            std::slice::from_ref(&steered),
            1e-2,
            TOL_PER,
        )
        .unwrap();
        assert!((rep.value - 0.25).abs() < 1e-12);
        let rep = vper_search(
            &sys,
            &[0.5, -PI],
            std::slice::from_ref(&rotation),
            1e-2,
            TOL_PER,
        )
        .unwrap();
        assert!((rep.value - 1.25).abs() < 1e-7);
        let both = [rotation.clone(), eq.clone()];
        let rep = vper_search(
            &sys,
            &[0.5, 0.0],
            &[
                PeriodicOrbit {
                    reach: Reach::Steer {
                        control: ControlSignal::constant(-1.0),
                        duration: PI,
                    },
                    ..rotation
                },
                both[1].clone(),
            ],
            1e-2,
            TOL_PER,
        )
        .unwrap();
        assert!((rep.value - 0.25).abs() < 1e-12);
        assert!(vper_search(&sys, &[0.5, 1.0], &[], 1e-2, TOL_PER).is_err());
        assert!(matches!(
            vper_search(&sys, &[0.5, 1.0], &[eq], 1e-2, TOL_PER),
            Err(Error::Unreachable(_))
        ));
    }

    #[test]
    fn open_orbit_is_rejected() {
        let sys = builtin_system("rotation-polar").unwrap();
        let half = PeriodicOrbit {
            label: "half".into(),
            period: 1.0,
            control: ControlSignal::constant(1.0),
            start: vec![0.5, 0.0],
            reach: Reach::StartsOnOrbit,
        };
        assert!(matches!(
            periodic_orbit_average(&sys, &half, 1e-2, TOL_PER),
            Err(Error::OrbitNotClosed { .. })
        ));
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = Grid {
            lo: vec![0.0, 0.0, 0.0],
            hi: vec![1.0, 2.0, 3.0],
            nodes: vec![3, 4, 5],
        };
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
            let st = g.stencil(&g.node(i)).unwrap();
            assert_eq!(st.len(), 1);
            assert_eq!(st[0].0, i);
        }
        assert!(g.stencil(&[1.5, 0.0, 0.0]).is_none());
    }
}
