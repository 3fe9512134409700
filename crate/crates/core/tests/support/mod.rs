//! Checks shared by the suites and the acceptance run. Each returns a
//! one-line summary on success and the first failure otherwise.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, TAU};

use occlp::basis::Basis;
use occlp::dynamics::{
    builtin_system, builtin_system_with_controls, integrate, ControlSignal, SystemSpec, Trajectory,
};
use occlp::idlp::{solve_kstar, IdlpDiscretization, KstarResult, Perturbation};
use occlp::lp::{solve_simplex, LpStandardForm, LpStatus, Sense};
use occlp::occupation::{
    cesaro_measure, discounted_measure, integrate_against, w_residual, NORMALIZATION_TOL,
};
use occlp::values::{
    brute_force_value, cesaro_value_dp, dpp_gradient_diagnostic, GridSpec, ValueTable,
    DEFAULT_NODES, TOL_DPP,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn polar() -> SystemSpec {
    builtin_system("rotation-polar").unwrap()
}

pub fn cartesian() -> SystemSpec {
    builtin_system("rotation-cartesian").unwrap()
}

/// `(1-r)² + (2r/T)|θ - sin θ|`.
pub fn polar_value(r: f64, th: f64, horizon: f64) -> f64 {
    (1.0 - r).powi(2) + 2.0 * r / horizon * (th - th.sin()).abs()
}

// ---- LP ----

/// A small LP over `x ≥ 0` whose first row `Σx ≤ cap` keeps it bounded.
#[derive(Debug, Clone)]
pub struct Small {
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub senses: Vec<Sense>,
    pub b: Vec<f64>,
}

impl Small {
    pub fn random(rng: &mut StdRng, integral: bool) -> Small {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=6);
        let mut draw = |lo: f64, hi: f64| {
            let v: f64 = rng.gen_range(lo..hi);
            if integral {
                v.round()
            } else {
                v
            }
        };
        let c = (0..n).map(|_| draw(-5.0, 5.0)).collect();
        let mut a = vec![vec![1.0; n]];
        let mut senses = vec![Sense::Le];
        let mut b = vec![draw(1.0, 10.0)];
        for _ in 1..m {
            a.push((0..n).map(|_| draw(-4.0, 4.0)).collect());
            b.push(draw(-3.0, 6.0));
        }
        for _ in 1..m {
            senses.push(match rng.gen_range(0..5) {
                0 => Sense::Eq,
                1 | 2 => Sense::Ge,
                _ => Sense::Le,
            });
        }
        Small { c, a, senses, b }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn to_lp(&self) -> LpStandardForm {
        let mut lp = LpStandardForm::new();
        for (s, &b) in self.senses.iter().zip(&self.b) {
            lp.add_row(*s, b);
        }
        for j in 0..self.n() {
            let entries: Vec<(usize, f64)> = (0..self.a.len()).map(|i| (i, self.a[i][j])).collect();
            lp.add_column(self.c[j], &entries);
        }
        lp
    }

    pub fn feasible(&self, x: &[f64], tol: f64) -> bool {
        if x.iter().any(|&v| v < -tol) {
            return false;
        }
        self.a
            .iter()
            .zip(&self.senses)
            .zip(&self.b)
            .all(|((row, s), &b)| {
                let ax: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum();
                match s {
                    Sense::Eq => (ax - b).abs() <= tol,
                    Sense::Le => ax <= b + tol,
                    Sense::Ge => ax >= b - tol,
                }
            })
    }

    /// Minimum of `cᵀx` over all basic feasible points, or `None` if there
    /// are none.
    pub fn vertex_oracle(&self) -> Option<f64> {
        let n = self.n();
        let m = self.a.len();
        // constraints 0..m are rows, m..m+n are x_j = 0
        let total = m + n;
        let mut best: Option<f64> = None;
        let mut pick = Vec::with_capacity(n);
        subsets(total, n, 0, &mut pick, &mut |set| {
            if (0..m).any(|i| self.senses[i] == Sense::Eq && !set.contains(&i)) {
                return;
            }
            let mut mat = Vec::with_capacity(n);
            for &k in set {
                if k < m {
                    let mut row = self.a[k].clone();
                    row.push(self.b[k]);
                    mat.push(row);
                } else {
                    let mut row = vec![0.0; n + 1];
                    row[k - m] = 1.0;
                    mat.push(row);
                }
            }
            if let Some(x) = gauss_solve(mat) {
                if self.feasible(&x, 1e-9) {
                    let obj: f64 = self.c.iter().zip(&x).map(|(c, x)| c * x).sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        });
        best
    }
}

fn subsets(
    total: usize,
    k: usize,
    from: usize,
    pick: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in from..total {
        if total - i < k - pick.len() {
            break;
        }
        pick.push(i);
        subsets(total, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Solves a square system given as augmented rows; `None` if singular.
fn gauss_solve(mut m: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

pub fn simplex_vs_vertex_enumeration(cases: usize) -> Check {
    let mut rng = StdRng::seed_from_u64(20240611);
    let (mut optimal, mut infeasible) = (0, 0);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let p = Small::random(&mut rng, case % 2 == 0);
        let sol = solve_simplex(&p.to_lp()).map_err(err)?;
        match p.vertex_oracle() {
            Some(best) => {
                ensure!(
                    sol.status == LpStatus::Optimal,
                    "case {case}: status {:?}",
                    sol.status
                );
                let e = (sol.objective - best).abs() / best.abs().max(1.0);
                ensure!(
                    e <= 1e-9,
                    "case {case}: simplex {} vs oracle {best}",
                    sol.objective
                );
                ensure!(p.feasible(&sol.x, 1e-9), "case {case}: infeasible x");
                worst = worst.max(e);
                optimal += 1;
            }
            None => {
                ensure!(
                    sol.status == LpStatus::Infeasible,
                    "case {case}: status {:?}",
                    sol.status
                );
                infeasible += 1;
            }
        }
    }
    // both outcomes must be exercised
    ensure!(
        optimal > cases / 5 && infeasible > cases / 50,
        "{optimal} optimal / {infeasible} infeasible"
    );
    Ok(format!(
        "{cases} LPs ({optimal} optimal, {infeasible} infeasible), max rel err {worst:.1e}"
    ))
}

// ---- values ----

pub fn polar_dp_vs_enumeration() -> Check {
    const TOL_INTERP: f64 = 5e-2;
    let sys = builtin_system_with_controls("rotation-polar", 3).map_err(err)?;
    let horizon = 2.0;
    let table = cesaro_value_dp(
        &sys,
        horizon,
        0.0,
        &GridSpec::uniform(2, DEFAULT_NODES),
        1e-2,
    )
    .map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for r in [0.25, 0.5, 0.75, 1.0] {
        for th in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let y0 = [r, th];
            let dp = table.value_at(&y0).ok_or("outside grid")?;
            let bf = brute_force_value(&sys, &y0, horizon, 1e-2, 4).map_err(err)?;
            ensure!(
                (dp - bf).abs() <= TOL_INTERP,
                "{y0:?}: dp {dp}, enumeration {bf}"
            );
            // both sit above the true value up to grid error
            let exact = polar_value(r, th, horizon);
            ensure!(
                (dp - exact).abs() <= TOL_INTERP,
                "{y0:?}: dp {dp}, exact {exact}"
            );
            ensure!(bf >= exact - 1e-6, "{y0:?}: enumeration {bf} below {exact}");
            worst = worst.max((dp - bf).abs());
            count += 1;
        }
    }
    Ok(format!(
        "{count} instances, max |dp - enumeration| {worst:.2e}"
    ))
}

pub fn polar_tables() -> Vec<ValueTable> {
    let sys = polar();
    [5.0, 10.0, 20.0]
        .iter()
        .map(|&t| {
            cesaro_value_dp(&sys, t, 0.0, &GridSpec::uniform(2, DEFAULT_NODES), 1e-2).unwrap()
        })
        .collect()
}

pub fn dpp_on_polar_tables(tables: &[ValueTable]) -> Check {
    let sys = polar();
    let mut lowest = f64::INFINITY;
    for table in tables {
        let rep = dpp_gradient_diagnostic(table, &sys, TOL_DPP).map_err(err)?;
        ensure!(rep.pass, "{:?}: {rep:?}", table.kind);
        ensure!(
            rep.nodes_checked > 1000,
            "only {} nodes checked",
            rep.nodes_checked
        );
        lowest = lowest.min(rep.min_value);
    }
    Ok(format!(
        "{} tables, min ∇V·f + 2M_k/T = {lowest:.3e}",
        tables.len()
    ))
}

pub fn relaxed_below_constrained() -> Check {
    let sys = polar();
    let (lo, hi) = sys.constraint.bounding_box(0.1);
    // same nodes for both; outside Y the δ = 0 table is inactive
    let grid = GridSpec::uniform(2, 45).with_box(lo, hi);
    let tight = cesaro_value_dp(&sys, 5.0, 0.0, &grid, 1e-2).map_err(err)?;
    let loose = cesaro_value_dp(&sys, 5.0, 0.1, &grid, 1e-2).map_err(err)?;
    let mut compared = 0;
    for i in 0..tight.values.len() {
        if tight.is_active(i) {
            ensure!(
                loose.is_active(i),
                "node {:?} inactive when relaxed",
                tight.grid.node(i)
            );
            ensure!(
                loose.values[i] <= tight.values[i] + 1e-12,
                "node {:?}",
                tight.grid.node(i)
            );
            compared += 1;
        }
    }
    ensure!(compared > 1000, "only {compared} nodes compared");
    Ok(format!("{compared} nodes, V_T^0.1 ≤ V_T"))
}

// ---- dynamics ----

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn rk4_vs_fine_step() -> Check {
    let sys = cartesian();
    let u = ControlSignal::constant(1.0);
    let coarse = integrate(&sys, &[1.0, 0.0], &u, FRAC_PI_2, 1e-2, 0.0).map_err(err)?;
    let fine = integrate(&sys, &[1.0, 0.0], &u, FRAC_PI_2, 1e-4, 0.0).map_err(err)?;
    let d_ref = dist(coarse.final_state(), fine.final_state());
    let d_exact = dist(coarse.final_state(), &[0.0, -1.0]);
    ensure!(
        d_ref <= 1e-8 && d_exact <= 1e-8,
        "reference {d_ref:.2e}, exact {d_exact:.2e}"
    );
    Ok(format!(
        "quarter turn: {d_ref:.1e} from h/100, {d_exact:.1e} from exact"
    ))
}

pub fn random_signal(rng: &mut StdRng, controls: &[f64], horizon: f64) -> ControlSignal {
    let mut durations = Vec::new();
    let mut values = Vec::new();
    let mut t = 0.0;
    while t < horizon {
        let d = rng.gen_range(0.2..horizon.max(0.4) / 2.0);
        durations.push(d);
        values.push(controls[rng.gen_range(0..controls.len())]);
        t += d;
    }
    ControlSignal::from_durations(&durations, &values).unwrap()
}

/// A trajectory of the Cartesian system from a random point of the disk,
/// with the number of control switches.
pub fn random_disk_trajectory(rng: &mut StdRng, horizon: f64, h: f64) -> (Trajectory, usize) {
    let sys = cartesian();
    let rho: f64 = rng.gen_range(0.0..0.95);
    let a: f64 = rng.gen_range(0.0..TAU);
    let sig = random_signal(rng, &sys.controls, horizon);
    let switches = sig.breakpoints.len() - 1;
    (
        integrate(&sys, &[rho * a.cos(), rho * a.sin()], &sig, horizon, h, 0.0).unwrap(),
        switches,
    )
}

// ---- measures ----

pub fn normalization(samples: usize) -> Check {
    let mut rng = StdRng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let lambda = rng.gen_range(0.5..4.0);
        let (tr, _) = random_disk_trajectory(&mut rng, 10.0 / lambda, 1e-2);
        for m in [
            cesaro_measure(&tr).map_err(err)?,
            discounted_measure(&tr, lambda, 10.0 / lambda).map_err(err)?,
        ] {
            ensure!(m.atoms.iter().all(|a| a.w >= 0.0), "negative weight");
            worst = worst.max((m.mass() - 1.0).abs());
        }
    }
    ensure!(worst <= NORMALIZATION_TOL, "mass off by {worst:.2e}");
    Ok(format!(
        "{} measures, max |mass - 1| {worst:.1e}",
        2 * samples
    ))
}

pub fn w_residual_bound(count: usize) -> Check {
    let sys = cartesian();
    let basis = Basis::monomials(vec![-1.0, -1.0], vec![1.0, 1.0], 4);
    // rescaled monomials on their own box have sup norm 1
    let sup_phi = 1.0;
    let h = 1e-2;
    let mut rng = StdRng::seed_from_u64(3);
    let mut measured_c: f64 = 0.0;
    for _ in 0..count {
        let horizon = rng.gen_range(2.0..20.0);
        let (tr, switches) = random_disk_trajectory(&mut rng, horizon, h);
        let m = cesaro_measure(&tr).map_err(err)?;
        let res = w_residual(&m, &basis, &sys).map_err(err)?;
        let v0 = basis.values(&tr.y0);
        let v1 = basis.values(tr.final_state());
        // |∇φ·f| along the path, for the quadrature bound
        let mut g: f64 = 0.0;
        for (y, &u) in tr.states.iter().zip(&tr.controls) {
            let mut f = [0.0; 2];
            sys.f(y, u, &mut f).map_err(err)?;
            g = basis
                .directional(y, &f)
                .iter()
                .fold(g, |a, d| a.max(d.abs()));
        }
        for b in 0..basis.len() {
            let identity = (v1[b] - v0[b]) / horizon;
            let quad = (res[b] - identity).abs();
            // each switch costs at most h·|jump|/T; smooth stretches are O(h²)
            let c_bound = (2.0 * g * (switches as f64 + 1.0) + 50.0 * h) / horizon;
            ensure!(
                quad <= c_bound * h,
                "quadrature error {quad} above {}",
                c_bound * h
            );
            ensure!(
                res[b].abs() <= 2.0 * sup_phi / horizon + c_bound * h,
                "residual {} too large",
                res[b]
            );
            measured_c = measured_c.max(quad / h);
        }
    }
    Ok(format!(
        "{count} trajectories, measured C = {measured_c:.4}"
    ))
}

// ---- LP relaxation ----

pub const Y0S: [[f64; 2]; 4] = [[0.5, 1.0], [0.25, 2.0], [0.75, -1.5], [1.0, 0.0]];

pub fn polar_solves() -> Vec<(IdlpDiscretization, KstarResult)> {
    let sys = polar();
    let mut out = Vec::new();
    for y0 in Y0S {
        let base = IdlpDiscretization::new(&sys, &y0, DEFAULT_NODES, 4).unwrap();
        for disc in [
            base.clone().unperturbed(),
            base.perturbed(Perturbation::default()),
        ] {
            let r = solve_kstar(&sys, &disc).unwrap();
            out.push((disc, r));
        }
    }
    out
}

/// `∫V_T dγ ≤ ∫k dγ` on every optimal `γ`, up to the interpolation error of
/// the grid value and the band relaxation of `W`.
pub const TOL_L33: f64 = 5e-2;

pub fn value_below_cost_on_optimal_gammas(tables: &[ValueTable]) -> Check {
    let sys = polar();
    let mut worst = f64::NEG_INFINITY;
    let solves = polar_solves();
    for (disc, r) in &solves {
        let cost = integrate_against(&r.gamma, |y, u| sys.k(y, u).unwrap());
        for table in tables {
            let v = integrate_against(&r.gamma, |y, _| table.value_at(y).unwrap());
            ensure!(v <= cost + TOL_L33, "y0 {:?}: {v} > {cost}", disc.y0);
            worst = worst.max(v - cost);
        }
        let res = w_residual(&r.gamma, &disc.basis, &sys).map_err(err)?;
        for (b, (x, e)) in res.iter().zip(disc.bands()).enumerate() {
            ensure!(
                x.abs() <= e + 1e-9,
                "y0 {:?} basis {b}: residual {x} band {e}",
                disc.y0
            );
        }
    }
    Ok(format!(
        "{} optimal γ, max ∫V_T dγ - ∫k dγ = {worst:.2e}",
        solves.len()
    ))
}

pub fn kstar_monotone() -> Check {
    let sys = polar();
    let base = IdlpDiscretization::new(&sys, &[0.5, 1.0], 21, 4).map_err(err)?;
    let plain = solve_kstar(&sys, &base.clone().unperturbed())
        .map_err(err)?
        .kstar;
    let eps = [0.0, 1e-3, 1e-2, 1e-1];
    let horizons = [1e4, 1e3, 1e2];
    let mut k = vec![vec![0.0; horizons.len()]; eps.len()];
    for (a, &e) in eps.iter().enumerate() {
        for (b, &t) in horizons.iter().enumerate() {
            let disc = base.clone().perturbed(Perturbation {
                epsilon: e,
                horizon: t,
            });
            let r = solve_kstar(&sys, &disc).map_err(err)?;
            ensure!(r.mu <= r.kstar + 1e-9, "μ {} above k* {}", r.mu, r.kstar);
            k[a][b] = r.kstar;
        }
    }
    for a in 0..eps.len() {
        for b in 0..horizons.len() {
            ensure!(k[a][b] >= plain - 1e-9, "{k:?} below unperturbed {plain}");
            ensure!(
                a == 0 || k[a][b] >= k[a - 1][b] - 1e-9,
                "not monotone in ε: {k:?}"
            );
            ensure!(
                b == 0 || k[a][b] >= k[a][b - 1] - 1e-9,
                "not monotone in 1/T: {k:?}"
            );
        }
    }
    Ok(format!(
        "{}×{} grid, k* from {plain:.4} to {:.4}",
        eps.len(),
        horizons.len(),
        k[3][2]
    ))
}
