//! Finite version of the occupational-measure LP
//!
//! ```text
//! k* = min Σ γ_ij k(y_i,u_j) [+ κ Σ ξ_ij]
//!      Σ γ_ij = 1
//!      |Σ γ_ij ∇φ_b(y_i)·f(y_i,u_j)|                                  ≤ e_b
//!      |Σ γ_ij (φ_b(y0) - φ_b(y_i)) + Σ ξ_ij ∇φ_b(y_i)·f(y_i,u_j)|    ≤ e_b
//!      Σ ξ_ij ≤ xi_cap,   γ, ξ ≥ 0
//! ```
//!
//! over a state grid `G_Y ⊂ Y`, a control grid and a basis `φ_b`, with
//! `e_b = ε_c · max_{G_Y} |φ_b|` and `κ = 2M_k/T + M_k ε` in perturbed mode.

use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::certificate::{Certificate, Field, Provenance};
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::lp::{solve_simplex, LpSolution, LpStandardForm, LpStatus, Sense};
use crate::occupation::{Atom, OccMeasure};
use crate::values::{Grid, GridSpec};

pub const DEFAULT_EPS_C: f64 = 1e-3;
pub const DEFAULT_XI_CAP: f64 = 1e3;
pub const DEFAULT_DEGREE: u32 = 4;

/// `(ε, T)` of the perturbed problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub epsilon: f64,
    pub horizon: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            epsilon: 1e-2,
            horizon: 1e3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdlpDiscretization {
    pub grid: Grid,
    /// Grid nodes inside `Y`.
    pub nodes: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub basis: Basis,
    pub y0: Vec<f64>,
    pub eps_c: f64,
    pub xi_cap: f64,
    pub perturbation: Option<Perturbation>,
}

impl IdlpDiscretization {
    /// Defaults: rescaled monomials of the given degree over the bounding box
    /// of `Y`, augmented with `sin`, `cos`, `x sin x` on periodic axes; the
    /// system's control grid; `ε_c = 1e-3`; `xi_cap = 1e3`; perturbed with
    /// `(ε, T) = (1e-2, 1e3)`.
    pub fn new(
        system: &SystemSpec,
        y0: &[f64],
        nodes_per_axis: usize,
        degree: u32,
    ) -> Result<Self> {
        let (lo, hi) = system.constraint.bounding_box(0.0);
        let basis = Basis::monomials(lo, hi, degree).with_periodic(&system.periodic_axes);
        Self::with_basis(
            system,
            y0,
            &GridSpec::uniform(system.dim(), nodes_per_axis),
            basis,
        )
    }

    pub fn with_basis(
        system: &SystemSpec,
        y0: &[f64],
        grid: &GridSpec,
        basis: Basis,
    ) -> Result<Self> {
        let grid = grid.resolve(system, 0.0)?;
        let nodes: Vec<Vec<f64>> = (0..grid.len())
            .map(|i| grid.node(i))
            .filter(|y| system.distance(y) <= system.tol_viab)
            .collect();
        let disc = IdlpDiscretization {
            grid,
            nodes,
            controls: system.controls.clone(),
            basis,
            y0: y0.to_vec(),
            eps_c: DEFAULT_EPS_C,
            xi_cap: DEFAULT_XI_CAP,
            perturbation: Some(Perturbation::default()),
        };
        disc.validate(system)?;
        Ok(disc)
    }

    pub fn unperturbed(mut self) -> Self {
        self.perturbation = None;
        self
    }

    pub fn perturbed(mut self, p: Perturbation) -> Self {
        self.perturbation = Some(p);
        self
    }

    pub fn validate(&self, system: &SystemSpec) -> Result<()> {
        let n = system.dim();
        if self.y0.len() != n || self.basis.dim() != n && !self.basis.is_empty() {
            return Err(Error::InvalidArgument(
                "dimension mismatch in discretization".into(),
            ));
        }
        if self.nodes.is_empty() || self.controls.is_empty() {
            return Err(Error::InvalidArgument("empty state or control grid".into()));
        }
        if !(self.xi_cap > 0.0) || !(self.eps_c >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need xi_cap > 0 and eps_c >= 0, got {} and {}",
                self.xi_cap, self.eps_c
            )));
        }
        if let Some(p) = self.perturbation {
            if !(p.epsilon >= 0.0) || !(p.horizon > 0.0) {
                return Err(Error::InvalidArgument(format!("bad perturbation {p:?}")));
            }
        }
        let cell: f64 = (0..n)
            .map(|a| self.grid.spacing(a).powi(2))
            .sum::<f64>()
            .sqrt();
        let near = self
            .nodes
            .iter()
            .map(|y| {
                y.iter()
                    .zip(&self.y0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if near > cell + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "y0 {:?} is {near:.3e} from the nearest grid node",
                self.y0
            )));
        }
        Ok(())
    }

    /// Cost per unit ξ mass: `2M_k/T + M_k ε`, or 0 without perturbation.
    pub fn xi_penalty(&self, system: &SystemSpec) -> f64 {
        self.perturbation
            .map_or(0.0, |p| 2.0 * system.mk / p.horizon + system.mk * p.epsilon)
    }

    /// Band half-widths `e_b = ε_c · max_{G_Y} |φ_b|`.
    pub fn bands(&self) -> Vec<f64> {
        let mut sup = vec![0.0f64; self.basis.len()];
        for y in &self.nodes {
            for (s, v) in sup.iter_mut().zip(self.basis.values(y)) {
                *s = s.max(v.abs());
            }
        }
        sup.into_iter().map(|s| self.eps_c * s.max(1e-12)).collect()
    }
}

/// An assembled primal LP and where everything lives in it.
#[derive(Debug, Clone)]
pub struct PrimalLp {
    pub lp: LpStandardForm,
    pub norm_row: usize,
    /// `(≤ row, ≥ row)` per basis function.
    pub w_rows: Vec<(usize, usize)>,
    pub omega_rows: Vec<(usize, usize)>,
    pub cap_row: Option<usize>,
    /// Each row was divided by this factor.
    pub row_scale: Vec<f64>,
    /// `(node, control index, column)`.
    pub gamma_cols: Vec<(usize, usize, usize)>,
    pub xi_cols: Vec<(usize, usize, usize)>,
}

impl PrimalLp {
    /// Dual of row `i` of the unscaled problem.
    pub fn dual(&self, sol: &LpSolution, i: usize) -> f64 {
        sol.duals[i] / self.row_scale[i]
    }
}

struct Column {
    node: usize,
    control: usize,
    cost: f64,
    w: Vec<f64>,
    omega: Vec<f64>,
}

fn assemble(
    disc: &IdlpDiscretization,
    bands: &[f64],
    gamma: Vec<Column>,
    xi: Vec<Column>,
    with_omega: bool,
    xi_cost: f64,
) -> PrimalLp {
    let nb = disc.basis.len();
    // row scales from the largest coefficient in each constraint
    let mut w_scale = vec![0.0f64; nb];
    let mut o_scale = vec![0.0f64; nb];
    for c in &gamma {
        for b in 0..nb {
            w_scale[b] = w_scale[b].max(c.w[b].abs());
            if with_omega {
                o_scale[b] = o_scale[b].max(c.omega[b].abs());
            }
        }
    }
    for c in &xi {
        for b in 0..nb {
            o_scale[b] = o_scale[b].max(c.w[b].abs());
        }
    }
    let fix = |s: f64| if s > 1e-300 { s } else { 1.0 };
    let mut lp = LpStandardForm::new();
    let mut row_scale = Vec::new();
    let norm_row = lp.add_row(Sense::Eq, 1.0);
    row_scale.push(1.0);
    let mut w_rows = Vec::with_capacity(nb);
    for b in 0..nb {
        let s = fix(w_scale[b]);
        let le = lp.add_row(Sense::Le, bands[b] / s);
        let ge = lp.add_row(Sense::Ge, -bands[b] / s);
        row_scale.extend([s, s]);
        w_rows.push((le, ge));
    }
    let mut omega_rows = Vec::new();
    let mut cap_row = None;
    if with_omega {
        for b in 0..nb {
            let s = fix(o_scale[b]);
            let le = lp.add_row(Sense::Le, bands[b] / s);
            let ge = lp.add_row(Sense::Ge, -bands[b] / s);
            row_scale.extend([s, s]);
            omega_rows.push((le, ge));
        }
        cap_row = Some(lp.add_row(Sense::Le, disc.xi_cap));
        row_scale.push(1.0);
    }
    let mut gamma_cols = Vec::with_capacity(gamma.len());
    let mut entries = Vec::new();
    for c in &gamma {
        entries.clear();
        entries.push((norm_row, 1.0));
        for b in 0..nb {
            let (le, ge) = w_rows[b];
            entries.push((le, c.w[b] / row_scale[le]));
            entries.push((ge, c.w[b] / row_scale[ge]));
            if with_omega {
                let (le, ge) = omega_rows[b];
                entries.push((le, c.omega[b] / row_scale[le]));
                entries.push((ge, c.omega[b] / row_scale[ge]));
            }
        }
        gamma_cols.push((c.node, c.control, lp.add_column(c.cost, &entries)));
    }
    let mut xi_cols = Vec::with_capacity(xi.len());
    if let Some(cap) = cap_row {
        for c in &xi {
            entries.clear();
            entries.push((cap, 1.0));
            for b in 0..nb {
                let (le, ge) = omega_rows[b];
                entries.push((le, c.w[b] / row_scale[le]));
                entries.push((ge, c.w[b] / row_scale[ge]));
            }
            xi_cols.push((c.node, c.control, lp.add_column(xi_cost, &entries)));
        }
    }
    PrimalLp {
        lp,
        norm_row,
        w_rows,
        omega_rows,
        cap_row,
        row_scale,
        gamma_cols,
        xi_cols,
    }
}

fn columns(
    system: &SystemSpec,
    disc: &IdlpDiscretization,
    mut cost: impl FnMut(&[f64], f64) -> Result<f64>,
) -> Result<(Vec<Column>, Vec<Column>)> {
    let phi0 = disc.basis.values(&disc.y0);
    let mut gamma = Vec::new();
    let mut xi = Vec::new();
    let mut fy = vec![0.0; system.dim()];
    for (i, y) in disc.nodes.iter().enumerate() {
        let phi = disc.basis.values(y);
        let omega: Vec<f64> = phi0.iter().zip(&phi).map(|(a, b)| a - b).collect();
        let grads = disc.basis.gradients(y);
        for (j, &u) in disc.controls.iter().enumerate() {
            system.f(y, u, &mut fy)?;
            let w: Vec<f64> = grads
                .iter()
                .map(|g| g.iter().zip(&fy).map(|(a, b)| a * b).sum())
                .collect();
            if w.iter().any(|v| *v != 0.0) {
                xi.push(Column {
                    node: i,
                    control: j,
                    cost: 0.0,
                    w: w.clone(),
                    omega: Vec::new(),
                });
            }
            gamma.push(Column {
                node: i,
                control: j,
                cost: cost(y, u)?,
                w,
                omega: omega.clone(),
            });
        }
    }
    Ok((gamma, xi))
}

/// Assembles the primal LP. ξ columns whose gradient row is identically
/// zero only consume cap and are left out.
pub fn build_primal(system: &SystemSpec, disc: &IdlpDiscretization) -> Result<PrimalLp> {
    disc.validate(system)?;
    let (gamma, xi) = columns(system, disc, |y, u| system.k(y, u))?;
    Ok(assemble(
        disc,
        &disc.bands(),
        gamma,
        xi,
        true,
        disc.xi_penalty(system),
    ))
}

#[derive(Debug, Clone)]
pub struct KstarResult {
    pub kstar: f64,
    /// Full dual objective `bᵀy`.
    pub mu: f64,
    /// Dual of the normalization row alone.
    pub mu_normalization: f64,
    pub gap: f64,
    pub gamma: OccMeasure,
    pub xi: OccMeasure,
    pub xi_mass: f64,
    pub solution: LpSolution,
    pub primal: PrimalLp,
}

fn not_optimal(sol: &LpSolution) -> Error {
    Error::LpNotOptimal {
        status: sol.status.to_string(),
        hint: match sol.status {
            LpStatus::Infeasible => "raise eps_c or refine the state/control grids".into(),
            _ => "check xi_cap and the basis".into(),
        },
    }
}

pub fn solve_kstar(system: &SystemSpec, disc: &IdlpDiscretization) -> Result<KstarResult> {
    let primal = build_primal(system, disc)?;
    let solution = solve_simplex(&primal.lp)?;
    if solution.status != LpStatus::Optimal {
        return Err(not_optimal(&solution));
    }
    let atoms = |cols: &[(usize, usize, usize)]| -> Vec<Atom> {
        cols.iter()
            .filter(|&&(_, _, c)| solution.x[c] > 0.0)
            .map(|&(i, j, c)| Atom {
                y: disc.nodes[i].clone(),
                u: disc.controls[j],
                w: solution.x[c],
            })
            .collect()
    };
    let gamma = OccMeasure::probability(atoms(&primal.gamma_cols))?;
    let xi = OccMeasure::nonnegative(atoms(&primal.xi_cols))?;
    let xi_mass = xi.mass();
    let mu = solution.dual_objective(&primal.lp);
    let mu_normalization = primal.dual(&solution, primal.norm_row);
    Ok(KstarResult {
        kstar: solution.objective,
        mu,
        mu_normalization,
        gap: (solution.objective - mu).abs(),
        gamma,
        xi,
        xi_mass,
        solution,
        primal,
    })
}

fn signed_coeffs(primal: &PrimalLp, sol: &LpSolution, rows: &[(usize, usize)]) -> Vec<f64> {
    rows.iter()
        .map(|&(le, ge)| -(primal.dual(sol, le) + primal.dual(sol, ge)))
        .collect()
}

/// Reads `(μ, ψ, η)` off an optimal solve: with `a_b`, `c_b` the combined
/// duals of the W and Ω band pairs, `η = -Σ a_b φ_b`, `ψ = -Σ c_b φ_b`, and
/// `μ` the full dual objective.
pub fn extract_certificate(
    result: &KstarResult,
    disc: &IdlpDiscretization,
    system: &SystemSpec,
) -> Result<Certificate> {
    let sol = &result.solution;
    if sol.status != LpStatus::Optimal {
        return Err(not_optimal(sol));
    }
    let p = &result.primal;
    let eta = signed_coeffs(p, sol, &p.w_rows);
    let psi = signed_coeffs(p, sol, &p.omega_rows);
    let cap = p.cap_row.map_or(0.0, |c| p.dual(sol, c));
    Ok(Certificate {
        mu: result.mu,
        y0: disc.y0.clone(),
        psi: Field::linear(disc.basis.clone(), psi)?,
        eta: Field::linear(disc.basis.clone(), eta)?,
        psi_slack: disc.xi_penalty(system) - cap.min(0.0),
        provenance: Provenance::ExtractedFromLp,
    })
}

/// One grid pair `(y_i, u_j)` with its cost and `∇φ_b(y_i)·f(y_i,u_j)`.
struct Pair {
    node: usize,
    k: f64,
    g: Vec<f64>,
}

fn grid_pairs(system: &SystemSpec, disc: &IdlpDiscretization) -> Result<Vec<Pair>> {
    let mut out = Vec::with_capacity(disc.nodes.len() * disc.controls.len());
    let mut fy = vec![0.0; system.dim()];
    for (node, y) in disc.nodes.iter().enumerate() {
        let grads = disc.basis.gradients(y);
        for &u in &disc.controls {
            system.f(y, u, &mut fy)?;
            let g = grads
                .iter()
                .map(|gr| gr.iter().zip(&fy).map(|(a, b)| a * b).sum())
                .collect();
            out.push(Pair {
                node,
                k: system.k(y, u)?,
                g,
            });
        }
    }
    Ok(out)
}

/// Row-scaled LP whose row duals are the unknown coefficients of a dual
/// problem `max rhsᵀc` with every coefficient boxed by `bound`.
struct BoxedDual {
    rhs: Vec<f64>,
    cols: Vec<(f64, Vec<(usize, f64)>)>,
}

impl BoxedDual {
    fn solve(self, bound: f64) -> Result<Vec<f64>> {
        let n = self.rhs.len();
        let mut scale = vec![0.0f64; n];
        for (_, col) in &self.cols {
            for &(r, v) in col {
                scale[r] = scale[r].max(v.abs());
            }
        }
        let scale: Vec<f64> = scale
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        let mut lp = LpStandardForm::new();
        for (r, b) in self.rhs.iter().enumerate() {
            lp.add_row(Sense::Eq, b / scale[r]);
        }
        let mut entries = Vec::new();
        for (cost, col) in &self.cols {
            entries.clear();
            entries.extend(col.iter().map(|&(r, v)| (r, v / scale[r])));
            lp.add_column(*cost, &entries);
        }
        for r in 0..n {
            lp.add_column(bound, &[(r, 1.0 / scale[r])]);
            lp.add_column(bound, &[(r, -1.0 / scale[r])]);
        }
        let sol = solve_simplex(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(not_optimal(&sol));
        }
        Ok((0..n).map(|r| sol.duals[r] / scale[r]).collect())
    }
}

/// Replaces `η` by the largest subsolution on the grid: maximizes
/// `Σ_i η(y_i)` subject to the value inequality at every grid pair, with
/// `μ`, `ψ` held fixed and coefficients boxed by `coeff_bound`.
///
/// Duals of the k* solve leave `η` free wherever the inequality is slack and
/// the band penalty pulls it toward zero, so its feedback is mostly ties.
/// The largest subsolution is tight along optimal motions instead.
pub fn refine_eta(
    cert: &Certificate,
    system: &SystemSpec,
    disc: &IdlpDiscretization,
    coeff_bound: f64,
) -> Result<Certificate> {
    let nb = disc.basis.len();
    let psi0 = cert.psi.value(&cert.y0)?;
    let base = disc
        .nodes
        .iter()
        .map(|y| Ok(psi0 - cert.psi.value(y)? - cert.mu))
        .collect::<Result<Vec<f64>>>()?;
    let mut rhs = vec![0.0; nb];
    for y in &disc.nodes {
        for (t, v) in rhs.iter_mut().zip(disc.basis.values(y)) {
            *t += v;
        }
    }
    let cols = grid_pairs(system, disc)?
        .into_iter()
        .filter(|p| p.g.iter().any(|v| *v != 0.0))
        // clamped: a margin of -1e-12 would exclude η = 0
        .map(|p| {
            (
                (p.k + base[p.node]).max(0.0),
                (0..nb).map(|b| (b, -p.g[b])).collect(),
            )
        })
        .collect();
    let coeffs = BoxedDual { rhs, cols }.solve(coeff_bound)?;
    Ok(Certificate {
        eta: Field::linear(disc.basis.clone(), coeffs)?,
        ..cert.clone()
    })
}

/// Certificate valid for every start at once: the largest `g = c + Σ c_b φ_b`
/// on the grid with `g ≤ k + ∇h·f` and `∇g·f ≥ 0`, then `ψ = g - c`,
/// `μ = g(y0)` and `η` from [`refine_eta`]. On a good discretization `g`
/// approximates the value function on all of `Y`, so the inequality is
/// tight along optimal motions from every start and the feedback of `η`
/// is usable away from `y0`.
pub fn global_certificate(
    system: &SystemSpec,
    disc: &IdlpDiscretization,
    coeff_bound: f64,
) -> Result<Certificate> {
    let nb = disc.basis.len();
    // rows: 0..nb for g's basis part, nb for its constant, nb+1.. for h
    let cst = nb;
    let mut rhs = vec![0.0; 2 * nb + 1];
    let values: Vec<Vec<f64>> = disc.nodes.iter().map(|y| disc.basis.values(y)).collect();
    for v in &values {
        for b in 0..nb {
            rhs[b] += v[b];
        }
    }
    rhs[cst] = disc.nodes.len() as f64;
    let mut cols = Vec::new();
    for p in grid_pairs(system, disc)? {
        let mut col: Vec<(usize, f64)> = (0..nb).map(|b| (b, values[p.node][b])).collect();
        col.push((cst, 1.0));
        col.extend((0..nb).map(|b| (cst + 1 + b, -p.g[b])));
        cols.push((p.k, col));
        if p.g.iter().any(|v| *v != 0.0) {
            cols.push((0.0, (0..nb).map(|b| (b, -p.g[b])).collect()));
        }
    }
    let c = BoxedDual { rhs, cols }.solve(coeff_bound)?;
    let psi = Field::linear(disc.basis.clone(), c[..nb].to_vec())?;
    let mu = c[cst] + psi.value(&disc.y0)?;
    let cert = Certificate {
        mu,
        y0: disc.y0.clone(),
        psi,
        eta: Field::linear(disc.basis.clone(), c[cst + 1..].to_vec())?,
        psi_slack: 0.0,
        provenance: Provenance::ExtractedFromLp,
    };
    refine_eta(&cert, system, disc, coeff_bound)
}

#[derive(Debug, Clone)]
pub struct AuxResult {
    /// `min_{γ ∈ W_h} Σ γ (k - ψ)`.
    pub value: f64,
    pub eta: Field,
    pub gamma: OccMeasure,
    pub solution: LpSolution,
}

/// Minimizes `∫ (k - ψ) dγ` over the discretized `W` and returns the value
/// with `η` read off the W-row duals.
pub fn aux_w_lp<P>(system: &SystemSpec, disc: &IdlpDiscretization, mut psi: P) -> Result<AuxResult>
where
    P: FnMut(&[f64]) -> Result<f64>,
{
    disc.validate(system)?;
    let (gamma, _) = columns(system, disc, |y, u| Ok(system.k(y, u)? - psi(y)?))?;
    let primal = assemble(disc, &disc.bands(), gamma, Vec::new(), false, 0.0);
    let solution = solve_simplex(&primal.lp)?;
    if solution.status != LpStatus::Optimal {
        return Err(not_optimal(&solution));
    }
    let atoms = primal
        .gamma_cols
        .iter()
        .filter(|&&(_, _, c)| solution.x[c] > 0.0)
        .map(|&(i, j, c)| Atom {
            y: disc.nodes[i].clone(),
            u: disc.controls[j],
            w: solution.x[c],
        })
        .collect();
    let eta = signed_coeffs(&primal, &solution, &primal.w_rows);
    Ok(AuxResult {
        value: solution.objective,
        eta: Field::linear(disc.basis.clone(), eta)?,
        gamma: OccMeasure::probability(atoms)?,
        solution,
    })
}
