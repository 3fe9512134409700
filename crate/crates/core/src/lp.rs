//! Two-phase revised simplex for `min cᵀx` subject to row constraints with
//! senses `=`, `≤`, `≥` and per-variable bounds.
//!
//! Columns are stored compressed; the basis inverse is kept dense and
//! updated in product form, with an LU refactorization every
//! `refactor_every` pivots. Pricing is Dantzig's rule until `bland_after`
//! consecutive degenerate pivots, then Bland's rule until progress resumes.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Eq => "=",
            Sense::Le => "<=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub sense: Sense,
    pub rhs: f64,
}

/// A linear program in column storage. Variables default to `[0, ∞)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LpStandardForm {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    /// `columns[j]` lists `(row, coefficient)` pairs.
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl LpStandardForm {
    pub fn new() -> LpStandardForm {
        LpStandardForm::default()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.cost.len()
    }

    pub fn add_row(&mut self, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { sense, rhs });
        self.rows.len() - 1
    }

    /// Adds a column with bounds `[0, ∞)`; zero coefficients are dropped.
    pub fn add_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        self.cost.push(cost);
        self.lower.push(0.0);
        self.upper.push(f64::INFINITY);
        self.columns
            .push(entries.iter().copied().filter(|&(_, v)| v != 0.0).collect());
        self.cost.len() - 1
    }

    pub fn set_bounds(&mut self, col: usize, lower: f64, upper: f64) {
        self.lower[col] = lower;
        self.upper[col] = upper;
    }

    /// Dense copy of the constraint matrix, for small problems and tests.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.num_cols()]; self.num_rows()];
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                a[i][j] += v;
            }
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_cols();
        let m = self.num_rows();
        if self.lower.len() != n || self.upper.len() != n || self.columns.len() != n {
            return Err(Error::InvalidArgument("inconsistent column counts".into()));
        }
        for (j, col) in self.columns.iter().enumerate() {
            if !self.cost[j].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "cost of column {j} is not finite"
                )));
            }
            if self.lower[j].is_nan()
                || self.upper[j].is_nan()
                || self.lower[j] == f64::INFINITY
                || self.upper[j] == f64::NEG_INFINITY
                || self.lower[j] > self.upper[j]
            {
                return Err(Error::InvalidArgument(format!(
                    "bad bounds [{}, {}] on column {j}",
                    self.lower[j], self.upper[j]
                )));
            }
            for &(i, v) in col {
                if i >= m || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "bad entry ({i}, {v}) in column {j}"
                    )));
                }
            }
        }
        if let Some(i) = self.rows.iter().position(|r| !r.rhs.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rhs of row {i} is not finite"
            )));
        }
        Ok(())
    }

    /// Row activities `Ax`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; self.num_rows()];
        for (col, &xj) in self.columns.iter().zip(x) {
            for &(i, v) in col {
                ax[i] += v * xj;
            }
        }
        ax
    }

    /// Largest violation of rows or bounds by `x`.
    pub fn primal_infeasibility(&self, x: &[f64]) -> f64 {
        let ax = self.activities(x);
        let rows = self.rows.iter().zip(&ax).map(|(r, &a)| match r.sense {
            Sense::Eq => (a - r.rhs).abs(),
            Sense::Le => (a - r.rhs).max(0.0),
            Sense::Ge => (r.rhs - a).max(0.0),
        });
        let bounds = x
            .iter()
            .enumerate()
            .map(|(j, &v)| (self.lower[j] - v).max(v - self.upper[j]).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Plain-text dump:
    ///
    /// ```text
    /// LP <rows> <cols>
    /// ROW <i> <sense> <rhs>          one per row
    /// COL <j> <cost> <lower> <upper> one per column
    /// A <i> <j> <value>              one per nonzero
    /// END
    /// ```
    ///
    /// Numbers use the shortest round-trip decimal form; infinite bounds are
    /// written `inf` / `-inf`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "LP {} {}", self.num_rows(), self.num_cols());
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "ROW {i} {} {:?}", r.sense.symbol(), r.rhs);
        }
        for j in 0..self.num_cols() {
            let _ = writeln!(
                s,
                "COL {j} {:?} {:?} {:?}",
                self.cost[j], self.lower[j], self.upper[j]
            );
        }
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                let _ = writeln!(s, "A {i} {j} {v:?}");
            }
        }
        s.push_str("END\n");
        s
    }

    pub fn from_text(text: &str) -> Result<LpStandardForm> {
        let bad = |line: usize, msg: &str| {
            Error::InvalidArgument(format!("LP dump line {}: {msg}", line + 1))
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (ln, header) = lines.next().ok_or_else(|| bad(0, "empty input"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "LP" {
            return Err(bad(ln, "expected `LP <rows> <cols>`"));
        }
        let m: usize = h[1].parse().map_err(|_| bad(ln, "row count"))?;
        let n: usize = h[2].parse().map_err(|_| bad(ln, "column count"))?;
        let mut lp = LpStandardForm {
            cost: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            rows: vec![
                Row {
                    sense: Sense::Eq,
                    rhs: 0.0
                };
                m
            ],
            columns: vec![Vec::new(); n],
        };
        let num = |ln: usize, s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(ln, &format!("bad number `{s}`")))
        };
        let idx = |ln: usize, s: &str, lim: usize| {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v < lim)
                .ok_or_else(|| bad(ln, &format!("bad index `{s}`")))
        };
        let mut ended = false;
        for (ln, line) in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.as_slice() {
                ["ROW", i, sense, rhs] => {
                    let sense = match *sense {
                        "=" => Sense::Eq,
                        "<=" => Sense::Le,
                        ">=" => Sense::Ge,
                        _ => return Err(bad(ln, "bad sense")),
                    };
                    lp.rows[idx(ln, i, m)?] = Row {
                        sense,
                        rhs: num(ln, rhs)?,
                    };
                }
                ["COL", j, c, lo, hi] => {
                    let j = idx(ln, j, n)?;
                    lp.cost[j] = num(ln, c)?;
                    lp.lower[j] = num(ln, lo)?;
                    lp.upper[j] = num(ln, hi)?;
                }
                ["A", i, j, v] => {
                    let i = idx(ln, i, m)?;
                    lp.columns[idx(ln, j, n)?].push((i, num(ln, v)?));
                }
                ["END"] => {
                    ended = true;
                    break;
                }
                _ => return Err(bad(ln, "unrecognized record")),
            }
        }
        if !ended {
            return Err(Error::InvalidArgument("LP dump is missing END".into()));
        }
        lp.validate()?;
        Ok(lp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        })
    }
}

/// Basic column of each internal row; reusable as a warm start for the same
/// problem shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LpBasis {
    pub head: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per row: `≤` rows have `y ≤ 0`, `≥` rows `y ≥ 0`.
    pub duals: Vec<f64>,
    /// `c_j - Σ_i y_i a_ij`.
    pub reduced_costs: Vec<f64>,
    pub basis: Option<LpBasis>,
    pub iterations: usize,
    pub phase_one_iterations: usize,
}

impl LpSolution {
    /// `bᵀy` plus the contribution of finite variable bounds.
    pub fn dual_objective(&self, lp: &LpStandardForm) -> f64 {
        let rows: f64 = lp
            .rows
            .iter()
            .zip(&self.duals)
            .map(|(r, y)| r.rhs * y)
            .sum();
        let bounds: f64 = self
            .reduced_costs
            .iter()
            .enumerate()
            .map(|(j, &d)| {
                if d > 0.0 && lp.lower[j].is_finite() {
                    lp.lower[j] * d
                } else if d < 0.0 && lp.upper[j].is_finite() {
                    lp.upper[j] * d
                } else {
                    0.0
                }
            })
            .sum();
        rows + bounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexOptions {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub tol_pivot: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tol_feas: 1e-9,
            tol_opt: 1e-9,
            tol_pivot: 1e-9,
            max_iterations: 200_000,
            refactor_every: 64,
            bland_after: 50,
        }
    }
}

pub fn solve_simplex(lp: &LpStandardForm) -> Result<LpSolution> {
    solve_simplex_with(lp, &SimplexOptions::default(), None)
}

/// Solves `lp`, optionally starting from a basis returned by an earlier
/// solve. A warm basis that is singular or infeasible is ignored.
pub fn solve_simplex_with(
    lp: &LpStandardForm,
    opts: &SimplexOptions,
    warm: Option<&LpBasis>,
) -> Result<LpSolution> {
    lp.validate()?;
    let comp = Internal::build(lp);
    let mut s = Solver::new(&comp, opts);
    let mut phase_one = 0;
    let warm_ok = match warm {
        Some(b) if b.head.len() == comp.m => s.install(&b.head).is_ok() && s.primal_feasible(),
        _ => false,
    };
    if !warm_ok {
        s.cold_start()?;
        if s.basis.iter().any(|&j| j >= comp.ncols) {
            let status = s.run(Phase::One)?;
            debug_assert_eq!(status, LpStatus::Optimal);
            phase_one = s.iterations;
            let infeas: f64 = s
                .basis
                .iter()
                .zip(&s.xb)
                .filter(|(&j, _)| j >= comp.ncols)
                .map(|(_, &v)| v)
                .sum();
            let scale = comp.b.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if infeas > opts.tol_feas * scale * (comp.m as f64).sqrt().max(1.0) * 10.0 {
                return Ok(s.finish(lp, LpStatus::Infeasible, phase_one));
            }
            s.drive_out_artificials()?;
        }
    }
    let status = s.run(Phase::Two)?;
    Ok(s.finish(lp, status, phase_one))
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lo + x'`.
    Shift { col: usize, lo: f64 },
    /// `x = hi - x'`.
    Mirror { col: usize, hi: f64 },
    /// `x = x⁺ - x⁻`.
    Free { pos: usize, neg: usize },
}

/// `min cᵀx, Ax = b, x ≥ 0, b ≥ 0`, with artificial column `ncols + i` equal
/// to the unit vector of row `i`.
struct Internal {
    m: usize,
    ncols: usize,
    start: Vec<usize>,
    index: Vec<usize>,
    value: Vec<f64>,
    cost: Vec<f64>,
    b: Vec<f64>,
    /// Row sign flips for the original rows.
    sign: Vec<f64>,
    /// Column of each row whose entry there is `+1` and zero elsewhere.
    natural: Vec<Option<usize>>,
    vars: Vec<VarMap>,
}

impl Internal {
    fn build(lp: &LpStandardForm) -> Internal {
        let m0 = lp.num_rows();
        let mut b: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut cost = Vec::new();
        let mut vars = Vec::with_capacity(lp.num_cols());
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..lp.num_cols() {
            let (lo, hi) = (lp.lower[j], lp.upper[j]);
            let col = &lp.columns[j];
            if lo.is_finite() {
                for &(i, v) in col {
                    b[i] -= v * lo;
                }
                vars.push(VarMap::Shift {
                    col: cols.len(),
                    lo,
                });
                if hi.is_finite() {
                    bound_rows.push((cols.len(), hi - lo));
                }
                cols.push(col.clone());
                cost.push(lp.cost[j]);
            } else if hi.is_finite() {
                for &(i, v) in col {
                    b[i] -= v * hi;
                }
                vars.push(VarMap::Mirror {
                    col: cols.len(),
                    hi,
                });
                cols.push(col.iter().map(|&(i, v)| (i, -v)).collect());
                cost.push(-lp.cost[j]);
            } else {
                vars.push(VarMap::Free {
                    pos: cols.len(),
                    neg: cols.len() + 1,
                });
                cols.push(col.clone());
                cols.push(col.iter().map(|&(i, v)| (i, -v)).collect());
                cost.push(lp.cost[j]);
                cost.push(-lp.cost[j]);
            }
        }
        let m = m0 + bound_rows.len();
        for (k, &(col, width)) in bound_rows.iter().enumerate() {
            cols[col].push((m0 + k, 1.0));
            b.push(width);
        }
        let sign: Vec<f64> = b
            .iter()
            .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
            .collect();
        for col in cols.iter_mut() {
            for e in col.iter_mut() {
                e.1 *= sign[e.0];
            }
        }
        for (i, v) in b.iter_mut().enumerate() {
            *v *= sign[i];
        }
        let mut natural = vec![None; m];
        for i in 0..m {
            let coef = if i < m0 {
                match lp.rows[i].sense {
                    Sense::Eq => continue,
                    Sense::Le => 1.0,
                    Sense::Ge => -1.0,
                }
            } else {
                1.0
            } * sign[i];
            if coef > 0.0 {
                natural[i] = Some(cols.len());
            }
            cols.push(vec![(i, coef)]);
            cost.push(0.0);
        }
        let mut start = Vec::with_capacity(cols.len() + 1);
        let mut index = Vec::new();
        let mut value = Vec::new();
        start.push(0);
        for col in &cols {
            for &(i, v) in col {
                index.push(i);
                value.push(v);
            }
            start.push(index.len());
        }
        Internal {
            m,
            ncols: cols.len(),
            start,
            index,
            value,
            cost,
            b,
            sign,
            natural,
            vars,
        }
    }

    fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = if j < self.ncols {
            (self.start[j], self.start[j + 1])
        } else {
            (0, 0)
        };
        let unit = (j >= self.ncols).then(|| (j - self.ncols, 1.0));
        (lo..hi)
            .map(move |k| (self.index[k], self.value[k]))
            .chain(unit)
    }

    fn dot(&self, y: &[f64], j: usize) -> f64 {
        self.column(j).map(|(i, v)| y[i] * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Solver<'a> {
    p: &'a Internal,
    opts: &'a SimplexOptions,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Solver<'a> {
    fn new(p: &'a Internal, opts: &'a SimplexOptions) -> Solver<'a> {
        Solver {
            p,
            opts,
            basis: Vec::new(),
            in_basis: vec![false; p.ncols + p.m],
            binv: Vec::new(),
            xb: Vec::new(),
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn cold_start(&mut self) -> Result<()> {
        let head: Vec<usize> = (0..self.p.m)
            .map(|i| self.p.natural[i].unwrap_or(self.p.ncols + i))
            .collect();
        self.install(&head)
    }

    fn install(&mut self, head: &[usize]) -> Result<()> {
        if head.iter().any(|&j| j >= self.p.ncols + self.p.m) {
            return Err(Error::InvalidArgument("basis index out of range".into()));
        }
        self.in_basis.iter_mut().for_each(|v| *v = false);
        for &j in head {
            if self.in_basis[j] {
                return Err(Error::InvalidArgument("repeated basis column".into()));
            }
            self.in_basis[j] = true;
        }
        self.basis = head.to_vec();
        self.refactor()
    }

    fn primal_feasible(&self) -> bool {
        self.xb.iter().zip(&self.basis).all(|(&v, &j)| {
            v >= -self.opts.tol_feas && (j < self.p.ncols || v <= self.opts.tol_feas)
        })
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.p.m;
        let mut bm = DMatrix::<f64>::zeros(m, m);
        for (r, &j) in self.basis.iter().enumerate() {
            for (i, v) in self.p.column(j) {
                bm[(i, r)] = v;
            }
        }
        let norm1 = |a: &DMatrix<f64>| {
            (0..a.ncols())
                .map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let bnorm = norm1(&bm);
        let inv = bm.clone().lu().try_inverse().ok_or(Error::SingularBasis {
            condition: f64::INFINITY,
        })?;
        let condition = bnorm * norm1(&inv);
        if !condition.is_finite() || condition > 1e15 {
            return Err(Error::SingularBasis { condition });
        }
        // row-major copy: binv[r * m + i] is row r of B^{-1}
        self.binv = vec![0.0; m * m];
        for r in 0..m {
            for i in 0..m {
                self.binv[r * m + i] = inv[(r, i)];
            }
        }
        self.xb = (0..m)
            .map(|r| (0..m).map(|i| self.binv[r * m + i] * self.p.b[i]).sum())
            .collect();
        self.since_refactor = 0;
        Ok(())
    }

    fn cost(&self, phase: Phase, j: usize) -> f64 {
        match phase {
            Phase::One => (j >= self.p.ncols) as u8 as f64,
            Phase::Two => {
                if j < self.p.ncols {
                    self.p.cost[j]
                } else {
                    0.0
                }
            }
        }
    }

    fn multipliers(&self, phase: Phase) -> Vec<f64> {
        let m = self.p.m;
        let mut y = vec![0.0; m];
        for (r, &j) in self.basis.iter().enumerate() {
            let c = self.cost(phase, j);
            if c != 0.0 {
                for i in 0..m {
                    y[i] += c * self.binv[r * m + i];
                }
            }
        }
        y
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.p.m;
        let mut alpha = vec![0.0; m];
        for (i, v) in self.p.column(j) {
            for r in 0..m {
                alpha[r] += self.binv[r * m + i] * v;
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.p.m;
        let theta = self.xb[r] / alpha[r];
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * alpha[i];
            }
        }
        self.xb[r] = theta;
        let pr = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= pr;
        }
        for i in 0..m {
            if i != r && alpha[i] != 0.0 {
                let f = alpha[i];
                for k in 0..m {
                    self.binv[i * m + k] -= f * self.binv[r * m + k];
                }
            }
        }
        self.in_basis[self.basis[r]] = false;
        self.in_basis[q] = true;
        self.basis[r] = q;
        self.since_refactor += 1;
    }

    fn run(&mut self, phase: Phase) -> Result<LpStatus> {
        let mut degenerate = 0usize;
        loop {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let bland = degenerate >= self.opts.bland_after;
            let y = self.multipliers(phase);
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.p.ncols {
                if self.in_basis[j] {
                    continue;
                }
                let d = self.cost(phase, j) - self.p.dot(&y, j);
                if d < -self.opts.tol_opt {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| d < best) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Ok(LpStatus::Optimal);
            };
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::IterationLimit(self.opts.max_iterations));
            }
            let alpha = self.ftran(q);
            let mut leave: Option<(usize, f64)> = None;
            for (r, &a) in alpha.iter().enumerate() {
                if a <= self.opts.tol_pivot {
                    continue;
                }
                let ratio = self.xb[r].max(0.0) / a;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        if ratio < best - 1e-12 {
                            true
                        } else if ratio <= best + 1e-12 {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a > alpha[lr]
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
            let Some((r, step)) = leave else {
                return Ok(LpStatus::Unbounded);
            };
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.xb[r] = self.xb[r].max(0.0);
            self.pivot(r, q, &alpha);
            self.iterations += 1;
        }
    }

    /// Replaces basic artificials (at zero after phase one) by structural
    /// columns where possible; rows where none fits are redundant.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let m = self.p.m;
        for r in 0..m {
            if self.basis[r] < self.p.ncols {
                continue;
            }
            let row = &self.binv[r * m..(r + 1) * m];
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.p.ncols {
                if self.in_basis[j] {
                    continue;
                }
                let v = self.p.dot(row, j).abs();
                if v > 1e-7 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((q, _)) = best {
                let alpha = self.ftran(q);
                self.xb[r] = 0.0;
                self.pivot(r, q, &alpha);
            }
        }
        self.refactor()
    }

    fn finish(&self, lp: &LpStandardForm, status: LpStatus, phase_one: usize) -> LpSolution {
        let n0 = lp.num_cols();
        let m0 = lp.num_rows();
        if status != LpStatus::Optimal {
            return LpSolution {
                status,
                x: Vec::new(),
                objective: f64::NAN,
                duals: Vec::new(),
                reduced_costs: Vec::new(),
                basis: None,
                iterations: self.iterations,
                phase_one_iterations: phase_one,
            };
        }
        let mut xc = vec![0.0; self.p.ncols + self.p.m];
        for (r, &j) in self.basis.iter().enumerate() {
            xc[j] = self.xb[r].max(0.0);
        }
        let x: Vec<f64> = self
            .p
            .vars
            .iter()
            .map(|v| match *v {
                VarMap::Shift { col, lo } => lo + xc[col],
                VarMap::Mirror { col, hi } => hi - xc[col],
                VarMap::Free { pos, neg } => xc[pos] - xc[neg],
            })
            .collect();
        let y = self.multipliers(Phase::Two);
        let duals: Vec<f64> = (0..m0).map(|i| y[i] * self.p.sign[i]).collect();
        let reduced_costs = (0..n0)
            .map(|j| {
                lp.cost[j]
                    - lp.columns[j]
                        .iter()
                        .map(|&(i, v)| duals[i] * v)
                        .sum::<f64>()
            })
            .collect();
        let objective = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpSolution {
            status,
            x,
            objective,
            duals,
            reduced_costs,
            basis: Some(LpBasis {
                head: self.basis.clone(),
            }),
            iterations: self.iterations,
            phase_one_iterations: phase_one,
        }
    }
}
