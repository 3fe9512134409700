//! Occupational measures of trajectories and the tools to compare them.
//!
//! A measure is a finite list of weighted atoms on `Y × U`. The Cesàro
//! measure of a trajectory on `[0, T]` satisfies
//! `∫ q dγ ≈ (1/T) ∫_0^T q(y(t), u(t)) dt`; the discounted measure replaces
//! the uniform weight with `λ e^{-λt}`.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::basis::Basis;
use crate::dynamics::{SystemSpec, Trajectory};
use crate::error::{Error, Result};

/// Tolerance on `|Σw - 1|` for probability measures.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Probability,
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub y: Vec<f64>,
    pub u: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccMeasure {
    pub atoms: Vec<Atom>,
    pub kind: MeasureKind,
}

impl OccMeasure {
    /// Builds a probability measure, rescaling the weights to unit mass.
    pub fn probability(atoms: Vec<Atom>) -> Result<OccMeasure> {
        check_weights(&atoms)?;
        let total = kahan_sum(atoms.iter().map(|a| a.w));
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("measure has zero mass".into()));
        }
        let atoms = atoms
            .into_iter()
            .map(|a| Atom {
                w: a.w / total,
                ..a
            })
            .collect();
        Ok(OccMeasure {
            atoms,
            kind: MeasureKind::Probability,
        })
    }

    pub fn nonnegative(atoms: Vec<Atom>) -> Result<OccMeasure> {
        check_weights(&atoms)?;
        Ok(OccMeasure {
            atoms,
            kind: MeasureKind::Nonnegative,
        })
    }

    pub fn dirac(y: Vec<f64>, u: f64) -> OccMeasure {
        OccMeasure {
            atoms: vec![Atom { y, u, w: 1.0 }],
            kind: MeasureKind::Probability,
        }
    }

    pub fn mass(&self) -> f64 {
        kahan_sum(self.atoms.iter().map(|a| a.w))
    }

    /// Merges atoms with bitwise-identical support points.
    pub fn merged(self) -> OccMeasure {
        let mut index: HashMap<(Vec<u64>, u64), usize> = HashMap::new();
        let mut atoms: Vec<Atom> = Vec::with_capacity(self.atoms.len());
        for a in self.atoms {
            let key = (a.y.iter().map(|v| v.to_bits()).collect(), a.u.to_bits());
            match index.get(&key) {
                Some(&i) => atoms[i].w += a.w,
                None => {
                    index.insert(key, atoms.len());
                    atoms.push(a);
                }
            }
        }
        OccMeasure {
            atoms,
            kind: self.kind,
        }
    }

    pub fn check(&self) -> Result<()> {
        check_weights(&self.atoms)?;
        if self.kind == MeasureKind::Probability && (self.mass() - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "probability measure has mass {}",
                self.mass()
            )));
        }
        Ok(())
    }
}

fn check_weights(atoms: &[Atom]) -> Result<()> {
    if atoms.iter().any(|a| !(a.w >= 0.0) || !a.w.is_finite()) {
        return Err(Error::InvalidArgument(
            "negative or non-finite weight".into(),
        ));
    }
    Ok(())
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

fn trapezoid_weights(traj: &Trajectory, upto: usize) -> Vec<f64> {
    let mut w = vec![0.0; upto + 1];
    for i in 0..upto {
        let dt = traj.times[i + 1] - traj.times[i];
        w[i] += 0.5 * dt;
        w[i + 1] += 0.5 * dt;
    }
    w
}

/// Occupational measure of a trajectory on `[0, T]`.
pub fn cesaro_measure(traj: &Trajectory) -> Result<OccMeasure> {
    if traj.len() < 2 || !(traj.duration() > 0.0) {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let w = trapezoid_weights(traj, traj.len() - 1);
    let atoms = (0..traj.len())
        .map(|i| Atom {
            y: traj.states[i].clone(),
            u: traj.controls[i],
            w: w[i],
        })
        .collect();
    Ok(OccMeasure::probability(atoms)?.merged())
}

/// Discounted occupational measure `λ e^{-λt} dt`, truncated at `horizon`.
///
/// The horizon must satisfy `λ·horizon ≥ 10`, i.e. the dropped tail mass is
/// at most `e^{-10}`.
pub fn discounted_measure(traj: &Trajectory, lambda: f64, horizon: f64) -> Result<OccMeasure> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "discount rate {lambda} must be positive"
        )));
    }
    if lambda * horizon < 10.0 - 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} too short for rate {lambda}: tail mass {:.3e} > e^-10",
            (-lambda * horizon).exp()
        )));
    }
    if traj.duration() < horizon - 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "trajectory length {} is shorter than the horizon {horizon}",
            traj.duration()
        )));
    }
    let upto = traj.times.partition_point(|&t| t <= horizon + 1e-12) - 1;
    if upto == 0 {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let w = trapezoid_weights(traj, upto);
    let atoms = (0..=upto)
        .map(|i| Atom {
            y: traj.states[i].clone(),
            u: traj.controls[i],
            w: lambda * (-lambda * traj.times[i]).exp() * w[i],
        })
        .collect();
    Ok(OccMeasure::probability(atoms)?.merged())
}

/// `Σ_i w_i q(y_i, u_i)`.
pub fn integrate_against<Q>(m: &OccMeasure, q: Q) -> f64
where
    Q: Fn(&[f64], f64) -> f64,
{
    kahan_sum(m.atoms.iter().map(|a| a.w * q(&a.y, a.u)))
}

type TestFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// One test function `q_j` of the truncated metric.
#[derive(Clone)]
pub struct MetricTerm {
    pub label: String,
    eval: TestFn,
}

impl MetricTerm {
    pub fn new<F>(label: impl Into<String>, f: F) -> MetricTerm
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        MetricTerm {
            label: label.into(),
            eval: Arc::new(f),
        }
    }

    pub fn eval(&self, y: &[f64], u: f64) -> f64 {
        (self.eval)(y, u)
    }
}

/// Truncated weak* metric `ρ(γ', γ'') = Σ_j 2^{-j} |∫q_j dγ' - ∫q_j dγ''|`.
#[derive(Clone)]
pub struct MetricConfig {
    pub terms: Vec<MetricTerm>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricDescription {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

impl MetricConfig {
    pub fn new(terms: Vec<MetricTerm>) -> Result<MetricConfig> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument(
                "metric needs at least one term".into(),
            ));
        }
        Ok(MetricConfig { terms })
    }

    /// First `count` monomials in `(y, u)`, each coordinate rescaled to
    /// `[-1, 1]` over `lo..hi × umin..umax`, so every term has sup-norm ≤ 1.
    pub fn monomials(lo: &[f64], hi: &[f64], umin: f64, umax: f64, count: usize) -> MetricConfig {
        let mut blo = lo.to_vec();
        let mut bhi = hi.to_vec();
        blo.push(umin);
        bhi.push(umax);
        let mut degree = 1;
        let basis = loop {
            let b = Basis::monomials(blo.clone(), bhi.clone(), degree);
            if b.len() >= count {
                break b;
            }
            degree += 1;
        };
        let n = lo.len();
        let mut names: Vec<String> = (1..=n).map(|i| format!("y{i}")).collect();
        names.push("u".into());
        let labels = basis.names(&names);
        let terms = (0..count)
            .map(|j| {
                let single = Basis {
                    lo: basis.lo.clone(),
                    hi: basis.hi.clone(),
                    terms: vec![basis.terms[j].clone()],
                };
                MetricTerm::new(labels[j].clone(), move |y: &[f64], u: f64| {
                    let mut yu = y.to_vec();
                    yu.push(u);
                    single.values(&yu)[0]
                })
            })
            .collect();
        MetricConfig { terms }
    }

    pub fn weight(&self, j: usize) -> f64 {
        0.5f64.powi(j as i32 + 1)
    }

    pub fn describe(&self) -> MetricDescription {
        MetricDescription {
            labels: self.terms.iter().map(|t| t.label.clone()).collect(),
            weights: (0..self.terms.len()).map(|j| self.weight(j)).collect(),
        }
    }

    /// Checks `|q_j| ≤ 1` on the given sample points.
    pub fn check_bounded(&self, samples: &[(Vec<f64>, f64)]) -> Result<()> {
        for (j, t) in self.terms.iter().enumerate() {
            for (y, u) in samples {
                let v = t.eval(y, *u);
                if !(v.abs() <= 1.0 + 1e-12) {
                    return Err(Error::InvalidArgument(format!(
                        "metric term {j} ({}) has |q| = {} at {y:?}, {u}",
                        t.label,
                        v.abs()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Moment vector `(∫ q_j dm)_j`.
    pub fn features(&self, m: &OccMeasure) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| integrate_against(m, |y, u| t.eval(y, u)))
            .collect()
    }

    fn feature_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(j, (x, y))| self.weight(j) * (x - y).abs())
            .sum()
    }
}

pub fn rho_distance(m1: &OccMeasure, m2: &OccMeasure, cfg: &MetricConfig) -> Result<f64> {
    for m in [m1, m2] {
        if m.kind != MeasureKind::Probability {
            return Err(Error::InvalidArgument(
                "rho is defined on probability measures".into(),
            ));
        }
    }
    Ok(cfg.feature_distance(&cfg.features(m1), &cfg.features(m2)))
}

/// `Σ_i w_i ∇φ_b(y_i)·f(y_i, u_i)` for every basis function; zero for
/// measures in `W`.
pub fn w_residual(m: &OccMeasure, basis: &Basis, system: &SystemSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; basis.len()];
    let mut fy = vec![0.0; system.dim()];
    for a in &m.atoms {
        system.f(&a.y, a.u, &mut fy)?;
        for (o, d) in out.iter_mut().zip(basis.directional(&a.y, &fy)) {
            *o += a.w * d;
        }
    }
    Ok(out)
}

/// Maximum number of greedy steps when fitting a convex combination.
pub const MAX_COMPONENTS: usize = 64;

/// Empirical two-sided proxy for the Hausdorff distance between the convex
/// hulls of two measure families under the truncated metric.
///
/// Each point-to-hull distance is found by greedily mixing in one member at
/// a time (exact line search), so it over-estimates the true distance. The
/// result is a trend indicator, not a bound.
pub fn hausdorff_diagnostic(
    sampled: &[OccMeasure],
    w_grid: &[OccMeasure],
    cfg: &MetricConfig,
) -> Result<f64> {
    if sampled.is_empty() || w_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "measure lists must be nonempty".into(),
        ));
    }
    let fa: Vec<Vec<f64>> = sampled.iter().map(|m| cfg.features(m)).collect();
    let fb: Vec<Vec<f64>> = w_grid.iter().map(|m| cfg.features(m)).collect();
    Ok(directed(cfg, &fa, &fb).max(directed(cfg, &fb, &fa)))
}

fn directed(cfg: &MetricConfig, from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    from.iter()
        .map(|a| hull_distance(cfg, a, to))
        .fold(0.0, f64::max)
}

fn hull_distance(cfg: &MetricConfig, a: &[f64], hull: &[Vec<f64>]) -> f64 {
    let (mut x, mut best) = hull
        .iter()
        .map(|b| (b.clone(), cfg.feature_distance(a, b)))
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .expect("nonempty hull");
    for _ in 1..MAX_COMPONENTS {
        let mut step: Option<(usize, f64, f64)> = None;
        for (k, b) in hull.iter().enumerate() {
            let (alpha, val) = line_search(cfg, a, &x, b);
            if val < best - 1e-15 && step.is_none_or(|s| val < s.2) {
                step = Some((k, alpha, val));
            }
        }
        let Some((k, alpha, val)) = step else { break };
        for (xi, bi) in x.iter_mut().zip(&hull[k]) {
            *xi = (1.0 - alpha) * *xi + alpha * bi;
        }
        best = val;
    }
    best
}

// Minimizes α ↦ Σ_j w_j |x_j + α(b_j - x_j) - a_j| over [0, 1]; the function is
// convex piecewise linear, so a breakpoint or an endpoint is optimal.
fn line_search(cfg: &MetricConfig, a: &[f64], x: &[f64], b: &[f64]) -> (f64, f64) {
    let eval = |alpha: f64| {
        (0..a.len())
            .map(|j| cfg.weight(j) * (x[j] + alpha * (b[j] - x[j]) - a[j]).abs())
            .sum::<f64>()
    };
    let mut best = (0.0, eval(0.0));
    let mut consider = |alpha: f64| {
        let v = eval(alpha);
        if v < best.1 {
            best = (alpha, v);
        }
    };
    consider(1.0);
    for j in 0..a.len() {
        let slope = b[j] - x[j];
        if slope != 0.0 {
            let alpha = (a[j] - x[j]) / slope;
            if alpha > 0.0 && alpha < 1.0 {
                consider(alpha);
            }
        }
    }
    best
}
