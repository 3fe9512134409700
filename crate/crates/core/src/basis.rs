//! Finite families of C¹ test functions with analytic gradients.
//!
//! Monomials are taken in coordinates rescaled affinely to `[-1, 1]` over a
//! box, which keeps LP rows built from them well conditioned. Periodic axes
//! can be augmented with `sin`, `cos` and `x·sin x` in raw coordinates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisTerm {
    /// `Π z_i^{e_i}` with `z` the rescaled state.
    Monomial {
        exps: Vec<u32>,
    },
    Sin {
        axis: usize,
    },
    Cos {
        axis: usize,
    },
    /// `y_axis · sin(y_axis)`.
    XSin {
        axis: usize,
    },
}

/// An ordered list of test functions `φ_b` over a reference box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Basis {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub terms: Vec<BasisTerm>,
}

impl Basis {
    pub fn empty(lo: Vec<f64>, hi: Vec<f64>) -> Basis {
        Basis {
            lo,
            hi,
            terms: Vec::new(),
        }
    }

    /// All monomials of total degree `1..=degree` in graded order.
    pub fn monomials(lo: Vec<f64>, hi: Vec<f64>, degree: u32) -> Basis {
        let n = lo.len();
        let mut terms = Vec::new();
        for total in 1..=degree {
            let mut exps = vec![0u32; n];
            compositions(total, 0, &mut exps, &mut |e| {
                terms.push(BasisTerm::Monomial { exps: e.to_vec() })
            });
        }
        Basis { lo, hi, terms }
    }

    /// Adds `sin`, `cos` and `x·sin x` on each listed axis.
    pub fn with_periodic(mut self, axes: &[usize]) -> Basis {
        for &axis in axes {
            for t in [
                BasisTerm::Sin { axis },
                BasisTerm::Cos { axis },
                BasisTerm::XSin { axis },
            ] {
                if !self.terms.contains(&t) {
                    self.terms.push(t);
                }
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn rescaled(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|i| (2.0 * y[i] - self.lo[i] - self.hi[i]) / (self.hi[i] - self.lo[i]))
            .collect()
    }

    /// Human-readable term names using the given state names.
    pub fn names(&self, state_names: &[String]) -> Vec<String> {
        let name = |i: usize| {
            state_names
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("y{}", i + 1))
        };
        self.terms
            .iter()
            .map(|t| match t {
                BasisTerm::Monomial { exps } => exps
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| **e > 0)
                    .map(|(i, e)| {
                        if *e == 1 {
                            format!("z_{}", name(i))
                        } else {
                            format!("z_{}^{}", name(i), e)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("*"),
                BasisTerm::Sin { axis } => format!("sin({})", name(*axis)),
                BasisTerm::Cos { axis } => format!("cos({})", name(*axis)),
                BasisTerm::XSin { axis } => format!("{0}*sin({0})", name(*axis)),
            })
            .collect()
    }

    /// Values `φ_b(y)` for every term.
    pub fn values(&self, y: &[f64]) -> Vec<f64> {
        let z = self.rescaled(y);
        self.terms.iter().map(|t| term_value(t, y, &z)).collect()
    }

    /// Gradients `∇φ_b(y)`, one row per term.
    pub fn gradients(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let z = self.rescaled(y);
        let scale: Vec<f64> = (0..y.len())
            .map(|i| 2.0 / (self.hi[i] - self.lo[i]))
            .collect();
        self.terms
            .iter()
            .map(|t| term_gradient(t, y, &z, &scale))
            .collect()
    }

    /// `∇φ_b(y)·v` for every term.
    pub fn directional(&self, y: &[f64], v: &[f64]) -> Vec<f64> {
        self.gradients(y)
            .into_iter()
            .map(|g| g.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn compositions(total: u32, pos: usize, exps: &mut Vec<u32>, out: &mut dyn FnMut(&[u32])) {
    let n = exps.len();
    if pos + 1 == n {
        exps[pos] = total;
        out(exps);
        exps[pos] = 0;
        return;
    }
    for first in (0..=total).rev() {
        exps[pos] = first;
        compositions(total - first, pos + 1, exps, out);
    }
    exps[pos] = 0;
}

fn term_value(t: &BasisTerm, y: &[f64], z: &[f64]) -> f64 {
    match t {
        BasisTerm::Monomial { exps } => exps
            .iter()
            .zip(z)
            .map(|(&e, &zi)| zi.powi(e as i32))
            .product(),
        BasisTerm::Sin { axis } => y[*axis].sin(),
        BasisTerm::Cos { axis } => y[*axis].cos(),
        BasisTerm::XSin { axis } => y[*axis] * y[*axis].sin(),
    }
}

fn term_gradient(t: &BasisTerm, y: &[f64], z: &[f64], scale: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut g = vec![0.0; n];
    match t {
        BasisTerm::Monomial { exps } => {
            for i in 0..n {
                if exps[i] == 0 {
                    continue;
                }
                let mut d = exps[i] as f64 * z[i].powi(exps[i] as i32 - 1) * scale[i];
                for j in 0..n {
                    if j != i {
                        d *= z[j].powi(exps[j] as i32);
                    }
                }
                g[i] = d;
            }
        }
        BasisTerm::Sin { axis } => g[*axis] = y[*axis].cos(),
        BasisTerm::Cos { axis } => g[*axis] = -y[*axis].sin(),
        BasisTerm::XSin { axis } => {
            let x = y[*axis];
            g[*axis] = x.sin() + x * x.cos();
        }
    }
    g
}
