//! Enumeration check of `log p(Y,S,E|X) = log p(Y|S,E,X) + log p(E|S,X) + log p(S|X)`.

use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Joint distribution over `(X, S, E, Y)`, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub dims: [usize; 4],
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRuleReport {
    pub max_abs_error: f64,
    /// Cells with zero probability, for which neither side is defined.
    pub excluded: usize,
}

impl JointTable {
    pub fn new(dims: [usize; 4], p: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0 || d > 4) {
            return Err(Error::InvalidConfig(format!("variable sizes must be in 1..=4, got {dims:?}")));
        }
        if p.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("table has {} cells for dims {dims:?}", p.len())));
        }
        if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if !((total - 1.0).abs() < 1e-9) {
            return Err(Error::InvalidConfig(format!("table sums to {total}")));
        }
        Ok(JointTable { dims, p })
    }

    /// Entries drawn from a flat Dirichlet (normalised unit-rate Gamma draws).
    pub fn dirichlet(dims: [usize; 4], rng: &mut Rng) -> Self {
        let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
        let n: usize = dims.iter().product();
        let mut p: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        JointTable { dims, p }
    }

    fn idx(&self, x: usize, s: usize, e: usize, y: usize) -> usize {
        let [_, ns, ne, ny] = self.dims;
        ((x * ns + s) * ne + e) * ny + y
    }
}

pub fn verify_chain_rule(table: &JointTable) -> ChainRuleReport {
    let [nx, ns, ne, ny] = table.dims;
    let p = |x, s, e, y| table.p[table.idx(x, s, e, y)];
    let mut p_x = vec![0.0; nx];
    let mut p_xs = vec![0.0; nx * ns];
    let mut p_xse = vec![0.0; nx * ns * ne];
    for x in 0..nx {
        for s in 0..ns {
            for e in 0..ne {
                for y in 0..ny {
                    let v = p(x, s, e, y);
                    p_x[x] += v;
                    p_xs[x * ns + s] += v;
                    p_xse[(x * ns + s) * ne + e] += v;
                }
            }
        }
    }
    let mut max_abs_error: f64 = 0.0;
    let mut excluded = 0;
    for x in 0..nx {
        for s in 0..ns {
            for e in 0..ne {
                for y in 0..ny {
                    let joint = p(x, s, e, y);
                    if joint <= 0.0 {
                        excluded += 1;
                        continue;
                    }
                    let xs = p_xs[x * ns + s];
                    let xse = p_xse[(x * ns + s) * ne + e];
                    let lhs = (joint / p_x[x]).ln();
                    let rhs = (joint / xse).ln() + (xse / xs).ln() + (xs / p_x[x]).ln();
                    max_abs_error = max_abs_error.max((lhs - rhs).abs());
                }
            }
        }
    }
    ChainRuleReport { max_abs_error, excluded }
}
