use std::sync::Arc;

use super::{multilinear, GridDomain, NodeKind, Pt};
use crate::error::{Error, Result};

/// Real field on a [`GridDomain`]. Exterior nodes hold NaN. `trace` holds
/// values at the boundary crossing points of cut stencil arms; when present
/// it is used instead of the outside node values.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub domain: Arc<GridDomain>,
    pub values: Vec<f64>,
    pub trace: Option<Vec<f64>>,
}

impl GridFunction {
    pub fn from_fn(domain: &Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> GridFunction {
        let dim = domain.dim;
        let values = (0..domain.node_count())
            .map(|i| match domain.kind(i) {
                NodeKind::Exterior => f64::NAN,
                _ => f(&domain.coord(i)[..dim]),
            })
            .collect();
        let trace = domain.cuts().iter().map(|c| f(&c.point[..dim])).collect();
        GridFunction {
            domain: domain.clone(),
            values,
            trace: Some(trace),
        }
    }

    /// Field defined at every node of the box (no trace, no NaN masking).
    pub fn from_fn_box(domain: &Arc<GridDomain>, f: impl Fn(&[f64]) -> f64) -> GridFunction {
        let dim = domain.dim;
        let values = (0..domain.node_count())
            .map(|i| f(&domain.coord(i)[..dim]))
            .collect();
        GridFunction {
            domain: domain.clone(),
            values,
            trace: None,
        }
    }

    pub fn constant(domain: &Arc<GridDomain>, c: f64) -> GridFunction {
        Self::from_fn(domain, |_| c)
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            domain: self.domain.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
            trace: self
                .trace
                .as_ref()
                .map(|t| t.iter().map(|v| f(*v)).collect()),
        }
    }

    pub fn zip(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.check_same(other)?;
        let trace = match (&self.trace, &other.trace) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()),
            _ => None,
        };
        Ok(GridFunction {
            domain: self.domain.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            trace,
        })
    }

    pub fn check_same(&self, other: &GridFunction) -> Result<()> {
        if Arc::ptr_eq(&self.domain, &other.domain) {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }

    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let d = &self.domain;
        multilinear(&self.values, d.dim, d.res, d.half_width, x)
    }

    pub fn coord(&self, idx: usize) -> Pt {
        self.domain.coord(idx)
    }

    /// Largest deviation from finiteness on interior and boundary nodes.
    pub fn is_finite_on_domain(&self) -> bool {
        (0..self.values.len())
            .filter(|&i| self.domain.kind(i) != NodeKind::Exterior)
            .all(|i| self.values[i].is_finite())
    }

    /// Boundary trace: stored crossing values, or a quadratic interpolation
    /// along each cut arm from the nodal values.
    pub fn boundary_trace(&self) -> Vec<f64> {
        if let Some(t) = &self.trace {
            return t.clone();
        }
        let d = &self.domain;
        d.cuts()
            .iter()
            .map(|c| {
                let q = d.interior_nodes()[c.ordinal as usize];
                let k = c.dir as usize;
                let off = if c.side == 0 {
                    d.offset(k)
                } else {
                    -d.offset(k)
                };
                let p = (q as isize + off) as usize;
                let m = (q as isize - off) as usize;
                let (u0, up, um) = (self.values[q], self.values[p], self.values[m]);
                // quadratic through t = -1, 0, 1 evaluated at theta
                let t = c.theta;
                u0 + 0.5 * t * (up - um) + 0.5 * t * t * (up - 2.0 * u0 + um)
            })
            .collect()
    }

    /// Fills boundary-node values by quadratic extrapolation along cut arms,
    /// using the arm with the largest crossing fraction.
    pub fn extrapolate_boundary(&mut self) {
        let d = self.domain.clone();
        let Some(trace) = self.trace.clone() else {
            return;
        };
        let mut best = vec![-1.0f64; d.node_count()];
        for (ci, c) in d.cuts().iter().enumerate() {
            let o = c.ordinal as usize;
            let q = d.interior_nodes()[o];
            let k = c.dir as usize;
            let side = c.side as usize;
            let off = if side == 0 { d.offset(k) } else { -d.offset(k) };
            let p = (q as isize + off) as usize;
            let axis_bonus = if k < d.dim { 0.5 } else { 0.0 };
            let score = c.theta + axis_bonus;
            if score <= best[p] {
                continue;
            }
            let tp = c.theta;
            let gp = trace[ci];
            let u0 = self.values[q];
            let (tm, um) = match d.arm(o, k, 1 - side) {
                (t, Some(cm)) => (t, trace[cm]),
                (_, None) => (1.0, self.values[(q as isize - off) as usize]),
            };
            // Lagrange quadratic through (-tm, um), (0, u0), (tp, gp) at t = 1
            let x0 = -tm;
            let x2 = tp;
            let t = 1.0;
            let l0 = (t - 0.0) * (t - x2) / ((x0 - 0.0) * (x0 - x2));
            let l1 = (t - x0) * (t - x2) / ((0.0 - x0) * (0.0 - x2));
            let l2 = (t - x0) * (t - 0.0) / ((x2 - x0) * (x2 - 0.0));
            self.values[p] = l0 * um + l1 * u0 + l2 * gp;
            best[p] = score;
        }
    }
}
