use nalgebra::DMatrix;
use serde::Serialize;

use super::{GridDomain, GridFunction};
use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;

#[inline]
fn arm_value(
    dom: &GridDomain,
    values: &[f64],
    trace: Option<&[f64]>,
    o: usize,
    q: usize,
    k: usize,
    side: usize,
) -> (f64, f64) {
    let (theta, cut) = dom.arm(o, k, side);
    match (cut, trace) {
        (Some(c), Some(t)) => (theta, t[c]),
        _ => {
            let off = if side == 0 {
                dom.offset(k)
            } else {
                -dom.offset(k)
            };
            (1.0, values[(q as isize + off) as usize])
        }
    }
}

/// Shortley-Weller second difference along direction `k` at interior
/// ordinal `o`, in units of the unnormalized direction vector.
#[inline]
pub(crate) fn second_diff(
    dom: &GridDomain,
    values: &[f64],
    trace: Option<&[f64]>,
    o: usize,
    k: usize,
) -> f64 {
    let q = dom.interior_nodes()[o];
    let u0 = values[q];
    let (tp, up) = arm_value(dom, values, trace, o, q, k, 0);
    let (tm, um) = arm_value(dom, values, trace, o, q, k, 1);
    2.0 / (tp + tm) * ((up - u0) / tp + (um - u0) / tm) / (dom.h * dom.h)
}

/// Real Hessian (row-major dim x dim) at interior ordinal `o`.
pub(crate) fn hessian_raw(
    dom: &GridDomain,
    values: &[f64],
    trace: Option<&[f64]>,
    o: usize,
    out: &mut [f64; 16],
) {
    let d = dom.dim;
    for a in 0..d {
        out[a * d + a] = second_diff(dom, values, trace, o, dom.axis_dir(a));
        for b in (a + 1)..d {
            let p = second_diff(dom, values, trace, o, dom.diag_dir(a, b, true));
            let m = second_diff(dom, values, trace, o, dom.diag_dir(a, b, false));
            let v = 0.25 * (p - m);
            out[a * d + b] = v;
            out[b * d + a] = v;
        }
    }
}

/// Complex Hessian from a raw real Hessian, n <= 2, as (a11, a22, re a12, im a12).
#[inline]
pub(crate) fn complex_from_raw(n: usize, hr: &[f64; 16]) -> [f64; 4] {
    let d = 2 * n;
    let at = |a: usize, b: usize| hr[a * d + b];
    let a11 = 0.25 * (at(0, 0) + at(1, 1));
    if n == 1 {
        return [a11, 0.0, 0.0, 0.0];
    }
    let a22 = 0.25 * (at(2, 2) + at(3, 3));
    let re = 0.25 * (at(0, 2) + at(1, 3));
    let im = 0.25 * (at(0, 3) - at(1, 2));
    [a11, a22, re, im]
}

fn stencil_ok(u: &GridFunction, node: usize) -> Result<usize> {
    let dom = &u.domain;
    let o = dom.ordinal(node).ok_or(Error::StencilViolation { node })?;
    if u.trace.is_none() {
        for k in 0..dom.dirs().len() {
            for s in [1isize, -1] {
                let p = (node as isize + s * dom.offset(k)) as usize;
                if !u.values[p].is_finite() {
                    return Err(Error::StencilViolation { node });
                }
            }
        }
    }
    Ok(o)
}

pub fn real_hessian(u: &GridFunction, node: usize) -> Result<DMatrix<f64>> {
    let o = stencil_ok(u, node)?;
    let mut raw = [0.0; 16];
    let d = u.domain.dim;
    hessian_raw(&u.domain, &u.values, u.trace.as_deref(), o, &mut raw);
    Ok(DMatrix::from_row_slice(d, d, &raw[..d * d]))
}

pub fn complex_hessian(u: &GridFunction, node: usize) -> Result<HermitianMatrix> {
    Ok(HermitianMatrix::from_real_hessian(&real_hessian(u, node)?))
}

pub fn laplacian(u: &GridFunction, node: usize) -> Result<f64> {
    Ok(4.0 * complex_hessian(u, node)?.trace())
}

pub fn trace_inverse(u: &GridFunction, node: usize) -> Result<f64> {
    let a = complex_hessian(u, node)?;
    let lmin = a.min_eigenvalue();
    if !(lmin > 0.0) {
        return Err(Error::DegenerateHessian {
            node,
            min_eigenvalue: lmin,
        });
    }
    Ok(a.inverse()
        .ok_or(Error::DegenerateHessian {
            node,
            min_eigenvalue: lmin,
        })?
        .trace())
}

/// Gradient by Shortley-Weller first differences along the axes.
pub fn gradient(u: &GridFunction, node: usize) -> Result<Vec<f64>> {
    let o = stencil_ok(u, node)?;
    let dom = &u.domain;
    let tr = u.trace.as_deref();
    let u0 = u.values[node];
    Ok((0..dom.dim)
        .map(|a| {
            let k = dom.axis_dir(a);
            let (tp, up) = arm_value(dom, &u.values, tr, o, node, k, 0);
            let (tm, um) = arm_value(dom, &u.values, tr, o, node, k, 1);
            (tm * tm * (up - u0) - tp * tp * (um - u0)) / (tp * tm * (tp + tm)) / dom.h
        })
        .collect())
}

/// Largest third partial derivative, from centered differences of the
/// Hessian at axis neighbors.
pub fn third_derivative_norm(u: &GridFunction, node: usize) -> Result<f64> {
    let dom = &u.domain;
    let d = dom.dim;
    let mut worst: f64 = 0.0;
    for c in 0..d {
        let off = dom.offset(dom.axis_dir(c));
        let p = (node as isize + off) as usize;
        let m = (node as isize - off) as usize;
        let hp = real_hessian(u, p)?;
        let hm = real_hessian(u, m)?;
        for a in 0..d {
            for b in 0..d {
                worst = worst.max(((hp[(a, b)] - hm[(a, b)]) / (2.0 * dom.h)).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderCheck {
    pub order: usize,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InterpolationReport {
    pub lambda: f64,
    pub checks: Vec<OrderCheck>,
    pub holds: bool,
}

/// Checks |D^m u(x)| <= c' c (lambda^{4-m} + mu / lambda^m) for m = 1, 2, 3.
pub fn interpolation_check(
    u: &GridFunction,
    node: usize,
    mu: f64,
    lambda: f64,
    c: f64,
    c_prime: f64,
    r0: f64,
) -> Result<InterpolationReport> {
    if !(lambda > 0.0 && lambda < r0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < lambda < r0, got {lambda}, {r0}"
        )));
    }
    let g = gradient(u, node)?;
    let d1 = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let hs = real_hessian(u, node)?;
    let d2 = hs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let d3 = third_derivative_norm(u, node)?;
    let checks: Vec<OrderCheck> = [d1, d2, d3]
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let m = i + 1;
            let bound = c_prime * c * (lambda.powi(4 - m as i32) + mu / lambda.powi(m as i32));
            OrderCheck {
                order: m,
                value,
                bound,
                holds: value <= bound,
            }
        })
        .collect();
    let holds = checks.iter().all(|c| c.holds);
    Ok(InterpolationReport {
        lambda,
        checks,
        holds,
    })
}
