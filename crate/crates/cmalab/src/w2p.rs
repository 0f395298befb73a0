//! L^p accounting for the second derivatives: direct node-sum quadrature
//! against the dyadic bound assembled from the bad-set decay.

use serde::{Deserialize, Serialize};

use crate::badset::{sample_nodes, BadSetReport};
use crate::error::{Error, Result};
use crate::grid::{complex_hessian, gradient, real_hessian, GridFunction};

/// Ratio of consecutive dyadic terms the tail closure assumes.
pub const TAIL_RATIO: f64 = 0.5;

/// (sum |f|^p h^{2n})^{1/p} over the node list.
pub fn lp_norm(field: &GridFunction, p: f64, region: &[usize]) -> Result<f64> {
    Ok(lp_sum(field, p, region)?.powf(1.0 / p))
}

/// sum |f|^p h^{2n}, the p-th power of [`lp_norm`].
pub fn lp_sum(field: &GridFunction, p: f64, region: &[usize]) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p = {p} below 1")));
    }
    let mut s = 0.0;
    for &q in region {
        let v = field.values[q];
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("field is not finite at node {q}")));
        }
        s += v.abs().powf(p);
    }
    Ok(s * field.domain.cell_volume())
}

/// Node field computed on the region only; NaN elsewhere.
fn field_on(u: &GridFunction, region: &[usize], f: impl Fn(usize) -> Result<f64>) -> Result<GridFunction> {
    let mut values = vec![f64::NAN; u.values.len()];
    for &q in region {
        values[q] = f(q)?;
    }
    Ok(GridFunction { domain: u.domain.clone(), values, trace: None })
}

/// Complex trace sum_i u_{i ibar}.
pub fn complex_trace_field(u: &GridFunction, region: &[usize]) -> Result<GridFunction> {
    field_on(u, region, |q| Ok(complex_hessian(u, q)?.trace()))
}

/// tr_u omega = trace of the inverse complex Hessian.
pub fn trace_inverse_field(u: &GridFunction, region: &[usize]) -> Result<GridFunction> {
    field_on(u, region, |q| {
        let a = complex_hessian(u, q)?;
        let lmin = a.min_eigenvalue();
        a.inverse()
            .filter(|_| lmin > 0.0)
            .map(|m| m.trace())
            .ok_or(Error::DegenerateHessian { node: q, min_eigenvalue: lmin })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectQuadrature {
    /// integral of (sum_i u_{i ibar})^p
    pub laplacian: f64,
    /// integral of (tr_u omega)^p
    pub trace_inverse: f64,
    pub total: f64,
}

pub fn direct_quadrature(u: &GridFunction, p: f64, region: &[usize]) -> Result<DirectQuadrature> {
    let l = lp_sum(&complex_trace_field(u, region)?, p, region)?;
    let t = lp_sum(&trace_inverse_field(u, region)?, p, region)?;
    Ok(DirectQuadrature { laplacian: l, trace_inverse: t, total: l + t })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicBound {
    pub p: f64,
    /// (2n 10^{n-1})^p m(B) + (n 10)^p m(B): the bound on D_1.
    pub base: f64,
    /// Per level k: (2n 10^{(n-1)(k+1)})^p + (n 10^{k+1})^p, times m(A_k cap B).
    pub terms: Vec<f64>,
    pub tail: f64,
    pub total: f64,
    /// 10^{(n-1)p} 12^{2n} eps-bar.
    pub recipe_ratio: f64,
    /// False when some decay row fails, which voids the tail closure.
    pub tail_valid: bool,
}

/// Dyadic bound for the integral of (Delta u)^p + (tr_u omega)^p over the
/// inner ball of lattice measure `region_measure`.
pub fn dyadic_bound(report: &BadSetReport, p: f64, region_measure: f64) -> Result<DyadicBound> {
    if !(p >= 1.0) || !(region_measure >= 0.0) {
        return Err(Error::InvalidInput("need p >= 1 and a nonnegative region measure".into()));
    }
    let n = report.n as i32;
    let nf = n as f64;
    let lap = |k: i32| (2.0 * nf * 10f64.powi((n - 1) * k)).powf(p);
    let tr = |k: i32| (nf * 10f64.powi(k)).powf(p);
    let base = (lap(1) + tr(1)) * region_measure;
    let terms: Vec<f64> = report
        .rows
        .iter()
        .map(|r| (lap(r.k as i32 + 1) + tr(r.k as i32 + 1)) * r.measure_inner)
        .collect();
    let last = terms.last().copied().unwrap_or(0.0);
    let tail = last * TAIL_RATIO / (1.0 - TAIL_RATIO);
    let total = base + terms.iter().sum::<f64>() + tail;
    Ok(DyadicBound {
        p,
        base,
        terms,
        tail,
        total,
        recipe_ratio: 10f64.powf((nf - 1.0) * p) * 12f64.powi(2 * n) * report.eps_bar,
        tail_valid: report.all_pass(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullW2p {
    pub u_norm: f64,
    pub gradient_norm: f64,
    /// L^p norm of the Frobenius norm of the real Hessian.
    pub hessian_norm: f64,
    pub value: f64,
    /// L^p norm of the real Laplacian.
    pub laplacian_norm: f64,
    /// value / (|u|_p + |Delta u|_p), the measured classical constant.
    pub ratio: f64,
}

pub fn full_w2p(u: &GridFunction, p: f64, region: &[usize]) -> Result<FullW2p> {
    let un = lp_norm(&field_on(u, region, |q| Ok(u.values[q]))?, p, region)?;
    let gn = lp_norm(
        &field_on(u, region, |q| Ok(gradient(u, q)?.iter().map(|g| g * g).sum::<f64>().sqrt()))?,
        p,
        region,
    )?;
    let hn = lp_norm(&field_on(u, region, |q| Ok(real_hessian(u, q)?.norm()))?, p, region)?;
    let ln = lp_norm(&field_on(u, region, |q| Ok(real_hessian(u, q)?.trace()))?, p, region)?;
    let value = un + gn + hn;
    Ok(FullW2p {
        u_norm: un,
        gradient_norm: gn,
        hessian_norm: hn,
        value,
        laplacian_norm: ln,
        ratio: value / (un + ln),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub p: f64,
    pub region_radius: f64,
    pub region_nodes: usize,
    pub region_measure: f64,
    pub direct: DirectQuadrature,
    pub dyadic: Option<DyadicBound>,
    /// direct.total <= dyadic.total, when a bound is available.
    pub dominated: Option<bool>,
    pub full_region_radius: f64,
    pub full: FullW2p,
}

/// Direct quadrature and dyadic bound on B_0.6; the full norm on B_1/2.
pub fn norm_report(u: &GridFunction, p: f64, badset: Option<&BadSetReport>) -> Result<NormReport> {
    let region = sample_nodes(&u.domain, 0.6, 1);
    let region_measure = region.len() as f64 * u.domain.cell_volume();
    let direct = direct_quadrature(u, p, &region)?;
    let dyadic = badset.map(|r| dyadic_bound(r, p, region_measure)).transpose()?;
    let inner = sample_nodes(&u.domain, 0.5, 1);
    Ok(NormReport {
        p,
        region_radius: 0.6,
        region_nodes: region.len(),
        region_measure,
        dominated: dyadic.as_ref().map(|b| direct.total <= b.total),
        direct,
        dyadic,
        full_region_radius: 0.5,
        full: full_w2p(u, p, &inner)?,
    })
}
