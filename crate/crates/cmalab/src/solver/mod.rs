//! Dirichlet problem det(u_{i jbar}) = f, u = g on the boundary, by damped
//! Newton on log det, plus the comparison certificates built on it.

pub mod linsolve;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{complex_from_raw, hessian_raw};
use crate::grid::{GridDomain, GridFunction, NodeKind};
use linsolve::{bicgstab, Csr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    QuadraticPlusHarmonic,
    Supplied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub psh_floor: f64,
    pub init_mode: InitMode,
    pub linear_tol: f64,
    pub linear_max_iters: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            newton_tol: 1e-8,
            max_iters: 30,
            damping: 1.0,
            psh_floor: 1e-6,
            init_mode: InitMode::QuadraticPlusHarmonic,
            linear_tol: 1e-11,
            linear_max_iters: 20_000,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0)
            || !(self.damping > 0.0 && self.damping <= 1.0)
            || !(self.psh_floor > 0.0)
        {
            return Err(Error::InvalidInput(
                "solver config needs tol > 0, 0 < damping <= 1, psh_floor > 0".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub boundary_max_error: f64,
    pub linear_iterations: usize,
}

/// Per-node log det, smallest eigenvalue and inverse of the complex Hessian.
struct Local {
    logdet: f64,
    min_eig: f64,
    /// inverse as (m11, m22, re m12, im m12)
    inv: [f64; 4],
}

fn local(dom: &GridDomain, values: &[f64], trace: &[f64], o: usize) -> Local {
    let mut raw = [0.0; 16];
    hessian_raw(dom, values, Some(trace), o, &mut raw);
    let [a11, a22, re, im] = complex_from_raw(dom.n, &raw);
    if dom.n == 1 {
        return Local {
            logdet: a11.ln(),
            min_eig: a11,
            inv: [1.0 / a11, 0.0, 0.0, 0.0],
        };
    }
    let c2 = re * re + im * im;
    let det = a11 * a22 - c2;
    let m = 0.5 * (a11 + a22);
    let r = (0.25 * (a11 - a22) * (a11 - a22) + c2).sqrt();
    Local {
        logdet: det.ln(),
        min_eig: m - r,
        inv: [a22 / det, a11 / det, -re / det, -im / det],
    }
}

/// Coefficients of the linearization per stencil direction.
fn direction_coefficients(dom: &GridDomain, inv: &[f64; 4], out: &mut [f64]) {
    let n = dom.n;
    let d = dom.dim;
    let mut w = [0.0f64; 16];
    let entry = |i: usize, j: usize| -> (f64, f64) {
        match (i, j) {
            (0, 0) => (inv[0], 0.0),
            (1, 1) => (inv[1], 0.0),
            (0, 1) => (inv[2], inv[3]),
            _ => (inv[2], -inv[3]),
        }
    };
    for i in 0..n {
        for j in 0..n {
            // d log det = sum_ij M_ji dA_ij
            let (mre, mim) = entry(j, i);
            w[(2 * i) * d + 2 * j] += 0.25 * mre;
            w[(2 * i + 1) * d + 2 * j + 1] += 0.25 * mre;
            w[(2 * i) * d + 2 * j + 1] += -0.25 * mim;
            w[(2 * i + 1) * d + 2 * j] += 0.25 * mim;
        }
    }
    for a in 0..d {
        out[dom.axis_dir(a)] = w[a * d + a];
        for b in (a + 1)..d {
            let wab = 0.5 * (w[a * d + b] + w[b * d + a]);
            out[dom.diag_dir(a, b, true)] = 0.5 * wab;
            out[dom.diag_dir(a, b, false)] = -0.5 * wab;
        }
    }
}

/// Assembles sum_k c_k D_k over interior unknowns. Cut arms carry fixed
/// values; their contribution is added to `rhs` with a minus sign when
/// `fixed` is given.
fn assemble(
    dom: &GridDomain,
    coef: impl Fn(usize, &mut [f64]),
    fixed: Option<&[f64]>,
    rhs: &mut [f64],
) -> Csr {
    let ni = dom.interior_nodes().len();
    let nd = dom.dirs().len();
    let mut a = Csr::with_capacity(ni, ni * (2 * nd + 1));
    let mut c = vec![0.0; nd];
    let h2 = dom.h * dom.h;
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * nd + 1);
    for o in 0..ni {
        let q = dom.interior_nodes()[o];
        coef(o, &mut c);
        row.clear();
        let mut diag = 0.0;
        for k in 0..nd {
            if c[k] == 0.0 {
                continue;
            }
            let (tp, cp) = dom.arm(o, k, 0);
            let (tm, cm) = dom.arm(o, k, 1);
            let alpha = c[k] * 2.0 / ((tp + tm) * h2);
            diag -= alpha * (1.0 / tp + 1.0 / tm);
            for (side, t, cut) in [(0, tp, cp), (1, tm, cm)] {
                match cut {
                    Some(ci) => {
                        if let Some(g) = fixed {
                            rhs[o] -= alpha / t * g[ci];
                        }
                    }
                    None => {
                        let off = if side == 0 {
                            dom.offset(k)
                        } else {
                            -dom.offset(k)
                        };
                        let p = (q as isize + off) as usize;
                        let po = dom.ordinal(p).expect("uncut arm ends at an interior node");
                        row.push((po, alpha / t));
                    }
                }
            }
        }
        a.push(o, diag);
        for &(col, v) in &row {
            a.push(col, v);
        }
        a.end_row();
    }
    a
}

pub fn solve_dirichlet(
    domain: &Arc<GridDomain>,
    f: &GridFunction,
    g: &dyn Fn(&[f64]) -> f64,
    cfg: &SolveConfig,
) -> Result<(GridFunction, SolveReport)> {
    if cfg.init_mode == InitMode::Supplied {
        return Err(Error::InvalidInput(
            "supplied initialization needs solve_dirichlet_with_init".into(),
        ));
    }
    let init = initial_guess(domain, g, cfg)?;
    solve_inner(domain, f, g, cfg, init.values, init.linear)
}

pub fn solve_dirichlet_with_init(
    domain: &Arc<GridDomain>,
    f: &GridFunction,
    g: &dyn Fn(&[f64]) -> f64,
    cfg: &SolveConfig,
    init: &GridFunction,
) -> Result<(GridFunction, SolveReport)> {
    if !Arc::ptr_eq(domain, &init.domain) || !Arc::ptr_eq(domain, &f.domain) {
        return Err(Error::DomainMismatch);
    }
    solve_inner(domain, f, g, cfg, init.values.clone(), 0)
}

struct Init {
    values: Vec<f64>,
    linear: usize,
}

/// |z|^2 - 1 plus the discrete harmonic extension of the boundary mismatch.
fn initial_guess(
    dom: &Arc<GridDomain>,
    g: &dyn Fn(&[f64]) -> f64,
    cfg: &SolveConfig,
) -> Result<Init> {
    let dim = dom.dim;
    let p = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() - 1.0;
    let mismatch: Vec<f64> = dom
        .cuts()
        .iter()
        .map(|c| g(&c.point[..dim]) - p(&c.point[..dim]))
        .collect();
    let ni = dom.interior_nodes().len();
    let mut rhs = vec![0.0; ni];
    let a = assemble(
        dom,
        |_, c| {
            c.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..dim {
                c[a] = 1.0;
            }
        },
        Some(&mismatch),
        &mut rhs,
    );
    let mut hx = vec![0.0; ni];
    let linear = if mismatch.iter().any(|m| *m != 0.0) {
        bicgstab(&a, &rhs, &mut hx, cfg.linear_tol, cfg.linear_max_iters)?
    } else {
        0
    };
    let mut values = vec![f64::NAN; dom.node_count()];
    for (o, &q) in dom.interior_nodes().iter().enumerate() {
        values[q] = p(&dom.coord(q)[..dim]) + hx[o];
    }
    Ok(Init { values, linear })
}

fn solve_inner(
    dom: &Arc<GridDomain>,
    f: &GridFunction,
    g: &dyn Fn(&[f64]) -> f64,
    cfg: &SolveConfig,
    mut values: Vec<f64>,
    mut linear_iterations: usize,
) -> Result<(GridFunction, SolveReport)> {
    cfg.validate()?;
    if !Arc::ptr_eq(dom, &f.domain) {
        return Err(Error::DomainMismatch);
    }
    let dim = dom.dim;
    let interior = dom.interior_nodes();
    let ni = interior.len();
    let mut logf = Vec::with_capacity(ni);
    for &q in interior {
        let v = f.values[q];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "right side must be positive and finite, got {v} at node {q}"
            )));
        }
        logf.push(v.ln());
    }
    let trace: Vec<f64> = dom.cuts().iter().map(|c| g(&c.point[..dim])).collect();
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("boundary data is not finite".into()));
    }
    // nodes outside the interior keep NaN; the stencil reads only the trace there

    let evaluate = |vals: &[f64]| -> (Vec<Local>, f64, f64) {
        let mut res: f64 = 0.0;
        let mut lmin = f64::INFINITY;
        let locs: Vec<Local> = (0..ni)
            .map(|o| {
                let l = local(dom, vals, &trace, o);
                lmin = lmin.min(l.min_eig);
                res = res.max((l.logdet - logf[o]).abs());
                l
            })
            .collect();
        if lmin.is_nan() {
            lmin = f64::NEG_INFINITY;
        }
        (locs, if res.is_nan() { f64::INFINITY } else { res }, lmin)
    };

    let (mut locs, mut residual, mut lmin) = evaluate(&values);
    if lmin < cfg.psh_floor {
        return Err(Error::Degeneracy {
            iteration: 0,
            min_eigenvalue: lmin,
        });
    }
    let nd = dom.dirs().len();
    let mut iterations = 0;
    while residual > cfg.newton_tol {
        if iterations >= cfg.max_iters {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        iterations += 1;
        let mut rhs: Vec<f64> = (0..ni).map(|o| -(locs[o].logdet - logf[o])).collect();
        let jac = assemble(
            dom,
            |o, c| direction_coefficients(dom, &locs[o].inv, &mut c[..nd]),
            None,
            &mut rhs,
        );
        let mut delta = vec![0.0; ni];
        linear_iterations +=
            bicgstab(&jac, &rhs, &mut delta, cfg.linear_tol, cfg.linear_max_iters)?;

        let mut step = cfg.damping;
        let mut halvings = 0;
        loop {
            let mut trial = values.clone();
            for (o, &q) in interior.iter().enumerate() {
                trial[q] += step * delta[o];
            }
            let (l2, r2, m2) = evaluate(&trial);
            if m2 >= cfg.psh_floor {
                values = trial;
                locs = l2;
                residual = r2;
                lmin = m2;
                break;
            }
            halvings += 1;
            if halvings > 5 {
                return Err(Error::Degeneracy {
                    iteration: iterations,
                    min_eigenvalue: m2,
                });
            }
            step *= 0.5;
        }
    }

    let mut u = GridFunction {
        domain: dom.clone(),
        values,
        trace: Some(trace),
    };
    u.extrapolate_boundary();
    let mut boundary_max_error: f64 = 0.0;
    for i in 0..dom.node_count() {
        if dom.kind(i) == NodeKind::Boundary {
            let e = (u.values[i] - g(&dom.coord(i)[..dim])).abs();
            boundary_max_error = boundary_max_error.max(e);
        }
    }
    Ok((
        u,
        SolveReport {
            iterations,
            residual,
            min_eigenvalue: lmin,
            boundary_max_error,
            linear_iterations,
        },
    ))
}

/// Node-wise log det u_{i jbar} - log f over the interior.
pub fn residual_field(u: &GridFunction, f: &GridFunction) -> Result<Vec<f64>> {
    u.check_same(f)?;
    let dom = &u.domain;
    let trace = match &u.trace {
        Some(t) => t.clone(),
        None => u.boundary_trace(),
    };
    Ok((0..dom.interior_nodes().len())
        .map(|o| local(dom, &u.values, &trace, o).logdet - f.values[dom.interior_nodes()[o]].ln())
        .collect())
}

/// Smallest complex-Hessian eigenvalue over the interior.
pub fn min_hessian_eigenvalue(u: &GridFunction) -> f64 {
    let dom = &u.domain;
    let trace = match &u.trace {
        Some(t) => t.clone(),
        None => u.boundary_trace(),
    };
    (0..dom.interior_nodes().len())
        .map(|o| local(dom, &u.values, &trace, o).min_eig)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichCertificate {
    pub epsilon: f64,
    /// worst of (1+eps)^{1/n} v0 - u over the interior (positive = violated)
    pub lower_violation: f64,
    /// worst of u - (1-eps)^{1/n} v0
    pub upper_violation: f64,
    pub max_abs_difference: f64,
    pub difference_bound: f64,
    pub slack: f64,
    pub passes: bool,
}

const TRACE_TOL: f64 = 1e-8;

/// Checks (1+eps)^{1/n} v0 <= u <= (1-eps)^{1/n} v0 and |u - v0| <= 4 eps.
pub fn comparison_sandwich(
    u: &GridFunction,
    v0: &GridFunction,
    eps: f64,
    n: usize,
) -> Result<SandwichCertificate> {
    u.check_same(v0)?;
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidInput(format!("eps = {eps} outside [0, 0.5)")));
    }
    if n != u.domain.n {
        return Err(Error::InvalidInput(format!(
            "dimension {n} does not match the domain"
        )));
    }
    for (name, w) in [("u", u), ("v0", v0)] {
        let worst = w
            .boundary_trace()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > TRACE_TOL {
            return Err(Error::Precondition(format!(
                "{name} does not vanish on the boundary (|trace| up to {worst:e})"
            )));
        }
    }
    let lo = (1.0 + eps).powf(1.0 / n as f64);
    let hi = (1.0 - eps).powf(1.0 / n as f64);
    let mut lower: f64 = f64::NEG_INFINITY;
    let mut upper: f64 = f64::NEG_INFINITY;
    let mut diff: f64 = 0.0;
    for &q in u.domain.interior_nodes() {
        let (a, b) = (u.values[q], v0.values[q]);
        lower = lower.max(lo * b - a);
        upper = upper.max(a - hi * b);
        diff = diff.max((a - b).abs());
    }
    let slack = 10.0 * u.domain.h * u.domain.h;
    let bound = 4.0 * eps;
    Ok(SandwichCertificate {
        epsilon: eps,
        lower_violation: lower,
        upper_violation: upper,
        max_abs_difference: diff,
        difference_bound: bound,
        slack,
        passes: lower <= slack && upper <= slack && diff <= bound + slack,
    })
}

/// Returns (sup(v - u) - sup_boundary(v - u), ||f - g||_{L^q}^{1/n}).
pub fn stability_gap(
    u: &GridFunction,
    v: &GridFunction,
    f: &GridFunction,
    g: &GridFunction,
    q: f64,
) -> Result<(f64, f64)> {
    u.check_same(v)?;
    u.check_same(f)?;
    u.check_same(g)?;
    if !(q > 1.0) {
        return Err(Error::InvalidInput(format!(
            "exponent q = {q} must exceed 1"
        )));
    }
    let dom = &u.domain;
    let sup_in = dom
        .interior_nodes()
        .iter()
        .map(|&i| v.values[i] - u.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let (tu, tv) = (u.boundary_trace(), v.boundary_trace());
    let sup_bd = tu
        .iter()
        .zip(&tv)
        .map(|(a, b)| b - a)
        .fold(f64::NEG_INFINITY, f64::max);
    let vol = dom.cell_volume();
    let norm = dom
        .interior_nodes()
        .iter()
        .map(|&i| (f.values[i] - g.values[i]).abs().powf(q) * vol)
        .sum::<f64>()
        .powf(1.0 / q);
    Ok((sup_in - sup_bd, norm.powf(1.0 / dom.n as f64)))
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub gamma: f64,
    /// worst of |z|^2 - 1 - 3 gamma - v0 over the interior
    pub lower_violation: f64,
    /// worst of v0 - (|z|^2 - 1 + 3 gamma)
    pub upper_violation: f64,
    pub slack: f64,
    pub passes: bool,
}

/// Node-wise |z|^2 - 1 - 3 gamma <= v0 <= |z|^2 - 1 + 3 gamma with slack 10 h^2.
pub fn barrier_certificate(v0: &GridFunction, gamma: f64) -> BarrierCertificate {
    let dom = &v0.domain;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for &q in dom.interior_nodes() {
        let x = dom.coord(q);
        let p = x[..dom.dim].iter().map(|v| v * v).sum::<f64>() - 1.0;
        lower = lower.max(p - 3.0 * gamma - v0.values[q]);
        upper = upper.max(v0.values[q] - p - 3.0 * gamma);
    }
    let slack = 10.0 * dom.h * dom.h;
    BarrierCertificate {
        gamma,
        lower_violation: lower,
        upper_violation: upper,
        slack,
        passes: lower <= slack && upper <= slack,
    }
}
