//! Taylor splitting into pluriharmonic and Hermitian parts, ellipsoid
//! normalization, sections `{u - h <= u(x0) + mu}` and their chains.

mod chain;

pub use chain::{
    construct_section_chain, rescale_to_unit, transport, ChainConfig, ChainContext, ChainLevel,
    ChainRecord, LevelRecord, ProfileSample, SectionChain, Transported,
};

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, real_hessian, GridDomain, GridFunction};
use crate::linalg::{to_complex, CMat, HermitianMatrix, HermitianTransform, RealQuadratic, C64};

pub const NORMALIZATION_TOL: f64 = 1e-6;

/// h(z) = Re(sum l_i w_i + sum b_ij w_i w_j), w = z - center.
#[derive(Clone, Debug, PartialEq)]
pub struct PluriharmonicPoly {
    pub center: Vec<C64>,
    pub l: Vec<C64>,
    pub b: CMat,
}

impl PluriharmonicPoly {
    pub fn zero(center: Vec<C64>) -> Self {
        let n = center.len();
        PluriharmonicPoly {
            center,
            l: vec![C64::new(0.0, 0.0); n],
            b: CMat::zeros(n, n),
        }
    }

    pub fn new(center: Vec<C64>, l: Vec<C64>, b: CMat) -> Self {
        let b = (&b + b.transpose()) * C64::new(0.5, 0.0);
        PluriharmonicPoly { center, l, b }
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    pub fn eval_c(&self, z: &[C64]) -> f64 {
        let n = self.n();
        let w: Vec<C64> = (0..n).map(|i| z[i] - self.center[i]).collect();
        let mut s = C64::new(0.0, 0.0);
        for i in 0..n {
            s += self.l[i] * w[i];
            for j in 0..n {
                s += self.b[(i, j)] * w[i] * w[j];
            }
        }
        s.re
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_c(&to_complex(x))
    }

    /// Sum with another polynomial sharing the center.
    pub fn plus(&self, other: &PluriharmonicPoly) -> PluriharmonicPoly {
        let l = self.l.iter().zip(&other.l).map(|(a, b)| a + b).collect();
        PluriharmonicPoly {
            center: self.center.clone(),
            l,
            b: &self.b + &other.b,
        }
    }

    /// eta * self(s^{-1} M (z - x0)) as a polynomial centered at x0; self
    /// must be centered at the origin.
    pub fn pull_back(&self, x0: &[C64], s: f64, m: &CMat, eta: f64) -> PluriharmonicPoly {
        let n = self.n();
        let lv = nalgebra::DVector::from_column_slice(&self.l);
        let l2 = m.transpose() * lv * C64::new(eta / s, 0.0);
        let b2 = m.transpose() * &self.b * m * C64::new(eta / (s * s), 0.0);
        PluriharmonicPoly {
            center: x0.to_vec(),
            l: (0..n).map(|i| l2[i]).collect(),
            b: b2,
        }
    }

    /// Real quadratic in y = x - center.
    pub fn real_quadratic(&self) -> RealQuadratic {
        let n = self.n();
        let d = 2 * n;
        let mut q = RealQuadratic::zero(d);
        for i in 0..n {
            q.g[2 * i] = self.l[i].re;
            q.g[2 * i + 1] = -self.l[i].im;
            for j in 0..n {
                let b = self.b[(i, j)];
                q.hess[(2 * i) * d + 2 * j] = 2.0 * b.re;
                q.hess[(2 * i + 1) * d + 2 * j + 1] = -2.0 * b.re;
                q.hess[(2 * i) * d + 2 * j + 1] = -2.0 * b.im;
                q.hess[(2 * i + 1) * d + 2 * j] = -2.0 * b.im;
            }
        }
        q
    }

    pub fn from_coefficients(c: &ShiftCoefficients) -> Result<PluriharmonicPoly> {
        let n = c.center.len();
        if c.l.len() != n || c.b.len() != n || c.b.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("shift coefficients of mixed dimension".into()));
        }
        let z = |p: &[f64; 2]| C64::new(p[0], p[1]);
        Ok(PluriharmonicPoly {
            center: c.center.iter().map(z).collect(),
            l: c.l.iter().map(z).collect(),
            b: CMat::from_fn(n, n, |i, j| z(&c.b[i][j])),
        })
    }

    pub fn coefficients(&self) -> ShiftCoefficients {
        let n = self.n();
        ShiftCoefficients {
            center: self.center.iter().map(|c| [c.re, c.im]).collect(),
            l: self.l.iter().map(|c| [c.re, c.im]).collect(),
            b: (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| [self.b[(i, j)].re, self.b[(i, j)].im])
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCoefficients {
    pub center: Vec<[f64; 2]>,
    pub l: Vec<[f64; 2]>,
    pub b: Vec<Vec<[f64; 2]>>,
}

/// {z : sum a_{i jbar} (z - x0)_i conj((z - x0)_j) <= height}
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    pub a: HermitianMatrix,
    pub height: f64,
}

impl Ellipsoid {
    pub fn level(&self, x: &[f64]) -> f64 {
        let w: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        self.a.quadratic_form(&to_complex(&w))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.level(x) <= self.height
    }

    pub fn dilate(&self, c: f64) -> Ellipsoid {
        Ellipsoid {
            center: self.center.clone(),
            a: self.a.clone(),
            height: c * c * self.height,
        }
    }
}

/// Splits v at x0 into v(x0) + h + sum A w wbar + O(|w|^3).
pub fn taylor_split(v: &GridFunction, x0: usize) -> Result<(PluriharmonicPoly, HermitianMatrix)> {
    let g = gradient(v, x0)?;
    let h = real_hessian(v, x0)?;
    Ok(split_derivatives(
        &v.domain.coord(x0)[..v.domain.dim],
        &g,
        &h,
    ))
}

pub(crate) fn split_derivatives(
    x0: &[f64],
    g: &[f64],
    h: &DMatrix<f64>,
) -> (PluriharmonicPoly, HermitianMatrix) {
    let n = g.len() / 2;
    let l: Vec<C64> = (0..n).map(|i| C64::new(g[2 * i], -g[2 * i + 1])).collect();
    let mut b = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
            b[(i, j)] = C64::new(
                0.25 * (h[(xi, xj)] - h[(yi, yj)]),
                -0.25 * (h[(xi, yj)] + h[(yi, xj)]),
            );
        }
    }
    (
        PluriharmonicPoly::new(to_complex(x0), l, b),
        HermitianMatrix::from_real_hessian(h),
    )
}

/// T = U diag(lambda^{-1/2}) U* for the unitary eigendecomposition of
/// conj(A), so that sum a_{i jbar} (T z)_i conj((T z)_j) = |z|^2.
pub fn normalize_transform(a: &HermitianMatrix) -> Result<HermitianTransform> {
    let conj = HermitianMatrix::from_matrix(&a.entries().map(|c| c.conj()));
    let (vals, vecs) = conj.eigen();
    if !(vals[0] > 0.0) {
        return Err(Error::DegenerateHessian {
            node: usize::MAX,
            min_eigenvalue: vals[0],
        });
    }
    let det: f64 = vals.iter().product();
    if (det - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Precondition(format!(
            "ellipsoid coefficients have det {det}, expected 1"
        )));
    }
    let n = vals.len();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = C64::new(vals[i].powf(-0.5), 0.0);
    }
    Ok(HermitianTransform::from_matrix(&vecs * d * vecs.adjoint()))
}

/// Level ratio from sigma and the regime constant, capped below 0.009.
pub fn mu0_from_sigma(sigma: f64, gamma_n: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma <= 1.0 && gamma_n > 0.0 && gamma_n <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "sigma, gamma_n must lie in (0, 1], got {sigma}, {gamma_n}"
        )));
    }
    let m = sigma.min(gamma_n) / (20.0 * 3f64.powf(1.5));
    Ok((m * m).min(0.009 * (1.0 - 1e-12)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub c_in: f64,
    pub c_out: f64,
}

impl FitReport {
    pub fn within(&self, tol: f64) -> bool {
        self.c_in >= 1.0 - tol && self.c_out <= 1.0 + tol
    }
}

#[derive(Clone, Debug)]
pub struct Section {
    pub base: usize,
    pub base_point: Vec<f64>,
    pub height: f64,
    pub shift: PluriharmonicPoly,
    /// Sorted lattice indices.
    pub nodes: Vec<usize>,
    pub domain: Arc<GridDomain>,
    pub fitted: Option<Ellipsoid>,
    pub transform: Option<HermitianTransform>,
    pub fit: Option<FitReport>,
}

impl Section {
    pub fn contains_node(&self, idx: usize) -> bool {
        self.nodes.binary_search(&idx).is_ok()
    }

    pub fn measure(&self) -> f64 {
        self.nodes.len() as f64 * self.domain.cell_volume()
    }

    /// Attaches the ellipsoid with coefficients `a` and its fit report.
    pub fn attach_fit(&mut self, a: &HermitianMatrix) -> Result<FitReport> {
        let fit = fit_ellipsoid(self, a);
        self.transform = Some(normalize_transform(a)?);
        self.fitted = Some(Ellipsoid {
            center: self.base_point.clone(),
            a: a.clone(),
            height: self.height,
        });
        self.fit = Some(fit);
        Ok(fit)
    }

    /// Largest distance from the base point over the node set.
    pub fn radius(&self) -> f64 {
        let d = self.domain.dim;
        self.nodes
            .iter()
            .map(|&i| {
                let x = self.domain.coord(i);
                (0..d)
                    .map(|a| (x[a] - self.base_point[a]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Connected component of `{u - h <= u(x0) + mu}` containing x0.
pub fn build_section(
    u: &GridFunction,
    x0: usize,
    mu: f64,
    h: &PluriharmonicPoly,
) -> Result<Section> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(format!("height {mu} must be positive")));
    }
    let dom = &u.domain;
    if !dom.is_interior(x0) {
        return Err(Error::Precondition(format!(
            "base node {x0} is not interior"
        )));
    }
    let dim = dom.dim;
    let hq = h.real_quadratic();
    let hc: Vec<f64> = h.center.iter().flat_map(|c| [c.re, c.im]).collect();
    let shift_at = |i: usize| {
        let x = dom.coord(i);
        let y: Vec<f64> = (0..dim).map(|a| x[a] - hc[a]).collect();
        hq.eval(&y)
    };
    let threshold = u.values[x0] - shift_at(x0) + mu;
    let mut seen = vec![false; dom.node_count()];
    let mut nodes = Vec::new();
    let mut queue = VecDeque::from([x0]);
    seen[x0] = true;
    while let Some(q) = queue.pop_front() {
        nodes.push(q);
        for a in 0..dim {
            for p in dom.axis_neighbors(q, a) {
                if seen[p] {
                    continue;
                }
                if !dom.is_interior(p) {
                    return Err(Error::SectionEscape {
                        base: x0,
                        height: mu,
                    });
                }
                seen[p] = true;
                if u.values[p] - shift_at(p) <= threshold {
                    queue.push_back(p);
                }
            }
        }
    }
    nodes.sort_unstable();
    Ok(Section {
        base: x0,
        base_point: dom.coord(x0)[..dim].to_vec(),
        height: mu,
        shift: h.clone(),
        nodes,
        domain: dom.clone(),
        fitted: None,
        transform: None,
        fit: None,
    })
}

/// c_in, c_out of the section against the ellipsoid of `a` at its height,
/// by enumeration of all box nodes.
pub fn fit_ellipsoid(s: &Section, a: &HermitianMatrix) -> FitReport {
    let dom = &s.domain;
    let dim = dom.dim;
    let mut member = vec![false; dom.node_count()];
    for &i in &s.nodes {
        member[i] = true;
    }
    let ratio = |i: usize| {
        let x = dom.coord(i);
        let w: Vec<f64> = (0..dim).map(|k| x[k] - s.base_point[k]).collect();
        (a.quadratic_form(&to_complex(&w)).max(0.0) / s.height).sqrt()
    };
    let mut c_out: f64 = 0.0;
    let mut c_in = f64::INFINITY;
    for i in 0..dom.node_count() {
        let r = ratio(i);
        if member[i] {
            c_out = c_out.max(r);
        } else {
            c_in = c_in.min(r);
        }
    }
    FitReport { c_in, c_out }
}

#[cfg(test)]
mod tests;
