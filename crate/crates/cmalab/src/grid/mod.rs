//! Lattice discretization of domains in C^n = R^{2n}, n in {1, 2}.
//!
//! Nodes are stored densely over the box `[-L, L]^{2n}`, last axis fastest.
//! Every interior node carries `2 * d^2` stencil arms (axes and the
//! diagonals `e_a +- e_b`); an arm that leaves the domain is cut at the
//! continuum boundary and its crossing fraction is kept for
//! Shortley-Weller differencing.

mod calculus;
mod function;
pub mod io;

pub(crate) use calculus::{complex_from_raw, hessian_raw};
pub use calculus::{
    complex_hessian, gradient, interpolation_check, laplacian, real_hessian, third_derivative_norm,
    trace_inverse, InterpolationReport, OrderCheck,
};
pub use function::GridFunction;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealQuadratic;

pub const DEFAULT_NODE_CAP: usize = 20_000_000;
const NOT_INTERIOR: u32 = u32::MAX;
/// Nodes closer than this fraction of h to the continuum boundary are not
/// interior, which keeps every crossing fraction away from zero.
const MIN_GAP: f64 = 1e-3;

/// A point in R^{2n}; only the first `2n` entries are used.
pub type Pt = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Exterior,
    Interior,
    Boundary,
}

/// Continuum domain description.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Ball {
        radius: f64,
    },
    /// Radius `1 + gamma * T3(x1 / |x|)` with `T3(t) = 4t^3 - 3t`.
    PerturbedBall {
        gamma: f64,
    },
}

impl ShapeSpec {
    pub fn level(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        match *self {
            ShapeSpec::Ball { radius } => r - radius,
            ShapeSpec::PerturbedBall { gamma } => {
                let t = if r > 0.0 { x[0] / r } else { 0.0 };
                r - (1.0 + gamma * (4.0 * t * t * t - 3.0 * t))
            }
        }
    }

    pub fn outer_radius(&self) -> f64 {
        match *self {
            ShapeSpec::Ball { radius } => radius,
            ShapeSpec::PerturbedBall { gamma } => 1.0 + gamma,
        }
    }

    pub fn radius_bounds(&self) -> (f64, f64) {
        match *self {
            ShapeSpec::Ball { radius } => (radius, radius),
            ShapeSpec::PerturbedBall { gamma } => (1.0 - gamma, 1.0 + gamma),
        }
    }
}

/// Level function given by a quadratic model plus a multilinearly
/// interpolated nodal residual on a box lattice. Negative inside.
#[derive(Clone, Debug)]
pub struct SampledLevel {
    pub dim: usize,
    pub res: usize,
    pub half_width: f64,
    pub residual: Vec<f64>,
    pub model: RealQuadratic,
}

impl SampledLevel {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match multilinear(&self.residual, self.dim, self.res, self.half_width, x) {
            Some(r) => r + self.model.eval(x),
            None => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Shape {
    Spec(ShapeSpec),
    Sampled(Arc<SampledLevel>),
}

impl Shape {
    pub fn level(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Spec(s) => s.level(x),
            Shape::Sampled(s) => s.eval(x),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Shape::Spec(ShapeSpec::Ball { radius }) => format!("ball(r={radius})"),
            Shape::Spec(ShapeSpec::PerturbedBall { gamma }) => {
                format!("perturbed_ball(gamma={gamma})")
            }
            Shape::Sampled(_) => "sampled_level_set".to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cut {
    pub ordinal: u32,
    pub dir: u16,
    /// 0 for the `+d` arm, 1 for `-d`.
    pub side: u8,
    pub theta: f64,
    pub point: Pt,
}

#[derive(Debug)]
pub struct GridDomain {
    pub n: usize,
    pub dim: usize,
    pub res: usize,
    pub half_width: f64,
    pub h: f64,
    pub shape: Shape,
    kind: Vec<NodeKind>,
    interior: Vec<usize>,
    ordinal: Vec<u32>,
    dirs: Vec<[i32; 4]>,
    offsets: Vec<isize>,
    theta: Vec<f64>,
    cut_index: Vec<u32>,
    cuts: Vec<Cut>,
    strides: [usize; 4],
}

pub fn build_domain(n: usize, shape: &ShapeSpec, resolution: usize) -> Result<Arc<GridDomain>> {
    if let ShapeSpec::PerturbedBall { gamma } = shape {
        if !(0.0..0.5).contains(gamma) {
            return Err(Error::InvalidInput(format!(
                "gamma = {gamma} outside [0, 0.5)"
            )));
        }
    }
    if let ShapeSpec::Ball { radius } = shape {
        if !(*radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ball radius {radius} must be positive"
            )));
        }
    }
    GridDomain::new(
        n,
        Shape::Spec(shape.clone()),
        resolution,
        shape.outer_radius(),
        DEFAULT_NODE_CAP,
        None,
    )
    .map(Arc::new)
}

impl GridDomain {
    /// Builds the lattice over `[-half_width, half_width]^{2n}`. When `seed`
    /// is given, the interior is the lattice component of `{level < 0}`
    /// containing that node.
    pub fn new(
        n: usize,
        shape: Shape,
        res: usize,
        half_width: f64,
        cap: usize,
        seed: Option<usize>,
    ) -> Result<GridDomain> {
        if n != 1 && n != 2 {
            return Err(Error::InvalidInput(format!(
                "complex dimension {n} not in {{1, 2}}"
            )));
        }
        if res < 9 {
            return Err(Error::InvalidInput(format!("resolution {res} below 9")));
        }
        let dim = 2 * n;
        let total = (res as u128).pow(dim as u32);
        if total > cap as u128 {
            return Err(Error::MemoryCap {
                nodes: total.min(usize::MAX as u128) as usize,
                cap,
            });
        }
        let total = total as usize;
        let h = 2.0 * half_width / (res - 1) as f64;
        let mut strides = [0usize; 4];
        for a in 0..dim {
            strides[a] = res.pow((dim - 1 - a) as u32);
        }
        let dirs = stencil_dirs(dim);
        let offsets: Vec<isize> = dirs
            .iter()
            .map(|d| (0..dim).map(|a| d[a] as isize * strides[a] as isize).sum())
            .collect();

        let mut dom = GridDomain {
            n,
            dim,
            res,
            half_width,
            h,
            shape,
            kind: vec![NodeKind::Exterior; total],
            interior: Vec::new(),
            ordinal: vec![NOT_INTERIOR; total],
            dirs,
            offsets,
            theta: Vec::new(),
            cut_index: Vec::new(),
            cuts: Vec::new(),
            strides,
        };

        let mut inside = vec![false; total];
        for idx in 0..total {
            if dom.on_box_face(idx) {
                continue;
            }
            let x = dom.coord(idx);
            inside[idx] = dom.shape.level(&x[..dim]) < -MIN_GAP * h;
        }
        if let Some(s) = seed {
            if !inside[s] {
                return Err(Error::InvalidInput(format!(
                    "seed node {s} is not inside the domain"
                )));
            }
            let mut keep = vec![false; total];
            let mut queue = VecDeque::from([s]);
            keep[s] = true;
            while let Some(q) = queue.pop_front() {
                for a in 0..dim {
                    for p in dom.axis_neighbors(q, a) {
                        if inside[p] && !keep[p] {
                            keep[p] = true;
                            queue.push_back(p);
                        }
                    }
                }
            }
            inside = keep;
        }
        for idx in 0..total {
            if inside[idx] {
                dom.ordinal[idx] = dom.interior.len() as u32;
                dom.interior.push(idx);
                dom.kind[idx] = NodeKind::Interior;
            }
        }
        if dom.interior.is_empty() {
            return Err(Error::InvalidInput("domain has no interior nodes".into()));
        }

        let nd = dom.dirs.len();
        let ni = dom.interior.len();
        dom.theta = vec![1.0; ni * nd * 2];
        dom.cut_index = vec![NOT_INTERIOR; ni * nd * 2];
        for o in 0..ni {
            let q = dom.interior[o];
            let xq = dom.coord(q);
            for k in 0..nd {
                for side in 0..2u8 {
                    let off = if side == 0 {
                        dom.offsets[k]
                    } else {
                        -dom.offsets[k]
                    };
                    let p = (q as isize + off) as usize;
                    if inside[p] {
                        continue;
                    }
                    if dom.on_box_face(p) && dom.shape.level(&dom.coord(p)[..dim]) < 0.0 {
                        return Err(Error::InvalidInput(
                            "continuum domain reaches the grid box".into(),
                        ));
                    }
                    dom.kind[p] = NodeKind::Boundary;
                    let sgn = if side == 0 { 1.0 } else { -1.0 };
                    let mut step = [0.0; 4];
                    for a in 0..dim {
                        step[a] = sgn * dom.dirs[k][a] as f64 * h;
                    }
                    let theta = dom.crossing(&xq, &step);
                    let mut point = [0.0; 4];
                    for a in 0..dim {
                        point[a] = xq[a] + theta * step[a];
                    }
                    let slot = (o * nd + k) * 2 + side as usize;
                    dom.theta[slot] = theta;
                    dom.cut_index[slot] = dom.cuts.len() as u32;
                    dom.cuts.push(Cut {
                        ordinal: o as u32,
                        dir: k as u16,
                        side,
                        theta,
                        point,
                    });
                }
            }
        }
        Ok(dom)
    }

    fn crossing(&self, x: &Pt, step: &Pt) -> f64 {
        let dim = self.dim;
        let f = |t: f64| {
            let mut y = [0.0; 4];
            for a in 0..dim {
                y[a] = x[a] + t * step[a];
            }
            self.shape.level(&y[..dim])
        };
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let (mut fa, mut fb) = (f(a), f(b));
        if !(fb >= 0.0) && fb.is_finite() {
            return 1.0;
        }
        if !fb.is_finite() {
            // step into an undefined region: bisect on finiteness first
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fm.is_finite() && fm < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return b.max(1e-12);
        }
        // Illinois variant of regula falsi
        let mut side = 0i8;
        for _ in 0..100 {
            let c = (a * fb - b * fa) / (fb - fa);
            let fc = f(c);
            if fc.abs() < 1e-15 || (b - a) < 1e-14 {
                return c.clamp(1e-12, 1.0);
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        (0.5 * (a + b)).clamp(1e-12, 1.0)
    }

    pub fn node_count(&self) -> usize {
        self.kind.len()
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.kind[idx]
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.kind[idx] == NodeKind::Interior
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.kind[idx] == NodeKind::Boundary
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.kind.iter().map(|k| *k == NodeKind::Interior).collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        self.kind.iter().map(|k| *k == NodeKind::Boundary).collect()
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.kind.len())
            .filter(|&i| self.kind[i] == NodeKind::Boundary)
            .collect()
    }

    pub fn ordinal(&self, idx: usize) -> Option<usize> {
        let o = self.ordinal[idx];
        (o != NOT_INTERIOR).then_some(o as usize)
    }

    pub fn dirs(&self) -> &[[i32; 4]] {
        &self.dirs
    }

    pub fn offset(&self, k: usize) -> isize {
        self.offsets[k]
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    /// Crossing fraction and cut slot of arm (ordinal, dir, side).
    #[inline]
    pub fn arm(&self, ordinal: usize, k: usize, side: usize) -> (f64, Option<usize>) {
        let slot = (ordinal * self.dirs.len() + k) * 2 + side;
        let c = self.cut_index[slot];
        (self.theta[slot], (c != NOT_INTERIOR).then_some(c as usize))
    }

    /// Index of direction `e_a` (a < dim) or `e_a + s e_b` for a < b.
    pub fn axis_dir(&self, a: usize) -> usize {
        a
    }

    pub fn diag_dir(&self, a: usize, b: usize, plus: bool) -> usize {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let mut p = 0;
        for i in 0..a {
            p += self.dim - 1 - i;
        }
        p += b - a - 1;
        self.dim + 2 * p + if plus { 0 } else { 1 }
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 4] {
        let mut m = [0usize; 4];
        let mut r = idx;
        for a in 0..self.dim {
            m[a] = r / self.strides[a];
            r %= self.strides[a];
        }
        m
    }

    pub fn index_of(&self, m: &[usize]) -> usize {
        (0..self.dim).map(|a| m[a] * self.strides[a]).sum()
    }

    pub fn coord(&self, idx: usize) -> Pt {
        let m = self.multi_index(idx);
        let mut x = [0.0; 4];
        for a in 0..self.dim {
            x[a] = -self.half_width + m[a] as f64 * self.h;
        }
        x
    }

    /// Nearest lattice node to `x`, if inside the box.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut m = [0usize; 4];
        for a in 0..self.dim {
            let t = ((x[a] + self.half_width) / self.h).round();
            if t < 0.0 || t > (self.res - 1) as f64 {
                return None;
            }
            m[a] = t as usize;
        }
        Some(self.index_of(&m))
    }

    pub fn on_box_face(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim).any(|a| m[a] == 0 || m[a] == self.res - 1)
    }

    pub fn axis_neighbors(&self, idx: usize, a: usize) -> impl Iterator<Item = usize> {
        let m = self.multi_index(idx);
        let s = self.strides[a];
        let lo = (m[a] > 0).then(|| idx - s);
        let hi = (m[a] + 1 < self.res).then(|| idx + s);
        lo.into_iter().chain(hi)
    }

    /// All nodes at Chebyshev lattice distance <= 1 (including idx).
    pub fn cell_neighbors(&self, idx: usize) -> Vec<usize> {
        let m = self.multi_index(idx);
        let mut out = Vec::with_capacity(81);
        let count = 3usize.pow(self.dim as u32);
        'outer: for c in 0..count {
            let mut r = c;
            let mut mm = [0usize; 4];
            for a in 0..self.dim {
                let d = (r % 3) as isize - 1;
                r /= 3;
                let v = m[a] as isize + d;
                if v < 0 || v >= self.res as isize {
                    continue 'outer;
                }
                mm[a] = v as usize;
            }
            out.push(self.index_of(&mm));
        }
        out
    }

    /// Measure of a node set: count times h^{2n}.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn origin_node(&self) -> Option<usize> {
        self.nearest_node(&[0.0; 4][..self.dim]).filter(|&i| {
            let x = self.coord(i);
            x[..self.dim]
                .iter()
                .all(|v| v.abs() < 1e-12 * self.half_width.max(1.0))
        })
    }

    /// Radii of boundary crossing points: (min, max).
    pub fn crossing_radii(&self, center: &[f64]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for c in &self.cuts {
            let r = (0..self.dim)
                .map(|a| (c.point[a] - center[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    pub fn same_as(&self, other: &GridDomain) -> bool {
        std::ptr::eq(self, other)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides[..self.dim]
    }
}

fn stencil_dirs(dim: usize) -> Vec<[i32; 4]> {
    let mut dirs = Vec::new();
    for a in 0..dim {
        let mut d = [0; 4];
        d[a] = 1;
        dirs.push(d);
    }
    for a in 0..dim {
        for b in (a + 1)..dim {
            let mut p = [0; 4];
            p[a] = 1;
            p[b] = 1;
            let mut m = [0; 4];
            m[a] = 1;
            m[b] = -1;
            dirs.push(p);
            dirs.push(m);
        }
    }
    dirs
}

/// Multilinear interpolation of a dense box field; `None` outside the box
/// or when a corner value is not finite.
pub fn multilinear(
    values: &[f64],
    dim: usize,
    res: usize,
    half_width: f64,
    x: &[f64],
) -> Option<f64> {
    let h = 2.0 * half_width / (res - 1) as f64;
    let mut base = 0usize;
    let mut t = [0.0; 4];
    let mut strides = [0usize; 4];
    for a in 0..dim {
        strides[a] = res.pow((dim - 1 - a) as u32);
    }
    for a in 0..dim {
        let s = (x[a] + half_width) / h;
        if !(s >= -1e-9 && s <= (res - 1) as f64 + 1e-9) {
            return None;
        }
        let i = (s.floor() as isize).clamp(0, res as isize - 2) as usize;
        t[a] = (s - i as f64).clamp(0.0, 1.0);
        base += i * strides[a];
    }
    let mut acc = 0.0;
    for c in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut idx = base;
        for a in 0..dim {
            if c >> a & 1 == 1 {
                w *= t[a];
                idx += strides[a];
            } else {
                w *= 1.0 - t[a];
            }
        }
        if w == 0.0 {
            continue;
        }
        let v = values[idx];
        if !v.is_finite() {
            return None;
        }
        acc += w * v;
    }
    Some(acc)
}

#[cfg(test)]
mod tests;
