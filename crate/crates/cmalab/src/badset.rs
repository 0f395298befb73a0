//! Good and bad sets D_k / A_k, convex envelopes with their contact sets,
//! touching paraboloids and the dyadic decay of m(A_k).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covering::ball_measure;
use crate::error::{Error, Result};
use crate::grid::{complex_hessian, gradient, real_hessian, GridDomain, GridFunction};
use crate::sections::{build_section, taylor_split, ChainContext, SectionChain};

/// Sweep tolerance of the envelope iteration.
pub const ENVELOPE_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 20_000;

/// Spread of the sections at one height: the squared ratio of the
/// (cell-corrected) normalized radius to sqrt(mu).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadSample {
    pub height: f64,
    pub spread: f64,
}

/// Section geometry seen from one base node. The node belongs to D_k iff
/// every recorded spread is at most 10^k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node: usize,
    pub point: Vec<f64>,
    pub samples: Vec<SpreadSample>,
    /// Reason the chain stopped early, if it did.
    pub truncated: Option<String>,
}

impl NodeProfile {
    pub fn spread(&self) -> f64 {
        self.samples.iter().map(|s| s.spread).fold(0.0, f64::max)
    }

    pub fn lowest_height(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.height).reduce(f64::min)
    }

    pub fn in_dk(&self, k: usize) -> bool {
        self.spread() <= 10f64.powi(k as i32)
    }
}

pub fn profile_from_chain(chain: &SectionChain, failure: Option<&Error>) -> NodeProfile {
    NodeProfile {
        node: chain.base,
        point: chain.base_point.clone(),
        samples: chain
            .levels
            .iter()
            .flat_map(|l| l.profile.iter())
            .map(|p| SpreadSample { height: p.height, spread: p.spread })
            .collect(),
        truncated: failure.map(|e| e.to_string()),
    }
}

/// Profile of explicitly given node sets, each read as S_mu(node) with
/// the identity normalization and one cell of slack.
pub fn profile_from_sets(domain: &GridDomain, node: usize, sets: &[(f64, Vec<usize>)]) -> NodeProfile {
    let c = domain.coord(node);
    let dim = domain.dim;
    let samples = sets
        .iter()
        .map(|(mu, nodes)| {
            let rmax = nodes
                .iter()
                .map(|&q| {
                    let x = domain.coord(q);
                    (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max);
            SpreadSample { height: *mu, spread: ((rmax - domain.h).max(0.0) / mu.sqrt()).powi(2) }
        })
        .collect();
    NodeProfile { node, point: c[..dim].to_vec(), samples, truncated: None }
}

/// Sections of u on its own grid at the given heights, cut with the
/// pluriharmonic part of u's Taylor expansion at the node.
pub fn direct_profile(u: &GridFunction, node: usize, heights: &[f64]) -> Result<NodeProfile> {
    let (shift, _) = taylor_split(u, node)?;
    let mut sets = Vec::with_capacity(heights.len());
    for &mu in heights {
        sets.push((mu, build_section(u, node, mu, &shift)?.nodes));
    }
    Ok(profile_from_sets(&u.domain, node, &sets))
}

/// Chains of `levels` levels at every node; a chain that breaks keeps the
/// profile built before the break.
pub fn build_profiles(ctx: &ChainContext, nodes: &[usize], sigma: f64, levels: usize) -> Result<Vec<NodeProfile>> {
    nodes
        .iter()
        .map(|&q| {
            let (chain, failure) = ctx.chain_partial(q, sigma, levels)?;
            Ok(profile_from_chain(&chain, failure.as_ref()))
        })
        .collect()
}

/// Interior nodes of the closed ball B_radius(0) on the sub-lattice of
/// the given stride through the box center.
pub fn sample_nodes(domain: &GridDomain, radius: f64, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mid = (domain.res - 1) / 2;
    (0..domain.node_count())
        .filter(|&i| domain.is_interior(i))
        .filter(|&i| {
            let m = domain.multi_index(i);
            (0..domain.dim).all(|a| m[a].abs_diff(mid) % stride == 0)
        })
        .filter(|&i| norm(&domain.coord(i)[..domain.dim]) <= radius + 1e-12)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub k: usize,
    pub nodes: Vec<usize>,
    /// `good[i]` iff `nodes[i]` lies in D_k.
    pub good: Vec<bool>,
}

impl Classification {
    pub fn good_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().zip(&self.good).filter(|(_, &g)| g).map(|(&q, _)| q)
    }

    pub fn bad_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().zip(&self.good).filter(|(_, &g)| !g).map(|(&q, _)| q)
    }
}

pub fn classify_dk(profiles: &[NodeProfile], nodes: &[usize], k: usize) -> Result<Classification> {
    let by_node: BTreeMap<usize, &NodeProfile> = profiles.iter().map(|p| (p.node, p)).collect();
    let good = nodes
        .iter()
        .map(|&q| by_node.get(&q).map(|p| p.in_dk(k)).ok_or(Error::MissingChain { node: q }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Classification { k, nodes: nodes.to_vec(), good })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Non-exterior nodes in the closed ball B_radius(center).
pub fn ball_region(domain: &GridDomain, center: &[f64], radius: f64) -> Vec<bool> {
    let dim = domain.dim;
    (0..domain.node_count())
        .map(|i| {
            let x = domain.coord(i);
            domain.kind(i) != crate::grid::NodeKind::Exterior
                && (0..dim).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>().sqrt() <= radius + 1e-12
        })
        .collect()
}

/// Primitive lattice directions, one per +-pair: entries in {-2..2} for
/// two real dimensions, {-1, 0, 1} for four.
fn envelope_dirs(dim: usize) -> Vec<[i32; 4]> {
    let span: i32 = if dim == 2 { 2 } else { 1 };
    let width = (2 * span + 1) as usize;
    let mut out = Vec::new();
    for c in 0..width.pow(dim as u32) {
        let mut d = [0i32; 4];
        let mut r = c;
        for a in 0..dim {
            d[a] = (r % width) as i32 - span;
            r /= width;
        }
        let first = d[..dim].iter().find(|&&v| v != 0);
        if first.is_none_or(|&v| v < 0) {
            continue;
        }
        let g = d[..dim].iter().fold(0, |g, &v| gcd(g, v.unsigned_abs()));
        if g == 1 {
            out.push(d);
        }
    }
    out
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn step(domain: &GridDomain, idx: usize, d: &[i32; 4], sign: i32) -> Option<usize> {
    let m = domain.multi_index(idx);
    let mut out = [0usize; 4];
    for a in 0..domain.dim {
        let v = m[a] as i64 + (sign * d[a]) as i64;
        if v < 0 || v >= domain.res as i64 {
            return None;
        }
        out[a] = v as usize;
    }
    Some(domain.index_of(&out))
}

/// Maximal runs of consecutive region nodes along direction d.
fn lines(domain: &GridDomain, region: &[bool], d: &[i32; 4]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..region.len() {
        if !region[i] || step(domain, i, d, -1).is_some_and(|p| region[p]) {
            continue;
        }
        let mut run = vec![i];
        let mut q = i;
        while let Some(p) = step(domain, q, d, 1).filter(|&p| region[p]) {
            run.push(p);
            q = p;
        }
        if run.len() > 2 {
            out.push(run);
        }
    }
    out
}

/// Replaces `v` by its lower convex hull over equally spaced abscissae;
/// returns the largest decrease.
fn hull_1d(v: &mut [f64], hull: &mut Vec<usize>) -> f64 {
    hull.clear();
    for i in 0..v.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a-i
            let lhs = (v[b] - v[a]) * (i - a) as f64;
            let rhs = (v[i] - v[a]) * (b - a) as f64;
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut change: f64 = 0.0;
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in (a + 1)..b {
            let t = (i - a) as f64 / (b - a) as f64;
            let g = v[a] + t * (v[b] - v[a]);
            if g < v[i] {
                change = change.max(v[i] - g);
                v[i] = g;
            }
        }
    }
    change
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub gamma: GridFunction,
    pub region: Vec<bool>,
    pub sweeps: usize,
    pub last_change: f64,
}

/// Convex envelope of w over a convex node region, by repeated exact
/// lower-hull sweeps along every lattice line of the direction set.
/// Values outside the region are NaN.
pub fn convex_envelope(w: &GridFunction, region: &[bool]) -> Result<Envelope> {
    let dom = &w.domain;
    if region.len() != dom.node_count() {
        return Err(Error::InvalidInput("region mask does not match the grid".into()));
    }
    if let Some(i) = (0..region.len()).find(|&i| region[i] && !w.values[i].is_finite()) {
        return Err(Error::InvalidInput(format!("w is not finite at region node {i}")));
    }
    let mut g: Vec<f64> = (0..region.len()).map(|i| if region[i] { w.values[i] } else { f64::NAN }).collect();
    let all_lines: Vec<Vec<usize>> =
        envelope_dirs(dom.dim).iter().flat_map(|d| lines(dom, region, d)).collect();
    let mut buf = Vec::new();
    let mut hull = Vec::new();
    let mut change = f64::INFINITY;
    let mut sweeps = 0;
    while change >= ENVELOPE_TOL {
        if sweeps == MAX_SWEEPS {
            return Err(Error::EnvelopeNonConvergence { sweeps, change });
        }
        change = 0.0;
        for line in &all_lines {
            buf.clear();
            buf.extend(line.iter().map(|&q| g[q]));
            let c = hull_1d(&mut buf, &mut hull);
            if c > 0.0 {
                change = change.max(c);
                for (&q, &v) in line.iter().zip(&buf) {
                    g[q] = v;
                }
            }
        }
        sweeps += 1;
    }
    Ok(Envelope {
        gamma: GridFunction { domain: dom.clone(), values: g, trace: None },
        region: region.to_vec(),
        sweeps,
        last_change: change,
    })
}

/// Region nodes where w - gamma <= tol.
pub fn contact_set(w: &GridFunction, gamma: &GridFunction, tol: f64) -> Result<Vec<bool>> {
    w.check_same(gamma)?;
    Ok(w.values.iter().zip(&gamma.values).map(|(a, g)| g.is_finite() && a - g <= tol).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaMeasure {
    pub value: f64,
    /// False for the n = 2 quadrature of det D^2.
    pub exact: bool,
}

/// Real Monge-Ampere measure of the node set E. For n = 1 this is the
/// area of the union of lattice subgradient polygons; for n = 2 it is the
/// quadrature of det D^2 Gamma.
pub fn ma_measure(env: &Envelope, e: &[usize]) -> Result<MaMeasure> {
    let g = &env.gamma;
    let dom = &g.domain;
    check_convex(env)?;
    if let Some(&q) = e.iter().find(|&&q| !env.region[q]) {
        return Err(Error::InvalidInput(format!("node {q} of E is outside the region")));
    }
    if dom.dim == 4 {
        let mut total = 0.0;
        for &q in e {
            let hm = box_hessian(g, q).ok_or(Error::StencilViolation { node: q })?;
            total += hm.determinant().max(0.0);
        }
        return Ok(MaMeasure { value: total * dom.cell_volume(), exact: false });
    }
    let region: Vec<usize> = (0..env.region.len()).filter(|&i| env.region[i]).collect();
    let mut slope_bound: f64 = 0.0;
    for &q in &region {
        for &a in dom.axis_neighbors(q, 0).chain(dom.axis_neighbors(q, 1)).collect::<Vec<_>>().iter() {
            if env.region[a] {
                slope_bound = slope_bound.max((g.values[a] - g.values[q]).abs() / dom.h);
            }
        }
    }
    let b = 2.0 * slope_bound + 1.0;
    let mut total = 0.0;
    for &q in e {
        let x = dom.coord(q);
        let gq = g.values[q];
        let mut poly = vec![[-b, -b], [b, -b], [b, b], [-b, b]];
        for &y in &region {
            if y == q {
                continue;
            }
            let p = dom.coord(y);
            let d = [p[0] - x[0], p[1] - x[1]];
            poly = clip(&poly, d, g.values[y] - gq);
            if poly.is_empty() {
                break;
            }
        }
        total += area(&poly);
    }
    Ok(MaMeasure { value: total, exact: true })
}

/// Keeps the part of the polygon with a . p <= c.
fn clip(poly: &[[f64; 2]], a: [f64; 2], c: f64) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (sp, sq) = (side(&p), side(&q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

fn area(poly: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s.abs()
}

/// Second differences of Gamma along the envelope stencil must be
/// nonnegative up to rounding.
fn check_convex(env: &Envelope) -> Result<()> {
    let g = &env.gamma;
    let dom = &g.domain;
    let scale = env.gamma.values.iter().filter(|v| v.is_finite()).fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-8 * scale;
    let dirs = envelope_dirs(dom.dim);
    for q in (0..env.region.len()).filter(|&i| env.region[i]) {
        for d in &dirs {
            let (Some(a), Some(b)) = (step(dom, q, d, 1), step(dom, q, d, -1)) else { continue };
            if env.region[a] && env.region[b] && g.values[a] + g.values[b] - 2.0 * g.values[q] < -tol {
                return Err(Error::NonConvex { node: q });
            }
        }
    }
    Ok(())
}

/// Central-difference real Hessian on the box lattice, if every stencil
/// value is finite.
pub fn box_hessian(g: &GridFunction, q: usize) -> Option<DMatrix<f64>> {
    let dom = &g.domain;
    let d = dom.dim;
    let h2 = dom.h * dom.h;
    let at = |e: &[i32; 4]| -> Option<f64> {
        let mut p = q;
        for a in 0..d {
            if e[a] != 0 {
                let mut u = [0i32; 4];
                u[a] = e[a].signum();
                for _ in 0..e[a].abs() {
                    p = step(dom, p, &u, 1)?;
                }
            }
        }
        Some(g.values[p]).filter(|v| v.is_finite())
    };
    let c = at(&[0; 4])?;
    let mut m = DMatrix::zeros(d, d);
    for a in 0..d {
        let mut e = [0i32; 4];
        e[a] = 1;
        let mut f = [0i32; 4];
        f[a] = -1;
        m[(a, a)] = (at(&e)? + at(&f)? - 2.0 * c) / h2;
        for b in (a + 1)..d {
            let mut pp = [0i32; 4];
            let mut pm = [0i32; 4];
            let mut mp = [0i32; 4];
            let mut mm = [0i32; 4];
            pp[a] = 1;
            pp[b] = 1;
            pm[a] = 1;
            pm[b] = -1;
            mp[a] = -1;
            mp[b] = 1;
            mm[a] = -1;
            mm[b] = -1;
            let v = (at(&pp)? - at(&pm)? - at(&mp)? + at(&mm)?) / (4.0 * h2);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Some(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub kappa: f64,
    /// True when no positive opening exists (u not semiconvex at x0).
    pub degenerate: bool,
}

/// Largest kappa with u >= u(x0) + p.(y - x0) + kappa |y - x0|^2 on the
/// region, where p is the lattice gradient of u at x0.
pub fn touching_paraboloid_opening(u: &GridFunction, x0: usize, region: &[bool]) -> Result<Opening> {
    let dom = &u.domain;
    if region.len() != dom.node_count() || !region[x0] {
        return Err(Error::Precondition(format!("node {x0} is not in the region")));
    }
    let p = gradient(u, x0)?;
    let c = dom.coord(x0);
    let u0 = u.values[x0];
    let mut kappa = f64::INFINITY;
    for y in (0..region.len()).filter(|&i| region[i] && i != x0) {
        let x = dom.coord(y);
        let mut lin = 0.0;
        let mut r2 = 0.0;
        for a in 0..dom.dim {
            lin += p[a] * (x[a] - c[a]);
            r2 += (x[a] - c[a]).powi(2);
        }
        kappa = kappa.min((u.values[y] - u0 - lin) / r2);
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Ok(Opening { kappa: 0.0, degenerate: true });
    }
    Ok(Opening { kappa, degenerate: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianVerdict {
    pub k: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub slack: f64,
    pub checked: usize,
    pub violations: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub worst_node: Option<usize>,
    pub pass: bool,
}

/// Checks 10^{-k} <= lambda(u_{i jbar}) <= 2 10^{(n-1)k} on the D_k nodes
/// of the classification, with relative slack.
pub fn hessian_bounds_on_dk(u: &GridFunction, dk: &Classification, slack: f64) -> Result<HessianVerdict> {
    let n = u.domain.n;
    let k = dk.k as i32;
    let lower = 10f64.powi(-k);
    let upper = 2.0 * 10f64.powi((n as i32 - 1) * k);
    let mut v = HessianVerdict {
        k: dk.k,
        lower_bound: lower,
        upper_bound: upper,
        slack,
        checked: 0,
        violations: 0,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        worst_node: None,
        pass: true,
    };
    let mut worst = 0.0;
    for q in dk.good_nodes() {
        let a = complex_hessian(u, q)?;
        let (lo, hi) = (a.min_eigenvalue(), a.max_eigenvalue());
        v.checked += 1;
        v.min_eigenvalue = v.min_eigenvalue.min(lo);
        v.max_eigenvalue = v.max_eigenvalue.max(hi);
        let excess = (1.0 - lo / lower).max(hi / upper - 1.0);
        if excess > slack {
            v.violations += 1;
        }
        if excess > worst {
            worst = excess;
            v.worst_node = Some(q);
        }
    }
    v.pass = v.violations == 0;
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub epsilon: f64,
    pub gamma: f64,
    pub envelope_radius: f64,
    pub inner_radius: f64,
    pub tolerance: f64,
    pub inner_nodes: usize,
    pub contact_nodes: usize,
    pub fraction: f64,
    /// (1 - fraction) / (eps^{1/2} + gamma^{1/2}); absent when eps = gamma = 0.
    pub measured_constant: Option<f64>,
    pub sweeps: usize,
    /// Contact nodes of the inner ball with all three real Hessians PSD.
    pub subdeterminant_checked: usize,
    /// Largest det(D^2 Gamma)^{1/2n} + det(D^2 v0 / 2)^{1/2n} - det(D^2 u0)^{1/2n}.
    pub subdeterminant_excess: f64,
    /// Contact nodes of the inner ball where the touching opening is at
    /// least (1 - opening_slack) / 2.
    pub opening_fraction: f64,
    pub opening_slack: f64,
}

/// Contact set of the envelope of u0 - v0/2 over B_envelope_radius, read
/// on B_inner_radius.
pub fn contact_density(
    u0: &GridFunction,
    v0: &GridFunction,
    eps: f64,
    gamma: f64,
    envelope_radius: f64,
    inner_radius: f64,
    tol: f64,
) -> Result<ContactReport> {
    u0.check_same(v0)?;
    let dom = &u0.domain;
    let origin = [0.0; 4];
    let w = u0.zip(v0, |a, b| a - 0.5 * b)?;
    let region = ball_region(dom, &origin[..dom.dim], envelope_radius);
    let env = convex_envelope(&w, &region)?;
    let contact = contact_set(&w, &env.gamma, tol)?;
    let inner: Vec<usize> = sample_nodes(dom, inner_radius, 1);
    let touching: Vec<usize> = inner.iter().copied().filter(|&q| contact[q]).collect();
    let fraction = touching.len() as f64 / inner.len().max(1) as f64;
    let denom = eps.sqrt() + gamma.sqrt();

    let m = dom.dim as f64;
    let root = |h: &DMatrix<f64>| -> Option<f64> {
        let e = h.clone().symmetric_eigenvalues();
        if e.iter().all(|&l| l >= 0.0) {
            Some(e.iter().product::<f64>().powf(1.0 / m))
        } else {
            None
        }
    };
    let mut checked = 0;
    let mut excess = f64::NEG_INFINITY;
    let opening_slack = 0.1;
    let mut open_ok = 0;
    for &q in &touching {
        let hg = box_hessian(&env.gamma, q);
        let hv = real_hessian(v0, q)? * 0.5;
        let hu = real_hessian(u0, q)?;
        if let (Some(a), Some(b), Some(c)) = (hg.as_ref().and_then(root), root(&hv), root(&hu)) {
            checked += 1;
            excess = excess.max(a + b - c);
        }
        if touching_paraboloid_opening(u0, q, &region)?.kappa >= 0.5 * (1.0 - opening_slack) {
            open_ok += 1;
        }
    }
    Ok(ContactReport {
        epsilon: eps,
        gamma,
        envelope_radius,
        inner_radius,
        tolerance: tol,
        inner_nodes: inner.len(),
        contact_nodes: touching.len(),
        fraction,
        measured_constant: (denom > 0.0).then(|| (1.0 - fraction) / denom),
        sweeps: env.sweeps,
        subdeterminant_checked: checked,
        subdeterminant_excess: if checked > 0 { excess } else { 0.0 },
        opening_fraction: open_ok as f64 / touching.len().max(1) as f64,
        opening_slack,
    })
}

/// eps-bar from 10^{(n-1)p} 12^{2n} eps-bar = 1/2.
pub fn eps_bar_recipe(n: usize, p: f64) -> f64 {
    0.5 / (10f64.powf((n as f64 - 1.0) * p) * 12f64.powi(2 * n as i32))
}

/// r_0 = 0.7, r_k = r_{k-1} - 2^{-k}/10.
pub fn radius_schedule(k: usize) -> f64 {
    (1..=k).fold(0.7, |r, j| r - 0.1 * 0.5f64.powi(j as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub k: usize,
    pub radius: f64,
    pub bad_nodes: usize,
    pub measure: f64,
    /// m(A_k cap B_0.6), used by the dyadic norm bound.
    pub measure_inner: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
    /// The row holds only because A_k cap B_{r_k} is empty.
    pub vacuous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadSetReport {
    pub n: usize,
    pub eps_bar: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub stride: usize,
    pub sampled_nodes: usize,
    /// Measure carried by one sampled node.
    pub node_weight: f64,
    pub truncated_profiles: usize,
    pub rows: Vec<DecayRow>,
    pub monotone: bool,
}

impl BadSetReport {
    pub fn all_pass(&self) -> bool {
        self.monotone && self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two columns: k and m(A_k cap B_{r_k}).
    pub fn write_plot_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "k,measure")?;
        for r in &self.rows {
            writeln!(f, "{},{}", r.k, r.measure)?;
        }
        Ok(())
    }
}

pub struct DecayInput<'a> {
    pub domain: &'a Arc<GridDomain>,
    pub profiles: &'a [NodeProfile],
    pub nodes: &'a [usize],
    pub stride: usize,
    pub eps_bar: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub k_max: usize,
}

pub fn badset_decay_experiment(input: &DecayInput) -> Result<BadSetReport> {
    let dom = input.domain;
    let n = dom.n;
    if input.k_max == 0 || !(input.eps_bar > 0.0) {
        return Err(Error::InvalidInput("need k_max >= 1 and eps_bar > 0".into()));
    }
    let weight = (input.stride as f64 * dom.h).powi(dom.dim as i32);
    let base = ball_measure(n, 0.7);
    let q = 12f64.powi(2 * n as i32) * input.eps_bar;
    let mut rows = Vec::with_capacity(input.k_max);
    for k in 1..=input.k_max {
        let class = classify_dk(input.profiles, input.nodes, k)?;
        let r = radius_schedule(k);
        let (mut count, mut inner) = (0usize, 0usize);
        for b in class.bad_nodes() {
            let rad = norm(&dom.coord(b)[..dom.dim]);
            if rad <= r + 1e-12 {
                count += 1;
            }
            if rad <= 0.6 + 1e-12 {
                inner += 1;
            }
        }
        let measure = count as f64 * weight;
        let bound = base * q.powi(k as i32 - 1);
        rows.push(DecayRow {
            k,
            radius: r,
            bad_nodes: count,
            measure,
            measure_inner: inner as f64 * weight,
            bound,
            ratio: measure / bound,
            pass: measure <= bound,
            vacuous: count == 0,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].measure <= w[0].measure);
    Ok(BadSetReport {
        n,
        eps_bar: input.eps_bar,
        sigma: input.sigma,
        epsilon: input.epsilon,
        stride: input.stride,
        sampled_nodes: input.nodes.len(),
        node_weight: weight,
        truncated_profiles: input.profiles.iter().filter(|p| p.truncated.is_some()).count(),
        rows,
        monotone,
    })
}
