use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_section, fit_ellipsoid, mu0_from_sigma, normalize_transform, taylor_split, FitReport,
    PluriharmonicPoly, Section, ShiftCoefficients,
};
use crate::error::{Error, Result};
use crate::grid::{
    gradient, real_hessian, GridDomain, GridFunction, NodeKind, SampledLevel, Shape,
    DEFAULT_NODE_CAP,
};
use crate::linalg::{to_complex, HermitianTransform, RealQuadratic};
use crate::solver::{solve_dirichlet, SolveConfig, SolveReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Height ratio between consecutive levels.
    pub mu0: f64,
    /// Height of the first section; defaults to `mu0`.
    pub top_height: Option<f64>,
    /// Nodes per axis of each renormalized level grid; defaults to 65 for
    /// n = 1 and 13 for n = 2.
    pub level_resolution: Option<usize>,
    pub level_half_width: f64,
    /// Section heights sampled per level for the good-set profile.
    pub heights_per_level: usize,
    /// Base points need every node within this Chebyshev lattice distance
    /// to be interior.
    pub margin_nodes: usize,
    /// A level breaks when a fit leaves 1 +- (break_factor sigma + 2h/sqrt(mu)).
    pub break_factor: f64,
    pub solve: SolveConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            mu0: 0.1,
            top_height: None,
            level_resolution: None,
            level_half_width: 1.3,
            heights_per_level: 3,
            margin_nodes: 1,
            break_factor: 0.5,
            solve: SolveConfig::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.01..=0.25).contains(&self.mu0) {
            return Err(Error::InvalidInput(format!(
                "mu0 = {} outside [0.01, 0.25]",
                self.mu0
            )));
        }
        if let Some(t) = self.top_height {
            if !(t > 0.0 && t <= 0.25) {
                return Err(Error::InvalidInput(format!(
                    "top height {t} outside (0, 0.25]"
                )));
            }
        }
        if self.heights_per_level == 0 || !(self.level_half_width > 1.0) {
            return Err(Error::InvalidInput(
                "need heights_per_level >= 1 and level_half_width > 1".into(),
            ));
        }
        self.solve.validate()
    }

    pub fn top(&self) -> f64 {
        self.top_height.unwrap_or(self.mu0)
    }

    pub fn resolution_for(&self, n: usize) -> usize {
        self.level_resolution
            .unwrap_or(if n == 1 { 65 } else { 13 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    /// Height in the original coordinates.
    pub height: f64,
    /// max |z - x0| / sqrt(height) over the section nodes.
    pub ratio: f64,
    /// One-cell slack in the same units.
    pub slack: f64,
    /// ((max |z - x0| - one cell)_+)^2 / height.
    pub spread: f64,
}

#[derive(Clone, Debug)]
pub struct ChainLevel {
    pub level: usize,
    /// (lowest, highest] section heights in original units served by this level.
    pub heights: (f64, f64),
    /// Height of the fitted section in this level's coordinates.
    pub local_height: f64,
    pub local_transform: HermitianTransform,
    pub composed_transform: HermitianTransform,
    pub shift_increment: PluriharmonicPoly,
    pub shift: PluriharmonicPoly,
    pub hessian_det: f64,
    pub fit: FitReport,
    pub fit_slack: f64,
    pub grid_h: f64,
    pub section_nodes: usize,
    /// Inner/outer radius of the next renormalized domain, when built.
    pub next_domain_radii: Option<(f64, f64)>,
    pub interpolation_residual: Option<f64>,
    pub solve: SolveReport,
    pub profile: Vec<ProfileSample>,
}

#[derive(Clone, Debug)]
pub struct SectionChain {
    pub n: usize,
    pub base: usize,
    pub base_point: Vec<f64>,
    pub sigma: f64,
    pub mu0: f64,
    pub top_height: f64,
    pub mu0_sigma: f64,
    pub levels: Vec<ChainLevel>,
}

impl SectionChain {
    pub fn lowest_height(&self) -> f64 {
        self.levels.last().map_or(self.top_height, |l| l.heights.0)
    }

    fn level_for(&self, mu: f64) -> Option<&ChainLevel> {
        self.levels
            .iter()
            .find(|l| mu > l.heights.0 * (1.0 - 1e-12) && mu <= l.heights.1 * (1.0 + 1e-12))
    }

    /// Accumulated shift and normalizing transform for height mu.
    pub fn shift_and_transform(
        &self,
        mu: f64,
    ) -> Option<(&PluriharmonicPoly, &HermitianTransform)> {
        self.level_for(mu)
            .map(|l| (&l.shift, &l.composed_transform))
    }

    /// The section S_mu(x0) of u on the original grid, fitted against the
    /// chain's ellipsoid at that height.
    pub fn section_at(&self, u: &GridFunction, mu: f64) -> Result<Section> {
        let (shift, t) = self.shift_and_transform(mu).ok_or_else(|| {
            Error::InvalidInput(format!("height {mu:e} outside the chain's range"))
        })?;
        fitted_section(u, self.base, mu, shift, t)
    }

    /// Largest sampled spread; the node lies in D_k iff this is <= 10^k.
    pub fn spread(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.profile.iter())
            .map(|p| p.spread)
            .fold(0.0, f64::max)
    }

    pub fn record(&self) -> ChainRecord {
        ChainRecord {
            n: self.n,
            base: self.base,
            base_point: self.base_point.clone(),
            sigma: self.sigma,
            mu0: self.mu0,
            mu0_sigma: self.mu0_sigma,
            top_height: self.top_height,
            levels: self
                .levels
                .iter()
                .map(|l| LevelRecord {
                    level: l.level,
                    heights: [l.heights.0, l.heights.1],
                    transform: l.local_transform.to_flat(),
                    composed_transform: l.composed_transform.to_flat(),
                    transform_deviation: l.local_transform.distance_to_identity(),
                    shift_increment: l.shift_increment.coefficients(),
                    shift: l.shift.coefficients(),
                    hessian_det: l.hessian_det,
                    fit: l.fit,
                    fit_slack: l.fit_slack,
                    grid_h: l.grid_h,
                    next_domain_radii: l.next_domain_radii.map(|(a, b)| [a, b]),
                    interpolation_residual: l.interpolation_residual,
                    solve_iterations: l.solve.iterations,
                    solve_residual: l.solve.residual,
                    profile: l.profile.clone(),
                })
                .collect(),
        }
    }
}

fn fitted_section(
    u: &GridFunction,
    base: usize,
    mu: f64,
    shift: &PluriharmonicPoly,
    t: &HermitianTransform,
) -> Result<Section> {
    let mut s = build_section(u, base, mu, shift)?;
    let (a, _) = t.ellipsoid_coefficients()?.det_normalized()?;
    s.attach_fit(&a)?;
    Ok(s)
}

impl ChainRecord {
    /// Heights covered by the recorded levels, as (lowest, top).
    pub fn height_range(&self) -> (f64, f64) {
        let lo = self.levels.last().map_or(self.top_height, |l| l.heights[0]);
        (lo, self.top_height)
    }

    pub fn level_at(&self, mu: f64) -> Option<&LevelRecord> {
        self.levels
            .iter()
            .find(|l| mu > l.heights[0] * (1.0 - 1e-12) && mu <= l.heights[1] * (1.0 + 1e-12))
    }

    /// Same as [`SectionChain::section_at`], rebuilt from the record.
    pub fn section_at(&self, u: &GridFunction, mu: f64) -> Result<Section> {
        let l = self
            .level_at(mu)
            .ok_or_else(|| Error::InvalidInput(format!("height {mu:e} outside the chain's range")))?;
        let shift = PluriharmonicPoly::from_coefficients(&l.shift)?;
        let t = HermitianTransform::from_flat(self.n, &l.composed_transform)?;
        fitted_section(u, self.base, mu, &shift, &t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    pub heights: [f64; 2],
    pub transform: Vec<f64>,
    pub composed_transform: Vec<f64>,
    pub transform_deviation: f64,
    pub shift_increment: ShiftCoefficients,
    pub shift: ShiftCoefficients,
    pub hessian_det: f64,
    pub fit: FitReport,
    pub fit_slack: f64,
    pub grid_h: f64,
    pub next_domain_radii: Option<[f64; 2]>,
    pub interpolation_residual: Option<f64>,
    pub solve_iterations: usize,
    pub solve_residual: f64,
    pub profile: Vec<ProfileSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub n: usize,
    pub base: usize,
    pub base_point: Vec<f64>,
    pub sigma: f64,
    pub mu0: f64,
    pub mu0_sigma: f64,
    pub top_height: f64,
    pub levels: Vec<LevelRecord>,
}

/// Shares the unit-right-side solve on the original domain between chains.
pub struct ChainContext {
    pub u: GridFunction,
    pub v0: GridFunction,
    pub v0_report: SolveReport,
    pub cfg: ChainConfig,
}

impl ChainContext {
    pub fn new(u: &GridFunction, cfg: &ChainConfig) -> Result<ChainContext> {
        cfg.validate()?;
        let dom = &u.domain;
        let one = GridFunction::constant(dom, 1.0);
        let (v0, v0_report) = solve_dirichlet(dom, &one, &|_| 0.0, &cfg.solve)?;
        Ok(ChainContext {
            u: u.clone(),
            v0,
            v0_report,
            cfg: cfg.clone(),
        })
    }

    /// Reuses an existing unit-right-side solve `v0` on the domain of `u`.
    pub fn from_parts(
        u: &GridFunction,
        v0: &GridFunction,
        v0_report: &SolveReport,
        cfg: &ChainConfig,
    ) -> Result<ChainContext> {
        cfg.validate()?;
        u.check_same(v0)?;
        Ok(ChainContext {
            u: u.clone(),
            v0: v0.clone(),
            v0_report: v0_report.clone(),
            cfg: cfg.clone(),
        })
    }

    pub fn check_base(&self, x0: usize) -> Result<()> {
        let dom = &self.u.domain;
        if !dom.is_interior(x0) {
            return Err(Error::Precondition(format!(
                "base node {x0} is not interior"
            )));
        }
        let m = dom.multi_index(x0);
        let r = self.cfg.margin_nodes as isize;
        let span = (2 * r + 1) as usize;
        for c in 0..span.pow(dom.dim as u32) {
            let mut mm = [0usize; 4];
            let mut rest = c;
            for a in 0..dom.dim {
                let d = (rest % span) as isize - r;
                rest /= span;
                let v = m[a] as isize + d;
                if v < 0 || v >= dom.res as isize {
                    return Err(Error::Precondition(format!(
                        "base node {x0} too close to the box"
                    )));
                }
                mm[a] = v as usize;
            }
            if !dom.is_interior(dom.index_of(&mm)) {
                return Err(Error::Precondition(format!(
                    "base node {x0} within the boundary margin"
                )));
            }
        }
        Ok(())
    }

    pub fn chain(&self, x0: usize, sigma: f64, k_max: usize) -> Result<SectionChain> {
        match self.chain_partial(x0, sigma, k_max)? {
            (chain, None) => Ok(chain),
            (_, Some(e)) => Err(e),
        }
    }

    /// Like [`ChainContext::chain`], but a break keeps the levels built so
    /// far (including the profile of the level whose fit failed) and
    /// returns the break alongside.
    pub fn chain_partial(
        &self,
        x0: usize,
        sigma: f64,
        k_max: usize,
    ) -> Result<(SectionChain, Option<Error>)> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidInput(format!(
                "sigma = {sigma} outside (0, 1)"
            )));
        }
        if k_max == 0 {
            return Err(Error::InvalidInput("k_max must be at least 1".into()));
        }
        self.check_base(x0)?;
        let cfg = &self.cfg;
        let n = self.u.domain.n;
        let dim = 2 * n;
        let mu0 = cfg.mu0;
        let tau = cfg.top();
        let base_point = self.u.domain.coord(x0)[..dim].to_vec();
        let x0c = to_complex(&base_point);
        let res = cfg.resolution_for(n);

        let mut w = self.u.clone();
        let mut v = self.v0.clone();
        let mut solve = self.v0_report.clone();
        let mut center = x0;
        let mut t_acc = HermitianTransform::identity(n);
        let mut s = 1.0f64;
        let mut eta = 1.0f64;
        let mut shift_acc: Option<PluriharmonicPoly> = None;
        let mut levels = Vec::with_capacity(k_max);

        let mut run = || -> Result<()> {
            for ell in 0..k_max {
                let level = ell + 1;
                let broken = |e: Error| Error::ChainBroken {
                    level,
                    reason: e.to_string(),
                };
                let rho = if ell == 0 { tau } else { mu0 };
                let (ht, a) = taylor_split(&v, center).map_err(broken)?;
                let (ahat, det) = a.det_normalized().map_err(broken)?;
                let tt = normalize_transform(&ahat).map_err(broken)?;
                let inc = if ell == 0 {
                    ht.clone()
                } else {
                    ht.pull_back(&x0c, s, &t_acc.inverse()?.matrix, eta)
                };
                let shift = match &shift_acc {
                    None => inc,
                    Some(prev) => prev.plus(&inc),
                };

                let h_l = w.domain.h;
                let sec = build_section(&w, center, rho, &ht).map_err(broken)?;
                let fit = fit_ellipsoid(&sec, &ahat);
                let fit_slack = 2.0 * h_l / rho.sqrt();
                let fits = fit.within(cfg.break_factor * sigma + fit_slack);

                let tnorm = t_acc.op_norm();
                let mut profile = Vec::with_capacity(cfg.heights_per_level);
                for j in 0..cfg.heights_per_level {
                    let mu_t = rho * mu0.powf(j as f64 / cfg.heights_per_level as f64);
                    let sj = if j == 0 {
                        sec.clone()
                    } else {
                        build_section(&w, center, mu_t, &ht).map_err(broken)?
                    };
                    let c = &sj.base_point;
                    let mut rmax: f64 = 0.0;
                    for &q in &sj.nodes {
                        let x = sj.domain.coord(q);
                        let zeta: Vec<f64> = (0..dim).map(|k| x[k] - c[k]).collect();
                        let img = t_acc.apply(&to_complex(&zeta));
                        rmax = rmax.max(img.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
                    }
                    let cell = tnorm * h_l;
                    let rs = mu_t.sqrt();
                    profile.push(ProfileSample {
                        height: eta * mu_t,
                        ratio: rmax / rs,
                        slack: cell / rs,
                        spread: ((rmax - cell).max(0.0) / rs).powi(2),
                    });
                }

                let t_next = t_acc.compose(&tt);
                let mut next_domain_radii = None;
                let mut interpolation_residual = None;
                let mut next = None;
                if fits && ell + 1 < k_max {
                    let tr = transport(
                        &w,
                        center,
                        rho,
                        &ht,
                        &tt,
                        1.0 / rho,
                        res,
                        cfg.level_half_width,
                    )
                    .map_err(broken)?;
                    let dom = tr.w.domain.clone();
                    next_domain_radii = Some(dom.crossing_radii(&[0.0; 4][..dim]));
                    interpolation_residual = Some(tr.max_residual);
                    let one = GridFunction::constant(&dom, 1.0);
                    let (vn, rep) =
                        solve_dirichlet(&dom, &one, &|_| 0.0, &cfg.solve).map_err(broken)?;
                    let c = dom.origin_node().ok_or_else(|| {
                        broken(Error::InvalidInput(
                            "level grid lacks an origin node".into(),
                        ))
                    })?;
                    next = Some((tr.w, vn, rep, c));
                }

                levels.push(ChainLevel {
                    level,
                    heights: (eta * rho * mu0, eta * rho),
                    local_height: rho,
                    local_transform: tt,
                    composed_transform: t_next.clone(),
                    shift_increment: ht,
                    shift: shift.clone(),
                    hessian_det: det,
                    fit,
                    fit_slack,
                    grid_h: h_l,
                    section_nodes: sec.nodes.len(),
                    next_domain_radii,
                    interpolation_residual,
                    solve: solve.clone(),
                    profile,
                });
                if !fits {
                    return Err(Error::ChainBroken {
                        level,
                        reason: format!(
                            "fit ({:.4}, {:.4}) outside tolerance",
                            fit.c_in, fit.c_out
                        ),
                    });
                }

                shift_acc = Some(shift);
                t_acc = t_next;
                s *= rho.sqrt();
                eta *= rho;
                if let Some((wn, vn, rep, c)) = next {
                    w = wn;
                    v = vn;
                    solve = rep;
                    center = c;
                }
            }
            Ok(())
        };
        let failure = run().err();

        let mu0_sigma = mu0_from_sigma(sigma, sigma)?;
        let chain = SectionChain {
            n,
            base: x0,
            base_point,
            sigma,
            mu0,
            top_height: tau,
            mu0_sigma,
            levels,
        };
        Ok((chain, failure))
    }
}

/// One-shot chain; builds the shared unit solve internally.
pub fn construct_section_chain(
    u: &GridFunction,
    x0: usize,
    sigma: f64,
    k_max: usize,
    cfg: &ChainConfig,
) -> Result<SectionChain> {
    ChainContext::new(u, cfg)?.chain(x0, sigma, k_max)
}

pub struct Transported {
    pub w: GridFunction,
    /// Largest interpolated residual beyond the quadratic model.
    pub max_residual: f64,
}

/// zeta -> scale * (w - h - w(c) - rho)(c + sqrt(rho) T zeta) on a fresh
/// box lattice; the domain is the component of {< 0} containing 0.
///
/// Values off the lattice of `w` come from multilinear interpolation of
/// `w` minus its quadratic Taylor model at `c`; the model itself is carried
/// over exactly.
#[allow(clippy::too_many_arguments)]
pub fn transport(
    w: &GridFunction,
    center: usize,
    rho: f64,
    h: &PluriharmonicPoly,
    t: &HermitianTransform,
    scale: f64,
    res: usize,
    half_width: f64,
) -> Result<Transported> {
    let src = &w.domain;
    let n = src.n;
    let dim = 2 * n;
    let c = src.coord(center);
    let hc: Vec<f64> = h.center.iter().flat_map(|z| [z.re, z.im]).collect();
    if (0..dim).any(|a| (hc[a] - c[a]).abs() > 1e-12) {
        return Err(Error::InvalidInput(
            "shift must be centered at the base point".into(),
        ));
    }
    let wc = w.values[center];
    let g = gradient(w, center)?;
    let hs = real_hessian(w, center)?;
    let model = RealQuadratic {
        c: wc,
        g,
        hess: hs.transpose().iter().copied().collect(),
    };
    let resid: Vec<f64> = (0..src.node_count())
        .map(|i| {
            let v = w.values[i];
            if !v.is_finite() {
                return f64::NAN;
            }
            let x = src.coord(i);
            let y: Vec<f64> = (0..dim).map(|a| x[a] - c[a]).collect();
            v - model.eval(&y)
        })
        .collect();

    let hq = h.real_quadratic();
    let mut p = model.clone();
    for k in 0..dim {
        p.g[k] -= hq.g[k];
    }
    for k in 0..dim * dim {
        p.hess[k] -= hq.hess[k];
    }
    p.c = -rho;
    let map = t.real_matrix() * rho.sqrt();
    let new_model = p.substitute(&vec![0.0; dim], &map).scaled(scale, 0.0);

    let probe = GridDomainProbe::new(dim, res, half_width);
    let mut new_resid = vec![f64::NAN; probe.total];
    for (i, r) in new_resid.iter_mut().enumerate() {
        let zeta = probe.coord(i);
        let y = &map * nalgebra::DVector::from_column_slice(&zeta[..dim]);
        let x: Vec<f64> = (0..dim).map(|a| c[a] + y[a]).collect();
        if let Some(v) = crate::grid::multilinear(&resid, dim, src.res, src.half_width, &x) {
            *r = scale * v;
        }
    }
    let origin = probe.origin();
    let level = Arc::new(SampledLevel {
        dim,
        res,
        half_width,
        residual: new_resid.clone(),
        model: new_model.clone(),
    });
    let dom = Arc::new(GridDomain::new(
        n,
        Shape::Sampled(level.clone()),
        res,
        half_width,
        DEFAULT_NODE_CAP,
        Some(origin),
    )?);
    let mut values = vec![f64::NAN; dom.node_count()];
    let mut max_residual: f64 = 0.0;
    for i in 0..dom.node_count() {
        if dom.kind(i) == NodeKind::Exterior {
            continue;
        }
        if !new_resid[i].is_finite() {
            return Err(Error::ImageEscape);
        }
        let x = dom.coord(i);
        values[i] = new_resid[i] + new_model.eval(&x[..dim]);
        max_residual = max_residual.max(new_resid[i].abs());
    }
    let trace = vec![0.0; dom.cuts().len()];
    Ok(Transported {
        w: GridFunction {
            domain: dom,
            values,
            trace: Some(trace),
        },
        max_residual,
    })
}

/// Rescales u around x0 at height mu through T onto a unit-scale lattice:
/// (u - h - u(x0) - mu)(x0 + T(sqrt(mu) zeta)) / (mu |det T|^{2/n}).
pub fn rescale_to_unit(
    u: &GridFunction,
    x0: usize,
    mu: f64,
    h: &PluriharmonicPoly,
    t: &HermitianTransform,
) -> Result<GridFunction> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(format!("height {mu} must be positive")));
    }
    let det = t.det_abs();
    if det < 1e-300 {
        return Err(Error::SingularTransform);
    }
    let n = u.domain.n;
    let scale = 1.0 / (mu * det.powf(2.0 / n as f64));
    Ok(transport(u, x0, mu, h, t, scale, u.domain.res, 1.3)?.w)
}

/// Lattice geometry without a domain, for evaluating transported values.
struct GridDomainProbe {
    dim: usize,
    res: usize,
    half_width: f64,
    h: f64,
    total: usize,
}

impl GridDomainProbe {
    fn new(dim: usize, res: usize, half_width: f64) -> Self {
        GridDomainProbe {
            dim,
            res,
            half_width,
            h: 2.0 * half_width / (res - 1) as f64,
            total: res.pow(dim as u32),
        }
    }

    fn coord(&self, idx: usize) -> [f64; 4] {
        let mut x = [0.0; 4];
        let mut r = idx;
        for a in (0..self.dim).rev() {
            x[a] = -self.half_width + (r % self.res) as f64 * self.h;
            r /= self.res;
        }
        x
    }

    fn origin(&self) -> usize {
        let mid = (self.res - 1) / 2;
        (0..self.dim).fold(0, |acc, _| acc * self.res + mid)
    }
}
