//! Dilations of pointed lattice sets, engulfing checks and shape
//! compatibility of normalizing transforms.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{multilinear, GridDomain, GridFunction};
use crate::linalg::{HermitianMatrix, HermitianTransform};
use crate::sections::{
    build_section, fit_ellipsoid, normalize_transform, FitReport, PluriharmonicPoly, Section,
    NORMALIZATION_TOL,
};

/// A node set with a distinguished center node.
#[derive(Clone, Debug)]
pub struct PointedSet {
    pub domain: Arc<GridDomain>,
    pub center: usize,
    /// Sorted lattice indices; always contains `center`.
    pub nodes: Vec<usize>,
}

impl PointedSet {
    pub fn new(
        domain: &Arc<GridDomain>,
        center: usize,
        mut nodes: Vec<usize>,
    ) -> Result<PointedSet> {
        nodes.sort_unstable();
        nodes.dedup();
        if nodes.binary_search(&center).is_err() {
            return Err(Error::InvalidInput(format!(
                "center {center} not in the node set"
            )));
        }
        Ok(PointedSet {
            domain: domain.clone(),
            center,
            nodes,
        })
    }

    pub fn from_section(s: &Section) -> PointedSet {
        PointedSet {
            domain: s.domain.clone(),
            center: s.base,
            nodes: s.nodes.clone(),
        }
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.nodes.binary_search(&idx).is_ok()
    }

    pub fn measure(&self) -> f64 {
        self.nodes.len() as f64 * self.domain.cell_volume()
    }

    /// Contains `idx` or a node at Chebyshev lattice distance 1 from it.
    pub fn contains_with_slack(&self, idx: usize) -> bool {
        self.domain
            .cell_neighbors(idx)
            .into_iter()
            .any(|p| self.contains(p))
    }

    /// Node sets share a node or come within lattice distance 1.
    pub fn intersects(&self, other: &PointedSet) -> bool {
        let (a, b) = if self.nodes.len() <= other.nodes.len() {
            (self, other)
        } else {
            (other, self)
        };
        a.nodes.iter().any(|&q| b.contains_with_slack(q))
    }

    pub fn dilation(&self, c: f64) -> Result<Dilation<'_>> {
        if !(c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "dilation factor {c} must be positive"
            )));
        }
        let mut indicator = vec![0.0; self.domain.node_count()];
        for &q in &self.nodes {
            indicator[q] = 1.0;
        }
        Ok(Dilation {
            set: self,
            c,
            indicator,
        })
    }
}

/// Membership oracle for `c S(x0) = {x0 + c (y - x0) : y in S}`, using
/// the multilinear interpolant of the indicator of S with threshold 1/2.
pub struct Dilation<'a> {
    set: &'a PointedSet,
    c: f64,
    indicator: Vec<f64>,
}

impl Dilation<'_> {
    pub fn contains_point(&self, x: &[f64]) -> bool {
        let dom = &self.set.domain;
        let x0 = dom.coord(self.set.center);
        let mut y = [0.0; 4];
        for a in 0..dom.dim {
            y[a] = x0[a] + (x[a] - x0[a]) / self.c;
        }
        multilinear(
            &self.indicator,
            dom.dim,
            dom.res,
            dom.half_width,
            &y[..dom.dim],
        )
        .is_some_and(|v| v >= 0.5)
    }

    pub fn contains_node(&self, idx: usize) -> bool {
        let x = self.set.domain.coord(idx);
        self.contains_point(&x[..self.set.domain.dim])
    }

    pub fn contains_node_with_slack(&self, idx: usize) -> bool {
        self.set
            .domain
            .cell_neighbors(idx)
            .into_iter()
            .any(|p| self.contains_node(p))
    }
}

pub fn dilate(s: &PointedSet, c: f64) -> Result<PointedSet> {
    let dil = s.dilation(c)?;
    let dom = &s.domain;
    let x0 = dom.coord(s.center);
    let lim = dom.half_width + 0.5 * dom.h;
    for &q in &s.nodes {
        let y = dom.coord(q);
        if (0..dom.dim).any(|a| (x0[a] + c * (y[a] - x0[a])).abs() > lim) {
            return Err(Error::DilationEscape);
        }
    }
    let nodes = (0..dom.node_count())
        .filter(|&i| dil.contains_node(i))
        .collect();
    PointedSet::new(dom, s.center, nodes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NotApplicable,
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngulfingReport {
    pub verdict: Verdict,
    pub mu1: f64,
    pub mu2: f64,
    /// Nodes of S1 farther than one cell from 10 S2.
    pub offenders: usize,
}

pub const ENGULFING_FACTOR: f64 = 10.0;

/// S1 inside 10 S2 with one-cell slack, for intersecting sections with
/// mu1 <= 4 mu2.
pub fn check_engulfing(s1: &Section, s2: &Section) -> Result<EngulfingReport> {
    if !Arc::ptr_eq(&s1.domain, &s2.domain) {
        return Err(Error::DomainMismatch);
    }
    if s1.height > 4.0 * s2.height * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "height {} exceeds 4 x {}",
            s1.height, s2.height
        )));
    }
    let (p1, p2) = (PointedSet::from_section(s1), PointedSet::from_section(s2));
    let mut report = EngulfingReport {
        verdict: Verdict::NotApplicable,
        mu1: s1.height,
        mu2: s2.height,
        offenders: 0,
    };
    if !p1.intersects(&p2) {
        return Ok(report);
    }
    let dil = p2.dilation(ENGULFING_FACTOR)?;
    report.offenders = p1
        .nodes
        .iter()
        .filter(|&&q| !dil.contains_node_with_slack(q))
        .count();
    report.verdict = if report.offenders == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    /// ||T1^{-1} T2||
    pub norm_12: f64,
    /// ||T2^{-1} T1||
    pub norm_21: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Both ||T1^{-1} T2|| and ||T2^{-1} T1|| against (1 + g)^2 / (1 - g)^2.
pub fn shape_compatibility(
    t1: &HermitianTransform,
    t2: &HermitianTransform,
    gamma: f64,
) -> Result<ShapeReport> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!(
            "gamma = {gamma} outside [0, 1)"
        )));
    }
    for t in [t1, t2] {
        let d = t.det_abs();
        if d < 1e-300 {
            return Err(Error::SingularTransform);
        }
        if (d - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Precondition(format!("transform has |det| = {d}")));
        }
    }
    let norm_12 = t1.inverse()?.compose(t2).op_norm();
    let norm_21 = t2.inverse()?.compose(t1).op_norm();
    let bound = ((1.0 + gamma) / (1.0 - gamma)).powi(2);
    Ok(ShapeReport {
        norm_12,
        norm_21,
        bound,
        pass: norm_12 <= bound && norm_21 <= bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub fit_1: FitReport,
    pub fit_2: FitReport,
    /// Tolerance used for the fits: gamma plus 2h / sqrt(mu).
    pub fit_tolerance: f64,
    pub shape: ShapeReport,
}

/// Two near-ellipsoid representations (h_p, A_p) of the section at x0 and
/// height mu must have compatible normalizing transforms.
#[allow(clippy::too_many_arguments)]
pub fn shape_uniqueness_probe(
    u: &GridFunction,
    x0: usize,
    mu: f64,
    h1: &PluriharmonicPoly,
    h2: &PluriharmonicPoly,
    a1: &HermitianMatrix,
    a2: &HermitianMatrix,
    gamma: f64,
) -> Result<UniquenessReport> {
    let tol = gamma + 2.0 * u.domain.h / mu.sqrt();
    let mut fits = Vec::with_capacity(2);
    for (h, a) in [(h1, a1), (h2, a2)] {
        let s = build_section(u, x0, mu, h)?;
        let fit = fit_ellipsoid(&s, a);
        if !fit.within(tol) {
            return Err(Error::Precondition(format!(
                "fit ({:.4}, {:.4}) outside 1 +- {tol:.4}",
                fit.c_in, fit.c_out
            )));
        }
        fits.push(fit);
    }
    let shape = shape_compatibility(&normalize_transform(a1)?, &normalize_transform(a2)?, gamma)?;
    Ok(UniquenessReport {
        fit_1: fits[0],
        fit_2: fits[1],
        fit_tolerance: tol,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, ShapeSpec};
    use crate::linalg::{CMat, C64};

    fn r2(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn lattice_ball(d: &Arc<GridDomain>, center: usize, r: f64) -> PointedSet {
        let c = d.coord(center);
        let nodes = (0..d.node_count())
            .filter(|&i| {
                let x = d.coord(i);
                (0..d.dim).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>() <= r * r + 1e-12
            })
            .collect();
        PointedSet::new(d, center, nodes).unwrap()
    }

    fn slack_equal(a: &PointedSet, b: &PointedSet) -> bool {
        a.nodes.iter().all(|&q| b.contains_with_slack(q))
            && b.nodes.iter().all(|&q| a.contains_with_slack(q))
    }

    #[test]
    fn identity_dilation() {
        let d = build_domain(1, &ShapeSpec::Ball { radius: 1.0 }, 65).unwrap();
        let s = lattice_ball(&d, d.nearest_node(&[0.25, 0.0]).unwrap(), 0.3);
        assert_eq!(dilate(&s, 1.0).unwrap().nodes, s.nodes);
    }

    #[test]
    fn ball_doubles() {
        let d = build_domain(1, &ShapeSpec::Ball { radius: 2.0 }, 129).unwrap();
        let o = d.origin_node().unwrap();
        let s = lattice_ball(&d, o, 1.0);
        let s2 = dilate(&s, 2.0).unwrap();
        assert!(slack_equal(&s2, &lattice_ball(&d, o, 2.0)));
        assert!(matches!(dilate(&s, 2.5), Err(Error::DilationEscape)));
        assert!(dilate(&s, 0.0).is_err());
    }

    #[test]
    fn anisotropic_measure_scales() {
        let d = build_domain(1, &ShapeSpec::Ball { radius: 1.0 }, 129).unwrap();
        let o = d.origin_node().unwrap();
        // real analogue of diag(4, 1/4): 4x^2 + y^2/4 <= 0.04
        let nodes = (0..d.node_count())
            .filter(|&i| {
                let x = d.coord(i);
                4.0 * x[0] * x[0] + 0.25 * x[1] * x[1] <= 0.16
            })
            .collect();
        let s = PointedSet::new(&d, o, nodes).unwrap();
        for c in [0.5, 0.75, 1.1, 1.2] {
            let ratio = dilate(&s, c).unwrap().measure() / s.measure();
            assert!((ratio / (c * c) - 1.0).abs() < 0.03, "c = {c}: {ratio}");
        }
    }

    #[test]
    fn dilation_semigroup() {
        let d = build_domain(1, &ShapeSpec::Ball { radius: 1.5 }, 129).unwrap();
        let s = lattice_ball(&d, d.nearest_node(&[0.0625, -0.03125]).unwrap(), 0.12);
        for a in [0.5, 2.0, 3.0] {
            for b in [0.5, 2.0, 3.0] {
                let ab = dilate(&dilate(&s, a).unwrap(), b).unwrap();
                let direct = dilate(&s, a * b).unwrap();
                assert!(slack_equal(&ab, &direct), "a = {a}, b = {b}");
            }
        }
    }

    fn quadratic_section(d: &Arc<GridDomain>, u: &GridFunction, x: &[f64], mu: f64) -> Section {
        let q = d.nearest_node(x).unwrap();
        let (h, _) = crate::sections::taylor_split(u, q).unwrap();
        build_section(u, q, mu, &h).unwrap()
    }

    #[test]
    fn engulfing_for_balls() {
        let d = build_domain(1, &ShapeSpec::Ball { radius: 1.0 }, 129).unwrap();
        let u = GridFunction::from_fn(&d, r2);
        let s1 = quadratic_section(&d, &u, &[0.1, 0.0], 0.04);
        let s2 = quadratic_section(&d, &u, &[-0.1, 0.05], 0.01);
        let rep = check_engulfing(&s1, &s2).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        let far = quadratic_section(&d, &u, &[0.6, 0.0], 0.01);
        assert_eq!(
            check_engulfing(&s2, &far).unwrap().verdict,
            Verdict::NotApplicable
        );
        let small = quadratic_section(&d, &u, &[0.1, 0.0], 0.005);
        assert!(matches!(
            check_engulfing(&s1, &small),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn engulfing_detects_failure() {
        // S2 a thin sliver: 10 S2 cannot contain the fat S1
        let d = build_domain(1, &ShapeSpec::Ball { radius: 1.0 }, 129).unwrap();
        let u = GridFunction::from_fn(&d, r2);
        let s1 = quadratic_section(&d, &u, &[0.0, 0.0], 0.04);
        let mut s2 = s1.clone();
        s2.height = 0.04;
        s2.nodes.retain(|&q| d.coord(q)[1].abs() < 1e-9);
        let rep = check_engulfing(&s1, &s2).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        assert!(rep.offenders > 0);
    }

    #[test]
    fn shape_compatibility_examples() {
        let i = HermitianTransform::identity(2);
        let r = shape_compatibility(&i, &i, 0.1).unwrap();
        assert!(r.pass && (r.norm_12 - 1.0).abs() < 1e-12);
        let t = HermitianTransform::diagonal(&[1.1, 1.0 / 1.1]);
        let r = shape_compatibility(&i, &t, 0.1).unwrap();
        assert!((r.norm_12 - 1.1).abs() < 1e-12 && (r.norm_21 - 1.1).abs() < 1e-12);
        assert!((r.bound - 1.4938271604938271).abs() < 1e-12 && r.pass);
        let r = shape_compatibility(&i, &HermitianTransform::diagonal(&[2.0, 0.5]), 0.1).unwrap();
        assert!(!r.pass && (r.norm_12 - 2.0).abs() < 1e-12);
        let z = HermitianTransform::from_matrix(CMat::zeros(2, 2));
        assert!(matches!(
            shape_compatibility(&i, &z, 0.1),
            Err(Error::SingularTransform)
        ));
    }

    #[test]
    fn uniqueness_probe() {
        let d = build_domain(2, &ShapeSpec::Ball { radius: 1.0 }, 17).unwrap();
        let u = GridFunction::from_fn(&d, r2);
        let o = d.origin_node().unwrap();
        let (h, _) = crate::sections::taylor_split(&u, o).unwrap();
        let a = HermitianMatrix::identity(2);
        let r = shape_uniqueness_probe(&u, o, 0.25, &h, &h, &a, &a, 0.05).unwrap();
        assert!(r.shape.pass);

        let mut b = CMat::zeros(2, 2);
        b[(0, 1)] = C64::new(1e-6, 0.0);
        let ripple = PluriharmonicPoly::new(h.center.clone(), vec![C64::new(1e-6, -1e-6); 2], b);
        let h2 = h.plus(&ripple);
        let r = shape_uniqueness_probe(&u, o, 0.25, &h, &h2, &a, &a, 0.05).unwrap();
        assert!(r.shape.pass);

        let bad = HermitianMatrix::diagonal(&[9.0, 1.0 / 9.0]);
        assert!(matches!(
            shape_uniqueness_probe(&u, o, 0.25, &h, &h, &a, &bad, 0.05),
            Err(Error::Precondition(_))
        ));
    }
}
