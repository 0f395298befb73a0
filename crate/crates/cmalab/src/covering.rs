//! Vitali-type selection over finite section families, maximal functions
//! over sections and the X/Y measure comparison.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engulfing::{PointedSet, ENGULFING_FACTOR};
use crate::error::{Error, Result};
use crate::grid::{GridDomain, GridFunction};

/// Weak (1,1) constant 10^{2n} with 10% slack.
pub fn weak_constant(n: usize) -> f64 {
    1.1 * 10f64.powi(2 * n as i32)
}

/// Euclidean volume of a ball of radius r in C^n = R^{2n}.
pub fn ball_measure(n: usize, r: f64) -> f64 {
    let k = n as i32;
    PI.powi(k) * r.powi(2 * k) / (1..=n).product::<usize>() as f64
}

#[derive(Clone, Debug)]
pub struct FamilyMember {
    pub set: PointedSet,
    pub height: f64,
}

#[derive(Clone, Debug)]
pub struct SectionFamily {
    pub domain: Arc<GridDomain>,
    pub members: Vec<FamilyMember>,
    /// Members satisfy m(B_sqrt(mu)) / C <= m(S) <= C m(B_sqrt(mu)).
    pub volume_constant: f64,
}

impl SectionFamily {
    pub fn new(
        domain: &Arc<GridDomain>,
        members: Vec<FamilyMember>,
        volume_constant: f64,
    ) -> Result<SectionFamily> {
        if !(volume_constant >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "volume constant {volume_constant} below 1"
            )));
        }
        for (i, m) in members.iter().enumerate() {
            if !Arc::ptr_eq(&m.set.domain, domain) {
                return Err(Error::DomainMismatch);
            }
            if !(m.height > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "member {i} has height {}",
                    m.height
                )));
            }
            let ratio = m.set.measure() / ball_measure(domain.n, m.height.sqrt());
            if ratio > volume_constant || ratio < 1.0 / volume_constant {
                return Err(Error::InvalidInput(format!(
                    "member {i}: measure ratio {ratio:.3} outside [1/{volume_constant}, {volume_constant}]"
                )));
            }
        }
        Ok(SectionFamily {
            domain: domain.clone(),
            members,
            volume_constant,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn coverage_mask(&self) -> Vec<bool> {
        let mut covered = vec![false; self.domain.node_count()];
        for m in &self.members {
            for &q in &m.set.nodes {
                covered[q] = true;
            }
        }
        covered
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub member: usize,
    pub sqrt_height: f64,
    /// Supremum of sqrt(mu) over admissible members in this round.
    pub sup_sqrt_height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Vec<usize>,
    pub steps: Vec<GreedyStep>,
}

/// Greedy Vitali selection: each round picks, among members meeting X that
/// do not intersect anything chosen so far, the largest height (lowest
/// index on ties), which exceeds half the supremum.
pub fn vitali_select(family: &SectionFamily, x: &[usize]) -> Result<Selection> {
    let covered = family.coverage_mask();
    if let Some(&q) = x.iter().find(|&&q| !covered[q]) {
        return Err(Error::Coverage { node: q });
    }
    let mut in_x = vec![false; family.domain.node_count()];
    for &q in x {
        in_x[q] = true;
    }
    let mut alive: Vec<usize> = (0..family.len())
        .filter(|&i| family.members[i].set.nodes.iter().any(|&q| in_x[q]))
        .collect();
    let mut chosen = Vec::new();
    let mut steps = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive[1..] {
            if family.members[i].height > family.members[best].height {
                best = i;
            }
        }
        let s = family.members[best].height.sqrt();
        steps.push(GreedyStep {
            member: best,
            sqrt_height: s,
            sup_sqrt_height: s,
        });
        chosen.push(best);
        let pick = &family.members[best].set;
        alive.retain(|&i| i != best && !family.members[i].set.intersects(pick));
    }
    Ok(Selection { chosen, steps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionCheck {
    pub disjoint: bool,
    /// Nodes of X outside every chosen 10-dilation, even with one-cell slack.
    pub uncovered: Vec<usize>,
    pub selected_measure: f64,
    pub target_measure: f64,
}

impl SelectionCheck {
    pub fn passes(&self) -> bool {
        self.disjoint && self.uncovered.is_empty()
    }
}

pub fn check_selection(
    family: &SectionFamily,
    x: &[usize],
    sel: &Selection,
) -> Result<SelectionCheck> {
    let sets: Vec<&PointedSet> = sel.chosen.iter().map(|&i| &family.members[i].set).collect();
    let mut disjoint = true;
    for i in 0..sets.len() {
        for j in (i + 1)..sets.len() {
            if sets[i].intersects(sets[j]) {
                disjoint = false;
            }
        }
    }
    let dils = sets
        .iter()
        .map(|s| s.dilation(ENGULFING_FACTOR))
        .collect::<Result<Vec<_>>>()?;
    let uncovered = x
        .iter()
        .copied()
        .filter(|&q| !dils.iter().any(|d| d.contains_node_with_slack(q)))
        .collect();
    let vol = family.domain.cell_volume();
    Ok(SelectionCheck {
        disjoint,
        uncovered,
        selected_measure: sets.iter().map(|s| s.measure()).sum(),
        target_measure: x.len() as f64 * vol,
    })
}

/// M(|f|)(x) = max over members containing x of the member average of |f|,
/// evaluated on `region`; NaN elsewhere.
pub fn maximal_function(
    f: &GridFunction,
    family: &SectionFamily,
    region: &[usize],
) -> Result<GridFunction> {
    if !Arc::ptr_eq(&f.domain, &family.domain) {
        return Err(Error::DomainMismatch);
    }
    let mut m = vec![f64::NEG_INFINITY; f.domain.node_count()];
    for mem in &family.members {
        let nodes = &mem.set.nodes;
        let mut sum = 0.0;
        for &q in nodes {
            let v = f.values[q];
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("field not finite at node {q}")));
            }
            sum += v.abs();
        }
        let avg = sum / nodes.len() as f64;
        for &q in nodes {
            if avg > m[q] {
                m[q] = avg;
            }
        }
    }
    let mut values = vec![f64::NAN; m.len()];
    for &q in region {
        if m[q] == f64::NEG_INFINITY {
            return Err(Error::Coverage { node: q });
        }
        values[q] = m[q];
    }
    Ok(GridFunction {
        domain: f.domain.clone(),
        values,
        trace: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakRow {
    pub t: f64,
    /// m{x in region : M(|f|)(x) > t}
    pub level_measure: f64,
    pub bound: f64,
    pub pass: bool,
}

/// m{M(|f|) > t} <= constant ||f||_{L^1} / t over the given levels.
pub fn weak_type_sweep(
    f: &GridFunction,
    family: &SectionFamily,
    region: &[usize],
    levels: &[f64],
    constant: f64,
) -> Result<Vec<WeakRow>> {
    let mf = maximal_function(f, family, region)?;
    let vol = f.domain.cell_volume();
    let mut support = vec![false; f.domain.node_count()];
    for mem in &family.members {
        for &q in &mem.set.nodes {
            support[q] = true;
        }
    }
    let l1: f64 = (0..support.len())
        .filter(|&q| support[q])
        .map(|q| f.values[q].abs())
        .sum::<f64>()
        * vol;
    Ok(levels
        .iter()
        .map(|&t| {
            let level_measure = region.iter().filter(|&&q| mf.values[q] > t).count() as f64 * vol;
            let bound = constant * l1 / t;
            WeakRow {
                t,
                level_measure,
                bound,
                pass: level_measure <= bound,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisViolation {
    pub member: usize,
    pub hypothesis: u8,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    pub measure_x: f64,
    pub measure_y: f64,
    pub eps_bar: f64,
    /// 12^{2n} eps_bar m(Y)
    pub bound: f64,
    /// Measure of the X nodes with an axis neighbor outside X.
    pub slack: f64,
    pub violations: Vec<HypothesisViolation>,
    /// None when a hypothesis fails and the conclusion is untested.
    pub pass: Option<bool>,
}

/// Checks the density hypotheses over the family, then m(X) <= 12^{2n} eps m(Y):
/// (1) members with mu0/484 <= mu <= mu0/4 have m(S n X) < eps m(S);
/// (2) members with mu <= mu0/2 and m(S n X) >= eps m(S) lie in Y.
pub fn measure_comparison(
    x: &[usize],
    y: &[usize],
    family: &SectionFamily,
    eps_bar: f64,
    mu0: f64,
) -> Result<ComparisonVerdict> {
    if !(eps_bar > 0.0 && eps_bar < 1.0 && mu0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < eps_bar < 1 and mu0 > 0, got {eps_bar}, {mu0}"
        )));
    }
    let dom = &family.domain;
    let total = dom.node_count();
    let mut in_x = vec![false; total];
    let mut in_y = vec![false; total];
    for &q in x {
        in_x[q] = true;
    }
    for &q in y {
        in_y[q] = true;
    }
    let mut violations = Vec::new();
    for (i, m) in family.members.iter().enumerate() {
        let nodes = &m.set.nodes;
        let density = nodes.iter().filter(|&&q| in_x[q]).count() as f64 / nodes.len() as f64;
        let mu = m.height;
        if mu >= mu0 / 484.0 * (1.0 - 1e-12)
            && mu <= mu0 / 4.0 * (1.0 + 1e-12)
            && density >= eps_bar
        {
            violations.push(HypothesisViolation {
                member: i,
                hypothesis: 1,
                density,
            });
        }
        if mu <= mu0 / 2.0 * (1.0 + 1e-12) && density >= eps_bar && nodes.iter().any(|&q| !in_y[q])
        {
            violations.push(HypothesisViolation {
                member: i,
                hypothesis: 2,
                density,
            });
        }
    }
    let vol = dom.cell_volume();
    let measure_x = x.len() as f64 * vol;
    let measure_y = y.len() as f64 * vol;
    let bound = 12f64.powi(2 * dom.n as i32) * eps_bar * measure_y;
    let edge = x
        .iter()
        .filter(|&&q| (0..dom.dim).any(|a| dom.axis_neighbors(q, a).any(|p| !in_x[p])))
        .count();
    let slack = edge as f64 * vol;
    let pass = violations.is_empty().then_some(measure_x <= bound + slack);
    Ok(ComparisonVerdict {
        measure_x,
        measure_y,
        eps_bar,
        bound,
        slack,
        violations,
        pass,
    })
}
