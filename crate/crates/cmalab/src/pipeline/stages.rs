use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{BadsetConfig, CoverConfig};
use crate::badset::{
    badset_decay_experiment, build_profiles, classify_dk, contact_density, sample_nodes,
    hessian_bounds_on_dk, BadSetReport, ContactReport, DecayInput, HessianVerdict, NodeProfile,
};
use crate::covering::{
    check_selection, vitali_select, weak_constant, weak_type_sweep, FamilyMember, SectionFamily,
    WeakRow,
};
use crate::engulfing::{check_engulfing, PointedSet, Verdict};
use crate::error::{Error, Result};
use crate::expr::{band_width, Recipe};
use crate::grid::{GridDomain, GridFunction, ShapeSpec};
use crate::sections::{build_section, ChainContext, ChainRecord, PluriharmonicPoly, ShiftCoefficients};
use crate::solver::{
    barrier_certificate, comparison_sandwich, solve_dirichlet, BarrierCertificate,
    SandwichCertificate, SolveConfig, SolveReport,
};
use crate::w2p::{norm_report, NormReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub n: usize,
    pub resolution: usize,
    pub h: f64,
    pub shape: ShapeSpec,
    pub f_expr: String,
    pub eps: f64,
    /// max |f - 1| over the interior.
    pub band: f64,
    pub u: SolveReport,
    pub v0: SolveReport,
    pub sandwich: SandwichCertificate,
    pub barrier: BarrierCertificate,
    /// sup |v0 - (|z|^2 - 1)| over the interior, on the exact ball only.
    pub exact_error: Option<f64>,
    /// 5 h^2.
    pub exact_bound: Option<f64>,
}

impl SolveOutcome {
    pub fn exact_pass(&self) -> Option<bool> {
        Some(self.exact_error? <= self.exact_bound?)
    }
}

pub struct Solved {
    pub u: GridFunction,
    pub v0: GridFunction,
    pub outcome: SolveOutcome,
}

/// Solves det u_{i jbar} = f and the unit-right-side problem, both with
/// zero boundary datum, and certifies them against each other.
pub fn solve_stage(
    domain: &Arc<GridDomain>,
    shape: &ShapeSpec,
    recipe: &Recipe,
    f: &GridFunction,
    eps: f64,
    cfg: &SolveConfig,
) -> Result<Solved> {
    let (u, u_report) = solve_dirichlet(domain, f, &|_| 0.0, cfg)?;
    let one = GridFunction::constant(domain, 1.0);
    let (v0, v0_report) = solve_dirichlet(domain, &one, &|_| 0.0, cfg)?;
    let n = domain.n;
    let gamma = match *shape {
        ShapeSpec::PerturbedBall { gamma } => gamma,
        ShapeSpec::Ball { .. } => 0.0,
    };
    let exact = matches!(shape, ShapeSpec::Ball { radius } if *radius == 1.0);
    let exact_error = exact.then(|| {
        domain
            .interior_nodes()
            .iter()
            .map(|&q| {
                let x = domain.coord(q);
                let p = x[..domain.dim].iter().map(|v| v * v).sum::<f64>() - 1.0;
                (v0.values[q] - p).abs()
            })
            .fold(0.0, f64::max)
    });
    let outcome = SolveOutcome {
        n,
        resolution: domain.res,
        h: domain.h,
        shape: shape.clone(),
        f_expr: recipe.source().to_string(),
        eps,
        band: band_width(f),
        u: u_report,
        v0: v0_report,
        sandwich: comparison_sandwich(&u, &v0, eps, n)?,
        barrier: barrier_certificate(&v0, gamma),
        exact_error,
        exact_bound: exact.then(|| 5.0 * domain.h * domain.h),
    };
    Ok(Solved { u, v0, outcome })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub record: ChainRecord,
    /// Why the chain stopped before its last level, if it did.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub chain: usize,
    pub base: usize,
    pub level: usize,
    pub c_in: f64,
    pub c_out: f64,
    /// 0.1 sigma + 2h / sqrt(mu) in the level's own coordinates.
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainsOutcome {
    pub sigma: f64,
    pub levels: usize,
    pub top_height: f64,
    pub mu0: f64,
    pub chains: Vec<ChainEntry>,
    pub fits: Vec<FitRow>,
    /// Every chain reached all levels and every fit is within tolerance.
    pub all_fit: bool,
}

impl ChainsOutcome {
    pub fn records(&self) -> Vec<ChainRecord> {
        self.chains.iter().map(|c| c.record.clone()).collect()
    }
}

/// `count` distinct admissible base nodes within B_radius, in draw order.
pub fn sample_base_points<R: Rng>(
    ctx: &ChainContext,
    radius: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = sample_nodes(&ctx.u.domain, radius, 1)
        .into_iter()
        .filter(|&q| ctx.check_base(q).is_ok())
        .collect();
    if candidates.len() < count {
        return Err(Error::InvalidInput(format!(
            "only {} admissible base nodes within radius {radius}, {count} requested",
            candidates.len()
        )));
    }
    Ok(candidates.choose_multiple(rng, count).copied().collect())
}

pub fn chains_stage(ctx: &ChainContext, bases: &[usize], sigma: f64, levels: usize) -> Result<ChainsOutcome> {
    let mut chains = Vec::with_capacity(bases.len());
    let mut fits = Vec::new();
    for (i, &b) in bases.iter().enumerate() {
        let (chain, failure) = ctx.chain_partial(b, sigma, levels)?;
        for l in &chain.levels {
            let tolerance = 0.1 * sigma + l.fit_slack;
            fits.push(FitRow {
                chain: i,
                base: b,
                level: l.level,
                c_in: l.fit.c_in,
                c_out: l.fit.c_out,
                tolerance,
                pass: l.fit.within(tolerance),
            });
        }
        chains.push(ChainEntry { record: chain.record(), failure: failure.map(|e| e.to_string()) });
    }
    let all_fit = chains.iter().all(|c| c.failure.is_none() && c.record.levels.len() == levels)
        && fits.iter().all(|f| f.pass);
    Ok(ChainsOutcome { sigma, levels, top_height: ctx.cfg.top(), mu0: ctx.cfg.mu0, chains, fits, all_fit })
}

/// Heights of the record usable above the floor.
fn usable_range(rec: &ChainRecord, floor: f64) -> Option<(f64, f64)> {
    if rec.levels.is_empty() {
        return None;
    }
    let (lo, hi) = rec.height_range();
    let lo = lo.max(floor);
    (lo < hi).then_some((lo, hi))
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo.ln()..=hi.ln()).exp()
    }
}

fn pool(chains: &[ChainRecord], floor: f64) -> Result<Vec<(usize, (f64, f64))>> {
    let p: Vec<_> =
        chains.iter().enumerate().filter_map(|(i, c)| usable_range(c, floor).map(|r| (i, r))).collect();
    if p.is_empty() {
        return Err(Error::InvalidInput(format!("no chain offers section heights above {floor:e}")));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngulfRow {
    pub pair: usize,
    pub chain1: usize,
    pub chain2: usize,
    pub base1: usize,
    pub base2: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub nodes1: usize,
    pub nodes2: usize,
    pub offenders: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngulfOutcome {
    pub requested: usize,
    pub attempts: usize,
    pub height_floor: f64,
    pub rows: Vec<EngulfRow>,
    pub failures: usize,
    /// All requested pairs were found and none failed.
    pub pass: bool,
}

/// Samples intersecting section pairs with mu1 <= 4 mu2 from the chains
/// (log-uniform heights) and checks S1 inside 10 S2.
pub fn engulf_stage<R: Rng>(
    u: &GridFunction,
    chains: &[ChainRecord],
    pairs: usize,
    max_attempts: usize,
    floor: f64,
    rng: &mut R,
) -> Result<EngulfOutcome> {
    let pool = pool(chains, floor)?;
    let mut rows = Vec::with_capacity(pairs);
    let mut attempts = 0;
    while rows.len() < pairs && attempts < max_attempts {
        attempts += 1;
        let (i, (lo1, hi1)) = pool[rng.gen_range(0..pool.len())];
        let (j, (lo2, hi2)) = pool[rng.gen_range(0..pool.len())];
        let mu2 = log_uniform(rng, lo2, hi2);
        let top1 = hi1.min(4.0 * mu2);
        if lo1 > top1 {
            continue;
        }
        let mu1 = log_uniform(rng, lo1, top1);
        let s1 = chains[i].section_at(u, mu1)?;
        let s2 = chains[j].section_at(u, mu2)?;
        let rep = check_engulfing(&s1, &s2)?;
        if rep.verdict == Verdict::NotApplicable {
            continue;
        }
        rows.push(EngulfRow {
            pair: rows.len(),
            chain1: i,
            chain2: j,
            base1: chains[i].base,
            base2: chains[j].base,
            mu1,
            mu2,
            nodes1: s1.nodes.len(),
            nodes2: s2.nodes.len(),
            offenders: rep.offenders,
            verdict: rep.verdict,
        });
    }
    let failures = rows.iter().filter(|r| r.verdict == Verdict::Fail).count();
    Ok(EngulfOutcome {
        requested: pairs,
        attempts,
        height_floor: floor,
        pass: rows.len() == pairs && failures == 0,
        rows,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub base: usize,
    pub height: f64,
    pub shift: ShiftCoefficients,
}

/// A family of sections and the target set X = (union of members) cap
/// B(target_center, target_radius); the whole union when that is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub members: Vec<MemberSpec>,
    pub target_center: Vec<f64>,
    pub target_radius: f64,
}

pub fn build_family(u: &GridFunction, spec: &FamilySpec, volume_constant: f64) -> Result<SectionFamily> {
    let members = spec
        .members
        .iter()
        .map(|m| {
            let shift = PluriharmonicPoly::from_coefficients(&m.shift)?;
            let s = build_section(u, m.base, m.height, &shift)?;
            Ok(FamilyMember { set: PointedSet::from_section(&s), height: m.height })
        })
        .collect::<Result<Vec<_>>>()?;
    SectionFamily::new(&u.domain, members, volume_constant)
}

pub fn family_union(family: &SectionFamily) -> Vec<usize> {
    let mut v: Vec<usize> = family.members.iter().flat_map(|m| m.set.nodes.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn target_nodes(family: &SectionFamily, spec: &FamilySpec) -> Vec<usize> {
    let d = &family.domain;
    let all = family_union(family);
    let r2 = spec.target_radius * spec.target_radius;
    let inside: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&q| {
            let x = d.coord(q);
            spec.target_center.iter().enumerate().map(|(a, c)| (x[a] - c).powi(2)).sum::<f64>() <= r2
        })
        .collect();
    if inside.is_empty() {
        all
    } else {
        inside
    }
}

/// The first ten families have at most 12 members, the rest up to
/// `max_members`.
pub fn random_family_specs<R: Rng>(
    chains: &[ChainRecord],
    count: usize,
    max_members: usize,
    floor: f64,
    rng: &mut R,
) -> Result<Vec<FamilySpec>> {
    let pool = pool(chains, floor)?;
    (0..count)
        .map(|k| {
            let size = if k < 10 { rng.gen_range(4..=12.min(max_members)) } else { rng.gen_range(4..=max_members) };
            let members = (0..size)
                .map(|_| {
                    let (i, (lo, hi)) = pool[rng.gen_range(0..pool.len())];
                    let height = log_uniform(rng, lo, hi);
                    let level = chains[i].level_at(height).ok_or_else(|| {
                        Error::InvalidInput(format!("height {height:e} outside chain {i}"))
                    })?;
                    Ok(MemberSpec { base: chains[i].base, height, shift: level.shift.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            let c = &chains[pool[rng.gen_range(0..pool.len())].0].base_point;
            Ok(FamilySpec { members, target_center: c.clone(), target_radius: rng.gen_range(0.1..0.5) })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub family: usize,
    pub members: usize,
    pub target_nodes: usize,
    pub chosen: Vec<usize>,
    pub disjoint: bool,
    pub uncovered: usize,
    pub selected_measure: f64,
    pub target_measure: f64,
    pub pass: bool,
}

/// Selection and covering check for one family; `target` replaces the
/// spec's target ball when given.
pub fn cover_family(
    u: &GridFunction,
    spec: &FamilySpec,
    index: usize,
    volume_constant: f64,
    target: Option<&[usize]>,
) -> Result<FamilyRow> {
    let fam = build_family(u, spec, volume_constant)?;
    let x = target.map_or_else(|| target_nodes(&fam, spec), |t| t.to_vec());
    let sel = vitali_select(&fam, &x)?;
    let chk = check_selection(&fam, &x, &sel)?;
    Ok(FamilyRow {
        family: index,
        members: fam.len(),
        target_nodes: x.len(),
        pass: chk.passes(),
        chosen: sel.chosen,
        disjoint: chk.disjoint,
        uncovered: chk.uncovered.len(),
        selected_measure: chk.selected_measure,
        target_measure: chk.target_measure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakField {
    pub field: usize,
    pub family: usize,
    pub l1_norm: f64,
    pub rows: Vec<WeakRow>,
    pub pass: bool,
}

/// Dyadic levels 2^-4 .. 2^4.
pub fn weak_levels() -> Vec<f64> {
    (-4..=4).map(|k| 2f64.powi(k)).collect()
}

/// Random nonnegative field 4 U^4 (U uniform on [0, 1)) on every lattice node.
pub fn random_field<R: Rng>(domain: &Arc<GridDomain>, rng: &mut R) -> GridFunction {
    GridFunction {
        domain: domain.clone(),
        values: (0..domain.node_count()).map(|_| 4.0 * rng.gen_range(0.0..1.0f64).powi(4)).collect(),
        trace: None,
    }
}

pub fn weak_field(
    u: &GridFunction,
    spec: &FamilySpec,
    field: &GridFunction,
    indices: (usize, usize),
    volume_constant: f64,
) -> Result<WeakField> {
    let fam = build_family(u, spec, volume_constant)?;
    let region = family_union(&fam);
    let rows = weak_type_sweep(field, &fam, &region, &weak_levels(), weak_constant(u.domain.n))?;
    let l1 = region.iter().map(|&q| field.values[q].abs()).sum::<f64>() * u.domain.cell_volume();
    Ok(WeakField { field: indices.0, family: indices.1, l1_norm: l1, pass: rows.iter().all(|r| r.pass), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverOutcome {
    pub volume_constant: f64,
    pub height_floor: f64,
    pub families: Vec<FamilyRow>,
    pub weak_constant: f64,
    pub weak: Vec<WeakField>,
    pub cover_pass: bool,
    pub weak_pass: bool,
}

impl CoverOutcome {
    /// Per level t, the largest level measure over bound across fields.
    pub fn weak_plot(&self) -> Vec<(f64, f64)> {
        weak_levels()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let worst = self
                    .weak
                    .iter()
                    .filter_map(|w| w.rows.get(i))
                    .map(|r| if r.bound > 0.0 { r.level_measure / r.bound } else { 0.0 })
                    .fold(0.0, f64::max);
                (t, worst)
            })
            .collect()
    }
}

pub fn cover_stage<R: Rng>(
    u: &GridFunction,
    chains: &[ChainRecord],
    cfg: &CoverConfig,
    floor: f64,
    rng: &mut R,
) -> Result<(CoverOutcome, Vec<FamilySpec>)> {
    let specs = random_family_specs(chains, cfg.families, cfg.max_members, floor, rng)?;
    let families = specs
        .iter()
        .enumerate()
        .map(|(i, s)| cover_family(u, s, i, cfg.volume_constant, None))
        .collect::<Result<Vec<_>>>()?;
    let weak = (0..cfg.fields)
        .map(|k| {
            let fam = k % specs.len();
            let field = random_field(&u.domain, rng);
            weak_field(u, &specs[fam], &field, (k, fam), cfg.volume_constant)
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = CoverOutcome {
        volume_constant: cfg.volume_constant,
        height_floor: floor,
        cover_pass: families.iter().all(|f| f.pass),
        weak_pass: weak.iter().all(|w| w.pass),
        weak_constant: weak_constant(u.domain.n),
        families,
        weak,
    };
    Ok((outcome, specs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadsetOutcome {
    pub top_height: f64,
    pub levels: usize,
    pub radius: f64,
    pub report: BadSetReport,
    pub hessian: Vec<HessianVerdict>,
    pub hessian_pass: bool,
    pub contact: ContactReport,
    /// Contact fraction >= 0.99, judged on the exact ball with eps = 0 only.
    pub contact_pass: Option<bool>,
}

pub struct BadsetInput<'a> {
    /// Context whose top height is the profile top height.
    pub ctx: &'a ChainContext,
    pub eps_bar: f64,
    pub sigma: f64,
    pub eps: f64,
    pub gamma: f64,
    pub k_max: usize,
    pub stride: usize,
    pub cfg: &'a BadsetConfig,
}

pub fn badset_stage(input: &BadsetInput) -> Result<(BadsetOutcome, Vec<NodeProfile>)> {
    let ctx = input.ctx;
    let b = input.cfg;
    let u = &ctx.u;
    let nodes = sample_nodes(&u.domain, b.radius, input.stride);
    let profiles = build_profiles(ctx, &nodes, input.sigma, b.levels)?;
    let report = badset_decay_experiment(&DecayInput {
        domain: &u.domain,
        profiles: &profiles,
        nodes: &nodes,
        stride: input.stride,
        eps_bar: input.eps_bar,
        sigma: input.sigma,
        epsilon: input.eps,
        k_max: input.k_max,
    })?;
    let hessian = (1..=input.k_max)
        .map(|k| hessian_bounds_on_dk(u, &classify_dk(&profiles, &nodes, k)?, b.hessian_slack))
        .collect::<Result<Vec<_>>>()?;
    let contact =
        contact_density(u, &ctx.v0, input.eps, input.gamma, b.envelope_radius, b.inner_radius, b.contact_tol)?;
    let exact = input.eps == 0.0 && input.gamma == 0.0;
    let outcome = BadsetOutcome {
        top_height: ctx.cfg.top(),
        levels: b.levels,
        radius: b.radius,
        report,
        hessian_pass: hessian.iter().all(|h| h.pass),
        hessian,
        contact_pass: exact.then_some(contact.fraction >= 0.99),
        contact,
    };
    Ok((outcome, profiles))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2pOutcome {
    pub reports: Vec<NormReport>,
    /// The dyadic bound dominates direct quadrature for every p.
    pub dominated: Option<bool>,
}

pub fn w2p_stage(u: &GridFunction, ps: &[f64], badset: Option<&BadSetReport>) -> Result<W2pOutcome> {
    let reports = ps.iter().map(|&p| norm_report(u, p, badset)).collect::<Result<Vec<_>>>()?;
    let dominated = badset.map(|_| reports.iter().all(|r| r.dominated == Some(true)));
    Ok(W2pOutcome { reports, dominated })
}
