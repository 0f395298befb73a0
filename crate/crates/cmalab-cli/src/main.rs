use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cmalab::badset::BadSetReport;
use cmalab::covering::weak_constant;
use cmalab::expr::Recipe;
use cmalab::grid::io::write_csv;
use cmalab::grid::{build_domain, GridFunction, ShapeSpec};
use cmalab::pipeline::{
    badset_stage, chains_stage, cover_family, engulf_stage, load_instance, random_family_specs,
    random_field, run_pipeline, save_instance, shape_for, solve_stage, to_json_bytes, w2p_stage,
    weak_field, BadsetConfig, BadsetInput, BadsetOutcome, ChainsOutcome, CoverOutcome, EpsBar,
    ExperimentConfig, FamilySpec, Instance, InstanceMeta,
};
use cmalab::sections::{ChainConfig, ChainContext};
use cmalab::solver::SolveConfig;
use cmalab::{Error, Result};

#[derive(Parser)]
#[command(name = "cmalab", version, about = "Complex Monge-Ampere section and bad-set experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve det u_{i jbar} = f with zero boundary values.
    Solve(SolveArgs),
    /// Build section chains at given centers.
    Sections(SectionsArgs),
    /// Sample intersecting section pairs and check engulfing.
    Engulf(EngulfArgs),
    /// Vitali selection on section families, plus the weak (1,1) sweep.
    Cover(CoverArgs),
    /// Good/bad set classification, decay table, Hessian bounds, contact set.
    Badset(BadsetArgs),
    /// Direct and dyadic L^p accounting for the second derivatives.
    W2p(W2pArgs),
    /// Run every stage from a TOML config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 65)]
    resolution: usize,
    /// Boundary perturbation; 0 is the unit ball.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Right side over x, y, x1, y1, x2, y2, r, r1, theta, eps.
    #[arg(long, default_value = "1")]
    f_expr: String,
    /// Binary cache (with a .json sidecar), or CSV when the name ends in .csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SectionsArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Base point as comma-separated real coordinates; repeatable.
    #[arg(long, required = true, allow_hyphen_values = true)]
    center: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Height ratio between levels.
    #[arg(long, default_value_t = 0.1)]
    mu0: f64,
    #[arg(long, default_value_t = 0.1)]
    top_height: f64,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, alias = "out")]
    out_chain: PathBuf,
}

#[derive(Args)]
struct EngulfArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Chain JSON written by `sections`.
    #[arg(long)]
    chains: PathBuf,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 20_000)]
    max_attempts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sections have radius at least this many cells.
    #[arg(long, default_value_t = 4.0)]
    min_cells: f64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct CoverArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Family JSON: one family spec or a list of them.
    #[arg(long, conflicts_with = "chains")]
    family: Option<PathBuf>,
    /// CSV of node indices replacing each family's target ball.
    #[arg(long, requires = "family")]
    target_set: Option<PathBuf>,
    /// Draw random families from the chains in this JSON instead.
    #[arg(long)]
    chains: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    families: usize,
    #[arg(long, default_value_t = 24)]
    max_members: usize,
    /// Random fields for the weak (1,1) sweep.
    #[arg(long, default_value_t = 0)]
    fields: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    min_cells: f64,
    #[arg(long, default_value_t = 4.0)]
    volume_constant: f64,
    #[arg(long)]
    report: PathBuf,
    /// Two-column CSV of t against the worst level ratio.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct BadsetArgs {
    #[arg(long)]
    instance: PathBuf,
    /// A number, `recipe` or `recipe(p)`.
    #[arg(long, default_value = "recipe")]
    eps_bar: String,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    mu0: f64,
    #[arg(long, default_value_t = 0.009)]
    top_height: f64,
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, default_value_t = 0.8)]
    radius: f64,
    /// JSON report; the decay rows go to the same name with .csv.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct W2pArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_values_t = [2.0])]
    p: Vec<f64>,
    /// JSON report written by `badset`, for the dyadic bound.
    #[arg(long)]
    badset: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_bytes(value)?)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn gamma_of(shape: &ShapeSpec) -> f64 {
    match *shape {
        ShapeSpec::PerturbedBall { gamma } => gamma,
        ShapeSpec::Ball { .. } => 0.0,
    }
}

/// The instance and the unit-right-side solve on its domain.
fn instance_with_v0(path: &Path) -> Result<(Instance, GridFunction, cmalab::solver::SolveReport)> {
    let inst = load_instance(path)?;
    let one = GridFunction::constant(&inst.u.domain, 1.0);
    let (v0, rep) = cmalab::solver::solve_dirichlet(&inst.u.domain, &one, &|_| 0.0, &SolveConfig::default())?;
    Ok((inst, v0, rep))
}

fn solve(a: &SolveArgs) -> Result<()> {
    let shape = shape_for(a.gamma);
    let domain = build_domain(a.n, &shape, a.resolution)?;
    let recipe = Recipe::parse(&a.f_expr)?;
    let f = recipe.sample(&domain, a.eps)?;
    let s = solve_stage(&domain, &shape, &recipe, &f, a.eps, &SolveConfig::default())?;
    if a.out.extension().is_some_and(|e| e == "csv") {
        write_csv(&s.u, &a.out)?;
    } else {
        let meta = InstanceMeta { n: a.n, resolution: a.resolution, shape, f_expr: a.f_expr.clone(), eps: a.eps };
        save_instance(&Instance { meta, u: s.u }, &a.out)?;
    }
    if let Some(r) = &a.report {
        write_json(r, &s.outcome)?;
    }
    let o = &s.outcome;
    println!(
        "solved n={} res={} h={:.5}: {} Newton steps, residual {:.2e}, sandwich {}, barrier {}",
        o.n,
        o.resolution,
        o.h,
        o.u.iterations,
        o.u.residual,
        pass(o.sandwich.passes),
        pass(o.barrier.passes)
    );
    if let (Some(e), Some(b)) = (o.exact_error, o.exact_bound) {
        println!("exact-ball error {e:.3e} (bound {b:.3e})");
    }
    Ok(())
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

fn parse_point(s: &str, dim: usize) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidInput(format!("bad center {s:?}: {e}")))?;
    if v.len() != dim {
        return Err(Error::InvalidInput(format!("center {s:?} needs {dim} coordinates")));
    }
    Ok(v)
}

fn sections(a: &SectionsArgs) -> Result<()> {
    let (inst, v0, rep) = instance_with_v0(&a.instance)?;
    let dom = &inst.u.domain;
    let cfg = ChainConfig { mu0: a.mu0, top_height: Some(a.top_height), ..ChainConfig::default() };
    let ctx = ChainContext::from_parts(&inst.u, &v0, &rep, &cfg)?;
    let bases = a
        .center
        .iter()
        .map(|c| {
            let x = parse_point(c, dom.dim)?;
            dom.nearest_node(&x).ok_or_else(|| Error::InvalidInput(format!("center {c:?} is off the grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = chains_stage(&ctx, &bases, a.sigma, a.levels)?;
    write_json(&a.out_chain, &out)?;
    let bad = out.fits.iter().filter(|f| !f.pass).count();
    println!(
        "{} chains, {} fitted levels, {} outside tolerance, {} broken",
        out.chains.len(),
        out.fits.len(),
        bad,
        out.chains.iter().filter(|c| c.failure.is_some()).count()
    );
    Ok(())
}

fn engulf(a: &EngulfArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let chains: ChainsOutcome = read_json(&a.chains)?;
    let floor = (a.min_cells * inst.u.domain.h).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let out = engulf_stage(&inst.u, &chains.records(), a.pairs, a.max_attempts, floor, &mut rng)?;
    write_json(&a.report, &out)?;
    println!(
        "{} of {} pairs found in {} attempts, {} failures: {}",
        out.rows.len(),
        out.requested,
        out.attempts,
        out.failures,
        pass(out.pass)
    );
    Ok(())
}

fn read_node_list(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        for field in rec?.iter() {
            let t = field.trim();
            if t.is_empty() {
                continue;
            }
            match t.parse::<usize>() {
                Ok(v) => out.push(v),
                Err(_) if out.is_empty() => continue,
                Err(e) => return Err(Error::InvalidInput(format!("bad node index {t:?}: {e}"))),
            }
        }
    }
    Ok(out)
}

fn cover(a: &CoverArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let u = &inst.u;
    let floor = (a.min_cells * u.domain.h).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let specs: Vec<FamilySpec> = match (&a.family, &a.chains) {
        (Some(path), _) => {
            let v: serde_json::Value = read_json(path)?;
            if v.is_array() {
                serde_json::from_value(v)?
            } else {
                vec![serde_json::from_value(v)?]
            }
        }
        (None, Some(path)) => {
            let chains: ChainsOutcome = read_json(path)?;
            random_family_specs(&chains.records(), a.families, a.max_members, floor, &mut rng)?
        }
        (None, None) => return Err(Error::InvalidInput("need --family or --chains".into())),
    };
    if specs.is_empty() {
        return Err(Error::InvalidInput("no families given".into()));
    }
    let target = a.target_set.as_deref().map(read_node_list).transpose()?;
    let families = specs
        .iter()
        .enumerate()
        .map(|(i, s)| cover_family(u, s, i, a.volume_constant, target.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let weak = (0..a.fields)
        .map(|k| {
            let fam = k % specs.len();
            let field = random_field(&u.domain, &mut rng);
            weak_field(u, &specs[fam], &field, (k, fam), a.volume_constant)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = CoverOutcome {
        volume_constant: a.volume_constant,
        height_floor: floor,
        cover_pass: families.iter().all(|f| f.pass),
        weak_pass: weak.iter().all(|w| w.pass),
        weak_constant: weak_constant(u.domain.n),
        families,
        weak,
    };
    write_json(&a.report, &out)?;
    if let Some(p) = &a.plot {
        let mut text = String::from("t,level_ratio\n");
        for (t, r) in out.weak_plot() {
            text.push_str(&format!("{t},{r}\n"));
        }
        std::fs::write(p, text)?;
    }
    println!(
        "{} families: covering {}; {} fields: weak (1,1) {}",
        out.families.len(),
        pass(out.cover_pass),
        out.weak.len(),
        pass(out.weak_pass)
    );
    Ok(())
}

fn badset(a: &BadsetArgs) -> Result<()> {
    let (inst, v0, rep) = instance_with_v0(&a.instance)?;
    let eps_bar = match a.eps_bar.parse::<f64>() {
        Ok(v) => EpsBar::Value(v),
        Err(_) => EpsBar::Keyword(a.eps_bar.clone()),
    }
    .resolve(inst.meta.n)?;
    let cfg = ChainConfig { mu0: a.mu0, top_height: Some(a.top_height), ..ChainConfig::default() };
    let ctx = ChainContext::from_parts(&inst.u, &v0, &rep, &cfg)?;
    let bcfg = BadsetConfig { levels: a.levels, radius: a.radius, ..BadsetConfig::default() };
    let (out, _) = badset_stage(&BadsetInput {
        ctx: &ctx,
        eps_bar,
        sigma: a.sigma,
        eps: inst.meta.eps,
        gamma: gamma_of(&inst.meta.shape),
        k_max: a.k_max,
        stride: a.stride,
        cfg: &bcfg,
    })?;
    write_json(&a.report, &out)?;
    out.report.write_csv(&a.report.with_extension("csv"))?;
    for r in &out.report.rows {
        println!(
            "k={} r_k={:.4} m(A_k)={:.4e} bound={:.4e} {}{}",
            r.k,
            r.radius,
            r.measure,
            r.bound,
            pass(r.pass),
            if r.vacuous { " (vacuous)" } else { "" }
        );
    }
    println!(
        "monotone {}, Hessian bounds {}, contact fraction {:.4}",
        pass(out.report.monotone),
        pass(out.hessian_pass),
        out.contact.fraction
    );
    Ok(())
}

fn w2p(a: &W2pArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let report: Option<BadSetReport> = match &a.badset {
        None => None,
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            Some(match serde_json::from_value::<BadsetOutcome>(v.clone()) {
                Ok(o) => o.report,
                Err(_) => serde_json::from_value::<BadSetReport>(v)?,
            })
        }
    };
    let out = w2p_stage(&inst.u, &a.p, report.as_ref())?;
    write_json(&a.report, &out)?;
    for r in &out.reports {
        print!("p={}: direct {:.4e}", r.p, r.direct.total);
        if let Some(d) = &r.dyadic {
            print!(", dyadic {:.4e}", d.total);
        }
        println!(", full W2p ratio {:.4}", r.full.ratio);
    }
    Ok(())
}

fn pipeline(a: &PipelineArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let m = run_pipeline(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&m.verdicts)?);
    println!("wrote {} files to {}", m.files.len() + 1, cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Sections(a) => sections(a),
        Command::Engulf(a) => engulf(a),
        Command::Cover(a) => cover(a),
        Command::Badset(a) => badset(a),
        Command::W2p(a) => w2p(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
