//! Experiment orchestration: solve, chains, engulfing, covering, bad sets
//! and norms, written as JSON/CSV artifacts with a hashed manifest.

mod config;
mod instance;
mod stages;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    shape_for, BadsetConfig, ChainsConfig, CoverConfig, EngulfConfig, EpsBar, ExperimentConfig, Plan,
    DEFAULT_RECIPE,
};
pub use instance::{load_instance, save_instance, sidecar_path, to_json_bytes, Instance, InstanceMeta};
pub use stages::*;

use crate::error::{Error, Result};
use crate::grid::io::write_csv;
use crate::sections::ChainContext;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const STAGES: [&str; 6] = ["solve", "chains", "engulf", "cover", "badset", "w2p"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub state: StageState,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Pass/fail per check; `None` when the check did not run or does not
/// apply to the instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub solver_exact: Option<bool>,
    pub sandwich: Option<bool>,
    pub barrier: Option<bool>,
    pub section_fits: Option<bool>,
    pub engulfing: Option<bool>,
    pub covering: Option<bool>,
    pub weak_type: Option<bool>,
    pub decay: Option<bool>,
    pub hessian_bounds: Option<bool>,
    pub contact_fraction: Option<f64>,
    pub contact: Option<bool>,
    pub dyadic_dominates: Option<bool>,
    pub all_pass: bool,
}

impl Verdicts {
    fn settle(&mut self) {
        let flags = [
            self.solver_exact,
            self.sandwich,
            self.barrier,
            self.section_fits,
            self.engulfing,
            self.covering,
            self.weak_type,
            self.decay,
            self.hessian_bounds,
            self.contact,
            self.dyadic_dominates,
        ];
        self.all_pass = flags.iter().all(|f| f.unwrap_or(true));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the config as JSON, with the output directory blanked.
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub eps_bar: f64,
    pub stages: Vec<StageStatus>,
    pub files: Vec<FileEntry>,
    pub verdicts: Verdicts,
}

impl Manifest {
    pub fn stage(&self, name: &str) -> Option<&StageStatus> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    Ok(sha256_hex(&serde_json::to_vec(&c)?))
}

struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Hashes a file already written under the output directory.
    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(name))?;
        self.files.push(FileEntry { path: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        std::fs::write(self.path(name), to_json_bytes(value)?)?;
        self.record(name)
    }

    fn csv_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.record(name)
    }
}

struct Tracker {
    stages: Vec<StageStatus>,
}

impl Tracker {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        match f() {
            Ok(v) => {
                self.set(name, StageState::Ok, None);
                Ok(v)
            }
            Err(e) => {
                self.set(name, StageState::Failed, Some(e.to_string()));
                Err(e.in_stage(name))
            }
        }
    }

    fn set(&mut self, name: &str, state: StageState, error: Option<String>) {
        if let Some(s) = self.stages.iter_mut().find(|s| s.stage == name) {
            s.state = state;
            s.error = error;
        }
    }
}

fn body(cfg: &ExperimentConfig, plan: &Plan, out: &mut Output, t: &mut Tracker, v: &mut Verdicts) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let solved = t.run("solve", || {
        let s = solve_stage(&plan.domain, &plan.shape, &plan.recipe, &plan.f, cfg.eps, &cfg.solve)?;
        let meta = InstanceMeta {
            n: cfg.n,
            resolution: cfg.resolution,
            shape: plan.shape.clone(),
            f_expr: plan.recipe.source().to_string(),
            eps: cfg.eps,
        };
        save_instance(&Instance { meta: meta.clone(), u: s.u.clone() }, &out.path("instance.cmag"))?;
        out.record("instance.cmag")?;
        out.record("instance.cmag.json")?;
        let v0_meta = InstanceMeta { f_expr: "1".into(), eps: 0.0, ..meta };
        save_instance(&Instance { meta: v0_meta, u: s.v0.clone() }, &out.path("v0.cmag"))?;
        out.record("v0.cmag")?;
        out.record("v0.cmag.json")?;
        write_csv(&s.u, &out.path("u.csv"))?;
        out.record("u.csv")?;
        out.json("solve.json", &s.outcome)?;
        Ok(s)
    })?;
    v.solver_exact = solved.outcome.exact_pass();
    v.sandwich = Some(solved.outcome.sandwich.passes);
    v.barrier = Some(solved.outcome.barrier.passes);

    let chains = t.run("chains", || {
        let ctx =
            ChainContext::from_parts(&solved.u, &solved.v0, &solved.outcome.v0, &cfg.chain_config(cfg.chains.top_height))?;
        let bases = sample_base_points(&ctx, cfg.chains.base_radius, cfg.chains.base_points, &mut rng)?;
        let c = chains_stage(&ctx, &bases, cfg.sigma, cfg.chains.levels)?;
        out.json("chains.json", &c)?;
        out.csv_rows("fits.csv", &c.fits)?;
        Ok(c)
    })?;
    v.section_fits = Some(chains.all_fit);
    let records = chains.records();

    let engulf = t.run("engulf", || {
        let e = engulf_stage(&solved.u, &records, cfg.engulf.pairs, cfg.engulf.max_attempts, plan.height_floor, &mut rng)?;
        out.json("engulf.json", &e)?;
        out.csv_rows("engulf.csv", &e.rows)?;
        Ok(e)
    })?;
    v.engulfing = Some(engulf.pass);

    let cover = t.run("cover", || {
        let (c, specs) = cover_stage(&solved.u, &records, &cfg.cover, plan.height_floor, &mut rng)?;
        out.json("cover.json", &c)?;
        out.json("cover_families.json", &specs)?;
        let mut text = String::from("t,level_ratio\n");
        for (tt, r) in c.weak_plot() {
            let _ = writeln!(text, "{tt},{r}");
        }
        std::fs::write(out.path("weak_plot.csv"), text)?;
        out.record("weak_plot.csv")?;
        Ok(c)
    })?;
    v.covering = Some(cover.cover_pass);
    v.weak_type = Some(cover.weak_pass);

    let badset = t.run("badset", || {
        let ctx =
            ChainContext::from_parts(&solved.u, &solved.v0, &solved.outcome.v0, &cfg.chain_config(cfg.badset.top_height))?;
        let (b, profiles) = badset_stage(&BadsetInput {
            ctx: &ctx,
            eps_bar: plan.eps_bar,
            sigma: cfg.sigma,
            eps: cfg.eps,
            gamma: cfg.gamma,
            k_max: cfg.k_max,
            stride: cfg.stride,
            cfg: &cfg.badset,
        })?;
        out.json("badset.json", &b)?;
        b.report.write_csv(&out.path("badset.csv"))?;
        out.record("badset.csv")?;
        b.report.write_plot_csv(&out.path("badset_plot.csv"))?;
        out.record("badset_plot.csv")?;
        out.json("profiles.json", &profiles)?;
        Ok(b)
    })?;
    v.decay = Some(badset.report.all_pass());
    v.hessian_bounds = Some(badset.hessian_pass);
    v.contact_fraction = Some(badset.contact.fraction);
    v.contact = badset.contact_pass;

    let w2p = t.run("w2p", || {
        let w = w2p_stage(&solved.u, &cfg.p, Some(&badset.report))?;
        out.json("w2p.json", &w)?;
        Ok(w)
    })?;
    v.dyadic_dominates = w2p.dominated;
    Ok(())
}

/// Runs every stage into `cfg.output_dir`. The config is validated before
/// anything is written; a stage error is recorded in the manifest and
/// returned as [`Error::Stage`].
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Manifest> {
    let plan = cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Output { dir: cfg.output_dir.clone(), files: Vec::new() };
    let mut tracker = Tracker {
        stages: STAGES
            .iter()
            .map(|s| StageStatus { stage: s.to_string(), state: StageState::Skipped, error: None })
            .collect(),
    };
    let mut verdicts = Verdicts::default();
    let result = body(cfg, &plan, &mut out, &mut tracker, &mut verdicts);
    verdicts.settle();
    if result.is_err() {
        verdicts.all_pass = false;
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        seed: cfg.seed,
        config_sha256: config_hash(cfg)?,
        config: cfg.clone(),
        eps_bar: plan.eps_bar,
        stages: tracker.stages,
        files: out.files,
        verdicts,
    };
    std::fs::write(out.dir.join("manifest.json"), to_json_bytes(&manifest)?)?;
    result.map(|_| manifest)
}

/// Loads a manifest written by [`run_pipeline`].
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?)
}

/// Stage error as recorded by the manifest, for callers holding an [`Error`].
pub fn stage_of(e: &Error) -> Option<&str> {
    match e {
        Error::Stage { stage, .. } => Some(stage),
        _ => None,
    }
}

#[cfg(test)]
mod tests;
