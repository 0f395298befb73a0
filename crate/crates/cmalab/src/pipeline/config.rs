use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::badset::eps_bar_recipe;
use crate::error::{Error, Result};
use crate::expr::{band_width, Recipe};
use crate::grid::{build_domain, GridDomain, GridFunction, ShapeSpec};
use crate::sections::ChainConfig;
use crate::solver::SolveConfig;

pub const DEFAULT_RECIPE: &str = "1 + eps*cos(4*theta)*min(r*r, 1)";

/// Either a number or the keyword `recipe` / `recipe(p)`, which solves
/// 10^{(n-1)p} 12^{2n} eps-bar = 1/2 (p = 2 when omitted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsBar {
    Value(f64),
    Keyword(String),
}

impl EpsBar {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        let v = match self {
            EpsBar::Value(v) => *v,
            EpsBar::Keyword(k) => {
                let k = k.trim();
                let p = if k == "recipe" {
                    2.0
                } else if let Some(inner) = k.strip_prefix("recipe(").and_then(|r| r.strip_suffix(')')) {
                    inner
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("bad exponent in eps_bar = {k:?}")))?
                } else {
                    return Err(Error::InvalidInput(format!(
                        "eps_bar must be a number, \"recipe\" or \"recipe(p)\", got {k:?}"
                    )));
                };
                if !(p >= 1.0) || !p.is_finite() {
                    return Err(Error::InvalidInput(format!("recipe exponent {p} below 1")));
                }
                eps_bar_recipe(n, p)
            }
        };
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidInput(format!("eps_bar = {v} outside (0, 1)")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainsConfig {
    pub base_points: usize,
    pub levels: usize,
    pub top_height: f64,
    /// Base points are drawn from the interior nodes of this ball.
    pub base_radius: f64,
}

impl Default for ChainsConfig {
    fn default() -> Self {
        ChainsConfig { base_points: 25, levels: 3, top_height: 0.1, base_radius: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngulfConfig {
    pub pairs: usize,
    pub max_attempts: usize,
}

impl Default for EngulfConfig {
    fn default() -> Self {
        EngulfConfig { pairs: 200, max_attempts: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverConfig {
    pub families: usize,
    pub fields: usize,
    pub max_members: usize,
    pub volume_constant: f64,
}

impl Default for CoverConfig {
    fn default() -> Self {
        CoverConfig { families: 50, fields: 20, max_members: 24, volume_constant: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BadsetConfig {
    pub top_height: f64,
    pub levels: usize,
    /// Profiles are sampled on the stride sub-lattice of this ball.
    pub radius: f64,
    pub hessian_slack: f64,
    pub envelope_radius: f64,
    pub inner_radius: f64,
    pub contact_tol: f64,
}

impl Default for BadsetConfig {
    fn default() -> Self {
        BadsetConfig {
            top_height: 0.009,
            levels: 2,
            radius: 0.8,
            hessian_slack: 0.1,
            envelope_radius: 0.9,
            inner_radius: 0.5,
            contact_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub resolution: usize,
    /// 0 gives the exact unit ball.
    pub gamma: f64,
    pub eps: f64,
    /// Right-hand side; must stay within 1 +- eps on the interior.
    pub f: String,
    pub sigma: f64,
    /// Height ratio between chain levels.
    pub mu0: f64,
    pub k_max: usize,
    pub eps_bar: EpsBar,
    pub p: Vec<f64>,
    pub stride: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Sections used by engulfing and covering have radius at least this
    /// many lattice cells.
    pub min_cells: f64,
    pub chains: ChainsConfig,
    pub engulf: EngulfConfig,
    pub cover: CoverConfig,
    pub badset: BadsetConfig,
    pub solve: SolveConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 1,
            resolution: 65,
            gamma: 0.05,
            eps: 0.01,
            f: DEFAULT_RECIPE.into(),
            sigma: 0.2,
            mu0: 0.1,
            k_max: 4,
            eps_bar: EpsBar::Keyword("recipe".into()),
            p: vec![2.0],
            stride: 2,
            seed: 1,
            output_dir: PathBuf::from("cmalab-out"),
            min_cells: 4.0,
            chains: ChainsConfig::default(),
            engulf: EngulfConfig::default(),
            cover: CoverConfig::default(),
            badset: BadsetConfig::default(),
            solve: SolveConfig::default(),
        }
    }
}

/// Everything derived from a validated config.
#[derive(Debug)]
pub struct Plan {
    pub shape: ShapeSpec,
    pub domain: Arc<GridDomain>,
    pub recipe: Recipe,
    pub f: GridFunction,
    pub eps_bar: f64,
    /// Lowest section height admitted by `min_cells`.
    pub height_floor: f64,
}

pub fn shape_for(gamma: f64) -> ShapeSpec {
    if gamma == 0.0 {
        ShapeSpec::Ball { radius: 1.0 }
    } else {
        ShapeSpec::PerturbedBall { gamma }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn chain_config(&self, top_height: f64) -> ChainConfig {
        ChainConfig {
            mu0: self.mu0,
            top_height: Some(top_height),
            solve: self.solve.clone(),
            ..ChainConfig::default()
        }
    }

    /// Checks every field and builds the domain and right side; writes nothing.
    pub fn validate(&self) -> Result<Plan> {
        check(self.n == 1 || self.n == 2, || format!("n = {} must be 1 or 2", self.n))?;
        check(self.resolution % 2 == 1 && self.resolution >= 9, || {
            format!("resolution {} must be odd and at least 9", self.resolution)
        })?;
        check((0.0..0.5).contains(&self.gamma), || format!("gamma = {} outside [0, 0.5)", self.gamma))?;
        check((0.0..0.5).contains(&self.eps), || format!("eps = {} outside [0, 0.5)", self.eps))?;
        check(self.sigma > 0.0 && self.sigma < 1.0, || format!("sigma = {} outside (0, 1)", self.sigma))?;
        check((1..=12).contains(&self.k_max), || format!("k_max = {} outside [1, 12]", self.k_max))?;
        check(!self.p.is_empty(), || "p list is empty".into())?;
        for &p in &self.p {
            check(p >= 1.0 && p.is_finite(), || format!("p = {p} below 1"))?;
        }
        check(self.stride >= 1, || "stride must be positive".into())?;
        check(!self.output_dir.as_os_str().is_empty(), || "output_dir is empty".into())?;
        check(self.min_cells >= 0.0, || format!("min_cells = {} is negative", self.min_cells))?;

        let c = &self.chains;
        check(c.base_points >= 1 && c.levels >= 1, || "chains need base_points, levels >= 1".into())?;
        check(c.base_radius > 0.0 && c.base_radius < 1.0, || {
            format!("chains.base_radius = {} outside (0, 1)", c.base_radius)
        })?;
        self.chain_config(c.top_height).validate()?;
        let e = &self.engulf;
        check(e.max_attempts >= e.pairs, || "engulf.max_attempts below engulf.pairs".into())?;
        let cv = &self.cover;
        check(cv.max_members >= 4, || "cover.max_members must be at least 4".into())?;
        check(cv.volume_constant >= 1.0, || "cover.volume_constant below 1".into())?;
        let b = &self.badset;
        check(b.levels >= 1, || "badset.levels must be positive".into())?;
        check(b.radius > 0.0 && b.radius < 1.0, || format!("badset.radius = {} outside (0, 1)", b.radius))?;
        check(b.hessian_slack >= 0.0 && b.contact_tol >= 0.0, || "negative badset slack".into())?;
        check(b.inner_radius > 0.0 && b.inner_radius < b.envelope_radius && b.envelope_radius < 1.0, || {
            "need 0 < badset.inner_radius < badset.envelope_radius < 1".into()
        })?;
        self.chain_config(b.top_height).validate()?;

        let eps_bar = self.eps_bar.resolve(self.n)?;
        let shape = shape_for(self.gamma);
        let domain = build_domain(self.n, &shape, self.resolution)?;
        let height_floor = (self.min_cells * domain.h).powi(2);
        check(height_floor < c.top_height, || {
            format!(
                "min_cells = {} leaves no section height below chains.top_height = {} at h = {}",
                self.min_cells, c.top_height, domain.h
            )
        })?;
        let recipe = Recipe::parse(&self.f)?;
        let f = recipe.sample(&domain, self.eps)?;
        let band = band_width(&f);
        check(band <= self.eps + 1e-12, || {
            format!("right side leaves the band 1 +- {}: |f - 1| reaches {band}", self.eps)
        })?;
        Ok(Plan { shape, domain, recipe, f, eps_bar, height_floor })
    }
}
