use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::io::{read_cache, write_cache};
use crate::grid::{build_domain, GridFunction, ShapeSpec};

/// Sidecar metadata that lets a cache be turned back into a grid function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub resolution: usize,
    pub shape: ShapeSpec,
    pub f_expr: String,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub meta: InstanceMeta,
    pub u: GridFunction,
}

pub fn sidecar_path(cache: &Path) -> PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(value)?;
    b.push(b'\n');
    Ok(b)
}

/// Writes the binary cache and its `.json` sidecar.
pub fn save_instance(inst: &Instance, path: &Path) -> Result<()> {
    write_cache(&inst.u, path)?;
    std::fs::write(sidecar_path(path), to_json_bytes(&inst.meta)?)?;
    Ok(())
}

/// Reads a cache written by [`save_instance`]; the boundary datum is 0.
pub fn load_instance(path: &Path) -> Result<Instance> {
    let side = sidecar_path(path);
    let meta: InstanceMeta = serde_json::from_slice(&std::fs::read(&side).map_err(|e| {
        Error::InvalidInput(format!("cannot read sidecar {}: {e}", side.display()))
    })?)?;
    let (header, values) = read_cache(path)?;
    let domain = build_domain(meta.n, &meta.shape, meta.resolution)?;
    if header.n as usize != meta.n
        || header.resolution as usize != meta.resolution
        || header.h != domain.h
        || values.len() != domain.node_count()
    {
        return Err(Error::InvalidInput(format!(
            "cache {} does not match its sidecar",
            path.display()
        )));
    }
    let trace = vec![0.0; domain.cuts().len()];
    let u = GridFunction { domain, values, trace: Some(trace) };
    Ok(Instance { meta, u })
}
