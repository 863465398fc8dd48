//! Scenarios shipped with the binary, and listing of scenario directories.

use std::path::Path;

use serde::Serialize;

use crate::config::{ConfigError, ScenarioConfig};

pub const BUNDLED: &[(&str, &str)] = &[
    ("rotating_wave", include_str!("../scenarios/rotating_wave.toml")),
    ("heat", include_str!("../scenarios/heat.toml")),
    ("damped", include_str!("../scenarios/damped.toml")),
    ("cubic", include_str!("../scenarios/cubic.toml")),
    ("periodic_forced", include_str!("../scenarios/periodic_forced.toml")),
    ("hyperbolic_qp", include_str!("../scenarios/hyperbolic_qp.toml")),
    ("symmetric_qp", include_str!("../scenarios/symmetric_qp.toml")),
    ("inhomogeneous_qp", include_str!("../scenarios/inhomogeneous_qp.toml")),
    ("floquet", include_str!("../scenarios/floquet.toml")),
];

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml(text).unwrap_or_else(|e| panic!("bundled scenario {name}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub name: String,
    pub description: String,
}

fn matches(row: &ScenarioRow, filter: Option<&str>) -> bool {
    filter.is_none_or(|f| row.name.contains(f) || row.description.contains(f))
}

pub fn list_bundled(filter: Option<&str>) -> Vec<ScenarioRow> {
    BUNDLED
        .iter()
        .map(|(name, _)| ScenarioRow { name: name.to_string(), description: bundled(name).expect("bundled").description })
        .filter(|r| matches(r, filter))
        .collect()
}

/// Every `*.toml` scenario in `dir`, sorted by file name. Files that fail to
/// parse are reported as errors.
pub fn list_dir(dir: &Path, filter: Option<&str>) -> Result<Vec<ScenarioRow>, ConfigError> {
    let io = |source| ConfigError::Io { path: dir.display().to_string(), source };
    if !dir.is_dir() {
        return Err(ConfigError::NotFound(dir.display().to_string()));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut rows = Vec::new();
    for p in paths {
        let cfg = ScenarioConfig::load(&p)?;
        rows.push(ScenarioRow { name: cfg.scenario_id, description: cfg.description });
    }
    Ok(rows.into_iter().filter(|r| matches(r, filter)).collect())
}

pub fn format_table(rows: &[ScenarioRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  description\n", "name");
    for r in rows {
        out.push_str(&format!("{:<width$}  {}\n", r.name, r.description));
    }
    out
}
