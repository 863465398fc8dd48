//! Scenario harness for `circleflow`: TOML configs, the analysis pipeline,
//! run directories with snapshots, reports and CSV exports.

pub mod config;
pub mod pipeline;
pub mod scenarios;
pub mod snapshot;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, ScenarioConfig};
pub use pipeline::{load_report, resume_scenario, run_scenario, PipelineError, RunReport};

pub const OUT_ENV: &str = "CIRCLEFLOW_OUT";

/// `--out`, then `$CIRCLEFLOW_OUT`, then `./runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// A config path, or the name of a bundled scenario.
pub fn resolve_config(arg: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(arg);
    if path.exists() {
        return ScenarioConfig::load(path);
    }
    scenarios::bundled(arg).ok_or_else(|| ConfigError::NotFound(arg.to_string()))
}

/// One-screen summary of a report.
pub fn summarize(r: &RunReport) -> String {
    let mut out = format!("scenario {}  t_end {}  samples {}\n", r.scenario_id, r.status.t_end, r.status.samples);
    if let Some(t) = &r.status.termination {
        out.push_str(&format!("terminated: {t}\n"));
    }
    if let Some(s) = &r.spectrum {
        let ex: Vec<String> = s.exponents.iter().map(|e| format!("{e:.4}")).collect();
        out.push_str(&format!(
            "spectrum [{}]  dim_u {} dim_c {} ({:?}, gap_tol {})\n",
            ex.join(", "),
            s.dims.dim_u,
            s.dims.dim_c,
            s.dims.classification,
            s.dims.gap_tol
        ));
        if let Some(sep) = &s.separation {
            out.push_str(&format!("separation k={} rate {:.4} gap {:.4}\n", sep.split_k, sep.rate, sep.gap));
        }
    }
    if let Some(z) = &r.zeros {
        out.push_str(&format!(
            "zero numbers: monotone {}  drops {} (witnessed {})  final {:?}\n",
            z.monotone, z.drops, z.witnessed_drops, z.final_counts
        ));
    }
    if let Some(s) = &r.structure {
        out.push_str(&format!(
            "cover raw {:?} / modulo shift {:?}  (tol {})  fibers {:?}\n",
            s.cover_raw.verdict, s.cover_modulo_shift.verdict, s.cover_raw.cluster_tol, s.fiber_sizes
        ));
        let margins: Vec<String> = s.embedding_margins.iter().map(|m| m.map_or("inf".into(), |v| format!("{v:.3e}"))).collect();
        out.push_str(&format!(
            "embedding margins [{}]  non-simple differences {}/{}\n",
            margins.join(", "),
            s.non_simple_differences,
            s.difference_pairs
        ));
        if let Some(o) = &s.order {
            out.push_str(&format!("fiber order consistent {} ({} violations)\n", o.consistent, o.violations.len()));
        }
    }
    if let Some(p) = &r.phase {
        out.push_str(&format!(
            "phase slope {:.6}  period {:.4}  fit residual {:.2e}{}  |c' - G| {}\n",
            p.slope,
            p.period,
            p.max_fit_residual,
            if p.rigid { "" } else { " (not rigid)" },
            p.ode_residual_mean.map_or("n/a".into(), |v| format!("{v:.2e}"))
        ));
    }
    if let Some(t) = &r.transforms {
        out.push_str(&format!("transform residual max {:.2e} mean {:.2e} on {:?}\n", t.max, t.mean, t.window));
    }
    for n in &r.notes {
        out.push_str(&format!("note: {n}\n"));
    }
    out.push_str(&format!("wall clock {:.2} s\n", r.wall_clock_s));
    out
}

/// Serialized name of a cover verdict (`one_cover`, `n_cover`, ...).
pub fn verdict_name(c: &circleflow::structure::CoverResult) -> &'static str {
    use circleflow::structure::CoverVerdict::*;
    match c.verdict {
        OneCover => "one_cover",
        AlmostOneCover => "almost_one_cover",
        NCover(_) => "n_cover",
        Inconclusive => "inconclusive",
    }
}
