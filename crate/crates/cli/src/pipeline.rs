//! evolve → spectrum → zero numbers → structure → phase → transforms, plus
//! the artifacts of a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use circleflow::grid::{angle_diff, PeriodicProfile};
use circleflow::solver::{self, Sample, SolverError, Trajectory};
use circleflow::spectrum::{exp_separation_ratio, lyapunov_frame, subspace_dims, SpectrumOptions, SubspaceDims};
use circleflow::structure::{
    cover_degree_with, embed_chi, extract_phase, fiber_order_check, homogeneity_defect, omega_sample_trajectory, phase_ode_residual,
    pullback_fiber, ClusterMode, CoverResult, FiberSample, OrderCheck, StructureError,
};
use circleflow::transforms::{gauge, verify_transform, TrajectoryField};
use circleflow::zeronum::{certify_monotone, zero_number, zero_series, ZeroOptions};
use circleflow::{Execution, HullPoint};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FiberMode, ScenarioConfig};
use crate::snapshot::{self, SnapshotError, SnapshotRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("io on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("structure: {0}")]
    Structure(#[from] StructureError),
    #[error("{0}")]
    Resume(String),
}

impl PipelineError {
    /// Config problems are usage errors; everything else is a runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const SNAPSHOT_FILE: &str = "snapshots.bin";

const GAUGE_H_T: f64 = 1e-4;
const RIGID_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub completed: bool,
    pub t_end: f64,
    pub samples: usize,
    pub ensemble: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSummary {
    pub split_k: usize,
    pub rate: f64,
    /// `λ_{k-1} − λ_k` from the same frame.
    pub gap: f64,
    pub floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub exponents: Vec<f64>,
    pub drift: Vec<f64>,
    pub window: (f64, f64),
    pub renorm_interval: f64,
    pub dims: SubspaceDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<SeparationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSummary {
    /// Ensemble members compared with member 0.
    pub pairs: Vec<usize>,
    pub monotone: bool,
    pub violations: usize,
    pub drops: usize,
    pub witnessed_drops: usize,
    pub eventually_constant: bool,
    pub final_counts: Vec<Option<usize>>,
    pub options: ZeroOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub fiber_mode: FiberMode,
    pub anchor_tol: f64,
    pub fiber_sizes: Vec<usize>,
    pub cover_raw: CoverResult,
    pub cover_modulo_shift: CoverResult,
    pub shift_samples: usize,
    pub x0: f64,
    /// Injectivity margin per fiber; `None` when a fiber has a single class.
    pub embedding_margins: Vec<Option<f64>>,
    pub embedding_class_tol: f64,
    /// Member differences across distinct classes, and how many of them had a
    /// multiple (or unresolved) zero.
    pub difference_pairs: usize,
    pub non_simple_differences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderCheck>,
    pub order_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub reference_t: f64,
    pub slope: f64,
    pub period: f64,
    /// Largest relative misfit `‖u − σ_c ref‖∞ / ‖ref‖∞`.
    pub max_fit_residual: f64,
    /// The trace is a rigid rotation (`max_fit_residual <= rigid_tol`); the
    /// phase and `G` are only meaningful then.
    pub rigid: bool,
    pub rigid_tol: f64,
    /// Mean `|ċ − G(t, c)|`; `None` when `G` could not be evaluated.
    #[serde(default)]
    pub ode_residual_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSummary {
    pub window: (f64, f64),
    pub dt: f64,
    pub h_t: f64,
    pub max: f64,
    pub mean: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub config: ScenarioConfig,
    pub status: RunStatus,
    pub spectrum: Option<SpectrumSummary>,
    pub zeros: Option<ZeroSummary>,
    pub structure: Option<StructureSummary>,
    pub phase: Option<PhaseSummary>,
    pub transforms: Option<TransformSummary>,
    /// Analyses that were skipped or failed, with reasons.
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

impl RunReport {
    /// The report with wall clock zeroed, for comparisons between runs.
    pub fn without_timing(&self) -> RunReport {
        RunReport { wall_clock_s: 0.0, ..self.clone() }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn record(s: &Sample) -> SnapshotRecord {
    SnapshotRecord { t: s.t, values: s.u.values().to_vec(), theta: s.g.theta().to_vec() }
}

/// Evolve the main trajectory; a blow-up keeps the partial trajectory.
fn evolve_main(cfg: &ScenarioConfig, u0: &PeriodicProfile, g0: &HullPoint) -> Result<(Trajectory, Option<String>), PipelineError> {
    split_termination(solver::evolve(u0, g0, cfg.total_time(), &cfg.solver_config()))
}

fn split_termination(r: Result<Trajectory, SolverError>) -> Result<(Trajectory, Option<String>), PipelineError> {
    match r {
        Ok(t) => Ok((t, None)),
        Err(SolverError::Blowup { t, sup, partial }) => {
            Ok((*partial, Some(format!("solution sup-norm {sup:e} exceeded the blow-up threshold at t = {t}"))))
        }
        Err(SolverError::NonFinite { t, partial }) => Ok((*partial, Some(format!("non-finite state at t = {t}")))),
        Err(e) => Err(e.into()),
    }
}

/// Run a scenario into `out_dir` (created if missing). Existing artifacts of
/// an earlier run in the same directory are replaced.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, exec: Execution) -> Result<RunReport, PipelineError> {
    let clock = Instant::now();
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let spec = cfg.forcing_spec()?;
    let g0 = cfg.hull_start(&spec);
    let starts = cfg.initial_states();
    let (main, termination) = evolve_main(cfg, &starts[0], &g0)?;

    let snap = out_dir.join(SNAPSHOT_FILE);
    if snap.exists() {
        fs::remove_file(&snap).map_err(io_err(&snap))?;
    }
    let records: Vec<SnapshotRecord> = main.samples().iter().map(record).collect();
    snapshot::append(&snap, &records)?;
    finish(cfg, &main, termination, out_dir, exec, clock)
}

/// Continue the run stored in `dir` by `extra` time units and redo the analysis.
pub fn resume_scenario(dir: &Path, extra: f64, exec: Execution) -> Result<RunReport, PipelineError> {
    let clock = Instant::now();
    if !(extra >= 0.0 && extra.is_finite()) {
        return Err(PipelineError::Resume(format!("extra span must be non-negative, got {extra}")));
    }
    let mut cfg = ScenarioConfig::load(&dir.join(CONFIG_FILE))?;
    if let Ok(prev) = load_report(dir) {
        if !prev.status.completed {
            return Err(PipelineError::Resume(format!(
                "run in {} terminated early ({}); it cannot be resumed",
                dir.display(),
                prev.status.termination.unwrap_or_default()
            )));
        }
    }
    let spec = cfg.forcing_spec()?;
    let g0 = cfg.hull_start(&spec);
    let scfg = cfg.solver_config();
    let snap = dir.join(SNAPSHOT_FILE);
    let records = snapshot::read_all(&snap, cfg.grid_n, spec.dim())?;
    let grid = cfg.grid();
    let mut samples = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let step = (r.t / scfg.dt).round() as u64;
        let g = g0.translate(r.t);
        if g.theta().iter().zip(&r.theta).any(|(a, b)| angle_diff(*a, *b).abs() > 1e-9) {
            return Err(PipelineError::Resume(format!("record {i}: hull phase does not match the config")));
        }
        let u = PeriodicProfile::new(grid, r.values.clone()).map_err(|e| PipelineError::Resume(format!("record {i}: {e}")))?;
        samples.push(Sample { step, t: r.t, u, g });
    }
    let stored = Trajectory::from_samples(g0, scfg, samples)?;
    let expected = cfg.total_time();
    if (stored.last().t - expected).abs() > 1e-9 * expected.max(1.0) {
        return Err(PipelineError::Resume(format!(
            "snapshot ends at t = {} but the config covers t = {expected}",
            stored.last().t
        )));
    }
    let (main, termination) = split_termination(solver::resume(&stored, extra))?;
    let fresh: Vec<SnapshotRecord> = main.samples()[stored.samples().len()..].iter().map(record).collect();
    snapshot::append(&snap, &fresh)?;
    cfg.run.span += extra;
    finish(&cfg, &main, termination, dir, exec, clock)
}

pub fn load_report(dir: &Path) -> Result<RunReport, PipelineError> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Resume(format!("{}: {e}", path.display())))
}

fn finish(
    cfg: &ScenarioConfig,
    main: &Trajectory,
    termination: Option<String>,
    out_dir: &Path,
    exec: Execution,
    clock: Instant,
) -> Result<RunReport, PipelineError> {
    write(&out_dir.join(CONFIG_FILE), &cfg.to_toml())?;
    let mut report = RunReport {
        scenario_id: cfg.scenario_id.clone(),
        config: cfg.clone(),
        status: RunStatus {
            completed: termination.is_none(),
            t_end: main.last().t,
            samples: main.samples().len(),
            ensemble: cfg.initial.ensemble,
            termination: termination.clone(),
        },
        spectrum: None,
        zeros: None,
        structure: None,
        phase: None,
        transforms: None,
        notes: Vec::new(),
        wall_clock_s: 0.0,
    };
    if termination.is_some() {
        report.notes.push("analysis skipped: the run terminated early".into());
    } else {
        analyse(cfg, main, out_dir, exec, &mut report)?;
    }
    report.wall_clock_s = clock.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    write(&out_dir.join(REPORT_FILE), &json)?;
    Ok(report)
}

fn analyse(cfg: &ScenarioConfig, main: &Trajectory, out: &Path, exec: Execution, report: &mut RunReport) -> Result<(), PipelineError> {
    let spec = cfg.forcing_spec()?;
    let g0 = cfg.hull_start(&spec);
    let scfg = cfg.solver_config();
    let starts = cfg.initial_states();
    let burn_in = cfg.run.burn_in;

    // ensemble members beyond the main trajectory
    let items: Vec<(PeriodicProfile, HullPoint)> = starts[1..].iter().map(|u| (u.clone(), g0.clone())).collect();
    let mut ensemble = vec![main.clone()];
    for (i, r) in solver::evolve_batch(&items, cfg.total_time(), &scfg, exec).into_iter().enumerate() {
        match r {
            Ok(t) => ensemble.push(t),
            Err(e) => report.notes.push(format!("ensemble member {}: {e}", i + 1)),
        }
    }

    let s = &cfg.analysis.spectrum;
    if s.enabled {
        let opts = SpectrumOptions { m: s.m, renorm_every: s.renorm_every, burn_in: s.burn_in.unwrap_or(burn_in), seed: cfg.initial.seed.unwrap_or(0x5eed), noise_floor: None };
        match lyapunov_frame(main, &opts) {
            Ok((ls, frame)) => {
                write(&out.join("spectrum.csv"), &ls.to_csv())?;
                let separation = s.split_k.and_then(|k| match exp_separation_ratio(&frame, k) {
                    Ok(r) => Some(SeparationSummary { split_k: k, rate: r.rate, gap: ls.exponents[k - 1] - ls.exponents[k], floor: r.floor }),
                    Err(e) => {
                        report.notes.push(format!("separation: {e}"));
                        None
                    }
                });
                report.spectrum = Some(SpectrumSummary {
                    dims: subspace_dims(&ls, s.gap_tol),
                    exponents: ls.exponents,
                    drift: ls.convergence_diag,
                    window: ls.window,
                    renorm_interval: ls.renorm_interval,
                    separation,
                });
            }
            Err(e) => report.notes.push(format!("spectrum: {e}")),
        }
    }

    if ensemble.len() >= 2 {
        let opts = ZeroOptions::default();
        let mut summary = ZeroSummary {
            pairs: Vec::new(),
            monotone: true,
            violations: 0,
            drops: 0,
            witnessed_drops: 0,
            eventually_constant: true,
            final_counts: Vec::new(),
            options: opts,
        };
        for (i, other) in ensemble.iter().enumerate().skip(1) {
            match zero_series(main, other, &opts) {
                Ok(series) => {
                    if i == 1 {
                        write(&out.join("zeros.csv"), &series.to_csv())?;
                    }
                    let cert = certify_monotone(&series);
                    summary.pairs.push(i);
                    summary.monotone &= cert.ok;
                    summary.violations += cert.violations.len();
                    summary.drops += series.drop_events.len();
                    summary.witnessed_drops += series.drop_events.iter().filter(|d| d.witness.is_some()).count();
                    summary.eventually_constant &= cert.eventually_constant;
                    summary.final_counts.push(series.final_count());
                }
                Err(e) => report.notes.push(format!("zero series 0-{i}: {e}")),
            }
        }
        if !summary.pairs.is_empty() {
            report.zeros = Some(summary);
        }
    } else {
        report.notes.push("zero series skipped: ensemble has a single member".into());
    }

    let st = &cfg.analysis.structure;
    if st.enabled {
        let anchors = cfg.anchors(&spec);
        let fibers: Result<Vec<FiberSample>, _> = match st.fiber_mode {
            FiberMode::Recurrence => {
                let mut fibers = omega_sample_trajectory(main, burn_in, &anchors, st.anchor_tol);
                for tr in &ensemble[1..] {
                    for (f, extra) in fibers.iter_mut().zip(omega_sample_trajectory(tr, burn_in, &anchors, st.anchor_tol)) {
                        f.members.extend(extra.members);
                    }
                }
                for f in fibers.iter_mut() {
                    thin(&mut f.members, st.max_members);
                }
                Ok(fibers)
            }
            FiberMode::Pullback => anchors.iter().map(|a| pullback_fiber(a, &starts, st.settle_time, &scfg, exec)).collect(),
        };
        match fibers.map_err(PipelineError::from).and_then(|f| structure_summary(cfg, &f, out, exec)) {
            Ok(sum) => report.structure = Some(sum),
            Err(e @ PipelineError::Structure(_)) => report.notes.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }

    if spec.flags().x_independent {
        let tail = main.tail(burn_in);
        let reference = &tail.first().u;
        let scale = reference.norm_inf().max(1.0);
        if homogeneity_defect(reference) > 1e-6 * scale {
            match extract_phase(&tail, reference) {
                Ok(trace) => {
                    write(&out.join("phase.csv"), &trace.to_csv())?;
                    let ode = match phase_ode_residual(&tail, &trace) {
                        Ok(r) => Some(r),
                        Err(e) => {
                            report.notes.push(format!("phase ODE: {e}"));
                            None
                        }
                    };
                    report.phase = Some(PhaseSummary {
                        reference_t: tail.first().t,
                        slope: trace.slope(),
                        period: trace.period,
                        max_fit_residual: trace.max_residual(),
                        rigid: trace.max_residual() <= RIGID_TOL,
                        rigid_tol: RIGID_TOL,
                        ode_residual_mean: ode,
                    });
                }
                Err(e) => report.notes.push(format!("phase: {e}")),
            }
        } else {
            report.notes.push("phase skipped: the profile is spatially homogeneous".into());
        }
    } else {
        report.notes.push("phase skipped: the forcing depends on x".into());
    }

    let tr = &cfg.analysis.transforms;
    if tr.enabled {
        let window = tr.window.map(|[a, b]| (a, b)).unwrap_or((burn_in, (burn_in + 1.0).min(cfg.total_time())));
        let v0 = PeriodicProfile::from_fn(cfg.grid(), f64::cos);
        match TrajectoryField::new(main, window) {
            Ok(field) => {
                let r = verify_transform(&field, &v0, window, scfg.dt);
                write(&out.join("gauge.csv"), &gauge(&field, window.0, GAUGE_H_T).to_csv())?;
                report.transforms =
                    Some(TransformSummary { window, dt: r.dt, h_t: GAUGE_H_T, max: r.max, mean: r.mean, samples: r.samples });
            }
            Err(e) => report.notes.push(format!("transforms: {e}")),
        }
    }
    Ok(())
}

/// Keep at most `cap` members, evenly spread over the list.
fn thin<T: Clone>(items: &mut Vec<T>, cap: usize) {
    if items.len() <= cap || cap == 0 {
        return;
    }
    let n = items.len();
    let kept: Vec<T> = (0..cap).map(|i| items[i * n / cap].clone()).collect();
    *items = kept;
}

fn structure_summary(
    cfg: &ScenarioConfig,
    fibers: &[FiberSample],
    out: &Path,
    exec: Execution,
) -> Result<StructureSummary, PipelineError> {
    let st = &cfg.analysis.structure;
    let cover_raw = cover_degree_with(fibers, st.cluster_tol, ClusterMode::Raw, st.shift_samples, exec)?;
    let cover_modulo_shift = cover_degree_with(fibers, st.cluster_tol, ClusterMode::ModuloShift, st.shift_samples, exec)?;
    let mut csv = String::from("fiber,member,t,value,slope,class\n");
    let mut margins = Vec::with_capacity(fibers.len());
    let mut difference_pairs = 0;
    let mut non_simple = 0;
    for (fi, f) in fibers.iter().enumerate() {
        let emb = embed_chi(f, st.x0, st.cluster_tol)?;
        for (mi, (p, m)) in emb.points.iter().zip(&f.members).enumerate() {
            csv.push_str(&format!("{fi},{mi},{},{},{},{}\n", m.t, p.value, p.slope, emb.classes[mi]));
        }
        margins.push(emb.injectivity_margin.is_finite().then_some(emb.injectivity_margin));
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                if emb.classes[i] == emb.classes[j] {
                    continue;
                }
                difference_pairs += 1;
                let d = &f.members[i].profile - &f.members[j].profile;
                let simple = zero_number(&d, &ZeroOptions::default()).map(|r| r.all_simple()).unwrap_or(false);
                if !simple {
                    non_simple += 1;
                }
            }
        }
    }
    write(&out.join("embedding.csv"), &csv)?;
    let order = match fibers.iter().find(|f| f.len() >= 2) {
        Some(f) => Some(fiber_order_check(f, st.order_window, &cfg.solver_config(), exec)?),
        None => None,
    };
    Ok(StructureSummary {
        fiber_mode: st.fiber_mode,
        anchor_tol: st.anchor_tol,
        fiber_sizes: fibers.iter().map(FiberSample::len).collect(),
        cover_raw,
        cover_modulo_shift,
        shift_samples: st.shift_samples,
        x0: st.x0,
        embedding_margins: margins,
        embedding_class_tol: st.cluster_tol,
        difference_pairs,
        non_simple_differences: non_simple,
        order,
        order_window: st.order_window,
    })
}
