//! Structure of ω-limit sets of the skew-product flow: fibers over hull
//! points, the quotient by spatial shifts, cover degrees, the circle-flow
//! phase `c(t)` and the planar embedding `χ(v, g) = (v(x₀), v_x(x₀), g)`.
//!
//! Phase convention: `u(t, x) = ref(x + c(t))`, with `ref` normalised so its
//! maximum sits at `x = 0`. The crest of `u(t)` is then at `x = -c(t)`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcing::{hull_distance, HullPoint};
use crate::grid::{eval_derivatives, max_and_argmax_coeffs, oversample, shift_coeffs, PeriodicProfile};
use crate::parallel::{self, Execution};
use crate::solver::{self, SolverConfig, SolverError, Trajectory};

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("reference profile is spatially homogeneous (defect {0:e})")]
    Homogeneous(f64),
    #[error("phase jumped by {step} (period {period}) at t = {t}; sampling is too coarse")]
    PhaseJump { t: f64, step: f64, period: f64 },
    #[error("no sample at t = {0}")]
    NotSampled(f64),
    #[error("|φ_xx| = {curvature:e} at x = {x} is below {threshold:e}")]
    DegenerateCurvature { x: f64, curvature: f64, threshold: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

// ---------------------------------------------------------------------------
// fibers

#[derive(Debug, Clone)]
pub struct FiberMember {
    pub t: f64,
    pub hull: HullPoint,
    pub hull_distance: f64,
    pub profile: PeriodicProfile,
}

/// States observed over (or near) one hull point.
#[derive(Debug, Clone)]
pub struct FiberSample {
    pub hull_anchor: HullPoint,
    pub members: Vec<FiberMember>,
    pub anchor_tol: f64,
}

impl FiberSample {
    pub fn profiles(&self) -> Vec<&PeriodicProfile> {
        self.members.iter().map(|m| &m.profile).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Evolve past `burn_in`, then bin every saved state whose hull point is within
/// `anchor_tol` of an anchor into that anchor's fiber.
pub fn omega_sample(
    u0: &PeriodicProfile,
    g0: &HullPoint,
    burn_in: f64,
    span: f64,
    anchors: &[HullPoint],
    anchor_tol: f64,
    cfg: &SolverConfig,
) -> Result<Vec<FiberSample>, StructureError> {
    if !(span >= 0.0) || !(burn_in >= 0.0) {
        return Err(StructureError::InvalidInput(format!("burn_in {burn_in} and span {span} must be non-negative")));
    }
    if anchors.iter().any(|a| !a.same_spec(g0)) {
        return Err(StructureError::InvalidInput("anchors must belong to the hull of g0".into()));
    }
    let mut fibers: Vec<FiberSample> = anchors
        .iter()
        .map(|a| FiberSample { hull_anchor: a.clone(), members: Vec::new(), anchor_tol })
        .collect();
    if span == 0.0 {
        return Ok(fibers);
    }
    // whole number of steps covering the requested window
    let total = ((burn_in + span) / cfg.dt - 1e-9).ceil() * cfg.dt;
    let traj = solver::evolve(u0, g0, total, cfg)?;
    collect_members(&traj, burn_in, &mut fibers);
    Ok(fibers)
}

/// Bin the samples of an existing trajectory with `t >= burn_in`.
pub fn omega_sample_trajectory(traj: &Trajectory, burn_in: f64, anchors: &[HullPoint], anchor_tol: f64) -> Vec<FiberSample> {
    let mut fibers: Vec<FiberSample> = anchors
        .iter()
        .map(|a| FiberSample { hull_anchor: a.clone(), members: Vec::new(), anchor_tol })
        .collect();
    collect_members(traj, burn_in, &mut fibers);
    fibers
}

fn collect_members(traj: &Trajectory, burn_in: f64, fibers: &mut [FiberSample]) {
    for s in traj.samples_from(burn_in) {
        for f in fibers.iter_mut() {
            let d = hull_distance(&s.g, &f.hull_anchor).unwrap_or(f64::INFINITY);
            if d <= f.anchor_tol {
                f.members.push(FiberMember { t: s.t, hull: s.g.clone(), hull_distance: d, profile: s.u.clone() });
            }
        }
    }
}

/// Fiber over `anchor` built by pulling back: each start is evolved from
/// `anchor·(-T)` for time `T`, so every member sits exactly over `anchor`.
pub fn pullback_fiber(
    anchor: &HullPoint,
    starts: &[PeriodicProfile],
    pullback: f64,
    cfg: &SolverConfig,
    exec: Execution,
) -> Result<FiberSample, StructureError> {
    let g_start = anchor.translate(-pullback);
    let items: Vec<(PeriodicProfile, HullPoint)> = starts.iter().map(|u| (u.clone(), g_start.clone())).collect();
    let runs = solver::evolve_batch(&items, pullback, cfg, exec);
    let mut members = Vec::with_capacity(runs.len());
    for run in runs {
        let traj = run?;
        let last = traj.last();
        let d = hull_distance(&last.g, anchor).unwrap_or(f64::INFINITY);
        members.push(FiberMember { t: last.t, hull: last.g.clone(), hull_distance: d, profile: last.u.clone() });
    }
    let anchor_tol = members.iter().fold(1e-9_f64, |m, x| m.max(x.hull_distance));
    Ok(FiberSample { hull_anchor: anchor.clone(), members, anchor_tol })
}

// ---------------------------------------------------------------------------
// quotient metric

fn c1_sup(a: &[f64], b: &[f64], da: &[f64], db: &[f64]) -> f64 {
    let mut m = 0.0_f64;
    for i in 0..a.len() {
        m = m.max((a[i] - b[i]).abs()).max((da[i] - db[i]).abs());
    }
    m
}

const FINE: usize = 2;

/// `max(‖u − v‖∞, ‖u' − v'‖∞)` on the 2× refined interpolant.
pub fn c1_distance(u: &PeriodicProfile, v: &PeriodicProfile) -> f64 {
    assert_eq!(u.grid(), v.grid(), "grid mismatch");
    let g = u.grid();
    let (cu, cv) = (u.coeffs(), v.coeffs());
    c1_sup(&oversample(g, &cu, FINE, 0), &oversample(g, &cv, FINE, 0), &oversample(g, &cu, FINE, 1), &oversample(g, &cv, FINE, 1))
}

struct ShiftObjective {
    grid: crate::grid::Grid,
    u: Vec<f64>,
    du: Vec<f64>,
    cv: Vec<num_complex::Complex64>,
}

impl ShiftObjective {
    fn new(u: &PeriodicProfile, v: &PeriodicProfile) -> Self {
        let grid = u.grid();
        let cu = u.coeffs();
        Self { grid, u: oversample(grid, &cu, FINE, 0), du: oversample(grid, &cu, FINE, 1), cv: v.coeffs() }
    }

    /// `d(u, σ_c v)`.
    fn eval(&self, c: f64) -> f64 {
        let mut s = self.cv.clone();
        shift_coeffs(self.grid, &mut s, c);
        let v = oversample(self.grid, &s, FINE, 0);
        let dv = oversample(self.grid, &s, FINE, 1);
        c1_sup(&self.u, &v, &self.du, &dv)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if b - a < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Hausdorff distance between the shift orbits of `u` and `v` in the C¹
/// surrogate norm. Shifts are isometries, so this is `min_c d(u, σ_c v)`;
/// the minimum is located on a grid of `shift_samples` shifts and refined by
/// golden-section search around the best local minima.
///
/// Exact shifts need band-limited profiles (no Nyquist content).
pub fn quotient_distance(u: &PeriodicProfile, v: &PeriodicProfile, shift_samples: usize) -> Result<f64, StructureError> {
    if shift_samples < 64 {
        return Err(StructureError::InvalidInput(format!("shift_samples must be at least 64, got {shift_samples}")));
    }
    if u.grid() != v.grid() {
        return Err(StructureError::InvalidInput("profiles live on different grids".into()));
    }
    // canonical argument order makes the result exactly symmetric
    let (a, b) = if u.values().iter().map(|x| x.to_bits()).lt(v.values().iter().map(|x| x.to_bits())) { (u, v) } else { (v, u) };
    let obj = ShiftObjective::new(a, b);
    let h = TAU / shift_samples as f64;
    let vals: Vec<f64> = (0..shift_samples).map(|j| obj.eval(j as f64 * h)).collect();
    let mut minima: Vec<(usize, f64)> = (0..shift_samples)
        .filter(|&j| {
            let p = vals[(j + shift_samples - 1) % shift_samples];
            let n = vals[(j + 1) % shift_samples];
            vals[j] <= p && vals[j] <= n
        })
        .map(|j| (j, vals[j]))
        .collect();
    minima.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut best = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    for &(j, _) in minima.iter().take(4) {
        let c = j as f64 * h;
        let (_, fv) = golden_min(|x| obj.eval(x), c - h, c + h);
        best = best.min(fv);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Raw,
    ModuloShift,
}

/// Upper-triangular pairwise distances, row-major over `i < j`.
pub fn pairwise_distances(
    profiles: &[&PeriodicProfile],
    mode: ClusterMode,
    shift_samples: usize,
    exec: Execution,
) -> Result<Vec<f64>, StructureError> {
    let n = profiles.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    parallel::map(exec, &pairs, |&(i, j)| match mode {
        ClusterMode::Raw => Ok(c1_distance(profiles[i], profiles[j])),
        ClusterMode::ModuloShift => quotient_distance(profiles[i], profiles[j], shift_samples),
    })
    .into_iter()
    .collect()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage cluster label per profile (labels are the smallest index in
/// each cluster).
pub fn cluster(
    profiles: &[&PeriodicProfile],
    tol: f64,
    mode: ClusterMode,
    shift_samples: usize,
    exec: Execution,
) -> Result<Vec<usize>, StructureError> {
    let n = profiles.len();
    let d = pairwise_distances(profiles, mode, shift_samples, exec)?;
    let mut parent: Vec<usize> = (0..n).collect();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if d[k] <= tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
            k += 1;
        }
    }
    Ok((0..n).map(|i| find(&mut parent, i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum CoverVerdict {
    OneCover,
    AlmostOneCover,
    NCover(usize),
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverResult {
    /// Cluster count per fiber; 0 for empty fibers, which the verdict ignores.
    pub degrees: Vec<usize>,
    pub verdict: CoverVerdict,
    pub cluster_tol: f64,
    pub mode: ClusterMode,
}

pub fn cover_degree(fibers: &[FiberSample], cluster_tol: f64, mode: ClusterMode) -> Result<CoverResult, StructureError> {
    cover_degree_with(fibers, cluster_tol, mode, 256, Execution::default())
}

pub fn cover_degree_with(
    fibers: &[FiberSample],
    cluster_tol: f64,
    mode: ClusterMode,
    shift_samples: usize,
    exec: Execution,
) -> Result<CoverResult, StructureError> {
    if fibers.is_empty() {
        return Err(StructureError::InvalidInput("no fibers".into()));
    }
    let mut degrees = Vec::with_capacity(fibers.len());
    for f in fibers {
        let labels = cluster(&f.profiles(), cluster_tol, mode, shift_samples, exec)?;
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        degrees.push(distinct.len());
    }
    let seen: Vec<usize> = degrees.iter().copied().filter(|&d| d > 0).collect();
    let verdict = if seen.is_empty() {
        CoverVerdict::Inconclusive
    } else if seen.iter().all(|&d| d == 1) {
        CoverVerdict::OneCover
    } else if seen.iter().all(|&d| d == seen[0]) {
        CoverVerdict::NCover(seen[0])
    } else if seen.contains(&1) {
        CoverVerdict::AlmostOneCover
    } else {
        CoverVerdict::Inconclusive
    };
    Ok(CoverResult { degrees, verdict, cluster_tol, mode })
}

/// `max u − min u` of the interpolant.
pub fn homogeneity_defect(u: &PeriodicProfile) -> f64 {
    u.max_and_argmax().0 - u.min()
}

// ---------------------------------------------------------------------------
// phase

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Minimal spatial period `2π / gcd(active modes)` of a profile.
pub fn minimal_period(u: &PeriodicProfile) -> f64 {
    let c = u.coeffs();
    let n = u.grid().n();
    let amps: Vec<f64> = (1..=n / 2).map(|k| c[k].norm()).collect();
    let top = amps.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return TAU;
    }
    let g = amps.iter().enumerate().filter(|(_, &a)| a > 1e-8 * top).fold(0, |g, (i, _)| gcd(g, i + 1));
    TAU / g.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub times: Vec<f64>,
    /// Unwrapped phase.
    pub c_values: Vec<f64>,
    /// Minimal spatial period of the reference.
    pub period: f64,
    /// `‖u(t) − σ_c ref‖∞ / ‖ref‖∞` per sample.
    pub residuals: Vec<f64>,
    /// Location of the maximum of the reference as given; the trace is
    /// relative to the reference shifted to put that maximum at 0.
    pub ref_argmax: f64,
}

impl PhaseTrace {
    /// Least-squares slope of `c(t)`.
    pub fn slope(&self) -> f64 {
        let k = self.times.len() as f64;
        if self.times.len() < 2 {
            return 0.0;
        }
        let mt = self.times.iter().sum::<f64>() / k;
        let mc = self.c_values.iter().sum::<f64>() / k;
        let sxy: f64 = self.times.iter().zip(&self.c_values).map(|(t, c)| (t - mt) * (c - mc)).sum();
        let sxx: f64 = self.times.iter().map(|t| (t - mt).powi(2)).sum();
        sxy / sxx
    }

    /// Phase reduced to `[0, L)`.
    pub fn reduced(&self, i: usize) -> f64 {
        self.c_values[i].rem_euclid(self.period)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Central-difference `ċ` at interior samples (one-sided at the ends).
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.times.len();
        (0..n)
            .map(|i| {
                let (a, b) = if i == 0 { (0, 1.min(n - 1)) } else if i == n - 1 { (n - 2, n - 1) } else { (i - 1, i + 1) };
                if a == b {
                    0.0
                } else {
                    (self.c_values[b] - self.c_values[a]) / (self.times[b] - self.times[a])
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,c_unwrapped,residual\n");
        for i in 0..self.times.len() {
            out.push_str(&format!("{},{},{}\n", self.times[i], self.c_values[i], self.residuals[i]));
        }
        out
    }
}

/// Phase `c` maximising `⟨u, σ_c ref⟩`, in `[0, 2π)`.
fn correlation_peak(u: &PeriodicProfile, ref_coeffs: &[num_complex::Complex64]) -> f64 {
    let cu = u.coeffs();
    let d: Vec<num_complex::Complex64> = cu.iter().zip(ref_coeffs).map(|(a, r)| a.conj() * r).collect();
    max_and_argmax_coeffs(u.grid(), &d).1
}

/// Circle-flow phase of `traj` relative to `ref`.
pub fn extract_phase(traj: &Trajectory, reference: &PeriodicProfile) -> Result<PhaseTrace, StructureError> {
    if reference.grid() != traj.grid() {
        return Err(StructureError::InvalidInput("reference lives on a different grid".into()));
    }
    let scale = reference.norm_inf().max(f64::MIN_POSITIVE);
    let defect = homogeneity_defect(reference);
    if defect <= 1e-8 * scale.max(1.0) {
        return Err(StructureError::Homogeneous(defect));
    }
    let ref_argmax = reference.max_and_argmax().1;
    let normalized = reference.shift(ref_argmax);
    let rc = normalized.coeffs();
    let period = minimal_period(&normalized);
    let mut times = Vec::new();
    let mut c_values: Vec<f64> = Vec::new();
    let mut residuals = Vec::new();
    for s in traj.samples() {
        let raw = correlation_peak(&s.u, &rc);
        let c = match c_values.last() {
            None => {
                let r = raw.rem_euclid(period);
                if r > period / 2.0 {
                    r - period
                } else {
                    r
                }
            }
            Some(&prev) => {
                let j = ((prev - raw) / period).round();
                let c = raw + j * period;
                let step = c - prev;
                if step.abs() >= period / 4.0 {
                    return Err(StructureError::PhaseJump { t: s.t, step, period });
                }
                c
            }
        };
        let fitted = normalized.shift(c);
        residuals.push((&s.u - &fitted).norm_inf() / scale);
        times.push(s.t);
        c_values.push(c);
    }
    Ok(PhaseTrace { times, c_values, period, residuals, ref_argmax })
}

/// `G(t, z) = g_p + φ_xxx/φ_xx` at `x = -z` on the sample at time `t`.
#[allow(non_snake_case)]
pub fn eval_G(traj: &Trajectory, t: f64, z: f64) -> Result<f64, StructureError> {
    eval_G_with(traj, t, z, 1e-3)
}

/// [`eval_G`] with an explicit curvature threshold (relative to `‖φ_xx‖∞`).
#[allow(non_snake_case)]
pub fn eval_G_with(traj: &Trajectory, t: f64, z: f64, curvature_tol: f64) -> Result<f64, StructureError> {
    let s = traj.sample_at(t).ok_or(StructureError::NotSampled(t))?;
    let grid = s.u.grid();
    let c = s.u.coeffs();
    let x = -z;
    let d = eval_derivatives(grid, &c, x, 3);
    let uxx_sup = oversample(grid, &c, 4, 2).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = curvature_tol * uxx_sup;
    if !(d[2].abs() > threshold) {
        return Err(StructureError::DegenerateCurvature { x, curvature: d[2].abs(), threshold });
    }
    let (_, gp) = traj.g0().partials(s.t, x, d[0], d[1]).map_err(|e| StructureError::InvalidInput(e.to_string()))?;
    Ok(gp + d[3] / d[2])
}

/// Mean of `|ċ − G(t, c)|` over the interior samples of a trace.
pub fn phase_ode_residual(traj: &Trajectory, trace: &PhaseTrace) -> Result<f64, StructureError> {
    let cdot = trace.derivative();
    let n = trace.times.len();
    if n < 3 {
        return Err(StructureError::InvalidInput("need at least three samples".into()));
    }
    let mut sum = 0.0;
    for i in 1..n - 1 {
        let g = eval_G(traj, trace.times[i], trace.c_values[i])?;
        sum += (cdot[i] - g).abs();
    }
    Ok(sum / (n - 2) as f64)
}

// ---------------------------------------------------------------------------
// embedding and order

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingPoint {
    pub value: f64,
    pub slope: f64,
    pub hull_anchor: HullPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding {
    pub points: Vec<EmbeddingPoint>,
    /// Raw-cluster label of each point.
    pub classes: Vec<usize>,
    /// Minimum distance between points of distinct classes; `+∞` with one class.
    pub injectivity_margin: f64,
    pub class_tol: f64,
}

/// `χ` on one fiber. Members within `class_tol` (C¹) of each other are one class.
pub fn embed_chi(fiber: &FiberSample, x0: f64, class_tol: f64) -> Result<Embedding, StructureError> {
    let profiles = fiber.profiles();
    let classes = cluster(&profiles, class_tol, ClusterMode::Raw, 64, Execution::Sequential)?;
    let points: Vec<EmbeddingPoint> = profiles
        .iter()
        .map(|p| {
            let (value, slope) = p.eval_at(x0);
            EmbeddingPoint { value, slope, hull_anchor: fiber.hull_anchor.clone() }
        })
        .collect();
    let mut margin = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if classes[i] != classes[j] {
                let d = (points[i].value - points[j].value).hypot(points[i].slope - points[j].slope);
                margin = margin.min(d);
            }
        }
    }
    Ok(Embedding { points, classes, injectivity_margin: margin, class_tol })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderViolation {
    pub t: f64,
    pub lower: usize,
    pub upper: usize,
    pub m_lower: f64,
    pub m_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub consistent: bool,
    pub violations: Vec<OrderViolation>,
    /// Pairs that started with equal maxima.
    pub equal_pairs: usize,
    pub eq_tol: f64,
}

/// Evolve all members from the fiber's anchor over `window` and check that the
/// order of the maxima `m(u)` is preserved (equal maxima must stay equal).
pub fn fiber_order_check(fiber: &FiberSample, window: f64, cfg: &SolverConfig, exec: Execution) -> Result<OrderCheck, StructureError> {
    let n = fiber.members.len();
    let scale = fiber.members.iter().fold(1.0_f64, |m, x| m.max(x.profile.norm_inf()));
    let eq_tol = 1e-8 * scale;
    if n < 2 {
        return Ok(OrderCheck { consistent: true, violations: Vec::new(), equal_pairs: 0, eq_tol });
    }
    let items: Vec<(PeriodicProfile, HullPoint)> =
        fiber.members.iter().map(|m| (m.profile.clone(), fiber.hull_anchor.clone())).collect();
    let trajs: Vec<Trajectory> = solver::evolve_batch(&items, window, cfg, exec).into_iter().collect::<Result<_, _>>()?;
    let maxima: Vec<Vec<f64>> =
        parallel::map(exec, &trajs, |tr| tr.samples().iter().map(|s| s.u.max_and_argmax().0).collect());
    let times = trajs[0].times();
    let mut violations = Vec::new();
    let mut equal_pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d0 = maxima[j][0] - maxima[i][0];
            let equal = d0.abs() <= eq_tol;
            if equal {
                equal_pairs += 1;
            }
            let (lo, hi) = if d0 >= 0.0 { (i, j) } else { (j, i) };
            for (k, &t) in times.iter().enumerate() {
                let gap = maxima[hi][k] - maxima[lo][k];
                let bad = if equal { gap.abs() > eq_tol } else { gap <= 0.0 };
                if bad {
                    violations.push(OrderViolation { t, lower: lo, upper: hi, m_lower: maxima[lo][k], m_upper: maxima[hi][k] });
                    break;
                }
            }
        }
    }
    Ok(OrderCheck { consistent: violations.is_empty(), violations, equal_pairs, eq_tol })
}
