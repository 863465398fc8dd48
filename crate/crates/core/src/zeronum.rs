//! Zero number `z(u) = card{x ∈ S¹ : u(x) = 0}` of circle profiles and the
//! monotonicity of `t ↦ z(φ₁(t) − φ₂(t))` along pairs of solutions.
//!
//! Zeros are located on the trigonometric interpolant. Critical points of
//! `u` are bracketed on a 4× refined grid and bisected; between consecutive
//! critical points `u` is monotone, so each such piece holds at most one
//! zero. A critical value that vanishes (relative to `‖u‖∞`) is a multiple
//! zero.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{angle_diff, eval_derivatives, oversample, wrap_angle, Grid, PeriodicProfile};
use crate::solver::{self, Trajectory};

const OVERSAMPLE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZeroError {
    #[error("profile is identically zero; its zero number is undefined")]
    IdenticallyZero,
    #[error("zero options invalid: {0}")]
    InvalidOptions(&'static str),
    #[error("trajectories are not sampled alike: {0}")]
    MismatchedSampling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroKind {
    Simple,
    Multiple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Certified,
    Borderline,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::Certified => "certified",
            Confidence::Borderline => "borderline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zero {
    pub x: f64,
    pub kind: ZeroKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroReport {
    pub count: usize,
    pub zeros: Vec<Zero>,
    pub confidence: Confidence,
}

impl ZeroReport {
    pub fn all_simple(&self) -> bool {
        self.zeros.iter().all(|z| z.kind == ZeroKind::Simple)
    }

    pub fn has_multiple(&self) -> bool {
        !self.all_simple()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroOptions {
    /// A critical value `|u(x*)| ≤ tol·‖u‖∞` is a (multiple) zero.
    pub tol: f64,
    /// A root with `|u'| < mult_tol·‖u'‖∞` is multiple.
    pub mult_tol: f64,
    /// Reference size for differences, e.g. `max(‖u₁‖, ‖u₂‖)`. Counts of
    /// profiles below `scale_tol·scale` are borderline.
    pub scale: Option<f64>,
    pub scale_tol: f64,
}

impl Default for ZeroOptions {
    fn default() -> Self {
        Self { tol: 1e-9, mult_tol: 1e-6, scale: None, scale_tol: 1e-10 }
    }
}

impl ZeroOptions {
    fn validate(&self) -> Result<(), ZeroError> {
        if !(self.tol > 0.0) {
            return Err(ZeroError::InvalidOptions("tol must be positive"));
        }
        if !(self.mult_tol > 0.0) {
            return Err(ZeroError::InvalidOptions("mult_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Critical {
    x: f64,
    value: f64,
    is_max: bool,
}

struct Analysis {
    report: ZeroReport,
    crits: Vec<Critical>,
    sup: f64,
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn critical_points(grid: Grid, c: &[num_complex::Complex64]) -> (Vec<Critical>, f64, f64) {
    let du = oversample(grid, c, OVERSAMPLE, 1);
    let fine = oversample(grid, c, OVERSAMPLE, 0);
    let sup = fine.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let dsup = du.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let m = du.len();
    let h = TAU / m as f64;
    let slope = |x: f64| eval_derivatives(grid, c, x, 1)[1];
    let mut crits = Vec::new();
    if dsup <= 1e-14 * sup.max(f64::MIN_POSITIVE) {
        return (crits, sup, dsup);
    }
    for j in 0..m {
        let a = du[j];
        let b = du[(j + 1) % m];
        let is_max = a > 0.0 && b <= 0.0;
        let is_min = a < 0.0 && b >= 0.0;
        if !(is_max || is_min) {
            continue;
        }
        let lo = j as f64 * h;
        let x = if b == 0.0 { lo + h } else { bisect(slope, lo, lo + h) };
        let x = wrap_angle(x);
        let value = eval_derivatives(grid, c, x, 0)[0];
        crits.push(Critical { x, value, is_max });
    }
    crits.sort_by(|a, b| a.x.total_cmp(&b.x));
    (crits, sup, dsup)
}

fn analyze(u: &PeriodicProfile, opts: &ZeroOptions) -> Result<Analysis, ZeroError> {
    opts.validate()?;
    let grid = u.grid();
    let c = u.coeffs();
    let (crits, sup, dsup) = critical_points(grid, &c);
    if !(sup > 0.0) || sup < f64::MIN_POSITIVE {
        return Err(ZeroError::IdenticallyZero);
    }
    let ztol = opts.tol * sup;
    let mut borderline = false;
    let mut zeros = Vec::new();
    let m = crits.len();
    if m == 0 {
        // constant interpolant with non-zero value
        let report = ZeroReport { count: 0, zeros, confidence: Confidence::Certified };
        return Ok(Analysis { report, crits, sup });
    }
    let vanishes: Vec<bool> = crits.iter().map(|k| k.value.abs() <= ztol).collect();
    for (k, cr) in crits.iter().enumerate() {
        if vanishes[k] {
            zeros.push(Zero { x: cr.x, kind: ZeroKind::Multiple });
        } else if cr.value.abs() <= 100.0 * ztol {
            borderline = true;
        }
    }
    let value = |x: f64| eval_derivatives(grid, &c, x, 0)[0];
    for i in 0..m {
        let j = (i + 1) % m;
        if vanishes[i] || vanishes[j] {
            continue;
        }
        let (a, b) = (crits[i].value, crits[j].value);
        if a * b >= 0.0 {
            continue;
        }
        let lo = crits[i].x;
        let mut hi = crits[j].x;
        if hi <= lo {
            hi += TAU;
        }
        let x = bisect(value, lo, hi);
        let slope = eval_derivatives(grid, &c, x, 1)[1].abs();
        let kind = if slope < opts.mult_tol * dsup {
            ZeroKind::Multiple
        } else {
            if slope < 100.0 * opts.mult_tol * dsup {
                borderline = true;
            }
            ZeroKind::Simple
        };
        zeros.push(Zero { x: wrap_angle(x), kind });
    }
    zeros.sort_by(|a, b| a.x.total_cmp(&b.x));
    let count = zeros.len();
    if count % 2 == 1 {
        borderline = true;
    }
    if let Some(scale) = opts.scale {
        if sup < opts.scale_tol * scale {
            borderline = true;
        }
    }
    let confidence = if borderline { Confidence::Borderline } else { Confidence::Certified };
    Ok(Analysis { report: ZeroReport { count, zeros, confidence }, crits, sup })
}

/// Zero number of the interpolant of `u`.
pub fn zero_number(u: &PeriodicProfile, opts: &ZeroOptions) -> Result<ZeroReport, ZeroError> {
    analyze(u, opts).map(|a| a.report)
}

/// Zero number with the default options and the given value tolerance.
pub fn zero_number_tol(u: &PeriodicProfile, tol: f64) -> Result<ZeroReport, ZeroError> {
    zero_number(u, &ZeroOptions { tol, ..ZeroOptions::default() })
}

// ---------------------------------------------------------------------------
// series along solution differences

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessSource {
    /// A sampled profile has a multiple zero.
    Sampled,
    /// A local extremum crossed zero between two samples.
    ExtremumCrossing,
    /// Found after re-integrating the interval step by step.
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: f64,
    pub source: WitnessSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropEvent {
    pub t_before: f64,
    pub t_after: f64,
    pub old_count: usize,
    pub new_count: usize,
    pub witness: Option<Witness>,
}

impl DropEvent {
    pub fn witness_x(&self) -> Option<f64> {
        self.witness.map(|w| w.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSeries {
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    pub confidence: Vec<Confidence>,
    pub drop_events: Vec<DropEvent>,
}

impl ZeroSeries {
    /// Series from raw counts, all certified, without drop witnesses.
    pub fn from_counts(times: Vec<f64>, counts: Vec<usize>) -> Self {
        let confidence = vec![Confidence::Certified; counts.len()];
        let mut drop_events = Vec::new();
        for i in 1..counts.len() {
            if counts[i] < counts[i - 1] {
                drop_events.push(DropEvent {
                    t_before: times[i - 1],
                    t_after: times[i],
                    old_count: counts[i - 1],
                    new_count: counts[i],
                    witness: None,
                });
            }
        }
        Self { times, counts, confidence, drop_events }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,count,confidence\n");
        for i in 0..self.times.len() {
            out.push_str(&format!("{},{},{}\n", self.times[i], self.counts[i], self.confidence[i].as_str()));
        }
        out
    }

    pub fn final_count(&self) -> Option<usize> {
        (0..self.len()).rev().find(|&i| self.confidence[i] == Confidence::Certified).map(|i| self.counts[i])
    }
}

struct Frame {
    t: f64,
    analysis: Option<Analysis>,
}

/// Zeros removed by extrema that crossed zero between `a` and `b`.
fn crossing_witnesses(a: &Frame, b: &Frame) -> Vec<Witness> {
    let (Some(aa), Some(bb)) = (&a.analysis, &b.analysis) else {
        return Vec::new();
    };
    let radius = 0.3;
    let mut used = vec![false; bb.crits.len()];
    let mut out = Vec::new();
    for p in &aa.crits {
        let mut best: Option<(usize, f64)> = None;
        for (j, q) in bb.crits.iter().enumerate() {
            if used[j] || q.is_max != p.is_max {
                continue;
            }
            let d = angle_diff(q.x, p.x).abs();
            if d < radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let Some((j, _)) = best else { continue };
        used[j] = true;
        let q = bb.crits[j];
        let removing = if p.is_max { p.value > 0.0 && q.value <= 0.0 } else { p.value < 0.0 && q.value >= 0.0 };
        if removing {
            let s = p.value / (p.value - q.value);
            let t = a.t + s * (b.t - a.t);
            let x = wrap_angle(p.x + s * angle_diff(q.x, p.x));
            out.push(Witness { t, x, source: WitnessSource::ExtremumCrossing });
        }
    }
    out
}

/// Adjacent max/min pairs of opposite sign present in `a` but gone in `b`:
/// a degenerate (odd-order) zero annihilated in between.
fn annihilation_witnesses(a: &Frame, b: &Frame) -> Vec<Witness> {
    let (Some(aa), Some(bb)) = (&a.analysis, &b.analysis) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let m = aa.crits.len();
    if m < 2 || bb.crits.len() + 2 > m {
        return out;
    }
    for i in 0..m {
        let p = aa.crits[i];
        let q = aa.crits[(i + 1) % m];
        if p.value * q.value >= 0.0 {
            continue;
        }
        let mid = wrap_angle(p.x + 0.5 * angle_diff(q.x, p.x));
        let near = bb.crits.iter().any(|r| angle_diff(r.x, mid).abs() < 0.5 * angle_diff(q.x, p.x).abs().max(1e-3));
        if !near && p.value.abs().max(q.value.abs()) < 1e-2 * aa.sup {
            out.push(Witness { t: 0.5 * (a.t + b.t), x: mid, source: WitnessSource::Refined });
        }
    }
    out
}

fn sampled_witness(f: &Frame) -> Option<Witness> {
    let a = f.analysis.as_ref()?;
    a.report
        .zeros
        .iter()
        .find(|z| z.kind == ZeroKind::Multiple)
        .map(|z| Witness { t: f.t, x: z.x, source: WitnessSource::Sampled })
}

fn frame(t: f64, u1: &PeriodicProfile, u2: &PeriodicProfile, opts: &ZeroOptions) -> Result<Frame, ZeroError> {
    let scale = u1.norm_inf().max(u2.norm_inf());
    let o = ZeroOptions { scale: Some(opts.scale.unwrap_or(scale)), ..*opts };
    let diff = u1 - u2;
    match analyze(&diff, &o) {
        Ok(a) => Ok(Frame { t, analysis: Some(a) }),
        Err(ZeroError::IdenticallyZero) => Ok(Frame { t, analysis: None }),
        Err(e) => Err(e),
    }
}

fn nearest(witnesses: &[Witness], t: f64) -> Option<Witness> {
    witnesses.iter().copied().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}

fn refine_drop(traj1: &Trajectory, traj2: &Trajectory, t0: f64, t1: f64, opts: &ZeroOptions) -> Option<Witness> {
    let d1 = solver::dense_states(traj1, t0, t1).ok()?;
    let d2 = solver::dense_states(traj2, t0, t1).ok()?;
    if d1.len() != d2.len() {
        return None;
    }
    let frames: Vec<Frame> = d1.iter().zip(&d2).filter_map(|(a, b)| frame(a.t, &a.u, &b.u, opts).ok()).collect();
    let mut found = Vec::new();
    for w in frames.windows(2) {
        let (fa, fb) = (&w[0], &w[1]);
        let (Some(aa), Some(bb)) = (&fa.analysis, &fb.analysis) else { continue };
        if bb.report.count >= aa.report.count {
            continue;
        }
        if let Some(s) = sampled_witness(fb).or_else(|| sampled_witness(fa)) {
            found.push(Witness { source: WitnessSource::Refined, ..s });
            continue;
        }
        let mut ws = crossing_witnesses(fa, fb);
        ws.extend(annihilation_witnesses(fa, fb));
        found.extend(ws.into_iter().map(|w| Witness { source: WitnessSource::Refined, ..w }));
    }
    nearest(&found, 0.5 * (t0 + t1))
}

/// `t ↦ z(φ₁(t) − φ₂(t))` over the common samples of two trajectories.
pub fn zero_series(traj1: &Trajectory, traj2: &Trajectory, opts: &ZeroOptions) -> Result<ZeroSeries, ZeroError> {
    opts.validate()?;
    let (s1, s2) = (traj1.samples(), traj2.samples());
    if s1.len() != s2.len() {
        return Err(ZeroError::MismatchedSampling(format!("{} vs {} samples", s1.len(), s2.len())));
    }
    if traj1.grid() != traj2.grid() {
        return Err(ZeroError::MismatchedSampling("different grids".into()));
    }
    for (a, b) in s1.iter().zip(s2) {
        if (a.t - b.t).abs() > 1e-12 * a.t.abs().max(1.0) {
            return Err(ZeroError::MismatchedSampling(format!("times {} and {}", a.t, b.t)));
        }
        if !a.g.same_spec(&b.g) || a.g.theta().iter().zip(b.g.theta()).any(|(x, y)| angle_diff(*x, *y).abs() > 1e-9) {
            return Err(ZeroError::MismatchedSampling(format!("hull points differ at t = {}", a.t)));
        }
    }
    let frames = s1.iter().zip(s2).map(|(a, b)| frame(a.t, &a.u, &b.u, opts)).collect::<Result<Vec<_>, _>>()?;
    if frames.iter().all(|f| f.analysis.is_none()) {
        return Err(ZeroError::IdenticallyZero);
    }
    let mut times = Vec::with_capacity(frames.len());
    let mut counts = Vec::with_capacity(frames.len());
    let mut confidence = Vec::with_capacity(frames.len());
    for f in &frames {
        times.push(f.t);
        match &f.analysis {
            Some(a) => {
                counts.push(a.report.count);
                confidence.push(a.report.confidence);
            }
            None => {
                counts.push(0);
                confidence.push(Confidence::Borderline);
            }
        }
    }
    let mut drop_events = Vec::new();
    let mut prev: Option<usize> = None;
    for i in 0..frames.len() {
        if confidence[i] != Confidence::Certified {
            continue;
        }
        if let Some(p) = prev {
            if counts[i] < counts[p] {
                let (fa, fb) = (&frames[p], &frames[i]);
                let mut ws = crossing_witnesses(fa, fb);
                ws.extend(sampled_witness(fa));
                ws.extend(sampled_witness(fb));
                let witness = if ws.len() * 2 >= counts[p] - counts[i] {
                    nearest(&ws, 0.5 * (fa.t + fb.t))
                } else {
                    refine_drop(traj1, traj2, fa.t, fb.t, opts).or_else(|| nearest(&ws, 0.5 * (fa.t + fb.t)))
                };
                drop_events.push(DropEvent {
                    t_before: fa.t,
                    t_after: fb.t,
                    old_count: counts[p],
                    new_count: counts[i],
                    witness,
                });
            }
        }
        prev = Some(i);
    }
    Ok(ZeroSeries { times, counts, confidence, drop_events })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t_before: f64,
    pub t_after: f64,
    pub count_before: usize,
    pub count_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCertificate {
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// Certified counts over the final 10% of samples agree.
    pub eventually_constant: bool,
    pub drops: usize,
}

/// Checks that certified counts never increase and settle by the end.
pub fn certify_monotone(series: &ZeroSeries) -> MonotoneCertificate {
    let certified: Vec<usize> =
        (0..series.len()).filter(|&i| series.confidence[i] == Confidence::Certified).collect();
    let mut violations = Vec::new();
    let mut drops = 0;
    for w in certified.windows(2) {
        let (a, b) = (w[0], w[1]);
        if series.counts[b] > series.counts[a] {
            violations.push(Violation {
                t_before: series.times[a],
                t_after: series.times[b],
                count_before: series.counts[a],
                count_after: series.counts[b],
            });
        } else if series.counts[b] < series.counts[a] {
            drops += 1;
        }
    }
    let tail_len = (series.len() / 10).max(1);
    let tail_start = series.len().saturating_sub(tail_len);
    let tail: Vec<usize> = certified.iter().copied().filter(|&i| i >= tail_start).map(|i| series.counts[i]).collect();
    let eventually_constant = tail.windows(2).all(|w| w[0] == w[1]);
    MonotoneCertificate { ok: violations.is_empty() && eventually_constant, violations, eventually_constant, drops }
}
