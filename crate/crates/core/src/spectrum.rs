//! Finite-time Lyapunov spectra of the linearised flow (Benettin / QR) and
//! the stable–centre–unstable bookkeeping built on them.
//!
//! These are numerical surrogates: exponents over a finite window with a gap
//! tolerance stand in for Sacker–Sell spectral intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PeriodicProfile;
use crate::solver::{self, SolverError, TangentFrame, TangentOptions, Trajectory};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("trajectory span {span} does not exceed burn-in {burn_in}")]
    ShortWindow { span: f64, burn_in: f64 },
    #[error("frame size {m} must be between 1 and the grid size {n}")]
    FrameSize { m: usize, n: usize },
    #[error("split index {split} needs 1 <= split < frame size {len}")]
    Split { split: usize, len: usize },
    #[error("not enough renormalisation events to fit a rate")]
    TooFewEvents,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Descending.
    pub exponents: Vec<f64>,
    /// Time between renormalisations.
    pub renorm_interval: f64,
    pub window: (f64, f64),
    /// Final estimate minus the estimate at the window midpoint.
    pub convergence_diag: Vec<f64>,
}

impl LyapunovSpectrum {
    pub fn top(&self) -> f64 {
        self.exponents.first().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,exponent,drift\n");
        for (i, (e, d)) in self.exponents.iter().zip(&self.convergence_diag).enumerate() {
            out.push_str(&format!("{i},{e},{d}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub m: usize,
    pub renorm_every: usize,
    pub burn_in: f64,
    pub seed: u64,
    pub noise_floor: Option<f64>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { m: 8, renorm_every: 10, burn_in: 0.0, seed: 0x5eed, noise_floor: None }
    }
}

/// Seeded random initial frame.
pub fn random_frame(grid: crate::grid::Grid, m: usize, seed: u64) -> Vec<PeriodicProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..grid.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            PeriodicProfile::new(grid, v).expect("finite")
        })
        .collect()
}

/// Index of the first event at or after `t`.
fn event_at(frame: &TangentFrame, t: f64) -> usize {
    let tol = 1e-9 * t.abs().max(1.0);
    frame.events.partition_point(|e| e.t < t - tol).min(frame.events.len() - 1)
}

fn rates_between(frame: &TangentFrame, a: usize, b: usize) -> Vec<f64> {
    let (ea, eb) = (&frame.events[a], &frame.events[b]);
    let dt = eb.t - ea.t;
    ea.cum_log.iter().zip(&eb.cum_log).map(|(x, y)| (y - x) / dt).collect()
}

/// Spectrum from an already evolved frame, discarding `t < burn_in`.
pub fn spectrum_from_frame(frame: &TangentFrame, burn_in: f64) -> Result<LyapunovSpectrum, SpectrumError> {
    let t_end = frame.t_end();
    if !(t_end - burn_in > 0.0) || frame.events.len() < 2 {
        return Err(SpectrumError::ShortWindow { span: t_end - frame.t_start(), burn_in });
    }
    let last = frame.events.len() - 1;
    let start = event_at(frame, frame.t_start() + burn_in).min(last - 1);
    let mid_t = 0.5 * (frame.events[start].t + t_end);
    let mid = event_at(frame, mid_t).clamp(start + 1, last);
    let full = rates_between(frame, start, last);
    let half = rates_between(frame, start, mid);
    let mut pairs: Vec<(f64, f64)> = full.iter().zip(&half).map(|(f, h)| (*f, f - h)).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(LyapunovSpectrum {
        exponents: pairs.iter().map(|p| p.0).collect(),
        renorm_interval: frame.renorm_every as f64 * frame.dt,
        window: (frame.events[start].t, t_end),
        convergence_diag: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Evolve a random frame along `traj` and return it with its spectrum.
pub fn lyapunov_frame(traj: &Trajectory, opts: &SpectrumOptions) -> Result<(LyapunovSpectrum, TangentFrame), SpectrumError> {
    let n = traj.grid().n();
    if opts.m == 0 || opts.m > n {
        return Err(SpectrumError::FrameSize { m: opts.m, n });
    }
    if !(traj.span() > opts.burn_in) {
        return Err(SpectrumError::ShortWindow { span: traj.span(), burn_in: opts.burn_in });
    }
    let v0 = random_frame(traj.grid(), opts.m, opts.seed);
    let topts = TangentOptions {
        renorm_every: opts.renorm_every,
        orthonormalize: true,
        noise_floor: opts.noise_floor,
        record_vectors: false,
    };
    let frame = solver::evolve_tangent_with(traj, &v0, &topts)?;
    let spec = spectrum_from_frame(&frame, opts.burn_in)?;
    Ok((spec, frame))
}

/// Leading `m` Lyapunov exponents along `traj` after `burn_in`.
pub fn lyapunov_spectrum(traj: &Trajectory, m: usize, renorm_every: usize, burn_in: f64) -> Result<LyapunovSpectrum, SpectrumError> {
    let opts = SpectrumOptions { m, renorm_every, burn_in, ..SpectrumOptions::default() };
    lyapunov_frame(traj, &opts).map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Hyperbolic,
    OneCenter,
    TwoCenter,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDims {
    pub dim_u: usize,
    pub dim_c: usize,
    pub classification: Classification,
    pub gap_tol: f64,
}

pub fn subspace_dims(spec: &LyapunovSpectrum, gap_tol: f64) -> SubspaceDims {
    let dim_u = spec.exponents.iter().filter(|&&e| e > gap_tol).count();
    let dim_c = spec.exponents.iter().filter(|&&e| e.abs() <= gap_tol).count();
    let classification = match dim_c {
        0 => Classification::Hyperbolic,
        1 => Classification::OneCenter,
        2 => Classification::TwoCenter,
        _ => Classification::Degenerate,
    };
    SubspaceDims { dim_u, dim_c, classification, gap_tol }
}

/// `λ_top <= tol`.
pub fn linear_stability_check(spec: &LyapunovSpectrum, tol: f64) -> bool {
    spec.top() <= tol
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationRate {
    /// Decay rate `μ` of `‖high block‖ / ‖low block‖ ~ e^{-μt}`.
    pub rate: f64,
    /// The log-ratio reached the representable floor; `rate` is then a lower bound.
    pub floor: bool,
    pub points: usize,
}

/// Decay rate of the growth ratio between vectors `split_k` and `split_k - 1`
/// of a QR frame, fitted by least squares after the first 20% of the window.
pub fn exp_separation_ratio(frame: &TangentFrame, split_k: usize) -> Result<SeparationRate, SpectrumError> {
    let len = frame.len();
    if split_k == 0 || split_k >= len {
        return Err(SpectrumError::Split { split: split_k, len });
    }
    let (t0, t1) = (frame.t_start(), frame.t_end());
    let cut = t0 + 0.2 * (t1 - t0);
    let pts: Vec<(f64, f64)> = frame
        .events
        .iter()
        .filter(|e| e.t >= cut)
        .map(|e| (e.t, e.cum_log[split_k] - e.cum_log[split_k - 1]))
        .collect();
    if pts.len() < 2 {
        return Err(SpectrumError::TooFewEvents);
    }
    let floor_log = f64::MIN_POSITIVE.ln();
    let floor = pts.iter().any(|p| !p.1.is_finite() || p.1 <= floor_log);
    let pts: Vec<(f64, f64)> = pts.into_iter().filter(|p| p.1.is_finite()).collect();
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(SpectrumError::TooFewEvents);
    }
    Ok(SeparationRate { rate: -sxy / sxx, floor, points: pts.len() })
}
