//! Pseudospectral time integration of `u_t = u_xx + g(t, x, u, u_x)` and of
//! its variational equation.
//!
//! The linear operator `u_xx + c_u u + c_p u_x` (the constant-coefficient,
//! autonomous part of `g`) is diagonal in Fourier space and integrated
//! exactly; the remainder of `g` is explicit. Two schemes are available:
//! second-order exponential Runge–Kutta (Cox–Matthews ETDRK2) and IMEX-BDF2
//! with an IMEX-Euler start.
//!
//! The canonical state between steps is the vector of nodal values, so a
//! restart from any saved sample reproduces the original run bit for bit
//! (ETDRK2 is one-step; BDF2 restarts with an Euler step).
//!
//! Tangent vectors are advanced with the exact derivative of the discrete
//! step map, re-evaluating `g_u`, `g_p` at every step (and stage) of the
//! re-integrated base, so difference quotients of [`evolve`] converge to the
//! tangent at rate `O(ε)`.

use std::sync::Arc;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcing::{ForcingSpec, HullPoint};
use crate::grid::{Grid, PeriodicProfile, Spectral};
use crate::parallel::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexBdf2,
    Etdrk2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// 2/3-rule truncation of the explicit term.
    pub dealias: bool,
    pub blowup_threshold: f64,
    /// Integration steps between saved samples.
    pub save_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dt: 1e-3, scheme: Scheme::Etdrk2, dealias: true, blowup_threshold: 1e6, save_stride: 10 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "blowup_threshold must be positive, got {}",
                self.blowup_threshold
            )));
        }
        if self.save_stride == 0 {
            return Err(SolverError::InvalidConfig("save_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Nominal global error scale of a second-order scheme, `dt²`.
    pub fn scheme_tolerance(&self) -> f64 {
        self.dt * self.dt
    }

    fn steps_for(&self, span: f64) -> Result<u64, SolverError> {
        if !(span.is_finite() && span >= 0.0) {
            return Err(SolverError::InvalidSpan { span, dt: self.dt });
        }
        let ratio = span / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
            return Err(SolverError::InvalidSpan { span, dt: self.dt });
        }
        Ok(steps as u64)
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solution sup-norm {sup:e} exceeded the blow-up threshold at t = {t}")]
    Blowup { t: f64, sup: f64, partial: Box<Trajectory> },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64, partial: Box<Trajectory> },
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("span {span} must be a non-negative multiple of dt = {dt}")]
    InvalidSpan { span: f64, dt: f64 },
    #[error("trajectory terminated at t = {0}; it cannot be resumed")]
    Terminated(f64),
    #[error("initial data live on different grids")]
    GridMismatch,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("tangent frame lost rank at vector {index} (t = {t})")]
    FrameCollapse { index: usize, t: f64 },
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub step: u64,
    pub t: f64,
    pub u: PeriodicProfile,
    pub g: HullPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub t: f64,
    pub reason: String,
}

/// Saved samples of `Π^t(u0, g0) = (φ(t, ·; u0, g0), g0·t)`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    g0: HullPoint,
    config: SolverConfig,
    samples: Vec<Sample>,
    termination: Option<Termination>,
}

impl Trajectory {
    /// Rebuild from stored samples (e.g. a snapshot file). Samples must be on
    /// one grid and satisfy `t_i = step_i · dt` with increasing steps.
    pub fn from_samples(g0: HullPoint, config: SolverConfig, samples: Vec<Sample>) -> Result<Self, SolverError> {
        config.validate()?;
        if samples.is_empty() {
            return Err(SolverError::Empty("trajectory samples"));
        }
        let grid = samples[0].u.grid();
        for w in samples.windows(2) {
            if w[1].step <= w[0].step {
                return Err(SolverError::InvalidConfig("sample steps must increase".into()));
            }
        }
        if samples.iter().any(|s| s.u.grid() != grid) {
            return Err(SolverError::GridMismatch);
        }
        Ok(Self { g0, config, samples, termination: None })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn g0(&self) -> &HullPoint {
        &self.g0
    }

    pub fn grid(&self) -> Grid {
        self.samples[0].u.grid()
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.termination.as_ref()
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn span(&self) -> f64 {
        self.last().t - self.first().t
    }

    /// Sample whose time is within `1e-9` of `t`.
    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        let tol = 1e-9 * t.abs().max(1.0);
        let idx = self.samples.partition_point(|s| s.t < t - tol);
        self.samples.get(idx).filter(|s| (s.t - t).abs() <= tol)
    }

    /// Samples with `t >= t_min`.
    pub fn samples_from(&self, t_min: f64) -> &[Sample] {
        let idx = self.samples.partition_point(|s| s.t < t_min - 1e-9 * t_min.abs().max(1.0));
        &self.samples[idx..]
    }

    /// Samples with `t >= t_min` as a trajectory of their own.
    pub fn tail(&self, t_min: f64) -> Trajectory {
        let mut samples = self.samples_from(t_min).to_vec();
        if samples.is_empty() {
            samples.push(self.last().clone());
        }
        Trajectory { g0: self.g0.clone(), config: self.config, samples, termination: self.termination.clone() }
    }

    /// Same trajectory with every profile replaced by `f(profile)`.
    ///
    /// Used to build shifted copies `σ_a φ`, which are again solutions when
    /// `g` does not depend on `x`.
    pub fn map_profiles(&self, f: impl Fn(&PeriodicProfile) -> PeriodicProfile) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample { step: s.step, t: s.t, u: f(&s.u), g: s.g.clone() })
            .collect();
        Trajectory { g0: self.g0.clone(), config: self.config, samples, termination: self.termination.clone() }
    }
}

// ---------------------------------------------------------------------------
// discrete dynamics

pub(crate) struct Dynamics {
    spectral: Arc<Spectral>,
    g0: HullPoint,
    lin: Vec<C>,
    dx: Vec<C>,
    mask: Vec<f64>,
    explicit: bool,
    nodes: Vec<f64>,
}

impl Dynamics {
    pub(crate) fn new(grid: Grid, g0: &HullPoint, dealias: bool) -> Self {
        let spec = g0.spec();
        let (cu, cp) = spec.linear_part();
        let n = grid.n();
        let cutoff = n as f64 / 3.0;
        let lin = (0..n)
            .map(|k| grid.derivative_symbol(k, 2) + C::new(cu, 0.0) + grid.derivative_symbol(k, 1) * cp)
            .collect();
        let dx = (0..n).map(|k| grid.derivative_symbol(k, 1)).collect();
        let mask = (0..n)
            .map(|k| if dealias && grid.wavenumber(k).abs() > cutoff { 0.0 } else { 1.0 })
            .collect();
        let explicit = spec.terms().iter().any(|t| !ForcingSpec::is_linear_part(t));
        Self { spectral: grid.spectral(), g0: g0.clone(), lin, dx, mask, explicit, nodes: grid.nodes() }
    }

    fn fft(&self, v: &[f64]) -> Vec<C> {
        self.spectral.forward(v)
    }

    fn ifft(&self, c: &[C]) -> Vec<f64> {
        self.spectral.inverse(c)
    }

    fn deriv(&self, hat: &[C]) -> Vec<f64> {
        let mut d: Vec<C> = hat.iter().zip(&self.dx).map(|(a, b)| a * b).collect();
        let mut out = vec![0.0; hat.len()];
        self.spectral.inverse_into(&mut d, &mut out);
        out
    }

    /// Fourier coefficients of the explicit remainder of `g`.
    fn explicit_hat(&self, u: &[f64], ux: &[f64], t: f64) -> Vec<C> {
        if !self.explicit {
            return vec![C::new(0.0, 0.0); u.len()];
        }
        let slice = self.g0.slice(t, true);
        let vals: Vec<f64> = (0..u.len()).map(|j| slice.value(self.nodes[j], u[j], ux[j])).collect();
        let mut hat = self.fft(&vals);
        for (h, m) in hat.iter_mut().zip(&self.mask) {
            *h *= m;
        }
        hat
    }

    /// Partials `(g_u, g_p)` of the explicit remainder at each node.
    fn explicit_partials(&self, u: &[f64], ux: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let slice = self.g0.slice(t, true);
        (0..u.len()).map(|j| slice.partials(self.nodes[j], u[j], ux[j])).unzip()
    }

    fn tangent_hat(&self, coeffs: &(Vec<f64>, Vec<f64>), v: &[f64], vhat: &[C]) -> Vec<C> {
        if !self.explicit {
            return vec![C::new(0.0, 0.0); v.len()];
        }
        let vx = self.deriv(vhat);
        let (b, a) = coeffs;
        let vals: Vec<f64> = (0..v.len()).map(|j| b[j] * v[j] + a[j] * vx[j]).collect();
        let mut hat = self.fft(&vals);
        for (h, m) in hat.iter_mut().zip(&self.mask) {
            *h *= m;
        }
        hat
    }
}

fn phi_functions(z: C) -> (C, C) {
    if z.norm() < 1e-2 {
        // Taylor: φ1 = Σ z^k/(k+1)!, φ2 = Σ z^k/(k+2)!
        let mut p1 = C::new(0.0, 0.0);
        let mut p2 = C::new(0.0, 0.0);
        let mut zk = C::new(1.0, 0.0);
        let mut f1 = 1.0;
        let mut f2 = 2.0;
        for k in 0..12 {
            p1 += zk / f1;
            p2 += zk / f2;
            zk *= z;
            f1 *= (k + 2) as f64;
            f2 *= (k + 3) as f64;
        }
        (p1, p2)
    } else {
        let ez = z.exp();
        ((ez - 1.0) / z, (ez - 1.0 - z) / (z * z))
    }
}

enum StepKind {
    Etd { e: Vec<C>, p1: Vec<C>, p2: Vec<C> },
    Bdf { inv1: Vec<C>, inv2: Vec<C> },
}

pub(crate) struct Stepper {
    dynamics: Dynamics,
    h: f64,
    kind: StepKind,
}

#[derive(Clone)]
pub(crate) struct BaseState {
    pub(crate) u: Vec<f64>,
    hist: Option<(Vec<C>, Vec<C>)>,
}

impl BaseState {
    pub(crate) fn new(u: Vec<f64>) -> Self {
        Self { u, hist: None }
    }
}

#[derive(Clone)]
pub(crate) struct TanState {
    pub(crate) v: Vec<f64>,
    hist: Option<(Vec<C>, Vec<C>)>,
}

impl TanState {
    pub(crate) fn new(v: Vec<f64>) -> Self {
        Self { v, hist: None }
    }
}

impl Stepper {
    pub(crate) fn new(grid: Grid, g0: &HullPoint, cfg: &SolverConfig) -> Self {
        let dynamics = Dynamics::new(grid, g0, cfg.dealias);
        let h = cfg.dt;
        let kind = match cfg.scheme {
            Scheme::Etdrk2 => {
                let mut e = Vec::with_capacity(grid.n());
                let mut p1 = Vec::with_capacity(grid.n());
                let mut p2 = Vec::with_capacity(grid.n());
                for l in &dynamics.lin {
                    let z = l * h;
                    let (a, b) = phi_functions(z);
                    e.push(z.exp());
                    p1.push(a * h);
                    p2.push(b * h);
                }
                StepKind::Etd { e, p1, p2 }
            }
            Scheme::ImexBdf2 => StepKind::Bdf {
                inv1: dynamics.lin.iter().map(|l| 1.0 / (1.0 - l * h)).collect(),
                inv2: dynamics.lin.iter().map(|l| 1.0 / (3.0 - l * (2.0 * h))).collect(),
            },
        };
        Self { dynamics, h, kind }
    }

    fn filter(hat: &mut [C], floor: Option<f64>) {
        if let Some(floor) = floor {
            let top = hat.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
            let cut = floor * top;
            for c in hat.iter_mut() {
                if c.norm() < cut {
                    *c = C::new(0.0, 0.0);
                }
            }
        }
    }

    /// Advance the base (and any tangents) from `step·h` to `(step+1)·h`.
    pub(crate) fn step(&self, step: u64, base: &mut BaseState, tans: &mut [TanState], noise_floor: Option<f64>) {
        let d = &self.dynamics;
        let h = self.h;
        let t = step as f64 * h;
        let uhat = d.fft(&base.u);
        let ux = d.deriv(&uhat);
        let n0 = d.explicit_hat(&base.u, &ux, t);
        let need_tan = !tans.is_empty() && d.explicit;
        let c0 = if need_tan { Some(d.explicit_partials(&base.u, &ux, t)) } else { None };
        match &self.kind {
            StepKind::Etd { e, p1, p2 } => {
                let ahat: Vec<C> = (0..uhat.len()).map(|k| e[k] * uhat[k] + p1[k] * n0[k]).collect();
                let a = d.ifft(&ahat);
                let ax = d.deriv(&ahat);
                let n1 = d.explicit_hat(&a, &ax, t + h);
                let next: Vec<C> = (0..uhat.len()).map(|k| ahat[k] + p2[k] * (n1[k] - n0[k])).collect();
                let c1 = if need_tan { Some(d.explicit_partials(&a, &ax, t + h)) } else { None };
                for tan in tans.iter_mut() {
                    let vhat = d.fft(&tan.v);
                    let mut out: Vec<C>;
                    if let (Some(c0), Some(c1)) = (&c0, &c1) {
                        let t0 = d.tangent_hat(c0, &tan.v, &vhat);
                        let bhat: Vec<C> = (0..vhat.len()).map(|k| e[k] * vhat[k] + p1[k] * t0[k]).collect();
                        let b = d.ifft(&bhat);
                        let t1 = d.tangent_hat(c1, &b, &bhat);
                        out = (0..vhat.len()).map(|k| bhat[k] + p2[k] * (t1[k] - t0[k])).collect();
                    } else {
                        out = (0..vhat.len()).map(|k| e[k] * vhat[k]).collect();
                    }
                    Self::filter(&mut out, noise_floor);
                    tan.v = d.ifft(&out);
                }
                base.u = d.ifft(&next);
            }
            StepKind::Bdf { inv1, inv2 } => {
                let started = base.hist.is_some();
                let next: Vec<C> = match &base.hist {
                    None => (0..uhat.len()).map(|k| (uhat[k] + n0[k] * h) * inv1[k]).collect(),
                    Some((up, np)) => (0..uhat.len())
                        .map(|k| (uhat[k] * 4.0 - up[k] + (n0[k] * 2.0 - np[k]) * (2.0 * h)) * inv2[k])
                        .collect(),
                };
                for tan in tans.iter_mut() {
                    let vhat = d.fft(&tan.v);
                    let t0 = match &c0 {
                        Some(c0) => d.tangent_hat(c0, &tan.v, &vhat),
                        None => vec![C::new(0.0, 0.0); vhat.len()],
                    };
                    let mut out: Vec<C> = match (&tan.hist, started) {
                        (Some((vp, tp)), true) => (0..vhat.len())
                            .map(|k| (vhat[k] * 4.0 - vp[k] + (t0[k] * 2.0 - tp[k]) * (2.0 * h)) * inv2[k])
                            .collect(),
                        _ => (0..vhat.len()).map(|k| (vhat[k] + t0[k] * h) * inv1[k]).collect(),
                    };
                    Self::filter(&mut out, noise_floor);
                    tan.hist = Some((vhat, t0));
                    tan.v = d.ifft(&out);
                }
                base.hist = Some((uhat, n0));
                base.u = d.ifft(&next);
            }
        }
    }
}

fn check_state(u: &[f64], threshold: f64) -> Result<(), (bool, f64)> {
    let mut sup = 0.0_f64;
    for v in u {
        if !v.is_finite() {
            return Err((true, f64::NAN));
        }
        sup = sup.max(v.abs());
    }
    if sup > threshold {
        return Err((false, sup));
    }
    Ok(())
}

fn run_steps(
    stepper: &Stepper,
    g0: &HullPoint,
    cfg: &SolverConfig,
    grid: Grid,
    mut samples: Vec<Sample>,
    mut state: BaseState,
    first_step: u64,
    last_step: u64,
) -> Result<Trajectory, SolverError> {
    for step in first_step..last_step {
        stepper.step(step, &mut state, &mut [], None);
        let s = step + 1;
        let t = s as f64 * cfg.dt;
        if let Err((nan, sup)) = check_state(&state.u, cfg.blowup_threshold) {
            let reason = if nan { "non-finite state".to_string() } else { format!("sup-norm {sup:e} above threshold") };
            let partial = Box::new(Trajectory {
                g0: g0.clone(),
                config: *cfg,
                samples,
                termination: Some(Termination { t, reason }),
            });
            return Err(if nan { SolverError::NonFinite { t, partial } } else { SolverError::Blowup { t, sup, partial } });
        }
        if s % cfg.save_stride as u64 == 0 || s == last_step {
            samples.push(Sample {
                step: s,
                t,
                u: PeriodicProfile::from_values_unchecked(grid, state.u.clone()),
                g: g0.translate(t),
            });
        }
    }
    Ok(Trajectory { g0: g0.clone(), config: *cfg, samples, termination: None })
}

/// Integrate from `u0` at hull point `g0` over `[0, span]`.
pub fn evolve(u0: &PeriodicProfile, g0: &HullPoint, span: f64, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    if !(span > 0.0) {
        return Err(SolverError::InvalidSpan { span, dt: cfg.dt });
    }
    let steps = cfg.steps_for(span)?;
    let grid = u0.grid();
    let stepper = Stepper::new(grid, g0, cfg);
    let samples = vec![Sample { step: 0, t: 0.0, u: u0.clone(), g: g0.clone() }];
    run_steps(&stepper, g0, cfg, grid, samples, BaseState::new(u0.values().to_vec()), 0, steps)
}

/// Extend a trajectory by `extra` time units, continuing from its last sample.
pub fn resume(traj: &Trajectory, extra: f64) -> Result<Trajectory, SolverError> {
    if let Some(term) = &traj.termination {
        return Err(SolverError::Terminated(term.t));
    }
    let cfg = traj.config;
    let extra_steps = cfg.steps_for(extra)?;
    if extra_steps == 0 {
        return Ok(traj.clone());
    }
    let grid = traj.grid();
    let stepper = Stepper::new(grid, &traj.g0, &cfg);
    let last = traj.last();
    let state = BaseState::new(last.u.values().to_vec());
    run_steps(&stepper, &traj.g0, &cfg, grid, traj.samples.clone(), state, last.step, last.step + extra_steps)
}

/// Evolve many initial conditions over the same span, one trajectory per item.
pub fn evolve_batch(
    starts: &[(PeriodicProfile, HullPoint)],
    span: f64,
    cfg: &SolverConfig,
    exec: Execution,
) -> Vec<Result<Trajectory, SolverError>> {
    parallel::map(exec, starts, |(u0, g0)| evolve(u0, g0, span, cfg))
}

/// Every integration step between `t_start` and `t_end`, re-integrated from
/// the latest saved sample at or before `t_start`.
pub fn dense_states(traj: &Trajectory, t_start: f64, t_end: f64) -> Result<Vec<Sample>, SolverError> {
    let cfg = traj.config;
    let start_idx = traj.samples.partition_point(|s| s.t <= t_start + 1e-12).saturating_sub(1);
    let start = &traj.samples[start_idx];
    let end_step = ((t_end / cfg.dt).round() as u64).min(traj.last().step);
    let grid = traj.grid();
    let stepper = Stepper::new(grid, &traj.g0, &cfg);
    let mut state = BaseState::new(start.u.values().to_vec());
    let mut out = Vec::new();
    let t_lo = t_start - 0.5 * cfg.dt;
    if start.t >= t_lo {
        out.push(start.clone());
    }
    for step in start.step..end_step {
        stepper.step(step, &mut state, &mut [], None);
        let t = (step + 1) as f64 * cfg.dt;
        if t >= t_lo {
            out.push(Sample {
                step: step + 1,
                t,
                u: PeriodicProfile::from_values_unchecked(grid, state.u.clone()),
                g: traj.g0.translate(t),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// tangent dynamics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentOptions {
    /// Steps between renormalisations.
    pub renorm_every: usize,
    /// Gram–Schmidt the frame (`true`) or rescale each vector alone.
    pub orthonormalize: bool,
    /// Relative spectral noise floor: after each step, Fourier coefficients of
    /// a tangent vector below `floor · max |v̂_k|` are zeroed.
    pub noise_floor: Option<f64>,
    /// Keep a copy of the frame at every renormalisation event.
    pub record_vectors: bool,
}

impl Default for TangentOptions {
    fn default() -> Self {
        Self { renorm_every: 10, orthonormalize: true, noise_floor: None, record_vectors: false }
    }
}

#[derive(Debug, Clone)]
pub struct RenormEvent {
    pub t: f64,
    /// Cumulative `ln R_ii` per vector up to this event.
    pub cum_log: Vec<f64>,
    pub vectors: Option<Vec<PeriodicProfile>>,
}

/// Perturbations `Φ(t, u0, g0) v` evolved along a trajectory.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub vectors: Vec<PeriodicProfile>,
    /// Cumulative log-norm growth per vector since the start.
    pub renorm_log: Vec<f64>,
    /// Log of the initial `R_ii` (norms of the orthogonalised inputs).
    pub initial_log: Vec<f64>,
    pub events: Vec<RenormEvent>,
    pub renorm_every: usize,
    pub dt: f64,
}

impl TangentFrame {
    pub fn t_start(&self) -> f64 {
        self.events.first().map(|e| e.t).unwrap_or(0.0)
    }

    pub fn t_end(&self) -> f64 {
        self.events.last().map(|e| e.t).unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Gram–Schmidt with one re-orthogonalisation pass. Returns `R` (row-major,
/// upper triangle) and applies `R⁻¹` to each history set.
fn orthonormalize(
    grid: Grid,
    vecs: &mut [Vec<f64>],
    histories: &mut [Vec<&mut Vec<C>>],
    full: bool,
    t: f64,
) -> Result<Vec<f64>, SolverError> {
    let m = vecs.len();
    let h = grid.spacing();
    let dot = |a: &[f64], b: &[f64]| h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut r = vec![0.0; m * m];
    for j in 0..m {
        let before = dot(&vecs[j], &vecs[j]).sqrt();
        if full {
            for _pass in 0..2 {
                for i in 0..j {
                    let (qi, vj) = split_pair(vecs, i, j);
                    let c = dot(qi, vj);
                    r[i * m + j] += c;
                    for (x, q) in vj.iter_mut().zip(qi.iter()) {
                        *x -= c * q;
                    }
                }
            }
        }
        let norm = dot(&vecs[j], &vecs[j]).sqrt();
        if !(norm.is_finite()) || norm <= 1e-300 || (full && j > 0 && norm <= 1e-13 * before) {
            return Err(SolverError::FrameCollapse { index: j, t });
        }
        r[j * m + j] = norm;
        for x in vecs[j].iter_mut() {
            *x /= norm;
        }
    }
    for set in histories.iter_mut() {
        for j in 0..m {
            for i in 0..j {
                let c = r[i * m + j];
                if c != 0.0 {
                    let (hi, hj) = split_pair_c(set, i, j);
                    for (x, y) in hj.iter_mut().zip(hi.iter()) {
                        *x -= *y * c;
                    }
                }
            }
            let d = r[j * m + j];
            for x in set[j].iter_mut() {
                *x /= d;
            }
        }
    }
    Ok(r)
}

fn split_pair(v: &mut [Vec<f64>], i: usize, j: usize) -> (&Vec<f64>, &mut Vec<f64>) {
    debug_assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (&a[i], &mut b[0])
}

fn split_pair_c<'a>(v: &'a mut [&mut Vec<C>], i: usize, j: usize) -> (&'a Vec<C>, &'a mut Vec<C>) {
    debug_assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (&*a[i], &mut *b[0])
}

/// Evolve `v0s` under the variational equation along `traj` with QR
/// renormalisation every `renorm_every` steps.
pub fn evolve_tangent(traj: &Trajectory, v0s: &[PeriodicProfile], renorm_every: usize) -> Result<TangentFrame, SolverError> {
    evolve_tangent_with(traj, v0s, &TangentOptions { renorm_every, ..TangentOptions::default() })
}

pub fn evolve_tangent_with(traj: &Trajectory, v0s: &[PeriodicProfile], opts: &TangentOptions) -> Result<TangentFrame, SolverError> {
    if v0s.is_empty() {
        return Err(SolverError::Empty("tangent vectors"));
    }
    if opts.renorm_every == 0 {
        return Err(SolverError::InvalidConfig("renorm_every must be at least 1".into()));
    }
    let grid = traj.grid();
    if v0s.iter().any(|v| v.grid() != grid) {
        return Err(SolverError::GridMismatch);
    }
    let cfg = traj.config;
    let stepper = Stepper::new(grid, &traj.g0, &cfg);
    let first = traj.first();
    let last_step = traj.last().step;
    let mut base = BaseState::new(first.u.values().to_vec());
    let mut tans: Vec<TanState> = v0s.iter().map(|v| TanState::new(v.values().to_vec())).collect();
    let m = tans.len();

    let renorm = |tans: &mut Vec<TanState>, t: f64| -> Result<Vec<f64>, SolverError> {
        let mut vecs: Vec<Vec<f64>> = tans.iter().map(|s| s.v.clone()).collect();
        let mut hists: Vec<Vec<&mut Vec<C>>> = Vec::new();
        let have_hist = tans.iter().all(|s| s.hist.is_some());
        if have_hist {
            let mut vp = Vec::new();
            let mut tp = Vec::new();
            for s in tans.iter_mut() {
                let (a, b) = s.hist.as_mut().expect("checked");
                vp.push(a);
                tp.push(b);
            }
            hists.push(vp);
            hists.push(tp);
        }
        let r = orthonormalize(grid, &mut vecs, &mut hists, opts.orthonormalize, t)?;
        drop(hists);
        for (s, v) in tans.iter_mut().zip(vecs) {
            s.v = v;
        }
        Ok((0..m).map(|i| r[i * m + i].ln()).collect())
    };

    let snapshot = |tans: &[TanState]| -> Vec<PeriodicProfile> {
        tans.iter().map(|s| PeriodicProfile::from_values_unchecked(grid, s.v.clone())).collect()
    };

    let initial_log = renorm(&mut tans, first.t)?;
    let mut cum = vec![0.0; m];
    let mut events = vec![RenormEvent {
        t: first.t,
        cum_log: cum.clone(),
        vectors: opts.record_vectors.then(|| snapshot(&tans)),
    }];
    let mut since = 0usize;
    for step in first.step..last_step {
        stepper.step(step, &mut base, &mut tans, opts.noise_floor);
        since += 1;
        let s = step + 1;
        if since == opts.renorm_every || s == last_step {
            since = 0;
            let t = s as f64 * cfg.dt;
            let logs = renorm(&mut tans, t)?;
            for (c, l) in cum.iter_mut().zip(&logs) {
                *c += l;
            }
            events.push(RenormEvent { t, cum_log: cum.clone(), vectors: opts.record_vectors.then(|| snapshot(&tans)) });
        }
    }
    Ok(TangentFrame {
        vectors: snapshot(&tans),
        renorm_log: cum,
        initial_log,
        events,
        renorm_every: opts.renorm_every,
        dt: cfg.dt,
    })
}

/// Un-normalised tangent `Φ(t) v0` at the final time (single vector, no
/// renormalisation). Intended for difference-quotient checks.
pub fn tangent_image(traj: &Trajectory, v0: &PeriodicProfile) -> Result<PeriodicProfile, SolverError> {
    let grid = traj.grid();
    let cfg = traj.config;
    let stepper = Stepper::new(grid, &traj.g0, &cfg);
    let first = traj.first();
    let mut base = BaseState::new(first.u.values().to_vec());
    let mut tans = vec![TanState::new(v0.values().to_vec())];
    for step in first.step..traj.last().step {
        stepper.step(step, &mut base, &mut tans, None);
    }
    Ok(PeriodicProfile::from_values_unchecked(grid, tans.pop().expect("one tangent").v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::presets;
    use std::f64::consts::TAU;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    fn cfg(dt: f64) -> SolverConfig {
        SolverConfig { dt, ..SolverConfig::default() }
    }

    #[test]
    fn rotating_wave_is_exact() {
        let g = grid(64);
        let u0 = PeriodicProfile::from_fn(g, f64::cos);
        let g0 = HullPoint::origin(presets::rotating_wave());
        let traj = evolve(&u0, &g0, 10.0, &cfg(1e-3)).unwrap();
        let last = traj.last();
        assert!((last.t - 10.0).abs() < 1e-12);
        let exact = PeriodicProfile::from_fn(g, |x| (x - 10.0).cos());
        assert!((&last.u - &exact).norm_inf() < 1e-6);
    }

    #[test]
    fn heat_mode_decay() {
        let g = grid(32);
        let u0 = PeriodicProfile::from_fn(g, f64::sin);
        let g0 = HullPoint::origin(crate::forcing::ForcingSpec::zero());
        for scheme in [Scheme::Etdrk2, Scheme::ImexBdf2] {
            let c = SolverConfig { scheme, ..cfg(1e-3) };
            let traj = evolve(&u0, &g0, 1.0, &c).unwrap();
            let exact = u0.scaled((-1.0_f64).exp());
            let err = (&traj.last().u - &exact).norm_inf();
            // BDF2 is not exact on the linear part
            let tol = if scheme == Scheme::Etdrk2 { 1e-8 } else { 1e-6 };
            assert!(err < tol, "{scheme:?}: {err}");
        }
    }

    #[test]
    fn cubic_blowup_is_detected() {
        let g = grid(32);
        let u0 = PeriodicProfile::constant(g, 3.0);
        let spec = crate::forcing::ForcingSpec::new(
            vec![],
            vec![crate::forcing::Term::new(crate::forcing::TrigPoly::constant(1.0), crate::forcing::Basis::U3)],
            Default::default(),
        )
        .unwrap();
        let g0 = HullPoint::origin(spec);
        match evolve(&u0, &g0, 1.0, &cfg(1e-3)) {
            Err(SolverError::Blowup { t, partial, .. }) => {
                assert!(t < 0.2);
                assert!(matches!(resume(&partial, 1.0), Err(SolverError::Terminated(_))));
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn resume_matches_single_run() {
        let g = grid(32);
        let u0 = PeriodicProfile::from_fn(g, |x| 0.5 * x.cos() + 0.2 * (2.0 * x).sin());
        let g0 = HullPoint::new(presets::symmetric_qp(), &[0.3, 1.1]);
        let c = cfg(1e-3);
        let one = evolve(&u0, &g0, 1.0, &c).unwrap();
        let both = resume(&one, 1.0).unwrap();
        let two = evolve(&u0, &g0, 2.0, &c).unwrap();
        assert_eq!(both.samples().len(), two.samples().len());
        assert!((&both.last().u - &two.last().u).norm_inf() < 1e-8);
        let same = resume(&one, 0.0).unwrap();
        assert_eq!(same.samples().len(), one.samples().len());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = grid(16);
        let u0 = PeriodicProfile::constant(g, 0.0);
        let g0 = HullPoint::origin(presets::linear(-1.0));
        assert!(matches!(evolve(&u0, &g0, 0.0, &cfg(1e-3)), Err(SolverError::InvalidSpan { .. })));
        assert!(matches!(evolve(&u0, &g0, 1.00005, &cfg(1e-3)), Err(SolverError::InvalidSpan { .. })));
        assert!(matches!(evolve(&u0, &g0, 1.0, &cfg(-1.0)), Err(SolverError::InvalidConfig(_))));
    }

    #[test]
    fn tangent_heat_modes() {
        let g = grid(32);
        let u0 = PeriodicProfile::constant(g, 0.0);
        let g0 = HullPoint::origin(crate::forcing::ForcingSpec::zero());
        let traj = evolve(&u0, &g0, 1.0, &cfg(1e-3)).unwrap();
        for k in 1..=3 {
            let v0 = PeriodicProfile::from_fn(g, |x| (k as f64 * x).sin());
            let out = tangent_image(&traj, &v0).unwrap();
            let exact = v0.scaled((-(k * k) as f64).exp());
            assert!((&out - &exact).norm_inf() < 1e-12);
        }
    }

    #[test]
    fn tangent_rotating_wave_growth_rate() {
        let g = grid(32);
        let u0 = PeriodicProfile::from_fn(g, f64::cos);
        let g0 = HullPoint::origin(presets::rotating_wave());
        let traj = evolve(&u0, &g0, 2.0, &cfg(1e-3)).unwrap();
        let v0 = PeriodicProfile::from_fn(g, f64::sin);
        let frame = evolve_tangent_with(&traj, &[v0], &TangentOptions { renorm_every: 50, ..Default::default() }).unwrap();
        // k = 1 mode grows like e^{(1-1)t}
        assert!(frame.renorm_log[0].abs() < 1e-10);
        let exact = PeriodicProfile::from_fn(g, |x| (x - 2.0).sin());
        let v = frame.vectors[0].scaled(frame.initial_log[0].exp());
        assert!((&v - &exact).norm_inf() < 1e-10);
    }

    #[test]
    fn tangent_is_difference_quotient_for_linear_forcing() {
        let g = grid(32);
        let u0 = PeriodicProfile::from_fn(g, |x| x.cos() + 0.3 * (3.0 * x).sin());
        let v0 = PeriodicProfile::from_fn(g, |x| (2.0 * x).cos() - 0.1);
        let g0 = HullPoint::new(presets::floquet_linear(0.3), &[0.2]);
        let c = cfg(1e-3);
        let eps = 1e-5;
        let base = evolve(&u0, &g0, 1.0, &c).unwrap();
        let pert = evolve(&(&u0 + &v0.scaled(eps)), &g0, 1.0, &c).unwrap();
        let fd = (&pert.last().u - &base.last().u).scaled(1.0 / eps);
        let tan = tangent_image(&base, &v0).unwrap();
        assert!((&fd - &tan).norm_inf() < 1e-8);
    }

    #[test]
    fn dense_states_cover_window() {
        let g = grid(16);
        let u0 = PeriodicProfile::from_fn(g, f64::cos);
        let g0 = HullPoint::origin(presets::rotating_wave());
        let traj = evolve(&u0, &g0, 1.0, &SolverConfig { save_stride: 100, ..cfg(1e-2) }).unwrap();
        let dense = dense_states(&traj, 0.25, 0.5).unwrap();
        assert!((dense[0].t - 0.25).abs() < 1e-12);
        assert!((dense.last().unwrap().t - 0.5).abs() < 1e-12);
        assert_eq!(dense.len(), 26);
        let exact = PeriodicProfile::from_fn(g, |x| (x - 0.5).cos());
        assert!((&dense.last().unwrap().u - &exact).norm_inf() < 1e-12);
        let _ = TAU;
    }

    #[test]
    fn batch_matches_sequential() {
        let g = grid(16);
        let spec = presets::cubic(1.0);
        let starts: Vec<_> = (0..4)
            .map(|i| (PeriodicProfile::from_fn(g, |x| (x + i as f64).cos() * 0.5), HullPoint::origin(spec.clone())))
            .collect();
        let c = cfg(1e-2);
        let par = evolve_batch(&starts, 1.0, &c, Execution::Parallel);
        let seq = evolve_batch(&starts, 1.0, &c, Execution::Sequential);
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.as_ref().unwrap().last().u, b.as_ref().unwrap().last().u);
        }
    }
}
