//! Change of variables for linear equations `v_t = v_xx + a(t,x) v_x + b(t,x) v`.
//!
//! With `a₀(t)` the spatial mean of `a` and `A(t,x) = ∫₀^x (a − a₀) dz`:
//!
//! * `w = ψ v`, `ψ = exp(+A/2)`, solves `w_t = w_xx + a₀ w_x + b̃ w` with
//!   `b̃ = b + ½ A_t − ¼(a² − a₀²) − ½ a_x`;
//! * `v̄(t,x) = w(t, x + c(t))` with `ċ = −a₀` solves `v̄_t = v̄_xx + b̄ v̄`,
//!   `b̄(t,x) = b̃(t, x + c(t))`.
//!
//! The sign of the exponent in `ψ` is the one that removes the drift term;
//! with `exp(−A/2)` the first-order coefficient doubles instead of vanishing.

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, PeriodicProfile, Spectral};
use crate::quad::adaptive_simpson;
use crate::solver::{self, SolverError, Trajectory};

/// Coefficients `a(t, ·)`, `b(t, ·)` at the grid nodes.
pub trait CoefficientField: Sync {
    fn grid(&self) -> Grid;
    fn a(&self, t: f64) -> Vec<f64>;
    fn b(&self, t: f64) -> Vec<f64>;
}

/// Closed-form coefficients.
pub struct AnalyticField<A, B> {
    grid: Grid,
    a: A,
    b: B,
}

impl<A, B> AnalyticField<A, B>
where
    A: Fn(f64, f64) -> f64 + Sync,
    B: Fn(f64, f64) -> f64 + Sync,
{
    pub fn new(grid: Grid, a: A, b: B) -> Self {
        Self { grid, a, b }
    }
}

impl<A, B> CoefficientField for AnalyticField<A, B>
where
    A: Fn(f64, f64) -> f64 + Sync,
    B: Fn(f64, f64) -> f64 + Sync,
{
    fn grid(&self) -> Grid {
        self.grid
    }

    fn a(&self, t: f64) -> Vec<f64> {
        self.grid.nodes().into_iter().map(|x| (self.a)(t, x)).collect()
    }

    fn b(&self, t: f64) -> Vec<f64> {
        self.grid.nodes().into_iter().map(|x| (self.b)(t, x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Wave {
    k: u32,
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn eval(&self, t: f64, x: f64) -> f64 {
        self.amp * (self.k as f64 * x + self.freq * t + self.phase).cos()
    }
}

/// Sums of travelling cosines `α cos(kx + νt + φ)` with random parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandLimitedField {
    grid: Grid,
    a: Vec<Wave>,
    b: Vec<Wave>,
}

impl BandLimitedField {
    /// Spatial modes `k = 0..modes` for each coefficient, total amplitude at
    /// most `amp`.
    pub fn random(grid: Grid, seed: u64, modes: u32, amp: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = |rng: &mut ChaCha8Rng| -> Vec<Wave> {
            (0..modes)
                .map(|k| Wave {
                    k,
                    amp: rng.gen_range(0.0..amp / modes.max(1) as f64),
                    freq: rng.gen_range(0.5..1.5),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                })
                .collect()
        };
        let a = waves(&mut rng);
        let b = waves(&mut rng);
        Self { grid, a, b }
    }
}

impl CoefficientField for BandLimitedField {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn a(&self, t: f64) -> Vec<f64> {
        self.grid.nodes().into_iter().map(|x| self.a.iter().map(|w| w.eval(t, x)).sum()).collect()
    }

    fn b(&self, t: f64) -> Vec<f64> {
        self.grid.nodes().into_iter().map(|x| self.b.iter().map(|w| w.eval(t, x)).sum()).collect()
    }
}

/// `a = g_p`, `b = g_u` along a base trajectory, from every integration step
/// of a window, interpolated in time by 4-point Lagrange polynomials.
pub struct TrajectoryField {
    grid: Grid,
    times: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl TrajectoryField {
    pub fn new(traj: &Trajectory, window: (f64, f64)) -> Result<Self, SolverError> {
        let dt = traj.config().dt;
        let lo = (window.0 - 3.0 * dt).max(traj.first().t);
        let hi = (window.1 + 3.0 * dt).min(traj.last().t);
        let states = solver::dense_states(traj, lo, hi)?;
        let grid = traj.grid();
        let nodes = grid.nodes();
        let g0 = traj.g0();
        let mut times = Vec::with_capacity(states.len());
        let mut a = Vec::with_capacity(states.len());
        let mut b = Vec::with_capacity(states.len());
        for s in &states {
            let ux = s.u.diff_unchecked(1);
            let (mut aa, mut bb) = (Vec::with_capacity(nodes.len()), Vec::with_capacity(nodes.len()));
            for (j, &x) in nodes.iter().enumerate() {
                let (gu, gp) = g0.partials(s.t, x, s.u.values()[j], ux.values()[j]).unwrap_or((f64::NAN, f64::NAN));
                aa.push(gp);
                bb.push(gu);
            }
            times.push(s.t);
            a.push(aa);
            b.push(bb);
        }
        Ok(Self { grid, times, a, b })
    }

    fn interp(&self, data: &[Vec<f64>], t: f64) -> Vec<f64> {
        let m = self.times.len();
        if m == 1 {
            return data[0].clone();
        }
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        let start = i.saturating_sub(1).min(m.saturating_sub(4));
        let end = (start + 4).min(m);
        let idx: Vec<usize> = (start..end).collect();
        let mut out = vec![0.0; data[0].len()];
        for &p in &idx {
            let mut w = 1.0;
            for &q in &idx {
                if q != p {
                    w *= (t - self.times[q]) / (self.times[p] - self.times[q]);
                }
            }
            for (o, v) in out.iter_mut().zip(&data[p]) {
                *o += w * v;
            }
        }
        out
    }
}

impl CoefficientField for TrajectoryField {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn a(&self, t: f64) -> Vec<f64> {
        self.interp(&self.a, t)
    }

    fn b(&self, t: f64) -> Vec<f64> {
        self.interp(&self.b, t)
    }
}

/// Spatial mean `a₀(t)` of `a(t, ·)`.
pub fn mean_drift(field: &dyn CoefficientField, t: f64) -> f64 {
    let a = field.a(t);
    a.iter().sum::<f64>() / a.len() as f64
}

/// `∫₀^x f` for zero-mean nodal `f`, as nodal values.
fn antiderivative(grid: Grid, f: &[f64]) -> Vec<f64> {
    let sp = Spectral::cached(grid.n());
    let c = sp.forward(f);
    let mut ac: Vec<C> = c
        .iter()
        .enumerate()
        .map(|(k, ck)| {
            let kk = grid.wavenumber(k);
            if k == 0 || grid.is_nyquist(k) {
                C::new(0.0, 0.0)
            } else {
                ck / C::new(0.0, kk)
            }
        })
        .collect();
    let mut out = vec![0.0; f.len()];
    sp.inverse_into(&mut ac, &mut out);
    let at0 = out[0];
    out.iter_mut().for_each(|v| *v -= at0);
    out
}

fn gauge_potential(field: &dyn CoefficientField, t: f64) -> (f64, Vec<f64>) {
    let grid = field.grid();
    let a = field.a(t);
    let a0 = a.iter().sum::<f64>() / a.len() as f64;
    let centered: Vec<f64> = a.iter().map(|v| v - a0).collect();
    (a0, antiderivative(grid, &centered))
}

/// Gauge quantities at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeSlice {
    pub t: f64,
    pub a0: f64,
    pub psi: PeriodicProfile,
    pub b_tilde: PeriodicProfile,
}

impl GaugeSlice {
    /// `b̄(t, ·) = b̃(t, · + c)`.
    pub fn b_bar(&self, c: f64) -> PeriodicProfile {
        self.b_tilde.shift(c)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,psi,b_tilde\n");
        let nodes = self.psi.grid().nodes();
        for (j, x) in nodes.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", x, self.psi.values()[j], self.b_tilde.values()[j]));
        }
        out
    }
}

/// `ψ` and `b̃` at time `t`; `A_t` by central differences with step `h_t`.
pub fn gauge(field: &dyn CoefficientField, t: f64, h_t: f64) -> GaugeSlice {
    let grid = field.grid();
    let a = field.a(t);
    let b = field.b(t);
    let (a0, big_a) = gauge_potential(field, t);
    let (_, ap) = gauge_potential(field, t + h_t);
    let (_, am) = gauge_potential(field, t - h_t);
    let a_prof = PeriodicProfile::from_values_unchecked(grid, a.clone());
    let ax = a_prof.diff_unchecked(1);
    let psi: Vec<f64> = big_a.iter().map(|v| (0.5 * v).exp()).collect();
    let bt: Vec<f64> = (0..a.len())
        .map(|j| {
            let a_t = (ap[j] - am[j]) / (2.0 * h_t);
            b[j] + 0.5 * a_t - 0.25 * (a[j] * a[j] - a0 * a0) - 0.5 * ax.values()[j]
        })
        .collect();
    GaugeSlice {
        t,
        a0,
        psi: PeriodicProfile::from_values_unchecked(grid, psi),
        b_tilde: PeriodicProfile::from_values_unchecked(grid, bt),
    }
}

/// `c(t) = −∫_{t_ref}^t a₀`.
pub fn c_drift(field: &dyn CoefficientField, t_ref: f64, t: f64) -> f64 {
    -adaptive_simpson(|s| mean_drift(field, s), t_ref, t, 1e-10)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max: f64,
    pub mean: f64,
    pub window: (f64, f64),
    pub dt: f64,
    pub samples: usize,
}

/// ETDRK2 for `v_t = v_xx + a v_x + b v` on `[t0, t1]`, every step stored.
fn evolve_linear(field: &dyn CoefficientField, v0: &PeriodicProfile, t0: f64, steps: usize, dt: f64) -> Vec<Vec<f64>> {
    let grid = field.grid();
    let n = grid.n();
    let sp = Spectral::cached(n);
    let lin: Vec<C> = (0..n).map(|k| grid.derivative_symbol(k, 2)).collect();
    let dx: Vec<C> = (0..n).map(|k| grid.derivative_symbol(k, 1)).collect();
    let mut e = Vec::with_capacity(n);
    let mut p1 = Vec::with_capacity(n);
    let mut p2 = Vec::with_capacity(n);
    for l in &lin {
        let z = l * dt;
        let (a, b) = if z.norm() < 1e-2 {
            // Taylor series of φ1, φ2 for a real non-positive argument
            let mut p1 = C::new(0.0, 0.0);
            let mut p2 = C::new(0.0, 0.0);
            let mut zk = C::new(1.0, 0.0);
            let (mut f1, mut f2) = (1.0, 2.0);
            for k in 0..12 {
                p1 += zk / f1;
                p2 += zk / f2;
                zk *= z;
                f1 *= (k + 2) as f64;
                f2 *= (k + 3) as f64;
            }
            (p1, p2)
        } else {
            ((z.exp() - 1.0) / z, (z.exp() - 1.0 - z) / (z * z))
        };
        e.push(z.exp());
        p1.push(a * dt);
        p2.push(b * dt);
    }
    let rhs = |vhat: &[C], t: f64| -> Vec<C> {
        let v = sp.inverse(vhat);
        let mut d: Vec<C> = vhat.iter().zip(&dx).map(|(a, b)| a * b).collect();
        let mut vx = vec![0.0; n];
        sp.inverse_into(&mut d, &mut vx);
        let a = field.a(t);
        let b = field.b(t);
        let vals: Vec<f64> = (0..n).map(|j| a[j] * vx[j] + b[j] * v[j]).collect();
        sp.forward(&vals)
    };
    let mut out = Vec::with_capacity(steps + 1);
    let mut v = v0.values().to_vec();
    out.push(v.clone());
    for s in 0..steps {
        let t = t0 + s as f64 * dt;
        let vhat = sp.forward(&v);
        let n0 = rhs(&vhat, t);
        let ahat: Vec<C> = (0..n).map(|k| e[k] * vhat[k] + p1[k] * n0[k]).collect();
        let n1 = rhs(&ahat, t + dt);
        let next: Vec<C> = (0..n).map(|k| ahat[k] + p2[k] * (n1[k] - n0[k])).collect();
        v = sp.inverse(&next);
        out.push(v.clone());
    }
    out
}

/// Evolve `v0` under the linear equation, map it through the gauge and the
/// moving frame, and measure the residual of `v̄_t = v̄_xx + b̄ v̄` (spectral
/// in `x`, central differences in `t`) at the interior steps.
pub fn verify_transform(field: &dyn CoefficientField, v0: &PeriodicProfile, window: (f64, f64), dt: f64) -> ResidualReport {
    verify_transform_with(field, v0, window, dt, 1e-4)
}

pub fn verify_transform_with(field: &dyn CoefficientField, v0: &PeriodicProfile, window: (f64, f64), dt: f64, h_t: f64) -> ResidualReport {
    let (t0, t1) = window;
    let steps = ((t1 - t0) / dt).round() as usize;
    let grid = field.grid();
    let vs = evolve_linear(field, v0, t0, steps, dt);
    let times: Vec<f64> = (0..=steps).map(|s| t0 + s as f64 * dt).collect();
    // drift phase accumulated step by step
    let mut c = vec![0.0; steps + 1];
    for s in 1..=steps {
        c[s] = c[s - 1] - adaptive_simpson(|t| mean_drift(field, t), times[s - 1], times[s], 1e-12);
    }
    let slices: Vec<GaugeSlice> = times.iter().map(|&t| gauge(field, t, h_t)).collect();
    let vbar: Vec<PeriodicProfile> = (0..=steps)
        .map(|s| {
            let w: Vec<f64> = vs[s].iter().zip(slices[s].psi.values()).map(|(v, p)| v * p).collect();
            PeriodicProfile::from_values_unchecked(grid, w).shift(c[s])
        })
        .collect();
    let mut max = 0.0_f64;
    let mut sum = 0.0;
    let mut count = 0;
    for s in 1..steps {
        let vt = (&vbar[s + 1] - &vbar[s - 1]).scaled(1.0 / (2.0 * dt));
        let vxx = vbar[s].diff_unchecked(2);
        let bbar = slices[s].b_bar(c[s]);
        let r: f64 = (0..grid.n())
            .map(|j| (vt.values()[j] - vxx.values()[j] - bbar.values()[j] * vbar[s].values()[j]).abs())
            .fold(0.0, f64::max);
        max = max.max(r);
        sum += r;
        count += 1;
    }
    ResidualReport { max, mean: if count > 0 { sum / count as f64 } else { 0.0 }, window, dt, samples: count }
}

/// [`verify_transform`] for the linearisation along a base trajectory.
pub fn verify_transform_along(traj: &Trajectory, v0: &PeriodicProfile, window: (f64, f64)) -> Result<ResidualReport, SolverError> {
    let field = TrajectoryField::new(traj, window)?;
    Ok(verify_transform(&field, v0, window, traj.config().dt))
}

/// Amplitude `exp(∫₀^t b₀ − k² t)` of the mode `sin k(x − c(t))` of
/// `v_t = v_xx + b₀(t) v`.
pub fn homogeneous_modes(b0: impl Fn(f64) -> f64, k: u32, t: f64) -> f64 {
    let integral = adaptive_simpson(b0, 0.0, t, 1e-10);
    (integral - (k as f64).powi(2) * t).exp()
}
