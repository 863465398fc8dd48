//! Equispaced periodic grid on the circle of length 2π.
//!
//! A [`PeriodicProfile`] stores nodal samples; its canonical continuous
//! representative is the trigonometric interpolant through those samples.
//! Every pointwise query (evaluation, maxima, derivatives off the grid) goes
//! through the interpolant, never the raw samples.
//!
//! The Nyquist mode of an even-length grid is represented as `c cos(n x / 2)`,
//! the unique real choice. Shifts that are not multiples of the node spacing
//! therefore lose the sine half of that mode; band-limited profiles (highest
//! mode below `n / 2`) shift exactly.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("n must be even (got {0})")]
    Odd(usize),
    #[error("n must be at least 8 (got {0})")]
    TooSmall(usize),
    #[error("profile has {got} samples, grid has {expected}")]
    Length { expected: usize, got: usize },
    #[error("profile contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("derivative order must be 1, 2 or 3 (got {0})")]
    Order(u32),
}

/// Equispaced nodes `x_j = 2πj/n` on `R / 2πZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self, GridError> {
        if !n.is_multiple_of(2) {
            return Err(GridError::Odd(n));
        }
        if n < 8 {
            return Err(GridError::TooSmall(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        TAU * j as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Signed wavenumber of FFT bin `k` (Nyquist reported as `+n/2`).
    pub fn wavenumber(&self, k: usize) -> f64 {
        let half = self.n / 2;
        if k <= half {
            k as f64
        } else {
            k as f64 - self.n as f64
        }
    }

    pub(crate) fn is_nyquist(&self, k: usize) -> bool {
        k == self.n / 2
    }

    /// Multiplier of `d^order/dx^order` on FFT bin `k`, consistent with the
    /// real interpolant at the nodes.
    pub(crate) fn derivative_symbol(&self, k: usize, order: u32) -> Complex64 {
        if order == 0 {
            return Complex64::new(1.0, 0.0);
        }
        if self.is_nyquist(k) {
            if order % 2 == 1 {
                return Complex64::new(0.0, 0.0);
            }
            let h = (self.n / 2) as f64;
            let sign = if (order / 2) % 2 == 1 { -1.0 } else { 1.0 };
            return Complex64::new(sign * h.powi(order as i32), 0.0);
        }
        Complex64::new(0.0, self.wavenumber(k)).powu(order)
    }

    pub(crate) fn spectral(&self) -> Arc<Spectral> {
        Spectral::cached(self.n)
    }
}

/// Cached FFT plans for one transform length.
pub(crate) struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub(crate) fn cached(n: usize) -> Arc<Spectral> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Spectral>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("fft plan cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Spectral {
                    n,
                    fwd: planner.plan_fft_forward(n),
                    inv: planner.plan_fft_inverse(n),
                })
            })
            .clone()
    }

    /// `c_k = (1/n) Σ_j u_j e^{-i k x_j}`.
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.n);
        let scale = 1.0 / self.n as f64;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Real part of `Σ_k c_k e^{i k x_j}`.
    pub(crate) fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.inv.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub(crate) fn inverse_into(&self, coeffs: &mut [Complex64], out: &mut [f64]) {
        self.inv.process(coeffs);
        for (o, c) in out.iter_mut().zip(coeffs.iter()) {
            *o = c.re;
        }
    }
}

/// Nodal samples of a C¹ function on the circle.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicProfile {
    grid: Grid,
    values: Vec<f64>,
}

impl fmt::Debug for PeriodicProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicProfile")
            .field("n", &self.grid.n)
            .field("sup", &self.norm_inf())
            .finish()
    }
}

impl PeriodicProfile {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n {
            return Err(GridError::Length { expected: grid.n, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the nodes. Panics if `f` produces a non-finite value.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, values).expect("from_fn produced a non-finite sample")
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub(crate) fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n);
        Self { grid, values }
    }

    pub(crate) fn from_coeffs(grid: Grid, coeffs: &[Complex64]) -> Self {
        let values = grid.spectral().inverse(coeffs);
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn coeffs(&self) -> Vec<Complex64> {
        self.grid.spectral().forward(&self.values)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Discrete L² inner product `(2π/n) Σ u_j v_j`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.grid.spacing() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Nodal samples of the `order`-th derivative of the interpolant.
    pub fn diff(&self, order: u32) -> Result<Self, GridError> {
        if !(1..=3).contains(&order) {
            return Err(GridError::Order(order));
        }
        Ok(self.diff_unchecked(order))
    }

    pub(crate) fn diff_unchecked(&self, order: u32) -> Self {
        let mut c = self.coeffs();
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= self.grid.derivative_symbol(k, order);
        }
        Self::from_coeffs(self.grid, &c)
    }

    /// Samples of `x ↦ u(x + a)` computed on the interpolant.
    pub fn shift(&self, a: f64) -> Self {
        let mut c = self.coeffs();
        shift_coeffs(self.grid, &mut c, a);
        Self::from_coeffs(self.grid, &c)
    }

    /// Interpolant value and slope at `x`.
    pub fn eval_at(&self, x: f64) -> (f64, f64) {
        let d = eval_derivatives(self.grid, &self.coeffs(), x, 1);
        (d[0], d[1])
    }

    /// Interpolant value and its first `max_order` derivatives at `x`.
    pub fn eval_derivatives(&self, x: f64, max_order: u32) -> Vec<f64> {
        eval_derivatives(self.grid, &self.coeffs(), x, max_order)
    }

    /// Global maximum of the interpolant and its location in `[0, 2π)`.
    ///
    /// Ties (within round-off of the maximum) go to the smallest location.
    pub fn max_and_argmax(&self) -> (f64, f64) {
        let coeffs = self.coeffs();
        max_and_argmax_coeffs(self.grid, &coeffs)
    }

    pub fn min(&self) -> f64 {
        -self.scaled(-1.0).max_and_argmax().0
    }
}

impl Sub for &PeriodicProfile {
    type Output = PeriodicProfile;
    fn sub(self, rhs: &PeriodicProfile) -> PeriodicProfile {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        PeriodicProfile {
            grid: self.grid,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Add for &PeriodicProfile {
    type Output = PeriodicProfile;
    fn add(self, rhs: &PeriodicProfile) -> PeriodicProfile {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        PeriodicProfile {
            grid: self.grid,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Mul<f64> for &PeriodicProfile {
    type Output = PeriodicProfile;
    fn mul(self, rhs: f64) -> PeriodicProfile {
        self.scaled(rhs)
    }
}

pub fn make_grid(n: usize) -> Result<Grid, GridError> {
    Grid::new(n)
}

/// Wrap `x` into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed distance `a - b` reduced to `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

pub(crate) fn shift_coeffs(grid: Grid, c: &mut [Complex64], a: f64) {
    for (k, ck) in c.iter_mut().enumerate() {
        if grid.is_nyquist(k) {
            *ck *= (grid.n as f64 / 2.0 * a).cos();
        } else {
            *ck *= Complex64::from_polar(1.0, grid.wavenumber(k) * a);
        }
    }
}

/// Value and derivatives up to `max_order` of the interpolant with the given
/// coefficients, evaluated by direct summation.
pub(crate) fn eval_derivatives(grid: Grid, c: &[Complex64], x: f64, max_order: u32) -> Vec<f64> {
    let n = grid.n;
    let half = n / 2;
    let mut out = vec![0.0; max_order as usize + 1];
    out[0] = c[0].re;
    for k in 1..half {
        let kk = k as f64;
        // positive and negative bins combine into 2 Re(c_k e^{ikx})
        let z = c[k] * Complex64::from_polar(2.0, kk * x);
        let mut factor = Complex64::new(1.0, 0.0);
        for o in out.iter_mut() {
            *o += (z * factor).re;
            factor *= Complex64::new(0.0, kk);
        }
    }
    let ny = c[half].re;
    let h = half as f64;
    let (s, co) = (h * x).sin_cos();
    // d^m/dx^m cos(hx) cycles through cos, -sin, -cos, sin
    for (m, o) in out.iter_mut().enumerate() {
        let hp = h.powi(m as i32);
        *o += ny
            * hp
            * match m % 4 {
                0 => co,
                1 => -s,
                2 => -co,
                _ => s,
            };
    }
    out
}

/// Values of the `order`-th derivative of the interpolant on an `factor`-times
/// refined grid, via zero padding.
pub(crate) fn oversample(grid: Grid, c: &[Complex64], factor: usize, order: u32) -> Vec<f64> {
    let n = grid.n;
    let m = n * factor;
    let half = n / 2;
    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..half {
        let sym = Complex64::new(0.0, k as f64).powu(order);
        padded[k] = c[k] * sym;
        if k > 0 {
            let sym_neg = Complex64::new(0.0, -(k as f64)).powu(order);
            padded[m - k] = c[n - k] * sym_neg;
        }
    }
    let ny = c[half] * 0.5;
    padded[half] += ny * Complex64::new(0.0, half as f64).powu(order);
    padded[m - half] += ny * Complex64::new(0.0, -(half as f64)).powu(order);
    Spectral::cached(m).inverse(&padded)
}

pub(crate) fn max_and_argmax_coeffs(grid: Grid, c: &[Complex64]) -> (f64, f64) {
    const FACTOR: usize = 4;
    let fine = oversample(grid, c, FACTOR, 0);
    let m = fine.len();
    let h = TAU / m as f64;
    let top = fine.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bottom = fine.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = top - bottom;
    let scale = top.abs().max(bottom.abs()).max(f64::MIN_POSITIVE);
    if spread <= 1e-14 * scale {
        return (c[0].re.max(top), 0.0);
    }
    let mut best: Option<(f64, f64)> = None;
    for j in 0..m {
        let prev = fine[(j + m - 1) % m];
        let next = fine[(j + 1) % m];
        let v = fine[j];
        if v < prev || v < next {
            continue;
        }
        // only peaks that can plausibly be global
        if v < top - 0.25 * spread {
            continue;
        }
        let x = refine_peak(grid, c, j as f64 * h, h);
        let val = eval_derivatives(grid, c, x, 0)[0];
        let x = wrap_angle(x);
        best = match best {
            None => Some((val, x)),
            Some((bv, bx)) => {
                let tie = 1e-12 * scale;
                if val > bv + tie || ((val - bv).abs() <= tie && x < bx) {
                    Some((val.max(bv), x))
                } else {
                    Some((bv.max(val), bx))
                }
            }
        };
    }
    let (v, x) = best.expect("a periodic function has a maximum");
    (v, if x >= TAU - 1e-12 { 0.0 } else { x })
}

/// Locate the peak near `x0` by bracketed bisection on the slope.
fn refine_peak(grid: Grid, c: &[Complex64], x0: f64, h: f64) -> f64 {
    let slope = |x: f64| eval_derivatives(grid, c, x, 1)[1];
    let (mut lo, mut hi) = (x0 - h, x0 + h);
    let (slo, shi) = (slope(lo), slope(hi));
    if !(slo >= 0.0 && shi <= 0.0) {
        return x0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}
