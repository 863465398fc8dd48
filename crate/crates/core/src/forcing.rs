//! Nonlinearities `f(t, x, u, p)` with quasi-periodic time dependence.
//!
//! The hull of a quasi-periodic `f` is modelled as the torus `T^k` carrying
//! the linear flow `θ ↦ θ + ωt`; a [`HullPoint`] is a phase on that torus and
//! evaluates `g(t, …) = f` with phase `θ + ωt`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::angle_diff;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForcingError {
    #[error("term {term}: mode index has {got} entries, expected {expected}")]
    ModeDimension { term: usize, expected: usize, got: usize },
    #[error("term {term}: basis depends on x but the spec is flagged x_independent")]
    NotXIndependent { term: usize },
    #[error("spec is flagged autonomous but has {0} frequencies")]
    NotAutonomous(usize),
    #[error("spec is flagged p_even but f(p) != f(-p) at (t={t}, x={x}, u={u}, p={p})")]
    NotEven { t: f64, x: f64, u: f64, p: f64 },
    #[error("frequency {0} is not finite")]
    BadFrequency(usize),
    #[error("tabulated basis needs at least two samples and hi > lo")]
    BadTable,
    #[error("non-finite argument to forcing evaluation")]
    NonFinite,
    #[error("hull points belong to different forcing specs")]
    MismatchedSpecs,
    #[error("count must be at least 1")]
    EmptySample,
}

/// One cosine mode `amplitude · cos(index · θ + phase)` of a coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffMode {
    pub index: Vec<i32>,
    pub amplitude: f64,
    pub phase: f64,
}

/// Finite trigonometric polynomial on `T^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigPoly {
    pub modes: Vec<CoeffMode>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        Self { modes: vec![CoeffMode { index: Vec::new(), amplitude: c, phase: 0.0 }] }
    }

    /// `amplitude · cos(index · θ + phase)`.
    pub fn cos_mode(index: Vec<i32>, amplitude: f64, phase: f64) -> Self {
        Self { modes: vec![CoeffMode { index, amplitude, phase }] }
    }

    /// `amplitude · sin(index · θ)`.
    pub fn sin_mode(index: Vec<i32>, amplitude: f64) -> Self {
        Self::cos_mode(index, amplitude, -std::f64::consts::FRAC_PI_2)
    }

    pub fn plus(mut self, other: TrigPoly) -> Self {
        self.modes.extend(other.modes);
        self
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let arg: f64 = m.index.iter().zip(theta).map(|(&i, &th)| i as f64 * th).sum::<f64>() + m.phase;
                m.amplitude * arg.cos()
            })
            .sum()
    }

    /// Whether every mode has a zero index vector.
    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|m| m.index.iter().all(|&i| i == 0))
    }

    fn constant_value(&self) -> f64 {
        self.modes.iter().map(|m| m.amplitude * m.phase.cos()).sum()
    }
}

/// Argument of a tabulated basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableVariable {
    X,
    U,
    P,
}

/// Uniformly spaced samples interpolated by a C¹ cubic Hermite spline with
/// centred-difference slopes; linear extrapolation outside `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub variable: TableVariable,
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl Table {
    fn validate(&self) -> Result<(), ForcingError> {
        if self.values.len() < 2 || !(self.hi > self.lo) || self.values.iter().any(|v| !v.is_finite()) {
            return Err(ForcingError::BadTable);
        }
        Ok(())
    }

    fn slope_at_knot(&self, i: usize, h: f64) -> f64 {
        let v = &self.values;
        let last = v.len() - 1;
        if i == 0 {
            (v[1] - v[0]) / h
        } else if i == last {
            (v[last] - v[last - 1]) / h
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * h)
        }
    }

    /// Value and derivative at `s`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let last = self.values.len() - 1;
        let h = (self.hi - self.lo) / last as f64;
        if s <= self.lo {
            let m = self.slope_at_knot(0, h);
            return (self.values[0] + m * (s - self.lo), m);
        }
        if s >= self.hi {
            let m = self.slope_at_knot(last, h);
            return (self.values[last] + m * (s - self.hi), m);
        }
        let pos = (s - self.lo) / h;
        let i = (pos.floor() as usize).min(last - 1);
        let r = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slope_at_knot(i, h) * h, self.slope_at_knot(i + 1, h) * h);
        let r2 = r * r;
        let r3 = r2 * r;
        let value = (2.0 * r3 - 3.0 * r2 + 1.0) * y0 + (r3 - 2.0 * r2 + r) * m0 + (-2.0 * r3 + 3.0 * r2) * y1 + (r3 - r2) * m1;
        let dr = (6.0 * r2 - 6.0 * r) * y0 + (3.0 * r2 - 4.0 * r + 1.0) * m0 + (-6.0 * r2 + 6.0 * r) * y1 + (3.0 * r2 - 2.0 * r) * m1;
        (value, dr / h)
    }
}

/// Spatial/state factor of a forcing term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    One,
    U,
    P,
    U3,
    SinX,
    CosX,
    SinMX(u32),
    CosMX(u32),
    UP,
    P2,
    Tabulated(Table),
}

impl Basis {
    fn depends_on_x(&self) -> bool {
        matches!(
            self,
            Basis::SinX | Basis::CosX | Basis::SinMX(_) | Basis::CosMX(_)
        ) || matches!(self, Basis::Tabulated(t) if t.variable == TableVariable::X)
    }

    fn value(&self, x: f64, u: f64, p: f64) -> f64 {
        match self {
            Basis::One => 1.0,
            Basis::U => u,
            Basis::P => p,
            Basis::U3 => u * u * u,
            Basis::SinX => x.sin(),
            Basis::CosX => x.cos(),
            Basis::SinMX(m) => (*m as f64 * x).sin(),
            Basis::CosMX(m) => (*m as f64 * x).cos(),
            Basis::UP => u * p,
            Basis::P2 => p * p,
            Basis::Tabulated(t) => t.eval(t_arg(t.variable, x, u, p)).0,
        }
    }

    /// `(∂/∂u, ∂/∂p)` of the basis.
    fn partials(&self, x: f64, u: f64, p: f64) -> (f64, f64) {
        match self {
            Basis::U => (1.0, 0.0),
            Basis::P => (0.0, 1.0),
            Basis::U3 => (3.0 * u * u, 0.0),
            Basis::UP => (p, u),
            Basis::P2 => (0.0, 2.0 * p),
            Basis::Tabulated(t) => match t.variable {
                TableVariable::X => (0.0, 0.0),
                TableVariable::U => (t.eval(u).1, 0.0),
                TableVariable::P => (0.0, t.eval(p).1),
            },
            _ => {
                let _ = (x, u, p);
                (0.0, 0.0)
            }
        }
    }
}

fn t_arg(v: TableVariable, x: f64, u: f64, p: f64) -> f64 {
    match v {
        TableVariable::X => x,
        TableVariable::U => u,
        TableVariable::P => p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: TrigPoly,
    pub basis: Basis,
}

impl Term {
    pub fn new(coeff: TrigPoly, basis: Basis) -> Self {
        Self { coeff, basis }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SymmetryFlags {
    pub x_independent: bool,
    pub p_even: bool,
    pub autonomous: bool,
}

/// Validated description of `f(t, x, u, p) = Σ coeff_i(θ + ωt) · basis_i(x, u, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    freqs: Vec<f64>,
    terms: Vec<Term>,
    flags: SymmetryFlags,
}

impl ForcingSpec {
    pub fn new(freqs: Vec<f64>, terms: Vec<Term>, flags: SymmetryFlags) -> Result<Arc<Self>, ForcingError> {
        if let Some(i) = freqs.iter().position(|w| !w.is_finite()) {
            return Err(ForcingError::BadFrequency(i));
        }
        let k = freqs.len();
        for (ti, term) in terms.iter().enumerate() {
            for m in &term.coeff.modes {
                // an empty index is shorthand for the zero vector
                if !m.index.is_empty() && m.index.len() != k {
                    return Err(ForcingError::ModeDimension { term: ti, expected: k, got: m.index.len() });
                }
            }
            if let Basis::Tabulated(t) = &term.basis {
                t.validate()?;
            }
            if flags.x_independent && term.basis.depends_on_x() {
                return Err(ForcingError::NotXIndependent { term: ti });
            }
        }
        if flags.autonomous && k > 0 {
            return Err(ForcingError::NotAutonomous(k));
        }
        let spec = Self { freqs, terms, flags };
        if flags.p_even {
            spec.check_p_even()?;
        }
        Ok(Arc::new(spec))
    }

    /// `f = 0`.
    pub fn zero() -> Arc<Self> {
        Self::new(Vec::new(), Vec::new(), SymmetryFlags { x_independent: true, p_even: true, autonomous: true })
            .expect("zero forcing is valid")
    }

    fn check_p_even(&self) -> Result<(), ForcingError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e7e7);
        let theta0 = vec![0.0; self.freqs.len()];
        for _ in 0..1000 {
            let t = rng.gen_range(-50.0..50.0);
            let x = rng.gen_range(0.0..TAU);
            let u = rng.gen_range(-3.0..3.0);
            let p = rng.gen_range(-3.0..3.0);
            let a = self.eval_raw(&theta0, t, x, u, p);
            let b = self.eval_raw(&theta0, t, x, u, -p);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                return Err(ForcingError::NotEven { t, x, u, p });
            }
        }
        Ok(())
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn flags(&self) -> SymmetryFlags {
        self.flags
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    fn phase_at(&self, theta: &[f64], t: f64) -> Vec<f64> {
        theta.iter().zip(&self.freqs).map(|(th, w)| th + w * t).collect()
    }

    fn eval_raw(&self, theta: &[f64], t: f64, x: f64, u: f64, p: f64) -> f64 {
        let ph = self.phase_at(theta, t);
        self.terms.iter().map(|term| term.coeff.eval(&ph) * term.basis.value(x, u, p)).sum()
    }

    /// Constant coefficients `(c_u, c_p)` of the autonomous terms `c_u·u` and
    /// `c_p·p`. The solver integrates these exactly with `u_xx`.
    pub fn linear_part(&self) -> (f64, f64) {
        let mut cu = 0.0;
        let mut cp = 0.0;
        for term in &self.terms {
            if !term.coeff.is_constant() {
                continue;
            }
            match term.basis {
                Basis::U => cu += term.coeff.constant_value(),
                Basis::P => cp += term.coeff.constant_value(),
                _ => {}
            }
        }
        (cu, cp)
    }

    pub(crate) fn is_linear_part(term: &Term) -> bool {
        term.coeff.is_constant() && matches!(term.basis, Basis::U | Basis::P)
    }

    /// Coefficient values frozen at torus phase `θ + ωt`.
    pub(crate) fn slice(&self, theta: &[f64], t: f64, skip_linear: bool) -> ForcingSlice<'_> {
        let ph = self.phase_at(theta, t);
        let coeffs = self
            .terms
            .iter()
            .map(|term| if skip_linear && Self::is_linear_part(term) { 0.0 } else { term.coeff.eval(&ph) })
            .collect();
        ForcingSlice { spec: self, coeffs }
    }
}

/// `f` with all time dependence evaluated; cheap to apply at every node.
pub(crate) struct ForcingSlice<'a> {
    spec: &'a ForcingSpec,
    coeffs: Vec<f64>,
}

impl ForcingSlice<'_> {
    pub(crate) fn value(&self, x: f64, u: f64, p: f64) -> f64 {
        self.spec
            .terms
            .iter()
            .zip(&self.coeffs)
            .filter(|(_, &c)| c != 0.0)
            .map(|(term, c)| c * term.basis.value(x, u, p))
            .sum()
    }

    pub(crate) fn partials(&self, x: f64, u: f64, p: f64) -> (f64, f64) {
        let mut fu = 0.0;
        let mut fp = 0.0;
        for (term, &c) in self.spec.terms.iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            let (bu, bp) = term.basis.partials(x, u, p);
            fu += c * bu;
            fp += c * bp;
        }
        (fu, fp)
    }
}

/// A point `g` of the hull, parameterised by its torus phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HullPoint {
    #[serde(skip)]
    spec: Arc<ForcingSpec>,
    theta: Vec<f64>,
}

impl HullPoint {
    /// Phase is reduced to `[0, 2π)^k`; missing components default to zero.
    pub fn new(spec: Arc<ForcingSpec>, theta: &[f64]) -> Self {
        let k = spec.dim();
        let theta = (0..k).map(|i| reduce(theta.get(i).copied().unwrap_or(0.0))).collect();
        Self { spec, theta }
    }

    pub fn origin(spec: Arc<ForcingSpec>) -> Self {
        Self::new(spec, &[])
    }

    pub fn spec(&self) -> &Arc<ForcingSpec> {
        &self.spec
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn same_spec(&self, other: &HullPoint) -> bool {
        Arc::ptr_eq(&self.spec, &other.spec) || *self.spec == *other.spec
    }

    /// `g·τ`: phase advanced by `ωτ`.
    pub fn translate(&self, tau: f64) -> HullPoint {
        let theta = self.theta.iter().zip(self.spec.freqs()).map(|(th, w)| reduce(th + w * tau)).collect();
        HullPoint { spec: self.spec.clone(), theta }
    }

    pub fn eval(&self, t: f64, x: f64, u: f64, p: f64) -> Result<f64, ForcingError> {
        if ![t, x, u, p].iter().all(|v| v.is_finite()) {
            return Err(ForcingError::NonFinite);
        }
        Ok(self.spec.eval_raw(&self.theta, t, x, u, p))
    }

    /// `(g_u, g_p)` at the given arguments.
    pub fn partials(&self, t: f64, x: f64, u: f64, p: f64) -> Result<(f64, f64), ForcingError> {
        if ![t, x, u, p].iter().all(|v| v.is_finite()) {
            return Err(ForcingError::NonFinite);
        }
        Ok(self.spec.slice(&self.theta, t, false).partials(x, u, p))
    }

    pub(crate) fn slice(&self, t: f64, skip_linear: bool) -> ForcingSlice<'_> {
        self.spec.slice(&self.theta, t, skip_linear)
    }
}

fn reduce(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn eval_forcing(g: &HullPoint, t: f64, x: f64, u: f64, p: f64) -> Result<f64, ForcingError> {
    g.eval(t, x, u, p)
}

pub fn eval_forcing_partials(g: &HullPoint, t: f64, x: f64, u: f64, p: f64) -> Result<(f64, f64), ForcingError> {
    g.partials(t, x, u, p)
}

pub fn translate(g: &HullPoint, tau: f64) -> HullPoint {
    g.translate(tau)
}

/// Flat torus distance with per-coordinate wraparound.
pub fn hull_distance(g1: &HullPoint, g2: &HullPoint) -> Result<f64, ForcingError> {
    if !g1.same_spec(g2) {
        return Err(ForcingError::MismatchedSpecs);
    }
    Ok(g1
        .theta
        .iter()
        .zip(&g2.theta)
        .map(|(a, b)| angle_diff(*a, *b).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub enum HullSampling {
    /// `θ0 + ω t_i` for `count` equispaced `t_i` in `[0, span)`.
    Trajectory { start: Vec<f64>, span: f64 },
    /// Uniform lattice with `ceil(count^{1/k})` points per axis, truncated to `count`.
    Lattice,
}

pub fn sample_hull(spec: &Arc<ForcingSpec>, count: usize, mode: &HullSampling) -> Result<Vec<HullPoint>, ForcingError> {
    if count == 0 {
        return Err(ForcingError::EmptySample);
    }
    let k = spec.dim();
    if k == 0 {
        return Ok(vec![HullPoint::origin(spec.clone())]);
    }
    match mode {
        HullSampling::Trajectory { start, span } => {
            let g0 = HullPoint::new(spec.clone(), start);
            Ok((0..count).map(|i| g0.translate(span * i as f64 / count as f64)).collect())
        }
        HullSampling::Lattice => {
            let mut side = (count as f64).powf(1.0 / k as f64).round() as usize;
            while side.pow(k as u32) < count {
                side += 1;
            }
            let mut out = Vec::with_capacity(count);
            let mut idx = vec![0usize; k];
            while out.len() < count {
                let theta: Vec<f64> = idx.iter().map(|&i| TAU * i as f64 / side as f64).collect();
                out.push(HullPoint::new(spec.clone(), &theta));
                for d in (0..k).rev() {
                    idx[d] += 1;
                    if idx[d] < side {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            Ok(out)
        }
    }
}

/// Ready-made specs used by the bundled scenarios and tests.
pub mod presets {
    use super::*;

    fn flags(x_independent: bool, p_even: bool, autonomous: bool) -> SymmetryFlags {
        SymmetryFlags { x_independent, p_even, autonomous }
    }

    /// Default quasi-periodic frequencies `(1, √2)`.
    pub fn default_freqs() -> Vec<f64> {
        vec![1.0, std::f64::consts::SQRT_2]
    }

    /// `f(u, p) = u - p`.
    pub fn rotating_wave() -> Arc<ForcingSpec> {
        ForcingSpec::new(
            Vec::new(),
            vec![Term::new(TrigPoly::constant(1.0), Basis::U), Term::new(TrigPoly::constant(-1.0), Basis::P)],
            flags(true, false, true),
        )
        .unwrap()
    }

    /// `f = c·u`.
    pub fn linear(c: f64) -> Arc<ForcingSpec> {
        ForcingSpec::new(Vec::new(), vec![Term::new(TrigPoly::constant(c), Basis::U)], flags(true, true, true)).unwrap()
    }

    /// `f = λu - u³`.
    pub fn cubic(lambda: f64) -> Arc<ForcingSpec> {
        ForcingSpec::new(
            Vec::new(),
            vec![Term::new(TrigPoly::constant(lambda), Basis::U), Term::new(TrigPoly::constant(-1.0), Basis::U3)],
            flags(true, true, true),
        )
        .unwrap()
    }

    /// `f = -u + sin t`.
    pub fn periodic_forced() -> Arc<ForcingSpec> {
        ForcingSpec::new(
            vec![1.0],
            vec![Term::new(TrigPoly::constant(-1.0), Basis::U), Term::new(TrigPoly::sin_mode(vec![1], 1.0), Basis::One)],
            flags(true, true, false),
        )
        .unwrap()
    }

    /// `f = -u + sin t + sin √2 t`.
    pub fn hyperbolic_qp() -> Arc<ForcingSpec> {
        ForcingSpec::new(
            default_freqs(),
            vec![
                Term::new(TrigPoly::constant(-1.0), Basis::U),
                Term::new(TrigPoly::sin_mode(vec![1, 0], 1.0).plus(TrigPoly::sin_mode(vec![0, 1], 1.0)), Basis::One),
            ],
            flags(true, true, false),
        )
        .unwrap()
    }

    /// `f = u - u³ + 0.3 sin t + 0.3 sin √2 t`.
    pub fn symmetric_qp() -> Arc<ForcingSpec> {
        ForcingSpec::new(
            default_freqs(),
            vec![
                Term::new(TrigPoly::constant(1.0), Basis::U),
                Term::new(TrigPoly::constant(-1.0), Basis::U3),
                Term::new(TrigPoly::sin_mode(vec![1, 0], 0.3).plus(TrigPoly::sin_mode(vec![0, 1], 0.3)), Basis::One),
            ],
            flags(true, true, false),
        )
        .unwrap()
    }

    /// Homogeneous linear `f = b₀ cos t · u`.
    pub fn floquet_linear(b0: f64) -> Arc<ForcingSpec> {
        ForcingSpec::new(
            vec![1.0],
            vec![Term::new(TrigPoly::cos_mode(vec![1], b0, 0.0), Basis::U)],
            flags(true, true, false),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn direct_evaluations() {
        let g = HullPoint::origin(rotating_wave());
        assert_abs_diff_eq!(g.eval(5.0, 0.3, 2.0, 0.5).unwrap(), 1.5, epsilon = 1e-15);

        let spec = ForcingSpec::new(
            default_freqs(),
            vec![
                Term::new(TrigPoly::constant(-1.0), Basis::U),
                Term::new(TrigPoly::sin_mode(vec![1, 0], 1.0), Basis::One),
                Term::new(TrigPoly::sin_mode(vec![0, 1], 1.0), Basis::One),
            ],
            SymmetryFlags { x_independent: true, p_even: true, autonomous: false },
        )
        .unwrap();
        let g = HullPoint::origin(spec);
        assert_abs_diff_eq!(g.eval(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0, epsilon = 1e-15);
        let t = 0.7;
        assert_abs_diff_eq!(g.eval(t, 0.0, 0.0, 0.0).unwrap(), t.sin() + (SQRT_2 * t).sin(), epsilon = 1e-14);

        let g = HullPoint::origin(cubic(1.0));
        assert_abs_diff_eq!(g.eval(0.0, 0.0, 2.0, 0.0).unwrap(), -6.0, epsilon = 1e-15);
        assert_eq!(g.eval(f64::NAN, 0.0, 2.0, 0.0), Err(ForcingError::NonFinite));
    }

    #[test]
    fn partial_derivatives() {
        let g = HullPoint::origin(rotating_wave());
        assert_eq!(g.partials(1.0, 2.0, 3.0, 4.0).unwrap(), (1.0, -1.0));
        let g = HullPoint::origin(cubic(1.0));
        assert_eq!(g.partials(0.0, 0.0, 1.0, 0.0).unwrap(), (-2.0, 0.0));
    }

    #[test]
    fn tabulated_partials_match_central_differences() {
        let values: Vec<f64> = (0..21).map(|i| ((i as f64) * 0.3).sin() * 2.0 - 0.1 * (i as f64)).collect();
        let tab_u = Table { variable: TableVariable::U, lo: -2.0, hi: 2.0, values: values.clone() };
        let tab_p = Table { variable: TableVariable::P, lo: -1.0, hi: 3.0, values };
        let spec = ForcingSpec::new(
            vec![1.0],
            vec![
                Term::new(TrigPoly::cos_mode(vec![1], 0.7, 0.2), Basis::Tabulated(tab_u)),
                Term::new(TrigPoly::constant(0.4), Basis::Tabulated(tab_p)),
                Term::new(TrigPoly::constant(0.5), Basis::UP),
            ],
            SymmetryFlags::default(),
        )
        .unwrap();
        let g = HullPoint::new(spec, &[0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..200 {
            let (t, x, u, p) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..TAU), rng.gen_range(-2.5..2.5), rng.gen_range(-1.5..3.5));
            let (fu, fp) = g.partials(t, x, u, p).unwrap();
            let fu_fd = (g.eval(t, x, u + h, p).unwrap() - g.eval(t, x, u - h, p).unwrap()) / (2.0 * h);
            let fp_fd = (g.eval(t, x, u, p + h).unwrap() - g.eval(t, x, u, p - h).unwrap()) / (2.0 * h);
            // the spline's second derivative jumps at knots
            let knot_near = |s: f64, lo: f64, step: f64| ((s - lo) / step - ((s - lo) / step).round()).abs() < 1e-4;
            if knot_near(u, -2.0, 0.2) || knot_near(p, -1.0, 0.2) {
                continue;
            }
            assert!((fu - fu_fd).abs() <= 1e-6 * (1.0 + fu.abs()), "fu {fu} vs {fu_fd}");
            assert!((fp - fp_fd).abs() <= 1e-6 * (1.0 + fp.abs()), "fp {fp} vs {fp_fd}");
        }
    }

    #[test]
    fn translation() {
        let spec = ForcingSpec::new(vec![1.0], vec![Term::new(TrigPoly::sin_mode(vec![1], 1.0), Basis::One)], SymmetryFlags::default()).unwrap();
        let g = HullPoint::origin(spec);
        assert_abs_diff_eq!(g.translate(PI).theta()[0], PI, epsilon = 1e-15);
        assert_eq!(g.translate(0.0), g);
        let auto = HullPoint::origin(rotating_wave());
        assert_eq!(auto.translate(12.5), auto);
    }

    #[test]
    fn distances() {
        let spec1 = ForcingSpec::new(vec![1.0], vec![], SymmetryFlags::default()).unwrap();
        let a = HullPoint::new(spec1.clone(), &[0.1]);
        let b = HullPoint::new(spec1.clone(), &[TAU - 0.1]);
        assert_eq!(hull_distance(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(hull_distance(&a, &b).unwrap(), 0.2, epsilon = 1e-14);
        let spec2 = ForcingSpec::new(default_freqs(), vec![], SymmetryFlags::default()).unwrap();
        let c = HullPoint::new(spec2.clone(), &[0.0, 0.0]);
        let d = HullPoint::new(spec2, &[PI, PI]);
        assert_abs_diff_eq!(hull_distance(&c, &d).unwrap(), PI * SQRT_2, epsilon = 1e-14);
        assert_eq!(hull_distance(&a, &c), Err(ForcingError::MismatchedSpecs));
    }

    #[test]
    fn hull_sampling() {
        let pts = sample_hull(&rotating_wave(), 5, &HullSampling::Lattice).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].theta().is_empty());

        let spec1 = ForcingSpec::new(vec![2.0], vec![], SymmetryFlags::default()).unwrap();
        let pts = sample_hull(&spec1, 4, &HullSampling::Trajectory { start: vec![0.0], span: TAU / 2.0 }).unwrap();
        let angles: Vec<f64> = pts.iter().map(|g| g.theta()[0]).collect();
        for (i, a) in angles.iter().enumerate() {
            assert_abs_diff_eq!(*a, i as f64 * PI / 2.0, epsilon = 1e-14);
        }

        let spec2 = ForcingSpec::new(default_freqs(), vec![], SymmetryFlags::default()).unwrap();
        let pts = sample_hull(&spec2, 9, &HullSampling::Lattice).unwrap();
        assert_eq!(pts.len(), 9);
        let mut firsts: Vec<f64> = pts.iter().map(|g| g.theta()[0]).collect();
        firsts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert_eq!(firsts.len(), 3);
        assert!(sample_hull(&spec2, 0, &HullSampling::Lattice).is_err());
    }

    #[test]
    fn flag_validation() {
        let x_term = vec![Term::new(TrigPoly::constant(0.2), Basis::SinX)];
        let err = ForcingSpec::new(vec![], x_term, SymmetryFlags { x_independent: true, ..Default::default() });
        assert_eq!(err.unwrap_err(), ForcingError::NotXIndependent { term: 0 });

        let odd = vec![Term::new(TrigPoly::constant(1.0), Basis::P)];
        assert!(matches!(
            ForcingSpec::new(vec![], odd, SymmetryFlags { p_even: true, ..Default::default() }),
            Err(ForcingError::NotEven { .. })
        ));
        assert_eq!(
            ForcingSpec::new(vec![1.0], vec![], SymmetryFlags { autonomous: true, ..Default::default() }).unwrap_err(),
            ForcingError::NotAutonomous(1)
        );
        let bad_mode = vec![Term::new(TrigPoly::cos_mode(vec![1, 0, 0], 1.0, 0.0), Basis::One)];
        assert!(matches!(ForcingSpec::new(default_freqs(), bad_mode, SymmetryFlags::default()), Err(ForcingError::ModeDimension { .. })));
    }

    #[test]
    fn linear_part_extraction() {
        assert_eq!(rotating_wave().linear_part(), (1.0, -1.0));
        assert_eq!(symmetric_qp().linear_part(), (1.0, 0.0));
        assert_eq!(floquet_linear(0.3).linear_part(), (0.0, 0.0));
    }
}
