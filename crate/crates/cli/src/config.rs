//! Scenario configuration (TOML). Unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use circleflow::forcing::{Basis, CoeffMode, ForcingSpec, HullPoint, SymmetryFlags, Table, TableVariable, Term, TrigPoly};
use circleflow::grid::{Grid, PeriodicProfile};
use circleflow::solver::{Scheme, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    NotFound(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    #[serde(default)]
    pub description: String,
    pub grid_n: usize,
    pub forcing: ForcingBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    pub initial: InitialBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingBlock {
    #[serde(default)]
    pub freqs: Vec<f64>,
    /// Initial hull phase; zeros when omitted.
    #[serde(default)]
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub x_independent: bool,
    #[serde(default)]
    pub p_even: bool,
    #[serde(default)]
    pub autonomous: bool,
    #[serde(default)]
    pub terms: Vec<TermBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    /// one, u, p, u3, sin_x, cos_x, sin_mx, cos_mx, up, p2, table
    pub basis: String,
    /// Wavenumber for sin_mx / cos_mx.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    /// Constant part of the coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff: Option<f64>,
    /// Quasi-periodic part: `Σ amplitude·cos(index·θ + phase)` (or `sin`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeBlock {
    pub index: Vec<i32>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
    /// Use `sin` instead of `cos`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableBlock {
    /// x, u or p
    pub variable: String,
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "yes")]
    pub dealias: bool,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_scheme() -> Scheme {
    Scheme::Etdrk2
}
fn yes() -> bool {
    true
}
fn default_blowup() -> f64 {
    1e6
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self { dt: default_dt(), scheme: default_scheme(), dealias: true, blowup_threshold: default_blowup() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// cosine, sine_k, constant, random_bandlimited
    pub preset: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<u32>,
    /// Number of initial states; members after the first are seeded
    /// random band-limited profiles.
    #[serde(default = "one_usize")]
    pub ensemble: usize,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub burn_in: f64,
    pub span: f64,
    #[serde(default = "default_stride")]
    pub save_stride: usize,
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    #[serde(default)]
    pub spectrum: SpectrumBlock,
    #[serde(default)]
    pub structure: StructureBlock,
    #[serde(default)]
    pub transforms: TransformsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_renorm")]
    pub renorm_every: usize,
    #[serde(default = "default_gap")]
    pub gap_tol: f64,
    /// Start of the averaging window; `run.burn_in` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Frame vector at which to measure exponential separation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_k: Option<usize>,
}

fn default_m() -> usize {
    8
}
fn default_renorm() -> usize {
    10
}
fn default_gap() -> f64 {
    0.1
}

impl Default for SpectrumBlock {
    fn default() -> Self {
        Self { enabled: true, m: default_m(), renorm_every: default_renorm(), gap_tol: default_gap(), burn_in: None, split_k: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiberMode {
    /// Bin saved states by hull recurrence.
    Recurrence,
    /// Evolve each ensemble member from `anchor·(-settle_time)` to the anchor.
    Pullback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureBlock {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Hull phases; the initial phase when empty.
    #[serde(default)]
    pub anchors: Vec<Vec<f64>>,
    #[serde(default = "default_anchor_tol")]
    pub anchor_tol: f64,
    #[serde(default = "default_cluster_tol")]
    pub cluster_tol: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_fiber_mode")]
    pub fiber_mode: FiberMode,
    #[serde(default = "default_settle")]
    pub settle_time: f64,
    #[serde(default = "default_shift_samples")]
    pub shift_samples: usize,
    /// Evolution window of the fiber order check.
    #[serde(default = "one")]
    pub order_window: f64,
    /// Cap on recurrence fiber members (evenly thinned).
    #[serde(default = "default_max_members")]
    pub max_members: usize,
}

fn default_max_members() -> usize {
    48
}

fn default_anchor_tol() -> f64 {
    1e-2
}
fn default_cluster_tol() -> f64 {
    1e-4
}
fn default_fiber_mode() -> FiberMode {
    FiberMode::Recurrence
}
fn default_settle() -> f64 {
    20.0
}
fn default_shift_samples() -> usize {
    256
}

impl Default for StructureBlock {
    fn default() -> Self {
        Self {
            enabled: true,
            anchors: Vec::new(),
            anchor_tol: default_anchor_tol(),
            cluster_tol: default_cluster_tol(),
            x0: 0.0,
            fiber_mode: default_fiber_mode(),
            settle_time: default_settle(),
            shift_samples: default_shift_samples(),
            order_window: 1.0,
            max_members: default_max_members(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformsBlock {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if !path.exists() {
            return Err(ConfigError::NotFound(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario_id.is_empty() || self.scenario_id.contains(['/', '\\']) || self.scenario_id.starts_with('.') {
            return Err(invalid("scenario_id", "must be a plain, non-empty name"));
        }
        Grid::new(self.grid_n).map_err(|e| invalid("grid_n", e.to_string()))?;
        self.forcing_spec()?;
        if self.forcing.theta0.len() > self.forcing.freqs.len() {
            return Err(invalid("forcing.theta0", "has more entries than forcing.freqs"));
        }
        self.solver_config().validate().map_err(|e| invalid("solver", e.to_string()))?;
        let known = ["cosine", "sine_k", "constant", "random_bandlimited"];
        if !known.contains(&self.initial.preset.as_str()) {
            return Err(invalid("initial.preset", format!("unknown preset {:?}; expected one of {known:?}", self.initial.preset)));
        }
        if !self.initial.amplitude.is_finite() {
            return Err(invalid("initial.amplitude", "must be finite"));
        }
        if self.initial.ensemble == 0 {
            return Err(invalid("initial.ensemble", "must be at least 1"));
        }
        if !(self.run.span > 0.0) {
            return Err(invalid("run.span", "must be positive"));
        }
        if !(self.run.burn_in >= 0.0) {
            return Err(invalid("run.burn_in", "must be non-negative"));
        }
        if self.run.save_stride == 0 {
            return Err(invalid("run.save_stride", "must be at least 1"));
        }
        let steps = (self.total_time() / self.solver.dt).round();
        if ((self.total_time() / self.solver.dt) - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(invalid("run.span", "burn_in + span must be a multiple of solver.dt"));
        }
        let s = &self.analysis.spectrum;
        if s.enabled {
            if s.m == 0 || s.m > self.grid_n {
                return Err(invalid("analysis.spectrum.m", format!("must be in 1..={}", self.grid_n)));
            }
            if s.renorm_every == 0 {
                return Err(invalid("analysis.spectrum.renorm_every", "must be at least 1"));
            }
            if !(s.gap_tol > 0.0) {
                return Err(invalid("analysis.spectrum.gap_tol", "must be positive"));
            }
            if let Some(b) = s.burn_in {
                if !(b >= 0.0 && b < self.total_time()) {
                    return Err(invalid("analysis.spectrum.burn_in", "must lie in [0, burn_in + span)"));
                }
            }
            if let Some(k) = s.split_k {
                if k == 0 || k >= s.m {
                    return Err(invalid("analysis.spectrum.split_k", format!("must be in 1..{}", s.m)));
                }
            }
        }
        let st = &self.analysis.structure;
        let dim = self.forcing.freqs.len();
        for (i, a) in st.anchors.iter().enumerate() {
            if a.len() != dim || a.iter().any(|v| !v.is_finite()) {
                return Err(invalid(&format!("analysis.structure.anchors[{i}]"), format!("needs {dim} finite phases")));
            }
        }
        if !(st.anchor_tol > 0.0) || !(st.cluster_tol > 0.0) {
            return Err(invalid("analysis.structure", "anchor_tol and cluster_tol must be positive"));
        }
        if st.shift_samples < 64 {
            return Err(invalid("analysis.structure.shift_samples", "must be at least 64"));
        }
        if st.max_members < 2 {
            return Err(invalid("analysis.structure.max_members", "must be at least 2"));
        }
        if !(st.settle_time > 0.0) || !(st.order_window > 0.0) {
            return Err(invalid("analysis.structure", "settle_time and order_window must be positive"));
        }
        let dt = self.solver.dt;
        for (name, v) in [("settle_time", st.settle_time), ("order_window", st.order_window)] {
            if ((v / dt) - (v / dt).round()).abs() > 1e-6 * (v / dt).max(1.0) {
                return Err(invalid(&format!("analysis.structure.{name}"), "must be a multiple of solver.dt"));
            }
        }
        if let Some([t0, t1]) = self.analysis.transforms.window {
            if !(t0 >= 0.0 && t1 > t0 && t1 <= self.total_time()) {
                return Err(invalid("analysis.transforms.window", "must satisfy 0 <= t0 < t1 <= burn_in + span"));
            }
        }
        Ok(())
    }

    pub fn total_time(&self) -> f64 {
        self.run.burn_in + self.run.span
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid_n).expect("validated")
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.solver.dt,
            scheme: self.solver.scheme,
            dealias: self.solver.dealias,
            blowup_threshold: self.solver.blowup_threshold,
            save_stride: self.run.save_stride,
        }
    }

    pub fn forcing_spec(&self) -> Result<Arc<ForcingSpec>, ConfigError> {
        let f = &self.forcing;
        let mut terms = Vec::with_capacity(f.terms.len());
        for (i, t) in f.terms.iter().enumerate() {
            let path = format!("forcing.terms[{i}]");
            let basis = parse_basis(t, &path)?;
            let mut coeff = t.coeff.map(TrigPoly::constant).unwrap_or_default();
            for m in &t.modes {
                let phase = if m.sine { m.phase - std::f64::consts::FRAC_PI_2 } else { m.phase };
                coeff = coeff.plus(TrigPoly { modes: vec![CoeffMode { index: m.index.clone(), amplitude: m.amplitude, phase }] });
            }
            if t.coeff.is_none() && t.modes.is_empty() {
                return Err(invalid(&path, "needs coeff and/or modes"));
            }
            terms.push(Term::new(coeff, basis));
        }
        let flags = SymmetryFlags { x_independent: f.x_independent, p_even: f.p_even, autonomous: f.autonomous };
        ForcingSpec::new(f.freqs.clone(), terms, flags).map_err(|e| invalid("forcing", e.to_string()))
    }

    pub fn hull_start(&self, spec: &Arc<ForcingSpec>) -> HullPoint {
        HullPoint::new(spec.clone(), &self.forcing.theta0)
    }

    pub fn anchors(&self, spec: &Arc<ForcingSpec>) -> Vec<HullPoint> {
        if self.analysis.structure.anchors.is_empty() {
            vec![self.hull_start(spec)]
        } else {
            self.analysis.structure.anchors.iter().map(|a| HullPoint::new(spec.clone(), a)).collect()
        }
    }

    fn base_seed(&self) -> u64 {
        self.initial.seed.unwrap_or(1)
    }

    /// Ensemble of initial states; member 0 follows the preset.
    pub fn initial_states(&self) -> Vec<PeriodicProfile> {
        let grid = self.grid();
        let amp = self.initial.amplitude;
        let modes = self.initial.modes.unwrap_or(3);
        let first = match self.initial.preset.as_str() {
            "cosine" => PeriodicProfile::from_fn(grid, |x| amp * x.cos()),
            "sine_k" => {
                let k = self.initial.k.unwrap_or(1) as f64;
                PeriodicProfile::from_fn(grid, |x| amp * (k * x).sin())
            }
            "constant" => PeriodicProfile::constant(grid, amp),
            _ => random_bandlimited(grid, self.base_seed(), modes, amp),
        };
        let mut out = vec![first];
        for i in 1..self.initial.ensemble {
            out.push(random_bandlimited(grid, self.base_seed().wrapping_add(i as u64), modes.max(3), amp));
        }
        out
    }
}

/// `Σ_{k=0}^{modes} (a_k cos kx + b_k sin kx)/(1+k)` with seeded uniform
/// coefficients in `[-amp, amp]`.
pub fn random_bandlimited(grid: Grid, seed: u64, modes: u32, amp: f64) -> PeriodicProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64)> = (0..=modes).map(|_| (rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp))).collect();
    PeriodicProfile::from_fn(grid, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let kx = k as f64 * x;
                let s = if k == 0 { 0.0 } else { b * kx.sin() };
                (a * kx.cos() + s) / (1 + k) as f64
            })
            .sum()
    })
}

fn parse_basis(t: &TermBlock, path: &str) -> Result<Basis, ConfigError> {
    let need_m = || t.m.ok_or_else(|| invalid(&format!("{path}.m"), "required for this basis"));
    Ok(match t.basis.as_str() {
        "one" => Basis::One,
        "u" => Basis::U,
        "p" => Basis::P,
        "u3" => Basis::U3,
        "sin_x" => Basis::SinX,
        "cos_x" => Basis::CosX,
        "sin_mx" => Basis::SinMX(need_m()?),
        "cos_mx" => Basis::CosMX(need_m()?),
        "up" => Basis::UP,
        "p2" => Basis::P2,
        "table" => {
            let tb = t.table.as_ref().ok_or_else(|| invalid(&format!("{path}.table"), "required for basis \"table\""))?;
            let variable = match tb.variable.as_str() {
                "x" => TableVariable::X,
                "u" => TableVariable::U,
                "p" => TableVariable::P,
                other => return Err(invalid(&format!("{path}.table.variable"), format!("unknown variable {other:?}"))),
            };
            Basis::Tabulated(Table { variable, lo: tb.lo, hi: tb.hi, values: tb.values.clone() })
        }
        other => return Err(invalid(&format!("{path}.basis"), format!("unknown basis {other:?}"))),
    })
}
