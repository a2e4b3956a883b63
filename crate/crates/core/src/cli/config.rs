//! Strict TOML experiment documents.
//!
//! A document is parsed into [`RawConfig`] (field-for-field, unknown keys
//! rejected) and then resolved into an [`Experiment`] with every `"auto"`
//! filled in. Errors carry the dotted path of the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use crate::bench::baseline::{diagonal_grid, BaselineOptions, ClassParams, SearchMethod};
use crate::bench::cost::{CostFn, Reference};
use crate::controller::{auto_h, auto_m, auto_memory, ControllerConfig, StepSize};
use crate::dac::DecayBase;
use crate::error::{Error, Result};
use crate::linsys::{DisturbanceSignal, SinusoidSpec, SystemDynamics, DEFAULT_SUBSTEPS};
use crate::oco::SampleGrid;
use crate::stability::lqr_gain;

/// Environment variable that replaces every seed in a document.
pub const SEED_OVERRIDE_VAR: &str = "NSC_SEED_OVERRIDE";

/// A value that may be left to the default schedule.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Auto<T> {
    #[default]
    Auto,
    Value(T),
}

impl<T: Copy> Auto<T> {
    pub fn or_else(self, f: impl FnOnce() -> T) -> T {
        match self {
            Auto::Auto => f(),
            Auto::Value(v) => v,
        }
    }
}

impl<T: Serialize> Serialize for Auto<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => v.serialize(s),
        }
    }
}

struct AutoVisitor<T>(std::marker::PhantomData<T>);

macro_rules! auto_numeric {
    ($t:ident, $what:literal) => {
        impl<'de> Visitor<'de> for AutoVisitor<$t> {
            type Value = Auto<$t>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, concat!("\"auto\" or ", $what))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == "auto" {
                    Ok(Auto::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                auto_numeric!(@int $t, v, self)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                self.visit_i64(i64::try_from(v).map_err(|_| E::custom("integer out of range"))?)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                auto_numeric!(@float $t, v, self)
            }
        }

        impl<'de> Deserialize<'de> for Auto<$t> {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                d.deserialize_any(AutoVisitor::<$t>(std::marker::PhantomData))
            }
        }
    };
    (@int f64, $v:ident, $s:ident) => { Ok(Auto::Value($v as f64)) };
    (@int usize, $v:ident, $s:ident) => {
        usize::try_from($v).map(Auto::Value).map_err(|_| E::invalid_value(de::Unexpected::Signed($v), &$s))
    };
    (@float f64, $v:ident, $s:ident) => { Ok(Auto::Value($v)) };
    (@float usize, $v:ident, $s:ident) => { Err(E::invalid_type(de::Unexpected::Float($v), &$s)) };
}

auto_numeric!(f64, "a number");
auto_numeric!(usize, "a non-negative integer");

/// `K = "lqr"` or an explicit `d_u x d_x` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Named(GainName),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainName {
    Lqr,
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::Named(GainName::Lqr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub system: RawSystem,
    pub disturbance: RawDisturbance,
    pub cost: RawCost,
    pub controller: RawController,
    #[serde(default)]
    pub baseline: RawBaseline,
    #[serde(default)]
    pub output: RawOutput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub kappa_a: Option<f64>,
    #[serde(default, rename = "kappa_B")]
    pub kappa_b: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKindName {
    Zero,
    Constant,
    Sinusoid,
    SumOfSinusoids,
    SmoothRamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: Option<f64>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDisturbance {
    pub kind: DisturbanceKindName,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(default)]
    pub seed: u64,
    /// `sinusoid` uses the first entry, `sum_of_sinusoids` all of them.
    #[serde(default)]
    pub components: Vec<RawSinusoid>,
    #[serde(default)]
    pub value: Option<Vec<f64>>,
    #[serde(default)]
    pub level: Option<Vec<f64>>,
    #[serde(default)]
    pub onset: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKindName {
    Quadratic,
    Tracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReference {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCost {
    pub kind: CostKindName,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub reference: Option<RawReference>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default, rename = "G")]
    pub g: Option<f64>,
    #[serde(default, rename = "L")]
    pub l: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DecayBaseName {
    #[default]
    #[serde(rename = "1-h*gamma")]
    OneMinusHGamma,
    #[serde(rename = "1-gamma")]
    OneMinusGamma,
}

impl From<DecayBaseName> for DecayBase {
    fn from(v: DecayBaseName) -> Self {
        match v {
            DecayBaseName::OneMinusHGamma => DecayBase::OneMinusHGamma,
            DecayBaseName::OneMinusGamma => DecayBase::OneMinusGamma,
        }
    }
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawController {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub h: Auto<f64>,
    #[serde(default, rename = "H")]
    pub memory: Auto<usize>,
    #[serde(default)]
    pub m: Auto<usize>,
    #[serde(default)]
    pub eta: Auto<f64>,
    #[serde(default)]
    pub eta0: Option<f64>,
    #[serde(default, rename = "K")]
    pub gain: GainSpec,
    pub kappa: f64,
    pub gamma: f64,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub decay_base: DecayBaseName,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub c_h: Option<f64>,
    #[serde(default)]
    pub c_m: Option<f64>,
    #[serde(default, rename = "c_H")]
    pub c_memory: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethodName {
    #[default]
    NelderMead,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

fn default_true() -> bool {
    true
}

fn default_multistarts() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBaseline {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub method: BaselineMethodName,
    #[serde(default = "default_multistarts")]
    pub multistarts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Diagonal gains with every entry on `lo..=hi` in `step`.
    #[serde(default)]
    pub grid: Option<RawGrid>,
    /// Comparator class; defaults to the controller's `(kappa, gamma)`.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Also report `J(K*)` with feedback applied at every substep.
    #[serde(default)]
    pub continuous_feedback: bool,
}

impl Default for RawBaseline {
    fn default() -> Self {
        Self {
            enabled: true,
            method: BaselineMethodName::default(),
            multistarts: default_multistarts(),
            seed: 0,
            grid: None,
            kappa: None,
            gamma: None,
            continuous_feedback: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub svg: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

/// Baseline settings after resolution.
#[derive(Clone, Debug)]
pub struct BaselineSettings {
    pub enabled: bool,
    pub class: ClassParams,
    pub options: BaselineOptions,
    pub continuous_feedback: bool,
}

/// A fully resolved experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub name: Option<String>,
    pub system: SystemDynamics,
    pub disturbance: DisturbanceSignal,
    pub cost: CostFn,
    pub controller: ControllerConfig,
    pub baseline: BaselineSettings,
    pub output: RawOutput,
    pub raw: RawConfig,
}

fn config_err(path: &str, message: impl fmt::Display) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// Reads and checks the document structure without resolving it.
pub fn parse_str(text: &str) -> Result<RawConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| config_err("<document>", e.message()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(&path, e.into_inner().message())
    })
}

pub fn parse_file(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
    parse_str(&text)
}

/// Parses and resolves, honouring the seed override from the environment.
pub fn load(path: &Path) -> Result<Experiment> {
    let mut raw = parse_file(path)?;
    apply_seed_override(&mut raw, std::env::var(SEED_OVERRIDE_VAR).ok().as_deref())?;
    raw.resolve()
}

pub fn apply_seed_override(raw: &mut RawConfig, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        let seed: u64 = v
            .trim()
            .parse()
            .map_err(|_| config_err(SEED_OVERRIDE_VAR, format!("expected an unsigned integer, got `{v}`")))?;
        raw.disturbance.seed = seed;
        raw.baseline.seed = seed;
    }
    Ok(())
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 {
        return Err(config_err(path, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(config_err(&format!("{path}[{i}]"), format!("row has {} entries, expected {c}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(path: &str, v: &[f64], dim: usize) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(config_err(path, format!("expected {dim} entries, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => config_err(path, other),
    }
}

impl RawConfig {
    pub fn resolve(&self) -> Result<Experiment> {
        let system = self.system.resolve()?;
        let nx = system.state_dim();
        let disturbance = self.disturbance.resolve(nx)?;
        let cost = self.cost.resolve(nx, system.input_dim())?;
        let controller = self.controller.resolve(&system, &cost)?;
        let baseline = self.baseline.resolve(&controller, nx)?;
        Ok(Experiment {
            name: self.name.clone(),
            system,
            disturbance,
            cost,
            controller,
            baseline,
            output: self.output.clone(),
            raw: self.clone(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl RawSystem {
    fn resolve(&self) -> Result<SystemDynamics> {
        let a = matrix("system.A", &self.a)?;
        let b = matrix("system.B", &self.b)?;
        let nx = a.nrows();
        let bounds = (
            self.kappa_a.unwrap_or_else(|| crate::linalg::spectral_norm(&a)),
            self.kappa_b.unwrap_or_else(|| crate::linalg::spectral_norm(&b)),
        );
        if b.nrows() != nx {
            return Err(config_err("system.B", format!("needs {nx} rows to match A")));
        }
        SystemDynamics::with_bounds(a, b, bounds.0, bounds.1).map_err(at("system"))
    }
}

impl RawDisturbance {
    fn resolve(&self, nx: usize) -> Result<DisturbanceSignal> {
        let specs = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let direction = c
                    .direction
                    .as_ref()
                    .map(|d| vector(&format!("disturbance.components[{i}].direction"), d, nx))
                    .transpose()?;
                Ok(SinusoidSpec {
                    amplitude: c.amplitude,
                    frequency: c.frequency,
                    phase: c.phase,
                    direction,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let required = |name: &str, v: Option<f64>| v.ok_or_else(|| config_err(&format!("disturbance.{name}"), "required for this kind"));
        let sig = match self.kind {
            DisturbanceKindName::Zero => Ok(DisturbanceSignal::zero(nx)),
            DisturbanceKindName::Constant => {
                let v = self.value.as_ref().ok_or_else(|| config_err("disturbance.value", "required for kind = constant"))?;
                DisturbanceSignal::constant(vector("disturbance.value", v, nx)?, self.w)
            }
            DisturbanceKindName::Sinusoid => {
                let spec = specs
                    .first()
                    .cloned()
                    .ok_or_else(|| config_err("disturbance.components", "kind = sinusoid needs one component"))?;
                DisturbanceSignal::sinusoid(nx, spec, self.w, self.seed)
            }
            DisturbanceKindName::SumOfSinusoids => {
                if specs.is_empty() {
                    return Err(config_err("disturbance.components", "needs at least one component"));
                }
                DisturbanceSignal::sum_of_sinusoids(nx, &specs, self.w, self.seed)
            }
            DisturbanceKindName::SmoothRamp => {
                let level = self.level.as_ref().ok_or_else(|| config_err("disturbance.level", "required for kind = smooth_ramp"))?;
                DisturbanceSignal::smooth_ramp(
                    vector("disturbance.level", level, nx)?,
                    required("onset", self.onset)?,
                    required("width", self.width)?,
                    self.w,
                )
            }
        };
        sig.map_err(at("disturbance"))
    }
}

impl RawCost {
    fn resolve(&self, nx: usize, nu: usize) -> Result<CostFn> {
        let q = matrix("cost.Q", &self.q)?;
        let r = matrix("cost.R", &self.r)?;
        if q.shape() != (nx, nx) {
            return Err(config_err("cost.Q", format!("must be {nx}x{nx}")));
        }
        if r.shape() != (nu, nu) {
            return Err(config_err("cost.R", format!("must be {nu}x{nu}")));
        }
        let cost = match (self.kind, &self.reference) {
            (CostKindName::Quadratic, None) => CostFn::quadratic_with_offset(q, r, self.offset),
            (CostKindName::Quadratic, Some(_)) => return Err(config_err("cost.reference", "only valid for kind = tracking")),
            (CostKindName::Tracking, None) => return Err(config_err("cost.reference", "required for kind = tracking")),
            (CostKindName::Tracking, Some(rf)) => {
                if self.offset != 0.0 {
                    return Err(config_err("cost.offset", "not supported for kind = tracking"));
                }
                let reference = Reference {
                    amplitude: rf.amplitude,
                    frequency: rf.frequency,
                    phase: rf.phase,
                    direction: vector("cost.reference.direction", &rf.direction, nx)?,
                };
                CostFn::tracking(q, r, reference)
            }
        }
        .map_err(at("cost"))?;
        Ok(cost.with_constants(self.beta, self.g, self.l))
    }
}

impl RawController {
    fn resolve(&self, sys: &SystemDynamics, cost: &CostFn) -> Result<ControllerConfig> {
        let horizon = self.horizon;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(config_err("controller.T", "must be positive and finite"));
        }
        if !(self.gamma > 0.0) {
            return Err(config_err("controller.gamma", "must be positive"));
        }
        if !(self.kappa >= 1.0) {
            return Err(config_err("controller.kappa", "must be at least 1"));
        }
        let h = self.h.or_else(|| auto_h(horizon, self.c_h.unwrap_or(1.0)));
        if !(h > 0.0) {
            return Err(config_err("controller.h", "must be positive"));
        }
        let m = self.m.or_else(|| auto_m(h, self.c_m.unwrap_or(1.0)));
        let memory = self.memory.or_else(|| auto_memory(horizon, self.gamma, self.c_memory));
        let eta = match self.eta {
            Auto::Auto => StepSize::Auto { eta0: self.eta0 },
            Auto::Value(e) => {
                if self.eta0.is_some() {
                    return Err(config_err("controller.eta0", "only valid with eta = \"auto\""));
                }
                StepSize::Fixed(e)
            }
        };
        let gain = match &self.gain {
            GainSpec::Named(GainName::Lqr) => {
                let n = sys.input_dim();
                let r = cost.input_weight() + DMatrix::identity(n, n) * 1e-9;
                lqr_gain(sys, cost.state_weight(), &r).map_err(at("controller.K"))?
            }
            GainSpec::Matrix(rows) => {
                let k = matrix("controller.K", rows)?;
                if k.shape() != (sys.input_dim(), sys.state_dim()) {
                    return Err(config_err("controller.K", format!("must be {}x{}", sys.input_dim(), sys.state_dim())));
                }
                k
            }
        };
        let cfg = ControllerConfig {
            horizon,
            h,
            memory,
            m,
            eta,
            gain,
            kappa: self.kappa,
            gamma: self.gamma,
            radius_a: self.a,
            decay_base: self.decay_base.into(),
            substeps: self.substeps,
        };
        match cfg.validate() {
            Ok(_) => Ok(cfg),
            Err(e @ Error::InfeasibleSchedule { .. }) => Err(e),
            Err(e) => Err(config_err("controller", e)),
        }
    }
}

impl RawBaseline {
    fn resolve(&self, ctl: &ControllerConfig, nx: usize) -> Result<BaselineSettings> {
        let class = ClassParams {
            kappa: self.kappa.unwrap_or(ctl.kappa),
            gamma: self.gamma.unwrap_or(ctl.gamma),
        };
        let method = match (self.method, &self.grid) {
            (BaselineMethodName::NelderMead, _) => {
                if self.multistarts == 0 {
                    return Err(config_err("baseline.multistarts", "must be at least 1"));
                }
                SearchMethod::NelderMead {
                    multistarts: self.multistarts,
                }
            }
            (BaselineMethodName::Grid, None) => return Err(config_err("baseline.grid", "required for method = grid")),
            (BaselineMethodName::Grid, Some(g)) => {
                if !(g.step > 0.0) || !(g.hi >= g.lo) {
                    return Err(config_err("baseline.grid", "needs step > 0 and hi >= lo"));
                }
                let count = ((g.hi - g.lo) / g.step + 1e-9).floor() as usize + 1;
                let nu = ctl.gain.nrows();
                let dims = nu.min(nx);
                if count.checked_pow(dims as u32).is_none_or(|c| c > 4_000_000) {
                    return Err(config_err("baseline.grid", "grid is too large"));
                }
                let values: Vec<f64> = (0..count).map(|i| g.lo + i as f64 * g.step).collect();
                let cands = diagonal_grid(dims, &values).into_iter().map(|d| embed(&d, nu, nx)).collect();
                SearchMethod::Grid(cands)
            }
        };
        Ok(BaselineSettings {
            enabled: self.enabled,
            class,
            options: BaselineOptions {
                method,
                seed: self.seed,
                extra_starts: vec![ctl.gain.clone()],
                ..Default::default()
            },
            continuous_feedback: self.continuous_feedback,
        })
    }
}

/// Places a square diagonal gain in the top-left of a `rows x cols` matrix.
fn embed(d: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    out.view_mut((0, 0), d.shape()).copy_from(d);
    out
}

impl Experiment {
    pub fn grid(&self) -> Result<SampleGrid> {
        self.controller.grid()
    }

    pub fn load_str(text: &str) -> Result<Self> {
        parse_str(text)?.resolve()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"
[system]
A = [[1.0]]
B = [[1.0]]

[disturbance]
kind = "sinusoid"
W = 0.5
components = [{ amplitude = 1.0, frequency = 1.0, phase = 0.0 }]

[cost]
kind = "quadratic"
Q = [[1.0]]
R = [[1.0]]

[controller]
T = 20.0
K = [[2.0]]
kappa = 2.0
gamma = 0.5
"#;

    #[test]
    fn auto_fields_follow_the_default_schedule() {
        let e = Experiment::load_str(DOC).unwrap();
        let c = &e.controller;
        assert!((c.h - 1.0 / 20f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.m, 5);
        assert_eq!(c.memory, 6);
        assert_eq!(c.eta, StepSize::Auto { eta0: None });
        assert!(e.baseline.enabled);
    }

    #[test]
    fn misspelled_key_reports_its_path() {
        let bad = DOC.replace("gamma = 0.5", "gama = 0.5");
        match Experiment::load_str(&bad) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "controller.gama");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad = DOC.replace("amplitude = 1.0,", "amplitud = 1.0,");
        match Experiment::load_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "disturbance.components[0].amplitud"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auto_rejects_other_strings() {
        let bad = DOC.replace("T = 20.0", "T = 20.0\nh = \"fast\"");
        match Experiment::load_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "controller.h"),
            other => panic!("{other:?}"),
        }
        let ok = DOC.replace("T = 20.0", "T = 20.0\nh = 0.1\nm = 4\nH = 3");
        let e = Experiment::load_str(&ok).unwrap();
        assert_eq!((e.controller.h, e.controller.m, e.controller.memory), (0.1, 4, 3));
    }

    #[test]
    fn infeasible_schedule_keeps_its_exit_code() {
        let bad = DOC.replace("T = 20.0", "T = 20.0\nH = 500");
        let err = Experiment::load_str(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert_eq!(Experiment::load_str("[system]\nA = 1").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn lqr_gain_and_seed_override() {
        let doc = DOC.replace("K = [[2.0]]\n", "");
        let mut raw = parse_str(&doc).unwrap();
        apply_seed_override(&mut raw, Some("42")).unwrap();
        assert_eq!(raw.disturbance.seed, 42);
        let e = raw.resolve().unwrap();
        assert!((e.controller.gain[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-6);
        assert!(apply_seed_override(&mut raw, Some("x")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let raw = parse_str(DOC).unwrap();
        assert_eq!(parse_str(&raw.to_toml()).unwrap(), raw);
    }
}
