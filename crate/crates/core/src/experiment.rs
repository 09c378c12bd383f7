//! Declarative experiment descriptions, their execution, and the CSV/JSON
//! artifacts they leave behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::diffusion::{
    extrapolated_net_flux, flux_lr_finite_dt, gaussian_moment_identities, net_flux_closed_form, simulate_absorbing,
    CrossingDetection, DensityField, DiffusionModel, InitialSampler, SimulationSpec,
};
use crate::error::{Error, Result};
use crate::quadrature::logspace;
use crate::quantum::{
    feynman_limit_current, is_admissible, mass_beyond, propagate, schrodinger_current, unidirectional_current_lr,
    GridSpec, InitialData, InitialState, MassOptions, Superposition,
};
use crate::scalar::Cplx;
use crate::scaling::{
    evaluate_sweep, fit_exponent, sweep_grid, zeno_survival, SurvivalLaw, SweepPoint, SweepResult, WindowPolicy,
};
use crate::wavefunction::{BoxEigenstate, GridWavefunction, NaturalUnits, PiecewiseWavefunction, Support};

pub const TOOL_NAME: &str = "unicurrent";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Propagate,
    SweepDt,
    MassBeyond,
    Current,
    DiffusionFlux,
    SimulateAbsorbing,
    Zeno,
    Moments,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Propagate => "propagate",
            ExperimentKind::SweepDt => "sweep-dt",
            ExperimentKind::MassBeyond => "mass-beyond",
            ExperimentKind::Current => "current",
            ExperimentKind::DiffusionFlux => "diffusion-flux",
            ExperimentKind::SimulateAbsorbing => "simulate-absorbing",
            ExperimentKind::Zeno => "zeno",
            ExperimentKind::Moments => "moments",
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsConfig {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportKindConfig {
    Finite,
    SemiInfinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenstateConfig {
    pub n: u32,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperpositionConfig {
    pub a: f64,
    /// `[re, im, n]` per term.
    pub terms: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub center: f64,
    pub width: f64,
    pub k: f64,
}

/// Exactly one of `coefficients`, `eigenstate`, `superposition`, `packet`
/// must be present. Gaussian packets are only accepted by `current`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefunctionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SupportKindConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenstate: Option<EigenstateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superposition: Option<SuperpositionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    DeltaT,
    Alpha,
}

fn per_decade() -> usize {
    8
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default = "yes")]
    pub drop_inadmissible: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            min: None,
            max: None,
            drop_inadmissible: true,
        }
    }
}

/// Quantum sweeps record `P_c(Δt)` for `c = distance`; diffusion sweeps
/// record `J_LR(x₁, t, Δt)` at the first of `diffusion.points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub min: f64,
    pub max: f64,
    #[serde(default = "per_decade")]
    pub points_per_decade: usize,
    #[serde(default)]
    pub distance: f64,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentConfig {
    /// Finite steps for `J_LR(0; Δt)`, or the extrapolation sequence for a
    /// packet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_ts: Option<Vec<f64>>,
    /// Evaluation points for a packet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Brownian { sigma: f64 },
    Ou { theta: f64, sigma: f64 },
    CustomPolynomialDrift { coefficients: Vec<f64>, sigma: f64 },
}

/// `ou-gaussian` takes `θ, σ` from an `ou` model, `image` takes `σ` from a
/// `brownian` model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityConfig {
    Gaussian { mean: f64, variance: f64 },
    OuGaussian { m0: f64, v0: f64 },
    Image { x0: f64, boundary: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerConfig {
    Point { x: f64 },
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingConfig {
    Naive,
    #[default]
    BrownianBridge,
}

fn half_window() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<f64>,
    pub t_max: f64,
    pub dt_step: f64,
    pub n_paths: usize,
    pub initial: SamplerConfig,
    #[serde(default)]
    pub crossing: CrossingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_times: Option<Vec<f64>>,
    #[serde(default = "half_window")]
    pub rate_half_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_ts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZenoConfig {
    pub law: SurvivalLaw,
    pub prefactor: f64,
    pub total_time: f64,
    pub n: Vec<u64>,
}

fn unit_sigma() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(default = "unit_sigma")]
    pub sigmas: Vec<f64>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self { sigmas: unit_sigma() }
    }
}

/// Quadrature cannot resolve relative errors much below a few ulps.
pub const MIN_REL_TOL: f64 = 1e-13;

fn rel_tol() -> f64 {
    1e-8
}

fn tail_rel() -> f64 {
    5e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "tail_rel")]
    pub tail_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: rel_tol(),
            tail_rel: tail_rel(),
        }
    }
}

/// Where artifacts go. Not part of the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
    #[serde(default = "yes")]
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            stem: None,
            plot: true,
        }
    }
}

/// One experiment, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub units: UnitsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavefunction: Option<WavefunctionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<CurrentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeno: Option<ZenoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

fn invalid_config(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn as_validation(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Validation(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// JSON with sorted keys and shortest round-trip decimals, without the
    /// `output` block.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output");
        }
        // serde_json's default map is ordered by key
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn natural_units(&self) -> Result<NaturalUnits<f64>> {
        NaturalUnits::new(self.units.hbar, self.units.mass).map_err(as_validation)
    }

    pub fn mass_options(&self) -> MassOptions<f64> {
        MassOptions::default()
            .with_rel_tol(self.tolerances.rel_tol)
            .with_tail_rel(self.tolerances.tail_rel)
    }

    /// Builds the quantum initial state. Packets are not handled here.
    pub fn initial_state(&self) -> Result<InitialData<f64>> {
        let wf = self
            .wavefunction
            .as_ref()
            .ok_or_else(|| invalid_config("experiment needs a wavefunction"))?;
        let given = [
            wf.coefficients.is_some(),
            wf.eigenstate.is_some(),
            wf.superposition.is_some(),
            wf.packet.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if given != 1 {
            return Err(invalid_config(
                "wavefunction needs exactly one of coefficients, eigenstate, superposition, packet",
            ));
        }
        if let Some(c) = &wf.coefficients {
            if c.is_empty() {
                return Err(invalid_config("wavefunction coefficients are empty"));
            }
            let support = match wf.kind.unwrap_or(SupportKindConfig::Finite) {
                SupportKindConfig::Finite => Support::FiniteReflecting {
                    a: wf.support.ok_or_else(|| invalid_config("finite support needs \"support\": a"))?,
                },
                SupportKindConfig::SemiInfinite => Support::SemiInfinite,
            };
            let q: Vec<Cplx<f64>> = c.iter().map(|[re, im]| Cplx::new(*re, *im)).collect();
            let w = PiecewiseWavefunction::new(q, support).map_err(as_validation)?;
            if w.is_zero() {
                return Err(invalid_config("wavefunction is identically zero"));
            }
            return Ok(InitialData::Polynomial(w));
        }
        if let Some(e) = wf.eigenstate {
            return BoxEigenstate::new(e.n, e.a)
                .map(InitialData::Eigenstate)
                .map_err(as_validation);
        }
        if let Some(s) = &wf.superposition {
            let mut terms = Vec::with_capacity(s.terms.len());
            for [re, im, n] in &s.terms {
                if !(n.fract() == 0.0 && *n >= 1.0 && *n <= u32::MAX as f64) {
                    return Err(invalid_config("superposition quantum numbers must be positive integers"));
                }
                terms.push((Cplx::new(*re, *im), *n as u32));
            }
            return Superposition::new(s.a, &terms)
                .map(InitialData::Superposition)
                .map_err(as_validation);
        }
        Err(invalid_config("a Gaussian packet is only accepted by the current experiment"))
    }

    fn packet(&self) -> Option<PacketConfig> {
        self.wavefunction.as_ref().and_then(|w| w.packet)
    }

    fn positive_delta_t(&self) -> Result<f64> {
        match self.delta_t {
            Some(dt) if dt > 0.0 && dt.is_finite() => Ok(dt),
            Some(_) => Err(invalid_config("delta_t must be positive")),
            None => Err(invalid_config(format!("{} needs delta_t", self.kind.name()))),
        }
    }

    fn diffusion(&self) -> Result<&DiffusionConfig> {
        self.diffusion
            .as_ref()
            .ok_or_else(|| invalid_config(format!("{} needs a diffusion block", self.kind.name())))
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        self.natural_units()?;
        let t = &self.tolerances;
        if !(t.rel_tol > 0.0 && t.rel_tol < 1.0 && t.tail_rel > 0.0 && t.tail_rel < 1.0) {
            return Err(invalid_config("tolerances must lie in (0, 1)"));
        }
        if t.rel_tol < MIN_REL_TOL {
            return Err(invalid_config(format!("rel_tol below {MIN_REL_TOL:e} is not attainable in f64")));
        }
        match self.kind {
            ExperimentKind::Propagate | ExperimentKind::MassBeyond => {
                self.initial_state()?;
                self.positive_delta_t()?;
                if let Some(d) = &self.distances {
                    if d.is_empty() || d.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                        return Err(invalid_config("distances must be non-negative"));
                    }
                }
            }
            ExperimentKind::SweepDt => {
                let s = self
                    .sweep
                    .ok_or_else(|| invalid_config("sweep-dt needs a sweep block"))?;
                if !(s.min > 0.0 && s.max > s.min && s.max.is_finite()) {
                    return Err(invalid_config("sweep range must satisfy 0 < min < max"));
                }
                if s.points_per_decade == 0 {
                    return Err(invalid_config("points_per_decade must be positive"));
                }
                if !(s.distance >= 0.0 && s.distance.is_finite()) {
                    return Err(invalid_config("sweep distance must be non-negative"));
                }
                if self.wavefunction.is_some() {
                    self.initial_state()?;
                } else {
                    let d = self.diffusion()?;
                    self.diffusion_objects(d)?;
                    if d.points.as_ref().is_none_or(|p| p.is_empty()) {
                        return Err(invalid_config("a diffusion sweep needs diffusion.points"));
                    }
                    if s.max >= d.t {
                        return Err(invalid_config("delta_t must stay below diffusion.t"));
                    }
                }
            }
            ExperimentKind::Current => {
                if let Some(p) = self.packet() {
                    if !(p.width > 0.0 && p.center.is_finite() && p.k.is_finite()) {
                        return Err(invalid_config("packet width must be positive"));
                    }
                    self.packet_delta_ts()?;
                } else {
                    self.initial_state()?;
                    self.current_delta_ts()?;
                }
            }
            ExperimentKind::DiffusionFlux => {
                let d = self.diffusion()?;
                let (_, density) = self.diffusion_objects(d)?;
                if density.is_none() {
                    return Err(invalid_config("diffusion-flux needs a density"));
                }
                if d.points.as_ref().is_none_or(|p| p.is_empty()) {
                    return Err(invalid_config("diffusion-flux needs diffusion.points"));
                }
                let dts = self.flux_delta_ts(d)?;
                if dts[0] >= d.t {
                    return Err(invalid_config("delta_t must stay below diffusion.t"));
                }
            }
            ExperimentKind::SimulateAbsorbing => {
                let d = self.diffusion()?;
                self.diffusion_objects(d)?;
                let sim = d
                    .simulation
                    .as_ref()
                    .ok_or_else(|| invalid_config("simulate-absorbing needs diffusion.simulation"))?;
                if sim.n_paths < crate::diffusion::MIN_PATHS {
                    return Err(invalid_config(format!(
                        "n_paths must be at least {}",
                        crate::diffusion::MIN_PATHS
                    )));
                }
                if !(sim.t_max > 0.0 && sim.dt_step > 0.0 && sim.dt_step <= sim.t_max) {
                    return Err(invalid_config("need 0 < dt_step <= t_max"));
                }
                if !(sim.rate_half_window > 0.0) {
                    return Err(invalid_config("rate_half_window must be positive"));
                }
            }
            ExperimentKind::Zeno => {
                let z = self
                    .zeno
                    .as_ref()
                    .ok_or_else(|| invalid_config("zeno needs a zeno block"))?;
                if z.n.is_empty() {
                    return Err(invalid_config("zeno needs at least one N"));
                }
                for &n in &z.n {
                    zeno_survival(z.law, z.prefactor, z.total_time, n).map_err(as_validation)?;
                }
            }
            ExperimentKind::Moments => {
                let m = self.moments.clone().unwrap_or_default();
                if m.sigmas.is_empty() || m.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(invalid_config("sigmas must be positive"));
                }
            }
        }
        Ok(())
    }

    fn current_delta_ts(&self) -> Result<Vec<f64>> {
        let dts = match self.current.as_ref().and_then(|c| c.delta_ts.clone()) {
            Some(d) => d,
            None => logspace(1e-5, 1e-2, 7),
        };
        if dts.is_empty() || dts.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(invalid_config("current delta_ts must be positive"));
        }
        Ok(dts)
    }

    fn packet_delta_ts(&self) -> Result<Vec<f64>> {
        let dts = match self.current.as_ref().and_then(|c| c.delta_ts.clone()) {
            Some(d) => d,
            None => (0..5).map(|k| 1e-2 / f64::from(1u32 << k)).collect(),
        };
        if dts.is_empty() || dts.iter().any(|d| !(*d > 0.0)) || dts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid_config("packet delta_ts must be positive and strictly decreasing"));
        }
        Ok(dts)
    }

    fn flux_delta_ts(&self, d: &DiffusionConfig) -> Result<Vec<f64>> {
        let dts = match &d.delta_ts {
            Some(v) => v.clone(),
            None => (0..5).map(|k| 1e-2 / f64::from(1u32 << k)).collect(),
        };
        if dts.len() < 2 || dts.iter().any(|x| !(*x > 0.0)) || dts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid_config(
                "diffusion delta_ts must hold at least two strictly decreasing positive values",
            ));
        }
        Ok(dts)
    }

    fn diffusion_objects(&self, d: &DiffusionConfig) -> Result<(DiffusionModel<f64>, Option<DensityField<f64>>)> {
        let model = match &d.model {
            ModelConfig::Brownian { sigma } => DiffusionModel::brownian(*sigma),
            ModelConfig::Ou { theta, sigma } => DiffusionModel::ornstein_uhlenbeck(*theta, *sigma),
            ModelConfig::CustomPolynomialDrift { coefficients, sigma } => {
                DiffusionModel::polynomial_drift(coefficients.clone(), *sigma)
            }
        }
        .map_err(as_validation)?;
        let density = match d.density {
            None => None,
            Some(DensityConfig::Gaussian { mean, variance }) => {
                if !(variance > 0.0) {
                    return Err(invalid_config("density variance must be positive"));
                }
                Some(DensityField::gaussian(mean, variance))
            }
            Some(DensityConfig::OuGaussian { m0, v0 }) => match d.model {
                ModelConfig::Ou { theta, sigma } => {
                    if !(v0 > 0.0) {
                        return Err(invalid_config("v0 must be positive"));
                    }
                    Some(DensityField::ou_gaussian(theta, sigma, m0, v0))
                }
                _ => return Err(invalid_config("ou-gaussian density needs the ou model")),
            },
            Some(DensityConfig::Image { x0, boundary }) => match d.model {
                ModelConfig::Brownian { sigma } => {
                    Some(DensityField::image_solution(sigma, x0, boundary).map_err(as_validation)?)
                }
                _ => return Err(invalid_config("image density needs the brownian model")),
            },
        };
        if !(d.t > 0.0 && d.t.is_finite()) {
            return Err(invalid_config("diffusion.t must be positive"));
        }
        Ok((model, density))
    }
}

/// Tabular result of one experiment plus its JSON summary.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: Map<String, Value>,
    /// Human-readable one-liner without timing.
    pub summary_line: String,
    pub sweep: Option<SweepResult<f64>>,
    /// Set when the run stopped early; `rows` then hold what finished.
    pub failure: Option<Error>,
}

impl ExperimentOutput {
    fn new(kind: ExperimentKind, columns: &[&str]) -> Self {
        Self {
            kind,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: Map::new(),
            summary_line: String::new(),
            sweep: None,
            failure: None,
        }
    }

    fn log_axes(&self) -> bool {
        matches!(self.kind, ExperimentKind::SweepDt | ExperimentKind::Zeno)
    }
}

/// Rounds to twelve significant digits, so that `0.7500000000000002`
/// prints as `0.75`.
pub fn tidy(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn fmt_pm(v: f64, e: f64) -> String {
    format!("{v:.4}±{e:.4}")
}

/// Runs the experiment the config describes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Propagate => run_propagate(cfg),
        ExperimentKind::SweepDt => run_sweep(cfg),
        ExperimentKind::MassBeyond => run_mass_beyond(cfg),
        ExperimentKind::Current => run_current(cfg),
        ExperimentKind::DiffusionFlux => run_diffusion_flux(cfg),
        ExperimentKind::SimulateAbsorbing => run_simulate_absorbing(cfg),
        ExperimentKind::Zeno => run_zeno(cfg),
        ExperimentKind::Moments => run_moments(cfg),
    }
}

fn run_propagate(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let state = cfg.initial_state()?;
    let units = cfg.natural_units()?;
    let dt = cfg.positive_delta_t()?;
    let g = cfg.grid.unwrap_or_default();
    let spec = GridSpec {
        x_min: g.x_min,
        x_max: g.x_max,
        spacing: g.spacing,
    };
    let r = propagate(&state, dt, &units, &spec, &cfg.mass_options())?;
    let mut out = ExperimentOutput::new(cfg.kind, &["y", "re_psi", "im_psi", "abs_psi_sq"]);
    out.rows = r
        .grid
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| vec![r.grid.x(i), v.re, v.im, v.norm_sqr()])
        .collect();
    out.summary.insert("p_out".into(), json!(r.p_out));
    out.summary.insert("p_out_error".into(), json!(r.p_out_error));
    out.summary.insert("tail_bound".into(), json!(r.tail_bound));
    out.summary.insert("alpha".into(), json!(r.alpha));
    out.summary.insert("validity_ok".into(), json!(r.validity_ok));
    out.summary.insert("grid_points".into(), json!(r.grid.len()));
    out.summary_line = format!(
        "propagate observable=P_out value={:e}±{:.1e} alpha={:e} validity_ok={}",
        r.p_out, r.p_out_error, r.alpha, r.validity_ok
    );
    Ok(out)
}

fn run_mass_beyond(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let state = cfg.initial_state()?;
    let units = cfg.natural_units()?;
    let dt = cfg.positive_delta_t()?;
    let opts = cfg.mass_options();
    let distances = cfg.distances.clone().unwrap_or_else(|| vec![0.0]);
    let estimates = distances
        .par_iter()
        .map(|&c| mass_beyond(&state, c, dt, &units, &opts))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ExperimentOutput::new(cfg.kind, &["c", "value", "error"]);
    for (c, m) in distances.iter().zip(&estimates) {
        out.rows.push(vec![*c, m.value, m.error()]);
    }
    out.summary.insert("delta_t".into(), json!(dt));
    out.summary.insert("alpha".into(), json!(units.alpha(dt)));
    out.summary
        .insert("validity_ok".into(), json!(is_admissible(&state, dt, &units)));
    out.summary_line = format!(
        "mass-beyond observable=P_c distances={} first={:e}",
        distances.len(),
        estimates[0].value
    );
    Ok(out)
}

/// Sweeps `Δt` (or `α`), records the observable, and fits its log-log
/// exponent. Points outside the validity bound are skipped when the window
/// drops inadmissible points. A failing point stops the fit but keeps the
/// points that finished.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let s = cfg.sweep.ok_or_else(|| invalid_config("sweep-dt needs a sweep block"))?;
    let units = cfg.natural_units()?;
    let controls = sweep_grid(s.min, s.max, s.points_per_decade).map_err(as_validation)?;
    let to_dt = |c: f64| match s.variable {
        SweepVariable::DeltaT => c,
        SweepVariable::Alpha => units.delta_t(c),
    };
    let (points, failure, observable, pruned) = if cfg.wavefunction.is_some() {
        let state = cfg.initial_state()?;
        let opts = cfg.mass_options();
        let (kept, pruned): (Vec<f64>, Vec<f64>) = controls
            .iter()
            .partition(|&&c| !s.window.drop_inadmissible || is_admissible(&state, to_dt(c), &units));
        let (pts, err) = evaluate_sweep(&kept, |c| {
            let dt = to_dt(c);
            let m = mass_beyond(&state, s.distance, dt, &units, &opts)?;
            Ok(SweepPoint {
                control: c,
                value: m.value,
                error: m.error(),
                admissible: is_admissible(&state, dt, &units),
            })
        });
        let name = if s.distance == 0.0 { "P_out" } else { "P_c" };
        (pts, err, name, pruned.len())
    } else {
        let d = cfg.diffusion()?;
        let (model, density) = cfg.diffusion_objects(d)?;
        let density = density.ok_or_else(|| invalid_config("a diffusion sweep needs a density"))?;
        let x1 = d.points.as_ref().map(|p| p[0]).unwrap_or(0.0);
        let (pts, err) = evaluate_sweep(&controls, |c| {
            let v = flux_lr_finite_dt(&model, &density, x1, d.t, to_dt(c))?;
            Ok(SweepPoint::new(c, v, 0.0))
        });
        (pts, err, "J_LR", 0)
    };

    let mut out = ExperimentOutput::new(cfg.kind, &["control", "value", "error"]);
    out.rows = points.iter().map(|p| vec![p.control, p.value, p.error]).collect();
    out.summary.insert("observable".into(), json!(observable));
    out.summary.insert("pruned".into(), json!(pruned));
    let window = WindowPolicy {
        min_control: s.window.min,
        max_control: s.window.max,
        drop_inadmissible: s.window.drop_inadmissible,
    };
    let fit = if failure.is_none() {
        Some(fit_exponent(&points, &window))
    } else {
        None
    };
    match fit {
        Some(Ok(r)) => {
            out.summary.insert("exponent".into(), json!(r.fitted_exponent));
            out.summary.insert("stderr".into(), json!(r.exponent_stderr));
            out.summary.insert("prefactor".into(), json!(r.fitted_prefactor));
            out.summary.insert("window".into(), json!([r.fit_window.0, r.fit_window.1]));
            out.summary.insert("points_used".into(), json!(r.points_used));
            if let (Some(e), Some(tol)) = (s.expected_exponent, s.exponent_tolerance) {
                out.summary.insert("expected_exponent".into(), json!(e));
                out.summary.insert("exponent_tolerance".into(), json!(tol));
                out.summary
                    .insert("within_tolerance".into(), json!((r.fitted_exponent - e).abs() <= tol));
            }
            out.summary_line = format!(
                "sweep-dt observable={observable} exponent={} points={}",
                fmt_pm(r.fitted_exponent, r.exponent_stderr),
                r.points_used
            );
            out.sweep = Some(r);
        }
        Some(Err(e)) => {
            out.summary_line = format!("sweep-dt observable={observable} points={} (no fit)", points.len());
            out.failure = Some(e);
        }
        None => {
            out.summary_line = format!("sweep-dt observable={observable} points={} (partial)", points.len());
            out.failure = failure;
        }
    }
    Ok(out)
}

fn run_current(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let units = cfg.natural_units()?;
    if let Some(p) = cfg.packet() {
        let dts = cfg.packet_delta_ts()?;
        let positions = cfg
            .current
            .as_ref()
            .and_then(|c| c.positions.clone())
            .unwrap_or_else(|| vec![p.center]);
        let h = p.width / 40.0;
        // nodes on multiples of h so every requested position can be one
        let lo = ((p.center - 16.0 * p.width) / h).floor() * h;
        let n = (32.0 * p.width / h).round() as usize + 1;
        let norm = (2.0 * std::f64::consts::PI * p.width * p.width).powf(-0.25);
        let psi = GridWavefunction::sample(lo, lo + h * (n - 1) as f64, n, |x| {
            let u = (x - p.center) / p.width;
            Cplx::from_polar(norm * (-0.25 * u * u).exp(), p.k * x)
        })?;
        let mut out = ExperimentOutput::new(cfg.kind, &["x", "j_feynman", "error", "j_schrodinger"]);
        let mut worst: f64 = 0.0;
        for &x in &positions {
            let snapped = lo + ((x - lo) / h).round() * h;
            let f = feynman_limit_current(&psi, snapped, &dts, &units)?;
            let s = schrodinger_current(&psi, snapped, &units)?;
            worst = worst.max((f.value - s.value).abs() / s.value.abs().max(f64::MIN_POSITIVE));
            out.rows.push(vec![snapped, f.value, f.error, s.value]);
        }
        out.summary.insert("max_relative_difference".into(), json!(worst));
        out.summary_line = format!(
            "current observable=J_feynman/J_schrodinger points={} max_rel_diff={worst:.2e}",
            positions.len()
        );
        return Ok(out);
    }
    let state = cfg.initial_state()?;
    let dts = cfg.current_delta_ts()?;
    let opts = cfg.mass_options();
    let estimates = dts
        .par_iter()
        .map(|&dt| unidirectional_current_lr(&state, dt, &units, &opts))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ExperimentOutput::new(cfg.kind, &["delta_t", "j_lr", "error"]);
    for e in &estimates {
        out.rows.push(vec![e.delta_t, e.value, e.error]);
    }
    let j0 = boundary_current_t0(&state, &units)?;
    out.summary.insert("j_schrodinger_t0".into(), json!(j0));
    out.summary
        .insert("j_lr_all_positive".into(), json!(estimates.iter().all(|e| e.value > 0.0)));
    out.summary_line = format!(
        "current observable=J_LR(0) points={} j_schrodinger_t0={j0:e}",
        estimates.len()
    );
    Ok(out)
}

/// Schrödinger current of the initial state at the support edge `x = 0`.
pub fn boundary_current_t0<S: InitialState<f64> + ?Sized>(state: &S, units: &NaturalUnits<f64>) -> Result<f64> {
    let h = match state.support() {
        Support::FiniteReflecting { a } => a / 1000.0,
        Support::SemiInfinite => 1e-3,
    };
    let psi = GridWavefunction::sample(-8.0 * h, 8.0 * h, 17, |x| state.initial_amplitude(x))?;
    Ok(schrodinger_current(&psi, 0.0, units)?.value)
}

fn run_diffusion_flux(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let d = cfg.diffusion()?;
    let (model, density) = cfg.diffusion_objects(d)?;
    let density = density.ok_or_else(|| invalid_config("diffusion-flux needs a density"))?;
    let dts = cfg.flux_delta_ts(d)?;
    let points = d.points.clone().unwrap_or_default();
    let rows = points
        .par_iter()
        .map(|&x1| {
            let (v, e) = extrapolated_net_flux(&model, &density, x1, d.t, &dts)?;
            let closed = net_flux_closed_form(&model, &density, x1, d.t);
            Ok(vec![x1, v, e, closed])
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = rows
        .iter()
        .map(|r| (r[1] - r[3]).abs() / r[3].abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let mut out = ExperimentOutput::new(cfg.kind, &["x1", "j_net", "error", "j_net_closed_form"]);
    out.rows = rows;
    out.summary.insert("t".into(), json!(d.t));
    out.summary.insert("delta_ts".into(), json!(dts));
    out.summary.insert("max_relative_difference".into(), json!(worst));
    out.summary_line = format!(
        "diffusion-flux observable=J_net points={} max_rel_diff={worst:.2e}",
        points.len()
    );
    Ok(out)
}

fn run_simulate_absorbing(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let d = cfg.diffusion()?;
    let (model, _) = cfg.diffusion_objects(d)?;
    let sim = d
        .simulation
        .as_ref()
        .ok_or_else(|| invalid_config("simulate-absorbing needs diffusion.simulation"))?;
    let initial = match sim.initial {
        SamplerConfig::Point { x } => InitialSampler::PointMass(x),
        SamplerConfig::Gaussian { mean, sd } => InitialSampler::Gaussian { mean, sd },
        SamplerConfig::Uniform { lo, hi } => InitialSampler::Uniform { lo, hi },
    };
    let spec = SimulationSpec {
        boundary: sim.boundary,
        t_max: sim.t_max,
        dt_step: sim.dt_step,
        n_paths: sim.n_paths,
        seed: cfg.seed,
        crossing: match sim.crossing {
            CrossingConfig::Naive => CrossingDetection::Naive,
            CrossingConfig::BrownianBridge => CrossingDetection::BrownianBridge,
        },
    };
    let run = simulate_absorbing(&model, &initial, &spec)?;
    let times = sim
        .times
        .clone()
        .unwrap_or_else(|| (1..=50).map(|k| sim.t_max * k as f64 / 50.0).collect());
    let mut out = ExperimentOutput::new(cfg.kind, &["t", "S", "stderr"]);
    out.rows = run
        .survival_curve(&times)
        .iter()
        .map(|p| vec![p.t, p.survival, p.stderr])
        .collect();
    let mut rates = Vec::new();
    for &t in sim.rate_times.as_deref().unwrap_or(&[]) {
        let r = run.decay_rate(t, sim.rate_half_window).map_err(as_validation)?;
        rates.push(json!({"t": r.t, "rate": r.rate, "stderr": r.stderr}));
    }
    let last = run.survival(sim.t_max);
    out.summary.insert("n_paths".into(), json!(run.n_paths()));
    out.summary.insert("final_survival".into(), json!(last.survival));
    out.summary.insert("decay_rates".into(), Value::Array(rates));
    out.summary_line = format!(
        "simulate-absorbing observable=S(t) paths={} S(t_max)={:.4}±{:.4}",
        run.n_paths(),
        last.survival,
        last.stderr
    );
    Ok(out)
}

fn run_zeno(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let z = cfg.zeno.as_ref().ok_or_else(|| invalid_config("zeno needs a zeno block"))?;
    let mut ns = z.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut out = ExperimentOutput::new(
        cfg.kind,
        &["n", "delta_t", "product_survival", "exponential_approximation", "expected_decays"],
    );
    let mut pts = Vec::new();
    for &n in &ns {
        let s = zeno_survival(z.law, z.prefactor, z.total_time, n)?;
        out.rows.push(vec![
            n as f64,
            s.delta_t,
            s.product_survival,
            s.exponential_approximation,
            s.expected_decays,
        ]);
        pts.push(SweepPoint::new(n as f64, s.expected_decays, 0.0));
    }
    out.summary.insert("law".into(), json!(z.law));
    match fit_exponent(&pts, &WindowPolicy::all()) {
        Ok(r) => {
            out.summary.insert("exponent".into(), json!(r.fitted_exponent));
            out.summary.insert("stderr".into(), json!(r.exponent_stderr));
            out.summary.insert("prefactor".into(), json!(r.fitted_prefactor));
            out.summary.insert("window".into(), json!([r.fit_window.0, r.fit_window.1]));
            out.summary_line = format!(
                "zeno observable=<N> exponent={} points={}",
                fmt_pm(r.fitted_exponent, r.exponent_stderr),
                r.points_used
            );
            out.sweep = Some(r);
        }
        Err(e) => {
            // the table stands on its own; only the fit is skipped
            out.summary.insert("fit_skipped".into(), json!(e.to_string()));
            out.summary_line = format!("zeno observable=<N> points={} fit=skipped", ns.len());
        }
    }
    Ok(out)
}

fn run_moments(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let m = cfg.moments.clone().unwrap_or_default();
    let mut out = ExperimentOutput::new(cfg.kind, &["sigma", "m_zeta2_eta", "m_zeta", "m_eta"]);
    let mut parts = Vec::new();
    for &s in &m.sigmas {
        let (a, b, c) = gaussian_moment_identities(s)?;
        out.rows.push(vec![s, a, b, c]);
        parts.push(format!("{} {} {}", tidy(a), tidy(b), tidy(c)));
    }
    out.summary_line = parts.join("\n");
    Ok(out)
}

/// Output formats for [`emit_plot_data`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFormat {
    Csv,
    GnuplotScript,
}

/// `# unicurrent <version> config-hash=<hash>`
pub fn artifact_header(hash: &str) -> String {
    format!("# {TOOL_NAME} {TOOL_VERSION} config-hash={hash}")
}

fn csv_text(out: &ExperimentOutput, hash: &str) -> String {
    let mut s = artifact_header(hash);
    s.push('\n');
    if let Some(e) = &out.failure {
        let _ = writeln!(s, "# partial: {}", e.to_string().replace('\n', " "));
    }
    s.push_str(&out.columns.join(","));
    s.push('\n');
    for row in &out.rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn gnuplot_text(out: &ExperimentOutput, csv_name: &str, hash: &str) -> String {
    let mut s = artifact_header(hash);
    s.push('\n');
    s.push_str("set datafile separator \",\"\n");
    if out.log_axes() {
        s.push_str("set logscale xy\n");
    }
    let _ = writeln!(s, "set xlabel \"{}\"", out.columns[0]);
    let _ = writeln!(s, "set ylabel \"{}\"", out.columns[1]);
    let with_errors = out.columns.len() >= 3 && matches!(out.columns[2].as_str(), "error" | "stderr");
    if with_errors {
        let _ = writeln!(
            s,
            "plot \"{csv_name}\" skip 2 using 1:2:3 with yerrorbars title \"{}\"",
            out.columns[1]
        );
    } else {
        let _ = writeln!(
            s,
            "plot \"{csv_name}\" skip 2 using 1:2 with linespoints title \"{}\"",
            out.columns[1]
        );
    }
    s
}

/// Writes `<stem>.csv`, plus `<stem>.gp` for [`PlotFormat::GnuplotScript`].
pub fn emit_plot_data(
    out: &ExperimentOutput,
    format: PlotFormat,
    dir: &Path,
    stem: &str,
    hash: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv_name = format!("{stem}.csv");
    let csv_path = dir.join(&csv_name);
    std::fs::write(&csv_path, csv_text(out, hash))?;
    let mut files = vec![csv_path];
    if format == PlotFormat::GnuplotScript {
        let gp = dir.join(format!("{stem}.gp"));
        std::fs::write(&gp, gnuplot_text(out, &csv_name, hash))?;
        files.push(gp);
    }
    Ok(files)
}

/// The JSON summary written next to the CSV.
pub fn summary_json(out: &ExperimentOutput, hash: &str) -> Value {
    let mut m = out.summary.clone();
    m.insert("kind".into(), json!(out.kind.name()));
    m.insert("config-hash".into(), json!(hash));
    m.insert("version".into(), json!(TOOL_VERSION));
    m.insert("partial".into(), json!(out.failure.is_some()));
    if let Some(e) = &out.failure {
        m.insert("error".into(), json!(e.to_string()));
    }
    for key in ["exponent", "stderr", "prefactor", "window"] {
        if out.kind == ExperimentKind::SweepDt && !m.contains_key(key) {
            m.insert(key.into(), Value::Null);
        }
    }
    Value::Object(m)
}

/// Writes the CSV, the JSON summary and (if enabled) the plot script under
/// `dir`, named after `output.stem` or the experiment kind.
pub fn persist(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let hash = cfg.config_hash();
    let stem = cfg.output.stem.clone().unwrap_or_else(|| cfg.kind.name().to_string());
    let format = if cfg.output.plot {
        PlotFormat::GnuplotScript
    } else {
        PlotFormat::Csv
    };
    let mut files = emit_plot_data(out, format, dir, &stem, &hash)?;
    let json_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&summary_json(out, &hash)).expect("summary serializes");
    std::fs::write(&json_path, text + "\n")?;
    files.push(json_path);
    Ok(files)
}

/// Result of [`run_and_persist`].
#[derive(Debug)]
pub struct RunReport {
    pub output: ExperimentOutput,
    pub files: Vec<PathBuf>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn summary_line(&self) -> String {
        format!("{} wall={:.3}s", self.output.summary_line, self.wall_seconds)
    }
}

/// Runs, then writes artifacts even for a partial run. A partial run is
/// returned as `Err` after its artifacts are on disk.
pub fn run_and_persist(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let mut output = run_experiment(cfg)?;
    let files = persist(&output, cfg, dir)?;
    if let Some(e) = output.failure.take() {
        return Err(e);
    }
    Ok(RunReport {
        output,
        files,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
