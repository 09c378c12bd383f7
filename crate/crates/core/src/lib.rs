//! Free short-time propagation of compactly supported wave functions, finite-`Δt`
//! uni-directional currents for quantum mechanics and diffusion, and the
//! scaling laws they obey as `Δt → 0`.
//!
//! Numerical routines are generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the experiment layer uses.
//!
//! ```
//! use unicurrent::{mass_beyond, MassOptions, NaturalUnits, Support, Wavefunction};
//!
//! let wf = Wavefunction::from_real(&[0.0, 1.0, 1.0], Support::FiniteReflecting { a: 1.0 }).unwrap();
//! let units = NaturalUnits::default();
//! let p = mass_beyond(&wf, 0.0, 1e-3, &units, &MassOptions::default()).unwrap();
//! assert!(p.value > 0.0 && p.value < 1e-4);
//! ```

// `!(x > 0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod fresnel;
pub mod quadrature;
pub mod quantum;
pub mod scalar;
pub mod scaling;
pub mod wavefunction;

pub use diffusion::{
    extrapolated_net_flux, flux_estimate, flux_lr_finite_dt, flux_rl_finite_dt, gaussian_moment_identities,
    net_flux_closed_form, simulate_absorbing, CrossingDetection, DensityField, Direction, DiffusionModel,
    FluxEstimate, InitialSampler, ScalarField, SimulationSpec,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_sweep, ExperimentConfig, ExperimentKind, ExperimentOutput, PlotFormat};
pub use fresnel::{fresnel_moment, fresnel_moment_exact, propagator_kernel_integral, Limit, RegularizationPolicy};
pub use quantum::{
    feynman_limit_current, is_admissible, mass_beyond, propagate, schrodinger_current, unidirectional_current_lr,
    validity_bound, CurrentEstimate, CurrentKind, GridSpec, InitialData, InitialState, MassEstimate, MassOptions,
    PropagationResult, Superposition,
};
pub use scalar::{Cplx, Real};
pub use scaling::{
    decay_law, fit_exponent, zeno_survival, SurvivalLaw, SurvivalStatistics, SweepPoint, SweepResult, WindowPolicy,
};
pub use wavefunction::{
    BoundaryClass, BoxEigenstate, GridWavefunction, NaturalUnits, PiecewiseWavefunction, Support,
};

pub type Complex = Cplx<f64>;
pub type Wavefunction = PiecewiseWavefunction<f64>;
pub type Eigenstate = BoxEigenstate<f64>;
pub type Grid = GridWavefunction<f64>;
pub type Units = NaturalUnits<f64>;
pub type Model = DiffusionModel<f64>;
pub type Density = DensityField<f64>;
pub type Sweep = SweepResult<f64>;
pub type Survival = SurvivalStatistics<f64>;
