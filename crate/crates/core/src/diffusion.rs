//! Diffusion fluxes: finite-`Δt` uni-directional flux estimators, the
//! closed-form net flux, and an absorbing-boundary Monte Carlo.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{extrapolate_to_zero, integrate, QuadOptions};
use crate::scalar::Real;

type FieldFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// A function of `(x, t)` with a spatial derivative, analytic if supplied
/// and otherwise a fourth-order central difference with step
/// `1e-4 * scale`.
#[derive(Clone)]
pub struct ScalarField<T> {
    f: FieldFn<T>,
    dx: Option<FieldFn<T>>,
    scale: T,
}

impl<T: std::fmt::Debug> std::fmt::Debug for ScalarField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("analytic_derivative", &self.dx.is_some())
            .field("scale", &self.scale)
            .finish()
    }
}

impl<T: Real> ScalarField<T> {
    pub fn new(f: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            dx: None,
            scale: T::one(),
        }
    }

    pub fn constant(c: T) -> Self {
        Self::new(move |_, _| c).with_derivative(|_, _| T::zero())
    }

    pub fn with_derivative(mut self, dx: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        self.dx = Some(Arc::new(dx));
        self
    }

    /// Length scale of the domain, used for the finite-difference step.
    pub fn with_scale(mut self, scale: T) -> Self {
        self.scale = scale;
        self
    }

    pub fn value(&self, x: T, t: T) -> T {
        (self.f)(x, t)
    }

    pub fn dx(&self, x: T, t: T) -> T {
        match &self.dx {
            Some(d) => d(x, t),
            None => {
                let h = T::lit(1e-4) * self.scale;
                let f = |k: f64| self.value(x + h * T::lit(k), t);
                (f(-2.0) - T::lit(8.0) * f(-1.0) + T::lit(8.0) * f(1.0) - f(2.0)) / (T::lit(12.0) * h)
            }
        }
    }
}

/// Drift `b(x,t)` and noise `σ(x,t) ≥ σ_min > 0` of a one-dimensional
/// diffusion `dx = b dt + σ dW`.
#[derive(Debug, Clone)]
pub struct DiffusionModel<T> {
    pub drift: ScalarField<T>,
    pub noise: ScalarField<T>,
    pub sigma_min: T,
}

impl<T: Real> DiffusionModel<T> {
    pub fn new(drift: ScalarField<T>, noise: ScalarField<T>, sigma_min: T) -> Result<Self> {
        if !(sigma_min > T::zero()) {
            return Err(Error::invalid("sigma_min must be positive"));
        }
        Ok(Self {
            drift,
            noise,
            sigma_min,
        })
    }

    /// `b = 0`, constant `σ`.
    pub fn brownian(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        Self::new(ScalarField::constant(T::zero()), ScalarField::constant(sigma), sigma)
    }

    /// Ornstein-Uhlenbeck: `b = -θ x`, constant `σ`.
    pub fn ornstein_uhlenbeck(theta: T, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        let drift = ScalarField::new(move |x, _| -theta * x).with_derivative(move |_, _| -theta);
        Self::new(drift, ScalarField::constant(sigma), sigma)
    }

    /// `b = Σ c_j x^j`, constant `σ`.
    pub fn polynomial_drift(coefficients: Vec<T>, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        let c = coefficients.clone();
        let drift = ScalarField::new(move |x, _| c.iter().rev().fold(T::zero(), |acc, q| acc * x + *q))
            .with_derivative(move |x, _| {
                coefficients
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(T::zero(), |acc, (j, q)| acc * x + *q * T::from_usize_lossy(j))
            });
        Self::new(drift, ScalarField::constant(sigma), sigma)
    }

    fn sigma_checked(&self, x: T, t: T) -> Result<T> {
        let s = self.noise.value(x, t);
        if !(s >= self.sigma_min) {
            return Err(Error::invalid(format!(
                "noise {:e} at x = {:e} is below sigma_min",
                s.as_f64(),
                x.as_f64()
            )));
        }
        Ok(s)
    }
}

/// A probability density `p(x,t)` on `domain`, optionally pinned to zero at
/// an absorbing point.
#[derive(Debug, Clone)]
pub struct DensityField<T> {
    pub p: ScalarField<T>,
    pub domain: (T, T),
    pub absorbing: Option<T>,
}

fn gauss<T: Real>(z: T, var: T) -> T {
    (-z * z / (T::lit(2.0) * var)).exp() / (T::lit(2.0) * T::PI() * var).sqrt()
}

impl<T: Real> DensityField<T> {
    pub fn new(p: ScalarField<T>, domain: (T, T), absorbing: Option<T>) -> Self {
        Self { p, domain, absorbing }
    }

    /// Time-independent normal density.
    pub fn gaussian(mean: T, var: T) -> Self {
        let p = ScalarField::new(move |x, _| gauss(x - mean, var))
            .with_derivative(move |x, _| -(x - mean) / var * gauss(x - mean, var))
            .with_scale(var.sqrt());
        Self::new(p, (T::neg_infinity(), T::infinity()), None)
    }

    /// Transient normal solution of the Ornstein-Uhlenbeck equation started
    /// at time `0` from `N(m0, v0)`: mean `m0 e^{-θt}`, variance
    /// `σ²/2θ + (v0 - σ²/2θ) e^{-2θt}`.
    pub fn ou_gaussian(theta: T, sigma: T, m0: T, v0: T) -> Self {
        let stat = sigma * sigma / (T::lit(2.0) * theta);
        let moments = move |t: T| (m0 * (-theta * t).exp(), stat + (v0 - stat) * (-T::lit(2.0) * theta * t).exp());
        let p = ScalarField::new(move |x, t| {
            let (m, v) = moments(t);
            gauss(x - m, v)
        })
        .with_derivative(move |x, t| {
            let (m, v) = moments(t);
            -(x - m) / v * gauss(x - m, v)
        })
        .with_scale(v0.sqrt().min(stat.sqrt()));
        Self::new(p, (T::neg_infinity(), T::infinity()), None)
    }

    /// Method-of-images density for `dx = σ dW` started at `x0 < boundary`
    /// with absorption at `boundary`.
    pub fn image_solution(sigma: T, x0: T, boundary: T) -> Result<Self> {
        if !(x0 < boundary) {
            return Err(Error::invalid("starting point must lie left of the boundary"));
        }
        let s2 = sigma * sigma;
        let mirror = T::lit(2.0) * boundary - x0;
        let p = ScalarField::new(move |x, t| {
            if x >= boundary || t <= T::zero() {
                T::zero()
            } else {
                gauss(x - x0, s2 * t) - gauss(x - mirror, s2 * t)
            }
        })
        .with_derivative(move |x, t| {
            if x > boundary || t <= T::zero() {
                T::zero()
            } else {
                let v = s2 * t;
                -(x - x0) / v * gauss(x - x0, v) + (x - mirror) / v * gauss(x - mirror, v)
            }
        })
        .with_scale((boundary - x0).abs());
        Ok(Self::new(p, (T::neg_infinity(), boundary), Some(boundary)))
    }

    pub fn value(&self, x: T, t: T) -> T {
        if x < self.domain.0 || x > self.domain.1 {
            return T::zero();
        }
        if let Some(b) = self.absorbing {
            if x >= b {
                return T::zero();
            }
        }
        self.p.value(x, t)
    }
}

/// Direction of a uni-directional flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

const GAUSS_CUTOFF: f64 = 12.0;

/// `J(x₁, t, Δt)` after `x = x₁ ± ξ√Δt`, `y = x₁ ∓ η√Δt`, `η = ζ - ξ`:
/// `∫_0^∞ dζ ∫_0^ζ dξ  exp{-(ζ ∓ b√Δt)²/2σ²} p(y, t-Δt) / (√(2πΔt) σ)`
/// with `σ, b` taken at the source point `y = x₁ ∓ (ζ-ξ)√Δt`.
fn flux_finite_dt<T: Real>(
    model: &DiffusionModel<T>,
    density: &DensityField<T>,
    x1: T,
    t: T,
    delta_t: T,
    dir: Direction,
) -> Result<T> {
    if !(delta_t > T::zero() && delta_t.is_finite()) {
        return Err(Error::invalid("delta_t must be positive"));
    }
    let sign = match dir {
        Direction::LeftToRight => T::one(),
        Direction::RightToLeft => -T::one(),
    };
    let rdt = delta_t.sqrt();
    let sigma1 = model.sigma_checked(x1, t)?;
    // generous cut-off: the Gaussian in ζ is below e^{-72} past it
    let probe = |z: T| model.noise.value(x1 - sign * z * rdt, t).max(sigma1);
    let sigma_ref = probe(T::lit(GAUSS_CUTOFF) * sigma1).max(sigma1);
    let b_ref = model.drift.value(x1, t).abs();
    let z_max = T::lit(GAUSS_CUTOFF) * sigma_ref + T::lit(2.0) * b_ref * rdt;
    let two_pi_dt = (T::lit(2.0) * T::PI() * delta_t).sqrt();
    let source = |zeta: T, xi: T| -> T {
        let y = x1 - sign * (zeta - xi) * rdt;
        let p = density.value(y, t - delta_t);
        if p == T::zero() {
            return T::zero();
        }
        let s = model.noise.value(y, t);
        let b = model.drift.value(y, t);
        let e = zeta - sign * b * rdt;
        (-e * e / (T::lit(2.0) * s * s)).exp() * p / (two_pi_dt * s)
    };
    let inner_opts = QuadOptions::new(T::zero(), T::lit(1e-12)).with_max_intervals(2000);
    let outer = |zeta: T| -> T {
        if zeta == T::zero() {
            return T::zero();
        }
        integrate(|xi: T| source(zeta, xi), &[T::zero(), zeta], inner_opts)
            .map(|r| r.value)
            .unwrap_or(T::nan())
    };
    let breaks: Vec<T> = (0..=24).map(|k| z_max * T::from_usize_lossy(k) / T::lit(24.0)).collect();
    let r = integrate(outer, &breaks, QuadOptions::new(T::zero(), T::lit(1e-11)).with_max_intervals(4000))?;
    if !r.value.is_finite() {
        return Err(Error::no_convergence(
            "inner flux quadrature failed",
            (r.value.as_f64(), 0.0),
            (0.0, 0.0),
        ));
    }
    Ok(r.value)
}

/// Probability per unit time crossing `x₁` from left to right within `Δt`.
pub fn flux_lr_finite_dt<T: Real>(
    model: &DiffusionModel<T>,
    density: &DensityField<T>,
    x1: T,
    t: T,
    delta_t: T,
) -> Result<T> {
    flux_finite_dt(model, density, x1, t, delta_t, Direction::LeftToRight)
}

/// Mirror image of [`flux_lr_finite_dt`].
pub fn flux_rl_finite_dt<T: Real>(
    model: &DiffusionModel<T>,
    density: &DensityField<T>,
    x1: T,
    t: T,
    delta_t: T,
) -> Result<T> {
    flux_finite_dt(model, density, x1, t, delta_t, Direction::RightToLeft)
}

/// `J = -∂_x(σ² p / 2) + b p` at `(x₁, t)`.
pub fn net_flux_closed_form<T: Real>(model: &DiffusionModel<T>, density: &DensityField<T>, x1: T, t: T) -> T {
    let s = model.noise.value(x1, t);
    let ds = model.noise.dx(x1, t);
    let p = density.value(x1, t);
    let dp = density.p.dx(x1, t);
    -(s * ds * p + s * s * dp / T::lit(2.0)) + model.drift.value(x1, t) * p
}

/// Both one-way fluxes at one `Δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxEstimate<T> {
    pub j_lr: T,
    pub j_rl: T,
    pub j_net: T,
    pub delta_t: T,
    /// The one-way limits are infinite (`p(x₁) > 0`); `j_lr`, `j_rl` are
    /// finite-`Δt` values only.
    pub divergent: bool,
}

pub fn flux_estimate<T: Real>(
    model: &DiffusionModel<T>,
    density: &DensityField<T>,
    x1: T,
    t: T,
    delta_t: T,
) -> Result<FluxEstimate<T>> {
    let j_lr = flux_lr_finite_dt(model, density, x1, t, delta_t)?;
    let j_rl = flux_rl_finite_dt(model, density, x1, t, delta_t)?;
    Ok(FluxEstimate {
        j_lr,
        j_rl,
        j_net: j_lr - j_rl,
        delta_t,
        divergent: density.value(x1, t) > T::zero(),
    })
}

/// `lim_{Δt→0} (J_LR − J_RL)` by extrapolation in `√Δt`. Returns the value
/// and an error indicator.
pub fn extrapolated_net_flux<T: Real>(
    model: &DiffusionModel<T>,
    density: &DensityField<T>,
    x1: T,
    t: T,
    delta_ts: &[T],
) -> Result<(T, T)> {
    if delta_ts.len() < 2 || delta_ts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("need a strictly decreasing sequence of at least two delta_t"));
    }
    let values = delta_ts
        .iter()
        .map(|&dt| flux_estimate(model, density, x1, t, dt).map(|f| f.j_net))
        .collect::<Result<Vec<T>>>()?;
    let steps: Vec<T> = delta_ts.iter().map(|d| d.sqrt()).collect();
    extrapolate_to_zero(&steps, &values)
}

/// The three double integrals
/// `∫_0^∞dξ ∫_ξ^∞ g(ζ,ξ) e^{-ζ²/2σ²} dζ / (√(2π)σ)` for
/// `g = ζ²(ζ-ξ), ζ, ζ-ξ`, evaluated by nested quadrature in the original
/// order.
pub fn gaussian_moment_identities<T: Real>(sigma: T) -> Result<(T, T, T)> {
    if !(sigma > T::zero() && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    // integrate in units of σ so the tolerance is scale free
    let z_max = T::lit(40.0);
    let norm = T::one() / (T::lit(2.0) * T::PI()).sqrt();
    let weight = move |z: T| (-z * z / T::lit(2.0)).exp() * norm;
    let tight = QuadOptions::new(T::zero(), T::lit(1e-14)).with_max_intervals(5000);
    let breaks = |a: T, b: T| -> Vec<T> { (0..=16).map(|k| a + (b - a) * T::from_usize_lossy(k) / T::lit(16.0)).collect() };
    let double = |g: &(dyn Fn(T, T) -> T + Sync)| -> Result<T> {
        let outer = |xi: T| -> T {
            integrate(|z: T| g(z, xi) * weight(z), &breaks(xi, z_max), tight)
                .map(|r| r.value)
                .unwrap_or(T::nan())
        };
        let r = integrate(outer, &breaks(T::zero(), z_max), tight)?;
        if !r.value.is_finite() {
            return Err(Error::no_convergence("moment quadrature failed", (r.value.as_f64(), 0.0), (0.0, 0.0)));
        }
        Ok(r.value)
    };
    let s2 = sigma * sigma;
    Ok((
        s2 * s2 * double(&|z, xi| z * z * (z - xi))?,
        s2 * double(&|z, _| z)?,
        s2 * double(&|z, xi| z - xi)?,
    ))
}

/// How each Euler-Maruyama step decides whether a path hit the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDetection {
    /// Only end-of-step positions are checked.
    Naive,
    /// Also kills a path that ends inside with the Brownian-bridge crossing
    /// probability `exp{-2(B-x_n)(B-x_{n+1})/(σ² dt)}`.
    BrownianBridge,
}

/// Distribution of starting points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialSampler<T> {
    PointMass(T),
    Gaussian { mean: T, sd: T },
    Uniform { lo: T, hi: T },
}

impl<T: Real> InitialSampler<T> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> T {
        match *self {
            InitialSampler::PointMass(x) => x,
            InitialSampler::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * T::lit(z)
            }
            InitialSampler::Uniform { lo, hi } => lo + (hi - lo) * T::lit(rng.gen::<f64>()),
        }
    }
}

/// Settings for [`simulate_absorbing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec<T> {
    /// `None` means no boundary.
    pub boundary: Option<T>,
    pub t_max: T,
    pub dt_step: T,
    pub n_paths: usize,
    pub seed: u64,
    pub crossing: CrossingDetection,
}

pub const MIN_PATHS: usize = 10_000;

/// Absorption times of every simulated path (`+∞` for survivors).
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionRun<T> {
    pub absorption_times: Vec<T>,
    pub t_max: T,
}

/// One point of an empirical survival curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalPoint<T> {
    pub t: T,
    pub survival: T,
    pub stderr: T,
}

/// Boundary flux estimated as the absorbed fraction per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate<T> {
    pub t: T,
    pub rate: T,
    pub stderr: T,
}

impl<T: Real> AbsorptionRun<T> {
    pub fn n_paths(&self) -> usize {
        self.absorption_times.len()
    }

    fn absorbed_in(&self, lo: T, hi: T) -> usize {
        self.absorption_times.iter().filter(|&&s| s > lo && s <= hi).count()
    }

    /// Fraction of paths alive after time `t`, with its binomial standard
    /// error.
    pub fn survival(&self, t: T) -> SurvivalPoint<T> {
        let n = T::from_usize_lossy(self.n_paths());
        let alive = T::from_usize_lossy(self.absorption_times.iter().filter(|&&s| s > t).count());
        let s = alive / n;
        SurvivalPoint {
            t,
            survival: s,
            stderr: (s * (T::one() - s) / n).sqrt(),
        }
    }

    pub fn survival_curve(&self, times: &[T]) -> Vec<SurvivalPoint<T>> {
        times.iter().map(|&t| self.survival(t)).collect()
    }

    /// `-dS/dt` at `t` from the number absorbed in `(t-w, t+w]`.
    pub fn decay_rate(&self, t: T, half_window: T) -> Result<RateEstimate<T>> {
        if !(half_window > T::zero() && t - half_window >= T::zero() && t + half_window <= self.t_max) {
            return Err(Error::invalid("rate window must lie inside [0, t_max]"));
        }
        let n = T::from_usize_lossy(self.n_paths());
        let k = T::from_usize_lossy(self.absorbed_in(t - half_window, t + half_window));
        let width = T::lit(2.0) * half_window;
        Ok(RateEstimate {
            t,
            rate: k / (n * width),
            stderr: k.sqrt() / (n * width),
        })
    }
}

/// Euler-Maruyama paths killed on reaching `boundary` from the left. Every
/// path draws from its own ChaCha stream `(seed, path index)`, so results
/// do not depend on the thread count.
pub fn simulate_absorbing<T: Real>(
    model: &DiffusionModel<T>,
    initial: &InitialSampler<T>,
    spec: &SimulationSpec<T>,
) -> Result<AbsorptionRun<T>> {
    if spec.n_paths < MIN_PATHS {
        return Err(Error::invalid(format!("n_paths must be at least {MIN_PATHS}")));
    }
    if !(spec.dt_step > T::zero() && spec.t_max > T::zero() && spec.dt_step <= spec.t_max) {
        return Err(Error::invalid("need 0 < dt_step <= t_max"));
    }
    let steps = (spec.t_max / spec.dt_step).round().to_usize().unwrap_or(0).max(1);
    let dt = spec.t_max / T::from_usize_lossy(steps);
    let sqrt_dt = dt.sqrt();
    let Some(boundary) = spec.boundary else {
        return Ok(AbsorptionRun {
            absorption_times: vec![T::infinity(); spec.n_paths],
            t_max: spec.t_max,
        });
    };
    let times: Vec<T> = (0..spec.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(path as u64);
            let mut x = initial.draw(&mut rng);
            if x >= boundary {
                return T::zero();
            }
            for n in 0..steps {
                let t = dt * T::from_usize_lossy(n);
                let s = model.noise.value(x, t);
                let z: f64 = rng.sample(StandardNormal);
                let next = x + model.drift.value(x, t) * dt + s * sqrt_dt * T::lit(z);
                if next >= boundary {
                    return t + dt;
                }
                if spec.crossing == CrossingDetection::BrownianBridge {
                    let hit = (-T::lit(2.0) * (boundary - x) * (boundary - next) / (s * s * dt)).exp();
                    if T::lit(rng.gen::<f64>()) < hit {
                        return t + dt * T::lit(0.5);
                    }
                }
                x = next;
            }
            T::infinity()
        })
        .collect();
    Ok(AbsorptionRun {
        absorption_times: times,
        t_max: spec.t_max,
    })
}
