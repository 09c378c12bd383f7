//! Short-time free propagation of compactly supported states, the mass that
//! leaks across the support edge, and the current estimators built on it.

use rayon::prelude::*;
use rustfft::{FftNum, FftPlanner};

use crate::error::{Error, Result};
use crate::fresnel::{kernel_prefactor, moment_table, propagate_polynomial, Limit};
use crate::quadrature::{extrapolate_to_zero, integrate, simpson, trapezoid, QuadOptions};
use crate::scalar::{cis, Cplx, Real};
use crate::wavefunction::{
    BoundaryClass, BoxEigenstate, GridWavefunction, NaturalUnits, PiecewiseWavefunction, Support,
};

/// Factor by which `Δt` must undercut a validity bound to count as "much
/// smaller".
pub const VALIDITY_FACTOR: f64 = 100.0;

const EDGE_TERMS: usize = 16;

/// Initial data that can be propagated in closed form.
pub trait InitialState<T: Real>: Sync {
    fn initial_amplitude(&self, x: T) -> Cplx<T>;

    /// `ψ(y, Δt)` for `α = ħΔt/m`.
    fn propagated_amplitude(&self, y: T, alpha: T) -> Cplx<T>;

    fn support(&self) -> Support<T>;

    fn boundary_class(&self) -> BoundaryClass;

    /// `|∂^k ψ|` at the right edge `0` and, if finite, at the left edge `-a`,
    /// for `k = 0..EDGE_TERMS`.
    fn edge_derivatives(&self) -> (Vec<T>, Option<Vec<T>>);

    /// Largest `α` the short-time expansion tolerates (before the factor
    /// [`VALIDITY_FACTOR`]). Infinite when no constraint applies.
    fn validity_alpha(&self, units: &NaturalUnits<T>) -> T;

    fn is_zero(&self) -> bool;
}

impl<T: Real> InitialState<T> for PiecewiseWavefunction<T> {
    fn initial_amplitude(&self, x: T) -> Cplx<T> {
        self.evaluate(x)
    }

    fn propagated_amplitude(&self, y: T, alpha: T) -> Cplx<T> {
        propagate_polynomial(self, y, alpha)
    }

    fn support(&self) -> Support<T> {
        PiecewiseWavefunction::support(self)
    }

    fn boundary_class(&self) -> BoundaryClass {
        self.classify_boundary()
    }

    fn edge_derivatives(&self) -> (Vec<T>, Option<Vec<T>>) {
        let at = |x: T| -> Vec<T> { (0..EDGE_TERMS).map(|k| self.polynomial_derivative(x, k).norm()).collect() };
        (at(T::zero()), self.support().left().map(at))
    }

    fn validity_alpha(&self, _units: &NaturalUnits<T>) -> T {
        polynomial_validity_alpha(self)
    }

    fn is_zero(&self) -> bool {
        PiecewiseWavefunction::is_zero(self)
    }
}

impl<T: Real> InitialState<T> for BoxEigenstate<T> {
    fn initial_amplitude(&self, x: T) -> Cplx<T> {
        Cplx::new(self.evaluate(x), T::zero())
    }

    fn propagated_amplitude(&self, y: T, alpha: T) -> Cplx<T> {
        propagate_eigenstate(self, Cplx::new(T::one(), T::zero()), y, alpha)
    }

    fn support(&self) -> Support<T> {
        Support::FiniteReflecting { a: self.width() }
    }

    fn boundary_class(&self) -> BoundaryClass {
        BoundaryClass::ContinuousDerivativeJump
    }

    fn edge_derivatives(&self) -> (Vec<T>, Option<Vec<T>>) {
        let d: Vec<T> = (0..EDGE_TERMS).map(|k| self.derivative_at_right_edge(k).abs()).collect();
        (d.clone(), Some(d))
    }

    fn validity_alpha(&self, units: &NaturalUnits<T>) -> T {
        units.alpha(validity_bound(self, units))
    }

    fn is_zero(&self) -> bool {
        false
    }
}

/// Finite superposition `Σ c_n ψ_n` of eigenstates of one box.
#[derive(Debug, Clone, PartialEq)]
pub struct Superposition<T> {
    terms: Vec<(Cplx<T>, BoxEigenstate<T>)>,
}

impl<T: Real> Superposition<T> {
    pub fn new(width: T, terms: &[(Cplx<T>, u32)]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("superposition needs at least one term"));
        }
        let terms = terms
            .iter()
            .map(|&(c, n)| BoxEigenstate::new(n, width).map(|s| (c, s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[(Cplx<T>, BoxEigenstate<T>)] {
        &self.terms
    }

    pub fn width(&self) -> T {
        self.terms[0].1.width()
    }

    /// Taylor coefficient `q_j(t)` of the state at `x = 0` after evolving
    /// inside the box for time `t`.
    pub fn taylor_coefficient(&self, j: usize, t: T, units: &NaturalUnits<T>) -> Cplx<T> {
        let factorial: T = (1..=j).map(T::from_usize_lossy).fold(T::one(), |p, f| p * f);
        self.terms
            .iter()
            .map(|(c, s)| c * cis(-s.energy(units) * t / units.hbar) * (s.derivative_at_right_edge(j) / factorial))
            .fold(Cplx::new(T::zero(), T::zero()), |acc, v| acc + v)
    }
}

impl<T: Real> InitialState<T> for Superposition<T> {
    fn initial_amplitude(&self, x: T) -> Cplx<T> {
        self.terms
            .iter()
            .fold(Cplx::new(T::zero(), T::zero()), |acc, (c, s)| acc + c * s.evaluate(x))
    }

    fn propagated_amplitude(&self, y: T, alpha: T) -> Cplx<T> {
        self.terms
            .iter()
            .fold(Cplx::new(T::zero(), T::zero()), |acc, (c, s)| acc + propagate_eigenstate(s, *c, y, alpha))
    }

    fn support(&self) -> Support<T> {
        Support::FiniteReflecting { a: self.width() }
    }

    fn boundary_class(&self) -> BoundaryClass {
        let units = NaturalUnits::default();
        if self.taylor_coefficient(1, T::zero(), &units).norm() > T::zero() {
            BoundaryClass::ContinuousDerivativeJump
        } else {
            BoundaryClass::SmoothZero
        }
    }

    fn edge_derivatives(&self) -> (Vec<T>, Option<Vec<T>>) {
        let d: Vec<T> = (0..EDGE_TERMS)
            .map(|k| self.terms.iter().map(|(c, s)| c.norm() * s.derivative_at_right_edge(k).abs()).sum())
            .collect();
        (d.clone(), Some(d))
    }

    fn validity_alpha(&self, units: &NaturalUnits<T>) -> T {
        superposition_validity_alpha(self, T::zero(), units)
    }

    fn is_zero(&self) -> bool {
        self.terms.iter().all(|(c, _)| c.norm() == T::zero())
    }
}

/// Closed-form free evolution of `c ψ_n` restricted to `[-a, 0]`.
///
/// Writing `sin` as two plane waves and completing the square gives
/// `ψ(y) = N/(2i) e^{-ik²α/2} Σ_σ σ e^{iσk(y+a)} (2πi)^{-1/2} M_0(L_σ, U_σ)`
/// with `L_σ = (-a-y+σkα)/√α`, `U_σ = (-y+σkα)/√α`.
pub fn propagate_eigenstate<T: Real>(state: &BoxEigenstate<T>, c: Cplx<T>, y: T, alpha: T) -> Cplx<T> {
    let a = state.width();
    let k = state.wave_number();
    let s = alpha.sqrt();
    let mut acc = Cplx::new(T::zero(), T::zero());
    for sigma in [T::one(), -T::one()] {
        let shift = sigma * k * alpha;
        let m0 = moment_table(Limit::Finite((-a - y + shift) / s), (-y + shift) / s, 0)[0];
        acc += m0 * cis(sigma * k * (y + a)) * sigma;
    }
    let front = Cplx::new(T::zero(), -state.normalization() * T::lit(0.5)) * cis(-k * k * alpha * T::lit(0.5));
    acc * front * kernel_prefactor() * c
}

/// Enumerates the initial-state kinds the experiment layer can build.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData<T> {
    Polynomial(PiecewiseWavefunction<T>),
    Eigenstate(BoxEigenstate<T>),
    Superposition(Superposition<T>),
}

impl<T: Real> InitialData<T> {
    fn inner(&self) -> &dyn InitialState<T> {
        match self {
            InitialData::Polynomial(w) => w,
            InitialData::Eigenstate(s) => s,
            InitialData::Superposition(s) => s,
        }
    }
}

impl<T: Real> InitialState<T> for InitialData<T> {
    fn initial_amplitude(&self, x: T) -> Cplx<T> {
        self.inner().initial_amplitude(x)
    }
    fn propagated_amplitude(&self, y: T, alpha: T) -> Cplx<T> {
        self.inner().propagated_amplitude(y, alpha)
    }
    fn support(&self) -> Support<T> {
        self.inner().support()
    }
    fn boundary_class(&self) -> BoundaryClass {
        self.inner().boundary_class()
    }
    fn edge_derivatives(&self) -> (Vec<T>, Option<Vec<T>>) {
        self.inner().edge_derivatives()
    }
    fn validity_alpha(&self, units: &NaturalUnits<T>) -> T {
        self.inner().validity_alpha(units)
    }
    fn is_zero(&self) -> bool {
        self.inner().is_zero()
    }
}

/// Maximum admissible `Δt` for a single eigenstate: `ħ / E_n`. Callers treat
/// `Δt ≤ bound / 100` as satisfying `E_n Δt ≪ ħ`.
pub fn validity_bound<T: Real>(state: &BoxEigenstate<T>, units: &NaturalUnits<T>) -> T {
    units.hbar / state.energy(units)
}

/// `min |q_j / q_{j+2}|` over pairs of nonzero coefficients: the `α` at which
/// the `j+2` term of the expansion catches up with the `j` term.
pub fn polynomial_validity_alpha<T: Real>(wf: &PiecewiseWavefunction<T>) -> T {
    let q = wf.coefficients();
    let zero = T::zero();
    (0..q.len().saturating_sub(2))
        .filter(|&j| q[j].norm() > zero && q[j + 2].norm() > zero)
        .map(|j| q[j].norm() / q[j + 2].norm())
        .fold(T::infinity(), T::min)
}

/// `min_j |q_{2j+1}(t) / q_{2j+3}(t)|` for an explicit superposition.
pub fn superposition_validity_alpha<T: Real>(state: &Superposition<T>, t: T, units: &NaturalUnits<T>) -> T {
    (0..(EDGE_TERMS - 3) / 2)
        .filter_map(|j| {
            let lo = state.taylor_coefficient(2 * j + 1, t, units).norm();
            let hi = state.taylor_coefficient(2 * j + 3, t, units).norm();
            (hi > T::zero()).then(|| lo / hi)
        })
        .fold(T::infinity(), T::min)
}

/// Whether `Δt` lies inside the admissible region of `state`.
pub fn is_admissible<T: Real, S: InitialState<T> + ?Sized>(state: &S, delta_t: T, units: &NaturalUnits<T>) -> bool {
    units.alpha(delta_t) <= state.validity_alpha(units) / T::lit(VALIDITY_FACTOR)
}

/// Numerical controls for [`mass_beyond`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassOptions<T> {
    /// Relative accuracy of the quadrature over the resolved range.
    pub rel_tol: T,
    /// The resolved range is extended until the asymptotic tail beyond it
    /// is below `tail_rel` times the resolved mass.
    pub tail_rel: T,
    pub max_intervals: usize,
}

impl<T: Real> Default for MassOptions<T> {
    fn default() -> Self {
        Self {
            rel_tol: T::lit(1e-8),
            tail_rel: T::lit(5e-3),
            max_intervals: 4_000_000,
        }
    }
}

impl<T: Real> MassOptions<T> {
    pub fn with_rel_tol(mut self, tol: T) -> Self {
        self.rel_tol = tol;
        self
    }

    pub fn with_tail_rel(mut self, tail_rel: T) -> Self {
        self.tail_rel = tail_rel;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > T::zero() && self.tail_rel > T::zero()) {
            return Err(Error::invalid("mass tolerances must be positive"));
        }
        Ok(())
    }
}

/// `∫_c^∞ |ψ(y, Δt)|² dy` split into a resolved part and a tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassEstimate<T> {
    /// `∫_c^Y |ψ|²`.
    pub value: T,
    /// Quadrature error estimate on `[c, Y]`.
    pub quadrature_error: T,
    /// Asymptotic bound on `∫_Y^∞ |ψ|²`, reported, never added.
    pub tail_bound: T,
    /// `Y`.
    pub upper_limit: T,
}

impl<T: Real> MassEstimate<T> {
    pub fn error(&self) -> T {
        self.quadrature_error + self.tail_bound
    }
}

/// Far-field bound on `∫_Y^∞ |ψ|²` from the endpoint expansion: an edge at
/// distance `d` where `|∂^k ψ| = D_k` radiates `Σ_k D_k α^{k+1/2} / (√(2π) d^{k+1})`.
fn tail_bound<T: Real>(derivs: &(Vec<T>, Option<Vec<T>>), support: Support<T>, alpha: T, y: T) -> T {
    let mut root = T::zero();
    let mut add = |d: &[T], dist: T| {
        for (k, dk) in d.iter().enumerate() {
            let p = 2 * k as i32 + 1;
            let term = *dk * *dk * alpha.powi(p) / (T::lit(2.0) * T::PI() * T::from_i32(p).unwrap() * dist.powi(p));
            root += term.sqrt();
        }
    };
    add(&derivs.0, y);
    if let (Some(left), Support::FiniteReflecting { a }) = (&derivs.1, support) {
        add(left, y + a);
    }
    root * root
}

fn seed_breakpoints<T: Real>(lo: T, hi: T, alpha: T, support: Support<T>) -> Vec<T> {
    let s = alpha.sqrt();
    // Two edges beat at wavenumber a/α.
    let beat = match support {
        Support::FiniteReflecting { a } => T::lit(2.0) * T::PI() * alpha / a,
        Support::SemiInfinite => T::infinity(),
    };
    let mut edges = vec![lo];
    let mut y = lo;
    while y < hi {
        let w = beat.min((s + y.abs()) * T::lit(0.5));
        y = (y + w).min(hi);
        edges.push(y);
    }
    edges
}

/// Probability `P_c = ∫_c^∞ |ψ(y, Δt)|² dy` carried beyond `c ≥ 0` in time
/// `Δt`.
pub fn mass_beyond<T: Real, S: InitialState<T> + ?Sized>(
    state: &S,
    c: T,
    delta_t: T,
    units: &NaturalUnits<T>,
    opts: &MassOptions<T>,
) -> Result<MassEstimate<T>> {
    if !(c >= T::zero() && c.is_finite()) {
        return Err(Error::invalid("distance c must be non-negative"));
    }
    if !(delta_t > T::zero() && delta_t.is_finite()) {
        return Err(Error::invalid("delta_t must be positive"));
    }
    units.validate()?;
    opts.validate()?;
    let alpha = units.alpha(delta_t);
    if state.is_zero() {
        return Ok(MassEstimate {
            value: T::zero(),
            quadrature_error: T::zero(),
            tail_bound: T::zero(),
            upper_limit: c,
        });
    }
    let support = state.support();
    let derivs = state.edge_derivatives();
    let density = |y: T| state.propagated_amplitude(y, alpha).norm_sqr();
    let s = alpha.sqrt();

    let mut lo = c;
    let mut hi = (c * T::lit(4.0)).max(c + T::lit(50.0) * s);
    let limit = (c + s) * T::lit(1e8);
    let mut value = T::zero();
    let mut error = T::zero();
    let mut intervals = 0usize;
    loop {
        let edges = seed_breakpoints(lo, hi, alpha, support);
        let budget = opts.max_intervals.saturating_sub(intervals).max(edges.len() * 2);
        let q = QuadOptions::new(T::zero(), opts.rel_tol).with_max_intervals(budget);
        let piece = integrate(density, &edges, q)?;
        intervals += piece.intervals;
        value += piece.value;
        error += piece.error;
        let tail = tail_bound(&derivs, support, alpha, hi);
        if tail <= opts.tail_rel * value {
            return Ok(MassEstimate {
                value,
                quadrature_error: error,
                tail_bound: tail,
                upper_limit: hi,
            });
        }
        if hi >= limit || intervals >= opts.max_intervals {
            return Err(Error::no_convergence(
                format!("tail beyond y = {:e} still exceeds the requested fraction", hi.as_f64()),
                (value.as_f64(), 0.0),
                ((value + tail).as_f64(), 0.0),
            ));
        }
        lo = hi;
        hi *= T::lit(4.0);
    }
}

/// Output grid for [`propagate`]. Unset fields take defaults derived from
/// `α` and the support: spacing `√α/20`, range `[-2a, max(2a, 200√α)]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridSpec<T> {
    pub x_min: Option<T>,
    pub x_max: Option<T>,
    pub spacing: Option<T>,
}

/// Grid nodes `x_min + i h`, arranged so that `0` is a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedGrid<T> {
    pub x_min: T,
    pub spacing: T,
    pub len: usize,
}

impl<T: Real> ResolvedGrid<T> {
    pub fn x(&self, i: usize) -> T {
        self.x_min + self.spacing * T::from_usize_lossy(i)
    }

    pub fn x_max(&self) -> T {
        self.x(self.len - 1)
    }
}

const MAX_GRID_POINTS: usize = 50_000_000;

impl<T: Real> GridSpec<T> {
    pub fn resolve(&self, alpha: T, support: Support<T>) -> Result<ResolvedGrid<T>> {
        let s = alpha.sqrt();
        let max_h = s / T::lit(20.0);
        let a = match support {
            Support::FiniteReflecting { a } => a,
            Support::SemiInfinite => T::one(),
        };
        let h = self.spacing.unwrap_or(max_h);
        if !(h > T::zero()) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        if h > max_h * (T::one() + T::lit(1e-9)) {
            return Err(Error::invalid(format!(
                "grid spacing {:e} exceeds sqrt(alpha)/20 = {:e}",
                h.as_f64(),
                max_h.as_f64()
            )));
        }
        let x_min = self.x_min.unwrap_or(-T::lit(2.0) * a);
        let x_max = self.x_max.unwrap_or((T::lit(2.0) * a).max(T::lit(200.0) * s));
        if let Support::FiniteReflecting { a } = support {
            if x_min > -T::lit(2.0) * a * (T::one() - T::lit(1e-12)) {
                return Err(Error::invalid("grid must extend at least to -2a"));
            }
        }
        if !(x_min < T::zero() && x_max > T::zero()) {
            return Err(Error::invalid("grid must straddle the support edge at 0"));
        }
        let left = (-x_min / h).ceil().to_usize().unwrap_or(usize::MAX);
        let right = (x_max / h).ceil().to_usize().unwrap_or(usize::MAX);
        let len = left.saturating_add(right).saturating_add(1);
        if len > MAX_GRID_POINTS {
            return Err(Error::invalid(format!("grid would need {len} points")));
        }
        Ok(ResolvedGrid {
            x_min: -h * T::from_usize_lossy(left),
            spacing: h,
            len,
        })
    }
}

/// Result of one free-evolution step.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult<T> {
    pub grid: GridWavefunction<T>,
    /// `∫_0^Y |ψ|²`, see [`MassEstimate`].
    pub p_out: T,
    pub p_out_error: T,
    pub tail_bound: T,
    pub alpha: T,
    pub validity_ok: bool,
}

/// Samples `ψ(y, Δt)` on a grid and measures the mass `P_out` that crossed
/// into `y > 0`.
pub fn propagate<T: Real, S: InitialState<T> + ?Sized>(
    state: &S,
    delta_t: T,
    units: &NaturalUnits<T>,
    grid: &GridSpec<T>,
    opts: &MassOptions<T>,
) -> Result<PropagationResult<T>> {
    if !(delta_t > T::zero() && delta_t.is_finite()) {
        return Err(Error::invalid("delta_t must be positive"));
    }
    units.validate()?;
    let alpha = units.alpha(delta_t);
    let g = grid.resolve(alpha, state.support())?;
    let samples: Vec<Cplx<T>> = (0..g.len)
        .into_par_iter()
        .map(|i| state.propagated_amplitude(g.x(i), alpha))
        .collect();
    let mass = mass_beyond(state, T::zero(), delta_t, units, opts)?;
    Ok(PropagationResult {
        grid: GridWavefunction::new(g.x_min, g.x_max(), samples)?,
        p_out: mass.value,
        p_out_error: mass.error(),
        tail_bound: mass.tail_bound,
        alpha,
        validity_ok: is_admissible(state, delta_t, units),
    })
}

/// Which current a [`CurrentEstimate`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurrentKind {
    SchrodingerNet,
    UnidirectionalLr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentEstimate<T> {
    /// Probability per unit time, positive to the right.
    pub value: T,
    pub error: T,
    /// The finite `Δt` used (zero for instantaneous estimates).
    pub delta_t: T,
    pub kind: CurrentKind,
}

/// `J_LR(0; Δt) = P_out(Δt) / Δt`.
pub fn unidirectional_current_lr<T: Real, S: InitialState<T> + ?Sized>(
    state: &S,
    delta_t: T,
    units: &NaturalUnits<T>,
    opts: &MassOptions<T>,
) -> Result<CurrentEstimate<T>> {
    let m = mass_beyond(state, T::zero(), delta_t, units, opts)?;
    Ok(CurrentEstimate {
        value: m.value / delta_t,
        error: m.error() / delta_t,
        delta_t,
        kind: CurrentKind::UnidirectionalLr,
    })
}

fn node_index<T: Real>(psi: &GridWavefunction<T>, x: T, margin: usize) -> Result<usize> {
    let i = psi
        .nearest_index(x)
        .ok_or_else(|| Error::invalid("position lies outside the grid"))?;
    if (psi.x(i) - x).abs() > psi.spacing() * T::lit(1e-6) {
        return Err(Error::invalid("position must coincide with a grid node"));
    }
    if i < margin || i + margin >= psi.len() {
        return Err(Error::invalid("position too close to the grid edge"));
    }
    Ok(i)
}

/// `J = (ħ/m) Im(ψ̄ ∂ψ/∂x)` with a five-point central derivative. A plane
/// wave `e^{ikx}` carries `+ħk/m`.
pub fn schrodinger_current<T: Real>(
    psi: &GridWavefunction<T>,
    x: T,
    units: &NaturalUnits<T>,
) -> Result<CurrentEstimate<T>> {
    units.validate()?;
    let i = node_index(psi, x, 2)?;
    let f = psi.samples();
    let h = psi.spacing();
    let d = (f[i - 2] - f[i - 1] * T::lit(8.0) + f[i + 1] * T::lit(8.0) - f[i + 2]) / (h * T::lit(12.0));
    let value = units.hbar / units.mass * (f[i].conj() * d).im;
    Ok(CurrentEstimate {
        value,
        error: T::zero(),
        delta_t: T::zero(),
        kind: CurrentKind::SchrodingerNet,
    })
}

/// Exact free evolution of grid samples over `Δt` by FFT, zero-padded to
/// twice the length so that wrap-around stays outside the window.
pub fn free_evolve_grid<T: Real + FftNum>(
    psi: &GridWavefunction<T>,
    delta_t: T,
    units: &NaturalUnits<T>,
) -> Result<GridWavefunction<T>> {
    let n = psi.len();
    let big = (2 * n).next_power_of_two();
    let mut buf: Vec<Cplx<T>> = psi.samples().to_vec();
    buf.resize(big, Cplx::new(T::zero(), T::zero()));
    let mut planner = FftPlanner::<T>::new();
    planner.plan_fft_forward(big).process(&mut buf);
    let dk = T::lit(2.0) * T::PI() / (T::from_usize_lossy(big) * psi.spacing());
    let c = units.hbar * delta_t / (T::lit(2.0) * units.mass);
    for (j, v) in buf.iter_mut().enumerate() {
        let m = if j <= big / 2 { j as f64 } else { j as f64 - big as f64 };
        let k = T::lit(m) * dk;
        *v *= cis(-c * k * k);
    }
    planner.plan_fft_inverse(big).process(&mut buf);
    let scale = T::one() / T::from_usize_lossy(big);
    buf.truncate(n);
    buf.iter_mut().for_each(|v| *v *= scale);
    GridWavefunction::new(psi.x_min(), psi.x_max(), buf)
}

/// Current at `x` as the `Δt → 0` limit of
/// `(1/Δt)[∫_x^∞ |ψ(t+Δt)|² − ∫_x^∞ |ψ(t)|²]`, with each quotient taken from
/// exact free evolution of the samples and the sequence extrapolated to
/// zero step.
pub fn feynman_limit_current<T: Real + FftNum>(
    psi: &GridWavefunction<T>,
    x: T,
    delta_t_sequence: &[T],
    units: &NaturalUnits<T>,
) -> Result<CurrentEstimate<T>> {
    units.validate()?;
    if delta_t_sequence.is_empty() {
        return Err(Error::invalid("delta_t sequence must not be empty"));
    }
    if delta_t_sequence.iter().any(|d| !(*d > T::zero())) || delta_t_sequence.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("delta_t sequence must be positive and strictly decreasing"));
    }
    let i = node_index(psi, x, 2)?;
    let h = psi.spacing();
    let right_mass = |g: &GridWavefunction<T>| simpson(&g.density()[i..], h);
    let m0 = right_mass(psi);
    let quotients = delta_t_sequence
        .iter()
        .map(|&dt| Ok((right_mass(&free_evolve_grid(psi, dt, units)?) - m0) / dt))
        .collect::<Result<Vec<T>>>()?;
    let (value, err) = extrapolate_to_zero(delta_t_sequence, &quotients)?;
    let err = if err.is_finite() { err } else { T::zero() };
    // natural current scale (ħ/m)|ψ||ψ'|
    let f = psi.samples();
    let amp = f.iter().fold(T::zero(), |m, v| m.max(v.norm()));
    let slope = f.windows(2).fold(T::zero(), |m, w| m.max((w[1] - w[0]).norm() / h));
    let scale = units.hbar / units.mass * amp * slope;
    if err > T::lit(1e-3) * scale.max(value.abs()) {
        let n = quotients.len();
        return Err(Error::no_convergence(
            format!("Δt-extrapolated current has error estimate {:e}", err.as_f64()),
            (value.as_f64(), 0.0),
            (quotients[n - 1].as_f64(), 0.0),
        ));
    }
    Ok(CurrentEstimate {
        value,
        error: err,
        delta_t: delta_t_sequence[delta_t_sequence.len() - 1],
        kind: CurrentKind::SchrodingerNet,
    })
}

/// `∫|ψ|²` of the initial state over its support (trapezoid on `n` nodes).
pub fn initial_probability<T: Real, S: InitialState<T> + ?Sized>(state: &S, n: usize) -> T {
    let a = match state.support() {
        Support::FiniteReflecting { a } => a,
        Support::SemiInfinite => return T::infinity(),
    };
    let h = a / T::from_usize_lossy(n - 1);
    let d: Vec<T> = (0..n)
        .map(|i| state.initial_amplitude(-a + h * T::from_usize_lossy(i)).norm_sqr())
        .collect();
    trapezoid(&d, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fresnel::oscillatory_quad;
    use std::f64::consts::PI;

    fn poly(c: &[f64], a: f64) -> PiecewiseWavefunction<f64> {
        PiecewiseWavefunction::from_real(c, Support::FiniteReflecting { a }).unwrap()
    }

    #[test]
    fn eigenstate_closed_form_matches_polynomial_route() {
        // direct oscillatory quadrature of the kernel as the oracle
        let s = BoxEigenstate::new(2, 1.0).unwrap();
        let alpha: f64 = 1e-3;
        for y in [-0.7, -0.01, 0.0, 0.02, 0.3] {
            let f = |x: f64| Cplx::new(s.evaluate(x), 0.0);
            // x = y + √α ζ
            let r = alpha.sqrt();
            let g = |z: f64| f(y + r * z);
            let direct = oscillatory_quad(g, (-1.0 - y) / r, -y / r, 0.0, 1e-12).unwrap() * kernel_prefactor();
            let closed = s.propagated_amplitude(y, alpha);
            assert!((direct - closed).norm() < 1e-9, "y={y}: {direct} vs {closed}");
        }
    }

    #[test]
    fn validity_bound_values() {
        let u = NaturalUnits::default();
        let b = validity_bound(&BoxEigenstate::new(1, 1.0).unwrap(), &u);
        assert!((b - 2.0 / (PI * PI)).abs() < 1e-15);
        let b3 = validity_bound(&BoxEigenstate::new(3, 1.0).unwrap(), &u);
        assert!((b / b3 - 9.0).abs() < 1e-12);
        let b_wide = validity_bound(&BoxEigenstate::new(1, 2.0).unwrap(), &u);
        assert!((b_wide / b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn polynomial_validity() {
        assert_eq!(polynomial_validity_alpha(&poly(&[0.0, 1.0, 1.0], 1.0)), f64::INFINITY);
        let w = PiecewiseWavefunction::from_real(&[0.0f64, 2.0, 0.0, 0.5], Support::SemiInfinite).unwrap();
        assert!((polynomial_validity_alpha(&w) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn superposition_single_term_reduces_to_eigenstate() {
        let u = NaturalUnits::default();
        let sp = Superposition::new(1.0, &[(Cplx::new(1.0, 0.0), 1)]).unwrap();
        // |q1/q3| = 6/k²
        assert!((superposition_validity_alpha(&sp, 0.0, &u) - 6.0 / (PI * PI)).abs() < 1e-12);
        let y = 0.01;
        let a = sp.propagated_amplitude(y, 1e-4);
        let b = BoxEigenstate::new(1, 1.0).unwrap().propagated_amplitude(y, 1e-4);
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn grid_resolution_checked() {
        let w = poly(&[0.0, 1.0, 1.0], 1.0);
        let coarse = GridSpec {
            spacing: Some(0.01),
            ..GridSpec::default()
        };
        assert!(propagate(&w, 1e-4, &NaturalUnits::default(), &coarse, &MassOptions::default()).is_err());
        let g = GridSpec::<f64>::default().resolve(1e-4, w.support()).unwrap();
        let zero = (0..g.len).find(|&i| g.x(i) == 0.0);
        assert!(zero.is_some());
        assert!(g.x_min <= -2.0);
    }

    #[test]
    fn zero_state_has_no_mass() {
        let w = PiecewiseWavefunction::from_real(&[0.0, 0.0], Support::FiniteReflecting { a: 1.0 }).unwrap();
        let r = propagate(&w, 1e-3, &NaturalUnits::default(), &GridSpec::default(), &MassOptions::default()).unwrap();
        assert_eq!(r.p_out, 0.0);
        assert!(r.grid.samples().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn schrodinger_current_of_plane_wave() {
        let k: f64 = 1.3;
        let g = GridWavefunction::sample(-5.0, 5.0, 2001, |x| cis(k * x)).unwrap();
        let j = schrodinger_current(&g, 0.0, &NaturalUnits::default()).unwrap();
        assert!((j.value - k).abs() < 1e-8);
        assert!(schrodinger_current(&g, 5.0, &NaturalUnits::default()).is_err());
        assert!(schrodinger_current(&g, 0.0025, &NaturalUnits::default()).is_err());
    }

    #[test]
    fn fft_evolution_preserves_norm() {
        let g = GridWavefunction::sample(-30.0, 30.0, 3001, |x: f64| (-x * x / 4.0).exp() * cis(x)).unwrap();
        let e = free_evolve_grid(&g, 0.5, &NaturalUnits::default()).unwrap();
        assert!((g.total_probability() - e.total_probability()).abs() < 1e-10);
    }
}
