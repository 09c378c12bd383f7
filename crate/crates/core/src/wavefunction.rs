//! Initial data: compactly supported polynomial states, box eigenstates,
//! unit conventions and sampled wave functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};

/// Highest polynomial degree accepted for [`PiecewiseWavefunction`].
pub const MAX_DEGREE: usize = 16;

/// Action and mass scales. Everything downstream depends on them only
/// through `alpha = hbar * dt / mass`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalUnits<T> {
    pub hbar: T,
    pub mass: T,
}

impl<T: Real> Default for NaturalUnits<T> {
    fn default() -> Self {
        Self {
            hbar: T::one(),
            mass: T::one(),
        }
    }
}

impl<T: Real> NaturalUnits<T> {
    pub fn new(hbar: T, mass: T) -> Result<Self> {
        let units = Self { hbar, mass };
        units.validate()?;
        Ok(units)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > T::zero() && self.hbar.is_finite()) {
            return Err(Error::invalid("hbar must be positive and finite"));
        }
        if !(self.mass > T::zero() && self.mass.is_finite()) {
            return Err(Error::invalid("mass must be positive and finite"));
        }
        Ok(())
    }

    /// Short-time parameter `hbar * dt / m`.
    pub fn alpha(&self, delta_t: T) -> T {
        self.hbar * delta_t / self.mass
    }

    /// Inverse of [`alpha`](Self::alpha).
    pub fn delta_t(&self, alpha: T) -> T {
        alpha * self.mass / self.hbar
    }
}

/// Where the initial state lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support<T> {
    /// `[-a, 0]` between two reflecting walls; `Q(-a) = 0` is enforced.
    FiniteReflecting { a: T },
    /// The negative half-line `(-inf, 0]`.
    SemiInfinite,
}

impl<T: Real> Support<T> {
    /// Left end of the support, `None` for the half-line.
    pub fn left(&self) -> Option<T> {
        match *self {
            Support::FiniteReflecting { a } => Some(-a),
            Support::SemiInfinite => None,
        }
    }

    pub fn contains(&self, x: T) -> bool {
        match *self {
            Support::FiniteReflecting { a } => x >= -a && x <= T::zero(),
            Support::SemiInfinite => x <= T::zero(),
        }
    }
}

/// Behaviour of the state at the right edge `x = 0` of its support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryClass {
    /// `psi(0) = 0`, `psi'(0) != 0`.
    ContinuousDerivativeJump,
    /// `psi(0) != 0`.
    Discontinuous,
    /// `psi(0) = psi'(0) = 0`.
    SmoothZero,
}

/// Polynomial `Q(x) = sum q_j x^j` restricted to its support, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseWavefunction<T> {
    coefficients: Vec<Cplx<T>>,
    support: Support<T>,
}

impl<T: Real> PiecewiseWavefunction<T> {
    /// Validates degree, support width and, for reflecting supports, the
    /// left boundary condition `Q(-a) = 0` (relative tolerance `1e-12`
    /// against `sum |q_j| a^j`).
    pub fn new(coefficients: Vec<Cplx<T>>, support: Support<T>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("wave function needs at least one coefficient"));
        }
        if coefficients.len() > MAX_DEGREE + 1 {
            return Err(Error::invalid(format!(
                "polynomial degree {} exceeds the cap of {MAX_DEGREE}",
                coefficients.len() - 1
            )));
        }
        if coefficients.iter().any(|q| !(q.re.is_finite() && q.im.is_finite())) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        if let Support::FiniteReflecting { a } = support {
            if !(a > T::zero() && a.is_finite()) {
                return Err(Error::invalid("support width a must be positive and finite"));
            }
            let wf = Self {
                coefficients: coefficients.clone(),
                support,
            };
            let value = wf.polynomial(-a).norm();
            let scale: T = coefficients
                .iter()
                .enumerate()
                .map(|(j, q)| q.norm() * a.powi(j as i32))
                .sum();
            let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
            if value > tol * scale {
                return Err(Error::invalid(format!(
                    "boundary condition Q(-a) = 0 violated: |Q(-a)| = {value:e}"
                )));
            }
        }
        Ok(Self { coefficients, support })
    }

    /// Real-coefficient convenience constructor.
    pub fn from_real(coefficients: &[T], support: Support<T>) -> Result<Self> {
        Self::new(coefficients.iter().map(|&q| Cplx::new(q, T::zero())).collect(), support)
    }

    pub fn coefficients(&self) -> &[Cplx<T>] {
        &self.coefficients
    }

    pub fn support(&self) -> Support<T> {
        self.support
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// `Q(x)` without the support cut-off.
    pub fn polynomial(&self, x: T) -> Cplx<T> {
        self.coefficients
            .iter()
            .rev()
            .fold(Cplx::new(T::zero(), T::zero()), |acc, q| acc * x + q)
    }

    /// `k`-th derivative of `Q` at `x`, again ignoring the support.
    pub fn polynomial_derivative(&self, x: T, k: usize) -> Cplx<T> {
        let mut acc = Cplx::new(T::zero(), T::zero());
        for j in (k..self.coefficients.len()).rev() {
            let falling: T = (0..k).map(|i| T::from_usize_lossy(j - i)).fold(T::one(), |p, f| p * f);
            acc = acc * x + self.coefficients[j] * falling;
        }
        acc
    }

    /// The initial amplitude: `Q(x)` on the support, exactly zero outside.
    pub fn evaluate(&self, x: T) -> Cplx<T> {
        if self.support.contains(x) {
            self.polynomial(x)
        } else {
            Cplx::new(T::zero(), T::zero())
        }
    }

    pub fn classify_boundary(&self) -> BoundaryClass {
        let zero = Cplx::new(T::zero(), T::zero());
        let q0 = self.coefficients[0];
        let q1 = self.coefficients.get(1).copied().unwrap_or(zero);
        if q0 != zero {
            BoundaryClass::Discontinuous
        } else if q1 != zero {
            BoundaryClass::ContinuousDerivativeJump
        } else {
            BoundaryClass::SmoothZero
        }
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(&self, c: Cplx<T>) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|q| q * c).collect(),
            support: self.support,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|q| q.re == T::zero() && q.im == T::zero())
    }
}

/// Particle-in-a-box eigenstate on `[-a, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxEigenstate<T> {
    n: u32,
    a: T,
}

impl<T: Real> BoxEigenstate<T> {
    pub fn new(n: u32, a: T) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("quantum number n must be positive"));
        }
        if !(a > T::zero() && a.is_finite()) {
            return Err(Error::invalid("box width a must be positive and finite"));
        }
        Ok(Self { n, a })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn width(&self) -> T {
        self.a
    }

    /// Wave number `n pi / a`.
    pub fn wave_number(&self) -> T {
        T::from_u32(self.n).unwrap() * T::PI() / self.a
    }

    pub fn normalization(&self) -> T {
        (T::lit(2.0) / self.a).sqrt()
    }

    /// `sqrt(2/a) sin(n pi (x + a) / a)` on `[-a, 0]`, zero elsewhere. The
    /// endpoints return exact zeros.
    pub fn evaluate(&self, x: T) -> T {
        if x < -self.a || x > T::zero() || x == -self.a || x == T::zero() {
            return T::zero();
        }
        self.normalization() * (self.wave_number() * (x + self.a)).sin()
    }

    pub fn energy(&self, units: &NaturalUnits<T>) -> T {
        let k = self.wave_number();
        units.hbar * units.hbar * k * k / (T::lit(2.0) * units.mass)
    }

    /// `j`-th derivative of the unrestricted sine at `x = 0`.
    pub fn derivative_at_right_edge(&self, j: usize) -> T {
        // sin(k(x + a)) = (-1)^n sin(kx); odd derivatives only.
        if j.is_multiple_of(2) {
            return T::zero();
        }
        let k = self.wave_number();
        let parity = if self.n.is_multiple_of(2) { T::one() } else { -T::one() };
        let m = (j - 1) / 2;
        let sign = if m.is_multiple_of(2) { T::one() } else { -T::one() };
        parity * sign * self.normalization() * k.powi(j as i32)
    }

    /// Taylor polynomial of the eigenstate about `x = 0`, truncated at
    /// `order`. The truncation does not vanish at `-a`, so the result is
    /// returned on the half-line.
    pub fn taylor_coefficients(&self, order: usize) -> Result<PiecewiseWavefunction<T>> {
        if order < 1 {
            return Err(Error::invalid("Taylor order must be at least 1"));
        }
        if order > MAX_DEGREE {
            return Err(Error::invalid(format!("Taylor order exceeds degree cap {MAX_DEGREE}")));
        }
        let mut factorial = T::one();
        let mut coefficients = Vec::with_capacity(order + 1);
        for j in 0..=order {
            if j > 0 {
                factorial *= T::from_usize_lossy(j);
            }
            coefficients.push(Cplx::new(self.derivative_at_right_edge(j) / factorial, T::zero()));
        }
        PiecewiseWavefunction::new(coefficients, Support::SemiInfinite)
    }
}

/// Free function form of [`BoxEigenstate::taylor_coefficients`].
pub fn eigenstate_coefficients<T: Real>(state: &BoxEigenstate<T>, order: usize) -> Result<PiecewiseWavefunction<T>> {
    state.taylor_coefficients(order)
}

/// Complex samples on a uniform grid `x_min, x_min + h, ..., x_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWavefunction<T> {
    x_min: T,
    x_max: T,
    samples: Vec<Cplx<T>>,
}

impl<T: Real> GridWavefunction<T> {
    pub fn new(x_min: T, x_max: T, samples: Vec<Cplx<T>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("grid needs at least two samples"));
        }
        if !(x_max > x_min) {
            return Err(Error::invalid("grid needs x_max > x_min"));
        }
        Ok(Self { x_min, x_max, samples })
    }

    /// Samples `f` at `n` uniformly spaced points.
    pub fn sample<F: Fn(T) -> Cplx<T>>(x_min: T, x_max: T, n: usize, f: F) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("grid needs at least two samples"));
        }
        let h = (x_max - x_min) / T::from_usize_lossy(n - 1);
        let samples = (0..n).map(|i| f(x_min + h * T::from_usize_lossy(i))).collect();
        Self::new(x_min, x_max, samples)
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn spacing(&self) -> T {
        (self.x_max - self.x_min) / T::from_usize_lossy(self.samples.len() - 1)
    }

    pub fn x(&self, i: usize) -> T {
        self.x_min + self.spacing() * T::from_usize_lossy(i)
    }

    pub fn samples(&self) -> &[Cplx<T>] {
        &self.samples
    }

    pub fn density(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.norm_sqr()).collect()
    }

    /// Trapezoid estimate of the total probability.
    pub fn total_probability(&self) -> T {
        crate::quadrature::trapezoid(&self.density(), self.spacing())
    }

    /// Index of the node nearest to `x`, if `x` lies on the grid.
    pub fn nearest_index(&self, x: T) -> Option<usize> {
        if x < self.x_min || x > self.x_max {
            return None;
        }
        let i = ((x - self.x_min) / self.spacing()).round().to_usize()?;
        Some(i.min(self.samples.len() - 1))
    }
}
