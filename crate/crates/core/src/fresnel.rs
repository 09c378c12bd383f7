//! Fresnel-type integrals `∫ f(ζ) exp(iζ²/2) dζ`.
//!
//! Two independent routes are provided:
//!
//! * exact reductions: the plain Fresnel integral from its power series or
//!   continued fraction, and the moments `∫ ζ^k e^{iζ²/2}` by integration by
//!   parts. These drive the propagation hot path.
//! * direct quadrature on panels no wider than a quarter of the local
//!   oscillation, with infinite limits taken as the `ε → 0` limit of the
//!   damped integrand `e^{(-ε+i)ζ²/2}` and extrapolated in `ε`.
//!
//! Infinite lower limits always mean the damped limit; the boundary terms at
//! `-∞` of the integration-by-parts identities vanish in that sense.

use crate::error::{Error, Result};
use crate::quadrature::{extrapolate_to_zero, integrate, QuadOptions};
use crate::scalar::{cis, Cplx, Real};
use crate::wavefunction::{PiecewiseWavefunction, Support};

/// Integration limit that may be `-∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit<T> {
    NegInfinity,
    Finite(T),
}

impl<T: Real> Limit<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Limit::Finite(x) => Some(x),
            Limit::NegInfinity => None,
        }
    }
}

impl<T: Real> From<T> for Limit<T> {
    fn from(x: T) -> Self {
        if x == T::neg_infinity() {
            Limit::NegInfinity
        } else {
            Limit::Finite(x)
        }
    }
}

/// How infinite limits are approached.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationPolicy<T> {
    epsilon_sequence: Vec<T>,
    pub richardson_extrapolate: bool,
}

impl<T: Real> Default for RegularizationPolicy<T> {
    fn default() -> Self {
        Self {
            epsilon_sequence: vec![T::lit(1e-2), T::lit(1e-3), T::lit(1e-4)],
            richardson_extrapolate: true,
        }
    }
}

impl<T: Real> RegularizationPolicy<T> {
    pub fn new(epsilon_sequence: Vec<T>, richardson_extrapolate: bool) -> Result<Self> {
        if epsilon_sequence.is_empty() {
            return Err(Error::invalid("epsilon sequence must not be empty"));
        }
        if epsilon_sequence.iter().any(|e| !(*e > T::zero() && e.is_finite())) {
            return Err(Error::invalid("epsilon values must be positive"));
        }
        if epsilon_sequence.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("epsilon sequence must be strictly decreasing"));
        }
        Ok(Self {
            epsilon_sequence,
            richardson_extrapolate,
        })
    }

    pub fn epsilon_sequence(&self) -> &[T] {
        &self.epsilon_sequence
    }
}

const SERIES_CUTOFF: f64 = 1.5;

/// `∫_0^u e^{iζ²/2} dζ`.
pub fn fresnel_integral<T: Real>(u: T) -> Cplx<T> {
    if u.abs() <= T::lit(SERIES_CUTOFF) {
        fresnel_series(u)
    } else {
        let half_line = half_line_value::<T>();
        let tail = fresnel_tail(u.abs());
        if u > T::zero() {
            half_line - tail
        } else {
            tail - half_line
        }
    }
}

/// `∫_{-∞}^u e^{iζ²/2} dζ`.
pub fn fresnel_from_neg_infinity<T: Real>(u: T) -> Cplx<T> {
    if u < -T::lit(SERIES_CUTOFF) {
        fresnel_tail(-u)
    } else {
        half_line_value::<T>() + fresnel_integral(u)
    }
}

/// `∫_{-∞}^0 e^{iζ²/2} dζ = √(π/2) e^{iπ/4}`.
pub fn half_line_value<T: Real>() -> Cplx<T> {
    let v = T::PI().sqrt() * T::lit(0.5);
    Cplx::new(v, v)
}

fn fresnel_series<T: Real>(u: T) -> Cplx<T> {
    // Σ (i/2)^n u^{2n+1} / (n! (2n+1))
    let z = Cplx::new(T::zero(), u * u * T::lit(0.5));
    let mut term = Cplx::new(u, T::zero());
    let mut sum = term;
    for n in 1..200 {
        let nf = T::from_usize_lossy(n);
        term = term * z / nf;
        let contrib = term / (T::lit(2.0) * nf + T::one());
        sum += contrib;
        if contrib.norm() <= T::epsilon() * sum.norm() {
            break;
        }
    }
    sum
}

/// `∫_u^∞ e^{iζ²/2} dζ` for `u > 0`, from the continued fraction of the
/// complementary error function (modified Lentz):
/// `u e^{iu²/2} / (b_0 - 1·2/(b_1 - 3·4/(b_2 - ...)))`, `b_k = 1 - iu² + 4k`.
fn fresnel_tail<T: Real>(u: T) -> Cplx<T> {
    let tiny = T::min_positive_value() * T::lit(1e10);
    let one = Cplx::new(T::one(), T::zero());
    let b0 = Cplx::new(T::one(), -u * u);
    let mut f = b0;
    let mut c = b0;
    let mut d = Cplx::new(T::zero(), T::zero());
    for k in 1..1000 {
        let kf = T::from_usize_lossy(k);
        let a = -(T::lit(2.0) * kf - T::one()) * (T::lit(2.0) * kf);
        let b = b0 + T::lit(4.0) * kf;
        d = b + d * a;
        if d.norm() < tiny {
            d = Cplx::new(tiny, T::zero());
        }
        c = b + one * a / c;
        if c.norm() < tiny {
            c = Cplx::new(tiny, T::zero());
        }
        d = one / d;
        let delta = c * d;
        f *= delta;
        if (delta - one).norm() <= T::epsilon() {
            break;
        }
    }
    cis(u * u * T::lit(0.5)) * u / f
}

/// `∫_L^U e^{iζ²/2} dζ`, arranged so that far-out limits on the same side
/// of the origin never subtract the constant `√(π/2) e^{iπ/4}`.
pub fn fresnel_between<T: Real>(lower: Limit<T>, upper: T) -> Cplx<T> {
    let cut = T::lit(SERIES_CUTOFF);
    match lower {
        Limit::NegInfinity => fresnel_from_neg_infinity(upper),
        Limit::Finite(l) => {
            if l == upper {
                Cplx::new(T::zero(), T::zero())
            } else if upper < -cut && l < -cut {
                fresnel_tail(-upper) - fresnel_tail(-l)
            } else if l > cut && upper > cut {
                fresnel_tail(l) - fresnel_tail(upper)
            } else {
                fresnel_integral(upper) - fresnel_integral(l)
            }
        }
    }
}

/// Exact moments `M_k = ∫_L^U ζ^k e^{iζ²/2} dζ` for `k = 0..=max_k`, from
/// `M_k = -i [ζ^{k-1} e^{iζ²/2}]_L^U + i (k-1) M_{k-2}`.
pub fn moment_table<T: Real>(lower: Limit<T>, upper: T, max_k: usize) -> Vec<Cplx<T>> {
    let i = Cplx::new(T::zero(), T::one());
    let zero = Cplx::new(T::zero(), T::zero());
    if lower == Limit::Finite(upper) {
        return vec![zero; max_k + 1];
    }
    let mut out = Vec::with_capacity(max_k + 1);
    let eu = cis(upper * upper * T::lit(0.5));
    let el = lower.finite().map(|l| (l, cis(l * l * T::lit(0.5))));
    out.push(fresnel_between(lower, upper));
    let mut pu = T::one();
    let mut pl = T::one();
    for k in 1..=max_k {
        if k >= 2 {
            pu *= upper;
            if let Some((l, _)) = el {
                pl *= l;
            }
        }
        let mut boundary = eu * pu;
        if let Some((_, e)) = el {
            boundary -= e * pl;
        }
        let mut m = -i * boundary;
        if k >= 2 {
            m += i * out[k - 2] * T::from_usize_lossy(k - 1);
        }
        out.push(m);
    }
    out
}

/// Exact `∫_L^U ζ^j e^{iζ²/2} dζ`.
pub fn fresnel_moment_exact<T: Real>(j: usize, lower: Limit<T>, upper: T) -> Cplx<T> {
    moment_table(lower, upper, j)[j]
}

/// Panel edges on `[a, b]` such that every panel spans at most a quarter
/// oscillation of `e^{iζ²/2}`: width `≤ π / (4 max(|ζ|, 1))` over the panel.
pub fn quarter_oscillation_panels<T: Real>(a: T, b: T) -> Vec<T> {
    let q = T::FRAC_PI_4();
    let mut edges = vec![a];
    let mut x = a;
    while x < b {
        let w = if x < T::zero() {
            q / x.abs().max(T::one())
        } else if x + q <= T::one() {
            q
        } else {
            // w (x + w) = q
            T::lit(2.0) * q / (x + (x * x + T::lit(4.0) * q).sqrt())
        };
        let mut next = (x + w).min(b);
        if x < T::zero() && next > T::zero() {
            next = T::zero().min(b);
        }
        x = next;
        edges.push(x);
    }
    edges
}

/// Adaptive quadrature of `f(ζ) e^{(-δ+i)ζ²/2}` on `[a, b]`, seeded with
/// quarter-oscillation panels. `damping` is `δ ≥ 0`.
pub fn oscillatory_quad<T, F>(f: F, a: T, b: T, damping: T, tol: T) -> Result<Cplx<T>>
where
    T: Real,
    F: Fn(T) -> Cplx<T>,
{
    if !(a <= b) {
        return Err(Error::invalid("oscillatory quadrature needs a <= b"));
    }
    if a == b {
        return Ok(Cplx::new(T::zero(), T::zero()));
    }
    let edges = quarter_oscillation_panels(a, b);
    let opts = QuadOptions::new(tol, T::epsilon() * T::lit(64.0)).with_max_intervals(edges.len() * 4 + 1000);
    let half = T::lit(0.5);
    let integrand = |z: T| f(z) * Cplx::new(-damping * z * z * half, z * z * half).exp();
    Ok(integrate(integrand, &edges, opts)?.value)
}

fn neg_infinity_cutoff<T: Real>(epsilon: T, power: i32, tol: T) -> T {
    // ∫_{-∞}^{-Λ} |ζ|^p e^{-εζ²/2} ≤ Λ^{p-1} e^{-εΛ²/2} / ε once εΛ² ≥ p - 1
    let target = tol * T::lit(0.1);
    let mut lam = (T::lit(2.0) / epsilon).sqrt().max(T::lit(4.0));
    for _ in 0..400 {
        let bound = lam.powi(power - 1) * (-epsilon * lam * lam * T::lit(0.5)).exp() / epsilon;
        if bound < target && lam * lam * epsilon >= T::from_i32(power - 1).unwrap() {
            break;
        }
        lam *= T::lit(1.05);
    }
    lam
}

/// Integral of `weight(ζ) e^{iζ²/2}` over `[lower, upper]`, taking the damped
/// limit when `lower = -∞`. `power` bounds the growth
/// `|weight(ζ)| ≤ C |ζ|^power` and sets the truncation point.
pub fn regularized_integral<T, F>(
    weight: F,
    power: i32,
    lower: Limit<T>,
    upper: T,
    policy: &RegularizationPolicy<T>,
    tol: T,
) -> Result<Cplx<T>>
where
    T: Real,
    F: Fn(T) -> Cplx<T> + Copy,
{
    if !(tol > T::zero()) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    match lower {
        Limit::Finite(l) => {
            if l > upper {
                return Err(Error::invalid("lower limit exceeds upper limit"));
            }
            oscillatory_quad(weight, l, upper, T::zero(), tol)
        }
        Limit::NegInfinity => {
            let (values, floors) = damped_values(weight, power, upper, policy, tol)?;
            let eps = policy.epsilon_sequence();
            let n = values.len();
            let (value, mut err) = if policy.richardson_extrapolate && n >= 2 {
                extrapolate_to_zero(eps, &values)?
            } else if n >= 2 {
                (values[n - 1], (values[n - 1] - values[n - 2]).norm())
            } else {
                (values[0], T::zero())
            };
            // quadrature error carried through the extrapolation weights
            let weights = if policy.richardson_extrapolate {
                lagrange_weights_at_zero(eps)
            } else {
                let mut w = vec![T::zero(); n];
                w[n - 1] = T::one();
                w
            };
            err += weights.iter().zip(&floors).map(|(w, f)| w.abs() * *f).sum::<T>();
            if !(err <= tol * value.norm().max(T::one())) {
                let prev = if n >= 2 { values[n - 2] } else { values[0] };
                return Err(Error::no_convergence(
                    format!("ε-extrapolated integral has error estimate {:e}", err.as_f64()),
                    (value.re.as_f64(), value.im.as_f64()),
                    (prev.re.as_f64(), prev.im.as_f64()),
                ));
            }
            Ok(value)
        }
    }
}

fn lagrange_weights_at_zero<T: Real>(nodes: &[T]) -> Vec<T> {
    (0..nodes.len())
        .map(|k| {
            nodes
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != k)
                .fold(T::one(), |acc, (_, &x)| acc * x / (x - nodes[k]))
        })
        .collect()
}

/// Damped integrals over `(-∞, upper]`, one per `ε` of the policy.
pub fn damped_sequence<T, F>(
    weight: F,
    power: i32,
    upper: T,
    policy: &RegularizationPolicy<T>,
    tol: T,
) -> Result<Vec<Cplx<T>>>
where
    T: Real,
    F: Fn(T) -> Cplx<T> + Copy,
{
    Ok(damped_values(weight, power, upper, policy, tol)?.0)
}

type DampedValues<T> = (Vec<Cplx<T>>, Vec<T>);

fn damped_values<T, F>(
    weight: F,
    power: i32,
    upper: T,
    policy: &RegularizationPolicy<T>,
    tol: T,
) -> Result<DampedValues<T>>
where
    T: Real,
    F: Fn(T) -> Cplx<T> + Copy,
{
    let pairs: Vec<(Cplx<T>, T)> = policy
        .epsilon_sequence()
        .iter()
        .map(|&e| {
            let lam = neg_infinity_cutoff(e, power, tol);
            let start = -lam.max(upper.abs() + T::one());
            // Cancellation limits the attainable absolute accuracy to a few
            // ulps of ∫|f|.
            let floor = T::epsilon() * T::lit(1000.0) * damped_abs_integral(e, power.max(0), upper);
            let inner = (tol * T::lit(0.1)).max(floor);
            oscillatory_quad(weight, start, upper, e, inner).map(|v| (v, inner))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// `∫_{-∞}^{upper} |ζ|^p e^{-εζ²/2} dζ`, bounded above for `upper > 0`.
fn damped_abs_integral<T: Real>(epsilon: T, p: i32, upper: T) -> T {
    // Γ((p+1)/2) from Γ(1/2) = √π, Γ(1) = 1
    let mut g = if p % 2 == 0 { T::PI().sqrt() } else { T::one() };
    let mut s = if p % 2 == 0 { T::lit(0.5) } else { T::one() };
    while s < T::from_i32(p + 1).unwrap() * T::lit(0.5) {
        g *= s;
        s += T::one();
    }
    let half_line = (T::lit(2.0) / epsilon).powf(T::from_i32(p + 1).unwrap() * T::lit(0.5)) * g * T::lit(0.5);
    let right = if upper > T::zero() { upper.powi(p + 1) / T::from_i32(p + 1).unwrap() } else { T::zero() };
    half_line + right
}

/// `∫_{lower}^{upper} ζ^j e^{iζ²/2} dζ` by direct quadrature, absolute error
/// about `tol`.
pub fn fresnel_moment<T: Real>(
    j: usize,
    lower: Limit<T>,
    upper: T,
    policy: &RegularizationPolicy<T>,
    tol: T,
) -> Result<Cplx<T>> {
    if let Limit::Finite(l) = lower {
        if l > upper {
            return Err(Error::invalid("fresnel_moment needs lower <= upper"));
        }
    }
    let p = j as i32;
    regularized_integral(move |z: T| Cplx::new(z.powi(p), T::zero()), p, lower, upper, policy, tol)
}

/// Weights for the tail integrals `∫_{lower}^{-η} w(ζ) e^{iζ²/2} dζ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailWeight {
    /// `η / ζ²`
    EtaOverZetaSq,
    /// `1`
    One,
    /// `η² / ζ²`
    EtaSqOverZetaSq,
}

/// `∫_{lower}^{-η} w(ζ) e^{iζ²/2} dζ` by quadrature.
pub fn tail_weighted_integral<T: Real>(
    weight: TailWeight,
    eta: T,
    lower: Limit<T>,
    policy: &RegularizationPolicy<T>,
    tol: T,
) -> Result<Cplx<T>> {
    if !(eta > T::zero()) {
        return Err(Error::invalid("eta must be positive"));
    }
    let upper = -eta;
    match weight {
        TailWeight::One => regularized_integral(|_z: T| Cplx::new(T::one(), T::zero()), 0, lower, upper, policy, tol),
        TailWeight::EtaOverZetaSq => {
            regularized_integral(move |z: T| Cplx::new(eta / (z * z), T::zero()), 0, lower, upper, policy, tol)
        }
        TailWeight::EtaSqOverZetaSq => {
            regularized_integral(move |z: T| Cplx::new(eta * eta / (z * z), T::zero()), 0, lower, upper, policy, tol)
        }
    }
}

/// Closed form of [`tail_weighted_integral`], from
/// `∫ e^{iζ²/2}/ζ² dζ = [-e^{iζ²/2}/ζ] + i ∫ e^{iζ²/2} dζ`.
pub fn tail_weighted_exact<T: Real>(weight: TailWeight, eta: T, lower: Limit<T>) -> Cplx<T> {
    let upper = -eta;
    let m0 = fresnel_between(lower, upper);
    let i = Cplx::new(T::zero(), T::one());
    let mut inv_sq = -cis(upper * upper * T::lit(0.5)) / upper + i * m0;
    if let Limit::Finite(l) = lower {
        inv_sq += cis(l * l * T::lit(0.5)) / l;
    }
    match weight {
        TailWeight::One => m0,
        TailWeight::EtaOverZetaSq => inv_sq * eta,
        TailWeight::EtaSqOverZetaSq => inv_sq * (eta * eta),
    }
}

/// `1/√(2πi)` on the branch `√i = e^{iπ/4}`, i.e. `e^{-iπ/4}/√(2π)`.
pub fn kernel_prefactor<T: Real>() -> Cplx<T> {
    let r = T::one() / (T::lit(2.0) * T::PI()).sqrt() * T::FRAC_1_SQRT_2();
    Cplx::new(r, -r)
}

/// Free evolution of a polynomial state over `α = ħΔt/m`:
/// `ψ(y) = (2πiα)^{-1/2} ∫_{support} Q(x) e^{i(x-y)²/2α} dx`.
///
/// With `x = y + √α ζ` the integrand becomes `Q(y + √α ζ) e^{iζ²/2}`; the
/// shifted polynomial is expanded in powers of `ζ` and integrated against
/// the exact moments.
pub fn propagator_kernel_integral<T: Real>(wf: &PiecewiseWavefunction<T>, y: T, alpha: T) -> Result<Cplx<T>> {
    if !(alpha > T::zero() && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    Ok(propagate_polynomial(wf, y, alpha))
}

pub(crate) fn propagate_polynomial<T: Real>(wf: &PiecewiseWavefunction<T>, y: T, alpha: T) -> Cplx<T> {
    if wf.is_zero() {
        return Cplx::new(T::zero(), T::zero());
    }
    let s = alpha.sqrt();
    let upper = -y / s;
    let lower = match wf.support() {
        Support::FiniteReflecting { a } => Limit::Finite((-a - y) / s),
        Support::SemiInfinite => Limit::NegInfinity,
    };
    let moments = moment_table(lower, upper, wf.degree());
    let mut acc = Cplx::new(T::zero(), T::zero());
    let mut scale = T::one();
    for (k, m) in moments.iter().enumerate() {
        if k > 0 {
            scale = scale * s / T::from_usize_lossy(k);
        }
        acc += wf.polynomial_derivative(y, k) * scale * m;
    }
    acc * kernel_prefactor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: Cplx<f64>, b: Cplx<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn half_line_constant() {
        let v: Cplx<f64> = half_line_value();
        assert!((v.re - 0.886_226_925_452_758).abs() < 1e-15);
        assert_eq!(v.re, v.im);
    }

    #[test]
    fn series_and_fraction_agree_near_cutoff() {
        for u in [1.2, 1.4999, 1.5001, 1.8, 2.5] {
            let a = fresnel_series(u);
            let b = half_line_value::<f64>() - fresnel_tail(u);
            assert!(close(a, b, 5e-14), "u={u}: {a} vs {b}");
        }
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(fresnel_moment_exact(0, Limit::Finite(0.0), 0.0), Cplx::new(0.0, 0.0));
        let v = fresnel_moment(0, Limit::Finite(0.0), 0.0, &RegularizationPolicy::default(), 1e-10).unwrap();
        assert_eq!(v, Cplx::new(0.0, 0.0));
    }

    #[test]
    fn reversed_limits_rejected() {
        assert!(fresnel_moment(0, Limit::Finite(1.0), 0.0, &RegularizationPolicy::default(), 1e-8).is_err());
        assert!(tail_weighted_integral(TailWeight::One, 0.0, Limit::Finite(-2.0), &RegularizationPolicy::default(), 1e-8).is_err());
    }

    #[test]
    fn first_moment_closed_form() {
        let t = 10.0f64;
        let expected = -Cplx::<f64>::i() * (Cplx::new(1.0, 0.0) - cis(t * t / 2.0));
        let exact = fresnel_moment_exact(1, Limit::Finite(-t), 0.0);
        assert!(close(exact, expected, 1e-13));
        let quad = fresnel_moment(1, Limit::Finite(-t), 0.0, &RegularizationPolicy::default(), 1e-11).unwrap();
        assert!(close(quad, expected, 1e-10), "{quad}");
    }

    #[test]
    fn moments_match_quadrature() {
        for j in 0..7 {
            for (l, u) in [(-3.0f64, 2.0f64), (-12.0, -4.0), (0.5, 7.0)] {
                let exact = fresnel_moment_exact(j, Limit::Finite(l), u);
                let quad = fresnel_moment(j, Limit::Finite(l), u, &RegularizationPolicy::default(), 1e-10).unwrap();
                let scale = 1.0f64.max(f64::max(l.abs(), u.abs()).powi(j as i32 - 1));
                assert!(close(exact, quad, 1e-9 * scale), "j={j} [{l},{u}]: {exact} vs {quad}");
            }
        }
    }

    #[test]
    fn kernel_branch() {
        let p: Cplx<f64> = kernel_prefactor();
        let expected = Cplx::from_polar(1.0 / (2.0 * PI).sqrt(), -PI / 4.0);
        assert!(close(p, expected, 1e-16));
        assert!(close(p * p * Cplx::i() * 2.0 * PI, Cplx::new(1.0, 0.0), 1e-15));
    }

    #[test]
    fn policy_validation() {
        assert!(RegularizationPolicy::new(vec![1e-3, 1e-2], true).is_err());
        assert!(RegularizationPolicy::new(vec![1e-2, -1e-3], true).is_err());
        assert!(RegularizationPolicy::<f64>::new(vec![], true).is_err());
        assert!(RegularizationPolicy::new(vec![1e-2, 1e-3], false).is_ok());
    }

    #[test]
    fn panels_are_quarter_oscillations() {
        let edges = quarter_oscillation_panels(-20.0f64, 15.0);
        for w in edges.windows(2) {
            let m = w[0].abs().max(w[1].abs()).max(1.0);
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] <= PI / (4.0 * m) * (1.0 + 1e-12));
        }
        assert_eq!(*edges.last().unwrap(), 15.0);
    }

    #[test]
    fn works_in_single_precision() {
        let v: Cplx<f32> = fresnel_integral(3.0f32);
        let d: Cplx<f64> = fresnel_integral(3.0f64);
        assert!((v.re as f64 - d.re).abs() < 1e-5 && (v.im as f64 - d.im).abs() < 1e-5);
    }
}
