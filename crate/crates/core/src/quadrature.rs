//! Adaptive Gauss-Kronrod quadrature, composite rules and polynomial
//! extrapolation to zero step.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};

/// Values an integrand may return: real or complex scalars.
pub trait QuadValue<T: Real>:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<T, Output = Self> + Send + Sync
{
    fn zero() -> Self;
    fn norm(self) -> T;
    fn to_pair(self) -> (f64, f64);
}

impl<T: Real> QuadValue<T> for T {
    fn zero() -> Self {
        T::zero()
    }
    fn norm(self) -> T {
        self.abs()
    }
    fn to_pair(self) -> (f64, f64) {
        (self.as_f64(), 0.0)
    }
}

impl<T: Real> QuadValue<T> for Cplx<T> {
    fn zero() -> Self {
        Cplx::new(T::zero(), T::zero())
    }
    fn norm(self) -> T {
        Cplx::norm(self)
    }
    fn to_pair(self) -> (f64, f64) {
        (self.re.as_f64(), self.im.as_f64())
    }
}

// Kronrod abscissae (non-negative half) and weights for the 21-point rule;
// the odd-indexed abscissae are the 10-point Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// One application of the 21-point Kronrod rule with its embedded
/// 10-point Gauss rule. Returns `(kronrod, |kronrod - gauss|)`.
pub fn gk21<T, V, F>(f: &F, a: T, b: T) -> (V, T)
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V + ?Sized,
{
    let half = (b - a) * T::lit(0.5);
    let center = a + half;
    let fc = f(center);
    let mut kronrod = fc * T::lit(WGK[10]);
    let mut gauss = V::zero();
    for i in 0..10 {
        let dx = half * T::lit(XGK[i]);
        let pair = f(center - dx) + f(center + dx);
        kronrod = kronrod + pair * T::lit(WGK[i]);
        if i % 2 == 1 {
            gauss = gauss + pair * T::lit(WG[i / 2]);
        }
    }
    let k = kronrod * half;
    let g = gauss * half;
    (k, (k - g).norm())
}

/// Composite 10-point Gauss-Legendre rule on a single panel.
pub fn gauss10<T, V, F>(f: &F, a: T, b: T) -> V
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V + ?Sized,
{
    let half = (b - a) * T::lit(0.5);
    let center = a + half;
    let mut acc = V::zero();
    for i in 0..5 {
        let dx = half * T::lit(XGK[2 * i + 1]);
        acc = acc + (f(center - dx) + f(center + dx)) * T::lit(WG[i]);
    }
    acc * half
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_intervals: usize,
}

impl<T: Real> QuadOptions<T> {
    pub fn new(abs_tol: T, rel_tol: T) -> Self {
        Self {
            abs_tol,
            rel_tol,
            max_intervals: 200_000,
        }
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<V, T> {
    pub value: V,
    pub error: T,
    pub intervals: usize,
}

struct Panel<V, T> {
    a: T,
    b: T,
    value: V,
    error: T,
}

impl<V, T: Real> PartialEq for Panel<V, T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<V, T: Real> Eq for Panel<V, T> {}
impl<V, T: Real> PartialOrd for Panel<V, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V, T: Real> Ord for Panel<V, T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

/// Globally adaptive Gauss-Kronrod integration over the partition given by
/// `breakpoints` (sorted, at least two entries). The panel with the largest
/// error estimate is bisected until the summed estimate meets
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<T, V, F>(f: F, breakpoints: &[T], opts: QuadOptions<T>) -> Result<QuadResult<V, T>>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    if breakpoints.len() < 2 {
        return Err(Error::invalid("integration needs at least two breakpoints"));
    }
    let mut heap = BinaryHeap::with_capacity(breakpoints.len() * 4);
    let mut total = V::zero();
    let mut total_err = T::zero();
    for w in breakpoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::invalid("integration limits must be finite"));
        }
        if a == b {
            continue;
        }
        let (value, error) = gk21(&f, a, b);
        total = total + value;
        total_err += error;
        heap.push(Panel { a, b, value, error });
    }

    let target = |total: V| opts.abs_tol.max(opts.rel_tol * total.norm());
    let mut previous = total;
    while total_err > target(total) {
        if heap.len() >= opts.max_intervals {
            return Err(Error::no_convergence(
                format!(
                    "adaptive quadrature exhausted {} intervals (error {:e})",
                    opts.max_intervals,
                    total_err.as_f64()
                ),
                total.to_pair(),
                previous.to_pair(),
            ));
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let mid = worst.a + (worst.b - worst.a) * T::lit(0.5);
        if mid <= worst.a || mid >= worst.b {
            // Interval at floating point resolution; accept it as is.
            heap.push(Panel { error: T::zero(), ..worst });
            total_err = heap.iter().map(|p| p.error).sum();
            continue;
        }
        let (v1, e1) = gk21(&f, worst.a, mid);
        let (v2, e2) = gk21(&f, mid, worst.b);
        previous = total;
        total = total - worst.value + v1 + v2;
        total_err = total_err - worst.error + e1 + e2;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
        // Running sums drift; refresh occasionally.
        if heap.len() % 512 == 0 {
            total = heap.iter().fold(V::zero(), |acc, p| acc + p.value);
            total_err = heap.iter().map(|p| p.error).sum();
        }
    }
    let value = heap.iter().fold(V::zero(), |acc, p| acc + p.value);
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadResult {
        value,
        error,
        intervals: heap.len(),
    })
}

/// Convenience wrapper over a single interval.
pub fn integrate_interval<T, V, F>(f: F, a: T, b: T, opts: QuadOptions<T>) -> Result<QuadResult<V, T>>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    integrate(f, &[a, b], opts)
}

/// Trapezoid rule over uniformly spaced samples.
pub fn trapezoid<T: Real>(samples: &[T], h: T) -> T {
    match samples.len() {
        0 | 1 => T::zero(),
        n => {
            let inner: T = samples[1..n - 1].iter().copied().sum();
            h * (inner + (samples[0] + samples[n - 1]) * T::lit(0.5))
        }
    }
}

/// Composite Simpson rule; an odd number of intervals gets a trapezoid on
/// the last one.
pub fn simpson<T: Real>(samples: &[T], h: T) -> T {
    let n = samples.len();
    if n < 3 {
        return trapezoid(samples, h);
    }
    let even_len = if n % 2 == 1 { n } else { n - 1 };
    let mut acc = samples[0] + samples[even_len - 1];
    for (i, s) in samples.iter().enumerate().take(even_len - 1).skip(1) {
        acc += if i % 2 == 1 { T::lit(4.0) * *s } else { T::lit(2.0) * *s };
    }
    let mut total = acc * h / T::lit(3.0);
    if even_len < n {
        total += (samples[n - 2] + samples[n - 1]) * h * T::lit(0.5);
    }
    total
}

/// Neville extrapolation of `values[k] ≈ V(steps[k])` to step zero.
///
/// Returns the highest-order estimate and the difference to the estimate of
/// one order lower, which serves as an error indicator.
pub fn extrapolate_to_zero<T, V>(steps: &[T], values: &[V]) -> Result<(V, T)>
where
    T: Real,
    V: QuadValue<T>,
{
    let n = steps.len();
    if n == 0 || n != values.len() {
        return Err(Error::invalid("extrapolation needs matching, non-empty inputs"));
    }
    if n == 1 {
        return Ok((values[0], T::infinity()));
    }
    let mut table: Vec<V> = values.to_vec();
    let mut lower_order = table[n - 2];
    for level in 1..n {
        for i in 0..n - level {
            let (hi, hj) = (steps[i], steps[i + level]);
            let denom = hi - hj;
            if denom == T::zero() {
                return Err(Error::invalid("extrapolation steps must be distinct"));
            }
            // P(0) from P_i (step hj side) and P_{i+1}
            table[i] = (table[i + 1] * hi - table[i] * hj) * (T::one() / denom);
        }
        if level == n - 2 {
            lower_order = table[1];
        }
    }
    if n == 2 {
        lower_order = values[1];
    }
    Ok((table[0], (table[0] - lower_order).norm()))
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn logspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == 0 {
                return lo;
            }
            if k == n - 1 {
                return hi;
            }
            let f = T::from_usize_lossy(k) / T::from_usize_lossy(n - 1);
            (l0 + (l1 - l0) * f).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk21_integrates_polynomials_exactly() {
        let (v, e) = gk21(&|x: f64| x.powi(20) + 3.0 * x, -1.0, 2.0);
        let exact = (2f64.powi(21) + 1.0) / 21.0 + 4.5;
        assert!((v - exact).abs() < 1e-12 * exact);
        assert!(e >= 0.0);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = integrate_interval(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, QuadOptions::new(1e-12, 1e-12)).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn adaptive_complex_oscillatory() {
        let r: QuadResult<Cplx<f64>, f64> =
            integrate_interval(|x: f64| Cplx::new(0.0, 50.0 * x).exp(), 0.0, 1.0, QuadOptions::new(1e-13, 1e-13))
                .unwrap();
        let exact = (Cplx::new(0.0, 50.0).exp() - 1.0) / Cplx::new(0.0, 50.0);
        assert!((r.value - exact).norm() < 1e-12);
    }

    #[test]
    fn exhausted_budget_reports_estimates() {
        let err = integrate_interval(
            |x: f64| (1.0 / x).sin(),
            1e-9,
            1.0,
            QuadOptions::new(1e-15, 0.0).with_max_intervals(8),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConvergenceFailure { .. }));
    }

    #[test]
    fn simpson_and_trapezoid() {
        let h = 0.01;
        let s: Vec<f64> = (0..=100).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson(&s, h) - 0.25).abs() < 1e-12);
        assert!((trapezoid(&s, h) - 0.25).abs() < 1e-4);
    }

    #[test]
    fn neville_removes_polynomial_error() {
        let steps = [0.4, 0.2, 0.1, 0.05];
        let vals: Vec<f64> = steps.iter().map(|h| 3.0 + 2.0 * h - 5.0 * h * h + h * h * h).collect();
        let (v, err) = extrapolate_to_zero(&steps, &vals).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        assert!((err - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn logspace_endpoints() {
        let v = logspace(1e-5f64, 1e-2, 25);
        assert_eq!(v.len(), 25);
        assert!((v[0] - 1e-5).abs() < 1e-18);
        assert!((v[24] - 1e-2).abs() < 1e-15);
    }
}
