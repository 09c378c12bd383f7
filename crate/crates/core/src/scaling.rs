//! Log-log exponent fits over parameter sweeps, and the survival statistics
//! of repeatedly observed systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::scalar::Real;

/// One sweep sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<T> {
    pub control: T,
    pub value: T,
    pub error: T,
    /// Inside the admissible region of the short-time expansion.
    pub admissible: bool,
}

impl<T: Real> SweepPoint<T> {
    pub fn new(control: T, value: T, error: T) -> Self {
        Self {
            control,
            value,
            error,
            admissible: true,
        }
    }
}

/// Which points enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowPolicy<T> {
    pub min_control: Option<T>,
    pub max_control: Option<T>,
    pub drop_inadmissible: bool,
}

impl<T: Real> WindowPolicy<T> {
    pub fn all() -> Self {
        Self {
            min_control: None,
            max_control: None,
            drop_inadmissible: false,
        }
    }

    pub fn admissible_only() -> Self {
        Self {
            drop_inadmissible: true,
            ..Self::all()
        }
    }

    fn keeps(&self, p: &SweepPoint<T>) -> bool {
        self.min_control.is_none_or(|m| p.control >= m)
            && self.max_control.is_none_or(|m| p.control <= m)
            && (!self.drop_inadmissible || p.admissible)
    }
}

pub const MIN_FIT_POINTS: usize = 5;
pub const MIN_FIT_DECADES: f64 = 2.0;

/// Sweep table with its fitted power law `value ≈ prefactor · control^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult<T> {
    pub points: Vec<SweepPoint<T>>,
    pub fitted_exponent: T,
    pub exponent_stderr: T,
    pub fitted_prefactor: T,
    /// Smallest and largest control value used by the fit.
    pub fit_window: (T, T),
    pub points_used: usize,
}

/// Ordinary least squares on `(ln control, ln value)` over the points the
/// window keeps. The standard error is `sqrt(SSR / (n-2) / Sxx)`.
pub fn fit_exponent<T: Real>(points: &[SweepPoint<T>], window: &WindowPolicy<T>) -> Result<SweepResult<T>> {
    let used: Vec<&SweepPoint<T>> = points.iter().filter(|p| window.keeps(p)).collect();
    if used.len() < MIN_FIT_POINTS {
        return Err(Error::invalid(format!(
            "fit needs at least {MIN_FIT_POINTS} points, window keeps {}",
            used.len()
        )));
    }
    if used.iter().any(|p| !(p.control > T::zero() && p.value > T::zero())) {
        return Err(Error::invalid("log-log fit needs positive control values and observables"));
    }
    let lo = used.iter().map(|p| p.control).fold(T::infinity(), T::min);
    let hi = used.iter().map(|p| p.control).fold(T::neg_infinity(), T::max);
    if (hi / lo).log10() < T::lit(MIN_FIT_DECADES) * (T::one() - T::lit(1e-9)) {
        return Err(Error::invalid(format!(
            "fit window spans {:.3} decades, at least {MIN_FIT_DECADES} required",
            (hi / lo).log10().as_f64()
        )));
    }
    let n = T::from_usize_lossy(used.len());
    let xs: Vec<T> = used.iter().map(|p| p.control.ln()).collect();
    let ys: Vec<T> = used.iter().map(|p| p.value.ln()).collect();
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|x| (*x - mx) * (*x - mx)).sum();
    let sxy: T = xs.iter().zip(&ys).map(|(x, y)| (*x - mx) * (*y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: T = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = *y - intercept - slope * *x;
            r * r
        })
        .sum();
    let stderr = (ssr / (n - T::lit(2.0)) / sxx).sqrt();
    Ok(SweepResult {
        points: points.to_vec(),
        fitted_exponent: slope,
        exponent_stderr: stderr,
        fitted_prefactor: intercept.exp(),
        fit_window: (lo, hi),
        points_used: used.len(),
    })
}

/// `per_decade` log-spaced control values per decade over `[lo, hi]`,
/// both ends included.
pub fn sweep_grid<T: Real>(lo: T, hi: T, per_decade: usize) -> Result<Vec<T>> {
    if !(lo > T::zero() && hi > lo) || per_decade == 0 {
        return Err(Error::invalid("sweep range must satisfy 0 < lo < hi"));
    }
    let decades = (hi / lo).log10();
    let n = (decades * T::from_usize_lossy(per_decade)).round().to_usize().unwrap_or(1).max(1) + 1;
    Ok(crate::quadrature::logspace(lo, hi, n))
}

/// Evaluates `f` over `controls` in parallel; the output is sorted by
/// control value. The first failure is returned together with the points
/// that did succeed.
pub fn evaluate_sweep<T, F>(controls: &[T], f: F) -> (Vec<SweepPoint<T>>, Option<Error>)
where
    T: Real,
    F: Fn(T) -> Result<SweepPoint<T>> + Sync,
{
    let mut results: Vec<(T, Result<SweepPoint<T>>)> = controls.par_iter().map(|&c| (c, f(c))).collect();
    results.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut points = Vec::with_capacity(results.len());
    let mut first_error = None;
    for (_, r) in results {
        match r {
            Ok(p) => points.push(p),
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    (points, first_error)
}

/// Short-time survival law per observation interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurvivalLaw {
    /// `s(Δt) = 1 - c Δt^{3/2}`
    #[serde(rename = "ZENO_3_2")]
    Zeno32,
    /// `s(Δt) = 1 - c Δt^{1/2}`
    #[serde(rename = "ANTIZENO_1_2")]
    AntiZeno12,
}

impl SurvivalLaw {
    pub fn exponent(self) -> f64 {
        match self {
            SurvivalLaw::Zeno32 => 1.5,
            SurvivalLaw::AntiZeno12 => 0.5,
        }
    }
}

/// `N` observations spread evenly over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalStatistics<T> {
    pub law: SurvivalLaw,
    pub prefactor: T,
    pub total_time: T,
    pub n_systems: u64,
    pub delta_t: T,
    pub per_step_survival: T,
    /// `s(Δt)^N`
    pub product_survival: T,
    /// `exp(-N c Δt^p)`
    pub exponential_approximation: T,
    /// `N (1 - s(Δt)) = N c Δt^p`
    pub expected_decays: T,
}

impl<T: Real> SurvivalStatistics<T> {
    pub fn approximation_error(&self) -> T {
        (self.product_survival - self.exponential_approximation).abs()
    }
}

/// Survival of `N` repeated observations with `Δt = T/N`. The exponential
/// form keeps `T` explicit: `exp(-c T^{3/2}/√N)` for the Zeno law and
/// `exp(-c √(TN))` for the anti-Zeno law.
pub fn zeno_survival<T: Real>(law: SurvivalLaw, prefactor: T, total_time: T, n: u64) -> Result<SurvivalStatistics<T>> {
    if n == 0 {
        return Err(Error::invalid("N must be positive"));
    }
    if !(total_time > T::zero() && prefactor >= T::zero()) {
        return Err(Error::invalid("need T > 0 and c >= 0"));
    }
    let nf = T::from_u64(n).ok_or_else(|| Error::invalid("N not representable"))?;
    let delta_t = total_time / nf;
    let leak = prefactor * delta_t.powf(T::lit(law.exponent()));
    let s = T::one() - leak;
    if !(s > T::zero()) {
        return Err(Error::invalid("per-step survival must be positive: c Δt^p >= 1"));
    }
    // s^N through ln_1p: rounding 1 - leak first would cost N ulps
    let product = (nf * (-leak).ln_1p()).exp();
    Ok(SurvivalStatistics {
        law,
        prefactor,
        total_time,
        n_systems: n,
        delta_t,
        per_step_survival: s,
        product_survival: product,
        exponential_approximation: (-nf * leak).exp(),
        expected_decays: nf * leak,
    })
}

/// `S(t) = exp(-γ ∫_0^t |q₀(t')|² dt')`. `breakpoints` inside `(0, t)` mark
/// known discontinuities of the integrand.
pub fn decay_law<T, F>(q0_sq: F, gamma: T, t: T, breakpoints: &[T]) -> Result<T>
where
    T: Real,
    F: Fn(T) -> T,
{
    if !(gamma > T::zero()) {
        return Err(Error::invalid("gamma must be positive"));
    }
    if !(t >= T::zero()) {
        return Err(Error::invalid("t must be non-negative"));
    }
    if t == T::zero() {
        return Ok(T::one());
    }
    let mut edges = vec![T::zero()];
    let mut inner: Vec<T> = breakpoints.iter().copied().filter(|b| *b > T::zero() && *b < t).collect();
    inner.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    edges.extend(inner);
    edges.push(t);
    let r = integrate(q0_sq, &edges, QuadOptions::new(T::lit(1e-14), T::lit(1e-12)))?;
    Ok((-gamma * r.value).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(f: impl Fn(f64) -> f64, xs: &[f64]) -> Vec<SweepPoint<f64>> {
        xs.iter().map(|&x| SweepPoint::new(x, f(x), 0.0)).collect()
    }

    #[test]
    fn exact_power_law() {
        let xs = crate::quadrature::logspace(1e-3, 1.0, 8);
        let r = fit_exponent(&pts(|x| 7.0 * x.powi(3), &xs), &WindowPolicy::all()).unwrap();
        assert!((r.fitted_exponent - 3.0).abs() < 1e-12);
        assert!((r.fitted_prefactor - 7.0).abs() < 1e-10);
        assert!(r.exponent_stderr < 1e-12);
    }

    #[test]
    fn constant_has_zero_exponent() {
        let xs = crate::quadrature::logspace(1.0, 1e3, 6);
        let r = fit_exponent(&pts(|_| 2.5, &xs), &WindowPolicy::all()).unwrap();
        assert!(r.fitted_exponent.abs() < 1e-14);
    }

    #[test]
    fn fit_preconditions() {
        let short = crate::quadrature::logspace(1.0, 10.0, 8);
        assert!(fit_exponent(&pts(|x| x, &short), &WindowPolicy::all()).is_err());
        let xs = crate::quadrature::logspace(1.0, 1e3, 4);
        assert!(fit_exponent(&pts(|x| x, &xs), &WindowPolicy::all()).is_err());
        let xs = crate::quadrature::logspace(1.0, 1e3, 8);
        assert!(fit_exponent(&pts(|x| x - 2.0, &xs), &WindowPolicy::all()).is_err());
    }

    #[test]
    fn window_drops_inadmissible_points() {
        let xs = crate::quadrature::logspace(1e-4, 1.0, 9);
        let mut p = pts(|x| x.powf(1.5), &xs);
        for q in p.iter_mut().skip(7) {
            q.admissible = false;
            q.value = 1.0;
        }
        let r = fit_exponent(&p, &WindowPolicy::admissible_only()).unwrap();
        assert_eq!(r.points_used, 7);
        assert!((r.fitted_exponent - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_observation() {
        let s = zeno_survival(SurvivalLaw::Zeno32, 0.1, 1.0, 1).unwrap();
        assert_eq!(s.product_survival, 1.0 - 0.1);
        assert!(zeno_survival(SurvivalLaw::AntiZeno12, 2.0, 1.0, 1).is_err());
    }

    #[test]
    fn decay_law_cases() {
        let s = decay_law(|_| 0.3, 2.0, 1.5, &[]).unwrap();
        assert!((s - (-0.9f64).exp()).abs() < 1e-14);
        assert_eq!(decay_law(|_| 0.0, 2.0, 1.5, &[]).unwrap(), 1.0);
        let pulse = |t: f64| if (t % 1.0) < 0.5 { 1.0 } else { 0.0 };
        let a = decay_law(pulse, 1.0, 0.6, &[0.5]).unwrap();
        let b = decay_law(pulse, 1.0, 0.95, &[0.5]).unwrap();
        assert!((a - b).abs() < 1e-13);
    }
}
