use std::f64::consts::PI;

use proptest::prelude::*;
use unicurrent::fresnel::{
    damped_sequence, fresnel_between, fresnel_moment, fresnel_moment_exact, kernel_prefactor,
    propagator_kernel_integral, tail_weighted_exact, tail_weighted_integral, Limit, RegularizationPolicy,
    TailWeight,
};
use unicurrent::quadrature::{integrate, QuadOptions};
use unicurrent::{Complex, Support, Wavefunction};

fn cis(t: f64) -> Complex {
    Complex::from_polar(1.0, t)
}

/// Direct GK quadrature of `ζ^j e^{iζ²/2}` on `[a, b]` with fixed fine panels.
fn brute_moment(j: i32, a: f64, b: f64) -> Complex {
    let n = 400;
    let edges: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
    integrate(
        |z: f64| cis(0.5 * z * z) * z.powi(j),
        &edges,
        QuadOptions::new(1e-13, 1e-12),
    )
    .unwrap()
    .value
}

#[test]
fn half_line_value_by_regularized_quadrature() {
    let expect = Complex::new((PI / 2.0).sqrt(), 0.0) * cis(PI / 4.0);
    assert!((expect.re - 0.886226925452758).abs() < 1e-14);
    let exact = fresnel_moment_exact(0, Limit::NegInfinity, 0.0);
    assert!((exact - expect).norm() < 1e-14);
    // the Neville error indicator is conservative: ask for 1e-6, get ~1e-9
    let quad = fresnel_moment(0, Limit::NegInfinity, 0.0, &RegularizationPolicy::default(), 1e-6).unwrap();
    assert!((quad - expect).norm() < 1e-8, "{quad}");
}

#[test]
fn first_moment_on_finite_interval() {
    let t = 10.0;
    let expect = -Complex::i() * (Complex::new(1.0, 0.0) - cis(t * t / 2.0));
    let quad = fresnel_moment(1, Limit::Finite(-t), 0.0, &RegularizationPolicy::default(), 1e-10).unwrap();
    assert!((quad - expect).norm() < 1e-10);
    assert!((fresnel_moment_exact(1, Limit::Finite(-t), 0.0) - expect).norm() < 1e-12);
}

#[test]
fn truncated_half_line_approaches_half_value() {
    let half = fresnel_moment_exact(0, Limit::NegInfinity, 0.0);
    let errs: Vec<f64> = [10.0, 30.0, 100.0]
        .iter()
        .map(|&l| (brute_moment(0, -l, 0.0) - half).norm())
        .collect();
    // the truncation error is e^{iL²/2}/(iL) to leading order
    for (e, l) in errs.iter().zip([10.0, 30.0, 100.0]) {
        assert!((e * l - 1.0).abs() < 0.02, "L={l}: error {e}");
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2]);
}

#[test]
fn regularized_values_converge_monotonically() {
    let policy = RegularizationPolicy::new(vec![0.1, 0.05, 0.025, 0.0125, 0.00625], false).unwrap();
    for j in 0..=2i32 {
        let exact = fresnel_moment_exact(j as usize, Limit::NegInfinity, 0.5);
        let seq = damped_sequence(move |z: f64| Complex::new(z.powi(j), 0.0), j, 0.5, &policy, 1e-11).unwrap();
        let changes: Vec<f64> = seq.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        assert!(changes.windows(2).all(|c| c[1] < c[0]), "j={j}: {changes:?}");
        let errs: Vec<f64> = seq.iter().map(|v| (v - exact).norm()).collect();
        assert!(errs.windows(2).all(|e| e[1] < e[0]), "j={j}: {errs:?}");
    }
}

#[test]
fn richardson_is_first_order_in_epsilon() {
    let policy = RegularizationPolicy::new(vec![0.04, 0.02, 0.01, 0.005], false).unwrap();
    let exact = fresnel_moment_exact(0, Limit::NegInfinity, 0.0);
    let seq = damped_sequence(|_z: f64| Complex::new(1.0, 0.0), 0, 0.0, &policy, 1e-12).unwrap();
    let errs: Vec<f64> = seq.iter().map(|v| (v - exact).norm()).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 2.0).abs() < 0.1, "{errs:?}");
    }
}

#[test]
fn eta_over_zeta_sq_bounds() {
    let policy = RegularizationPolicy::default();
    for eta in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let v = tail_weighted_integral(TailWeight::EtaOverZetaSq, eta, Limit::NegInfinity, &policy, 1e-6).unwrap();
        assert!(v.norm() <= 1.0, "eta={eta}: {v}");
        let exact = tail_weighted_exact(TailWeight::EtaOverZetaSq, eta, Limit::NegInfinity);
        assert!((v - exact).norm() < 1e-6, "eta={eta}: {v} vs {exact}");
    }
    let far = tail_weighted_exact(TailWeight::EtaOverZetaSq, 10.0f64, Limit::NegInfinity);
    assert!(far.norm_sqr() <= 1e-4);
    // the integral itself behaves like i e^{iη²/2}/η³, so |η·integral| ≈ 1/η²
    assert!((far.norm() * 1e2 - 1.0).abs() < 0.05);
}

#[test]
fn unit_weight_tail_is_a_moment() {
    let policy = RegularizationPolicy::default();
    let tail = tail_weighted_integral(TailWeight::One, 1.0, Limit::Finite(-3.0), &policy, 1e-10).unwrap();
    let m = fresnel_moment(0, Limit::Finite(-3.0), -1.0, &policy, 1e-10).unwrap();
    assert!((tail - m).norm() < 1e-10);
}

#[test]
fn eta_sq_weight_is_eta_times_eta_weight() {
    for eta in [0.7, 3.0] {
        let a = tail_weighted_exact(TailWeight::EtaSqOverZetaSq, eta, Limit::Finite(-20.0));
        let b = tail_weighted_exact(TailWeight::EtaOverZetaSq, eta, Limit::Finite(-20.0)) * eta;
        assert!((a - b).norm() < 1e-14);
        let direct = brute_moment(-2, -20.0, -eta) * (eta * eta);
        assert!((a - direct).norm() < 1e-10, "{a} vs {direct}");
    }
}

/// `ψ(y)` from a direct fine-panel quadrature of the kernel integral over the
/// support.
fn brute_kernel(c: &[f64], a: f64, y: f64, alpha: f64, panels: usize) -> Complex {
    let q = |x: f64| c.iter().rev().fold(0.0, |acc, v| acc * x + v);
    let edges: Vec<f64> = (0..=panels).map(|k| -a + a * k as f64 / panels as f64).collect();
    let v: Complex = integrate(
        |x: f64| cis((x - y) * (x - y) / (2.0 * alpha)) * q(x),
        &edges,
        QuadOptions::new(1e-14, 1e-12),
    )
    .unwrap()
    .value;
    v * kernel_prefactor::<f64>() / alpha.sqrt()
}

#[test]
fn kernel_integral_matches_brute_force() {
    let c = [0.0, 1.0, 1.0];
    let wf = Wavefunction::from_real(&c, Support::FiniteReflecting { a: 1.0 }).unwrap();
    let alpha = 1e-4;
    for y in [0.0, 0.01, -0.3, -0.999] {
        let fast = propagator_kernel_integral(&wf, y, alpha).unwrap();
        let slow = brute_kernel(&c, 1.0, y, alpha, 100_000);
        assert!((fast - slow).norm() <= 1e-6 * slow.norm().max(1e-3), "y={y}: {fast} vs {slow}");
    }
    assert!(propagator_kernel_integral(&wf, 0.0, alpha).unwrap().norm_sqr() > 0.0);
}

#[test]
fn kernel_branch_is_minus_quarter_turn() {
    let p: Complex = kernel_prefactor();
    assert!((p.arg() + PI / 4.0).abs() < 1e-15);
    assert!((p.norm() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
}

#[test]
fn zero_state_propagates_to_zero() {
    let wf = Wavefunction::from_real(&[0.0], Support::FiniteReflecting { a: 1.0 }).unwrap();
    for y in [-0.5, 0.0, 0.3] {
        assert_eq!(propagator_kernel_integral(&wf, y, 1e-3).unwrap(), Complex::new(0.0, 0.0));
    }
}

/// `Q(x) = (x + a) R(x)` satisfies `Q(-a) = 0`.
fn with_boundary_zero(r: &[f64], a: f64) -> Vec<f64> {
    let mut q = vec![0.0; r.len() + 1];
    for (j, v) in r.iter().enumerate() {
        q[j] += a * v;
        q[j + 1] += v;
    }
    q
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn dpoly(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (j, v)| acc * x + v * j as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_moments_agree_with_quadrature(j in 0usize..7, a in -6.0..6.0f64, w in 0.0..6.0f64) {
        let b = a + w;
        let exact = fresnel_moment_exact(j, Limit::Finite(a), b);
        let quad = brute_moment(j as i32, a, b);
        let scale = a.abs().max(b.abs()).max(1.0).powi(j as i32);
        prop_assert!((exact - quad).norm() <= 1e-10 * scale, "{} vs {}", exact, quad);
    }

    #[test]
    fn zeroth_moment_is_additive(a in -8.0..0.0f64, m in 0.0..4.0f64, b in 4.0..8.0f64) {
        let whole = fresnel_between(Limit::Finite(a), b);
        let parts = fresnel_between(Limit::Finite(a), m) + fresnel_between(Limit::Finite(m), b);
        prop_assert!((whole - parts).norm() < 1e-12);
    }

    #[test]
    fn kernel_integral_is_linear(re in -2.0..2.0f64, im in -2.0..2.0f64, y in -1.5..0.5f64) {
        let wf = Wavefunction::from_real(&[0.0, 1.0, 1.0], Support::FiniteReflecting { a: 1.0 }).unwrap();
        let c = Complex::new(re, im);
        let lhs = propagator_kernel_integral(&wf.scaled(c), y, 1e-3).unwrap();
        let rhs = propagator_kernel_integral(&wf, y, 1e-3).unwrap() * c;
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }

    /// With `Q(-a) = 0` and `φ = (x-y)²/2α`, one integration by parts gives
    /// `∫Q e^{iφ} = [Q e^{iφ}/(iφ')]_{-a}^{0} - ∫ (Q/(iφ'))' e^{iφ}`, where
    /// the lower boundary term drops out.
    #[test]
    fn integration_by_parts_identity(r in prop::collection::vec(-1.0..1.0f64, 1..6), y in 0.2..1.0f64) {
        let a = 1.0;
        let alpha = 1e-2;
        let q = with_boundary_zero(&r, a);
        prop_assert!(poly(&q, -a).abs() < 1e-12);
        let edges: Vec<f64> = (0..=400).map(|k| -a + a * k as f64 / 400.0).collect();
        let opts = QuadOptions::new(1e-14, 1e-12);
        let phase = |x: f64| cis((x - y) * (x - y) / (2.0 * alpha));
        let direct: Complex = integrate(|x: f64| phase(x) * poly(&q, x), &edges, opts).unwrap().value;
        // (Q/(iφ'))' = -i α [Q'/(x-y) - Q/(x-y)²]
        let after: Complex = integrate(
            |x: f64| phase(x) * Complex::new(0.0, -alpha) * (dpoly(&q, x) / (x - y) - poly(&q, x) / ((x - y) * (x - y))),
            &edges,
            opts,
        )
        .unwrap()
        .value;
        let boundary = phase(0.0) * poly(&q, 0.0) / Complex::new(0.0, -y / alpha);
        let parts = boundary - after;
        prop_assert!((direct - parts).norm() <= 1e-9 * (1.0 + direct.norm()), "{} vs {}", direct, parts);
    }
}
