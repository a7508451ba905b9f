use proptest::prelude::*;
use sbm_core::bridge::{
    draw_noise, iterative_sample, one_step_enhance, posterior_step, sample_state, BridgeSchedule, NoiseConvention,
    SamplerConfig, SamplerMode, TimeGrid,
};
use sbm_core::{rng, Error, Tensor};

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let inner: f64 = (1..panels).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::<f64>::from_f64([1], &[v]).unwrap()
}

fn cfg(n_steps: usize, mode: SamplerMode) -> SamplerConfig {
    SamplerConfig { n_steps, grid: TimeGrid::Uniform, mode, convention: NoiseConvention::Full }
}

#[test]
fn sigma2_matches_quadrature() {
    let s = BridgeSchedule::default();
    let q = trapezoid(|t| s.g2(t), 0.0, 0.5, 100_000);
    let v = s.ve_sigma2(0.5).unwrap();
    assert!(((v - q) / q).abs() < 1e-8, "{v} vs {q}");
    assert_eq!(s.ve_sigma2(0.0).unwrap(), 0.0);
}

#[test]
fn sigma2_matches_quadrature_at_random_triples() {
    let mut r = rng::seeded(11);
    for _ in 0..20 {
        let c = rng::uniform(&mut r, 0.05, 2.0);
        let k = rng::uniform(&mut r, 1.1, 5.0);
        let t = rng::uniform(&mut r, 0.01, 1.0);
        let s = BridgeSchedule::new(c, k, 0.01).unwrap();
        let q = trapezoid(|u| s.g2(u), 0.0, t, 100_000);
        let v = s.ve_sigma2(t).unwrap();
        assert!(((v - q) / q).abs() < 1e-8, "c={c} k={k} t={t}: {v} vs {q}");
    }
}

#[test]
fn out_of_range_time_is_domain_error() {
    let s = BridgeSchedule::default();
    assert!(matches!(s.ve_sigma2(1.01), Err(Error::Domain { .. })));
    assert!(matches!(s.marginal_coeffs(-1e-9), Err(Error::Domain { .. })));
}

#[test]
fn degenerate_schedule_is_config_error() {
    assert!(matches!(BridgeSchedule::new(0.0, 2.6, 0.01), Err(Error::Config(_))));
    let s = BridgeSchedule { c: 0.0, ..BridgeSchedule::default() };
    assert!(matches!(s.marginal_coeffs(0.5), Err(Error::Config(_))));
}

#[test]
fn marginal_boundaries_are_exact() {
    let s = BridgeSchedule::default();
    let m0 = s.marginal_coeffs(0.0).unwrap();
    assert_eq!((m0.w_x, m0.w_y, m0.sigma_x), (1.0, 0.0, 0.0));
    let m1 = s.marginal_coeffs(1.0).unwrap();
    assert_eq!((m1.w_x, m1.w_y, m1.sigma_x), (0.0, 1.0, 0.0));
    for i in 0..64 {
        let m = s.marginal_coeffs(i as f64 / 63.0).unwrap();
        assert!((m.w_x + m.w_y - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sample_state_examples() {
    let s = BridgeSchedule::default();
    let x = Tensor::<f64>::from_f64([3], &[0.5, -1.0, 2.0]).unwrap();
    let y = Tensor::<f64>::from_f64([3], &[1.5, 0.25, -3.0]).unwrap();
    let z = Tensor::<f64>::from_f64([3], &[0.3, -0.7, 1.1]).unwrap();
    assert_eq!(sample_state(&x, &y, 0.0, &z, &s).unwrap(), x);
    assert_eq!(sample_state(&x, &y, 1.0, &z, &s).unwrap(), y);
    let m = s.marginal_coeffs(0.4).unwrap();
    let zero = Tensor::zeros([3]);
    let xt = sample_state(&x, &y, 0.4, &zero, &s).unwrap();
    for i in 0..3 {
        assert_eq!(xt.data()[i], m.w_x * x.data()[i] + m.w_y * y.data()[i]);
    }
    assert!(matches!(sample_state(&x, &Tensor::zeros([2]), 0.4, &z, &s), Err(Error::Dimension { .. })));
}

#[test]
fn marginal_moments_match_within_three_standard_errors() {
    let s = BridgeSchedule::default();
    let n = 100_000;
    let (x0, y0, t) = (0.8, -0.4, 0.37);
    let m = s.marginal_coeffs(t).unwrap();
    let mu = m.w_x * x0 + m.w_y * y0;
    let var = m.sigma_x * m.sigma_x;
    for (conv, component_var) in [(NoiseConvention::Full, var), (NoiseConvention::Split, 0.5 * var)] {
        let mut r = rng::seeded(3);
        let z = draw_noise::<f64>(&[n], conv, &mut r);
        let xt = sample_state(&Tensor::full([n], x0), &Tensor::full([n], y0), t, &z, &s).unwrap();
        let mean = xt.data().iter().sum::<f64>() / n as f64;
        let v = xt.data().iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (component_var / n as f64).sqrt();
        let se_var = component_var * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se_mean, "{conv:?} mean {mean} vs {mu}");
        assert!((v - component_var).abs() < 3.0 * se_var, "{conv:?} var {v} vs {component_var}");
    }
}

#[test]
fn posterior_step_examples() {
    let s = BridgeSchedule::default();
    let (xt, xh, z) = (scalar(4.0), scalar(0.0), scalar(0.9));
    for mode in [SamplerMode::Sde, SamplerMode::Ode] {
        assert_eq!(posterior_step(&xt, &xh, 0.6, 0.0, &z, &s, mode).unwrap(), xh);
    }
    // Find s with sigma^2(s) = sigma^2(t) / 2 so the ratio is exactly one half.
    let t = 0.8;
    let target = s.ve_sigma2(t).unwrap() / 2.0;
    let (mut lo, mut hi) = (0.0, t);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if s.ve_sigma2(mid).unwrap() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out = posterior_step(&xt, &xh, t, 0.5 * (lo + hi), &z, &s, SamplerMode::Ode).unwrap();
    assert!((out.data()[0] - 2.0).abs() < 1e-12);
    assert!(matches!(posterior_step(&xt, &xh, 0.5, 0.5, &z, &s, SamplerMode::Ode), Err(Error::Contract(_))));
    assert!(matches!(posterior_step(&xt, &xh, 0.4, 0.5, &z, &s, SamplerMode::Sde), Err(Error::Contract(_))));
}

#[test]
fn nfe_equals_steps_and_one_step_is_single_interval() {
    let s = BridgeSchedule::default();
    let y = Tensor::<f64>::from_f64([4], &[0.1, -0.2, 0.3, 0.9]).unwrap();
    let model = |x: &Tensor<f64>, t: f64| Ok(x.map(|v| 0.5 * v + 0.1 * t));
    for n in [1, 10, 50] {
        let (_, nfe) = iterative_sample(&y, model, &cfg(n, SamplerMode::Sde), &s, &mut rng::seeded(1)).unwrap();
        assert_eq!(nfe, n);
    }
    let (it, _) = iterative_sample(&y, model, &cfg(1, SamplerMode::Ode), &s, &mut rng::seeded(1)).unwrap();
    let (sde, _) = iterative_sample(&y, model, &cfg(1, SamplerMode::Sde), &s, &mut rng::seeded(2)).unwrap();
    let one = one_step_enhance(&y, model, &s).unwrap();
    assert_eq!(it, one);
    assert_eq!(sde, one);
    assert_eq!(one_step_enhance(&y, |x: &Tensor<f64>, _| Ok(x.clone()), &s).unwrap(), y);
    assert!(iterative_sample(&y, model, &cfg(0, SamplerMode::Ode), &s, &mut rng::seeded(1)).is_err());
}

#[test]
fn identity_model_ode_is_fixed_point() {
    let s = BridgeSchedule::default();
    let y = Tensor::<f64>::from_f64([3], &[0.7, -1.2, 0.05]).unwrap();
    let (out, _) =
        iterative_sample(&y, |x: &Tensor<f64>, _| Ok(x.clone()), &cfg(10, SamplerMode::Ode), &s, &mut rng::seeded(0))
            .unwrap();
    assert_eq!(out, y);
}

/// Scalar toy `x ~ N(0, 1)`, `y = x + N(0, 1)`. The model sees only
/// `(x_t, t)`, so the exact posterior-mean model is `E[x | x_t]`; with
/// `x_t = x + w_y·n + σ_x·z` that is `x_t / (1 + w_y² + σ_x²)`. Returns
/// `(a, b)` with `x̂ = a·x_t + b`.
fn toy_posterior(s: &BridgeSchedule, _y: f64, t: f64) -> (f64, f64) {
    let m = s.marginal_coeffs(t).unwrap();
    (1.0 / (1.0 + m.w_y * m.w_y + m.sigma_x * m.sigma_x), 0.0)
}

/// Exact endpoint mean and variance of the discrete sampler recursion.
fn propagate(s: &BridgeSchedule, y: f64, n: usize, mode: SamplerMode) -> (f64, f64) {
    let grid = s.time_grid(n, TimeGrid::Uniform);
    let (mut mean, mut var) = (y, 0.0);
    for w in grid.windows(2) {
        let (a, b) = toy_posterior(s, y, w[0]);
        let (s2t, s2s) = (s.ve_sigma2(w[0]).unwrap(), s.ve_sigma2(w[1]).unwrap());
        let r = s2s / s2t;
        let gain = a + r * (1.0 - a);
        mean = gain * mean + (1.0 - r) * b;
        var = gain * gain * var;
        if mode == SamplerMode::Sde {
            var += s2s * (s2t - s2s) / s2t;
        }
    }
    (mean, var)
}

#[test]
fn toy_sde_sampler_matches_its_moment_recursion() {
    let s = BridgeSchedule::default();
    let (y, n_paths) = (1.3, 100_000);
    let model = |x: &Tensor<f64>, t: f64| {
        let (a, b) = toy_posterior(&s, y, t);
        Ok(x.map(|v| a * v + b))
    };
    let (out, nfe) =
        iterative_sample(&Tensor::full([n_paths], y), model, &cfg(50, SamplerMode::Sde), &s, &mut rng::seeded(4))
            .unwrap();
    assert_eq!(nfe, 50);
    let mean = out.data().iter().sum::<f64>() / n_paths as f64;
    let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
    let (m_exact, v_exact) = propagate(&s, y, 50, SamplerMode::Sde);
    assert!((mean - m_exact).abs() < 0.02, "{mean} vs {m_exact}");
    assert!((var - v_exact).abs() < 0.02, "{var} vs {v_exact}");
}

/// Continuous-time limit of the deterministic sampler,
/// `dx/dσ² = (x - x̂(x, t)) / σ²`, integrated with RK4 from `σ²(T)` down
/// to (almost) zero.
fn ode_flow(s: &BridgeSchedule, y: f64) -> f64 {
    let ln_k = s.k.ln();
    let t_of = |u: f64| ((u * 2.0 * ln_k / s.c).ln_1p() / (2.0 * ln_k)).clamp(0.0, s.t_max);
    let f = |u: f64, x: f64| {
        let (a, b) = toy_posterior(s, y, t_of(u));
        ((1.0 - a) * x - b) / u
    };
    let (u0, u1, n) = (s.sigma2_max(), 1e-12, 200_000);
    let h = (u1 - u0) / n as f64;
    let mut x = y;
    for i in 0..n {
        let u = u0 + i as f64 * h;
        let k1 = f(u, x);
        let k2 = f(u + 0.5 * h, x + 0.5 * h * k1);
        let k3 = f(u + 0.5 * h, x + 0.5 * h * k2);
        let k4 = f(u + h, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn toy_ode_error_shrinks_with_steps() {
    let s = BridgeSchedule::default();
    let y = 1.3;
    let reference = ode_flow(&s, y);
    let errors: Vec<f64> = [1, 10, 50]
        .iter()
        .map(|&n| {
            let model = |x: &Tensor<f64>, t: f64| {
                let (a, b) = toy_posterior(&s, y, t);
                Ok(x.map(|v| a * v + b))
            };
            let (out, _) =
                iterative_sample(&scalar(y), model, &cfg(n, SamplerMode::Ode), &s, &mut rng::seeded(0)).unwrap();
            assert!((out.data()[0] - propagate(&s, y, n, SamplerMode::Ode).0).abs() < 1e-12);
            (out.data()[0] - reference).abs()
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

proptest! {
    #[test]
    fn boundaries_exact_for_any_noise(x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0) {
        let s = BridgeSchedule::default();
        let (xv, yv, zv) = (scalar(x), scalar(y), scalar(z));
        prop_assert_eq!(sample_state(&xv, &yv, 0.0, &zv, &s).unwrap(), xv.clone());
        prop_assert_eq!(sample_state(&xv, &yv, s.t_max, &zv, &s).unwrap(), yv.clone());
    }

    #[test]
    fn schedule_is_monotone(c in 0.01f64..3.0, k in 1.01f64..6.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let s = BridgeSchedule::new(c, k, 0.01).unwrap();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(s.ve_sigma2(hi).unwrap() >= s.ve_sigma2(lo).unwrap());
        prop_assert!(s.marginal_coeffs(hi).unwrap().w_y >= s.marginal_coeffs(lo).unwrap().w_y);
        prop_assert!(s.ve_sigma2(1.0).unwrap() > s.ve_sigma2(0.5).unwrap());
        prop_assert!(s.sigma_bar2(hi).unwrap() >= 0.0);
        let m = s.marginal_coeffs(t1).unwrap();
        prop_assert!((m.w_x + m.w_y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_step_at_zero_returns_estimate(xt in -5.0f64..5.0, xh in -5.0f64..5.0, z in -5.0f64..5.0, t in 0.01f64..1.0) {
        let s = BridgeSchedule::default();
        for mode in [SamplerMode::Sde, SamplerMode::Ode] {
            prop_assert_eq!(posterior_step(&scalar(xt), &scalar(xh), t, 0.0, &scalar(z), &s, mode).unwrap(), scalar(xh));
        }
    }
}
