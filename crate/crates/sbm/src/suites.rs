//! Oracle suites shared by `sbm selftest` and the acceptance harness.
//!
//! Each suite checks one group of properties against an independent
//! oracle and reports a single pass/fail verdict with the measured
//! numbers.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use sbm_core::backbone::{Backbone, BackboneConfig};
use sbm_core::bridge::{iterative_sample, BridgeSchedule, NoiseConvention, SamplerConfig, SamplerMode, TimeGrid};
use sbm_core::loss::{LossWeights, SpectralLoss};
use sbm_core::rng::{self, Rng};
use sbm_core::signal::{Stft, StftConfig, EPS_MAG};
use sbm_core::ssm::{causal_conv, scan_parallel, scan_sequential, time_invariant_kernel, ScanImpl, SsmParams};
use sbm_core::tensor::check_param_gradients;
use sbm_core::{ParamStore, Tape, Tensor};

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = f();
    SuiteResult { name, passed, detail, elapsed: start.elapsed() }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn randn(r: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), rng::normals(r, shape.iter().product())).unwrap()
}

/// Marginal coefficients at both ends and `w_x + w_y = 1` on a grid.
pub fn bridge_boundaries() -> SuiteResult {
    timed("bridge boundaries", || {
        let s = BridgeSchedule::default();
        let (m0, m1) = (s.marginal_coeffs(0.0).unwrap(), s.marginal_coeffs(s.t_max).unwrap());
        let ends = (m0.w_x, m0.w_y, m0.sigma_x) == (1.0, 0.0, 0.0) && (m1.w_x, m1.w_y, m1.sigma_x) == (0.0, 1.0, 0.0);
        let worst = (0..64)
            .map(|i| {
                let m = s.marginal_coeffs(s.t_max * i as f64 / 63.0).unwrap();
                (m.w_x + m.w_y - 1.0).abs()
            })
            .fold(0.0, f64::max);
        (ends && worst < 1e-12, format!("endpoints exact: {ends}, max |w_x + w_y - 1| = {worst:.1e}"))
    })
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let inner: f64 = (1..panels).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}

/// Closed-form `σ²(t)` against trapezoidal integration of `g²`.
pub fn ve_quadrature() -> SuiteResult {
    timed("VE schedule vs quadrature", || {
        let mut r = rng::seeded(11);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let c = rng::uniform(&mut r, 0.05, 2.0);
            let k = rng::uniform(&mut r, 1.1, 5.0);
            let t = rng::uniform(&mut r, 0.01, 1.0);
            let s = BridgeSchedule::new(c, k, 0.01).unwrap();
            let q = trapezoid(|u| s.g2(u), 0.0, t, 100_000);
            worst = worst.max(((s.ve_sigma2(t).unwrap() - q) / q).abs());
        }
        (worst < 1e-8, format!("max rel err {worst:.2e} over 20 (c, k, t)"))
    })
}

/// Scalar toy `x ~ N(0, 1)`, `y = x + N(0, 1)`: the model sees `(x_t, t)`
/// and returns `E[x | x_t] = x_t / (1 + w_y² + σ_x²)`.
fn toy_gain(s: &BridgeSchedule, t: f64) -> f64 {
    let m = s.marginal_coeffs(t).unwrap();
    1.0 / (1.0 + m.w_y * m.w_y + m.sigma_x * m.sigma_x)
}

/// RK4 integration of the continuous deterministic flow
/// `dx/dσ² = (x - x̂) / σ²` from `σ²(T)` to nearly zero.
fn toy_ode_flow(s: &BridgeSchedule, y: f64) -> f64 {
    let ln_k = s.k.ln();
    let t_of = |u: f64| ((u * 2.0 * ln_k / s.c).ln_1p() / (2.0 * ln_k)).clamp(0.0, s.t_max);
    let f = |u: f64, x: f64| (1.0 - toy_gain(s, t_of(u))) * x / u;
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

/// 50-step SDE endpoint moments against the analytic posterior
/// `x | y ~ N(y/2, 1/2)`, and ODE error decreasing over 1, 10, 50 steps.
pub fn sampler_soundness() -> SuiteResult {
    timed("sampler soundness", || {
        let s = BridgeSchedule::default();
        let (y, paths) = (1.3, 100_000);
        let cfg = |n, mode| SamplerConfig { n_steps: n, grid: TimeGrid::Uniform, mode, convention: NoiseConvention::Full };
        let model = |x: &Tensor<f64>, t: f64| {
            let a = toy_gain(&s, t);
            Ok(x.map(|v| a * v))
        };
        let (out, _) =
            iterative_sample(&Tensor::full([paths], y), model, &cfg(50, SamplerMode::Sde), &s, &mut rng::seeded(4))
                .unwrap();
        let mean = out.data().iter().sum::<f64>() / paths as f64;
        let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
        let (mean_err, var_err) = ((mean - y / 2.0).abs(), (var - 0.5).abs());
        let reference = toy_ode_flow(&s, y);
        let ode_err: Vec<f64> = [1, 10, 50]
            .iter()
            .map(|&n| {
                let (o, _) = iterative_sample(&Tensor::full([1], y), model, &cfg(n, SamplerMode::Ode), &s, &mut rng::seeded(0))
                    .unwrap();
                (o.data()[0] - reference).abs()
            })
            .collect();
        let refines = ode_err[0] > ode_err[1] && ode_err[1] > ode_err[2];
        (
            mean_err < 0.02 && var_err < 0.02 && refines,
            format!(
                "SDE mean {mean:.4} (err {mean_err:.4}), var {var:.4} (err {var_err:.4}); ODE errors {:.2e} / {:.2e} / {:.2e}",
                ode_err[0], ode_err[1], ode_err[2]
            ),
        )
    })
}

fn scan_instance(seed: u64, batch: usize, len: usize, time_invariant: bool) -> (Tensor<f64>, SsmParams<f64>) {
    let (di, ds) = (2, 4);
    let mut r = rng::seeded(seed);
    let u = randn(&mut r, &[batch, len, di]);
    let a = Tensor::from_fn([di, ds], |_| -rng::uniform(&mut r, 0.1, 4.0));
    let mut delta = Tensor::from_fn([batch, len, di], |_| rng::uniform(&mut r, -4.0, 0.0).exp());
    let mut b = randn(&mut r, &[batch, len, ds]);
    let mut c = randn(&mut r, &[batch, len, ds]);
    if time_invariant {
        for (t, w) in [(&mut delta, di), (&mut b, ds), (&mut c, ds)] {
            let data = t.data_mut();
            for bi in 0..batch {
                for l in 1..len {
                    for k in 0..w {
                        data[(bi * len + l) * w + k] = data[bi * len * w + k];
                    }
                }
            }
        }
    }
    let d_skip = randn(&mut r, &[di]);
    (u, SsmParams { a, delta, b, c, d_skip })
}

/// Parallel against sequential scan in both precisions, and the
/// convolution form on time-invariant instances.
pub fn scan_equivalence() -> SuiteResult {
    timed("scan equivalence", || {
        let lens = [1, 13, 64, 256];
        let (mut e64, mut e32, mut econv) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..100u64 {
            let (u, p) = scan_instance(100 + i, 1, lens[i as usize % 4], false);
            let seq = scan_sequential(&u, &p).unwrap();
            e64 = e64.max(max_rel(scan_parallel(&u, &p).unwrap().data(), seq.data()));
            let (u32_, p32) = (
                u.cast::<f32>(),
                SsmParams { a: p.a.cast(), delta: p.delta.cast(), b: p.b.cast(), c: p.c.cast(), d_skip: p.d_skip.cast() },
            );
            let s32 = scan_sequential(&u32_, &p32).unwrap().cast::<f64>();
            let p32r = scan_parallel(&u32_, &p32).unwrap().cast::<f64>();
            e32 = e32.max(max_rel(p32r.data(), s32.data()));
        }
        for i in 0..50u64 {
            let len = lens[i as usize % 4];
            let (u, mut p) = scan_instance(300 + i, 1, len, true);
            p.d_skip = Tensor::zeros([2]);
            let seq = scan_sequential(&u, &p).unwrap();
            for ch in 0..2 {
                let k = time_invariant_kernel(&p, &u, 0, ch).unwrap();
                let lane: Vec<f64> = (0..len).map(|l| u.data()[l * 2 + ch]).collect();
                let want: Vec<f64> = (0..len).map(|l| seq.data()[l * 2 + ch]).collect();
                econv = econv.max(max_rel(&causal_conv(&lane, &k), &want));
            }
        }
        (
            e64 < 1e-10 && e32 < 1e-5 && econv < 1e-6,
            format!("parallel vs sequential {e64:.1e} (f64), {e32:.1e} (f32); convolution {econv:.1e}"),
        )
    })
}

/// Small full-model config used by the gradient suite.
pub fn gradcheck_config(scan: ScanImpl, time_causal: bool) -> BackboneConfig {
    BackboneConfig {
        n_blocks: 1,
        d_model: 4,
        d_state: 2,
        expand: 2,
        conv_width: 2,
        tf_compress: (2, 2),
        time_causal,
        timestep: true,
        fourier_dim: 4,
        fourier_scale: 1.0,
        scan,
        ..BackboneConfig::default()
    }
}

/// Central differences with a 1e-5 step over every trainable parameter
/// of the full model and loss, plus a nonzero-gradient check.
pub fn gradient_integrity() -> SuiteResult {
    timed("gradient integrity", || {
        let mut worst = (0.0f64, String::new());
        let mut params = 0;
        let mut silent = Vec::new();
        for (scan, causal, seed) in [(ScanImpl::Sequential, true, 35), (ScanImpl::Parallel, false, 35)] {
            let cfg = gradcheck_config(scan, causal);
            params = params.max(Backbone::param_count(&cfg).unwrap());
            let mut store = ParamStore::<f64>::new();
            let bb = Backbone::new(cfg, &mut store, &mut rng::seeded(seed)).unwrap();
            // Step sizes near 0.5 so the state path carries real gradient.
            let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.ends_with("dt_proj.b")).map(|(id, _)| id).collect();
            for id in ids {
                store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = -0.43);
            }
            let stft = StftConfig::new(16, 4, 16_000).unwrap();
            let loss =
                SpectralLoss::<f64>::new(LossWeights { lambda: [1.0; 4], mr_resolutions: vec![(8, 2), (16, 4)] }, stft)
                    .unwrap();
            let n = 64;
            let mut r = rng::seeded(seed + 100);
            let mut wave = || randn(&mut r, &[2, n]).map(|v| 0.5 * v);
            let target = loss.main_stft().analyze(&wave()).unwrap().planes;
            let input = loss.main_stft().analyze(&wave()).unwrap().planes;
            let f = |tp: &mut Tape<f64>, s: &ParamStore<f64>| {
                let x = tp.constant(input.clone());
                let tg = tp.constant(target.clone());
                let est = bb.forward(tp, s, x, &[0.35, 0.9])?;
                Ok(loss.compute(tp, tg, est, n)?.total)
            };
            let report = check_param_gradients(&store, 1e-5, f).unwrap();
            for e in &report.entries {
                if e.rel_error > worst.0 {
                    worst = (e.rel_error, e.name.clone());
                }
            }
            let mut grads = store.clone();
            grads.zero_grad();
            let mut tape = Tape::new();
            let l = f(&mut tape, &grads).unwrap();
            tape.backward_into(l, &mut grads).unwrap();
            for (_, p) in grads.iter().filter(|(_, p)| p.trainable) {
                if p.grad.iter().all(|&g| g == 0.0) {
                    silent.push(p.name.clone());
                }
            }
        }
        (
            params <= 2_000 && worst.0 < 1e-4 && silent.is_empty(),
            format!(
                "{params} parameters, max rel err {:.2e} ({}), {} parameter(s) without gradient",
                worst.0,
                worst.1,
                silent.len()
            ),
        )
    })
}

/// Direct DFT of reflect-padded, Hann-windowed frames with `1/sqrt(n)`
/// scaling, as `[frame][bin] -> (re, im)`.
pub fn direct_stft(x: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<(f64, f64)>> {
    let n = x.len() as isize;
    let reflect = |mut i: isize| {
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        x[i as usize]
    };
    let window: Vec<f64> = (0..n_fft).map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / n_fft as f64).cos()).collect();
    let scale = (n_fft as f64).sqrt();
    (0..x.len().div_ceil(hop))
        .map(|l| {
            let start = (l * hop) as isize - (n_fft / 2) as isize;
            let frame: Vec<f64> = (0..n_fft).map(|j| window[j] * reflect(start + j as isize)).collect();
            (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, v) in frame.iter().enumerate() {
                        let a = 2.0 * PI * ((k * j) % n_fft) as f64 / n_fft as f64;
                        re += v * a.cos();
                        im -= v * a.sin();
                    }
                    (re / scale, im / scale)
                })
                .collect()
        })
        .collect()
}

/// Complex and magnitude squared errors summed over bins, and the bin count.
fn direct_errors(a: &[f64], b: &[f64], n_fft: usize, hop: usize) -> (f64, f64, usize) {
    let (sa, sb) = (direct_stft(a, n_fft, hop), direct_stft(b, n_fft, hop));
    let (mut cplx, mut mag, mut count) = (0.0, 0.0, 0);
    for (fa, fb) in sa.iter().zip(&sb) {
        for (&(ra, ia), &(rb, ib)) in fa.iter().zip(fb) {
            cplx += (ra - rb).powi(2) + (ia - ib).powi(2);
            let ma = (ra * ra + ia * ia + EPS_MAG).sqrt();
            let mb = (rb * rb + ib * ib + EPS_MAG).sqrt();
            mag += (ma - mb).powi(2);
            count += 1;
        }
    }
    (cplx, mag, count)
}

/// STFT round trip, adjoint identity, zero loss at equality and the loss
/// against a direct-DFT recomputation.
pub fn signal_correctness() -> SuiteResult {
    timed("signal correctness", || {
        let mut r = rng::seeded(7);
        let mut round_trip = 0.0f64;
        for (n_fft, hop) in [(128, 32), (256, 64), (512, 128), (256, 128), (512, 256)] {
            let s = Stft::<f64>::new(StftConfig::new(n_fft, hop, 16_000).unwrap()).unwrap();
            for n in [1, 100, 1000, 4321] {
                let w = randn(&mut r, &[1, n]);
                let back = s.synthesize(&s.analyze(&w).unwrap()).unwrap();
                round_trip = round_trip.max(max_rel(back.data(), w.data()));
            }
        }

        let mut adjoint = 0.0f64;
        let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for (n_fft, hop, n) in [(64, 16, 300), (128, 64, 257), (512, 128, 2000)] {
            let s = Stft::<f64>::new(StftConfig::new(n_fft, hop, 16_000).unwrap()).unwrap();
            let w = randn(&mut r, &[1, n]);
            let spec = randn(&mut r, &[1, 2, n_fft / 2 + 1, s.config().n_frames(n)]);

            let mut tape = Tape::new();
            let (wv, sv) = (tape.leaf(w.clone()), tape.constant(spec.clone()));
            let fw = s.forward(&mut tape, wv).unwrap();
            let prod = tape.mul(fw, sv).unwrap();
            let l = tape.sum_all(prod).unwrap();
            let lhs = inner(tape.value(fw).data(), spec.data());
            let rhs = inner(w.data(), tape.backward(l).unwrap().get(wv).unwrap());
            adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));

            let mut tape = Tape::new();
            let (sv, wv) = (tape.leaf(spec.clone()), tape.constant(w.clone()));
            let inv = s.inverse(&mut tape, sv, n).unwrap();
            let prod = tape.mul(inv, wv).unwrap();
            let l = tape.sum_all(prod).unwrap();
            let lhs = inner(tape.value(inv).data(), w.data());
            let rhs = inner(spec.data(), tape.backward(l).unwrap().get(sv).unwrap());
            adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }

        let n = 2048;
        let mr = vec![(128, 32), (256, 64), (512, 128)];
        let lambda = [1.0, 0.5, 2.0, 0.25];
        let loss =
            SpectralLoss::<f64>::new(LossWeights { lambda, mr_resolutions: mr.clone() }, StftConfig::default()).unwrap();
        let (clean, est) = (randn(&mut r, &[2, n]), randn(&mut r, &[2, n]));
        let eval = |a: &Tensor<f64>, b: &Tensor<f64>| {
            let mut tape = Tape::no_grad();
            let x = tape.constant(loss.main_stft().analyze(a).unwrap().planes);
            let y = tape.constant(loss.main_stft().analyze(b).unwrap().planes);
            let out = loss.compute(&mut tape, x, y, n).unwrap();
            tape.value(out.total).item().unwrap()
        };
        let at_equality = eval(&clean, &clean);
        let got = eval(&clean, &est);
        let mut expect = 0.0;
        for b in 0..2 {
            let (a, e) = (&clean.data()[b * n..(b + 1) * n], &est.data()[b * n..(b + 1) * n]);
            let (c, m, count) = direct_errors(a, e, 512, 128);
            expect += lambda[0] * c / (2.0 * count as f64 * 2.0) + lambda[1] * m / (count as f64 * 2.0);
            for &(nf, h) in &mr {
                let (c, m, count) = direct_errors(a, e, nf, h);
                expect += (lambda[2] * c / (2.0 * count as f64 * 2.0) + lambda[3] * m / (count as f64 * 2.0)) / mr.len() as f64;
            }
        }
        let loss_err = ((got - expect) / expect).abs();
        (
            round_trip < 1e-6 && adjoint < 1e-5 && at_equality == 0.0 && loss_err < 1e-6,
            format!(
                "round trip {round_trip:.1e}, adjoint {adjoint:.1e}, loss at equality {at_equality}, loss vs direct DFT {loss_err:.1e}"
            ),
        )
    })
}

/// The oracle suites in acceptance order (criteria 2 to 7).
pub fn all() -> Vec<fn() -> SuiteResult> {
    vec![bridge_boundaries, ve_quadrature, sampler_soundness, scan_equivalence, gradient_integrity, signal_correctness]
}
