mod common;

use proptest::prelude::*;
use sbm_core::loss::{LossWeights, SpectralLoss};
use sbm_core::signal::{StftConfig, EPS_MAG};
use sbm_core::{rng, Error, Tape, Tensor};

fn loss_with(lambda: [f64; 4], mr: Vec<(usize, usize)>, n_fft: usize, hop: usize) -> SpectralLoss<f64> {
    SpectralLoss::new(LossWeights { lambda, mr_resolutions: mr }, StftConfig::new(n_fft, hop, 16_000).unwrap()).unwrap()
}

fn eval(loss: &SpectralLoss<f64>, target: &Tensor<f64>, estimate: &Tensor<f64>, n: usize) -> (f64, [f64; 4]) {
    let mut tape = Tape::no_grad();
    let (t, e) = (tape.constant(target.clone()), tape.constant(estimate.clone()));
    let out = loss.compute(&mut tape, t, e, n).unwrap();
    (tape.value(out.total).item().unwrap(), out.terms)
}

fn wave(seed: u64, b: usize, n: usize) -> Tensor<f64> {
    Tensor::new([b, n], rng::normals(&mut rng::seeded(seed), b * n)).unwrap()
}

fn spec_errors(a: &[f64], b: &[f64], n_fft: usize, hop: usize) -> (f64, f64, usize) {
    let (sa, sb) = (common::naive_stft(a, n_fft, hop), common::naive_stft(b, n_fft, hop));
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

#[test]
fn zero_when_estimate_equals_target() {
    let loss = loss_with([1.0; 4], vec![(32, 8), (64, 16)], 32, 8);
    let x = loss.main_stft().analyze(&wave(1, 2, 200)).unwrap().planes;
    let (total, terms) = eval(&loss, &x, &x, 200);
    assert_eq!(total, 0.0);
    assert_eq!(terms, [0.0; 4]);
}

#[test]
fn single_bin_perturbation() {
    let loss = loss_with([1.0, 0.0, 0.0, 0.0], vec![], 16, 4);
    let x = loss.main_stft().analyze(&wave(2, 1, 64)).unwrap().planes;
    let mut e = x.clone();
    let delta = 0.37;
    e.data_mut()[11] += delta;
    let (total, _) = eval(&loss, &x, &e, 64);
    assert!((total - delta * delta / x.numel() as f64).abs() < 1e-15);
}

#[test]
fn matches_independent_recompute() {
    let n = 2048;
    let mr = vec![(128, 32), (256, 64), (512, 128)];
    let loss = loss_with([1.0, 0.5, 2.0, 0.25], mr.clone(), 512, 128);
    let (clean, est) = (wave(3, 2, n), wave(4, 2, n));
    let xt = loss.main_stft().analyze(&clean).unwrap().planes;
    let xe = loss.main_stft().analyze(&est).unwrap().planes;
    let (total, terms) = eval(&loss, &xt, &xe, n);

    // Perfect reconstruction means the multi-resolution terms see the
    // original waveforms, so every term comes straight from direct DFTs.
    let mut expect = [0.0; 4];
    for b in 0..2 {
        let (a, e) = (&clean.data()[b * n..(b + 1) * n], &est.data()[b * n..(b + 1) * n]);
        let (c, m, count) = spec_errors(a, e, 512, 128);
        expect[0] += c / (2.0 * count as f64 * 2.0);
        expect[1] += m / (count as f64 * 2.0);
        for &(nf, h) in &mr {
            let (c, m, count) = spec_errors(a, e, nf, h);
            expect[2] += c / (2.0 * count as f64 * 2.0) / mr.len() as f64;
            expect[3] += m / (count as f64 * 2.0) / mr.len() as f64;
        }
    }
    for i in 0..4 {
        assert!((terms[i] - expect[i]).abs() <= 1e-6 * expect[i], "term {i}: {} vs {}", terms[i], expect[i]);
    }
    let weighted = expect[0] + 0.5 * expect[1] + 2.0 * expect[2] + 0.25 * expect[3];
    assert!((total - weighted).abs() <= 1e-6 * weighted);
}

#[test]
fn shape_mismatch_is_dimension_error() {
    let loss = loss_with([1.0; 4], vec![(16, 4)], 16, 4);
    let mut tape = Tape::<f64>::no_grad();
    let a = tape.constant(Tensor::zeros([1, 2, 9, 16]));
    let b = tape.constant(Tensor::zeros([1, 2, 9, 15]));
    assert!(matches!(loss.compute(&mut tape, a, b, 64), Err(Error::Dimension { .. })));
}

#[test]
fn invalid_weights_are_config_errors() {
    let stft = StftConfig::new(16, 4, 16_000).unwrap();
    for w in [
        LossWeights { lambda: [0.0; 4], mr_resolutions: vec![] },
        LossWeights { lambda: [-1.0, 1.0, 0.0, 0.0], mr_resolutions: vec![] },
        LossWeights { lambda: [0.0, 0.0, 1.0, 0.0], mr_resolutions: vec![] },
        LossWeights { lambda: [1.0; 4], mr_resolutions: vec![(16, 5)] },
    ] {
        assert!(matches!(SpectralLoss::<f64>::new(w, stft), Err(Error::Config(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nonnegative_and_symmetric(seed in any::<u64>(), lam in prop::array::uniform4(0.0f64..2.0)) {
        prop_assume!(lam.iter().any(|&l| l > 0.0));
        let n = 96;
        let loss = loss_with(lam, vec![(16, 4), (32, 8)], 16, 4);
        let a = loss.main_stft().analyze(&wave(seed, 1, n)).unwrap().planes;
        let b = loss.main_stft().analyze(&wave(seed ^ 0xabc, 1, n)).unwrap().planes;
        let (ab, _) = eval(&loss, &a, &b, n);
        let (ba, _) = eval(&loss, &b, &a, n);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }
}
