//! Deterministic signal generators: speech-like sources, noises and room
//! impulse responses. All run at [`SAMPLE_RATE`] in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_10, PI};

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float as _;

pub const SAMPLE_RATE: u32 = 16_000;
const FS: f64 = SAMPLE_RATE as f64;
pub const CLEAN_PEAK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanKind {
    /// Pitch-modulated harmonic stack with 1/h amplitudes and syllable-like
    /// envelopes.
    HarmonicVoice,
    /// Exponential sweep with a slow envelope.
    Chirp,
    /// Band-passed noise bursts in a syllable rhythm.
    NoiseBurstSentence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    /// Sum of several independent speech-like sources plus a little noise.
    Babble,
}

pub fn peak_normalize(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        let g = peak / m;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Syllable envelope: raised-cosine bumps of 120-320 ms separated by short
/// gaps, occasionally a longer pause.
fn syllable_envelope(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let mut pos = (rng::uniform(rng, 0.0, 0.08) * FS) as usize;
    while pos < n {
        let len = (rng::uniform(rng, 0.12, 0.32) * FS) as usize;
        let level = rng::uniform(rng, 0.5, 1.0);
        for i in 0..len.min(n - pos) {
            let phase = i as f64 / len as f64;
            env[pos + i] = level * (0.5 - 0.5 * libm::cos(2.0 * PI * phase)).sqrt();
        }
        let gap = if rng.random::<f64>() < 0.15 { rng::uniform(rng, 0.15, 0.35) } else { rng::uniform(rng, 0.02, 0.08) };
        pos += len + (gap * FS) as usize;
    }
    env
}

fn harmonic_voice(n: usize, rng: &mut Rng) -> Vec<f64> {
    let f0 = rng::uniform(rng, 90.0, 220.0);
    let vib_rate = rng::uniform(rng, 3.0, 6.0);
    let vib_depth = rng::uniform(rng, 0.02, 0.06);
    let drift_rate = rng::uniform(rng, 0.2, 0.7);
    let drift_phase = rng::uniform(rng, 0.0, 2.0 * PI);
    let env = syllable_envelope(n, rng);
    let max_h = 40;
    let phases: Vec<f64> = (0..max_h).map(|_| rng::uniform(rng, 0.0, 2.0 * PI)).collect();
    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / FS;
        let f = f0
            * (1.0 + vib_depth * libm::sin(2.0 * PI * vib_rate * t))
            * (1.0 + 0.15 * libm::sin(2.0 * PI * drift_rate * t + drift_phase));
        phase += 2.0 * PI * f / FS;
        if env[i] == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for h in 1..=max_h {
            if h as f64 * f >= 7_000.0 {
                break;
            }
            s += libm::sin(h as f64 * phase + phases[h - 1]) / h as f64;
        }
        *o = env[i] * s;
    }
    out
}

fn chirp(n: usize, rng: &mut Rng) -> Vec<f64> {
    let f_lo = rng::uniform(rng, 80.0, 200.0);
    let f_hi = rng::uniform(rng, 2_000.0, 6_000.0);
    let dur = n as f64 / FS;
    let k = libm::log(f_hi / f_lo) / dur;
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            let env = libm::sin(PI * t / dur).powi(2);
            env * libm::sin(2.0 * PI * f_lo * (libm::exp(k * t) - 1.0) / k)
        })
        .collect()
}

/// Two-pole resonator over white noise, centre `fc`, bandwidth `bw`.
fn band_noise(n: usize, fc: f64, bw: f64, rng: &mut Rng) -> Vec<f64> {
    let r = libm::exp(-PI * bw / FS);
    let a1 = 2.0 * r * libm::cos(2.0 * PI * fc / FS);
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0, 0.0);
    (0..n)
        .map(|_| {
            let y = rng::normal::<f64>(rng) + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn noise_burst_sentence(n: usize, rng: &mut Rng) -> Vec<f64> {
    let env = syllable_envelope(n, rng);
    let fc = rng::uniform(rng, 300.0, 1_500.0);
    let noise = band_noise(n, fc, rng::uniform(rng, 200.0, 800.0), rng);
    env.iter().zip(noise).map(|(e, x)| e * x).collect()
}

/// Clean source of `dur_s` seconds (0.5 to 10), peak-normalized to 0.5.
pub fn synth_clean(kind: CleanKind, dur_s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.5..=10.0).contains(&dur_s) {
        return Err(Error::Config(format!("clean duration must lie in [0.5, 10] s, got {dur_s}")));
    }
    let n = (dur_s * FS).round() as usize;
    let mut rng = rng::seeded(seed);
    let mut x = match kind {
        CleanKind::HarmonicVoice => harmonic_voice(n, &mut rng),
        CleanKind::Chirp => chirp(n, &mut rng),
        CleanKind::NoiseBurstSentence => noise_burst_sentence(n, &mut rng),
    };
    peak_normalize(&mut x, CLEAN_PEAK);
    Ok(x)
}

/// Noise of `n` samples with unit RMS.
pub fn synth_noise(kind: NoiseKind, n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut x: Vec<f64> = match kind {
        NoiseKind::White => rng::normals(rng, n),
        NoiseKind::Pink => {
            // Paul Kellet's economy pink filter.
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..n)
                .map(|_| {
                    let w: f64 = rng::normal(rng);
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseKind::Babble => {
            let talkers = 6;
            let mut acc = vec![0.0; n];
            for _ in 0..talkers {
                let v = harmonic_voice(n, rng);
                let rms = (v.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt().max(1e-12);
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x / rms;
                }
            }
            for (a, w) in acc.iter_mut().zip(rng::normals::<f64>(rng, n)) {
                *a += 0.1 * w;
            }
            acc
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Exponentially decaying noise tail behind a unit direct path:
/// `h[0] = 1`, `h[n] = 0.1 · N(0, 1) · exp(-n · 3 ln 10 / (t60 · fs))`, so the
/// tail energy falls by 60 dB after `t60` seconds.
pub fn synth_rir(t60_s: f64, length: usize, seed: u64) -> Result<Vec<f64>> {
    if !(t60_s > 0.0) {
        return Err(Error::Config(format!("t60 must be positive, got {t60_s}")));
    }
    if length == 0 {
        return Err(Error::Config("rir length must be positive".into()));
    }
    let mut rng = rng::seeded(seed);
    let decay = 3.0 * LN_10 / (t60_s * FS);
    let mut h = Vec::with_capacity(length);
    h.push(1.0);
    for n in 1..length {
        h.push(0.05 * rng::normal::<f64>(&mut rng) * libm::exp(-decay * n as f64));
    }
    Ok(h)
}

/// Backward-integrated energy decay curve in dB relative to the total.
pub fn schroeder_db(h: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    edc.iter().map(|e| 10.0 * libm::log10(e.max(f64::MIN_POSITIVE) / total)).collect()
}

/// First time (seconds) at which the decay curve reaches `level_db`.
pub fn decay_time(h: &[f64], level_db: f64) -> Option<f64> {
    schroeder_db(h).iter().position(|&d| d <= level_db).map(|i| i as f64 / FS)
}

/// Linear convolution truncated to `x.len()`.
pub fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for (k, &hk) in h.iter().enumerate() {
        if k >= n {
            break;
        }
        if hk == 0.0 {
            continue;
        }
        for (yo, &xv) in y[k..].iter_mut().zip(&x[..n - k]) {
            *yo += hk * xv;
        }
    }
    y
}
