use std::f64::consts::PI;

/// Direct DFT of reflect-padded, Hann-windowed frames with 1/sqrt(n) scaling.
/// Returns `[b][frame][bin] -> (re, im)`.
pub fn naive_stft(x: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<(f64, f64)>> {
    let n = x.len() as isize;
    let reflect = |i: isize| -> f64 {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        x[i as usize]
    };
    let frames = x.len().div_ceil(hop);
    (0..frames)
        .map(|l| {
            let start = (l * hop) as isize - (n_fft / 2) as isize;
            (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for j in 0..n_fft {
                        let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / n_fft as f64).cos();
                        let v = w * reflect(start + j as isize);
                        let a = 2.0 * PI * (k * j) as f64 / n_fft as f64;
                        re += v * a.cos();
                        im -= v * a.sin();
                    }
                    let s = (n_fft as f64).sqrt();
                    (re / s, im / s)
                })
                .collect()
        })
        .collect()
}
