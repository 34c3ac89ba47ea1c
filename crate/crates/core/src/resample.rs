//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.
//!
//! The kernel design follows the Octave `resample` defaults (60 dB stopband
//! rejection, roll-off width one tenth of the cutoff), and the polyphase
//! alignment matches `scipy.signal.resample_poly`. STOI uses the same kernel,
//! which keeps our intelligibility scores aligned with the common reference
//! implementation.

/// Stopband rejection of the anti-aliasing kernel in dB.
pub const REJECTION_DB: f64 = 60.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser window of length `m` (numpy's `kaiser`).
pub(crate) fn kaiser(m: usize, beta: f64) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let alpha = (m as f64 - 1.0) / 2.0;
    let denom = bessel_i0(beta);
    (0..m)
        .map(|n| {
            let r = (n as f64 - alpha) / alpha;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Anti-aliasing kernel for resampling by `up / down`, normalized to unit sum.
pub fn design_kernel(up: u64, down: u64) -> Vec<f64> {
    let g = gcd(up, down);
    let (p, q) = ((up / g) as f64, (down / g) as f64);
    let stopband_cutoff = 1.0 / (2.0 * p.max(q));
    let roll_off_width = stopband_cutoff / 10.0;
    let half = ((REJECTION_DB - 8.0) / (28.714 * roll_off_width)).ceil() as i64;
    let beta = if REJECTION_DB > 50.0 {
        0.1102 * (REJECTION_DB - 8.7)
    } else if REJECTION_DB >= 21.0 {
        0.5842 * (REJECTION_DB - 21.0).powf(0.4) + 0.07886 * (REJECTION_DB - 21.0)
    } else {
        0.0
    };
    let len = (2 * half + 1) as usize;
    let window = kaiser(len, beta);
    let mut h: Vec<f64> = (-half..=half)
        .zip(window)
        .map(|(t, w)| w * 2.0 * p * stopband_cutoff * sinc(2.0 * stopband_cutoff * t as f64))
        .collect();
    let total: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// Upsample by `up`, filter with `kernel`, downsample by `down`.
///
/// Output length is `ceil(len * up / down)`; the kernel's group delay is
/// compensated so output sample `m` is aligned with input time `m * down / up`.
pub fn resample_poly(x: &[f64], up: u64, down: u64, kernel: &[f64]) -> Vec<f64> {
    let g = gcd(up, down);
    let (up, down) = ((up / g) as usize, (down / g) as usize);
    let n_in = x.len();
    if n_in == 0 {
        return Vec::new();
    }
    let n_out = (n_in * up).div_ceil(down);
    let half_len = (kernel.len() - 1) / 2;
    let pre_pad = down - half_len % down;
    let pre_remove = (half_len + pre_pad) / down;
    let taps = kernel.len() as isize;
    let scale = up as f64;

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // Index into the padded kernel: padded[i] = kernel[i - pre_pad].
        let base = ((m + pre_remove) * down) as isize - pre_pad as isize;
        // Need 0 <= base - j*up < taps.
        let j_hi = if base < 0 { -1 } else { base / up as isize };
        let j_lo_num = base - taps + 1;
        let j_lo = if j_lo_num <= 0 {
            0
        } else {
            (j_lo_num + up as isize - 1) / up as isize
        };
        let j_hi = j_hi.min(n_in as isize - 1);
        let mut acc = 0.0;
        let mut j = j_lo;
        while j <= j_hi {
            acc += kernel[(base - j * up as isize) as usize] * x[j as usize];
            j += 1;
        }
        out.push(acc * scale);
    }
    out
}

/// Resample `x` from `from_rate` to `to_rate` Hz.
pub fn resample_rate(x: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if from_rate == to_rate {
        return x.to_vec();
    }
    let kernel = design_kernel(to_rate as u64, from_rate as u64);
    resample_poly(x, to_rate as u64, from_rate as u64, &kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_has_unit_sum_and_odd_length() {
        let h = design_kernel(5, 8);
        assert_eq!(h.len(), 2 * 290 + 1);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bessel_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-10);
    }

    #[test]
    fn output_length_is_ceiling_of_ratio() {
        let x = vec![0.5; 1001];
        assert_eq!(resample_poly(&x, 5, 8, &design_kernel(5, 8)).len(), 626);
        assert_eq!(resample_rate(&x, 16000, 48000).len(), 3003);
    }

    #[test]
    fn dc_level_preserved_in_interior() {
        let x = vec![0.25; 4000];
        let y = resample_rate(&x, 16000, 10000);
        for v in &y[400..2000] {
            assert!((v - 0.25).abs() < 1e-3, "{v}");
        }
    }
}
