//! Linear-phase FIR low-pass filter: Kaiser windowed-sinc design and
//! group-delay-compensated application.

use crate::{Error, Result, Waveform};

/// Symmetric (Type-I) FIR low-pass filter.
#[derive(Debug, Clone)]
pub struct FirFilter {
    taps: Vec<f64>,
    group_delay: usize,
    pub cutoff_hz: f64,
    pub stopband_hz: f64,
    pub attenuation_db: f64,
    pub sample_rate: u32,
}

impl FirFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn group_delay(&self) -> usize {
        self.group_delay
    }

    /// Amplitude response at `freq_hz`, in dB, evaluated by a direct
    /// discrete-frequency transform of the taps.
    pub fn response_db(&self, freq_hz: f64) -> f64 {
        amplitude_response(&self.taps, freq_hz, self.sample_rate as f64)
            .abs()
            .max(1e-300)
            .log10()
            * 20.0
    }

    /// Taps as a text column, one coefficient per line.
    pub fn taps_text(&self) -> String {
        let mut out = String::new();
        for t in &self.taps {
            out.push_str(&format!("{t:.17e}\n"));
        }
        out
    }
}

/// Zero-phase amplitude of a symmetric odd-length tap vector.
fn amplitude_response(taps: &[f64], freq_hz: f64, sample_rate: f64) -> f64 {
    let m = (taps.len() - 1) / 2;
    let omega = std::f64::consts::TAU * freq_hz / sample_rate;
    let mut acc = taps[m];
    for k in 1..=m {
        acc += 2.0 * taps[m - k] * (omega * k as f64).cos();
    }
    acc
}

/// Kaiser window beta for a target stopband attenuation in dB.
fn kaiser_beta(attenuation_db: f64) -> f64 {
    let a = attenuation_db;
    if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a >= 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn kaiser_window(n: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

fn kaiser_taps(n: usize, cutoff_norm: f64, beta: f64) -> Vec<f64> {
    let window = kaiser_window(n, beta);
    let mid = (n - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - mid;
            2.0 * cutoff_norm * sinc(2.0 * cutoff_norm * t) * window[i]
        })
        .collect();
    // Unity DC gain.
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Designs a Kaiser windowed-sinc low-pass filter whose measured response
/// deviates at most 0.1 dB below `cutoff_hz` and is at least
/// `min_attenuation_db` down from `stopband_hz` upward.
///
/// Length starts from the standard Kaiser estimate for the transition band
/// and grows (keeping the tap count odd) until the measured response meets
/// the contract on a 1 Hz grid.
pub fn design_lowpass(
    sample_rate: u32,
    cutoff_hz: f64,
    stopband_hz: f64,
    min_attenuation_db: f64,
) -> Result<FirFilter> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < stopband_hz && stopband_hz < nyquist) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < cutoff ({cutoff_hz}) < stopband ({stopband_hz}) < Nyquist ({nyquist})"
        )));
    }
    if min_attenuation_db <= 0.0 {
        return Err(Error::InvalidArgument("attenuation must be positive".into()));
    }

    let fs = sample_rate as f64;
    let beta = kaiser_beta(min_attenuation_db);
    let delta_omega = std::f64::consts::TAU * (stopband_hz - cutoff_hz) / fs;
    let est = ((min_attenuation_db - 7.95) / (2.285 * delta_omega)).ceil() as usize + 1;
    let mut n = est | 1; // odd tap count
    let cutoff_norm = (cutoff_hz + stopband_hz) / 2.0 / fs;

    for _ in 0..200 {
        let taps = kaiser_taps(n, cutoff_norm, beta);
        if meets_spec(&taps, fs, cutoff_hz, stopband_hz, min_attenuation_db) {
            return Ok(FirFilter {
                group_delay: (n - 1) / 2,
                taps,
                cutoff_hz,
                stopband_hz,
                attenuation_db: min_attenuation_db,
                sample_rate,
            });
        }
        n += 2;
    }
    Err(Error::InvalidArgument(format!(
        "filter spec infeasible: cutoff {cutoff_hz} Hz, stopband {stopband_hz} Hz, {min_attenuation_db} dB"
    )))
}

fn meets_spec(taps: &[f64], fs: f64, cutoff: f64, stopband: f64, atten: f64) -> bool {
    let nyq = fs / 2.0;
    for f in 0..=(nyq as usize) {
        let f = f as f64;
        let db = amplitude_response(taps, f, fs).abs().max(1e-300).log10() * 20.0;
        if f <= cutoff && db.abs() > 0.1 {
            return false;
        }
        if f >= stopband && db > -atten {
            return false;
        }
    }
    true
}

/// Applies the filter with group-delay compensation: the output is aligned
/// with the input and has the same length. The head is padded by holding the
/// first sample, the tail is zero-padded, so the last `group_delay` samples
/// roll off.
pub fn apply_fir(filter: &FirFilter, x: &Waveform) -> Result<Waveform> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty waveform".into()));
    }
    let taps = &filter.taps;
    let gd = filter.group_delay as i64;
    let len = x.samples.len() as i64;
    let out: Vec<f64> = (0..len)
        .map(|n| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let i = n + gd - k as i64;
                if i < 0 {
                    acc += h * x.samples[0];
                } else if i < len {
                    acc += h * x.samples[i as usize];
                }
            }
            acc
        })
        .collect();
    Ok(Waveform::new(out, x.sample_rate))
}
