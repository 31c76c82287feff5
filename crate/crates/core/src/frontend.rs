//! MFCC front-end: 13 cepstral coefficients with first and second
//! derivatives (39 per frame), plus the analytic vector-Jacobian product of
//! the whole chain back to the waveform, needed by the attack.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result, Waveform};

/// Analysis parameters. Defaults: 25 ms frames, 10 ms hop, Hamming window,
/// 512-point FFT, 26 mel filters, 13 cepstra, regression deltas over +-2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_filters: usize,
    pub num_ceps: usize,
    pub log_floor: f64,
    pub delta_window: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_length: 400,
            hop: 160,
            fft_size: 512,
            mel_filters: 26,
            num_ceps: 13,
            log_floor: 1e-10,
            delta_window: 2,
        }
    }
}

impl FrontendConfig {
    /// Number of output dimensions (static + delta + delta-delta).
    pub fn feature_dim(&self) -> usize {
        3 * self.num_ceps
    }

    /// Frames produced for a signal of `len` samples, if any.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.frame_length {
            None
        } else {
            Some(1 + (len - self.frame_length) / self.hop)
        }
    }
}

/// Per-frame feature matrix (T x 39) with the config that produced it.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    pub config: FrontendConfig,
}

impl FeatureSequence {
    /// Binary export: header (T, dim as u64 little-endian), then row-major
    /// 64-bit floats.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let (t, d) = self.frames.dim();
        w.write_all(&(t as u64).to_le_bytes())?;
        w.write_all(&(d as u64).to_le_bytes())?;
        for v in self.frames.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, config: FrontendConfig) -> Result<Self> {
        let mut h = [0u8; 8];
        r.read_exact(&mut h)?;
        let t = u64::from_le_bytes(h) as usize;
        r.read_exact(&mut h)?;
        let d = u64::from_le_bytes(h) as usize;
        let mut data = vec![0.0f64; t * d];
        for v in data.iter_mut() {
            r.read_exact(&mut h)?;
            *v = f64::from_le_bytes(h);
        }
        let frames = Array2::from_shape_vec((t, d), data)
            .map_err(|e| Error::Format(format!("bad feature matrix shape: {e}")))?;
        Ok(Self { frames, config })
    }
}

/// Precomputed analysis state shared across utterances.
#[derive(Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    /// Dense filterbank weights, `mel_filters` x `fft_size/2 + 1`.
    mel_weights: Array2<f64>,
    /// Orthonormal DCT-II basis, `num_ceps` x `mel_filters`.
    dct: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl Frontend {
    pub fn new(cfg: FrontendConfig, sample_rate: u32) -> Result<Self> {
        if cfg.frame_length > cfg.fft_size {
            return Err(Error::InvalidArgument("frame_length must be <= fft_size".into()));
        }
        if cfg.num_ceps > cfg.mel_filters {
            return Err(Error::InvalidArgument("num_ceps must be <= mel_filters".into()));
        }
        let j = cfg.frame_length;
        let window: Vec<f64> = (0..j)
            .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (j - 1) as f64).cos())
            .collect();

        let n_bins = cfg.fft_size / 2 + 1;
        let fs = sample_rate as f64;
        let nyquist = fs / 2.0;
        let m = cfg.mel_filters;
        let mel_points: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(hz_to_mel(nyquist) * i as f64 / (m + 1) as f64))
            .collect();
        let mut mel_weights = Array2::zeros((m, n_bins));
        for f in 0..m {
            let (lo, mid, hi) = (mel_points[f], mel_points[f + 1], mel_points[f + 2]);
            for k in 0..n_bins {
                let freq = k as f64 * fs / cfg.fft_size as f64;
                let w = if freq >= lo && freq <= mid {
                    (freq - lo) / (mid - lo)
                } else if freq > mid && freq <= hi {
                    (hi - freq) / (hi - mid)
                } else {
                    0.0
                };
                mel_weights[[f, k]] = w.max(0.0);
            }
        }

        let mut dct = Array2::zeros((cfg.num_ceps, m));
        for i in 0..cfg.num_ceps {
            let alpha = if i == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            for n in 0..m {
                dct[[i, n]] = alpha
                    * (std::f64::consts::PI * i as f64 * (2 * n + 1) as f64 / (2 * m) as f64)
                        .cos();
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self { cfg, window, mel_weights, dct, fft })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Static cepstra (T x num_ceps).
    pub fn mfcc(&self, x: &Waveform) -> Result<Array2<f64>> {
        let t_frames = self.cfg.frame_count(x.len()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "signal of {} samples is shorter than one frame ({})",
                x.len(),
                self.cfg.frame_length
            ))
        })?;
        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut ceps = Array2::zeros((t_frames, self.cfg.num_ceps));
        let mut buf = vec![Complex64::default(); self.cfg.fft_size];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..t_frames {
            let off = t * self.cfg.hop;
            for i in 0..self.cfg.fft_size {
                let v = if i < self.cfg.frame_length {
                    x.samples[off + i] * self.window[i]
                } else {
                    0.0
                };
                buf[i] = Complex64::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_bins {
                power[k] = buf[k].norm_sqr();
            }
            for f in 0..self.cfg.mel_filters {
                let energy: f64 = (0..n_bins).map(|k| self.mel_weights[[f, k]] * power[k]).sum();
                let log_e = energy.max(self.cfg.log_floor).ln();
                for i in 0..self.cfg.num_ceps {
                    ceps[[t, i]] += self.dct[[i, f]] * log_e;
                }
            }
        }
        Ok(ceps)
    }

    /// Full 39-dimensional features: `[static | delta | delta-delta]`.
    pub fn features(&self, x: &Waveform) -> Result<FeatureSequence> {
        let static_ceps = self.mfcc(x)?;
        Ok(add_deltas(&static_ceps, self.cfg))
    }

    /// Vector-Jacobian product of the full feature chain: maps a T x 39
    /// feature-space gradient to a waveform gradient of `x.len()` samples.
    ///
    /// The log stage uses `1/max(energy, log_floor)` with zero gradient below
    /// the floor; the power-spectrum stage is `2 Re(conj(X) dX)`.
    pub fn backward(&self, x: &Waveform, grad_features: &Array2<f64>) -> Result<Vec<f64>> {
        let t_frames = self
            .cfg
            .frame_count(x.len())
            .ok_or_else(|| Error::InvalidArgument("signal shorter than one frame".into()))?;
        let nc = self.cfg.num_ceps;
        if grad_features.dim() != (t_frames, 3 * nc) {
            return Err(Error::InvalidArgument(format!(
                "gradient shape {:?} does not match {} frames x {}",
                grad_features.dim(),
                t_frames,
                3 * nc
            )));
        }

        // Collapse the delta stages: features = [S, D(S), D(D(S))], so the
        // static-equivalent gradient is Gs + D'(Gd) + D'(D'(Gdd)).
        let gs = grad_features.slice(ndarray::s![.., 0..nc]).to_owned();
        let gd = grad_features.slice(ndarray::s![.., nc..2 * nc]).to_owned();
        let gdd = grad_features.slice(ndarray::s![.., 2 * nc..3 * nc]).to_owned();
        let w = self.cfg.delta_window;
        let g_static = gs + delta_adjoint(&gd, w) + delta_adjoint(&delta_adjoint(&gdd, w), w);

        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut grad_wav = vec![0.0f64; x.len()];
        let mut buf = vec![Complex64::default(); self.cfg.fft_size];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        let mut spectrum = vec![Complex64::default(); n_bins];
        let mut energies = vec![0.0f64; self.cfg.mel_filters];

        for t in 0..t_frames {
            let off = t * self.cfg.hop;
            for i in 0..self.cfg.fft_size {
                let v = if i < self.cfg.frame_length {
                    x.samples[off + i] * self.window[i]
                } else {
                    0.0
                };
                buf[i] = Complex64::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            spectrum.copy_from_slice(&buf[..n_bins]);
            for f in 0..self.cfg.mel_filters {
                energies[f] = (0..n_bins)
                    .map(|k| self.mel_weights[[f, k]] * spectrum[k].norm_sqr())
                    .sum();
            }

            // DCT transpose, then the clamped-log and filterbank transposes.
            for v in buf.iter_mut() {
                *v = Complex64::default();
            }
            for f in 0..self.cfg.mel_filters {
                let g_log: f64 = (0..nc).map(|i| self.dct[[i, f]] * g_static[[t, i]]).sum();
                let g_energy = if energies[f] > self.cfg.log_floor {
                    g_log / energies[f]
                } else {
                    0.0
                };
                if g_energy == 0.0 {
                    continue;
                }
                for k in 0..n_bins {
                    let w_fk = self.mel_weights[[f, k]];
                    if w_fk != 0.0 {
                        // d|X|^2 = 2 Re(conj(X) dX); accumulate conj(X) terms
                        // into the one-sided gradient spectrum.
                        buf[k] += spectrum[k].conj() * (g_energy * w_fk);
                    }
                }
            }
            // For a real-input DFT the gradient wrt time sample j is
            // 2 Re( forward-DFT of the one-sided gradient spectrum at j ).
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for j in 0..self.cfg.frame_length {
                grad_wav[off + j] += 2.0 * buf[j].re * self.window[j];
            }
        }
        Ok(grad_wav)
    }
}

/// Regression delta operator over `+-window` frames with edge replication.
pub fn delta_op(input: &Array2<f64>, window: usize) -> Array2<f64> {
    let (t_frames, d) = input.dim();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros((t_frames, d));
    for t in 0..t_frames {
        for n in 1..=window {
            let fwd = (t + n).min(t_frames - 1);
            let bwd = t.saturating_sub(n);
            for c in 0..d {
                out[[t, c]] += n as f64 * (input[[fwd, c]] - input[[bwd, c]]) / denom;
            }
        }
    }
    out
}

/// Adjoint of [`delta_op`] (exact transpose, including edge replication).
fn delta_adjoint(grad: &Array2<f64>, window: usize) -> Array2<f64> {
    let (t_frames, d) = grad.dim();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros((t_frames, d));
    for t in 0..t_frames {
        for n in 1..=window {
            let fwd = (t + n).min(t_frames - 1);
            let bwd = t.saturating_sub(n);
            let coeff = n as f64 / denom;
            for c in 0..d {
                out[[fwd, c]] += coeff * grad[[t, c]];
                out[[bwd, c]] -= coeff * grad[[t, c]];
            }
        }
    }
    out
}

/// Appends delta and delta-delta columns: output is `[static | d | dd]`.
pub fn add_deltas(static_ceps: &Array2<f64>, cfg: FrontendConfig) -> FeatureSequence {
    let d = delta_op(static_ceps, cfg.delta_window);
    let dd = delta_op(&d, cfg.delta_window);
    let frames = ndarray::concatenate(Axis(1), &[static_ceps.view(), d.view(), dd.view()])
        .expect("same row counts");
    FeatureSequence { frames, config: cfg }
}
