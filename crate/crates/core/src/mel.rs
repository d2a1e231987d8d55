//! Log-mel spectrogram front-end.
//!
//! Hann-windowed STFT without center padding, power spectrum, triangular
//! mel filterbank (HTK scale, 50 Hz - 8 kHz, area-normalized), then
//! `log(mel_power + epsilon)`. Frame count is `1 + (len - n_fft) / hop`,
//! so a 5 s clip at 16 kHz under the default config is exactly 128 x 247.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::AudioClip;

pub const MELS_MAGIC: &[u8; 4] = b"MELS";

#[derive(Debug, Error)]
pub enum MelError {
    #[error("invalid frontend config: {0}")]
    InvalidConfig(String),
    #[error("clip of {len} samples is shorter than one frame ({n_fft})")]
    ClipTooShort { len: usize, n_fft: usize },
    #[error("clip rate {clip_hz} Hz does not match config rate {cfg_hz} Hz")]
    SampleRateMismatch { clip_hz: u32, cfg_hz: u32 },
    #[error("mel dump i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("mel dump is malformed: {0}")]
    MalformedDump(String),
}

/// Mel front-end configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub window_s: f64,
    pub log_epsilon: f32,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16000,
            n_fft: 1024,
            hop: 320,
            n_mels: 128,
            window_s: 5.0,
            log_epsilon: 1e-5,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<(), MelError> {
        if self.sample_rate_hz == 0 {
            return Err(MelError::InvalidConfig("sample_rate_hz must be > 0".into()));
        }
        if self.hop == 0 || self.n_fft <= self.hop {
            return Err(MelError::InvalidConfig("need n_fft > hop > 0".into()));
        }
        if self.n_mels == 0 || self.n_mels > self.n_fft / 2 + 1 {
            return Err(MelError::InvalidConfig(
                "need 0 < n_mels <= n_fft/2 + 1".into(),
            ));
        }
        if !(self.window_s > 0.0) {
            return Err(MelError::InvalidConfig("window_s must be > 0".into()));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(MelError::InvalidConfig("log_epsilon must be > 0".into()));
        }
        Ok(())
    }

    /// Samples per training window.
    pub fn window_samples(&self) -> usize {
        (self.window_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Frame count for a clip of `len` samples.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        if len < self.n_fft {
            None
        } else {
            Some(1 + (len - self.n_fft) / self.hop)
        }
    }
}

/// F x T log-power mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub hop_s: f32,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

const MEL_F_MIN_HZ: f64 = 50.0;
const MEL_F_MAX_HZ: f64 = 8000.0;

/// Center frequencies (Hz) of the triangular mel filters.
pub fn mel_center_frequencies_hz(cfg: &FrontendConfig) -> Vec<f64> {
    let f_max = MEL_F_MAX_HZ.min(cfg.sample_rate_hz as f64 / 2.0);
    let lo = hz_to_mel(MEL_F_MIN_HZ);
    let hi = hz_to_mel(f_max);
    let n = cfg.n_mels;
    (1..=n)
        .map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (n + 1) as f64))
        .collect()
}

type SparseFilter = Vec<(usize, f32)>;

/// Precomputed STFT plan, window, and filterbank for one config.
pub struct MelExtractor {
    cfg: FrontendConfig,
    window: Vec<f32>,
    filters: Vec<SparseFilter>,
    fft: Arc<dyn Fft<f32>>,
}

impl MelExtractor {
    pub fn new(cfg: FrontendConfig) -> Result<Self, MelError> {
        cfg.validate()?;
        let n = cfg.n_fft;
        // periodic Hann
        let window: Vec<f32> = (0..n)
            .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
            .collect();
        let filters = build_filterbank(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram, MelError> {
        if clip.sample_rate_hz() != self.cfg.sample_rate_hz {
            return Err(MelError::SampleRateMismatch {
                clip_hz: clip.sample_rate_hz(),
                cfg_hz: self.cfg.sample_rate_hz,
            });
        }
        let samples = clip.samples();
        let n_fft = self.cfg.n_fft;
        let t = self
            .cfg
            .frames_for(samples.len())
            .ok_or(MelError::ClipTooShort {
                len: samples.len(),
                n_fft,
            })?;
        let n_bins = n_fft / 2 + 1;
        let mut values = Array2::<f32>::zeros((self.cfg.n_mels, t));
        let mut buf = vec![Complex::new(0.0f32, 0.0f32); n_fft];
        let mut power = vec![0.0f32; n_bins];
        for frame in 0..t {
            let start = frame * self.cfg.hop;
            for i in 0..n_fft {
                buf[i] = Complex::new(samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for (m, filter) in self.filters.iter().enumerate() {
                let mut acc = 0.0f32;
                for &(bin, w) in filter {
                    acc += w * power[bin];
                }
                values[(m, frame)] = (acc + self.cfg.log_epsilon).ln();
            }
        }
        Ok(MelSpectrogram {
            values,
            hop_s: self.cfg.hop as f32 / self.cfg.sample_rate_hz as f32,
        })
    }
}

/// One-shot convenience wrapper around [`MelExtractor`].
pub fn mel_spectrogram(clip: &AudioClip, cfg: &FrontendConfig) -> Result<MelSpectrogram, MelError> {
    MelExtractor::new(cfg.clone())?.compute(clip)
}

fn build_filterbank(cfg: &FrontendConfig) -> Vec<SparseFilter> {
    let n_bins = cfg.n_fft / 2 + 1;
    let f_max = MEL_F_MAX_HZ.min(cfg.sample_rate_hz as f64 / 2.0);
    let lo = hz_to_mel(MEL_F_MIN_HZ);
    let hi = hz_to_mel(f_max);
    let n = cfg.n_mels;
    let edges_hz: Vec<f64> = (0..n + 2)
        .map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (n + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
    let mut filters = Vec::with_capacity(n);
    for m in 0..n {
        let (f_lo, f_c, f_hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        // area normalization: peak weight 2 / filter width
        let scale = 2.0 / (f_hi - f_lo);
        let mut filter = SparseFilter::new();
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            if f <= f_lo || f >= f_hi {
                continue;
            }
            let w = if f <= f_c {
                (f - f_lo) / (f_c - f_lo)
            } else {
                (f_hi - f) / (f_hi - f_c)
            };
            if w > 0.0 {
                filter.push((bin, (w * scale) as f32));
            }
        }
        filters.push(filter);
    }
    filters
}

/// Write the `MELS` dump: magic, u32-LE F, u32-LE T, then F*T f32-LE values
/// in frequency-major (row-major) order.
pub fn write_mels(path: &Path, spec: &MelSpectrogram) -> Result<(), MelError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MELS_MAGIC)?;
    out.write_all(&(spec.n_mels() as u32).to_le_bytes())?;
    out.write_all(&(spec.n_frames() as u32).to_le_bytes())?;
    for row in spec.values.rows() {
        for &v in row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a `MELS` dump back as an F x T matrix.
pub fn read_mels(path: &Path) -> Result<Array2<f32>, MelError> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != MELS_MAGIC {
        return Err(MelError::MalformedDump("missing MELS magic".into()));
    }
    let f = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + f * t * 4;
    if bytes.len() != expected {
        return Err(MelError::MalformedDump(format!(
            "expected {expected} bytes for {f}x{t}, found {}",
            bytes.len()
        )));
    }
    let mut values = Array2::<f32>::zeros((f, t));
    let mut off = 12;
    for i in 0..f {
        for j in 0..t {
            values[(i, j)] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
    }
    Ok(values)
}
