//! Mono audio clips and the sample-domain operations used ahead of the
//! mel front-end: resampling and circular padding.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio clip must contain at least one sample")]
    Empty,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("sample {index} ({value}) outside [-1, 1]")]
    SampleOutOfRange { index: usize, value: f32 },
    #[error("resample target rate must be positive")]
    ZeroTargetRate,
}

/// A mono waveform with its sample rate. Samples are finite and in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        for (index, &value) in samples.iter().enumerate() {
            if !value.is_finite() {
                return Err(AudioError::NonFiniteSample { index });
            }
            if !(-1.0..=1.0).contains(&value) {
                return Err(AudioError::SampleOutOfRange { index, value });
            }
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Resample by linear interpolation. Output length is
    /// `round(len * target_hz / source_hz)`; a matching target rate returns
    /// the clip unchanged.
    pub fn resample(&self, target_hz: u32) -> Result<AudioClip, AudioError> {
        if target_hz == 0 {
            return Err(AudioError::ZeroTargetRate);
        }
        if target_hz == self.sample_rate_hz {
            return Ok(self.clone());
        }
        let src = &self.samples;
        let ratio = self.sample_rate_hz as f64 / target_hz as f64;
        let out_len = ((src.len() as f64 * target_hz as f64 / self.sample_rate_hz as f64).round()
            as usize)
            .max(1);
        let last = src.len() - 1;
        let mut out = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = pos - i0 as f64;
            let v = src[i0] as f64 + frac * (src[i1] as f64 - src[i0] as f64);
            out.push(v as f32);
        }
        Ok(AudioClip {
            samples: out,
            sample_rate_hz: target_hz,
        })
    }

    /// Circularly pad to at least `duration_s` seconds: `out[i] = in[i mod len]`.
    /// Clips already at or beyond the target length are returned unchanged.
    pub fn pad_circular(&self, duration_s: f64) -> AudioClip {
        let target = (duration_s * self.sample_rate_hz as f64).round() as usize;
        if self.samples.len() >= target {
            return self.clone();
        }
        let n = self.samples.len();
        let samples = (0..target).map(|i| self.samples[i % n]).collect();
        AudioClip {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq_hz: f64, rate: u32, len: usize) -> AudioClip {
        let samples = (0..len)
            .map(|i| {
                (0.5 * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / rate as f64).sin()) as f32
            })
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    /// O(n*k) DFT magnitude over the first `bins` bins; test-only oracle.
    fn dft_peak_bin(samples: &[f32], bins: usize) -> usize {
        let n = samples.len() as f64;
        let mut best = (0usize, -1.0f64);
        for k in 1..bins {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, &s) in samples.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n;
                re += s as f64 * ang.cos();
                im += s as f64 * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let clip = tone(440.0, 16000, 16000);
        let same = clip.resample(16000).unwrap();
        assert_eq!(clip, same);
    }

    #[test]
    fn resample_halves_length() {
        let clip = tone(440.0, 32000, 32000);
        let down = clip.resample(16000).unwrap();
        assert_eq!(down.len(), 16000);
        assert_eq!(down.sample_rate_hz(), 16000);
    }

    #[test]
    fn resample_preserves_dominant_frequency() {
        // 1 kHz sine at 48 kHz down to 16 kHz; peak must stay at 1 kHz +- 1 bin
        let clip = tone(1000.0, 48000, 24000);
        let down = clip.resample(16000).unwrap();
        assert_eq!(down.len(), 8000);
        let peak = dft_peak_bin(down.samples(), 2000);
        // 8000 samples at 16 kHz -> bin width 2 Hz; 1 kHz -> bin 500
        let expected = 500usize;
        let bin_tol = 1;
        assert!(
            peak.abs_diff(expected) <= bin_tol,
            "peak bin {peak}, expected {expected}"
        );
    }

    #[test]
    fn pad_is_identity_at_target() {
        let clip = tone(440.0, 16000, 80000);
        let padded = clip.pad_circular(5.0);
        assert_eq!(clip, padded);
    }

    #[test]
    fn pad_wraps_at_source_length() {
        let clip = tone(313.0, 16000, 32000); // 2 s
        let padded = clip.pad_circular(5.0);
        assert_eq!(padded.len(), 80000);
        assert_eq!(padded.samples()[32000], clip.samples()[0]);
        assert_eq!(padded.samples()[64000], clip.samples()[0]);
        assert_eq!(padded.samples()[64001], clip.samples()[1]);
    }

    #[test]
    fn pad_tail_equals_wrapped_prefix() {
        // 3.2 s clip padded to 5 s: tail indices 51200.. duplicate 0..28800
        let clip = tone(127.0, 16000, 51200);
        let padded = clip.pad_circular(5.0);
        assert_eq!(padded.len(), 80000);
        assert_eq!(&padded.samples()[51200..80000], &clip.samples()[0..28800]);
    }

    #[test]
    fn pad_prefix_always_equals_input() {
        let clip = tone(89.0, 8000, 12345);
        let padded = clip.pad_circular(4.1);
        assert_eq!(&padded.samples()[..clip.len()], clip.samples());
        // idempotent once at/over target
        let again = padded.pad_circular(4.1);
        assert_eq!(padded, again);
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(
            AudioClip::new(vec![], 16000),
            Err(AudioError::Empty)
        ));
        assert!(matches!(
            AudioClip::new(vec![0.0], 0),
            Err(AudioError::ZeroSampleRate)
        ));
        assert!(matches!(
            AudioClip::new(vec![f32::NAN], 16000),
            Err(AudioError::NonFiniteSample { index: 0 })
        ));
        assert!(matches!(
            AudioClip::new(vec![1.5], 16000),
            Err(AudioError::SampleOutOfRange { index: 0, .. })
        ));
    }
}
