//! Domain-agnostic spectrogram augmentation: circular time shift,
//! spectrogram mixing, and masking of consecutive frequency bands and
//! time steps. [`make_views`] composes them in that fixed order to produce
//! the two views a training example contributes.

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::mel::MelSpectrogram;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("spectrogram shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("mix coefficient {0} outside [0, 1]")]
    InvalidCoeff(f32),
    #[error("mixing is enabled but the batch pool is empty")]
    EmptyBatchPool,
    #[error("mask width {width} exceeds spectrogram extent {extent}")]
    MaskWiderThanSpec { width: usize, extent: usize },
}

/// Augmentation hyperparameters. Defaults: mixing coefficient uniform in
/// [0.6, 1.0]; three masked blocks of 30 frequency bands and 10 timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub mix_coeff_min: f32,
    pub mix_coeff_max: f32,
    pub sa_blocks: usize,
    pub sa_freq_width: usize,
    pub sa_time_width: usize,
    pub enable_time_shift: bool,
    pub enable_mix: bool,
    pub enable_spec_augment: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mix_coeff_min: 0.6,
            mix_coeff_max: 1.0,
            sa_blocks: 3,
            sa_freq_width: 30,
            sa_time_width: 10,
            enable_time_shift: true,
            enable_mix: true,
            enable_spec_augment: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.mix_coeff_min)
            || !(0.0..=1.0).contains(&self.mix_coeff_max)
            || self.mix_coeff_min > self.mix_coeff_max
        {
            return Err("need 0 <= mix_coeff_min <= mix_coeff_max <= 1".into());
        }
        Ok(())
    }
}

/// Circular shift along time: `out[f, t] = in[f, (t - shift) mod T]`.
pub fn time_shift(spec: &MelSpectrogram, shift: i64) -> MelSpectrogram {
    let (f, t) = spec.values.dim();
    let t_i = t as i64;
    let mut values = Array2::<f32>::zeros((f, t));
    for col in 0..t as i64 {
        let src = (col - shift).rem_euclid(t_i) as usize;
        for row in 0..f {
            values[(row, col as usize)] = spec.values[(row, src)];
        }
    }
    MelSpectrogram {
        values,
        hop_s: spec.hop_s,
    }
}

/// Elementwise interpolation `coeff * a + (1 - coeff) * b`.
pub fn mix(
    spec_a: &MelSpectrogram,
    spec_b: &MelSpectrogram,
    coeff: f32,
) -> Result<MelSpectrogram, AugmentError> {
    if spec_a.values.dim() != spec_b.values.dim() {
        return Err(AugmentError::ShapeMismatch {
            a: spec_a.values.dim(),
            b: spec_b.values.dim(),
        });
    }
    if !(0.0..=1.0).contains(&coeff) {
        return Err(AugmentError::InvalidCoeff(coeff));
    }
    let values = coeff * &spec_a.values + (1.0 - coeff) * &spec_b.values;
    Ok(MelSpectrogram {
        values,
        hop_s: spec_a.hop_s,
    })
}

/// Mask `sa_blocks` frequency bands of `sa_freq_width` consecutive bins and
/// `sa_blocks` time blocks of `sa_time_width` consecutive frames, start
/// positions uniform, fill value the spectrogram mean. Blocks may overlap.
///
/// Draw order is fixed: all frequency starts, then all time starts.
pub fn spec_augment<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<MelSpectrogram, AugmentError> {
    let (f, t) = spec.values.dim();
    if cfg.sa_blocks == 0 {
        return Ok(spec.clone());
    }
    if cfg.sa_freq_width > f {
        return Err(AugmentError::MaskWiderThanSpec {
            width: cfg.sa_freq_width,
            extent: f,
        });
    }
    if cfg.sa_time_width > t {
        return Err(AugmentError::MaskWiderThanSpec {
            width: cfg.sa_time_width,
            extent: t,
        });
    }
    let mean = (spec.values.iter().map(|&v| v as f64).sum::<f64>() / spec.values.len() as f64)
        as f32;
    let freq_starts: Vec<usize> = (0..cfg.sa_blocks)
        .map(|_| rng.random_range(0..=f - cfg.sa_freq_width))
        .collect();
    let time_starts: Vec<usize> = (0..cfg.sa_blocks)
        .map(|_| rng.random_range(0..=t - cfg.sa_time_width))
        .collect();
    let mut values = spec.values.clone();
    for &fs in &freq_starts {
        for row in fs..fs + cfg.sa_freq_width {
            for col in 0..t {
                values[(row, col)] = mean;
            }
        }
    }
    for &ts in &time_starts {
        for col in ts..ts + cfg.sa_time_width {
            for row in 0..f {
                values[(row, col)] = mean;
            }
        }
    }
    Ok(MelSpectrogram {
        values,
        hop_s: spec.hop_s,
    })
}

/// Produce the two training views. Each input window independently passes
/// through time shift (shift uniform over [0, T)), mixing with a partner
/// drawn uniformly from `batch_pool` (coefficient uniform in the configured
/// range), then masking. View 1 consumes its random draws before view 2.
pub fn make_views<R: Rng + ?Sized>(
    spec1: &MelSpectrogram,
    spec2: &MelSpectrogram,
    batch_pool: &[MelSpectrogram],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(MelSpectrogram, MelSpectrogram), AugmentError> {
    if cfg.enable_mix && batch_pool.is_empty() {
        return Err(AugmentError::EmptyBatchPool);
    }
    let v1 = make_one_view(spec1, batch_pool, cfg, rng)?;
    let v2 = make_one_view(spec2, batch_pool, cfg, rng)?;
    Ok((v1, v2))
}

fn make_one_view<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    batch_pool: &[MelSpectrogram],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<MelSpectrogram, AugmentError> {
    let mut view = spec.clone();
    if cfg.enable_time_shift {
        let t = view.values.ncols() as i64;
        let shift = rng.random_range(0..t.max(1));
        view = time_shift(&view, shift);
    }
    if cfg.enable_mix {
        let partner = &batch_pool[rng.random_range(0..batch_pool.len())];
        let coeff = rng.random_range(cfg.mix_coeff_min..=cfg.mix_coeff_max);
        view = mix(&view, partner, coeff)?;
    }
    if cfg.enable_spec_augment {
        view = spec_augment(&view, cfg, rng)?;
    }
    Ok(view)
}
