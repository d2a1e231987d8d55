//! Synthetic desk-scale dataset: per-class FM chirps embedded in pink
//! noise.
//!
//! Each class is a distinct base frequency (geometrically spaced over
//! 500-6000 Hz) with a class-dependent sweep width and direction. Every
//! file is 8-15 s of pink noise with one one-second chirp at a random
//! position, mixed at 0-10 dB SNR and RMS-normalized so classes are not
//! separable by energy alone. Train and test class sets are disjoint.
//!
//! Alongside each wav a `<name>.wav.scores` sidecar holds the oracle
//! per-chunk chirp presence (overlap fraction with each 5 s chunk), one
//! decimal per line, for activation-based selection.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::manifest::{DatasetManifest, ManifestEntry, ManifestError, Split};
use crate::wav::{write_wav_mono16, WavError};

const SAMPLE_RATE: u32 = 16000;
const CHUNK_S: f64 = 5.0;
const CHIRP_S: f64 = 1.0;
const FREQ_LO: f64 = 500.0;
const FREQ_HI: f64 = 6000.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_train_classes: usize,
    pub n_test_classes: usize,
    pub files_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train_classes: 12,
            n_test_classes: 6,
            files_per_class: 20,
            seed: 0,
        }
    }
}

/// Base frequency of every class, geometric over [500, 6000] Hz.
pub fn class_frequencies(total_classes: usize) -> Vec<f64> {
    if total_classes == 1 {
        return vec![(FREQ_LO * FREQ_HI).sqrt()];
    }
    (0..total_classes)
        .map(|c| FREQ_LO * (FREQ_HI / FREQ_LO).powf(c as f64 / (total_classes - 1) as f64))
        .collect()
}

/// Hann-enveloped linear FM sweep around the class base frequency.
fn chirp(class: usize, f_base: f64) -> Vec<f64> {
    let len = (CHIRP_S * SAMPLE_RATE as f64) as usize;
    let delta = 0.06 + 0.06 * (class % 3) as f64;
    let (f0, f1) = if class % 2 == 0 {
        (f_base * (1.0 - delta), f_base * (1.0 + delta))
    } else {
        (f_base * (1.0 + delta), f_base * (1.0 - delta))
    };
    let t_total = CHIRP_S;
    (0..len)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let phase =
                2.0 * std::f64::consts::PI * (f0 * t + (f1 - f0) * t * t / (2.0 * t_total));
            let env = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t / t_total).cos());
            env * phase.sin()
        })
        .collect()
}

/// Paul Kellet's three-pole pink noise approximation.
fn pink_noise<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0, 0.0);
    (0..len)
        .map(|_| {
            let white: f64 = rng.random_range(-1.0..1.0);
            b0 = 0.99765 * b0 + white * 0.0990460;
            b1 = 0.96300 * b1 + white * 0.2965164;
            b2 = 0.57000 * b2 + white * 1.0526913;
            b0 + b1 + b2 + white * 0.1848
        })
        .collect()
}

fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

struct SynthFile {
    samples: Vec<f32>,
    scores: Vec<f64>,
}

fn synth_file<R: Rng + ?Sized>(rng: &mut R, class: usize, f_base: f64) -> SynthFile {
    let duration_s: f64 = rng.random_range(8.0..15.0);
    let len = (duration_s * SAMPLE_RATE as f64) as usize;
    let mut signal = pink_noise(rng, len);
    let pulse = chirp(class, f_base);
    let pos = rng.random_range(0..=len - pulse.len());
    let snr_db: f64 = rng.random_range(0.0..10.0);

    let noise_power = mean_square(&signal[pos..pos + pulse.len()]);
    let chirp_power = mean_square(&pulse);
    let gain = (noise_power / chirp_power * 10f64.powf(snr_db / 10.0)).sqrt();
    for (i, &p) in pulse.iter().enumerate() {
        signal[pos + i] += gain * p;
    }

    // fixed RMS kills energy cues; then keep the peak inside [-1, 1]
    let rms = mean_square(&signal).sqrt();
    let mut scale = 0.08 / rms;
    let peak = signal.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if peak * scale > 0.97 {
        scale = 0.97 / peak;
    }
    let samples: Vec<f32> = signal.iter().map(|&x| (x * scale) as f32).collect();

    // oracle chunk scores: fraction of the chirp inside each chunk
    let chunk_len = (CHUNK_S * SAMPLE_RATE as f64) as usize;
    let n_chunks = len.div_ceil(chunk_len);
    let chirp_span = (pos, pos + pulse.len());
    let scores = (0..n_chunks)
        .map(|k| {
            let lo = k * chunk_len;
            let hi = ((k + 1) * chunk_len).min(len);
            let overlap = chirp_span.1.min(hi).saturating_sub(chirp_span.0.max(lo));
            overlap as f64 / pulse.len() as f64
        })
        .collect();
    SynthFile { samples, scores }
}

/// Generate the dataset under `out_dir` and return the manifest path.
pub fn generate_dataset(out_dir: &Path, cfg: &SynthConfig) -> Result<PathBuf, SynthError> {
    if cfg.n_train_classes == 0 || cfg.n_test_classes == 0 || cfg.files_per_class == 0 {
        return Err(SynthError::InvalidConfig(
            "class and file counts must be positive".into(),
        ));
    }
    let total = cfg.n_train_classes + cfg.n_test_classes;
    let freqs = class_frequencies(total);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = DatasetManifest::default();

    std::fs::create_dir_all(out_dir)?;
    for class in 0..total {
        let label = format!("class_{class:02}");
        let split = if class < cfg.n_train_classes {
            Split::Train
        } else {
            Split::Test
        };
        let class_dir = out_dir.join("wavs").join(&label);
        std::fs::create_dir_all(&class_dir)?;
        for file in 0..cfg.files_per_class {
            let generated = synth_file(&mut rng, class, freqs[class]);
            let rel = format!("wavs/{label}/file_{file:03}.wav");
            let wav_path = out_dir.join(&rel);
            let clip = AudioClip::new(generated.samples, SAMPLE_RATE)?;
            write_wav_mono16(&wav_path, &clip)?;
            let score_text: String = generated
                .scores
                .iter()
                .map(|s| format!("{s:.6}\n"))
                .collect();
            std::fs::write(format!("{}.scores", wav_path.display()), score_text)?;
            manifest.entries.push(ManifestEntry {
                path: rel,
                label: label.clone(),
                split,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::DatasetManifest;
    use crate::wav::load_wav;
    use std::collections::BTreeSet;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_train_classes: 3,
            n_test_classes: 2,
            files_per_class: 3,
            seed: 7,
        }
    }

    #[test]
    fn counts_and_disjoint_splits() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = generate_dataset(dir.path(), &small_cfg()).unwrap();
        let manifest = DatasetManifest::read(&manifest_path).unwrap();
        assert_eq!(manifest.entries.len(), 15);
        let train: BTreeSet<_> = manifest.labels_in(Split::Train).into_iter().collect();
        let test: BTreeSet<_> = manifest.labels_in(Split::Test).into_iter().collect();
        assert_eq!(train.len(), 3);
        assert_eq!(test.len(), 2);
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(a.path(), &small_cfg()).unwrap();
        generate_dataset(b.path(), &small_cfg()).unwrap();
        let mut checked = 0;
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            let other = b.path().join(rel);
            assert_eq!(
                std::fs::read(&entry).unwrap(),
                std::fs::read(&other).unwrap(),
                "mismatch at {rel:?}"
            );
            checked += 1;
        }
        assert!(checked > 15);
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn every_file_decodes_and_has_aligned_scores() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = generate_dataset(dir.path(), &small_cfg()).unwrap();
        let manifest = DatasetManifest::read(&manifest_path).unwrap();
        let chunk_len = (CHUNK_S * SAMPLE_RATE as f64) as usize;
        for entry in &manifest.entries {
            let path = dir.path().join(&entry.path);
            let clip = load_wav(&path).unwrap();
            assert_eq!(clip.sample_rate_hz(), SAMPLE_RATE);
            assert!(clip.duration_s() >= 8.0 && clip.duration_s() < 15.0);
            let expected_chunks = clip.len().div_ceil(chunk_len);
            let scores = crate::window::load_external_scores(
                &PathBuf::from(format!("{}.scores", path.display())),
                expected_chunks,
            )
            .unwrap();
            // the chirp is fully accounted for across chunks
            let total: f64 = scores.iter().map(|s| s.score).sum();
            assert!((total - 1.0).abs() < 1e-3, "chirp mass {total}");
        }
    }

    #[test]
    fn frequencies_are_geometric_and_in_range() {
        let f = class_frequencies(18);
        assert!((f[0] - 500.0).abs() < 1e-9);
        assert!((f[17] - 6000.0).abs() < 1e-9);
        let r0 = f[1] / f[0];
        let r1 = f[10] / f[9];
        assert!((r0 - r1).abs() < 1e-9);
    }
}
