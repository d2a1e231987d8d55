//! Training/evaluation window selection.
//!
//! Two strategies: temporal proximity (two overlapping windows of one
//! recording form a positive pair) and activation-based selection (pick the
//! chunk an activation scorer ranks highest). The scorer is pluggable:
//! a built-in mean-log-energy scorer, or scores computed offline by any
//! external model and ingested from a sidecar text file.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::audio::AudioClip;
use crate::mel::{MelError, MelExtractor, MelSpectrogram};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("clip of {len} samples is shorter than the {window} sample window")]
    ClipShorterThanWindow { len: usize, window: usize },
    #[error("min_overlap must be in [0, 1), got {0}")]
    InvalidOverlap(f64),
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("score file {path}: expected {expected} lines, found {found}")]
    ScoreCountMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("score file {path}: line {line} is not a finite number: {text:?}")]
    ScoreParse {
        path: String,
        line: usize,
        text: String,
    },
    #[error("score file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot select from an empty score list")]
    EmptyScores,
    #[error(transparent)]
    Mel(#[from] MelError),
    #[error("external score source needs a sidecar path")]
    MissingSidecar,
}

/// Where chunk activation scores come from: the built-in energy scorer,
/// or a sidecar file written by an external model (one decimal per line,
/// aligned with [`chunk`] order).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Energy,
    External,
}

impl ScoreSource {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "energy" => Some(Self::Energy),
            "external" => Some(Self::External),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Energy => "energy",
            Self::External => "external",
        }
    }
}

/// Half-open sample range into a (conceptually circularly padded) clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start_sample: usize,
    pub length_samples: usize,
}

impl Window {
    /// Materialize the window. Indices past the end of the clip wrap
    /// around, which is exactly a slice of the circularly padded signal.
    pub fn extract(&self, clip: &AudioClip) -> AudioClip {
        let src = clip.samples();
        let n = src.len();
        if self.start_sample + self.length_samples <= n {
            let s = &src[self.start_sample..self.start_sample + self.length_samples];
            return AudioClip::new(s.to_vec(), clip.sample_rate_hz())
                .expect("window of a valid clip is valid");
        }
        let samples = (0..self.length_samples)
            .map(|i| src[(self.start_sample + i) % n])
            .collect();
        AudioClip::new(samples, clip.sample_rate_hz()).expect("window of a valid clip is valid")
    }
}

/// Per-window activation score; higher means more target-like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationScore {
    pub window_index: usize,
    pub score: f64,
}

/// Draw two equal-length windows whose overlap fraction is at least
/// `min_overlap`. Start positions are uniform over the valid range: the
/// first over all positions, the second over the interval the overlap
/// constraint leaves around the first.
pub fn temporal_proximity_pair<R: Rng + ?Sized>(
    clip: &AudioClip,
    window_s: f64,
    min_overlap: f64,
    rng: &mut R,
) -> Result<(Window, Window), WindowError> {
    if !(0.0..1.0).contains(&min_overlap) {
        return Err(WindowError::InvalidOverlap(min_overlap));
    }
    let w = (window_s * clip.sample_rate_hz() as f64).round() as usize;
    if w == 0 {
        return Err(WindowError::ZeroWindow);
    }
    let len = clip.len();
    if len < w {
        return Err(WindowError::ClipShorterThanWindow { len, window: w });
    }
    let max_start = len - w;
    let start1 = rng.random_range(0..=max_start);
    // overlap(w1, w2) = max(0, W - |s1 - s2|), so a zero minimum overlap
    // leaves the second start unconstrained
    let (lo, hi) = if min_overlap > 0.0 {
        let max_delta = ((1.0 - min_overlap) * w as f64).floor() as usize;
        (
            start1.saturating_sub(max_delta),
            (start1 + max_delta).min(max_start),
        )
    } else {
        (0, max_start)
    };
    let start2 = rng.random_range(lo..=hi);
    Ok((
        Window {
            start_sample: start1,
            length_samples: w,
        },
        Window {
            start_sample: start2,
            length_samples: w,
        },
    ))
}

/// Split a clip into consecutive non-overlapping windows of `window_s`
/// seconds. The final partial chunk keeps its full length; extraction
/// circularly pads it, so no audio is dropped.
pub fn chunk(clip: &AudioClip, window_s: f64) -> Result<Vec<Window>, WindowError> {
    let w = (window_s * clip.sample_rate_hz() as f64).round() as usize;
    if w == 0 {
        return Err(WindowError::ZeroWindow);
    }
    let count = clip.len().div_ceil(w);
    Ok((0..count)
        .map(|i| Window {
            start_sample: i * w,
            length_samples: w,
        })
        .collect())
}

/// Mean over all log-mel entries. Stands in for an external activation
/// model when none is available: louder windows score higher.
pub fn energy_scorer(spec: &MelSpectrogram, window_index: usize) -> ActivationScore {
    let sum: f64 = spec.values.iter().map(|&v| v as f64).sum();
    ActivationScore {
        window_index,
        score: sum / spec.values.len() as f64,
    }
}

/// Read one finite decimal per line, order-aligned with [`chunk`] output.
pub fn load_external_scores(
    path: &Path,
    expected_count: usize,
) -> Result<Vec<ActivationScore>, WindowError> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != expected_count {
        return Err(WindowError::ScoreCountMismatch {
            path: name,
            expected: expected_count,
            found: lines.len(),
        });
    }
    let mut scores = Vec::with_capacity(expected_count);
    for (i, line) in lines.iter().enumerate() {
        let parsed: Option<f64> = line.trim().parse().ok().filter(|v: &f64| v.is_finite());
        match parsed {
            Some(score) => scores.push(ActivationScore {
                window_index: i,
                score,
            }),
            None => {
                return Err(WindowError::ScoreParse {
                    path: name,
                    line: i + 1,
                    text: line.to_string(),
                })
            }
        }
    }
    Ok(scores)
}

/// Score every window of a clip from the configured source. `sidecar`
/// locates the external score file and is only consulted for
/// [`ScoreSource::External`].
pub fn score_windows(
    clip: &AudioClip,
    windows: &[Window],
    extractor: &MelExtractor,
    source: ScoreSource,
    sidecar: Option<&Path>,
) -> Result<Vec<ActivationScore>, WindowError> {
    match source {
        ScoreSource::Energy => windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let spec = extractor.compute(&w.extract(clip))?;
                Ok(energy_scorer(&spec, i))
            })
            .collect(),
        ScoreSource::External => {
            let path = sidecar.ok_or(WindowError::MissingSidecar)?;
            load_external_scores(path, windows.len())
        }
    }
}

/// Index of the highest-scoring window; ties break toward the lowest index.
pub fn select_by_activation(scores: &[ActivationScore]) -> Result<usize, WindowError> {
    let mut best: Option<&ActivationScore> = None;
    for s in scores {
        if best.is_none_or(|b| s.score > b.score) {
            best = Some(s);
        }
    }
    best.map(|s| s.window_index).ok_or(WindowError::EmptyScores)
}
