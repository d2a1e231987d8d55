//! The SSL/SupCon training loop: seeded shuffling, window selection,
//! two-view augmentation, batched objective evaluation, reverse-mode
//! backprop through the encoder, and AdamW updates.
//!
//! Training is sequential and fully deterministic given (seed, config,
//! manifest): the parameter stream and per-epoch losses reproduce
//! bitwise across runs. Wall-clock fields in the log are the one
//! exception.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::augment::{make_views, AugmentConfig, AugmentError};
use crate::manifest::{DatasetManifest, Split};
use crate::mel::{FrontendConfig, MelError, MelExtractor, MelSpectrogram};
use crate::nn::{EncoderConfig, NnError, SslModel};
use crate::objectives::{
    barlow_twins_loss, frossl_loss, simclr_loss, supcon_loss, LossOutput, Objective,
    ObjectiveConfig, ObjectiveError,
};
use crate::optim::{AdamW, OptimError};
use crate::wav::{load_wav, WavError};
use crate::window::{
    chunk, score_windows, select_by_activation, temporal_proximity_pair, ScoreSource, WindowError,
};

/// Minimum overlap fraction between the two temporal-proximity windows.
pub const TEMPORAL_MIN_OVERLAP: f64 = 0.6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("train split has {available} examples, need at least {required}")]
    TooFewExamples { available: usize, required: usize },
    #[error("objective requires labels but entry {0} has an empty label")]
    UnlabeledEntry(String),
    #[error("cannot read audio {path}: {source}")]
    UnreadableAudio { path: PathBuf, source: WavError },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Mel(#[from] MelError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How training windows are chosen from each (padded) clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Two nearby overlapping windows form the positive pair.
    TemporalProximity,
    /// One activation-selected chunk, chosen once per file, used for both
    /// views.
    Activation,
}

impl Selection {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "temporal_proximity" => Some(Self::TemporalProximity),
            "activation" => Some(Self::Activation),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TemporalProximity => "temporal_proximity",
            Self::Activation => "activation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub objective: Objective,
    pub objective_cfg: ObjectiveConfig<f32>,
    pub seed: u64,
    pub selection: Selection,
    /// Scorer used when `selection` is [`Selection::Activation`].
    pub score_source: ScoreSource,
}

impl TrainConfig {
    /// Desk-scale defaults: batch 64, lr 1e-3, weight decay 1e-6,
    /// 20 epochs, temporal-proximity selection.
    pub fn desk_default(objective: Objective) -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            epochs: 20,
            objective,
            objective_cfg: ObjectiveConfig::default(),
            seed: 0,
            selection: Selection::TemporalProximity,
            score_source: ScoreSource::Energy,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.objective_cfg.temperature > 0.0) {
            return Err(TrainError::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One tab-separated line per epoch: index, mean loss, wall seconds.
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&format!("{}\t{:.6}\t{:.3}\n", e.epoch, e.mean_loss, e.wall_s));
        }
        std::fs::write(path, out)
    }

    pub fn mean_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

struct Example {
    clip: AudioClip,
    class_id: usize,
    /// Activation-selected window spectrogram; populated once per file
    /// when PS-style selection is active.
    selected: Option<MelSpectrogram>,
}

/// Train the encoder on the manifest's train split. Audio paths resolve
/// relative to `root`; external score sidecars live at `<audio>.scores`.
pub fn train(
    manifest: &DatasetManifest,
    root: &Path,
    cfg: &TrainConfig,
    enc_cfg: &EncoderConfig,
    frontend: &FrontendConfig,
    augment_cfg: &AugmentConfig,
) -> Result<(SslModel<f32>, TrainLog), TrainError> {
    cfg.validate()?;
    augment_cfg
        .validate()
        .map_err(TrainError::InvalidConfig)?;
    let entries = manifest.split(Split::Train);
    if entries.len() < cfg.batch_size {
        return Err(TrainError::TooFewExamples {
            available: entries.len(),
            required: cfg.batch_size,
        });
    }
    if cfg.objective.needs_labels() {
        if let Some(bad) = entries.iter().find(|e| e.label.trim().is_empty()) {
            return Err(TrainError::UnlabeledEntry(bad.path.clone()));
        }
    }
    let labels = manifest.labels_in(Split::Train);
    let class_of = |label: &str| labels.iter().position(|l| l == label).unwrap_or(0);

    let extractor = MelExtractor::new(frontend.clone())?;
    let window_s = frontend.window_s;

    // decode everything up front; a bad file fails fast with its path
    let mut examples = Vec::with_capacity(entries.len());
    for entry in &entries {
        let path = root.join(&entry.path);
        let clip = load_wav(&path).map_err(|source| TrainError::UnreadableAudio {
            path: path.clone(),
            source,
        })?;
        let clip = clip.resample(frontend.sample_rate_hz)?;
        let clip = clip.pad_circular(window_s);
        let selected = match cfg.selection {
            Selection::TemporalProximity => None,
            Selection::Activation => {
                let windows = chunk(&clip, window_s)?;
                let sidecar = PathBuf::from(format!("{}.scores", path.display()));
                let scores = score_windows(
                    &clip,
                    &windows,
                    &extractor,
                    cfg.score_source,
                    Some(&sidecar),
                )?;
                let best = select_by_activation(&scores)?;
                Some(extractor.compute(&windows[best].extract(&clip))?)
            }
        };
        examples.push(Example {
            clip,
            class_id: class_of(&entry.label),
            selected,
        });
    }

    let mut model = SslModel::<f32>::new(enc_cfg, cfg.seed)?;
    let mut grads_template = model.zero_grads();
    let mut opt = AdamW::<f32>::new(&grads_template);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1); // init used stream 0

    let n_batches = examples.len() / cfg.batch_size;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in 0..n_batches {
            let idx = &order[batch * cfg.batch_size..(batch + 1) * cfg.batch_size];

            // window selection
            let mut pairs: Vec<(MelSpectrogram, MelSpectrogram)> =
                Vec::with_capacity(idx.len());
            for &i in idx {
                let ex = &examples[i];
                match &ex.selected {
                    Some(spec) => pairs.push((spec.clone(), spec.clone())),
                    None => {
                        let (w1, w2) = temporal_proximity_pair(
                            &ex.clip,
                            window_s,
                            TEMPORAL_MIN_OVERLAP,
                            &mut rng,
                        )?;
                        let s1 = extractor.compute(&w1.extract(&ex.clip))?;
                        let s2 = extractor.compute(&w2.extract(&ex.clip))?;
                        pairs.push((s1, s2));
                    }
                }
            }

            // the mixing pool is every selected window in the batch
            let mut pool = Vec::with_capacity(2 * idx.len());
            for (s1, s2) in &pairs {
                pool.push(s1.clone());
                pool.push(s2.clone());
            }

            let mut views: Vec<(MelSpectrogram, MelSpectrogram)> = Vec::with_capacity(idx.len());
            for (s1, s2) in &pairs {
                views.push(make_views(s1, s2, &pool, augment_cfg, &mut rng)?);
            }

            // first pass: embeddings only
            let d_out = model.output_dim();
            let mut z1 = Array2::<f32>::zeros((idx.len(), d_out));
            let mut z2 = Array2::<f32>::zeros((idx.len(), d_out));
            for (row, (v1, v2)) in views.iter().enumerate() {
                let (o1, _) = model.forward(&v1.values)?;
                let (o2, _) = model.forward(&v2.values)?;
                z1.row_mut(row).assign(&o1);
                z2.row_mut(row).assign(&o2);
            }

            let loss: LossOutput<f32> = match cfg.objective {
                Objective::SimClr => simclr_loss(&z1, &z2, &cfg.objective_cfg)?,
                Objective::BarlowTwins => barlow_twins_loss(&z1, &z2, &cfg.objective_cfg)?,
                Objective::FroSsl => frossl_loss(&z1, &z2, &cfg.objective_cfg)?,
                Objective::SupCon => {
                    let z = concatenate![Axis(0), z1.view(), z2.view()];
                    let mut batch_labels: Vec<usize> =
                        idx.iter().map(|&i| examples[i].class_id).collect();
                    batch_labels.extend(idx.iter().map(|&i| examples[i].class_id));
                    supcon_loss(&z, &batch_labels, &cfg.objective_cfg)?
                }
            };
            if !loss.value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss.value as f64;

            // second pass: re-forward with cache and accumulate gradients
            for g in grads_template.iter_mut() {
                g.fill(0.0);
            }
            for (row, (v1, v2)) in views.iter().enumerate() {
                let g1 = loss.grad_z1.row(row).to_owned();
                let (_, cache1) = model.forward(&v1.values)?;
                model.backward(&g1, &cache1, &mut grads_template)?;
                let g2 = match &loss.grad_z2 {
                    Some(g) => g.row(row).to_owned(),
                    // single-batch objective: second view's rows follow the first batch
                    None => loss.grad_z1.row(row + idx.len()).to_owned(),
                };
                let (_, cache2) = model.forward(&v2.values)?;
                model.backward(&g2, &cache2, &mut grads_template)?;
            }

            let mut params = model.param_tensors_mut();
            opt.step(
                &mut params,
                &grads_template,
                cfg.learning_rate,
                cfg.weight_decay,
            )?;
            drop(params);
            model.mark_updated();
        }
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / n_batches as f64,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, log))
}
