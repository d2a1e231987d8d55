//! Self-supervised representation learning for bioacoustic audio at desk
//! scale: a log-mel front-end, window selection, domain-agnostic
//! spectrogram augmentation, four contrastive training objectives with
//! analytic gradients, a small convolutional encoder trained with AdamW,
//! and an episodic n-way k-shot evaluation harness.

pub mod audio;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod fewshot;
pub mod manifest;
pub mod mel;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod synth;
pub mod trainer;
pub mod wav;
pub mod window;

pub use audio::{AudioClip, AudioError};
pub use augment::{make_views, mix, spec_augment, time_shift, AugmentConfig, AugmentError};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use fewshot::{
    center_and_normalize, ci95_half_width, classify, clip_embedding, compute_prototypes,
    read_embeddings, run_eval, sample_episode, write_embeddings, EmbeddingProvider,
    EmbeddingStrategy, EncoderEmbedder, Episode, EvalConfig, EvalError, EvalReport, EvalResult,
    Prototype, TestPool,
};
pub use manifest::{DatasetManifest, ManifestEntry, ManifestError, Split};
pub use mel::{
    mel_spectrogram, read_mels, write_mels, FrontendConfig, MelError, MelExtractor,
    MelSpectrogram,
};
pub use nn::{Activation, ConvStage, EncoderConfig, ForwardCache, NnError, SslModel};
pub use objectives::{
    barlow_twins_loss, finite_difference_check, frossl_loss, l2_normalize_rows, objective_fn,
    simclr_loss, supcon_loss, LossOutput, Objective, ObjectiveConfig, ObjectiveError,
};
pub use optim::{AdamW, OptimError};
pub use synth::{generate_dataset, SynthConfig, SynthError};
pub use trainer::{
    train, EpochRecord, Selection, TrainConfig, TrainError, TrainLog, TEMPORAL_MIN_OVERLAP,
};
pub use wav::{load_wav, write_wav_mono16, WavError};
pub use window::{
    chunk, energy_scorer, load_external_scores, score_windows, select_by_activation,
    temporal_proximity_pair, ActivationScore, ScoreSource, Window, WindowError,
};
