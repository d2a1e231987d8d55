//! Episodic n-way k-shot evaluation with a nearest-prototype classifier.
//!
//! Per task: sample classes and files without replacement, embed support
//! and query clips, build per-class mean prototypes, center everything by
//! the prototype mean, l2-normalize, and assign each query to the
//! Euclidean-nearest prototype. Accuracy aggregates over tasks with a
//! 1.96 * sd / sqrt(T) confidence half-width.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::mel::{MelError, MelExtractor};
use crate::nn::{NnError, SslModel};
use crate::wav::{load_wav, WavError};
use crate::window::{chunk, score_windows, select_by_activation, ScoreSource, WindowError};

pub const EMBD_MAGIC: &[u8; 4] = b"EMBD";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error("need {required} classes with enough files, test split has {available}")]
    InsufficientClasses { required: usize, available: usize },
    #[error("cannot read audio {path}: {source}")]
    UnreadableAudio { path: PathBuf, source: WavError },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Mel(#[from] MelError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("embedding dump i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding dump is malformed: {0}")]
    MalformedDump(String),
}

/// How a whole (possibly long) clip becomes one embedding vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingStrategy {
    /// Mean of the encoder outputs over all fixed-length chunks.
    ChunkAverage,
    /// Encoder output of the highest-scoring chunk.
    ActivationSelect,
}

impl EmbeddingStrategy {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "chunk_average" => Some(Self::ChunkAverage),
            "activation_select" => Some(Self::ActivationSelect),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ChunkAverage => "chunk_average",
            Self::ActivationSelect => "activation_select",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub n_tasks: usize,
    pub seed: u64,
    pub embedding_strategy: EmbeddingStrategy,
    pub score_source: ScoreSource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            n_query: 5,
            n_tasks: 500,
            seed: 0,
            embedding_strategy: EmbeddingStrategy::ChunkAverage,
            score_source: ScoreSource::Energy,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_way < 2 {
            return Err(EvalError::InvalidConfig("n_way must be >= 2".into()));
        }
        if self.k_shot == 0 {
            return Err(EvalError::InvalidConfig("k_shot must be >= 1".into()));
        }
        if self.n_query == 0 {
            return Err(EvalError::InvalidConfig("n_query must be >= 1".into()));
        }
        if self.n_tasks == 0 {
            return Err(EvalError::InvalidConfig("n_tasks must be >= 1".into()));
        }
        Ok(())
    }
}

/// A sampled support/query split with embeddings attached.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Vec<(Array1<f32>, usize)>,
    pub query: Vec<(Array1<f32>, usize)>,
}

#[derive(Debug, Clone)]
pub struct Prototype {
    pub class_id: usize,
    pub vector: Array1<f32>,
}

/// Anything that turns a manifest entry into one embedding vector.
/// `&mut self` lets implementations cache per-file work.
pub trait EmbeddingProvider {
    fn embed(&mut self, entry: &ManifestEntry) -> Result<Array1<f32>, EvalError>;
}

impl<T> EmbeddingProvider for T
where
    T: FnMut(&ManifestEntry) -> Result<Array1<f32>, EvalError>,
{
    fn embed(&mut self, entry: &ManifestEntry) -> Result<Array1<f32>, EvalError> {
        self(entry)
    }
}

/// Test-split entries grouped by label; class ids are positions in the
/// sorted label list.
pub struct TestPool<'m> {
    classes: Vec<(String, Vec<&'m ManifestEntry>)>,
}

impl<'m> TestPool<'m> {
    pub fn from_manifest(manifest: &'m DatasetManifest) -> Self {
        let labels = manifest.labels_in(Split::Test);
        let classes = labels
            .into_iter()
            .map(|label| {
                let files: Vec<&ManifestEntry> = manifest
                    .entries
                    .iter()
                    .filter(|e| e.split == Split::Test && e.label == label)
                    .collect();
                (label, files)
            })
            .collect();
        Self { classes }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_label(&self, class_id: usize) -> &str {
        &self.classes[class_id].0
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &&'m ManifestEntry)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(id, (_, files))| files.iter().map(move |f| (id, f)))
    }

    fn eligible(&self, files_needed: usize) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&c| self.classes[c].1.len() >= files_needed)
            .collect()
    }
}

/// Sample one episode: `n_way` classes uniformly without replacement,
/// then `k_shot + n_query` files per class without replacement, the
/// first `k_shot` forming the support set.
pub fn sample_episode<R, P>(
    pool: &TestPool<'_>,
    cfg: &EvalConfig,
    rng: &mut R,
    provider: &mut P,
) -> Result<Episode, EvalError>
where
    R: Rng + ?Sized,
    P: EmbeddingProvider + ?Sized,
{
    cfg.validate()?;
    let files_needed = cfg.k_shot + cfg.n_query;
    let eligible = pool.eligible(files_needed);
    if eligible.len() < cfg.n_way {
        return Err(EvalError::InsufficientClasses {
            required: cfg.n_way,
            available: eligible.len(),
        });
    }
    let class_picks = rand::seq::index::sample(rng, eligible.len(), cfg.n_way);
    let mut support = Vec::with_capacity(cfg.n_way * cfg.k_shot);
    let mut query = Vec::with_capacity(cfg.n_way * cfg.n_query);
    for pick in class_picks.iter() {
        let class_id = eligible[pick];
        let files = &pool.classes[class_id].1;
        let file_picks = rand::seq::index::sample(rng, files.len(), files_needed);
        for (slot, fidx) in file_picks.iter().enumerate() {
            let vector = provider.embed(files[fidx])?;
            if slot < cfg.k_shot {
                support.push((vector, class_id));
            } else {
                query.push((vector, class_id));
            }
        }
    }
    Ok(Episode { support, query })
}

/// Per-class mean of the support embeddings, ascending class id.
pub fn compute_prototypes(support: &[(Array1<f32>, usize)]) -> Vec<Prototype> {
    let mut by_class: HashMap<usize, (Array1<f32>, usize)> = HashMap::new();
    for (vec, class_id) in support {
        by_class
            .entry(*class_id)
            .and_modify(|(acc, count)| {
                *acc += vec;
                *count += 1;
            })
            .or_insert_with(|| (vec.clone(), 1));
    }
    let mut out: Vec<Prototype> = by_class
        .into_iter()
        .map(|(class_id, (sum, count))| Prototype {
            class_id,
            vector: sum / count as f32,
        })
        .collect();
    out.sort_by_key(|p| p.class_id);
    out
}

fn l2_normalize_or_zero(v: &mut Array1<f32>) {
    let norm = v.iter().map(|&x| x * x).sum::<f32>().sqrt();
    // degenerate centering can produce an exact zero vector; leave it
    if norm > 0.0 {
        v.mapv_inplace(|x| x / norm);
    }
}

/// Subtract the mean of the prototype vectors from every prototype and
/// query, then l2-normalize each vector (zero vectors stay zero).
pub fn center_and_normalize(
    prototypes: &[Prototype],
    queries: &[Array1<f32>],
) -> (Vec<Prototype>, Vec<Array1<f32>>) {
    assert!(!prototypes.is_empty(), "need at least one prototype");
    let dim = prototypes[0].vector.len();
    let mut mean = Array1::<f32>::zeros(dim);
    for p in prototypes {
        mean += &p.vector;
    }
    mean /= prototypes.len() as f32;
    let protos = prototypes
        .iter()
        .map(|p| {
            let mut v = &p.vector - &mean;
            l2_normalize_or_zero(&mut v);
            Prototype {
                class_id: p.class_id,
                vector: v,
            }
        })
        .collect();
    let queries = queries
        .iter()
        .map(|q| {
            let mut v = q - &mean;
            l2_normalize_or_zero(&mut v);
            v
        })
        .collect();
    (protos, queries)
}

/// Class of the Euclidean-nearest prototype. Prototypes are scanned in
/// the given order, so with ascending class ids ties break toward the
/// lowest class id.
pub fn classify(query: &Array1<f32>, prototypes: &[Prototype]) -> usize {
    assert!(!prototypes.is_empty(), "need at least one prototype");
    let mut best = (prototypes[0].class_id, f32::INFINITY);
    for p in prototypes {
        let d = query
            .iter()
            .zip(p.vector.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f32>();
        if d < best.1 {
            best = (p.class_id, d);
        }
    }
    best.0
}

/// 95% half-width from the sample standard deviation (n-1 denominator).
pub fn ci95_half_width(task_accuracies: &[f64]) -> f64 {
    let n = task_accuracies.len();
    if n < 2 {
        return 0.0;
    }
    let mean = task_accuracies.iter().sum::<f64>() / n as f64;
    let var = task_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    1.96 * var.sqrt() / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub ci95: f64,
    pub task_accuracies: Vec<f64>,
}

/// Run the full episodic evaluation. Task `t` draws from its own
/// seed-split stream, so results are reproducible for any task count and
/// independent of embedding-cache state.
pub fn run_eval<P>(
    pool: &TestPool<'_>,
    cfg: &EvalConfig,
    provider: &mut P,
) -> Result<EvalResult, EvalError>
where
    P: EmbeddingProvider + ?Sized,
{
    cfg.validate()?;
    let mut task_accuracies = Vec::with_capacity(cfg.n_tasks);
    for task in 0..cfg.n_tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(task as u64 + 1);
        let episode = sample_episode(pool, cfg, &mut rng, provider)?;
        let prototypes = compute_prototypes(&episode.support);
        let queries: Vec<Array1<f32>> = episode.query.iter().map(|(v, _)| v.clone()).collect();
        let truth: Vec<usize> = episode.query.iter().map(|(_, c)| *c).collect();
        let (prototypes, queries) = center_and_normalize(&prototypes, &queries);
        let correct = queries
            .iter()
            .zip(truth.iter())
            .filter(|(q, &t)| classify(q, &prototypes) == t)
            .count();
        task_accuracies.push(correct as f64 / queries.len() as f64);
    }
    let accuracy = task_accuracies.iter().sum::<f64>() / task_accuracies.len() as f64;
    let ci95 = ci95_half_width(&task_accuracies);
    Ok(EvalResult {
        accuracy,
        ci95,
        task_accuracies,
    })
}

/// One embedding for a whole clip: chunk it, run the encoder backbone on
/// each chunk's mel spectrogram, then either average or pick the chunk
/// the activation scorer ranks highest.
pub fn clip_embedding(
    clip: &AudioClip,
    model: &SslModel<f32>,
    extractor: &MelExtractor,
    strategy: EmbeddingStrategy,
    score_source: ScoreSource,
    sidecar: Option<&Path>,
) -> Result<Array1<f32>, EvalError> {
    let window_s = extractor.config().window_s;
    let padded = clip.pad_circular(window_s);
    let windows = chunk(&padded, window_s)?;
    match strategy {
        EmbeddingStrategy::ChunkAverage => {
            let mut acc = Array1::<f32>::zeros(model.embedding_dim());
            for w in &windows {
                let spec = extractor.compute(&w.extract(&padded))?;
                acc += &model.embed(&spec.values)?;
            }
            Ok(acc / windows.len() as f32)
        }
        EmbeddingStrategy::ActivationSelect => {
            let scores = score_windows(&padded, &windows, extractor, score_source, sidecar)?;
            let best = select_by_activation(&scores)?;
            let spec = extractor.compute(&windows[best].extract(&padded))?;
            Ok(model.embed(&spec.values)?)
        }
    }
}

/// [`EmbeddingProvider`] backed by a trained encoder, with a per-file
/// cache. External score sidecars are looked up at `<audio>.scores`.
pub struct EncoderEmbedder<'a> {
    model: &'a SslModel<f32>,
    extractor: &'a MelExtractor,
    root: PathBuf,
    strategy: EmbeddingStrategy,
    score_source: ScoreSource,
    cache: HashMap<String, Array1<f32>>,
}

impl<'a> EncoderEmbedder<'a> {
    pub fn new(
        model: &'a SslModel<f32>,
        extractor: &'a MelExtractor,
        root: &Path,
        strategy: EmbeddingStrategy,
        score_source: ScoreSource,
    ) -> Self {
        Self {
            model,
            extractor,
            root: root.to_path_buf(),
            strategy,
            score_source,
            cache: HashMap::new(),
        }
    }
}

impl EmbeddingProvider for EncoderEmbedder<'_> {
    fn embed(&mut self, entry: &ManifestEntry) -> Result<Array1<f32>, EvalError> {
        if let Some(hit) = self.cache.get(&entry.path) {
            return Ok(hit.clone());
        }
        let path = self.root.join(&entry.path);
        let clip = load_wav(&path).map_err(|source| EvalError::UnreadableAudio {
            path: path.clone(),
            source,
        })?;
        let clip = clip.resample(self.extractor.config().sample_rate_hz)?;
        let sidecar = PathBuf::from(format!("{}.scores", path.display()));
        let vector = clip_embedding(
            &clip,
            self.model,
            self.extractor,
            self.strategy,
            self.score_source,
            Some(&sidecar),
        )?;
        self.cache.insert(entry.path.clone(), vector.clone());
        Ok(vector)
    }
}

/// Write the `EMBD` dump: magic, u32-LE N, u32-LE D, N*D f32-LE
/// row-major, then N u32-LE class ids.
pub fn write_embeddings(
    path: &Path,
    rows: &[Array1<f32>],
    class_ids: &[u32],
) -> Result<(), EvalError> {
    if rows.len() != class_ids.len() {
        return Err(EvalError::MalformedDump(format!(
            "{} rows vs {} class ids",
            rows.len(),
            class_ids.len()
        )));
    }
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(EMBD_MAGIC)?;
    out.write_all(&(rows.len() as u32).to_le_bytes())?;
    out.write_all(&(d as u32).to_le_bytes())?;
    for row in rows {
        for &v in row.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for &c in class_ids {
        out.write_all(&c.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<Array1<f32>>, Vec<u32>), EvalError> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != EMBD_MAGIC {
        return Err(EvalError::MalformedDump("missing EMBD magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + n * d * 4 + n * 4;
    if bytes.len() != expected {
        return Err(EvalError::MalformedDump(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let mut off = 12;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Array1::<f32>::zeros(d);
        for v in row.iter_mut() {
            *v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
        rows.push(row);
    }
    let mut class_ids = Vec::with_capacity(n);
    for _ in 0..n {
        class_ids.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    Ok((rows, class_ids))
}

/// The structured results file: `key=value` lines, one per field.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub objective: String,
    pub selection: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_tasks: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub ci95: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!(
            "objective={}\nselection={}\nn_way={}\nk_shot={}\nn_tasks={}\nseed={}\naccuracy={:.6}\nci95={:.6}\n",
            self.objective,
            self.selection,
            self.n_way,
            self.k_shot,
            self.n_tasks,
            self.seed,
            self.accuracy,
            self.ci95
        )
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn entry(path: &str, label: &str) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            label: label.into(),
            split: Split::Test,
        }
    }

    fn pool_manifest(n_classes: usize, files_per_class: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for c in 0..n_classes {
            for f in 0..files_per_class {
                entries.push(entry(
                    &format!("wavs/c{c:02}/f{f:02}.wav"),
                    &format!("c{c:02}"),
                ));
            }
        }
        DatasetManifest { entries }
    }

    /// Embeds each file as a one-hot of its class plus a small per-file
    /// offset, so classes are perfectly separable.
    fn separable_provider(
        dim: usize,
    ) -> impl FnMut(&ManifestEntry) -> Result<Array1<f32>, EvalError> {
        move |e: &ManifestEntry| {
            let class: usize = e.label[1..].parse().unwrap();
            let mut v = Array1::<f32>::zeros(dim);
            v[class % dim] = 1.0;
            let file_hash = e.path.bytes().map(|b| b as usize).sum::<usize>() % 7;
            v[(class + 1) % dim] = 0.01 * file_hash as f32;
            Ok(v)
        }
    }

    #[test]
    fn prototypes_are_class_means() {
        let support = vec![
            (arr1(&[0.0, 2.0]), 1),
            (arr1(&[2.0, 0.0]), 1),
            (arr1(&[5.0, 5.0]), 0),
        ];
        let protos = compute_prototypes(&support);
        assert_eq!(protos.len(), 2);
        assert_eq!(protos[0].class_id, 0);
        assert_eq!(protos[0].vector, arr1(&[5.0, 5.0]));
        assert_eq!(protos[1].vector, arr1(&[1.0, 1.0]));

        // order of the support list is irrelevant
        let mut shuffled = support.clone();
        shuffled.reverse();
        let protos2 = compute_prototypes(&shuffled);
        assert_eq!(protos[1].vector, protos2[1].vector);
    }

    #[test]
    fn centering_normalizes_and_keeps_zero_vectors() {
        let protos = vec![
            Prototype {
                class_id: 0,
                vector: arr1(&[1.0, 0.0]),
            },
            Prototype {
                class_id: 1,
                vector: arr1(&[-1.0, 0.0]),
            },
        ];
        let queries = vec![arr1(&[0.5, 0.5])];
        let (p, q) = center_and_normalize(&protos, &queries);
        // already symmetric about the origin: centering is the identity
        assert_eq!(p[0].vector, arr1(&[1.0, 0.0]));
        assert_eq!(p[1].vector, arr1(&[-1.0, 0.0]));
        let qn = q[0].iter().map(|&x| x * x).sum::<f32>().sqrt();
        assert!((qn - 1.0).abs() < 1e-6);

        // single prototype centers to the zero vector and stays zero
        let single = vec![Prototype {
            class_id: 3,
            vector: arr1(&[2.0, 1.0]),
        }];
        let (p, _) = center_and_normalize(&single, &[]);
        assert_eq!(p[0].vector, arr1(&[0.0, 0.0]));
    }

    #[test]
    fn classify_basics_and_tie_break() {
        let protos = vec![
            Prototype {
                class_id: 0,
                vector: arr1(&[1.0, 0.0]),
            },
            Prototype {
                class_id: 1,
                vector: arr1(&[0.0, 1.0]),
            },
        ];
        assert_eq!(classify(&arr1(&[1.0, 0.0]), &protos), 0);
        assert_eq!(classify(&arr1(&[0.9, 0.1]), &protos), 0);
        assert_eq!(classify(&arr1(&[0.1, 0.9]), &protos), 1);
        // equidistant: lowest class id wins
        assert_eq!(classify(&arr1(&[0.5, 0.5]), &protos), 0);
    }

    #[test]
    fn classify_is_translation_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let protos: Vec<Prototype> = (0..4)
                .map(|c| Prototype {
                    class_id: c,
                    vector: arr1(&[
                        rng.random_range(-1.0f32..1.0),
                        rng.random_range(-1.0f32..1.0),
                    ]),
                })
                .collect();
            let q = arr1(&[rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)]);
            let base = classify(&q, &protos);

            let t = arr1(&[3.25f32, -1.5]);
            let shifted: Vec<Prototype> = protos
                .iter()
                .map(|p| Prototype {
                    class_id: p.class_id,
                    vector: &p.vector + &t,
                })
                .collect();
            assert_eq!(classify(&(&q + &t), &shifted), base);

            let theta = 0.7f32;
            let rot = |v: &Array1<f32>| {
                arr1(&[
                    v[0] * theta.cos() - v[1] * theta.sin(),
                    v[0] * theta.sin() + v[1] * theta.cos(),
                ])
            };
            let rotated: Vec<Prototype> = protos
                .iter()
                .map(|p| Prototype {
                    class_id: p.class_id,
                    vector: rot(&p.vector),
                })
                .collect();
            assert_eq!(classify(&rot(&q), &rotated), base);
        }
    }

    #[test]
    fn argmin_euclidean_equals_argmax_dot_on_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let unit = |rng: &mut ChaCha8Rng, d: usize| {
            let mut v = Array1::<f32>::zeros(d);
            loop {
                for x in v.iter_mut() {
                    *x = rng.random_range(-1.0f32..1.0);
                }
                let n = v.iter().map(|&x| x * x).sum::<f32>().sqrt();
                if n > 1e-3 {
                    v.mapv_inplace(|x| x / n);
                    return v;
                }
            }
        };
        for _ in 0..1000 {
            let protos: Vec<Prototype> = (0..5)
                .map(|c| Prototype {
                    class_id: c,
                    vector: unit(&mut rng, 8),
                })
                .collect();
            let q = unit(&mut rng, 8);
            let by_dist = classify(&q, &protos);
            let by_dot = protos
                .iter()
                .max_by(|a, b| {
                    let da = a.vector.dot(&q);
                    let db = b.vector.dot(&q);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .class_id;
            assert_eq!(by_dist, by_dot);
        }
    }

    #[test]
    fn ci95_matches_the_hand_formula() {
        let ci = ci95_half_width(&[1.0, 0.0, 1.0, 0.0]);
        assert!((ci - 0.5659).abs() < 1e-4);
        assert!((ci - 0.5658032638058332).abs() < 1e-12);
        assert_eq!(ci95_half_width(&[0.5]), 0.0);
    }

    #[test]
    fn episode_uses_all_classes_when_exactly_n_way() {
        let manifest = pool_manifest(5, 4);
        let pool = TestPool::from_manifest(&manifest);
        let cfg = EvalConfig {
            n_way: 5,
            k_shot: 1,
            n_query: 1,
            ..EvalConfig::default()
        };
        let mut provider = separable_provider(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = sample_episode(&pool, &cfg, &mut rng, &mut provider).unwrap();
        let mut classes: Vec<usize> = ep.support.iter().map(|(_, c)| *c).collect();
        classes.sort_unstable();
        assert_eq!(classes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn support_and_query_files_are_disjoint() {
        let manifest = pool_manifest(6, 3);
        let pool = TestPool::from_manifest(&manifest);
        let cfg = EvalConfig {
            n_way: 5,
            k_shot: 1,
            n_query: 1,
            ..EvalConfig::default()
        };
        // a provider that records which files were requested, per slot
        let mut seen: Vec<String> = Vec::new();
        for seed in 0..50u64 {
            seen.clear();
            let mut provider = |e: &ManifestEntry| {
                seen.push(e.path.clone());
                Ok(Array1::<f32>::zeros(4))
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_episode(&pool, &cfg, &mut rng, &mut provider).unwrap();
            let mut sorted = seen.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), seen.len(), "a file appeared twice");
        }
    }

    #[test]
    fn insufficient_classes_is_reported() {
        let manifest = pool_manifest(4, 8);
        let pool = TestPool::from_manifest(&manifest);
        let cfg = EvalConfig {
            n_way: 5,
            ..EvalConfig::default()
        };
        let mut provider = separable_provider(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match sample_episode(&pool, &cfg, &mut rng, &mut provider) {
            Err(EvalError::InsufficientClasses {
                required: 5,
                available: 4,
            }) => {}
            other => panic!("expected insufficient classes, got {other:?}"),
        }
    }

    #[test]
    fn class_sampling_is_uniform() {
        let manifest = pool_manifest(20, 2);
        let pool = TestPool::from_manifest(&manifest);
        let cfg = EvalConfig {
            n_way: 5,
            k_shot: 1,
            n_query: 1,
            ..EvalConfig::default()
        };
        let mut counts = vec![0usize; 20];
        let mut provider = |_: &ManifestEntry| Ok(Array1::<f32>::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let ep = sample_episode(&pool, &cfg, &mut rng, &mut provider).unwrap();
            for (_, c) in &ep.support {
                counts[*c] += 1;
            }
        }
        // Binomial(10^4, 1/4): sd = sqrt(10^4 * 0.25 * 0.75) ~ 43.3
        let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for (c, &count) in counts.iter().enumerate() {
            assert!(
                (count as f64 - 2500.0).abs() <= 3.0 * sd,
                "class {c} drawn {count} times"
            );
        }
    }

    #[test]
    fn separable_embeddings_give_perfect_accuracy() {
        let manifest = pool_manifest(6, 4);
        let pool = TestPool::from_manifest(&manifest);
        let cfg = EvalConfig {
            n_way: 5,
            k_shot: 1,
            n_query: 2,
            n_tasks: 50,
            ..EvalConfig::default()
        };
        let mut provider = separable_provider(8);
        let result = run_eval(&pool, &cfg, &mut provider).unwrap();
        assert_eq!(result.accuracy, 1.0);
        assert_eq!(result.ci95, 0.0);
    }

    #[test]
    fn run_eval_is_reproducible() {
        let manifest = pool_manifest(8, 4);
        let pool = TestPool::from_manifest(&manifest);
        let cfg = EvalConfig {
            n_way: 5,
            k_shot: 1,
            n_query: 2,
            n_tasks: 40,
            seed: 9,
            ..EvalConfig::default()
        };
        let mut rng_provider = |e: &ManifestEntry| {
            // stable pseudo-random embedding per file
            let h = e.path.bytes().fold(0u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            Ok(Array1::from_shape_fn(6, |_| rng.random_range(-1.0f32..1.0)))
        };
        let a = run_eval(&pool, &cfg, &mut rng_provider).unwrap();
        let b = run_eval(&pool, &cfg, &mut rng_provider).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.ci95, b.ci95);
        assert_eq!(a.task_accuracies, b.task_accuracies);
    }

    #[test]
    fn embd_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.embd");
        let rows = vec![arr1(&[1.0f32, 2.0, 3.0]), arr1(&[-1.0f32, 0.5, 0.25])];
        let ids = vec![3u32, 7];
        write_embeddings(&path, &rows, &ids).unwrap();
        let (r, i) = read_embeddings(&path).unwrap();
        assert_eq!(r, rows);
        assert_eq!(i, ids);
    }

    #[test]
    fn report_text_is_stable() {
        let report = EvalReport {
            objective: "bt".into(),
            selection: "chunk_average".into(),
            n_way: 5,
            k_shot: 1,
            n_tasks: 500,
            seed: 0,
            accuracy: 0.512345,
            ci95: 0.012345,
        };
        let text = report.to_text();
        assert!(text.contains("objective=bt\n"));
        assert!(text.contains("accuracy=0.512345\n"));
        assert!(text.contains("ci95=0.012345\n"));
    }
}
