//! A small trainable convolutional encoder with exact reverse-mode
//! gradients.
//!
//! Architecture: a stack of valid (unpadded) strided conv stages with a
//! pointwise nonlinearity, global average pooling over the remaining
//! time-frequency extent, a linear head producing the D-dimensional
//! embedding, and an optional multi-layer projector used only during
//! training. Convolutions run as im2col plus matrix multiply in both
//! directions.
//!
//! Everything is generic over `f32`/`f64`: training runs in 32-bit while
//! the gradient-verification oracles run the same code in 64-bit.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("input of {h}x{w} is smaller than the {k}x{k} kernel of stage {stage}")]
    InputTooSmall {
        stage: usize,
        h: usize,
        w: usize,
        k: usize,
    },
    #[error("forward cache is stale: model version {model} != cache version {cache}")]
    StaleCache { model: u64, cache: u64 },
    #[error("gradient buffer {index} has shape {got:?}, expected {expected:?}")]
    GradShapeMismatch {
        index: usize,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("expected {expected} gradient buffers, got {got}")]
    GradCountMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, expected {expected}")]
    FlatSizeMismatch { got: usize, expected: usize },
}

/// Pointwise nonlinearity. The derivative is evaluated from the
/// post-activation value, so caches only retain outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Self::Relu),
            "tanh" => Some(Self::Tanh),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
        }
    }

    fn apply<F: NdFloat>(&self, x: F) -> F {
        match self {
            Self::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Self::Tanh => x.tanh(),
        }
    }

    fn derivative_from_output<F: NdFloat>(&self, y: F) -> F {
        match self {
            Self::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Self::Tanh => F::one() - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Encoder hyperparameters. The default is the desk-scale stand-in:
/// three stages of 16/32/64 channels, kernel 3, stride 2, a 64-dim
/// embedding, and a two-layer 64-64 projector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub conv_stages: Vec<ConvStage>,
    pub embedding_dim: usize,
    pub projector_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv_stages: vec![
                ConvStage {
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                },
                ConvStage {
                    out_channels: 32,
                    kernel: 3,
                    stride: 2,
                },
                ConvStage {
                    out_channels: 64,
                    kernel: 3,
                    stride: 2,
                },
            ],
            embedding_dim: 64,
            projector_dims: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.conv_stages.is_empty() {
            return Err(NnError::InvalidConfig("need at least one conv stage".into()));
        }
        if self.embedding_dim < 2 {
            return Err(NnError::InvalidConfig("embedding_dim must be >= 2".into()));
        }
        for (i, s) in self.conv_stages.iter().enumerate() {
            if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(NnError::InvalidConfig(format!(
                    "conv stage {i} has a zero field"
                )));
            }
        }
        if self.projector_dims.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidConfig("projector dims must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form; the checkpoint header embeds exactly this.
    pub fn canonical_text(&self) -> String {
        let stages: Vec<String> = self
            .conv_stages
            .iter()
            .map(|s| format!("{}:{}:{}", s.out_channels, s.kernel, s.stride))
            .collect();
        let proj: Vec<String> = self.projector_dims.iter().map(|d| d.to_string()).collect();
        format!(
            "conv_stages={}\nembedding_dim={}\nprojector_dims={}\nactivation={}\n",
            stages.join(","),
            self.embedding_dim,
            proj.join(","),
            self.activation.name()
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self, NnError> {
        let mut cfg = EncoderConfig {
            conv_stages: Vec::new(),
            embedding_dim: 0,
            projector_dims: Vec::new(),
            activation: Activation::Relu,
        };
        let bad = |m: String| NnError::InvalidConfig(m);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            match key {
                "conv_stages" => {
                    for part in value.split(',').filter(|p| !p.is_empty()) {
                        let fields: Vec<&str> = part.split(':').collect();
                        if fields.len() != 3 {
                            return Err(bad(format!("bad conv stage {part:?}")));
                        }
                        let parse = |s: &str| {
                            s.parse::<usize>()
                                .map_err(|_| bad(format!("bad conv stage field {s:?}")))
                        };
                        cfg.conv_stages.push(ConvStage {
                            out_channels: parse(fields[0])?,
                            kernel: parse(fields[1])?,
                            stride: parse(fields[2])?,
                        });
                    }
                }
                "embedding_dim" => {
                    cfg.embedding_dim = value
                        .parse()
                        .map_err(|_| bad(format!("bad embedding_dim {value:?}")))?;
                }
                "projector_dims" => {
                    for part in value.split(',').filter(|p| !p.is_empty()) {
                        cfg.projector_dims.push(
                            part.parse()
                                .map_err(|_| bad(format!("bad projector dim {part:?}")))?,
                        );
                    }
                }
                "activation" => {
                    cfg.activation = Activation::parse(value)
                        .ok_or_else(|| bad(format!("unknown activation {value:?}")))?;
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
struct Conv2d<F> {
    weight: Array4<F>, // [out_c, in_c, k, k]
    bias: Array1<F>,
    stride: usize,
}

#[derive(Debug, Clone)]
struct Linear<F> {
    weight: Array2<F>, // [out, in]
    bias: Array1<F>,
}

/// Encoder + optional projector with a version counter that invalidates
/// forward caches on every parameter update.
#[derive(Debug, Clone)]
pub struct SslModel<F> {
    convs: Vec<Conv2d<F>>,
    head: Linear<F>,
    projector: Vec<Linear<F>>,
    activation: Activation,
    cfg: EncoderConfig,
    version: u64,
}

/// Intermediates retained by [`SslModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    version: u64,
    /// `maps[0]` is the input; `maps[i+1]` is the post-activation output of
    /// conv stage `i`.
    maps: Vec<Array3<F>>,
    pooled: Array1<F>,
    embedding: Array1<F>,
    /// Post-activation (or raw, for the last layer) outputs per projector
    /// layer.
    proj_outputs: Vec<Array1<F>>,
}

impl<F: NdFloat> ForwardCache<F> {
    pub fn embedding(&self) -> &Array1<F> {
        &self.embedding
    }
}

fn uniform_draw<F: NdFloat, R: Rng + ?Sized>(rng: &mut R, fan_in: usize) -> F {
    let bound = (1.0 / fan_in as f64).sqrt();
    F::from(rng.random_range(-bound..bound)).unwrap()
}

impl<F: NdFloat> SslModel<F> {
    /// Seeded parameter init: weights uniform in +-sqrt(1/fan_in), biases zero.
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(cfg.conv_stages.len());
        let mut in_c = 1usize;
        for stage in &cfg.conv_stages {
            let k = stage.kernel;
            let fan_in = in_c * k * k;
            let weight = Array4::from_shape_fn((stage.out_channels, in_c, k, k), |_| {
                uniform_draw(&mut rng, fan_in)
            });
            convs.push(Conv2d {
                weight,
                bias: Array1::zeros(stage.out_channels),
                stride: stage.stride,
            });
            in_c = stage.out_channels;
        }
        let head = Linear {
            weight: Array2::from_shape_fn((cfg.embedding_dim, in_c), |_| {
                uniform_draw(&mut rng, in_c)
            }),
            bias: Array1::zeros(cfg.embedding_dim),
        };
        let mut projector = Vec::with_capacity(cfg.projector_dims.len());
        let mut prev = cfg.embedding_dim;
        for &dim in &cfg.projector_dims {
            projector.push(Linear {
                weight: Array2::from_shape_fn((dim, prev), |_| uniform_draw(&mut rng, prev)),
                bias: Array1::zeros(dim),
            });
            prev = dim;
        }
        Ok(Self {
            convs,
            head,
            projector,
            activation: cfg.activation,
            cfg: cfg.clone(),
            version: 0,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Invalidate outstanding forward caches after a parameter update.
    pub fn mark_updated(&mut self) {
        self.version += 1;
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    /// Dimension of the training output (projector output, or the
    /// embedding itself when no projector is configured).
    pub fn output_dim(&self) -> usize {
        self.cfg
            .projector_dims
            .last()
            .copied()
            .unwrap_or(self.cfg.embedding_dim)
    }

    fn conv_forward(
        &self,
        stage: usize,
        input: &Array3<F>,
    ) -> Result<(Array3<F>, ()), NnError> {
        let conv = &self.convs[stage];
        let (in_c, h, w) = input.dim();
        let k = conv.weight.dim().2;
        if h < k || w < k {
            return Err(NnError::InputTooSmall { stage, h, w, k });
        }
        let s = conv.stride;
        let oh = (h - k) / s + 1;
        let ow = (w - k) / s + 1;
        let col = im2col(input, k, s, oh, ow);
        let out_c = conv.weight.dim().0;
        let wmat = conv
            .weight
            .view()
            .into_shape_with_order((out_c, in_c * k * k))
            .expect("conv weight is contiguous");
        let mut flat = wmat.dot(&col); // [out_c, oh*ow]
        for (mut row, &b) in flat.rows_mut().into_iter().zip(conv.bias.iter()) {
            row.mapv_inplace(|v| self.activation.apply(v + b));
        }
        let out = flat
            .into_shape_with_order((out_c, oh, ow))
            .expect("conv output is contiguous");
        Ok((out, ()))
    }

    fn backbone(&self, spec: &Array2<F>) -> Result<(Vec<Array3<F>>, Array1<F>, Array1<F>), NnError> {
        let (f, t) = spec.dim();
        let input = spec
            .to_owned()
            .into_shape_with_order((1, f, t))
            .expect("spec is contiguous");
        let mut maps = vec![input];
        for stage in 0..self.convs.len() {
            let (out, ()) = self.conv_forward(stage, maps.last().unwrap())?;
            maps.push(out);
        }
        let last = maps.last().unwrap();
        let (c, h, w) = last.dim();
        let area = F::from(h * w).unwrap();
        let pooled = Array1::from_shape_fn(c, |ch| {
            let mut acc = F::zero();
            for y in 0..h {
                for x in 0..w {
                    acc = acc + last[(ch, y, x)];
                }
            }
            acc / area
        });
        let embedding = self.head.weight.dot(&pooled) + &self.head.bias;
        Ok((maps, pooled, embedding))
    }

    /// Backbone embedding only (what few-shot evaluation consumes).
    pub fn embed(&self, spec: &Array2<F>) -> Result<Array1<F>, NnError> {
        self.backbone(spec).map(|(_, _, e)| e)
    }

    /// Full forward pass for training: returns the projector output (or
    /// the embedding when no projector is configured) plus the cache the
    /// backward pass consumes.
    pub fn forward(&self, spec: &Array2<F>) -> Result<(Array1<F>, ForwardCache<F>), NnError> {
        let (maps, pooled, embedding) = self.backbone(spec)?;
        let mut proj_outputs = Vec::with_capacity(self.projector.len());
        let mut x = embedding.clone();
        for (l, layer) in self.projector.iter().enumerate() {
            let mut out = layer.weight.dot(&x) + &layer.bias;
            if l + 1 < self.projector.len() {
                out.mapv_inplace(|v| self.activation.apply(v));
            }
            proj_outputs.push(out.clone());
            x = out;
        }
        let cache = ForwardCache {
            version: self.version,
            maps,
            pooled,
            embedding,
            proj_outputs,
        };
        Ok((x, cache))
    }

    /// Number of parameter tensors, in declaration order: per conv stage
    /// weight then bias, head weight and bias, then projector layers.
    pub fn num_tensors(&self) -> usize {
        2 * self.convs.len() + 2 + 2 * self.projector.len()
    }

    pub fn param_tensors(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut out = Vec::with_capacity(self.num_tensors());
        for c in &self.convs {
            out.push(c.weight.view().into_dyn());
            out.push(c.bias.view().into_dyn());
        }
        out.push(self.head.weight.view().into_dyn());
        out.push(self.head.bias.view().into_dyn());
        for l in &self.projector {
            out.push(l.weight.view().into_dyn());
            out.push(l.bias.view().into_dyn());
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2 + 2 * self.projector.len());
        for c in &mut self.convs {
            out.push(c.weight.view_mut().into_dyn());
            out.push(c.bias.view_mut().into_dyn());
        }
        out.push(self.head.weight.view_mut().into_dyn());
        out.push(self.head.bias.view_mut().into_dyn());
        for l in &mut self.projector {
            out.push(l.weight.view_mut().into_dyn());
            out.push(l.bias.view_mut().into_dyn());
        }
        out
    }

    /// Zeroed gradient buffers matching [`Self::param_tensors`].
    pub fn zero_grads(&self) -> Vec<ArrayD<F>> {
        self.param_tensors()
            .iter()
            .map(|t| ArrayD::zeros(t.raw_dim()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.param_tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[F]) -> Result<(), NnError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(NnError::FlatSizeMismatch {
                got: flat.len(),
                expected,
            });
        }
        let mut off = 0;
        for mut t in self.param_tensors_mut() {
            for v in t.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Accumulate exact gradients of `grad_output . output` with respect
    /// to every parameter into `grads` (same order as
    /// [`Self::param_tensors`]).
    pub fn backward(
        &self,
        grad_output: &Array1<F>,
        cache: &ForwardCache<F>,
        grads: &mut [ArrayD<F>],
    ) -> Result<(), NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache {
                model: self.version,
                cache: cache.version,
            });
        }
        let expected = self.num_tensors();
        if grads.len() != expected {
            return Err(NnError::GradCountMismatch {
                expected,
                got: grads.len(),
            });
        }
        for (index, (g, p)) in grads.iter().zip(self.param_tensors()).enumerate() {
            if g.shape() != p.shape() {
                return Err(NnError::GradShapeMismatch {
                    index,
                    got: g.shape().to_vec(),
                    expected: p.shape().to_vec(),
                });
            }
        }

        let n_conv = self.convs.len();
        let head_w_idx = 2 * n_conv;

        // projector, last layer first
        let mut g = grad_output.clone();
        for l in (0..self.projector.len()).rev() {
            let layer = &self.projector[l];
            if l + 1 < self.projector.len() {
                let out = &cache.proj_outputs[l];
                for (gv, &ov) in g.iter_mut().zip(out.iter()) {
                    *gv = *gv * self.activation.derivative_from_output(ov);
                }
            }
            let input = if l == 0 {
                &cache.embedding
            } else {
                &cache.proj_outputs[l - 1]
            };
            let wi = head_w_idx + 2 + 2 * l;
            accumulate_outer(&mut grads[wi], &g, input);
            accumulate_vec(&mut grads[wi + 1], &g);
            g = layer.weight.t().dot(&g);
        }

        // head linear
        accumulate_outer(&mut grads[head_w_idx], &g, &cache.pooled);
        accumulate_vec(&mut grads[head_w_idx + 1], &g);
        let g_pooled = self.head.weight.t().dot(&g);

        // global average pool spreads the gradient uniformly
        let last_map = cache.maps.last().unwrap();
        let (c, h, w) = last_map.dim();
        let area = F::from(h * w).unwrap();
        let mut g_map = Array3::from_shape_fn((c, h, w), |(ch, _, _)| g_pooled[ch] / area);

        // conv stages, deepest first
        for stage in (0..n_conv).rev() {
            let conv = &self.convs[stage];
            let post = &cache.maps[stage + 1];
            for (gv, &ov) in g_map.iter_mut().zip(post.iter()) {
                *gv = *gv * self.activation.derivative_from_output(ov);
            }
            let input = &cache.maps[stage];
            let (in_c, ih, iw) = input.dim();
            let k = conv.weight.dim().2;
            let s = conv.stride;
            let (out_c, oh, ow) = g_map.dim();
            let col = im2col(input, k, s, oh, ow);
            let g_flat = g_map
                .view()
                .into_shape_with_order((out_c, oh * ow))
                .expect("grad map is contiguous");

            // d/d bias
            {
                let gb = &mut grads[2 * stage + 1];
                for (bi, row) in g_flat.rows().into_iter().enumerate() {
                    let sum = row.iter().fold(F::zero(), |a, &b| a + b);
                    gb[bi] = gb[bi] + sum;
                }
            }
            // d/d weight = g_flat . col^T
            {
                let gw_update = g_flat.dot(&col.t());
                let gw = &mut grads[2 * stage];
                for (gv, &uv) in gw.iter_mut().zip(gw_update.iter()) {
                    *gv = *gv + uv;
                }
            }
            // d/d input via col2im
            if stage > 0 {
                let wmat = conv
                    .weight
                    .view()
                    .into_shape_with_order((out_c, in_c * k * k))
                    .expect("conv weight is contiguous");
                let g_col = wmat.t().dot(&g_flat);
                g_map = col2im(&g_col, in_c, ih, iw, k, s, oh, ow);
            }
        }
        Ok(())
    }
}

fn im2col<F: NdFloat>(input: &Array3<F>, k: usize, s: usize, oh: usize, ow: usize) -> Array2<F> {
    let (in_c, _, _) = input.dim();
    let mut col = Array2::<F>::zeros((in_c * k * k, oh * ow));
    for c in 0..in_c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for y in 0..oh {
                    for x in 0..ow {
                        col[(row, y * ow + x)] = input[(c, y * s + ki, x * s + kj)];
                    }
                }
            }
        }
    }
    col
}

fn col2im<F: NdFloat>(
    g_col: &Array2<F>,
    in_c: usize,
    ih: usize,
    iw: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Array3<F> {
    let mut out = Array3::<F>::zeros((in_c, ih, iw));
    for c in 0..in_c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                for y in 0..oh {
                    for x in 0..ow {
                        let v = g_col[(row, y * ow + x)];
                        out[(c, y * s + ki, x * s + kj)] = out[(c, y * s + ki, x * s + kj)] + v;
                    }
                }
            }
        }
    }
    out
}

fn accumulate_outer<F: NdFloat>(grad: &mut ArrayD<F>, g: &Array1<F>, x: &Array1<F>) {
    let cols = x.len();
    for (i, &gv) in g.iter().enumerate() {
        for (j, &xv) in x.iter().enumerate() {
            let idx = i * cols + j;
            let slot = grad.as_slice_mut().expect("grad is contiguous");
            slot[idx] = slot[idx] + gv * xv;
        }
    }
}

fn accumulate_vec<F: NdFloat>(grad: &mut ArrayD<F>, g: &Array1<F>) {
    let slot = grad.as_slice_mut().expect("grad is contiguous");
    for (s, &gv) in slot.iter_mut().zip(g.iter()) {
        *s = *s + gv;
    }
}
