//! Training objectives over embedding batches.
//!
//! Four losses — a sample-contrastive one over normalized pairs, a
//! dimension-decorrelating one over the cross-correlation matrix, a
//! Frobenius-regularized MSE that is both, and the supervised-positive
//! extension of the first — each implemented as a pure function of the
//! raw embedding batches returning the scalar loss and analytic gradients
//! with respect to the pre-normalization inputs.
//!
//! Every gradient path is verifiable against central finite differences
//! via [`finite_difference_check`]; the relative-error contract is 1e-4
//! at h = 1e-5 in 64-bit.
//!
//! Aggregation: pair/anchor losses are averaged over all 2N anchors, so
//! loss magnitude does not scale with batch size.

use ndarray::{concatenate, s, Array1, Array2, Axis, NdFloat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("embedding batches have different shapes: {z1:?} vs {z2:?}")]
    ShapeMismatch {
        z1: (usize, usize),
        z2: (usize, usize),
    },
    #[error("batch of {n} rows is too small (need at least {required})")]
    BatchTooSmall { n: usize, required: usize },
    #[error("embedding batch contains a non-finite entry")]
    NonFiniteInput,
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },
    #[error("dimension {dim} has zero variance across the batch")]
    ZeroVarianceDim { dim: usize },
    #[error("embedding matrix has zero Frobenius norm after centering")]
    ZeroFrobeniusNorm,
    #[error("anchor {anchor} has no positive (no other row shares its label)")]
    EmptyPositiveSet { anchor: usize },
    #[error("got {labels} labels for {rows} embedding rows")]
    LabelCountMismatch { labels: usize, rows: usize },
    #[error("temperature must be positive")]
    InvalidTemperature,
    #[error("loss is not finite at a perturbed point")]
    NonFiniteLoss,
}

/// Loss hyperparameters: softmax temperature and the redundancy /
/// regularization coefficient. `robust_norm` adds 1e-12 inside the
/// standardization denominator instead of erroring on zero variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig<F> {
    pub temperature: F,
    pub lambda: F,
    pub robust_norm: bool,
}

impl<F: NdFloat> Default for ObjectiveConfig<F> {
    fn default() -> Self {
        Self {
            temperature: F::one(),
            lambda: F::from(1e-2).unwrap(),
            robust_norm: false,
        }
    }
}

/// Scalar loss plus analytic gradients. `grad_z2` is `None` for the
/// single-batch supervised loss.
#[derive(Debug, Clone)]
pub struct LossOutput<F> {
    pub value: F,
    pub grad_z1: Array2<F>,
    pub grad_z2: Option<Array2<F>>,
}

/// Objective selector shared by the trainer and the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    SimClr,
    BarlowTwins,
    FroSsl,
    SupCon,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::SimClr,
        Objective::BarlowTwins,
        Objective::FroSsl,
        Objective::SupCon,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "simclr" => Some(Self::SimClr),
            "bt" => Some(Self::BarlowTwins),
            "frossl" => Some(Self::FroSsl),
            "supcon" => Some(Self::SupCon),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SimClr => "simclr",
            Self::BarlowTwins => "bt",
            Self::FroSsl => "frossl",
            Self::SupCon => "supcon",
        }
    }

    pub fn needs_labels(&self) -> bool {
        matches!(self, Self::SupCon)
    }
}

fn check_finite<F: NdFloat>(z: &Array2<F>) -> Result<(), ObjectiveError> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ObjectiveError::NonFiniteInput);
    }
    Ok(())
}

fn check_pair<F: NdFloat>(
    z1: &Array2<F>,
    z2: &Array2<F>,
    cfg: &ObjectiveConfig<F>,
) -> Result<(), ObjectiveError> {
    if z1.dim() != z2.dim() {
        return Err(ObjectiveError::ShapeMismatch {
            z1: z1.dim(),
            z2: z2.dim(),
        });
    }
    if !(cfg.temperature > F::zero()) {
        return Err(ObjectiveError::InvalidTemperature);
    }
    check_finite(z1)?;
    check_finite(z2)
}

fn normalize_with_norms<F: NdFloat>(
    z: &Array2<F>,
) -> Result<(Array2<F>, Vec<F>), ObjectiveError> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.nrows());
    for (row, mut r) in out.rows_mut().into_iter().enumerate() {
        let norm = r.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b).sqrt();
        if norm == F::zero() {
            return Err(ObjectiveError::ZeroNormRow { row });
        }
        r.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Scale each row to unit Euclidean norm.
pub fn l2_normalize_rows<F: NdFloat>(z: &Array2<F>) -> Result<Array2<F>, ObjectiveError> {
    check_finite(z)?;
    normalize_with_norms(z).map(|(u, _)| u)
}

/// Backpropagate through per-row l2 normalization:
/// `dz = (du - (du . u) u) / norm`.
fn backprop_row_normalize<F: NdFloat>(
    grad_u: &Array2<F>,
    u: &Array2<F>,
    norms: &[F],
) -> Array2<F> {
    let mut out = grad_u.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let urow = u.row(i);
        let dot = row
            .iter()
            .zip(urow.iter())
            .map(|(&g, &uv)| g * uv)
            .fold(F::zero(), |a, b| a + b);
        for (g, &uv) in row.iter_mut().zip(urow.iter()) {
            *g = (*g - dot * uv) / norms[i];
        }
    }
    out
}

/// Anchor-to-score gradient matrix contracted back onto the normalized
/// embeddings: returns `(G + G^T) U`.
fn score_grad_to_embeddings<F: NdFloat>(g: &Array2<F>, u: &Array2<F>) -> Array2<F> {
    g.dot(u) + g.t().dot(u)
}

/// Anchor softmax pieces used by both contrastive losses. For anchor `a`
/// the denominator sums `exp((s - m)/tau)` over all rows except `a`,
/// grouped as own-view partial plus other-view partial so that swapping
/// the argument order reproduces identical floating-point sums.
struct AnchorSoftmax<F> {
    max_score: F,
    denom: F,
}

fn anchor_softmax<F: NdFloat>(
    scores: &Array2<F>,
    a: usize,
    n_first: usize,
    tau: F,
) -> AnchorSoftmax<F> {
    let total = scores.nrows();
    let row = scores.row(a);
    let mut max_score = F::neg_infinity();
    for (k, &s) in row.iter().enumerate() {
        if k != a && s > max_score {
            max_score = s;
        }
    }
    let half = |lo: usize, hi: usize| -> F {
        let mut acc = F::zero();
        for k in lo..hi {
            if k != a {
                acc = acc + ((row[k] - max_score) / tau).exp();
            }
        }
        acc
    };
    let (own, other) = if a < n_first {
        (half(0, n_first), half(n_first, total))
    } else {
        (half(n_first, total), half(0, n_first))
    };
    AnchorSoftmax {
        max_score,
        denom: own + other,
    }
}

/// Sample-contrastive loss over two view batches. Rows are l2-normalized
/// internally; each anchor's positive is its paired view and the softmax
/// denominator runs over the 2N-1 other embeddings. The per-anchor losses
/// are averaged over all 2N anchors. Gradients are with respect to the
/// raw (pre-normalization) inputs.
pub fn simclr_loss<F: NdFloat>(
    z1: &Array2<F>,
    z2: &Array2<F>,
    cfg: &ObjectiveConfig<F>,
) -> Result<LossOutput<F>, ObjectiveError> {
    check_pair(z1, z2, cfg)?;
    let n = z1.nrows();
    if n == 0 {
        return Err(ObjectiveError::BatchTooSmall { n: 0, required: 1 });
    }
    let tau = cfg.temperature;
    let (u1, norms1) = normalize_with_norms(z1)?;
    let (u2, norms2) = normalize_with_norms(z2)?;
    let u = concatenate![Axis(0), u1.view(), u2.view()];
    let m = 2 * n;
    let scores = u.dot(&u.t());

    let inv_anchors = F::one() / F::from(m).unwrap();
    let mut anchor_loss = vec![F::zero(); m];
    let mut g = Array2::<F>::zeros((m, m));
    for a in 0..m {
        let pos = (a + n) % m;
        let sm = anchor_softmax(&scores, a, n, tau);
        anchor_loss[a] =
            -scores[(a, pos)] / tau + sm.max_score / tau + sm.denom.ln();
        let coeff = inv_anchors / tau;
        for k in 0..m {
            if k == a {
                continue;
            }
            let w = ((scores[(a, k)] - sm.max_score) / tau).exp() / sm.denom;
            let target = if k == pos { F::one() } else { F::zero() };
            g[(a, k)] = coeff * (w - target);
        }
    }
    // pairwise grouping keeps the value bitwise symmetric in (z1, z2)
    let mut value = F::zero();
    for p in 0..n {
        value = value + (anchor_loss[p] + anchor_loss[p + n]);
    }
    value = value * inv_anchors;

    let grad_u = score_grad_to_embeddings(&g, &u);
    let gu1 = grad_u.slice(s![0..n, ..]).to_owned();
    let gu2 = grad_u.slice(s![n..m, ..]).to_owned();
    #[allow(unused_mut)]
    let mut grad_z1 = backprop_row_normalize(&gu1, &u1, &norms1);
    let grad_z2 = backprop_row_normalize(&gu2, &u2, &norms2);
    #[cfg(feature = "grad-fault")]
    {
        grad_z1[(0, 0)] = grad_z1[(0, 0)] + F::one();
    }
    Ok(LossOutput {
        value,
        grad_z1,
        grad_z2: Some(grad_z2),
    })
}

/// Per-dimension standardization along the batch (mean 0, population
/// variance 1). Returns the standardized matrix and per-column scales.
fn standardize_columns<F: NdFloat>(
    z: &Array2<F>,
    robust: bool,
) -> Result<(Array2<F>, Vec<F>), ObjectiveError> {
    let n = F::from(z.nrows()).unwrap();
    let mut out = z.clone();
    let mut scales = Vec::with_capacity(z.ncols());
    for (dim, mut col) in out.columns_mut().into_iter().enumerate() {
        let mean = col.iter().fold(F::zero(), |a, &b| a + b) / n;
        let var = col
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .fold(F::zero(), |a, b| a + b)
            / n;
        let eps = if robust { F::from(1e-12).unwrap() } else { F::zero() };
        if var + eps == F::zero() {
            return Err(ObjectiveError::ZeroVarianceDim { dim });
        }
        let s = (var + eps).sqrt();
        col.mapv_inplace(|v| (v - mean) / s);
        scales.push(s);
    }
    Ok((out, scales))
}

/// Backpropagate through column standardization with population variance:
/// `dx = (g - mean(g) - y * mean(g . y)) / s` per column.
fn backprop_standardize<F: NdFloat>(
    grad_y: &Array2<F>,
    y: &Array2<F>,
    scales: &[F],
) -> Array2<F> {
    let n = F::from(y.nrows()).unwrap();
    let mut out = grad_y.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let ycol = y.column(j);
        let g_mean = col.iter().fold(F::zero(), |a, &b| a + b) / n;
        let gy_mean = col
            .iter()
            .zip(ycol.iter())
            .map(|(&g, &yv)| g * yv)
            .fold(F::zero(), |a, b| a + b)
            / n;
        for (g, &yv) in col.iter_mut().zip(ycol.iter()) {
            *g = (*g - g_mean - yv * gy_mean) / scales[j];
        }
    }
    out
}

/// Redundancy-reduction loss: standardize both batches per dimension,
/// form the D x D cross-correlation `C = Z1^T Z2 / N`, and penalize
/// `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2`.
pub fn barlow_twins_loss<F: NdFloat>(
    z1: &Array2<F>,
    z2: &Array2<F>,
    cfg: &ObjectiveConfig<F>,
) -> Result<LossOutput<F>, ObjectiveError> {
    check_pair(z1, z2, cfg)?;
    let n = z1.nrows();
    if n < 2 {
        return Err(ObjectiveError::BatchTooSmall { n, required: 2 });
    }
    let nf = F::from(n).unwrap();
    let (y1, s1) = standardize_columns(z1, cfg.robust_norm)?;
    let (y2, s2) = standardize_columns(z2, cfg.robust_norm)?;
    let c = y1.t().dot(&y2) / nf;
    let d = c.nrows();
    let mut value = F::zero();
    let mut dc = Array2::<F>::zeros((d, d));
    let two = F::from(2.0).unwrap();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                let r = F::one() - c[(i, i)];
                value = value + r * r;
                dc[(i, i)] = -two * r;
            } else {
                value = value + cfg.lambda * c[(i, j)] * c[(i, j)];
                dc[(i, j)] = two * cfg.lambda * c[(i, j)];
            }
        }
    }
    let gy1 = y2.dot(&dc.t()) / nf;
    let gy2 = y1.dot(&dc) / nf;
    Ok(LossOutput {
        value,
        grad_z1: backprop_standardize(&gy1, &y1, &s1),
        grad_z2: Some(backprop_standardize(&gy2, &y2, &s2)),
    })
}

fn column_means<F: NdFloat>(z: &Array2<F>) -> Array1<F> {
    let n = F::from(z.nrows()).unwrap();
    let mut means = Array1::<F>::zeros(z.ncols());
    for row in z.rows() {
        means.zip_mut_with(&row, |m, &v| *m = *m + v);
    }
    means.mapv_inplace(|m| m / n);
    means
}

/// Mean-center along the batch (skipped for N = 1, where centering would
/// zero the matrix) and scale to unit Frobenius norm.
fn frobenius_normalize<F: NdFloat>(
    z: &Array2<F>,
) -> Result<(Array2<F>, F, bool), ObjectiveError> {
    let n = z.nrows();
    let centered = n > 1;
    let mut out = z.clone();
    if centered {
        let means = column_means(&out);
        for mut row in out.rows_mut() {
            row.zip_mut_with(&means, |v, &m| *v = *v - m);
        }
    }
    let norm = out
        .iter()
        .map(|&v| v * v)
        .fold(F::zero(), |a, b| a + b)
        .sqrt();
    if norm == F::zero() {
        return Err(ObjectiveError::ZeroFrobeniusNorm);
    }
    out.mapv_inplace(|v| v / norm);
    Ok((out, norm, centered))
}

fn backprop_frobenius_normalize<F: NdFloat>(
    grad_y: &Array2<F>,
    y: &Array2<F>,
    norm: F,
    centered: bool,
) -> Array2<F> {
    let dot = grad_y
        .iter()
        .zip(y.iter())
        .map(|(&g, &yv)| g * yv)
        .fold(F::zero(), |a, b| a + b);
    let mut out = grad_y.clone();
    out.zip_mut_with(y, |g, &yv| *g = (*g - dot * yv) / norm);
    if centered {
        let col_means = column_means(&out);
        for mut row in out.rows_mut() {
            row.zip_mut_with(&col_means, |g, &m| *g = *g - m);
        }
    }
    out
}

/// Invariance-plus-covariance loss: both batches are mean-centered and
/// Frobenius-normalized, then `MSE(Z1, Z2) + lambda * (log ||Z1^T Z1||_F^2
/// + log ||Z2^T Z2||_F^2)`.
pub fn frossl_loss<F: NdFloat>(
    z1: &Array2<F>,
    z2: &Array2<F>,
    cfg: &ObjectiveConfig<F>,
) -> Result<LossOutput<F>, ObjectiveError> {
    check_pair(z1, z2, cfg)?;
    let n = z1.nrows();
    if n == 0 {
        return Err(ObjectiveError::BatchTooSmall { n: 0, required: 1 });
    }
    let nf = F::from(n).unwrap();
    let (y1, r1, c1) = frobenius_normalize(z1)?;
    let (y2, r2, c2) = frobenius_normalize(z2)?;

    let diff = &y1 - &y2;
    let mse = diff.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / nf;

    let gram1 = y1.t().dot(&y1);
    let gram2 = y2.t().dot(&y2);
    let f1 = gram1.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b);
    let f2 = gram2.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b);
    let value = mse + cfg.lambda * (f1.ln() + f2.ln());

    let two = F::from(2.0).unwrap();
    let four = F::from(4.0).unwrap();
    // d(mse)/dY1 = 2/N (Y1 - Y2); d(log ||Y^T Y||_F^2)/dY = 4 Y (Y^T Y) / f
    let gy1 = &diff * (two / nf) + y1.dot(&gram1) * (cfg.lambda * four / f1);
    let gy2 = &diff * (-two / nf) + y2.dot(&gram2) * (cfg.lambda * four / f2);

    Ok(LossOutput {
        value,
        grad_z1: backprop_frobenius_normalize(&gy1, &y1, r1, c1),
        grad_z2: Some(backprop_frobenius_normalize(&gy2, &y2, r2, c2)),
    })
}

/// Supervised contrastive loss over a single labeled batch (normally the
/// two view batches concatenated with labels duplicated). Positives of an
/// anchor are all other rows sharing its label; the result is averaged
/// over anchors. `grad_z2` is `None`.
pub fn supcon_loss<F: NdFloat>(
    z: &Array2<F>,
    labels: &[usize],
    cfg: &ObjectiveConfig<F>,
) -> Result<LossOutput<F>, ObjectiveError> {
    if !(cfg.temperature > F::zero()) {
        return Err(ObjectiveError::InvalidTemperature);
    }
    check_finite(z)?;
    let m = z.nrows();
    if m < 2 {
        return Err(ObjectiveError::BatchTooSmall { n: m, required: 2 });
    }
    if labels.len() != m {
        return Err(ObjectiveError::LabelCountMismatch {
            labels: labels.len(),
            rows: m,
        });
    }
    let tau = cfg.temperature;
    let (u, norms) = normalize_with_norms(z)?;
    let scores = u.dot(&u.t());
    let inv_anchors = F::one() / F::from(m).unwrap();

    let mut value = F::zero();
    let mut g = Array2::<F>::zeros((m, m));
    for i in 0..m {
        let positives: Vec<usize> = (0..m)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            return Err(ObjectiveError::EmptyPositiveSet { anchor: i });
        }
        let p_inv = F::one() / F::from(positives.len()).unwrap();
        let sm = anchor_softmax(&scores, i, m, tau);
        let mut pos_mean = F::zero();
        for &j in &positives {
            pos_mean = pos_mean + scores[(i, j)] / tau;
        }
        pos_mean = pos_mean * p_inv;
        value = value + (-pos_mean + sm.max_score / tau + sm.denom.ln()) * inv_anchors;

        let coeff = inv_anchors / tau;
        for k in 0..m {
            if k == i {
                continue;
            }
            let w = ((scores[(i, k)] - sm.max_score) / tau).exp() / sm.denom;
            let p = if labels[k] == labels[i] { p_inv } else { F::zero() };
            g[(i, k)] = coeff * (w - p);
        }
    }
    let grad_u = score_grad_to_embeddings(&g, &u);
    Ok(LossOutput {
        value,
        grad_z1: backprop_row_normalize(&grad_u, &u, &norms),
        grad_z2: None,
    })
}

/// Central-difference gradient verification. Perturbs every input
/// coordinate by +-h and returns the max over coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn finite_difference_check<Obj>(
    objective: &Obj,
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    h: f64,
) -> Result<f64, ObjectiveError>
where
    Obj: Fn(&Array2<f64>, &Array2<f64>) -> Result<LossOutput<f64>, ObjectiveError>,
{
    let base = objective(z1, z2)?;
    let eval = |a: &Array2<f64>, b: &Array2<f64>| -> Result<f64, ObjectiveError> {
        let v = objective(a, b)?.value;
        if !v.is_finite() {
            return Err(ObjectiveError::NonFiniteLoss);
        }
        Ok(v)
    };
    let mut max_rel = 0.0f64;
    let probe = |analytic: &Array2<f64>,
                     which: usize,
                     a: &Array2<f64>,
                     b: &Array2<f64>|
     -> Result<f64, ObjectiveError> {
        let mut local = 0.0f64;
        let mut work = if which == 0 { a.clone() } else { b.clone() };
        for i in 0..work.nrows() {
            for j in 0..work.ncols() {
                let orig = work[(i, j)];
                work[(i, j)] = orig + h;
                let fp = if which == 0 { eval(&work, b)? } else { eval(a, &work)? };
                work[(i, j)] = orig - h;
                let fm = if which == 0 { eval(&work, b)? } else { eval(a, &work)? };
                work[(i, j)] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let an = analytic[(i, j)];
                let rel = (an - numeric).abs() / (1e-12f64).max(an.abs() + numeric.abs());
                local = local.max(rel);
            }
        }
        Ok(local)
    };
    max_rel = max_rel.max(probe(&base.grad_z1, 0, z1, z2)?);
    if let Some(g2) = &base.grad_z2 {
        max_rel = max_rel.max(probe(g2, 1, z1, z2)?);
    }
    Ok(max_rel)
}

/// Wrap an objective as a two-batch closure for [`finite_difference_check`].
/// The supervised loss concatenates the two batches as paired views with
/// duplicated 3-class labels.
pub fn objective_fn(
    obj: Objective,
    cfg: ObjectiveConfig<f64>,
) -> impl Fn(&Array2<f64>, &Array2<f64>) -> Result<LossOutput<f64>, ObjectiveError> {
    move |z1, z2| match obj {
        Objective::SimClr => simclr_loss(z1, z2, &cfg),
        Objective::BarlowTwins => barlow_twins_loss(z1, z2, &cfg),
        Objective::FroSsl => frossl_loss(z1, z2, &cfg),
        Objective::SupCon => {
            if z1.dim() != z2.dim() {
                return Err(ObjectiveError::ShapeMismatch {
                    z1: z1.dim(),
                    z2: z2.dim(),
                });
            }
            let n = z1.nrows();
            let z = concatenate![Axis(0), z1.view(), z2.view()];
            let classes = n.min(3).max(1);
            let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            labels.extend((0..n).map(|i| i % classes));
            let out = supcon_loss(&z, &labels, &cfg)?;
            let grad_z1 = out.grad_z1.slice(s![0..n, ..]).to_owned();
            let grad_z2 = out.grad_z1.slice(s![n..2 * n, ..]).to_owned();
            Ok(LossOutput {
                value: out.value,
                grad_z1,
                grad_z2: Some(grad_z2),
            })
        }
    }
}
