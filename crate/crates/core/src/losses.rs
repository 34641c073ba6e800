//! Training objectives and their exact gradients.
//!
//! Each primitive returns its value together with the gradient with respect to
//! its first (trainable) argument. [`FrequencyObjective`] composes them into
//! the full distillation objective
//! `total = task + align + lambda1 * low + lambda2 * high`.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::frequency::{BandDecomposer, NormalizedRows, RowNorm};
use crate::models::{Linear, SharedClassifiers};
use crate::{Error, Result};

/// A scalar loss with its gradient with respect to the first argument.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

fn check_same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::dim(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `sum (a - b)^2 / (N D)`.
pub fn mse_band_loss(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<LossGrad> {
    check_same_shape(a, b, "mse")?;
    let scale = 1.0 / a.len() as f64;
    let diff = &a - &b;
    let value = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    Ok(LossGrad {
        value,
        grad: diff * (2.0 * scale),
    })
}

/// Sign-symmetric log compression, `sign(u) * ln(1 + |u|)`.
pub fn sigma(u: f64) -> f64 {
    if u >= 0.0 {
        u.ln_1p()
    } else {
        -(-u).ln_1p()
    }
}

/// `d sigma / du = 1 / (1 + |u|)`.
pub fn sigma_derivative(u: f64) -> f64 {
    1.0 / (1.0 + u.abs())
}

/// `sum (sigma(a) - sigma(b))^2 / (N D)`.
pub fn logmse_band_loss(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<LossGrad> {
    check_same_shape(a, b, "logmse")?;
    let scale = 1.0 / a.len() as f64;
    let mut grad = Array2::zeros(a.dim());
    let mut value = 0.0;
    Zip::from(&mut grad).and(a).and(b).for_each(|g, &x, &y| {
        let d = sigma(x) - sigma(y);
        value += d * d;
        *g = 2.0 * scale * d * sigma_derivative(x);
    });
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandLossKind {
    Mse,
    LogMse,
}

impl BandLossKind {
    pub fn evaluate(self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<LossGrad> {
        match self {
            BandLossKind::Mse => mse_band_loss(a, b),
            BandLossKind::LogMse => logmse_band_loss(a, b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BandLossKind::Mse => "mse",
            BandLossKind::LogMse => "logmse",
        }
    }
}

impl std::str::FromStr for BandLossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(BandLossKind::Mse),
            "logmse" => Ok(BandLossKind::LogMse),
            other => Err(format!(
                "unknown band loss `{other}` (expected mse or logmse)"
            )),
        }
    }
}

impl std::fmt::Display for BandLossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Batch-mean cross-entropy of softmax(logits) against integer labels, with
/// gradient `(softmax - onehot) / N` with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<LossGrad> {
    let (n, c) = logits.dim();
    if c < 2 {
        return Err(Error::dim(format!(
            "cross-entropy needs at least 2 classes, got {c}"
        )));
    }
    if n == 0 || labels.len() != n {
        return Err(Error::dim(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label { label, classes: c });
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, c));
    let mut total = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[labels[i]];
        let mut g = grad.row_mut(i);
        for j in 0..c {
            g[j] = (row[j] - log_z).exp() * inv_n;
        }
        g[labels[i]] -= inv_n;
    }
    Ok(LossGrad {
        value: total * inv_n,
        grad,
    })
}

/// Cross-entropy of a linear head applied to `x`.
#[derive(Debug, Clone)]
pub struct HeadLoss {
    pub value: f64,
    pub grad_input: Array2<f64>,
    pub grad_head: Linear,
}

pub fn head_cross_entropy(head: &Linear, x: ArrayView2<f64>, labels: &[usize]) -> Result<HeadLoss> {
    let logits = head.forward(x)?;
    let ce = cross_entropy(logits.view(), labels)?;
    let (grad_head, grad_input) = head.backward(x, ce.grad.view());
    Ok(HeadLoss {
        value: ce.value,
        grad_input,
        grad_head,
    })
}

/// Low and high band features of one modality for a batch.
#[derive(Debug, Clone, Copy)]
pub struct BandBatch<'a> {
    pub low: ArrayView2<'a, f64>,
    pub high: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone)]
pub struct AlignLoss {
    pub value: f64,
    pub grad_a: (Array2<f64>, Array2<f64>),
    pub grad_b: (Array2<f64>, Array2<f64>),
    pub grad_shared: SharedClassifiers,
}

/// Four shared-classifier cross-entropies:
/// `CE(high(high_a)) + CE(high(high_b)) + CE(low(low_a)) + CE(low(low_b))`.
/// Band gradients are returned as `(low, high)` pairs per modality.
pub fn align_loss(
    a: BandBatch<'_>,
    b: BandBatch<'_>,
    heads: &SharedClassifiers,
    labels: &[usize],
) -> Result<AlignLoss> {
    let ha = head_cross_entropy(&heads.high, a.high, labels)?;
    let hb = head_cross_entropy(&heads.high, b.high, labels)?;
    let la = head_cross_entropy(&heads.low, a.low, labels)?;
    let lb = head_cross_entropy(&heads.low, b.low, labels)?;
    let mut grad_shared = SharedClassifiers::zeros(heads.low.input_dim(), heads.low.output_dim());
    grad_shared.high.accumulate(&ha.grad_head);
    grad_shared.high.accumulate(&hb.grad_head);
    grad_shared.low.accumulate(&la.grad_head);
    grad_shared.low.accumulate(&lb.grad_head);
    Ok(AlignLoss {
        value: ha.value + hb.value + la.value + lb.value,
        grad_a: (la.grad_input, ha.grad_input),
        grad_b: (lb.grad_input, hb.grad_input),
        grad_shared,
    })
}

#[derive(Debug, Clone)]
pub struct TaskLoss {
    pub value: f64,
    pub grad_raw: Array2<f64>,
    /// `(low, high)` band gradients; absent when no bands were given.
    pub grad_bands: Option<(Array2<f64>, Array2<f64>)>,
    pub grad_private: Linear,
    pub grad_shared: Option<SharedClassifiers>,
}

/// `CE(private(raw)) + CE(low(low_s)) + CE(high(high_s))`; with `bands` set to
/// `None` only the private-head term remains.
pub fn task_loss(
    raw: ArrayView2<f64>,
    bands: Option<BandBatch<'_>>,
    heads: &SharedClassifiers,
    private_head: &Linear,
    labels: &[usize],
) -> Result<TaskLoss> {
    let private = head_cross_entropy(private_head, raw, labels)?;
    let Some(bands) = bands else {
        return Ok(TaskLoss {
            value: private.value,
            grad_raw: private.grad_input,
            grad_bands: None,
            grad_private: private.grad_head,
            grad_shared: None,
        });
    };
    let low = head_cross_entropy(&heads.low, bands.low, labels)?;
    let high = head_cross_entropy(&heads.high, bands.high, labels)?;
    Ok(TaskLoss {
        value: private.value + low.value + high.value,
        grad_raw: private.grad_input,
        grad_bands: Some((low.grad_input, high.grad_input)),
        grad_private: private.grad_head,
        grad_shared: Some(SharedClassifiers {
            low: low.grad_head,
            high: high.grad_head,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub task: f64,
    pub align: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub align: f64,
    pub low: f64,
    pub high: f64,
    pub total: f64,
}

/// Weighted sum, always evaluated as `((task + align) + l1 * low) + l2 * high`.
pub fn total_loss(parts: LossParts, w: LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [
        ("task", parts.task),
        ("align", parts.align),
        ("low", parts.low),
        ("high", parts.high),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric {
                term: name.to_string(),
                location: None,
            });
        }
    }
    Ok(LossBreakdown {
        task: parts.task,
        align: parts.align,
        low: parts.low,
        high: parts.high,
        total: parts.task + parts.align + w.lambda1 * parts.low + w.lambda2 * parts.high,
    })
}

/// Which parts of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    /// Split features into frequency bands. Without it the low-band term
    /// compares raw features and the high-band term vanishes.
    pub freq: bool,
    /// Shared-classifier alignment across modalities.
    pub align: bool,
    /// Standardize bands before the distillation losses.
    pub scale: bool,
    pub low_loss: BandLossKind,
    pub high_loss: BandLossKind,
    /// Feed standardized instead of raw bands to the shared classifiers.
    pub align_standardized: bool,
    /// Drop the student band terms from the task loss when the alignment loss
    /// already contains them.
    pub dedup_student_band_ce: bool,
    pub weights: LossWeights,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            freq: true,
            align: true,
            scale: true,
            low_loss: BandLossKind::Mse,
            high_loss: BandLossKind::LogMse,
            align_standardized: false,
            dedup_student_band_ce: false,
            weights: LossWeights::default(),
        }
    }
}

/// Objective value and gradients for one batch.
#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub breakdown: LossBreakdown,
    pub grad_student: Array2<f64>,
    pub grad_private: Linear,
    /// Present whenever a shared classifier took part in the loss.
    pub grad_shared: Option<SharedClassifiers>,
    /// Rows whose band could not be normalized (zero norm).
    pub degenerate_rows: usize,
}

/// The full distillation objective for one student batch against frozen
/// teacher features.
#[derive(Debug, Clone)]
pub struct FrequencyObjective {
    pub settings: ObjectiveSettings,
    decomposer: BandDecomposer,
}

struct ModalityBands {
    low: Array2<f64>,
    high: Array2<f64>,
    norm: Option<(NormalizedRows, NormalizedRows)>,
}

impl ModalityBands {
    fn new(dec: &BandDecomposer, f: ArrayView2<f64>, normalize: bool) -> Result<Self> {
        let (low, high) = dec.decompose_rows(f)?;
        let norm = if normalize {
            Some((
                NormalizedRows::forward(low.view(), RowNorm::Standardize)?,
                NormalizedRows::forward(high.view(), RowNorm::L2)?,
            ))
        } else {
            None
        };
        Ok(Self { low, high, norm })
    }

    fn bands(&self, standardized: bool) -> BandBatch<'_> {
        match (&self.norm, standardized) {
            (Some((l, h)), true) => BandBatch {
                low: l.values.view(),
                high: h.values.view(),
            },
            _ => BandBatch {
                low: self.low.view(),
                high: self.high.view(),
            },
        }
    }

    fn degenerate(&self) -> usize {
        self.norm
            .as_ref()
            .map(|(l, h)| l.degenerate_count() + h.degenerate_count())
            .unwrap_or(0)
    }
}

/// Gradient accumulators for the student's two bands, split by whether they
/// apply to the raw or the normalized band.
#[derive(Default)]
struct BandGrads {
    raw_low: Option<Array2<f64>>,
    raw_high: Option<Array2<f64>>,
    std_low: Option<Array2<f64>>,
    std_high: Option<Array2<f64>>,
}

fn add_into(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl FrequencyObjective {
    pub fn new(settings: ObjectiveSettings, decomposer: BandDecomposer) -> Result<Self> {
        settings.weights.validate()?;
        if !settings.freq && (settings.scale || settings.align_standardized) {
            return Err(Error::Config(
                "scale and align-standardized need frequency decomposition".into(),
            ));
        }
        Ok(Self {
            settings,
            decomposer,
        })
    }

    pub fn decomposer(&self) -> &BandDecomposer {
        &self.decomposer
    }

    /// Evaluates the objective. Without a teacher only the task loss is used.
    /// Terms whose weight is zero are skipped and reported as 0.
    pub fn evaluate(
        &self,
        student: ArrayView2<f64>,
        teacher: Option<ArrayView2<f64>>,
        heads: &SharedClassifiers,
        private_head: &Linear,
        labels: &[usize],
    ) -> Result<ObjectiveOutput> {
        let s = &self.settings;
        if let Some(t) = teacher {
            check_same_shape(student, t, "student/teacher features")?;
        }
        let distilling = teacher.is_some();
        let freq = s.freq && distilling;
        let use_align = s.align && distilling;
        let w = s.weights;

        let mut parts = LossParts::default();
        let mut grad_student: Array2<f64>;
        let grad_private: Linear;
        let mut grad_shared: Option<SharedClassifiers> = None;
        let mut degenerate_rows = 0;

        if !freq {
            let task = task_loss(student, None, heads, private_head, labels)?;
            parts.task = task.value;
            grad_student = task.grad_raw;
            grad_private = task.grad_private;
            if let Some(t) = teacher {
                if w.lambda1 > 0.0 {
                    let low = s.low_loss.evaluate(student, t)?;
                    parts.low = low.value;
                    grad_student.scaled_add(w.lambda1, &low.grad);
                }
                if use_align {
                    let ls = head_cross_entropy(&heads.low, student, labels)?;
                    let lt = head_cross_entropy(&heads.low, t, labels)?;
                    parts.align = ls.value + lt.value;
                    grad_student += &ls.grad_input;
                    let mut g =
                        SharedClassifiers::zeros(heads.low.input_dim(), heads.low.output_dim());
                    g.low.accumulate(&lt.grad_head);
                    g.low.accumulate(&ls.grad_head);
                    grad_shared = Some(g);
                }
            }
        } else {
            let t = teacher.expect("freq implies a teacher");
            let normalize = s.scale || s.align_standardized;
            let sb = ModalityBands::new(&self.decomposer, student, normalize)?;
            let tb = ModalityBands::new(&self.decomposer, t, normalize)?;
            degenerate_rows = sb.degenerate() + tb.degenerate();
            let mut bg = BandGrads::default();

            let (s_dist, t_dist) = (sb.bands(s.scale), tb.bands(s.scale));
            if w.lambda1 > 0.0 {
                let low = s.low_loss.evaluate(s_dist.low, t_dist.low)?;
                parts.low = low.value;
                let g = low.grad * w.lambda1;
                add_into(
                    if s.scale {
                        &mut bg.std_low
                    } else {
                        &mut bg.raw_low
                    },
                    g,
                );
            }
            if w.lambda2 > 0.0 {
                let high = s.high_loss.evaluate(s_dist.high, t_dist.high)?;
                parts.high = high.value;
                let g = high.grad * w.lambda2;
                add_into(
                    if s.scale {
                        &mut bg.std_high
                    } else {
                        &mut bg.raw_high
                    },
                    g,
                );
            }

            let head_std = s.align_standardized;
            let (s_head, t_head) = (sb.bands(head_std), tb.bands(head_std));
            let mut shared =
                SharedClassifiers::zeros(heads.low.input_dim(), heads.low.output_dim());
            if use_align {
                let al = align_loss(s_head, t_head, heads, labels)?;
                parts.align = al.value;
                let (gl, gh) = al.grad_a;
                if head_std {
                    add_into(&mut bg.std_low, gl);
                    add_into(&mut bg.std_high, gh);
                } else {
                    add_into(&mut bg.raw_low, gl);
                    add_into(&mut bg.raw_high, gh);
                }
                shared.low.accumulate(&al.grad_shared.low);
                shared.high.accumulate(&al.grad_shared.high);
            }

            let student_bands = if use_align && s.dedup_student_band_ce {
                None
            } else {
                Some(s_head)
            };
            let task = task_loss(student, student_bands, heads, private_head, labels)?;
            parts.task = task.value;
            grad_student = task.grad_raw;
            grad_private = task.grad_private;
            if let Some((gl, gh)) = task.grad_bands {
                if head_std {
                    add_into(&mut bg.std_low, gl);
                    add_into(&mut bg.std_high, gh);
                } else {
                    add_into(&mut bg.raw_low, gl);
                    add_into(&mut bg.raw_high, gh);
                }
            }
            if let Some(g) = task.grad_shared {
                shared.low.accumulate(&g.low);
                shared.high.accumulate(&g.high);
            }
            grad_shared = Some(shared);

            let mut g_low = bg.raw_low;
            let mut g_high = bg.raw_high;
            if let Some((nl, nh)) = &sb.norm {
                if let Some(g) = bg.std_low {
                    add_into(&mut g_low, nl.backward(g.view()));
                }
                if let Some(g) = bg.std_high {
                    add_into(&mut g_high, nh.backward(g.view()));
                }
            }
            if let Some(g) = self.decomposer.backward_rows(
                g_low.as_ref().map(|g| g.view()),
                g_high.as_ref().map(|g| g.view()),
            )? {
                grad_student += &g;
            }
        }

        let breakdown = total_loss(parts, w)?;
        Ok(ObjectiveOutput {
            breakdown,
            grad_student,
            grad_private,
            grad_shared,
            degenerate_rows,
        })
    }
}
