//! Unimodal teacher training and frequency-decoupled distillation.
//!
//! Both entry points share one loop. Unimodal training is the loop without a
//! teacher; distillation adds the frozen teacher's features of the paired
//! samples. Randomness is keyed by purpose (student init, shared classifier
//! init, per-epoch shuffle) so the student sees identical draws in both modes.

use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, labels, Dataset, Modality, PairedSample};
use crate::frequency::{BandDecomposer, BandSplit};
use crate::kv;
use crate::losses::{
    BandLossKind, FrequencyObjective, LossBreakdown, LossWeights, ObjectiveSettings,
};
use crate::models::{Checkpoint, EncoderShape, ModelBundle, Sgd, SharedClassifiers};
use crate::numerics::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub student_modality: Modality,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub threshold: f64,
    pub freq: bool,
    pub align: bool,
    pub scale: bool,
    pub log: bool,
    pub low_loss: BandLossKind,
    /// Overrides the high-band loss chosen by `log`.
    pub high_loss: Option<BandLossKind>,
    pub align_standardized: bool,
    pub dedup_student_band_ce: bool,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub residual: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            student_modality: Modality::B,
            epochs: 30,
            batch_size: 64,
            lr: 1e-2,
            momentum: 0.9,
            poly_power: 0.9,
            lambda1: 1.0,
            lambda2: 1.0,
            threshold: 0.5,
            freq: true,
            align: true,
            scale: true,
            log: true,
            low_loss: BandLossKind::Mse,
            high_loss: None,
            align_standardized: false,
            dedup_student_band_ce: false,
            hidden: vec![128, 128],
            feature_dim: 64,
            residual: true,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.freq && (self.scale || self.log) {
            return Err(Error::Config(
                "scale and log toggles require frequency decomposition (freq); disable them together".into(),
            ));
        }
        if !self.freq && self.align_standardized {
            return Err(Error::Config("align-standardized requires freq".into()));
        }
        self.weights().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Sgd::new(self.lr, self.momentum, self.poly_power, 1)?;
        self.encoder_shape(self.feature_dim).validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn high_loss_kind(&self) -> BandLossKind {
        self.high_loss.unwrap_or(if self.log {
            BandLossKind::LogMse
        } else {
            BandLossKind::Mse
        })
    }

    pub fn objective_settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            freq: self.freq,
            align: self.align,
            scale: self.scale,
            low_loss: self.low_loss,
            high_loss: self.high_loss_kind(),
            align_standardized: self.align_standardized,
            dedup_student_band_ce: self.dedup_student_band_ce,
            weights: self.weights(),
        }
    }

    pub fn encoder_shape(&self, input_dim: usize) -> EncoderShape {
        EncoderShape {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            residual: self.residual,
        }
    }

    /// Disables every distillation component: no bands, no alignment, zero
    /// band weights.
    pub fn components_off(mut self) -> Self {
        self.freq = false;
        self.align = false;
        self.scale = false;
        self.log = false;
        self.lambda1 = 0.0;
        self.lambda2 = 0.0;
        self
    }

    pub fn to_pairs(&self) -> kv::Pairs {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let high = self
            .high_loss
            .map(|k| k.to_string())
            .unwrap_or_else(|| "auto".into());
        [
            ("student_modality", self.student_modality.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("poly_power", self.poly_power.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("threshold", self.threshold.to_string()),
            ("freq", self.freq.to_string()),
            ("align", self.align.to_string()),
            ("scale", self.scale.to_string()),
            ("log", self.log.to_string()),
            ("low_loss", self.low_loss.to_string()),
            ("high_loss", high),
            ("align_standardized", self.align_standardized.to_string()),
            (
                "dedup_student_band_ce",
                self.dedup_student_band_ce.to_string(),
            ),
            ("hidden", hidden.join(",")),
            ("feature_dim", self.feature_dim.to_string()),
            ("residual", self.residual.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! pull {
            ($($f:ident),*) => { $( if let Some(v) = kv::parse_value(pairs, stringify!($f))? { c.$f = v; } )* };
        }
        pull!(
            student_modality,
            epochs,
            batch_size,
            lr,
            momentum,
            poly_power,
            lambda1,
            lambda2,
            threshold,
            freq,
            align,
            scale,
            log,
            low_loss,
            align_standardized,
            dedup_student_band_ce,
            feature_dim,
            residual,
            seed
        );
        if let Some(v) = kv::get(pairs, "high_loss") {
            c.high_loss = match v {
                "auto" => None,
                other => Some(other.parse().map_err(Error::Config)?),
            };
        }
        if let Some(v) = kv::get(pairs, "hidden") {
            c.hidden = parse_widths(v)?;
        }
        Ok(c)
    }
}

pub fn parse_widths(v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad layer width `{w}`")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used by the epoch's last step.
    pub lr: f64,
    /// Batch-size weighted mean of the per-batch loss terms.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Unimodal,
    Distill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: RunKind,
    pub student_modality: Modality,
    pub teacher_modality: Option<Modality>,
    /// Teacher parameter hash before and after the run (hex).
    pub teacher_hash: Option<(String, String)>,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub epochs_run: usize,
    pub steps: u64,
    pub epochs: Vec<EpochRecord>,
    pub degenerate_rows: usize,
    pub train: Evaluation,
    pub test: Evaluation,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// JSON with the wall-time field zeroed, for byte comparisons.
    pub fn to_json_without_wall_time(&self) -> String {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        serde_json::to_string_pretty(&r).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub shared: SharedClassifiers,
    pub report: TrainReport,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let shared = match self.report.kind {
            RunKind::Unimodal => None,
            RunKind::Distill => Some(self.shared.clone()),
        };
        Checkpoint::new(self.bundle.clone(), shared)
    }
}

/// Trains `modality`'s encoder and private head with cross-entropy only.
pub fn train_unimodal(
    dataset: &Dataset,
    modality: Modality,
    config: &ExperimentConfig,
) -> Result<TrainOutcome> {
    let cfg = ExperimentConfig {
        student_modality: modality,
        ..config.clone()
    };
    run(dataset, &cfg, None)
}

/// Distills the frozen `teacher` into a fresh student of
/// `config.student_modality`.
pub fn distill(
    dataset: &Dataset,
    teacher: &ModelBundle,
    config: &ExperimentConfig,
) -> Result<TrainOutcome> {
    run(dataset, config, Some(teacher))
}

pub fn evaluate(bundle: &ModelBundle, samples: &[PairedSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let x = feature_matrix(samples, bundle.modality);
    let predicted = bundle.predict(x.view())?;
    Ok(score(&predicted, &labels(samples), bundle.classes()))
}

pub fn score(predicted: &[usize], truth: &[usize], classes: usize) -> Evaluation {
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (p, t) in predicted.iter().zip(truth) {
        if *t < classes {
            counts[*t] += 1;
            if p == t {
                hits[*t] += 1;
            }
        }
    }
    let correct: usize = hits.iter().sum();
    Evaluation {
        accuracy: correct as f64 / truth.len().max(1) as f64,
        correct,
        total: truth.len(),
        per_class_accuracy: hits
            .iter()
            .zip(&counts)
            .map(|(h, c)| (*c > 0).then(|| *h as f64 / *c as f64))
            .collect(),
    }
}

fn shuffled(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64_below(i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

impl SeededRng {
    fn next_u64_below(&mut self, bound: u64) -> u64 {
        use rand::RngCore;
        // rejection sampling keeps the draw unbiased
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }
}

fn run(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    teacher: Option<&ModelBundle>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let modality = cfg.student_modality;
    let shape = cfg.encoder_shape(dataset.input_dim);
    let mut student = ModelBundle::init(modality, &shape, dataset.classes, cfg.seed)?;
    let mut shared = SharedClassifiers::init(cfg.feature_dim, dataset.classes, cfg.seed);

    if dataset.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let x_train = feature_matrix(&dataset.train, modality);
    let y_train = labels(&dataset.train);

    let teacher_features: Option<Array2<f64>> = match teacher {
        None => None,
        Some(t) => {
            if t.feature_dim() != cfg.feature_dim {
                return Err(Error::dim(format!(
                    "teacher feature dimension {} differs from student {}",
                    t.feature_dim(),
                    cfg.feature_dim
                )));
            }
            if t.classes() != dataset.classes {
                return Err(Error::dim(format!(
                    "teacher predicts {} classes, dataset has {}",
                    t.classes(),
                    dataset.classes
                )));
            }
            // frozen: one pass over the training set is enough
            Some(t.features(feature_matrix(&dataset.train, t.modality).view())?)
        }
    };
    let teacher_hash_before = teacher.map(ModelBundle::parameter_hash);

    let split = BandSplit::new(cfg.threshold, cfg.feature_dim)?;
    let objective = FrequencyObjective::new(cfg.objective_settings(), BandDecomposer::new(split)?)?;

    let n = x_train.nrows();
    let batches = n.div_ceil(cfg.batch_size);
    let mut opt = Sgd::new(
        cfg.lr,
        cfg.momentum,
        cfg.poly_power,
        (cfg.epochs * batches) as u64,
    )?;
    let root = SeededRng::new(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut degenerate_rows = 0;

    for epoch in 0..cfg.epochs {
        let order = shuffled(n, &mut root.split("shuffle", epoch as u64));
        let mut sums = [0.0f64; 5];
        let mut last_lr = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x_train.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let tb = teacher_features.as_ref().map(|t| t.select(Axis(0), chunk));
            let at = |e: Error| match e {
                Error::Numeric { term, .. } => Error::Numeric {
                    term,
                    location: Some(format!("epoch {epoch}, batch {b}")),
                },
                other => other,
            };

            let pass = student.encoder.forward(xb.view())?;
            let out = objective
                .evaluate(
                    pass.features.view(),
                    tb.as_ref().map(|t| t.view()),
                    &shared,
                    &student.head,
                    &yb,
                )
                .map_err(at)?;
            degenerate_rows += out.degenerate_rows;
            let enc_grad = student.encoder.backward(&pass, out.grad_student.view());
            let shared_grad = out
                .grad_shared
                .unwrap_or_else(|| SharedClassifiers::zeros(cfg.feature_dim, dataset.classes));

            let mut grads: Vec<&[f64]> = enc_grad.tensors();
            grads.extend(out.grad_private.tensors());
            grads.extend(shared_grad.tensors());
            let mut params = student.tensors_mut();
            params.extend(shared.tensors_mut());
            last_lr = opt.current_lr();
            opt.step(params, grads).map_err(at)?;

            let w = chunk.len() as f64;
            let l = out.breakdown;
            for (s, v) in sums
                .iter_mut()
                .zip([l.task, l.align, l.low, l.high, l.total])
            {
                *s += w * v;
            }
        }
        let inv = 1.0 / n as f64;
        let record = EpochRecord {
            epoch,
            lr: last_lr,
            loss: LossBreakdown {
                task: sums[0] * inv,
                align: sums[1] * inv,
                low: sums[2] * inv,
                high: sums[3] * inv,
                total: sums[4] * inv,
            },
        };
        log::debug!(
            "{} epoch {epoch}: total {:.5} task {:.5} align {:.5} low {:.5} high {:.5}",
            modality,
            record.loss.total,
            record.loss.task,
            record.loss.align,
            record.loss.low,
            record.loss.high
        );
        epochs.push(record);
    }

    let teacher_hash = match (teacher, teacher_hash_before) {
        (Some(t), Some(before)) => Some((
            format!("{before:016x}"),
            format!("{:016x}", t.parameter_hash()),
        )),
        _ => None,
    };
    let train_eval = evaluate(&student, &dataset.train)?;
    let test_eval = if dataset.test.is_empty() {
        train_eval.clone()
    } else {
        evaluate(&student, &dataset.test)?
    };
    let report = TrainReport {
        kind: if teacher.is_some() {
            RunKind::Distill
        } else {
            RunKind::Unimodal
        },
        student_modality: modality,
        teacher_modality: teacher.map(|t| t.modality),
        teacher_hash,
        seed: cfg.seed,
        config: cfg.clone(),
        epochs_run: epochs.len(),
        steps: opt.steps_taken(),
        epochs,
        degenerate_rows,
        train: train_eval,
        test: test_eval,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        bundle: student,
        shared,
        report,
    })
}
