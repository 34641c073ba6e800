use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, Modality, PairedSample};
use crate::frequency::{BandDecomposer, BandSplit};
use crate::models::ModelBundle;
use crate::numerics::cosine_similarity;
use crate::util::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    GeneratorInputs,
    TrainedEncoders,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateCounts {
    pub raw: usize,
    pub low: usize,
    pub high: usize,
}

/// Mean paired cosine between the two modalities for raw features and for
/// each band. Pairs where either vector has zero norm are left out of the
/// corresponding mean and counted in `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub source: FeatureSource,
    pub threshold: f64,
    pub samples: usize,
    pub mean_raw: f64,
    pub mean_low: f64,
    pub mean_high: f64,
    pub degenerate: DegenerateCounts,
    /// Cosines are computed on un-standardized features; per-modality mean
    /// offsets therefore remain in the raw and low values.
    pub note: String,
}

pub fn similarity_report(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    split: &BandSplit,
    source: FeatureSource,
) -> Result<SimilarityReport> {
    if a.nrows() != b.nrows() {
        return Err(Error::Pairing(format!(
            "{} rows for one modality, {} for the other",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "feature widths {} and {} differ",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::Pairing("no paired samples".into()));
    }
    let dec = BandDecomposer::new(*split)?;
    let (a_low, a_high) = dec.decompose_rows(a)?;
    let (b_low, b_high) = dec.decompose_rows(b)?;

    let mean_cos = |x: ArrayView2<f64>, y: ArrayView2<f64>| -> Result<(f64, usize)> {
        let mut sum = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for (rx, ry) in x.axis_iter(Axis(0)).zip(y.axis_iter(Axis(0))) {
            let c = cosine_similarity(&rx.to_vec(), &ry.to_vec())?;
            if c.degenerate {
                skipped += 1;
            } else {
                sum += c.value;
                used += 1;
            }
        }
        Ok((if used > 0 { sum / used as f64 } else { 0.0 }, skipped))
    };
    let (mean_raw, d_raw) = mean_cos(a, b)?;
    let (mean_low, d_low) = mean_cos(a_low.view(), b_low.view())?;
    let (mean_high, d_high) = mean_cos(a_high.view(), b_high.view())?;
    Ok(SimilarityReport {
        source,
        threshold: split.threshold(),
        samples: a.nrows(),
        mean_raw,
        mean_low,
        mean_high,
        degenerate: DegenerateCounts {
            raw: d_raw,
            low: d_low,
            high: d_high,
        },
        note: "paired cosine averaged over samples; features not standardized".into(),
    })
}

/// Similarity of the features two trained encoders produce for paired samples.
pub fn trained_feature_similarity(
    encoder_a: &ModelBundle,
    encoder_b: &ModelBundle,
    samples: &[PairedSample],
    threshold: f64,
) -> Result<SimilarityReport> {
    let fa = encoder_a.features(feature_matrix(samples, encoder_a.modality).view())?;
    let fb = encoder_b.features(feature_matrix(samples, encoder_b.modality).view())?;
    let split = BandSplit::new(threshold, fa.ncols())?;
    similarity_report(fa.view(), fb.view(), &split, FeatureSource::TrainedEncoders)
}

/// Column means of an `N x D` feature batch.
pub fn mean_profile(features: ArrayView2<f64>) -> Result<Vec<f64>> {
    if features.nrows() == 0 {
        return Err(Error::Data("mean profile of an empty batch".into()));
    }
    Ok(features.mean_axis(Axis(0)).expect("non-empty").to_vec())
}

/// CSV with columns `dim,mean_a,mean_b`.
pub fn write_mean_profile_csv(path: &Path, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim("mean profiles of different length"));
    }
    let mut s = String::from("dim,mean_a,mean_b\n");
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        let _ = writeln!(s, "{j},{x:.16e},{y:.16e}");
    }
    write_atomic(path, s.as_bytes())
}

/// Convenience for per-modality profiles of a sample set.
pub fn modality_profile(samples: &[PairedSample], m: Modality) -> Result<Vec<f64>> {
    let x: Array2<f64> = feature_matrix(samples, m);
    mean_profile(x.view())
}
