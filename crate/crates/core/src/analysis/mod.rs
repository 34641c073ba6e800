//! Diagnostics: cross-modal similarity per band, per-dimension mean profiles
//! and ablation grids.

mod ablation;
mod similarity;

pub use ablation::{
    run_ablation, AblationGrid, AblationRow, AblationSuite, HarnessOptions, SeedBaseline,
};
pub use similarity::{
    mean_profile, modality_profile, similarity_report, trained_feature_similarity,
    write_mean_profile_csv, DegenerateCounts, FeatureSource, SimilarityReport,
};
