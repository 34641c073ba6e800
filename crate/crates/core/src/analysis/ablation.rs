//! Ablation harness: runs a family of distillation configurations over
//! several seeds and both transfer directions.
//!
//! For each seed a dataset is generated and one unimodal model per modality is
//! trained; those serve both as teachers and as the no-distillation baseline.
//! Every row then distills into each requested student modality.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, Modality, SyntheticConfig};
use crate::losses::BandLossKind;
use crate::models::ModelBundle;
use crate::train::{distill, train_unimodal, ExperimentConfig};
use crate::util::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    /// Freq / Align / Scale / Log toggle pattern, seven rows.
    Components,
    /// {mse, logmse} for the low band times {mse, logmse} for the high band.
    LossGrid,
    /// Band threshold in {1/4, 1/3, 1/2}.
    Threshold,
    /// lambda1, lambda2 in {0.5, 1, 3, 5}.
    Lambda,
}

impl std::str::FromStr for AblationSuite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "components" => Ok(Self::Components),
            "loss_grid" | "loss-grid" => Ok(Self::LossGrid),
            "threshold" => Ok(Self::Threshold),
            "lambda" => Ok(Self::Lambda),
            other => Err(format!(
                "unknown suite `{other}` (expected components, loss_grid, threshold or lambda)"
            )),
        }
    }
}

impl AblationSuite {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Components => "components",
            Self::LossGrid => "loss_grid",
            Self::Threshold => "threshold",
            Self::Lambda => "lambda",
        }
    }

    /// The configurations the suite enumerates, derived from `base`.
    pub fn rows(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let full = ExperimentConfig {
            freq: true,
            align: true,
            scale: true,
            log: true,
            high_loss: None,
            ..base.clone()
        };
        match self {
            Self::Components => {
                // (freq, align, scale, log); rows without freq carry no band weights
                let pattern = [
                    (false, false, false, false),
                    (true, false, false, false),
                    (false, true, false, false),
                    (true, true, false, false),
                    (true, false, true, false),
                    (true, true, true, false),
                    (true, true, true, true),
                ];
                pattern
                    .iter()
                    .map(|&(freq, align, scale, log)| {
                        let mut c = ExperimentConfig {
                            freq,
                            align,
                            scale,
                            log,
                            ..full.clone()
                        };
                        if !freq {
                            c.lambda1 = 0.0;
                            c.lambda2 = 0.0;
                        }
                        let mut label: Vec<&str> = Vec::new();
                        for (on, name) in [
                            (freq, "freq"),
                            (align, "align"),
                            (scale, "scale"),
                            (log, "log"),
                        ] {
                            if on {
                                label.push(name);
                            }
                        }
                        let label = if label.is_empty() {
                            "none".to_string()
                        } else {
                            label.join("+")
                        };
                        (label, c)
                    })
                    .collect()
            }
            Self::LossGrid => {
                let kinds = [BandLossKind::Mse, BandLossKind::LogMse];
                let mut rows = Vec::new();
                for low in kinds {
                    for high in kinds {
                        let c = ExperimentConfig {
                            low_loss: low,
                            high_loss: Some(high),
                            log: high == BandLossKind::LogMse,
                            ..full.clone()
                        };
                        rows.push((format!("low={low},high={high}"), c));
                    }
                }
                rows
            }
            Self::Threshold => [(1.0 / 4.0, "1/4"), (1.0 / 3.0, "1/3"), (1.0 / 2.0, "1/2")]
                .into_iter()
                .map(|(t, name)| {
                    (
                        format!("threshold={name}"),
                        ExperimentConfig {
                            threshold: t,
                            ..full.clone()
                        },
                    )
                })
                .collect(),
            Self::Lambda => {
                let values = [0.5, 1.0, 3.0, 5.0];
                let mut rows = Vec::new();
                for l1 in values {
                    for l2 in values {
                        rows.push((
                            format!("lambda1={l1},lambda2={l2}"),
                            ExperimentConfig {
                                lambda1: l1,
                                lambda2: l2,
                                ..full.clone()
                            },
                        ));
                    }
                }
                rows
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOptions {
    pub seeds: Vec<u64>,
    /// Worker threads; each experiment owns its model state.
    pub jobs: usize,
    /// Generator template; its seed is replaced by each harness seed.
    pub data: SyntheticConfig,
    pub students: Vec<Modality>,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            jobs: 1,
            data: SyntheticConfig::default(),
            students: Modality::ALL.to_vec(),
        }
    }
}

/// Unimodal test accuracy for one seed; index by `Modality::index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBaseline {
    pub seed: u64,
    pub unimodal_accuracy: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    /// Complete configuration; rerun with `seed` set to a harness seed and
    /// `student_modality` set to the direction of interest.
    pub config: ExperimentConfig,
    /// Distilled test accuracy per seed, for students of modality a and b
    /// (empty when that direction was not run).
    pub accuracy_a: Vec<f64>,
    pub accuracy_b: Vec<f64>,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub suite: AblationSuite,
    pub seeds: Vec<u64>,
    pub data: SyntheticConfig,
    pub students: Vec<Modality>,
    pub baselines: Vec<SeedBaseline>,
    pub rows: Vec<AblationRow>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs `tasks` on up to `jobs` threads and returns results in task order.
fn parallel_map<T, R, F>(tasks: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let r = f(&tasks[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

pub fn run_ablation(
    suite: AblationSuite,
    base: &ExperimentConfig,
    opts: &HarnessOptions,
) -> Result<AblationGrid> {
    if opts.seeds.is_empty() || opts.students.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one seed and one student modality".into(),
        ));
    }
    let rows = suite.rows(base);
    for (label, c) in &rows {
        c.validate()
            .map_err(|e| Error::Config(format!("row {label}: {e}")))?;
    }

    let datasets: Vec<Dataset> = parallel_map(&opts.seeds, opts.jobs, |&seed| {
        generate(&SyntheticConfig {
            seed,
            ..opts.data.clone()
        })
    })?;

    // unimodal models per (seed, modality)
    let uni_tasks: Vec<(usize, Modality)> = (0..opts.seeds.len())
        .flat_map(|s| Modality::ALL.map(|m| (s, m)))
        .collect();
    let unimodal: Vec<(ModelBundle, f64)> = parallel_map(&uni_tasks, opts.jobs, |&(s, m)| {
        let cfg = ExperimentConfig {
            seed: opts.seeds[s],
            ..base.clone()
        };
        let out = train_unimodal(&datasets[s], m, &cfg)?;
        Ok((out.bundle, out.report.test.accuracy))
    })?;
    let uni = |s: usize, m: Modality| &unimodal[2 * s + m.index() as usize];

    let tasks: Vec<(usize, usize, Modality)> = (0..rows.len())
        .flat_map(|r| {
            (0..opts.seeds.len()).flat_map(move |s| opts.students.iter().map(move |&m| (r, s, m)))
        })
        .collect();
    let results = parallel_map(&tasks, opts.jobs, |&(r, s, m)| {
        let cfg = ExperimentConfig {
            seed: opts.seeds[s],
            student_modality: m,
            ..rows[r].1.clone()
        };
        let teacher = &uni(s, m.other()).0;
        log::info!(
            "ablation {}: row {} seed {} student {m}",
            suite.as_str(),
            rows[r].0,
            cfg.seed
        );
        Ok(distill(&datasets[s], teacher, &cfg)?.report.test.accuracy)
    })?;

    let mut out_rows: Vec<AblationRow> = rows
        .iter()
        .map(|(label, c)| AblationRow {
            label: label.clone(),
            config: ExperimentConfig {
                seed: 0,
                ..c.clone()
            },
            accuracy_a: Vec::new(),
            accuracy_b: Vec::new(),
            mean_a: None,
            mean_b: None,
        })
        .collect();
    for (&(r, _, m), acc) in tasks.iter().zip(results) {
        match m {
            Modality::A => out_rows[r].accuracy_a.push(acc),
            Modality::B => out_rows[r].accuracy_b.push(acc),
        }
    }
    for row in &mut out_rows {
        row.mean_a = mean(&row.accuracy_a);
        row.mean_b = mean(&row.accuracy_b);
    }

    let baselines = opts
        .seeds
        .iter()
        .enumerate()
        .map(|(s, &seed)| SeedBaseline {
            seed,
            unimodal_accuracy: [uni(s, Modality::A).1, uni(s, Modality::B).1],
        })
        .collect();

    Ok(AblationGrid {
        suite,
        seeds: opts.seeds.clone(),
        data: SyntheticConfig {
            seed: 0,
            ..opts.data.clone()
        },
        students: opts.students.clone(),
        baselines,
        rows: out_rows,
    })
}

pub const GRID_CSV_HEADER: &str =
    "row,label,freq,align,scale,log,low_loss,high_loss,threshold,lambda1,lambda2,seed,student,accuracy";

impl AblationGrid {
    /// One line per (row, seed, student).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(GRID_CSV_HEADER);
        s.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let c = &row.config;
            for (m, accs) in [
                (Modality::A, &row.accuracy_a),
                (Modality::B, &row.accuracy_b),
            ] {
                for (seed, acc) in self.seeds.iter().zip(accs.iter()) {
                    let _ = writeln!(
                        s,
                        "{i},{},{},{},{},{},{},{},{},{},{},{seed},{m},{acc}",
                        row.label.replace(',', ";"),
                        c.freq,
                        c.align,
                        c.scale,
                        c.log,
                        c.low_loss,
                        c.high_loss_kind(),
                        c.threshold,
                        c.lambda1,
                        c.lambda2,
                    );
                }
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::util::write_json(&dir.join("grid.json"), self)?;
        write_atomic(&dir.join("grid.csv"), self.to_csv().as_bytes())
    }

    /// Mean unimodal accuracy over seeds for `m`.
    pub fn baseline_mean(&self, m: Modality) -> f64 {
        let v: Vec<f64> = self
            .baselines
            .iter()
            .map(|b| b.unimodal_accuracy[m.index() as usize])
            .collect();
        mean(&v).unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_counts() {
        let base = ExperimentConfig::default();
        assert_eq!(AblationSuite::Components.rows(&base).len(), 7);
        assert_eq!(AblationSuite::LossGrid.rows(&base).len(), 4);
        assert_eq!(AblationSuite::Threshold.rows(&base).len(), 3);
        assert_eq!(AblationSuite::Lambda.rows(&base).len(), 16);
        for suite in [
            AblationSuite::Components,
            AblationSuite::LossGrid,
            AblationSuite::Threshold,
            AblationSuite::Lambda,
        ] {
            for (label, c) in suite.rows(&base) {
                c.validate().unwrap_or_else(|e| panic!("{label}: {e}"));
            }
        }
    }

    #[test]
    fn component_rows_follow_the_toggle_pattern() {
        let rows = AblationSuite::Components.rows(&ExperimentConfig::default());
        let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(
            labels,
            [
                "none",
                "freq",
                "align",
                "freq+align",
                "freq+scale",
                "freq+align+scale",
                "freq+align+scale+log"
            ]
        );
        assert_eq!(rows[0].1, ExperimentConfig::default().components_off());
        assert_eq!(rows[1].1.high_loss_kind(), BandLossKind::Mse);
        assert_eq!(rows[6].1.high_loss_kind(), BandLossKind::LogMse);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let tasks: Vec<u64> = (0..50).collect();
        let out = parallel_map(&tasks, 4, |&t| Ok(t * t)).unwrap();
        assert_eq!(out, tasks.iter().map(|t| t * t).collect::<Vec<_>>());
    }

    #[test]
    fn suite_names() {
        assert_eq!(
            "loss_grid".parse::<AblationSuite>().unwrap(),
            AblationSuite::LossGrid
        );
        assert!("nope".parse::<AblationSuite>().is_err());
    }
}
