//! End-to-end behaviour of data files, training, evaluation and checkpoints.

use std::fs;

use freqkd::analysis::{mean_profile, modality_profile};
use freqkd::data::{
    feature_matrix, generate, labels, load_features, write_features_csv, Dataset, Modality,
    SyntheticConfig,
};
use freqkd::frequency::{BandDecomposer, BandSplit};
use freqkd::losses::FrequencyObjective;
use freqkd::models::{argmax_rows, Checkpoint, Linear, ModelBundle};
use freqkd::train::{distill, evaluate, score, train_unimodal, ExperimentConfig};
use freqkd::Error;
use ndarray::{array, Array2};

fn small(seed: u64) -> Dataset {
    generate(&SyntheticConfig {
        train_size: 400,
        test_size: 200,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn quick(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        epochs: 8,
        hidden: vec![64],
        seed,
        ..ExperimentConfig::default()
    }
}

#[test]
fn dataset_directory_round_trips_exactly() {
    let data = small(3);
    let dir = tempfile::tempdir().unwrap();
    data.save_dir(dir.path()).unwrap();
    let back = Dataset::load_dir(dir.path()).unwrap();
    assert_eq!(back, data);
}

#[test]
fn generator_is_deterministic_per_seed() {
    assert_eq!(small(9), small(9));
    assert_ne!(small(9).train, small(10).train);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "id,label,m,f0,f1\n0,1,a,0.5,1.0\n0,1,b,0.5,oops\n").unwrap();
    match load_features(&path, None) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("f1"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    fs::write(&path, "id,label,m,f0\n0,1,a,0.5\n0,1,b\n").unwrap();
    assert!(matches!(
        load_features(&path, None),
        Err(Error::Parse { line: 3, .. })
    ));

    fs::write(&path, "id,label,m,f0\n0,7,a,0.5\n0,7,b,0.5\n").unwrap();
    assert!(matches!(
        load_features(&path, Some(3)),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn unpaired_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.csv");
    fs::write(
        &path,
        "id,label,m,f0,f1\n0,1,a,0.5,1.0\n0,1,b,0.5,1.0\n1,0,a,0.0,0.0\n",
    )
    .unwrap();
    match load_features(&path, None) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 4);
            assert!(message.contains("modality b"), "{message}");
        }
        other => panic!("expected a pairing failure, got {other:?}"),
    }
}

#[test]
fn unimodal_training_beats_chance() {
    let data = generate(&SyntheticConfig::default()).unwrap();
    let out = train_unimodal(&data, Modality::A, &ExperimentConfig::default()).unwrap();
    let chance = 1.0 / data.classes as f64;
    assert!(
        out.report.test.accuracy > chance + 0.15,
        "{}",
        out.report.test.accuracy
    );
    assert_eq!(out.report.epochs.len(), out.report.epochs_run);
    assert_eq!(out.report.epochs_run, 30);
}

#[test]
fn zero_epochs_takes_no_step() {
    let data = small(1);
    let cfg = ExperimentConfig {
        epochs: 0,
        ..quick(1)
    };
    let out = train_unimodal(&data, Modality::B, &cfg).unwrap();
    assert_eq!(out.report.steps, 0);
    assert!(out.report.epochs.is_empty());
    let shape = cfg.encoder_shape(data.input_dim);
    assert_eq!(
        out.bundle,
        ModelBundle::init(Modality::B, &shape, data.classes, 1).unwrap()
    );
    let chance = 1.0 / data.classes as f64;
    assert!(
        (out.report.test.accuracy - chance).abs() < 0.15,
        "{}",
        out.report.test.accuracy
    );
}

#[test]
fn same_seed_reproduces_reports_bitwise() {
    let data = small(2);
    let teacher = train_unimodal(&data, Modality::A, &quick(2)).unwrap();
    let r1 = distill(&data, &teacher.bundle, &quick(2)).unwrap();
    let r2 = distill(&data, &teacher.bundle, &quick(2)).unwrap();
    assert_eq!(
        r1.report.to_json_without_wall_time(),
        r2.report.to_json_without_wall_time()
    );
    assert_eq!(r1.checkpoint().to_bytes(), r2.checkpoint().to_bytes());
}

#[test]
fn teacher_stays_frozen_and_breakdown_sums() {
    let data = small(4);
    let teacher = train_unimodal(&data, Modality::A, &quick(4)).unwrap();
    let before = teacher.bundle.clone();
    let cfg = ExperimentConfig {
        lambda1: 3.0,
        lambda2: 0.5,
        ..quick(4)
    };
    let out = distill(&data, &teacher.bundle, &cfg).unwrap();
    assert_eq!(teacher.bundle, before);
    let (h0, h1) = out.report.teacher_hash.clone().unwrap();
    assert_eq!(h0, h1);
    for e in &out.report.epochs {
        let l = e.loss;
        let expect = ((l.task + l.align) + 3.0 * l.low) + 0.5 * l.high;
        assert!(
            (l.total - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "epoch {}",
            e.epoch
        );
    }
}

#[test]
fn teacher_with_other_feature_width_is_rejected() {
    let data = small(5);
    let teacher = train_unimodal(
        &data,
        Modality::A,
        &ExperimentConfig {
            feature_dim: 32,
            residual: false,
            ..quick(5)
        },
    )
    .unwrap();
    assert!(matches!(
        distill(&data, &teacher.bundle, &quick(5)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn exploding_learning_rate_names_the_term() {
    let data = small(6);
    let teacher = train_unimodal(&data, Modality::A, &quick(6)).unwrap();
    let cfg = ExperimentConfig {
        lr: 1e200,
        momentum: 0.0,
        ..quick(6)
    };
    match distill(&data, &teacher.bundle, &cfg) {
        Err(Error::Numeric { location, .. }) => assert!(location.unwrap().starts_with("epoch")),
        other => panic!(
            "expected a numeric error, got {:?}",
            other.map(|o| o.report.test)
        ),
    }
}

#[test]
fn invalid_toggles_are_config_errors() {
    let data = small(7);
    let cfg = ExperimentConfig {
        freq: false,
        ..quick(7)
    };
    assert!(matches!(
        train_unimodal(&data, Modality::A, &cfg),
        Err(Error::Config(_))
    ));
    let cfg = ExperimentConfig {
        lambda1: -1.0,
        ..quick(7)
    };
    assert!(matches!(
        train_unimodal(&data, Modality::A, &cfg),
        Err(Error::Config(_))
    ));
}

// Teacher = the student's own initial weights reading the other modality. With
// a dominant low-band weight the student should pull its low band onto the
// teacher's. The low bins carry no per-modality noise here, so the teacher's
// low band is reachable; features are compared unstandardized.
#[test]
fn self_distillation_shrinks_the_low_band_loss() {
    let data = generate(&SyntheticConfig {
        train_size: 400,
        test_size: 200,
        low_noise: 0.0,
        low_perturbation: 0.0,
        seed: 8,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = ExperimentConfig {
        lambda1: 1e3,
        lambda2: 1.0,
        scale: false,
        epochs: 30,
        lr: 1e-4,
        ..quick(8)
    };
    let shape = cfg.encoder_shape(data.input_dim);
    let init = ModelBundle::init(cfg.student_modality, &shape, data.classes, cfg.seed).unwrap();
    let teacher = ModelBundle {
        modality: cfg.student_modality.other(),
        ..init.clone()
    };

    let low_loss = |student: &ModelBundle| {
        let split = BandSplit::new(cfg.threshold, cfg.feature_dim).unwrap();
        let objective = FrequencyObjective::new(
            cfg.objective_settings(),
            BandDecomposer::new(split).unwrap(),
        )
        .unwrap();
        let s = student
            .features(feature_matrix(&data.train, student.modality).view())
            .unwrap();
        let t = teacher
            .features(feature_matrix(&data.train, teacher.modality).view())
            .unwrap();
        let shared = freqkd::models::SharedClassifiers::zeros(cfg.feature_dim, data.classes);
        objective
            .evaluate(
                s.view(),
                Some(t.view()),
                &shared,
                &student.head,
                &labels(&data.train),
            )
            .unwrap()
            .breakdown
            .low
    };

    let out = distill(&data, &teacher, &cfg).unwrap();
    let (start, end) = (low_loss(&init), low_loss(&out.bundle));
    assert!(end * 10.0 <= start, "low-band loss {start:e} -> {end:e}");
}

#[test]
fn checkpoints_reload_to_the_same_model() {
    let data = small(9);
    let teacher = train_unimodal(&data, Modality::B, &quick(9)).unwrap();
    let out = distill(
        &data,
        &teacher.bundle,
        &ExperimentConfig {
            student_modality: Modality::A,
            ..quick(9)
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.checkpoint().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.bundle, out.bundle);
    assert_eq!(loaded.shared.as_ref(), Some(&out.shared));
    assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
    assert_eq!(
        evaluate(&loaded.bundle, &data.test).unwrap(),
        out.report.test
    );

    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(Error::Checkpoint(_))
    ));
    bytes[0] ^= 0xff;
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn evaluation_matches_argmax_over_exported_logits() {
    let data = small(10);
    let model = train_unimodal(&data, Modality::A, &quick(10))
        .unwrap()
        .bundle;
    let logits = model
        .logits(feature_matrix(&data.test, Modality::A).view())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logits.csv");
    write_features_csv(
        &path,
        data.classes,
        data.test
            .iter()
            .zip(logits.rows())
            .map(|(s, row)| (s.id, s.label, Modality::A, row.to_slice().unwrap())),
    )
    .unwrap();

    // recount from the text file alone
    let text = fs::read_to_string(&path).unwrap();
    let mut correct = 0;
    let mut total = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let label: usize = fields[1].parse().unwrap();
        let values: Vec<f64> = fields[3..].iter().map(|v| v.parse().unwrap()).collect();
        let mut best = 0;
        for (j, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = j;
            }
        }
        correct += usize::from(best == label);
        total += 1;
    }
    let eval = evaluate(&model, &data.test).unwrap();
    assert_eq!((eval.correct, eval.total), (correct, total));
    assert_eq!(eval.accuracy, correct as f64 / total as f64);
}

#[test]
fn evaluation_examples() {
    let truth = [0, 2, 1, 1, 2];
    let perfect = score(&truth, &truth, 3);
    assert_eq!(perfect.accuracy, 1.0);
    assert!(perfect.per_class_accuracy.iter().all(|a| *a == Some(1.0)));

    // all-zero logits tie everywhere; the lowest class index wins
    assert_eq!(argmax_rows(Array2::<f64>::zeros((4, 3)).view()), vec![0; 4]);
    let data = small(11);
    let cfg = quick(11);
    let mut model = ModelBundle::init(
        Modality::A,
        &cfg.encoder_shape(data.input_dim),
        data.classes,
        11,
    )
    .unwrap();
    model.head = Linear::zeros(cfg.feature_dim, data.classes);
    let eval = evaluate(&model, &data.test).unwrap();
    let zeros = data.test.iter().filter(|s| s.label == 0).count();
    assert_eq!(eval.correct, zeros);
    assert!(matches!(evaluate(&model, &[]), Err(Error::Data(_))));
}

#[test]
fn mean_profile_examples() {
    let constant = Array2::from_elem((5, 4), 2.5);
    assert_eq!(mean_profile(constant.view()).unwrap(), vec![2.5; 4]);
    let single = array![[1.0, -2.0, 3.5]];
    assert_eq!(mean_profile(single.view()).unwrap(), vec![1.0, -2.0, 3.5]);

    let data = generate(&SyntheticConfig::default()).unwrap();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let a = mean(modality_profile(&data.train, Modality::A).unwrap());
    let b = mean(modality_profile(&data.train, Modality::B).unwrap());
    assert!(a > b, "{a} vs {b}");
}

#[test]
fn ablation_grid_json_round_trips() {
    use freqkd::analysis::{run_ablation, AblationGrid, AblationSuite, HarnessOptions};
    let opts = HarnessOptions {
        seeds: vec![0, 1],
        jobs: 2,
        data: SyntheticConfig {
            train_size: 150,
            test_size: 70,
            ..SyntheticConfig::default()
        },
        ..HarnessOptions::default()
    };
    let base = ExperimentConfig {
        epochs: 1,
        hidden: vec![16],
        ..ExperimentConfig::default()
    };
    let grid = run_ablation(AblationSuite::Threshold, &base, &opts).unwrap();
    let json = serde_json::to_string(&grid).unwrap();
    let back: AblationGrid = serde_json::from_str(&json).unwrap();
    assert_eq!(back, grid);
}
