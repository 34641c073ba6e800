mod args;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use freqkd::analysis::{
    mean_profile, run_ablation, similarity_report, write_mean_profile_csv, AblationSuite,
    FeatureSource, HarnessOptions, SimilarityReport,
};
use freqkd::data::{
    feature_matrix, generate, write_features_csv, Dataset, Modality, PairedSample, SplitName,
};
use freqkd::frequency::BandSplit;
use freqkd::kv;
use freqkd::models::{Checkpoint, ModelBundle};
use freqkd::train::{
    distill, evaluate, train_unimodal, Evaluation, ExperimentConfig, TrainOutcome,
};
use freqkd::util::{write_atomic, write_json};
use serde::Serialize;

use args::{Cli, Command, SourceArgs, SuiteArg, SynthArgs};

enum Failure {
    Usage(String),
    Lib(freqkd::Error),
}

impl From<freqkd::Error> for Failure {
    fn from(e: freqkd::Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    let code = match run(argv) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error:usage: {msg}");
            1
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error:{}: {e}", e.category());
            exit_code(&e)
        }
    };
    ExitCode::from(code)
}

fn exit_code(e: &freqkd::Error) -> u8 {
    use freqkd::Error::*;
    match e {
        Config(_) => 1,
        Numeric { .. } => 3,
        Dimension(_)
        | Spectrum(_)
        | Label { .. }
        | Parse { .. }
        | Data(_)
        | Pairing(_)
        | Checkpoint(_)
        | Io { .. } => 2,
    }
}

fn run(argv: Vec<OsString>) -> Outcome {
    let argv = merge_config_file(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", rendered.trim_end());
            return Err(Failure::Usage(first.to_string()));
        }
    };
    dispatch(cli.command)
}

/// Splices the `key = value` pairs of `--config FILE` into the argument list
/// directly after the subcommand, so that later command-line flags override them.
fn merge_config_file(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let pairs = kv::read(Path::new(&path))?;

    let root = Cli::command();
    let Some((pos, sub)) = strs
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| root.find_subcommand(a).map(|s| (i, s)))
    else {
        return Ok(argv);
    };
    let mut injected = Vec::new();
    for (key, value) in &pairs {
        let long = key.replace('_', "-");
        if long == "config" {
            return Err(Failure::Usage(format!(
                "{path}: `config` cannot be set from a config file"
            )));
        }
        let Some(arg) = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(long.as_str()))
        else {
            return Err(Failure::Usage(format!(
                "{path}: unknown key `{key}` for `{}`",
                sub.get_name()
            )));
        };
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{long}={value}")));
        } else {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{long}"))),
                "false" => {}
                other => {
                    return Err(Failure::Usage(format!(
                        "{path}: `{key}` expects true or false, got `{other}`"
                    )))
                }
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::GenData { synth, out } => {
            let cfg = synth.config();
            let dataset = generate(&cfg)?;
            dataset.save_dir(&out)?;
            let mut resolved = vec![pair("command", "gen-data")];
            resolved.extend(cfg.to_pairs());
            write_resolved(&out, &resolved)
        }
        Command::TrainUni { source, train, out } => {
            let dataset = load_source(&source)?;
            let modality = train.student_modality.unwrap_or(Modality::A);
            let cfg = train.config(source.synth.seed, modality)?;
            let outcome = train_unimodal(&dataset, modality, &cfg)?;
            write_resolved(&out, &resolved_run("train-uni", &source, &cfg, None))?;
            write_outcome(&out, &outcome)
        }
        Command::Distill {
            source,
            train,
            teacher,
            out,
        } => {
            let Some(teacher_path) = teacher else {
                let mut cmd = Cli::command();
                cmd.build();
                let usage = cmd
                    .find_subcommand_mut("distill")
                    .map(|c| c.render_usage().to_string())
                    .unwrap_or_default();
                eprintln!("{usage}");
                return Err(Failure::Usage("distill requires --teacher <CKPT>".into()));
            };
            let teacher = Checkpoint::load(&teacher_path)?.bundle;
            let dataset = load_source(&source)?;
            let student = train.student_modality.unwrap_or(teacher.modality.other());
            let cfg = train.config(source.synth.seed, student)?;
            let outcome = distill(&dataset, &teacher, &cfg)?;
            let extra = pair("teacher", &teacher_path.display().to_string());
            write_resolved(&out, &resolved_run("distill", &source, &cfg, Some(extra)))?;
            write_outcome(&out, &outcome)
        }
        Command::Eval {
            source,
            checkpoint,
            split,
            out,
        } => {
            let bundle = Checkpoint::load(&checkpoint)?.bundle;
            let dataset = load_source(&source)?;
            let evaluation = evaluate(&bundle, dataset.split(split))?;
            let report = EvalReport {
                modality: bundle.modality,
                split,
                evaluation,
            };
            write_json(&out.join("eval.json"), &report)?;
            let mut resolved = source_pairs("eval", &source);
            resolved.push(pair("checkpoint", &checkpoint.display().to_string()));
            resolved.push(pair("split", split.as_str()));
            write_resolved(&out, &resolved)
        }
        Command::Analyze {
            source,
            checkpoint_a,
            checkpoint_b,
            threshold,
            split,
            out,
        } => {
            let dataset = load_source(&source)?;
            let samples = dataset.split(split);
            let (fa, fb, kind) = match (&checkpoint_a, &checkpoint_b) {
                (Some(a), Some(b)) => {
                    let a = load_for(a, Modality::A)?;
                    let b = load_for(b, Modality::B)?;
                    (
                        a.features(feature_matrix(samples, Modality::A).view())?,
                        b.features(feature_matrix(samples, Modality::B).view())?,
                        FeatureSource::TrainedEncoders,
                    )
                }
                _ => {
                    let kind = if dataset.provenance.is_some() {
                        FeatureSource::GeneratorInputs
                    } else {
                        FeatureSource::External
                    };
                    (
                        feature_matrix(samples, Modality::A),
                        feature_matrix(samples, Modality::B),
                        kind,
                    )
                }
            };
            let band = BandSplit::new(threshold, fa.ncols())?;
            let report = similarity_report(fa.view(), fb.view(), &band, kind)?;
            write_json(&out.join("similarity.json"), &report)?;
            write_atomic(
                &out.join("similarity.csv"),
                similarity_csv(&report).as_bytes(),
            )?;
            write_mean_profile_csv(
                &out.join("mean_profile.csv"),
                &mean_profile(fa.view())?,
                &mean_profile(fb.view())?,
            )?;
            let mut resolved = source_pairs("analyze", &source);
            for (k, v) in [
                ("checkpoint_a", &checkpoint_a),
                ("checkpoint_b", &checkpoint_b),
            ] {
                if let Some(p) = v {
                    resolved.push(pair(k, &p.display().to_string()));
                }
            }
            resolved.push(pair("threshold", &threshold.to_string()));
            resolved.push(pair("split", split.as_str()));
            write_resolved(&out, &resolved)
        }
        Command::Ablate {
            synth,
            train,
            suite,
            seeds,
            jobs,
            out,
        } => {
            let base = train.config(0, train.student_modality.unwrap_or(Modality::B))?;
            let students = match train.student_modality {
                Some(m) => vec![m],
                None => Modality::ALL.to_vec(),
            };
            let opts = HarnessOptions {
                seeds: seeds.0.clone(),
                jobs,
                data: synth.config(),
                students,
            };
            let suites: Vec<(AblationSuite, std::path::PathBuf)> = match suite {
                SuiteArg::One(s) => vec![(s, out.clone())],
                SuiteArg::All => [
                    AblationSuite::Components,
                    AblationSuite::LossGrid,
                    AblationSuite::Threshold,
                    AblationSuite::Lambda,
                ]
                .into_iter()
                .map(|s| (s, out.join(s.as_str())))
                .collect(),
            };
            for (s, dir) in suites {
                run_ablation(s, &base, &opts)?.write(&dir)?;
            }
            let mut resolved = vec![pair("command", "ablate")];
            resolved.extend(synth_pairs(&synth));
            resolved.extend(base.to_pairs());
            let seeds: Vec<String> = seeds.0.iter().map(u64::to_string).collect();
            resolved.push(pair("seeds", &seeds.join(",")));
            resolved.push(pair("jobs", &jobs.to_string()));
            resolved.push(pair(
                "suite",
                match suite {
                    SuiteArg::One(s) => s.as_str(),
                    SuiteArg::All => "all",
                },
            ));
            write_resolved(&out, &resolved)
        }
        Command::ExportFeatures {
            source,
            checkpoint,
            split,
            out,
        } => {
            let bundle = Checkpoint::load(&checkpoint)?.bundle;
            let dataset = load_source(&source)?;
            export_features(&bundle, dataset.split(split), &out)?;
            let mut resolved = source_pairs("export-features", &source);
            resolved.push(pair("checkpoint", &checkpoint.display().to_string()));
            resolved.push(pair("split", split.as_str()));
            write_resolved(&out, &resolved)
        }
    }
}

#[derive(Serialize)]
struct EvalReport {
    modality: Modality,
    split: SplitName,
    #[serde(flatten)]
    evaluation: Evaluation,
}

fn load_source(source: &SourceArgs) -> Result<Dataset, Failure> {
    Ok(match &source.data {
        Some(dir) => Dataset::load_dir(dir)?,
        None => generate(&source.synth.config())?,
    })
}

fn load_for(path: &Path, expected: Modality) -> Result<ModelBundle, Failure> {
    let bundle = Checkpoint::load(path)?.bundle;
    if bundle.modality != expected {
        return Err(Failure::Usage(format!(
            "{} holds a modality-{} model, expected modality {expected}",
            path.display(),
            bundle.modality
        )));
    }
    Ok(bundle)
}

fn write_outcome(out: &Path, outcome: &TrainOutcome) -> Outcome {
    outcome.checkpoint().save(out.join("model.ckpt"))?;
    write_json(&out.join("report.json"), &outcome.report)?;
    Ok(())
}

fn export_features(bundle: &ModelBundle, samples: &[PairedSample], out: &Path) -> Outcome {
    let m = bundle.modality;
    let x = feature_matrix(samples, m);
    let features = bundle.features(x.view())?;
    let logits = bundle.head.forward(features.view())?;
    write_features_csv(
        &out.join("features.csv"),
        features.ncols(),
        samples
            .iter()
            .zip(features.rows())
            .map(|(s, row)| (s.id, s.label, m, row.to_slice().expect("standard layout"))),
    )?;
    let mut csv = String::from("id,label,m");
    for c in 0..logits.ncols() {
        let _ = write!(csv, ",l{c}");
    }
    csv.push('\n');
    for (s, row) in samples.iter().zip(logits.rows()) {
        let _ = write!(csv, "{},{},{m}", s.id, s.label);
        for v in row {
            csv.push(',');
            csv.push_str(&freqkd::data::format_float(*v));
        }
        csv.push('\n');
    }
    write_atomic(&out.join("logits.csv"), csv.as_bytes())?;
    Ok(())
}

fn similarity_csv(r: &SimilarityReport) -> String {
    let source = serde_json::to_value(r.source)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    format!(
        "source,threshold,samples,mean_raw,mean_low,mean_high,degenerate_raw,degenerate_low,degenerate_high\n\
         {source},{},{},{},{},{},{},{},{}\n",
        r.threshold,
        r.samples,
        r.mean_raw,
        r.mean_low,
        r.mean_high,
        r.degenerate.raw,
        r.degenerate.low,
        r.degenerate.high
    )
}

fn pair(k: &str, v: &str) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn synth_pairs(synth: &SynthArgs) -> kv::Pairs {
    synth
        .config()
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (format!("data.{k}"), v))
        .collect()
}

fn source_pairs(command: &str, source: &SourceArgs) -> kv::Pairs {
    let mut pairs = vec![pair("command", command)];
    match &source.data {
        Some(dir) => pairs.push(pair("data", &dir.display().to_string())),
        None => pairs.extend(synth_pairs(&source.synth)),
    }
    pairs
}

fn resolved_run(
    command: &str,
    source: &SourceArgs,
    cfg: &ExperimentConfig,
    extra: Option<(String, String)>,
) -> kv::Pairs {
    let mut pairs = source_pairs(command, source);
    pairs.extend(extra);
    pairs.extend(cfg.to_pairs());
    pairs
}

fn write_resolved(out: &Path, pairs: &[(String, String)]) -> Outcome {
    write_atomic(&out.join("config.resolved"), kv::render(pairs).as_bytes())?;
    Ok(())
}
