//! Benchmark protocols and their report rows.
//!
//! Experiment I trains on the first five images of every class, II on the
//! first three, and III is a leave-one-out sweep. Accuracy columns are
//! deterministic; timing columns are informational and come last in the CSV
//! so report diffs can ignore them.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{class_sizes, loo_sweep, split, LabeledImage, SplitProtocol};
use crate::error::{Error, Result};
use crate::modelstore::encode_model;
use crate::pipeline::{evaluate_images, evaluate_samples, extract_samples, Evaluation, Model, PipelineConfig, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    I,
    II,
    III,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::I, Experiment::II, Experiment::III];

    pub fn protocol_name(&self) -> &'static str {
        match self {
            Experiment::I => "first5",
            Experiment::II => "first3",
            Experiment::III => "leave-one-out",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::I => "I",
            Experiment::II => "II",
            Experiment::III => "III",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" | "FIRST5" => Ok(Experiment::I),
            "II" | "2" | "FIRST3" => Ok(Experiment::II),
            "III" | "3" | "LOO" | "LEAVE-ONE-OUT" => Ok(Experiment::III),
            _ => Err(Error::arg(format!("unknown experiment {s:?} (expected I, II or III)"))),
        }
    }
}

/// Published accuracy of the layered-HOG recognizer, as a fraction.
pub fn reference_accuracy(dataset: &str, experiment: Experiment) -> Option<f64> {
    let row = match dataset.to_ascii_lowercase().as_str() {
        "orl" => [0.97, 0.8464, 1.0],
        "umist" => [0.9035, 0.8518, 1.0],
        "jaffe" => [1.0, 1.0, 1.0],
        _ => return None,
    };
    Some(row[experiment as usize])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub method: String,
    pub experiment: String,
    pub protocol: String,
    pub feature_shape: String,
    pub dims: usize,
    pub classes: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub target_accuracy: Option<f64>,
    pub model_bytes: usize,
    pub top_confusions: String,
    pub train_seconds: f64,
    pub test_ms_per_image: f64,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "dataset",
    "method",
    "experiment",
    "protocol",
    "feature_shape",
    "dims",
    "classes",
    "train_images",
    "test_images",
    "correct",
    "accuracy",
    "target_accuracy",
    "model_bytes",
    "top_confusions",
    "train_seconds",
    "test_ms_per_image",
];

#[allow(clippy::too_many_arguments)]
fn row(
    dataset: &str,
    config: &PipelineConfig,
    experiment: Experiment,
    classes: usize,
    train_images: usize,
    eval: &Evaluation,
    model_bytes: usize,
    train_seconds: f64,
) -> BenchRow {
    BenchRow {
        dataset: dataset.to_string(),
        method: config.method_name().to_string(),
        experiment: experiment.to_string(),
        protocol: experiment.protocol_name().to_string(),
        feature_shape: config.feature_shape(),
        dims: config.dims,
        classes,
        train_images,
        test_images: eval.total,
        correct: eval.correct,
        accuracy: eval.accuracy(),
        target_accuracy: match config.features {
            crate::pipeline::FeatureKind::Hog => reference_accuracy(dataset, experiment),
            crate::pipeline::FeatureKind::Raw => None,
        },
        model_bytes,
        top_confusions: eval.top_confusions(3),
        train_seconds,
        test_ms_per_image: if eval.total == 0 { 0.0 } else { 1e3 * eval.test_seconds / eval.total as f64 },
    }
}

/// Runs one experiment on a loaded dataset.
pub fn run_experiment(
    dataset: &str,
    images: &[LabeledImage],
    config: &PipelineConfig,
    experiment: Experiment,
) -> Result<BenchRow> {
    config.validate()?;
    let classes = class_sizes(images).len();
    match experiment {
        Experiment::I | Experiment::II => {
            let k = if experiment == Experiment::I { 5 } else { 3 };
            let parts = split(images, SplitProtocol::FirstK(k))?;
            let start = Instant::now();
            let model = Model::train_images(*config, &parts.train)?;
            let train_seconds = start.elapsed().as_secs_f64();
            let eval = evaluate_images(&model, &parts.test)?;
            let bytes = encode_model(&model).len();
            Ok(row(dataset, config, experiment, classes, parts.train.len(), &eval, bytes, train_seconds))
        }
        Experiment::III => {
            let start = Instant::now();
            let samples = extract_samples(config, images)?;
            let extract_per_image = start.elapsed().as_secs_f64() / images.len().max(1) as f64;
            let folds: Vec<_> = loo_sweep(&samples)?.collect();
            let outcomes: Vec<(Evaluation, f64, usize)> = folds
                .par_iter()
                .enumerate()
                .map(|(i, fold)| {
                    let start = Instant::now();
                    let model = Model::train(*config, &fold.train)?;
                    let secs = start.elapsed().as_secs_f64();
                    let test: Vec<&Sample> = fold.test.to_vec();
                    let eval = evaluate_samples(&model, &test)?;
                    let bytes = if i == 0 { encode_model(&model).len() } else { 0 };
                    Ok((eval, secs, bytes))
                })
                .collect::<Result<_>>()?;
            let mut eval = Evaluation::default();
            let mut train_total = 0.0;
            let mut bytes = 0;
            for (e, secs, b) in outcomes {
                eval.merge(e);
                train_total += secs;
                bytes = bytes.max(b);
            }
            // extraction is shared across folds; charge it per image
            eval.test_seconds += extract_per_image * eval.total as f64;
            let train_images = images.len() - 1;
            let train_seconds =
                train_total / folds.len() as f64 + extract_per_image * train_images as f64;
            Ok(row(dataset, config, experiment, classes, train_images, &eval, bytes, train_seconds))
        }
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.method.clone(),
            r.experiment.clone(),
            r.protocol.clone(),
            r.feature_shape.clone(),
            r.dims.to_string(),
            r.classes.to_string(),
            r.train_images.to_string(),
            r.test_images.to_string(),
            r.correct.to_string(),
            format!("{:.6}", r.accuracy),
            r.target_accuracy.map(|t| format!("{t:.4}")).unwrap_or_default(),
            r.model_bytes.to_string(),
            r.top_confusions.clone(),
            format!("{:.3}", r.train_seconds),
            format!("{:.3}", r.test_ms_per_image),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table for terminals.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:<8} {:<12} {:<4} {:<14} {:<10} {:>4} {:>7} {:>9} {:>8} {:>8} {:>10} {:>9}\n",
        "dataset", "method", "exp", "protocol", "shape", "d", "test", "accuracy", "target",
        "delta", "train[s]", "test[ms]"
    );
    for r in rows {
        let (target, delta) = match r.target_accuracy {
            Some(t) => (
                format!("{:.2}%", 100.0 * t),
                format!("{:+.2}", 100.0 * (r.accuracy - t)),
            ),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!(
            "{:<8} {:<12} {:<4} {:<14} {:<10} {:>4} {:>7} {:>8.2}% {:>8} {:>8} {:>10.3} {:>9.3}\n",
            r.dataset,
            r.method,
            r.experiment,
            r.protocol,
            r.feature_shape,
            r.dims,
            r.test_images,
            100.0 * r.accuracy,
            target,
            delta,
            r.train_seconds,
            r.test_ms_per_image
        ));
    }
    out
}
