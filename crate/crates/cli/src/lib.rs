//! `hogface` command line: train, evaluate, predict, bench and export-json.
//!
//! Exit status is 0 on success, 1 on internal failure and 2 on usage or input
//! errors (bad flags, unreadable or inconsistent data).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hogface::bench::{format_table, reference_accuracy, run_experiment, write_csv, BenchRow, Experiment};
use hogface::datasets::{class_sizes, shuffle_within_classes, LabeledImage};
use hogface::hog2d::HogConfig;
use hogface::modelstore::{encode_model, export_json, load_model_file, save_model_file};
use hogface::pipeline::{evaluate_images, FeatureKind, Model};
use hogface::{decode_pgm, load_dataset, split, Layout, PipelineConfig, SplitProtocol};

/// Environment variable naming a directory with `orl/`, `umist/` and `jaffe/`.
pub const DATA_ENV: &str = "HOGFACE_DATA";

#[derive(Debug, Parser)]
#[command(name = "hogface", version, about = "Layered-HOG 2DPCA face recognition")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the training half of a protocol and save it.
    Train(TrainArgs),
    /// Classify the test half of a protocol with a saved model.
    Evaluate(EvaluateArgs),
    /// Rank the classes of a model for one image.
    Predict(PredictArgs),
    /// Run experiments I-III over the configured datasets.
    Bench(BenchArgs),
    /// Dump a model as JSON (debugging only; never read back).
    ExportJson(ExportArgs),
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Input height after resizing.
    #[arg(long, default_value_t = 112)]
    rows: usize,
    /// Input width after resizing.
    #[arg(long, default_value_t = 96)]
    cols: usize,
    /// Skip the Haar LL band and work at full resolution.
    #[arg(long)]
    no_dwt: bool,
    /// Orientation bins.
    #[arg(long, default_value_t = 9)]
    bins: usize,
    /// Cell side in pixels.
    #[arg(long, default_value_t = 4)]
    cell: usize,
    /// Block side in cells.
    #[arg(long, default_value_t = 2)]
    block: usize,
    /// Eigenvectors kept per bin.
    #[arg(long, default_value_t = 10)]
    dims: usize,
    /// Plain 2DPCA on the working image instead of orientation layers.
    #[arg(long)]
    raw: bool,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            rows: self.rows,
            cols: self.cols,
            dwt: !self.no_dwt,
            features: if self.raw { FeatureKind::Raw } else { FeatureKind::Hog },
            hog: HogConfig { bins: self.bins, cell: self.cell, block: self.block, ..HogConfig::default() },
            dims: self.dims,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset root directory.
    #[arg(long)]
    data: PathBuf,
    /// orl, umist, jaffe or flat.
    #[arg(long, default_value = "orl")]
    layout: Layout,
    /// first<k>, loo<i>, all (train and test on everything), or loo (full sweep).
    #[arg(long, default_value = "first5")]
    protocol: Protocol,
    /// Renumber images within each class with this seed before splitting.
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Query image (PGM).
    #[arg(long)]
    image: PathBuf,
    /// Number of ranked labels to print.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// ORL root (default: $HOGFACE_DATA/orl).
    #[arg(long)]
    orl: Option<PathBuf>,
    /// UMIST root (default: $HOGFACE_DATA/umist).
    #[arg(long)]
    umist: Option<PathBuf>,
    /// JAFFE root (default: $HOGFACE_DATA/jaffe).
    #[arg(long)]
    jaffe: Option<PathBuf>,
    /// Comma-separated experiments.
    #[arg(long, value_delimiter = ',', default_value = "I,II,III")]
    experiments: Vec<String>,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Add a plain 2DPCA row for every experiment.
    #[arg(long)]
    baseline: bool,
    /// Renumber images within each class with this seed (rows are tagged).
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Output path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Protocol {
    Split(SplitProtocol),
    All,
    Sweep,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Protocol::All),
            "loo" | "leave-one-out" => Ok(Protocol::Sweep),
            _ => s.parse().map(Protocol::Split).map_err(|e: hogface::Error| e.to_string()),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Split(p) => write!(f, "{p}"),
            Protocol::All => f.write_str("all"),
            Protocol::Sweep => f.write_str("leave-one-out"),
        }
    }
}

impl Protocol {
    fn experiment(&self) -> Option<Experiment> {
        match self {
            Protocol::Split(SplitProtocol::FirstK(5)) => Some(Experiment::I),
            Protocol::Split(SplitProtocol::FirstK(3)) => Some(Experiment::II),
            Protocol::Sweep => Some(Experiment::III),
            _ => None,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Input(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Usage(_) | CliError::Input(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<hogface::Error> for CliError {
    fn from(e: hogface::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<hogface::ModelError> for CliError {
    fn from(e: hogface::ModelError) -> Self {
        hogface::Error::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command, out, err)),
            Err(e) => Err(CliError::Internal(e.to_string())),
        },
        None => dispatch(cli.command, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.code()
        }
    }
}

fn dispatch(command: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult {
    match command {
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::ExportJson(a) => cmd_export(a, out),
    }
}

fn load(data: &DataArgs) -> CliResult<Vec<LabeledImage>> {
    let mut images = load_dataset(&data.data, data.layout)?;
    if let Some(seed) = data.shuffle_seed {
        shuffle_within_classes(&mut images, seed);
    }
    Ok(images)
}

fn dataset_name(layout: Layout, root: &Path) -> String {
    match layout {
        Layout::Flat => root
            .file_name()
            .map(|n| n.to_string_lossy().to_lowercase())
            .unwrap_or_else(|| "flat".into()),
        other => other.to_string(),
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let config = a.pipeline.config();
    config.validate()?;
    let images = load(&a.data)?;
    let train: Vec<&LabeledImage> = match a.data.protocol {
        Protocol::Split(p) => split(&images, p)?.train,
        Protocol::All => images.iter().collect(),
        Protocol::Sweep => {
            return Err(CliError::Usage(
                "train needs a single split; use first<k>, loo<i> or all".into(),
            ))
        }
    };
    let start = Instant::now();
    let model = Model::train_images(config, &train)?;
    let secs = start.elapsed().as_secs_f64();
    let bytes = save_model_file(&model, &a.out)?;
    writeln!(out, "feature shape {}", config.feature_shape())?;
    writeln!(out, "projected shape {}", config.projected_shape())?;
    writeln!(
        out,
        "trained {} on {} images of {} classes in {secs:.3}s",
        config.method_name(),
        model.gallery.len(),
        model.class_count()
    )?;
    writeln!(out, "wrote {} ({bytes} bytes)", a.out.display())?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let model = load_model_file(&a.model)?;
    let images = load(&a.data)?;
    let name = dataset_name(a.data.layout, &a.data.data);
    let protocol = a.data.protocol;
    let mut row = if protocol == Protocol::Sweep {
        // every fold retrains with the model's configuration
        run_experiment(&name, &images, &model.config, Experiment::III)?
    } else {
        let test: Vec<&LabeledImage> = match protocol {
            Protocol::Split(p) => split(&images, p)?.test,
            _ => images.iter().collect(),
        };
        let enrolled: std::collections::BTreeSet<&str> =
            model.gallery.iter().map(|e| e.label.as_str()).collect();
        if let Some(im) = test.iter().find(|im| !enrolled.contains(im.label.as_str())) {
            return Err(CliError::Input(format!(
                "model/dataset mismatch: class {} ({}) is not enrolled in {}",
                im.label,
                im.path.display(),
                a.model.display()
            )));
        }
        let eval = evaluate_images(&model, &test)?;
        let config = model.config;
        BenchRow {
            dataset: name.clone(),
            method: config.method_name().into(),
            experiment: protocol.experiment().map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
            protocol: protocol.to_string(),
            feature_shape: config.feature_shape(),
            dims: config.dims,
            classes: class_sizes(&images).len(),
            train_images: model.gallery.len(),
            test_images: eval.total,
            correct: eval.correct,
            accuracy: eval.accuracy(),
            target_accuracy: None,
            model_bytes: encode_model(&model).len(),
            top_confusions: eval.top_confusions(3),
            train_seconds: 0.0,
            test_ms_per_image: if eval.total == 0 {
                0.0
            } else {
                1e3 * eval.test_seconds / eval.total as f64
            },
        }
    };
    row.target_accuracy = match (model.config.features, protocol.experiment()) {
        (FeatureKind::Hog, Some(exp)) => reference_accuracy(&name, exp),
        _ => None,
    };
    if a.data.shuffle_seed.is_some() {
        row.dataset = format!("{}[shuffled]", row.dataset);
    }
    let rows = [row];
    write!(out, "{}", format_table(&rows))?;
    if let Some(path) = &a.csv {
        write_csv(&rows, fs::File::create(path)?)?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> CliResult {
    if a.top == 0 {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    let model = load_model_file(&a.model)?;
    let bytes = fs::read(&a.image)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.image.display())))?;
    let image = decode_pgm(&bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.image.display())))?;
    for r in model.rank_image(&image, a.top)? {
        writeln!(out, "{} {:.6} {} {:.6}", r.label, r.score, r.votes, r.total_distance)?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult {
    let experiments: Vec<Experiment> = a
        .experiments
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Experiment>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<_>>()?;
    if experiments.is_empty() {
        return Err(CliError::Usage("--experiments is empty".into()));
    }
    let config = a.pipeline.config();
    config.validate()?;
    let env_root = std::env::var_os(DATA_ENV).map(PathBuf::from);
    let pick = |flag: &Option<PathBuf>, name: &str| {
        flag.clone().or_else(|| {
            env_root.as_ref().map(|r| r.join(name)).filter(|p| p.is_dir())
        })
    };
    let datasets: Vec<(&str, Layout, PathBuf)> = [
        ("orl", Layout::Orl, pick(&a.orl, "orl")),
        ("umist", Layout::Umist, pick(&a.umist, "umist")),
        ("jaffe", Layout::Jaffe, pick(&a.jaffe, "jaffe")),
    ]
    .into_iter()
    .filter_map(|(n, l, p)| p.map(|p| (n, l, p)))
    .collect();
    if datasets.is_empty() {
        return Err(CliError::Usage(format!(
            "no datasets: pass --orl/--umist/--jaffe or set {DATA_ENV}"
        )));
    }
    let mut configs = vec![config];
    if a.baseline {
        configs.push(PipelineConfig { features: FeatureKind::Raw, ..config });
    }

    let mut rows = Vec::new();
    let mut failures = 0;
    for (name, layout, root) in &datasets {
        let mut images = match load_dataset(root, *layout) {
            Ok(images) => images,
            Err(e) => {
                writeln!(err, "{name}: {e}")?;
                failures += 1;
                continue;
            }
        };
        if let Some(seed) = a.shuffle_seed {
            shuffle_within_classes(&mut images, seed);
        }
        for exp in &experiments {
            for cfg in &configs {
                match run_experiment(name, &images, cfg, *exp) {
                    Ok(mut row) => {
                        if let Some(seed) = a.shuffle_seed {
                            row.dataset = format!("{name}[shuffle={seed}]");
                        }
                        rows.push(row);
                    }
                    Err(e) => {
                        writeln!(err, "{name} {exp} {}: {e}", cfg.method_name())?;
                        failures += 1;
                    }
                }
            }
        }
    }
    write!(out, "{}", format_table(&rows))?;
    if let Some(path) = &a.csv {
        write_csv(&rows, fs::File::create(path)?)?;
    }
    if failures > 0 {
        return Err(CliError::Input(format!("{failures} benchmark(s) failed")));
    }
    Ok(())
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> CliResult {
    let model = load_model_file(&a.model)?;
    let text = serde_json::to_string_pretty(&export_json(&model))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    match &a.out {
        Some(path) => fs::write(path, text + "\n")?,
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}
