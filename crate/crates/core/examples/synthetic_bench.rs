//! Runs experiments I-III on an ORL-shaped synthetic dataset and prints the table.

use hogface::bench::{run_experiment, Experiment, format_table};
use hogface::synthetic::SyntheticFaces;
use hogface::{PipelineConfig, FeatureKind};
fn main() {
    let imgs = SyntheticFaces::default().images();
    let cfg = PipelineConfig::default();
    let mut rows = vec![];
    for e in Experiment::ALL { rows.push(run_experiment("synthetic", &imgs, &cfg, e).unwrap()); }
    let raw = PipelineConfig { features: FeatureKind::Raw, ..cfg };
    rows.push(run_experiment("synthetic", &imgs, &raw, Experiment::I).unwrap());
    print!("{}", format_table(&rows));
}
