//! End-to-end recognizer: preprocessing, layer extraction, per-bin bases
//! and the enrolled gallery.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_projected, project_layers, GalleryEntry, MatchResult, RankedLabel};
use crate::datasets::{LabeledImage, Labeled};
use crate::error::{Error, Result};
use crate::hog2d::{extract, HogConfig, HogLayers};
use crate::imgio::{haar_dwt_ll, resize_to, GrayImage};
use crate::pca2d::{train_bases, ProjectionBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// One layer per orientation bin.
    Hog,
    /// The working image itself as a single layer (plain 2DPCA baseline).
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Every input is resized to `rows x cols` before anything else.
    pub rows: usize,
    pub cols: usize,
    /// Work on the Haar LL band (half size) instead of the resized image.
    pub dwt: bool,
    pub features: FeatureKind,
    pub hog: HogConfig,
    /// Eigenvectors kept per bin.
    pub dims: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rows: 112,
            cols: 96,
            dwt: true,
            features: FeatureKind::Hog,
            hog: HogConfig::default(),
            dims: 10,
        }
    }
}

impl PipelineConfig {
    pub fn working_dims(&self) -> (usize, usize) {
        if self.dwt {
            (self.rows / 2, self.cols / 2)
        } else {
            (self.rows, self.cols)
        }
    }

    pub fn layer_count(&self) -> usize {
        match self.features {
            FeatureKind::Hog => self.hog.bins,
            FeatureKind::Raw => 1,
        }
    }

    pub fn layer_dims(&self) -> (usize, usize) {
        let (r, c) = self.working_dims();
        match self.features {
            FeatureKind::Hog => (r / self.hog.cell, c / self.hog.cell),
            FeatureKind::Raw => (r, c),
        }
    }

    /// `rows x cols x layers` of the extracted (unprojected) features.
    pub fn feature_shape(&self) -> String {
        let (r, c) = self.layer_dims();
        format!("{r}x{c}x{}", self.layer_count())
    }

    /// `rows x dims x layers` of a stored gallery entry.
    pub fn projected_shape(&self) -> String {
        format!("{}x{}x{}", self.layer_dims().0, self.dims, self.layer_count())
    }

    pub fn method_name(&self) -> &'static str {
        match self.features {
            FeatureKind::Hog => "2dhog-2dpca",
            FeatureKind::Raw => "2dpca",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::arg(format!("input size {}x{} too small", self.rows, self.cols)));
        }
        if self.dwt && (!self.rows.is_multiple_of(2) || !self.cols.is_multiple_of(2)) {
            return Err(Error::arg(format!(
                "DWT needs even input size, got {}x{}",
                self.rows, self.cols
            )));
        }
        let (wr, wc) = self.working_dims();
        if wr < 2 || wc < 2 {
            return Err(Error::arg(format!("working image {wr}x{wc} too small")));
        }
        if self.features == FeatureKind::Hog {
            self.hog.cell_grid(wr, wc)?;
        }
        let layer_cols = self.layer_dims().1;
        if self.dims == 0 || self.dims > layer_cols {
            return Err(Error::arg(format!(
                "dims must be in 1..={layer_cols} for layers of width {layer_cols}, got {}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Resize to the configured input size, then take the LL band if enabled.
    pub fn preprocess(&self, img: &GrayImage) -> Result<GrayImage> {
        let resized = resize_to(img, self.rows, self.cols)?;
        if self.dwt {
            haar_dwt_ll(&resized)
        } else {
            Ok(resized)
        }
    }

    pub fn layers(&self, img: &GrayImage) -> Result<HogLayers> {
        let work = self.preprocess(img)?;
        match self.features {
            FeatureKind::Hog => extract(&work, &self.hog),
            FeatureKind::Raw => HogLayers::from_layers(vec![work.into_array()]),
        }
    }
}

/// An image reduced to its feature layers, with its provenance.
#[derive(Clone, Debug)]
pub struct Sample {
    pub label: String,
    pub index_within_class: usize,
    pub source_id: String,
    pub layers: HogLayers,
}

impl Labeled for Sample {
    fn label(&self) -> &str {
        &self.label
    }
    fn index_within_class(&self) -> usize {
        self.index_within_class
    }
}

/// Extracts layers for every image, in parallel, preserving input order.
pub fn extract_samples<'a, I>(config: &PipelineConfig, images: I) -> Result<Vec<Sample>>
where
    I: IntoParallelIterator<Item = &'a LabeledImage>,
    I::Iter: IndexedParallelIterator,
{
    config.validate()?;
    images
        .into_par_iter()
        .map(|im| {
            Ok(Sample {
                label: im.label.clone(),
                index_within_class: im.index_within_class,
                source_id: im.path.display().to_string(),
                layers: config.layers(&im.image)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: PipelineConfig,
    pub bases: Vec<ProjectionBasis>,
    pub gallery: Vec<GalleryEntry>,
}

impl Model {
    /// Trains bases on `training` and enrolls every training sample.
    pub fn train(config: PipelineConfig, training: &[&Sample]) -> Result<Model> {
        config.validate()?;
        let layers: Vec<HogLayers> = training.iter().map(|s| s.layers.clone()).collect();
        if let Some(s) = training.iter().find(|s| s.layers.bins() != config.layer_count()) {
            return Err(Error::arg(format!(
                "sample {} has {} layers, config expects {}",
                s.source_id,
                s.layers.bins(),
                config.layer_count()
            )));
        }
        let bases = train_bases(&layers, config.dims)?;
        let mut model = Model { config, bases, gallery: Vec::with_capacity(training.len()) };
        let projected: Vec<Vec<Array2<f64>>> = training
            .par_iter()
            .map(|s| model.project(&s.layers))
            .collect::<Result<_>>()?;
        model.gallery = training
            .iter()
            .zip(projected)
            .map(|(s, features)| GalleryEntry {
                label: s.label.clone(),
                source_id: s.source_id.clone(),
                features,
            })
            .collect();
        Ok(model)
    }

    /// Extracts features and trains in one step.
    pub fn train_images(config: PipelineConfig, images: &[&LabeledImage]) -> Result<Model> {
        let samples = extract_samples(&config, images.to_vec())?;
        let refs: Vec<&Sample> = samples.iter().collect();
        Model::train(config, &refs)
    }

    pub fn project(&self, layers: &HogLayers) -> Result<Vec<Array2<f64>>> {
        project_layers(layers, &self.bases)
    }

    pub fn features_of(&self, img: &GrayImage) -> Result<Vec<Array2<f64>>> {
        self.project(&self.config.layers(img)?)
    }

    pub fn enroll(&mut self, label: &str, source_id: &str, img: &GrayImage) -> Result<()> {
        let features = self.features_of(img)?;
        self.gallery.push(GalleryEntry {
            label: label.to_string(),
            source_id: source_id.to_string(),
            features,
        });
        Ok(())
    }

    pub fn classify_layers(&self, layers: &HogLayers) -> Result<MatchResult> {
        classify_projected(&self.project(layers)?, &self.gallery)
    }

    pub fn classify_image(&self, img: &GrayImage) -> Result<MatchResult> {
        self.classify_layers(&self.config.layers(img)?)
    }

    pub fn rank_image(&self, img: &GrayImage, k: usize) -> Result<Vec<RankedLabel>> {
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        Ok(self.classify_image(img)?.ranked(k))
    }

    /// Checks that bases and gallery agree with the config.
    pub fn check_consistency(&self) -> Result<()> {
        self.config.validate()?;
        let bins = self.config.layer_count();
        let (layer_rows, layer_cols) = self.config.layer_dims();
        let d = self.config.dims;
        if self.bases.len() != bins {
            return Err(Error::state(format!("{} bases for {bins} layers", self.bases.len())));
        }
        for (b, basis) in self.bases.iter().enumerate() {
            if basis.vectors.dim() != (layer_cols, d) || basis.eigenvalues.len() != d {
                return Err(Error::state(format!(
                    "basis {b} is {:?} with {} eigenvalues, expected ({layer_cols}, {d})",
                    basis.vectors.dim(),
                    basis.eigenvalues.len()
                )));
            }
        }
        for (i, entry) in self.gallery.iter().enumerate() {
            if entry.features.len() != bins {
                return Err(Error::state(format!(
                    "gallery entry {i} has {} feature matrices, expected {bins}",
                    entry.features.len()
                )));
            }
            if let Some(b) = entry.features.iter().position(|f| f.dim() != (layer_rows, d)) {
                return Err(Error::state(format!(
                    "gallery entry {i}, bin {b}: features are {:?}, expected ({layer_rows}, {d})",
                    entry.features[b].dim()
                )));
            }
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        let mut labels: Vec<&str> = self.gallery.iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    }
}

/// Outcome of classifying a labeled test set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub total: usize,
    pub correct: usize,
    /// (true label, predicted label) -> count, errors only.
    pub confusions: BTreeMap<(String, String), usize>,
    /// Wall time spent per test image, summed.
    pub test_seconds: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn record(&mut self, truth: &str, predicted: &str) {
        self.total += 1;
        if truth == predicted {
            self.correct += 1;
        } else {
            *self
                .confusions
                .entry((truth.to_string(), predicted.to_string()))
                .or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: Evaluation) {
        self.total += other.total;
        self.correct += other.correct;
        self.test_seconds += other.test_seconds;
        for (k, v) in other.confusions {
            *self.confusions.entry(k).or_insert(0) += v;
        }
    }

    /// Most frequent confusions as `truth->predicted:count`, at most `n`.
    pub fn top_confusions(&self, n: usize) -> String {
        let mut pairs: Vec<_> = self.confusions.iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        pairs
            .into_iter()
            .take(n)
            .map(|((t, p), c)| format!("{t}->{p}:{c}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Classifies raw test images; timing covers preprocessing, extraction and
/// matching. Results are aggregated in input order.
pub fn evaluate_images(model: &Model, test: &[&LabeledImage]) -> Result<Evaluation> {
    let outcomes: Vec<(String, f64)> = test
        .par_iter()
        .map(|im| {
            let start = Instant::now();
            let m = model.classify_image(&im.image)?;
            Ok((m.label, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let mut eval = Evaluation::default();
    for (im, (pred, secs)) in test.iter().zip(outcomes) {
        eval.record(&im.label, &pred);
        eval.test_seconds += secs;
    }
    Ok(eval)
}

/// Classifies pre-extracted samples.
pub fn evaluate_samples(model: &Model, test: &[&Sample]) -> Result<Evaluation> {
    let outcomes: Vec<(String, f64)> = test
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let m = model.classify_layers(&s.layers)?;
            Ok((m.label, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let mut eval = Evaluation::default();
    for (s, (pred, secs)) in test.iter().zip(outcomes) {
        eval.record(&s.label, &pred);
        eval.test_seconds += secs;
    }
    Ok(eval)
}
