//! Face recognition with two-dimensional PCA applied per orientation bin of a
//! layered histogram of oriented gradients.
//!
//! The recognizer resizes every face to 112x96, keeps the Haar LL band
//! (56x48), computes orientation histograms over 4x4-pixel cells with
//! non-overlapping 2x2-cell block normalization, and keeps each orientation
//! bin as its own 14x12 matrix. Each bin gets its own 2DPCA basis; at query
//! time every bin votes for its nearest gallery entry and the majority wins.

pub mod bench;
pub mod classifier;
pub mod datasets;
pub mod error;
pub mod hog2d;
pub mod imgio;
pub mod modelstore;
pub mod pca2d;
pub mod pipeline;
pub mod synthetic;

pub use classifier::{classify, rank, GalleryEntry, MatchResult, RankedLabel};
pub use datasets::{load_dataset, split, LabeledImage, Layout, SplitProtocol};
pub use error::{Error, Result};
pub use hog2d::{extract, HogConfig, HogLayers};
pub use imgio::{decode_pgm, encode_pgm, GrayImage};
pub use modelstore::{load_model_file, save_model_file, ModelError};
pub use pca2d::ProjectionBasis;
pub use pipeline::{FeatureKind, Model, PipelineConfig, Sample};
