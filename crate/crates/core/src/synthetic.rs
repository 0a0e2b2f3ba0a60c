//! Deterministic synthetic "faces" for tests, demos and smoke runs when no
//! real dataset is at hand.
//!
//! Each identity is a bright oval on a dark background carrying a handful of
//! identity-specific Gaussian blobs. Each capture of an identity shifts the
//! pattern by up to two pixels, changes the gain, jitters blob strength and
//! adds pixel noise. Samples are rounded to integers in `0..=255` so they
//! survive an 8-bit PGM round trip unchanged.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::LabeledImage;
use crate::imgio::{encode_pgm, GrayImage};

#[derive(Clone, Copy, Debug)]
pub struct SyntheticFaces {
    pub persons: usize,
    pub images_per_person: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

impl Default for SyntheticFaces {
    /// ORL-shaped: 40 identities x 10 captures of 112x92.
    fn default() -> Self {
        SyntheticFaces { persons: 40, images_per_person: 10, rows: 112, cols: 92, seed: 0x5eed }
    }
}

struct Blob {
    row: f64,
    col: f64,
    sigma: f64,
    amplitude: f64,
}

struct Identity {
    skin: f64,
    oval: (f64, f64),
    blobs: Vec<Blob>,
}

impl SyntheticFaces {
    pub fn label(&self, person: usize) -> String {
        format!("p{:02}", person + 1)
    }

    fn identity(&self, person: usize) -> Identity {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (person as u64).wrapping_mul(0x9e37_79b9));
        let (h, w) = (self.rows as f64, self.cols as f64);
        let blobs = (0..7)
            .map(|_| Blob {
                row: rng.random_range(0.2..0.8) * h,
                col: rng.random_range(0.2..0.8) * w,
                sigma: rng.random_range(0.04..0.1) * w,
                amplitude: rng.random_range(40.0..90.0) * if rng.random_bool(0.6) { -1.0 } else { 1.0 },
            })
            .collect();
        Identity {
            skin: rng.random_range(130.0..180.0),
            oval: (rng.random_range(0.36..0.46) * h, rng.random_range(0.34..0.44) * w),
            blobs,
        }
    }

    /// Capture `index` (1-based) of `person` (0-based).
    pub fn render(&self, person: usize, index: usize) -> GrayImage {
        let id = self.identity(person);
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed.wrapping_add(0x51_7cc1_b727_220a) ^ ((person * 1000 + index) as u64),
        );
        let dy = rng.random_range(-2.0..=2.0);
        let dx = rng.random_range(-2.0..=2.0);
        let gain = rng.random_range(0.85..1.15);
        let jitter: Vec<f64> = id.blobs.iter().map(|_| rng.random_range(0.9..1.1)).collect();
        let (h, w) = (self.rows as f64, self.cols as f64);
        let (cy, cx) = (h / 2.0 + dy, w / 2.0 + dx);
        let mut data = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (y, x) = (r as f64, c as f64);
                let q = ((y - cy) / id.oval.0).powi(2) + ((x - cx) / id.oval.1).powi(2);
                let mut v = if q <= 1.0 { id.skin } else { 35.0 };
                for (blob, j) in id.blobs.iter().zip(&jitter) {
                    let d2 = (y - blob.row - dy).powi(2) + (x - blob.col - dx).powi(2);
                    v += blob.amplitude * j * (-d2 / (2.0 * blob.sigma * blob.sigma)).exp();
                }
                v = v * gain + rng.random_range(-4.0..4.0);
                data.push(v.round().clamp(0.0, 255.0));
            }
        }
        GrayImage::new(self.rows, self.cols, data).expect("dims are consistent")
    }

    /// Every capture of every identity, sorted by (label, index).
    pub fn images(&self) -> Vec<LabeledImage> {
        (0..self.persons)
            .flat_map(|p| {
                (1..=self.images_per_person).map(move |i| LabeledImage {
                    label: self.label(p),
                    index_within_class: i,
                    image: self.render(p, i),
                    path: PathBuf::from(format!("synthetic/{}/{i}.pgm", self.label(p))),
                })
            })
            .collect()
    }

    /// Writes `<label>.<index>.pgm` files into `dir` (the `flat` layout).
    pub fn write_flat(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for im in self.images() {
            let name = format!("{}.{:03}.pgm", im.label, im.index_within_class);
            fs::write(dir.join(name), encode_pgm(&im.image))?;
        }
        Ok(())
    }

    /// Writes `<label>/<index>.pgm` files into `dir` (the `orl` layout).
    pub fn write_orl(&self, dir: &Path) -> io::Result<()> {
        for im in self.images() {
            let sub = dir.join(&im.label);
            fs::create_dir_all(&sub)?;
            fs::write(sub.join(format!("{}.pgm", im.index_within_class)), encode_pgm(&im.image))?;
        }
        Ok(())
    }
}
