//! Benchmark dataset loaders and train/test split protocols.
//!
//! Layouts:
//! - `orl`: one subdirectory per subject (`s1` .. `s40`), files `1.pgm` ..
//!   `10.pgm`; the numeric stem is the index within the class.
//! - `umist`: one subdirectory per subject; every `.pgm` below it (recursively)
//!   belongs to that subject, indexed in sorted path order.
//! - `jaffe` and `flat`: PGM files directly in the root; the label is the part
//!   of the file name before the first `.` (so `KA.AN1.39.pgm` is `KA`),
//!   indexed in sorted file-name order within each label.
//!
//! Output is always sorted by (label, index), independent of directory
//! listing order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgio::{decode_pgm, GrayImage};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub label: String,
    /// 1-based position within the class.
    pub index_within_class: usize,
    pub image: GrayImage,
    pub path: PathBuf,
}

/// Anything that carries a class label and a 1-based index within its class.
pub trait Labeled {
    fn label(&self) -> &str;
    fn index_within_class(&self) -> usize;
}

impl Labeled for LabeledImage {
    fn label(&self) -> &str {
        &self.label
    }
    fn index_within_class(&self) -> usize {
        self.index_within_class
    }
}

impl<T: Labeled> Labeled for &T {
    fn label(&self) -> &str {
        (*self).label()
    }
    fn index_within_class(&self) -> usize {
        (*self).index_within_class()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Orl,
    Umist,
    Jaffe,
    Flat,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "orl" => Ok(Layout::Orl),
            "umist" => Ok(Layout::Umist),
            "jaffe" => Ok(Layout::Jaffe),
            "flat" => Ok(Layout::Flat),
            other => Err(Error::arg(format!(
                "unknown layout {other:?} (expected orl, umist, jaffe or flat)"
            ))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Orl => "orl",
            Layout::Umist => "umist",
            Layout::Jaffe => "jaffe",
            Layout::Flat => "flat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitProtocol {
    /// Per class, indices `1..=k` train and the rest test.
    FirstK(usize),
    /// Per class, the image with this index tests and the rest train.
    LeaveOneOut(usize),
}

impl FromStr for SplitProtocol {
    type Err = Error;

    /// Accepts `first<k>` and `loo<i>`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |digits: &str| {
            digits
                .parse::<usize>()
                .map_err(|_| Error::arg(format!("bad protocol {s:?}")))
        };
        if let Some(k) = s.strip_prefix("first") {
            Ok(SplitProtocol::FirstK(parse(k)?))
        } else if let Some(i) = s.strip_prefix("loo") {
            Ok(SplitProtocol::LeaveOneOut(parse(i)?))
        } else {
            Err(Error::arg(format!("bad protocol {s:?} (expected first<k> or loo<i>)")))
        }
    }
}

impl fmt::Display for SplitProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitProtocol::FirstK(k) => write!(f, "first{k}"),
            SplitProtocol::LeaveOneOut(i) => write!(f, "loo{i}"),
        }
    }
}

fn load_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Load { path: path.to_path_buf(), message: message.into() }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| load_err(dir, e.to_string()))?;
    let mut paths = Vec::new();
    for entry in entries {
        paths.push(entry.map_err(|e| load_err(dir, e.to_string()))?.path());
    }
    paths.sort();
    Ok(paths)
}

fn is_pgm(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn collect_pgms(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for p in read_dir_sorted(dir)? {
        if p.is_dir() {
            collect_pgms(&p, out)?;
        } else if is_pgm(&p) {
            out.push(p);
        }
    }
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `(label, index, path)` triples for a layout, before decoding.
fn enumerate(root: &Path, layout: Layout) -> Result<Vec<(String, usize, PathBuf)>> {
    let mut found = Vec::new();
    match layout {
        Layout::Orl => {
            for subject in read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()) {
                let label = file_name(&subject);
                for file in read_dir_sorted(&subject)?.into_iter().filter(|p| is_pgm(p)) {
                    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                    let index = stem
                        .parse::<usize>()
                        .ok()
                        .filter(|&i| i >= 1)
                        .ok_or_else(|| load_err(&file, "expected a numeric file name like 3.pgm"))?;
                    found.push((label.clone(), index, file));
                }
            }
        }
        Layout::Umist => {
            for subject in read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()) {
                let label = file_name(&subject);
                let mut files = Vec::new();
                collect_pgms(&subject, &mut files)?;
                for (i, file) in files.into_iter().enumerate() {
                    found.push((label.clone(), i + 1, file));
                }
            }
        }
        Layout::Jaffe | Layout::Flat => {
            let mut by_label: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
            for file in read_dir_sorted(root)?.into_iter().filter(|p| is_pgm(p)) {
                let name = file_name(&file);
                let label = name.split('.').next().unwrap_or("").to_string();
                if label.is_empty() {
                    return Err(load_err(&file, "file name has no label before the first '.'"));
                }
                by_label.entry(label).or_default().push(file);
            }
            for (label, files) in by_label {
                for (i, file) in files.into_iter().enumerate() {
                    found.push((label.clone(), i + 1, file));
                }
            }
        }
    }
    Ok(found)
}

/// Loads and decodes every image of a dataset.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<LabeledImage>> {
    if !root.is_dir() {
        return Err(load_err(root, "dataset root does not exist or is not a directory"));
    }
    let found = enumerate(root, layout)?;
    if found.is_empty() {
        return Err(load_err(root, format!("no PGM images found for layout {layout}")));
    }
    let mut images: Vec<LabeledImage> = found
        .into_par_iter()
        .map(|(label, index_within_class, path)| {
            let bytes = fs::read(&path).map_err(|e| load_err(&path, e.to_string()))?;
            let image = decode_pgm(&bytes).map_err(|e| load_err(&path, e.to_string()))?;
            Ok(LabeledImage { label, index_within_class, image, path })
        })
        .collect::<Result<_>>()?;
    images.sort_by(|a, b| {
        a.label.cmp(&b.label).then(a.index_within_class.cmp(&b.index_within_class))
    });
    if let Some(w) = images.windows(2).find(|w| {
        w[0].label == w[1].label && w[0].index_within_class == w[1].index_within_class
    }) {
        return Err(load_err(
            &w[1].path,
            format!("duplicate index {} in class {}", w[1].index_within_class, w[1].label),
        ));
    }
    Ok(images)
}

/// Class sizes keyed by label.
pub fn class_sizes<T: Labeled>(items: &[T]) -> BTreeMap<String, usize> {
    let mut sizes = BTreeMap::new();
    for it in items {
        *sizes.entry(it.label().to_string()).or_insert(0) += 1;
    }
    sizes
}

pub struct Split<'a, T> {
    pub train: Vec<&'a T>,
    pub test: Vec<&'a T>,
}

/// Partitions items per class according to the protocol.
pub fn split<T: Labeled>(items: &[T], protocol: SplitProtocol) -> Result<Split<'_, T>> {
    let mut max_index: BTreeMap<&str, usize> = BTreeMap::new();
    for it in items {
        let e = max_index.entry(it.label()).or_insert(0);
        *e = (*e).max(it.index_within_class());
    }
    for (label, size) in class_sizes(items) {
        match protocol {
            SplitProtocol::FirstK(k) => {
                if k == 0 || k >= size {
                    return Err(Error::arg(format!(
                        "protocol {protocol} invalid for class {label} with {size} images"
                    )));
                }
            }
            SplitProtocol::LeaveOneOut(i) => {
                let present = items
                    .iter()
                    .any(|it| it.label() == label && it.index_within_class() == i);
                if size < 2 || !present {
                    return Err(Error::arg(format!(
                        "protocol {protocol} invalid for class {label} with {size} images"
                    )));
                }
            }
        }
    }
    let mut out = Split { train: Vec::new(), test: Vec::new() };
    for it in items {
        let is_train = match protocol {
            SplitProtocol::FirstK(k) => {
                // rank within class, so gaps in numbering still give k images
                let rank = items
                    .iter()
                    .filter(|o| {
                        o.label() == it.label() && o.index_within_class() <= it.index_within_class()
                    })
                    .count();
                rank <= k
            }
            SplitProtocol::LeaveOneOut(i) => it.index_within_class() != i,
        };
        if is_train {
            out.train.push(it);
        } else {
            out.test.push(it);
        }
    }
    Ok(out)
}

/// Leave-one-out folds: one per item, holding out exactly that item.
pub fn loo_sweep<T: Labeled>(items: &[T]) -> Result<impl Iterator<Item = Split<'_, T>>> {
    if let Some((label, _)) = class_sizes(items).into_iter().find(|(_, n)| *n < 2) {
        return Err(Error::arg(format!("class {label} has a single image; leave-one-out needs 2")));
    }
    if items.is_empty() {
        return Err(Error::arg("no images"));
    }
    Ok((0..items.len()).map(move |held| Split {
        train: items.iter().enumerate().filter(|(i, _)| *i != held).map(|(_, it)| it).collect(),
        test: vec![&items[held]],
    }))
}

/// Randomly renumbers images within each class (seeded), then restores the
/// canonical sort. Used for robustness studies of the first-k protocols.
pub fn shuffle_within_classes(images: &mut [LabeledImage], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, im) in images.iter().enumerate() {
        by_label.entry(im.label.clone()).or_default().push(i);
    }
    for positions in by_label.values() {
        let mut indices: Vec<usize> =
            positions.iter().map(|&p| images[p].index_within_class).collect();
        indices.shuffle(&mut rng);
        for (&p, idx) in positions.iter().zip(indices) {
            images[p].index_within_class = idx;
        }
    }
    images.sort_by(|a, b| {
        a.label.cmp(&b.label).then(a.index_within_class.cmp(&b.index_within_class))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::encode_pgm;

    struct Item(&'static str, usize);
    impl Labeled for Item {
        fn label(&self) -> &str {
            self.0
        }
        fn index_within_class(&self) -> usize {
            self.1
        }
    }

    fn grid(classes: &[&'static str], per: usize) -> Vec<Item> {
        classes.iter().flat_map(|c| (1..=per).map(move |i| Item(c, i))).collect()
    }

    fn write_pgm(path: &Path, value: f64) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, encode_pgm(&GrayImage::filled(4, 3, value).unwrap())).unwrap();
    }

    #[test]
    fn first_k_counts() {
        let items = grid(&["a", "b", "c", "d"], 10);
        let s = split(&items, SplitProtocol::FirstK(5)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (20, 20));
        assert!(s.train.iter().all(|it| it.1 <= 5));
        let s = split(&items, SplitProtocol::FirstK(3)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (12, 28));
    }

    #[test]
    fn leave_one_out_split() {
        let items = grid(&["a", "b", "c"], 4);
        let s = split(&items, SplitProtocol::LeaveOneOut(1)).unwrap();
        assert_eq!(s.test.len(), 3);
        assert!(s.test.iter().all(|it| it.1 == 1));
        assert_eq!(s.train.len(), 9);
    }

    #[test]
    fn invalid_protocol_names_class() {
        let mut items = grid(&["a"], 5);
        items.extend(grid(&["small"], 2));
        match split(&items, SplitProtocol::FirstK(3)) {
            Err(Error::Argument(m)) => assert!(m.contains("small"), "{m}"),
            _ => panic!("expected argument error"),
        }
        assert!(split(&items, SplitProtocol::FirstK(0)).is_err());
        assert!(split(&items, SplitProtocol::LeaveOneOut(4)).is_err());
    }

    #[test]
    fn loo_enumeration() {
        let items = grid(&["a", "b"], 2);
        let folds: Vec<_> = loo_sweep(&items).unwrap().collect();
        assert_eq!(folds.len(), 4);
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 3));
        let singleton = grid(&["a"], 1);
        assert!(loo_sweep(&singleton).is_err());
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("first5".parse::<SplitProtocol>().unwrap(), SplitProtocol::FirstK(5));
        assert_eq!("loo2".parse::<SplitProtocol>().unwrap(), SplitProtocol::LeaveOneOut(2));
        assert!("firstx".parse::<SplitProtocol>().is_err());
        assert!("half".parse::<SplitProtocol>().is_err());
        assert_eq!(SplitProtocol::FirstK(3).to_string(), "first3");
        assert_eq!("ORL".parse::<Layout>().unwrap(), Layout::Orl);
        assert!("lfw".parse::<Layout>().is_err());
    }

    #[test]
    fn loads_orl_layout_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["s2", "s1", "s10"] {
            for i in [10, 2, 1] {
                write_pgm(&dir.path().join(s).join(format!("{i}.pgm")), i as f64);
            }
        }
        fs::write(dir.path().join("s1").join("README"), "ignored").unwrap();
        let images = load_dataset(dir.path(), Layout::Orl).unwrap();
        assert_eq!(images.len(), 9);
        let order: Vec<_> =
            images.iter().map(|im| (im.label.as_str(), im.index_within_class)).collect();
        assert_eq!(
            order,
            [
                ("s1", 1), ("s1", 2), ("s1", 10),
                ("s10", 1), ("s10", 2), ("s10", 10),
                ("s2", 1), ("s2", 2), ("s2", 10),
            ]
        );
        assert_eq!(images[2].image.get(0, 0), 10.0);
    }

    #[test]
    fn loads_umist_and_flat_layouts() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&dir.path().join("1a/face/1a001.pgm"), 1.0);
        write_pgm(&dir.path().join("1a/face/1a000.pgm"), 0.0);
        write_pgm(&dir.path().join("1b/1b000.pgm"), 5.0);
        let images = load_dataset(dir.path(), Layout::Umist).unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!((images[0].label.as_str(), images[0].index_within_class), ("1a", 1));
        assert_eq!(images[0].image.get(0, 0), 0.0);

        let flat = tempfile::tempdir().unwrap();
        write_pgm(&flat.path().join("KA.AN1.39.pgm"), 1.0);
        write_pgm(&flat.path().join("KA.AN2.40.pgm"), 2.0);
        write_pgm(&flat.path().join("KL.HA1.1.PGM"), 3.0);
        fs::write(flat.path().join("notes.txt"), "x").unwrap();
        for layout in [Layout::Jaffe, Layout::Flat] {
            let images = load_dataset(flat.path(), layout).unwrap();
            let labels: Vec<_> = images.iter().map(|im| im.label.as_str()).collect();
            assert_eq!(labels, ["KA", "KA", "KL"]);
            assert_eq!(images[1].index_within_class, 2);
        }
    }

    #[test]
    fn load_errors() {
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(empty.path(), Layout::Orl), Err(Error::Load { .. })));
        assert!(matches!(
            load_dataset(&empty.path().join("missing"), Layout::Flat),
            Err(Error::Load { .. })
        ));
        fs::write(empty.path().join("bad.1.pgm"), b"P5\n9 9\n255\n").unwrap();
        match load_dataset(empty.path(), Layout::Flat) {
            Err(Error::Load { path, .. }) => assert!(path.ends_with("bad.1.pgm")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shuffle_keeps_class_membership() {
        let dir = tempfile::tempdir().unwrap();
        for label in ["a", "b"] {
            for i in 0..5 {
                write_pgm(&dir.path().join(format!("{label}.{i}.pgm")), i as f64);
            }
        }
        let original = load_dataset(dir.path(), Layout::Flat).unwrap();
        let mut shuffled = original.clone();
        shuffle_within_classes(&mut shuffled, 7);
        assert_eq!(class_sizes(&shuffled), class_sizes(&original));
        let mut again = original.clone();
        shuffle_within_classes(&mut again, 7);
        assert_eq!(shuffled, again);
        for label in ["a", "b"] {
            let mut idx: Vec<_> = shuffled
                .iter()
                .filter(|im| im.label == label)
                .map(|im| im.index_within_class)
                .collect();
            idx.sort();
            assert_eq!(idx, vec![1, 2, 3, 4, 5]);
        }
    }
}
