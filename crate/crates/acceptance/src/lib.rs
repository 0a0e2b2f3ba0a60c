//! Helpers for the acceptance run: result lines and dataset discovery.
//!
//! Real benchmark datasets are looked up in `HOGFACE_<NAME>` (for example
//! `HOGFACE_ORL`) and then in `$HOGFACE_DATA/<name>`. Criteria that need a
//! dataset which is not present report `NOT RUN` instead of failing.

use std::fmt;
use std::path::PathBuf;

use hogface::datasets::{load_dataset, LabeledImage, Layout};

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass,
    Fail,
    NotRun(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("PASS"),
            Verdict::Fail => f.write_str("FAIL"),
            Verdict::NotRun(_) => f.write_str("NOT RUN"),
        }
    }
}

/// Collects one line per criterion.
#[derive(Default)]
pub struct Report {
    lines: Vec<(String, Verdict, String)>,
}

impl Report {
    pub fn record(&mut self, criterion: &str, verdict: Verdict, detail: impl Into<String>) {
        let mut detail = detail.into();
        if let Verdict::NotRun(why) = &verdict {
            detail = if detail.is_empty() { why.clone() } else { format!("{why}; {detail}") };
        }
        println!("{:<7} | {criterion} | {detail}", verdict.to_string());
        self.lines.push((criterion.to_string(), verdict, detail));
    }

    pub fn check(&mut self, criterion: &str, ok: bool, detail: impl Into<String>) {
        self.record(criterion, if ok { Verdict::Pass } else { Verdict::Fail }, detail);
    }

    pub fn failures(&self) -> usize {
        self.lines.iter().filter(|l| l.1 == Verdict::Fail).count()
    }

    pub fn summary(&self) -> String {
        let pass = self.lines.iter().filter(|l| l.1 == Verdict::Pass).count();
        let skipped = self.lines.iter().filter(|l| matches!(l.1, Verdict::NotRun(_))).count();
        format!("{pass} passed, {} failed, {skipped} not run", self.failures())
    }
}

pub fn dataset_root(name: &str) -> Option<PathBuf> {
    let own = std::env::var_os(format!("HOGFACE_{}", name.to_ascii_uppercase())).map(PathBuf::from);
    let shared = std::env::var_os("HOGFACE_DATA").map(|d| PathBuf::from(d).join(name));
    own.into_iter().chain(shared).find(|p| p.is_dir())
}

/// Loads a real dataset, or explains why it is unavailable.
pub fn real_dataset(name: &str, layout: Layout) -> Result<Vec<LabeledImage>, String> {
    let root = dataset_root(name).ok_or_else(|| {
        format!(
            "dataset not found; set HOGFACE_{} or HOGFACE_DATA/{name}",
            name.to_ascii_uppercase()
        )
    })?;
    load_dataset(&root, layout).map_err(|e| e.to_string())
}
