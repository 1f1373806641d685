use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use layerwise_uq::evaluation::{PrPoint, RocPoint};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(layerwise_uq::Error::from)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_roc_csv(path: &Path, roc: &[RocPoint]) -> CliResult<()> {
    let mut text = String::from("threshold,fpr,tpr\n");
    for p in roc {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    write_text(path, &text)
}

pub fn write_pr_csv(path: &Path, pr: &[PrPoint]) -> CliResult<()> {
    let mut text = String::from("threshold,recall,precision\n");
    for p in pr {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
    }
    write_text(path, &text)
}

/// File-name stem for a model or feature name (`SM+DC+LU` → `sm_dc_lu`).
pub fn stem(name: &str) -> String {
    name.to_ascii_lowercase().replace('+', "_")
}
