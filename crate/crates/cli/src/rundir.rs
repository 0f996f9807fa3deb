//! Run-directory layout:
//!
//! ```text
//! <run>/
//!   manifest.json            written before training starts
//!   vocab.txt                feature vocabulary of the training data
//!   metrics.csv              epoch,fold,split,recall_at_4,loss
//!   summary.json             per-fold outcomes and the best fold
//!   fold<i>/checkpoint.sse   best-epoch parameters of fold i
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sessrec_core::data::Vocab;
use sessrec_core::model::{load_checkpoint_path, ModelParams};

use crate::failure::{data, Failure};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn checkpoint_path(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold{fold}")).join("checkpoint.sse")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub status: String,
    pub best_epoch: Option<usize>,
    pub val_recall_at_4: Option<f64>,
    /// Relative to the run directory.
    pub checkpoint: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_config: String,
    pub train_config: String,
    pub folds: Vec<FoldSummary>,
    /// Fold id with the highest validation recall, if any trained.
    pub best_fold: Option<usize>,
    pub mean_val_recall_at_4: Option<f64>,
}

impl RunSummary {
    pub fn write(&self, run: &Path) -> Result<(), Failure> {
        let mut body = serde_json::to_string_pretty(self).map_err(data)?;
        body.push('\n');
        fs::write(run.join(SUMMARY_FILE), body).map_err(data)
    }

    pub fn read(run: &Path) -> Result<Self, Failure> {
        let path = run.join(SUMMARY_FILE);
        let body = fs::read_to_string(&path)
            .map_err(|e| data(format!("{} is not a run directory: {e}", run.display())))?;
        serde_json::from_str(&body)
            .map_err(|e| data(format!("parsing {}: {e}", path.display())))
    }
}

/// A trained run loaded back: vocabulary plus every fold checkpoint.
pub struct LoadedRun {
    pub vocab: Vocab,
    /// (fold id, parameters), in fold order.
    pub members: Vec<(usize, ModelParams)>,
    /// Index into `members` of the best fold.
    pub best: usize,
}

pub fn load_run(run: &Path) -> Result<LoadedRun, Failure> {
    let summary = RunSummary::read(run)?;
    let vocab_path = run.join(VOCAB_FILE);
    let vocab_file = fs::File::open(&vocab_path)
        .map_err(|e| data(format!("opening {}: {e}", vocab_path.display())))?;
    let vocab = Vocab::read_from(BufReader::new(vocab_file)).map_err(data)?;

    let mut members = Vec::new();
    for fold in &summary.folds {
        let Some(rel) = &fold.checkpoint else { continue };
        let path = run.join(rel);
        let params = load_checkpoint_path(&path)
            .map_err(|e| data(format!("loading {}: {e}", path.display())))?;
        if params.n_cities() != vocab.n_cities() {
            return Err(data(format!(
                "vocab/checkpoint mismatch in fold {}: vocabulary has {} cities, checkpoint {}",
                fold.fold,
                vocab.n_cities(),
                params.n_cities()
            )));
        }
        members.push((fold.fold, params));
    }
    if members.is_empty() {
        return Err(data(format!("run {} has no trained fold checkpoints", run.display())));
    }
    let best_fold = summary
        .best_fold
        .ok_or_else(|| data("run summary names no best fold".to_string()))?;
    let best = members
        .iter()
        .position(|(fold, _)| *fold == best_fold)
        .ok_or_else(|| data(format!("best fold {best_fold} has no checkpoint")))?;
    Ok(LoadedRun { vocab, members, best })
}
