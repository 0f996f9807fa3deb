use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;

use sessrec_core::data::{build_vocab, VocabCaps};
use sessrec_core::model::{save_checkpoint_path, ModelConfig};
use sessrec_core::train::{cross_validate, FoldOutcome, TrainConfig};

use crate::commands::{featurize_usable, kv_to_map, read_sessions, resolve_seed};
use crate::failure::{data, usage, Failure};
use crate::manifest::RunManifest;
use crate::rundir::{
    checkpoint_path, FoldSummary, RunSummary, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
    VOCAB_FILE,
};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory to create
    #[arg(long)]
    pub out: PathBuf,
    /// Optional config file of `key=value` lines (flags override it)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model type: m2m (many-to-many) or m2o (many-to-one)
    #[arg(long)]
    pub model: Option<String>,
    /// Recurrent cell: gru or lstm
    #[arg(long)]
    pub cell: Option<String>,
    /// Decoder: tied or ff
    #[arg(long)]
    pub decoder: Option<String>,
    /// Prefix length weighting: on or off
    #[arg(long)]
    pub weighting: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub city_dim: Option<usize>,
    #[arg(long)]
    pub input_dropout: Option<f64>,
    #[arg(long)]
    pub recurrent_dropout: Option<f64>,
    /// How many folds train concurrently (1 keeps runs comparable on a
    /// loaded machine; results are identical either way)
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// RNG seed (default: SSE_SEED, then 42)
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Resolution order: defaults, then the config file, then explicit flags.
fn resolve_configs(args: &TrainArgs) -> Result<(ModelConfig, TrainConfig), Failure> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    let model_keys: BTreeSet<String> = kv_to_map(&model.to_kv()).into_keys().collect();
    let train_keys: BTreeSet<String> = kv_to_map(&train.to_kv()).into_keys().collect();

    if let Some(path) = &args.config {
        let body = fs::read_to_string(path)
            .map_err(|e| data(format!("reading {}: {e}", path.display())))?;
        for (lineno, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!("{}:{}: expected key=value, got `{line}`", path.display(), lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if model_keys.contains(key) {
                model.set_field(key, value).map_err(usage)?;
            } else if train_keys.contains(key) {
                train.set_field(key, value).map_err(usage)?;
            } else {
                return Err(usage(format!(
                    "{}:{}: unknown config key `{key}`",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }

    if let Some(v) = &args.model {
        train.set_field("model_type", v).map_err(usage)?;
    }
    if let Some(v) = &args.cell {
        model.set_field("cell", v).map_err(usage)?;
    }
    if let Some(v) = &args.decoder {
        model.set_field("decoder", v).map_err(usage)?;
    }
    if let Some(v) = &args.weighting {
        train.set_field("weight_mode", v).map_err(usage)?;
    }
    if let Some(v) = args.epochs {
        train.epochs = v;
    }
    if let Some(v) = args.folds {
        train.folds = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = args.hidden_dim {
        model.hidden_dim = v;
    }
    if let Some(v) = args.layers {
        model.layers = v;
    }
    if let Some(v) = args.city_dim {
        model.city_dim = v;
    }
    if let Some(v) = args.input_dropout {
        model.input_dropout = v;
    }
    if let Some(v) = args.recurrent_dropout {
        model.recurrent_dropout = v;
    }
    train.seed = resolve_seed(args.seed, train.seed)?;

    // Invalid combinations (e.g. a tied decoder with hidden_dim ≠
    // city_dim) are usage errors and must surface before any work.
    model.validate().map_err(usage)?;
    train.validate().map_err(usage)?;
    Ok((model, train))
}

pub fn run(args: &TrainArgs) -> Result<(), Failure> {
    let (model_config, train_config) = resolve_configs(args)?;

    let run_dir = &args.out;
    if run_dir.join(MANIFEST_FILE).exists() {
        return Err(data(format!(
            "{} already holds a run (manifest.json exists); choose a fresh --out",
            run_dir.display()
        )));
    }

    let mut manifest =
        RunManifest::new("train", train_config.seed, run_dir.join(MANIFEST_FILE));
    manifest.set_config("model", kv_to_map(&model_config.to_kv()));
    manifest.set_config("train", kv_to_map(&train_config.to_kv()));
    // Digesting the input happens before the run directory exists, so a
    // bad --data path leaves nothing behind.
    manifest.add_input(&args.data)?;
    let vocab_path = run_dir.join(VOCAB_FILE);
    let metrics_path = run_dir.join(METRICS_FILE);
    manifest.add_artifact(&vocab_path);
    manifest.add_artifact(&metrics_path);
    manifest.add_artifact(&run_dir.join(SUMMARY_FILE));
    for fold in 0..train_config.folds {
        manifest.add_artifact(&checkpoint_path(run_dir, fold));
    }
    manifest.start()?;

    let sessions = read_sessions(&args.data)?;
    let vocab = build_vocab(&sessions, VocabCaps::default()).map_err(data)?;
    let frames = featurize_usable(&sessions, &vocab)?;
    if frames.is_empty() {
        return Err(data(format!("{}: no usable sessions", args.data.display())));
    }
    let vocab_file = fs::File::create(&vocab_path).map_err(data)?;
    vocab.write_to(vocab_file).map_err(data)?;

    println!(
        "training {} sessions, {} cities, {} folds x {} epochs ({})",
        frames.len(),
        vocab.n_cities(),
        train_config.folds,
        train_config.epochs,
        train_config.model_type,
    );
    let cv = cross_validate(&frames, &vocab, &model_config, &train_config, args.jobs)
        .map_err(data)?;

    // metrics.csv: one train and one val row per epoch per trained fold.
    let mut metrics = String::from("epoch,fold,split,recall_at_4,loss\n");
    let mut fold_summaries = Vec::new();
    let mut outputs = vec![vocab_path.clone(), metrics_path.clone(), run_dir.join(SUMMARY_FILE)];
    for outcome in &cv.outcomes {
        match outcome {
            FoldOutcome::Trained(result) => {
                for r in &result.epochs {
                    metrics.push_str(&format!("{},{},train,,{}\n", r.epoch, result.fold, r.train_loss));
                    metrics.push_str(&format!(
                        "{},{},val,{},{}\n",
                        r.epoch, result.fold, r.val_recall_at_4, r.val_loss
                    ));
                }
                let path = checkpoint_path(run_dir, result.fold);
                fs::create_dir_all(path.parent().expect("checkpoint has a parent"))
                    .map_err(data)?;
                save_checkpoint_path(&result.params, &path).map_err(data)?;
                outputs.push(path);
                println!(
                    "fold {}: best epoch {} val recall@4 {:.4}",
                    result.fold, result.best_epoch, result.best_recall
                );
                fold_summaries.push(FoldSummary {
                    fold: result.fold,
                    status: "trained".to_string(),
                    best_epoch: Some(result.best_epoch),
                    val_recall_at_4: Some(result.best_recall),
                    checkpoint: Some(format!("fold{}/checkpoint.sse", result.fold)),
                    error: None,
                });
            }
            FoldOutcome::Failed { fold, error } => {
                eprintln!("warning: fold {fold} failed: {error}");
                fold_summaries.push(FoldSummary {
                    fold: *fold,
                    status: "failed".to_string(),
                    best_epoch: None,
                    val_recall_at_4: None,
                    checkpoint: None,
                    error: Some(error.to_string()),
                });
            }
        }
    }
    let mut metrics_file = fs::File::create(&metrics_path).map_err(data)?;
    metrics_file.write_all(metrics.as_bytes()).map_err(data)?;

    let trained: Vec<(usize, f64)> = fold_summaries
        .iter()
        .filter(|f| f.status == "trained")
        .map(|f| (f.fold, f.val_recall_at_4.expect("trained folds carry a recall")))
        .collect();
    let best_fold = trained
        .iter()
        .max_by(|(fa, ra), (fb, rb)| {
            // First fold wins ties, same rule as best-epoch selection.
            ra.partial_cmp(rb).expect("recalls are finite").then(fb.cmp(fa))
        })
        .map(|&(fold, _)| fold);
    let mean = if trained.is_empty() {
        None
    } else {
        Some(trained.iter().map(|&(_, r)| r).sum::<f64>() / trained.len() as f64)
    };
    let summary = RunSummary {
        model_config: model_config.to_kv(),
        train_config: train_config.to_kv(),
        folds: fold_summaries,
        best_fold,
        mean_val_recall_at_4: mean,
    };
    summary.write(run_dir)?;
    manifest.finish(&outputs)?;

    match (best_fold, mean) {
        (Some(best), Some(mean)) => {
            println!(
                "done: {} of {} folds trained, best fold {best}, mean val recall@4 {mean:.4}",
                trained.len(),
                train_config.folds
            );
            Ok(())
        }
        _ => Err(data("every fold failed; no ensemble".to_string())),
    }
}
