use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use sessrec_core::objective::recall_at_k;
use sessrec_core::train::{ensemble_rankings, Ensemble};

use crate::commands::{featurize_usable, read_sessions};
use crate::failure::{data, Failure};
use crate::manifest::RunManifest;
use crate::rundir::load_run;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained run directory
    #[arg(long)]
    pub run: PathBuf,
    /// Evaluation data CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Recommendation list length
    #[arg(long, default_value_t = 4)]
    pub k: usize,
}

pub fn run(args: &EvalArgs) -> Result<(), Failure> {
    if args.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".to_string()));
    }
    let loaded = load_run(&args.run)?;
    if args.k >= loaded.vocab.n_cities() {
        return Err(Failure::Usage(format!(
            "--k {} but the vocabulary has only {} cities",
            args.k,
            loaded.vocab.n_cities()
        )));
    }

    let mut manifest = RunManifest::new("eval", 0, args.run.join("eval.manifest.json"));
    manifest.set_config(
        "eval",
        BTreeMap::from([
            ("k".to_string(), args.k.to_string()),
            ("data".to_string(), args.data.display().to_string()),
        ]),
    );
    manifest.add_input(&args.data)?;
    manifest.start()?;

    let sessions = read_sessions(&args.data)?;
    let frames = featurize_usable(&sessions, &loaded.vocab)?;
    if frames.is_empty() {
        return Err(data(format!("{}: no usable sessions", args.data.display())));
    }

    let (best_fold, best_params) = &loaded.members[loaded.best];
    let single = Ensemble::new(vec![best_params.clone()]).map_err(data)?;
    let single_ranks = ensemble_rankings(&single, &frames, args.k, 256).map_err(data)?;
    let single_recall = recall_at_k(&single_ranks, args.k).map_err(data)?;

    let members: Vec<_> = loaded.members.iter().map(|(_, p)| p.clone()).collect();
    let n_members = members.len();
    let ensemble = Ensemble::new(members).map_err(data)?;
    let ensemble_ranks = ensemble_rankings(&ensemble, &frames, args.k, 256).map_err(data)?;
    let ensemble_recall = recall_at_k(&ensemble_ranks, args.k).map_err(data)?;

    manifest.finish(&[])?;
    println!("sessions scored: {}", single_ranks.len());
    println!("single best (fold {best_fold}) recall@{}: {single_recall:.6}", args.k);
    println!("ensemble of {n_members} recall@{}: {ensemble_recall:.6}", args.k);
    Ok(())
}
