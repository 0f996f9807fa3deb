use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;

use sessrec_core::data::UNKNOWN;
use sessrec_core::objective::top_k;
use sessrec_core::train::{ensemble_predict, Ensemble};

use crate::commands::{featurize_usable, read_sessions};
use crate::failure::{data, Failure};
use crate::manifest::{sibling_manifest_path, RunManifest};
use crate::rundir::load_run;

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained run directory
    #[arg(long)]
    pub run: PathBuf,
    /// Sessions to predict for (final city may be concealed)
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV of top-4 recommendations per session
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &PredictArgs) -> Result<(), Failure> {
    let loaded = load_run(&args.run)?;
    // Indices: UNKNOWN plus at least 4 real cities to recommend.
    if loaded.vocab.n_cities() < 5 {
        return Err(data(format!(
            "vocabulary has {} cities; emitting 4 recommendations needs at least 5",
            loaded.vocab.n_cities()
        )));
    }

    let mut manifest = RunManifest::new("predict", 0, sibling_manifest_path(&args.out));
    manifest.set_config(
        "predict",
        BTreeMap::from([
            ("run".to_string(), args.run.display().to_string()),
            ("data".to_string(), args.data.display().to_string()),
        ]),
    );
    manifest.add_input(&args.data)?;
    manifest.add_artifact(&args.out);
    manifest.start()?;

    let sessions = read_sessions(&args.data)?;
    let frames = featurize_usable(&sessions, &loaded.vocab)?;
    let members: Vec<_> = loaded.members.iter().map(|(_, p)| p.clone()).collect();
    let ensemble = Ensemble::new(members).map_err(data)?;

    let file = fs::File::create(&args.out)
        .map_err(|e| data(format!("creating {}: {e}", args.out.display())))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["utrip_id", "city_id_1", "city_id_2", "city_id_3", "city_id_4"])
        .map_err(data)?;
    for frame in &frames {
        let mut pmf = ensemble_predict(&ensemble, frame).map_err(data)?;
        // UNKNOWN absorbs every out-of-vocabulary city; it is not a
        // recommendable destination, so it sinks below all real ones.
        pmf[UNKNOWN] = -1.0;
        let top = top_k(&pmf, 4);
        let mut record = vec![frame.utrip_id.clone()];
        for idx in top {
            let city = loaded
                .vocab
                .city_value(idx)
                .ok_or_else(|| data(format!("city index {idx} out of vocabulary")))?;
            record.push(city.to_string());
        }
        writer.write_record(&record).map_err(data)?;
    }
    writer.flush().map_err(data)?;
    drop(writer);
    manifest.finish(&[args.out.clone()])?;

    println!("wrote {} prediction rows to {}", frames.len(), args.out.display());
    Ok(())
}
