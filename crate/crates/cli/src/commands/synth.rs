use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;

use sessrec_core::data::{generate_synthetic, write_sessions_csv, SynthConfig};

use crate::commands::resolve_seed;
use crate::failure::{data, usage, Failure};
use crate::manifest::{sibling_manifest_path, RunManifest};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of sessions to generate
    #[arg(long, default_value_t = 1000)]
    pub sessions: usize,
    /// Number of distinct cities in the Markov chain
    #[arg(long, default_value_t = 50)]
    pub cities: usize,
    /// Number of city blocks (transitions mostly stay within a block)
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Probability that a transition stays inside the current block
    #[arg(long, default_value_t = 0.85)]
    pub within_block_mass: f64,
    /// RNG seed (default: SSE_SEED, then 42)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SynthArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed, 42)?;
    let mut config = SynthConfig::new(args.sessions, args.cities, args.blocks, seed);
    config.within_block_mass = args.within_block_mass;

    let mut manifest = RunManifest::new("synth", seed, sibling_manifest_path(&args.out));
    manifest.set_config(
        "synth",
        BTreeMap::from([
            ("sessions".to_string(), args.sessions.to_string()),
            ("cities".to_string(), args.cities.to_string()),
            ("blocks".to_string(), args.blocks.to_string()),
            ("within_block_mass".to_string(), args.within_block_mass.to_string()),
            ("seed".to_string(), seed.to_string()),
        ]),
    );
    manifest.add_artifact(&args.out);
    manifest.start()?;

    let sessions = generate_synthetic(&config).map_err(usage)?;
    if args.sessions == 0 {
        eprintln!("warning: --sessions 0 writes an empty data file (header only)");
    }
    let file = fs::File::create(&args.out)
        .map_err(|e| data(format!("creating {}: {e}", args.out.display())))?;
    write_sessions_csv(&sessions, file).map_err(data)?;
    manifest.finish(&[args.out.clone()])?;

    let bookings: usize = sessions.iter().map(|s| s.len()).sum();
    println!("wrote {} sessions ({bookings} bookings) to {}", sessions.len(), args.out.display());
    Ok(())
}
