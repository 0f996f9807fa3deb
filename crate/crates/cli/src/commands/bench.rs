use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;

use sessrec_core::data::{build_vocab, generate_synthetic, SynthConfig, VocabCaps};
use sessrec_core::derive_seed;
use sessrec_core::model::{ModelConfig, ModelParams};
use sessrec_core::oracle::benchmark_complexity;

use crate::commands::resolve_seed;
use crate::failure::{data, usage, Failure};
use crate::manifest::{sibling_manifest_path, RunManifest};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Session lengths to measure
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,48")]
    pub lengths: Vec<usize>,
    /// Repetitions per length; wall times are medians
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// RNG seed for the benchmark model (default: SSE_SEED, then 42)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional CSV output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &BenchArgs) -> Result<(), Failure> {
    if args.lengths.is_empty() {
        return Err(usage("--lengths needs at least one value"));
    }
    if args.lengths.contains(&0) {
        return Err(usage("--lengths must be positive"));
    }
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let seed = resolve_seed(args.seed, 42)?;

    let mut manifest = args.out.as_ref().map(|out| {
        let mut m = RunManifest::new("bench", seed, sibling_manifest_path(out));
        m.set_config(
            "bench",
            BTreeMap::from([
                (
                    "lengths".to_string(),
                    args.lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
                ),
                ("reps".to_string(), args.reps.to_string()),
                ("seed".to_string(), seed.to_string()),
            ]),
        );
        m.add_artifact(out);
        m
    });
    if let Some(m) = &manifest {
        m.start()?;
    }

    // Big enough that the cell matmuls dominate per-step overhead.
    let sessions =
        generate_synthetic(&SynthConfig::new(120, 50, 5, derive_seed(seed, "bench/vocab")))
            .map_err(data)?;
    let vocab = build_vocab(&sessions, VocabCaps::default()).map_err(data)?;
    let config = ModelConfig {
        hidden_dim: 64,
        city_dim: 64,
        categorical_dim: 8,
        device_dim: 4,
        numerical_dim: 4,
        ..ModelConfig::default()
    };
    let params =
        ModelParams::init(config, &vocab, derive_seed(seed, "bench/params")).map_err(data)?;

    let rows = benchmark_complexity(&args.lengths, &params, args.reps).map_err(data)?;

    println!(
        "{:>4} {:>16} {:>16} {:>9} {:>11} {:>11} {:>11}",
        "T", "oracle_ops/layer", "engine_ops/layer", "op_ratio", "oracle_ms", "engine_ms", "time_ratio"
    );
    let mut csv =
        String::from("T,oracle_ops_per_layer,engine_ops_per_layer,op_ratio,oracle_ms,engine_ms,time_ratio\n");
    for row in &rows {
        let oracle_ms = row.oracle_time.as_secs_f64() * 1e3;
        let engine_ms = row.engine_time.as_secs_f64() * 1e3;
        let time_ratio = if engine_ms > 0.0 { oracle_ms / engine_ms } else { f64::NAN };
        println!(
            "{:>4} {:>16} {:>16} {:>9.1} {:>11.3} {:>11.3} {:>11.2}",
            row.steps,
            row.oracle_ops_per_layer,
            row.engine_ops_per_layer,
            row.op_ratio(),
            oracle_ms,
            engine_ms,
            time_ratio
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.steps,
            row.oracle_ops_per_layer,
            row.engine_ops_per_layer,
            row.op_ratio(),
            oracle_ms,
            engine_ms,
            time_ratio
        ));
    }

    if let Some(out) = &args.out {
        fs::write(out, csv).map_err(|e| data(format!("writing {}: {e}", out.display())))?;
        if let Some(m) = &mut manifest {
            m.finish(&[out.clone()])?;
        }
        println!("wrote {}", out.display());
    }
    Ok(())
}
