use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sessrec_core::data::{
    build_vocab, generate_synthetic, FeatureFrame, SynthConfig, VocabCaps, NUM_FEATURES,
};
use sessrec_core::derive_seed;
use sessrec_core::model::{CellKind, DecoderKind, ModelConfig, ModelParams};
use sessrec_core::oracle::{check_equivalence, check_gradient_equivalence};

use crate::commands::resolve_seed;
use crate::failure::{data, usage, Failure};
use crate::manifest::{sibling_manifest_path, RunManifest};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Longest session to test (every length 1..=N is tested)
    #[arg(long, default_value_t = 16)]
    pub max_length: usize,
    /// Number of random model/session draws
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// RNG seed (default: SSE_SEED, then 42)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Max allowed pmf/loss deviation; 0 is the negative control and
    /// always fails, demonstrating why a tolerance exists
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Max allowed engine-vs-oracle gradient deviation
    #[arg(long, default_value_t = 1e-7)]
    pub grad_tolerance: f64,
    /// Where to write the per-prefix deviation report
    #[arg(long, default_value = "verify_report.csv")]
    pub report: PathBuf,
}

/// The four cell/decoder combinations, cycled across trials.
const COMBOS: [(CellKind, DecoderKind); 4] = [
    (CellKind::Gru, DecoderKind::Tied),
    (CellKind::Gru, DecoderKind::Feedforward),
    (CellKind::Lstm, DecoderKind::Tied),
    (CellKind::Lstm, DecoderKind::Feedforward),
];

fn verify_config(cell: CellKind, decoder: DecoderKind) -> ModelConfig {
    ModelConfig {
        cell,
        layers: 2,
        // The feedforward decoder permits hidden_dim != city_dim; use it.
        hidden_dim: if decoder == DecoderKind::Feedforward { 10 } else { 8 },
        decoder,
        city_dim: 8,
        categorical_dim: 3,
        device_dim: 2,
        numerical_dim: 2,
        input_dropout: 0.0,
        recurrent_dropout: 0.0,
    }
}

/// A random feature frame: indices drawn uniformly below each column's
/// cardinality, so every embedding row is reachable, not just row 0.
fn random_frame(
    rng: &mut ChaCha8Rng,
    steps: usize,
    cards: &[usize; NUM_FEATURES],
    n_cities: usize,
    conceal_final: bool,
) -> FeatureFrame {
    let mut features = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut row = [0usize; NUM_FEATURES];
        for (col, slot) in row.iter_mut().enumerate() {
            *slot = rng.random_range(0..cards[col]);
        }
        features.push(row);
    }
    let targets = (0..steps).map(|_| rng.random_range(0..n_cities)).collect();
    let mut mask = vec![true; steps];
    if conceal_final {
        mask[steps - 1] = false;
    }
    FeatureFrame { utrip_id: format!("verify-{steps}"), steps, features, targets, mask }
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    if args.max_length == 0 {
        return Err(usage("--max-length must be at least 1"));
    }
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let seed = resolve_seed(args.seed, 42)?;

    let mut manifest = RunManifest::new("verify", seed, sibling_manifest_path(&args.report));
    manifest.set_config(
        "verify",
        BTreeMap::from([
            ("max_length".to_string(), args.max_length.to_string()),
            ("trials".to_string(), args.trials.to_string()),
            ("tolerance".to_string(), args.tolerance.to_string()),
            ("grad_tolerance".to_string(), args.grad_tolerance.to_string()),
            ("seed".to_string(), seed.to_string()),
        ]),
    );
    manifest.add_artifact(&args.report);
    manifest.start()?;

    // A small synthetic corpus supplies realistic vocabulary shapes; the
    // tested frames themselves are drawn uniformly below each cardinality.
    let sessions = generate_synthetic(&SynthConfig::new(60, 24, 3, derive_seed(seed, "verify/vocab")))
        .map_err(data)?;
    let vocab = build_vocab(&sessions, VocabCaps::default()).map_err(data)?;
    let mut cards = [0usize; NUM_FEATURES];
    for (col, slot) in cards.iter_mut().enumerate() {
        *slot = vocab.column_cardinality(col);
    }

    let mut csv = String::from("trial,cell,decoder,T,prefix_t,max_dev,oracle_ops,engine_ops\n");
    let mut failures: Vec<String> = Vec::new();
    let mut pmf_checks = 0usize;
    let mut loss_checks = 0usize;
    let mut grad_checks = 0usize;
    let mut op_checks = 0usize;
    let mut worst_dev = 0.0f64;
    let mut worst_grad = 0.0f64;

    for trial in 0..args.trials {
        let (cell, decoder) = COMBOS[trial % COMBOS.len()];
        let config = verify_config(cell, decoder);
        let params =
            ModelParams::init(config, &vocab, derive_seed(seed, &format!("verify/params/{trial}")))
                .map_err(data)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("verify/frames/{trial}")));
        for steps in 1..=args.max_length {
            // Every fifth multi-step draw conceals its final city, the
            // prediction-time shape.
            let conceal = steps > 1 && (trial + steps) % 5 == 0;
            let frame = random_frame(&mut rng, steps, &cards, vocab.n_cities(), conceal);

            let report = check_equivalence(&frame, &params, args.tolerance).map_err(data)?;
            for row in &report.rows {
                csv.push_str(&format!(
                    "{trial},{cell},{decoder},{},{},{:e},{},{}\n",
                    report.session_steps, row.t, row.max_dev, row.oracle_ops, row.engine_ops
                ));
                worst_dev = worst_dev.max(row.max_dev);
            }
            pmf_checks += report.rows.len();
            if report.loss_dev.is_some() {
                loss_checks += 1;
            }
            if !report.pass {
                for f in &report.failures {
                    failures.push(format!("trial {trial} {cell}/{decoder}: {f}"));
                }
            }

            let t = steps as u64;
            op_checks += 1;
            if report.oracle_ops_per_layer != vec![t * (t + 1) / 2; 2]
                || report.engine_ops_per_layer != vec![t; 2]
            {
                failures.push(format!(
                    "trial {trial} {cell}/{decoder} T={steps}: op counts {:?} / {:?} break the \
                     T(T+1)/2 vs T law",
                    report.oracle_ops_per_layer, report.engine_ops_per_layer
                ));
            }

            if frame.mask.iter().any(|&m| m) {
                let grad = check_gradient_equivalence(&frame, &params, args.grad_tolerance)
                    .map_err(data)?;
                grad_checks += 1;
                worst_grad = worst_grad.max(grad.max_dev);
                if !grad.pass {
                    failures.push(format!(
                        "trial {trial} {cell}/{decoder} T={steps}: gradient dev {:.3e} in {} \
                         (tolerance {:.1e})",
                        grad.max_dev, grad.worst_tensor, args.grad_tolerance
                    ));
                }
            }
        }
    }

    fs::write(&args.report, csv)
        .map_err(|e| data(format!("writing {}: {e}", args.report.display())))?;
    manifest.finish(&[args.report.clone()])?;

    println!(
        "checked {pmf_checks} prefix pmfs, {loss_checks} pooled losses, {grad_checks} gradients, \
         {op_checks} op-count laws over {} trials x lengths 1..={}",
        args.trials, args.max_length
    );
    println!("worst pmf/loss deviation {worst_dev:.3e}, worst gradient deviation {worst_grad:.3e}");
    if failures.is_empty() {
        println!("PASS (tolerance {:.1e}, gradient tolerance {:.1e})", args.tolerance, args.grad_tolerance);
        println!("report: {}", args.report.display());
        Ok(())
    } else {
        for f in failures.iter().take(10) {
            eprintln!("FAIL {f}");
        }
        if failures.len() > 10 {
            eprintln!("... and {} more", failures.len() - 10);
        }
        println!("FAIL ({} violations)", failures.len());
        println!("report: {}", args.report.display());
        Err(Failure::Verification(format!(
            "{} of {} checks violated tolerance {:.1e}",
            failures.len(),
            pmf_checks + loss_checks + grad_checks + op_checks,
            args.tolerance
        )))
    }
}
