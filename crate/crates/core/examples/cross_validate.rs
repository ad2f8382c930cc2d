//! Generates a synthetic cohort, runs grouped 5-fold cross-validation and
//! prints pooled patient-level metrics for both aggregation methods.
//!
//! ```bash
//! cargo run --release --example cross_validate -- [epochs] [patients]
//! ```

use std::time::Instant;

use chipscan::cv::{run_cv, CvOptions, TrainConfig};
use chipscan::data::{load_manifest, synth, SynthConfig};
use chipscan::metrics::{evaluate, Thresholds};
use chipscan::model::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(20);
    let patients: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(82);

    let dir = tempfile::tempdir()?;
    let synth_config = SynthConfig {
        n_patients: patients,
        signal_strength: 0.5,
        ..SynthConfig::default()
    };
    let summary = synth::generate_synthetic(&synth_config, dir.path())?;
    println!("generated {summary}");

    let model = ModelConfig {
        image_size: 64,
        conv_channels: vec![8, 8, 16, 16],
        seed: 1,
        ..ModelConfig::default()
    };
    let records = load_manifest(&summary.manifest_path, model.image_size)?;
    let train = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let reports = run_cv(&records, &train, &model, &CvOptions::default(), None)?;
    println!("cross-validation took {:.1?}", start.elapsed());

    for r in &reports {
        let first = r.training_loss_history.first().copied().unwrap_or(f64::NAN);
        let last = r.training_loss_history.last().copied().unwrap_or(f64::NAN);
        println!("fold {}: loss {first:.4} -> {last:.4}", r.fold_index);
    }
    let eval = evaluate(&reports, Thresholds::default())?;
    println!("{}", serde_json::to_string_pretty(&eval.metrics)?);
    Ok(())
}
