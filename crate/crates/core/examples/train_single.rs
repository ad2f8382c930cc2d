//! Trains one classifier on a small synthetic cohort, saves it as a `CHPV`
//! checkpoint, reloads it and checks that predictions are unchanged.
//!
//! ```bash
//! cargo run --release --example train_single -- [epochs]
//! ```

use chipscan::cv::{train_fold, TrainConfig};
use chipscan::data::{self, enumerate_samples, SynthConfig};
use chipscan::model::{ModelConfig, MultiViewModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(15);
    let dir = tempfile::tempdir()?;
    let summary = data::generate_synthetic(
        &SynthConfig {
            n_patients: 16,
            chip_fraction: 0.5,
            ..SynthConfig::default()
        },
        dir.path(),
    )?;

    let model_config = ModelConfig {
        image_size: 64,
        conv_channels: vec![8, 8, 16, 16],
        seed: 3,
        ..ModelConfig::default()
    };
    let records = data::load_manifest(&summary.manifest_path, model_config.image_size)?;
    let (train, held_out) = records.split_at(12);
    let train: Vec<_> = train.iter().collect();
    println!(
        "{} parameters, training on {} patients for {epochs} epochs",
        model_config.parameter_count(),
        train.len()
    );

    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train_fold(&train, &config, &model_config)?;
    for (e, l) in outcome.loss_history.iter().enumerate() {
        println!("epoch {:>3}: {l:.4}", e + 1);
    }

    let path = dir.path().join("model.chpv");
    outcome.model.save(&path)?;
    let reloaded = MultiViewModel::load(&path)?;
    println!("\ncheckpoint {} bytes", std::fs::metadata(&path)?.len());

    for r in held_out {
        let sets = enumerate_samples(r)?;
        let before = outcome.model.predict_batch(&sets)?;
        let after = reloaded.predict_batch(&sets)?;
        assert_eq!(before, after, "reloaded model must predict bit-identically");
        let probs: Vec<String> = after.iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "{} {:<7} [{}]",
            r.patient_id,
            if r.chip_label { "CHIP" } else { "NO-CHIP" },
            probs.join(", ")
        );
    }
    Ok(())
}
