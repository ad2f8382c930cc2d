//! Generates a synthetic cohort on disk and prints what went into it.
//!
//! ```bash
//! cargo run --release --example synth_dataset -- [out_dir] [patients]
//! ```
//!
//! Without `out_dir` the cohort goes to a temporary directory that is
//! removed on exit.

use std::path::PathBuf;

use chipscan::data::{synth, GroundTruth, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let tmp = tempfile::tempdir()?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let n_patients = args.next().map(|a| a.parse()).transpose()?.unwrap_or(12);

    let config = SynthConfig {
        n_patients,
        ..SynthConfig::default()
    };
    let summary = synth::generate_synthetic(&config, &out)?;
    println!("{summary}");
    println!("manifest:     {}", summary.manifest_path.display());
    println!("ground truth: {}", summary.ground_truth_path.display());

    let truth: GroundTruth = serde_json::from_str(&std::fs::read_to_string(&summary.ground_truth_path)?)?;
    println!("\n{:<6} {:<7} {:<10} extra views", "id", "label", "SAS signal");
    for p in &truth.patients {
        let sas: String = p.signal.sas.iter().map(|&s| if s { '#' } else { '.' }).collect();
        let extra = |v: Option<bool>| match v {
            Some(true) => '#',
            Some(false) => '.',
            None => '-',
        };
        println!(
            "{:<6} {:<7} {:<10} {}{}{}",
            p.id,
            if p.chip { "CHIP" } else { "NO-CHIP" },
            sas,
            extra(p.signal.ch4),
            extra(p.signal.vla),
            extra(p.signal.lvot)
        );
    }
    println!("\n# = planted patches, . = clean, - = view missing");
    Ok(())
}
