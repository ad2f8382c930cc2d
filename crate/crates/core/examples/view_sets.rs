//! Loads a patient from a manifest, enumerates its view sets and writes one
//! augmented copy of the first set next to the original.
//!
//! One of the patients has its long-axis views removed first, so the output
//! also shows the all-zero imputation.

use chipscan::data::{self, augment, enumerate_samples, pgm, AugmentationConfig, SynthConfig, View};
use chipscan::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let summary = data::generate_synthetic(
        &SynthConfig {
            n_patients: 3,
            missing_view_rate: 0.0,
            ..SynthConfig::default()
        },
        dir.path(),
    )?;
    let mut records = data::load_manifest(&summary.manifest_path, 64)?;
    records[1].vla = None;
    records[1].lvot = None;

    for r in &records {
        let sets = enumerate_samples(r)?;
        let imputed: Vec<&str> = View::ALL
            .iter()
            .zip(sets[0].imputed)
            .filter(|(_, i)| *i)
            .map(|(v, _)| v.name())
            .collect();
        println!(
            "{} ({}): {} view sets, imputed views {:?}",
            r.patient_id,
            if r.chip_label { "CHIP" } else { "NO-CHIP" },
            sets.len(),
            imputed
        );
    }

    let out = dir.path().join("augmented");
    std::fs::create_dir_all(&out)?;
    let config = AugmentationConfig::default();
    let mut stream = rng::stream(config.seed, 0);
    let sample = &enumerate_samples(&records[1])?[0];
    let jittered = augment(sample, &config, &mut stream);
    for (v, (orig, aug)) in View::ALL.iter().zip(sample.views.iter().zip(&jittered.views)) {
        pgm::write(&out.join(format!("{}_orig.pgm", v.name())), orig, 255)?;
        pgm::write(&out.join(format!("{}_aug.pgm", v.name())), aug, 255)?;
        println!("{:>4}: mean {:.3} -> {:.3}, all zero after augmentation: {}", v.name(), orig.mean(), aug.mean(), aug.is_all_zero());
    }
    println!("wrote {}", out.display());
    Ok(())
}
