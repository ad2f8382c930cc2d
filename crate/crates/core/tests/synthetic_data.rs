use chipscan::data::{self, enumerate_samples, pgm, GroundTruth, SynthConfig};

fn generate(config: &SynthConfig) -> (tempfile::TempDir, Vec<data::PatientRecord>, GroundTruth) {
    let dir = tempfile::tempdir().unwrap();
    let summary = data::generate_synthetic(config, dir.path()).unwrap();
    let records = data::load_manifest(&summary.manifest_path, config.image_size).unwrap();
    let truth = serde_json::from_str(&std::fs::read_to_string(&summary.ground_truth_path).unwrap()).unwrap();
    (dir, records, truth)
}

#[test]
fn manifest_agrees_with_ground_truth() {
    let config = SynthConfig {
        n_patients: 82,
        image_size: 32,
        ..SynthConfig::default()
    };
    let (_dir, records, truth) = generate(&config);
    assert_eq!(records.len(), 82);
    assert_eq!(truth.patients.len(), 82);
    assert_eq!(truth.config, config);
    assert_eq!(records.iter().filter(|r| r.chip_label).count(), 34);

    for r in &records {
        let t = truth.patients.iter().find(|t| t.id == r.patient_id).unwrap();
        assert_eq!(t.chip, r.chip_label, "{}", r.patient_id);
        assert_eq!(t.signal.sas.len(), r.sas_slices.len());
        assert!((5..=7).contains(&r.sas_slices.len()));
        assert_eq!(t.signal.ch4.is_some(), r.ch4.is_some());
        assert_eq!(t.signal.vla.is_some(), r.vla.is_some());
        assert_eq!(t.signal.lvot.is_some(), r.lvot.is_some());

        let flags: Vec<bool> = t
            .signal
            .sas
            .iter()
            .copied()
            .chain([t.signal.ch4, t.signal.vla, t.signal.lvot].into_iter().flatten())
            .collect();
        let with_signal = flags.iter().filter(|&&f| f).count();
        if r.chip_label {
            assert!(with_signal * 5 >= flags.len() * 3, "{}: {with_signal}/{}", r.patient_id, flags.len());
        } else {
            assert_eq!(with_signal, 0, "{}", r.patient_id);
        }
        assert_eq!(enumerate_samples(r).unwrap().len(), r.sas_slices.len());
    }
}

#[test]
fn signal_images_are_brighter_at_their_peak() {
    // the planted patches lift local maxima well above a clean ring
    let config = SynthConfig {
        n_patients: 20,
        chip_fraction: 0.5,
        ..SynthConfig::default()
    };
    let (_dir, records, truth) = generate(&config);
    let peak = |img: &data::Image2D| img.pixels().iter().cloned().fold(0.0, f64::max);
    let (mut signal, mut clean) = (Vec::new(), Vec::new());
    for r in &records {
        let t = truth.patients.iter().find(|t| t.id == r.patient_id).unwrap();
        for (img, &flag) in r.sas_slices.iter().zip(&t.signal.sas) {
            if flag { signal.push(peak(img)) } else { clean.push(peak(img)) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!signal.is_empty() && !clean.is_empty());
    assert!(mean(&signal) > mean(&clean) + 0.15, "signal {} vs clean {}", mean(&signal), mean(&clean));
}

#[test]
fn zero_signal_makes_classes_indistinguishable_in_distribution() {
    let base = SynthConfig {
        n_patients: 6,
        image_size: 24,
        ..SynthConfig::default()
    };
    let silent = SynthConfig {
        signal_strength: 0.0,
        ..base.clone()
    };
    let (_a, with_signal, _) = generate(&base);
    let (_b, without, _) = generate(&silent);
    // identical draws apart from patch amplitude: clean images match exactly
    let differing = with_signal
        .iter()
        .zip(&without)
        .flat_map(|(a, b)| a.sas_slices.iter().zip(&b.sas_slices))
        .filter(|(a, b)| a != b)
        .count();
    let positives_signal: usize = with_signal.iter().filter(|r| r.chip_label).map(|r| r.sas_slices.len()).sum();
    assert!(differing > 0 && differing <= positives_signal);
}

#[test]
fn written_images_decode_as_8_bit_pgm() {
    let config = SynthConfig {
        n_patients: 2,
        image_size: 20,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    data::generate_synthetic(&config, dir.path()).unwrap();
    let mut count = 0;
    for entry in std::fs::read_dir(dir.path().join("images")).unwrap() {
        let path = entry.unwrap().path();
        let img = pgm::decode(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (20, 20, 255), "{}", path.display());
        count += 1;
    }
    assert!(count >= 2 * 5);
}
