//! Ratio versus max thresholding on hand-built predictions.
//!
//! Every NO-CHIP patient carries one spurious 0.9 image; CHIP patients have a
//! majority of moderately confident images. The max rule is fooled by the
//! single spike, the ratio rule is not. Writes both ROC curves as CSV and an
//! SVG plot to the directory given as the first argument (default: a
//! temporary directory).

use std::path::PathBuf;

use chipscan::cv::{FoldReport, ImagePrediction};
use chipscan::metrics::{self, Thresholds};
use chipscan::svg::{roc_svg, Series};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&out)?;

    let mut predictions = Vec::new();
    let mut add = |id: String, label: bool, probs: &[f64]| {
        for (i, &p) in probs.iter().enumerate() {
            predictions.push(ImagePrediction {
                patient_id: id.clone(),
                sample_index: i,
                probability: p,
                label,
            });
        }
    };
    for j in 0..10 {
        add(format!("N{j:02}"), false, &[0.9, 0.1, 0.15, 0.2, 0.25, 0.3]);
        let top = 0.6 + 0.04 * j as f64;
        add(format!("C{j:02}"), true, &[top, 0.55, 0.52, 0.3, 0.2]);
    }
    let report = FoldReport {
        fold_index: 0,
        image_predictions: predictions,
        training_loss_history: Vec::new(),
    };

    let eval = metrics::evaluate(&[report], Thresholds::default())?;
    println!("{:<6} {:>6} {:>6}", "id", "ratio", "max");
    for s in &eval.scores {
        println!("{:<6} {:>6.3} {:>6.2}", s.patient_id, s.ratio_score, s.max_score);
    }
    println!("\n{}", serde_json::to_string_pretty(&eval.metrics)?);

    metrics::write_roc_csv(&out.join("roc_ratio.csv"), &eval.ratio_roc)?;
    metrics::write_roc_csv(&out.join("roc_max.csv"), &eval.max_roc)?;
    let svg = roc_svg(
        "Ratio vs max thresholding",
        &[
            Series { label: "ratio", color: "#1f77b4", curve: &eval.ratio_roc },
            Series { label: "max", color: "#d62728", curve: &eval.max_roc },
        ],
    );
    std::fs::write(out.join("roc.svg"), svg)?;
    println!("wrote CSVs and roc.svg to {}", out.display());
    Ok(())
}
