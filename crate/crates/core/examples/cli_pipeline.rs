//! Drives the command-line interface end to end, exactly as the `chipscan`
//! binary would: `synth`, then `cv`, then `report`.
//!
//! ```bash
//! cargo run --release --example cli_pipeline -- [out_dir]
//! ```

use std::path::PathBuf;

use chipscan::cli;

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let data = root.join("data").display().to_string();
    let results = root.join("results").display().to_string();
    let manifest = root.join("data/manifest.json").display().to_string();

    let steps: [Vec<&str>; 3] = [
        vec!["synth", "--out", &data, "--patients", "24", "--seed", "7"],
        vec![
            "cv", "--manifest", &manifest, "--out", &results, "--epochs", "8", "--image-size", "32",
            "--channels", "8,8,16,16", "--seed", "1",
        ],
        vec!["report", "--results", &results],
    ];
    for step in steps {
        println!("$ chipscan {}", step.join(" "));
        let code = cli::run(std::iter::once("chipscan").chain(step));
        if code != 0 {
            eprintln!("exited with {code}");
            std::process::exit(code);
        }
    }

    let mut files: Vec<_> = std::fs::read_dir(&results)
        .expect("results dir")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    println!("\n{results}: {}", files.join(" "));
}
