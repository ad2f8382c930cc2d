//! Writes a gradient test card as 8- and 16-bit binary PGM, reads both back
//! and shows how malformed files are rejected.

use chipscan::data::{pgm, Image2D};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (32, 16);
    let pixels = (0..w * h).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
    let card = Image2D::new(w, h, pixels)?;

    let dir = tempfile::tempdir()?;
    for maxval in [255u16, 65535] {
        let path = dir.path().join(format!("card_{maxval}.pgm"));
        pgm::write(&path, &card, maxval)?;
        let back = pgm::read(&path)?;
        let err = card
            .pixels()
            .iter()
            .zip(back.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let bytes = std::fs::metadata(&path)?.len();
        println!("maxval {maxval:>5}: {bytes:>5} bytes, max quantisation error {err:.2e}");
    }

    let commented = b"P5\n# scanner export\n2 1\n255\n\x00\xff";
    let parsed = pgm::decode(commented)?;
    println!("commented header: {}x{} samples {:?}", parsed.width, parsed.height, parsed.samples);

    for (label, bytes) in [
        ("colour", &b"P6\n1 1\n255\n\x00\x00\x00"[..]),
        ("ascii", &b"P2\n1 1\n255\n0\n"[..]),
        ("truncated", &b"P5\n4 4\n255\n\x00"[..]),
        ("sample > maxval", &b"P5\n1 1\n100\n\xc8"[..]),
    ] {
        println!("{label:>16}: {}", pgm::decode(bytes).unwrap_err());
    }
    Ok(())
}
