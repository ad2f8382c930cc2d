//! Synthetic cohort with a planted, learnable label signal.
//!
//! Every image is an elliptical "myocardium" ring around a darker blood pool
//! on a dim background, box-blurred and speckled with uniform noise.
//! Signal-bearing images additionally get bright Gaussian patches on the ring.
//! Only CHIP-positive patients carry signal, and only on a random subset of at
//! least 60% of their images, so some positive images look clean.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pgm, Image2D, Manifest, ManifestPatient, ManifestViews};
use crate::rng;
use crate::{Error, Result};

/// Minimum fraction of a positive patient's images that carry signal.
pub const MIN_SIGNAL_FRACTION: f64 = 0.6;

/// Patch amplitude at which a small CNN separates the classes reliably.
pub const STRONG_SIGNAL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub chip_fraction: f64,
    pub signal_strength: f64,
    pub missing_view_rate: f64,
    pub seed: u64,
    pub image_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 82,
            chip_fraction: 0.42,
            signal_strength: STRONG_SIGNAL,
            missing_view_rate: 0.1,
            seed: 7,
            image_size: 64,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 2 {
            return Err(Error::InvalidArgument(format!(
                "need >=2 patients, got {}",
                self.n_patients
            )));
        }
        if !(self.chip_fraction > 0.0 && self.chip_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "chip fraction must lie in (0, 1), got {}",
                self.chip_fraction
            )));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "signal strength must be >= 0, got {}",
                self.signal_strength
            )));
        }
        if !(0.0..=1.0).contains(&self.missing_view_rate) {
            return Err(Error::InvalidArgument(format!(
                "missing view rate must lie in [0, 1], got {}",
                self.missing_view_rate
            )));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidArgument(format!(
                "image size must be >= 8, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Number of positive patients: `round(n * fraction)`, kept within
    /// `[1, n - 1]` so both classes exist.
    pub fn chip_count(&self) -> usize {
        ((self.n_patients as f64 * self.chip_fraction).round() as usize).clamp(1, self.n_patients - 1)
    }
}

/// Per-image signal flags written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub patients: Vec<PatientTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub id: String,
    pub chip: bool,
    pub signal: SignalFlags,
}

/// `true` marks a signal-bearing image; `None` marks an absent view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFlags {
    #[serde(rename = "SAS")]
    pub sas: Vec<bool>,
    #[serde(rename = "4CH")]
    pub ch4: Option<bool>,
    #[serde(rename = "VLA")]
    pub vla: Option<bool>,
    #[serde(rename = "LVOT")]
    pub lvot: Option<bool>,
}

impl SignalFlags {
    pub fn all(&self) -> Vec<bool> {
        self.sas
            .iter()
            .copied()
            .chain([self.ch4, self.vla, self.lvot].into_iter().flatten())
            .collect()
    }
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub n_patients: usize,
    pub n_chip: usize,
    pub n_images: usize,
    pub n_signal_images: usize,
    /// Image counts per view in [`super::View`] order.
    pub view_counts: [usize; 4],
}

impl std::fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [sas, ch4, vla, lvot] = self.view_counts;
        write!(
            f,
            "{} patients ({} CHIP), {} images ({} with signal): SAS={sas} 4CH={ch4} VLA={vla} LVOT={lvot}",
            self.n_patients, self.n_chip, self.n_images, self.n_signal_images
        )
    }
}

/// Renders one phantom image. All random draws happen whether or not
/// `signal` is set, so the same rng state with `Some(0.0)` and `None` yields
/// identical images.
pub fn render_phantom<R: Rng + ?Sized>(rng: &mut R, size: usize, signal: Option<f64>) -> Image2D {
    let s = size as f64;
    let cx = s / 2.0 + rng.gen_range(-0.06..0.06) * s;
    let cy = s / 2.0 + rng.gen_range(-0.06..0.06) * s;
    let ax = rng.gen_range(0.22..0.32) * s;
    let ay = rng.gen_range(0.22..0.32) * s;
    let theta: f64 = rng.gen_range(0.0..PI);
    let thickness = rng.gen_range(0.06..0.09) * s;
    let wall = rng.gen_range(0.30..0.40);
    let pool = rng.gen_range(0.12..0.20);
    let background = 0.04;

    let n_patches = rng.gen_range(2..=4usize);
    let patches: Vec<(f64, f64)> = (0..n_patches)
        .map(|_| (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.08..0.12) * s))
        .collect();

    let (st, ct) = theta.sin_cos();
    let mean_radius = (ax + ay) / 2.0;
    let mut px = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = ct * dx + st * dy;
            let v = -st * dx + ct * dy;
            let r = ((u / ax).powi(2) + (v / ay).powi(2)).sqrt();
            let dist = (r - 1.0) * mean_radius;
            px[y * size + x] = if dist.abs() <= thickness / 2.0 {
                wall
            } else if dist < 0.0 {
                pool
            } else {
                background
            };
        }
    }

    if let Some(amplitude) = signal {
        for &(phi, radius) in &patches {
            // patch centre on the ring midline, in image coordinates
            let (u, v) = (ax * phi.cos(), ay * phi.sin());
            let px_c = cx + ct * u - st * v;
            let py_c = cy + st * u + ct * v;
            let two_var = 2.0 * (radius / 2.0).powi(2);
            for y in 0..size {
                for x in 0..size {
                    let d2 = (x as f64 + 0.5 - px_c).powi(2) + (y as f64 + 0.5 - py_c).powi(2);
                    px[y * size + x] += amplitude * (-d2 / two_var).exp();
                }
            }
        }
    }

    let mut blurred = box_blur(&px, size);
    for p in &mut blurred {
        *p += rng.gen_range(-0.03..0.03);
    }
    Image2D::from_clamped(size, size, blurred).expect("square image")
}

fn box_blur(px: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; px.len()];
    for y in 0..size {
        for x in 0..size {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(size - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(size - 1) {
                    sum += px[yy * size + xx];
                    n += 1.0;
                }
            }
            out[y * size + x] = sum / n;
        }
    }
    out
}

/// Writes `images/*.pgm`, `manifest.json` and `ground_truth.json` under
/// `out_dir` and returns a summary of what was generated.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    config.validate()?;
    let image_dir = out_dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let n = config.n_patients;
    let n_chip = config.chip_count();
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_chip).collect();
    labels.shuffle(&mut rng::stream(config.seed, u64::MAX));

    let width = (n - 1).to_string().len().max(3);
    let mut manifest = Manifest {
        image_size_hint: Some(config.image_size),
        patients: Vec::with_capacity(n),
    };
    let mut truth = GroundTruth {
        config: config.clone(),
        patients: Vec::with_capacity(n),
    };
    let mut view_counts = [0usize; 4];
    let mut n_signal_images = 0;

    for (index, &chip) in labels.iter().enumerate() {
        let id = format!("P{index:0width$}");
        let mut rng = rng::stream(config.seed, index as u64);
        let n_sas = rng.gen_range(5..=7usize);
        let present: [bool; 3] = std::array::from_fn(|_| !rng.gen_bool(config.missing_view_rate));
        let n_images = n_sas + present.iter().filter(|&&p| p).count();

        let mut flags = vec![false; n_images];
        if chip {
            let min_signal = (MIN_SIGNAL_FRACTION * n_images as f64).ceil() as usize;
            let k = rng.gen_range(min_signal..=n_images);
            let mut order: Vec<usize> = (0..n_images).collect();
            order.shuffle(&mut rng);
            for &i in &order[..k] {
                flags[i] = true;
            }
        }
        n_signal_images += flags.iter().filter(|&&f| f).count();

        let mut flag_iter = flags.iter().copied();
        let mut emit = |name: String, flag: bool| -> Result<String> {
            let img = render_phantom(&mut rng, config.image_size, flag.then_some(config.signal_strength));
            let rel = format!("images/{name}.pgm");
            pgm::write(&out_dir.join(&rel), &img, 255)?;
            Ok(rel)
        };

        let mut views = ManifestViews::default();
        let mut signal = SignalFlags {
            sas: Vec::with_capacity(n_sas),
            ch4: None,
            vla: None,
            lvot: None,
        };
        for i in 0..n_sas {
            let flag = flag_iter.next().expect("flag per image");
            views.sas.push(emit(format!("{id}_SAS_{i}"), flag)?);
            signal.sas.push(flag);
        }
        view_counts[0] += n_sas;
        let others: [(&str, &mut Option<String>, &mut Option<bool>); 3] = [
            ("4CH", &mut views.ch4, &mut signal.ch4),
            ("VLA", &mut views.vla, &mut signal.vla),
            ("LVOT", &mut views.lvot, &mut signal.lvot),
        ];
        for (k, (name, path, flag_slot)) in others.into_iter().enumerate() {
            if present[k] {
                let flag = flag_iter.next().expect("flag per image");
                *path = Some(emit(format!("{id}_{name}"), flag)?);
                *flag_slot = Some(flag);
                view_counts[k + 1] += 1;
            }
        }

        manifest.patients.push(ManifestPatient {
            id: id.clone(),
            chip,
            views,
        });
        truth.patients.push(PatientTruth { id, chip, signal });
    }

    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    let ground_truth_path = out_dir.join("ground_truth.json");
    let mut text = serde_json::to_string_pretty(&truth).expect("ground truth serialises");
    text.push('\n');
    std::fs::write(&ground_truth_path, text).map_err(|e| Error::io(&ground_truth_path, e))?;

    Ok(SynthSummary {
        manifest_path,
        ground_truth_path,
        n_patients: n,
        n_chip,
        n_images: view_counts.iter().sum(),
        n_signal_images,
        view_counts,
    })
}
