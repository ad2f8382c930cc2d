use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pgm, Image2D};
use crate::{Error, Result};

/// SAS stacks longer than this are loaded but logged as unusual.
pub const MAX_TYPICAL_SAS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub image_size_hint: Option<usize>,
    pub patients: Vec<ManifestPatient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPatient {
    pub id: String,
    pub chip: bool,
    pub views: ManifestViews,
}

/// Image paths per view, relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestViews {
    #[serde(rename = "SAS", default)]
    pub sas: Vec<String>,
    #[serde(rename = "4CH", default)]
    pub ch4: Option<String>,
    #[serde(rename = "VLA", default)]
    pub vla: Option<String>,
    #[serde(rename = "LVOT", default)]
    pub lvot: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One patient's images, all resized to a common square size.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub chip_label: bool,
    pub sas_slices: Vec<Image2D>,
    pub ch4: Option<Image2D>,
    pub vla: Option<Image2D>,
    pub lvot: Option<Image2D>,
}

impl PatientRecord {
    pub fn image_count(&self) -> usize {
        self.sas_slices.len() + [&self.ch4, &self.vla, &self.lvot].iter().filter(|v| v.is_some()).count()
    }
}

/// Loads every patient and image referenced by the manifest at `path`,
/// normalising pixels to `[0, 1]` and resizing to `image_size` squared.
pub fn load_manifest(path: &Path, image_size: usize) -> Result<Vec<PatientRecord>> {
    if image_size == 0 {
        return Err(Error::Config("image_size must be positive".into()));
    }
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(manifest.patients.len());

    for entry in &manifest.patients {
        if entry.id.is_empty() {
            return Err(Error::Manifest("patient with empty id".into()));
        }
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::Manifest(format!("duplicate patient id {:?}", entry.id)));
        }
        let v = &entry.views;
        if v.sas.is_empty() && v.ch4.is_none() && v.vla.is_none() && v.lvot.is_none() {
            return Err(Error::Manifest(format!("patient {:?}: patient has no images", entry.id)));
        }
        if v.sas.len() > MAX_TYPICAL_SAS {
            log::warn!(
                "patient {:?} has {} SAS slices (more than {MAX_TYPICAL_SAS})",
                entry.id,
                v.sas.len()
            );
        }
        let load = |rel: &str, label: &str| -> Result<Image2D> {
            let img = pgm::read(&base.join(rel)).map_err(|e| {
                Error::Manifest(format!("patient {:?}, view {label} ({rel}): {e}", entry.id))
            })?;
            Ok(img.resize_bilinear(image_size, image_size))
        };
        let sas_slices = v
            .sas
            .iter()
            .enumerate()
            .map(|(i, rel)| load(rel, &format!("SAS[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let opt = |rel: &Option<String>, label: &str| rel.as_deref().map(|r| load(r, label)).transpose();
        records.push(PatientRecord {
            patient_id: entry.id.clone(),
            chip_label: entry.chip,
            sas_slices,
            ch4: opt(&v.ch4, "4CH")?,
            vla: opt(&v.vla, "VLA")?,
            lvot: opt(&v.lvot, "LVOT")?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, json: &str) -> std::path::PathBuf {
        let p = dir.join("manifest.json");
        std::fs::write(&p, json).unwrap();
        p
    }

    fn write_img(dir: &Path, name: &str, size: usize, value: f64) {
        let img = Image2D::new(size, size, vec![value; size * size]).unwrap();
        pgm::write(&dir.join(name), &img, 255).unwrap();
    }

    #[test]
    fn empty_manifest_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), r#"{"image_size_hint": 16, "patients": []}"#);
        assert!(load_manifest(&p, 16).unwrap().is_empty());
    }

    #[test]
    fn vacuous_patient_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            r#"{"patients": [{"id": "A", "chip": true,
                "views": {"SAS": [], "4CH": null, "VLA": null, "LVOT": null}}]}"#,
        );
        let err = load_manifest(&p, 16).unwrap_err().to_string();
        assert!(err.contains("patient has no images"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.pgm", 4, 0.2);
        let p = write_manifest(
            dir.path(),
            r#"{"patients": [
                {"id": "A", "chip": true, "views": {"SAS": ["a.pgm"]}},
                {"id": "A", "chip": false, "views": {"4CH": "a.pgm"}}]}"#,
        );
        assert!(load_manifest(&p, 8).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn missing_image_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            r#"{"patients": [{"id": "P7", "chip": false, "views": {"SAS": [], "VLA": "nope.pgm"}}]}"#,
        );
        let err = load_manifest(&p, 8).unwrap_err().to_string();
        assert!(err.contains("P7") && err.contains("VLA") && err.contains("nope.pgm"), "{err}");
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), r#"{"patients": [{"id": "A"}]}"#);
        assert!(matches!(load_manifest(&p, 8), Err(Error::Manifest(_))));
        let p = write_manifest(dir.path(), "not json");
        assert!(matches!(load_manifest(&p, 8), Err(Error::Manifest(_))));
    }

    #[test]
    fn colour_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.ppm"), b"P6\n1 1\n255\n\x01\x02\x03").unwrap();
        let p = write_manifest(
            dir.path(),
            r#"{"patients": [{"id": "A", "chip": false, "views": {"4CH": "c.ppm"}}]}"#,
        );
        let err = load_manifest(&p, 8).unwrap_err().to_string();
        assert!(err.contains("greyscale") && err.contains("4CH"), "{err}");
    }

    #[test]
    fn loads_and_resizes() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "s0.pgm", 4, 0.2);
        write_img(dir.path(), "s1.pgm", 6, 0.4);
        write_img(dir.path(), "l.pgm", 8, 1.0);
        let p = write_manifest(
            dir.path(),
            r#"{"image_size_hint": 8, "patients": [{"id": "A", "chip": true,
                "views": {"SAS": ["s0.pgm", "s1.pgm"], "4CH": null, "LVOT": "l.pgm"}}]}"#,
        );
        let recs = load_manifest(&p, 8).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert!(r.chip_label);
        assert_eq!(r.sas_slices.len(), 2);
        assert_eq!(r.image_count(), 3);
        assert!(r.ch4.is_none() && r.vla.is_none());
        for img in r.sas_slices.iter().chain(r.lvot.iter()) {
            assert_eq!((img.width(), img.height()), (8, 8));
        }
        assert!((r.sas_slices[0].get(3, 3) - 51.0 / 255.0).abs() < 1e-12);
    }
}
