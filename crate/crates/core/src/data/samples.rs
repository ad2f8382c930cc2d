use super::{Image2D, PatientRecord};
use crate::{Error, Result};

/// The four cardiac views, in the fixed order the model concatenates them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Sas,
    Ch4,
    Vla,
    Lvot,
}

impl View {
    pub const ALL: [View; 4] = [View::Sas, View::Ch4, View::Vla, View::Lvot];

    pub fn name(self) -> &'static str {
        match self {
            View::Sas => "SAS",
            View::Ch4 => "4CH",
            View::Vla => "VLA",
            View::Lvot => "LVOT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One model input: an SAS slice paired with the patient's other three views,
/// absent views replaced by all-zero images.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    /// Indexed by [`View::index`].
    pub views: [Image2D; 4],
    pub imputed: [bool; 4],
    pub patient_id: String,
    pub label: bool,
    pub sample_index: usize,
}

impl ViewSet {
    pub fn view(&self, v: View) -> &Image2D {
        &self.views[v.index()]
    }

    pub fn is_imputed(&self, v: View) -> bool {
        self.imputed[v.index()]
    }
}

/// Expands a patient into one view set per SAS slice (or a single view set
/// with a zero SAS when the stack is empty).
pub fn enumerate_samples(record: &PatientRecord) -> Result<Vec<ViewSet>> {
    let first = record
        .sas_slices
        .first()
        .or(record.ch4.as_ref())
        .or(record.vla.as_ref())
        .or(record.lvot.as_ref())
        .ok_or_else(|| Error::Data(format!("patient {:?} has no images", record.patient_id)))?;
    let zero = Image2D::zeros(first.width(), first.height());
    let fill = |v: &Option<Image2D>| (v.clone().unwrap_or_else(|| zero.clone()), v.is_none());
    let (ch4, ch4_missing) = fill(&record.ch4);
    let (vla, vla_missing) = fill(&record.vla);
    let (lvot, lvot_missing) = fill(&record.lvot);

    let make = |index: usize, sas: Option<&Image2D>| ViewSet {
        views: [
            sas.cloned().unwrap_or_else(|| zero.clone()),
            ch4.clone(),
            vla.clone(),
            lvot.clone(),
        ],
        imputed: [sas.is_none(), ch4_missing, vla_missing, lvot_missing],
        patient_id: record.patient_id.clone(),
        label: record.chip_label,
        sample_index: index,
    };

    if record.sas_slices.is_empty() {
        return Ok(vec![make(0, None)]);
    }
    Ok(record
        .sas_slices
        .iter()
        .enumerate()
        .map(|(i, s)| make(i, Some(s)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Image2D {
        Image2D::new(4, 4, vec![v; 16]).unwrap()
    }

    fn record(n_sas: usize, ch4: bool, vla: bool, lvot: bool) -> PatientRecord {
        PatientRecord {
            patient_id: "P1".into(),
            chip_label: true,
            sas_slices: (0..n_sas).map(|i| img(0.1 * (i + 1) as f64)).collect(),
            ch4: ch4.then(|| img(0.7)),
            vla: vla.then(|| img(0.8)),
            lvot: lvot.then(|| img(0.9)),
        }
    }

    #[test]
    fn full_record_one_set_per_slice() {
        let r = record(6, true, true, true);
        let sets = enumerate_samples(&r).unwrap();
        assert_eq!(sets.len(), 6);
        for (i, s) in sets.iter().enumerate() {
            assert_eq!(s.imputed, [false; 4]);
            assert_eq!(s.sample_index, i);
            assert_eq!(s.view(View::Sas), &r.sas_slices[i]);
            assert!(s.label);
        }
    }

    #[test]
    fn only_4ch_gives_single_imputed_set() {
        let sets = enumerate_samples(&record(0, true, false, false)).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].imputed, [true, false, true, true]);
        assert!(sets[0].view(View::Sas).is_all_zero());
        assert!(sets[0].view(View::Vla).is_all_zero());
        assert!(sets[0].view(View::Lvot).is_all_zero());
        assert_eq!(sets[0].view(View::Ch4), &img(0.7));
    }

    #[test]
    fn missing_lvot_is_imputed_in_every_set() {
        let r = record(3, true, true, false);
        let sets = enumerate_samples(&r).unwrap();
        assert_eq!(sets.len(), 3);
        for (i, s) in sets.iter().enumerate() {
            assert_eq!(s.imputed, [false, false, false, true]);
            assert!(s.view(View::Lvot).is_all_zero());
            assert_eq!(s.view(View::Sas), &r.sas_slices[i]);
            assert_eq!(s.view(View::Ch4), sets[0].view(View::Ch4));
            assert_eq!(s.view(View::Vla), sets[0].view(View::Vla));
        }
    }

    #[test]
    fn empty_record_is_rejected() {
        assert!(enumerate_samples(&record(0, false, false, false)).is_err());
    }

    #[test]
    fn count_is_max_of_one_and_slices() {
        for n in 0..8 {
            let r = record(n, n % 2 == 0, true, n % 3 == 0);
            assert_eq!(enumerate_samples(&r).unwrap().len(), n.max(1));
        }
    }
}
