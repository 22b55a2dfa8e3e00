//! Functional-connectivity data: subjects, ROI masks, synthetic cohorts and
//! the on-disk dataset layout.

mod io;
mod mask;
mod pearson;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, read_fc_csv, save_dataset, write_fc_csv, ManifestRecord};
pub use mask::{apply_mask, apply_mask_flat, mask_count, sample_mask, MaskSet};
pub use pearson::{pearson_fc, BoldSeries};
pub use synth::{generate_cohort, SyntheticConfig};

use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Td = 0,
    Asd = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Td),
            1 => Some(Label::Asd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub fc: Matrix,
    pub label: Label,
    pub site: Option<String>,
}

impl Subject {
    pub fn rois(&self) -> usize {
        self.fc.rows()
    }
}
