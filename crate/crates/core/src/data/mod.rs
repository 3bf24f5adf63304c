//! Synthetic RGB-T sequences: scenario generation, on-disk format and the
//! template/search cropping used by training and tracking.

mod crop;
mod format;
mod generate;

pub use crop::{crop_regions, sample_training_pair, CropSet, CropWindow, SEARCH_FACTOR, TEMPLATE_FACTOR};
pub use format::{
    decode_rtf, encode_rtf, frame_file, read_dataset, read_rtf, read_sequence, write_dataset, write_rtf,
    write_sequence, META_FILE, RTF_MAGIC,
};
pub use generate::{generate_sequence, ScenarioKind, ScenarioSpec};

use crate::bbox::BBox;
use crate::embedding::ImagePlane;

/// Per-frame visibility of the target in each modality, in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Visibility {
    pub rgb: Vec<f64>,
    pub tir: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub attributes: Vec<String>,
    /// Full-frame pixel boxes, one per frame.
    pub gt: Vec<BBox>,
    pub visibility: Visibility,
}

/// One aligned frame pair: 3-channel visible and 1-channel thermal.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub rgb: ImagePlane,
    pub tir: ImagePlane,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub meta: SequenceMeta,
    pub frames: Vec<FrameRecord>,
}
