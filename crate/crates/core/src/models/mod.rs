//! Teacher, student and control trackers with their shared localization head.

pub mod checkpoint;
pub mod head;
pub mod maps;
mod student;
mod teacher;

use std::fmt;
use std::str::FromStr;

pub use head::{decode, head_forward, HeadOutput, HeadVars};
pub use student::{fost_forward, StudentForward, StudentModel};
pub use teacher::{TeacherForward, TeacherModel};

pub use crate::bbox::BBox;
use crate::config::ModelConfig;
use crate::embedding::ImagePlane;
use crate::error::{Error, Result};
use crate::numerics::{Binder, Graph, ParamSet, Var};

/// Template and search crops of both modalities for one tracking step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackInputs {
    pub z_rgb: ImagePlane,
    pub x_rgb: ImagePlane,
    pub z_tir: ImagePlane,
    pub x_tir: ImagePlane,
}

/// Channel-concatenates the two search segments and reduces back to `D`.
pub(crate) fn fuse_search(g: &mut Graph, b: &Binder, prefix: &str, s_rgb: Var, s_tir: Var) -> Result<Var> {
    let cat = g.concat_cols(&[s_rgb, s_tir])?;
    let w = b.get(g, &format!("{prefix}/dr/weight"))?;
    let bias = b.get(g, &format!("{prefix}/dr/bias"))?;
    g.linear(cat, w, bias)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Teacher,
    Student,
    Fost,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
            ModelKind::Fost => "fost",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(ModelKind::Teacher),
            "student" => Ok(ModelKind::Student),
            "fost" => Ok(ModelKind::Fost),
            other => Err(Error::Usage(format!(
                "unknown model kind {other:?} (expected teacher, student or fost)"
            ))),
        }
    }
}

/// Either architecture behind one interface, for evaluation and dumps.
#[derive(Clone, Debug)]
pub enum Tracker {
    Teacher(TeacherModel),
    Student(StudentModel),
}

impl Tracker {
    pub fn new(kind: ModelKind, cfg: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Teacher => Tracker::Teacher(TeacherModel::new(cfg, seed)?),
            ModelKind::Student | ModelKind::Fost => Tracker::Student(StudentModel::new(cfg, seed)?),
        })
    }

    pub fn from_params(kind: ModelKind, cfg: ModelConfig, params: &ParamSet) -> Result<Self> {
        Ok(match kind {
            ModelKind::Teacher => Tracker::Teacher(TeacherModel::from_params(cfg, params)?),
            ModelKind::Student | ModelKind::Fost => Tracker::Student(StudentModel::from_params(cfg, params)?),
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        match self {
            Tracker::Teacher(m) => &m.cfg,
            Tracker::Student(m) => &m.cfg,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Tracker::Teacher(m) => &m.params,
            Tracker::Student(m) => &m.params,
        }
    }

    /// Inference forward; returns the head output for the search crop.
    pub fn predict(&self, inputs: &TrackInputs) -> Result<HeadOutput> {
        let mut g = Graph::new();
        let head = match self {
            Tracker::Teacher(m) => m.forward(&mut g, inputs, false)?.head,
            Tracker::Student(m) => m.forward(&mut g, inputs, false)?.head,
        };
        Ok(head.output(&g, self.cfg()))
    }
}
