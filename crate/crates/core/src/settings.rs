//! Flat `key = value` run configuration covering model geometry and
//! training settings. Lines starting with `#` are comments.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io_util::read_string;
use crate::losses::{LayerSelector, LayerWeighting};
use crate::models::ModelKind;
use crate::trainer::TrainConfig;

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// `(key, default-description)` for every accepted key, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("model_kind", "teacher | student | fost"),
    ("search_size", "search crop side in pixels (32)"),
    ("template_size", "template crop side in pixels (16)"),
    ("patch", "patch side in pixels (4)"),
    ("d_model", "token width (32)"),
    ("layers", "encoder layers (4)"),
    ("heads", "attention heads (4)"),
    ("mlp_ratio", "MLP expansion (4)"),
    ("reduction", "spatial-attention bottleneck ratio (4)"),
    ("fovea_lambda", "fovea softmax sharpness (1)"),
    ("head_channels", "head conv width (16)"),
    ("prompter", "mutual prompters on (true)"),
    ("spatial_attn", "prompter spatial attention (true)"),
    ("token_attn", "prompter token attention (true)"),
    ("history", "prompter previous-prompt input (true)"),
    ("lr_backbone", "embedding/encoder learning rate (7.5e-5)"),
    ("lr_other", "prompter/fusion/head learning rate (7.5e-4)"),
    ("weight_decay", "decoupled weight decay (1e-4)"),
    ("decay_epoch", "last epoch at the base rate (10)"),
    ("decay_factor", "rate multiplier after decay_epoch (0.1)"),
    ("epochs", "training epochs (teacher 15, student 13, fost 15)"),
    ("batch_size", "samples per step (8)"),
    ("samples_per_epoch", "training pairs per epoch (2000)"),
    ("seed", "RNG seed (0)"),
    ("lambda_giou", "GIoU weight (2)"),
    ("lambda_l1", "L1 weight (5)"),
    ("lambda_rm", "response distillation weight (0.7; 0 for fost)"),
    ("lambda_mf", "feature distillation weight (0.035; 0 for fost)"),
    ("tau", "response temperature (2)"),
    ("kd_layers", "even | first | last | all (even)"),
    ("kd_weighting", "uniform | index (uniform)"),
];

impl RunConfig {
    pub fn defaults(kind: ModelKind) -> Self {
        let train = match kind {
            ModelKind::Teacher => TrainConfig::teacher(),
            ModelKind::Student => TrainConfig::student(),
            ModelKind::Fost => TrainConfig::fost(),
        };
        Self {
            model_kind: kind,
            model: ModelConfig::default(),
            train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match self.model_kind {
            ModelKind::Fost => self.train.validate_fost(),
            _ => self.train.validate(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::validation(format!("{key} = {value:?}: {e}"));
        macro_rules! num {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(&e))?
            };
        }
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model_kind" => self.model_kind = value.parse().map_err(|e: Error| bad(&e))?,
            "search_size" => m.search_size = num!(usize),
            "template_size" => m.template_size = num!(usize),
            "patch" => m.patch = num!(usize),
            "d_model" => m.d_model = num!(usize),
            "layers" => m.layers = num!(usize),
            "heads" => m.heads = num!(usize),
            "mlp_ratio" => m.mlp_ratio = num!(usize),
            "reduction" => m.reduction = num!(usize),
            "fovea_lambda" => m.fovea_lambda = num!(f32),
            "head_channels" => m.head_channels = num!(usize),
            "prompter" => m.prompter.enabled = num!(bool),
            "spatial_attn" => m.prompter.spatial = num!(bool),
            "token_attn" => m.prompter.token = num!(bool),
            "history" => m.prompter.history = num!(bool),
            "lr_backbone" => t.lr_backbone = num!(f64),
            "lr_other" => t.lr_other = num!(f64),
            "weight_decay" => t.weight_decay = num!(f64),
            "decay_epoch" => t.decay_epoch = num!(usize),
            "decay_factor" => t.decay_factor = num!(f64),
            "epochs" => t.epochs = num!(usize),
            "batch_size" => t.batch_size = num!(usize),
            "samples_per_epoch" => t.samples_per_epoch = num!(usize),
            "seed" => t.seed = num!(u64),
            "lambda_giou" => t.weights.giou = num!(f64),
            "lambda_l1" => t.weights.l1 = num!(f64),
            "lambda_rm" => t.weights.rm = num!(f64),
            "lambda_mf" => t.weights.mf = num!(f64),
            "tau" => t.weights.tau = num!(f64),
            "kd_layers" => t.feature_kd.selector = LayerSelector::parse(value).map_err(|e| bad(&e))?,
            "kd_weighting" => t.feature_kd.weighting = LayerWeighting::parse(value).map_err(|e| bad(&e))?,
            other => {
                return Err(Error::validation(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parses `text` on top of `self`. `path` labels errors.
    pub fn apply_text(&mut self, path: &Path, text: &str) -> Result<()> {
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len() as u64;
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::format(path, here, format!("expected key = value, got {body:?}")));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Reads a config file. Its `model_kind` (if any) selects the defaults
    /// other keys are layered on; otherwise `kind` does.
    pub fn load(path: &Path, kind: ModelKind) -> Result<Self> {
        let text = read_string(path)?;
        let declared = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.starts_with('#'))
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "model_kind")
            .map(|(_, v)| v.trim().parse::<ModelKind>())
            .transpose()?;
        let mut cfg = Self::defaults(declared.unwrap_or(kind));
        cfg.apply_text(path, &text)?;
        Ok(cfg)
    }

    pub fn value_of(&self, key: &str) -> String {
        let (m, t) = (&self.model, &self.train);
        match key {
            "model_kind" => self.model_kind.to_string(),
            "search_size" => m.search_size.to_string(),
            "template_size" => m.template_size.to_string(),
            "patch" => m.patch.to_string(),
            "d_model" => m.d_model.to_string(),
            "layers" => m.layers.to_string(),
            "heads" => m.heads.to_string(),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "reduction" => m.reduction.to_string(),
            "fovea_lambda" => m.fovea_lambda.to_string(),
            "head_channels" => m.head_channels.to_string(),
            "prompter" => m.prompter.enabled.to_string(),
            "spatial_attn" => m.prompter.spatial.to_string(),
            "token_attn" => m.prompter.token.to_string(),
            "history" => m.prompter.history.to_string(),
            "lr_backbone" => t.lr_backbone.to_string(),
            "lr_other" => t.lr_other.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "decay_epoch" => t.decay_epoch.to_string(),
            "decay_factor" => t.decay_factor.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "samples_per_epoch" => t.samples_per_epoch.to_string(),
            "seed" => t.seed.to_string(),
            "lambda_giou" => t.weights.giou.to_string(),
            "lambda_l1" => t.weights.l1.to_string(),
            "lambda_rm" => t.weights.rm.to_string(),
            "lambda_mf" => t.weights.mf.to_string(),
            "tau" => t.weights.tau.to_string(),
            "kd_layers" => t.feature_kd.selector.as_str().to_string(),
            "kd_weighting" => t.feature_kd.weighting.as_str().to_string(),
            _ => unreachable!("value_of called with unknown key {key}"),
        }
    }

    /// Every key with its current value, one per line, each preceded by
    /// its description.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, doc) in KEYS {
            s.push_str(&format!("# {doc}\n{k} = {}\n", self.value_of(k)));
        }
        s
    }
}
