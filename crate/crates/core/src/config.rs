//! Model geometry and prompter switches shared by every network.

use crate::error::{Error, Result};

/// Which parts of the mutual prompter are active. All on is the full model;
/// `enabled = false` removes the prompters entirely (plain two-stream baseline).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrompterToggles {
    pub enabled: bool,
    pub spatial: bool,
    pub token: bool,
    pub history: bool,
}

impl Default for PrompterToggles {
    fn default() -> Self {
        Self {
            enabled: true,
            spatial: true,
            token: true,
            history: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub search_size: usize,
    pub template_size: usize,
    pub patch: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Bottleneck ratio of the spatial-attention projections.
    pub reduction: usize,
    pub fovea_lambda: f32,
    pub head_channels: usize,
    pub prompter: PrompterToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            search_size: 32,
            template_size: 16,
            patch: 4,
            d_model: 32,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            reduction: 4,
            fovea_lambda: 1.0,
            head_channels: 16,
            prompter: PrompterToggles::default(),
        }
    }
}

impl ModelConfig {
    /// Full-size geometry (256/128 crops, 16-px patches, width 768, 12 layers).
    pub fn full_scale() -> Self {
        Self {
            search_size: 256,
            template_size: 128,
            patch: 16,
            d_model: 768,
            layers: 12,
            heads: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch;
        if p == 0 || self.search_size % p != 0 || self.template_size % p != 0 {
            return Err(Error::validation(format!(
                "crop sizes {}/{} must be multiples of patch {p}",
                self.search_size, self.template_size
            )));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::validation(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.mlp_ratio == 0 || self.reduction == 0 || self.head_channels == 0 {
            return Err(Error::validation("layers, mlp_ratio, reduction and head_channels must be positive"));
        }
        if !(self.fovea_lambda > 0.0) {
            return Err(Error::validation("fovea_lambda must be positive"));
        }
        Ok(())
    }

    /// Side of the search patch grid.
    pub fn grid(&self) -> usize {
        self.search_size / self.patch
    }

    pub fn template_grid(&self) -> usize {
        self.template_size / self.patch
    }

    pub fn n_search(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn n_template(&self) -> usize {
        self.template_grid() * self.template_grid()
    }

    /// Tokens of one modality (template + search).
    pub fn n_tokens(&self) -> usize {
        self.n_template() + self.n_search()
    }

    /// Raw patch width `P²·3`.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn reduced_tokens(&self) -> usize {
        self.n_tokens().div_ceil(self.reduction)
    }
}
