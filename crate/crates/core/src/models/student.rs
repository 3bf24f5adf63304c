use super::head::{self, HeadVars};
use super::{fuse_search, TrackInputs};
use crate::config::ModelConfig;
use crate::embedding::{self, embed_pair, Modality, Segment};
use crate::encoder::{self, encoder_layer, layer_prefix, norm, Attention};
use crate::error::Result;
use crate::numerics::{rng, trunc_normal, Binder, Graph, ParamSet, Tensor, Var};

/// One-stream tracker over the concatenated bimodal token sequence
/// `[Z_rgb | X_rgb | Z_tir | X_tir]`. The distilled student and the
/// undistilled control share this architecture and parameter names.
#[derive(Clone, Debug)]
pub struct StudentModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

pub struct StudentForward {
    pub head: HeadVars,
    /// `H_s^l` for `l = 1..=L`, each `2N×D`.
    pub layers: Vec<Var>,
    pub attn: Attention,
    pub layout: Vec<Segment>,
}

impl StudentModel {
    pub const PREFIX: &'static str = "student";

    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let p = Self::PREFIX;
        let mut params = ParamSet::new();
        let mut rng = rng::substream(seed, 2);
        embedding::init_params(&mut params, &mut rng, p, &cfg)?;
        encoder::init_params(&mut params, &mut rng, p, &cfg)?;
        let d = cfg.d_model;
        params.insert(format!("{p}/dr/weight"), trunc_normal(&mut rng, &[2 * d, d], 0.02))?;
        params.insert(format!("{p}/dr/bias"), Tensor::zeros(&[d]))?;
        head::init_params(&mut params, &mut rng, p, &cfg)?;
        Ok(Self { cfg, params })
    }

    pub fn from_params(cfg: ModelConfig, loaded: &ParamSet) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.params.load_values(loaded)?;
        Ok(m)
    }

    pub fn forward(&self, g: &mut Graph, inputs: &TrackInputs, trainable: bool) -> Result<StudentForward> {
        let cfg = &self.cfg;
        let p = Self::PREFIX;
        let b = Binder::new(&self.params, trainable);
        let rgb = embed_pair(g, &b, p, &inputs.z_rgb, &inputs.x_rgb, Modality::Rgb, cfg)?;
        let tir = embed_pair(g, &b, p, &inputs.z_tir, &inputs.x_tir, Modality::Tir, cfg)?;
        let layout = rgb.joined_layout(&tir);
        let mut x = g.concat_rows(&[rgb.tokens, tir.tokens])?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut attn = None;
        for l in 0..cfg.layers {
            let (y, a) = encoder_layer(g, &b, &layer_prefix(p, l), x, cfg.heads)?;
            x = y;
            layers.push(y);
            attn = Some(a);
        }
        let f = norm(g, &b, &format!("{p}/encoder/final_norm"), x)?;
        let (n, nz, nx) = (cfg.n_tokens(), cfg.n_template(), cfg.n_search());
        let s_rgb = g.slice_rows(f, nz, nx)?;
        let s_tir = g.slice_rows(f, n + nz, nx)?;
        let fused = fuse_search(g, &b, p, s_rgb, s_tir)?;
        let head = head::head_forward(g, &b, p, fused, cfg)?;
        Ok(StudentForward {
            head,
            layers,
            attn: attn.expect("at least one layer"),
            layout,
        })
    }
}

/// The undistilled control: a student-architecture model trained on labels only.
pub fn fost_forward(model: &StudentModel, g: &mut Graph, inputs: &TrackInputs, trainable: bool) -> Result<StudentForward> {
    model.forward(g, inputs, trainable)
}
