use super::head::{self, HeadVars};
use super::{fuse_search, TrackInputs};
use crate::config::ModelConfig;
use crate::embedding::{self, embed_pair, Modality, Segment};
use crate::encoder::{self, encoder_layer, layer_prefix, norm, Attention};
use crate::error::Result;
use crate::numerics::{rng, trunc_normal, Binder, Graph, ParamSet, Tensor, Var};
use crate::prompter::{self, mmmp_forward, prompter_prefix, MmmpVars};

/// Two-stream tracker: one weight-shared encoder stack run on each modality,
/// with a mutual prompter per stream before every layer.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

pub struct TeacherForward {
    pub head: HeadVars,
    /// `(H_rgb^l, H_tir^l)` for `l = 1..=L`, each `N×D`.
    pub layers: Vec<(Var, Var)>,
    /// Last-layer attention of the rgb and tir streams.
    pub attn: [Attention; 2],
    /// Segment layout of one stream.
    pub layout: Vec<Segment>,
}

impl TeacherModel {
    pub const PREFIX: &'static str = "teacher";

    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let p = Self::PREFIX;
        let mut params = ParamSet::new();
        let mut rng = rng::substream(seed, 1);
        embedding::init_params(&mut params, &mut rng, p, &cfg)?;
        encoder::init_params(&mut params, &mut rng, p, &cfg)?;
        for branch in ["rgb", "tir"] {
            for idx in 0..=cfg.layers {
                prompter::init_params(&mut params, &mut rng, &prompter_prefix(p, branch, idx), &cfg)?;
            }
        }
        let d = cfg.d_model;
        params.insert(format!("{p}/dr/weight"), trunc_normal(&mut rng, &[2 * d, d], 0.02))?;
        params.insert(format!("{p}/dr/bias"), Tensor::zeros(&[d]))?;
        head::init_params(&mut params, &mut rng, p, &cfg)?;
        Ok(Self { cfg, params })
    }

    /// Rebuilds a model around loaded weights, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, loaded: &ParamSet) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.params.load_values(loaded)?;
        Ok(m)
    }

    pub fn forward(&self, g: &mut Graph, inputs: &TrackInputs, trainable: bool) -> Result<TeacherForward> {
        let cfg = &self.cfg;
        let p = Self::PREFIX;
        let b = Binder::new(&self.params, trainable);
        let rgb = embed_pair(g, &b, p, &inputs.z_rgb, &inputs.x_rgb, Modality::Rgb, cfg)?;
        let tir = embed_pair(g, &b, p, &inputs.z_tir, &inputs.x_tir, Modality::Tir, cfg)?;
        let toggles = cfg.prompter;
        let branches = ["rgb", "tir"];
        let mut h = [rgb.tokens, tir.tokens];
        let mut prev: [Option<Var>; 2] = [None, None];
        if toggles.enabled {
            for s in 0..2 {
                let v = MmmpVars::bind(g, &b, &prompter_prefix(p, branches[s], 0))?;
                prev[s] = Some(mmmp_forward(g, &v, h[s], h[1 - s], None, cfg.fovea_lambda, toggles)?);
            }
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut last_attn = None;
        for l in 1..=cfg.layers {
            let mut input = h;
            if toggles.enabled {
                let mut prompts = [None, None];
                for s in 0..2 {
                    let v = MmmpVars::bind(g, &b, &prompter_prefix(p, branches[s], l))?;
                    prompts[s] = Some(mmmp_forward(g, &v, h[s], h[1 - s], prev[s], cfg.fovea_lambda, toggles)?);
                }
                for s in 0..2 {
                    input[s] = g.add(h[s], prompts[s].unwrap())?;
                }
                prev = prompts;
            }
            let lp = layer_prefix(p, l - 1);
            let (h_rgb, a_rgb) = encoder_layer(g, &b, &lp, input[0], cfg.heads)?;
            let (h_tir, a_tir) = encoder_layer(g, &b, &lp, input[1], cfg.heads)?;
            h = [h_rgb, h_tir];
            layers.push((h_rgb, h_tir));
            last_attn = Some([a_rgb, a_tir]);
        }
        let final_norm = format!("{p}/encoder/final_norm");
        let f_rgb = norm(g, &b, &final_norm, h[0])?;
        let f_tir = norm(g, &b, &final_norm, h[1])?;
        let (nz, nx) = (cfg.n_template(), cfg.n_search());
        let s_rgb = g.slice_rows(f_rgb, nz, nx)?;
        let s_tir = g.slice_rows(f_tir, nz, nx)?;
        let fused = fuse_search(g, &b, p, s_rgb, s_tir)?;
        let head = head::head_forward(g, &b, p, fused, cfg)?;
        Ok(TeacherForward {
            head,
            layers,
            attn: last_attn.expect("at least one layer"),
            layout: rgb.segments,
        })
    }
}
