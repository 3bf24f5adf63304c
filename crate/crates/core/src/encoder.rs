//! Pre-norm ViT encoder layers and the analytic self-attention cost model.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{trunc_normal, Binder, Graph, ParamSet, Rng, Tensor, Var};

/// Closed-form self-attention cost `4·N·D² + 2·N²·D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionCost {
    pub n: u64,
    pub d: u64,
    pub flops: u128,
}

impl AttentionCost {
    pub fn new(n: u64, d: u64) -> Result<Self> {
        Ok(Self {
            n,
            d,
            flops: sa_flops(n, d)?,
        })
    }
}

/// Exact self-attention operation count for `n` tokens of width `d`.
pub fn sa_flops(n: u64, d: u64) -> Result<u128> {
    if n == 0 || d == 0 {
        return Err(Error::domain("token count and width must be at least 1"));
    }
    let (n, d) = (n as u128, d as u128);
    let proj = n.checked_mul(d).and_then(|v| v.checked_mul(d)).and_then(|v| v.checked_mul(4));
    let attn = n.checked_mul(n).and_then(|v| v.checked_mul(d)).and_then(|v| v.checked_mul(2));
    proj.zip(attn)
        .and_then(|(a, b)| a.checked_add(b))
        .ok_or_else(|| Error::domain("attention cost overflows 128 bits"))
}

/// Cost ratio of attending over `n2` tokens versus `n1` tokens at width `d`.
pub fn sa_flops_ratio(n1: u64, n2: u64, d: u64) -> Result<f64> {
    Ok(sa_flops(n2, d)? as f64 / sa_flops(n1, d)? as f64)
}

const LINEARS: [(&str, usize, usize); 6] = [
    // (name, in multiplier, out multiplier) relative to d_model; mlp uses ratio
    ("attn/q", 1, 1),
    ("attn/k", 1, 1),
    ("attn/v", 1, 1),
    ("attn/out", 1, 1),
    ("mlp/fc1", 1, 0),
    ("mlp/fc2", 0, 1),
];

pub fn layer_prefix(prefix: &str, l: usize) -> String {
    format!("{prefix}/encoder/layer{l}")
}

/// Creates `layers` encoder blocks plus the final norm under `{prefix}/encoder/`.
pub fn init_params(params: &mut ParamSet, rng: &mut Rng, prefix: &str, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.d_model;
    let hidden = d * cfg.mlp_ratio;
    for l in 0..cfg.layers {
        let lp = layer_prefix(prefix, l);
        for ln in ["ln1", "ln2"] {
            params.insert(format!("{lp}/{ln}/gamma"), Tensor::filled(&[d], 1.0))?;
            params.insert(format!("{lp}/{ln}/beta"), Tensor::zeros(&[d]))?;
        }
        for (name, i, o) in LINEARS {
            let fan_in = if i == 0 { hidden } else { d };
            let fan_out = if o == 0 { hidden } else { d };
            params.insert(format!("{lp}/{name}/weight"), trunc_normal(rng, &[fan_in, fan_out], 0.02))?;
            params.insert(format!("{lp}/{name}/bias"), Tensor::zeros(&[fan_out]))?;
        }
    }
    params.insert(format!("{prefix}/encoder/final_norm/gamma"), Tensor::filled(&[d], 1.0))?;
    params.insert(format!("{prefix}/encoder/final_norm/beta"), Tensor::zeros(&[d]))?;
    Ok(())
}

fn linear(g: &mut Graph, b: &Binder, name: &str, x: Var) -> Result<Var> {
    let w = b.get(g, &format!("{name}/weight"))?;
    let bias = b.get(g, &format!("{name}/bias"))?;
    g.linear(x, w, bias)
}

pub fn norm(g: &mut Graph, b: &Binder, name: &str, x: Var) -> Result<Var> {
    let gamma = b.get(g, &format!("{name}/gamma"))?;
    let beta = b.get(g, &format!("{name}/beta"))?;
    g.layer_norm(x, gamma, beta)
}

/// Output of multi-head self-attention.
pub struct Attention {
    pub out: Var,
    /// Row-stochastic `N×N` attention map of every head.
    pub probs: Vec<Var>,
}

/// Full (unmasked) multi-head scaled dot-product attention over all rows.
pub fn mhsa(g: &mut Graph, b: &Binder, layer: &str, x: Var, heads: usize) -> Result<Attention> {
    let d = g.shape(x)[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!("width {d} not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let q = linear(g, b, &format!("{layer}/attn/q"), x)?;
    let k = linear(g, b, &format!("{layer}/attn/k"), x)?;
    let v = linear(g, b, &format!("{layer}/attn/v"), x)?;
    let scale = 1.0 / (dk as f32).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, scale);
        let a = g.softmax(s, 1)?;
        outs.push(g.matmul(a, vh)?);
        probs.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let out = linear(g, b, &format!("{layer}/attn/out"), cat)?;
    Ok(Attention { out, probs })
}

/// `y = x + mhsa(LN₁(x))`, then `y + MLP(LN₂(y))` with GELU.
pub fn encoder_layer(g: &mut Graph, b: &Binder, layer: &str, x: Var, heads: usize) -> Result<(Var, Attention)> {
    let h = norm(g, b, &format!("{layer}/ln1"), x)?;
    let attn = mhsa(g, b, layer, h, heads)?;
    let y = g.add(x, attn.out)?;
    let h = norm(g, b, &format!("{layer}/ln2"), y)?;
    let h = linear(g, b, &format!("{layer}/mlp/fc1"), h)?;
    let h = g.gelu(h);
    let h = linear(g, b, &format!("{layer}/mlp/fc2"), h)?;
    Ok((g.add(y, h)?, attn))
}
