//! Multi-modal mutual prompter.
//!
//! Each prompter reweights its three inputs (own stream, other stream,
//! previous prompt) first per token ("spatial" attention, pooled over the
//! feature axis) and then per channel ("token" attention, pooled over the
//! token axis). The own-stream branch is additionally sharpened by a
//! per-channel softmax mask over token positions (the fovea), and the three
//! branches are summed.

use crate::config::{ModelConfig, PrompterToggles};
use crate::error::{Error, Result};
use crate::numerics::{trunc_normal, Binder, Graph, ParamSet, ReduceMode, Rng, Tensor, Var, KERNEL_TAPS};

/// Parameter-name prefix of prompter `index` on the `branch` (rgb/tir) line.
pub fn prompter_prefix(prefix: &str, branch: &str, index: usize) -> String {
    format!("{prefix}/prompt/{branch}/{index}")
}

/// Creates one prompter's projections. `g_s2` starts random and `g_t` at
/// zero, which already makes the initial prompt exactly zero; see
/// [`zero_init`] for the fully zeroed variant.
pub fn init_params(params: &mut ParamSet, rng: &mut Rng, name: &str, cfg: &ModelConfig) -> Result<()> {
    let n = cfg.n_tokens();
    let r = cfg.reduced_tokens();
    params.insert(format!("{name}/g_s1/weight"), trunc_normal(rng, &[n, r], 0.02))?;
    params.insert(format!("{name}/g_s1/bias"), Tensor::zeros(&[r]))?;
    params.insert(format!("{name}/g_s2/weight"), trunc_normal(rng, &[r, n], 0.02))?;
    params.insert(format!("{name}/g_s2/bias"), Tensor::zeros(&[n]))?;
    params.insert(format!("{name}/g_t/kernel"), Tensor::zeros(&[2, KERNEL_TAPS]))?;
    params.insert(format!("{name}/g_t/bias"), Tensor::zeros(&[1]))?;
    Ok(())
}

/// Zeroes `g_s2` and `g_t` of every prompter in `params`.
pub fn zero_init(params: &mut ParamSet) {
    for p in params.iter_mut() {
        if p.name.contains("/prompt/") && (p.name.contains("/g_s2/") || p.name.contains("/g_t/")) {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Graph handles of one prompter's parameters.
#[derive(Clone, Copy, Debug)]
pub struct MmmpVars {
    pub s1_w: Var,
    pub s1_b: Var,
    pub s2_w: Var,
    pub s2_b: Var,
    pub t_kernel: Var,
    pub t_bias: Var,
}

impl MmmpVars {
    pub fn bind(g: &mut Graph, b: &Binder, name: &str) -> Result<Self> {
        Ok(Self {
            s1_w: b.get(g, &format!("{name}/g_s1/weight"))?,
            s1_b: b.get(g, &format!("{name}/g_s1/bias"))?,
            s2_w: b.get(g, &format!("{name}/g_s2/weight"))?,
            s2_b: b.get(g, &format!("{name}/g_s2/bias"))?,
            t_kernel: b.get(g, &format!("{name}/g_t/kernel"))?,
            t_bias: b.get(g, &format!("{name}/g_t/bias"))?,
        })
    }
}

fn check_tokens(g: &Graph, p: &MmmpVars, h: Var) -> Result<(usize, usize)> {
    let s = g.shape(h);
    if s.len() != 2 {
        return Err(Error::dim(format!("prompter input must be N×D, got {s:?}")));
    }
    let n = g.shape(p.s1_w)[0];
    if s[0] != n {
        return Err(Error::dim(format!("prompter built for {n} tokens, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// Per-token reweighting: pool over features (mean and max), bottleneck
/// `N → ⌈N/r⌉ → N` shared by both pools, sum, and scale each token row.
pub fn spatial_attention(g: &mut Graph, p: &MmmpVars, h: Var) -> Result<Var> {
    let (n, _) = check_tokens(g, p, h)?;
    let mut weights = Vec::with_capacity(2);
    for mode in [ReduceMode::Mean, ReduceMode::Max] {
        let pooled = g.reduce(h, 1, mode)?;
        let z = g.linear(pooled, p.s1_w, p.s1_b)?;
        let z = g.relu(z);
        weights.push(g.linear(z, p.s2_w, p.s2_b)?);
    }
    let w = g.add(weights[0], weights[1])?;
    let w = g.reshape(w, &[n, 1])?;
    g.mul(h, w)
}

/// Per-channel reweighting: pool over tokens (mean and max), stack to `2×D`,
/// convolve down to `1×D` and scale each channel column.
pub fn token_attention(g: &mut Graph, p: &MmmpVars, hs: Var) -> Result<Var> {
    let (_, d) = check_tokens(g, p, hs)?;
    let avg = g.reduce(hs, 0, ReduceMode::Mean)?;
    let max = g.reduce(hs, 0, ReduceMode::Max)?;
    let avg = g.reshape(avg, &[1, d])?;
    let max = g.reshape(max, &[1, d])?;
    let stacked = g.concat_rows(&[avg, max])?;
    let w = g.conv1d_2to1(stacked, p.t_kernel, p.t_bias)?;
    g.mul(hs, w)
}

/// Per-channel softmax over token positions of `λ·H`, applied as a mask to `H`.
pub fn fovea(g: &mut Graph, ht: Var, lambda: f32) -> Result<Var> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("fovea λ must be positive, got {lambda}")));
    }
    let s = g.scale(ht, lambda);
    let mask = g.softmax(s, 0)?;
    g.mul(mask, ht)
}

fn reweight(g: &mut Graph, p: &MmmpVars, h: Var, t: PrompterToggles) -> Result<Var> {
    let hs = if t.spatial { spatial_attention(g, p, h)? } else { h };
    if t.token {
        token_attention(g, p, hs)
    } else {
        Ok(hs)
    }
}

/// `fovea(self') + other' + prev'`, where `x'` is `x` after spatial then token
/// attention. `prev` is absent for the first prompter of a stream or when
/// history is switched off.
pub fn mmmp_forward(
    g: &mut Graph,
    p: &MmmpVars,
    h_self: Var,
    h_other: Var,
    prev: Option<Var>,
    lambda: f32,
    toggles: PrompterToggles,
) -> Result<Var> {
    let s = g.shape(h_self).to_vec();
    for v in [Some(h_other), prev].into_iter().flatten() {
        if g.shape(v) != s.as_slice() {
            return Err(Error::dim(format!(
                "prompter inputs {:?} and {:?} differ",
                s,
                g.shape(v)
            )));
        }
    }
    let own = reweight(g, p, h_self, toggles)?;
    let own = fovea(g, own, lambda)?;
    let other = reweight(g, p, h_other, toggles)?;
    let mut out = g.add(own, other)?;
    if let Some(prev) = prev.filter(|_| toggles.history) {
        let prev = reweight(g, p, prev, toggles)?;
        out = g.add(out, prev)?;
    }
    Ok(out)
}
