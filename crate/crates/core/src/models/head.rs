//! Centre-style localization head: three 3×3 conv stacks over the search grid
//! producing a score map, sub-cell offsets and normalized box sizes.

use crate::bbox::BBox;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{trunc_normal, Binder, Graph, ParamSet, Rng, Tensor, Var};

const BRANCHES: [(&str, usize); 3] = [("score", 1), ("offset", 2), ("size", 2)];
const DEPTH: usize = 3;
/// Score bias prior: sigmoid(-2.19) ≈ 0.1.
const SCORE_PRIOR: f32 = -2.19;

pub fn init_params(params: &mut ParamSet, rng: &mut Rng, prefix: &str, cfg: &ModelConfig) -> Result<()> {
    let (d, c) = (cfg.d_model, cfg.head_channels);
    for (branch, outc) in BRANCHES {
        for k in 0..DEPTH {
            let cin = if k == 0 { d } else { c };
            let cout = if k == DEPTH - 1 { outc } else { c };
            let name = format!("{prefix}/head/{branch}/conv{k}");
            params.insert(format!("{name}/weight"), trunc_normal(rng, &[9 * cin, cout], 0.02))?;
            let bias = if branch == "score" && k == DEPTH - 1 {
                Tensor::filled(&[cout], SCORE_PRIOR)
            } else {
                Tensor::zeros(&[cout])
            };
            params.insert(format!("{name}/bias"), bias)?;
        }
    }
    Ok(())
}

/// Head activations on a graph. All maps are stored row-per-cell: `[G² × k]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub score: Var,
    pub offset: Var,
    pub size: Var,
}

/// Head activations pulled off the graph, plus the decoded box.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    /// `[G × G]`, sigmoid scores.
    pub score: Tensor,
    /// `[2 × G × G]`, x then y sub-cell offsets.
    pub offset: Tensor,
    /// `[2 × G × G]`, width then height as a fraction of the search crop.
    pub size: Tensor,
    pub peak: usize,
    /// Decoded box in search-crop pixels.
    pub bbox: BBox,
}

pub fn head_forward(g: &mut Graph, b: &Binder, prefix: &str, feats: Var, cfg: &ModelConfig) -> Result<HeadVars> {
    let grid = cfg.grid();
    if g.shape(feats) != [grid * grid, cfg.d_model] {
        return Err(Error::dim(format!(
            "head expects {}x{} search features, got {:?}",
            grid * grid,
            cfg.d_model,
            g.shape(feats)
        )));
    }
    let mut outs = Vec::with_capacity(3);
    for (branch, _) in BRANCHES {
        let mut h = feats;
        for k in 0..DEPTH {
            let name = format!("{prefix}/head/{branch}/conv{k}");
            let w = b.get(g, &format!("{name}/weight"))?;
            let bias = b.get(g, &format!("{name}/bias"))?;
            let cols = g.im2col3x3(h, grid, grid)?;
            h = g.linear(cols, w, bias)?;
            if k < DEPTH - 1 {
                h = g.relu(h);
            }
        }
        outs.push(g.sigmoid(h));
    }
    Ok(HeadVars {
        score: outs[0],
        offset: outs[1],
        size: outs[2],
    })
}

/// Peak cell (lowest flat index on ties) and the box it decodes to:
/// centre `((j + off_x)·P, (i + off_y)·P)`, extent `size · search_size`,
/// clipped to the crop.
pub fn decode(score: &[f32], offset: &[f32], size: &[f32], cfg: &ModelConfig) -> (usize, BBox) {
    let mut peak = 0;
    for (i, &v) in score.iter().enumerate() {
        if v > score[peak] {
            peak = i;
        }
    }
    let grid = cfg.grid();
    let (i, j) = (peak / grid, peak % grid);
    let p = cfg.patch as f64;
    let s = cfg.search_size as f64;
    let cx = (j as f64 + offset[2 * peak] as f64) * p;
    let cy = (i as f64 + offset[2 * peak + 1] as f64) * p;
    let w = size[2 * peak] as f64 * s;
    let h = size[2 * peak + 1] as f64 * s;
    (peak, BBox::from_center(cx, cy, w, h).clip(s, s))
}

fn planes(t: &Tensor, grid: usize) -> Tensor {
    // [G² × 2] rows-per-cell → [2 × G × G] channel planes
    let n = grid * grid;
    let mut out = vec![0.0; 2 * n];
    for cell in 0..n {
        out[cell] = t.data()[2 * cell];
        out[n + cell] = t.data()[2 * cell + 1];
    }
    Tensor::new(&[2, grid, grid], out).unwrap()
}

impl HeadVars {
    pub fn output(&self, g: &Graph, cfg: &ModelConfig) -> HeadOutput {
        let grid = cfg.grid();
        let (score, offset, size) = (g.value(self.score), g.value(self.offset), g.value(self.size));
        let (peak, bbox) = decode(score.data(), offset.data(), size.data(), cfg);
        HeadOutput {
            score: score.clone().reshape(&[grid, grid]).unwrap(),
            offset: planes(offset, grid),
            size: planes(size, grid),
            peak,
            bbox,
        }
    }

    /// Differentiable box at cell `peak`, normalized by the crop size:
    /// `[x, y, w, h]` with the centre built from the offset map.
    pub fn box_at(&self, g: &mut Graph, peak: usize, cfg: &ModelConfig) -> Result<Var> {
        let grid = cfg.grid();
        let (i, j) = ((peak / grid) as f32, (peak % grid) as f32);
        let off = g.gather(self.offset, &[2 * peak, 2 * peak + 1])?;
        let wh = g.gather(self.size, &[2 * peak, 2 * peak + 1])?;
        let inv = 1.0 / grid as f32;
        let centre = g.scale(off, inv);
        let cell = g.constant(Tensor::vector(vec![j * inv, i * inv]));
        let centre = g.add(centre, cell)?;
        let half = g.scale(wh, 0.5);
        let corner = g.sub(centre, half)?;
        let corner = g.reshape(corner, &[1, 2])?;
        let wh = g.reshape(wh, &[1, 2])?;
        let b = g.concat_cols(&[corner, wh])?;
        g.reshape(b, &[4])
    }
}
