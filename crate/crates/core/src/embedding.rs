//! Patch tokenization with learned projection, positional and modality
//! embeddings.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{trunc_normal, Binder, Graph, ParamSet, Rng, Tensor, Var};

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "image {height}x{width}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self::new(height, width, channels, vec![v; height * width * channels]).unwrap()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Single-channel planes are replicated to three channels.
    pub fn to_rgb3(&self) -> ImagePlane {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(self.channels)
            .flat_map(|px| [px[0]; 3])
            .collect();
        ImagePlane::new(self.height, self.width, 3, data).unwrap()
    }

    pub fn channel_means(&self) -> Vec<f32> {
        let n = (self.height * self.width) as f64;
        (0..self.channels)
            .map(|c| {
                let s: f64 = self.data.iter().skip(c).step_by(self.channels).map(|&v| v as f64).sum();
                (s / n) as f32
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    Tir,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Tir => "tir",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Rgb => Modality::Tir,
            Modality::Tir => Modality::Rgb,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Template,
    Search,
}

/// A contiguous run of tokens from one crop of one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub role: Role,
    pub modality: Modality,
    pub start: usize,
    pub len: usize,
    pub grid: (usize, usize),
}

/// Token matrix on a graph plus the segment layout of its rows.
#[derive(Clone, Debug)]
pub struct TokenSeq {
    pub tokens: Var,
    pub segments: Vec<Segment>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, role: Role, modality: Modality) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.role == role && s.modality == modality)
    }

    /// Layout of `self` followed by `other`, with `other` offset past `self`.
    pub fn joined_layout(&self, other: &TokenSeq) -> Vec<Segment> {
        let off = self.len();
        let mut segs = self.segments.clone();
        segs.extend(other.segments.iter().map(|s| Segment {
            start: s.start + off,
            ..*s
        }));
        segs
    }
}

/// Splits an image into `P×P` patches: patches in row-major grid order, each
/// flattened row-major over pixels with channels innermost.
pub fn patchify(image: &ImagePlane, p: usize) -> Result<Tensor> {
    if p == 0 || image.height % p != 0 || image.width % p != 0 {
        return Err(Error::domain(format!(
            "{}x{} image is not divisible into {p}x{p} patches",
            image.height, image.width
        )));
    }
    let (gh, gw, c) = (image.height / p, image.width / p, image.channels);
    let mut out = Vec::with_capacity(image.data.len());
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                let y = gy * p + py;
                let row = (y * image.width + gx * p) * c;
                out.extend_from_slice(&image.data[row..row + p * c]);
            }
        }
    }
    Tensor::new(&[gh * gw, p * p * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, p: usize, height: usize, width: usize, channels: usize) -> Result<ImagePlane> {
    let (gh, gw) = (height / p, width / p);
    if patches.shape() != [gh * gw, p * p * channels] || height % p != 0 || width % p != 0 {
        return Err(Error::dim(format!(
            "patches {:?} do not tile a {height}x{width}x{channels} image",
            patches.shape()
        )));
    }
    let mut img = ImagePlane::filled(height, width, channels, 0.0);
    let row_len = p * channels;
    for gy in 0..gh {
        for gx in 0..gw {
            let patch = &patches.data()[(gy * gw + gx) * p * row_len..(gy * gw + gx + 1) * p * row_len];
            for py in 0..p {
                let dst = ((gy * p + py) * width + gx * p) * channels;
                img.data[dst..dst + row_len].copy_from_slice(&patch[py * row_len..(py + 1) * row_len]);
            }
        }
    }
    Ok(img)
}

/// Creates the embedding parameters under `{prefix}/embed/`.
pub fn init_params(params: &mut ParamSet, rng: &mut Rng, prefix: &str, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.d_model;
    let e = format!("{prefix}/embed");
    params.insert(format!("{e}/patch/weight"), trunc_normal(rng, &[cfg.patch_dim(), d], 0.02))?;
    params.insert(format!("{e}/patch/bias"), Tensor::zeros(&[d]))?;
    params.insert(format!("{e}/pos_template"), trunc_normal(rng, &[cfg.n_template(), d], 0.02))?;
    params.insert(format!("{e}/pos_search"), trunc_normal(rng, &[cfg.n_search(), d], 0.02))?;
    for m in [Modality::Rgb, Modality::Tir] {
        params.insert(format!("{e}/modality_{}", m.tag()), trunc_normal(rng, &[d], 0.02))?;
    }
    Ok(())
}

fn embed_one(
    g: &mut Graph,
    b: &Binder,
    prefix: &str,
    image: &ImagePlane,
    role: Role,
    modality: Modality,
    cfg: &ModelConfig,
) -> Result<Var> {
    let e = format!("{prefix}/embed");
    let patches = patchify(&image.to_rgb3(), cfg.patch)?;
    let pos_name = match role {
        Role::Template => "pos_template",
        Role::Search => "pos_search",
    };
    let pos = b.get(g, &format!("{e}/{pos_name}"))?;
    if g.shape(pos)[0] != patches.shape()[0] {
        return Err(Error::dim(format!(
            "{:?} crop yields {} tokens, positional table has {}",
            role,
            patches.shape()[0],
            g.shape(pos)[0]
        )));
    }
    let w = b.get(g, &format!("{e}/patch/weight"))?;
    let bias = b.get(g, &format!("{e}/patch/bias"))?;
    let m = b.get(g, &format!("{e}/modality_{}", modality.tag()))?;
    let x = g.constant(patches);
    let t = g.linear(x, w, bias)?;
    let t = g.add(t, pos)?;
    g.add(t, m)
}

/// Embeds a template/search pair of one modality: template tokens first.
pub fn embed_pair(
    g: &mut Graph,
    b: &Binder,
    prefix: &str,
    z: &ImagePlane,
    x: &ImagePlane,
    modality: Modality,
    cfg: &ModelConfig,
) -> Result<TokenSeq> {
    let tz = embed_one(g, b, prefix, z, Role::Template, modality, cfg)?;
    let tx = embed_one(g, b, prefix, x, Role::Search, modality, cfg)?;
    let (nz, nx) = (g.shape(tz)[0], g.shape(tx)[0]);
    let tokens = g.concat_rows(&[tz, tx])?;
    let p = cfg.patch;
    Ok(TokenSeq {
        tokens,
        segments: vec![
            Segment {
                role: Role::Template,
                modality,
                start: 0,
                len: nz,
                grid: (z.height / p, z.width / p),
            },
            Segment {
                role: Role::Search,
                modality,
                start: nz,
                len: nx,
                grid: (x.height / p, x.width / p),
            },
        ],
    })
}
