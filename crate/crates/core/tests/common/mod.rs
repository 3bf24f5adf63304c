// Shared test support: an f64 re-implementation of every forward pass
// (written from the model definitions, not from the graph code) and a
// central-difference gradient checker over it.
#![allow(dead_code)]

pub mod gradcheck;

use std::collections::HashMap;

use rtkd::config::{ModelConfig, PrompterToggles};
use rtkd::embedding::ImagePlane;
use rtkd::models::TrackInputs;
use rtkd::numerics::{ParamSet, Tensor};

/// Dense row-major f64 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct M {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl M {
    pub fn new(r: usize, c: usize, d: Vec<f64>) -> Self {
        assert_eq!(d.len(), r * c);
        Self { r, c, d }
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        Self::new(r, c, vec![0.0; r * c])
    }

    /// Rank-1 tensors become a single row.
    pub fn from_tensor(t: &Tensor) -> Self {
        let d = t.data().iter().map(|&v| v as f64).collect();
        if t.rank() == 1 {
            Self::new(1, t.numel(), d)
        } else {
            Self::new(t.rows(), t.cols(), d)
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self, start: usize, len: usize) -> M {
        M::new(len, self.c, self.d[start * self.c..(start + len) * self.c].to_vec())
    }

    pub fn cols(&self, start: usize, len: usize) -> M {
        let mut d = Vec::with_capacity(self.r * len);
        for i in 0..self.r {
            d.extend_from_slice(&self.row(i)[start..start + len]);
        }
        M::new(self.r, len, d)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> M {
        M::new(self.r, self.c, self.d.iter().map(|&v| f(v)).collect())
    }
}

pub type Params = HashMap<String, M>;

pub fn params_of(set: &ParamSet) -> Params {
    set.iter().map(|p| (p.name.clone(), M::from_tensor(&p.tensor))).collect()
}

fn p<'a>(ps: &'a Params, name: &str) -> &'a M {
    ps.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

// ----------------------------------------------------------------------
// elementary ops
// ----------------------------------------------------------------------

pub fn matmul(a: &M, b: &M) -> M {
    assert_eq!(a.c, b.r);
    let mut out = M::zeros(a.r, b.c);
    for i in 0..a.r {
        for k in 0..a.c {
            let x = a.at(i, k);
            for j in 0..b.c {
                out.d[i * b.c + j] += x * b.at(k, j);
            }
        }
    }
    out
}

pub fn transpose(a: &M) -> M {
    let mut out = M::zeros(a.c, a.r);
    for i in 0..a.r {
        for j in 0..a.c {
            out.d[j * a.r + i] = a.at(i, j);
        }
    }
    out
}

pub fn add(a: &M, b: &M) -> M {
    assert_eq!((a.r, a.c), (b.r, b.c));
    M::new(a.r, a.c, a.d.iter().zip(&b.d).map(|(x, y)| x + y).collect())
}

/// Adds a length-`c` vector to every row.
pub fn add_row(a: &M, v: &[f64]) -> M {
    assert_eq!(a.c, v.len());
    let mut out = a.clone();
    for i in 0..a.r {
        for j in 0..a.c {
            out.d[i * a.c + j] += v[j];
        }
    }
    out
}

pub fn linear(x: &M, w: &M, b: &M) -> M {
    add_row(&matmul(x, w), &b.d)
}

pub fn concat_rows(parts: &[&M]) -> M {
    let c = parts[0].c;
    let mut d = Vec::new();
    let mut r = 0;
    for m in parts {
        assert_eq!(m.c, c);
        d.extend_from_slice(&m.d);
        r += m.r;
    }
    M::new(r, c, d)
}

pub fn concat_cols(parts: &[&M]) -> M {
    let r = parts[0].r;
    let c: usize = parts.iter().map(|m| m.c).sum();
    let mut d = Vec::with_capacity(r * c);
    for i in 0..r {
        for m in parts {
            d.extend_from_slice(m.row(i));
        }
    }
    M::new(r, c, d)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn softmax_vec(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn softmax_rows(x: &M) -> M {
    let mut d = Vec::with_capacity(x.d.len());
    for i in 0..x.r {
        d.extend(softmax_vec(x.row(i)));
    }
    M::new(x.r, x.c, d)
}

pub fn softmax_cols(x: &M) -> M {
    transpose(&softmax_rows(&transpose(x)))
}

pub fn row_means(x: &M) -> Vec<f64> {
    (0..x.r).map(|i| x.row(i).iter().sum::<f64>() / x.c as f64).collect()
}

pub fn row_maxes(x: &M) -> Vec<f64> {
    (0..x.r).map(|i| x.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect()
}

pub fn layer_norm(x: &M, gamma: &M, beta: &M) -> M {
    let mut out = M::zeros(x.r, x.c);
    for i in 0..x.r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / x.c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.c as f64;
        let s = (var + 1e-5).sqrt();
        for j in 0..x.c {
            out.d[i * x.c + j] = (row[j] - mean) / s * gamma.d[j] + beta.d[j];
        }
    }
    out
}

/// `out[o] = b + Σ_c Σ_k K[c][k] · x[c][o + k − 3]`, zero outside.
pub fn conv_2to1(x: &M, kernel: &M, bias: f64) -> Vec<f64> {
    assert_eq!((x.r, kernel.r, kernel.c), (2, 2, 7));
    (0..x.c)
        .map(|o| {
            let mut acc = bias;
            for c in 0..2 {
                for k in 0..7 {
                    let src = o as i64 + k as i64 - 3;
                    if src >= 0 && (src as usize) < x.c {
                        acc += kernel.at(c, k) * x.at(c, src as usize);
                    }
                }
            }
            acc
        })
        .collect()
}

/// 3×3 neighbourhoods of a `gh×gw` grid, column `(ky·3+kx)·C + c`.
pub fn im2col(x: &M, gh: usize, gw: usize) -> M {
    let c = x.c;
    let mut out = M::zeros(gh * gw, 9 * c);
    for i in 0..gh {
        for j in 0..gw {
            for ky in 0..3 {
                for kx in 0..3 {
                    let (si, sj) = (i as i64 + ky as i64 - 1, j as i64 + kx as i64 - 1);
                    if si < 0 || sj < 0 || si >= gh as i64 || sj >= gw as i64 {
                        continue;
                    }
                    let src = si as usize * gw + sj as usize;
                    for ch in 0..c {
                        out.d[(i * gw + j) * 9 * c + (ky * 3 + kx) * c + ch] = x.at(src, ch);
                    }
                }
            }
        }
    }
    out
}

// ----------------------------------------------------------------------
// encoder
// ----------------------------------------------------------------------

fn lin(ps: &Params, name: &str, x: &M) -> M {
    linear(x, p(ps, &format!("{name}/weight")), p(ps, &format!("{name}/bias")))
}

fn norm(ps: &Params, name: &str, x: &M) -> M {
    layer_norm(x, p(ps, &format!("{name}/gamma")), p(ps, &format!("{name}/beta")))
}

pub fn mhsa(ps: &Params, layer: &str, x: &M, heads: usize) -> (M, Vec<M>) {
    let dk = x.c / heads;
    let q = lin(ps, &format!("{layer}/attn/q"), x);
    let k = lin(ps, &format!("{layer}/attn/k"), x);
    let v = lin(ps, &format!("{layer}/attn/v"), x);
    let mut outs = Vec::new();
    let mut probs = Vec::new();
    for h in 0..heads {
        let s = matmul(&q.cols(h * dk, dk), &transpose(&k.cols(h * dk, dk)));
        let a = softmax_rows(&s.map(|z| z / (dk as f64).sqrt()));
        outs.push(matmul(&a, &v.cols(h * dk, dk)));
        probs.push(a);
    }
    let refs: Vec<&M> = outs.iter().collect();
    (lin(ps, &format!("{layer}/attn/out"), &concat_cols(&refs)), probs)
}

pub fn encoder_layer(ps: &Params, layer: &str, x: &M, heads: usize) -> M {
    let (a, _) = mhsa(ps, layer, &norm(ps, &format!("{layer}/ln1"), x), heads);
    let y = add(x, &a);
    let h = lin(ps, &format!("{layer}/mlp/fc1"), &norm(ps, &format!("{layer}/ln2"), &y)).map(gelu);
    add(&y, &lin(ps, &format!("{layer}/mlp/fc2"), &h))
}

// ----------------------------------------------------------------------
// prompter
// ----------------------------------------------------------------------

pub fn spatial(ps: &Params, name: &str, h: &M) -> M {
    let w1 = p(ps, &format!("{name}/g_s1/weight"));
    let b1 = p(ps, &format!("{name}/g_s1/bias"));
    let w2 = p(ps, &format!("{name}/g_s2/weight"));
    let b2 = p(ps, &format!("{name}/g_s2/bias"));
    let mut w = vec![0.0; h.r];
    for pooled in [row_means(h), row_maxes(h)] {
        let z = linear(&M::new(1, h.r, pooled), w1, b1).map(relu);
        let s = linear(&z, w2, b2);
        for (acc, v) in w.iter_mut().zip(&s.d) {
            *acc += v;
        }
    }
    let mut out = h.clone();
    for i in 0..h.r {
        for j in 0..h.c {
            out.d[i * h.c + j] *= w[i];
        }
    }
    out
}

pub fn token(ps: &Params, name: &str, h: &M) -> M {
    let ht = transpose(h);
    let stacked = M::new(2, h.c, [row_means(&ht), row_maxes(&ht)].concat());
    let w = conv_2to1(&stacked, p(ps, &format!("{name}/g_t/kernel")), p(ps, &format!("{name}/g_t/bias")).d[0]);
    let mut out = h.clone();
    for i in 0..h.r {
        for j in 0..h.c {
            out.d[i * h.c + j] *= w[j];
        }
    }
    out
}

pub fn fovea(h: &M, lambda: f64) -> M {
    let mask = softmax_cols(&h.map(|v| v * lambda));
    M::new(h.r, h.c, mask.d.iter().zip(&h.d).map(|(m, v)| m * v).collect())
}

fn reweight(ps: &Params, name: &str, h: &M, t: PrompterToggles) -> M {
    let hs = if t.spatial { spatial(ps, name, h) } else { h.clone() };
    if t.token {
        token(ps, name, &hs)
    } else {
        hs
    }
}

pub fn mmmp(ps: &Params, name: &str, own: &M, other: &M, prev: Option<&M>, lambda: f64, t: PrompterToggles) -> M {
    let mut out = add(&fovea(&reweight(ps, name, own, t), lambda), &reweight(ps, name, other, t));
    if let Some(prev) = prev.filter(|_| t.history) {
        out = add(&out, &reweight(ps, name, prev, t));
    }
    out
}

// ----------------------------------------------------------------------
// embedding, head, full models
// ----------------------------------------------------------------------

/// Row per patch in grid order; pixels row-major, three channels innermost.
pub fn patches(img: &ImagePlane, patch: usize) -> M {
    let (gh, gw) = (img.height / patch, img.width / patch);
    let mut d = Vec::new();
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                for px in 0..patch {
                    for c in 0..3 {
                        let ch = if img.channels == 1 { 0 } else { c };
                        d.push(img.get(gy * patch + py, gx * patch + px, ch) as f64);
                    }
                }
            }
        }
    }
    M::new(gh * gw, patch * patch * 3, d)
}

fn embed(ps: &Params, pre: &str, z: &ImagePlane, x: &ImagePlane, tag: &str, cfg: &ModelConfig) -> M {
    let e = format!("{pre}/embed");
    let one = |img: &ImagePlane, pos: &str| {
        let t = lin(ps, &format!("{e}/patch"), &patches(img, cfg.patch));
        let t = add(&t, p(ps, &format!("{e}/{pos}")));
        add_row(&t, &p(ps, &format!("{e}/modality_{tag}")).d)
    };
    concat_rows(&[&one(z, "pos_template"), &one(x, "pos_search")])
}

/// Sigmoid maps, one row per cell.
#[derive(Clone, Debug)]
pub struct Head {
    pub score: Vec<f64>,
    pub offset: Vec<f64>,
    pub size: Vec<f64>,
}

pub fn head(ps: &Params, pre: &str, feats: &M, cfg: &ModelConfig) -> Head {
    let g = cfg.grid();
    let branch = |name: &str| {
        let mut h = feats.clone();
        for k in 0..3 {
            h = lin(ps, &format!("{pre}/head/{name}/conv{k}"), &im2col(&h, g, g));
            if k < 2 {
                h = h.map(relu);
            }
        }
        h.map(sigmoid).d
    };
    Head {
        score: branch("score"),
        offset: branch("offset"),
        size: branch("size"),
    }
}

fn fuse(ps: &Params, pre: &str, a: &M, b: &M) -> M {
    lin(ps, &format!("{pre}/dr"), &concat_cols(&[a, b]))
}

pub struct TeacherOut {
    pub head: Head,
    pub layers: Vec<(M, M)>,
}

pub fn teacher(ps: &Params, cfg: &ModelConfig, inp: &TrackInputs) -> TeacherOut {
    let pre = "teacher";
    let lam = cfg.fovea_lambda as f64;
    let t = cfg.prompter;
    let name = |s: usize, l: usize| format!("{pre}/prompt/{}/{l}", ["rgb", "tir"][s]);
    let mut h = [
        embed(ps, pre, &inp.z_rgb, &inp.x_rgb, "rgb", cfg),
        embed(ps, pre, &inp.z_tir, &inp.x_tir, "tir", cfg),
    ];
    let mut prev: [Option<M>; 2] = [None, None];
    if t.enabled {
        for s in 0..2 {
            prev[s] = Some(mmmp(ps, &name(s, 0), &h[s], &h[1 - s], None, lam, t));
        }
    }
    let mut layers = Vec::new();
    for l in 1..=cfg.layers {
        let mut input = h.clone();
        if t.enabled {
            let prompts: Vec<M> = (0..2)
                .map(|s| mmmp(ps, &name(s, l), &h[s], &h[1 - s], prev[s].as_ref(), lam, t))
                .collect();
            for s in 0..2 {
                input[s] = add(&h[s], &prompts[s]);
            }
            prev = [Some(prompts[0].clone()), Some(prompts[1].clone())];
        }
        let lp = format!("{pre}/encoder/layer{}", l - 1);
        h = [
            encoder_layer(ps, &lp, &input[0], cfg.heads),
            encoder_layer(ps, &lp, &input[1], cfg.heads),
        ];
        layers.push((h[0].clone(), h[1].clone()));
    }
    let fin = format!("{pre}/encoder/final_norm");
    let (nz, nx) = (cfg.n_template(), cfg.n_search());
    let s_rgb = norm(ps, &fin, &h[0]).rows(nz, nx);
    let s_tir = norm(ps, &fin, &h[1]).rows(nz, nx);
    TeacherOut {
        head: head(ps, pre, &fuse(ps, pre, &s_rgb, &s_tir), cfg),
        layers,
    }
}

pub struct StudentOut {
    pub head: Head,
    pub layers: Vec<M>,
}

pub fn student(ps: &Params, cfg: &ModelConfig, inp: &TrackInputs) -> StudentOut {
    let pre = "student";
    let rgb = embed(ps, pre, &inp.z_rgb, &inp.x_rgb, "rgb", cfg);
    let tir = embed(ps, pre, &inp.z_tir, &inp.x_tir, "tir", cfg);
    let mut x = concat_rows(&[&rgb, &tir]);
    let mut layers = Vec::new();
    for l in 0..cfg.layers {
        x = encoder_layer(ps, &format!("{pre}/encoder/layer{l}"), &x, cfg.heads);
        layers.push(x.clone());
    }
    let f = norm(ps, &format!("{pre}/encoder/final_norm"), &x);
    let (n, nz, nx) = (cfg.n_tokens(), cfg.n_template(), cfg.n_search());
    StudentOut {
        head: head(ps, pre, &fuse(ps, pre, &f.rows(nz, nx), &f.rows(n + nz, nx)), cfg),
        layers,
    }
}

// ----------------------------------------------------------------------
// losses
// ----------------------------------------------------------------------

fn ln(x: f64) -> f64 {
    x.max(1e-7).ln()
}

/// Gaussian target around the cell holding the centre of `gt` (pixels).
pub fn heatmap(gt: [f64; 4], grid: usize, patch: usize) -> Vec<f64> {
    let (cx, cy) = (gt[0] + gt[2] / 2.0, gt[1] + gt[3] / 2.0);
    let ci = ((cy / patch as f64).floor() as usize).min(grid - 1) as f64;
    let cj = ((cx / patch as f64).floor() as usize).min(grid - 1) as f64;
    let sigma = (gt[2].min(gt[3]) / (2.0 * patch as f64)).max(1.0);
    let mut out = Vec::new();
    for i in 0..grid {
        for j in 0..grid {
            let r2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            out.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}

pub fn focal(score: &[f64], heat: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pos = 0;
    for (&p, &h) in score.iter().zip(heat) {
        if h >= 1.0 {
            pos += 1;
            total += -(1.0 - p).powi(2) * ln(p);
        } else {
            total += -(1.0 - h).powi(4) * p * p * ln(1.0 - p);
        }
    }
    total / pos.max(1) as f64
}

/// `1 − GIoU` of two `[x, y, w, h]` boxes.
pub fn giou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let (ax2, ay2, bx2, by2) = (a[0] + a[2], a[1] + a[3], b[0] + b[2], b[1] + b[3]);
    let iw = (ax2.min(bx2) - a[0].max(b[0])).max(0.0);
    let ih = (ay2.min(by2) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    let hull = (ax2.max(bx2) - a[0].min(b[0])) * (ay2.max(by2) - a[1].min(b[1]));
    1.0 - (inter / union - (hull - union) / hull)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean over cells of `|t − s|² · BCE(t, s)` on maps divided by `tau`.
pub fn qfl(teacher: &[f64], student: &[f64], tau: f64) -> f64 {
    let total: f64 = teacher
        .iter()
        .zip(student)
        .map(|(&t, &s)| {
            let (t, s) = (t / tau, s / tau);
            (s - t).powi(2) * (-t * ln(s) - (1.0 - t) * ln(1.0 - s))
        })
        .sum();
    total / teacher.len() as f64
}

/// Weighted sum of per-layer MSEs; `layers` are 1-based.
pub fn feature_kd(teacher: &[(M, M)], student: &[M], layers: &[usize], by_index: bool) -> f64 {
    layers
        .iter()
        .map(|&l| {
            let t = concat_rows(&[&teacher[l - 1].0, &teacher[l - 1].1]);
            let s = &student[l - 1];
            let mse = t.d.iter().zip(&s.d).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.d.len() as f64;
            if by_index {
                l as f64 * mse
            } else {
                mse
            }
        })
        .sum()
}

/// Focal, GIoU and L1 of a head against a pixel box; box terms at the peak.
pub fn label_terms(h: &Head, gt: [f64; 4], cfg: &ModelConfig) -> (f64, f64, f64) {
    let g = cfg.grid();
    let heat = heatmap(gt, g, cfg.patch);
    let mut peak = 0;
    for (i, &v) in h.score.iter().enumerate() {
        if v > h.score[peak] {
            peak = i;
        }
    }
    let (i, j) = ((peak / g) as f64, (peak % g) as f64);
    let (w, hh) = (h.size[2 * peak], h.size[2 * peak + 1]);
    let cx = (j + h.offset[2 * peak]) / g as f64;
    let cy = (i + h.offset[2 * peak + 1]) / g as f64;
    let pred = [cx - w / 2.0, cy - hh / 2.0, w, hh];
    let s = cfg.search_size as f64;
    let t = [gt[0] / s, gt[1] / s, gt[2] / s, gt[3] / s];
    (focal(&h.score, &heat), giou(pred, t), l1(&pred, &t))
}

// ----------------------------------------------------------------------
// finite differences
// ----------------------------------------------------------------------

pub const FD_EPS: f64 = 1e-3;

/// Differentiable state of a reference evaluation: named parameters plus
/// free inputs.
#[derive(Clone, Debug)]
pub struct State {
    pub params: Params,
    pub inputs: Vec<M>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Key {
    Param(String),
    Input(usize),
}

impl State {
    fn slot(&mut self, key: &Key) -> &mut Vec<f64> {
        match key {
            Key::Param(n) => &mut self.params.get_mut(n).unwrap().d,
            Key::Input(i) => &mut self.inputs[*i].d,
        }
    }
}

/// Central differences at step `FD_EPS`. A coordinate is flagged non-smooth
/// when a ReLU, max or argmax boundary lies within the step: there the
/// second differences at `h` and `h/2` disagree (for an exact tie the
/// second is twice the first), as do the two first-difference estimates.
pub fn fd_grad(f: &dyn Fn(&State) -> f64, s: &State, coords: &[(Key, usize)]) -> (Vec<f64>, Vec<bool>) {
    let mut work = s.clone();
    let f0 = f(s);
    let mut grads = Vec::with_capacity(coords.len());
    let mut smooth = Vec::with_capacity(coords.len());
    for (key, i) in coords {
        let x0 = work.slot(key)[*i];
        let mut at = |h: f64| {
            work.slot(key)[*i] = x0 + h;
            let v = f(&work);
            work.slot(key)[*i] = x0;
            v
        };
        let h = FD_EPS;
        let (up, down) = (at(h), at(-h));
        let (up2, down2) = (at(h / 2.0), at(-h / 2.0));
        let d1 = (up - down) / (2.0 * h);
        let d1_half = (up2 - down2) / h;
        let d2 = (up - 2.0 * f0 + down) / (h * h);
        let d2_half = (up2 - 2.0 * f0 + down2) / (h * h / 4.0);
        grads.push(d1);
        let first_ok = (d1 - d1_half).abs() <= 1e-4 * (1.0 + d1.abs());
        let second_ok = (d2 - d2_half).abs() <= 1e-2 * (1.0 + d2.abs().max(d2_half.abs()));
        smooth.push(first_ok && second_ok);
    }
    (grads, smooth)
}

/// Comparison of analytic and numeric gradient vectors over smooth coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct Report {
    pub rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl Report {
    pub fn merge(self, o: Report) -> Report {
        Report {
            rel: self.rel.max(o.rel),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over coordinates marked smooth.
pub fn compare(analytic: &[f64], numeric: &[f64], smooth: &[bool]) -> Report {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let mut checked = 0;
    for ((a, n), &ok) in analytic.iter().zip(numeric).zip(smooth) {
        if !ok {
            continue;
        }
        checked += 1;
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let scale = na.max(nn).sqrt();
    let rel = if scale < 1e-12 { diff.sqrt() } else { diff.sqrt() / scale };
    Report {
        rel,
        checked,
        skipped: smooth.len() - checked,
    }
}
