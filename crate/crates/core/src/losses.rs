//! Training objectives: label losses (focal, GIoU, L1), the two
//! distillation terms and their weighted totals.

use crate::bbox::BBox;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::models::HeadVars;
use crate::numerics::{CustomBackward, Graph, Tensor, Var};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-7;
const FOCAL_ALPHA: i32 = 2;
const FOCAL_BETA: i32 = 4;
const QFL_GAMMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub giou: f64,
    pub l1: f64,
    pub rm: f64,
    pub mf: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            giou: 2.0,
            l1: 5.0,
            rm: 0.7,
            mf: 0.035,
            tau: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.giou, self.l1, self.rm, self.mf];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// `focal + λ_giou·giou + λ_L1·l1` on plain numbers.
    pub fn combine_teacher(&self, focal: f64, giou: f64, l1: f64) -> f64 {
        focal + self.giou * giou + self.l1 * l1
    }

    /// Label terms plus `λ_RM·rm + λ_MF·mf` on plain numbers.
    pub fn combine_student(&self, focal: f64, giou: f64, l1: f64, rm: f64, mf: f64) -> f64 {
        self.combine_teacher(focal, giou, l1) + self.rm * rm + self.mf * mf
    }
}

fn ln(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

/// `d ln(max(x, ε)) / dx`.
fn dln(x: f64) -> f64 {
    if x > LOG_EPS {
        1.0 / x
    } else {
        0.0
    }
}

// ----------------------------------------------------------------------
// GIoU
// ----------------------------------------------------------------------

struct GiouParts {
    inter: f64,
    union: f64,
    enclose: f64,
}

fn giou_parts(p: [f64; 4], t: [f64; 4]) -> GiouParts {
    let (px2, py2) = (p[0] + p[2], p[1] + p[3]);
    let (tx2, ty2) = (t[0] + t[2], t[1] + t[3]);
    let iw = (px2.min(tx2) - p[0].max(t[0])).max(0.0);
    let ih = (py2.min(ty2) - p[1].max(t[1])).max(0.0);
    let inter = iw * ih;
    let union = p[2] * p[3] + t[2] * t[3] - inter;
    let enclose = (px2.max(tx2) - p[0].min(t[0])) * (py2.max(ty2) - p[1].min(t[1]));
    GiouParts { inter, union, enclose }
}

fn check_boxes(pred: [f64; 4], gt: [f64; 4]) -> Result<()> {
    if !(gt[2] > 0.0 && gt[3] > 0.0) || gt.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("degenerate ground-truth box {gt:?}")));
    }
    if pred[2] < 0.0 || pred[3] < 0.0 || pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("invalid predicted box {pred:?}")));
    }
    Ok(())
}

/// `1 − GIoU(pred, gt)` on plain boxes.
pub fn giou_value(pred: &BBox, gt: &BBox) -> Result<f64> {
    let (p, t) = (pred.to_array(), gt.to_array());
    check_boxes(p, t)?;
    let GiouParts { inter, union, enclose } = giou_parts(p, t);
    Ok(2.0 - inter / union - union / enclose)
}

struct GiouBackward {
    gt: [f64; 4],
}

impl CustomBackward for GiouBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f32]) -> Vec<Vec<f32>> {
        let d = inputs[0].data();
        let p = [d[0] as f64, d[1] as f64, d[2] as f64, d[3] as f64];
        let t = self.gt;
        let GiouParts { inter, union, enclose } = giou_parts(p, t);
        // loss = 2 − I/U − U/C with U = A_p + A_t − I
        let dl_di = -(union + inter) / (union * union) + 1.0 / enclose;
        let dl_dap = inter / (union * union) - 1.0 / enclose;
        let dl_dc = union / (enclose * enclose);

        let mut g = [0.0f64; 4];
        for axis in 0..2 {
            let (lo, ext) = (axis, axis + 2);
            let other = 1 - axis;
            let (p1, p2) = (p[lo], p[lo] + p[ext]);
            let (t1, t2) = (t[lo], t[lo] + t[ext]);
            let ov_this = p2.min(t2) - p1.max(t1);
            let ov_other = (p[other] + p[other + 2]).min(t[other] + t[other + 2]) - p[other].max(t[other]);
            let en_other = (p[other] + p[other + 2]).max(t[other] + t[other + 2]) - p[other].min(t[other]);
            // d inter / d (p1, p2)
            let (di1, di2) = if ov_this > 0.0 && ov_other > 0.0 {
                let s = ov_other;
                (if p1 >= t1 { -s } else { 0.0 }, if p2 <= t2 { s } else { 0.0 })
            } else {
                (0.0, 0.0)
            };
            let (dc1, dc2) = (
                if p1 <= t1 { -en_other } else { 0.0 },
                if p2 >= t2 { en_other } else { 0.0 },
            );
            let d1 = dl_di * di1 + dl_dc * dc1;
            let d2 = dl_di * di2 + dl_dc * dc2;
            g[lo] += d1 + d2;
            g[ext] += d2 + dl_dap * p[other + 2];
        }
        let up = grad_out[0] as f64;
        vec![g.iter().map(|v| (v * up) as f32).collect()]
    }
}

/// Differentiable `1 − GIoU` of a predicted `[x, y, w, h]` against `gt`.
pub fn giou_loss(g: &mut Graph, pred: Var, gt: &BBox) -> Result<Var> {
    if g.value(pred).numel() != 4 {
        return Err(Error::dim(format!("box must have 4 values, got {:?}", g.shape(pred))));
    }
    let d = g.value(pred).data();
    let p = BBox::new(d[0] as f64, d[1] as f64, d[2] as f64, d[3] as f64);
    let value = giou_value(&p, gt)?;
    Ok(g.custom(
        &[pred],
        Tensor::scalar(value as f32),
        Box::new(GiouBackward { gt: gt.to_array() }),
    ))
}

// ----------------------------------------------------------------------
// L1
// ----------------------------------------------------------------------

struct L1Backward {
    target: Vec<f64>,
}

impl CustomBackward for L1Backward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f32]) -> Vec<Vec<f32>> {
        let n = self.target.len() as f64;
        let up = grad_out[0] as f64;
        let g = inputs[0]
            .data()
            .iter()
            .zip(&self.target)
            .map(|(&p, &t)| {
                let d = p as f64 - t;
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (s * up / n) as f32
            })
            .collect();
        vec![g]
    }
}

/// Mean absolute error between `pred` and `target`.
pub fn l1_loss(g: &mut Graph, pred: Var, target: &[f64]) -> Result<Var> {
    let v = g.value(pred).data();
    if v.len() != target.len() {
        return Err(Error::dim(format!("l1: {} predictions vs {} targets", v.len(), target.len())));
    }
    let value = v.iter().zip(target).map(|(&p, t)| (p as f64 - t).abs()).sum::<f64>() / v.len() as f64;
    Ok(g.custom(
        &[pred],
        Tensor::scalar(value as f32),
        Box::new(L1Backward { target: target.to_vec() }),
    ))
}

// ----------------------------------------------------------------------
// Focal loss against a Gaussian heatmap
// ----------------------------------------------------------------------

/// Classification target on the search grid: 1 at the box-centre cell,
/// Gaussian fall-off elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct GtHeatmap {
    pub map: Tensor,
    pub center: (usize, usize),
}

/// Builds the target for a box given in search-crop pixels.
pub fn build_gt_heatmap(gt: &BBox, grid: usize, patch: usize) -> Result<GtHeatmap> {
    let side = (grid * patch) as f64;
    let (cx, cy) = gt.center();
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::domain(format!("degenerate box {gt:?}")));
    }
    if !(0.0..=side).contains(&cx) || !(0.0..=side).contains(&cy) {
        return Err(Error::domain(format!("box centre ({cx}, {cy}) outside the {side}px crop")));
    }
    let ci = ((cy / patch as f64).floor() as usize).min(grid - 1);
    let cj = ((cx / patch as f64).floor() as usize).min(grid - 1);
    let sigma = (gt.w.min(gt.h) / (2.0 * patch as f64)).max(1.0);
    let mut data = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let (di, dj) = (i as f64 - ci as f64, j as f64 - cj as f64);
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(GtHeatmap {
        map: Tensor::new(&[grid, grid], data)?,
        center: (ci, cj),
    })
}

fn focal_terms(p: f64, heat: f64) -> (f64, f64) {
    // (value, d value / d p)
    if heat >= 1.0 {
        let q = 1.0 - p;
        let v = -q.powi(FOCAL_ALPHA) * ln(p);
        let d = FOCAL_ALPHA as f64 * q.powi(FOCAL_ALPHA - 1) * ln(p) - q.powi(FOCAL_ALPHA) * dln(p);
        (v, d)
    } else {
        let w = (1.0 - heat).powi(FOCAL_BETA);
        let v = -w * p.powi(FOCAL_ALPHA) * ln(1.0 - p);
        let d = -w * (FOCAL_ALPHA as f64 * p.powi(FOCAL_ALPHA - 1) * ln(1.0 - p) - p.powi(FOCAL_ALPHA) * dln(1.0 - p));
        (v, d)
    }
}

fn positives(heat: &[f32]) -> usize {
    heat.iter().filter(|&&h| h >= 1.0).count().max(1)
}

struct FocalBackward {
    heat: Vec<f32>,
}

impl CustomBackward for FocalBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f32]) -> Vec<Vec<f32>> {
        let norm = positives(&self.heat) as f64;
        let up = grad_out[0] as f64;
        let g = inputs[0]
            .data()
            .iter()
            .zip(&self.heat)
            .map(|(&p, &h)| (focal_terms(p as f64, h as f64).1 * up / norm) as f32)
            .collect();
        vec![g]
    }
}

/// Penalty-reduced focal loss of sigmoid scores against `heat`,
/// normalized by the number of positive cells.
pub fn focal_loss_gt(g: &mut Graph, score: Var, heat: &GtHeatmap) -> Result<Var> {
    let s = g.value(score).data();
    let h = heat.map.data();
    if s.len() != h.len() {
        return Err(Error::dim(format!("focal: {} scores vs {} heatmap cells", s.len(), h.len())));
    }
    let total: f64 = s.iter().zip(h).map(|(&p, &t)| focal_terms(p as f64, t as f64).0).sum();
    let value = total / positives(h) as f64;
    Ok(g.custom(
        &[score],
        Tensor::scalar(value as f32),
        Box::new(FocalBackward { heat: h.to_vec() }),
    ))
}

// ----------------------------------------------------------------------
// Response distillation
// ----------------------------------------------------------------------

fn qfl_terms(t: f64, p: f64) -> (f64, f64) {
    // |t − p|^γ · BCE(t, p) and its derivative in p
    let diff = p - t;
    let m = diff.abs().powf(QFL_GAMMA);
    let dm = QFL_GAMMA * diff.abs().powf(QFL_GAMMA - 1.0) * diff.signum();
    let bce = -t * ln(p) - (1.0 - t) * ln(1.0 - p);
    let dbce = -t * dln(p) + (1.0 - t) * dln(1.0 - p);
    (m * bce, dm * bce + m * dbce)
}

struct ResponseBackward {
    teacher: Vec<f32>,
    tau: f64,
}

impl CustomBackward for ResponseBackward {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f32]) -> Vec<Vec<f32>> {
        let n = self.teacher.len() as f64;
        let up = grad_out[0] as f64;
        let g = inputs[0]
            .data()
            .iter()
            .zip(&self.teacher)
            .map(|(&s, &t)| {
                let d = qfl_terms(t as f64 / self.tau, s as f64 / self.tau).1;
                (d / self.tau * up / n) as f32
            })
            .collect();
        vec![g]
    }
}

/// Soft-target focal loss between tempered teacher and student score maps,
/// averaged over cells. The teacher map is a constant.
pub fn response_kd_loss(g: &mut Graph, teacher: &Tensor, student: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    let s = g.value(student).data();
    if s.len() != teacher.numel() {
        return Err(Error::dim(format!(
            "response maps differ: teacher {:?}, student {:?}",
            teacher.shape(),
            g.shape(student)
        )));
    }
    let tau64 = tau;
    let total: f64 = s
        .iter()
        .zip(teacher.data())
        .map(|(&p, &t)| qfl_terms(t as f64 / tau64, p as f64 / tau64).0)
        .sum();
    let value = total / s.len() as f64;
    Ok(g.custom(
        &[student],
        Tensor::scalar(value as f32),
        Box::new(ResponseBackward {
            teacher: teacher.data().to_vec(),
            tau: tau64,
        }),
    ))
}

// ----------------------------------------------------------------------
// Feature distillation
// ----------------------------------------------------------------------

/// Which encoder layers (1-based) are matched between teacher and student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSelector {
    /// Layers 2, 4, …, L.
    Even,
    /// Layers 1..=L/2.
    FirstHalf,
    /// Layers L/2+1..=L.
    LastHalf,
    All,
}

impl LayerSelector {
    pub fn layers(self, total: usize) -> Vec<usize> {
        match self {
            LayerSelector::Even => (1..=total / 2).map(|i| 2 * i).collect(),
            LayerSelector::FirstHalf => (1..=total / 2).collect(),
            LayerSelector::LastHalf => (total - total / 2 + 1..=total).collect(),
            LayerSelector::All => (1..=total).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerSelector::Even => "even",
            LayerSelector::FirstHalf => "first",
            LayerSelector::LastHalf => "last",
            LayerSelector::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "even" => LayerSelector::Even,
            "first" => LayerSelector::FirstHalf,
            "last" => LayerSelector::LastHalf,
            "all" => LayerSelector::All,
            other => return Err(Error::Usage(format!("unknown layer selector {other:?}"))),
        })
    }
}

/// Per-term weight of the matched layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerWeighting {
    Uniform,
    /// Weight equal to the 1-based layer number.
    LayerIndex,
}

impl LayerWeighting {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerWeighting::Uniform => "uniform",
            LayerWeighting::LayerIndex => "index",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => LayerWeighting::Uniform,
            "index" => LayerWeighting::LayerIndex,
            other => return Err(Error::Usage(format!("unknown layer weighting {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureKd {
    pub selector: LayerSelector,
    pub weighting: LayerWeighting,
}

impl Default for FeatureKd {
    fn default() -> Self {
        Self {
            selector: LayerSelector::Even,
            weighting: LayerWeighting::Uniform,
        }
    }
}

/// Stacks one teacher layer's streams along the token axis (rgb rows first).
pub fn fuse_teacher_layer(rgb: &Tensor, tir: &Tensor) -> Result<Tensor> {
    if rgb.shape() != tir.shape() || rgb.rank() != 2 {
        return Err(Error::dim(format!(
            "teacher streams differ: {:?} vs {:?}",
            rgb.shape(),
            tir.shape()
        )));
    }
    let mut data = rgb.data().to_vec();
    data.extend_from_slice(tir.data());
    Tensor::new(&[2 * rgb.rows(), rgb.cols()], data)
}

/// `Σ w_l · MSE(teacher_l, student_l)` over the selected layers. Teacher
/// layers are per-stream pairs and enter as constants.
pub fn feature_kd_loss(g: &mut Graph, teacher: &[(Tensor, Tensor)], student: &[Var], opts: FeatureKd) -> Result<Var> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::dim(format!(
            "teacher has {} layers, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let mut total: Option<Var> = None;
    for l in opts.selector.layers(teacher.len()) {
        let (rgb, tir) = &teacher[l - 1];
        let fused = fuse_teacher_layer(rgb, tir)?;
        let s = student[l - 1];
        if g.shape(s) != fused.shape() {
            return Err(Error::dim(format!(
                "layer {l}: teacher {:?} vs student {:?}",
                fused.shape(),
                g.shape(s)
            )));
        }
        let t = g.constant(fused);
        let d = g.sub(s, t)?;
        let sq = g.mul(d, d)?;
        let mut term = g.mean(sq);
        if opts.weighting == LayerWeighting::LayerIndex {
            term = g.scale(term, l as f32);
        }
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    match total {
        Some(v) => Ok(v),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}

// ----------------------------------------------------------------------
// Compositions
// ----------------------------------------------------------------------

/// Label-supervised terms of one prediction.
#[derive(Clone, Copy, Debug)]
pub struct GtTerms {
    pub focal: Var,
    pub giou: Var,
    pub l1: Var,
}

/// Focal, GIoU and L1 losses of a head against a box in search-crop pixels.
/// Box terms are evaluated at the predicted peak cell, in crop-normalized
/// coordinates.
pub fn gt_terms(g: &mut Graph, head: &HeadVars, gt: &BBox, cfg: &ModelConfig) -> Result<GtTerms> {
    let heat = build_gt_heatmap(gt, cfg.grid(), cfg.patch)?;
    let focal = focal_loss_gt(g, head.score, &heat)?;
    let peak = g.value(head.score).argmax();
    let pred = head.box_at(g, peak, cfg)?;
    let gt_norm = gt.scale(1.0 / cfg.search_size as f64);
    let giou = giou_loss(g, pred, &gt_norm)?;
    let l1 = l1_loss(g, pred, &gt_norm.to_array())?;
    Ok(GtTerms { focal, giou, l1 })
}

fn weighted_sum(g: &mut Graph, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc = g.scale(terms[0].0, terms[0].1 as f32);
    for &(v, w) in &terms[1..] {
        let s = g.scale(v, w as f32);
        acc = g.add(acc, s)?;
    }
    Ok(acc)
}

/// `L_focal + λ_giou·L_giou + λ_L1·L_1`.
pub fn teacher_total(g: &mut Graph, t: &GtTerms, w: &LossWeights) -> Result<Var> {
    weighted_sum(g, &[(t.focal, 1.0), (t.giou, w.giou), (t.l1, w.l1)])
}

/// Distillation terms of one student prediction.
#[derive(Clone, Copy, Debug)]
pub struct KdTerms {
    pub rm: Var,
    pub mf: Var,
}

/// Label terms plus `λ_RM·L_RM + λ_MF·L_MF`.
pub fn student_total(g: &mut Graph, t: &GtTerms, kd: &KdTerms, w: &LossWeights) -> Result<Var> {
    weighted_sum(
        g,
        &[(t.focal, 1.0), (t.giou, w.giou), (t.l1, w.l1), (kd.rm, w.rm), (kd.mf, w.mf)],
    )
}
