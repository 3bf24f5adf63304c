//! AdamW, the step learning-rate schedule and the teacher / distillation /
//! control training loops.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::bbox::BBox;
use crate::data::{sample_training_pair, Sequence};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::losses::{
    feature_kd_loss, gt_terms, response_kd_loss, student_total, teacher_total, FeatureKd, KdTerms, LossWeights,
};
use crate::models::{StudentModel, TeacherModel, TrackInputs};
use crate::numerics::{rng, Graph, ParamSet, Tensor};

// ----------------------------------------------------------------------
// optimizer
// ----------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update. `lrs[i]` is the learning rate of parameter `i`; weight
/// decay shrinks the weights directly, apart from the moment update.
pub fn adamw_step(params: &mut ParamSet, grads: &[Vec<f32>], state: &mut OptimState, lrs: &[f64], wd: f64) -> Result<()> {
    if grads.len() != params.len() || lrs.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {} rates, {} moments",
            params.len(),
            grads.len(),
            lrs.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let lr = lrs[i];
        let g = &grads[i];
        if g.len() != p.tensor.numel() {
            return Err(Error::dim(format!("gradient of {} has {} values", p.name, g.len())));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let gk = g[k] as f64;
            let mut x = *w as f64;
            x -= lr * wd * x;
            let mk = b1 * m[k] as f64 + (1.0 - b1) * gk;
            let vk = b2 * v[k] as f64 + (1.0 - b2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            x -= lr * (mk / c1) / ((vk / c2).sqrt() + state.eps);
            *w = x as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Other,
}

/// Embedding and encoder weights form the backbone; prompters, the fusion
/// projection and the head are everything else.
pub fn param_group(name: &str) -> ParamGroup {
    if name.contains("/embed/") || name.contains("/encoder/") {
        ParamGroup::Backbone
    } else {
        ParamGroup::Other
    }
}

// ----------------------------------------------------------------------
// configuration
// ----------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_backbone: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    /// Last epoch (1-based) at the base rate.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub weights: LossWeights,
    pub feature_kd: FeatureKd,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 7.5e-5,
            lr_other: 7.5e-4,
            weight_decay: 1e-4,
            decay_epoch: 10,
            decay_factor: 0.1,
            epochs: 15,
            batch_size: 8,
            samples_per_epoch: 2000,
            weights: LossWeights::default(),
            feature_kd: FeatureKd::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn teacher() -> Self {
        Self::default()
    }

    pub fn student() -> Self {
        Self {
            epochs: 13,
            ..Self::default()
        }
    }

    /// Label-only control: no distillation terms.
    pub fn fost() -> Self {
        let mut c = Self::default();
        c.weights.rm = 0.0;
        c.weights.mf = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.lr_backbone) || !pos(self.lr_other) {
            return Err(Error::validation("learning rates must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation("weight_decay must be non-negative"));
        }
        if !pos(self.decay_factor) {
            return Err(Error::validation("decay_factor must be positive"));
        }
        if self.epochs == 0 || self.decay_epoch >= self.epochs {
            return Err(Error::validation(format!(
                "decay_epoch {} must be below epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return Err(Error::validation("batch_size and samples_per_epoch must be positive"));
        }
        self.weights.validate()
    }

    pub fn validate_fost(&self) -> Result<()> {
        self.validate()?;
        if self.weights.rm != 0.0 || self.weights.mf != 0.0 {
            return Err(Error::validation(format!(
                "the control model trains without distillation; lambda_rm={} lambda_mf={} must be 0",
                self.weights.rm, self.weights.mf
            )));
        }
        Ok(())
    }

    /// Learning-rate multiplier of a 1-based epoch.
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        if epoch <= self.decay_epoch {
            1.0
        } else {
            self.decay_factor
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch.div_ceil(self.batch_size)
    }

    fn rates(&self, params: &ParamSet, epoch: usize) -> Vec<f64> {
        let s = self.lr_scale(epoch);
        params
            .iter()
            .map(|p| match param_group(&p.name) {
                ParamGroup::Backbone => self.lr_backbone * s,
                ParamGroup::Other => self.lr_other * s,
            })
            .collect()
    }
}

// ----------------------------------------------------------------------
// traces
// ----------------------------------------------------------------------

/// Batch-mean loss components of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub giou: f64,
    pub l1: f64,
    pub focal: f64,
    pub rm: Option<f64>,
    pub mf: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn has_kd(&self) -> bool {
        self.rows.first().is_some_and(|r| r.rm.is_some())
    }

    pub fn to_csv(&self) -> String {
        let kd = self.has_kd();
        let mut s = String::from(if kd {
            "step,giou,l1,focal,rm,mf,total\n"
        } else {
            "step,giou,l1,focal,total\n"
        });
        for r in &self.rows {
            if kd {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.step,
                    r.giou,
                    r.l1,
                    r.focal,
                    r.rm.unwrap_or(0.0),
                    r.mf.unwrap_or(0.0),
                    r.total
                ));
            } else {
                s.push_str(&format!("{},{},{},{},{}\n", r.step, r.giou, r.l1, r.focal, r.total));
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Mean total loss of every epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if out.len() < r.epoch {
                out.resize(r.epoch, (0.0, 0));
            }
            out[r.epoch - 1].0 += r.total;
            out[r.epoch - 1].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Called after every epoch with the 1-based epoch number and current weights.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &ParamSet) -> Result<()>;

pub struct TrainOutcome {
    pub params: ParamSet,
    pub trace: LossTrace,
}

// ----------------------------------------------------------------------
// loops
// ----------------------------------------------------------------------

struct SampleResult {
    grads: Vec<Vec<f32>>,
    giou: f64,
    l1: f64,
    focal: f64,
    rm: Option<f64>,
    mf: Option<f64>,
    total: f64,
}

fn draw_batch(data: &[Sequence], rng: &mut rng::Rng, n: usize, cfg: &crate::config::ModelConfig) -> Result<Vec<(TrackInputs, BBox)>> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..data.len());
            sample_training_pair(&data[s], rng, cfg)
        })
        .collect()
}

fn run_loop<F>(
    params: &mut ParamSet,
    cfg: &TrainConfig,
    model_cfg: &crate::config::ModelConfig,
    data: &[Sequence],
    mut hook: Option<EpochHook>,
    per_sample: F,
) -> Result<LossTrace>
where
    F: Fn(&ParamSet, &TrackInputs, &BBox) -> Result<SampleResult> + Sync,
{
    if data.is_empty() {
        return Err(Error::validation("training needs at least one sequence"));
    }
    let mut state = OptimState::new(params);
    let mut trace = LossTrace::default();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut rng = rng::substream(cfg.seed, 1000 + epoch as u64);
        let rates = cfg.rates(params, epoch);
        let mut remaining = cfg.samples_per_epoch;
        while remaining > 0 {
            let n = remaining.min(cfg.batch_size);
            remaining -= n;
            let batch = draw_batch(data, &mut rng, n, model_cfg)?;
            let frozen: &ParamSet = params;
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|(inp, gt)| per_sample(frozen, inp, gt))
                .collect::<Result<_>>()?;
            let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
            let mut row = TraceRow {
                step,
                epoch,
                giou: 0.0,
                l1: 0.0,
                focal: 0.0,
                rm: results[0].rm.map(|_| 0.0),
                mf: results[0].mf.map(|_| 0.0),
                total: 0.0,
            };
            for r in &results {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += *v as f64;
                    }
                }
                row.giou += r.giou;
                row.l1 += r.l1;
                row.focal += r.focal;
                row.total += r.total;
                row.rm = row.rm.zip(r.rm).map(|(a, b)| a + b);
                row.mf = row.mf.zip(r.mf).map(|(a, b)| a + b);
            }
            let k = n as f64;
            row.giou /= k;
            row.l1 /= k;
            row.focal /= k;
            row.total /= k;
            row.rm = row.rm.map(|v| v / k);
            row.mf = row.mf.map(|v| v / k);
            if !row.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step} (epoch {epoch})")));
            }
            let mean: Vec<Vec<f32>> = grads
                .into_iter()
                .map(|g| g.into_iter().map(|v| (v / k) as f32).collect())
                .collect();
            if mean.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at step {step}")));
            }
            adamw_step(params, &mean, &mut state, &rates, cfg.weight_decay)?;
            trace.rows.push(row);
            step += 1;
        }
        if let Some(h) = hook.as_mut() {
            h(epoch, params)?;
        }
    }
    Ok(trace)
}

/// Trains the two-stream teacher on label losses.
pub fn train_teacher(mut model: TeacherModel, cfg: &TrainConfig, data: &[Sequence], hook: Option<EpochHook>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mc = model.cfg.clone();
    let w = cfg.weights;
    let trace = run_loop(&mut model.params, cfg, &mc, data, hook, |params, inp, gt| {
        let m = TeacherModel {
            cfg: mc.clone(),
            params: params.clone(),
        };
        let mut g = Graph::new();
        let f = m.forward(&mut g, inp, true)?;
        let t = gt_terms(&mut g, &f.head, gt, &mc)?;
        let total = teacher_total(&mut g, &t, &w)?;
        g.backward(total)?;
        Ok(SampleResult {
            grads: params.gradients_from(&g),
            giou: g.value(t.giou).item() as f64,
            l1: g.value(t.l1).item() as f64,
            focal: g.value(t.focal).item() as f64,
            rm: None,
            mf: None,
            total: g.value(total).item() as f64,
        })
    })?;
    Ok(TrainOutcome {
        params: model.params,
        trace,
    })
}

/// Teacher activations needed for distillation, detached from any graph.
pub struct TeacherTargets {
    pub layers: Vec<(Tensor, Tensor)>,
    pub score: Tensor,
}

pub fn teacher_targets(teacher: &TeacherModel, inp: &TrackInputs) -> Result<TeacherTargets> {
    let mut g = Graph::new();
    let f = teacher.forward(&mut g, inp, false)?;
    Ok(TeacherTargets {
        layers: f
            .layers
            .iter()
            .map(|&(a, b)| (g.value(a).clone(), g.value(b).clone()))
            .collect(),
        score: g.value(f.head.score).clone(),
    })
}

fn student_loop(
    mut model: StudentModel,
    teacher: Option<&TeacherModel>,
    cfg: &TrainConfig,
    data: &[Sequence],
    hook: Option<EpochHook>,
) -> Result<TrainOutcome> {
    if let Some(t) = teacher {
        if t.cfg.layers != model.cfg.layers || t.cfg.grid() != model.cfg.grid() || t.cfg.d_model != model.cfg.d_model {
            return Err(Error::dim("teacher and student geometry differ"));
        }
    }
    let mc = model.cfg.clone();
    let w = cfg.weights;
    let kd_opts = cfg.feature_kd;
    let trace = run_loop(&mut model.params, cfg, &mc, data, hook, |params, inp, gt| {
        let m = StudentModel {
            cfg: mc.clone(),
            params: params.clone(),
        };
        let targets = teacher.map(|t| teacher_targets(t, inp)).transpose()?;
        let mut g = Graph::new();
        let f = m.forward(&mut g, inp, true)?;
        let t = gt_terms(&mut g, &f.head, gt, &mc)?;
        let (total, rm, mf) = match &targets {
            Some(tt) => {
                let rm = response_kd_loss(&mut g, &tt.score, f.head.score, w.tau)?;
                let mf = feature_kd_loss(&mut g, &tt.layers, &f.layers, kd_opts)?;
                let total = student_total(&mut g, &t, &KdTerms { rm, mf }, &w)?;
                (total, Some(g.value(rm).item() as f64), Some(g.value(mf).item() as f64))
            }
            None => (teacher_total(&mut g, &t, &w)?, None, None),
        };
        g.backward(total)?;
        Ok(SampleResult {
            grads: params.gradients_from(&g),
            giou: g.value(t.giou).item() as f64,
            l1: g.value(t.l1).item() as f64,
            focal: g.value(t.focal).item() as f64,
            rm,
            mf,
            total: g.value(total).item() as f64,
        })
    })?;
    Ok(TrainOutcome {
        params: model.params,
        trace,
    })
}

/// Distills `teacher` (frozen) into the one-stream student.
pub fn distill_student(
    model: StudentModel,
    teacher: &TeacherModel,
    cfg: &TrainConfig,
    data: &[Sequence],
    hook: Option<EpochHook>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    student_loop(model, Some(teacher), cfg, data, hook)
}

/// Trains the student architecture on label losses only.
pub fn train_fost(model: StudentModel, cfg: &TrainConfig, data: &[Sequence], hook: Option<EpochHook>) -> Result<TrainOutcome> {
    cfg.validate_fost()?;
    student_loop(model, None, cfg, data, hook)
}

/// Mean squared difference between teacher and student score maps.
pub fn response_mse(teacher: &TeacherModel, student: &StudentModel, inputs: &[TrackInputs]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::validation("no held-out inputs"));
    }
    let per: Vec<f64> = inputs
        .par_iter()
        .map(|inp| {
            let t = teacher_targets(teacher, inp)?.score;
            let mut g = Graph::new();
            let s = student.forward(&mut g, inp, false)?.head.score;
            let s = g.value(s);
            Ok(t.data()
                .iter()
                .zip(s.data())
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum::<f64>()
                / t.numel() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
