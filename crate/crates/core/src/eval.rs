//! One-pass tracking evaluation: centre error, overlap, precision/success
//! curves and attribute breakdowns.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::data::{crop_regions, FrameRecord, Sequence};
use crate::embedding::ImagePlane;
use crate::error::{Error, Result};
use crate::models::{TrackInputs, Tracker};

/// Centre-error threshold used for the headline precision.
pub const PR_THRESHOLD: usize = 20;
/// Precision curve thresholds are `0..=PRECISION_MAX` pixels.
pub const PRECISION_MAX: usize = 50;
/// Success curve thresholds are `k / SUCCESS_STEPS` for `k = 0..=SUCCESS_STEPS`.
pub const SUCCESS_STEPS: usize = 20;

/// Euclidean distance between box centres.
pub fn cle(pred: &BBox, gt: &BBox) -> f64 {
    let (a, b) = (pred.center(), gt.center());
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(pr: f64, re: f64) -> f64 {
    if pr + re == 0.0 {
        0.0
    } else {
        2.0 * re * pr / (re + pr)
    }
}

pub fn success_threshold(k: usize) -> f64 {
    k as f64 / SUCCESS_STEPS as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub name: String,
    pub pred: Vec<BBox>,
    pub gt: Vec<BBox>,
    pub attributes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub pr: f64,
    pub sr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pr: f64,
    pub sr: f64,
    pub precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub attributes: BTreeMap<String, AttributeReport>,
}

struct Curves {
    precision: Vec<f64>,
    success: Vec<f64>,
}

fn curves<'a>(results: impl Iterator<Item = &'a TrackResult>) -> Curves {
    let mut prec = vec![0usize; PRECISION_MAX + 1];
    let mut succ = vec![0usize; SUCCESS_STEPS + 1];
    let mut frames = 0usize;
    for r in results {
        for (p, g) in r.pred.iter().zip(&r.gt) {
            frames += 1;
            let e = cle(p, g);
            for (t, c) in prec.iter_mut().enumerate() {
                if e <= t as f64 {
                    *c += 1;
                }
            }
            let o = iou(p, g);
            for (k, c) in succ.iter_mut().enumerate() {
                if o >= success_threshold(k) {
                    *c += 1;
                }
            }
        }
    }
    let frac = |c: usize| if frames == 0 { 0.0 } else { c as f64 / frames as f64 };
    Curves {
        precision: prec.into_iter().map(frac).collect(),
        success: succ.into_iter().map(frac).collect(),
    }
}

fn auc(success: &[f64]) -> f64 {
    success.iter().sum::<f64>() / success.len() as f64
}

/// Pools every frame of every result; attribute reports use the frames of
/// the sequences carrying that attribute.
pub fn precision_success(results: &[TrackResult]) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::validation("no tracking results to score"));
    }
    for r in results {
        if r.pred.len() != r.gt.len() {
            return Err(Error::validation(format!(
                "{}: {} predictions for {} ground-truth boxes",
                r.name,
                r.pred.len(),
                r.gt.len()
            )));
        }
    }
    let all = curves(results.iter());
    let mut attributes = BTreeMap::new();
    let tags: std::collections::BTreeSet<&String> = results.iter().flat_map(|r| &r.attributes).collect();
    for tag in tags {
        let c = curves(results.iter().filter(|r| r.attributes.contains(tag)));
        attributes.insert(
            tag.clone(),
            AttributeReport {
                pr: c.precision[PR_THRESHOLD],
                sr: auc(&c.success),
            },
        );
    }
    Ok(MetricReport {
        pr: all.precision[PR_THRESHOLD],
        sr: auc(&all.success),
        precision_curve: all.precision,
        success_curve: all.success,
        attributes,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `curve,threshold,value` rows for both curves.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("curve,threshold,value\n");
        for (t, v) in self.precision_curve.iter().enumerate() {
            s.push_str(&format!("precision,{t},{v}\n"));
        }
        for (k, v) in self.success_curve.iter().enumerate() {
            s.push_str(&format!("success,{},{v}\n", success_threshold(k)));
        }
        s
    }
}

/// Frame-by-frame tracker driven by [`run_sequence`].
pub trait FrameTracker {
    fn init(&mut self, frame: &FrameRecord, gt: &BBox) -> Result<()>;
    /// Predicts the box for the next frame in full-frame pixels.
    fn update(&mut self, frame: &FrameRecord) -> Result<BBox>;
}

/// Runs a network: template fixed from the first frame, search crop
/// anchored at the previous prediction.
pub struct ModelTracker<'a> {
    model: &'a Tracker,
    template: Option<(ImagePlane, ImagePlane)>,
    prev: BBox,
}

impl<'a> ModelTracker<'a> {
    pub fn new(model: &'a Tracker) -> Self {
        Self {
            model,
            template: None,
            prev: BBox::new(0.0, 0.0, 1.0, 1.0),
        }
    }
}

/// Smallest box side kept while tracking, in frame pixels.
const MIN_SIDE: f64 = 2.0;

impl FrameTracker for ModelTracker<'_> {
    fn init(&mut self, frame: &FrameRecord, gt: &BBox) -> Result<()> {
        let set = crop_regions(frame, gt, gt, self.model.cfg())?;
        self.template = Some(set.template);
        self.prev = *gt;
        Ok(())
    }

    fn update(&mut self, frame: &FrameRecord) -> Result<BBox> {
        let template = self
            .template
            .as_ref()
            .ok_or_else(|| Error::Usage("tracker used before init".into()))?;
        let set = crop_regions(frame, &self.prev, &self.prev, self.model.cfg())?;
        let inputs = TrackInputs {
            z_rgb: template.0.clone(),
            x_rgb: set.search.0,
            z_tir: template.1.clone(),
            x_tir: set.search.1,
        };
        let out = self.model.predict(&inputs)?;
        let b = set.search_window.to_frame(&out.bbox);
        let (w, h) = (frame.rgb.width as f64, frame.rgb.height as f64);
        let (cx, cy) = b.center();
        let (cx, cy) = (cx.clamp(0.0, w), cy.clamp(0.0, h));
        let bw = b.w.clamp(MIN_SIDE, w);
        let bh = b.h.clamp(MIN_SIDE, h);
        let next = BBox::from_center(cx, cy, bw, bh);
        self.prev = next;
        Ok(next)
    }
}

/// Tracks one sequence; the first frame reports its initialization box.
pub fn run_sequence(tracker: &mut dyn FrameTracker, seq: &Sequence) -> Result<TrackResult> {
    let gt = &seq.meta.gt;
    if seq.frames.is_empty() || gt.len() != seq.frames.len() {
        return Err(Error::validation(format!("{}: frames and boxes disagree", seq.meta.name)));
    }
    tracker.init(&seq.frames[0], &gt[0])?;
    let mut pred = vec![gt[0]];
    for f in &seq.frames[1..] {
        pred.push(tracker.update(f)?);
    }
    Ok(TrackResult {
        name: seq.meta.name.clone(),
        pred,
        gt: gt.clone(),
        attributes: seq.meta.attributes.clone(),
    })
}

/// Tracks every sequence (in parallel) and scores the results.
pub fn evaluate(model: &Tracker, seqs: &[Sequence]) -> Result<(Vec<TrackResult>, MetricReport)> {
    let results: Vec<TrackResult> = seqs
        .par_iter()
        .map(|s| run_sequence(&mut ModelTracker::new(model), s))
        .collect::<Result<_>>()?;
    let report = precision_success(&results)?;
    Ok((results, report))
}
