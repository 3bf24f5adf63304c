use rand::Rng as _;

use super::{FrameRecord, Sequence};
use crate::bbox::BBox;
use crate::config::ModelConfig;
use crate::embedding::ImagePlane;
use crate::error::{Error, Result};
use crate::models::TrackInputs;
use crate::numerics::Rng;

/// Template crop side as a multiple of `sqrt(w·h)`.
pub const TEMPLATE_FACTOR: f64 = 2.0;
/// Search crop side as a multiple of `sqrt(w·h)`.
pub const SEARCH_FACTOR: f64 = 4.0;

/// Square source window resampled to `out × out` pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropWindow {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    pub out: usize,
}

impl CropWindow {
    /// Window of side `factor·sqrt(w·h)` centred on `anchor`.
    pub fn around(anchor: &BBox, factor: f64, out: usize) -> Result<Self> {
        if !anchor.is_valid() {
            return Err(Error::domain(format!("degenerate box {anchor:?}")));
        }
        let side = factor * (anchor.w * anchor.h).sqrt();
        let (cx, cy) = anchor.center();
        Ok(Self {
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            side,
            out,
        })
    }

    /// Source pixels per output pixel.
    pub fn scale(&self) -> f64 {
        self.side / self.out as f64
    }

    pub fn to_crop(&self, b: &BBox) -> BBox {
        let s = self.scale();
        BBox::new((b.x - self.x0) / s, (b.y - self.y0) / s, b.w / s, b.h / s)
    }

    pub fn to_frame(&self, b: &BBox) -> BBox {
        let s = self.scale();
        BBox::new(b.x * s + self.x0, b.y * s + self.y0, b.w * s, b.h * s)
    }

    /// Bilinear resampling; taps outside the frame read the frame mean.
    pub fn crop(&self, img: &ImagePlane) -> ImagePlane {
        let c = img.channels;
        let fill = img.channel_means();
        let s = self.scale();
        let mut out = vec![0f32; self.out * self.out * c];
        let tap = |x: i64, y: i64, ch: usize| -> f64 {
            if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
                fill[ch] as f64
            } else {
                img.get(y as usize, x as usize, ch) as f64
            }
        };
        for v in 0..self.out {
            let sy = self.y0 + (v as f64 + 0.5) * s - 0.5;
            let y0 = sy.floor();
            let fy = sy - y0;
            for u in 0..self.out {
                let sx = self.x0 + (u as f64 + 0.5) * s - 0.5;
                let x0 = sx.floor();
                let fx = sx - x0;
                let (xi, yi) = (x0 as i64, y0 as i64);
                for ch in 0..c {
                    let top = tap(xi, yi, ch) * (1.0 - fx) + tap(xi + 1, yi, ch) * fx;
                    let bot = tap(xi, yi + 1, ch) * (1.0 - fx) + tap(xi + 1, yi + 1, ch) * fx;
                    out[(v * self.out + u) * c + ch] = (top * (1.0 - fy) + bot * fy) as f32;
                }
            }
        }
        ImagePlane::new(self.out, self.out, c, out).expect("crop dimensions")
    }
}

/// Template and search crops of one frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CropSet {
    pub template: (ImagePlane, ImagePlane),
    pub search: (ImagePlane, ImagePlane),
    pub template_window: CropWindow,
    pub search_window: CropWindow,
    /// `target` in search-crop pixels.
    pub gt_in_search: BBox,
}

/// Crops both modalities of `frame` around `anchor` (the previous box) with
/// identical geometry and maps `target` into the search crop.
pub fn crop_regions(frame: &FrameRecord, anchor: &BBox, target: &BBox, cfg: &ModelConfig) -> Result<CropSet> {
    if !target.is_valid() {
        return Err(Error::domain(format!("degenerate box {target:?}")));
    }
    let tw = CropWindow::around(anchor, TEMPLATE_FACTOR, cfg.template_size)?;
    let sw = CropWindow::around(anchor, SEARCH_FACTOR, cfg.search_size)?;
    Ok(CropSet {
        template: (tw.crop(&frame.rgb), tw.crop(&frame.tir)),
        search: (sw.crop(&frame.rgb), sw.crop(&frame.tir)),
        template_window: tw,
        search_window: sw,
        gt_in_search: sw.to_crop(target),
    })
}

impl CropSet {
    /// Model inputs using this set's template.
    pub fn inputs(&self) -> TrackInputs {
        TrackInputs {
            z_rgb: self.template.0.clone(),
            x_rgb: self.search.0.clone(),
            z_tir: self.template.1.clone(),
            x_tir: self.search.1.clone(),
        }
    }
}

/// Largest frame gap between template and search in a training pair.
const MAX_GAP: usize = 16;
/// Search-centre jitter as a fraction of `sqrt(w·h)`.
const CENTER_JITTER: f64 = 0.75;
const SCALE_JITTER: f64 = 0.2;

/// Draws one training pair: template from frame `i` around its box, search
/// from a nearby frame `j` around a jittered copy of that frame's box.
/// Returns the inputs and the target box in search-crop pixels.
pub fn sample_training_pair(seq: &Sequence, rng: &mut Rng, cfg: &ModelConfig) -> Result<(TrackInputs, BBox)> {
    let n = seq.frames.len();
    if n == 0 {
        return Err(Error::validation(format!("sequence {} has no frames", seq.meta.name)));
    }
    let j = rng.random_range(0..n);
    let i = rng.random_range(j.saturating_sub(MAX_GAP)..=j);
    let gt_i = seq.meta.gt[i];
    let gt_j = seq.meta.gt[j];
    let tw = CropWindow::around(&gt_i, TEMPLATE_FACTOR, cfg.template_size)?;

    let sz = (gt_j.w * gt_j.h).sqrt();
    let (cx, cy) = gt_j.center();
    let dx = rng.random_range(-CENTER_JITTER..CENTER_JITTER) * sz;
    let dy = rng.random_range(-CENTER_JITTER..CENTER_JITTER) * sz;
    let ds = rng.random_range(-SCALE_JITTER..SCALE_JITTER).exp();
    let anchor = BBox::from_center(cx + dx, cy + dy, gt_j.w * ds, gt_j.h * ds);
    let sw = CropWindow::around(&anchor, SEARCH_FACTOR, cfg.search_size)?;

    let inputs = TrackInputs {
        z_rgb: tw.crop(&seq.frames[i].rgb),
        x_rgb: sw.crop(&seq.frames[j].rgb),
        z_tir: tw.crop(&seq.frames[i].tir),
        x_tir: sw.crop(&seq.frames[j].tir),
    };
    Ok((inputs, sw.to_crop(&gt_j)))
}
