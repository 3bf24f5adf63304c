use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{FrameRecord, Sequence, SequenceMeta, Visibility};
use crate::bbox::BBox;
use crate::embedding::ImagePlane;
use crate::error::{Error, Result};
use crate::numerics::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    RgbDominant,
    TirDominant,
    Switching,
    Occlusion,
    Deformation,
    ThermalCrossover,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::RgbDominant,
        ScenarioKind::TirDominant,
        ScenarioKind::Switching,
        ScenarioKind::Occlusion,
        ScenarioKind::Deformation,
        ScenarioKind::ThermalCrossover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::RgbDominant => "rgb_dominant",
            ScenarioKind::TirDominant => "tir_dominant",
            ScenarioKind::Switching => "switching",
            ScenarioKind::Occlusion => "occlusion",
            ScenarioKind::Deformation => "deformation",
            ScenarioKind::ThermalCrossover => "thermal_crossover",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|k| k.as_str()).join(", ")
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown scenario {s:?}; valid kinds: {}", Self::valid_names())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Mean half-extent of the target in pixels.
    pub radius: f64,
    /// Replaces the schedule implied by `kind` when set: `(rgb, tir)` per frame.
    pub visibility: Option<Vec<(f64, f64)>>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, frames: usize, seed: u64) -> Self {
        Self {
            name: format!("{}_{seed}", kind.as_str()),
            kind,
            frames,
            height: 64,
            width: 64,
            noise: 0.02,
            radius: 6.0,
            visibility: None,
            seed,
        }
    }

    /// First and one-past-last frame of the full occlusion window.
    pub fn occlusion_window(&self) -> Option<(usize, usize)> {
        (self.kind == ScenarioKind::Occlusion).then(|| {
            let start = self.frames * 2 / 5;
            let end = (self.frames / 2).max(start + 1).min(self.frames);
            (start, end)
        })
    }

    /// `(rgb, tir)` visibility of every frame.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        if let Some(v) = &self.visibility {
            return v.clone();
        }
        let n = self.frames;
        let occ = self.occlusion_window();
        (0..n)
            .map(|t| match self.kind {
                ScenarioKind::RgbDominant => (1.0, 0.25),
                ScenarioKind::TirDominant => (0.25, 1.0),
                ScenarioKind::Switching => {
                    let block = (n / 4).max(1);
                    if (t / block) % 2 == 0 {
                        (1.0, 0.2)
                    } else {
                        (0.2, 1.0)
                    }
                }
                ScenarioKind::Occlusion => match occ {
                    Some((a, b)) if (a..b).contains(&t) => (0.0, 0.0),
                    _ => (1.0, 1.0),
                },
                ScenarioKind::Deformation => (0.8, 0.8),
                ScenarioKind::ThermalCrossover => {
                    // thermal contrast fades out and back over the middle third
                    let u = t as f64 / n.max(1) as f64;
                    let dip = if (1.0 / 3.0..2.0 / 3.0).contains(&u) {
                        (TAU * 1.5 * (u - 1.0 / 3.0)).sin().abs()
                    } else {
                        0.0
                    };
                    (0.8, 1.0 - 0.9 * dip)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::domain("a sequence needs at least one frame"));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::domain(format!("frame {}x{} is below 16x16", self.height, self.width)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::domain(format!("noise must be finite and non-negative, got {}", self.noise)));
        }
        let max_r = self.radius * 2f64.sqrt();
        if !(self.radius >= 1.0) || 2.0 * (max_r + 1.0) >= self.height.min(self.width) as f64 {
            return Err(Error::domain(format!(
                "radius {} does not fit a {}x{} frame",
                self.radius, self.height, self.width
            )));
        }
        let sched = self.schedule();
        if sched.len() != self.frames {
            return Err(Error::domain(format!(
                "visibility schedule has {} entries for {} frames",
                sched.len(),
                self.frames
            )));
        }
        let occ = self.occlusion_window();
        for (t, &(r, i)) in sched.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&i) {
                return Err(Error::domain(format!("frame {t}: visibility ({r}, {i}) outside [0, 1]")));
            }
            let exempt = matches!(occ, Some((a, b)) if (a..b).contains(&t));
            if !exempt && r.max(i) < 0.5 {
                return Err(Error::domain(format!(
                    "frame {t}: target visible in neither modality ({r}, {i})"
                )));
            }
        }
        Ok(())
    }
}

/// Smooth background: a product of two random low-frequency sinusoids.
struct Wave {
    base: f64,
    amp: f64,
    fx: f64,
    fy: f64,
    px: f64,
    py: f64,
}

impl Wave {
    fn random(r: &mut rng::Rng, base: f64, amp: f64, w: usize, h: usize) -> Self {
        Self {
            base,
            amp,
            fx: TAU / w as f64 * r.random_range(0.5..2.0),
            fy: TAU / h as f64 * r.random_range(0.5..2.0),
            px: r.random_range(0.0..TAU),
            py: r.random_range(0.0..TAU),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.base + self.amp * (self.fx * x + self.px).sin() * (self.fy * y + self.py).cos()
    }
}

/// Coverage of pixel centre `(x, y)` by a superellipse (exponent 4) with
/// half-axes `(a, b)`: 1 inside, 0 outside, linear across a thin rim so
/// that coverage ≥ 0.5 exactly on the nominal support.
pub(crate) fn blob_mask(dx: f64, dy: f64, a: f64, b: f64) -> f64 {
    let rho = ((dx / a).powi(4) + (dy / b).powi(4)).powf(0.25);
    ((1.1 - rho) / 0.2).clamp(0.0, 1.0)
}

/// Renders a deterministic sequence for `spec`.
pub fn generate_sequence(spec: &ScenarioSpec) -> Result<Sequence> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.frames);
    let mut r = rng::substream(spec.seed, 0x5eed);
    let sched = spec.schedule();

    let aspect0: f64 = r.random_range(0.8..1.25);
    let deform = spec.kind == ScenarioKind::Deformation;
    let half = |t: usize| {
        let asp = if deform {
            aspect0 * (0.6 * (TAU * 2.0 * t as f64 / n.max(1) as f64).sin()).exp()
        } else {
            aspect0
        };
        (spec.radius * asp.sqrt(), spec.radius / asp.sqrt())
    };
    let max_half = spec.radius * (if deform { aspect0.max(1.0 / aspect0) * 0.6f64.exp() } else { aspect0.max(1.0 / aspect0) }).sqrt();
    let margin = max_half.min(w.min(h) as f64 / 2.0 - 2.0) + 1.0;
    let amp_x = (w as f64 / 2.0 - margin).max(0.0) * 0.8;
    let amp_y = (h as f64 / 2.0 - margin).max(0.0) * 0.8;
    let (wx, wy) = (
        TAU / 64.0 * r.random_range(1.0..2.5),
        TAU / 64.0 * r.random_range(1.0..2.5),
    );
    let (phx, phy) = (r.random_range(0.0..TAU), r.random_range(0.0..TAU));

    let bg_rgb: Vec<Wave> = (0..3)
        .map(|_| {
            let base = r.random_range(0.3..0.5);
            Wave::random(&mut r, base, 0.12, w, h)
        })
        .collect();
    let bg_tir = Wave::random(&mut r, 0.3, 0.1, w, h);
    let mut color = [0.95, 0.15, 0.1];
    let shift = r.random_range(0..3usize);
    color.rotate_left(shift);
    let hot = 0.95;
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut gt = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let (a, b) = half(t);
        let cx = (w as f64 / 2.0 + amp_x * (wx * t as f64 + phx).sin()).clamp(a + 1.0, w as f64 - a - 1.0);
        let cy = (h as f64 / 2.0 + amp_y * (wy * t as f64 + phy).sin()).clamp(b + 1.0, h as f64 - b - 1.0);
        gt.push(BBox::from_center(cx, cy, 2.0 * a, 2.0 * b));
        let (vis_rgb, vis_tir) = sched[t];
        let mut rgb = vec![0f32; w * h * 3];
        let mut tir = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let m = blob_mask(px - cx, py - cy, a, b);
                for c in 0..3 {
                    let bg = bg_rgb[c].at(px, py);
                    let k = vis_rgb * m;
                    let mut v = bg * (1.0 - k) + color[c] * k;
                    if spec.noise > 0.0 {
                        v += noise.sample(&mut r);
                    }
                    rgb[(y * w + x) * 3 + c] = v.clamp(0.0, 1.0) as f32;
                }
                let k = vis_tir * m;
                let mut v = bg_tir.at(px, py) * (1.0 - k) + hot * k;
                if spec.noise > 0.0 {
                    v += noise.sample(&mut r);
                }
                tir[y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
        frames.push(FrameRecord {
            rgb: ImagePlane::new(h, w, 3, rgb)?,
            tir: ImagePlane::new(h, w, 1, tir)?,
        });
    }
    let meta = SequenceMeta {
        name: spec.name.clone(),
        num_frames: n,
        width: w,
        height: h,
        attributes: vec![spec.kind.as_str().to_string()],
        gt,
        visibility: Visibility {
            rgb: sched.iter().map(|v| v.0).collect(),
            tir: sched.iter().map(|v| v.1).collect(),
        },
    };
    Ok(Sequence { meta, frames })
}
